# ptyinr/physics.py
"""Raster scan geometry and the static far-field forward model."""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ptyinr.errors import (
    DegenerateProbeError,
    InvalidInputError,
    NonFiniteError,
    ShapeMismatchError,
    UnboundedProbeError,
)
from ptyinr.fields import as_complex_field, ensure_finite
from ptyinr.tape import Node, Tape, evaluate

logger = logging.getLogger(__name__)

Shape = Tuple[int, int]


# --- Scan geometry ---

@dataclass(frozen=True)
class ScanGrid:
    positions: np.ndarray  # (J, 2) int64 top-left (row, col) offsets
    step_pixels: Shape
    probe_shape: Shape
    object_shape: Shape

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "positions", pos)
        h, w = self.probe_shape
        H, W = self.object_shape
        if len(pos) and (pos.min() < 0 or (pos[:, 0] + h).max() > H or (pos[:, 1] + w).max() > W):
            raise ShapeMismatchError(f"scan window out of bounds for object {self.object_shape}")
        if len({tuple(p) for p in pos}) != len(pos):
            raise ShapeMismatchError("scan positions are not unique")

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, indices: Sequence[int]) -> "ScanGrid":
        return ScanGrid(self.positions[np.asarray(indices, dtype=np.int64)], self.step_pixels,
                        self.probe_shape, self.object_shape)


def _axis_positions(extent: int, window: int, step: int) -> list:
    positions = list(range(0, extent - window + 1, step))
    if positions[-1] != extent - window:
        positions.append(extent - window)
    return positions


def make_scan_grid(object_shape: Shape, probe_shape: Shape, step_pixels: Shape) -> ScanGrid:
    """Row-major raster with the last row/column clamped to the far edge."""
    (H, W), (h, w), (dy, dx) = object_shape, probe_shape, step_pixels
    if h > H or w > W:
        raise ShapeMismatchError(f"probe {probe_shape} larger than object {object_shape}")
    if dy < 1 or dx < 1:
        raise ShapeMismatchError(f"step must be >= 1, got {step_pixels}")
    rows = _axis_positions(H, h, dy)
    cols = _axis_positions(W, w, dx)
    positions = np.array([(r, c) for r in rows for c in cols], dtype=np.int64)
    return ScanGrid(positions, (int(dy), int(dx)), (int(h), int(w)), (int(H), int(W)))


def overlap_ratio(step_pixels: float, probe_diameter_pixels: float) -> float:
    """Nominal overlap (1 - step / diameter) * 100. Negative for sparse scans."""
    if not probe_diameter_pixels > 0:
        raise ValueError("probe diameter must be positive")
    return (1.0 - step_pixels / probe_diameter_pixels) * 100.0


def step_for_overlap(overlap_percent: float, probe_diameter_pixels: float) -> int:
    return max(1, int(round((1.0 - overlap_percent / 100.0) * probe_diameter_pixels)))


def window_overlap_fraction(step_pixels: Shape, probe_shape: Shape) -> float:
    """Fraction of a probe window shared with its horizontal neighbour."""
    w = probe_shape[1]
    return max(0.0, (w - step_pixels[1]) / w)


def _half_max_width(profile: np.ndarray) -> float:
    peak = int(np.argmax(profile))
    half = profile[peak] / 2.0
    below = np.nonzero(profile[:peak] < half)[0]
    above = np.nonzero(profile[peak:] < half)[0]
    if not len(below) or not len(above):
        raise UnboundedProbeError("unbounded probe")
    i = below[-1]
    left = i + (half - profile[i]) / (profile[i + 1] - profile[i])
    j = peak + above[0]
    right = j - 1 + (profile[j - 1] - half) / (profile[j - 1] - profile[j])
    return float(right - left)


def probe_fwhm_diameter(probe) -> float:
    """Mean FWHM of the intensity profiles through the intensity centroid."""
    intensity = np.abs(np.asarray(probe)) ** 2
    total = intensity.sum()
    if not intensity.max() > 0:
        raise DegenerateProbeError("degenerate probe")
    rows, cols = np.indices(intensity.shape)
    cy = int(round(float((rows * intensity).sum() / total)))
    cx = int(round(float((cols * intensity).sum() / total)))
    return 0.5 * (_half_max_width(intensity[cy, :]) + _half_max_width(intensity[:, cx]))


# --- Forward model ---

@dataclass
class DiffractionSet:
    frames: np.ndarray  # (J, h, w) float64 intensities
    grid: ScanGrid
    noise: Optional[Dict[str, Any]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[0] != len(self.grid):
            raise ShapeMismatchError(
                f"shape mismatch: {self.frames.shape} frames for {len(self.grid)} scan positions"
            )
        if self.frames.shape[1:] != tuple(self.grid.probe_shape):
            raise ShapeMismatchError(
                f"shape mismatch: frame shape {self.frames.shape[1:]} != probe shape {self.grid.probe_shape}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise NonFiniteError("non-finite diffraction frames")
        if self.frames.size and self.frames.min() < 0:
            raise InvalidInputError("negative diffraction intensity")

    def __len__(self) -> int:
        return len(self.grid)


def forward_graph(tape: Tape, obj, probe, positions: np.ndarray, probe_shape: Shape) -> Node:
    """Predicted intensities |F{P * O_window}|^2 for every listed position, (J, h, w)."""
    patches = tape.crop_windows(obj, positions, probe_shape)
    exit_waves = tape.mul(patches, probe)
    return tape.abs2(tape.fft2c(exit_waves))


def extract_patch(obj, position: Tuple[int, int], probe_shape: Shape) -> np.ndarray:
    obj = as_complex_field(obj)
    return evaluate(lambda tape, _: tape.crop(obj, position, probe_shape), None).value


def simulate_intensity(obj, probe, grid: ScanGrid) -> DiffractionSet:
    """Noise-free frames for every scan position."""
    obj = ensure_finite(as_complex_field(obj), "field")
    probe = ensure_finite(as_complex_field(probe), "field")
    if probe.shape != tuple(grid.probe_shape):
        raise ShapeMismatchError(f"shape mismatch: probe {probe.shape} vs scan window {grid.probe_shape}")
    if obj.shape != tuple(grid.object_shape):
        raise ShapeMismatchError(f"shape mismatch: object {obj.shape} vs scan object {grid.object_shape}")
    frames = evaluate(
        lambda tape, _: forward_graph(tape, obj, probe, grid.positions, grid.probe_shape), None
    ).value
    logger.info(f"Simulated {len(grid)} frames of shape {grid.probe_shape}")
    return DiffractionSet(frames, grid)
