# ptyinr/simulate.py
"""Synthetic phantoms, detector noise models and complete simulated datasets."""
import logging
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np
from scipy import special

from ptyinr.config import NoiseSpec, ScanConfig
from ptyinr.errors import ConfigError, ShapeMismatchError
from ptyinr.physics import (
    DiffractionSet,
    make_scan_grid,
    overlap_ratio,
    probe_fwhm_diameter,
    simulate_intensity,
    step_for_overlap,
    window_overlap_fraction,
)
from ptyinr.rng import Rng

logger = logging.getLogger(__name__)

MIN_PHANTOM_SIDE = 16
AIRY_HALF_MAX = 1.6163  # x where (2 J1(x) / x)^2 = 1/2
PROBE_FWHM_FRACTION = 0.25
BLOB_COUNT = 6


@dataclass
class Phantom:
    object: np.ndarray
    probe: np.ndarray
    description: str


# --- Phantoms ---

def _centered_coords(shape: Tuple[int, int]):
    rows, cols = np.indices(shape, dtype=np.float64)
    return rows - (shape[0] - 1) / 2.0, cols - (shape[1] - 1) / 2.0


def _siemens(shape, spokes: int):
    y, x = _centered_coords(shape)
    s = 0.5 * (1.0 + np.tanh(4.0 * np.sin(spokes * np.arctan2(y, x))))
    return 0.4 + 0.6 * s, s


def _gaussian_mixture(shape, gen: np.random.Generator) -> np.ndarray:
    rows, cols = np.indices(shape, dtype=np.float64)
    out = np.zeros(shape)
    for _ in range(BLOB_COUNT):
        cy, cx = gen.uniform(0.15, 0.85, size=2) * np.array(shape)
        width = gen.uniform(0.08, 0.2) * min(shape)
        out += gen.uniform(0.5, 1.0) * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * width ** 2))
    return out / out.max()


def _blobs(shape, gen: np.random.Generator):
    amplitude = 0.5 + 0.5 * _gaussian_mixture(shape, gen)
    phase = 1.5 * _gaussian_mixture(shape, gen)
    return amplitude, phase


def _checker(shape):
    block = max(4, min(shape) // 8)
    rows, cols = np.indices(shape)
    tiles = ((rows // block) + (cols // block)) % 2
    return np.where(tiles == 1, 1.0, 0.6), np.where(tiles == 1, 0.8, 0.0)


def focused_probe(probe_shape: Tuple[int, int], fwhm: Optional[float] = None) -> np.ndarray:
    """Airy spot (far field of a circular aperture) with a quadratic phase, max |P| = 1."""
    fwhm = fwhm or PROBE_FWHM_FRACTION * min(probe_shape)
    y, x = _centered_coords(probe_shape)
    r = np.hypot(y, x)
    kr = (2.0 * AIRY_HALF_MAX / fwhm) * r
    safe = np.where(kr == 0, 1.0, kr)
    amplitude = np.where(kr == 0, 1.0, 2.0 * special.j1(safe) / safe)
    curvature = (np.pi / 2) / max(r.max(), 1.0) ** 2
    probe = amplitude * np.exp(1j * curvature * r ** 2)
    return probe / np.abs(probe).max()


def make_phantom(kind: Literal["siemens", "blobs", "checker"], object_shape: Tuple[int, int],
                 probe_shape: Tuple[int, int], rng: Rng, spokes: int = 16) -> Phantom:
    if min(object_shape) < MIN_PHANTOM_SIDE or min(probe_shape) < MIN_PHANTOM_SIDE:
        raise ShapeMismatchError(f"phantom shapes must be at least {MIN_PHANTOM_SIDE} pixels per side")
    if kind == "siemens":
        amplitude, phase = _siemens(object_shape, spokes)
        description = f"siemens star, {spokes} spokes"
    elif kind == "blobs":
        amplitude, phase = _blobs(object_shape, rng.stream("phantom"))
        description = f"gaussian blobs, seed {rng.seed}"
    elif kind == "checker":
        amplitude, phase = _checker(object_shape)
        description = "checkerboard"
    else:
        raise ConfigError(f"unknown phantom kind: {kind}")
    obj = amplitude * np.exp(1j * phase)
    logger.info(f"Phantom: {description}, object {tuple(object_shape)}, probe {tuple(probe_shape)}")
    return Phantom(obj, focused_probe(probe_shape), description)


# --- Noise ---

def add_poisson(frames: np.ndarray, alpha: float, rng: Rng) -> np.ndarray:
    """(max I / alpha) * Poisson(I * alpha / max I), with max over the whole set."""
    frames = np.asarray(frames, dtype=np.float64)
    peak = frames.max() if frames.size else 0.0
    if peak == 0:
        return frames.copy()
    out = np.empty_like(frames)
    for j, frame in enumerate(frames):
        counts = rng.stream("noise.poisson", j).poisson(frame * (alpha / peak))
        out[j] = counts * (peak / alpha)
    return out


def add_gaussian(frames: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    """Additive N(0, sigma^2), then negatives clipped to zero."""
    frames = np.asarray(frames, dtype=np.float64)
    if sigma == 0:
        return frames.copy()
    out = np.empty_like(frames)
    for j, frame in enumerate(frames):
        out[j] = frame + rng.stream("noise.gaussian", j).normal(0.0, sigma, size=frame.shape)
    return np.maximum(out, 0.0)


def add_mixed(frames: np.ndarray, alpha: float, sigma: float, rng: Rng) -> np.ndarray:
    return add_gaussian(add_poisson(frames, alpha, rng), sigma, rng)


def apply_noise(frames: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    rng = Rng(noise.seed)
    if noise.kind == "none":
        return np.asarray(frames, dtype=np.float64).copy()
    if noise.kind == "poisson":
        return add_poisson(frames, noise.alpha, rng)
    if noise.kind == "gaussian":
        return add_gaussian(frames, noise.sigma, rng)
    return add_mixed(frames, noise.alpha, noise.sigma, rng)


# --- Datasets ---

def resolve_step(scan: ScanConfig, probe: np.ndarray) -> Tuple[int, int]:
    if scan.step_pixels is not None:
        return tuple(scan.step_pixels)
    step = step_for_overlap(scan.overlap_percent, probe_fwhm_diameter(probe))
    return step, step


def build_dataset(phantom: Phantom, step_pixels: Tuple[int, int],
                  noise: NoiseSpec = NoiseSpec()) -> Tuple[DiffractionSet, Phantom]:
    """Scan, simulate and corrupt; the phantom is returned as the ground-truth record."""
    grid = make_scan_grid(phantom.object.shape, phantom.probe.shape, step_pixels)
    clean = simulate_intensity(phantom.object, phantom.probe, grid)
    fwhm = probe_fwhm_diameter(phantom.probe)
    metadata = {
        "probe_fwhm_px": fwhm,
        "nominal_overlap_percent": overlap_ratio(float(step_pixels[1]), fwhm),
        "window_overlap_fraction": window_overlap_fraction(step_pixels, phantom.probe.shape),
        "phantom": phantom.description,
    }
    dataset = DiffractionSet(apply_noise(clean.frames, noise), grid, noise.model_dump(), metadata)
    logger.info(
        f"Dataset built: {len(grid)} positions, step {tuple(step_pixels)}, "
        f"nominal overlap {metadata['nominal_overlap_percent']:.1f}%, noise {noise.kind}"
    )
    return dataset, phantom


def split_dataset(dataset: DiffractionSet, parity: Literal["even", "odd"]) -> DiffractionSet:
    """Sub-dataset of the even- or odd-indexed scan positions."""
    if parity not in ("even", "odd"):
        raise ConfigError(f"unknown split: {parity}")
    indices = np.arange(0 if parity == "even" else 1, len(dataset), 2)
    if not len(indices):
        raise ShapeMismatchError(f"no {parity} scan positions in a {len(dataset)}-frame dataset")
    metadata = dict(dataset.metadata, split=parity)
    return DiffractionSet(dataset.frames[indices], dataset.grid.subset(indices), dataset.noise, metadata)
