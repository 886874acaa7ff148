# ptyinr/baseline.py
"""ePIE, the classical sequential reconstruction used as a comparison baseline."""
import logging
import math
from typing import Optional

import numpy as np

from ptyinr import __version__
from ptyinr.config import EpieConfig, config_hash
from ptyinr.engine import ReconResult
from ptyinr.errors import NonFiniteError, ShapeMismatchError
from ptyinr.fields import as_complex_field, centered_transform
from ptyinr.physics import DiffractionSet
from ptyinr.rng import Rng

logger = logging.getLogger(__name__)

MODULUS_GUARD = 1e-12
GAUSSIAN_FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))


def modulus_projection(wave: np.ndarray, sqrt_intensity: np.ndarray):
    """Replace |wave| by sqrt_intensity, keeping the phase. Returns (projected, guard hits)."""
    modulus = np.abs(wave)
    dark = modulus < MODULUS_GUARD
    safe = np.where(dark, 1.0, modulus)
    projected = np.where(dark, sqrt_intensity + 0j, sqrt_intensity * wave / safe)
    return projected, int(np.count_nonzero(dark))


def gaussian_probe(probe_shape, fwhm: float, energy: float) -> np.ndarray:
    """Real Gaussian spot whose intensity FWHM is `fwhm` and total intensity `energy`."""
    rows, cols = np.indices(probe_shape, dtype=np.float64)
    r2 = (rows - (probe_shape[0] - 1) / 2.0) ** 2 + (cols - (probe_shape[1] - 1) / 2.0) ** 2
    sigma = fwhm * math.sqrt(2.0) / GAUSSIAN_FWHM
    probe = np.exp(-r2 / (2.0 * sigma ** 2)).astype(np.complex128)
    return probe * math.sqrt(energy / float(np.sum(np.abs(probe) ** 2)))


def initial_probe(dataset: DiffractionSet) -> np.ndarray:
    fwhm = dataset.metadata.get("probe_fwhm_px") or 0.25 * min(dataset.grid.probe_shape)
    energy = float(dataset.frames.sum(axis=(1, 2)).mean()) or 1.0
    return gaussian_probe(dataset.grid.probe_shape, fwhm, energy)


def epie_reconstruct(dataset: DiffractionSet, init_object: Optional[np.ndarray] = None,
                     init_probe: Optional[np.ndarray] = None, cfg: EpieConfig = EpieConfig()) -> ReconResult:
    grid = dataset.grid
    h, w = grid.probe_shape
    obj = np.ones(grid.object_shape, np.complex128) if init_object is None else as_complex_field(init_object).copy()
    probe = initial_probe(dataset) if init_probe is None else as_complex_field(init_probe).copy()
    if obj.shape != tuple(grid.object_shape) or probe.shape != (h, w):
        raise ShapeMismatchError(
            f"shape mismatch: object {obj.shape} / probe {probe.shape} vs scan {grid.object_shape} / {(h, w)}"
        )
    learn_probe = cfg.probe_mode == "learn"
    sqrt_frames = np.sqrt(dataset.frames)
    history = []
    guard_hits = 0

    for it in range(cfg.iterations):
        order = Rng(cfg.seed).stream("epie", it).permutation(len(grid))
        error = 0.0
        for j in order:
            r, c = grid.positions[j]
            patch = obj[r:r + h, c:c + w].copy()
            exit_wave = probe * patch
            far = centered_transform(exit_wave)
            error += float(np.sum((np.abs(far) - sqrt_frames[j]) ** 2))
            projected, hits = modulus_projection(far, sqrt_frames[j])
            guard_hits += hits
            diff = centered_transform(projected, inverse=True) - exit_wave
            obj[r:r + h, c:c + w] = patch + cfg.alpha_obj * np.conj(probe) / np.max(np.abs(probe) ** 2) * diff
            if learn_probe:
                probe = probe + cfg.alpha_probe * np.conj(patch) / np.max(np.abs(patch) ** 2) * diff
        if not (np.all(np.isfinite(obj)) and np.all(np.isfinite(probe))):
            raise NonFiniteError(f"non-finite field in ePIE iteration {it + 1}")
        history.append(error)
        logger.debug(f"ePIE iteration {it + 1}: Fourier error {error:.6e}")
        if (it + 1) % 10 == 0 or it + 1 == cfg.iterations:
            logger.info(f"ePIE iteration {it + 1}/{cfg.iterations}: Fourier error {error:.6e}")
    if guard_hits:
        logger.warning(f"ePIE zero-modulus guard hit {guard_hits} times")
    return ReconResult(
        object=obj,
        probe=probe,
        loss_history=np.asarray(history),
        provenance={"config_hash": config_hash(cfg), "seed": cfg.seed, "version": __version__},
    )
