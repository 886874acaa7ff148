# ptyinr/metrics.py
"""PSNR, global phase alignment and Fourier ring correlation."""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import optimize

from ptyinr.errors import InvalidInputError, ShapeMismatchError
from ptyinr.fields import centered_transform, wrap_phase

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
# residuals below this fraction of MAX are rounding noise and count as exact
RESIDUAL_FLOOR = 1e-10
CROSSING_TOL = 1e-9


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


# --- PSNR ---

def psnr(image, reference, max_value: float) -> float:
    """10 log10(MAX^2 / MSE); math.inf when the images are identical."""
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    _same_shape(image, reference)
    if not max_value > 0:
        raise InvalidInputError("PSNR max_value must be positive")
    mse = float(np.mean((image - reference) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_value ** 2 / mse)


def _residual_psnr(residual: np.ndarray, max_value: float) -> float:
    residual = np.where(np.abs(residual) < RESIDUAL_FLOOR * max_value, 0.0, residual)
    return psnr(residual, np.zeros_like(residual), max_value)


def amplitude_psnr(recon, truth) -> float:
    truth_amp = np.abs(truth)
    return _residual_psnr(np.abs(recon) - truth_amp, float(truth_amp.max()))


def phase_psnr(recon, truth) -> float:
    """PSNR of the wrapped phase residual with MAX = 2 pi."""
    return _residual_psnr(wrap_phase(np.angle(recon) - np.angle(truth)), TWO_PI)


# --- Global phase ---

def _phase_objective(delta: np.ndarray, theta) -> np.ndarray:
    theta = np.atleast_1d(theta)
    out = np.empty(theta.shape)
    for start in range(0, len(theta), 256):
        chunk = theta[start:start + 256, None]
        out[start:start + 256] = np.sum(wrap_phase(delta[None, :] - chunk) ** 2, axis=1)
    return out


def align_global_phase(recon, truth, samples: int = 4096) -> Tuple[float, np.ndarray]:
    """theta* minimizing sum wrap(angle(truth) - angle(recon e^{i theta}))^2, and recon e^{i theta*}."""
    recon = np.asarray(recon, dtype=np.complex128)
    truth = np.asarray(truth, dtype=np.complex128)
    _same_shape(recon, truth)
    if not np.any(recon) or not np.any(truth):
        raise InvalidInputError("cannot align an all-zero field")
    delta = (np.angle(truth) - np.angle(recon)).ravel()

    grid = -math.pi + TWO_PI * np.arange(samples) / samples
    best = float(grid[int(np.argmin(_phase_objective(delta, grid)))])
    step = TWO_PI / samples
    res = optimize.minimize_scalar(
        lambda t: float(_phase_objective(delta, t)[0]),
        bounds=(best - step, best + step), method="bounded", options={"xatol": 1e-8},
    )
    theta = float(res.x)
    # exact minimizer of the quadratic piece around theta
    for _ in range(5):
        shift = float(np.mean(wrap_phase(delta - theta)))
        theta += shift
        if abs(shift) < 1e-15:
            break
    theta = float(wrap_phase(theta))
    return theta, recon * np.exp(1j * theta)


# --- FRC ---

@dataclass
class FrcCurve:
    ring_frequencies: np.ndarray
    correlations: np.ndarray
    ring_counts: np.ndarray
    imaginary: np.ndarray

    def __len__(self) -> int:
        return len(self.correlations)


def frc(img1, img2) -> FrcCurve:
    """Correlation of two images over integer-radius rings of the centered spectrum."""
    a = np.asarray(img1)
    b = np.asarray(img2)
    _same_shape(a, b)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"shape mismatch: FRC needs square images, got {a.shape}")
    n = a.shape[0]
    f1 = centered_transform(a.astype(np.complex128))
    f2 = centered_transform(b.astype(np.complex128))
    rows, cols = np.indices(a.shape)
    radius = np.rint(np.hypot(rows - n // 2, cols - n // 2)).astype(np.int64).ravel()
    keep = radius <= n // 2
    rings = radius[keep]
    nrings = n // 2 + 1
    cross = (f1 * np.conj(f2)).ravel()[keep]
    num_re = np.bincount(rings, weights=cross.real, minlength=nrings)
    num_im = np.bincount(rings, weights=cross.imag, minlength=nrings)
    e1 = np.bincount(rings, weights=(np.abs(f1) ** 2).ravel()[keep], minlength=nrings)
    e2 = np.bincount(rings, weights=(np.abs(f2) ** 2).ravel()[keep], minlength=nrings)
    counts = np.bincount(rings, minlength=nrings)

    den = np.sqrt(e1) * np.sqrt(e2)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(den > 0, num_re / np.where(den > 0, den, 1.0), 0.0)
        imag = np.where(den > 0, num_im / np.where(den > 0, den, 1.0), 0.0)
    corr = np.clip(corr, -1.0, 1.0)
    empty = den == 0
    if np.any(empty):
        diff = np.bincount(rings, weights=(np.abs(f1 - f2) ** 2).ravel()[keep], minlength=nrings)
        corr[empty & (diff == 0)] = 1.0
    freqs = np.arange(nrings) / (n / 2.0)
    return FrcCurve(freqs, corr, counts, imag)


def half_bit_threshold(n) -> np.ndarray:
    root = np.sqrt(np.asarray(n, dtype=np.float64))
    return (0.2071 + 1.9102 / root) / (1.2071 + 0.9102 / root)


def half_bit_resolution(curve: FrcCurve) -> float:
    """First frequency where the FRC drops below the half-bit threshold, else Nyquist."""
    if not len(curve):
        raise InvalidInputError("empty FRC curve")
    d = curve.correlations - half_bit_threshold(curve.ring_counts) + CROSSING_TOL
    f = curve.ring_frequencies
    below = np.nonzero(d < 0)[0]
    if not len(below):
        return 1.0
    i = int(below[0])
    if i == 0:
        return float(f[0])
    return float(f[i - 1] + (f[i] - f[i - 1]) * d[i - 1] / (d[i - 1] - d[i]))


def curve_table(curve: FrcCurve) -> pd.DataFrame:
    return pd.DataFrame({
        "ring_frequency": curve.ring_frequencies,
        "correlation": curve.correlations,
        "threshold": half_bit_threshold(curve.ring_counts),
        "n": curve.ring_counts,
    })


# --- Reports ---

def _center_crop(field: np.ndarray, crop: Optional[Tuple[int, int]]) -> np.ndarray:
    if crop is None:
        return field
    h, w = crop
    H, W = field.shape
    if h > H or w > W:
        raise ShapeMismatchError(f"shape mismatch: crop {crop} larger than field {field.shape}")
    r, c = (H - h) // 2, (W - w) // 2
    return field[r:r + h, c:c + w]


def evaluate(recon, truth, crop: Optional[Tuple[int, int]] = None, samples: int = 4096) -> Dict[str, Any]:
    """Gauge-aligned amplitude/phase PSNR of object and probe, plus FRC against the truth.

    `recon` is a ReconResult, `truth` a Phantom (anything with object/probe fields works).
    """
    _same_shape(np.asarray(recon.object), np.asarray(truth.object))
    _same_shape(np.asarray(recon.probe), np.asarray(truth.probe))
    obj_recon = _center_crop(np.asarray(recon.object), crop)
    obj_truth = _center_crop(np.asarray(truth.object), crop)
    theta, obj_aligned = align_global_phase(obj_recon, obj_truth, samples)
    probe_theta, probe_aligned = align_global_phase(recon.probe, truth.probe, samples)

    report: Dict[str, Any] = {
        "object_theta_rad": theta,
        "object_amplitude_psnr_db": amplitude_psnr(obj_aligned, obj_truth),
        "object_phase_psnr_db": phase_psnr(obj_aligned, obj_truth),
        "probe_theta_rad": probe_theta,
        "probe_amplitude_psnr_db": amplitude_psnr(probe_aligned, truth.probe),
        "probe_phase_psnr_db": phase_psnr(probe_aligned, truth.probe),
    }
    if obj_truth.shape[0] == obj_truth.shape[1]:
        report["object_frc_half_bit_vs_truth"] = half_bit_resolution(frc(obj_aligned, obj_truth))
    history = getattr(recon, "loss_history", None)
    if history is not None and len(history):
        report["final_loss"] = float(history[-1])
    logger.info(
        f"Evaluation: object phase PSNR {report['object_phase_psnr_db']:.2f} dB, "
        f"amplitude PSNR {report['object_amplitude_psnr_db']:.2f} dB"
    )
    return report


def evaluate_pair(object_a, object_b, crop: Optional[Tuple[int, int]] = None,
                  samples: int = 4096) -> Tuple[Dict[str, Any], FrcCurve]:
    """FRC between two independent reconstructions, after aligning b's gauge to a."""
    a = _center_crop(np.asarray(object_a), crop)
    b = _center_crop(np.asarray(object_b), crop)
    _same_shape(a, b)
    theta, b_aligned = align_global_phase(b, a, samples)
    curve = frc(a, b_aligned)
    return {"pair_theta_rad": theta, "frc_half_bit_frequency": half_bit_resolution(curve)}, curve


def format_report(report: Dict[str, Any]) -> str:
    """`key = value` lines, keys sorted."""
    lines = []
    for key in sorted(report):
        value = report[key]
        if isinstance(value, float):
            value = "inf" if math.isinf(value) else repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
