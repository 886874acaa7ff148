# ptyinr/fields.py
"""Complex fields and the centered, orthonormal 2D Fourier transforms.

A ComplexField is a 2D ``complex128`` ndarray. Its memory layout is row-major with
interleaved (real, imag) float64 pairs, which is also the on-disk layout of containers.
Transforms act on the last two axes, so a (J, h, w) stack is J independent fields.
"""
import numpy as np
import numpy.typing as npt

from ptyinr.errors import NonFiniteError, ShapeMismatchError

ComplexField = npt.NDArray[np.complexfloating]
RealField = npt.NDArray[np.floating]

_AXES = (-2, -1)


def ensure_finite(f: np.ndarray, what: str = "field") -> np.ndarray:
    if not np.all(np.isfinite(f)):
        raise NonFiniteError(f"non-finite {what}")
    return f


def as_complex_field(f, dtype=np.complex128) -> ComplexField:
    """Coerce to a complex array with at least 2 dims and positive extents."""
    arr = np.asarray(f, dtype=dtype)
    if arr.ndim < 2 or arr.shape[-1] < 1 or arr.shape[-2] < 1:
        raise ShapeMismatchError(f"expected a 2D field, got shape {arr.shape}")
    return arr


def centered_transform(f: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Shift, transform, shift back. No validation; callers check finiteness."""
    out = np.fft.ifftshift(f, axes=_AXES)
    transform = np.fft.ifft2 if inverse else np.fft.fft2
    out = transform(out, axes=_AXES, norm="ortho")
    return np.fft.fftshift(out, axes=_AXES)


def cfft2_centered(f, dtype=np.complex128) -> ComplexField:
    """Orthonormal 2D DFT with the zero frequency at the array center."""
    return centered_transform(ensure_finite(as_complex_field(f, dtype)), inverse=False)


def cifft2_centered(f, dtype=np.complex128) -> ComplexField:
    """Inverse (and, under orthonormal scaling, adjoint) of `cfft2_centered`."""
    return centered_transform(ensure_finite(as_complex_field(f, dtype)), inverse=True)


def energy(f) -> float:
    return float(np.sum(np.abs(f) ** 2))


def wrap_phase(phi):
    """Wrap angles into [-pi, pi)."""
    return (np.asarray(phi) + np.pi) % (2.0 * np.pi) - np.pi
