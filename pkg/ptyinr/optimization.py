# ptyinr/optimization.py
"""Amplitude-residual loss with the staged probe regularizer, and Adam."""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from ptyinr.config import LossConfig
from ptyinr.errors import InvalidInputError, NonFiniteError, ShapeMismatchError
from ptyinr.tape import Node, ParamStore, Tape, evaluate

logger = logging.getLogger(__name__)


# --- Loss ---

def regularizer_active(cfg: LossConfig, t: int) -> bool:
    """The probe-amplitude term applies on steps 1..k (t is 1-based)."""
    return cfg.lam > 0 and t <= cfg.k


def loss_graph(tape: Tape, sqrt_measured: np.ndarray, predicted, cfg: LossConfig, t: int,
               probe_amplitude=None) -> Node:
    """Scalar loss node. `sqrt_measured` is a constant; `predicted` holds intensities."""
    residual = tape.sub(sqrt_measured, tape.sqrt(predicted))
    if cfg.kind == "smooth_l1":
        data_term = tape.mean(tape.smooth_l1(residual, cfg.beta))
    elif cfg.kind == "l1":
        data_term = tape.mean(tape.abs(residual))
    else:
        data_term = tape.mean(tape.abs2(residual))
    if probe_amplitude is not None and regularizer_active(cfg, t):
        return tape.add(data_term, tape.scale(tape.mean(probe_amplitude), cfg.lam))
    return data_term


def _check_intensity(values: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite {what}")
    if values.size and values.min() < 0:
        raise InvalidInputError(f"negative {what}")
    return values


def smooth_l1(sqrt_measured, sqrt_predicted, beta: float) -> float:
    """Mean of the piecewise quadratic/linear penalty on sqrt_measured - sqrt_predicted."""
    a = np.asarray(sqrt_measured, dtype=np.float64)
    b = np.asarray(sqrt_predicted, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    out = evaluate(lambda tape, _: tape.mean(tape.smooth_l1(tape.sub(a, b), beta)), None)
    return float(out.value)


def ptyinr_loss(measured, predicted, cfg: LossConfig, t: int, probe_amplitude=None) -> float:
    measured = _check_intensity(measured, "measured intensity")
    predicted = _check_intensity(predicted, "predicted intensity")
    if measured.shape != predicted.shape:
        raise ShapeMismatchError(f"shape mismatch: {measured.shape} vs {predicted.shape}")
    amplitude = None if probe_amplitude is None else np.asarray(probe_amplitude, dtype=np.float64)
    out = evaluate(lambda tape, _: loss_graph(tape, np.sqrt(measured), predicted, cfg, t, amplitude), None)
    return float(out.value)


# --- Adam ---

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: Union[float, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamStore, lr: Union[float, np.ndarray], **kwargs) -> "AdamState":
        return cls(np.zeros(params.total, params.dtype), np.zeros(params.total, params.dtype), lr, **kwargs)


def group_learning_rates(params: ParamStore, rates: Dict[str, float]) -> np.ndarray:
    """Per-element learning rates keyed by the first dotted component of segment names."""
    lr = np.empty(params.total, dtype=params.dtype)
    for seg in params.segments.values():
        group = seg.name.split(".", 1)[0]
        if group not in rates:
            raise KeyError(f"no learning rate for parameter group {group}")
        lr[seg.offset:seg.stop] = rates[group]
    return lr


def adam_step(params: ParamStore, state: AdamState, grads: Optional[np.ndarray] = None) -> np.ndarray:
    """One bias-corrected Adam update of `params.values` in place."""
    g = params.grads if grads is None else np.asarray(grads)
    if g.shape != params.values.shape or state.m.shape != g.shape:
        raise ShapeMismatchError(f"shape mismatch: gradient {g.shape} vs parameters {params.values.shape}")
    if not np.all(np.isfinite(g)):
        for seg in params.segments.values():
            if not np.all(np.isfinite(g[seg.offset:seg.stop])):
                raise NonFiniteError(f"non-finite gradient in segment {seg.name}")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    params.values -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(params.dtype, copy=False)
    return params.values
