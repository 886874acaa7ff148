# ptyinr/tape.py
"""Reverse-mode autodiff over numpy arrays.

A `Tape` evaluates a graph eagerly and, when recording, appends one `TapeEntry` per
primitive. Entries only reference ids of earlier nodes or parameter leaves, so the list is
topologically ordered by construction. `tape_backward` walks it in reverse.

Complex cotangents follow the convention  g = dL/d(Re z) + i dL/d(Im z)  for a real
scalar L, which makes the adjoint of a complex-linear map its conjugate transpose.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ptyinr.errors import GradientCheckError, NonFiniteError, ShapeMismatchError, TapeError
from ptyinr.fields import centered_transform
from ptyinr.rng import Rng

logger = logging.getLogger(__name__)

SQRT_GUARD = 1e-12

SUPPORTED_PRIMITIVES = frozenset({
    "add", "sub", "scale", "mul", "matmul", "sin", "relu", "exp", "sqrt", "abs2",
    "polar", "crop", "crop_windows", "embed", "gather_bilinear", "mean", "sum",
    "smooth_l1", "fft2c", "ifft2c",
    # needed by the network heads and the probe normalization
    "abs", "sigmoid", "max_normalize", "reshape", "concat",
})


# --- Parameters ---

@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    shape: Tuple[int, ...]

    @property
    def length(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def stop(self) -> int:
        return self.offset + self.length


class ParamStore:
    """Flat parameter vector with named, disjoint, covering segments and a grad buffer."""

    def __init__(self, layout: Iterable[Tuple[str, Sequence[int]]], dtype=np.float64):
        self.segments: Dict[str, Segment] = {}
        offset = 0
        for name, shape in layout:
            if name in self.segments:
                raise TapeError(f"duplicate parameter segment: {name}")
            seg = Segment(name, offset, tuple(int(s) for s in shape))
            self.segments[name] = seg
            offset = seg.stop
        self.total = offset
        self.dtype = np.dtype(dtype)
        self.values = np.zeros(self.total, dtype=self.dtype)
        self.grads = np.zeros(self.total, dtype=self.dtype)

    def __contains__(self, name: str) -> bool:
        return name in self.segments

    def view(self, name: str) -> np.ndarray:
        seg = self.segments[name]
        return self.values[seg.offset:seg.stop].reshape(seg.shape)

    def grad_view(self, name: str) -> np.ndarray:
        seg = self.segments[name]
        return self.grads[seg.offset:seg.stop].reshape(seg.shape)

    def set(self, name: str, value) -> None:
        seg = self.segments[name]
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != seg.shape:
            raise ShapeMismatchError(f"segment {name}: expected {seg.shape}, got {value.shape}")
        self.values[seg.offset:seg.stop] = value.ravel()

    def zero_grad(self) -> None:
        self.grads.fill(0.0)

    def segment_of(self, index: int) -> str:
        for seg in self.segments.values():
            if seg.offset <= index < seg.stop:
                return seg.name
        raise IndexError(index)

    def layout(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(s.name, s.shape) for s in self.segments.values()]

    def copy(self) -> "ParamStore":
        other = ParamStore(self.layout(), self.dtype)
        other.values[:] = self.values
        return other


# --- Graph nodes ---

@dataclass(frozen=True, eq=False)
class Node:
    id: int
    value: np.ndarray

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape


@dataclass
class TapeEntry:
    prim: str
    out: int
    inputs: Tuple[Optional[int], ...]
    args: Tuple[Any, ...]
    result: np.ndarray
    attrs: Dict[str, Any] = field(default_factory=dict)


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _match(g: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Reduce a cotangent to the input's shape and drop the imaginary part for real inputs."""
    g = _unbroadcast(g, like.shape)
    if not np.iscomplexobj(like) and np.iscomplexobj(g):
        g = g.real
    return g


class Tape:
    """Evaluates primitives and, if `record`, remembers what backward needs."""

    def __init__(self, params: Optional[ParamStore] = None, record: bool = True):
        self.params = params
        self.record = record
        self.nodes: List[TapeEntry] = []
        self.leaves: Dict[int, str] = {}
        self.outputs: List[Node] = []
        self.kink_contacts = 0
        self._next_id = 0
        self._backward_done = False

    # --- plumbing ---

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _emit(self, prim: str, result: np.ndarray, inputs: Sequence[Any], **attrs) -> Node:
        result = np.asarray(result)
        node = Node(self._new_id(), result)
        if self.record:
            ids = tuple(x.id if isinstance(x, Node) else None for x in inputs)
            if any(i is not None for i in ids):
                args = tuple(_val(x) for x in inputs)
                self.nodes.append(TapeEntry(prim, node.id, ids, args, result, attrs))
        return node

    def param(self, name: str) -> Node:
        if self.params is None or name not in self.params:
            raise TapeError(f"unknown parameter segment: {name}")
        value = self.params.view(name)
        value.flags.writeable = False
        node = Node(self._new_id(), value)
        self.leaves[node.id] = name
        return node

    def const(self, value) -> np.ndarray:
        return np.asarray(value)

    def apply(self, prim: str, *args, **kwargs) -> Node:
        if prim not in SUPPORTED_PRIMITIVES:
            raise TapeError(f"unsupported primitive: {prim}")
        return getattr(self, prim)(*args, **kwargs)

    # --- arithmetic ---

    def add(self, a, b) -> Node:
        return self._emit("add", _val(a) + _val(b), (a, b))

    def sub(self, a, b) -> Node:
        return self._emit("sub", _val(a) - _val(b), (a, b))

    def scale(self, a, c) -> Node:
        return self._emit("scale", _val(a) * c, (a,), c=c)

    def mul(self, a, b) -> Node:
        return self._emit("mul", _val(a) * _val(b), (a, b))

    def matmul(self, a, b) -> Node:
        return self._emit("matmul", _val(a) @ _val(b), (a, b))

    def sin(self, a) -> Node:
        return self._emit("sin", np.sin(_val(a)), (a,))

    def relu(self, a) -> Node:
        v = _val(a)
        if self.record:
            self.kink_contacts += int(np.count_nonzero(v == 0))
        return self._emit("relu", np.maximum(v, 0), (a,))

    def exp(self, a) -> Node:
        return self._emit("exp", np.exp(_val(a)), (a,))

    def sqrt(self, a) -> Node:
        v = _val(a)
        if self.record:
            self.kink_contacts += int(np.count_nonzero(v < SQRT_GUARD))
        return self._emit("sqrt", np.sqrt(np.maximum(v, 0)), (a,))

    def abs2(self, a) -> Node:
        v = _val(a)
        out = v.real ** 2 + v.imag ** 2 if np.iscomplexobj(v) else v * v
        return self._emit("abs2", out, (a,))

    def abs(self, a) -> Node:
        v = _val(a)
        if np.iscomplexobj(v):
            raise TapeError("abs is defined for real inputs only; use abs2")
        if self.record:
            self.kink_contacts += int(np.count_nonzero(v == 0))
        return self._emit("abs", np.abs(v), (a,))

    def sigmoid(self, a) -> Node:
        v = _val(a)
        out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
        return self._emit("sigmoid", out.astype(v.dtype, copy=False), (a,))

    def polar(self, amplitude, phase) -> Node:
        """Complex assembly A * exp(i * phi)."""
        out = _val(amplitude) * np.exp(1j * _val(phase))
        return self._emit("polar", out, (amplitude, phase))

    def max_normalize(self, a) -> Node:
        """a / max(a) for a nonnegative real array; raises on an all-zero input."""
        v = _val(a)
        flat_idx = int(np.argmax(v))
        m = v.flat[flat_idx]
        if not m > 0:
            raise ZeroDivisionError("max_normalize on a non-positive array")
        return self._emit("max_normalize", v / m, (a,), argmax=flat_idx, peak=m)

    # --- shapes ---

    def reshape(self, a, shape) -> Node:
        return self._emit("reshape", _val(a).reshape(shape), (a,))

    def concat(self, parts: Sequence[Any], axis: int = -1) -> Node:
        values = [_val(p) for p in parts]
        sizes = [v.shape[axis] for v in values]
        return self._emit("concat", np.concatenate(values, axis=axis), tuple(parts), axis=axis, sizes=sizes)

    def crop(self, a, position: Tuple[int, int], shape: Tuple[int, int]) -> Node:
        v = _val(a)
        r, c = int(position[0]), int(position[1])
        h, w = shape
        if r < 0 or c < 0 or r + h > v.shape[-2] or c + w > v.shape[-1]:
            raise ShapeMismatchError(
                f"window {(r, c)}+{(h, w)} out of bounds for field {v.shape[-2:]}"
            )
        return self._emit("crop", v[..., r:r + h, c:c + w].copy(), (a,), position=(r, c), shape=(h, w))

    def crop_windows(self, a, positions: np.ndarray, shape: Tuple[int, int]) -> Node:
        """Stack of windows (J, h, w) cut from a 2D field at top-left `positions`."""
        v = _val(a)
        positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
        h, w = shape
        if v.ndim != 2:
            raise ShapeMismatchError(f"crop_windows expects a 2D field, got {v.shape}")
        if positions.size and (
            positions.min() < 0
            or (positions[:, 0] + h).max() > v.shape[0]
            or (positions[:, 1] + w).max() > v.shape[1]
        ):
            raise ShapeMismatchError(f"scan window out of bounds for field {v.shape}")
        out = np.empty((len(positions), h, w), dtype=v.dtype)
        for j, (r, c) in enumerate(positions):
            out[j] = v[r:r + h, c:c + w]
        return self._emit("crop_windows", out, (a,), positions=positions, shape=(h, w))

    def embed(self, a, position: Tuple[int, int], canvas_shape: Tuple[int, int]) -> Node:
        v = _val(a)
        r, c = int(position[0]), int(position[1])
        h, w = v.shape[-2:]
        if r < 0 or c < 0 or r + h > canvas_shape[0] or c + w > canvas_shape[1]:
            raise ShapeMismatchError(f"embed window out of bounds for canvas {canvas_shape}")
        out = np.zeros(v.shape[:-2] + tuple(canvas_shape), dtype=v.dtype)
        out[..., r:r + h, c:c + w] = v
        return self._emit("embed", out, (a,), position=(r, c), shape=(h, w))

    def gather_bilinear(self, table, index: np.ndarray, weight: np.ndarray) -> Node:
        """out[p] = sum_c weight[p, c] * table[index[p, c]]  for a (T, F) table."""
        t = _val(table)
        out = np.einsum("pc,pcf->pf", weight, t[index])
        return self._emit("gather_bilinear", out, (table,), index=index, weight=weight, rows=t.shape[0])

    # --- reductions and losses ---

    def mean(self, a) -> Node:
        return self._emit("mean", np.asarray(np.mean(_val(a))), (a,))

    def sum(self, a) -> Node:
        return self._emit("sum", np.asarray(np.sum(_val(a))), (a,))

    def smooth_l1(self, r, beta: float) -> Node:
        """Elementwise 0.5 r^2 / beta inside |r| < beta, |r| - beta / 2 outside."""
        v = _val(r)
        a = np.abs(v)
        if self.record:
            self.kink_contacts += int(np.count_nonzero(np.abs(a - beta) <= 1e-12 * max(1.0, beta)))
        out = np.where(a < beta, 0.5 * v * v / beta, a - 0.5 * beta)
        return self._emit("smooth_l1", out, (r,), beta=beta)

    # --- Fourier ---

    def fft2c(self, a) -> Node:
        v = _val(a)
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("non-finite field")
        return self._emit("fft2c", centered_transform(v, inverse=False), (a,))

    def ifft2c(self, a) -> Node:
        v = _val(a)
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("non-finite field")
        return self._emit("ifft2c", centered_transform(v, inverse=True), (a,))


# --- Adjoints ---

def _vjp_add(e, g):
    return _match(g, e.args[0]), _match(g, e.args[1])


def _vjp_sub(e, g):
    return _match(g, e.args[0]), _match(-g, e.args[1])


def _vjp_scale(e, g):
    return (_match(g * np.conj(e.attrs["c"]), e.args[0]),)


def _vjp_mul(e, g):
    a, b = e.args
    return _match(g * np.conj(b), a), _match(g * np.conj(a), b)


def _vjp_matmul(e, g):
    a, b = e.args
    return g @ b.T, a.T @ g


def _vjp_sin(e, g):
    return (g * np.cos(e.args[0]),)


def _vjp_relu(e, g):
    return (g * (e.args[0] > 0),)


def _vjp_exp(e, g):
    return (_match(g * np.conj(e.result), e.args[0]),)


def _vjp_sqrt(e, g):
    return (g / (2.0 * np.sqrt(np.maximum(e.args[0], SQRT_GUARD))),)


def _vjp_abs2(e, g):
    return (_match(2.0 * g * e.args[0], e.args[0]),)


def _vjp_abs(e, g):
    return (g * np.sign(e.args[0]),)


def _vjp_sigmoid(e, g):
    y = e.result
    return (g * y * (1.0 - y),)


def _vjp_polar(e, g):
    amp, phase = e.args
    unit = np.exp(1j * phase)
    g_amp = np.real(g * np.conj(unit))
    g_phase = np.imag(g * np.conj(e.result))
    return _match(g_amp, amp), _match(g_phase, phase)


def _vjp_max_normalize(e, g):
    (a,) = e.args
    m = e.attrs["peak"]
    ga = g / m
    ga.flat[e.attrs["argmax"]] -= np.sum(g * a) / (m * m)
    return (ga,)


def _vjp_reshape(e, g):
    return (g.reshape(e.args[0].shape),)


def _vjp_concat(e, g):
    axis = e.attrs["axis"]
    splits = np.cumsum(e.attrs["sizes"])[:-1]
    return tuple(_match(part, arg) for part, arg in zip(np.split(g, splits, axis=axis), e.args))


def _vjp_crop(e, g):
    (a,) = e.args
    out = np.zeros_like(a, dtype=np.result_type(a, g))
    r, c = e.attrs["position"]
    h, w = e.attrs["shape"]
    out[..., r:r + h, c:c + w] += g
    return (_match(out, a),)


def _vjp_crop_windows(e, g):
    (a,) = e.args
    out = np.zeros_like(a, dtype=np.result_type(a, g))
    h, w = e.attrs["shape"]
    for j, (r, c) in enumerate(e.attrs["positions"]):
        out[r:r + h, c:c + w] += g[j]
    return (_match(out, a),)


def _vjp_embed(e, g):
    r, c = e.attrs["position"]
    h, w = e.attrs["shape"]
    return (_match(g[..., r:r + h, c:c + w], e.args[0]),)


def _vjp_gather_bilinear(e, g):
    index, weight, rows = e.attrs["index"], e.attrs["weight"], e.attrs["rows"]
    flat_index = index.ravel()
    contrib = weight[:, :, None] * g[:, None, :]
    table_grad = np.empty((rows, g.shape[1]), dtype=g.dtype)
    for f in range(g.shape[1]):
        table_grad[:, f] = np.bincount(flat_index, weights=contrib[:, :, f].ravel(), minlength=rows)
    return (table_grad,)


def _vjp_mean(e, g):
    a = e.args[0]
    return (np.broadcast_to(g / a.size, a.shape).astype(np.result_type(a, g)),)


def _vjp_sum(e, g):
    a = e.args[0]
    return (np.broadcast_to(g, a.shape).astype(np.result_type(a, g)),)


def _vjp_smooth_l1(e, g):
    r = e.args[0]
    beta = e.attrs["beta"]
    slope = np.where(np.abs(r) < beta, r / beta, np.sign(r))
    return (g * slope,)


def _vjp_fft2c(e, g):
    return (_match(centered_transform(g, inverse=True), e.args[0]),)


def _vjp_ifft2c(e, g):
    return (_match(centered_transform(g, inverse=False), e.args[0]),)


_VJPS: Dict[str, Callable] = {
    "add": _vjp_add, "sub": _vjp_sub, "scale": _vjp_scale, "mul": _vjp_mul,
    "matmul": _vjp_matmul, "sin": _vjp_sin, "relu": _vjp_relu, "exp": _vjp_exp,
    "sqrt": _vjp_sqrt, "abs2": _vjp_abs2, "abs": _vjp_abs, "sigmoid": _vjp_sigmoid,
    "polar": _vjp_polar, "max_normalize": _vjp_max_normalize, "reshape": _vjp_reshape,
    "concat": _vjp_concat, "crop": _vjp_crop, "crop_windows": _vjp_crop_windows,
    "embed": _vjp_embed, "gather_bilinear": _vjp_gather_bilinear, "mean": _vjp_mean,
    "sum": _vjp_sum, "smooth_l1": _vjp_smooth_l1, "fft2c": _vjp_fft2c, "ifft2c": _vjp_ifft2c,
}


# --- Forward / backward drivers ---

GraphBuilder = Callable[[Tape, Any], Union[Node, Tuple[Node, ...]]]


def tape_forward(graph_builder: GraphBuilder, params: Optional[ParamStore], inputs=None,
                 record: bool = True) -> Tuple[Tape, Any]:
    """Run `graph_builder(tape, inputs)`; the first returned node is the backward target."""
    tape = Tape(params, record=record)
    outputs = graph_builder(tape, inputs)
    nodes = outputs if isinstance(outputs, tuple) else (outputs,)
    tape.outputs = [n for n in nodes if isinstance(n, Node)]
    return tape, outputs


def evaluate(graph_builder: GraphBuilder, params: Optional[ParamStore], inputs=None):
    """Tape-free evaluation of the same graph."""
    _, outputs = tape_forward(graph_builder, params, inputs, record=False)
    return outputs


def tape_backward(tape: Tape, seed_grad=None) -> ParamStore:
    """Accumulate d(output)/d(params) into `tape.params.grads` (zeroed first)."""
    if not tape.record:
        raise TapeError("tape was evaluated without recording")
    if tape._backward_done:
        raise TapeError("backward already ran on this tape; run a new forward pass")
    if not tape.outputs:
        raise TapeError("tape has no outputs")
    target = tape.outputs[0]
    if seed_grad is None:
        if target.value.size != 1:
            raise TapeError(f"output of shape {target.shape} is not scalar; pass an explicit cotangent")
        seed_grad = np.ones_like(target.value)
    seed_grad = np.asarray(seed_grad)
    if seed_grad.shape != target.value.shape:
        raise ShapeMismatchError(f"cotangent shape {seed_grad.shape} != output shape {target.shape}")
    tape._backward_done = True

    params = tape.params
    if params is not None:
        params.zero_grad()
    cotangents: Dict[int, np.ndarray] = {target.id: seed_grad}
    for entry in reversed(tape.nodes):
        g = cotangents.pop(entry.out, None)
        if g is None:
            continue
        vjp = _VJPS.get(entry.prim)
        if vjp is None:
            raise TapeError(f"unsupported primitive: {entry.prim}")
        for input_id, gi in zip(entry.inputs, vjp(entry, g)):
            if input_id is None or gi is None:
                continue
            prev = cotangents.get(input_id)
            cotangents[input_id] = gi if prev is None else prev + gi
    if params is not None:
        for leaf_id, name in tape.leaves.items():
            g = cotangents.get(leaf_id)
            if g is not None:
                params.grad_view(name)[...] += np.real(g).reshape(params.segments[name].shape)
    return params


# --- Gradient checking ---

@dataclass
class GradCheckReport:
    max_relative_error: float
    samples: np.ndarray
    relative_errors: np.ndarray
    kink: bool

    def __float__(self) -> float:
        return self.max_relative_error


def _scalar(value) -> float:
    return float(np.real(np.asarray(value.value if isinstance(value, Node) else value)).reshape(()))


def finite_diff_check(loss_fn: GraphBuilder, params: ParamStore, sample_count: int = 200,
                      h: float = 1e-5, inputs=None, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients with central differences on a random subset of parameters."""
    if h <= 0:
        raise GradientCheckError("finite-difference step must be positive")

    def loss_at() -> float:
        outputs = evaluate(loss_fn, params, inputs)
        return _scalar(outputs[0] if isinstance(outputs, tuple) else outputs)

    f0 = loss_at()
    if loss_at() != f0:
        raise GradientCheckError("loss is not deterministic: repeated evaluation differs")

    tape, _ = tape_forward(loss_fn, params, inputs)
    tape_backward(tape)
    g_ad = params.grads.copy()
    kink = tape.kink_contacts > 0

    count = min(sample_count, params.total)
    samples = np.sort(Rng(seed).stream("gradcheck").choice(params.total, size=count, replace=False))
    errors = np.zeros(count)
    for n, idx in enumerate(samples):
        orig = params.values[idx]
        params.values[idx] = orig + h
        f_plus = loss_at()
        params.values[idx] = orig - h
        f_minus = loss_at()
        params.values[idx] = orig
        g_fd = (f_plus - f_minus) / (2.0 * h)
        forward, backward = (f_plus - f0) / h, (f0 - f_minus) / h
        if abs(forward - backward) > np.sqrt(h) * max(1.0, abs(forward), abs(backward)):
            kink = True
        errors[n] = abs(g_ad[idx] - g_fd) / max(abs(g_ad[idx]), abs(g_fd), 1e-12)
    worst = float(errors.max()) if count else 0.0
    if count:
        logger.info(
            f"Gradient check over {count} parameters: max relative error {worst:.3e} "
            f"(worst in segment {params.segment_of(int(samples[int(np.argmax(errors))]))})"
        )
    return GradCheckReport(worst, samples, errors, kink)
