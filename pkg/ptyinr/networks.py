# ptyinr/networks.py
"""Coordinate networks for the object (SIREN) and the probe (hash grid + ReLU MLP).

Parameters live in one flat ParamStore under dotted segment names, e.g.
``object.amp.W0`` or ``probe.phase.table3``. The first dotted component is the group
("object" / "probe") used for per-group learning rates.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ptyinr.config import HashGridConfig, NetworksConfig, SirenConfig
from ptyinr.errors import CoordinateRangeError, DegenerateProbeError, ShapeMismatchError
from ptyinr.rng import Rng
from ptyinr.tape import Node, ParamStore, Tape, evaluate

logger = logging.getLogger(__name__)

HASH_PRIMES = (1, 2654435761)
HASH_INIT_RANGE = 1e-4

Layout = List[Tuple[str, Tuple[int, ...]]]


# --- Coordinates ---

@dataclass(frozen=True)
class CoordGrid:
    rows: int
    cols: int
    coordinates: np.ndarray  # (rows * cols, 2) of (y, x) in [0, 1]


def make_coord_grid(rows: int, cols: int, dtype=np.float64) -> CoordGrid:
    """Pixel centers mapped so the first pixel sits at 0 and the last at 1."""
    ys = np.linspace(0.0, 1.0, rows) if rows > 1 else np.zeros(1)
    xs = np.linspace(0.0, 1.0, cols) if cols > 1 else np.zeros(1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(dtype)
    return CoordGrid(rows, cols, coords)


def _check_layout(params: ParamStore, layout: Layout) -> None:
    for name, shape in layout:
        if name not in params:
            raise ShapeMismatchError(f"missing parameter segment {name}")
        if params.segments[name].shape != tuple(shape):
            raise ShapeMismatchError(
                f"segment {name}: expected {tuple(shape)}, got {params.segments[name].shape}"
            )


# --- SIREN ---

def siren_layout(cfg: SirenConfig, prefix: str) -> Layout:
    dims = [cfg.in_dim] + [cfg.hidden_width] * cfg.hidden_layers + [cfg.out_dim]
    layout: Layout = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        layout += [(f"{prefix}.W{i}", (d_in, d_out)), (f"{prefix}.b{i}", (d_out,))]
    return layout


def _siren_fill(params: ParamStore, cfg: SirenConfig, gen: np.random.Generator, prefix: str) -> None:
    layout = siren_layout(cfg, prefix)
    for i in range(len(layout) // 2):
        fan_in, fan_out = layout[2 * i][1]
        if i == 0:
            bound = 1.0 / fan_in
        else:
            bound = math.sqrt(6.0 / fan_in) / cfg.omega_hidden
        params.set(f"{prefix}.W{i}", gen.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.set(f"{prefix}.b{i}", np.zeros(fan_out))


def siren_init(cfg: SirenConfig, rng: Rng, prefix: str = "siren") -> ParamStore:
    params = ParamStore(siren_layout(cfg, prefix))
    _siren_fill(params, cfg, rng.stream("init", 0), prefix)
    return params


def siren_graph(tape: Tape, cfg: SirenConfig, coords: np.ndarray, prefix: str) -> Node:
    """sin(omega * (h W + b)) per hidden layer, then a linear head. Returns (P, 1)."""
    n_layers = cfg.hidden_layers + 1
    h = coords
    for i in range(n_layers):
        z = tape.add(tape.matmul(h, tape.param(f"{prefix}.W{i}")), tape.param(f"{prefix}.b{i}"))
        if i == n_layers - 1:
            return z
        omega = cfg.omega_first if i == 0 else cfg.omega_hidden
        h = tape.sin(tape.scale(z, omega))


def siren_forward(params: ParamStore, cfg: SirenConfig, grid: CoordGrid, prefix: str = "siren") -> np.ndarray:
    _check_layout(params, siren_layout(cfg, prefix))
    out = evaluate(lambda tape, _: siren_graph(tape, cfg, grid.coordinates, prefix), params)
    return out.value.reshape(grid.rows, grid.cols)


# --- Multi-resolution hash grid ---

def level_resolutions(cfg: HashGridConfig) -> List[int]:
    return [int(math.floor(cfg.base_resolution * cfg.growth_factor ** level)) for level in range(cfg.levels)]


@dataclass(frozen=True)
class LevelLookup:
    index: np.ndarray   # (P, 4) rows into the level table
    weight: np.ndarray  # (P, 4) bilinear weights, summing to 1 per row
    hashed: bool


def hashgrid_lookup(cfg: HashGridConfig, coords: np.ndarray) -> List[LevelLookup]:
    """Corner indices and bilinear weights per level; depends only on the coordinates."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.size and (coords.min() < 0.0 or coords.max() > 1.0):
        raise CoordinateRangeError("coordinate outside [0, 1]^2")
    table_size = 1 << cfg.table_size_log2
    lookups = []
    for res in level_resolutions(cfg):
        pos = coords * res
        cell = np.minimum(np.floor(pos), res - 1).astype(np.int64)
        frac = pos - cell
        cy, cx = cell[:, 0], cell[:, 1]
        fy, fx = frac[:, 0], frac[:, 1]
        ys = np.stack([cy, cy, cy + 1, cy + 1], axis=1).astype(np.uint64)
        xs = np.stack([cx, cx + 1, cx, cx + 1], axis=1).astype(np.uint64)
        weight = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1)
        side = res + 1
        hashed = side * side > table_size
        if hashed:
            index = (xs * np.uint64(HASH_PRIMES[0])) ^ (ys * np.uint64(HASH_PRIMES[1]))
            index = index % np.uint64(table_size)
        else:
            index = xs + ys * np.uint64(side)
        lookups.append(LevelLookup(index.astype(np.int64), weight, hashed))
    return lookups


def hashgrid_layout(cfg: HashGridConfig, prefix: str) -> Layout:
    rows = 1 << cfg.table_size_log2
    return [(f"{prefix}.table{level}", (rows, cfg.features_per_entry)) for level in range(cfg.levels)]


def hashgrid_graph(tape: Tape, cfg: HashGridConfig, lookups: Sequence[LevelLookup], prefix: str) -> Node:
    parts = [
        tape.gather_bilinear(tape.param(f"{prefix}.table{level}"), lk.index, lk.weight)
        for level, lk in enumerate(lookups)
    ]
    return parts[0] if len(parts) == 1 else tape.concat(parts, axis=1)


def hashgrid_encode(tables: Sequence[np.ndarray], cfg: HashGridConfig, grid: CoordGrid) -> np.ndarray:
    """Per-pixel concatenated level features, shape (rows * cols, levels * features)."""
    expected = (1 << cfg.table_size_log2, cfg.features_per_entry)
    if len(tables) != cfg.levels or any(np.shape(t) != expected for t in tables):
        raise ShapeMismatchError(f"expected {cfg.levels} tables of shape {expected}")
    lookups = hashgrid_lookup(cfg, grid.coordinates)
    return np.concatenate(
        [np.einsum("pc,pcf->pf", lk.weight, np.asarray(t)[lk.index]) for t, lk in zip(tables, lookups)],
        axis=1,
    )


# --- ReLU MLP ---

def mlp_dims(cfg: HashGridConfig) -> List[int]:
    return [cfg.levels * cfg.features_per_entry] + [cfg.mlp_hidden_width] * cfg.mlp_hidden_layers + [1]


def relu_mlp_layout(dims: Sequence[int], prefix: str) -> Layout:
    layout: Layout = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        layout += [(f"{prefix}.W{i}", (d_in, d_out)), (f"{prefix}.b{i}", (d_out,))]
    return layout


def relu_mlp_graph(tape: Tape, n_layers: int, features, prefix: str) -> Node:
    h = features
    for i in range(n_layers):
        z = tape.add(tape.matmul(h, tape.param(f"{prefix}.W{i}")), tape.param(f"{prefix}.b{i}"))
        if i == n_layers - 1:
            return z
        h = tape.relu(z)


def relu_mlp_forward(params: ParamStore, dims: Sequence[int], features: np.ndarray, prefix: str = "mlp") -> np.ndarray:
    _check_layout(params, relu_mlp_layout(dims, prefix))
    features = np.asarray(features, dtype=params.dtype)
    if features.ndim != 2 or features.shape[1] != dims[0]:
        raise ShapeMismatchError(f"expected features of width {dims[0]}, got {features.shape}")
    out = evaluate(lambda tape, _: relu_mlp_graph(tape, len(dims) - 1, features, prefix), params)
    return out.value[:, 0]


def _mlp_fill(params: ParamStore, dims: Sequence[int], gen: np.random.Generator, prefix: str) -> None:
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / math.sqrt(d_in)
        params.set(f"{prefix}.W{i}", gen.uniform(-bound, bound, size=(d_in, d_out)))
        params.set(f"{prefix}.b{i}", gen.uniform(-bound, bound, size=d_out))


def _hashgrid_fill(params: ParamStore, cfg: HashGridConfig, gen: np.random.Generator, prefix: str) -> None:
    for name, shape in hashgrid_layout(cfg, prefix):
        params.set(name, gen.uniform(-HASH_INIT_RANGE, HASH_INIT_RANGE, size=shape))


# --- Parameter counting ---

def dense_param_count(dims: Sequence[int]) -> int:
    return sum(d_in * d_out + d_out for d_in, d_out in zip(dims[:-1], dims[1:]))


def count_params(object_cfgs: Sequence[object], probe_cfgs: Sequence[HashGridConfig]) -> int:
    """Exact number of weights, biases and table entries over all heads."""
    total = 0
    for cfg in list(object_cfgs) + list(probe_cfgs):
        if isinstance(cfg, SirenConfig):
            total += dense_param_count([cfg.in_dim] + [cfg.hidden_width] * cfg.hidden_layers + [cfg.out_dim])
        elif isinstance(cfg, HashGridConfig):
            total += cfg.levels * (1 << cfg.table_size_log2) * cfg.features_per_entry
            total += dense_param_count(mlp_dims(cfg))
        else:
            raise TypeError(f"unknown network config: {type(cfg).__name__}")
    return total


# --- Complex field heads ---

class HeadPair:
    """Amplitude and phase heads of one backbone over a fixed coordinate grid."""

    def __init__(self, group: str, backbone: str, siren: SirenConfig, hashgrid: HashGridConfig, grid: CoordGrid):
        self.group = group
        self.backbone = backbone
        self.siren = siren
        self.hashgrid = hashgrid
        self.grid = grid
        self.lookups = None
        if backbone == "hashgrid":
            self.lookups = [
                LevelLookup(lk.index, lk.weight.astype(grid.coordinates.dtype), lk.hashed)
                for lk in hashgrid_lookup(hashgrid, grid.coordinates)
            ]

    def prefix(self, head: str) -> str:
        return f"{self.group}.{head}"

    def layout(self) -> Layout:
        layout: Layout = []
        for head in ("amp", "phase"):
            p = self.prefix(head)
            if self.backbone == "siren":
                layout += siren_layout(self.siren, p)
            else:
                layout += hashgrid_layout(self.hashgrid, p) + relu_mlp_layout(mlp_dims(self.hashgrid), p)
        return layout

    def fill(self, params: ParamStore, rng: Rng) -> None:
        for k, head in enumerate(("amp", "phase")):
            gen = rng.stream(f"init.{self.group}", k)
            p = self.prefix(head)
            if self.backbone == "siren":
                _siren_fill(params, self.siren, gen, p)
            else:
                _hashgrid_fill(params, self.hashgrid, gen, p)
                _mlp_fill(params, mlp_dims(self.hashgrid), gen, p)

    def raw(self, tape: Tape, head: str) -> Node:
        """Head output reshaped to the grid, (rows, cols)."""
        p = self.prefix(head)
        if self.backbone == "siren":
            out = siren_graph(tape, self.siren, self.grid.coordinates, p)
        else:
            features = hashgrid_graph(tape, self.hashgrid, self.lookups, p)
            out = relu_mlp_graph(tape, len(mlp_dims(self.hashgrid)) - 1, features, p)
        return tape.reshape(out, (self.grid.rows, self.grid.cols))


def object_graph(tape: Tape, heads: HeadPair) -> Node:
    """O = sigmoid(amp) * exp(i * phase)."""
    amplitude = tape.sigmoid(heads.raw(tape, "amp"))
    return tape.polar(amplitude, heads.raw(tape, "phase"))


def probe_graph(tape: Tape, heads: HeadPair, normalize: bool = True) -> Tuple[Node, Node]:
    """P = |amp| / max|amp| * exp(i * phase). Returns (probe, amplitude).

    With `normalize=False` the amplitude is |amp| itself and the probe scale is learned.
    """
    magnitude = tape.abs(heads.raw(tape, "amp"))
    if not normalize:
        return tape.polar(magnitude, heads.raw(tape, "phase")), magnitude
    if not np.max(magnitude.value) > 0:
        raise DegenerateProbeError("degenerate probe")
    amplitude = tape.max_normalize(magnitude)
    return tape.polar(amplitude, heads.raw(tape, "phase")), amplitude


def predict_object(params: ParamStore, heads: HeadPair) -> np.ndarray:
    return evaluate(lambda tape, _: object_graph(tape, heads), params).value


def predict_probe(params: ParamStore, heads: HeadPair, normalize: bool = True) -> np.ndarray:
    probe, _ = evaluate(lambda tape, _: probe_graph(tape, heads, normalize), params)
    return probe.value


# --- Full model ---

@dataclass
class NeuralFields:
    """Both neural fields of a reconstruction and their shared parameter store."""
    cfg: NetworksConfig
    object_heads: HeadPair
    probe_heads: Optional[HeadPair]
    params: ParamStore
    fixed_probe: Optional[np.ndarray] = None
    groups: Dict[str, List[str]] = field(default_factory=dict)

    def object_graph(self, tape: Tape) -> Node:
        return object_graph(tape, self.object_heads)

    def probe_graph(self, tape: Tape):
        """(probe, amplitude); both are plain arrays when the probe is fixed."""
        if self.probe_heads is None:
            return self.fixed_probe, None
        return probe_graph(tape, self.probe_heads, self.cfg.probe_normalize)

    def object_field(self) -> np.ndarray:
        return predict_object(self.params, self.object_heads)

    def probe_field(self) -> np.ndarray:
        if self.probe_heads is None:
            return self.fixed_probe
        return predict_probe(self.params, self.probe_heads, self.cfg.probe_normalize)


def build_fields(cfg: NetworksConfig, object_shape: Tuple[int, int], probe_shape: Tuple[int, int],
                 seed: int, siren: Optional[SirenConfig] = None, fixed_probe: Optional[np.ndarray] = None,
                 dtype=np.float64) -> NeuralFields:
    """Lay out, allocate and initialize the object (and, unless fixed, probe) networks."""
    siren = siren or cfg.siren
    object_heads = HeadPair(
        "object", cfg.object_backbone, siren, cfg.hashgrid, make_coord_grid(*object_shape, dtype=dtype)
    )
    probe_heads = None
    if fixed_probe is None:
        probe_heads = HeadPair("probe", "hashgrid", siren, cfg.hashgrid, make_coord_grid(*probe_shape, dtype=dtype))
    elif tuple(np.shape(fixed_probe)) != tuple(probe_shape):
        raise ShapeMismatchError(f"fixed probe shape {np.shape(fixed_probe)} != {tuple(probe_shape)}")

    layout = object_heads.layout() + (probe_heads.layout() if probe_heads else [])
    params = ParamStore(layout, dtype=dtype)
    rng = Rng(seed)
    object_heads.fill(params, rng)
    if probe_heads:
        probe_heads.fill(params, rng)
    groups: Dict[str, List[str]] = {}
    for name, _ in layout:
        groups.setdefault(name.split(".", 1)[0], []).append(name)
    logger.info(
        f"Built neural fields: object backbone {cfg.object_backbone}, "
        f"probe {'fixed' if probe_heads is None else 'hashgrid'}, {params.total} parameters"
    )
    return NeuralFields(
        cfg, object_heads, probe_heads, params,
        fixed_probe=None if fixed_probe is None else np.asarray(fixed_probe, dtype=np.complex128),
        groups=groups,
    )
