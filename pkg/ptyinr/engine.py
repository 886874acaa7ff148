# ptyinr/engine.py
"""Training loop for the neural fields, with minibatching, learning-rate schedules and resumable checkpoints."""
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from ptyinr import __version__
from ptyinr.config import LossConfig, NetworksConfig, TrainConfig, config_hash
from ptyinr.container import load_container, save_container
from ptyinr.errors import ConfigError, ContainerError, DivergenceError
from ptyinr.networks import NeuralFields, build_fields
from ptyinr.optimization import AdamState, adam_step, group_learning_rates, loss_graph
from ptyinr.physics import DiffractionSet, forward_graph
from ptyinr.rng import Rng
from ptyinr.tape import ParamStore, evaluate, tape_backward, tape_forward

logger = logging.getLogger(__name__)

FULL_BATCH_LIMIT = 2 ** 24  # values per step before switching to minibatches
CHECKPOINT_VERSION = 1


@dataclass
class ReconResult:
    object: np.ndarray
    probe: np.ndarray
    loss_history: np.ndarray
    metrics: Dict[str, Any] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)
    params: Optional[ParamStore] = None


@dataclass
class Checkpoint:
    step: int
    params: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_t: int
    loss_history: np.ndarray
    segments: List[Dict[str, Any]]
    config_hash: Optional[str] = None


# --- Checkpoints ---

def _segments(params: ParamStore) -> List[Dict[str, Any]]:
    return [{"name": s.name, "offset": s.offset, "shape": list(s.shape)} for s in params.segments.values()]


def trajectory_hash(train: TrainConfig, networks: NetworksConfig) -> str:
    """Hash of every setting that shapes the optimization path; logging cadence is left out."""
    return config_hash(train.model_copy(update={"log_every": 1, "checkpoint_every": 0}), networks)


def checkpoint_save(path: str, params: ParamStore, state: AdamState, loss_history: List[float],
                    step: int, provenance: Optional[dict] = None, run_hash: Optional[str] = None) -> str:
    metadata = {
        "kind": "checkpoint",
        "checkpoint_version": CHECKPOINT_VERSION,
        "step": step,
        "adam_t": state.t,
        "segments": _segments(params),
        "config_hash": run_hash,
    }
    arrays = {
        "params": params.values,
        "adam_m": state.m,
        "adam_v": state.v,
        "loss_history": np.asarray(loss_history, dtype=np.float64),
    }
    return save_container(path, arrays, metadata, provenance, roles={k: "checkpoint" for k in arrays})


def checkpoint_load(path: str) -> Checkpoint:
    c = load_container(path)
    meta = c.metadata
    if meta.get("kind") != "checkpoint":
        raise ContainerError(f"{path} is not a checkpoint")
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ContainerError(f"checkpoint version mismatch: {meta.get('checkpoint_version')}")
    params = c.require("params")
    if c.require("adam_m").shape != params.shape or c.require("adam_v").shape != params.shape:
        raise ContainerError(f"checkpoint {path}: optimizer moments do not match parameters")
    history = c.require("loss_history")
    if len(history) != meta["step"]:
        raise ContainerError(f"checkpoint {path}: loss history is truncated")
    return Checkpoint(meta["step"], params, c.arrays["adam_m"], c.arrays["adam_v"],
                      meta["adam_t"], history, meta["segments"], meta.get("config_hash"))


def _restore(ckpt: Checkpoint, params: ParamStore, state: AdamState, expected_hash: str) -> None:
    if ckpt.params.size != params.total or ckpt.segments != _segments(params):
        raise ConfigError(
            f"checkpoint has {ckpt.params.size} parameters, this configuration has {params.total}"
        )
    if ckpt.config_hash != expected_hash:
        raise ConfigError(
            f"checkpoint was written with config hash {ckpt.config_hash}, this run has {expected_hash}"
        )
    params.values[:] = ckpt.params
    state.m[:] = ckpt.adam_m
    state.v[:] = ckpt.adam_v
    state.t = ckpt.adam_t


# --- Training loop ---

def _batch_size(dataset: DiffractionSet, batch: int) -> int:
    J = len(dataset)
    frame_size = int(np.prod(dataset.frames.shape[1:]))
    if batch:
        return min(batch, J)
    if J * frame_size <= FULL_BATCH_LIMIT:
        return J
    size = max(1, FULL_BATCH_LIMIT // frame_size)
    logger.warning(f"Dataset has {J * frame_size} values per pass; switching to minibatches of {size}")
    return size


def batch_indices(step: int, n_frames: int, batch: int, seed: int) -> np.ndarray:
    """Scan positions used at 1-based `step`; a fresh permutation every epoch."""
    if batch >= n_frames:
        return np.arange(n_frames)
    per_epoch = math.ceil(n_frames / batch)
    epoch, k = divmod(step - 1, per_epoch)
    order = Rng(seed, counter=epoch).stream("minibatch").permutation(n_frames)
    return order[k * batch:(k + 1) * batch]


def data_loss(dataset: DiffractionSet, obj, probe, loss: LossConfig = LossConfig()) -> float:
    """Data term of the loss for given fields, without any regularizer."""
    sqrt_frames = np.sqrt(dataset.frames)
    grid = dataset.grid
    out = evaluate(
        lambda tape, _: loss_graph(
            tape, sqrt_frames, forward_graph(tape, obj, probe, grid.positions, grid.probe_shape), loss, 0
        ),
        None,
    )
    return float(out.value)


def lr_factor(step: int, train: TrainConfig) -> float:
    """Multiplier on the base learning rates at 1-based `step`.

    "cosine" anneals from 1 at the first step to `lr_final_fraction` at the last one.
    """
    if train.lr_schedule == "constant" or train.steps <= 1:
        return 1.0
    progress = (step - 1) / (train.steps - 1)
    floor = train.lr_final_fraction
    return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def _provenance(train: TrainConfig, networks: NetworksConfig) -> Dict[str, Any]:
    return {
        "config_hash": config_hash(train, networks),
        "seed": train.seed,
        "version": __version__,
    }


def reconstruct(dataset: DiffractionSet, train: TrainConfig, networks: NetworksConfig = NetworksConfig(),
                probe: Optional[np.ndarray] = None, checkpoint_dir: Optional[str] = None,
                resume: Optional[str] = None, provenance: Optional[dict] = None) -> ReconResult:
    """Jointly fit the object (and, unless fixed, probe) networks to the diffraction data."""
    if train.probe_mode == "fixed" and probe is None:
        raise ConfigError("probe_mode 'fixed' needs a probe")
    if train.probe_mode == "learn":
        probe = None
    provenance = provenance or _provenance(train, networks)
    dtype = np.float32 if train.precision == "float32" else np.float64
    siren = networks.siren if train.omega_first is None else networks.siren.model_copy(
        update={"omega_first": train.omega_first}
    )
    fields: NeuralFields = build_fields(
        networks, dataset.grid.object_shape, dataset.grid.probe_shape, train.seed,
        siren=siren, fixed_probe=probe, dtype=dtype,
    )
    params = fields.params
    base_lr = group_learning_rates(params, {"object": train.lr_object, "probe": train.lr_probe})
    state = AdamState.for_params(params, base_lr)
    loss_cfg = train.loss
    run_hash = trajectory_hash(train, networks)

    history: List[float] = []
    start = 0
    last_checkpoint: Optional[str] = None
    if resume:
        ckpt = checkpoint_load(resume)
        _restore(ckpt, params, state, run_hash)
        history = [float(x) for x in ckpt.loss_history]
        start = ckpt.step
        last_checkpoint = resume
        logger.info(f"Resumed from {resume} at step {start}")

    sqrt_frames = np.sqrt(dataset.frames).astype(dtype)
    positions = dataset.grid.positions
    window = dataset.grid.probe_shape
    batch = _batch_size(dataset, train.batch)
    fixed = None if probe is None else fields.fixed_probe.astype(np.result_type(dtype, np.complex64))

    for step in range(start + 1, train.steps + 1):
        idx = batch_indices(step, len(dataset), batch, train.seed)

        def builder(tape, _):
            obj = fields.object_graph(tape)
            if fixed is None:
                prb, amplitude = fields.probe_graph(tape)
            else:
                prb, amplitude = fixed, None
            predicted = forward_graph(tape, obj, prb, positions[idx], window)
            return loss_graph(tape, sqrt_frames[idx], predicted, loss_cfg, step, amplitude)

        tape, loss = tape_forward(builder, params)
        value = float(loss.value)
        if not math.isfinite(value):
            raise DivergenceError(step, last_checkpoint)
        tape_backward(tape)
        factor = lr_factor(step, train)
        state.lr = base_lr * factor
        adam_step(params, state)
        history.append(value)

        if step % train.log_every == 0 or step == train.steps:
            logger.info(f"Step {step}/{train.steps}: loss {value:.6e}, lr x{factor:.3g}")
        if checkpoint_dir and train.checkpoint_every and step % train.checkpoint_every == 0:
            last_checkpoint = checkpoint_save(
                os.path.join(checkpoint_dir, f"ckpt_{step:06d}"), params, state, history, step, provenance,
                run_hash=run_hash,
            )
            logger.info(f"Checkpoint written at step {step}: {last_checkpoint}")

    result_probe = fields.probe_field() if fixed is None else fields.fixed_probe
    return ReconResult(
        object=np.asarray(fields.object_field(), dtype=np.complex128),
        probe=np.asarray(result_probe, dtype=np.complex128),
        loss_history=np.asarray(history, dtype=np.float64),
        provenance=dict(provenance),
        params=params,
    )


def reconstruct_known_probe(dataset: DiffractionSet, probe: np.ndarray, train: TrainConfig,
                            networks: NetworksConfig = NetworksConfig(), **kwargs) -> ReconResult:
    """Object-only reconstruction with the probe frozen to `probe`."""
    return reconstruct(dataset, train.model_copy(update={"probe_mode": "fixed"}), networks, probe=probe, **kwargs)
