# ptyinr/cli.py
import argparse
import logging
import os
import sys
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from ptyinr import __version__
from ptyinr.baseline import epie_reconstruct
from ptyinr.config import PipelineConfig, LOG_LEVEL, config_dump, config_hash, load_config
from ptyinr.container import Container, load_container, save_container, staged_output
from ptyinr.engine import ReconResult, reconstruct
from ptyinr.errors import ConfigError, ContainerError, GradientCheckError, PtyInrError
from ptyinr.imaging import save_field_images
from ptyinr.metrics import curve_table, evaluate, evaluate_pair, format_report
from ptyinr.networks import build_fields
from ptyinr.optimization import loss_graph
from ptyinr.physics import DiffractionSet, ScanGrid, forward_graph, make_scan_grid, simulate_intensity
from ptyinr.rng import Rng
from ptyinr.simulate import Phantom, build_dataset, focused_probe, make_phantom, resolve_step, split_dataset
from ptyinr.tape import finite_diff_check

logger = logging.getLogger(__name__)

GRADCHECK_OBJECT = (16, 16)
GRADCHECK_PROBE = (8, 8)
GRADCHECK_STEP = (4, 4)


# --- Helpers ---

def _provenance(cfg: PipelineConfig, seed: int) -> dict:
    return {"config_hash": config_hash(cfg), "seed": seed, "version": __version__}


def _dataset_from_container(c: Container) -> Tuple[DiffractionSet, Optional[Phantom]]:
    meta = c.metadata
    if meta.get("kind") != "dataset":
        raise ContainerError("not a dataset container")
    grid = ScanGrid(c.require("positions"), tuple(meta["step_pixels"]), tuple(meta["probe_shape"]),
                    tuple(meta["object_shape"]))
    dataset = DiffractionSet(c.require("frames"), grid, meta.get("noise"), meta.get("dataset", {}))
    truth = None
    if "object_truth" in c.arrays and "probe_truth" in c.arrays:
        truth = Phantom(c.arrays["object_truth"], c.arrays["probe_truth"], meta.get("dataset", {}).get("phantom", ""))
    return dataset, truth


def _load_probe(spec: Optional[str]) -> Optional[np.ndarray]:
    """`fixed:PATH` loads `probe` (or `probe_truth`) from the container at PATH."""
    if spec is None:
        return None
    mode, _, path = spec.partition(":")
    if mode != "fixed" or not path:
        raise ConfigError(f"--probe expects fixed:PATH, got {spec}")
    c = load_container(path)
    for name in ("probe", "probe_truth"):
        if name in c.arrays:
            return c.arrays[name]
    raise ContainerError(f"container {path} has no probe array")


def _write_recon(out: str, result: ReconResult, metadata: dict) -> None:
    with staged_output(out) as tmp:
        save_container(
            tmp,
            {"object": result.object, "probe": result.probe, "loss_history": result.loss_history},
            metadata, result.provenance,
            roles={"object": "reconstruction", "probe": "reconstruction", "loss_history": "history"},
            atomic=False,
        )
        save_field_images(result.object, tmp, "object")
        save_field_images(result.probe, tmp, "probe")
        pd.DataFrame({"step": np.arange(1, len(result.loss_history) + 1), "loss": result.loss_history}).to_csv(
            os.path.join(tmp, "loss_history.csv"), index=False
        )
    logger.info(f"Reconstruction written to {out}")


def _write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


# --- Subcommands ---

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    phantom = make_phantom(cfg.phantom.kind, cfg.phantom.object_shape, cfg.phantom.probe_shape,
                           Rng(cfg.phantom.seed), spokes=cfg.phantom.spokes)
    step = resolve_step(cfg.scan, phantom.probe)
    dataset, truth = build_dataset(phantom, step, cfg.noise)
    metadata = {
        "kind": "dataset",
        "step_pixels": list(dataset.grid.step_pixels),
        "probe_shape": list(dataset.grid.probe_shape),
        "object_shape": list(dataset.grid.object_shape),
        "noise": dataset.noise,
        "dataset": dataset.metadata,
        "physical": config_dump(cfg.physical),
        "config": config_dump(cfg),
    }
    with staged_output(args.out) as tmp:
        save_container(
            tmp,
            {"frames": dataset.frames, "positions": dataset.grid.positions,
             "object_truth": truth.object, "probe_truth": truth.probe},
            metadata, _provenance(cfg, cfg.noise.seed),
            roles={"frames": "measurement", "positions": "scan", "object_truth": "truth", "probe_truth": "truth"},
            atomic=False,
        )
        save_field_images(truth.object, tmp, "object_truth")
        save_field_images(truth.probe, tmp, "probe_truth")
    logger.info(f"Dataset written to {args.out}")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = load_config(args.config)
    dataset, _ = _dataset_from_container(load_container(args.data))
    if args.split:
        dataset = split_dataset(dataset, args.split)
    probe = _load_probe(args.probe)
    train = cfg.train.model_copy(update={"probe_mode": "fixed"}) if probe is not None else cfg.train
    checkpoint_dir = args.checkpoint_dir or (f"{os.path.abspath(args.out)}.ckpt" if train.checkpoint_every else None)
    result = reconstruct(dataset, train, cfg.networks, probe=probe, checkpoint_dir=checkpoint_dir,
                         resume=args.resume, provenance=_provenance(cfg, train.seed))
    metadata = {
        "kind": "reconstruction",
        "method": "ptyinr",
        "probe_mode": train.probe_mode,
        "split": args.split,
        "config": config_dump(cfg),
    }
    _write_recon(args.out, result, metadata)
    return 0


def cmd_epie(args) -> int:
    cfg = load_config(args.config)
    dataset, _ = _dataset_from_container(load_container(args.data))
    if args.split:
        dataset = split_dataset(dataset, args.split)
    probe = _load_probe(args.probe)
    epie_cfg = cfg.epie.model_copy(update={"probe_mode": "fixed"}) if probe is not None else cfg.epie
    result = epie_reconstruct(dataset, init_probe=probe, cfg=epie_cfg)
    result.provenance = _provenance(cfg, epie_cfg.seed)
    metadata = {
        "kind": "reconstruction",
        "method": "epie",
        "probe_mode": epie_cfg.probe_mode,
        "split": args.split,
        "config": config_dump(cfg),
    }
    _write_recon(args.out, result, metadata)
    return 0


def _recon_from_container(c: Container) -> ReconResult:
    if c.metadata.get("kind") != "reconstruction":
        raise ContainerError("not a reconstruction container")
    return ReconResult(c.require("object"), c.require("probe"), c.arrays.get("loss_history", np.zeros(0)),
                       provenance=c.provenance)


def cmd_evaluate(args) -> int:
    crop = tuple(args.crop) if args.crop else None
    samples = 4096
    if args.config:
        cfg = load_config(args.config)
        crop = crop or cfg.evaluate.crop
        samples = cfg.evaluate.align_samples

    if args.pair:
        a = _recon_from_container(load_container(args.pair[0]))
        b = _recon_from_container(load_container(args.pair[1]))
        report, curve = evaluate_pair(a.object, b.object, crop, samples)
        _write_text(f"{args.report}.frc.csv", curve_table(curve).to_csv(index=False))
    else:
        if not (args.recon and args.truth):
            raise ConfigError("evaluate needs --recon and --truth, or --pair")
        recon = _recon_from_container(load_container(args.recon))
        _, truth = _dataset_from_container(load_container(args.truth))
        if truth is None:
            raise ContainerError(f"{args.truth} holds no ground truth")
        report = evaluate(recon, truth, crop, samples)
        report.update({f"provenance_{k}": v for k, v in recon.provenance.items()})
    _write_text(args.report, format_report(report))
    print(format_report(report), end="")
    return 0


def gradcheck_problem(cfg: PipelineConfig):
    """Full loss on the 16x16 object / 8x8 probe / 9 position toy, as (builder, params)."""
    gen = Rng(cfg.train.seed).stream("gradcheck.truth")
    obj = (0.5 + 0.5 * gen.uniform(size=GRADCHECK_OBJECT)) * np.exp(1j * gen.uniform(0, 1, size=GRADCHECK_OBJECT))
    grid = make_scan_grid(GRADCHECK_OBJECT, GRADCHECK_PROBE, GRADCHECK_STEP)
    dataset = simulate_intensity(obj, focused_probe(GRADCHECK_PROBE), grid)
    fields = build_fields(cfg.networks, GRADCHECK_OBJECT, GRADCHECK_PROBE, cfg.train.seed)
    sqrt_frames = np.sqrt(dataset.frames)
    loss_cfg = cfg.train.loss.model_copy(update={"k": max(1, cfg.train.loss.k)})

    def loss_fn(tape, _):
        probe, amplitude = fields.probe_graph(tape)
        predicted = forward_graph(tape, fields.object_graph(tape), probe, grid.positions, GRADCHECK_PROBE)
        return loss_graph(tape, sqrt_frames, predicted, loss_cfg, 1, amplitude)

    return loss_fn, fields.params


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    loss_fn, params = gradcheck_problem(cfg)
    report = finite_diff_check(loss_fn, params, args.samples, args.h, seed=cfg.train.seed)
    print(f"max_relative_error = {report.max_relative_error:.3e}")
    if report.kink:
        logger.warning("Gradient check touched a non-differentiable point; the error there may be large")
    if report.max_relative_error > args.tolerance:
        raise GradientCheckError(
            f"max relative error {report.max_relative_error:.3e} exceeds {args.tolerance:.1e}"
        )
    return 0


# --- Entry point ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptyinr", description="Neural-field ptychographic reconstruction")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="logging level (default from PTYINR_LOG_LEVEL)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="build a phantom and a simulated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (("reconstruct", cmd_reconstruct, "neural-field reconstruction"),
                             ("epie", cmd_epie, "ePIE baseline reconstruction")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--data", required=True)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--probe", help="fixed:PATH to freeze the probe to the one stored at PATH")
        p.add_argument("--split", choices=("even", "odd"), help="use only even or odd scan positions")
        if name == "reconstruct":
            p.add_argument("--checkpoint-dir")
            p.add_argument("--resume", help="checkpoint directory to resume from")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="metrics against ground truth or between two reconstructions")
    p.add_argument("--recon")
    p.add_argument("--truth")
    p.add_argument("--pair", nargs=2, metavar=("DIR_A", "DIR_B"))
    p.add_argument("--report", required=True)
    p.add_argument("--config")
    p.add_argument("--crop", nargs=2, type=int, metavar=("H", "W"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient on a toy problem")
    p.add_argument("--config", required=True)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO))
    try:
        return args.func(args)
    except PtyInrError as e:
        logger.error(e.detail)
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code


def main() -> None:
    sys.exit(run_cli())
