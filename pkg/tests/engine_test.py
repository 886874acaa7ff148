import logging
import os

import numpy as np
import pytest

from ptyinr import engine
from ptyinr.config import HashGridConfig, NetworksConfig, ScanConfig, SirenConfig, TrainConfig
from ptyinr.container import save_container
from ptyinr.engine import (
    batch_indices,
    checkpoint_load,
    data_loss,
    lr_factor,
    reconstruct,
    reconstruct_known_probe,
    trajectory_hash,
)
from ptyinr.errors import ConfigError, ContainerError, DivergenceError, ShapeMismatchError
from ptyinr.metrics import align_global_phase, phase_psnr
from ptyinr.networks import build_fields
from ptyinr.rng import Rng
from ptyinr.simulate import build_dataset, make_phantom, resolve_step
from ptyinr.tape import evaluate


def quick_train(**overrides):
    values = dict(steps=5, lr_object=1e-2, lr_probe=1e-2, seed=0, log_every=1)
    values.update(overrides)
    return TrainConfig(**values)


# --- Wiring ---

def test_truth_loss_is_exactly_zero(toy_dataset):
    dataset, obj, probe = toy_dataset
    assert data_loss(dataset, obj, probe) == 0.0


def test_global_phase_gauge_leaves_loss_unchanged(toy_dataset):
    dataset, obj, probe = toy_dataset
    rotated = data_loss(dataset, obj * np.exp(0.4j), probe * np.exp(-0.4j))
    assert abs(rotated) <= 1e-12


def test_zero_steps_returns_the_initialization(toy_dataset, tiny_networks):
    dataset, _, _ = toy_dataset
    result = reconstruct(dataset, quick_train(steps=0), tiny_networks)
    init = build_fields(tiny_networks, (16, 16), (8, 8), seed=0)
    assert len(result.loss_history) == 0
    np.testing.assert_array_equal(result.object, init.object_field())
    np.testing.assert_array_equal(result.probe, init.probe_field())


def test_learning_run_shapes_and_provenance(toy_dataset, tiny_networks):
    dataset, _, _ = toy_dataset
    result = reconstruct(dataset, quick_train(), tiny_networks)
    assert result.loss_history.shape == (5,)
    assert result.object.shape == (16, 16) and result.probe.shape == (8, 8)
    assert np.all(np.isfinite(result.object)) and np.all(np.isfinite(result.probe))
    assert np.abs(result.probe).max() == pytest.approx(1.0, abs=1e-12)
    assert {"config_hash", "seed", "version"} <= set(result.provenance)


def test_identical_runs_are_bit_identical(toy_dataset, tiny_networks):
    dataset, _, _ = toy_dataset
    a = reconstruct(dataset, quick_train(), tiny_networks)
    b = reconstruct(dataset, quick_train(), tiny_networks)
    np.testing.assert_array_equal(a.loss_history, b.loss_history)
    np.testing.assert_array_equal(a.object, b.object)
    np.testing.assert_array_equal(a.probe, b.probe)


def test_omega_override_changes_the_object_network(toy_dataset, tiny_networks):
    dataset, _, _ = toy_dataset
    base = reconstruct(dataset, quick_train(steps=0), tiny_networks)
    faster = reconstruct(dataset, quick_train(steps=0, omega_first=90.0), tiny_networks)
    assert not np.array_equal(base.object, faster.object)


def test_float32_precision_runs(toy_dataset, tiny_networks):
    dataset, _, _ = toy_dataset
    result = reconstruct(dataset, quick_train(precision="float32"), tiny_networks)
    assert result.params.dtype == np.float32
    assert np.all(np.isfinite(result.loss_history))


# --- Known probe ---

def test_known_probe_training_reduces_the_loss(toy_dataset, tiny_networks):
    print("\n[Test] Object-only training with the true probe...")
    dataset, _, probe = toy_dataset
    result = reconstruct_known_probe(dataset, probe, quick_train(steps=60), tiny_networks)
    history = result.loss_history
    print(f"  [Result] loss {history[0]:.4e} -> {history[-1]:.4e}")
    np.testing.assert_array_equal(result.probe, probe)
    assert np.median(history[-12:]) < np.median(history[:12])


def test_lambda_has_no_effect_with_a_frozen_probe(toy_dataset, tiny_networks):
    dataset, _, probe = toy_dataset
    a = reconstruct_known_probe(dataset, probe, quick_train(lam=0.0, k=5), tiny_networks)
    b = reconstruct_known_probe(dataset, probe, quick_train(lam=1.0, k=5), tiny_networks)
    np.testing.assert_array_equal(a.loss_history, b.loss_history)
    np.testing.assert_array_equal(a.object, b.object)


def test_fixed_mode_needs_a_matching_probe(toy_dataset, tiny_networks):
    dataset, _, _ = toy_dataset
    with pytest.raises(ConfigError):
        reconstruct(dataset, quick_train(probe_mode="fixed"), tiny_networks)
    with pytest.raises(ShapeMismatchError):
        reconstruct_known_probe(dataset, np.ones((4, 4), dtype=complex), quick_train(), tiny_networks)


# --- Learning-rate schedule ---

def test_constant_schedule_is_flat():
    cfg = quick_train(steps=10)
    assert [lr_factor(s, cfg) for s in (1, 5, 10)] == [1.0, 1.0, 1.0]


def test_cosine_schedule_anneals_to_the_floor():
    cfg = quick_train(steps=11, lr_schedule="cosine", lr_final_fraction=0.05)
    factors = np.array([lr_factor(s, cfg) for s in range(1, 12)])
    assert factors[0] == pytest.approx(1.0)
    assert factors[5] == pytest.approx(0.525)
    assert factors[-1] == pytest.approx(0.05)
    assert np.all(np.diff(factors) < 0)


def test_cosine_schedule_changes_the_trajectory(toy_dataset, tiny_networks):
    dataset, _, _ = toy_dataset
    flat = reconstruct(dataset, quick_train(), tiny_networks)
    annealed = reconstruct(dataset, quick_train(lr_schedule="cosine"), tiny_networks)
    assert flat.loss_history[0] == annealed.loss_history[0]
    assert not np.array_equal(flat.params.values, annealed.params.values)


# --- Probe normalization ---

@pytest.mark.parametrize("normalize", [True, False])
def test_probe_normalization_and_regularizer_combinations(toy_dataset, tiny_networks, normalize):
    print(f"\n[Test] Learned probe with normalization {'on' if normalize else 'off'}, lambda 0 and 1...")
    dataset, _, _ = toy_dataset
    networks = tiny_networks.model_copy(update={"probe_normalize": normalize})
    runs = {lam: reconstruct(dataset, quick_train(lam=lam, k=5), networks) for lam in (0.0, 1.0)}
    for lam, result in runs.items():
        assert np.all(np.isfinite(result.loss_history)) and np.all(np.isfinite(result.probe))
        fields = build_fields(networks, (16, 16), (8, 8), seed=0)
        fields.params.values[:] = result.params.values
        raw = evaluate(lambda tape, _: tape.abs(fields.probe_heads.raw(tape, "amp")), fields.params).value
        expected = raw / raw.max() if normalize else raw
        np.testing.assert_allclose(np.abs(result.probe), expected, rtol=1e-12, atol=1e-15)
    # the regularizer adds lambda * mean amplitude from the first step
    assert runs[1.0].loss_history[0] > runs[0.0].loss_history[0]
    assert not np.array_equal(runs[1.0].probe, runs[0.0].probe)
    print(f"  [Result] peak |P| {np.abs(runs[0.0].probe).max():.4f} (lambda 0), "
          f"{np.abs(runs[1.0].probe).max():.4f} (lambda 1)")


# --- Batching ---

def test_full_batch_when_small():
    np.testing.assert_array_equal(batch_indices(3, 9, 9, seed=0), np.arange(9))


def test_minibatches_cover_each_epoch_once():
    n, batch = 10, 3
    per_epoch = 4
    for epoch in range(2):
        seen = np.concatenate([batch_indices(epoch * per_epoch + k, n, batch, seed=5) for k in range(1, 5)])
        assert sorted(seen.tolist()) == list(range(n))
    np.testing.assert_array_equal(batch_indices(2, n, batch, 5), batch_indices(2, n, batch, 5))
    assert not np.array_equal(batch_indices(1, n, batch, 5), batch_indices(5, n, batch, 5))


def test_large_datasets_switch_to_minibatches(toy_dataset, tiny_networks, monkeypatch, caplog):
    dataset, _, _ = toy_dataset
    monkeypatch.setattr(engine, "FULL_BATCH_LIMIT", 200)
    with caplog.at_level(logging.WARNING, logger="ptyinr.engine"):
        result = reconstruct(dataset, quick_train(steps=3), tiny_networks)
    assert "switching to minibatches" in caplog.text
    assert len(result.loss_history) == 3


# --- Divergence ---

def test_non_finite_loss_aborts_with_step(toy_dataset, tiny_networks, monkeypatch):
    dataset, _, _ = toy_dataset
    original = engine.loss_graph

    def poisoned(tape, *args, **kwargs):
        return tape.scale(original(tape, *args, **kwargs), np.nan)

    monkeypatch.setattr(engine, "loss_graph", poisoned)
    with pytest.raises(DivergenceError, match="non-finite loss at step 1") as info:
        reconstruct(dataset, quick_train(), tiny_networks)
    assert info.value.step == 1
    assert info.value.last_checkpoint is None


# --- Checkpoints ---

@pytest.mark.parametrize("schedule", ["constant", "cosine"])
def test_resume_matches_uninterrupted_run(toy_dataset, tiny_networks, tmp_path, schedule):
    print(f"\n[Test] Resume from a mid-run checkpoint, {schedule} learning rate...")
    dataset, _, _ = toy_dataset
    cfg = quick_train(steps=6, checkpoint_every=3, lr_schedule=schedule)
    ckpt_dir = str(tmp_path / "ckpt")
    full = reconstruct(dataset, cfg, tiny_networks, checkpoint_dir=ckpt_dir)
    assert sorted(os.listdir(ckpt_dir)) == ["ckpt_000003", "ckpt_000006"]

    resumed = reconstruct(dataset, cfg, tiny_networks, resume=os.path.join(ckpt_dir, "ckpt_000003"))
    np.testing.assert_array_equal(resumed.params.values, full.params.values)
    np.testing.assert_array_equal(resumed.loss_history, full.loss_history)
    print("  [Result] Parameters and loss history are bit-identical")


def test_checkpoint_round_trip(toy_dataset, tiny_networks, tmp_path):
    dataset, _, _ = toy_dataset
    ckpt_dir = str(tmp_path / "ckpt")
    result = reconstruct(dataset, quick_train(steps=4, checkpoint_every=4), tiny_networks, checkpoint_dir=ckpt_dir)
    ckpt = checkpoint_load(os.path.join(ckpt_dir, "ckpt_000004"))
    assert ckpt.step == 4 and ckpt.adam_t == 4
    np.testing.assert_array_equal(ckpt.params, result.params.values)
    np.testing.assert_array_equal(ckpt.loss_history, result.loss_history)
    assert ckpt.params.dtype.byteorder in ("<", "=")


def test_resume_with_other_networks_is_rejected(toy_dataset, tiny_networks, tmp_path):
    dataset, _, _ = toy_dataset
    ckpt_dir = str(tmp_path / "ckpt")
    reconstruct(dataset, quick_train(steps=2, checkpoint_every=2), tiny_networks, checkpoint_dir=ckpt_dir)
    wider = tiny_networks.model_copy(update={"siren": SirenConfig(hidden_layers=1, hidden_width=24)})
    with pytest.raises(ConfigError, match="parameters"):
        reconstruct(dataset, quick_train(steps=4), wider, resume=os.path.join(ckpt_dir, "ckpt_000002"))


@pytest.mark.parametrize("change", [{"lr_object": 2e-2}, {"lam": 0.5}, {"steps": 8}, {"seed": 1}])
def test_resume_with_changed_training_config_is_rejected(toy_dataset, tiny_networks, tmp_path, change):
    dataset, _, _ = toy_dataset
    ckpt_dir = str(tmp_path / "ckpt")
    reconstruct(dataset, quick_train(steps=4, checkpoint_every=2), tiny_networks, checkpoint_dir=ckpt_dir)
    with pytest.raises(ConfigError, match="config hash"):
        reconstruct(dataset, quick_train(steps=4, **change), tiny_networks,
                    resume=os.path.join(ckpt_dir, "ckpt_000002"))


def test_resume_with_other_probe_normalization_is_rejected(toy_dataset, tiny_networks, tmp_path):
    dataset, _, _ = toy_dataset
    ckpt_dir = str(tmp_path / "ckpt")
    reconstruct(dataset, quick_train(steps=2, checkpoint_every=2), tiny_networks, checkpoint_dir=ckpt_dir)
    unnormalized = tiny_networks.model_copy(update={"probe_normalize": False})
    with pytest.raises(ConfigError, match="config hash"):
        reconstruct(dataset, quick_train(steps=4), unnormalized, resume=os.path.join(ckpt_dir, "ckpt_000002"))


def test_resume_ignores_logging_cadence(toy_dataset, tiny_networks, tmp_path):
    dataset, _, _ = toy_dataset
    ckpt_dir = str(tmp_path / "ckpt")
    full = reconstruct(dataset, quick_train(steps=4, checkpoint_every=2), tiny_networks, checkpoint_dir=ckpt_dir)
    resumed = reconstruct(dataset, quick_train(steps=4, log_every=3), tiny_networks,
                          resume=os.path.join(ckpt_dir, "ckpt_000002"))
    np.testing.assert_array_equal(resumed.params.values, full.params.values)


def test_checkpoint_records_the_config_hash(toy_dataset, tiny_networks, tmp_path):
    dataset, _, _ = toy_dataset
    ckpt_dir = str(tmp_path / "ckpt")
    cfg = quick_train(steps=2, checkpoint_every=2)
    reconstruct(dataset, cfg, tiny_networks, checkpoint_dir=ckpt_dir)
    ckpt = checkpoint_load(os.path.join(ckpt_dir, "ckpt_000002"))
    assert ckpt.config_hash == trajectory_hash(cfg, tiny_networks)
    assert ckpt.config_hash == trajectory_hash(quick_train(steps=2, checkpoint_every=5, log_every=7), tiny_networks)


def test_checkpoint_load_rejects_other_containers(tmp_path):
    path = str(tmp_path / "data")
    save_container(path, {"frames": np.zeros((1, 2, 2))}, {"kind": "dataset"})
    with pytest.raises(ContainerError, match="not a checkpoint"):
        checkpoint_load(path)


def test_checkpoint_load_rejects_truncated_history(tmp_path):
    path = str(tmp_path / "bad")
    arrays = {"params": np.zeros(3), "adam_m": np.zeros(3), "adam_v": np.zeros(3), "loss_history": np.zeros(1)}
    save_container(path, arrays, {"kind": "checkpoint", "checkpoint_version": 1, "step": 2, "adam_t": 2,
                                  "segments": []})
    with pytest.raises(ContainerError, match="truncated"):
        checkpoint_load(path)


# --- Long runs ---

def _init_phase_psnr(networks, phantom, seed=0):
    init = build_fields(networks, phantom.object.shape, phantom.probe.shape, seed=seed).object_field()
    return phase_psnr(align_global_phase(init, phantom.object)[1], phantom.object)


def _phase_psnr(result, phantom):
    return phase_psnr(align_global_phase(result.object, phantom.object)[1], phantom.object)


@pytest.mark.slow
def test_known_probe_reaches_the_noise_free_floor(record_performance):
    print("\n[Test] 32x32 known-probe reconstruction, annealed learning rate...")
    phantom = make_phantom("blobs", (32, 32), (16, 16), Rng(0))
    dataset, _ = build_dataset(phantom, (4, 4))
    networks = NetworksConfig(siren=SirenConfig(hidden_layers=2, hidden_width=64))
    train = TrainConfig(steps=6000, lr_object=1e-3, lr_schedule="cosine", lr_final_fraction=1e-3,
                        seed=0, log_every=500, lam=0.0)
    result = reconstruct_known_probe(dataset, phantom.probe, train, networks)
    init_psnr, final_psnr = _init_phase_psnr(networks, phantom), _phase_psnr(result, phantom)
    final_loss = float(result.loss_history[-1])
    print(f"  [Result] final loss {final_loss:.3e}, phase PSNR {init_psnr:.2f} dB -> {final_psnr:.2f} dB")
    record_performance("known_probe_reaches_the_noise_free_floor", {
        "initial_phase_psnr_db": init_psnr,
        "final_phase_psnr_db": final_psnr,
        "final_loss": final_loss,
    })
    assert final_loss < 1e-6
    assert final_psnr > init_psnr + 10.0


@pytest.mark.slow
def test_blobs_learned_probe_and_frozen_truth_probe(record_performance):
    print("\n[Test] 64x64 blobs at 40% overlap: learned probe, then frozen true probe...")
    phantom = make_phantom("blobs", (64, 64), (16, 16), Rng(0))
    dataset, _ = build_dataset(phantom, resolve_step(ScanConfig(overlap_percent=40.0), phantom.probe))
    networks = NetworksConfig(
        siren=SirenConfig(hidden_layers=3, hidden_width=128),
        hashgrid=HashGridConfig(levels=6, table_size_log2=12, base_resolution=4),
    )
    learned_cfg = TrainConfig(steps=2000, lr_object=5e-4, lr_probe=1e-3, lr_schedule="cosine",
                              k=200, seed=0, log_every=250)
    learned = reconstruct(dataset, learned_cfg, networks)
    known_cfg = TrainConfig(steps=5000, lr_object=1e-3, lr_schedule="cosine", lr_final_fraction=1e-3,
                            lam=0.0, seed=0, log_every=500)
    known = reconstruct_known_probe(dataset, phantom.probe, known_cfg, networks)

    init_psnr = _init_phase_psnr(networks, phantom)
    learned_psnr, known_psnr = _phase_psnr(learned, phantom), _phase_psnr(known, phantom)
    known_min = float(known.loss_history.min())
    print(f"  [Result] phase PSNR init {init_psnr:.2f} dB, learned probe {learned_psnr:.2f} dB, "
          f"true probe {known_psnr:.2f} dB (min loss {known_min:.3e})")
    record_performance("blobs_learned_probe_and_frozen_truth_probe", {
        "initial_phase_psnr_db": init_psnr,
        "learned_probe_phase_psnr_db": learned_psnr,
        "true_probe_phase_psnr_db": known_psnr,
        "true_probe_min_loss": known_min,
    })
    assert learned_psnr >= init_psnr + 20.0
    assert known_min < 1e-5
    assert known_psnr > learned_psnr
