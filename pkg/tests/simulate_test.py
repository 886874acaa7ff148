import numpy as np
import pytest
from scipy import ndimage, stats

from ptyinr.config import NoiseSpec, ScanConfig
from ptyinr.errors import ConfigError, ShapeMismatchError
from ptyinr.physics import probe_fwhm_diameter
from ptyinr.rng import Rng
from ptyinr.simulate import (
    add_gaussian,
    add_mixed,
    add_poisson,
    apply_noise,
    build_dataset,
    focused_probe,
    make_phantom,
    resolve_step,
    split_dataset,
)


# --- Phantoms ---

@pytest.mark.parametrize("kind", ["siemens", "blobs", "checker"])
def test_phantom_bounds(kind):
    phantom = make_phantom(kind, (32, 32), (16, 16), Rng(0))
    assert np.abs(phantom.object).max() <= 1.0 + 1e-12
    assert np.abs(phantom.probe).max() == pytest.approx(1.0, abs=1e-15)
    assert phantom.object.shape == (32, 32) and phantom.probe.shape == (16, 16)


def test_siemens_ranges():
    obj = make_phantom("siemens", (64, 64), (16, 16), Rng(0)).object
    assert np.abs(obj).min() >= 0.4 - 1e-12
    phase = np.angle(obj)
    assert phase.min() >= -1e-12 and phase.max() <= 1.0 + 1e-12


@pytest.mark.parametrize("spokes", [4, 16])
def test_siemens_is_invariant_under_quarter_turns(spokes):
    obj = make_phantom("siemens", (64, 64), (16, 16), Rng(0), spokes=spokes).object
    np.testing.assert_allclose(np.rot90(obj), obj, atol=1e-9)


@pytest.mark.parametrize("spokes", [4, 6, 8])
def test_siemens_repeats_after_one_spoke_period(spokes):
    print(f"\n[Test] Siemens star with {spokes} spokes rotated by one period...")
    n = 128
    obj = make_phantom("siemens", (n, n), (16, 16), Rng(0), spokes=spokes).object
    phase = np.angle(obj)
    y, x = np.indices((n, n)) - (n - 1) / 2.0
    ring = (np.hypot(y, x) > 16) & (np.hypot(y, x) < 56)

    def rotated_error(angle_deg):
        turned = ndimage.rotate(phase, angle_deg, reshape=False, order=3, mode="nearest")
        return float(np.abs(turned - phase)[ring].mean())

    period = rotated_error(360.0 / spokes)
    half_period = rotated_error(180.0 / spokes)
    print(f"  [Result] mean |diff| {period:.4f} (full period) vs {half_period:.4f} (half period)")
    assert period < 0.03
    assert period < 0.1 * half_period


def test_blobs_are_smooth():
    obj = make_phantom("blobs", (64, 64), (16, 16), Rng(3)).object
    amplitude, phase = np.abs(obj), np.angle(obj)
    for field in (amplitude, phase):
        steepest = max(np.abs(np.diff(field, axis=0)).max(), np.abs(np.diff(field, axis=1)).max())
        assert steepest < 0.5


def test_blobs_depend_on_the_seed():
    a = make_phantom("blobs", (32, 32), (16, 16), Rng(1)).object
    b = make_phantom("blobs", (32, 32), (16, 16), Rng(1)).object
    c = make_phantom("blobs", (32, 32), (16, 16), Rng(2)).object
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_focused_probe_is_smaller_than_half_window():
    probe = focused_probe((32, 32))
    fwhm = probe_fwhm_diameter(probe)
    assert 2.0 < fwhm < 16.0
    assert np.abs(probe).max() == pytest.approx(1.0, abs=1e-15)


def test_bad_phantom_requests():
    with pytest.raises(ConfigError, match="unknown phantom kind"):
        make_phantom("spiral", (32, 32), (16, 16), Rng(0))
    with pytest.raises(ShapeMismatchError):
        make_phantom("blobs", (8, 8), (16, 16), Rng(0))


# --- Noise ---

def test_poisson_moments_on_a_constant_frame():
    print("\n[Test] Poisson noise moments over 10^4 pixels...")
    c, alpha = 5.0, 100.0
    frames = np.full((1, 100, 100), c)
    noisy = add_poisson(frames, alpha, Rng(11))
    n = noisy.size
    expected_std = c / np.sqrt(alpha)
    print(f"  [Result] mean {noisy.mean():.4f}, std {noisy.std():.4f} (expected {c}, {expected_std:.4f})")
    assert abs(noisy.mean() - c) < 4 * expected_std / np.sqrt(n)
    assert abs(noisy.std() - expected_std) < 0.05 * expected_std


def test_poisson_keeps_zero_pixels_and_zero_sets():
    frames = np.zeros((2, 4, 4))
    frames[0, 1, 1] = 10.0
    noisy = add_poisson(frames, 10.0, Rng(0))
    assert np.count_nonzero(noisy[frames == 0]) == 0
    np.testing.assert_array_equal(add_poisson(np.zeros((2, 4, 4)), 10.0, Rng(0)), 0.0)


def test_poisson_uses_the_global_maximum():
    frames = np.stack([np.full((8, 8), 100.0), np.full((8, 8), 1.0)])
    noisy = add_poisson(frames, 1000.0, Rng(5))
    # quantum is max(I) / alpha for every frame
    quantum = 100.0 / 1000.0
    np.testing.assert_allclose(noisy / quantum, np.round(noisy / quantum), atol=1e-9)


def test_gaussian_sigma_zero_is_identity():
    frames = np.random.default_rng(0).uniform(size=(3, 4, 4))
    np.testing.assert_array_equal(add_gaussian(frames, 0.0, Rng(0)), frames)


def test_clipped_gaussian_mean():
    print("\n[Test] Mean of clipped unit Gaussian noise on a zero frame...")
    noisy = add_gaussian(np.zeros((1, 400, 250)), 1.0, Rng(2))
    expected = 1.0 / np.sqrt(2 * np.pi)
    se = np.sqrt(0.5 - expected ** 2) / np.sqrt(noisy.size)
    print(f"  [Result] mean {noisy.mean():.5f}, expected {expected:.5f}")
    assert abs(noisy.mean() - expected) < 4 * se
    assert noisy.min() >= 0.0


def test_large_sigma_setting_stays_nonnegative():
    frames = np.random.default_rng(1).uniform(0, 1000, size=(4, 8, 8))
    out = add_mixed(frames, 10.0, 100.0, Rng(0))
    assert out.min() >= 0.0


def test_mixed_without_gaussian_is_poisson():
    frames = np.random.default_rng(1).uniform(0, 50, size=(3, 8, 8))
    np.testing.assert_array_equal(add_mixed(frames, 10.0, 0.0, Rng(4)), add_poisson(frames, 10.0, Rng(4)))


def test_mixed_approaches_gaussian_at_high_photon_counts():
    frames = np.full((1, 300, 300), 50.0)
    mixed = add_mixed(frames, 1e6, 1.0, Rng(6)).ravel()
    gaussian = add_gaussian(frames, 1.0, Rng(7)).ravel()
    assert stats.ks_2samp(mixed, gaussian).statistic < 0.02


def test_noise_is_deterministic():
    frames = np.random.default_rng(2).uniform(0, 20, size=(4, 8, 8))
    spec = NoiseSpec(kind="mixed", alpha=10.0, sigma=2.0, seed=9)
    np.testing.assert_array_equal(apply_noise(frames, spec), apply_noise(frames, spec))
    other = NoiseSpec(kind="mixed", alpha=10.0, sigma=2.0, seed=10)
    assert not np.array_equal(apply_noise(frames, spec), apply_noise(frames, other))


def test_noise_never_touches_the_input():
    frames = np.random.default_rng(2).uniform(0, 20, size=(2, 8, 8))
    before = frames.copy()
    apply_noise(frames, NoiseSpec(kind="gaussian", sigma=3.0))
    np.testing.assert_array_equal(frames, before)


# --- Datasets ---

def test_noise_free_dataset_and_metadata():
    phantom = make_phantom("checker", (32, 32), (16, 16), Rng(0))
    dataset, truth = build_dataset(phantom, (8, 8))
    assert truth is phantom
    assert len(dataset) == 9
    assert dataset.noise["kind"] == "none"
    assert dataset.metadata["probe_fwhm_px"] == pytest.approx(probe_fwhm_diameter(phantom.probe))
    assert dataset.metadata["window_overlap_fraction"] == 0.5


def test_full_scale_geometry_at_forty_percent_overlap():
    print("\n[Test] 181x181 object, 64x64 probe at 40% nominal overlap...")
    phantom = make_phantom("blobs", (181, 181), (64, 64), Rng(0))
    step = resolve_step(ScanConfig(overlap_percent=40.0), phantom.probe)
    dataset, _ = build_dataset(phantom, step)
    print(f"  [Result] step {step}, {len(dataset)} positions, "
          f"nominal overlap {dataset.metadata['nominal_overlap_percent']:.1f}%")
    assert abs(dataset.metadata["nominal_overlap_percent"] - 40.0) < 5.0
    assert dataset.frames.min() >= 0.0


def test_seeded_datasets_are_bit_identical():
    phantom = make_phantom("blobs", (32, 32), (16, 16), Rng(4))
    spec = NoiseSpec(kind="poisson", alpha=10.0, seed=3)
    a, _ = build_dataset(phantom, (4, 4), spec)
    b, _ = build_dataset(make_phantom("blobs", (32, 32), (16, 16), Rng(4)), (4, 4), spec)
    np.testing.assert_array_equal(a.frames, b.frames)


def test_explicit_step_wins():
    assert resolve_step(ScanConfig(step_pixels=(3, 5)), focused_probe((16, 16))) == (3, 5)


def test_even_odd_split(toy_dataset):
    dataset, _, _ = toy_dataset
    even, odd = split_dataset(dataset, "even"), split_dataset(dataset, "odd")
    assert len(even) == 5 and len(odd) == 4
    np.testing.assert_array_equal(even.frames, dataset.frames[0::2])
    np.testing.assert_array_equal(odd.grid.positions, dataset.grid.positions[1::2])
    assert odd.metadata["split"] == "odd"
    with pytest.raises(ConfigError):
        split_dataset(dataset, "third")
