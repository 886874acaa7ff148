import numpy as np
from PIL import Image

from ptyinr.imaging import amplitude_image, phase_image, save_field_images


def test_amplitude_is_scaled_to_the_maximum():
    field = np.array([[0.0, 0.5j], [-1.0, 2.0]])
    image = amplitude_image(field)
    assert image.dtype == np.uint8
    np.testing.assert_array_equal(image, [[0, 64], [128, 255]])
    np.testing.assert_array_equal(amplitude_image(np.zeros((3, 3))), 0)


def test_phase_uses_a_fixed_range():
    field = np.exp(1j * np.array([[-np.pi + 1e-12, 0.0, np.pi]]))
    image = phase_image(field)
    assert image.shape == (1, 3, 3) and image.dtype == np.uint8
    np.testing.assert_array_equal(image[0, 0], phase_image(np.exp(1j * np.array([[-np.pi + 1e-9]])))[0, 0])
    # the colormap runs dark to bright
    assert int(image[0, 0].sum()) < int(image[0, 1].sum()) < int(image[0, 2].sum())


def test_images_are_written(tmp_path):
    field = np.random.default_rng(0).normal(size=(12, 20)) * np.exp(1j * np.linspace(-3, 3, 240).reshape(12, 20))
    paths = save_field_images(field, str(tmp_path), "object")
    with Image.open(paths["amplitude"]) as img:
        assert img.size == (20, 12) and img.mode == "L"
    with Image.open(paths["phase"]) as img:
        assert img.size == (20, 12) and img.mode == "RGB"
