# ptyinr/imaging.py
"""8-bit PNG snapshots: amplitude in grayscale over [0, max], phase in a warm colormap over [-pi, pi]."""
import logging
import os
from functools import lru_cache
from typing import Dict

import numpy as np
from PIL import Image
from plotly import colors

logger = logging.getLogger(__name__)


@lru_cache(maxsize=1)
def _warm_lut() -> np.ndarray:
    samples = colors.sample_colorscale(colors.sequential.Hot, np.linspace(0.0, 1.0, 256).tolist())
    return np.array([colors.unlabel_rgb(c) for c in samples]).round().clip(0, 255).astype(np.uint8)


def amplitude_image(field) -> np.ndarray:
    amplitude = np.abs(np.asarray(field))
    peak = amplitude.max()
    scaled = amplitude / peak if peak > 0 else np.zeros_like(amplitude)
    return np.rint(scaled * 255.0).astype(np.uint8)


def phase_image(field) -> np.ndarray:
    phase = np.angle(np.asarray(field))
    index = np.rint((phase + np.pi) / (2.0 * np.pi) * 255.0).clip(0, 255).astype(np.uint8)
    return _warm_lut()[index]


def save_field_images(field, out_dir: str, prefix: str) -> Dict[str, str]:
    """Write <prefix>_amplitude.png and <prefix>_phase.png; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "amplitude": os.path.join(out_dir, f"{prefix}_amplitude.png"),
        "phase": os.path.join(out_dir, f"{prefix}_phase.png"),
    }
    Image.fromarray(amplitude_image(field)).save(paths["amplitude"])
    Image.fromarray(phase_image(field)).save(paths["phase"])
    logger.info(f"Saved {prefix} images to {out_dir}")
    return paths
