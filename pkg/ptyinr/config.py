# ptyinr/config.py
import hashlib
import json
import logging
import os
from typing import Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ptyinr.errors import ConfigError

logger = logging.getLogger(__name__)

LOG_LEVEL = os.getenv("PTYINR_LOG_LEVEL", "INFO")

Shape = Tuple[int, int]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)


# --- Data generation ---

class PhantomConfig(_Section):
    kind: Literal["siemens", "blobs", "checker"] = "blobs"
    object_shape: Shape = (64, 64)
    probe_shape: Shape = (16, 16)
    spokes: int = Field(16, ge=2)
    seed: int = 0

    @model_validator(mode="after")
    def _check_shapes(self):
        if min(self.object_shape) < 16 or min(self.probe_shape) < 16:
            raise ValueError("phantom shapes must be at least 16 pixels per side")
        if any(p > o for p, o in zip(self.probe_shape, self.object_shape)):
            raise ValueError("probe larger than object")
        return self


class ScanConfig(_Section):
    """Either an explicit raster step or a target nominal overlap in percent."""
    step_pixels: Optional[Shape] = None
    overlap_percent: Optional[float] = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.step_pixels is None) == (self.overlap_percent is None):
            raise ValueError("set exactly one of step_pixels and overlap_percent")
        if self.step_pixels is not None and min(self.step_pixels) < 1:
            raise ValueError("step_pixels must be >= 1")
        if self.overlap_percent is not None and self.overlap_percent >= 100:
            raise ValueError("overlap_percent must be below 100")
        return self


class NoiseSpec(_Section):
    kind: Literal["none", "poisson", "gaussian", "mixed"] = "none"
    alpha: float = 10.0
    sigma: float = Field(0.0, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _alpha_positive(self):
        if self.kind in ("poisson", "mixed") and not self.alpha > 0:
            raise ValueError("alpha must be positive for poisson and mixed noise")
        return self


class PhysicalConfig(_Section):
    """Informational beamline metadata. Never enters the math."""
    energy_kev: float = 15.0
    detector_distance_m: float = 1.2
    step_nm: Optional[float] = None


# --- Networks ---

class SirenConfig(_Section):
    in_dim: Literal[2] = 2
    hidden_layers: int = Field(3, ge=1)
    hidden_width: int = Field(512, ge=1)
    omega_first: float = Field(30.0, gt=0)
    omega_hidden: float = Field(30.0, gt=0)
    out_dim: Literal[1] = 1


class HashGridConfig(_Section):
    levels: int = Field(16, ge=1)
    features_per_entry: int = Field(2, ge=1)
    table_size_log2: int = Field(15, ge=1, le=24)
    base_resolution: int = Field(16, ge=1)
    growth_factor: float = Field(1.5, gt=1)
    mlp_hidden_layers: int = Field(2, ge=0)
    mlp_hidden_width: int = Field(64, ge=1)


class NetworksConfig(_Section):
    object_backbone: Literal["siren", "hashgrid"] = "siren"
    siren: SirenConfig = SirenConfig()
    hashgrid: HashGridConfig = HashGridConfig()
    probe_normalize: bool = True  # divide the probe amplitude by its max


# --- Optimization ---

class LossConfig(_Section):
    kind: Literal["smooth_l1", "l1", "l2"] = "smooth_l1"
    beta: float = Field(1e-2, gt=0)
    lam: float = Field(0.1, ge=0, alias="lambda")
    k: int = Field(0, ge=0)


class TrainConfig(_Section):
    steps: int = Field(500, ge=0)
    lr_object: float = Field(1e-4, gt=0, lt=1)
    lr_probe: float = Field(1e-4, gt=0, lt=1)
    lr_schedule: Literal["constant", "cosine"] = "constant"
    lr_final_fraction: float = Field(1e-2, gt=0, le=1)
    batch: int = Field(0, ge=0)
    seed: int = 0
    omega_first: Optional[float] = Field(None, gt=0)
    beta: float = Field(1e-2, gt=0)
    lam: float = Field(0.1, ge=0, alias="lambda")
    k: Optional[int] = Field(None, ge=0)
    loss_kind: Literal["smooth_l1", "l1", "l2"] = "smooth_l1"
    probe_mode: Literal["learn", "fixed"] = "learn"
    checkpoint_every: int = Field(0, ge=0)
    log_every: int = Field(50, ge=1)
    precision: Literal["float64", "float32"] = "float64"

    @property
    def loss(self) -> LossConfig:
        k = self.k if self.k is not None else self.steps // 10
        return LossConfig(kind=self.loss_kind, beta=self.beta, lam=self.lam, k=k)


class EpieConfig(_Section):
    iterations: int = Field(100, ge=1)
    alpha_obj: float = Field(1.0, gt=0, le=2)
    alpha_probe: float = Field(1.0, gt=0, le=2)
    probe_mode: Literal["learn", "fixed"] = "learn"
    seed: int = 0


class EvaluateConfig(_Section):
    crop: Optional[Shape] = None
    align_samples: int = Field(4096, ge=16)


class PipelineConfig(_Section):
    phantom: PhantomConfig = PhantomConfig()
    scan: ScanConfig = ScanConfig(overlap_percent=40.0)
    noise: NoiseSpec = NoiseSpec()
    physical: PhysicalConfig = PhysicalConfig()
    train: TrainConfig = TrainConfig()
    networks: NetworksConfig = NetworksConfig()
    epie: EpieConfig = EpieConfig()
    evaluate: EvaluateConfig = EvaluateConfig()


# --- Loading ---

def parse_config(data: dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}") from e


def load_config(path: str) -> PipelineConfig:
    """Load a JSON or YAML config file into a validated PipelineConfig."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"could not parse {path}: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    cfg = parse_config(data)
    logger.info(f"Loaded config {path} (hash {config_hash(cfg)})")
    return cfg


def config_dump(cfg: BaseModel) -> dict:
    return cfg.model_dump(mode="json", by_alias=True)


def config_hash(*cfgs: BaseModel) -> str:
    """First 16 hex digits of SHA-256 over the canonical JSON of the given sections."""
    dumps = [config_dump(c) for c in cfgs]
    payload = dumps[0] if len(dumps) == 1 else dumps
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
