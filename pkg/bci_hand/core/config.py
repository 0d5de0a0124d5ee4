# Application configuration
# bci_hand/core/config.py
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from bci_hand.core.errors import ConfigError
from bci_hand.models.schemas import SynthConfig

load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="BCI_HAND_", env_file=".env", extra="ignore")

    APP_NAME: str = "bci-hand"
    LOG_LEVEL: str = "INFO"
    # Written inside the run's output directory
    LOG_FILE: str = "pipeline.log"
    DEFAULT_CONFIG: Optional[str] = None
    DEFAULT_SEED: int = 20100813


settings = Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SignalConfig(_Section):
    fs: float = Field(default=200.0, gt=0)
    broadband_hz: Tuple[float, float] = (0.5, 95.0)
    notch_hz: float = 50.0
    notch_quality: float = Field(default=35.0, gt=0)
    mu_beta_hz: Tuple[float, float] = (8.0, 30.0)
    filter_order: int = Field(default=4, ge=1)
    amp_limit_uv: float = Field(default=100.0, gt=0)
    var_ratio_limit: float = Field(default=25.0, gt=0)


class IcaConfig(_Section):
    retain: float = Field(default=0.999, gt=0, le=1)
    n_components: Optional[int] = Field(default=None, ge=1)
    # None resolves to 0.01 / ln(k)
    lr0: Optional[float] = Field(default=None, gt=0)
    anneal: float = Field(default=0.9, gt=0, lt=1)
    anneal_deg: float = Field(default=60.0, gt=0)
    max_iter: int = Field(default=512, ge=1)
    tol: float = Field(default=1e-3, gt=0)
    block_size: Optional[int] = Field(default=None, ge=1)
    max_restarts: int = Field(default=5, ge=0)
    min_lr: float = Field(default=1e-10, gt=0)


class ErdersConfig(_Section):
    band_hz: Tuple[float, float] = (8.0, 30.0)
    smooth_ms: float = Field(default=200.0, gt=0)
    reference_window_s: Tuple[float, float] = (-1.0, 0.0)
    movement_window_s: Tuple[float, float] = (1.0, 4.0)
    post_window_s: Tuple[float, float] = (4.0, 5.5)
    score_threshold: float = 20.0
    k_min: int = Field(default=8, ge=1)
    k_max: int = Field(default=12, ge=1)
    # Components above this excess kurtosis are treated as artifacts; None keeps all
    artifact_kurtosis: Optional[float] = Field(default=20.0, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.k_min > self.k_max:
            raise ValueError("k_min must not exceed k_max")
        (m0, m1), (p0, p1) = self.movement_window_s, self.post_window_s
        if m0 < p1 and p0 < m1:
            raise ValueError("movement and post windows must be disjoint")
        return self


class FeatureConfig(_Section):
    t_start_s: float = 1.0
    t_end_s: float = 4.0
    window_ms: float = Field(default=300.0, gt=0)
    step_ms: float = Field(default=100.0, gt=0)
    band_lo_hz: float = 8.0
    band_width_hz: float = Field(default=3.0, gt=0)
    n_bands: int = Field(default=7, ge=1)
    nfft: int = Field(default=256, ge=1)
    k: int = Field(default=18, ge=1)
    log_power: bool = False
    nested_selection: bool = False


class MlpConfig(_Section):
    hidden: int = Field(default=24, ge=1)
    lr: float = Field(default=0.05, gt=0)
    epochs: int = Field(default=2000, ge=1)
    patience: int = Field(default=50, ge=1)
    min_delta: float = Field(default=1e-7, ge=0)
    train_ratio: float = Field(default=0.7, gt=0, lt=1)
    # When set, hidden is picked per cell from these sizes before training
    hidden_candidates: Optional[List[int]] = None
    sweep_seeds: int = Field(default=5, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.hidden_candidates is not None and (not self.hidden_candidates or min(self.hidden_candidates) < 1):
            raise ValueError("hidden_candidates must be a non-empty list of positive sizes")
        return self


class ClassifyConfig(_Section):
    shrinkage: float = Field(default=0.1, ge=0, le=1)
    md_outlier_filter: bool = False
    mlp: MlpConfig = Field(default_factory=MlpConfig)


class PipelineConfig(_Section):
    dataset_dir: str = "data/dataset"
    output_dir: str = "output"
    seed: int = settings.DEFAULT_SEED
    signal: SignalConfig = Field(default_factory=SignalConfig)
    ica: IcaConfig = Field(default_factory=IcaConfig)
    erders: ErdersConfig = Field(default_factory=ErdersConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    classify: ClassifyConfig = Field(default_factory=ClassifyConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)


# Keys that only locate data on disk
PATH_KEYS = ("dataset_dir", "output_dir")


def _deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _validation_to_config_error(exc: ValidationError) -> ConfigError:
    first = exc.errors()[0]
    key_path = ".".join(str(part) for part in first["loc"])
    return ConfigError(first["msg"], key_path=key_path or None)


def build_config(raw: Optional[Dict[str, Any]] = None,
                 overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Validate a raw config dict with flag overrides applied on top"""
    data = _deep_merge(raw or {}, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise _validation_to_config_error(e) from e


def load_config(path: Optional[str] = None,
                overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Load a JSON config file; precedence is flag > file > default"""
    path = path or settings.DEFAULT_CONFIG
    raw: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} not found")
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"config root in {path} must be an object")
    return build_config(raw, overrides)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(config: PipelineConfig) -> str:
    payload = config.model_dump(mode="json", exclude=set(PATH_KEYS))
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def derive_seed(seed: int, stage: str, *keys: Any) -> int:
    """Per-stage seed: first 32 bits of sha256("seed:stage:key1:...")"""
    text = ":".join([str(seed), stage, *(str(k) for k in keys)])
    return int(hashlib.sha256(text.encode("utf-8")).hexdigest()[:8], 16)


def save_config(config: PipelineConfig, path: str):
    """Write the fully materialized config, defaults included"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True),
                          encoding="utf-8")
