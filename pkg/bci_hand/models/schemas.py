# Pydantic schemas
# bci_hand/models/schemas.py
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from bci_hand.core.errors import InvalidFilterSpec


# Labels
class MovementLabel(str, Enum):
    WE = "WE"
    WF = "WF"
    FE = "FE"
    FF = "FF"
    TR = "TR"


class ClassLabel(str, Enum):
    WRIST = "Wrist"
    FINGER = "Finger"


class Hand(str, Enum):
    LEFT = "Left"
    RIGHT = "Right"

    @property
    def short(self) -> str:
        return "LH" if self is Hand.LEFT else "RH"


class Condition(str, Enum):
    REAL = "Real"
    IMAGINED = "Imagined"


class FilterKind(str, Enum):
    BANDPASS = "Bandpass"
    NOTCH = "Notch"


class SourceKind(str, Enum):
    MOTOR_MU = "MotorMu"
    MOTOR_BETA = "MotorBeta"
    NOISE = "Noise"
    ARTIFACT = "Artifact"


class Method(str, Enum):
    MD = "MD"
    ANN = "ANN"


class RejectionReason(str, Enum):
    AMPLITUDE_SPIKE = "AmplitudeSpike"
    VARIANCE_RATIO = "VarianceRatio"


WRIST_MOVEMENTS = frozenset({MovementLabel.WE, MovementLabel.WF})


# Trial metadata
class TrialMeta(BaseModel):
    model_config = ConfigDict(frozen=True)

    subject: str
    hand: Hand
    condition: Condition
    movement: MovementLabel
    trial_index: int = Field(ge=0)

    @property
    def key(self) -> Tuple[str, Hand, Condition, MovementLabel, int]:
        return (self.subject, self.hand, self.condition, self.movement, self.trial_index)

    @property
    def stem(self) -> str:
        return (f"{self.subject}_{self.hand.short}_{self.condition.value}_"
                f"{self.movement.value}_{self.trial_index:03d}")


# Filters
class FilterSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: FilterKind
    fs: float = Field(gt=0)
    band: Optional[Tuple[float, float]] = None
    center_hz: Optional[float] = None
    order: int = Field(default=4, ge=1)
    quality: float = Field(default=35.0, gt=0)

    @model_validator(mode="after")
    def _check_edges(self):
        nyquist = self.fs / 2.0
        if self.kind is FilterKind.BANDPASS:
            if self.band is None:
                raise InvalidFilterSpec("bandpass filter needs a band")
            lo, hi = self.band
            if not 0 < lo < hi:
                raise InvalidFilterSpec(f"band edges must satisfy 0 < lo < hi, got {self.band}")
            if hi >= nyquist:
                raise InvalidFilterSpec(f"upper edge {hi} Hz is not below Nyquist ({nyquist} Hz)")
        else:
            if self.center_hz is None:
                raise InvalidFilterSpec("notch filter needs center_hz")
            if not 0 < self.center_hz < nyquist:
                raise InvalidFilterSpec(f"notch center {self.center_hz} Hz outside (0, {nyquist}) Hz")
        return self

    @classmethod
    def bandpass(cls, lo: float, hi: float, fs: float, order: int = 4) -> "FilterSpec":
        return cls(kind=FilterKind.BANDPASS, band=(lo, hi), fs=fs, order=order)

    @classmethod
    def notch(cls, center_hz: float, fs: float, quality: float = 35.0) -> "FilterSpec":
        return cls(kind=FilterKind.NOTCH, center_hz=center_hz, fs=fs, order=2, quality=quality)


class Rejection(BaseModel):
    meta: TrialMeta
    reason: RejectionReason
    channel: int
    value: float


# Synthetic data generator
class MotorSourceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    center_hz: float = Field(gt=0)
    erd_depth_by_class: Dict[ClassLabel, float]
    erd_window_s: Tuple[float, float] = (1.0, 4.0)
    ers_rebound: float = Field(default=0.3, ge=0)
    ers_duration_s: float = Field(default=1.0, ge=0)
    ramp_s: float = Field(default=0.2, gt=0)
    amp_uv: float = Field(default=5.0, gt=0)
    # Log-normal bursts of the idling rhythm, paused through the movement window;
    # 0 keeps a constant amplitude
    burst_sigma: float = Field(default=0.6, ge=0)

    @field_validator("erd_depth_by_class")
    @classmethod
    def _depth_range(cls, value: Dict[ClassLabel, float]) -> Dict[ClassLabel, float]:
        for label in ClassLabel:
            if label not in value:
                raise ValueError(f"missing ERD depth for class {label.value}")
            if not 0.0 <= value[label] < 1.0:
                raise ValueError(f"ERD depth for {label.value} must lie in [0, 1)")
        return value

    @property
    def kind(self) -> SourceKind:
        return SourceKind.MOTOR_MU if self.center_hz < 13.0 else SourceKind.MOTOR_BETA


class NoiseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pink_exponent: float = Field(default=1.0, ge=0)
    snr_db: float = 10.0
    amp_uv: float = Field(default=3.0, gt=0)
    burst_sigma: float = Field(default=0.4, ge=0)
    burst_time_s: float = Field(default=0.5, gt=0)


class ArtifactConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_sources: int = Field(default=2, ge=0)
    spike_rate: float = Field(default=0.1, ge=0)
    spike_amp_uv: float = Field(default=20.0, ge=0)
    spike_width_ms: float = Field(default=20.0, gt=0)


def _default_motor_sources() -> List[MotorSourceConfig]:
    return [
        MotorSourceConfig(center_hz=10.0,
                          erd_depth_by_class={ClassLabel.WRIST: 0.6, ClassLabel.FINGER: 0.1}),
        MotorSourceConfig(center_hz=20.0,
                          erd_depth_by_class={ClassLabel.WRIST: 0.35, ClassLabel.FINGER: 0.25},
                          amp_uv=4.0),
    ]


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_channels: int = Field(default=16, ge=1)
    fs: float = Field(default=200.0, gt=0)
    n_sources: int = Field(default=10, ge=1)
    motor_sources: List[MotorSourceConfig] = Field(default_factory=_default_motor_sources)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    artifacts: ArtifactConfig = Field(default_factory=ArtifactConfig)
    trials_per_movement: int = Field(default=20, ge=1)
    n_subjects: int = Field(default=1, ge=1)
    hands: List[Hand] = Field(default_factory=lambda: [Hand.RIGHT, Hand.LEFT])
    conditions: List[Condition] = Field(default_factory=lambda: [Condition.REAL, Condition.IMAGINED])
    corrupt_trials: List[int] = Field(default_factory=list)
    corruption_amp_uv: float = 1000.0
    max_condition: float = Field(default=20.0, gt=1)
    seed: Optional[int] = None

    @property
    def n_noise_sources(self) -> int:
        return self.n_sources - len(self.motor_sources) - self.artifacts.n_sources


# Component scoring and feature selection
class ComponentScore(BaseModel):
    component: int
    erd_depth_pct: float
    ers_height_pct: float
    score: float


class SelectionResult(BaseModel):
    selected_columns: List[int]
    bd_scores: List[float]


# Classification
class ConfusionCounts(BaseModel):
    t_w: int = Field(default=0, ge=0)
    f_w: int = Field(default=0, ge=0)
    t_f: int = Field(default=0, ge=0)
    f_f: int = Field(default=0, ge=0)

    @property
    def n_wrist(self) -> int:
        return self.t_w + self.f_w

    @property
    def n_finger(self) -> int:
        return self.t_f + self.f_f


class ClassifierReport(BaseModel):
    method: Method
    subject: str
    hand: Hand
    condition: Condition
    confusion: ConfusionCounts
    ssa: float = Field(ge=0.0, le=1.0)
    protocol: str
    n_trials: int
    selected_columns: List[int] = Field(default_factory=list)
    config_hash: str
    seed: int
    notes: List[str] = Field(default_factory=list)


# On-disk dataset
class TrialRecord(BaseModel):
    subject: str
    hand: Hand
    condition: Condition
    movement: MovementLabel
    trial_index: int
    file: str
    t0_offset_s: float = 1.0
    n_samples: int

    def to_meta(self) -> TrialMeta:
        return TrialMeta(subject=self.subject, hand=self.hand, condition=self.condition,
                         movement=self.movement, trial_index=self.trial_index)


class DatasetIndex(BaseModel):
    fs: float
    channel_names: List[str]
    subjects: List[str]
    trials: List[TrialRecord]


# Stage bookkeeping
class StageManifest(BaseModel):
    stage: str
    config_hash: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    versions: Dict[str, str] = Field(default_factory=dict)
    created_at: str
