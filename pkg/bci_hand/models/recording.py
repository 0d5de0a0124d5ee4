# Array-carrying domain types
# bci_hand/models/recording.py
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from bci_hand.models.schemas import ClassLabel, SourceKind, TrialMeta

EPOCH_DURATION_S = 7.0
T0_OFFSET_S = 1.0


@dataclass
class ContinuousRecording:
    fs: float
    data: np.ndarray  # channels x samples, microvolts
    events: List[Tuple[int, str]] = field(default_factory=list)
    channel_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError("recording data must be channels x samples")
        indices = [e[0] for e in self.events]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("event sample indices must be strictly increasing")
        if indices and (indices[0] < 0 or indices[-1] >= self.n_samples):
            raise ValueError("event sample index outside the recording")
        if not self.channel_names:
            self.channel_names = [f"E{i + 1}" for i in range(self.n_channels)]

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class TrialEpoch:
    meta: TrialMeta
    fs: float
    data: np.ndarray  # channels x samples, microvolts
    t0_offset_s: float = T0_OFFSET_S

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def times_s(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.fs - self.t0_offset_s


@dataclass
class WhiteningTransform:
    mean: np.ndarray          # (channels,)
    matrix: np.ndarray        # k x channels
    eigenvalues: np.ndarray   # descending, all channels

    @property
    def retained_dims(self) -> int:
        return self.matrix.shape[0]


@dataclass
class UnmixingResult:
    whitening: WhiteningTransform
    W: np.ndarray             # k x k
    mixing: np.ndarray        # channels x k
    iteration_log: List[Tuple[int, float, float]]
    seed: int
    n_restarts: int = 0
    converged: bool = False

    @property
    def filters(self) -> np.ndarray:
        """Component spatial filters, one row per component"""
        return self.W @ self.whitening.matrix

    @property
    def n_components(self) -> int:
        return self.W.shape[0]


@dataclass
class ErdCurve:
    component: int
    band: Tuple[float, float]
    times_s: np.ndarray
    values_pct: np.ndarray
    reference_window_s: Tuple[float, float]


@dataclass
class FeatureMatrix:
    values: np.ndarray                     # trials x features
    columns: List[Tuple[int, int, int]]    # (component, window_index, band_index)
    labels: List[ClassLabel]
    meta: List[TrialMeta]

    def __post_init__(self):
        if self.values.shape != (len(self.labels), len(self.columns)):
            raise ValueError("feature matrix shape does not match labels/columns")

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def label_mask(self, label: ClassLabel) -> np.ndarray:
        return np.array([lab is label for lab in self.labels], dtype=bool)

    def take_columns(self, columns: List[int]) -> "FeatureMatrix":
        return FeatureMatrix(values=self.values[:, columns],
                             columns=[self.columns[c] for c in columns],
                             labels=list(self.labels), meta=list(self.meta))

    def take_rows(self, rows) -> "FeatureMatrix":
        rows = list(rows)
        return FeatureMatrix(values=self.values[rows],
                             columns=list(self.columns),
                             labels=[self.labels[r] for r in rows],
                             meta=[self.meta[r] for r in rows])

    def with_labels(self, labels: List[ClassLabel]) -> "FeatureMatrix":
        return FeatureMatrix(values=self.values, columns=list(self.columns),
                             labels=list(labels), meta=list(self.meta))


@dataclass
class ClassStats:
    mean: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray
    n: int


@dataclass
class MlpModel:
    w1: np.ndarray  # inputs x hidden
    b1: np.ndarray  # hidden
    w2: np.ndarray  # hidden x 1
    b2: np.ndarray  # 1
    seed: int
    training_log: List[float] = field(default_factory=list)
    feature_mean: Optional[np.ndarray] = None
    feature_scale: Optional[np.ndarray] = None

    @property
    def n_parameters(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size


@dataclass
class SynthRun:
    """One continuous (subject, hand, condition) recording and its trials"""
    recording: ContinuousRecording
    metas: List[TrialMeta]
    get_ready: List[int]


@dataclass
class GroundTruth:
    mixing: np.ndarray                    # channels x sources
    source_kinds: List[SourceKind]
    # One entry per run, in run order
    sources: List[np.ndarray]             # n_sources x samples, noiseless
    envelopes: List[np.ndarray]           # n_sources x samples, amplitude
    labels: List[TrialMeta]
    envelope_parameters: Dict[str, object] = field(default_factory=dict)
