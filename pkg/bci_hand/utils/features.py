# Sliding-window band-power features and Bhattacharyya ranking
# bci_hand/utils/features.py
import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.signal import get_window

from bci_hand.core.errors import InsufficientTrials, MissingClass, WindowOutOfBounds
from bci_hand.models.recording import T0_OFFSET_S, FeatureMatrix
from bci_hand.models.schemas import ClassLabel, SelectionResult, TrialMeta
from bci_hand.utils.epoching import class_of

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-30


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _default_bands() -> List[Tuple[float, float]]:
    return [(8.0 + 3.0 * i, 11.0 + 3.0 * i) for i in range(7)]


@dataclass(frozen=True)
class FeatureGrid:
    t_start_s: float = 1.0
    t_end_s: float = 4.0
    window_ms: float = 300.0
    step_ms: float = 100.0
    bands: Tuple[Tuple[float, float], ...] = field(default_factory=lambda: tuple(_default_bands()))
    nfft: int = 256

    @classmethod
    def from_config(cls, cfg) -> "FeatureGrid":
        bands = tuple((cfg.band_lo_hz + cfg.band_width_hz * i, cfg.band_lo_hz + cfg.band_width_hz * (i + 1))
                      for i in range(cfg.n_bands))
        return cls(t_start_s=cfg.t_start_s, t_end_s=cfg.t_end_s, window_ms=cfg.window_ms,
                   step_ms=cfg.step_ms, bands=bands, nfft=cfg.nfft)

    @property
    def n_windows(self) -> int:
        span_ms = _round_half_up((self.t_end_s - self.t_start_s) * 1000.0)
        return int((span_ms - self.window_ms) // self.step_ms) + 1

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def features_per_component(self) -> int:
        return self.n_windows * self.n_bands


def sliding_windows(grid: FeatureGrid, fs: float,
                    t0_offset_s: float = T0_OFFSET_S) -> List[Tuple[int, int]]:
    """(start, end) sample ranges inside an epoch; window i starts at t_start + i * step"""
    length = _round_half_up(grid.window_ms * fs / 1000.0)
    windows = []
    for i in range(grid.n_windows):
        t = grid.t_start_s + i * grid.step_ms / 1000.0
        start = _round_half_up((t + t0_offset_s) * fs)
        windows.append((start, start + length))
    return windows


def band_masks(grid: FeatureGrid, fs: float) -> np.ndarray:
    """freq_bins x bands 0/1 matrix, half-open [lo, hi) on bin-centre frequencies"""
    freqs = np.fft.rfftfreq(grid.nfft, d=1.0 / fs)
    return np.stack([(freqs >= lo) & (freqs < hi) for lo, hi in grid.bands], axis=1).astype(float)


def _window_power(component_trial: np.ndarray, selected: Sequence[int], grid: FeatureGrid,
                  fs: float, t0_offset_s: float) -> np.ndarray:
    """selected x windows x freq_bins power spectra"""
    windows = sliding_windows(grid, fs, t0_offset_s)
    n_samples = component_trial.shape[-1]
    if windows[0][0] < 0 or windows[-1][1] > n_samples:
        raise WindowOutOfBounds(f"feature windows span samples [{windows[0][0]}, {windows[-1][1]}) "
                                f"but the trial has {n_samples}")
    length = windows[0][1] - windows[0][0]
    index = np.array([w[0] for w in windows])[:, None] + np.arange(length)[None, :]
    segments = np.asarray(component_trial, dtype=float)[list(selected)][:, index]
    segments = segments - segments.mean(axis=-1, keepdims=True)
    segments = segments * get_window("hann", length)
    return np.abs(np.fft.rfft(segments, n=grid.nfft, axis=-1)) ** 2


def band_power_features(component_trial: np.ndarray, selected: Sequence[int], grid: FeatureGrid,
                        fs: float, t0_offset_s: float = T0_OFFSET_S) -> np.ndarray:
    """Band powers in (component, window, band) lexicographic order"""
    if len(selected) == 0:
        raise ValueError("no components selected")
    spectra = _window_power(component_trial, selected, grid, fs, t0_offset_s)
    return (spectra @ band_masks(grid, fs)).ravel()


def parseval_bound(segment: np.ndarray, nfft: int = 256) -> float:
    """Upper bound on the summed band powers of one window: nfft * sum((x - mean) * hann)^2"""
    segment = np.asarray(segment, dtype=float)
    tapered = (segment - segment.mean()) * get_window("hann", segment.size)
    return float(nfft * np.sum(tapered ** 2))


def build_feature_matrix(component_trials: Sequence[np.ndarray], metas: Sequence[TrialMeta],
                         selected: Sequence[int], grid: FeatureGrid, fs: float,
                         log_power: bool = False, t0_offset_s: float = T0_OFFSET_S) -> FeatureMatrix:
    values = np.vstack([band_power_features(trial, selected, grid, fs, t0_offset_s)
                        for trial in component_trials])
    if log_power:
        values = np.log(values + LOG_FLOOR)
    columns = [(int(c), w, b) for c in selected for w in range(grid.n_windows) for b in range(grid.n_bands)]
    labels = [class_of(meta.movement) for meta in metas]
    logger.info(f"Feature matrix: {values.shape[0]} trials x {values.shape[1]} features")
    return FeatureMatrix(values=values, columns=columns, labels=labels, meta=list(metas))


def _class_arrays(values: np.ndarray, labels: Sequence[ClassLabel]) -> Tuple[np.ndarray, np.ndarray]:
    labels = list(labels)
    wrist = np.array([lab is ClassLabel.WRIST for lab in labels], dtype=bool)
    if not wrist.any() or wrist.all():
        missing = ClassLabel.FINGER if wrist.all() else ClassLabel.WRIST
        raise MissingClass(f"no {missing.value} trials")
    if wrist.sum() < 2 or (~wrist).sum() < 2:
        raise InsufficientTrials("Bhattacharyya distance needs at least 2 trials per class")
    return values[wrist], values[~wrist]


def bhattacharyya_scores(values: np.ndarray, labels: Sequence[ClassLabel]) -> np.ndarray:
    """Univariate Gaussian Bhattacharyya distance of every column"""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    a, b = _class_arrays(values, labels)
    global_var = values.var(axis=0, ddof=1)
    floor = 1e-12 * (global_var + 1e-30)
    va = np.maximum(a.var(axis=0, ddof=1), floor)
    vb = np.maximum(b.var(axis=0, ddof=1), floor)
    mean_term = 0.25 * (a.mean(axis=0) - b.mean(axis=0)) ** 2 / (va + vb)
    var_term = 0.5 * np.log((va + vb) / (2.0 * np.sqrt(va * vb)))
    scores = mean_term + var_term
    return np.where(global_var == 0, 0.0, scores)


def bhattacharyya(column: np.ndarray, labels: Sequence[ClassLabel]) -> float:
    return float(bhattacharyya_scores(np.asarray(column, dtype=float)[:, None], labels)[0])


def select_top_k(matrix: FeatureMatrix, k: int = 18) -> SelectionResult:
    """Columns with the k largest distances; ties go to the lower column index"""
    if matrix.n_features < k:
        raise ValueError(f"cannot select {k} of {matrix.n_features} features")
    scores = bhattacharyya_scores(matrix.values, matrix.labels)
    order = np.lexsort((np.arange(scores.size), -scores))
    selected = [int(c) for c in order[:k]]
    return SelectionResult(selected_columns=selected, bd_scores=[float(s) for s in scores])
