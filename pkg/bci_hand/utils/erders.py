# ERD/ERS estimation and motor component selection
# bci_hand/utils/erders.py
import logging
from typing import List, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.stats import kurtosis

from bci_hand.core.errors import InsufficientTrials, TooFewComponents, ZeroReference
from bci_hand.models.recording import ErdCurve
from bci_hand.models.schemas import ComponentScore, FilterSpec
from bci_hand.utils.filtering import apply_filter_zero_phase

logger = logging.getLogger(__name__)


def _window_mask(times_s: np.ndarray, window_s: Tuple[float, float]) -> np.ndarray:
    start, end = window_s
    return (times_s >= start) & (times_s <= end)


def intertrial_variance_power(trials: Sequence[np.ndarray], band: Tuple[float, float], fs: float,
                              smooth_ms: float = 200.0) -> np.ndarray:
    """Point-wise variance across band-filtered trials, smoothed by a centered moving average"""
    if len(trials) < 2:
        raise InsufficientTrials(f"inter-trial variance needs at least 2 trials, got {len(trials)}")
    stacked = np.vstack([np.asarray(t, dtype=float) for t in trials])
    if stacked.shape[0] != len(trials):
        raise ValueError("trials must be one-dimensional and of equal length")
    filtered = apply_filter_zero_phase(stacked, FilterSpec.bandpass(band[0], band[1], fs))
    # Deviations from the first trial are exactly zero when all trials match
    power = (filtered - filtered[0]).var(axis=0, ddof=1)
    width = max(int(round(smooth_ms * fs / 1000.0)), 1)
    return uniform_filter1d(power, size=width, mode="nearest")


def erd_percent(power: np.ndarray, times_s: np.ndarray,
                reference_window_s: Tuple[float, float]) -> np.ndarray:
    """100 * (A - R) / R with R the mean power over the reference window"""
    power = np.asarray(power, dtype=float)
    times_s = np.asarray(times_s, dtype=float)
    start, end = reference_window_s
    if start < times_s[0] or end > times_s[-1] or start >= end:
        raise ValueError(f"reference window {reference_window_s} outside "
                         f"[{times_s[0]}, {times_s[-1]}] s")
    reference = float(power[_window_mask(times_s, reference_window_s)].mean())
    if reference <= 0:
        raise ZeroReference("reference power is zero")
    return 100.0 * (power - reference) / reference


def erd_curve(trials: Sequence[np.ndarray], component: int, band: Tuple[float, float], fs: float,
              t0_offset_s: float, reference_window_s: Tuple[float, float],
              smooth_ms: float = 200.0) -> ErdCurve:
    power = intertrial_variance_power(trials, band, fs, smooth_ms)
    times_s = np.arange(power.size) / fs - t0_offset_s
    return ErdCurve(component=component, band=tuple(band), times_s=times_s,
                    values_pct=erd_percent(power, times_s, reference_window_s),
                    reference_window_s=tuple(reference_window_s))


def score_component(curve: ErdCurve, movement_window_s: Tuple[float, float],
                    post_window_s: Tuple[float, float]) -> ComponentScore:
    """ERD depth is the minimum in the movement window, ERS height the maximum after it"""
    erd = float(curve.values_pct[_window_mask(curve.times_s, movement_window_s)].min())
    ers = float(curve.values_pct[_window_mask(curve.times_s, post_window_s)].max())
    return ComponentScore(component=curve.component, erd_depth_pct=erd,
                          ers_height_pct=ers, score=ers - erd)


def artifact_components(component_trials: Sequence[np.ndarray],
                        max_kurtosis: float = 20.0) -> Tuple[List[int], List[float]]:
    """Components whose excess kurtosis over all trials exceeds max_kurtosis.

    Sparse spikes (blinks, muscle twitches) give excess kurtosis in the hundreds while
    band-limited rhythms and noise stay in single digits.
    """
    stacked = np.concatenate([np.asarray(t, dtype=float) for t in component_trials], axis=1)
    values = kurtosis(stacked, axis=1, fisher=True)
    values = np.nan_to_num(values, nan=0.0)
    flagged = [int(c) for c in np.flatnonzero(values > max_kurtosis)]
    if flagged:
        logger.info(f"Components {flagged} look like artifacts (excess kurtosis > {max_kurtosis:g})")
    return flagged, [float(v) for v in values]


def select_components(curves: Sequence[ErdCurve], movement_window_s: Tuple[float, float],
                      post_window_s: Tuple[float, float], k_min: int = 8, k_max: int = 12,
                      score_threshold: float = 20.0) -> Tuple[List[int], List[ComponentScore]]:
    """Top-k components by ERS - ERD spread, k = clamp(#scores above threshold, k_min, k_max)"""
    (m0, m1), (p0, p1) = movement_window_s, post_window_s
    if m0 < p1 and p0 < m1:
        raise ValueError("movement and post windows overlap")
    if k_min > k_max:
        raise ValueError(f"k_min ({k_min}) exceeds k_max ({k_max})")
    if len(curves) < k_min:
        raise TooFewComponents(f"{len(curves)} components available, at least {k_min} required")

    scores = [score_component(c, movement_window_s, post_window_s) for c in curves]
    ranked = sorted(scores, key=lambda s: (-s.score, s.component))
    above = sum(1 for s in scores if s.score > score_threshold)
    k = min(max(above, k_min), k_max, len(scores))
    selected = [s.component for s in ranked[:k]]
    logger.info(f"Selected {k} components ({above} above threshold {score_threshold:g}): {selected}")
    return selected, scores
