# Zero-phase IIR filtering
# bci_hand/utils/filtering.py
import logging
from functools import lru_cache

import numpy as np
from scipy import signal as spsig

from bci_hand.core.errors import SignalTooShort
from bci_hand.models.schemas import FilterKind, FilterSpec

logger = logging.getLogger(__name__)

# Fraction of impulse-response energy that defines the settling length
SETTLING_ENERGY = 0.999


@lru_cache(maxsize=64)
def design_sos(spec: FilterSpec) -> np.ndarray:
    """Second-order sections for a Butterworth bandpass or an IIR notch"""
    if spec.kind is FilterKind.BANDPASS:
        return spsig.butter(spec.order, spec.band, btype="bandpass", fs=spec.fs, output="sos")
    b, a = spsig.iirnotch(spec.center_hz, spec.quality, fs=spec.fs)
    return spsig.tf2sos(b, a)


@lru_cache(maxsize=64)
def settling_length(spec: FilterSpec) -> int:
    """Samples until the single-pass impulse response holds 99.9% of its energy"""
    if spec.kind is FilterKind.BANDPASS:
        slowest_hz = spec.band[0]
    else:
        slowest_hz = spec.center_hz / spec.quality
    n = int(np.ceil(spec.fs * 60.0 / slowest_hz))
    impulse = np.zeros(n)
    impulse[0] = 1.0
    energy = np.cumsum(spsig.sosfilt(design_sos(spec), impulse) ** 2)
    return int(np.searchsorted(energy, SETTLING_ENERGY * energy[-1]) + 1)


def min_signal_length(spec: FilterSpec) -> int:
    return 3 * settling_length(spec) + 1


def apply_filter_zero_phase(signal: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Forward-backward filtering along the last axis; output length equals input length.

    The signal must be longer than three settling lengths of the filter. Edges are
    odd-reflected by three times the filter order before filtering.
    """
    signal = np.asarray(signal, dtype=float)
    n = signal.shape[-1]
    needed = min_signal_length(spec)
    if n < needed:
        raise SignalTooShort(
            f"{spec.kind.value} filter needs at least {needed} samples, got {n}")
    padlen = min(3 * spec.order, n - 1)
    return spsig.sosfiltfilt(design_sos(spec), signal, axis=-1, padtype="odd", padlen=padlen)


def filter_channels(data: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Apply apply_filter_zero_phase to every row of a channels x samples matrix"""
    return apply_filter_zero_phase(np.atleast_2d(data), spec)


def filter_chain(data: np.ndarray, specs) -> np.ndarray:
    out = np.asarray(data, dtype=float)
    for spec in specs:
        logger.debug(f"Applying {spec.kind.value} filter {spec.band or spec.center_hz}")
        out = filter_channels(out, spec)
    return out
