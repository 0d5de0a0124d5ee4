# Epoching, trial rejection and the pre-processing chain
# bci_hand/utils/epoching.py
import logging
from collections import OrderedDict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from bci_hand.core.errors import AllTrialsRejected, EpochOutOfBounds
from bci_hand.models.recording import (EPOCH_DURATION_S, T0_OFFSET_S, ContinuousRecording,
                                       TrialEpoch)
from bci_hand.models.schemas import (WRIST_MOVEMENTS, ClassLabel, Condition, FilterSpec, Hand,
                                     MovementLabel, Rejection, RejectionReason, TrialMeta)
from bci_hand.utils.filtering import filter_chain, filter_channels

logger = logging.getLogger(__name__)

GET_READY = "GetReady"


def class_of(movement: MovementLabel) -> ClassLabel:
    return ClassLabel.WRIST if MovementLabel(movement) in WRIST_MOVEMENTS else ClassLabel.FINGER


def epoch_samples(fs: float) -> Tuple[int, int]:
    """(samples before the Get Ready event, total samples per epoch)"""
    return int(round(T0_OFFSET_S * fs)), int(round(EPOCH_DURATION_S * fs))


def epoch(recording: ContinuousRecording, get_ready_events: Sequence[int],
          metas: Sequence[TrialMeta]) -> List[TrialEpoch]:
    """Cut 7 s epochs spanning t = -1 s ... 6 s around each Get Ready event"""
    if len(get_ready_events) != len(metas):
        raise ValueError(f"{len(get_ready_events)} events but {len(metas)} trial metas")
    pre, n = epoch_samples(recording.fs)
    epochs = []
    for event, meta in zip(get_ready_events, metas):
        start = int(event) - pre
        stop = start + n
        if start < 0 or stop > recording.n_samples:
            raise EpochOutOfBounds(
                f"event at sample {event} needs samples [{start}, {stop}) "
                f"but the recording has {recording.n_samples}")
        epochs.append(TrialEpoch(meta=meta, fs=recording.fs,
                                 data=recording.data[:, start:stop].copy()))
    return epochs


def reject_bad_trials(epochs: Sequence[TrialEpoch], amp_limit_uv: float = 100.0,
                      var_ratio_limit: float = 25.0) -> Tuple[List[TrialEpoch], List[Rejection]]:
    """Drop epochs with an amplitude spike or a channel whose variance dwarfs the median channel"""
    if not epochs:
        raise ValueError("reject_bad_trials needs at least one epoch")
    amp_limit = abs(amp_limit_uv)
    kept, report = [], []
    for ep in epochs:
        peaks = np.abs(ep.data).max(axis=1)
        variances = ep.data.var(axis=1)
        median_var = float(np.median(variances))
        if (peaks > amp_limit).any():
            channel = int(np.argmax(peaks))
            report.append(Rejection(meta=ep.meta, reason=RejectionReason.AMPLITUDE_SPIKE,
                                    channel=channel, value=float(peaks[channel])))
        elif (variances > var_ratio_limit * median_var).any():
            channel = int(np.argmax(variances))
            report.append(Rejection(meta=ep.meta, reason=RejectionReason.VARIANCE_RATIO,
                                    channel=channel, value=float(variances[channel] / median_var)))
        else:
            kept.append(ep)
    if not kept:
        raise AllTrialsRejected(f"all {len(epochs)} trials rejected", report)
    if report:
        logger.warning(f"Rejected {len(report)} of {len(epochs)} trials")
    return kept, report


def concatenate_epochs(epochs: Sequence[TrialEpoch]) -> Tuple[ContinuousRecording, List[int]]:
    """Rebuild a continuous stream from contiguous epochs; returns it with its Get Ready samples"""
    fs = epochs[0].fs
    pre, n = epoch_samples(fs)
    for ep in epochs:
        if ep.fs != fs or ep.n_samples != n or ep.data.shape[0] != epochs[0].data.shape[0]:
            raise ValueError(f"epoch {ep.meta.stem} does not share the stream geometry")
    events = [k * n + pre for k in range(len(epochs))]
    data = np.concatenate([ep.data for ep in epochs], axis=1)
    recording = ContinuousRecording(fs=fs, data=data, events=[(e, GET_READY) for e in events])
    return recording, events


def group_epochs(epochs: Sequence[TrialEpoch]) -> Dict[Tuple[str, Hand, Condition], List[TrialEpoch]]:
    """Group epochs by (subject, hand, condition), keeping dataset order"""
    groups: Dict[Tuple[str, Hand, Condition], List[TrialEpoch]] = OrderedDict()
    for ep in epochs:
        groups.setdefault((ep.meta.subject, ep.meta.hand, ep.meta.condition), []).append(ep)
    return groups


def preprocess(epochs: Sequence[TrialEpoch], broadband: FilterSpec, notch: FilterSpec,
               mu_beta: FilterSpec, amp_limit_uv: float,
               var_ratio_limit: float) -> Tuple[List[TrialEpoch], List[Rejection]]:
    """Broadband + notch filtering, rejection, then the 8-30 Hz band.

    Each (subject, hand, condition) run is filtered as one continuous stream so the
    filter transients stay out of the epochs.
    """
    kept_all: List[TrialEpoch] = []
    report_all: List[Rejection] = []
    for key, group in group_epochs(epochs).items():
        recording, events = concatenate_epochs(group)
        metas = [ep.meta for ep in group]
        wide = filter_chain(recording.data, [broadband, notch])
        wide_epochs = epoch(ContinuousRecording(fs=recording.fs, data=wide), events, metas)
        try:
            kept, report = reject_bad_trials(wide_epochs, amp_limit_uv, var_ratio_limit)
        except AllTrialsRejected as e:
            logger.warning(f"Every trial of {key[0]}/{key[1].value}/{key[2].value} was rejected")
            report_all.extend(e.report)
            continue
        report_all.extend(report)
        keep = {ep.meta.key for ep in kept}
        narrow = filter_channels(wide, mu_beta)
        narrow_epochs = epoch(ContinuousRecording(fs=recording.fs, data=narrow), events, metas)
        kept_all.extend(ep for ep in narrow_epochs if ep.meta.key in keep)
    if not kept_all:
        raise AllTrialsRejected(f"all {len(epochs)} trials rejected", report_all)
    return kept_all, report_all
