# Synthetic EEG with known ground truth
# bci_hand/utils/synth.py
import json
import logging
import os
from typing import Dict, List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter1d

from bci_hand.core.errors import InvalidSynthConfig
from bci_hand.models.dataset import DatasetStore
from bci_hand.models.recording import ContinuousRecording, GroundTruth, SynthRun
from bci_hand.models.schemas import (MotorSourceConfig, MovementLabel, SourceKind, SynthConfig,
                                     TrialMeta)
from bci_hand.utils.epoching import GET_READY, class_of, epoch, epoch_samples

logger = logging.getLogger(__name__)

TRUTH_FILE = "truth.json"
MAX_MIXING_DRAWS = 100
# Correlation time of the oscillator frequency drift
FREQUENCY_WANDER_S = 1.0

# Stream identifiers for seed splitting: default_rng([seed, stream, *keys])
_MIXING, _ORDER, _SOURCE, _SENSOR = 0, 1, 2, 3


def _validate(config: SynthConfig):
    if config.n_noise_sources < 0:
        raise InvalidSynthConfig(
            f"{config.n_sources} sources cannot hold {len(config.motor_sources)} motor and "
            f"{config.artifacts.n_sources} artifact sources")
    if config.n_sources > config.n_channels:
        raise InvalidSynthConfig(f"{config.n_sources} sources exceed {config.n_channels} channels")
    if not np.isfinite(config.noise.snr_db):
        raise InvalidSynthConfig("snr_db must be finite")
    for src in config.motor_sources:
        if not 1.0 < src.center_hz < config.fs / 2.0 - 1.0:
            raise InvalidSynthConfig(f"motor source at {src.center_hz} Hz outside the usable band")


def source_kinds(config: SynthConfig) -> List[SourceKind]:
    return ([src.kind for src in config.motor_sources]
            + [SourceKind.NOISE] * config.n_noise_sources
            + [SourceKind.ARTIFACT] * config.artifacts.n_sources)


def draw_mixing(config: SynthConfig, seed: int) -> np.ndarray:
    """Gaussian mixing with unit-RMS columns, redrawn until cond < max_condition"""
    rng = np.random.default_rng([seed, _MIXING])
    for _ in range(MAX_MIXING_DRAWS):
        mixing = rng.standard_normal((config.n_channels, config.n_sources))
        mixing /= np.sqrt(np.mean(mixing ** 2, axis=0))
        if np.linalg.cond(mixing) < config.max_condition:
            return mixing
    raise InvalidSynthConfig(
        f"no mixing matrix with condition number below {config.max_condition} "
        f"in {MAX_MIXING_DRAWS} draws")


def _smoothstep(t: np.ndarray, start: float, ramp: float) -> np.ndarray:
    x = np.clip((t - start) / ramp, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * x))


def erd_power_profile(times_s: np.ndarray, depth: float, src: MotorSourceConfig) -> np.ndarray:
    """Relative power: 1 at rest, 1 - depth in the ERD window, 1 + rebound after it"""
    a, b = src.erd_window_s
    rebound = src.ers_rebound
    return (1.0
            - depth * _smoothstep(times_s, a, src.ramp_s)
            + (depth + rebound) * _smoothstep(times_s, b, src.ramp_s)
            - rebound * _smoothstep(times_s, b + src.ers_duration_s, src.ramp_s))


def burst_gate(times_s: np.ndarray, src: MotorSourceConfig) -> np.ndarray:
    """Burst exponent: 1 while the rhythm idles and 0 through the movement window"""
    a, b = src.erd_window_s
    return (1.0
            - _smoothstep(times_s, a - src.ramp_s, src.ramp_s)
            + _smoothstep(times_s, b, src.ramp_s))


def _unit(x: np.ndarray) -> np.ndarray:
    std = x.std()
    return x / std if std > 0 else x


def oscillator(n: int, fs: float, center_hz: float, rng: np.random.Generator,
               half_width_hz: float = 1.0, wander_time_s: float = FREQUENCY_WANDER_S) -> np.ndarray:
    """Unit-RMS oscillation with random phase whose frequency drifts within center +- half_width"""
    drift = _unit(gaussian_filter1d(rng.standard_normal(n), sigma=wander_time_s * fs, mode="wrap"))
    freq = center_hz + np.clip(0.5 * half_width_hz * drift, -half_width_hz, half_width_hz)
    phase = rng.uniform(0.0, 2.0 * np.pi) + 2.0 * np.pi * np.cumsum(freq) / fs
    return np.sqrt(2.0) * np.cos(phase)


def pink_noise(n: int, fs: float, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """1/f^exponent power spectrum by shaping seeded white noise, unit variance"""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    scale = np.zeros_like(freqs)
    scale[1:] = freqs[1:] ** (-exponent / 2.0)
    return _unit(np.fft.irfft(spectrum * scale, n=n))


def burst_envelope(n: int, fs: float, sigma: float, time_s: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Slow log-normal amplitude modulation with unit mean power"""
    if sigma == 0:
        return np.ones(n)
    g = _unit(gaussian_filter1d(rng.standard_normal(n), sigma=time_s * fs, mode="wrap"))
    return np.exp(sigma * g - sigma ** 2)


def spike_train(n: int, fs: float, rate: float, amp_uv: float, width_ms: float,
                rng: np.random.Generator) -> np.ndarray:
    impulses = np.where(rng.random(n) < rate / fs, rng.choice([-1.0, 1.0], size=n), 0.0)
    sd = width_ms / 1000.0 * fs / 2.0
    half = int(np.ceil(4 * sd))
    kernel = np.exp(-0.5 * (np.arange(-half, half + 1) / sd) ** 2)
    return amp_uv * np.convolve(impulses, kernel, mode="same")


def _trial_layout(config: SynthConfig, seed: int, subject: int, hand: int,
                  condition: int) -> List[MovementLabel]:
    """Randomized set order, 20 consecutive repetitions per set"""
    rng = np.random.default_rng([seed, _ORDER, subject, hand, condition])
    movements = list(MovementLabel)
    order = [movements[i] for i in rng.permutation(len(movements))]
    return [m for m in order for _ in range(config.trials_per_movement)]


def _generate_run(config: SynthConfig, seed: int, mixing: np.ndarray, kinds: List[SourceKind],
                  keys: Tuple[int, int, int], metas: List[TrialMeta]):
    fs = config.fs
    pre, n_epoch = epoch_samples(fs)
    n = n_epoch * len(metas)
    get_ready = [k * n_epoch + pre for k in range(len(metas))]
    trial_times = np.arange(n_epoch) / fs - pre / fs

    sources = np.zeros((config.n_sources, n))
    envelopes = np.ones((config.n_sources, n))
    for idx, kind in enumerate(kinds):
        rng = np.random.default_rng([seed, _SOURCE, *keys, idx])
        if kind is SourceKind.ARTIFACT:
            art = config.artifacts
            sources[idx] = spike_train(n, fs, art.spike_rate, art.spike_amp_uv, art.spike_width_ms, rng)
            continue
        if idx < len(config.motor_sources):
            src = config.motor_sources[idx]
            burst = burst_envelope(n, fs, src.burst_sigma, config.noise.burst_time_s, rng)
            burst = burst ** np.tile(burst_gate(trial_times, src), len(metas))
            carrier = oscillator(n, fs, src.center_hz, rng)
            erd = np.concatenate([
                np.sqrt(erd_power_profile(trial_times, src.erd_depth_by_class[class_of(m.movement)], src))
                for m in metas])
            envelopes[idx] = burst * erd
            sources[idx] = src.amp_uv * envelopes[idx] * carrier
        else:
            burst = burst_envelope(n, fs, config.noise.burst_sigma, config.noise.burst_time_s, rng)
            carrier = pink_noise(n, fs, config.noise.pink_exponent, rng)
            envelopes[idx] = burst
            sources[idx] = config.noise.amp_uv * burst * carrier

    clean = mixing @ sources
    sensor_rng = np.random.default_rng([seed, _SENSOR, *keys])
    noise_std = np.sqrt(np.mean(clean ** 2) / 10.0 ** (config.noise.snr_db / 10.0))
    observed = clean + noise_std * sensor_rng.standard_normal(clean.shape)
    return observed, sources, envelopes, get_ready


def generate(config: SynthConfig) -> Tuple[List[SynthRun], GroundTruth]:
    """Continuous recordings per (subject, hand, condition) plus the ground truth behind them"""
    _validate(config)
    seed = config.seed if config.seed is not None else 0
    kinds = source_kinds(config)
    mixing = draw_mixing(config, seed)
    channel_names = [f"E{i + 1}" for i in range(config.n_channels)]
    pre, n_epoch = epoch_samples(config.fs)

    runs: List[SynthRun] = []
    all_sources, all_envelopes, labels = [], [], []
    global_trial = 0
    corrupt = set(config.corrupt_trials)
    for s in range(config.n_subjects):
        subject = f"S{s + 1:02d}"
        for h, hand in enumerate(config.hands):
            for c, condition in enumerate(config.conditions):
                layout = _trial_layout(config, seed, s, h, c)
                metas = [TrialMeta(subject=subject, hand=hand, condition=condition, movement=m,
                                   trial_index=i % config.trials_per_movement)
                         for i, m in enumerate(layout)]
                observed, sources, envelopes, get_ready = _generate_run(
                    config, seed, mixing, kinds, (s, h, c), metas)
                for k in range(len(metas)):
                    if global_trial + k in corrupt:
                        sample = k * n_epoch + pre + n_epoch // 2
                        observed[(global_trial + k) % config.n_channels, sample] += config.corruption_amp_uv
                global_trial += len(metas)
                recording = ContinuousRecording(fs=config.fs, data=observed,
                                                events=[(e, GET_READY) for e in get_ready],
                                                channel_names=channel_names)
                runs.append(SynthRun(recording=recording, metas=metas, get_ready=get_ready))
                all_sources.append(sources)
                all_envelopes.append(envelopes)
                labels.extend(metas)
                logger.info(f"Synthesized {subject}/{hand.value}/{condition.value}: "
                            f"{len(metas)} trials, {observed.shape[1]} samples")

    truth = GroundTruth(mixing=mixing, source_kinds=kinds, sources=all_sources,
                        envelopes=all_envelopes, labels=labels,
                        envelope_parameters=_envelope_parameters(config, seed))
    return runs, truth


def _envelope_parameters(config: SynthConfig, seed: int) -> Dict[str, object]:
    return {
        "seed": seed,
        "motor_sources": [src.model_dump(mode="json") for src in config.motor_sources],
        "noise": config.noise.model_dump(mode="json"),
        "artifacts": config.artifacts.model_dump(mode="json"),
        "corrupt_trials": sorted(config.corrupt_trials),
    }


def export(runs: List[SynthRun], truth: GroundTruth, dataset_dir: str) -> str:
    """Write the dataset format (epochs cut at every Get Ready event) and truth.json"""
    epochs = []
    for run in runs:
        epochs.extend(epoch(run.recording, run.get_ready, run.metas))
    DatasetStore(dataset_dir).save(epochs, runs[0].recording.channel_names)

    truth_path = os.path.join(dataset_dir, TRUTH_FILE)
    with open(truth_path, "w", encoding="utf-8") as f:
        json.dump({
            "n_channels": int(truth.mixing.shape[0]),
            "n_sources": int(truth.mixing.shape[1]),
            "mixing": truth.mixing.tolist(),
            "source_kinds": [kind.value for kind in truth.source_kinds],
            "envelope_parameters": truth.envelope_parameters,
        }, f, indent=2)
    logger.info(f"Wrote ground truth to {truth_path}")
    return truth_path


def load_truth(dataset_dir: str) -> Dict[str, object]:
    with open(os.path.join(dataset_dir, TRUTH_FILE), "r", encoding="utf-8") as f:
        truth = json.load(f)
    truth["mixing"] = np.array(truth["mixing"])
    return truth
