# Shared seeded fixtures
import numpy as np
import pytest

from bci_hand.core.config import build_config
from bci_hand.models.recording import FeatureMatrix, TrialEpoch
from bci_hand.models.schemas import (ClassLabel, Condition, Hand, MovementLabel, SynthConfig,
                                     TrialMeta)
from bci_hand.utils.synth import generate

FS = 200.0


def make_meta(index: int = 0, movement: MovementLabel = MovementLabel.WE, subject: str = "S01",
              hand: Hand = Hand.RIGHT, condition: Condition = Condition.REAL) -> TrialMeta:
    return TrialMeta(subject=subject, hand=hand, condition=condition, movement=movement,
                     trial_index=index)


def make_epoch(data: np.ndarray, index: int = 0,
               movement: MovementLabel = MovementLabel.WE) -> TrialEpoch:
    return TrialEpoch(meta=make_meta(index, movement), fs=FS, data=data)


def make_matrix(values: np.ndarray, n_wrist: int) -> FeatureMatrix:
    """Rows [0, n_wrist) are Wrist, the rest Finger"""
    n = values.shape[0]
    labels = [ClassLabel.WRIST if i < n_wrist else ClassLabel.FINGER for i in range(n)]
    metas = [make_meta(i, MovementLabel.WE if i < n_wrist else MovementLabel.FF) for i in range(n)]
    columns = [(0, 0, c) for c in range(values.shape[1])]
    return FeatureMatrix(values=values, columns=columns, labels=labels, meta=metas)


def small_synth(**overrides) -> SynthConfig:
    """One run of 5 x 4 trials unless overridden"""
    params = dict(trials_per_movement=4, hands=[Hand.RIGHT], conditions=[Condition.REAL], seed=7)
    params.update(overrides)
    return SynthConfig(**params)


def steady_motor_sources():
    """Default motor sources without idle bursts"""
    return [src.model_copy(update={"burst_sigma": 0.0}) for src in SynthConfig().motor_sources]


def small_pipeline_config(tmp_path, **synth_overrides):
    """Single (subject, hand, condition) cell big enough for both classifiers"""
    synth = dict(trials_per_movement=6, hands=["Right"], conditions=["Real"], seed=11)
    synth.update(synth_overrides)
    return build_config({
        "dataset_dir": str(tmp_path / "dataset"),
        "output_dir": str(tmp_path / "output"),
        "seed": 3,
        "ica": {"max_iter": 100},
        "classify": {"mlp": {"epochs": 300}},
        "synth": synth,
    })


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_run():
    runs, truth = generate(small_synth())
    return runs[0], truth


@pytest.fixture
def two_clusters(rng):
    """40 Wrist + 60 Finger trials in 18 dims"""
    wrist = rng.standard_normal((40, 18))
    finger = rng.standard_normal((60, 18)) + 0.8
    return make_matrix(np.vstack([wrist, finger]), n_wrist=40)
