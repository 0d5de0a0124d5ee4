# On-disk dataset store
# bci_hand/models/dataset.py
import json
import logging
import os
from typing import List, Optional, Sequence

import numpy as np

from bci_hand.core.errors import MissingDependency
from bci_hand.models.recording import TrialEpoch
from bci_hand.models.schemas import DatasetIndex, TrialRecord

logger = logging.getLogger(__name__)

INDEX_FILE = "dataset.json"
TRIALS_DIR = "trials"
# Little-endian float32, channel-major
SAMPLE_DTYPE = np.dtype("<f4")


class DatasetStore:
    """dataset.json plus one float32 file per trial"""

    def __init__(self, dataset_dir: str):
        self.dataset_dir = dataset_dir
        self.index_path = os.path.join(dataset_dir, INDEX_FILE)
        self.trials_dir = os.path.join(dataset_dir, TRIALS_DIR)

    def exists(self) -> bool:
        return os.path.exists(self.index_path)

    def save(self, epochs: Sequence[TrialEpoch], channel_names: Optional[List[str]] = None) -> DatasetIndex:
        """Write every epoch and the index; returns the index"""
        if not epochs:
            raise ValueError("cannot save an empty dataset")
        os.makedirs(self.trials_dir, exist_ok=True)
        fs = epochs[0].fs
        n_channels = epochs[0].data.shape[0]
        channel_names = channel_names or [f"E{i + 1}" for i in range(n_channels)]

        records = []
        subjects: List[str] = []
        for ep in epochs:
            filename = f"{ep.meta.stem}.f32"
            ep.data.astype(SAMPLE_DTYPE).tofile(os.path.join(self.trials_dir, filename))
            records.append(TrialRecord(**ep.meta.model_dump(),
                                       file=f"{TRIALS_DIR}/{filename}",
                                       t0_offset_s=ep.t0_offset_s,
                                       n_samples=ep.n_samples))
            if ep.meta.subject not in subjects:
                subjects.append(ep.meta.subject)

        index = DatasetIndex(fs=fs, channel_names=channel_names, subjects=subjects, trials=records)
        with open(self.index_path, "w", encoding="utf-8") as f:
            json.dump(index.model_dump(mode="json"), f, indent=2)
        logger.info(f"Saved {len(records)} trials to {self.dataset_dir}")
        return index

    def load_index(self) -> DatasetIndex:
        if not self.exists():
            raise MissingDependency("synth", f"no {INDEX_FILE} in {self.dataset_dir}")
        with open(self.index_path, "r", encoding="utf-8") as f:
            return DatasetIndex.model_validate(json.load(f))

    def load(self) -> List[TrialEpoch]:
        index = self.load_index()
        n_channels = len(index.channel_names)
        epochs = []
        for record in index.trials:
            raw = np.fromfile(os.path.join(self.dataset_dir, record.file), dtype=SAMPLE_DTYPE)
            if raw.size != n_channels * record.n_samples:
                raise ValueError(f"{record.file} holds {raw.size} samples, "
                                 f"expected {n_channels} x {record.n_samples}")
            epochs.append(TrialEpoch(meta=record.to_meta(), fs=index.fs,
                                     data=raw.reshape(n_channels, record.n_samples).astype(float),
                                     t0_offset_s=record.t0_offset_s))
        logger.info(f"Loaded {len(epochs)} trials from {self.dataset_dir}")
        return epochs


def save_dataset(dataset_dir: str, epochs: Sequence[TrialEpoch],
                 channel_names: Optional[List[str]] = None) -> DatasetIndex:
    return DatasetStore(dataset_dir).save(epochs, channel_names)


def load_dataset(dataset_dir: str) -> List[TrialEpoch]:
    return DatasetStore(dataset_dir).load()
