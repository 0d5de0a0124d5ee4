# Stage orchestration
# bci_hand/services/pipeline_service.py
import logging
import os
from collections import OrderedDict
from typing import Dict, List, Tuple

import numpy as np

from bci_hand.core.config import PipelineConfig, config_hash, derive_seed, save_config
from bci_hand.core.errors import InsufficientTrials, MissingClass, MissingDependency
from bci_hand.models.dataset import DatasetStore
from bci_hand.models.recording import TrialEpoch
from bci_hand.models.schemas import (ClassifierReport, ClassLabel, Condition, FilterSpec, Hand,
                                     Method)
from bci_hand.services.report_service import ReportService
from bci_hand.utils import artifacts
from bci_hand.utils.classify import MlpParams, evaluate_cell, ssa, sweep_hidden_nodes
from bci_hand.utils.epoching import class_of, group_epochs, preprocess
from bci_hand.utils.erders import artifact_components, erd_curve, select_components
from bci_hand.utils.features import FeatureGrid, build_feature_matrix, select_top_k
from bci_hand.utils.ica import InfomaxParams, activations, fit_ica
from bci_hand.utils.synth import export, generate

logger = logging.getLogger(__name__)

STAGES = ("synth", "preprocess", "ica", "select", "features", "classify", "report")
UPSTREAM = {
    "ica": "preprocess",
    "select": "ica",
    "features": "select",
    "classify": "features",
    "report": "classify",
}

CONFIG_FILE = "config.json"
REJECTION_FILE = "rejection.json"
COMPONENTS_FILE = "components.json"
ERD_CURVES_FILE = "erd_curves.csv"
SCALP_MAPS_FILE = "scalp_maps.csv"
REPORT_JSON = "report.json"

CellKey = Tuple[str, Hand, Condition]


def cell_name(subject: str, hand: Hand, condition: Condition) -> str:
    return f"{subject}_{hand.short}_{condition.value}"


def hand_name(subject: str, hand: Hand) -> str:
    return f"{subject}_{hand.short}"


class PipelineService:
    """Runs pipeline stages; stages talk to each other only through files in output_dir"""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.config_hash = config_hash(config)
        self.output_dir = config.output_dir

    def path(self, *parts: str) -> str:
        return os.path.join(self.output_dir, *parts)

    def run_stage(self, stage: str) -> List[str]:
        """Run one stage, write its manifest and return the files it produced"""
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage}")
        if stage in UPSTREAM:
            upstream = artifacts.read_manifest(self.output_dir, UPSTREAM[stage])
            if upstream.config_hash != self.config_hash:
                logger.warning(f"Stage {UPSTREAM[stage]} ran with config {upstream.config_hash[:12]}, "
                               f"current config is {self.config_hash[:12]}")
        os.makedirs(self.output_dir, exist_ok=True)
        save_config(self.config, self.path(CONFIG_FILE))

        logger.info(f"Running stage {stage} (config {self.config_hash[:12]})")
        inputs, outputs = getattr(self, f"_run_{stage}")()
        artifacts.write_manifest(self.output_dir, stage, self.config_hash, inputs, outputs)
        logger.info(f"Stage {stage} finished with {len(outputs)} outputs")
        return outputs

    def run_all(self) -> List[str]:
        outputs: List[str] = []
        for stage in STAGES:
            if stage == "synth" and DatasetStore(self.config.dataset_dir).exists():
                logger.info(f"Dataset found in {self.config.dataset_dir}; skipping synth")
                continue
            outputs.extend(self.run_stage(stage))
        return outputs

    # Shared loaders
    def _preprocessed_store(self) -> DatasetStore:
        return DatasetStore(self.path("preprocess"))

    def _preprocessed(self) -> Tuple[List[TrialEpoch], List[str], float]:
        store = self._preprocessed_store()
        if not store.exists():
            raise MissingDependency("preprocess")
        index = store.load_index()
        return store.load(), index.channel_names, index.fs

    def _cells(self) -> "OrderedDict[CellKey, List[TrialEpoch]]":
        epochs, _, _ = self._preprocessed()
        return group_epochs(epochs)

    def _cell_activations(self, key: CellKey, group: List[TrialEpoch]) -> Tuple[List[np.ndarray], str]:
        ica_dir = self.path("ica", hand_name(key[0], key[1]))
        return activations(group, artifacts.load_unmixing(ica_dir)), os.path.join(ica_dir, artifacts.ICA_BIN)

    # Stages
    def _run_synth(self):
        synth = self.config.synth
        if synth.seed is None:
            synth = synth.model_copy(update={"seed": derive_seed(self.config.seed, "synth")})
        runs, truth = generate(synth)
        export(runs, truth, self.config.dataset_dir)
        store = DatasetStore(self.config.dataset_dir)
        return [], [store.index_path, os.path.join(self.config.dataset_dir, "truth.json")]

    def _run_preprocess(self):
        source = DatasetStore(self.config.dataset_dir)
        index = source.load_index()
        epochs = source.load()
        sig = self.config.signal
        fs = index.fs
        if fs != sig.fs:
            logger.warning(f"Dataset sampled at {fs} Hz, config says {sig.fs} Hz; using the dataset rate")
        kept, rejections = preprocess(
            epochs,
            broadband=FilterSpec.bandpass(*sig.broadband_hz, fs=fs, order=sig.filter_order),
            notch=FilterSpec.notch(sig.notch_hz, fs=fs, quality=sig.notch_quality),
            mu_beta=FilterSpec.bandpass(*sig.mu_beta_hz, fs=fs, order=sig.filter_order),
            amp_limit_uv=sig.amp_limit_uv,
            var_ratio_limit=sig.var_ratio_limit,
        )
        target = self._preprocessed_store()
        target.save(kept, index.channel_names)
        rejection_path = self.path("preprocess", REJECTION_FILE)
        artifacts.write_json(rejection_path, {
            "n_input": len(epochs),
            "n_kept": len(kept),
            "rejected": [r.model_dump(mode="json") for r in rejections],
        })
        logger.info(f"Kept {len(kept)} of {len(epochs)} trials")
        return [source.index_path], [target.index_path, rejection_path]

    def _run_ica(self):
        cfg = self.config.ica
        epochs, channel_names, _ = self._preprocessed()
        by_hand: Dict[Tuple[str, Hand], List[TrialEpoch]] = OrderedDict()
        for ep in epochs:
            by_hand.setdefault((ep.meta.subject, ep.meta.hand), []).append(ep)

        outputs = []
        for (subject, hand), group in by_hand.items():
            params = InfomaxParams(lr0=cfg.lr0, anneal=cfg.anneal, anneal_deg=cfg.anneal_deg,
                                   max_iter=cfg.max_iter, tol=cfg.tol, block_size=cfg.block_size,
                                   max_restarts=cfg.max_restarts, min_lr=cfg.min_lr,
                                   seed=derive_seed(self.config.seed, "ica", subject, hand.value))
            logger.info(f"ICA for {subject}/{hand.value} on {len(group)} trials")
            result = fit_ica(np.concatenate([ep.data for ep in group], axis=1), params,
                             retain=cfg.retain, n_components=cfg.n_components)
            directory = self.path("ica", hand_name(subject, hand))
            outputs.extend(artifacts.save_unmixing(result, directory))
            outputs.append(artifacts.save_scalp_maps(result, channel_names,
                                                     os.path.join(directory, SCALP_MAPS_FILE)))
        return [self._preprocessed_store().index_path], outputs

    def _run_select(self):
        cfg = self.config.erders
        inputs, outputs = [self._preprocessed_store().index_path], []
        for key, group in self._cells().items():
            acts, ica_bin = self._cell_activations(key, group)
            inputs.append(ica_bin)
            fs, t0 = group[0].fs, group[0].t0_offset_s
            curves = [erd_curve([a[c] for a in acts], c, cfg.band_hz, fs, t0,
                                cfg.reference_window_s, cfg.smooth_ms)
                      for c in range(acts[0].shape[0])]
            flagged, kurt = [], []
            if cfg.artifact_kurtosis is not None:
                flagged, kurt = artifact_components(acts, cfg.artifact_kurtosis)
                if len(curves) - len(flagged) < cfg.k_min:
                    logger.warning(f"{cell_name(*key)}: excluding {flagged} would leave fewer than "
                                   f"{cfg.k_min} components, keeping all")
                    flagged = []
            candidates = [c for c in curves if c.component not in set(flagged)]
            selected, scores = select_components(candidates, cfg.movement_window_s, cfg.post_window_s,
                                                 cfg.k_min, cfg.k_max, cfg.score_threshold)

            by_class: Dict[str, list] = {"all": curves}
            for label in ClassLabel:
                rows = [i for i, ep in enumerate(group) if class_of(ep.meta.movement) is label]
                if len(rows) < 2:
                    logger.warning(f"{cell_name(*key)}: fewer than 2 {label.value} trials, no class curves")
                    continue
                by_class[label.value] = [erd_curve([acts[i][c] for i in rows], c, cfg.band_hz, fs, t0,
                                                   cfg.reference_window_s, cfg.smooth_ms)
                                         for c in range(acts[0].shape[0])]

            directory = self.path("select", cell_name(*key))
            os.makedirs(directory, exist_ok=True)
            components_path = os.path.join(directory, COMPONENTS_FILE)
            artifacts.write_json(components_path, {
                "selected": selected,
                "scores": [s.model_dump(mode="json") for s in scores],
                "n_trials": len(group),
                "artifacts": flagged,
                "kurtosis": kurt,
            })
            outputs.extend([components_path,
                            artifacts.save_erd_curves(by_class, os.path.join(directory, ERD_CURVES_FILE))])
        return inputs, outputs

    def _run_features(self):
        cfg = self.config.features
        grid = FeatureGrid.from_config(cfg)
        inputs, outputs = [], []
        for key, group in self._cells().items():
            name = cell_name(*key)
            components_path = self.path("select", name, COMPONENTS_FILE)
            if not os.path.exists(components_path):
                raise MissingDependency("select", f"{components_path} not found")
            selected = artifacts.read_json(components_path)["selected"]
            inputs.append(components_path)

            acts, ica_bin = self._cell_activations(key, group)
            inputs.append(ica_bin)
            matrix = build_feature_matrix(acts, [ep.meta for ep in group], selected, grid,
                                          group[0].fs, cfg.log_power, group[0].t0_offset_s)
            directory = self.path("features", name)
            os.makedirs(directory, exist_ok=True)
            outputs.extend(artifacts.save_features(
                matrix, os.path.join(directory, "features.csv"), os.path.join(directory, "features.json"),
                metadata={"selected_components": selected, "fs": group[0].fs,
                          "n_windows": grid.n_windows, "bands_hz": [list(b) for b in grid.bands],
                          "log_power": cfg.log_power}))
            selection = select_top_k(matrix, cfg.k)
            outputs.append(artifacts.save_selection(selection, matrix.columns,
                                                    os.path.join(directory, "selection.json")))
        return inputs, outputs

    def _run_classify(self):
        cfg = self.config.classify
        k = self.config.features.k
        nested = self.config.features.nested_selection
        index = self._preprocessed_store().load_index()
        keys = list(OrderedDict.fromkeys((t.subject, t.hand, t.condition) for t in index.trials))

        inputs, reports = [], []
        for key in keys:
            name = cell_name(*key)
            csv_path = self.path("features", name, "features.csv")
            matrix = artifacts.load_features(csv_path)
            inputs.append(csv_path)
            seed = derive_seed(self.config.seed, "classify", name)
            params = MlpParams.from_config(cfg.mlp, seed)
            try:
                if cfg.mlp.hidden_candidates:
                    reduced = matrix.take_columns(select_top_k(matrix, k).selected_columns)
                    params.hidden, _ = sweep_hidden_nodes(reduced, cfg.mlp.hidden_candidates, params,
                                                          [seed + i for i in range(cfg.mlp.sweep_seeds)])
                result = evaluate_cell(matrix, k, cfg.shrinkage, params,
                                       nested=nested, outlier_filter=cfg.md_outlier_filter)
            except (InsufficientTrials, MissingClass) as e:
                logger.warning(f"{name}: skipped ({e.detail})")
                continue
            md_columns = result.selection.selected_columns if result.selection else []
            if cfg.mlp.hidden_candidates:
                result.notes.append(f"hidden nodes {params.hidden} from sweep")
            common = dict(subject=key[0], hand=key[1], condition=key[2],
                          config_hash=self.config_hash, seed=seed, notes=result.notes)
            reports.append(ClassifierReport(
                method=Method.MD, confusion=result.md_confusion, ssa=ssa(result.md_confusion),
                protocol="leave-one-out", selected_columns=md_columns,
                n_trials=result.md_confusion.n_wrist + result.md_confusion.n_finger, **common))
            reports.append(ClassifierReport(
                method=Method.ANN, confusion=result.ann_confusion, ssa=ssa(result.ann_confusion),
                protocol=f"stratified holdout {cfg.mlp.train_ratio:g} train",
                selected_columns=result.ann_selected_columns,
                n_trials=result.ann_confusion.n_wrist + result.ann_confusion.n_finger, **common))
            logger.info(f"{name}: MD SSA {reports[-2].ssa:.3f}, ANN SSA {reports[-1].ssa:.3f}")

        report_path = self.path(REPORT_JSON)
        artifacts.write_json(report_path, {
            "config_hash": self.config_hash,
            "seed": self.config.seed,
            "reports": [r.model_dump(mode="json") for r in reports],
        })
        return inputs, [report_path]

    def _run_report(self):
        report_path = self.path(REPORT_JSON)
        if not os.path.exists(report_path):
            raise MissingDependency("classify", f"{report_path} not found")
        reports = [ClassifierReport.model_validate(r) for r in artifacts.read_json(report_path)["reports"]]
        service = ReportService(self.output_dir)
        outputs = service.write_tables(reports)

        cfg = self.config.erders
        for key in OrderedDict.fromkeys((r.subject, r.hand, r.condition) for r in reports):
            name = cell_name(*key)
            directory = self.path("select", name)
            selected = artifacts.read_json(os.path.join(directory, COMPONENTS_FILE))["selected"]
            curves = artifacts.load_erd_curves(os.path.join(directory, ERD_CURVES_FILE),
                                               cfg.band_hz, cfg.reference_window_s)
            outputs.extend(service.write_erd_plots(name, selected, curves, cfg.movement_window_s))
        return [report_path], outputs


def run_stage(stage: str, config: PipelineConfig) -> List[str]:
    service = PipelineService(config)
    if stage == "run-all":
        return service.run_all()
    return service.run_stage(stage)
