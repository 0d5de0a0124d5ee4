# Stage artifact persistence: sidecars, CSV tables, manifests
# bci_hand/utils/artifacts.py
import hashlib
import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from bci_hand.core.errors import MissingDependency
from bci_hand.models.recording import ErdCurve, FeatureMatrix, UnmixingResult, WhiteningTransform
from bci_hand.models.schemas import ClassLabel, SelectionResult, StageManifest, TrialMeta

logger = logging.getLogger(__name__)

ICA_JSON = "ica.json"
ICA_BIN = "ica.w.f32"
MATRIX_DTYPE = np.dtype("<f4")
FLOAT_FORMAT = "%.8g"
MANIFEST_DIR = "manifests"

# Written to ica.w.f32 in this order, each block C-contiguous
_UNMIXING_BLOCKS = ("whitening_mean", "whitening_matrix", "eigenvalues", "W", "mixing")

META_COLUMNS = ["subject", "hand", "condition", "movement", "trial_index", "label"]


def write_json(path: str, data: Any):
    """Sorted, indented JSON so reruns produce identical bytes"""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ICA sidecar
def save_unmixing(result: UnmixingResult, directory: str) -> List[str]:
    """ica.json describes the blocks of ica.w.f32 (little-endian float32, row-major)"""
    os.makedirs(directory, exist_ok=True)
    arrays = {
        "whitening_mean": result.whitening.mean,
        "whitening_matrix": result.whitening.matrix,
        "eigenvalues": result.whitening.eigenvalues,
        "W": result.W,
        "mixing": result.mixing,
    }
    blocks, offset = [], 0
    bin_path = os.path.join(directory, ICA_BIN)
    with open(bin_path, "wb") as f:
        for name in _UNMIXING_BLOCKS:
            array = np.ascontiguousarray(arrays[name], dtype=MATRIX_DTYPE)
            f.write(array.tobytes())
            blocks.append({"name": name, "shape": list(array.shape), "offset": offset})
            offset += array.size
    json_path = os.path.join(directory, ICA_JSON)
    write_json(json_path, {
        "binary": ICA_BIN,
        "dtype": MATRIX_DTYPE.str,
        "blocks": blocks,
        "n_components": result.n_components,
        "seed": result.seed,
        "n_restarts": result.n_restarts,
        "converged": result.converged,
        "iteration_log": [list(entry) for entry in result.iteration_log],
    })
    return [json_path, bin_path]


def load_unmixing(directory: str) -> UnmixingResult:
    json_path = os.path.join(directory, ICA_JSON)
    if not os.path.exists(json_path):
        raise MissingDependency("ica", f"no {ICA_JSON} in {directory}")
    meta = read_json(json_path)
    raw = np.fromfile(os.path.join(directory, meta["binary"]), dtype=np.dtype(meta["dtype"]))
    arrays: Dict[str, np.ndarray] = {}
    for block in meta["blocks"]:
        size = int(np.prod(block["shape"]))
        arrays[block["name"]] = raw[block["offset"]:block["offset"] + size].reshape(block["shape"]).astype(float)
    whitening = WhiteningTransform(mean=arrays["whitening_mean"], matrix=arrays["whitening_matrix"],
                                   eigenvalues=arrays["eigenvalues"])
    return UnmixingResult(whitening=whitening, W=arrays["W"], mixing=arrays["mixing"],
                          iteration_log=[tuple(entry) for entry in meta["iteration_log"]],
                          seed=meta["seed"], n_restarts=meta["n_restarts"],
                          converged=meta["converged"])


def component_name(component: int) -> str:
    return f"IC{component:02d}"


def save_scalp_maps(result: UnmixingResult, channel_names: Sequence[str], path: str) -> str:
    """Mixing columns, one per component, for visual inspection of the topographies"""
    frame = pd.DataFrame(result.mixing, index=list(channel_names),
                         columns=[component_name(c) for c in range(result.n_components)])
    frame.index.name = "channel"
    frame.to_csv(path, float_format=FLOAT_FORMAT)
    return path


# ERD curves
def save_erd_curves(curves: Dict[str, Sequence[ErdCurve]], path: str) -> str:
    """One column per (component, group); groups are e.g. "all", "Wrist", "Finger" """
    columns: Dict[str, np.ndarray] = {}
    times = None
    for group, group_curves in curves.items():
        for curve in group_curves:
            times = curve.times_s if times is None else times
            columns[f"{component_name(curve.component)}_{group}"] = curve.values_pct
    frame = pd.DataFrame({"time_s": times, **columns})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def load_erd_curves(path: str, band, reference_window_s) -> Dict[str, List[ErdCurve]]:
    frame = pd.read_csv(path)
    times = frame["time_s"].to_numpy()
    out: Dict[str, List[ErdCurve]] = {}
    for column in frame.columns[1:]:
        name, group = column.split("_", 1)
        out.setdefault(group, []).append(
            ErdCurve(component=int(name[2:]), band=tuple(band), times_s=times,
                     values_pct=frame[column].to_numpy(), reference_window_s=tuple(reference_window_s)))
    return out


# Feature matrices
def feature_column_name(column) -> str:
    component, window, band = column
    return f"{component_name(component)}_w{window:02d}_b{band}"


def _parse_feature_column(name: str):
    ic, window, band = name.split("_")
    return int(ic[2:]), int(window[1:]), int(band[1:])


def save_features(matrix: FeatureMatrix, csv_path: str, json_path: str,
                  metadata: Optional[Dict[str, Any]] = None) -> List[str]:
    """CSV with trial provenance columns then one column per (component, window, band)"""
    meta_frame = pd.DataFrame([{
        "subject": m.subject, "hand": m.hand.value, "condition": m.condition.value,
        "movement": m.movement.value, "trial_index": m.trial_index, "label": label.value,
    } for m, label in zip(matrix.meta, matrix.labels)], columns=META_COLUMNS)
    values = pd.DataFrame(matrix.values, columns=[feature_column_name(c) for c in matrix.columns])
    pd.concat([meta_frame, values], axis=1).to_csv(csv_path, index=False, float_format="%.17g")
    write_json(json_path, {
        "n_trials": int(matrix.values.shape[0]),
        "n_features": matrix.n_features,
        "columns": [list(c) for c in matrix.columns],
        **(metadata or {}),
    })
    return [csv_path, json_path]


def load_features(csv_path: str) -> FeatureMatrix:
    if not os.path.exists(csv_path):
        raise MissingDependency("features", f"{csv_path} not found")
    frame = pd.read_csv(csv_path, dtype={"subject": str}, float_precision="round_trip")
    metas = [TrialMeta(subject=row.subject, hand=row.hand, condition=row.condition,
                       movement=row.movement, trial_index=int(row.trial_index))
             for row in frame[META_COLUMNS].itertuples(index=False)]
    labels = [ClassLabel(value) for value in frame["label"]]
    feature_names = [c for c in frame.columns if c not in META_COLUMNS]
    return FeatureMatrix(values=frame[feature_names].to_numpy(dtype=float),
                         columns=[_parse_feature_column(c) for c in feature_names],
                         labels=labels, meta=metas)


def save_selection(selection: SelectionResult, columns: Sequence, path: str) -> str:
    write_json(path, {
        "selected_columns": selection.selected_columns,
        "selected_provenance": [list(columns[c]) for c in selection.selected_columns],
        "bd_scores": selection.bd_scores,
    })
    return path


# Manifests
def manifest_path(output_dir: str, stage: str) -> str:
    return os.path.join(output_dir, MANIFEST_DIR, f"{stage}.json")


def package_versions() -> Dict[str, str]:
    import matplotlib
    import pydantic
    import scipy

    from bci_hand import __version__
    return {"bci_hand": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pd.__version__, "matplotlib": matplotlib.__version__,
            "pydantic": pydantic.__version__}


def write_manifest(output_dir: str, stage: str, config_hash: str, inputs: Iterable[str],
                   outputs: Iterable[str]) -> StageManifest:
    """Record input hashes and outputs; paths are stored relative to output_dir"""
    def rel(path: str) -> str:
        return os.path.relpath(path, output_dir).replace(os.sep, "/")

    manifest = StageManifest(
        stage=stage,
        config_hash=config_hash,
        inputs={rel(p): file_sha256(p) for p in sorted(set(inputs))},
        outputs=sorted(rel(p) for p in set(outputs)),
        versions=package_versions(),
        created_at=datetime.utcnow().isoformat(),
    )
    write_json(manifest_path(output_dir, stage), manifest.model_dump(mode="json"))
    logger.info(f"Stage {stage}: wrote manifest with {len(manifest.outputs)} outputs")
    return manifest


def read_manifest(output_dir: str, stage: str) -> StageManifest:
    path = manifest_path(output_dir, stage)
    if not os.path.exists(path):
        raise MissingDependency(stage)
    return StageManifest.model_validate(read_json(path))
