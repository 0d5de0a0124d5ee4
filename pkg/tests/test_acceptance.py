# End-to-end checks on synthetic data with known ground truth
import numpy as np
import pytest

from bci_hand.core.config import build_config
from bci_hand.models.schemas import ClassLabel, Condition, Hand, MotorSourceConfig, SynthConfig
from bci_hand.services.pipeline_service import PipelineService
from bci_hand.utils.artifacts import load_features, read_json
from bci_hand.utils.classify import MlpParams, permutation_null
from bci_hand.utils.ica import InfomaxParams, amari_index, fit_ica
from bci_hand.utils.synth import generate

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    config = build_config({
        "dataset_dir": str(root / "dataset"),
        "output_dir": str(root / "output"),
        "seed": 20100813,
        "synth": {"seed": 42},
    })
    PipelineService(config).run_all()
    return config, root / "output"


def test_every_cell_discriminates(full_run):
    _, out = full_run
    reports = read_json(str(out / "report.json"))["reports"]
    assert len(reports) == 2 * 4
    for r in reports:
        assert r["ssa"] >= 0.85, f"{r['method']} {r['hand']} {r['condition']}: {r['ssa']:.3f}"


def test_permuted_labels_sit_at_chance(full_run):
    config, out = full_run
    cell = out / "features" / "S01_RH_Real"
    columns = read_json(str(cell / "selection.json"))["selected_columns"]
    matrix = load_features(str(cell / "features.csv")).take_columns(columns)
    null = permutation_null(matrix, len(columns), config.classify.shrinkage,
                            MlpParams.from_config(config.classify.mlp, 0), seeds=range(100))
    md, ann = np.array(null["MD"]), np.array(null["ANN"])
    assert md.mean() == pytest.approx(0.5, abs=0.03)
    assert ann.mean() == pytest.approx(0.5, abs=0.03)
    assert md.min() >= 0.3 and md.max() <= 0.7
    assert ann.min() >= 0.15 and ann.max() <= 0.85


def test_ica_recovers_sources_at_high_snr():
    motor = [
        MotorSourceConfig(center_hz=10.0, burst_sigma=0.6,
                          erd_depth_by_class={ClassLabel.WRIST: 0.6, ClassLabel.FINGER: 0.1}),
        MotorSourceConfig(center_hz=20.0, burst_sigma=0.6, amp_uv=4.0,
                          erd_depth_by_class={ClassLabel.WRIST: 0.35, ClassLabel.FINGER: 0.25}),
    ]
    config = SynthConfig(n_sources=10, n_channels=16, motor_sources=motor,
                         noise={"snr_db": 30.0}, hands=[Hand.RIGHT], conditions=[Condition.REAL],
                         seed=99)
    runs, truth = generate(config)
    data = runs[0].recording.data
    result = fit_ica(data, InfomaxParams(seed=3), n_components=10)

    assert amari_index(result.filters, truth.mixing) <= 0.1
    recovered = result.filters @ (data - result.whitening.mean[:, None])
    for idx in range(len(motor)):
        corr = [abs(np.corrcoef(truth.sources[0][idx], row)[0, 1]) for row in recovered]
        assert max(corr) >= 0.95
