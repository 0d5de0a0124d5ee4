import math

import pandas as pd
import pytest

from bci_hand.core.errors import EmptyReport
from bci_hand.models.schemas import ClassifierReport, Condition, ConfusionCounts, Hand, Method
from bci_hand.services.report_service import ReportService


def report(subject, hand, condition, ssa, method=Method.MD):
    return ClassifierReport(method=method, subject=subject, hand=hand, condition=condition,
                            confusion=ConfusionCounts(t_w=8, f_w=2, t_f=6, f_f=4), ssa=ssa,
                            protocol="loo", n_trials=100, config_hash="abc", seed=1)


@pytest.fixture
def reports():
    return [
        report("S01", Hand.RIGHT, Condition.REAL, 0.9),
        report("S01", Hand.LEFT, Condition.REAL, 0.8),
        report("S02", Hand.RIGHT, Condition.IMAGINED, 0.7),
        report("S01", Hand.RIGHT, Condition.REAL, 0.6, method=Method.ANN),
    ]


def test_accuracy_table_layout(reports):
    table = ReportService.accuracy_table(reports, Method.MD)
    assert list(table.columns) == ["Real RH", "Real LH", "Imaginary RH", "Imaginary LH"]
    assert list(table.index) == ["S01", "S02"]
    assert table.loc["S01", "Real RH"] == pytest.approx(90.0)
    assert math.isnan(table.loc["S02", "Real RH"])


def test_grand_average_skips_missing_cells(reports):
    table = ReportService.accuracy_table(reports, Method.MD)
    assert ReportService.grand_average(table) == pytest.approx(80.0)
    averaged = ReportService.with_subject_average(table)
    assert averaged.loc["Subject Average", "Real RH"] == pytest.approx(90.0)
    empty = pd.DataFrame(float("nan"), index=["S01"], columns=["Real RH"])
    assert math.isnan(ReportService.grand_average(empty))


def test_render_text(tmp_path, reports):
    text = ReportService(str(tmp_path)).render_text(reports)
    assert "CLASSIFICATION ACCURACY (%) FOR EEG DISCRIMINATION - MD" in text
    assert "CLASSIFICATION ACCURACY (%) FOR EEG DISCRIMINATION - ANN" in text
    assert "Grand Average 80 %" in text
    assert "Grand Average 60 %" in text
    assert any(line.startswith("S02") and " - " in line for line in text.splitlines())


def test_only_methods_with_results_are_rendered(tmp_path, reports):
    text = ReportService(str(tmp_path)).render_text(reports[:3])
    assert "- ANN" not in text


def test_write_tables(tmp_path, reports):
    paths = ReportService(str(tmp_path)).write_tables(reports)
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["report.csv", "report.txt"]
    frame = pd.read_csv(tmp_path / "report.csv", index_col=0, na_values=["-"])
    md = frame[frame["Method"] == "MD"]
    assert md.loc["Grand Average", "Real RH"] == pytest.approx(80.0)
    assert (tmp_path / "report.txt").read_text().startswith("CLASSIFICATION ACCURACY")


def test_empty_report(tmp_path):
    with pytest.raises(EmptyReport) as exc:
        ReportService(str(tmp_path)).write_tables([])
    assert exc.value.exit_code == 5
