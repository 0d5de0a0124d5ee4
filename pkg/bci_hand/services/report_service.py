# Accuracy tables and ERD plots
# bci_hand/services/report_service.py
import logging
import os
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from bci_hand.core.errors import EmptyReport
from bci_hand.models.recording import ErdCurve
from bci_hand.models.schemas import ClassifierReport, ClassLabel, Condition, Hand, Method
from bci_hand.utils.artifacts import component_name
from bci_hand.utils.plotting import plot_erd_curves

logger = logging.getLogger(__name__)

TABLE_COLUMNS: List[Tuple[Condition, Hand]] = [
    (Condition.REAL, Hand.RIGHT),
    (Condition.REAL, Hand.LEFT),
    (Condition.IMAGINED, Hand.RIGHT),
    (Condition.IMAGINED, Hand.LEFT),
]
CONDITION_HEADERS = {Condition.REAL: "Real", Condition.IMAGINED: "Imaginary"}
SUBJECT_AVERAGE = "Subject Average"
MISSING = "-"


def column_header(condition: Condition, hand: Hand) -> str:
    return f"{CONDITION_HEADERS[condition]} {hand.short}"


class ReportService:
    """Tables in the layout: rows are subjects, columns Real/Imaginary x RH/LH"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir

    @staticmethod
    def accuracy_table(reports: Sequence[ClassifierReport], method: Method) -> pd.DataFrame:
        """SSA in percent; NaN where a (subject, hand, condition) cell has no result"""
        subjects = sorted({r.subject for r in reports})
        headers = [column_header(c, h) for c, h in TABLE_COLUMNS]
        table = pd.DataFrame(np.nan, index=subjects, columns=headers)
        table.index.name = "Subject"
        for r in reports:
            if r.method is method:
                table.loc[r.subject, column_header(r.condition, r.hand)] = 100.0 * r.ssa
        return table

    @staticmethod
    def grand_average(table: pd.DataFrame) -> float:
        """Mean over every populated cell"""
        values = table.to_numpy().ravel()
        values = values[~np.isnan(values)]
        return float(values.mean()) if values.size else float("nan")

    @staticmethod
    def with_subject_average(table: pd.DataFrame) -> pd.DataFrame:
        averaged = table.copy()
        averaged.loc[SUBJECT_AVERAGE] = table.mean(axis=0, skipna=True)
        return averaged

    def render_text(self, reports: Sequence[ClassifierReport]) -> str:
        blocks = []
        for method in Method:
            if not any(r.method is method for r in reports):
                continue
            table = self.accuracy_table(reports, method)
            shown = self.with_subject_average(table).apply(
                lambda col: col.map(lambda v: MISSING if pd.isna(v) else f"{v:.0f}"))
            blocks.append("\n".join([
                f"CLASSIFICATION ACCURACY (%) FOR EEG DISCRIMINATION - {method.value}",
                shown.to_string(),
                f"Grand Average {self.grand_average(table):.0f} %",
            ]))
        return "\n\n".join(blocks) + "\n"

    def write_tables(self, reports: Sequence[ClassifierReport]) -> List[str]:
        """report.csv and report.txt; EmptyReport when there is nothing to tabulate"""
        if not reports:
            raise EmptyReport("no classifier results to report")
        frames = []
        for method in Method:
            table = self.with_subject_average(self.accuracy_table(reports, method))
            table.insert(0, "Method", method.value)
            grand = pd.DataFrame([[method.value] + [np.nan] * (table.shape[1] - 1)],
                                 columns=table.columns, index=["Grand Average"])
            grand.iloc[0, 1] = self.grand_average(self.accuracy_table(reports, method))
            frames.append(pd.concat([table, grand]))
        combined = pd.concat(frames)
        combined.index.name = "Subject"

        csv_path = os.path.join(self.output_dir, "report.csv")
        combined.to_csv(csv_path, float_format="%.2f", na_rep=MISSING)
        txt_path = os.path.join(self.output_dir, "report.txt")
        with open(txt_path, "w", encoding="utf-8") as f:
            f.write(self.render_text(reports))
        logger.info(f"Wrote {csv_path} and {txt_path}")
        return [csv_path, txt_path]

    def write_erd_plots(self, cell: str, selected: Sequence[int], curves: Dict[str, List[ErdCurve]],
                        movement_window_s) -> List[str]:
        """erd_<cell>_ICxx.svg per selected component, one line per class"""
        plot_dir = os.path.join(self.output_dir, "plots")
        os.makedirs(plot_dir, exist_ok=True)
        paths = []
        for component in selected:
            per_class = {label.value: curve
                         for label in ClassLabel
                         for curve in curves.get(label.value, [])
                         if curve.component == component}
            if not per_class:
                continue
            path = os.path.join(plot_dir, f"erd_{cell}_{component_name(component)}.svg")
            paths.append(plot_erd_curves(per_class, path, f"{cell} {component_name(component)}",
                                         movement_window_s))
        return paths
