# ERD/ERS line plots
# bci_hand/utils/plotting.py
import logging
from typing import Dict, Optional, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from bci_hand.models.recording import ErdCurve  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed salt and no date stamp keep the SVG bytes stable across runs
matplotlib.rcParams["svg.hashsalt"] = "bci-hand"
SVG_METADATA = {"Date": None}


def plot_erd_curves(curves: Dict[str, ErdCurve], path: str, title: str,
                    movement_window_s: Optional[Tuple[float, float]] = None) -> str:
    """One line per class for a single component, reference window shaded"""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    reference = None
    for label, curve in curves.items():
        ax.plot(curve.times_s, curve.values_pct, label=label, linewidth=1.2)
        reference = curve.reference_window_s
    if reference is not None:
        ax.axvspan(*reference, color="0.85", label="reference")
    if movement_window_s is not None:
        ax.axvspan(*movement_window_s, color="tab:orange", alpha=0.12, label="movement")
    ax.axhline(0.0, color="0.4", linewidth=0.8)
    ax.axvline(0.0, color="0.4", linewidth=0.8, linestyle="--")
    ax.set_xlabel("time relative to Get Ready (s)")
    ax.set_ylabel("ERD/ERS (%)")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    logger.debug(f"Wrote {path}")
    return path
