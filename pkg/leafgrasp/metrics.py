"""Approach, grasp and leaves-per-batch (LPB) statistics over batch runs."""

import logging
from dataclasses import dataclass
from typing import Any, Sequence

import pandas as pd
from rich.console import Console
from rich.table import Table

from leafgrasp.exceptions import EmptyInputError
from leafgrasp.workflow import BatchRun

logger = logging.getLogger(__name__)

LPB_LEVELS: tuple[int, ...] = (1, 2, 3)
METRICS_COLUMNS: list[str] = [
    "setting",
    "total_approaches",
    "grasp_rate",
    "lpb1_avail",
    "lpb2_avail",
    "lpb3_avail",
    "lpb1_success",
    "lpb2_success",
    "lpb3_success",
]


def percentage(numerator: int, denominator: int) -> float:
    """Return ``100 * numerator / denominator``, or 0 when nothing was counted."""
    if denominator == 0:
        return 0.0
    return 100.0 * numerator / denominator


@dataclass(frozen=True)
class LPBReport:
    """Counts and percentages of one experimental setting."""

    setting: str
    batches: int
    total_approaches: int
    successful_approaches: int
    available_batches: tuple[int, ...]
    successful_batches: tuple[int, ...]

    @property
    def grasp_rate(self) -> float:
        """Successful approaches over all approaches, in percent."""
        return percentage(self.successful_approaches, self.total_approaches)

    def availability(self, k: int) -> float:
        """Percentage of batches with at least ``k`` approached leaves."""
        return percentage(self.available_batches[k - 1], self.batches)

    def success(self, k: int) -> float:
        """Among batches with at least ``k`` approached leaves, the percentage with ``k`` successes."""
        return percentage(self.successful_batches[k - 1], self.available_batches[k - 1])

    def to_row(self) -> dict[str, Any]:
        """Return the metrics.csv row."""
        row: dict[str, Any] = {
            "setting": self.setting,
            "total_approaches": self.total_approaches,
            "grasp_rate": self.grasp_rate,
        }
        for k in LPB_LEVELS:
            row[f"lpb{k}_avail"] = self.availability(k)
        for k in LPB_LEVELS:
            row[f"lpb{k}_success"] = self.success(k)
        return row


def lpb_metrics(runs: Sequence[BatchRun], setting: str = "all") -> LPBReport:
    """Aggregate batch runs into an :class:`LPBReport`.

    A batch counts towards k-LPB when at least ``k`` distinct leaves were approached,
    that is had a trajectory executed; it is a k-LPB success when at least ``k``
    of them were grasped and measured.

    Raises
    ------
    EmptyInputError
        If ``runs`` is empty.
    """
    if len(runs) == 0:
        raise EmptyInputError()

    approached = [len(run.approached_leaves) for run in runs]
    grasped = [len(run.grasped_leaves) for run in runs]
    report = LPBReport(
        setting=setting,
        batches=len(runs),
        total_approaches=sum(run.approach_count for run in runs),
        successful_approaches=sum(run.success_count for run in runs),
        available_batches=tuple(sum(count >= k for count in approached) for k in LPB_LEVELS),
        successful_batches=tuple(
            sum(leaves >= k and successes >= k for leaves, successes in zip(approached, grasped)) for k in LPB_LEVELS
        ),
    )
    logger.info(
        "Setting %s: %d batches, %d approaches, %.1f%% grasped",
        setting,
        report.batches,
        report.total_approaches,
        report.grasp_rate,
    )
    return report


def lpb_report_table(settings: dict[str, Sequence[BatchRun]], combined: bool = True) -> pd.DataFrame:
    """One metrics row per setting, plus a ``combined`` row over every batch."""
    if len(settings) == 0:
        raise EmptyInputError()
    reports = [lpb_metrics(runs, setting) for setting, runs in settings.items()]
    if combined and len(settings) > 1:
        reports.append(lpb_metrics([run for runs in settings.values() for run in runs], "combined"))
    return pd.DataFrame([report.to_row() for report in reports], columns=METRICS_COLUMNS)


def display_reports(table: pd.DataFrame) -> None:
    """Print a metrics table to the console."""
    rich_table = Table(title="Leaf Grasping Metrics", show_header=True, header_style="bold magenta")
    rich_table.add_column("Setting", style="cyan")
    rich_table.add_column("Approaches", style="green", justify="right")
    rich_table.add_column("Grasp rate %", style="yellow", justify="right")
    for k in LPB_LEVELS:
        rich_table.add_column(f"{k}-LPB avail. %", style="blue", justify="right")
    for k in LPB_LEVELS:
        rich_table.add_column(f"{k}-LPB success %", style="red", justify="right")

    for row in table.to_dict(orient="records"):
        rich_table.add_row(
            str(row["setting"]),
            str(row["total_approaches"]),
            *(f"{row[column]:.0f}" for column in METRICS_COLUMNS[2:]),
        )

    console = Console()
    console.print(rich_table)
