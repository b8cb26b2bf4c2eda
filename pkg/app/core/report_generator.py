"""
Report generation for experiment results.

Provides:
- CSV export of per-round traces, run summaries, batch grids and aggregates
- config.json provenance record
- Optional Excel workbook using openpyxl
"""
import json
import logging
import os
from typing import Any, Dict, List, Optional

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from app.core.config import settings
from app.core.exceptions import BanditError
from app.core.runner import instance_seeds
from app.schemas.experiment import ExperimentConfig
from app.schemas.records import (
    AGGREGATE_COLUMNS,
    BATCH_COLUMNS,
    PER_ROUND_COLUMNS,
    SUMMARY_COLUMNS,
    RunRecord,
    RunStatus,
)

logger = logging.getLogger(__name__)


class OutputError(BanditError):
    """Writing a result file failed."""

    exit_code = 3
    kind = "OutputError"


# =============================================================================
# Tables
# =============================================================================

def per_round_frame(records: List[RunRecord]) -> pd.DataFrame:
    frames = []
    for record in records:
        trace = record.rounds
        if not len(trace):
            continue
        frame = pd.DataFrame({
            "t": trace.t,
            "batch_index": trace.batch_index,
            "action": trace.action,
            "reward": trace.reward,
            "inst_regret": trace.inst_regret,
            "cum_regret": trace.cum_regret,
        })
        frame.insert(0, "run_id", record.run_id)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=PER_ROUND_COLUMNS)
    return pd.concat(frames, ignore_index=True)[PER_ROUND_COLUMNS]


def summary_frame(records: List[RunRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.summary_row() for r in records], columns=SUMMARY_COLUMNS)


def batches_frame(records: List[RunRecord]) -> pd.DataFrame:
    rows = [
        {"run_id": r.run_id, **row.model_dump()}
        for r in records
        for row in r.batches
    ]
    return pd.DataFrame(rows, columns=BATCH_COLUMNS)


def aggregate_frame(records: List[RunRecord]) -> pd.DataFrame:
    """Per-algorithm regret statistics over completed runs, in first-seen algorithm order."""
    finished = summary_frame([r for r in records if r.status == RunStatus.OK])
    if finished.empty:
        return pd.DataFrame(columns=AGGREGATE_COLUMNS)
    grouped = finished.groupby("algo", sort=False)
    frame = pd.DataFrame({
        "n_runs": grouped["total_regret"].count(),
        "median_regret": grouped["total_regret"].median(),
        "mean_regret": grouped["total_regret"].mean(),
        "std_regret": grouped["total_regret"].std(ddof=0),
        "mean_updates": grouped["n_updates"].mean(),
        "median_wall_time_ms": grouped["wall_time_ms"].median(),
    })
    return frame.reset_index()[AGGREGATE_COLUMNS]


def provenance(records: List[RunRecord], config: Optional[ExperimentConfig]) -> Dict[str, Any]:
    """Resolved config, code version, seeds and per-run metadata."""
    document: Dict[str, Any] = {
        "app": settings.APP_NAME,
        "version": settings.APP_VERSION,
        "runs": {
            r.run_id: {
                "algo": r.algo,
                "instance": r.instance,
                "seed": r.seed,
                "status": r.status.value,
                "error": r.error,
                "metadata": r.metadata,
            }
            for r in records
        },
    }
    if config is not None:
        document["config"] = config.model_dump(mode="json")
        document["profile"] = config.profile.value
        document["instance_seeds"] = {str(i): s for i, s in instance_seeds(config).items()}
    return document


# =============================================================================
# Writers
# =============================================================================

def _write_csv(frame: pd.DataFrame, path: str) -> None:
    try:
        frame.to_csv(path, index=False, float_format=settings.CSV_FLOAT_FORMAT, lineterminator="\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}", field=path) from exc


def emit_outputs(records: List[RunRecord], out_dir: str,
                 config: Optional[ExperimentConfig] = None, xlsx: bool = False) -> Dict[str, str]:
    """Write every result file into ``out_dir``; returns file name -> path."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out_dir}: {exc.strerror or exc}", field=out_dir) from exc

    paths = {name: os.path.join(out_dir, name) for name in (
        "per_round.csv", "summary.csv", "batches.csv", "aggregate.csv", "config.json",
    )}
    _write_csv(per_round_frame(records), paths["per_round.csv"])
    _write_csv(summary_frame(records), paths["summary.csv"])
    _write_csv(batches_frame(records), paths["batches.csv"])
    aggregate = aggregate_frame(records)
    _write_csv(aggregate, paths["aggregate.csv"])

    try:
        with open(paths["config.json"], "w", encoding="utf-8") as fh:
            json.dump(provenance(records, config), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OutputError(f"cannot write {paths['config.json']}: {exc.strerror or exc}",
                          field=paths["config.json"]) from exc

    if xlsx:
        paths["report.xlsx"] = os.path.join(out_dir, "report.xlsx")
        excel_generator.generate_experiment_report(records, aggregate, paths["report.xlsx"])

    logger.info("wrote %d run(s) to %s", len(records), out_dir)
    return paths


# =============================================================================
# Excel
# =============================================================================

class ExcelReportGenerator:
    """Excel report generation using openpyxl."""

    def __init__(self):
        self.header_font = Font(bold=True, color='FFFFFF')
        self.header_fill = PatternFill(start_color='2C3E50', end_color='2C3E50', fill_type='solid')
        self.header_alignment = Alignment(horizontal='center', vertical='center')
        self.thin_border = Border(
            left=Side(style='thin'),
            right=Side(style='thin'),
            top=Side(style='thin'),
            bottom=Side(style='thin')
        )
        self.aborted_fill = PatternFill(start_color='FFA500', end_color='FFA500', fill_type='solid')

    def _apply_header_style(self, ws, row: int, start_col: int, end_col: int):
        """Apply header style to a row."""
        for col in range(start_col, end_col + 1):
            cell = ws.cell(row=row, column=col)
            cell.font = self.header_font
            cell.fill = self.header_fill
            cell.alignment = self.header_alignment
            cell.border = self.thin_border

    def _auto_adjust_columns(self, ws):
        """Auto-adjust column widths."""
        for column in ws.columns:
            max_length = max((len(str(cell.value)) for cell in column if cell.value is not None), default=0)
            ws.column_dimensions[get_column_letter(column[0].column)].width = min(max_length + 2, 50)

    def _write_frame(self, ws, frame: pd.DataFrame, first_row: int = 1):
        headers = list(frame.columns)
        for col, header in enumerate(headers, 1):
            ws.cell(row=first_row, column=col, value=header)
        self._apply_header_style(ws, first_row, 1, len(headers))
        for row, values in enumerate(frame.itertuples(index=False), first_row + 1):
            for col, value in enumerate(values, 1):
                if pd.isna(value):
                    value = None
                ws.cell(row=row, column=col, value=value.item() if hasattr(value, "item") else value)
        self._auto_adjust_columns(ws)

    def generate_experiment_report(self, records: List[RunRecord], aggregate: pd.DataFrame,
                                   filepath: str) -> str:
        """Summary, Aggregate and Batches sheets."""
        wb = Workbook()

        ws_summary = wb.active
        ws_summary.title = "Summary"
        summary = summary_frame(records)
        self._write_frame(ws_summary, summary)
        status_col = SUMMARY_COLUMNS.index("status") + 1
        for row in range(2, len(summary) + 2):
            cell = ws_summary.cell(row=row, column=status_col)
            if cell.value == RunStatus.ABORTED.value:
                cell.fill = self.aborted_fill

        self._write_frame(wb.create_sheet("Aggregate"), aggregate)
        self._write_frame(wb.create_sheet("Batches"), batches_frame(records))

        try:
            wb.save(filepath)
        except OSError as exc:
            raise OutputError(f"cannot write {filepath}: {exc.strerror or exc}", field=filepath) from exc
        return filepath


# Singleton instance
excel_generator = ExcelReportGenerator()
