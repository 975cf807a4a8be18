"""
Export service writing experiment results as CSV.
One summary file per experiment run, plus optional per-replicate detail.
"""

from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import pandas as pd
from loguru import logger

SUMMARY_COLUMNS = (
    "experiment",
    "a",
    "sigma",
    "n",
    "R",
    "seed",
    "statistic",
    "value",
    "target_exact",
    "target_asymptotic",
    "tolerance",
    "pass",
    "config_hash",
    "version",
)

PARTIAL_MARKER = "# PARTIAL OUTPUT: runtime budget exceeded"


class CsvExportService:
    """Service for writing result tables (UTF-8, LF line endings)."""

    def __init__(self, float_format: Optional[str] = None):
        self.float_format = float_format

    def _write(self, frame: pd.DataFrame, path: Path, partial: bool) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(
            path,
            index=False,
            encoding="utf-8",
            lineterminator="\n",
            float_format=self.float_format,
        )
        if partial:
            with path.open("a", encoding="utf-8", newline="\n") as fh:
                fh.write(PARTIAL_MARKER + "\n")
        logger.info(f"Wrote {len(frame)} row(s) to {path}{' (partial)' if partial else ''}")
        return path

    def summary_frame(self, rows: Iterable[dict]) -> pd.DataFrame:
        """Rows in the fixed summary schema; missing fields stay empty."""
        rows = list(rows)
        unknown = set().union(*(r.keys() for r in rows)) - set(SUMMARY_COLUMNS)
        if unknown:
            raise ValueError(f"Unknown summary columns: {sorted(unknown)}")
        return pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))

    def write_summary(
        self,
        rows: Iterable[dict],
        path: Union[str, Path],
        partial: bool = False,
    ) -> Path:
        return self._write(self.summary_frame(rows), Path(path), partial)

    def write_detail(
        self,
        rows: Iterable[dict],
        path: Union[str, Path],
        columns: Sequence[str],
        partial: bool = False,
    ) -> Path:
        """Per-replicate or plot-data table with its own column list."""
        frame = pd.DataFrame(list(rows), columns=list(columns))
        return self._write(frame, Path(path), partial)


# Singleton instance
csv_export_service = CsvExportService()
