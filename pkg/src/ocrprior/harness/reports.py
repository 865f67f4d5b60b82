"""Deterministic CSV and JSON report writers."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from ..stats import delta_csv
from ..taxonomy import write_error_csv
from .runs import RQ1Result, RQ2Result, RQ3Result


def _plain(obj: Any) -> Any:
    if is_dataclass(obj) and not isinstance(obj, type):
        return _plain(asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(_plain(k)): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_rows(path: Path, rows: Sequence[dict], columns: Iterable[str] | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _plain(row.get(k)) for k in columns})


def write_deltas(path: Path, deltas) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(delta_csv(deltas), encoding="utf-8")


def write_rq1(result: RQ1Result, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "rq1_pages.csv", result.page_rows)
    write_error_csv(result.records, out / "rq1_errors.csv")
    write_json(out / "rq1_summary.json", {
        system: {prof: {m: s.as_percent() for m, s in by_m.items()} for prof, by_m in by_prof.items()}
        for system, by_prof in result.summaries.items()
    })
    write_json(out / "rq1_shares.json", {s: sh.to_dict() for s, sh in result.shares.items()})
    return [out / n for n in ("rq1_pages.csv", "rq1_errors.csv", "rq1_summary.json", "rq1_shares.json")]


def write_rq2(result: RQ2Result, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "rq2_pages.csv", result.page_rows, ("condition", "system", "page_id", "cer"))
    write_rows(out / "rq2_table.csv", result.table, ("system", "condition", "n_pages", "mean_cer", "median_cer"))
    write_deltas(out / "rq2_deltas.csv", result.deltas)
    write_json(out / "rq2_series.json", {"series": result.series, "excluded_two_column": result.excluded_pages})
    return [out / n for n in ("rq2_pages.csv", "rq2_table.csv", "rq2_deltas.csv", "rq2_series.json")]


def write_rq3(result: RQ3Result, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    columns = ("system", "intervention", "page_id", "baseline_cer", "treated_cer", "ratio", "decision", "cer")
    write_rows(out / "rq3_pages.csv", result.page_rows, columns)
    write_deltas(out / "rq3_deltas.csv", result.deltas)
    write_json(out / "rq3_abstain.json", {"abstain": result.abstain, "excluded": result.excluded})
    return [out / n for n in ("rq3_pages.csv", "rq3_deltas.csv", "rq3_abstain.json")]

