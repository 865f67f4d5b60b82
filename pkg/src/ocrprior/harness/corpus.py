"""Corpus ingestion: ground-truth pages, prediction JSONL and page metadata.

Ground truth is one UTF-8 ``.txt`` file per page; the file stem is the page
id. Predictions are JSON lines::

    {"page_id": str, "system_id": str, "text": str, "condition": str}

``condition`` is optional and defaults to ``"clean"``. Metadata is a CSV
with columns ``page_id,edition_id,layout`` where layout is one of
``single_column``, ``two_column`` or ``unknown``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

log = logging.getLogger(__name__)

CLEAN = "clean"


class Layout(str, Enum):
    SINGLE_COLUMN = "single_column"
    TWO_COLUMN = "two_column"
    UNKNOWN = "unknown"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class PageRecord:
    page_id: str
    edition_id: str
    gt_text: str
    predictions: Mapping[str, str]
    layout: Layout = Layout.UNKNOWN


@dataclass
class Corpus:
    pages: dict[str, PageRecord]
    # condition -> system -> page -> text
    predictions: dict[str, dict[str, dict[str, str]]] = field(default_factory=dict)

    @property
    def systems(self) -> list[str]:
        return sorted({s for by_sys in self.predictions.values() for s in by_sys})

    @property
    def conditions(self) -> list[str]:
        return sorted(self.predictions)

    def gt(self) -> dict[str, str]:
        return {k: p.gt_text for k, p in sorted(self.pages.items())}

    def system_texts(self, system: str, condition: str = CLEAN) -> dict[str, str]:
        return dict(sorted(self.predictions.get(condition, {}).get(system, {}).items()))

    def missing(self, condition: str = CLEAN) -> dict[str, list[str]]:
        """Pages lacking a prediction, per system, for one condition."""
        out = {}
        for system, texts in sorted(self.predictions.get(condition, {}).items()):
            gone = sorted(set(self.pages) - set(texts))
            if gone:
                out[system] = gone
        return out

    def layouts(self) -> dict[str, Layout]:
        return {k: p.layout for k, p in self.pages.items()}


def _decode(data: bytes, where: str) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as err:
        raise CorpusError(f"{where}: invalid UTF-8 at byte {err.start}") from None


def read_gt_dir(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_dir():
        raise CorpusError(f"ground-truth directory not found: {path}")
    out = {}
    for f in sorted(path.glob("*.txt")):
        text = _decode(f.read_bytes(), str(f))
        if not text.strip():
            raise CorpusError(f"{f}: ground truth is empty")
        out[f.stem] = text
    if not out:
        raise CorpusError(f"no .txt pages in {path}")
    return out


def read_predictions(path: str | Path) -> list[dict]:
    path = Path(path)
    rows = []
    for n, raw in enumerate(path.read_bytes().split(b"\n"), start=1):
        line = _decode(raw, f"{path} line {n}")
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise CorpusError(f"{path} line {n}: invalid JSON ({err.msg})") from None
        if not isinstance(obj, dict):
            raise CorpusError(f"{path} line {n}: expected a JSON object")
        for key in ("page_id", "system_id", "text"):
            if not isinstance(obj.get(key), str):
                raise CorpusError(f"{path} line {n}: field {key!r} must be a string")
        cond = obj.get("condition", CLEAN)
        if not isinstance(cond, str) or not cond:
            raise CorpusError(f"{path} line {n}: condition must be a non-empty string")
        rows.append({"page_id": obj["page_id"], "system_id": obj["system_id"], "text": obj["text"],
                     "condition": cond, "where": f"{path} line {n}"})
    return rows


def read_metadata(path: str | Path) -> dict[str, tuple[str, Layout]]:
    path = Path(path)
    text = _decode(path.read_bytes(), str(path))
    out = {}
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or "page_id" not in reader.fieldnames:
        raise CorpusError(f"{path}: metadata needs a page_id column")
    for n, row in enumerate(reader, start=2):
        pid = row["page_id"]
        if pid in out:
            raise CorpusError(f"{path} line {n}: duplicate page_id {pid!r}")
        try:
            layout = Layout(row.get("layout") or Layout.UNKNOWN.value)
        except ValueError:
            raise CorpusError(f"{path} line {n}: unknown layout {row.get('layout')!r}") from None
        out[pid] = (row.get("edition_id") or "", layout)
    return out


def build_corpus(
    gt: Mapping[str, str],
    predictions: Iterable[dict],
    metadata: Mapping[str, tuple[str, Layout]] | None = None,
) -> Corpus:
    metadata = metadata or {}
    preds: dict[str, dict[str, dict[str, str]]] = {}
    for row in predictions:
        pid, sid, cond = row["page_id"], row["system_id"], row.get("condition", CLEAN)
        where = row.get("where", "predictions")
        if pid not in gt:
            raise CorpusError(f"{where}: page {pid!r} has no ground truth")
        slot = preds.setdefault(cond, {}).setdefault(sid, {})
        if pid in slot:
            raise CorpusError(f"{where}: duplicate prediction for page {pid!r}, system {sid!r}, condition {cond!r}")
        slot[pid] = row["text"]
    pages = {}
    for pid in sorted(gt):
        edition, layout = metadata.get(pid, ("", Layout.UNKNOWN))
        clean = {s: texts[pid] for s, texts in sorted(preds.get(CLEAN, {}).items()) if pid in texts}
        pages[pid] = PageRecord(pid, edition, gt[pid], clean, layout)
    corpus = Corpus(pages, preds)
    for cond in corpus.conditions:
        for system, gone in corpus.missing(cond).items():
            log.warning("%s/%s lacks %d page(s): %s", cond, system, len(gone), ", ".join(gone))
    return corpus


def ingest_corpus(
    gt_source: str | Path,
    prediction_sources: Iterable[str | Path] = (),
    metadata: str | Path | None = None,
) -> Corpus:
    gt = read_gt_dir(gt_source)
    rows = [r for src in prediction_sources for r in read_predictions(src)]
    meta = read_metadata(metadata) if metadata else None
    return build_corpus(gt, rows, meta)


def read_condition_dirs(path: str | Path) -> dict[str, dict[str, str]]:
    """Perturbed ground truths laid out as ``{condition}/{doc_id}.txt``,
    where a condition is ``original`` or ``axis/variant``."""
    root = Path(path)
    out: dict[str, dict[str, str]] = {}
    for f in sorted(root.rglob("*.txt")):
        condition = f.parent.relative_to(root).as_posix()
        out.setdefault(condition, {})[f.stem] = _decode(f.read_bytes(), str(f))
    if not out:
        raise CorpusError(f"no perturbed ground truth under {root}")
    return out
