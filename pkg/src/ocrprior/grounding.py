"""Token-level image gain from logged log-probabilities.

For an emitted token the gain is ``logp_cond - logp_free``: the
log-probability with the page image minus the log-probability from the
prompt alone. Tokens are labelled against the ground truth through the
character alignment, and substitutions are split into perceptual,
cross-script and lexical subtypes.

Token-log format (one JSON object per line, UTF-8)::

    {"page_id": str, "token_index": int, "token_text": str,
     "char_start": int, "char_end": int,
     "logp_cond": float, "logp_free": float,
     "top1_prob": float, "entropy": float}

``system_id`` (str) may also be present. ``char_start``/``char_end`` index
the prediction, which is the in-order concatenation of ``token_text``.
"""

from __future__ import annotations

import json
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .align import CharLabelKind, align_chars
from .taxonomy import has_greek, has_latin
from .textnorm import bare_letter_form

TokenLabel = CharLabelKind

# Higher wins a tie for the dominant label.
SEVERITY = {TokenLabel.CORRECT: 0, TokenLabel.SUBSTITUTION: 1, TokenLabel.OVERGENERATION: 2}


class SubstitutionSubtype(str, Enum):
    PERCEPTUAL = "perceptual"
    CROSS_SCRIPT = "cross_script"
    LEXICAL = "lexical"


GAIN_CLASSES = ("correct", "perceptual", "cross_script", "lexical")


def compute_gain(logp_cond: float, logp_free: float) -> float:
    """Image gain in nats; NaN when either input is not finite."""
    if not (math.isfinite(logp_cond) and math.isfinite(logp_free)):
        return math.nan
    return logp_cond - logp_free


# --------------------------------------------------------------------------
# Labelling
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenAlignment:
    label: TokenLabel
    pred_span: str
    # Ground-truth text between the first and last reference position the
    # token's characters were paired with; empty for pure overgeneration.
    gt_span: str


def _check_tiling(pred: str, spans: Sequence[tuple[int, int]]) -> None:
    pos = 0
    for k, (start, end) in enumerate(spans):
        if start != pos or end < start:
            raise ValueError(f"token span {k} ({start}, {end}) does not continue the tiling at {pos}")
        pos = end
    if pos != len(pred):
        raise ValueError(f"token spans cover {pos} of {len(pred)} prediction characters")


def _dominant(labels: Iterable[TokenLabel]) -> TokenLabel:
    counts = Counter(labels)
    if not counts:
        return TokenLabel.CORRECT
    return max(counts, key=lambda lab: (counts[lab], SEVERITY[lab]))


def align_tokens(gt: str, pred: str, token_spans: Sequence[tuple[int, int]]) -> list[TokenAlignment]:
    _check_tiling(pred, token_spans)
    char_labels = align_chars(gt, pred)
    out = []
    for start, end in token_spans:
        chars = char_labels[start:end]
        refs = [c.ref_position for c in chars if c.ref_position is not None]
        gt_span = gt[min(refs): max(refs) + 1] if refs else ""
        out.append(TokenAlignment(_dominant(c.label for c in chars), pred[start:end], gt_span))
    return out


def label_tokens(gt: str, pred: str, token_spans: Sequence[tuple[int, int]]) -> list[TokenLabel]:
    """Majority character label per token; ties go to the more severe label.

    Spans must tile ``pred`` in order. An empty span has no characters and is
    labelled correct.
    """
    return [a.label for a in align_tokens(gt, pred, token_spans)]


def subtype_substitution(gt_span: str, pred_span: str) -> SubstitutionSubtype | None:
    """Subtype of a substituted token, or None when the ground truth has no
    Greek letters (outside the within-Greek comparison)."""
    if not has_greek(gt_span):
        return None
    if bare_letter_form(gt_span.strip()) == bare_letter_form(pred_span.strip()):
        return SubstitutionSubtype.PERCEPTUAL
    if has_latin(pred_span):
        return SubstitutionSubtype.CROSS_SCRIPT
    return SubstitutionSubtype.LEXICAL


# --------------------------------------------------------------------------
# Records and summaries
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenGainRecord:
    token_index: int
    token_text: str
    logp_cond: float
    logp_free: float
    top1_prob: float
    entropy: float
    label: TokenLabel
    subtype: SubstitutionSubtype | None = None
    within_greek: bool = False
    page_id: str = ""
    gt_span: str = ""

    def __post_init__(self):
        expect_subtype = self.label is TokenLabel.SUBSTITUTION and self.within_greek
        if (self.subtype is not None) != expect_subtype:
            raise ValueError("subtype must be set exactly for within-Greek substitutions")

    @property
    def gain(self) -> float:
        return compute_gain(self.logp_cond, self.logp_free)

    @property
    def flagged(self) -> bool:
        return math.isnan(self.gain)

    @property
    def gain_class(self) -> str | None:
        if not self.within_greek:
            return None
        if self.label is TokenLabel.CORRECT:
            return "correct"
        if self.subtype is not None:
            return self.subtype.value
        return None


@dataclass(frozen=True)
class ClassGain:
    median: float
    count: int
    mean_top1: float
    mean_entropy: float


@dataclass(frozen=True)
class GainSummary:
    by_class: dict[str, ClassGain]
    n_flagged: int = 0
    n_outside: int = field(default=0)

    def get(self, name: str) -> ClassGain | None:
        return self.by_class.get(name)

    def to_dict(self) -> dict:
        return {
            "classes": {
                name: (
                    None
                    if name not in self.by_class
                    else {
                        "median_gain": self.by_class[name].median,
                        "count": self.by_class[name].count,
                        "mean_top1_prob": self.by_class[name].mean_top1,
                        "mean_entropy": self.by_class[name].mean_entropy,
                    }
                )
                for name in GAIN_CLASSES
            },
            "n_flagged": self.n_flagged,
            "n_outside": self.n_outside,
        }


def gain_summary(records: Iterable[TokenGainRecord]) -> GainSummary:
    """Median gain per class over within-Greek records.

    Records with non-finite gain are counted in ``n_flagged`` and skipped;
    records with no class (overgeneration, non-Greek ground truth) are
    counted in ``n_outside``. Classes with no records are absent.
    """
    groups: dict[str, list[TokenGainRecord]] = defaultdict(list)
    flagged = outside = 0
    for rec in records:
        if rec.flagged:
            flagged += 1
            continue
        cls = rec.gain_class
        if cls is None:
            outside += 1
            continue
        groups[cls].append(rec)
    by_class = {
        name: ClassGain(
            float(statistics.median(sorted(r.gain for r in recs))),
            len(recs),
            statistics.fmean(r.top1_prob for r in recs),
            statistics.fmean(r.entropy for r in recs),
        )
        for name, recs in groups.items()
    }
    return GainSummary({k: by_class[k] for k in GAIN_CLASSES if k in by_class}, flagged, outside)


# --------------------------------------------------------------------------
# Token logs
# --------------------------------------------------------------------------


class TokenLogError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"token log line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TokenLogEntry:
    page_id: str
    token_index: int
    token_text: str
    char_start: int
    char_end: int
    logp_cond: float
    logp_free: float
    top1_prob: float
    entropy: float
    system_id: str | None = None


_INT_FIELDS = ("token_index", "char_start", "char_end")
_FLOAT_FIELDS = ("logp_cond", "logp_free", "top1_prob", "entropy")
_REQUIRED = ("page_id", "token_text") + _INT_FIELDS + _FLOAT_FIELDS
_OPTIONAL = ("system_id",)


def _parse_entry(obj: object, line: int) -> TokenLogEntry:
    if not isinstance(obj, dict):
        raise TokenLogError(line, "record is not a JSON object")
    missing = [k for k in _REQUIRED if k not in obj]
    if missing:
        raise TokenLogError(line, f"missing field(s) {', '.join(missing)}")
    unknown = sorted(set(obj) - set(_REQUIRED) - set(_OPTIONAL))
    if unknown:
        raise TokenLogError(line, f"unknown field(s) {', '.join(unknown)}")
    for k in ("page_id", "token_text"):
        if not isinstance(obj[k], str):
            raise TokenLogError(line, f"{k} must be a string")
    if obj.get("system_id") is not None and not isinstance(obj["system_id"], str):
        raise TokenLogError(line, "system_id must be a string")
    for k in _INT_FIELDS:
        v = obj[k]
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise TokenLogError(line, f"{k} must be a non-negative integer")
    if obj["char_end"] < obj["char_start"]:
        raise TokenLogError(line, "char_end precedes char_start")
    values = {}
    for k in _FLOAT_FIELDS:
        v = obj[k]
        if v is None:
            v = math.nan
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise TokenLogError(line, f"{k} must be a number")
        values[k] = float(v)
    # Non-finite log-probabilities are kept (the record is flagged later);
    # finite ones must be valid.
    for k in ("logp_cond", "logp_free"):
        if math.isfinite(values[k]) and values[k] > 0:
            raise TokenLogError(line, f"{k} is a log-probability and must be <= 0")
    if not 0.0 <= values["top1_prob"] <= 1.0:
        raise TokenLogError(line, "top1_prob must lie in [0, 1]")
    if not values["entropy"] >= 0.0:
        raise TokenLogError(line, "entropy must be >= 0")
    return TokenLogEntry(
        obj["page_id"], obj["token_index"], obj["token_text"], obj["char_start"], obj["char_end"],
        system_id=obj.get("system_id"), **values,
    )


def read_token_log(source: str | Path | IO[str]) -> list[TokenLogEntry]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return read_token_log(fh)
    entries = []
    for n, raw in enumerate(source, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as err:
            raise TokenLogError(n, f"invalid JSON ({err.msg})") from None
        entries.append(_parse_entry(obj, n))
    return entries


def build_gain_records(
    entries: Iterable[TokenLogEntry], gt_by_page: Mapping[str, str]
) -> list[TokenGainRecord]:
    """Label and subtype every logged token against its page's ground truth."""
    pages: dict[str, list[TokenLogEntry]] = defaultdict(list)
    for e in entries:
        pages[e.page_id].append(e)
    records = []
    for page_id in sorted(pages):
        if page_id not in gt_by_page:
            raise KeyError(f"no ground truth for page {page_id!r}")
        toks = sorted(pages[page_id], key=lambda e: e.token_index)
        pred = "".join(e.token_text for e in toks)
        for e in toks:
            if pred[e.char_start: e.char_end] != e.token_text:
                raise ValueError(
                    f"page {page_id!r} token {e.token_index}: span does not match token_text"
                )
        aligned = align_tokens(gt_by_page[page_id], pred, [(e.char_start, e.char_end) for e in toks])
        for e, a in zip(toks, aligned):
            within = has_greek(a.gt_span)
            subtype = subtype_substitution(a.gt_span, a.pred_span) if a.label is TokenLabel.SUBSTITUTION else None
            records.append(
                TokenGainRecord(
                    e.token_index, e.token_text, e.logp_cond, e.logp_free, e.top1_prob, e.entropy,
                    a.label, subtype, within, page_id, a.gt_span,
                )
            )
    return records
