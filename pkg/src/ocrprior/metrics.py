"""Character and word error rates under a normalization profile.

Rates are fractions; conversion to percentages happens only in reports.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Sequence

from .align import edit_distance
from .textnorm import NormProfile, normalize_page, tokenize_words


class UndefinedRateError(ValueError):
    """Raised when the normalized reference is empty."""


def cer(ref: str, hyp: str, profile: NormProfile | str = "raw") -> float:
    r = normalize_page(ref, profile)
    h = normalize_page(hyp, profile)
    if not r:
        raise UndefinedRateError("reference is empty after normalization; CER undefined")
    return edit_distance(r, h) / len(r)


def wer(ref: str, hyp: str, profile: NormProfile | str = "raw") -> float:
    r = tokenize_words(normalize_page(ref, profile))
    h = tokenize_words(normalize_page(hyp, profile))
    if not r:
        raise UndefinedRateError("reference has no words after normalization; WER undefined")
    return edit_distance(r, h) / len(r)


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    median: float
    n_pages: int

    def as_percent(self) -> dict[str, float]:
        return {"mean": 100 * self.mean, "median": 100 * self.median, "n_pages": self.n_pages}


def summarize(per_page: Sequence[float]) -> MetricSummary:
    if not per_page:
        raise ValueError("cannot summarize an empty list of page rates")
    return MetricSummary(
        statistics.fmean(per_page), float(statistics.median(per_page)), len(per_page)
    )
