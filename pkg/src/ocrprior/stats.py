"""Paired one-sided Wilcoxon signed-rank tests and per-page delta tables."""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

EXACT_MAX_N = 12
# Differences this small are treated as exact zeros, and magnitudes are
# compared after rounding to this many places, so that float noise in rate
# arithmetic (0.3 - 0.2 vs 0.2 - 0.1) does not break ties.
ZERO_TOL = 1e-12
RANK_DECIMALS = 12


class Direction(str, Enum):
    TREATED_GREATER = "greater"
    TREATED_LESS = "less"


@dataclass(frozen=True)
class PairedSample:
    page_id: str
    baseline: float
    treated: float

    @property
    def diff(self) -> float:
        return self.treated - self.baseline


def _nonzero(diffs: Iterable[float]) -> list[float]:
    return [d for d in diffs if abs(d) > ZERO_TOL]


def _doubled_midranks(values: Sequence[float]) -> list[int]:
    """Twice the 1-based midranks, so ties stay integral."""
    keys = [round(v, RANK_DECIMALS) for v in values]
    order = sorted(range(len(keys)), key=keys.__getitem__)
    ranks = [0] * len(keys)
    k = 0
    while k < len(order):
        end = k
        while end + 1 < len(order) and keys[order[end + 1]] == keys[order[k]]:
            end += 1
        for pos in order[k: end + 1]:
            ranks[pos] = (k + 1) + (end + 1)
        k = end + 1
    return ranks


def _exact_p(ranks2: Sequence[int], observed2: int, direction: Direction) -> float:
    # counts[s]: sign assignments whose positive doubled-rank sum is s
    counts = [0] * (sum(ranks2) + 1)
    counts[0] = 1
    top = 0
    for r in ranks2:
        for s in range(top, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
        top += r
    if direction is Direction.TREATED_GREATER:
        hits = sum(counts[observed2:])
    else:
        hits = sum(counts[: observed2 + 1])
    return hits / 2 ** len(ranks2)


def _approx_p(ranks2: Sequence[int], observed2: int, direction: Direction) -> float:
    n = len(ranks2)
    w = observed2 / 2
    mean = n * (n + 1) / 4
    tie_sizes: dict[int, int] = {}
    for r in ranks2:
        tie_sizes[r] = tie_sizes.get(r, 0) + 1
    var = n * (n + 1) * (2 * n + 1) / 24 - sum(t**3 - t for t in tie_sizes.values()) / 48
    sd = math.sqrt(var)
    if direction is Direction.TREATED_GREATER:
        z = (w - mean - 0.5) / sd
        return 0.5 * math.erfc(z / math.sqrt(2))
    z = (w - mean + 0.5) / sd
    return 0.5 * math.erfc(-z / math.sqrt(2))


def wilcoxon_diffs(
    diffs: Sequence[float], direction: Direction | str, method: str = "auto"
) -> float:
    """One-sided signed-rank p-value for paired differences (treated - baseline).

    Zeros are dropped and tied magnitudes get midranks. ``method="auto"``
    enumerates the null exactly up to 12 nonzero differences and uses the
    tie- and continuity-corrected normal approximation above.
    """
    direction = Direction(direction)
    nz = _nonzero(diffs)
    if not nz:
        raise ValueError("every paired difference is zero; the signed-rank test is undefined")
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    ranks2 = _doubled_midranks([abs(d) for d in nz])
    observed2 = sum(r for r, d in zip(ranks2, nz) if d > 0)
    if method == "exact" or (method == "auto" and len(nz) <= EXACT_MAX_N):
        return _exact_p(ranks2, observed2, direction)
    return min(1.0, max(0.0, _approx_p(ranks2, observed2, direction)))


def wilcoxon_one_sided(
    samples: Sequence[PairedSample], direction: Direction | str, method: str = "auto"
) -> float:
    return wilcoxon_diffs([s.diff for s in samples], direction, method)


def star_code(p: float) -> str:
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "ns"


@dataclass(frozen=True)
class DeltaSummary:
    delta_median: float
    delta_mean: float
    n_help: int
    n_tie: int
    n_hurt: int
    p_value: float
    stars: str

    @property
    def n_pages(self) -> int:
        return self.n_help + self.n_tie + self.n_hurt


def paired_samples(baseline: Mapping[str, float], treated: Mapping[str, float]) -> list[PairedSample]:
    missing_t = sorted(set(baseline) - set(treated))
    missing_b = sorted(set(treated) - set(baseline))
    if missing_t or missing_b:
        parts = []
        if missing_t:
            parts.append(f"missing from treated: {', '.join(missing_t)}")
        if missing_b:
            parts.append(f"missing from baseline: {', '.join(missing_b)}")
        raise KeyError("page sets differ; " + "; ".join(parts))
    return [PairedSample(k, baseline[k], treated[k]) for k in sorted(baseline)]


def delta_table(
    baseline: Mapping[str, float],
    treated: Mapping[str, float],
    direction: Direction | str = Direction.TREATED_LESS,
) -> DeltaSummary:
    """Change from baseline to treated over matched pages.

    ``delta_median`` is the difference of medians, not the median of per-page
    differences. A page "helps" when the treated rate is lower. When every
    page ties the test is undefined and the summary reports p = 1 ("ns").
    """
    samples = paired_samples(baseline, treated)
    if not samples:
        raise ValueError("no pages to compare")
    b = [s.baseline for s in samples]
    t = [s.treated for s in samples]
    diffs = [s.diff for s in samples]
    n_help = sum(d < -ZERO_TOL for d in diffs)
    n_hurt = sum(d > ZERO_TOL for d in diffs)
    n_tie = len(diffs) - n_help - n_hurt
    p = 1.0 if n_tie == len(diffs) else wilcoxon_diffs(diffs, direction)
    return DeltaSummary(
        float(statistics.median(t)) - float(statistics.median(b)),
        statistics.fmean(t) - statistics.fmean(b),
        n_help,
        n_tie,
        n_hurt,
        p,
        star_code(p),
    )


DELTA_CSV_COLUMNS = ("system", "condition", "delta_median", "delta_mean", "n_help", "n_tie", "n_hurt", "p_value", "stars")


def delta_csv(rows: Iterable[tuple[str, str, DeltaSummary]]) -> str:
    """One CSV row per (system, condition) cell."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=DELTA_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for system, condition, summary in rows:
        writer.writerow({"system": system, "condition": condition, **asdict(summary)})
    return buf.getvalue()
