"""End-to-end analyses over an ingested corpus.

Every aggregate is computed from page-level rows that are returned alongside
it, so reports can retain the rows on disk.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Mapping

from ..align import align_words
from ..interventions import AbstainDecision, calibrate_threshold, length_abstain
from ..metrics import MetricSummary, cer, summarize, wer
from ..perturb import PROPORTIONS, Axis
from ..stats import DeltaSummary, Direction, delta_table
from ..taxonomy import CategoryShares, ErrorRecord, Lexicon, category_shares, classify_page
from ..textnorm import NormProfile, normalize_page, tokenize_words
from .corpus import CLEAN, Corpus, Layout

RQ1_PROFILES = ("raw", "no-diac")
CLEAN_CONDITION = "original"


# --------------------------------------------------------------------------
# RQ1: error rates and taxonomy
# --------------------------------------------------------------------------


@dataclass
class RQ1Result:
    summaries: dict[str, dict[str, dict[str, MetricSummary]]]
    page_rows: list[dict]
    records: list[ErrorRecord]
    shares: dict[str, CategoryShares]


def run_rq1(corpus: Corpus, lexicon: Lexicon, condition: str = CLEAN) -> RQ1Result:
    summaries: dict[str, dict[str, dict[str, MetricSummary]]] = {}
    page_rows: list[dict] = []
    records: list[ErrorRecord] = []
    shares: dict[str, CategoryShares] = {}
    gt = corpus.gt()
    for system in corpus.systems:
        texts = corpus.system_texts(system, condition)
        if not texts:
            continue
        per_profile: dict[str, dict[str, list[float]]] = {p: {"cer": [], "wer": []} for p in RQ1_PROFILES}
        sys_records: list[ErrorRecord] = []
        gt_words = 0
        for page_id, hyp in texts.items():
            row = {"system": system, "page_id": page_id}
            for prof in RQ1_PROFILES:
                c, w = cer(gt[page_id], hyp, prof), wer(gt[page_id], hyp, prof)
                per_profile[prof]["cer"].append(c)
                per_profile[prof]["wer"].append(w)
                key = prof.replace("-", "")
                row[f"cer_{key}"] = c
                row[f"wer_{key}"] = w
            ref_tokens = tokenize_words(normalize_page(gt[page_id], "taxonomy"))
            hyp_tokens = tokenize_words(normalize_page(hyp, "taxonomy"))
            page_records = classify_page(align_words(ref_tokens, hyp_tokens), lexicon, page_id, system)
            row["n_errors"] = len(page_records)
            row["gt_words"] = len(ref_tokens)
            gt_words += len(ref_tokens)
            sys_records.extend(page_records)
            page_rows.append(row)
        summaries[system] = {
            prof: {m: summarize(vals) for m, vals in per_profile[prof].items()} for prof in RQ1_PROFILES
        }
        shares[system] = category_shares(sys_records, max(gt_words, 1))
        records.extend(sys_records)
    return RQ1Result(summaries, page_rows, records, shares)


# --------------------------------------------------------------------------
# RQ2: perturbation probe
# --------------------------------------------------------------------------


@dataclass
class RQ2Result:
    table: list[dict]
    deltas: list[tuple[str, str, DeltaSummary]]
    series: dict[str, dict[str, dict]]
    page_rows: list[dict]
    excluded_pages: list[str] = field(default_factory=list)


def _series(means: Mapping[str, float]) -> dict[str, dict]:
    """Plottable points per axis: proportional swap/shuffle lines start at
    the clean condition (p = 0); the other variants are isolated points."""
    out = {}
    for axis in Axis:
        lines = {}
        for variant in ("swap", "shuffle"):
            pts = []
            if CLEAN_CONDITION in means:
                pts.append([0.0, means[CLEAN_CONDITION]])
            for p in PROPORTIONS:
                name = f"{axis.value}/{variant}_p{round(p * 100)}"
                if name in means:
                    pts.append([p, means[name]])
            lines[variant] = pts
        points = {
            v: means[f"{axis.value}/{v}"] for v in ("local", "reverse", "random") if f"{axis.value}/{v}" in means
        }
        out[axis.value] = {"lines": lines, "points": points}
    return out


def run_rq2(
    gt_by_condition: Mapping[str, Mapping[str, str]],
    predictions: Mapping[str, Mapping[str, Mapping[str, str]]],
    layouts: Mapping[str, Layout] | None = None,
    profile: NormProfile | str = "rq2",
) -> RQ2Result:
    """CER per (condition, system) against each condition's own ground truth,
    then clean vs. perturbed paired tests (H1: perturbed CER is higher).

    Pages flagged two-column are excluded.
    """
    layouts = layouts or {}
    excluded = sorted(p for p, lay in layouts.items() if lay is Layout.TWO_COLUMN)
    skip = set(excluded)
    rates: dict[str, dict[str, dict[str, float]]] = {}
    page_rows = []
    for condition in sorted(predictions):
        if condition not in gt_by_condition:
            raise KeyError(f"predictions for condition {condition!r} have no perturbed ground truth")
        gt = gt_by_condition[condition]
        for system in sorted(predictions[condition]):
            per_page = {}
            for page_id, hyp in sorted(predictions[condition][system].items()):
                if page_id in skip:
                    continue
                if page_id not in gt:
                    raise KeyError(f"{condition}/{system}: page {page_id!r} has no ground truth")
                per_page[page_id] = cer(gt[page_id], hyp, profile)
                page_rows.append({"condition": condition, "system": system, "page_id": page_id, "cer": per_page[page_id]})
            rates.setdefault(system, {})[condition] = per_page
    table, deltas, series = [], [], {}
    for system in sorted(rates):
        means = {}
        for condition, per_page in sorted(rates[system].items()):
            if not per_page:
                continue
            s = summarize(list(per_page.values()))
            means[condition] = s.mean
            table.append({"system": system, "condition": condition, "n_pages": s.n_pages, "mean_cer": s.mean, "median_cer": s.median})
        clean = rates[system].get(CLEAN_CONDITION)
        if clean:
            for condition, per_page in sorted(rates[system].items()):
                if condition == CLEAN_CONDITION or not per_page:
                    continue
                common = sorted(set(clean) & set(per_page))
                deltas.append(
                    (
                        system,
                        condition,
                        delta_table({k: clean[k] for k in common}, {k: per_page[k] for k in common}, Direction.TREATED_GREATER),
                    )
                )
        series[system] = _series(means)
    return RQ2Result(table, deltas, series, page_rows, excluded)


# --------------------------------------------------------------------------
# RQ3: interventions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AbstainSummary:
    threshold: float
    n_pages: int
    n_abstained: int
    abstention_rate: float
    baseline_median: float
    kept_median: float
    delta_median: float
    baseline_mean: float
    kept_mean: float


@dataclass
class RQ3Result:
    deltas: list[tuple[str, str, DeltaSummary]]
    abstain: dict[str, AbstainSummary]
    page_rows: list[dict]
    excluded: dict[str, list[str]] = field(default_factory=dict)


def _rates(gt: Mapping[str, str], texts: Mapping[str, str], profile) -> dict[str, float]:
    return {k: cer(gt[k], texts[k], profile) for k in sorted(texts)}


def abstain_report(
    gt: Mapping[str, str], texts: Mapping[str, str], threshold: float, profile: NormProfile | str = "raw"
) -> tuple[AbstainSummary, list[dict]]:
    """Length abstention over one system's pages.

    The kept set is every page whose normalized prediction-to-reference
    length ratio stays at or below ``threshold``; the report compares its
    median CER with the median over all pages.
    """
    rows = []
    for page_id in sorted(texts):
        ref = normalize_page(gt[page_id], profile)
        hyp = normalize_page(texts[page_id], profile)
        decision = length_abstain(len(hyp), len(ref), threshold)
        rows.append({
            "page_id": page_id,
            "ratio": len(hyp) / len(ref),
            "decision": decision.value,
            "cer": cer(gt[page_id], texts[page_id], profile),
        })
    all_cer = [r["cer"] for r in rows]
    kept = [r["cer"] for r in rows if r["decision"] == AbstainDecision.KEEP.value]
    if not kept:
        raise ValueError("length abstention removed every page")
    base_med = float(statistics.median(all_cer))
    kept_med = float(statistics.median(kept))
    summary = AbstainSummary(
        threshold,
        len(rows),
        len(rows) - len(kept),
        (len(rows) - len(kept)) / len(rows),
        base_med,
        kept_med,
        kept_med - base_med,
        statistics.fmean(all_cer),
        statistics.fmean(kept),
    )
    return summary, rows


def length_ratios(gt: Mapping[str, str], texts: Mapping[str, str], profile: NormProfile | str = "raw") -> list[float]:
    return [
        len(normalize_page(texts[k], profile)) / len(normalize_page(gt[k], profile)) for k in sorted(texts)
    ]


def run_rq3(
    corpus: Corpus,
    pairs: Mapping[str, str],
    profile: NormProfile | str = "raw",
    abstain_baseline: str | None = None,
    threshold: float = 1.5,
    abstain_target: float | None = None,
) -> RQ3Result:
    """Deltas for each (system, intervention) against its matched baseline
    condition, plus an abstention report when ``abstain_baseline`` is set.

    A system with no predictions for an intervention is skipped (not every
    system supports every intervention); one with treated predictions but no
    baseline is an error. Pages present in only one of the pair are excluded
    from that cell and listed in ``excluded``.
    """
    gt = corpus.gt()
    deltas, page_rows = [], []
    excluded: dict[str, list[str]] = {}
    for system in corpus.systems:
        for intervention, baseline in sorted(pairs.items()):
            treated = corpus.system_texts(system, intervention)
            if not treated:
                continue
            base = corpus.system_texts(system, baseline)
            if not base:
                raise KeyError(
                    f"{system}: intervention {intervention!r} has no matched baseline {baseline!r}"
                )
            common = sorted(set(treated) & set(base))
            dropped = sorted(set(treated) ^ set(base))
            if dropped:
                excluded[f"{system}/{intervention}"] = dropped
            b = _rates(gt, {k: base[k] for k in common}, profile)
            t = _rates(gt, {k: treated[k] for k in common}, profile)
            deltas.append((system, intervention, delta_table(b, t, Direction.TREATED_LESS)))
            page_rows.extend(
                {"system": system, "intervention": intervention, "page_id": k, "baseline_cer": b[k], "treated_cer": t[k]}
                for k in common
            )
    abstain: dict[str, AbstainSummary] = {}
    if abstain_baseline is not None:
        by_system = {s: corpus.system_texts(s, abstain_baseline) for s in corpus.systems}
        by_system = {s: t for s, t in by_system.items() if t}
        if abstain_target is not None:
            pooled = [r for s in sorted(by_system) for r in length_ratios(gt, by_system[s], profile)]
            threshold = calibrate_threshold(pooled, abstain_target)
        for system, texts in sorted(by_system.items()):
            summary, rows = abstain_report(gt, texts, threshold, profile)
            abstain[system] = summary
            page_rows.extend({"system": system, "intervention": "length_abstain", **r} for r in rows)
    return RQ3Result(deltas, abstain, page_rows, excluded)


# --------------------------------------------------------------------------
# External LM correction contract
# --------------------------------------------------------------------------

LMC_CONDITION = "lmc"


def lmc_requests(corpus: Corpus, exemplars: list[dict] | None = None, condition: str = CLEAN) -> list[dict]:
    """Correction requests for an external rewriter, one per (system, page).

    The rewriter answers with prediction JSON lines carrying
    ``condition: "lmc"``; those are scored against ``condition`` with
    ``run_rq3(corpus, {"lmc": condition})``.
    """
    exemplars = list(exemplars or [])
    out = []
    for system in corpus.systems:
        for page_id, text in corpus.system_texts(system, condition).items():
            out.append({
                "system_id": system,
                "page_id": page_id,
                "text": text,
                "exemplars": exemplars,
                "respond_with": {"page_id": page_id, "system_id": system, "condition": LMC_CONDITION, "text": "<corrected>"},
            })
    return out
