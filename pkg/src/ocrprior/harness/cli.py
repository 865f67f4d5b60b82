"""Command-line entry point: ``ocrprior <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from .. import grounding, interventions, perturb, stats, textnorm
from ..taxonomy import Lexicon, load_lexicon
from . import reports, runs
from .config import ConfigError, RunConfig, load_config
from .corpus import (
    CLEAN,
    CorpusError,
    build_corpus,
    ingest_corpus,
    read_condition_dirs,
    read_gt_dir,
    read_metadata,
    read_predictions,
)
from .synthetic import synthetic_corpus

log = logging.getLogger("ocrprior")

LOCK_NAME = ".ocrprior.lock"


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# Shared plumbing
# --------------------------------------------------------------------------


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out) if args.out else cfg.out_dir


def _seed(args, cfg: RunConfig) -> int:
    return args.seed if args.seed is not None else cfg.seed


def _profile(args, cfg: RunConfig):
    return textnorm.get_profile(args.profile) if args.profile else cfg.profile


@contextmanager
def _locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / LOCK_NAME))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise CliError(f"output directory {out} is locked by another run") from None
    try:
        yield out
    finally:
        lock.release()


def _corpus(args, cfg: RunConfig):
    gt = getattr(args, "gt", None) or (cfg.corpus.gt if cfg.corpus else None)
    if gt is None:
        raise CliError("no ground truth given (use --gt or a config 'corpus' section)")
    preds = getattr(args, "pred", None) or (list(cfg.corpus.predictions) if cfg.corpus else [])
    meta = getattr(args, "metadata", None) or (cfg.corpus.metadata if cfg.corpus else None)
    return ingest_corpus(gt, preds, meta)


def _lexicon(args, cfg: RunConfig) -> Lexicon:
    path = getattr(args, "lexicon", None) or cfg.lexicon
    if path is None:
        raise CliError("a lexicon is required (use --lexicon or the config 'lexicon' key)")
    return load_lexicon(Path(path))


def _params(args, cfg: RunConfig) -> interventions.ContrastiveParams:
    base = cfg.contrastive
    over = {k: getattr(args, k) for k in ("alpha", "beta", "gamma", "repetition_penalty", "no_repeat_ngram")}
    merged = {k: (v if v is not None else getattr(base, k)) for k, v in over.items()}
    return interventions.ContrastiveParams(**merged)


def _read_rates(path: Path) -> dict[str, float]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"page_id", "value"} <= set(reader.fieldnames):
            raise CliError(f"{path}: expected columns page_id,value")
        out = {}
        for n, row in enumerate(reader, start=2):
            if row["page_id"] in out:
                raise CliError(f"{path} line {n}: duplicate page_id {row['page_id']!r}")
            try:
                out[row["page_id"]] = float(row["value"])
            except ValueError:
                raise CliError(f"{path} line {n}: value is not a number") from None
    return out


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_normalize(args, cfg):
    profile = _profile(args, cfg)
    for name in args.inputs:
        text = sys.stdin.read() if name == "-" else Path(name).read_text(encoding="utf-8")
        result = textnorm.normalize_page(text, profile)
        if args.out and name != "-":
            with _locked(Path(args.out)) as out:
                (out / Path(name).name).write_text(result, encoding="utf-8")
        else:
            sys.stdout.write(result)
            if not result.endswith("\n"):
                sys.stdout.write("\n")


def cmd_score(args, cfg):
    corpus = _corpus(args, cfg)
    result = runs.run_rq1(corpus, Lexicon(frozenset()), args.condition)
    with _locked(_out_dir(args, cfg)) as out:
        reports.write_rows(out / "rq1_pages.csv", result.page_rows)
        reports.write_json(out / "rq1_summary.json", {
            s: {p: {m: v.as_percent() for m, v in by_m.items()} for p, by_m in by_p.items()}
            for s, by_p in result.summaries.items()
        })
        reports.write_json(out / "missing_pages.json", corpus.missing(args.condition))


def cmd_classify(args, cfg):
    corpus = _corpus(args, cfg)
    result = runs.run_rq1(corpus, _lexicon(args, cfg), args.condition)
    with _locked(_out_dir(args, cfg)) as out:
        reports.write_rq1(result, out)


def cmd_perturb(args, cfg):
    if args.synthetic:
        docs = synthetic_corpus(args.synthetic, seed=_seed(args, cfg))
    elif args.input:
        docs = {p.stem: p.read_text(encoding="utf-8") for p in sorted(Path(args.input).glob("*.txt"))}
        if not docs:
            raise CliError(f"no .txt documents in {args.input}")
    else:
        raise CliError("give --input DIR or --synthetic N")
    docs = {k: textnorm.normalize_page(v, _profile(args, cfg)) for k, v in docs.items()}
    with _locked(_out_dir(args, cfg)) as out:
        perturb.write_suite(docs, out, _seed(args, cfg))


def cmd_gain(args, cfg):
    entries = grounding.read_token_log(args.log)
    gt = {k: textnorm.normalize_page(v, _profile(args, cfg)) for k, v in read_gt_dir(args.gt).items()}
    records = grounding.build_gain_records(entries, gt)
    summary = grounding.gain_summary(records)
    with _locked(_out_dir(args, cfg)) as out:
        rows = [
            {
                "page_id": r.page_id, "token_index": r.token_index, "token_text": r.token_text,
                "gt_span": r.gt_span, "label": r.label.value,
                "subtype": r.subtype.value if r.subtype else "", "within_greek": r.within_greek,
                "gain": r.gain, "top1_prob": r.top1_prob, "entropy": r.entropy, "flagged": r.flagged,
            }
            for r in records
        ]
        reports.write_rows(out / "gain_records.csv", rows)
        reports.write_json(out / "gain_summary.json", summary.to_dict())


def cmd_mask(args, cfg):
    vocab = interventions.read_vocab(args.vocab)
    punct = list(args.punctuation) if args.punctuation is not None else interventions.DEFAULT_PUNCTUATION
    mask = interventions.build_script_mask(vocab, punct)
    with _locked(_out_dir(args, cfg)) as out:
        summary = interventions.write_mask(mask, out / "script_mask", punct)
    print(json.dumps({k: summary[k] for k in ("n_tokens", "allowed", "masked")}))


def cmd_abstain(args, cfg):
    corpus = _corpus(args, cfg)
    threshold = args.threshold if args.threshold is not None else cfg.threshold
    target = args.target_rate if args.target_rate is not None else cfg.abstain_target
    result = runs.run_rq3(corpus, {}, _profile(args, cfg), args.condition, threshold, target)
    if not result.abstain:
        raise CliError(f"no predictions under condition {args.condition!r}")
    with _locked(_out_dir(args, cfg)) as out:
        reports.write_rq3(result, out)


def cmd_contrast_replay(args, cfg):
    data = interventions.load_replay(args.replay)
    mask = interventions.read_mask(args.mask) if args.mask else None
    ids = interventions.replay_contrastive(
        data["primary"], data["contrast"], args.method, _params(args, cfg), mask, data.get("forced")
    )
    baseline = np.argmax(data["primary"], axis=1)
    with _locked(_out_dir(args, cfg)) as out:
        reports.write_json(out / f"replay_{args.method}.json", {
            "method": args.method,
            "params": _params(args, cfg),
            "tokens": ids.tolist(),
            "greedy_tokens": baseline.tolist(),
            "changed_steps": int((ids != baseline).sum()),
        })


def cmd_stats(args, cfg):
    base, treated = _read_rates(Path(args.baseline)), _read_rates(Path(args.treated))
    summary = stats.delta_table(base, treated, args.direction)
    with _locked(_out_dir(args, cfg)) as out:
        reports.write_json(out / "stats.json", summary)
        reports.write_deltas(out / "stats.csv", [(args.system, args.condition, summary)])
    print(f"delta_median={summary.delta_median:+.4f} p={summary.p_value:.4g} {summary.stars}")


def cmd_report(args, cfg):
    if not args.config:
        raise CliError("report needs --config")
    done = []
    with _locked(_out_dir(args, cfg)) as out:
        corpus = _corpus(args, cfg) if cfg.corpus else None
        if corpus is not None and cfg.lexicon is not None:
            done += reports.write_rq1(runs.run_rq1(corpus, load_lexicon(cfg.lexicon)), out)
        if cfg.rq2 is not None:
            gt_by_cond = read_condition_dirs(cfg.rq2.gt)
            docs = gt_by_cond.get(runs.CLEAN_CONDITION)
            if docs is None:
                raise CliError(f"{cfg.rq2.gt} has no 'original' condition")
            rq2_rows = [r for p in cfg.rq2.predictions for r in read_predictions(p)]
            meta = read_metadata(cfg.rq2.metadata) if cfg.rq2.metadata else None
            rq2_corpus = build_corpus(docs, rq2_rows, meta)
            done += reports.write_rq2(
                runs.run_rq2(gt_by_cond, rq2_corpus.predictions, rq2_corpus.layouts()), out
            )
        if corpus is not None and (cfg.rq3_pairs or cfg.abstain_baseline):
            done += reports.write_rq3(
                runs.run_rq3(corpus, cfg.rq3_pairs, cfg.profile, cfg.abstain_baseline, cfg.threshold, cfg.abstain_target),
                out,
            )
        if not done:
            raise CliError("config requests no analysis (need corpus+lexicon, rq2 or rq3)")
        manifest = {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(done)
        }
        reports.write_json(out / "manifest.json", {"seed": _seed(args, cfg), "files": manifest})


def cmd_lmc_request(args, cfg):
    corpus = _corpus(args, cfg)
    exemplars = json.loads(Path(args.exemplars).read_text(encoding="utf-8")) if args.exemplars else []
    with _locked(_out_dir(args, cfg)) as out:
        with open(out / "lmc_requests.jsonl", "w", encoding="utf-8") as fh:
            for req in runs.lmc_requests(corpus, exemplars, args.condition):
                fh.write(json.dumps(req, ensure_ascii=False, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=default, help="perturbation seed")
    parser.add_argument("--profile", default=default, help="normalization preset (raw, no-diac, rq2, taxonomy, rq3)")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true", default=default)


def _corpus_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gt", help="directory of ground-truth .txt pages")
    parser.add_argument("--pred", action="append", help="prediction JSONL (repeatable)")
    parser.add_argument("--metadata", help="page metadata CSV (page_id,edition_id,layout)")
    parser.add_argument("--condition", default=CLEAN, help="prediction condition to analyse")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocrprior", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("normalize", cmd_normalize, "normalize text files under a profile")
    p.add_argument("inputs", nargs="+", help="text files, or - for stdin")

    p = add("score", cmd_score, "CER/WER per system and page")
    _corpus_flags(p)

    p = add("classify", cmd_classify, "word-level error taxonomy")
    _corpus_flags(p)
    p.add_argument("--lexicon")

    p = add("perturb", cmd_perturb, "generate the perturbation suite")
    p.add_argument("--input", help="directory of plain-text documents")
    p.add_argument("--synthetic", type=int, help="generate N synthetic Greek documents instead")

    p = add("gain", cmd_gain, "token-level image gain from a token log")
    p.add_argument("--log", required=True)
    p.add_argument("--gt", required=True)

    p = add("mask", cmd_mask, "build and export the Greek script mask")
    p.add_argument("--vocab", required=True)
    p.add_argument("--punctuation", help="allowed punctuation characters (replaces the default set)")

    p = add("abstain", cmd_abstain, "length-ratio abstention report")
    _corpus_flags(p)
    p.add_argument("--threshold", type=float)
    p.add_argument("--target-rate", type=float)

    p = add("contrast-replay", cmd_contrast_replay, "replay VCD or M3ID over logged logits")
    p.add_argument("--replay", required=True, help=".npz with primary/contrast arrays")
    p.add_argument("--method", choices=["vcd", "m3id"], required=True)
    p.add_argument("--mask", help="mask stem written by the mask subcommand")
    for flag, typ in (("--alpha", float), ("--beta", float), ("--gamma", float),
                      ("--repetition-penalty", float), ("--no-repeat-ngram", int)):
        p.add_argument(flag, type=typ)

    p = add("stats", cmd_stats, "paired Wilcoxon delta between two page-rate CSVs")
    p.add_argument("--baseline", required=True)
    p.add_argument("--treated", required=True)
    p.add_argument("--direction", choices=["greater", "less"], default="less")
    p.add_argument("--system", default="system")
    p.add_argument("--condition", default="treated")

    add("report", cmd_report, "run every analysis the config describes")

    p = add("lmc-request", cmd_lmc_request, "emit correction requests for an external rewriter")
    _corpus_flags(p)
    p.add_argument("--exemplars", help="JSON list of {input, output} examples")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except (CliError, ConfigError, CorpusError, grounding.TokenLogError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
