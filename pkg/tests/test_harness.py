from __future__ import annotations

import json
import random
import time

import numpy as np
import pytest
from filelock import FileLock

from ocrprior.harness.cli import LOCK_NAME, main
from ocrprior.harness.config import ConfigError, load_config
from ocrprior.harness.corpus import (
    CorpusError,
    Layout,
    build_corpus,
    ingest_corpus,
    read_condition_dirs,
)
from ocrprior.harness.runs import lmc_requests, run_rq1, run_rq2, run_rq3
from ocrprior.harness.synthetic import copy_predictor, repair_predictor, synthetic_corpus
from ocrprior.perturb import perturbation_suite, write_suite
from ocrprior.taxonomy import ErrorCategory, FineLabel, Lexicon
from oracles import GAIN_PAGES, gain_log_lines

LEX = Lexicon.from_words(["μισθός", "ἐκούσιος", "καί", "λόγος", "αὐτοῦ", "ὅπως", "ὁ"])


def write_corpus(root, gt, preds, metadata=None):
    (root / "gt").mkdir(parents=True)
    for page, text in gt.items():
        (root / "gt" / f"{page}.txt").write_text(text, encoding="utf-8")
    lines = [json.dumps(p, ensure_ascii=False) for p in preds]
    (root / "preds.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if metadata:
        rows = ["page_id,edition_id,layout"] + [f"{k},{e},{lay}" for k, (e, lay) in metadata.items()]
        (root / "meta.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return root


def pred(page, system, text, condition=None):
    row = {"page_id": page, "system_id": system, "text": text}
    if condition:
        row["condition"] = condition
    return row


GT3 = {"p1": "λόγος καί μισθός", "p2": "ὅπως αὐτοῦ;", "p3": "ὁ λόγος"}


# --- ingestion ------------------------------------------------------------------------


def test_ingest_three_pages(tmp_path):
    preds = [pred(k, s, v) for k, v in GT3.items() for s in ("a", "b")]
    write_corpus(tmp_path, GT3, preds, {"p1": ("ed1", "single_column"), "p2": ("ed1", "two_column")})
    corpus = ingest_corpus(tmp_path / "gt", [tmp_path / "preds.jsonl"], tmp_path / "meta.csv")
    assert sorted(corpus.pages) == ["p1", "p2", "p3"]
    assert corpus.systems == ["a", "b"]
    assert corpus.pages["p2"].layout is Layout.TWO_COLUMN
    assert corpus.pages["p3"].layout is Layout.UNKNOWN
    assert corpus.pages["p1"].predictions == {"a": GT3["p1"], "b": GT3["p1"]}


def test_missing_system_page_excluded_only_there(tmp_path):
    preds = [pred(k, "a", v) for k, v in GT3.items()] + [pred("p1", "b", "x"), pred("p2", "b", "y")]
    corpus = build_corpus(GT3, preds)
    assert corpus.missing() == {"b": ["p3"]}
    assert set(corpus.system_texts("a")) == {"p1", "p2", "p3"}
    rq1 = run_rq1(corpus, LEX)
    assert rq1.summaries["b"]["raw"]["cer"].n_pages == 2
    assert rq1.summaries["a"]["raw"]["cer"].n_pages == 3


def test_corrupt_json_names_line(tmp_path):
    write_corpus(tmp_path, GT3, [pred("p1", "a", "x")])
    with open(tmp_path / "preds.jsonl", "a", encoding="utf-8") as fh:
        fh.write("{broken\n")
    with pytest.raises(CorpusError, match="line 2"):
        ingest_corpus(tmp_path / "gt", [tmp_path / "preds.jsonl"])


def test_bad_utf8_has_location(tmp_path):
    write_corpus(tmp_path, GT3, [])
    (tmp_path / "gt" / "p9.txt").write_bytes(b"abc\xff")
    with pytest.raises(CorpusError, match="byte 3"):
        ingest_corpus(tmp_path / "gt")


def test_duplicate_prediction_is_error():
    with pytest.raises(CorpusError, match="duplicate"):
        build_corpus(GT3, [pred("p1", "a", "x"), pred("p1", "a", "y")])


def test_unknown_page_is_error():
    with pytest.raises(CorpusError, match="no ground truth"):
        build_corpus(GT3, [pred("zz", "a", "x")])


def test_empty_ground_truth_rejected(tmp_path):
    write_corpus(tmp_path, {"p1": "  \n"}, [])
    with pytest.raises(CorpusError, match="empty"):
        ingest_corpus(tmp_path / "gt")


# --- RQ1 ------------------------------------------------------------------------------


def test_rq1_identical_predictions():
    corpus = build_corpus(GT3, [pred(k, "a", v) for k, v in GT3.items()])
    result = run_rq1(corpus, LEX)
    assert result.records == []
    assert result.summaries["a"]["raw"]["cer"].mean == 0
    assert result.summaries["a"]["no-diac"]["wer"].median == 0


def test_rq1_toy_corpus_shares():
    gt = {
        "t1": "ὅπως αὑτοῖς ὅπως καὶ ὅπως Παῦλος ὅπως μισθός ὅπως καταφανεῖς· ὅπως ζητεῖτε ὅπως",
        "t2": "λόγος ὁ",
    }
    hyp = {
        "t1": 'ὅπως αὐτοῖς ὅπως χαὶ ὅπως ΠάULO ὅπως ἐκούσιος ὅπως καταφανεῖς" ὅπως ὅπως',
        "t2": "141 λόγος ὁ",
    }
    corpus = build_corpus(gt, [pred(k, "s", v) for k, v in hyp.items()])
    result = run_rq1(corpus, LEX)
    cats = sorted(r.category.value.value for r in result.records)
    assert cats == sorted([
        "accent_diacritic", "char_confusion", "cross_script", "word_substitution",
        "omission", "punctuation", "page_furniture",
    ])
    shares = result.shares["s"]
    assert shares.total.count == 7
    assert shares.by_category[ErrorCategory.OMISSION].share == pytest.approx(1 / 7)
    # matched anchor words keep the alignment unambiguous; 15 ground-truth words
    assert shares.total.rate_per_1000 == pytest.approx(7 / 15 * 1000)
    real = [r for r in result.records if r.category.value is ErrorCategory.WORD_SUBSTITUTION]
    assert real[0].category.fine is FineLabel.REAL_WORD


# --- RQ2 ------------------------------------------------------------------------------


def _rq2_inputs(docs, predictor, seed=0):
    gt_by_cond, preds = {}, {}
    for doc_id, text in docs.items():
        for cond, g in perturbation_suite(text, seed).items():
            gt_by_cond.setdefault(cond, {})[doc_id] = g
            preds.setdefault(cond, {}).setdefault("sys", {})[doc_id] = predictor(g, text)
    return gt_by_cond, preds


def test_rq2_faithful_predictions_zero_deltas():
    docs = synthetic_corpus(4, seed=3)
    result = run_rq2(*_rq2_inputs(docs, copy_predictor))
    assert all(row["mean_cer"] == 0 for row in result.table)
    assert all(d.delta_median == 0 and d.delta_mean == 0 and d.stars == "ns" for _, _, d in result.deltas)
    assert len(result.deltas) == 18


def test_rq2_repair_predictor_asymmetry():
    docs = synthetic_corpus(20)
    result = run_rq2(*_rq2_inputs(docs, repair_predictor))
    delta = {cond: d.delta_mean for _, cond, d in result.deltas}
    assert delta["char/random"] >= 0.30
    assert abs(delta["word/random"]) <= 0.05
    series = result.series["sys"]["char"]
    assert [p for p, _ in series["lines"]["swap"]] == [0.0, 0.05, 0.10, 0.25]
    assert set(series["points"]) == {"local", "reverse", "random"}


def test_rq2_two_column_filter():
    docs = synthetic_corpus(6, seed=2)
    layouts = {k: (Layout.TWO_COLUMN if k in ("doc001", "doc004") else Layout.SINGLE_COLUMN) for k in docs}
    result = run_rq2(*_rq2_inputs(docs, copy_predictor), layouts)
    assert result.excluded_pages == ["doc001", "doc004"]
    pages = {r["page_id"] for r in result.page_rows}
    assert pages == set(docs) - {"doc001", "doc004"}


# --- RQ3 ------------------------------------------------------------------------------


def _rq3_corpus(n, base_text, treated_text=None, long_pages=()):
    gt, rows = {}, []
    for k in range(n):
        page = f"p{k:02d}"
        gt[page] = "λόγος καὶ θεός ἀνθρώπων " * 4
        rows.append(pred(page, "m", base_text(k, gt[page]), "greedy"))
        if treated_text:
            rows.append(pred(page, "m", treated_text(k, gt[page]), "mask"))
    return build_corpus(gt, rows)


def test_rq3_treated_equals_baseline():
    corpus = _rq3_corpus(10, lambda k, g: g[: -k - 1], lambda k, g: g[: -k - 1])
    result = run_rq3(corpus, {"mask": "greedy"})
    (_, _, d), = result.deltas
    assert (d.delta_median, d.delta_mean, d.n_tie, d.stars) == (0, 0, 10, "ns")


def test_rq3_constant_improvement_significant():
    rng = random.Random(0)
    cuts = [rng.randint(10, 40) for _ in range(90)]
    corpus = _rq3_corpus(90, lambda k, g: g[: len(g) - cuts[k]], lambda k, g: g[: len(g) - cuts[k] + 5])
    (_, _, d), = run_rq3(corpus, {"mask": "greedy"}).deltas
    assert d.delta_median < 0 and d.n_help == 90
    assert d.p_value < 0.001 and d.stars == "***"


def test_rq3_unmatched_baseline():
    corpus = _rq3_corpus(3, lambda k, g: g, lambda k, g: g)
    with pytest.raises(KeyError, match="matched baseline"):
        run_rq3(corpus, {"mask": "hf_greedy"})


def test_rq3_length_abstain_twelve_percent():
    # 12 of 100 pages have runaway output (ratio 2.0); the rest are slightly short
    def base(k, g):
        return g + g if k < 12 else g[: len(g) - (k % 7) - 1]

    corpus = _rq3_corpus(100, base)
    result = run_rq3(corpus, {}, abstain_baseline="greedy", threshold=1.5)
    s = result.abstain["m"]
    assert s.n_abstained == 12 and s.abstention_rate == pytest.approx(0.12)
    kept = [r["cer"] for r in result.page_rows if r["decision"] == "keep"]
    assert s.kept_median == pytest.approx(float(np.median(kept)))
    calibrated = run_rq3(corpus, {}, abstain_baseline="greedy", abstain_target=0.12)
    assert calibrated.abstain["m"].abstention_rate == pytest.approx(0.12)


def test_lmc_request_contract():
    corpus = build_corpus(GT3, [pred("p1", "a", "λογος")])
    (req,) = lmc_requests(corpus, [{"input": "καϊ", "output": "καί"}])
    assert req["respond_with"]["condition"] == "lmc" and req["text"] == "λογος"


# --- config ---------------------------------------------------------------------------


def test_config_paths_resolve_relative(tmp_path):
    write_corpus(tmp_path, GT3, [])
    (tmp_path / "lex.txt").write_text("λόγος\n", encoding="utf-8")
    (tmp_path / "run.yaml").write_text(
        "profile: no-diac\nlexicon: lex.txt\nseed: 7\ncorpus: {gt: gt, predictions: preds.jsonl}\n"
        "contrastive: {alpha: 0.5, gamma: 0.02}\nrq3: {pairs: {mask: greedy}}\n",
        encoding="utf-8",
    )
    cfg = load_config(tmp_path / "run.yaml")
    assert cfg.lexicon == tmp_path / "lex.txt" and cfg.seed == 7
    assert cfg.profile.strip_diacritics and cfg.contrastive.alpha == 0.5
    assert cfg.rq3_pairs == {"mask": "greedy"}


@pytest.mark.parametrize(
    "body, match",
    [
        ("lexicon: nope.txt\n", "does not exist"),
        ("colour: red\n", "unknown"),
        ("contrastive: {beta: 0}\n", "beta"),
        ("- a\n", "mapping"),
        ("seed: x\n", "seed"),
    ],
)
def test_config_errors(tmp_path, body, match):
    (tmp_path / "run.yaml").write_text(body, encoding="utf-8")
    with pytest.raises(ConfigError, match=match):
        load_config(tmp_path / "run.yaml")


# --- CLI ------------------------------------------------------------------------------


def test_cli_normalize_stdout(tmp_path, capsys):
    (tmp_path / "a.txt").write_text("ἀνθρώ-\nπων", encoding="utf-8")
    assert main(["--profile", "taxonomy", "normalize", str(tmp_path / "a.txt")]) == 0
    assert capsys.readouterr().out == "ἀνθρώπων\n"


def test_cli_score_and_classify(tmp_path):
    write_corpus(tmp_path, GT3, [pred("p1", "a", "λόγος χαί μισθός"), pred("p2", "a", "ὅπως αὐτοῦ")])
    (tmp_path / "lex.txt").write_text("λόγος\n", encoding="utf-8")
    common = ["--gt", str(tmp_path / "gt"), "--pred", str(tmp_path / "preds.jsonl")]
    assert main(["--out", str(tmp_path / "o1"), "score", *common]) == 0
    summary = json.loads((tmp_path / "o1" / "rq1_summary.json").read_text(encoding="utf-8"))
    assert summary["a"]["raw"]["cer"]["n_pages"] == 2
    assert json.loads((tmp_path / "o1" / "missing_pages.json").read_text()) == {"a": ["p3"]}
    assert main(["classify", *common, "--lexicon", str(tmp_path / "lex.txt"), "--out", str(tmp_path / "o2")]) == 0
    errors = (tmp_path / "o2" / "rq1_errors.csv").read_text(encoding="utf-8").splitlines()
    assert len(errors) == 3


def test_cli_perturb_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["--seed", "5", "--out", str(tmp_path / name), "perturb", "--synthetic", "3"]) == 0
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    assert a == (tmp_path / "b" / "manifest.json").read_bytes()
    assert len(read_condition_dirs(tmp_path / "a")) == 19


def test_cli_gain(tmp_path):
    (tmp_path / "gt").mkdir()
    for page, (text, _) in GAIN_PAGES.items():
        (tmp_path / "gt" / f"{page}.txt").write_text(text, encoding="utf-8")
    (tmp_path / "log.jsonl").write_text("\n".join(gain_log_lines()) + "\n", encoding="utf-8")
    assert main(["--out", str(tmp_path / "o"), "gain", "--log", str(tmp_path / "log.jsonl"), "--gt", str(tmp_path / "gt")]) == 0
    summary = json.loads((tmp_path / "o" / "gain_summary.json").read_text())
    assert summary["classes"]["cross_script"]["median_gain"] == 6.0


def test_cli_mask_and_replay(tmp_path, capsys):
    vocab = ["καί", "abc", "<eos>", "λόγος", "3"]
    lines = [json.dumps({"token_id": k, "decoded": v, "is_special": v == "<eos>"}, ensure_ascii=False) for k, v in enumerate(vocab)]
    (tmp_path / "vocab.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert main(["--out", str(tmp_path), "mask", "--vocab", str(tmp_path / "vocab.jsonl")]) == 0
    assert json.loads(capsys.readouterr().out) == {"n_tokens": 5, "allowed": 3, "masked": 2}
    rng = np.random.default_rng(0)
    np.savez(tmp_path / "steps.npz", primary=rng.normal(size=(4, 5)), contrast=rng.normal(size=(4, 5)))
    args = ["--out", str(tmp_path), "contrast-replay", "--replay", str(tmp_path / "steps.npz"),
            "--method", "m3id", "--mask", str(tmp_path / "script_mask"), "--no-repeat-ngram", "3"]
    assert main(args) == 0
    out = json.loads((tmp_path / "replay_m3id.json").read_text())
    assert set(out["tokens"]) <= {0, 2, 3}


def test_cli_stats(tmp_path, capsys):
    (tmp_path / "b.csv").write_text("page_id,value\n" + "".join(f"p{k},{0.5 + k / 100}\n" for k in range(6)))
    (tmp_path / "t.csv").write_text("page_id,value\n" + "".join(f"p{k},{0.4 + k / 100}\n" for k in range(6)))
    assert main(["--out", str(tmp_path), "stats", "--baseline", str(tmp_path / "b.csv"), "--treated", str(tmp_path / "t.csv")]) == 0
    assert "p=0.01562" in capsys.readouterr().out
    assert json.loads((tmp_path / "stats.json").read_text())["n_help"] == 6


def test_cli_report_end_to_end_deterministic(tmp_path):
    docs = synthetic_corpus(3, seed=1)
    rows = []
    for doc_id, text in docs.items():
        rows.append(pred(doc_id, "sys", text[:-3], "greedy"))
        rows.append(pred(doc_id, "sys", text, "mask"))
        rows.append(pred(doc_id, "sys", text))
    write_corpus(tmp_path, docs, rows)
    write_suite(docs, tmp_path / "pert", seed=0)
    rq2 = [pred(d, "sys", (tmp_path / "pert" / c / f"{d}.txt").read_text(encoding="utf-8"), c)
           for c in ("original", "char/random", "word/random") for d in docs]
    (tmp_path / "rq2.jsonl").write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in rq2) + "\n", encoding="utf-8")
    (tmp_path / "lex.txt").write_text("\n".join(" ".join(docs.values()).split()) + "\n", encoding="utf-8")
    (tmp_path / "run.yaml").write_text(
        "lexicon: lex.txt\ncorpus: {gt: gt, predictions: [preds.jsonl]}\n"
        "rq2: {gt: pert, predictions: [rq2.jsonl]}\n"
        "rq3: {pairs: {mask: greedy}, abstain_baseline: greedy}\n",
        encoding="utf-8",
    )
    outputs = []
    for name in ("r1", "r2"):
        assert main(["--config", str(tmp_path / "run.yaml"), "--out", str(tmp_path / name), "report"]) == 0
        outputs.append({p.name: p.read_bytes() for p in (tmp_path / name).iterdir() if p.name != LOCK_NAME})
    assert outputs[0] == outputs[1]
    assert {"rq1_pages.csv", "rq2_deltas.csv", "rq3_deltas.csv", "manifest.json"} <= set(outputs[0])


def test_cli_error_exit_codes(tmp_path, capsys):
    write_corpus(tmp_path, GT3, [])
    (tmp_path / "preds.jsonl").write_text('{"page_id": "p1"}\n', encoding="utf-8")
    code = main(["--out", str(tmp_path / "o"), "score", "--gt", str(tmp_path / "gt"), "--pred", str(tmp_path / "preds.jsonl")])
    assert code == 1 and "line 1" in capsys.readouterr().err
    assert main(["report"]) == 1


def test_cli_run_lock(tmp_path, capsys):
    out = tmp_path / "o"
    out.mkdir()
    with FileLock(str(out / LOCK_NAME)):
        assert main(["--out", str(out), "perturb", "--synthetic", "1"]) == 1
    assert "locked" in capsys.readouterr().err
