from __future__ import annotations

import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ocrprior.interventions import (
    AbstainDecision,
    ContrastiveParams,
    VocabEntry,
    apply_mask,
    apply_repetition_penalty,
    banned_ngram_tokens,
    build_script_mask,
    calibrate_threshold,
    length_abstain,
    load_replay,
    m3id_combine,
    m3id_weight,
    read_mask,
    read_vocab,
    replay_contrastive,
    vcd_combine,
    write_mask,
)
from oracles import mask_rule, synthetic_vocab

NO_FILTERS = ContrastiveParams(alpha=0.5, gamma=0.02)


# --- script mask -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "decoded, special, allowed",
    [
        ("καί", False, True),
        ("abc", False, False),
        ("κ3", False, False),
        ("</s>", True, True),
        (" ἀλλ’", False, True),
        ("\u0387\u037e", False, True),
        ("", False, True),
        ("\u03ba\u0301", False, False),  # stray combining mark
        ("\u2014[α]", False, True),
    ],
)
def test_mask_examples(decoded, special, allowed):
    assert build_script_mask([VocabEntry(0, decoded, special)])[0] == allowed


def test_mask_matches_rule_on_synthetic_vocab():
    vocab = [VocabEntry(*e) for e in synthetic_vocab(5000, seed=0)]
    mask = build_script_mask(vocab)
    assert [bool(m) for m in mask] == [mask_rule(e.decoded, e.is_special) for e in vocab]
    assert 0 < mask.sum() < len(vocab)


def test_mask_is_order_equivariant():
    vocab = [VocabEntry(*e) for e in synthetic_vocab(300, seed=1)]
    perm = np.random.default_rng(0).permutation(len(vocab))
    relabelled = [VocabEntry(int(k), vocab[p].decoded, vocab[p].is_special) for k, p in enumerate(perm)]
    assert np.array_equal(build_script_mask(relabelled), build_script_mask(vocab)[perm])


def test_mask_gaps_and_duplicates():
    mask = build_script_mask([VocabEntry(2, "α")])
    assert mask.tolist() == [False, False, True]
    with pytest.raises(ValueError):
        build_script_mask([VocabEntry(0, "α"), VocabEntry(0, "β")])
    with pytest.raises(ValueError):
        build_script_mask([VocabEntry(0, "α")], punctuation=[".", "1"])


def test_custom_punctuation():
    entry = VocabEntry(0, "α!")
    assert not build_script_mask([entry])[0]
    assert build_script_mask([entry], punctuation=["!"])[0]


def test_vocab_file_roundtrip(tmp_path):
    lines = [json.dumps({"token_id": 0, "decoded": "καί", "is_special": False}, ensure_ascii=False),
             json.dumps({"token_id": 1, "decoded": "<eos>", "is_special": True})]
    path = tmp_path / "vocab.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert read_vocab(path) == [VocabEntry(0, "καί"), VocabEntry(1, "<eos>", True)]
    with pytest.raises(ValueError, match="line 2"):
        read_vocab(io.StringIO(lines[0] + "\n" + '{"token_id": -1, "decoded": "x"}\n'))


def test_mask_export_roundtrip(tmp_path):
    mask = np.random.default_rng(3).random(1001) < 0.3
    summary = write_mask(mask, tmp_path / "out" / "mask")
    assert summary["allowed"] + summary["masked"] == 1001
    assert np.array_equal(read_mask(tmp_path / "out" / "mask"), mask)


# --- apply_mask -----------------------------------------------------------------------


def test_apply_mask_all_true_is_identity():
    x = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(apply_mask(x, np.ones(3, bool)), x)


def test_apply_mask_single_allowed():
    x = np.array([5.0, 1.0, 9.0])
    assert np.argmax(apply_mask(x, np.array([False, True, False]))) == 1


def test_apply_mask_errors():
    with pytest.raises(ValueError):
        apply_mask(np.zeros(3), np.zeros(3, bool))
    with pytest.raises(ValueError):
        apply_mask(np.zeros(3), np.ones(4, bool))


def test_apply_mask_matches_subset_argmax():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        x = rng.normal(size=n) * 5
        mask = rng.random(n) < rng.random()
        if not mask.any():
            mask[rng.integers(n)] = True
        allowed = [k for k in range(n) if mask[k]]
        brute = max(allowed, key=lambda k: x[k])
        assert int(np.argmax(apply_mask(x, mask))) == brute


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30), st.data())
def test_apply_mask_keeps_allowed_order(xs, data):
    mask = np.array(data.draw(st.lists(st.booleans(), min_size=len(xs), max_size=len(xs))))
    if not mask.any():
        mask[0] = True
    out = apply_mask(np.array(xs), mask)
    assert np.array_equal(out[mask], np.array(xs)[mask])
    assert np.all(np.isneginf(out[~mask]))


# --- abstention -----------------------------------------------------------------------


def test_length_abstain_examples():
    assert length_abstain(100, 100, 1.5) is AbstainDecision.KEEP
    assert length_abstain(200, 100, 1.5) is AbstainDecision.ABSTAIN
    assert length_abstain(150, 100, 1.5) is AbstainDecision.KEEP
    with pytest.raises(ValueError):
        length_abstain(1, 0)


@given(st.integers(0, 500), st.integers(0, 500), st.integers(1, 300), st.floats(0.1, 3))
def test_length_abstain_monotone(a, b, ref, thr):
    lo, hi = sorted((a, b))
    if length_abstain(lo, ref, thr) is AbstainDecision.ABSTAIN:
        assert length_abstain(hi, ref, thr) is AbstainDecision.ABSTAIN


def test_calibrate_hits_target_rate():
    rng = np.random.default_rng(0)
    ratios = np.exp(rng.normal(0, 0.4, size=1000))
    thr = calibrate_threshold(ratios, 0.12)
    rate = np.mean(ratios > thr)
    assert abs(rate - 0.12) <= 0.001


def test_calibrate_small_and_edge_cases():
    assert calibrate_threshold([1.0, 2.0, 3.0, 4.0], 0.25) == 3.0
    assert calibrate_threshold([1.0, 1.0], 0.0) == 1.0
    with pytest.raises(ValueError):
        calibrate_threshold([], 0.1)


# --- VCD ------------------------------------------------------------------------------


def test_vcd_alpha_zero_preserves_argmax():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        clean, noisy = rng.normal(size=(2, 50)) * 3
        assert np.argmax(vcd_combine(clean, noisy, alpha=0.0, beta=0.1)) == np.argmax(clean)


def test_vcd_alpha_one_scores():
    clean = np.array([2.0, 1.9, -5.0])
    noisy = np.array([1.0, 0.0, 0.0])
    out = vcd_combine(clean, noisy, alpha=1.0, beta=0.1)
    np.testing.assert_allclose(out[:2], 2 * clean[:2] - noisy[:2])
    assert np.isneginf(out[2])


def test_vcd_beta_one_is_singleton():
    rng = np.random.default_rng(2)
    for _ in range(200):
        clean, noisy = rng.normal(size=(2, 40))
        out = vcd_combine(clean, noisy, alpha=1.0, beta=1.0)
        assert np.isfinite(out).sum() == 1 and np.argmax(out) == np.argmax(clean)


def test_vcd_cutoff_is_inclusive():
    # p1 / p0 == beta exactly: e^(log 0.5) relative to the max
    clean = np.array([0.0, math.log(0.5)])
    assert np.isfinite(vcd_combine(clean, clean, 1.0, 0.5)[1])


def test_vcd_identical_streams_reduce_to_clean():
    rng = np.random.default_rng(5)
    x = rng.normal(size=30)
    out = vcd_combine(x, x, alpha=1.0, beta=0.1)
    keep = np.isfinite(out)
    np.testing.assert_allclose(out[keep], x[keep])


def test_vcd_candidates_match_probability_rule():
    rng = np.random.default_rng(6)
    for _ in range(200):
        x = rng.normal(size=20) * 2
        p = np.exp(x - x.max()) / np.exp(x - x.max()).sum()
        expected = p >= 0.1 * p.max() - 1e-15
        assert np.array_equal(np.isfinite(vcd_combine(x, x, 1.0, 0.1)), expected)


# --- M3ID -----------------------------------------------------------------------------


def test_m3id_weight_values():
    assert m3id_weight(0, 0.5, 0.02) == 0
    assert m3id_weight(10, 0.5, 0.02) == pytest.approx(0.22140275816, abs=1e-10)
    assert m3id_weight(10_000, 0.5, 0.02) == 0.5
    with pytest.raises(ValueError):
        m3id_weight(-1)


@given(st.integers(0, 500), st.floats(0, 5), st.floats(0, 1))
def test_m3id_weight_monotone_and_capped(t, alpha, gamma):
    assert m3id_weight(t, alpha, gamma) <= m3id_weight(t + 1, alpha, gamma) <= alpha


def test_m3id_combine_examples():
    rng = np.random.default_rng(0)
    img, txt = rng.normal(size=(2, 12))
    np.testing.assert_array_equal(m3id_combine(img, txt, 0, NO_FILTERS), img)
    np.testing.assert_allclose(m3id_combine(img, txt, 1000, NO_FILTERS), 1.5 * img - 0.5 * txt)
    for t in (0, 5, 50):
        np.testing.assert_allclose(m3id_combine(img, img, t, NO_FILTERS), img)


def test_repetition_penalty_signs():
    out = apply_repetition_penalty(np.array([2.0, -2.0, 1.0]), [0, 1, 1], 2.0)
    np.testing.assert_allclose(out, [1.0, -4.0, 1.0])


def test_no_repeat_trigram():
    assert banned_ngram_tokens([1, 2, 3, 1, 2], 3) == {3}
    assert banned_ngram_tokens([1, 2], 3) == set()
    assert banned_ngram_tokens([4, 4, 4], 3) == {4}
    params = ContrastiveParams(alpha=0.5, gamma=0.02, no_repeat_ngram=3)
    out = m3id_combine(np.zeros(5), np.zeros(5), 3, params, history=[1, 2, 3, 1, 2])
    assert np.isneginf(out[3]) and np.isfinite(out[[0, 1, 2, 4]]).all()


def test_params_validation():
    with pytest.raises(ValueError):
        ContrastiveParams(beta=0.0)
    with pytest.raises(ValueError):
        ContrastiveParams(alpha=math.inf)
    with pytest.raises(ValueError):
        ContrastiveParams(repetition_penalty=0.9)


# --- replay ---------------------------------------------------------------------------


def test_replay_from_npz(tmp_path):
    rng = np.random.default_rng(9)
    primary, contrast = rng.normal(size=(2, 6, 10))
    np.savez(tmp_path / "steps.npz", primary=primary, contrast=contrast)
    data = load_replay(tmp_path / "steps.npz")
    ids = replay_contrastive(data["primary"], data["contrast"], "vcd", ContrastiveParams(alpha=0.0))
    assert ids.tolist() == np.argmax(primary, axis=1).tolist()
    mask = np.zeros(10, bool)
    mask[[2, 7]] = True
    masked = replay_contrastive(primary, contrast, "m3id", NO_FILTERS, mask=mask)
    assert set(masked.tolist()) <= {2, 7}


def test_replay_greedy_history_feeds_ngram_ban():
    logits = np.tile(np.array([0.0, 5.0, 4.0]), (4, 1))
    params = ContrastiveParams(alpha=0.0, gamma=0.0, no_repeat_ngram=2)
    # 1 1 is banned once "1 1" has occurred; the third step must avoid 1
    assert replay_contrastive(logits, logits, "m3id", params).tolist() == [1, 1, 2, 1]


def test_replay_missing_arrays(tmp_path):
    np.savez(tmp_path / "bad.npz", primary=np.zeros((1, 2)))
    with pytest.raises(ValueError):
        load_replay(tmp_path / "bad.npz")
