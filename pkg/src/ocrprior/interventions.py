"""Decode-time intervention cores as pure transforms over logit vectors.

The script mask and length abstention live here alongside the VCD and M3ID
contrastive combinations. A decoder loop (or the replay helper at the end of
this module) is a thin consumer of these functions.

File layouts
------------
Vocabulary: JSON lines ``{"token_id": int, "decoded": str, "is_special": bool}``.

Mask export: ``<stem>.bin`` holds ``numpy.packbits(mask, bitorder="little")``
(bit ``i`` is token ``i``; 1 means allowed) and ``<stem>.json`` a summary with
token, allowed and masked counts.

Logit replay: an ``.npz`` archive with float arrays ``primary`` and
``contrast`` of shape ``(steps, vocab)``. For VCD ``primary`` is the clean
branch and ``contrast`` the noised-image branch; for M3ID they are the
image-conditioned and text-only branches. An optional int array ``forced``
of length ``steps`` replays a fixed token history instead of greedy choices.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

GREEK_RANGES = ((0x0370, 0x03FF), (0x1F00, 0x1FFF))

DEFAULT_PUNCTUATION = (
    ".", ",",
    "\u0387", "\u00b7",  # ano teleia, middle dot
    "\u037e", ";",  # Greek question mark, semicolon
    "\u2019", "'", "\u02bc", "\u1fbd",  # apostrophes
    "(", ")", "[", "]",
    "-", "\u2013", "\u2014",
)


@dataclass(frozen=True)
class VocabEntry:
    token_id: int
    decoded: str
    is_special: bool = False


@dataclass(frozen=True)
class ContrastiveParams:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 0.02
    repetition_penalty: float | None = None
    no_repeat_ngram: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError("alpha must be finite and non-negative")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError("gamma must be finite and non-negative")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.repetition_penalty is not None and not self.repetition_penalty >= 1:
            raise ValueError("repetition_penalty must be >= 1")
        if self.no_repeat_ngram is not None and self.no_repeat_ngram < 1:
            raise ValueError("no_repeat_ngram must be >= 1")


VCD_DEFAULTS = ContrastiveParams(alpha=1.0, beta=0.1)
M3ID_DEFAULTS = ContrastiveParams(alpha=0.5, gamma=0.02, repetition_penalty=1.15, no_repeat_ngram=3)


# --------------------------------------------------------------------------
# Script mask
# --------------------------------------------------------------------------


def _in_greek_ranges(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in GREEK_RANGES)


def char_allowed(ch: str, punctuation: Iterable[str] = DEFAULT_PUNCTUATION) -> bool:
    return _in_greek_ranges(ch) or ch in punctuation or ch.isspace()


def token_allowed(entry: VocabEntry, punctuation: Iterable[str] = DEFAULT_PUNCTUATION) -> bool:
    """Special tokens always pass; otherwise every decoded character must be
    Greek, listed punctuation or whitespace. An empty string passes."""
    if entry.is_special:
        return True
    punct = frozenset(punctuation)
    return all(char_allowed(ch, punct) for ch in entry.decoded)


def build_script_mask(
    vocab: Sequence[VocabEntry], punctuation: Iterable[str] = DEFAULT_PUNCTUATION
) -> np.ndarray:
    """Boolean mask indexed by token id; ids absent from ``vocab`` are masked."""
    punct = frozenset(punctuation)
    if any(ch.isdigit() for p in punct for ch in p):
        raise ValueError("digits may not be configured as allowed punctuation")
    size = max((e.token_id for e in vocab), default=-1) + 1
    mask = np.zeros(size, dtype=bool)
    seen = set()
    for e in vocab:
        if e.token_id in seen:
            raise ValueError(f"duplicate token id {e.token_id}")
        seen.add(e.token_id)
        mask[e.token_id] = token_allowed(e, punct)
    return mask


def apply_mask(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked entries become ``-inf``; allowed entries are untouched."""
    logits = np.asarray(logits, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape[-1] != mask.shape[-1]:
        raise ValueError(f"logits have {logits.shape[-1]} entries but mask has {mask.shape[-1]}")
    if not mask.any():
        raise ValueError("every token is masked; nothing can be emitted")
    return np.where(mask, logits, -np.inf)


def read_vocab(source: str | Path | IO[str]) -> list[VocabEntry]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return read_vocab(fh)
    out = []
    for n, raw in enumerate(source, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            tid, dec, special = obj["token_id"], obj["decoded"], obj.get("is_special", False)
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise ValueError(f"vocab line {n}: malformed entry ({err})") from None
        if isinstance(tid, bool) or not isinstance(tid, int) or tid < 0:
            raise ValueError(f"vocab line {n}: token_id must be a non-negative integer")
        if not isinstance(dec, str) or not isinstance(special, bool):
            raise ValueError(f"vocab line {n}: decoded must be a string and is_special a bool")
        out.append(VocabEntry(tid, dec, special))
    return out


def write_mask(mask: np.ndarray, stem: str | Path, punctuation: Iterable[str] = DEFAULT_PUNCTUATION) -> dict:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = np.packbits(np.asarray(mask, dtype=bool), bitorder="little").tobytes()
    stem.with_suffix(".bin").write_bytes(data)
    summary = {
        "n_tokens": int(mask.size),
        "allowed": int(mask.sum()),
        "masked": int(mask.size - mask.sum()),
        "bitorder": "little",
        "punctuation": sorted(set(punctuation)),
        "sha256": hashlib.sha256(data).hexdigest(),
    }
    stem.with_suffix(".json").write_text(
        json.dumps(summary, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary


def read_mask(stem: str | Path) -> np.ndarray:
    stem = Path(stem)
    summary = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    bits = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=np.uint8)
    return np.unpackbits(bits, count=summary["n_tokens"], bitorder="little").astype(bool)


# --------------------------------------------------------------------------
# Length abstention
# --------------------------------------------------------------------------


class AbstainDecision(str, Enum):
    KEEP = "keep"
    ABSTAIN = "abstain"


def length_abstain(pred_len: int, ref_len: int, threshold: float = 1.5) -> AbstainDecision:
    if ref_len <= 0:
        raise ValueError("reference length must be positive")
    return AbstainDecision.ABSTAIN if pred_len / ref_len > threshold else AbstainDecision.KEEP


def calibrate_threshold(ratios: Sequence[float], target_rate: float = 0.12) -> float:
    """Threshold among the observed ratios whose abstention rate is closest
    to ``target_rate``; ties go to the higher threshold (fewer abstentions)."""
    if len(ratios) == 0:
        raise ValueError("need at least one length ratio")
    if not 0 <= target_rate <= 1:
        raise ValueError("target_rate must lie in [0, 1]")
    r = np.sort(np.asarray(ratios, dtype=float))
    candidates = np.unique(r)
    # pages with ratio > t, for each candidate t
    above = len(r) - np.searchsorted(r, candidates, side="right")
    gap = np.abs(above / len(r) - target_rate)
    best = np.flatnonzero(gap == gap.min())[-1]
    return float(candidates[best])


# --------------------------------------------------------------------------
# Contrastive combinations
# --------------------------------------------------------------------------


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"logit shapes differ: {a.shape} vs {b.shape}")
    return a, b


def vcd_combine(l_clean: np.ndarray, l_noisy: np.ndarray, alpha: float = 1.0, beta: float = 0.1) -> np.ndarray:
    """Contrast clean against noised-image logits inside the plausibility set.

    A token is a candidate when ``p_clean >= beta * max p_clean``, i.e. when
    ``l_clean - max(l_clean) >= log(beta)``. Candidates score
    ``(1 + alpha) * l_clean - alpha * l_noisy``; the rest are ``-inf``.
    """
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    l_clean, l_noisy = _check_pair(l_clean, l_noisy)
    candidate = l_clean - l_clean.max(axis=-1, keepdims=True) >= math.log(beta)
    return np.where(candidate, (1 + alpha) * l_clean - alpha * l_noisy, -np.inf)


def m3id_weight(t: int, alpha: float = 0.5, gamma: float = 0.02) -> float:
    """Contrast weight at decode step ``t``: ``min(alpha, exp(gamma * t) - 1)``."""
    if t < 0:
        raise ValueError("step must be non-negative")
    return min(alpha, math.expm1(gamma * t))


def apply_repetition_penalty(scores: np.ndarray, history: Sequence[int], penalty: float) -> np.ndarray:
    """Damp already-emitted tokens: positive scores divided, negative ones
    multiplied by ``penalty``."""
    out = np.array(scores, dtype=float)
    if penalty == 1 or not len(history):
        return out
    ids = np.unique(np.asarray(history, dtype=np.int64))
    vals = out[ids]
    out[ids] = np.where(vals > 0, vals / penalty, vals * penalty)
    return out


def banned_ngram_tokens(history: Sequence[int], n: int) -> set[int]:
    """Tokens that would complete an ``n``-gram already present in ``history``."""
    history = list(history)
    if n < 1 or len(history) < n - 1:
        return set()
    if n == 1:
        return set(history)
    prefix = history[len(history) - n + 1:]
    return {
        history[i + n - 1]
        for i in range(len(history) - n + 1)
        if history[i: i + n - 1] == prefix
    }


def m3id_combine(
    l_image: np.ndarray,
    l_text: np.ndarray,
    t: int,
    params: ContrastiveParams = M3ID_DEFAULTS,
    history: Sequence[int] = (),
) -> np.ndarray:
    """``(1 + w_t) * l_image - w_t * l_text``, then the optional repetition
    penalty and no-repeat-n-gram ban over ``history``."""
    l_image, l_text = _check_pair(l_image, l_text)
    w = m3id_weight(t, params.alpha, params.gamma)
    scores = (1 + w) * l_image - w * l_text
    if params.repetition_penalty is not None:
        scores = apply_repetition_penalty(scores, history, params.repetition_penalty)
    if params.no_repeat_ngram is not None:
        banned = sorted(banned_ngram_tokens(history, params.no_repeat_ngram))
        if banned:
            scores[banned] = -np.inf
    return scores


# --------------------------------------------------------------------------
# Replay
# --------------------------------------------------------------------------


class ContrastMethod(str, Enum):
    VCD = "vcd"
    M3ID = "m3id"


def replay_contrastive(
    primary: np.ndarray,
    contrast: np.ndarray,
    method: ContrastMethod | str,
    params: ContrastiveParams,
    mask: np.ndarray | None = None,
    forced: Sequence[int] | None = None,
) -> np.ndarray:
    """Greedy token choice per step from logged logit pairs.

    The history fed to the repetition filters is ``forced`` when given,
    otherwise the replay's own earlier choices.
    """
    method = ContrastMethod(method)
    primary, contrast = _check_pair(primary, contrast)
    if primary.ndim != 2:
        raise ValueError("replay arrays must have shape (steps, vocab)")
    if forced is not None and len(forced) != primary.shape[0]:
        raise ValueError("forced history length differs from step count")
    chosen: list[int] = []
    for t in range(primary.shape[0]):
        history = list(forced[:t]) if forced is not None else chosen
        if method is ContrastMethod.VCD:
            scores = vcd_combine(primary[t], contrast[t], params.alpha, params.beta)
        else:
            scores = m3id_combine(primary[t], contrast[t], t, params, history)
        if mask is not None:
            scores = apply_mask(scores, mask)
        chosen.append(int(np.argmax(scores)))
    return np.asarray(chosen, dtype=np.int64)


def load_replay(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(path) as data:
        missing = {"primary", "contrast"} - set(data.files)
        if missing:
            raise ValueError(f"replay archive lacks {sorted(missing)}")
        return {k: data[k] for k in data.files}
