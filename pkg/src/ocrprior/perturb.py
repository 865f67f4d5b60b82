"""Counterfactual text perturbations whose output is the new ground truth.

Two axes share one variant set. The word axis moves whole words inside a
paragraph (one paragraph per line). The char axis moves characters inside
words and never touches word boundaries. A "character" is a grapheme: a base
code point plus its following combining marks. Leading and trailing
non-alphanumeric characters of a word (quotes, commas, ano teleia) stay put;
only the span between the first and last letter/digit is rearranged.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import unicodedata
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping

from .prng import Xoshiro256, derive_seed


class Axis(str, Enum):
    WORD = "word"
    CHAR = "char"


class Variant(str, Enum):
    ORIGINAL = "original"
    SWAP = "swap"
    SHUFFLE = "shuffle"
    LOCAL = "local"
    REVERSE = "reverse"
    RANDOM = "random"


PROPORTIONS = (0.05, 0.10, 0.25)
LOCAL_WINDOW = 3
# full stop, middle dot, ano teleia, semicolon, Greek question mark, bang
SENTENCE_END = frozenset(".\u00b7\u0387;\u037e!")


@dataclass(frozen=True)
class PerturbSpec:
    axis: Axis
    variant: Variant
    p: float | None = None
    seed: int = 0

    def __post_init__(self):
        proportional = self.variant in (Variant.SWAP, Variant.SHUFFLE)
        if proportional and self.p is None:
            raise ValueError(f"{self.variant.value} needs a proportion p")
        if not proportional and self.p is not None:
            raise ValueError(f"{self.variant.value} takes no proportion")
        if self.p is not None and not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    @property
    def condition(self) -> str:
        if self.p is None:
            return self.variant.value
        return f"{self.variant.value}_p{round(self.p * 100):d}"

    def to_dict(self) -> dict:
        return {"axis": self.axis.value, "variant": self.variant.value, "p": self.p, "seed": self.seed}


def condition_names() -> list[str]:
    names = ["original"]
    for axis in Axis:
        for variant, p in _VARIANT_GRID:
            names.append(f"{axis.value}/{PerturbSpec(axis, variant, p).condition}")
    return names


_VARIANT_GRID = (
    [(Variant.SWAP, p) for p in PROPORTIONS]
    + [(Variant.SHUFFLE, p) for p in PROPORTIONS]
    + [(Variant.LOCAL, None), (Variant.REVERSE, None), (Variant.RANDOM, None)]
)


# --------------------------------------------------------------------------
# Text structure
# --------------------------------------------------------------------------


def _count(p: float, n: int) -> int:
    """ceil(p * n) without binary-float overshoot (0.1 * 30 is 3, not 4)."""
    return math.ceil(Fraction(p).limit_denominator(10**9) * n)


def _split_line(line: str) -> tuple[list[str], list[str]]:
    parts = re.split(r"(\s+)", line)
    return parts[0::2], parts[1::2]


def _map_words(text: str, fn: Callable[[list[str]], list[str]]) -> str:
    """Apply ``fn`` to the word list of every line; whitespace is preserved."""
    out_lines = []
    for line in text.split("\n"):
        chunks, seps = _split_line(line)
        slots = [k for k, c in enumerate(chunks) if c]
        words = fn([chunks[k] for k in slots])
        for k, w in zip(slots, words):
            chunks[k] = w
        pieces = [chunks[0]]
        for sep, chunk in zip(seps, chunks[1:]):
            pieces += [sep, chunk]
        out_lines.append("".join(pieces))
    return "\n".join(out_lines)


def _is_mark(ch: str) -> bool:
    return unicodedata.category(ch).startswith("M")


def _is_alnum_base(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "LN"


def graphemes(text: str) -> list[str]:
    clusters: list[str] = []
    for ch in text:
        if clusters and _is_mark(ch):
            clusters[-1] += ch
        else:
            clusters.append(ch)
    return clusters


def split_word(word: str) -> tuple[str, list[str], str]:
    """``(prefix, core graphemes, suffix)``; the core runs from the first to
    the last letter/digit cluster."""
    starts = [k for k, ch in enumerate(word) if _is_alnum_base(ch)]
    if not starts:
        return word, [], ""
    start = starts[0]
    end = starts[-1] + 1
    while end < len(word) and _is_mark(word[end]):
        end += 1
    return word[:start], graphemes(word[start:end]), word[end:]


def _ends_sentence(word: str) -> bool:
    return bool(word) and word[-1] in SENTENCE_END


def _sentences(words: list[str]) -> list[list[int]]:
    groups: list[list[int]] = [[]]
    for k, w in enumerate(words):
        groups[-1].append(k)
        if _ends_sentence(w) and k + 1 < len(words):
            groups.append([])
    return [g for g in groups if g]


# --------------------------------------------------------------------------
# Generic unit operations
# --------------------------------------------------------------------------


def swap_pass(units: list, p: float, rng: Xoshiro256) -> tuple[int, int]:
    """One left-to-right pass: at each position with a right neighbour draw
    Bernoulli(p); on success swap with the neighbour and skip it.

    Returns ``(draws, swaps)``.
    """
    draws = swaps = 0
    i = 0
    while i < len(units) - 1:
        draws += 1
        if rng.bernoulli(p):
            units[i], units[i + 1] = units[i + 1], units[i]
            swaps += 1
            i += 2
        else:
            i += 1
    return draws, swaps


def _local_shuffle(units: list, rng: Xoshiro256) -> list:
    out = []
    for k in range(0, len(units), LOCAL_WINDOW):
        window = units[k: k + LOCAL_WINDOW]
        rng.shuffle(window)
        out.extend(window)
    return out


# --------------------------------------------------------------------------
# Word axis
# --------------------------------------------------------------------------


def _word_variant(words: list[str], spec: PerturbSpec, rng: Xoshiro256) -> list[str]:
    words = list(words)
    v = spec.variant
    if v is Variant.SWAP:
        swap_pass(words, spec.p, rng)
        return words
    if v is Variant.SHUFFLE:
        chosen = rng.sample_indices(len(words), _count(spec.p, len(words)))
        moved = [words[k] for k in chosen]
        chosen_set = set(chosen)
        kept = [w for k, w in enumerate(words) if k not in chosen_set]
        for w in moved:
            kept.insert(rng.randbelow(len(kept) + 1), w)
        return kept
    if v is Variant.LOCAL:
        return _local_shuffle(words, rng)
    if v is Variant.REVERSE:
        return words[::-1]
    if v is Variant.RANDOM:
        out = list(words)
        for group in _sentences(words):
            block = [words[k] for k in group]
            rng.shuffle(block)
            for k, w in zip(group, block):
                out[k] = w
        return out
    return words


# --------------------------------------------------------------------------
# Char axis
# --------------------------------------------------------------------------


def _rebuild(parts: tuple[str, list[str], str], core: list[str]) -> str:
    return parts[0] + "".join(core) + parts[2]


def _char_variant(words: list[str], spec: PerturbSpec, rng: Xoshiro256) -> list[str]:
    parts = [split_word(w) for w in words]
    cores = [list(p[1]) for p in parts]
    v = spec.variant
    if v is Variant.SWAP:
        for core in cores:
            if len(core) >= 2 and rng.bernoulli(spec.p):
                k = rng.randbelow(len(core) - 1)
                core[k], core[k + 1] = core[k + 1], core[k]
    elif v is Variant.SHUFFLE:
        for k in rng.sample_indices(len(cores), _count(spec.p, len(cores))):
            rng.shuffle(cores[k])
    elif v is Variant.LOCAL:
        cores = [_local_shuffle(core, rng) for core in cores]
    elif v is Variant.REVERSE:
        cores = [core[::-1] for core in cores]
    elif v is Variant.RANDOM:
        for group in _sentences(words):
            pool = [g for k in group for g in cores[k]]
            rng.shuffle(pool)
            pos = 0
            for k in group:
                n = len(cores[k])
                cores[k] = pool[pos: pos + n]
                pos += n
    return [_rebuild(p, core) for p, core in zip(parts, cores)]


def perturb(text: str, spec: PerturbSpec) -> str:
    """Deterministic perturbation of ``text`` as described by ``spec``."""
    if spec.variant is Variant.ORIGINAL:
        return text
    rng = Xoshiro256(spec.seed)
    if spec.axis is Axis.WORD:
        return _map_words(text, lambda ws: _word_variant(ws, spec, rng))
    return _map_words(text, lambda ws: _char_variant(ws, spec, rng))


# --------------------------------------------------------------------------
# Condition suite
# --------------------------------------------------------------------------


def suite_specs(seed: int) -> dict[str, PerturbSpec]:
    specs = {}
    for axis in Axis:
        for variant, p in _VARIANT_GRID:
            name = f"{axis.value}/{PerturbSpec(axis, variant, p).condition}"
            specs[name] = PerturbSpec(axis, variant, p, derive_seed(seed, name))
    return specs


def perturbation_suite(text: str, seed: int) -> dict[str, str]:
    """Every named condition on both axes; ``original`` is shared."""
    out = {"original": text}
    for name, spec in suite_specs(seed).items():
        out[name] = perturb(text, spec)
    return out


def write_suite(docs: Mapping[str, str], out_dir: str | Path, seed: int) -> dict:
    """Write ``{condition}/{doc_id}.txt`` for every document and a
    ``manifest.json`` recording spec, seed and SHA-256 per file."""
    out_dir = Path(out_dir)
    specs = suite_specs(seed)
    entries = []
    for doc_id in sorted(docs):
        for name, text in perturbation_suite(docs[doc_id], seed).items():
            path = out_dir / name / f"{doc_id}.txt"
            path.parent.mkdir(parents=True, exist_ok=True)
            data = text.encode("utf-8")
            path.write_bytes(data)
            spec = specs.get(name)
            entries.append(
                {
                    "condition": name,
                    "doc_id": doc_id,
                    "path": path.relative_to(out_dir).as_posix(),
                    "spec": spec.to_dict() if spec else None,
                    "sha256": hashlib.sha256(data).hexdigest(),
                }
            )
    manifest = {"seed": seed, "prng": "xoshiro256**/splitmix64", "files": entries}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest
