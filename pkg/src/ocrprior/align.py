"""Edit-distance alignment at word and character granularity."""

from __future__ import annotations

from dataclasses import dataclass
from difflib import SequenceMatcher
from enum import Enum
from typing import Hashable, Sequence

import numpy as np


class OpKind(str, Enum):
    MATCH = "match"
    SUBSTITUTE = "substitute"
    DELETE = "delete"
    INSERT = "insert"


@dataclass(frozen=True)
class AlignOp:
    kind: OpKind
    ref_token: str | None = None
    hyp_token: str | None = None
    ref_index: int | None = None
    hyp_index: int | None = None

    @property
    def is_error(self) -> bool:
        return self.kind is not OpKind.MATCH


class CharLabelKind(str, Enum):
    CORRECT = "correct"
    SUBSTITUTION = "substitution"
    OVERGENERATION = "overgeneration"


@dataclass(frozen=True)
class CharLabel:
    position: int
    label: CharLabelKind
    # Reference index this character was paired with, if any.
    ref_position: int | None = None


def _encode(a: Sequence[Hashable], b: Sequence[Hashable]) -> tuple[np.ndarray, np.ndarray]:
    vocab: dict[Hashable, int] = {}
    ea = np.fromiter((vocab.setdefault(x, len(vocab)) for x in a), dtype=np.int64, count=len(a))
    eb = np.fromiter((vocab.setdefault(x, len(vocab)) for x in b), dtype=np.int64, count=len(b))
    return ea, eb


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> int:
    """Unit-cost Levenshtein distance between two sequences.

    Rows are updated with numpy; the insertion recurrence along a row is a
    running minimum of ``cost[k] - k`` shifted back by ``j``.
    """
    if len(ref) < len(hyp):
        ref, hyp = hyp, ref
    if not hyp:
        return len(ref)
    a, b = _encode(ref, hyp)
    m = len(b)
    idx = np.arange(m + 1)
    prev = idx.copy()
    for i in range(1, len(a) + 1):
        sub = prev[:-1] + (b != a[i - 1])
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(prev[1:] + 1, sub)
        prev = np.minimum.accumulate(cand - idx) + idx
    return int(prev[-1])


def _cost_matrix(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> np.ndarray:
    n, m = len(ref), len(hyp)
    a, b = _encode(ref, hyp)
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    d[0] = np.arange(m + 1)
    idx = np.arange(m + 1)
    for i in range(1, n + 1):
        sub = d[i - 1, :-1] + (b != a[i - 1])
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(d[i - 1, 1:] + 1, sub)
        d[i] = np.minimum.accumulate(cand - idx) + idx
    return d


def align_words(ref: Sequence[str], hyp: Sequence[str]) -> list[AlignOp]:
    """Minimum-cost edit script from ``ref`` to ``hyp``.

    Ties during the backtrace prefer match, then substitution, deletion,
    insertion.
    """
    d = _cost_matrix(ref, hyp).tolist()
    i, j = len(ref), len(hyp)
    ops: list[AlignOp] = []
    while i > 0 or j > 0:
        here = d[i][j]
        if i > 0 and j > 0:
            same = ref[i - 1] == hyp[j - 1]
            if here == d[i - 1][j - 1] + (0 if same else 1):
                kind = OpKind.MATCH if same else OpKind.SUBSTITUTE
                ops.append(AlignOp(kind, ref[i - 1], hyp[j - 1], i - 1, j - 1))
                i, j = i - 1, j - 1
                continue
        if i > 0 and here == d[i - 1][j] + 1:
            ops.append(AlignOp(OpKind.DELETE, ref[i - 1], None, i - 1, None))
            i -= 1
            continue
        ops.append(AlignOp(OpKind.INSERT, None, hyp[j - 1], None, j - 1))
        j -= 1
    ops.reverse()
    return ops


def script_cost(ops: Sequence[AlignOp]) -> int:
    return sum(op.is_error for op in ops)


def align_chars(ref: str, hyp: str, autojunk: bool = False) -> list[CharLabel]:
    """Label every hypothesis character against ``ref`` by common blocks.

    Characters inside matching blocks are correct. Inside a replaced span the
    first ``min(len_ref, len_hyp)`` hypothesis characters are substitutions
    and any surplus is overgeneration, as is every inserted character.
    Reference-only characters produce no label.
    """
    labels: list[CharLabel] = []
    matcher = SequenceMatcher(None, ref, hyp, autojunk=autojunk)
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag == "equal":
            labels.extend(
                CharLabel(j, CharLabelKind.CORRECT, i1 + k) for k, j in enumerate(range(j1, j2))
            )
        elif tag == "replace":
            paired = min(i2 - i1, j2 - j1)
            for k, j in enumerate(range(j1, j2)):
                if k < paired:
                    labels.append(CharLabel(j, CharLabelKind.SUBSTITUTION, i1 + k))
                else:
                    labels.append(CharLabel(j, CharLabelKind.OVERGENERATION))
        elif tag == "insert":
            labels.extend(CharLabel(j, CharLabelKind.OVERGENERATION) for j in range(j1, j2))
    return labels
