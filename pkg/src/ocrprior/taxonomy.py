"""Word-level OCR error taxonomy.

Every non-match alignment op is routed to exactly one of eight categories by a
fixed decision order:

1. collapse: the hypothesis token sits in a run of >= 5 identical tokens;
2. page furniture: inserted/deleted numerals, Latin words, all-caps Greek;
3. punctuation-only insertions/deletions, then omission / overgeneration;
4. substitutions: punctuation, accent/diacritic, cross-script, character
   confusion (<= 2 edits on bare letters), else word substitution split into
   segmentation, real-word and non-word.
"""

from __future__ import annotations

import csv
import io
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence, TextIO

from .align import AlignOp, OpKind, edit_distance
from .textnorm import bare_letter_form

COLLAPSE_RUN = 5
CONFUSION_MAX_EDITS = 2

# Characters treated as punctuation besides Unicode category P*: elision and
# quotation marks that Unicode files under other categories.
PUNCTUATION_EXTRA = frozenset("\u02bc\u1fbd`\u00b4\u1ffe")
KERAIA = frozenset("\u0374\u02b9")  # Greek numeral sign, precomposed and canonical


class ErrorCategory(str, Enum):
    ACCENT_DIACRITIC = "accent_diacritic"
    CHAR_CONFUSION = "char_confusion"
    CROSS_SCRIPT = "cross_script"
    WORD_SUBSTITUTION = "word_substitution"
    OVERGENERATION = "overgeneration"
    OMISSION = "omission"
    PAGE_FURNITURE = "page_furniture"
    PUNCTUATION = "punctuation"


class FineLabel(str, Enum):
    REAL_WORD = "real_word"
    NON_WORD = "non_word"
    SEGMENTATION = "segmentation"
    COLLAPSE = "collapse"


_FINE_PARENT = {
    FineLabel.REAL_WORD: ErrorCategory.WORD_SUBSTITUTION,
    FineLabel.NON_WORD: ErrorCategory.WORD_SUBSTITUTION,
    FineLabel.SEGMENTATION: ErrorCategory.WORD_SUBSTITUTION,
    FineLabel.COLLAPSE: ErrorCategory.OVERGENERATION,
}


@dataclass(frozen=True)
class Category:
    value: ErrorCategory
    fine: FineLabel | None = None

    def __post_init__(self):
        if self.fine is not None and _FINE_PARENT[self.fine] is not self.value:
            raise ValueError(f"fine label {self.fine.value} not allowed under {self.value.value}")

    def __str__(self) -> str:
        return self.value.value if self.fine is None else f"{self.value.value}/{self.fine.value}"


# --------------------------------------------------------------------------
# Lexicon
# --------------------------------------------------------------------------


class LexiconDecodeError(ValueError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"lexicon is not valid UTF-8 at byte offset {offset}: {reason}")
        self.offset = offset


@dataclass(frozen=True)
class Lexicon:
    forms: frozenset[str] = frozenset()

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Lexicon":
        return cls(frozenset(bare_letter_form(w) for w in words if w.strip()))

    @property
    def size(self) -> int:
        return len(self.forms)

    def __contains__(self, word: str) -> bool:
        return bare_letter_form(word) in self.forms

    def __len__(self) -> int:
        return len(self.forms)


def load_lexicon(source: bytes | BinaryIO | str | Path) -> Lexicon:
    """Read a UTF-8 lexicon, one surface form per line.

    ``source`` may be raw bytes, a binary stream or a path. Every line is
    reduced to its bare-letter form; blank lines are skipped.
    """
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise LexiconDecodeError(exc.start, exc.reason) from exc
    text = text.removeprefix("\ufeff")
    return Lexicon.from_words(line.strip() for line in text.splitlines())


# --------------------------------------------------------------------------
# Character classes
# --------------------------------------------------------------------------


def is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P") or ch in PUNCTUATION_EXTRA


def is_greek_letter(ch: str) -> bool:
    cp = ord(ch)
    return ch.isalpha() and (0x0370 <= cp <= 0x03FF or 0x1F00 <= cp <= 0x1FFF)


def is_latin_letter(ch: str) -> bool:
    return ch.isalpha() and unicodedata.name(ch, "").startswith("LATIN")


def has_greek(token: str) -> bool:
    return any(is_greek_letter(ch) for ch in token)


def has_latin(token: str) -> bool:
    return any(is_latin_letter(ch) for ch in token)


def strip_punctuation(token: str) -> str:
    return "".join(ch for ch in token if not is_punctuation(ch))


def is_punctuation_only(token: str) -> bool:
    return bool(token) and all(is_punctuation(ch) for ch in token)


def is_numeral(token: str) -> bool:
    core = strip_punctuation(token)
    if not core:
        return False
    if all(unicodedata.category(ch) == "Nd" for ch in core):
        return True
    # Greek alphabetic numeral: letters followed by a keraia.
    return core[-1] in KERAIA and all(is_greek_letter(ch) for ch in core[:-1]) and len(core) > 1


def is_latin_word(token: str) -> bool:
    return has_latin(token) and not has_greek(token)


def is_all_caps_greek(token: str) -> bool:
    letters = [ch for ch in token if is_greek_letter(ch)]
    return len(letters) >= 2 and all(ch.isupper() for ch in letters)


def is_page_furniture(token: str) -> bool:
    return is_numeral(token) or is_latin_word(token) or is_all_caps_greek(token)


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------


@dataclass
class _PageContext:
    ops: Sequence[AlignOp]
    collapsed: set[int] = field(default_factory=set)  # hyp indices in a collapse run
    position: dict[int, int] = field(default_factory=dict)  # id(op) -> index in ops

    @classmethod
    def build(cls, ops: Sequence[AlignOp]) -> "_PageContext":
        ctx = cls(ops)
        hyp = sorted(
            ((op.hyp_index, op.hyp_token) for op in ops if op.hyp_index is not None),
            key=lambda x: x[0],
        )
        start = 0
        for k in range(1, len(hyp) + 1):
            if k == len(hyp) or hyp[k][1] != hyp[start][1]:
                if k - start >= COLLAPSE_RUN:
                    ctx.collapsed.update(idx for idx, _ in hyp[start:k])
                start = k
        ctx.position = {id(op): k for k, op in enumerate(ops)}
        return ctx

    def index_of(self, op: AlignOp) -> int | None:
        k = self.position.get(id(op))
        if k is not None:
            return k
        for k, other in enumerate(self.ops):
            if other == op:
                return k
        return None


def _adjacent_run(ops: Sequence[AlignOp], k: int, kind: OpKind, step: int) -> list[AlignOp]:
    run = []
    j = k + step
    while 0 <= j < len(ops) and ops[j].kind is kind:
        run.append(ops[j])
        j += step
    return run


def _is_segmentation(op: AlignOp, ctx: _PageContext) -> bool:
    k = ctx.index_of(op)
    if k is None:
        return False
    ref_bare = bare_letter_form(op.ref_token)
    hyp_bare = bare_letter_form(op.hyp_token)
    # Split: hypothesis pieces around the substitution rebuild the reference.
    after = _adjacent_run(ctx.ops, k, OpKind.INSERT, 1)
    before = _adjacent_run(ctx.ops, k, OpKind.INSERT, -1)
    joined = hyp_bare
    for ins in after:
        joined += bare_letter_form(ins.hyp_token)
        if joined == ref_bare:
            return True
    joined = hyp_bare
    for ins in before:
        joined = bare_letter_form(ins.hyp_token) + joined
        if joined == ref_bare:
            return True
    # Merge: reference pieces around the substitution rebuild the hypothesis.
    after = _adjacent_run(ctx.ops, k, OpKind.DELETE, 1)
    before = _adjacent_run(ctx.ops, k, OpKind.DELETE, -1)
    joined = ref_bare
    for dele in after:
        joined += bare_letter_form(dele.ref_token)
        if joined == hyp_bare:
            return True
    joined = ref_bare
    for dele in before:
        joined = bare_letter_form(dele.ref_token) + joined
        if joined == hyp_bare:
            return True
    return False


def _classify_substitution(op: AlignOp, ctx: _PageContext, lexicon: Lexicon) -> Category:
    ref, hyp = op.ref_token, op.hyp_token
    ref_core, hyp_core = strip_punctuation(ref), strip_punctuation(hyp)
    if ref_core == hyp_core:
        return Category(ErrorCategory.PUNCTUATION)
    ref_bare, hyp_bare = bare_letter_form(ref_core), bare_letter_form(hyp_core)
    if ref_bare == hyp_bare:
        return Category(ErrorCategory.ACCENT_DIACRITIC)
    if (has_greek(ref) and has_latin(hyp)) or (has_latin(ref) and has_greek(hyp)):
        return Category(ErrorCategory.CROSS_SCRIPT)
    if edit_distance(ref_bare, hyp_bare) <= CONFUSION_MAX_EDITS:
        return Category(ErrorCategory.CHAR_CONFUSION)
    if _is_segmentation(op, ctx):
        return Category(ErrorCategory.WORD_SUBSTITUTION, FineLabel.SEGMENTATION)
    fine = FineLabel.REAL_WORD if hyp_bare in lexicon.forms else FineLabel.NON_WORD
    return Category(ErrorCategory.WORD_SUBSTITUTION, fine)


def _classify(op: AlignOp, ctx: _PageContext, lexicon: Lexicon) -> Category:
    if op.kind is OpKind.MATCH:
        raise ValueError("classify_op called on a Match op; only errors are classified")
    if op.hyp_index is not None and op.hyp_index in ctx.collapsed:
        return Category(ErrorCategory.OVERGENERATION, FineLabel.COLLAPSE)
    if op.kind in (OpKind.INSERT, OpKind.DELETE):
        token = op.hyp_token if op.kind is OpKind.INSERT else op.ref_token
        if is_page_furniture(token):
            return Category(ErrorCategory.PAGE_FURNITURE)
        if is_punctuation_only(token):
            return Category(ErrorCategory.PUNCTUATION)
        if op.kind is OpKind.DELETE:
            return Category(ErrorCategory.OMISSION)
        return Category(ErrorCategory.OVERGENERATION)
    return _classify_substitution(op, ctx, lexicon)


def classify_op(op: AlignOp, context: Sequence[AlignOp], lexicon: Lexicon) -> Category:
    """Category of one non-match op, given the page's full op sequence."""
    return _classify(op, _PageContext.build(context), lexicon)


@dataclass(frozen=True)
class ErrorRecord:
    op: AlignOp
    category: Category
    page_id: str
    system_id: str

    def to_row(self) -> dict[str, str]:
        return {
            "page_id": self.page_id,
            "system_id": self.system_id,
            "kind": self.op.kind.value,
            "ref_token": self.op.ref_token or "",
            "hyp_token": self.op.hyp_token or "",
            "category": self.category.value.value,
            "fine": self.category.fine.value if self.category.fine else "",
        }


def classify_page(
    ops: Sequence[AlignOp], lexicon: Lexicon, page_id: str, system_id: str
) -> list[ErrorRecord]:
    ctx = _PageContext.build(ops)
    return [
        ErrorRecord(op, _classify(op, ctx, lexicon), page_id, system_id)
        for op in ops
        if op.kind is not OpKind.MATCH
    ]


# --------------------------------------------------------------------------
# Aggregation and export
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ShareRow:
    count: int
    share: float
    rate_per_1000: float


@dataclass(frozen=True)
class CategoryShares:
    by_category: dict[ErrorCategory, ShareRow]
    total: ShareRow
    gt_word_count: int

    def to_dict(self) -> dict:
        rows = {c.value: vars(r) for c, r in self.by_category.items()}
        return {"categories": rows, "total": vars(self.total), "gt_word_count": self.gt_word_count}


def category_shares(records: Sequence[ErrorRecord], gt_word_count: int) -> CategoryShares:
    """Per-category share of errors and rate per 1000 ground-truth words."""
    if gt_word_count <= 0:
        raise ValueError("gt_word_count must be positive")
    counts = Counter(r.category.value for r in records)
    total = len(records)
    by_cat = {
        cat: ShareRow(
            counts[cat],
            counts[cat] / total if total else 0.0,
            1000.0 * counts[cat] / gt_word_count,
        )
        for cat in ErrorCategory
    }
    return CategoryShares(
        by_cat, ShareRow(total, 1.0 if total else 0.0, 1000.0 * total / gt_word_count), gt_word_count
    )


ERROR_CSV_COLUMNS = ("page_id", "system_id", "kind", "ref_token", "hyp_token", "category", "fine")


def write_error_csv(records: Iterable[ErrorRecord], out: TextIO | str | Path) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", encoding="utf-8", newline="") as fh:
            write_error_csv(records, fh)
        return
    writer = csv.DictWriter(out, fieldnames=ERROR_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(rec.to_row())


def read_error_csv(source: TextIO | str | Path) -> list[dict[str, str]]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            return read_error_csv(fh)
    return list(csv.DictReader(source))


def error_csv_string(records: Iterable[ErrorRecord]) -> str:
    buf = io.StringIO()
    write_error_csv(records, buf)
    return buf.getvalue()
