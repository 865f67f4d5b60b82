"""Deterministic Unicode normalization for reference and hypothesis text.

Every stage is a pure string transform. ``normalize_page`` runs the enabled
stages of a :class:`NormProfile` in a fixed order so that the result is
idempotent under re-application.
"""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass, fields, replace
from enum import Enum

logger = logging.getLogger(__name__)


class CanonicalForm(str, Enum):
    NFC = "NFC"
    NFKC = "NFKC"


ELISION_MARKS = frozenset("’ʼ'᾽")
ELISION_TARGET = "’"
HYPHENS = "-‐"
ISOLATED_BRACKETS = frozenset("[]()\u2014\u2013")

# Elements whose content is annotation not visible on the page.
DROPPED_ELEMENTS = ("note",)


@dataclass(frozen=True)
class NormProfile:
    canonical_form: CanonicalForm = CanonicalForm.NFC
    strip_markup: bool = False
    rejoin_hyphenation: bool = False
    unify_elision: bool = False
    isolate_brackets: bool = False
    split_digit_letter: bool = False
    strip_diacritics: bool = False
    strip_spaces: bool = False
    fold_case: bool = False
    final_sigma_to_sigma: bool = False

    @classmethod
    def from_mapping(cls, data: dict) -> "NormProfile":
        """Build a profile from a config mapping, optionally extending a preset.

        ``{"preset": "raw", "strip_markup": true}`` starts from the ``raw``
        preset and overrides one flag. Unknown keys raise ``ValueError``.
        """
        data = dict(data)
        base = PRESETS[data.pop("preset")] if "preset" in data else cls()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown NormProfile keys: {sorted(unknown)}")
        if "canonical_form" in data:
            data["canonical_form"] = CanonicalForm(data["canonical_form"])
        return replace(base, **data)

    def to_mapping(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["canonical_form"] = self.canonical_form.value
        return out


PRESETS: dict[str, NormProfile] = {
    "raw": NormProfile(),
    "no-diac": NormProfile(strip_diacritics=True),
    "rq2": NormProfile(strip_diacritics=True, strip_spaces=True),
    # Pre-alignment cleanup for the word-level error taxonomy.
    "taxonomy": NormProfile(
        strip_markup=True,
        rejoin_hyphenation=True,
        unify_elision=True,
        isolate_brackets=True,
        split_digit_letter=True,
    ),
    # Intervention scoring: compatibility normalization plus tag stripping.
    "rq3": NormProfile(canonical_form=CanonicalForm.NFKC, strip_markup=True),
}


def get_profile(name_or_profile: str | NormProfile) -> NormProfile:
    if isinstance(name_or_profile, NormProfile):
        return name_or_profile
    try:
        return PRESETS[name_or_profile]
    except KeyError:
        raise ValueError(
            f"unknown profile preset {name_or_profile!r}; choose from {sorted(PRESETS)}"
        ) from None


def _is_mark(ch: str) -> bool:
    return unicodedata.category(ch).startswith("M")


def _is_letter(ch: str) -> bool:
    return unicodedata.category(ch).startswith("L")


def _is_digit(ch: str) -> bool:
    return unicodedata.category(ch) == "Nd"


# --------------------------------------------------------------------------
# Markup
# --------------------------------------------------------------------------

_TAG = re.compile(r"<(/?)([A-Za-z][\w:.-]*)([^<>]*?)(/?)>")
_DROP = re.compile(
    r"<(%s)\b[^<>]*?(?<!/)>.*?</\1\s*>" % "|".join(DROPPED_ELEMENTS), re.DOTALL
)
_DROP_OPEN = re.compile(r"<(%s)\b[^<>]*?(?<!/)>" % "|".join(DROPPED_ELEMENTS))


def _strip_tag(m: re.Match) -> str:
    closing, name, _, self_closing = m.groups()
    if name.lower() in DROPPED_ELEMENTS and not self_closing:
        return m.group(0)
    return ""


def strip_markup(text: str, warnings: list[str] | None = None) -> str:
    """Remove tag delimiters, keeping their text content.

    ``<note>`` elements are dropped with their content. An unclosed
    ``<note>`` is left verbatim together with everything after it (its
    extent is unknown) and reported through ``warnings`` and the logger.
    """
    head, tail = text, ""
    prev = None
    while prev != head:
        prev = head
        head = _DROP.sub("", head)
        unclosed = _DROP_OPEN.search(head)
        if unclosed is not None:
            msg = f"unclosed <{unclosed.group(1)}> at offset {unclosed.start()}; left verbatim"
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            head, tail = head[: unclosed.start()], head[unclosed.start():] + tail
        head = _TAG.sub(_strip_tag, head)
    return head + tail


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------

_HYPHEN_BREAK = re.compile(r"[%s]\r?\n" % re.escape(HYPHENS))


def _base_before(text: str, pos: int) -> str:
    while pos > 0:
        pos -= 1
        if not _is_mark(text[pos]):
            return text[pos]
    return ""


def _base_after(text: str, pos: int) -> str:
    while pos < len(text):
        if not _is_mark(text[pos]):
            return text[pos]
        pos += 1
    return ""


def rejoin_hyphenation(text: str) -> str:
    """Join ``stem-<newline>continuation`` into one word.

    Fires only when a letter precedes the hyphen and a letter starts the next
    line; combining marks on either side are skipped over.
    """

    def join(m: re.Match) -> str:
        before = _base_before(m.string, m.start())
        after = _base_after(m.string, m.end())
        if before and after and _is_letter(before) and _is_letter(after):
            return ""
        return m.group(0)

    return _HYPHEN_BREAK.sub(join, text)


def unify_elision(text: str) -> str:
    return "".join(ELISION_TARGET if ch in ELISION_MARKS else ch for ch in text)


def isolate_brackets(text: str) -> str:
    """Surround editorial brackets and dashes with exactly one space where
    they touch a non-space character."""
    out: list[str] = []
    pad_next = False
    for ch in text:
        if ch in ISOLATED_BRACKETS:
            if out and not out[-1].isspace():
                out.append(" ")
            out.append(ch)
            pad_next = True
            continue
        if pad_next and not ch.isspace():
            out.append(" ")
        pad_next = False
        out.append(ch)
    return "".join(out)


def split_digit_letter(text: str) -> str:
    """Insert a space at every digit/letter junction, in both directions.

    Combining marks are transparent: ``1́a`` splits between the mark and
    ``a`` so later diacritic stripping cannot create a new junction.
    """
    out: list[str] = []
    last_base = ""  # "d", "l", or ""
    for ch in text:
        if _is_mark(ch):
            out.append(ch)
            continue
        kind = "d" if _is_digit(ch) else "l" if _is_letter(ch) else ""
        if kind and last_base and kind != last_base:
            out.append(" ")
        out.append(ch)
        last_base = kind
    return "".join(out)


def strip_diacritics(text: str) -> str:
    """Decompose, drop every combining mark, recompose.

    >>> strip_diacritics("ᾧ")
    'ω'
    """
    decomposed = unicodedata.normalize("NFD", text)
    return unicodedata.normalize("NFC", "".join(ch for ch in decomposed if not _is_mark(ch)))


def fold_final_sigma(text: str) -> str:
    return text.replace("ς", "σ")


def bare_letter_form(word: str) -> str:
    """Lexicon key for a word: no diacritics, lowercase, final sigma as σ."""
    out = strip_diacritics(word).lower()
    # Some lowercase mappings introduce combining marks (e.g. U+0130).
    out = strip_diacritics(out)
    return fold_final_sigma(out)


def strip_spaces(text: str) -> str:
    return "".join(ch for ch in text if not ch.isspace())


def normalize_page(
    text: str, profile: NormProfile | str = "raw", warnings: list[str] | None = None
) -> str:
    """Run every enabled stage of ``profile`` over ``text``.

    Stage order: canonical form, markup strip, hyphenation rejoin, elision
    unification, bracket isolation, digit/letter split, diacritic strip,
    case fold and final sigma, space strip.
    """
    profile = get_profile(profile)
    form = profile.canonical_form.value
    out = unicodedata.normalize(form, text)
    if profile.strip_markup:
        out = strip_markup(out, warnings)
    if profile.rejoin_hyphenation:
        out = rejoin_hyphenation(out)
    if profile.unify_elision:
        out = unify_elision(out)
    if profile.isolate_brackets:
        out = isolate_brackets(out)
    if profile.split_digit_letter:
        out = split_digit_letter(out)
    if profile.strip_diacritics:
        out = strip_diacritics(out)
    if profile.fold_case or profile.final_sigma_to_sigma:
        if profile.fold_case:
            out = out.lower()
        if profile.final_sigma_to_sigma:
            out = fold_final_sigma(out)
        out = unicodedata.normalize(form, out)
        if profile.strip_diacritics:
            out = strip_diacritics(out)
    if profile.strip_spaces:
        out = strip_spaces(out)
    # Removing tags, line breaks or spaces can leave composable sequences.
    return unicodedata.normalize(form, out)


def tokenize_words(text: str) -> list[str]:
    return text.split()
