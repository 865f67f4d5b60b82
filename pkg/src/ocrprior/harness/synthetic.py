"""Small synthetic polytonic Greek corpus and toy predictors for dry runs."""

from __future__ import annotations

from ..prng import Xoshiro256
from ..taxonomy import Lexicon, strip_punctuation
from ..textnorm import bare_letter_form

VOCABULARY = (
    "καὶ τοῦ τὸν τὴν τῆς τῶν τοῖς ἐστὶν οὐκ ἀλλὰ γὰρ δὲ μὲν ὅτι ὥστε "
    "λόγος λόγον ἀνθρώπων ἄνθρωπος πόλεως πόλιν θεὸς θεοῦ ψυχῆς ψυχὴν "
    "ἀρετὴ ἀρετῆς δίκαιον ἀδικίαν νόμος νόμων βασιλεὺς στρατηγὸς πολέμου "
    "εἰρήνην ἡμέρας νυκτὸς θάλασσαν χώραν φίλον ἐχθρὸν σοφίαν ἀλήθειαν "
    "ἔλεγεν εἶπεν ἔγραψεν ἐποίησεν ἦλθεν ἀπέθανεν γιγνώσκει βούλεται "
    "δύναται φησὶν ἐκεῖνος οὗτος αὐτὸς ἡμεῖς ὑμεῖς πάντες πολλοὶ ὀλίγοι "
    "μέγας καλὸς ἀγαθὸς κακὸν νέος παλαιὸς πρῶτον ὕστερον πάλιν ἤδη"
).split()

TERMINATORS = (".", ".", "·", ";")


def make_document(rng: Xoshiro256, paragraphs: int = 3) -> str:
    lines = []
    for _ in range(paragraphs):
        sentences = []
        for _ in range(2 + rng.randbelow(3)):
            words = [VOCABULARY[rng.randbelow(len(VOCABULARY))] for _ in range(6 + rng.randbelow(7))]
            for k in range(len(words) - 1):
                if rng.bernoulli(0.08):
                    words[k] += ","
            words[-1] += TERMINATORS[rng.randbelow(len(TERMINATORS))]
            sentences.append(" ".join(words))
        lines.append(" ".join(sentences))
    return "\n".join(lines)


def synthetic_corpus(n_docs: int = 20, seed: int = 0) -> dict[str, str]:
    rng = Xoshiro256(seed)
    return {f"doc{k:03d}": make_document(rng) for k in range(n_docs)}


def vocabulary_lexicon() -> Lexicon:
    return Lexicon.from_words(VOCABULARY)


def copy_predictor(perturbed: str, original: str) -> str:
    """A faithful reader: transcribes exactly what is on the page."""
    return perturbed


def repair_predictor(perturbed: str, original: str, lexicon: Lexicon | None = None) -> str:
    """A prior-driven reader: keeps words it recognises and, where the page
    shows a non-word, emits the word the original text had in that slot.

    Both texts must share their line and word layout, which every
    perturbation guarantees.
    """
    lexicon = lexicon or vocabulary_lexicon()
    out_lines = []
    for p_line, o_line in zip(perturbed.split("\n"), original.split("\n"), strict=True):
        p_words, o_words = p_line.split(), o_line.split()
        if len(p_words) != len(o_words):
            raise ValueError("perturbed and original lines differ in word count")
        kept = [
            p if bare_letter_form(strip_punctuation(p)) in lexicon.forms else o
            for p, o in zip(p_words, o_words)
        ]
        out_lines.append(" ".join(kept))
    return "\n".join(out_lines)
