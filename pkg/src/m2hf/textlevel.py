"""ASR-text-to-caption similarity: token preprocessing and Jaccard scores.

This level is parameter-free.  Tokens are lowercased, stopword-filtered,
restricted to nouns by lexicon lookup, stemmed by a small fixed suffix
rule set, and deduplicated; pairs of token sets are compared with the
Jaccard index.

Lexicon files are plain text, one token per line, with '#' comments.
The packaged stopword list treats compound function words the same as
ordinary stopwords.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .wti import SimilarityMatrix

_VOWELS = set("aeiou")


def _undouble(word: str) -> str:
    if len(word) >= 3 and word[-1] == word[-2] and word[-1] not in _VOWELS and word[-1] != "s":
        return word[:-1]
    return word


def _strip_once(word: str) -> str:
    if word.endswith("'s") or word.endswith("’s"):
        return word[: -2]
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith(("shes", "ches", "xes", "zes")):
        return word[:-2]
    if word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    if word.endswith("ing") and len(word) > 5:
        return _undouble(word[:-3])
    if word.endswith("ed") and len(word) > 4:
        return _undouble(word[:-2])
    return word


def stem(word: str) -> str:
    """Suffix-stripping stem (plural / possessive / ing / ed), run to fixpoint
    so that stem(stem(w)) == stem(w)."""
    while True:
        out = _strip_once(word)
        if out == word:
            return out
        word = out


@dataclass(frozen=True)
class LexiconConfig:
    stopword_list: frozenset[str]
    noun_lexicon: frozenset[str]  # stem strings
    stemmer: str = "suffix_strip"  # or "identity"

    def stem(self, word: str) -> str:
        return word if self.stemmer == "identity" else stem(word)


def load_token_file(path) -> frozenset[str]:
    tokens = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            tokens.add(line)
    return frozenset(tokens)


def _packaged(name: str) -> frozenset[str]:
    text = resources.files("m2hf").joinpath(f"data/{name}").read_text(encoding="utf-8")
    tokens = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            tokens.add(line)
    return frozenset(tokens)


def default_lexicon() -> LexiconConfig:
    nouns = _packaged("nouns.txt")
    return LexiconConfig(stopword_list=_packaged("stopwords.txt"),
                         noun_lexicon=frozenset(stem(n) for n in nouns))


def builtin_noun_stems() -> list[str]:
    """Sorted stem list of the packaged noun lexicon (used by fixtures)."""
    return sorted(stem(n) for n in _packaged("nouns.txt"))


def preprocess(tokens: list[str], cfg: LexiconConfig) -> frozenset[str]:
    """lowercase -> drop stopwords -> keep nouns -> stem -> deduplicate."""
    out = set()
    for tok in tokens:
        tok = tok.lower()
        if tok in cfg.stopword_list:
            continue
        s = cfg.stem(tok)
        if s not in cfg.noun_lexicon:
            continue
        out.add(s)
    return frozenset(out)


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    """|a & b| / |a | b|; 0.0 when both sets are empty."""
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def text_similarity_matrix(captions, videos, cfg: LexiconConfig) -> SimilarityMatrix:
    """Pairwise Jaccard of preprocessed caption/ASR token sets.

    `captions` are CaptionBundles, `videos` FeatureBundles; an empty ASR
    stream yields a zero column.
    """
    from .tensor import Tensor

    cap_sets = [preprocess(c.raw_tokens, cfg) for c in captions]
    vid_sets = [preprocess(v.asr_tokens, cfg) for v in videos]
    scores = np.zeros((len(cap_sets), len(vid_sets)))
    for i, cs in enumerate(cap_sets):
        for j, vs in enumerate(vid_sets):
            scores[i, j] = jaccard(cs, vs)
    return SimilarityMatrix(level="text", scores=Tensor(scores))
