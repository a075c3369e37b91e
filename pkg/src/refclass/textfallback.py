"""Title-similarity fallback for items the reference tally cannot reach.

An item adopts the label of the classifier whose title shares the largest summed
inverse title-word frequency with its own title. Word frequencies come from every
titled item in the corpus; candidates are found through an inverted index over
classifier titles only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Corpus
from .engine import (
    NONE,
    Assignment,
    ClassificationResult,
    Level,
    Provenance,
    Reason,
    classifier_labels,
)
from .taxonomy import Taxonomy

# candidates whose fast similarity is this close to the best are re-scored exactly
_RESCORE_RTOL = 1e-9


class TextFallbackError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    doc_freq: Mapping[str, int]
    n_titles: int

    def idf(self, word: str) -> float | None:
        df = self.doc_freq.get(word)
        if df is None:
            return None
        return math.log(self.n_titles / df)

    def __contains__(self, word: str) -> bool:
        return word in self.doc_freq

    def __len__(self) -> int:
        return len(self.doc_freq)


def build_vocabulary(corpus: Corpus) -> Vocabulary:
    """Document frequency of every title word over all titled items."""
    if corpus.has_title is None or not corpus.has_title.any():
        raise TextFallbackError("corpus has no titles")
    titled = np.flatnonzero(corpus.has_title)
    owners = np.repeat(np.arange(corpus.n_items, dtype=np.int64), np.diff(corpus.title_indptr))
    width = max(len(corpus.vocabulary), 1)
    pairs = np.unique(owners * width + corpus.title_tokens)
    df = np.bincount(pairs % width, minlength=len(corpus.vocabulary))
    doc_freq = {corpus.vocabulary[j]: int(df[j]) for j in np.flatnonzero(df)}
    return Vocabulary(doc_freq, len(titled))


def tfidf_similarity(a: Iterable[str], b: Iterable[str], v: Vocabulary) -> float:
    """Sum of idf over the distinct words the two titles share."""
    shared = set(a) & set(b)
    return math.fsum(v.idf(w) for w in shared if w in v)


@dataclass(frozen=True)
class TitleIndex:
    level: Level
    postings: Mapping[str, np.ndarray]  # word -> sorted classifier handles
    labels: np.ndarray  # classifier label per item handle, -1 for non-classifiers
    titles: Sequence[frozenset[str] | None]


def build_title_index(corpus: Corpus, t: Taxonomy, level: Level = Level.SUBJECT,
                      labels: np.ndarray | None = None) -> TitleIndex:
    """Inverted index over the titles of classifier items at ``level``."""
    if labels is None:
        labels = classifier_labels(corpus, t, level)
    if corpus.has_title is None:
        raise TextFallbackError("corpus has no titles")
    members = np.flatnonzero((labels >= 0) & corpus.has_title)
    owners = np.repeat(np.arange(corpus.n_items, dtype=np.int64), np.diff(corpus.title_indptr))
    selected = np.isin(owners, members)
    pairs = np.unique(corpus.title_tokens[selected].astype(np.int64) * corpus.n_items + owners[selected])
    words, items = pairs // corpus.n_items, pairs % corpus.n_items
    starts = np.flatnonzero(np.r_[True, words[1:] != words[:-1]]) if len(words) else np.zeros(0, dtype=np.int64)
    bounds = np.r_[starts, len(words)]
    postings = {
        corpus.vocabulary[int(words[s])]: items[s:e].astype(np.int32)
        for s, e in zip(bounds[:-1], bounds[1:])
    }
    titles = [None] * corpus.n_items
    for i in members:
        titles[i] = frozenset(corpus.title(int(i)))
    return TitleIndex(Level(level), postings, np.asarray(labels, dtype=np.int32), titles)


def _pick_label(candidates: Iterable[int], index: TitleIndex, global_counts, names) -> int:
    labels = sorted({int(index.labels[c]) for c in candidates})
    if len(labels) == 1:
        return labels[0]
    biggest = max(int(global_counts[lab]) for lab in labels)
    leaders = [lab for lab in labels if int(global_counts[lab]) == biggest]
    return min(leaders, key=lambda lab: names[lab])


def best_matches(tokens: Iterable[str], index: TitleIndex, v: Vocabulary,
                 exclude: int | None = None) -> tuple[float, list[int]]:
    """Highest positive similarity and the classifiers attaining it (empty when none)."""
    query = sorted(set(tokens))
    cand_parts, weight_parts = [], []
    for w in query:
        idf = v.idf(w)
        post = index.postings.get(w)
        if not idf or post is None:
            continue
        cand_parts.append(post)
        weight_parts.append(np.full(len(post), idf))
    if not cand_parts:
        return 0.0, []
    cands = np.concatenate(cand_parts)
    weights = np.concatenate(weight_parts)
    if exclude is not None:
        keep = cands != exclude
        cands, weights = cands[keep], weights[keep]
    if len(cands) == 0:
        return 0.0, []
    uniq, inverse = np.unique(cands, return_inverse=True)
    approx = np.bincount(inverse, weights=weights)
    top = approx.max()
    near = uniq[approx >= top * (1 - _RESCORE_RTOL)]
    qset = set(query)
    exact = {int(c): tfidf_similarity(qset, index.titles[c], v) for c in near}
    best = max(exact.values())
    if best <= 0:
        return 0.0, []
    return best, sorted(c for c, s in exact.items() if s == best)


def classify_by_title(
    item: int,
    corpus: Corpus,
    index: TitleIndex,
    v: Vocabulary,
    global_counts: Sequence[int],
    t: Taxonomy,
) -> Assignment | None:
    """Label of the most title-similar classifier (the item itself excluded).

    Equal best matches with different labels go to the label with the larger
    global count, then the smallest label name. Zero similarity is no match.
    """
    tokens = corpus.title(item)
    if not tokens:
        return None
    _, winners = best_matches(tokens, index, v, exclude=item)
    if not winners:
        return None
    label = _pick_label(winners, index, global_counts, t.names(index.level.value))
    return Assignment(item=item, label=label, provenance=Provenance.TFIDF, pass_=1)


def apply_text_fallback(result: ClassificationResult, corpus: Corpus, t: Taxonomy,
                        index: TitleIndex | None = None, v: Vocabulary | None = None) -> ClassificationResult:
    """Fill unclassified titled items by title similarity; returns a new result."""
    if v is None:
        v = build_vocabulary(corpus)
    if index is None:
        index = build_title_index(corpus, t, result.level)
    if index.level is not result.level:
        raise TextFallbackError("title index level differs from result level")
    label = result.label.copy()
    prov = result.provenance.copy()
    pass_number = result.pass_number.copy()
    reason = result.reason.copy()
    todo = np.flatnonzero((label == NONE) & corpus.has_title)
    for i in todo:
        a = classify_by_title(int(i), corpus, index, v, result.global_counts, t)
        if a is None:
            continue
        label[i] = a.label
        prov[i] = Provenance.TFIDF
        pass_number[i] = result.passes
        reason[i] = Reason.CLASSIFIED
    return ClassificationResult(result.level, label, prov, pass_number, reason, result.global_counts,
                                passes=result.passes, mode=result.mode, distribution=result.distribution)
