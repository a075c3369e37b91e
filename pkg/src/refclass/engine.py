"""Reference-based reclassification: tally classifier labels of neighbours, take the mode.

Every pass runs in two phases over an immutable snapshot. The tally phase counts
labelled neighbours per item and accumulates the global per-label counts; the
decision phase picks each item's label, breaking ties first by adding the item's
own original labels, then by the larger global count, and finally by the
lexicographically smallest label name. Items are processed in contiguous chunks
that may run on a thread pool; chunking never changes the output.
"""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Corpus, Item
from .taxonomy import Taxonomy

log = logging.getLogger(__name__)

NONE = -1
CHUNK_ITEMS = 1 << 18
RETAIN_LIMIT = 1_000_000


class Level(str, Enum):
    SUBJECT = "subject"
    BROAD = "broad"

    def __str__(self) -> str:
        return self.value


class Mode(str, Enum):
    REFERENCES = "references"
    REFERENCES_AND_CITATIONS = "references_and_citations"

    def __str__(self) -> str:
        return self.value


class SizeMetric(str, Enum):
    OCCURRENCES = "occurrences"
    DISTINCT_ITEMS = "distinct_items"

    def __str__(self) -> str:
        return self.value


class TiebreakSource(str, Enum):
    ORIGINAL = "original"
    PREVIOUS = "previous"

    def __str__(self) -> str:
        return self.value


class Provenance(IntEnum):
    MAJORITY = 0
    TIE_BROKEN_BY_ORIGINAL = 1
    TIE_BROKEN_BY_SIZE = 2
    TIE_BROKEN_LEXICOGRAPHIC = 3
    TFIDF = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "Provenance":
        return cls[text.strip().upper()]


class Reason(IntEnum):
    CLASSIFIED = 0
    NO_REFERENCES = 1
    NO_CLASSIFIER_REFERENCES = 2

    @property
    def label(self) -> str:
        return self.name.lower()


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    item: int
    label: int
    provenance: Provenance
    pass_: int
    distribution: dict[int, int] | None = None


@dataclass(eq=False)
class ClassificationResult:
    """Per-item outcome of a pipeline run at one level.

    ``label`` is -1 for unclassified items; ``pass_number`` is the pass in which
    the item first received a label (0 when unclassified). ``distribution`` holds
    the retained raw tallies as CSR ``(indptr, labels, counts)`` when requested.
    """

    level: Level
    label: np.ndarray
    provenance: np.ndarray
    pass_number: np.ndarray
    reason: np.ndarray
    global_counts: np.ndarray
    passes: int = 1
    mode: Mode = Mode.REFERENCES
    distribution: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    @property
    def n_items(self) -> int:
        return len(self.label)

    @property
    def classified(self) -> np.ndarray:
        return self.label >= 0

    @property
    def n_classified(self) -> int:
        return int(np.count_nonzero(self.label >= 0))

    def distribution_of(self, i: int) -> dict[int, int] | None:
        if self.distribution is None:
            return None
        indptr, labels, counts = self.distribution
        lo, hi = indptr[i], indptr[i + 1]
        return {int(a): int(b) for a, b in zip(labels[lo:hi], counts[lo:hi])}

    def assignment(self, i: int) -> Assignment | None:
        if self.label[i] < 0:
            return None
        return Assignment(
            item=i,
            label=int(self.label[i]),
            provenance=Provenance(int(self.provenance[i])),
            pass_=int(self.pass_number[i]),
            distribution=self.distribution_of(i),
        )

    def assignments(self) -> list[Assignment | None]:
        return [self.assignment(i) for i in range(self.n_items)]

    def unclassified_reason(self, i: int) -> Reason:
        return Reason(int(self.reason[i]))


@dataclass(frozen=True)
class PipelineConfig:
    level: Level = Level.SUBJECT
    passes: int = 1
    mode: Mode = Mode.REFERENCES
    size_metric: SizeMetric = SizeMetric.OCCURRENCES
    retain_distributions: bool | None = None  # None: on below RETAIN_LIMIT items
    tiebreak_source: TiebreakSource = TiebreakSource.ORIGINAL
    threads: int = 1
    chunk_items: int = CHUNK_ITEMS

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "size_metric", SizeMetric(self.size_metric))
        object.__setattr__(self, "tiebreak_source", TiebreakSource(self.tiebreak_source))
        if int(self.passes) < 1:
            raise EngineError("passes must be >= 1")
        if int(self.threads) < 1:
            raise EngineError("threads must be >= 1")
        if int(self.chunk_items) < 1:
            raise EngineError("chunk_items must be >= 1")


def n_labels(t: Taxonomy, level: Level) -> int:
    return t.n_categories if Level(level) is Level.SUBJECT else t.n_areas


# -- classifier eligibility --------------------------------------------------------------


def classifier_label_subject(item: Item, t: Taxonomy) -> int | None:
    """The item's only original category, unless it is multidisciplinary."""
    if len(item.original_categories) != 1:
        return None
    (cat,) = item.original_categories
    return None if t.multidisciplinary[cat] else int(cat)


def classifier_label_broad(item: Item, t: Taxonomy) -> int | None:
    """The broad area shared by all original categories, if every one has the same area."""
    if not item.original_categories:
        return None
    areas = {int(t.broad_area[c]) for c in item.original_categories}
    if len(areas) != 1:
        return None
    (area,) = areas
    return None if area < 0 else area


def classifier_labels(corpus: Corpus, t: Taxonomy, level: Level) -> np.ndarray:
    """Vectorised classifier rule: per-item label at ``level`` or -1."""
    n = corpus.n_items
    out = np.full(n, NONE, dtype=np.int32)
    ncat = corpus.n_categories_per_item
    if Level(level) is Level.SUBJECT:
        single = np.flatnonzero(ncat == 1)
        cats = corpus.cat_indices[corpus.cat_indptr[single]]
        ok = ~t.multidisciplinary[cats]
        out[single[ok]] = cats[ok]
        return out
    nonempty = np.flatnonzero(ncat > 0)
    if len(nonempty) == 0:
        return out
    areas = t.broad_area[corpus.cat_indices]
    starts = corpus.cat_indptr[nonempty]
    lo = np.minimum.reduceat(areas, starts) if len(areas) else areas
    hi = np.maximum.reduceat(areas, starts) if len(areas) else areas
    ok = (lo == hi) & (lo >= 0)
    out[nonempty[ok]] = lo[ok]
    return out


def eligible_originals(categories: Iterable[int], t: Taxonomy, level: Level) -> set[int]:
    """Original categories that may enter a tie-break tally, as labels at ``level``."""
    if Level(level) is Level.SUBJECT:
        return {int(c) for c in categories if not t.multidisciplinary[c]}
    return {int(t.broad_area[c]) for c in categories if t.broad_area[c] >= 0}


def _originals_csr(corpus: Corpus, t: Taxonomy, level: Level) -> tuple[np.ndarray, np.ndarray]:
    n = corpus.n_items
    rows = np.repeat(np.arange(n, dtype=np.int64), corpus.n_categories_per_item)
    cats = corpus.cat_indices
    if Level(level) is Level.SUBJECT:
        keep = ~t.multidisciplinary[cats]
        rows, labels = rows[keep], cats[keep].astype(np.int64)
    else:
        areas = t.broad_area[cats]
        keep = areas >= 0
        rows, labels = rows[keep], areas[keep].astype(np.int64)
        width = max(t.n_areas, 1)
        uniq = np.unique(rows * width + labels)
        rows, labels = uniq // width, uniq % width
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return indptr, labels.astype(np.int32)


# -- scalar reference operations --------------------------------------------------------


def tally(item: Item | int, corpus: Corpus, labeler, mode: Mode = Mode.REFERENCES) -> Counter:
    """Count neighbour labels for one item.

    ``labeler`` maps an item handle to a label or None/-1 (an array or a callable).
    """
    i = item.id if isinstance(item, Item) else int(item)
    get = labeler if callable(labeler) else (lambda j: labeler[j])
    neighbours = list(corpus.references(i))
    if Mode(mode) is Mode.REFERENCES_AND_CITATIONS:
        neighbours += list(corpus.citations(i))
    dist: Counter = Counter()
    for j in neighbours:
        lab = get(int(j))
        if lab is not None and lab >= 0:
            dist[int(lab)] += 1
    return dist


def decide(
    dist: Mapping[int, int],
    item_originals: Iterable[int],
    global_counts: Sequence[int] | Mapping[int, int],
    t: Taxonomy,
    level: Level = Level.SUBJECT,
) -> tuple[int, Provenance]:
    """Pick one label from a non-empty tally.

    ``item_originals`` are the item's original category ids; only those eligible at
    ``level`` are added (once each) when the raw tally has a tie.
    """
    counts = {k: v for k, v in dist.items() if v > 0}
    if not counts:
        raise EngineError("cannot decide on an empty distribution")
    top = max(counts.values())
    tied = [k for k, v in counts.items() if v == top]
    if len(tied) == 1:
        return tied[0], Provenance.MAJORITY
    for lab in eligible_originals(item_originals, t, level):
        counts[lab] = counts.get(lab, 0) + 1
    top = max(counts.values())
    tied = [k for k, v in counts.items() if v == top]
    if len(tied) == 1:
        return tied[0], Provenance.TIE_BROKEN_BY_ORIGINAL
    return _break_by_size(tied, global_counts, t.names(level))


def _break_by_size(tied, global_counts, names) -> tuple[int, Provenance]:
    sizes = {k: int(global_counts[k]) for k in tied}
    biggest = max(sizes.values())
    leaders = [k for k in tied if sizes[k] == biggest]
    if len(leaders) == 1:
        return leaders[0], Provenance.TIE_BROKEN_BY_SIZE
    return min(leaders, key=lambda k: names[k]), Provenance.TIE_BROKEN_LEXICOGRAPHIC


# -- vectorised pass ---------------------------------------------------------------------


@dataclass
class _Tally:
    lo: int
    item: np.ndarray  # int64, absolute handles, sorted
    label: np.ndarray  # int64, ascending within an item
    count: np.ndarray  # int64
    occurrences: np.ndarray  # per-label contribution counts of this chunk


def _gather(indptr: np.ndarray, indices: np.ndarray, lo: int, hi: int, labeler: np.ndarray):
    a, b = indptr[lo], indptr[hi]
    owners = np.repeat(np.arange(lo, hi, dtype=np.int64), np.diff(indptr[lo:hi + 1]))
    labs = labeler[indices[a:b]]
    keep = labs >= 0
    return owners[keep], labs[keep].astype(np.int64)


def _group_counts(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique keys and their multiplicities (input need not be sorted)."""
    if len(keys) == 0:
        return keys, np.zeros(0, dtype=np.int64)
    keys = np.sort(keys, kind="stable")
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    counts = np.diff(np.r_[starts, len(keys)])
    return keys[starts], counts


def _tally_chunk(corpus: Corpus, labeler: np.ndarray, mode: Mode, width: int, lo: int, hi: int) -> _Tally:
    owners, labs = _gather(corpus.out_indptr, corpus.out_indices, lo, hi, labeler)
    if mode is Mode.REFERENCES_AND_CITATIONS:
        o2, l2 = _gather(corpus.in_indptr, corpus.in_indices, lo, hi, labeler)
        owners = np.concatenate([owners, o2])
        labs = np.concatenate([labs, l2])
    occurrences = np.bincount(labs, minlength=width).astype(np.int64)
    keys, counts = _group_counts((owners - lo) * width + labs)
    return _Tally(lo, keys // width + lo, keys % width, counts, occurrences)


def _group_starts(item: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.r_[True, item[1:] != item[:-1]])


def _max_stats(item: np.ndarray, count: np.ndarray):
    """Per-entry flag 'count equals its item's maximum' and per-entry number of maxima."""
    starts = _group_starts(item)
    sizes = np.diff(np.r_[starts, len(item)])
    group_max = np.maximum.reduceat(count, starts)
    is_max = count == np.repeat(group_max, sizes)
    n_max = np.add.reduceat(is_max.astype(np.int64), starts)
    return is_max, np.repeat(n_max, sizes)


def _decide_chunk(
    tl: _Tally,
    width: int,
    originals: tuple[np.ndarray, np.ndarray],
    global_counts: np.ndarray,
    lex_rank: np.ndarray,
    label_out: np.ndarray,
    prov_out: np.ndarray,
) -> None:
    if len(tl.item) == 0:
        return
    is_max, n_max = _max_stats(tl.item, tl.count)
    unique = is_max & (n_max == 1)
    label_out[tl.item[unique]] = tl.label[unique]
    prov_out[tl.item[unique]] = Provenance.MAJORITY

    tied_entry = n_max > 1
    if not tied_entry.any():
        return
    t_item, t_label, t_count = tl.item[tied_entry], tl.label[tied_entry], tl.count[tied_entry]
    tied_items = t_item[_group_starts(t_item)]

    # stage 1: add each eligible original label once
    o_indptr, o_labels = originals
    o_len = o_indptr[tied_items + 1] - o_indptr[tied_items]
    o_item = np.repeat(tied_items, o_len)
    o_pos = np.repeat(o_indptr[tied_items] - np.cumsum(np.r_[0, o_len[:-1]]), o_len) + np.arange(o_len.sum())
    o_lab = o_labels[o_pos].astype(np.int64)
    keys = np.concatenate([t_item * width + t_label, o_item * width + o_lab])
    weights = np.concatenate([t_count, np.ones(len(o_item), dtype=np.int64)])
    order = np.argsort(keys, kind="stable")
    keys, weights = keys[order], weights[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    a_key = keys[starts]
    a_cnt = np.add.reduceat(weights, starts)
    a_item, a_lab = a_key // width, a_key % width

    is_max, n_max = _max_stats(a_item, a_cnt)
    unique = is_max & (n_max == 1)
    label_out[a_item[unique]] = a_lab[unique]
    prov_out[a_item[unique]] = Provenance.TIE_BROKEN_BY_ORIGINAL

    # stage 2: larger global count, then smallest label name
    still = is_max & (n_max > 1)
    if not still.any():
        return
    s_item, s_lab = a_item[still], a_lab[still]
    s_size = global_counts[s_lab]
    s_rank = lex_rank[s_lab]
    order = np.lexsort((s_rank, -s_size, s_item))
    s_item, s_lab, s_size = s_item[order], s_lab[order], s_size[order]
    first = _group_starts(s_item)
    # every still-tied group has at least two entries
    lexi = s_size[first] == s_size[first + 1]
    label_out[s_item[first]] = s_lab[first]
    prov_out[s_item[first]] = np.where(lexi, Provenance.TIE_BROKEN_LEXICOGRAPHIC, Provenance.TIE_BROKEN_BY_SIZE)


def _chunks(n: int, size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _map(fn, args, threads: int):
    if threads <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda a: fn(*a), args))


def classify_pass(
    corpus: Corpus,
    t: Taxonomy,
    level: Level = Level.SUBJECT,
    labeler: np.ndarray | None = None,
    mode: Mode = Mode.REFERENCES,
    *,
    size_metric: SizeMetric = SizeMetric.OCCURRENCES,
    retain_distributions: bool | None = None,
    tiebreak_originals: tuple[np.ndarray, np.ndarray] | None = None,
    threads: int = 1,
    chunk_items: int = CHUNK_ITEMS,
    pass_index: int = 1,
) -> ClassificationResult:
    """One full tally/decide pass.

    ``labeler`` gives every item's label as a classifier at ``level`` (-1 when it
    is not one); it defaults to the initial classifier rule.
    ``tiebreak_originals`` overrides the per-item labels added on a tie, as CSR.
    """
    level, mode, size_metric = Level(level), Mode(mode), SizeMetric(size_metric)
    if mode is Mode.REFERENCES_AND_CITATIONS and level is Level.SUBJECT:
        warnings.warn("citation mode has only been validated at broad-area level", stacklevel=2)
    n = corpus.n_items
    width = n_labels(t, level)
    if labeler is None:
        labeler = classifier_labels(corpus, t, level)
    labeler = np.asarray(labeler, dtype=np.int32)
    if len(labeler) != n:
        raise EngineError("labeler length differs from corpus size")
    if retain_distributions is None:
        retain_distributions = n < RETAIN_LIMIT
    if tiebreak_originals is None:
        tiebreak_originals = _originals_csr(corpus, t, level)
    chunks = _chunks(n, chunk_items)

    # phase 1: tallies and global counts
    tallies = _map(lambda lo, hi: _tally_chunk(corpus, labeler, mode, width, lo, hi), chunks, threads)
    if size_metric is SizeMetric.OCCURRENCES:
        global_counts = np.zeros(width, dtype=np.int64)
        for tl in tallies:
            global_counts += tl.occurrences
    else:
        global_counts = np.bincount(labeler[labeler >= 0], minlength=width).astype(np.int64)
    global_counts.setflags(write=False)

    # phase 2: decisions against the frozen global counts
    label = np.full(n, NONE, dtype=np.int32)
    prov = np.full(n, NONE, dtype=np.int8)
    lex_rank = t.lex_rank(level.value)
    _map(lambda tl: _decide_chunk(tl, width, tiebreak_originals, global_counts, lex_rank, label, prov),
         [(tl,) for tl in tallies], threads)

    reason = np.full(n, Reason.CLASSIFIED, dtype=np.int8)
    unclassified = label < 0
    no_refs = corpus.out_degree == 0
    reason[unclassified & no_refs] = Reason.NO_REFERENCES
    reason[unclassified & ~no_refs] = Reason.NO_CLASSIFIER_REFERENCES
    pass_number = np.where(unclassified, 0, pass_index).astype(np.int8)

    distribution = None
    if retain_distributions:
        d_item = np.concatenate([tl.item for tl in tallies]) if tallies else np.zeros(0, np.int64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(d_item, minlength=n), out=indptr[1:])
        distribution = (
            indptr,
            np.concatenate([tl.label for tl in tallies]).astype(np.int32) if tallies else np.zeros(0, np.int32),
            np.concatenate([tl.count for tl in tallies]) if tallies else np.zeros(0, np.int64),
        )
    return ClassificationResult(level, label, prov, pass_number, reason, global_counts,
                                passes=pass_index, mode=mode, distribution=distribution)


def iterate(
    corpus: Corpus,
    t: Taxonomy,
    level: Level,
    prev: ClassificationResult,
    mode: Mode = Mode.REFERENCES,
    *,
    tiebreak_source: TiebreakSource = TiebreakSource.ORIGINAL,
    **kwargs,
) -> ClassificationResult:
    """Re-run the pass with previous assignments standing in for neighbour labels.

    Neighbours without a previous assignment fall back to the initial classifier
    rule, so every pass-1 classifier stays one.
    """
    level = Level(level)
    if prev.level is not level:
        raise EngineError(f"previous result is at level {prev.level}, not {level}")
    if prev.n_items != corpus.n_items:
        raise EngineError("previous result belongs to a different corpus")
    labeler = np.where(prev.label >= 0, prev.label, classifier_labels(corpus, t, level)).astype(np.int32)
    if TiebreakSource(tiebreak_source) is TiebreakSource.PREVIOUS:
        kwargs["tiebreak_originals"] = _previous_csr(corpus, t, level, prev)
    result = classify_pass(corpus, t, level, labeler, mode, pass_index=prev.passes + 1, **kwargs)
    carried = (prev.label >= 0) & (result.label >= 0)
    result.pass_number[carried] = prev.pass_number[carried]
    return result


def _previous_csr(corpus: Corpus, t: Taxonomy, level: Level, prev: ClassificationResult):
    indptr, labels = _originals_csr(corpus, t, level)
    lens = np.diff(indptr)
    has_prev = prev.label >= 0
    lens = np.where(has_prev, 1, lens)
    new_indptr = np.zeros(len(lens) + 1, dtype=np.int64)
    np.cumsum(lens, out=new_indptr[1:])
    new_labels = np.empty(new_indptr[-1], dtype=np.int32)
    keep_rows = np.repeat(~has_prev, np.diff(indptr))
    new_labels[np.repeat(~has_prev, lens)] = labels[keep_rows]
    new_labels[new_indptr[:-1][has_prev]] = prev.label[has_prev]
    return new_indptr, new_labels


def run_pipeline(corpus: Corpus, t: Taxonomy, config: PipelineConfig | None = None, **overrides) -> ClassificationResult:
    """Initial pass followed by ``passes - 1`` iterative passes."""
    config = replace(config or PipelineConfig(), **overrides) if overrides else (config or PipelineConfig())
    common = dict(
        size_metric=config.size_metric,
        retain_distributions=config.retain_distributions,
        threads=config.threads,
        chunk_items=config.chunk_items,
    )
    result = classify_pass(corpus, t, config.level, None, config.mode, **common)
    for _ in range(config.passes - 1):
        result = iterate(corpus, t, config.level, result, config.mode,
                         tiebreak_source=config.tiebreak_source, **common)
    log.info("%s level, %d pass(es): %d of %d items classified",
             config.level, config.passes, result.n_classified, result.n_items)
    return result
