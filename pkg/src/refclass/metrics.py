"""Evaluation of a classification against the original journal-level one.

Everything here is a pure function of (corpus, taxonomy, result, mask).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .engine import ClassificationResult, Level, Provenance, classifier_labels, n_labels
from .taxonomy import Taxonomy

DEFAULT_SAMPLE_SIZE = 142


class MetricsError(ValueError):
    pass


def _mask(corpus: Corpus, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return np.ones(corpus.n_items, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if len(mask) != corpus.n_items:
        raise MetricsError("mask length differs from corpus size")
    return mask


def agreement_rate(result: ClassificationResult, corpus: Corpus, t: Taxonomy,
                   mask: np.ndarray | None = None) -> float:
    """Share of classified, masked items with a usable original label whose new label matches it.

    Usable: a single non-multidisciplinary category (subject level) or categories
    that all map to one broad area (broad level).
    """
    original = classifier_labels(corpus, t, result.level)
    eligible = _mask(corpus, mask) & (original >= 0) & (result.label >= 0)
    total = int(eligible.sum())
    if total == 0:
        raise MetricsError("no items with a unique original classification to compare")
    return int((result.label[eligible] == original[eligible]).sum()) / total


def agreement_by_label(result: ClassificationResult, corpus: Corpus, t: Taxonomy,
                       mask: np.ndarray | None = None) -> dict[str, tuple[int, float]]:
    """Per original label: (number of eligible items, agreement). Labels without items are omitted."""
    original = classifier_labels(corpus, t, result.level)
    eligible = _mask(corpus, mask) & (original >= 0) & (result.label >= 0)
    width = n_labels(t, result.level)
    totals = np.bincount(original[eligible], minlength=width)
    hits = np.bincount(original[eligible & (result.label == original)], minlength=width)
    names = t.names(result.level.value)
    return {names[j]: (int(totals[j]), float(hits[j] / totals[j])) for j in np.flatnonzero(totals)}


def category_sizes(result: ClassificationResult, t: Taxonomy) -> dict[str, int]:
    counts = np.bincount(result.label[result.label >= 0], minlength=n_labels(t, result.level))
    names = t.names(result.level.value)
    return {names[j]: int(counts[j]) for j in np.flatnonzero(counts)}


def granularity_of_sizes(sizes) -> float:
    sizes = [int(s) for s in sizes if s > 0]
    if not sizes:
        raise MetricsError("granularity of an empty classification is undefined")
    return float(Fraction(sum(sizes), sum(s * s for s in sizes)))


def granularity(result: ClassificationResult) -> float:
    """Classified items divided by the sum of squared category sizes."""
    labels = result.label[result.label >= 0]
    return granularity_of_sizes(np.bincount(labels) if len(labels) else [])


def coverage_by_year(result: ClassificationResult, corpus: Corpus,
                     mask: np.ndarray | None = None) -> dict[int, float]:
    """Per year: classified share of masked items that have references."""
    base = _mask(corpus, mask) & (corpus.out_degree > 0)
    years = corpus.year[base]
    hit = result.label[base] >= 0
    out: dict[int, float] = {}
    for y in np.unique(years):
        sel = years == y
        out[int(y)] = float(hit[sel].sum() / sel.sum())
    return out


@dataclass(frozen=True)
class TieStats:
    tie_rate: float
    tie_broken_by_original_rate: float
    ties: int
    assignments: int
    by_original_defined: bool


def tie_stats(result: ClassificationResult) -> TieStats:
    """Tie rate over tally-based assignments and the share of ties settled by originals.

    Title-fallback assignments are not tallies and are left out. With no ties the
    second rate is reported as 0 and ``by_original_defined`` is False.
    """
    prov = result.provenance[result.label >= 0]
    prov = prov[prov != Provenance.TFIDF]
    n = len(prov)
    ties = int((prov != Provenance.MAJORITY).sum())
    by_original = int((prov == Provenance.TIE_BROKEN_BY_ORIGINAL).sum())
    return TieStats(
        tie_rate=ties / n if n else 0.0,
        tie_broken_by_original_rate=by_original / ties if ties else 0.0,
        ties=ties,
        assignments=n,
        by_original_defined=ties > 0,
    )


def _group_flags(corpus: Corpus, t: Taxonomy) -> tuple[np.ndarray, np.ndarray]:
    """Items in any multidisciplinary category, and items in an area-less multidisciplinary one."""
    owners = np.repeat(np.arange(corpus.n_items), corpus.n_categories_per_item)
    cats = corpus.cat_indices
    multi = np.zeros(corpus.n_items, dtype=bool)
    multi[owners[t.multidisciplinary[cats]]] = True
    science = np.zeros(corpus.n_items, dtype=bool)
    science[owners[t.multidisciplinary[cats] & (t.broad_area[cats] < 0)]] = True
    return multi, science


def counts_table(result: ClassificationResult, corpus: Corpus, t: Taxonomy,
                 mask: np.ndarray | None = None) -> dict[str, dict[str, int]]:
    """Item counts by group for all types and for the masked subset (corpus and outcome)."""
    sub = _mask(corpus, mask)
    has_refs = corpus.out_degree > 0
    multi, science = _group_flags(corpus, t)
    classified = result.label >= 0
    classifiers = classifier_labels(corpus, t, result.level) >= 0
    rows = {
        "all_items": np.ones(corpus.n_items, dtype=bool),
        "with_references": has_refs,
        "multidisciplinary": multi,
        "multidisciplinary_with_references": multi & has_refs,
        "multidisc_science": science,
        "multidisc_science_with_references": science & has_refs,
        "classifier_items": classifiers,
        "classified_items": classified,
        "classified_multidisciplinary": classified & multi,
        "classified_multidisc_science": classified & science,
    }
    return {
        "all_types": {k: int(v.sum()) for k, v in rows.items()},
        "masked": {k: int((v & sub).sum()) for k, v in rows.items()},
    }


@dataclass
class MetricsReport:
    level: str
    n_items: int
    classified: int
    agreement_rate: float | None
    granularity: float | None
    coverage_by_year: dict[int, float]
    tie_rate: float
    tie_broken_by_original_rate: float
    tie_broken_by_original_defined: bool
    category_sizes: dict[str, int]
    counts: dict[str, dict[str, int]]
    provenance_counts: dict[str, int] = field(default_factory=dict)
    agreement_by_label: dict[str, list] = field(default_factory=dict)
    recovery: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coverage_by_year"] = {str(k): v for k, v in sorted(self.coverage_by_year.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def compute_metrics(result: ClassificationResult, corpus: Corpus, t: Taxonomy,
                    mask: np.ndarray | None = None) -> MetricsReport:
    try:
        agree = agreement_rate(result, corpus, t, mask)
    except MetricsError:
        agree = None
    try:
        gran = granularity(result)
    except MetricsError:
        gran = None
    ts = tie_stats(result)
    prov = result.provenance[result.label >= 0]
    return MetricsReport(
        level=result.level.value,
        n_items=result.n_items,
        classified=result.n_classified,
        agreement_rate=agree,
        granularity=gran,
        coverage_by_year=coverage_by_year(result, corpus, mask),
        tie_rate=ts.tie_rate,
        tie_broken_by_original_rate=ts.tie_broken_by_original_rate,
        tie_broken_by_original_defined=ts.by_original_defined,
        category_sizes=category_sizes(result, t),
        counts=counts_table(result, corpus, t, mask),
        provenance_counts={p.label: int((prov == p).sum()) for p in Provenance},
        agreement_by_label={k: [n, a] for k, (n, a) in agreement_by_label(result, corpus, t, mask).items()},
    )


def write_category_sizes(result: ClassificationResult, t: Taxonomy, path: str | os.PathLike) -> None:
    sizes = category_sizes(result, t)
    lines = ["label\tsize\n"] + [f"{k}\t{v}\n" for k, v in sorted(sizes.items(), key=lambda kv: (-kv[1], kv[0]))]
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_coverage(result: ClassificationResult, corpus: Corpus, path: str | os.PathLike,
                   mask: np.ndarray | None = None) -> None:
    cov = coverage_by_year(result, corpus, mask)
    Path(path).write_text("year\tcoverage\n" + "".join(f"{y}\t{c:.6f}\n" for y, c in sorted(cov.items())),
                          encoding="utf-8")


def export_sample(
    result: ClassificationResult,
    corpus: Corpus,
    t: Taxonomy,
    n: int = DEFAULT_SAMPLE_SIZE,
    seed: int = 0,
    out_dir: str | os.PathLike = ".",
    mask: np.ndarray | None = None,
    prefix: str = "sample",
) -> tuple[Path, Path]:
    """Blinded sample for manual comparison of original vs new labels.

    Draws ``n`` classified, masked items whose original label is usable, writes
    them with the two labels in random order, and writes a separate key file
    telling which column holds the original label.
    """
    original = classifier_labels(corpus, t, result.level)
    eligible = np.flatnonzero(_mask(corpus, mask) & (original >= 0) & (result.label >= 0))
    if n > len(eligible):
        raise MetricsError(f"sample of {n} requested but only {len(eligible)} eligible items")
    rng = np.random.default_rng(seed)
    picked = rng.choice(eligible, size=n, replace=False)
    reverse = rng.random(n) < 0.5
    names = t.names(result.level.value)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sample_path = out_dir / f"{prefix}.{result.level.value}.tsv"
    key_path = out_dir / f"{prefix}.{result.level.value}.key.tsv"
    sample = ["row\tkey\ttitle\tlabel_a\tlabel_b\n"]
    key = ["row\tkey\toriginal_in\n"]
    for row, (i, rev) in enumerate(zip(picked, reverse), start=1):
        orig, new = names[original[i]], names[result.label[i]]
        a, b = (new, orig) if rev else (orig, new)
        title = corpus.title(int(i))
        sample.append(f"{row}\t{corpus.keys[i]}\t{' '.join(title) if title else ''}\t{a}\t{b}\n")
        key.append(f"{row}\t{corpus.keys[i]}\t{'label_b' if rev else 'label_a'}\n")
    sample_path.write_text("".join(sample), encoding="utf-8")
    key_path.write_text("".join(key), encoding="utf-8")
    return sample_path, key_path
