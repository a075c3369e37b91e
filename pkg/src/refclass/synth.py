"""Synthetic corpora with planted ground-truth categories.

Items are laid out in year order and only cite earlier items. Each reference
lands in the citing item's planted category with ``within_category_prob``,
otherwise in a uniformly chosen other category. Category popularity follows a
power law so that category sizes span a wide range.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .corpus import Corpus, DocType, write_corpus
from .engine import ClassificationResult, Level
from .taxonomy import Taxonomy, write_taxonomy

KEYWORDS_PER_CATEGORY = 12
NOISE_WORDS = 60
_SYLLABLES = [c + v for c in "bcdfghjklmnprstvz" for v in "aeiou"]


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    n_items: int = 1000
    n_categories: int = 25
    n_areas: int | None = None
    taxonomy: Taxonomy | None = field(default=None, compare=False)
    refs_mean: float = 15.0
    refs_dispersion: float = 0.0
    within_category_prob: float = 0.9
    multi_category_fraction: float = 0.0
    multidisciplinary_fraction: float = 0.0
    titleless_fraction: float = 0.0
    refless_fraction: float = 0.0
    year_range: tuple[int, int] = (1950, 2017)
    size_exponent: float = 1.0
    same_area_prob: float = 0.8
    doc_type_weights: tuple[float, ...] = (0.70, 0.10, 0.05, 0.05, 0.05, 0.05)
    titles: bool = True
    seed: int = 0

    def validate(self) -> None:
        probs = {
            "within_category_prob": self.within_category_prob,
            "multi_category_fraction": self.multi_category_fraction,
            "multidisciplinary_fraction": self.multidisciplinary_fraction,
            "titleless_fraction": self.titleless_fraction,
            "refless_fraction": self.refless_fraction,
            "same_area_prob": self.same_area_prob,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0 or math.isnan(p):
                raise GeneratorError(f"{name} must be in [0, 1], got {p}")
        if self.multi_category_fraction + self.multidisciplinary_fraction > 1.0:
            raise GeneratorError("multi_category_fraction + multidisciplinary_fraction exceeds 1")
        if self.n_items < 0:
            raise GeneratorError("n_items must be >= 0")
        if self.taxonomy is None and self.n_categories < 2:
            raise GeneratorError("n_categories must be >= 2")
        if self.n_areas is not None and not 1 <= self.n_areas <= max(self.n_categories, 1):
            raise GeneratorError("n_areas must be between 1 and n_categories")
        if self.refs_mean < 0 or self.refs_dispersion < 0:
            raise GeneratorError("refs_mean and refs_dispersion must be non-negative")
        if self.refs_mean > 0 and self.refless_fraction >= 1.0 and self.n_items > 0:
            raise GeneratorError("references requested but refless_fraction is 1")
        if self.year_range[0] > self.year_range[1]:
            raise GeneratorError("year_range is empty")
        if len(self.doc_type_weights) != len(DocType) or min(self.doc_type_weights) < 0 \
                or sum(self.doc_type_weights) <= 0:
            raise GeneratorError(f"doc_type_weights needs {len(DocType)} non-negative weights")


@dataclass(frozen=True)
class PlantedTruth:
    keys: tuple[str, ...]
    category: np.ndarray  # int32 category ids
    area: np.ndarray  # int32 area ids

    @property
    def n_items(self) -> int:
        return len(self.category)

    def labels(self, level: Level) -> np.ndarray:
        return self.category if Level(level) is Level.SUBJECT else self.area


def synthetic_taxonomy(n_categories: int, n_areas: int | None = None) -> Taxonomy:
    """Planted categories grouped into areas, one '<area>, Multidisciplinary' per area,
    and an area-less 'Multidisciplinary Sciences'."""
    n_areas = n_areas or max(2, math.ceil(n_categories / 5))
    areas = [f"Area {a:02d}" for a in range(n_areas)]
    rows = [(f"Category {c:03d}", areas[c * n_areas // n_categories], False) for c in range(n_categories)]
    rows += [(f"{a}, Multidisciplinary", a, True) for a in areas]
    rows.append(("Multidisciplinary Sciences", None, True))
    return Taxonomy.build(rows, areas=areas)


def _pseudo_words(rng: np.random.Generator, count: int) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        k = int(rng.integers(2, 5))
        w = "".join(_SYLLABLES[j] for j in rng.integers(0, len(_SYLLABLES), size=k))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _ref_counts(rng: np.random.Generator, cfg: GeneratorConfig, n: int) -> np.ndarray:
    if cfg.refs_mean == 0:
        return np.zeros(n, dtype=np.int64)
    if cfg.refs_dispersion > 0:
        # negative binomial with variance mean + dispersion * mean^2
        r = 1.0 / cfg.refs_dispersion
        lam = rng.gamma(shape=r, scale=cfg.refs_mean / r, size=n)
        return rng.poisson(lam)
    return rng.poisson(cfg.refs_mean, size=n)


def generate(cfg: GeneratorConfig) -> tuple[Corpus, PlantedTruth]:
    """Deterministic synthetic corpus and its planted truth for a config (seed included)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    t = cfg.taxonomy if cfg.taxonomy is not None else synthetic_taxonomy(cfg.n_categories, cfg.n_areas)
    planted_cats = np.flatnonzero(~t.multidisciplinary & (t.broad_area >= 0)).astype(np.int32)
    k = len(planted_cats)
    if k < 2:
        raise GeneratorError("taxonomy needs at least two plantable categories")
    n = cfg.n_items

    weights = (np.arange(1, k + 1, dtype=float)) ** (-cfg.size_exponent)
    weights /= weights.sum()
    year = np.sort(rng.integers(cfg.year_range[0], cfg.year_range[1] + 1, size=n)).astype(np.int32)
    planted_idx = rng.choice(k, size=n, p=weights).astype(np.int64)
    planted = planted_cats[planted_idx]
    doc_p = np.asarray(cfg.doc_type_weights, dtype=float)
    doc_type = rng.choice(len(DocType), size=n, p=doc_p / doc_p.sum()).astype(np.int8)

    # original categories
    kind = rng.random(n)
    is_md = kind < cfg.multidisciplinary_fraction
    is_multi = ~is_md & (kind < cfg.multidisciplinary_fraction + cfg.multi_category_fraction)
    area_md = {}
    for c in np.flatnonzero(t.multidisciplinary & (t.broad_area >= 0)):
        area_md.setdefault(int(t.broad_area[c]), int(c))
    science = [int(c) for c in np.flatnonzero(t.multidisciplinary & (t.broad_area < 0))]
    by_area: dict[int, np.ndarray] = {}
    for c in planted_cats:
        by_area.setdefault(int(t.broad_area[c]), [])
        by_area[int(t.broad_area[c])].append(int(c))
    by_area = {a: np.asarray(cs, dtype=np.int32) for a, cs in by_area.items()}

    cats: list[list[int]] = [[int(c)] for c in planted]
    md_coin = rng.random(n)
    for i in np.flatnonzero(is_md):
        area = int(t.broad_area[planted[i]])
        options = []
        if area in area_md:
            options.append(area_md[area])
        if science:
            options.append(science[0])
        if options:
            cats[i] = [options[0] if (md_coin[i] < 0.5 or len(options) == 1) else options[1]]
    multi_items = np.flatnonzero(is_multi)
    extra_n = rng.integers(1, 6, size=len(multi_items))
    for i, m in zip(multi_items, extra_n):
        own = int(planted[i])
        same = by_area[int(t.broad_area[own])]
        chosen = {own}
        for _ in range(int(m)):
            pool = same if (rng.random() < cfg.same_area_prob and len(same) > 1) else planted_cats
            c = int(pool[rng.integers(len(pool))])
            if c == own:
                c = int(pool[(np.searchsorted(pool, own) + 1 + rng.integers(len(pool) - 1)) % len(pool)])
            chosen.add(c)
        cats[i] = sorted(chosen)

    # references, backward in item order
    counts = _ref_counts(rng, cfg, n)
    counts[rng.random(n) < cfg.refless_fraction] = 0
    src = np.repeat(np.arange(n, dtype=np.int32), counts)
    m = len(src)
    inside = rng.random(m) < cfg.within_category_prob
    shift = rng.integers(1, k, size=m) if k > 1 else np.zeros(m, dtype=np.int64)
    want = np.where(inside, planted_idx[src], (planted_idx[src] + shift) % k)
    pick = rng.random(m)
    dst = np.full(m, -1, dtype=np.int32)
    order = np.argsort(want, kind="stable")
    bounds = np.searchsorted(want[order], np.arange(k + 1))
    members = np.argsort(planted_idx, kind="stable")
    member_bounds = np.searchsorted(planted_idx[members], np.arange(k + 1))
    for c in range(k):
        sel = order[bounds[c]:bounds[c + 1]]
        if len(sel) == 0:
            continue
        pos = members[member_bounds[c]:member_bounds[c + 1]]
        earlier = np.searchsorted(pos, src[sel])
        ok = earlier > 0
        chosen = (pick[sel][ok] * earlier[ok]).astype(np.int64)
        dst[sel[ok]] = pos[chosen]
    keep = dst >= 0
    src, dst = src[keep], dst[keep]

    # titles
    title_csr = None
    if cfg.titles:
        words = _pseudo_words(rng, k * KEYWORDS_PER_CATEGORY + NOISE_WORDS)
        has_title = rng.random(n) >= cfg.titleless_fraction
        n_kw = np.where(has_title, rng.integers(2, 6, size=n), 0)
        n_noise = np.where(has_title, rng.integers(1, 4, size=n), 0)
        kw = planted_idx[np.repeat(np.arange(n), n_kw)] * KEYWORDS_PER_CATEGORY \
            + rng.integers(0, KEYWORDS_PER_CATEGORY, size=int(n_kw.sum()))
        noise = k * KEYWORDS_PER_CATEGORY + rng.integers(0, NOISE_WORDS, size=int(n_noise.sum()))
        lens = n_kw + n_noise
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lens, out=indptr[1:])
        tokens = np.empty(int(indptr[-1]), dtype=np.int32)
        owner_kw = np.repeat(np.arange(n), n_kw)
        pos_kw = indptr[owner_kw] + (np.arange(len(owner_kw)) - np.repeat(np.cumsum(n_kw) - n_kw, n_kw))
        tokens[pos_kw] = kw
        owner_nz = np.repeat(np.arange(n), n_noise)
        pos_nz = indptr[owner_nz] + np.repeat(n_kw, n_noise) \
            + (np.arange(len(owner_nz)) - np.repeat(np.cumsum(n_noise) - n_noise, n_noise))
        tokens[pos_nz] = noise
        title_csr = (indptr, tokens, has_title, words)

    width = max(7, len(str(max(n - 1, 0))))
    keys = [f"I{i:0{width}d}" for i in range(n)]
    corpus = Corpus.from_arrays(keys, doc_type, year, cats, (src, dst), title_csr=title_csr)
    truth = PlantedTruth(tuple(keys), planted.astype(np.int32), t.broad_area[planted].astype(np.int32))
    return corpus, truth


def generated_taxonomy(cfg: GeneratorConfig) -> Taxonomy:
    return cfg.taxonomy if cfg.taxonomy is not None else synthetic_taxonomy(cfg.n_categories, cfg.n_areas)


def score_against_truth(result: ClassificationResult, truth: PlantedTruth) -> float:
    """Fraction of classified items whose label is the planted one at the result's level."""
    if result.n_items != truth.n_items:
        raise GeneratorError("result and truth describe different corpora")
    classified = result.label >= 0
    total = int(classified.sum())
    if total == 0:
        raise GeneratorError("nothing classified")
    return int((result.label[classified] == truth.labels(result.level)[classified]).sum()) / total


def write_truth(truth: PlantedTruth, t: Taxonomy, path: str | os.PathLike) -> None:
    names = t.labels
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key\ttrue_category\n")
        fh.writelines(f"{k}\t{names[c]}\n" for k, c in zip(truth.keys, truth.category))


def read_truth(path: str | os.PathLike, corpus: Corpus, t: Taxonomy) -> PlantedTruth:
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    if list(frame.columns[:2]) != ["key", "true_category"]:
        raise GeneratorError(f"{path}: expected header key<TAB>true_category")
    items = pd.Index(corpus.keys).get_indexer(frame["key"])
    if len(frame) != corpus.n_items or (items < 0).any():
        raise GeneratorError(f"{path}: truth keys do not match the corpus")
    cat = np.full(corpus.n_items, -1, dtype=np.int32)
    cat[items] = [t.category_id(c) for c in frame["true_category"]]
    return PlantedTruth(tuple(corpus.keys), cat, t.broad_area[cat].astype(np.int32))


def write_generated(corpus: Corpus, truth: PlantedTruth, t: Taxonomy, out_dir: str | os.PathLike) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "items": out / "items.tsv",
        "refs": out / "refs.tsv",
        "taxonomy": out / "taxonomy.tsv",
        "truth": out / "truth.tsv",
    }
    write_corpus(corpus, t, paths["items"], paths["refs"])
    write_taxonomy(t, paths["taxonomy"])
    write_truth(truth, t, paths["truth"])
    return paths
