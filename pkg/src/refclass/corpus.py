"""Items, their original journal-level categories, and the reference graph.

The graph is held as two CSR adjacency structures (references and their
transpose, the citations) over dense int32 item handles. Ingest reads the items
file once, then streams the reference file in chunks, drops dangling references
and self-citations, and fills fixed-size arrays from per-item counts.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .taxonomy import Taxonomy

log = logging.getLogger(__name__)

MAX_CATEGORIES = 6
ITEM_COLUMNS = ("key", "doc_type", "year", "categories", "title")
REF_COLUMNS = ("citing_key", "cited_key")
DEFAULT_YEAR_RANGE = (1800, 2100)
REF_CHUNK_ROWS = 4_000_000

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


class CorpusError(ValueError):
    """Unrecoverable ingest problem (ambiguous identity, strict-mode rejection, bad file)."""


class DocType(IntEnum):
    ARTICLE = 0
    PROCEEDINGS_PAPER = 1
    REVIEW = 2
    EDITORIAL = 3
    LETTER = 4
    OTHER = 5

    @classmethod
    def parse(cls, text: str) -> "DocType":
        name = re.sub(r"[\s\-]+", "_", text.strip().lower())
        return cls.__members__.get(name.upper(), cls.OTHER)

    @property
    def label(self) -> str:
        return self.name.lower()


RESEARCH_DOC_TYPES = frozenset({DocType.ARTICLE, DocType.PROCEEDINGS_PAPER})


def tokenize(title: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than 2 and pure numbers."""
    return [tok for tok in _TOKEN_SPLIT.split(title.lower()) if len(tok) >= 2 and not tok.isdigit()]


@dataclass(frozen=True)
class Item:
    id: int
    key: str
    doc_type: DocType
    year: int
    original_categories: frozenset[int]
    title: tuple[str, ...] | None = None


@dataclass
class IngestReport:
    items_read: int = 0
    items_kept: int = 0
    rejected_unknown_category: int = 0
    rejected_too_many_categories: int = 0
    rejected_bad_year: int = 0
    references_read: int = 0
    edges_kept: int = 0
    dangling_dropped: int = 0
    self_citations_dropped: int = 0
    unknown_categories: dict[str, int] = field(default_factory=dict)

    @property
    def rejected_count(self) -> int:
        return self.rejected_unknown_category + self.rejected_too_many_categories + self.rejected_bad_year

    @property
    def dangling_count(self) -> int:
        return self.dangling_dropped

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rejected_count"] = self.rejected_count
        d["unknown_categories"] = dict(sorted(self.unknown_categories.items()))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _csr(rows: np.ndarray, cols: np.ndarray, n_rows: int) -> tuple[np.ndarray, np.ndarray]:
    """Count-then-fill CSR build; rows are sorted by (row, col)."""
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    if len(rows):
        np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    order = np.argsort(rows.astype(np.int64) * max(n_rows, 1) + cols)
    return indptr, np.ascontiguousarray(cols[order], dtype=np.int32)


def _check_csr_rows(indptr: np.ndarray, n_rows: int) -> np.ndarray:
    return np.repeat(np.arange(n_rows, dtype=np.int32), np.diff(indptr))


class Corpus:
    """Immutable item table plus reference/citation adjacency."""

    def __init__(
        self,
        keys: Sequence[str],
        doc_type: np.ndarray,
        year: np.ndarray,
        cat_indptr: np.ndarray,
        cat_indices: np.ndarray,
        out_indptr: np.ndarray,
        out_indices: np.ndarray,
        in_indptr: np.ndarray,
        in_indices: np.ndarray,
        title_indptr: np.ndarray | None = None,
        title_tokens: np.ndarray | None = None,
        has_title: np.ndarray | None = None,
        vocabulary: Sequence[str] = (),
    ):
        self.keys = list(keys)
        self.doc_type = np.asarray(doc_type, dtype=np.int8)
        self.year = np.asarray(year, dtype=np.int32)
        self.cat_indptr = cat_indptr
        self.cat_indices = cat_indices
        self.out_indptr = out_indptr
        self.out_indices = out_indices
        self.in_indptr = in_indptr
        self.in_indices = in_indices
        self.title_indptr = title_indptr
        self.title_tokens = title_tokens
        self.has_title = has_title
        self.vocabulary = list(vocabulary)
        for arr in (self.doc_type, self.year, cat_indptr, cat_indices, out_indptr, out_indices,
                    in_indptr, in_indices, title_indptr, title_tokens, has_title):
            if arr is not None:
                arr.setflags(write=False)

    @classmethod
    def from_arrays(
        cls,
        keys: Sequence[str],
        doc_type: Sequence[int] | np.ndarray,
        year: Sequence[int] | np.ndarray,
        categories: Sequence[Iterable[int]] | tuple[np.ndarray, np.ndarray],
        edges: tuple[np.ndarray, np.ndarray] | Sequence[tuple[int, int]] = (),
        titles: Sequence[Sequence[str] | None] | None = None,
        title_csr: tuple[np.ndarray, np.ndarray, np.ndarray, Sequence[str]] | None = None,
    ) -> "Corpus":
        """Assemble a corpus from in-memory data with edges given as item handles.

        ``categories`` is either one iterable of category ids per item or a CSR pair
        ``(indptr, indices)``. Self-citations are dropped; duplicate keys raise.
        """
        n = len(keys)
        if len(set(keys)) != n:
            raise CorpusError("duplicate external key")
        if isinstance(categories, tuple) and len(categories) == 2 and isinstance(categories[0], np.ndarray):
            cat_indptr, cat_indices = categories
            cat_indptr = np.asarray(cat_indptr, dtype=np.int64)
            cat_indices = np.asarray(cat_indices, dtype=np.int32)
        else:
            sets = [sorted(set(int(c) for c in cs)) for cs in categories]
            if len(sets) != n:
                raise CorpusError("categories length differs from keys")
            cat_indptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum([len(s) for s in sets], out=cat_indptr[1:])
            cat_indices = np.fromiter((c for s in sets for c in s), dtype=np.int32, count=int(cat_indptr[-1]))
        if np.any(np.diff(cat_indptr) > MAX_CATEGORIES):
            raise CorpusError(f"an item has more than {MAX_CATEGORIES} original categories")

        if isinstance(edges, tuple) and len(edges) == 2 and isinstance(edges[0], np.ndarray):
            src = np.asarray(edges[0], dtype=np.int32)
            dst = np.asarray(edges[1], dtype=np.int32)
        else:
            arr = np.asarray(list(edges), dtype=np.int32).reshape(-1, 2)
            src, dst = arr[:, 0], arr[:, 1]
        if len(src) and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
            raise CorpusError("edge endpoint outside the corpus")
        keep = src != dst
        src, dst = src[keep], dst[keep]
        out_indptr, out_indices = _csr(src, dst, n)
        in_indptr, in_indices = _csr(dst, src, n)

        t_indptr = t_tokens = has_title = None
        vocab: Sequence[str] = ()
        if title_csr is not None:
            t_indptr, t_tokens, has_title, vocab = title_csr
        elif titles is not None:
            t_indptr, t_tokens, has_title, vocab = _encode_titles(titles)
        return cls(keys, np.asarray(doc_type), np.asarray(year), cat_indptr, cat_indices,
                   out_indptr, out_indices, in_indptr, in_indices, t_indptr, t_tokens, has_title, vocab)

    # -- sizes -------------------------------------------------------------------------

    @property
    def n_items(self) -> int:
        return len(self.keys)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def n_edges(self) -> int:
        return len(self.out_indices)

    @property
    def has_titles(self) -> bool:
        return self.has_title is not None and bool(self.has_title.any())

    # -- per-item views ----------------------------------------------------------------

    def references(self, i: int) -> np.ndarray:
        return self.out_indices[self.out_indptr[i]:self.out_indptr[i + 1]]

    def citations(self, i: int) -> np.ndarray:
        return self.in_indices[self.in_indptr[i]:self.in_indptr[i + 1]]

    def categories(self, i: int) -> np.ndarray:
        return self.cat_indices[self.cat_indptr[i]:self.cat_indptr[i + 1]]

    def title(self, i: int) -> tuple[str, ...] | None:
        if self.has_title is None or not self.has_title[i]:
            return None
        ids = self.title_tokens[self.title_indptr[i]:self.title_indptr[i + 1]]
        return tuple(self.vocabulary[j] for j in ids)

    def item(self, i: int) -> Item:
        return Item(
            id=i,
            key=self.keys[i],
            doc_type=DocType(int(self.doc_type[i])),
            year=int(self.year[i]),
            original_categories=frozenset(int(c) for c in self.categories(i)),
            title=self.title(i),
        )

    def __iter__(self):
        return (self.item(i) for i in range(self.n_items))

    @cached_property
    def key_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.keys)}

    @cached_property
    def key_order(self) -> np.ndarray:
        """Item handles in ascending external-key order (output row order)."""
        if not self.keys:
            return np.zeros(0, dtype=np.int64)
        return np.argsort(np.array(self.keys, dtype=str), kind="stable")

    @property
    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_indptr)

    @property
    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_indptr)

    @property
    def n_categories_per_item(self) -> np.ndarray:
        return np.diff(self.cat_indptr)

    def edge_sources(self) -> np.ndarray:
        return _check_csr_rows(self.out_indptr, self.n_items)

    def check_invariants(self) -> None:
        """Raise AssertionError if adjacency is inconsistent."""
        n = self.n_items
        assert self.out_indptr[-1] == len(self.out_indices) == self.in_indptr[-1] == len(self.in_indices)
        src = _check_csr_rows(self.out_indptr, n)
        dst = self.out_indices
        if len(dst):
            assert dst.min() >= 0 and dst.max() < n, "dangling edge"
        assert not np.any(src == dst), "self-citation edge"
        t_src = self.in_indices
        t_dst = _check_csr_rows(self.in_indptr, n)
        a = np.lexsort((dst, src))
        b = np.lexsort((t_dst, t_src))
        assert np.array_equal(src[a], t_src[b]) and np.array_equal(dst[a], t_dst[b]), "in_edges is not the transpose"


def _encode_titles(titles: Sequence[Sequence[str] | str | None]):
    vocab: dict[str, int] = {}
    counts = np.zeros(len(titles), dtype=np.int64)
    has_title = np.zeros(len(titles), dtype=bool)
    flat: list[int] = []
    for i, title in enumerate(titles):
        if title is None:
            continue
        toks = tokenize(title) if isinstance(title, str) else list(title)
        has_title[i] = True
        counts[i] = len(toks)
        for tok in toks:
            j = vocab.get(tok)
            if j is None:
                j = vocab[tok] = len(vocab)
            flat.append(j)
    indptr = np.zeros(len(titles) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, np.asarray(flat, dtype=np.int32), has_title, list(vocab)


# -- ingest ----------------------------------------------------------------------------


def _is_jsonl(path: str | os.PathLike) -> bool:
    return str(path).endswith((".jsonl", ".json", ".ndjson"))


def _read_items_frame(path: str | os.PathLike) -> pd.DataFrame:
    if _is_jsonl(path):
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from None
                cats = rec.get("categories") or ""
                if isinstance(cats, list):
                    cats = "|".join(cats)
                records.append({
                    "key": str(rec["key"]),
                    "doc_type": str(rec.get("doc_type") or "other"),
                    "year": str(rec.get("year", "")),
                    "categories": cats,
                    "title": rec.get("title"),
                })
        frame = pd.DataFrame.from_records(records, columns=list(ITEM_COLUMNS))
        frame["title"] = frame["title"].astype(object)
        return frame
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, quoting=csv.QUOTE_NONE,
                        encoding="utf-8")
    missing = [c for c in ITEM_COLUMNS[:4] if c not in frame.columns]
    if missing:
        raise CorpusError(f"{path}: missing columns {missing}")
    if "title" not in frame.columns:
        frame["title"] = None
    else:
        frame["title"] = frame["title"].where(frame["title"] != "", None)
    return frame


def _iter_ref_chunks(path: str | os.PathLike, chunk_rows: int):
    if _is_jsonl(path):
        cite, cited = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                cite.append(str(rec["citing_key"]))
                cited.append(str(rec["cited_key"]))
                if len(cite) >= chunk_rows:
                    yield pd.DataFrame({"citing_key": cite, "cited_key": cited})
                    cite, cited = [], []
        if cite:
            yield pd.DataFrame({"citing_key": cite, "cited_key": cited})
        return
    reader = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, quoting=csv.QUOTE_NONE,
                         encoding="utf-8", chunksize=chunk_rows, usecols=list(REF_COLUMNS))
    yield from reader


def _resolve_keys(index: pd.Index, keys: pd.Series) -> np.ndarray:
    """Item handles for keys, -1 when absent; whitespace is only stripped on a miss."""
    out = index.get_indexer(keys)
    miss = np.flatnonzero(out < 0)
    if len(miss):
        out[miss] = index.get_indexer(keys.iloc[miss].str.strip())
    return out


def load_corpus(
    items_source: str | os.PathLike,
    refs_source: str | os.PathLike | None,
    t: Taxonomy,
    *,
    strict: bool = False,
    year_range: tuple[int, int] = DEFAULT_YEAR_RANGE,
    load_titles: bool = True,
    chunk_rows: int = REF_CHUNK_ROWS,
) -> tuple[Corpus, IngestReport]:
    """Read an items file and a references file into a :class:`Corpus`.

    Rows with unknown category labels, more than six categories, or an
    unparseable/out-of-range year are rejected and counted (``strict`` raises on
    unknown categories instead). Duplicate keys always raise.
    """
    report = IngestReport()
    frame = _read_items_frame(items_source)
    report.items_read = len(frame)
    keys = frame["key"].str.strip()
    dup = keys.duplicated()
    if dup.any():
        raise CorpusError(f"duplicate key {keys[dup].iloc[0]!r} in {items_source}")

    # categories: explode to (row, label) pairs and resolve against the taxonomy
    cat_lists = frame["categories"].str.split("|")
    exploded = cat_lists.explode().str.strip()
    exploded = exploded[exploded.notna() & (exploded != "")]
    cat_ids = exploded.map(t._index)
    unknown = cat_ids.isna()
    bad_rows = np.zeros(len(frame), dtype=bool)
    if unknown.any():
        for label, cnt in exploded[unknown].value_counts().sort_index().items():
            report.unknown_categories[label] = int(cnt)
        if strict:
            first = exploded[unknown].iloc[0]
            raise CorpusError(f"unknown subject category {first!r} (strict mode)")
        bad_rows[np.unique(exploded.index[unknown.to_numpy()])] = True
        report.rejected_unknown_category = int(bad_rows.sum())

    pair_rows = exploded.index.to_numpy()[~unknown.to_numpy()]
    pair_cats = cat_ids[~unknown].to_numpy(dtype=np.int64)
    pairs = np.unique(pair_rows.astype(np.int64) * max(t.n_categories, 1) + pair_cats)
    pair_rows = pairs // max(t.n_categories, 1)
    pair_cats = pairs % max(t.n_categories, 1)
    n_cats = np.bincount(pair_rows, minlength=len(frame))
    too_many = (n_cats > MAX_CATEGORIES) & ~bad_rows
    report.rejected_too_many_categories = int(too_many.sum())
    bad_rows |= too_many

    years = pd.to_numeric(frame["year"].str.strip(), errors="coerce")
    bad_year = (years.isna() | (years < year_range[0]) | (years > year_range[1])).to_numpy() & ~bad_rows
    report.rejected_bad_year = int(bad_year.sum())
    bad_rows |= bad_year

    keep = ~bad_rows
    new_id = np.full(len(frame), -1, dtype=np.int64)
    new_id[keep] = np.arange(int(keep.sum()))
    kept_keys = keys[keep].tolist()
    n = len(kept_keys)
    report.items_kept = n

    pmask = keep[pair_rows] if len(pair_rows) else np.zeros(0, dtype=bool)
    cat_indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(new_id[pair_rows[pmask]], minlength=n), out=cat_indptr[1:])
    cat_indices = pair_cats[pmask].astype(np.int32)  # pairs already sorted by (row, cat)

    doc_names = frame["doc_type"][keep]
    codes = {name: int(DocType.parse(name)) for name in doc_names.unique()}
    doc_type = doc_names.map(codes).to_numpy(dtype=np.int8)
    year = years[keep].to_numpy(dtype=np.int32) if n else np.zeros(0, dtype=np.int32)

    title_csr = None
    if load_titles and frame["title"].notna().any():
        title_csr = _encode_titles([t_ if isinstance(t_, str) else None for t_ in frame["title"][keep]])

    key_index = pd.Index(kept_keys)
    src_parts: list[np.ndarray] = []
    dst_parts: list[np.ndarray] = []
    if refs_source is not None:
        for chunk in _iter_ref_chunks(refs_source, chunk_rows):
            report.references_read += len(chunk)
            s = _resolve_keys(key_index, chunk["citing_key"])
            d = _resolve_keys(key_index, chunk["cited_key"])
            ok = (s >= 0) & (d >= 0)
            report.dangling_dropped += int((~ok).sum())
            s, d = s[ok], d[ok]
            self_loop = s == d
            report.self_citations_dropped += int(self_loop.sum())
            src_parts.append(s[~self_loop].astype(np.int32))
            dst_parts.append(d[~self_loop].astype(np.int32))
    src = np.concatenate(src_parts) if src_parts else np.zeros(0, dtype=np.int32)
    dst = np.concatenate(dst_parts) if dst_parts else np.zeros(0, dtype=np.int32)
    del src_parts, dst_parts
    report.edges_kept = len(src)

    out_indptr, out_indices = _csr(src, dst, n)
    in_indptr, in_indices = _csr(dst, src, n)
    del src, dst
    kwargs = {}
    if title_csr is not None:
        kwargs = dict(title_indptr=title_csr[0], title_tokens=title_csr[1], has_title=title_csr[2],
                      vocabulary=title_csr[3])
    corpus = Corpus(kept_keys, doc_type, year, cat_indptr, cat_indices,
                    out_indptr, out_indices, in_indptr, in_indices, **kwargs)
    log.info("ingested %d items (%d rejected), %d edges (%d dangling, %d self-citations dropped)",
             n, report.rejected_count, report.edges_kept, report.dangling_dropped,
             report.self_citations_dropped)
    return corpus, report


def filter_doc_types(c: Corpus, kinds: Iterable[DocType | str] | None) -> np.ndarray:
    """Boolean mask of items whose document type is in ``kinds`` (None or "all" = every item)."""
    if kinds is None or kinds == "all":
        return np.ones(c.n_items, dtype=bool)
    codes = [int(k) if isinstance(k, DocType) else int(DocType.parse(k)) for k in kinds]
    return np.isin(c.doc_type, np.asarray(codes, dtype=np.int8))


def write_corpus(c: Corpus, t: Taxonomy, items_path: str | os.PathLike, refs_path: str | os.PathLike) -> None:
    """Write the items and references TSV files (rows in handle order)."""
    names = t.labels
    with open(items_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(ITEM_COLUMNS) + "\n")
        doc_labels = [d.label for d in DocType]
        lines = []
        for i in range(c.n_items):
            cats = "|".join(names[j] for j in c.categories(i))
            title = c.title(i)
            lines.append(f"{c.keys[i]}\t{doc_labels[c.doc_type[i]]}\t{c.year[i]}\t{cats}\t"
                         f"{' '.join(title) if title is not None else ''}\n")
            if len(lines) >= 100_000:
                fh.writelines(lines)
                lines = []
        fh.writelines(lines)
    keys = np.array(c.keys, dtype=object)
    src = c.edge_sources()
    frame = pd.DataFrame({"citing_key": keys[src], "cited_key": keys[c.out_indices]})
    frame.to_csv(refs_path, sep="\t", index=False, lineterminator="\n")
