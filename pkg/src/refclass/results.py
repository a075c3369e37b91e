"""Result and distribution files.

Result rows are ``key<TAB>level<TAB>label<TAB>pass<TAB>provenance`` in ascending key
order (subject before broad for the same key). Only classified items get rows.
"""

from __future__ import annotations

import csv
import io
import os
from typing import Iterable, TextIO

import numpy as np
import pandas as pd

from .corpus import Corpus
from .engine import ClassificationResult, Level, Provenance, Reason, n_labels
from .taxonomy import Taxonomy

RESULT_HEADER = ("key", "level", "label", "pass", "provenance")
_LEVEL_ORDER = (Level.SUBJECT, Level.BROAD)


class ResultFileError(ValueError):
    pass


def _rows(results: Iterable[ClassificationResult], corpus: Corpus, t: Taxonomy):
    by_level = {r.level: r for r in results}
    prov_names = [p.label for p in Provenance]
    for i in corpus.key_order:
        key = corpus.keys[i]
        for level in _LEVEL_ORDER:
            r = by_level.get(level)
            if r is None or r.label[i] < 0:
                continue
            names = t.names(level.value)
            yield f"{key}\t{level.value}\t{names[r.label[i]]}\t{r.pass_number[i]}\t{prov_names[r.provenance[i]]}\n"


def write_result(results: Iterable[ClassificationResult] | ClassificationResult, corpus: Corpus,
                 t: Taxonomy, out: str | os.PathLike | TextIO) -> None:
    if isinstance(results, ClassificationResult):
        results = [results]
    results = list(results)
    if isinstance(out, (str, os.PathLike)):
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            write_result(results, corpus, t, fh)
        return
    out.write("\t".join(RESULT_HEADER) + "\n")
    buf: list[str] = []
    for line in _rows(results, corpus, t):
        buf.append(line)
        if len(buf) >= 100_000:
            out.writelines(buf)
            buf.clear()
    out.writelines(buf)


def result_bytes(results, corpus: Corpus, t: Taxonomy) -> bytes:
    fh = io.StringIO()
    write_result(results, corpus, t, fh)
    return fh.getvalue().encode("utf-8")


def write_distributions(result: ClassificationResult, corpus: Corpus, t: Taxonomy,
                        out: str | os.PathLike | TextIO) -> None:
    """``key<TAB>label:count|label:count|...`` for items with a non-empty raw tally.

    Entries are ordered by count (descending) then label name.
    """
    if result.distribution is None:
        raise ResultFileError("result has no retained distributions")
    if isinstance(out, (str, os.PathLike)):
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            write_distributions(result, corpus, t, fh)
        return
    names = t.names(result.level.value)
    indptr, labels, counts = result.distribution
    for i in corpus.key_order:
        lo, hi = indptr[i], indptr[i + 1]
        if lo == hi:
            continue
        entries = sorted(zip(labels[lo:hi], counts[lo:hi]), key=lambda e: (-e[1], names[e[0]]))
        out.write(f"{corpus.keys[i]}\t" + "|".join(f"{names[a]}:{b}" for a, b in entries) + "\n")


def read_result(path: str | os.PathLike, corpus: Corpus, t: Taxonomy) -> dict[Level, ClassificationResult]:
    """Rebuild per-level results from a result file against the corpus it was computed on.

    Global counts are not stored in the file and come back as zeros.
    """
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, quoting=csv.QUOTE_NONE,
                        encoding="utf-8")
    if tuple(frame.columns) != RESULT_HEADER:
        raise ResultFileError(f"{path}: expected header {RESULT_HEADER}")
    index = pd.Index(corpus.keys)
    n = corpus.n_items
    no_refs = corpus.out_degree == 0
    out: dict[Level, ClassificationResult] = {}
    for level_name, rows in frame.groupby("level", sort=False):
        try:
            level = Level(level_name)
        except ValueError:
            raise ResultFileError(f"{path}: unknown level {level_name!r}") from None
        items = index.get_indexer(rows["key"])
        if (items < 0).any():
            raise ResultFileError(f"{path}: key {rows['key'].iloc[int(np.argmax(items < 0))]!r} not in corpus")
        names = {name: j for j, name in enumerate(t.names(level.value))}
        labels = rows["label"].map(names)
        if labels.isna().any():
            raise ResultFileError(f"{path}: unknown label {rows['label'][labels.isna()].iloc[0]!r}")
        label = np.full(n, -1, dtype=np.int32)
        prov = np.full(n, -1, dtype=np.int8)
        pass_number = np.zeros(n, dtype=np.int8)
        label[items] = labels.to_numpy(dtype=np.int32)
        prov[items] = [Provenance.parse(p) for p in rows["provenance"]]
        pass_number[items] = rows["pass"].astype(int).to_numpy()
        reason = np.full(n, Reason.CLASSIFIED, dtype=np.int8)
        reason[(label < 0) & no_refs] = Reason.NO_REFERENCES
        reason[(label < 0) & ~no_refs] = Reason.NO_CLASSIFIER_REFERENCES
        out[level] = ClassificationResult(
            level, label, prov, pass_number, reason,
            np.zeros(n_labels(t, level), dtype=np.int64),
            passes=int(pass_number.max()) if n else 1,
        )
    return out
