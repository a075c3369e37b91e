from __future__ import annotations

import numpy as np
import pytest

from refclass.corpus import Corpus, DocType
from refclass.taxonomy import Taxonomy, load_taxonomy

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture(scope="session")
def wos():
    return load_taxonomy()


def small_taxonomy(spec: dict[str, tuple[str | None, bool]]) -> Taxonomy:
    """Taxonomy from ``name -> (area or None, multidisciplinary)``."""
    return Taxonomy.build([(name, area, md) for name, (area, md) in spec.items()])


def build_corpus(t: Taxonomy, items: dict[str, list[str]], edges, doc_types=None, years=None, titles=None):
    """Corpus from ``key -> category names`` and ``(citing_key, cited_key)`` edges."""
    keys = list(items)
    index = {k: i for i, k in enumerate(keys)}
    cats = [[t.category_id(c) for c in items[k]] for k in keys]
    src = np.array([index[a] for a, _ in edges], dtype=np.int32)
    dst = np.array([index[b] for _, b in edges], dtype=np.int32)
    doc = [int(doc_types.get(k, DocType.ARTICLE)) if doc_types else int(DocType.ARTICLE) for k in keys]
    yr = [years.get(k, 2000) if years else 2000 for k in keys]
    tl = [titles.get(k) for k in keys] if titles is not None else None
    return Corpus.from_arrays(keys, doc, yr, cats, (src, dst), titles=tl)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    detail = ""
    for key, value in report.user_properties:
        if key == "detail":
            detail = value
    _ACCEPTANCE.append((name, report.outcome.upper(), detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _ACCEPTANCE:
        verdict = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  {detail}")
