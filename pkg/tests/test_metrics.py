import json
from math import comb

import numpy as np
import pytest

from conftest import build_corpus, small_taxonomy
from refclass.corpus import DocType, filter_doc_types
from refclass.engine import Level, Provenance, classify_pass, run_pipeline
from refclass.metrics import (
    MetricsError, agreement_by_label, agreement_rate, category_sizes, compute_metrics, counts_table,
    coverage_by_year, export_sample, granularity, granularity_of_sizes, tie_stats,
)
from refclass.synth import GeneratorConfig, generate, generated_taxonomy, score_against_truth


@pytest.fixture
def tax():
    return small_taxonomy({"A": ("P", False), "B": ("P", False), "C": ("Q", False),
                           "Q, Multi": ("Q", True), "Multidisciplinary Sciences": (None, True)})


@pytest.fixture
def one_tie(tax):
    # x ties A/B and its own category A settles it; the rest are plain majorities
    c = build_corpus(tax, {"k1": ["A"], "k2": ["B"], "x": ["A"], "z": ["C"]},
                     [("x", "k1"), ("x", "k2"), ("k1", "k2"), ("k2", "k1"), ("z", "k1")],
                     years={"k1": 2001, "k2": 2001, "x": 2002, "z": 2002})
    return c, classify_pass(c, tax)


def test_granularity_formula():
    assert granularity_of_sizes([3, 2, 1]) == pytest.approx(6 / 14, rel=1e-12)
    assert granularity_of_sizes([4]) == 0.25
    assert granularity_of_sizes([1, 1, 1]) == 1.0
    with pytest.raises(MetricsError):
        granularity_of_sizes([])


def test_tie_stats_fixture(tax, one_tie):
    _, r = one_tie
    assert r.provenance[2] == Provenance.TIE_BROKEN_BY_ORIGINAL
    s = tie_stats(r)
    assert (s.tie_rate, s.tie_broken_by_original_rate) == (0.25, 1.0)
    assert s.by_original_defined


def test_tie_stats_all_majority(tax):
    c = build_corpus(tax, {"a": ["A"], "b": ["A"]}, [("a", "b"), ("b", "a")])
    s = tie_stats(classify_pass(c, tax))
    assert (s.tie_rate, s.tie_broken_by_original_rate, s.by_original_defined) == (0.0, 0.0, False)


def test_agreement_and_sizes(tax, one_tie):
    c, r = one_tie
    # k1 -> B, k2 -> A, x -> A, z -> A
    assert agreement_rate(r, c, tax) == 0.25
    assert agreement_by_label(r, c, tax) == {"A": (2, 0.5), "B": (1, 0.0), "C": (1, 0.0)}
    assert category_sizes(r, tax) == {"A": 3, "B": 1}
    assert granularity(r) == 4 / 10
    mask = np.array([False, False, True, False])
    assert agreement_rate(r, c, tax, mask) == 1.0


def test_agreement_without_eligible_items(tax):
    c = build_corpus(tax, {"a": ["A", "B"], "b": ["A"]}, [("a", "b")])
    with pytest.raises(MetricsError):
        agreement_rate(classify_pass(c, tax), c, tax)


def test_coverage_by_year(tax, one_tie):
    c, r = one_tie
    assert coverage_by_year(r, c) == {2001: 1.0, 2002: 1.0}
    c2 = build_corpus(tax, {"a": ["A"], "b": ["A", "B"], "d": ["C"], "e": ["C"]},
                      [("a", "b"), ("d", "e")], years={"a": 1990, "b": 1990, "d": 1991, "e": 1991})
    assert coverage_by_year(classify_pass(c2, tax), c2) == {1990: 0.0, 1991: 1.0}


def test_coverage_matches_generator_bookkeeping():
    cfg = GeneratorConfig(n_items=3000, n_categories=6, year_range=(2000, 2004), seed=3)
    c, _ = generate(cfg)
    t = generated_taxonomy(cfg)
    r = classify_pass(c, t)
    cov = coverage_by_year(r, c)
    assert sorted(cov) == sorted(set(c.year[c.out_degree > 0].tolist()))
    # zero-noise single-category corpus: every item with a reference gets a label
    assert all(v == 1.0 for v in cov.values())


def test_counts_table(tax):
    c = build_corpus(tax, {"a": ["A"], "m": ["Q, Multi"], "s": ["Multidisciplinary Sciences"], "e": ["C"]},
                     [("m", "a"), ("s", "a"), ("e", "a")], doc_types={"e": DocType.EDITORIAL})
    r = classify_pass(c, tax)
    table = counts_table(r, c, tax, filter_doc_types(c, {DocType.ARTICLE}))
    assert table["all_types"]["all_items"] == 4
    assert table["masked"]["all_items"] == 3
    assert table["all_types"]["multidisciplinary"] == 2
    assert table["all_types"]["multidisc_science"] == 1
    assert table["all_types"]["classified_multidisciplinary"] == 2
    assert table["masked"]["classified_items"] == 2


def test_compute_metrics_is_idempotent():
    cfg = GeneratorConfig(n_items=2000, n_categories=10, within_category_prob=0.8,
                          multi_category_fraction=0.2, seed=8)
    c, truth = generate(cfg)
    t = generated_taxonomy(cfg)
    r = run_pipeline(c, t, level=Level.BROAD, passes=2)
    a = compute_metrics(r, c, t)
    b = compute_metrics(r, c, t)
    a.recovery = b.recovery = score_against_truth(r, truth)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert 0 < d["granularity"] <= 1
    assert 0 < d["recovery"] <= 1


def test_export_sample(tmp_path):
    cfg = GeneratorConfig(n_items=3000, n_categories=8, within_category_prob=0.7, seed=2)
    c, _ = generate(cfg)
    t = generated_taxonomy(cfg)
    r = classify_pass(c, t)
    s1, k1 = export_sample(r, c, t, n=10, seed=5, out_dir=tmp_path / "a")
    s2, k2 = export_sample(r, c, t, n=10, seed=5, out_dir=tmp_path / "b")
    assert s1.read_bytes() == s2.read_bytes() and k1.read_bytes() == k2.read_bytes()
    assert len(k1.read_text().splitlines()) == 11
    with pytest.raises(MetricsError):
        export_sample(r, c, t, n=c.n_items + 1, out_dir=tmp_path)


def test_export_sample_blinding_is_half_reversed(tmp_path):
    cfg = GeneratorConfig(n_items=6000, n_categories=8, seed=12)
    c, _ = generate(cfg)
    t = generated_taxonomy(cfg)
    r = classify_pass(c, t)
    n = 4000
    _, key = export_sample(r, c, t, n=n, seed=0, out_dir=tmp_path)
    rows = key.read_text().splitlines()[1:]
    reversed_ = sum(line.endswith("label_b") for line in rows)
    # two-sided binomial test at alpha 1e-4
    tail = sum(comb(n, j) for j in range(min(reversed_, n - reversed_) + 1)) / 2 ** n
    assert 2 * tail > 1e-4, reversed_


def test_sample_labels_match_key(tmp_path):
    cfg = GeneratorConfig(n_items=3000, n_categories=8, within_category_prob=0.6, seed=2)
    c, _ = generate(cfg)
    t = generated_taxonomy(cfg)
    r = classify_pass(c, t)
    sample, key = export_sample(r, c, t, n=200, seed=1, out_dir=tmp_path)
    ix = c.key_index
    for srow, krow in zip(sample.read_text().splitlines()[1:], key.read_text().splitlines()[1:]):
        _, k, _, a, b = srow.split("\t")
        side = krow.split("\t")[2]
        orig, new = (a, b) if side == "label_a" else (b, a)
        assert orig == t.labels[c.categories(ix[k])[0]]
        assert new == t.labels[r.label[ix[k]]]
