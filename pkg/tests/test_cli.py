import json
import subprocess
import sys

import pytest

from refclass.cli import main


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    code = main(["generate", "--out", str(out), "--n-items", "3000", "--n-categories", "12",
                 "--within-category-prob", "0.8", "--multi-category-fraction", "0.25",
                 "--multidisciplinary-fraction", "0.1", "--titleless-fraction", "0.2", "--seed", "7"])
    assert code == 0
    return out


def _classify(gen_dir, out, *extra):
    return main(["classify", "--items", str(gen_dir / "items.tsv"), "--refs", str(gen_dir / "refs.tsv"),
                 "--taxonomy", str(gen_dir / "taxonomy.tsv"), "--out", str(out), *extra])


def _result_rows(path):
    return path.read_text().splitlines()[1:]


def test_generate_is_reproducible(gen_dir, tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--n-items", "3000", "--n-categories", "12",
                 "--within-category-prob", "0.8", "--multi-category-fraction", "0.25",
                 "--multidisciplinary-fraction", "0.1", "--titleless-fraction", "0.2", "--seed", "7"]) == 0
    for name in ("items.tsv", "refs.tsv", "taxonomy.tsv", "truth.tsv", "manifest.json"):
        assert (tmp_path / name).read_bytes() == (gen_dir / name).read_bytes()


def test_classify_writes_outputs(gen_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert _classify(gen_dir, out, "--level", "both", "--passes", "2", "--truth", str(gen_dir / "truth.tsv")) == 0
    names = {p.name for p in out.iterdir()}
    for level in ("subject", "broad"):
        assert {f"metrics.{level}.json", f"category_sizes.{level}.tsv", f"coverage_by_year.{level}.tsv",
                f"distributions.{level}.tsv"} <= names
    assert {"result.tsv", "ingest_report.json", "manifest.json"} <= names
    metrics = json.loads((out / "metrics.subject.json").read_text())
    assert metrics["recovery"] > 0.9
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["passes"] == 2
    assert set(manifest["inputs"]) >= {"items", "refs", "taxonomy"}
    assert "recovery" in capsys.readouterr().out
    levels = {row.split("\t")[1] for row in _result_rows(out / "result.tsv")}
    assert levels == {"subject", "broad"}


def test_second_pass_classifies_at_least_as_many(gen_dir, tmp_path):
    assert _classify(gen_dir, tmp_path / "p1", "--passes", "1") == 0
    assert _classify(gen_dir, tmp_path / "p2", "--passes", "2") == 0
    one = {r.split("\t")[0] for r in _result_rows(tmp_path / "p1" / "result.tsv")}
    two = {r.split("\t")[0] for r in _result_rows(tmp_path / "p2" / "result.tsv")}
    assert one <= two


def test_rerun_is_byte_identical_across_threads(gen_dir, tmp_path):
    assert _classify(gen_dir, tmp_path / "a", "--level", "both", "--passes", "2", "--threads", "1") == 0
    assert _classify(gen_dir, tmp_path / "b", "--level", "both", "--passes", "2", "--threads", "4") == 0
    for p in (tmp_path / "a").iterdir():
        if p.name == "manifest.json":
            continue
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma["config"].pop("out")
    mb["config"].pop("out")
    assert ma == mb


def test_missing_refs_file_exit_2_no_outputs(gen_dir, tmp_path):
    out = tmp_path / "none"
    code = main(["classify", "--items", str(gen_dir / "items.tsv"), "--refs", str(tmp_path / "missing.tsv"),
                 "--taxonomy", str(gen_dir / "taxonomy.tsv"), "--out", str(out)])
    assert code == 2
    assert not out.exists()


def test_invalid_probability_exit_1(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "g"), "--within-category-prob", "1.5"]) == 1
    assert not (tmp_path / "g").exists()


def test_infeasible_generator_exit_1(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "g"), "--refless-fraction", "1"]) == 1


def test_invalid_passes_and_choice(gen_dir, tmp_path):
    assert _classify(gen_dir, tmp_path / "x", "--passes", "0") == 1
    assert _classify(gen_dir, tmp_path / "x", "--level", "area") == 1


def test_evaluate_with_truth_and_sample(tmp_path):
    gen = tmp_path / "gen"
    assert main(["generate", "--out", str(gen), "--n-items", "10000", "--within-category-prob", "1.0",
                 "--seed", "7"]) == 0
    run = tmp_path / "run"
    assert _classify(gen, run) == 0
    ev = tmp_path / "ev"
    assert main(["evaluate", "--items", str(gen / "items.tsv"), "--refs", str(gen / "refs.tsv"),
                 "--taxonomy", str(gen / "taxonomy.tsv"), "--result", str(run / "result.tsv"),
                 "--truth", str(gen / "truth.tsv"), "--export-sample", "142", "1", "--out", str(ev)]) == 0
    assert json.loads((ev / "metrics.subject.json").read_text())["recovery"] == 1.0
    assert len(_result_rows(ev / "sample.subject.tsv")) == 142
    assert len(_result_rows(ev / "sample.subject.key.tsv")) == 142
    # evaluation of a stored result agrees with the metrics of the run itself
    a = json.loads((run / "metrics.subject.json").read_text())
    b = json.loads((ev / "metrics.subject.json").read_text())
    assert a["agreement_rate"] == b["agreement_rate"] == 1.0
    assert a["category_sizes"] == b["category_sizes"]


def test_evaluate_without_result_exit_2(gen_dir, tmp_path):
    assert main(["evaluate", "--items", str(gen_dir / "items.tsv"), "--refs", str(gen_dir / "refs.tsv"),
                 "--taxonomy", str(gen_dir / "taxonomy.tsv"), "--result", str(tmp_path / "nope.tsv")]) == 2


def test_config_file(gen_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"items": str(gen_dir / "items.tsv"), "refs": str(gen_dir / "refs.tsv"),
                               "taxonomy": str(gen_dir / "taxonomy.tsv"), "passes": 2, "level": "broad"}))
    out = tmp_path / "cfg"
    assert main(["classify", "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["config"]["level"] == "broad"
    # explicit flags override the file
    assert main(["classify", "--config", str(cfg), "--level", "subject", "--out", str(tmp_path / "o2")]) == 0
    assert json.loads((tmp_path / "o2" / "manifest.json").read_text())["config"]["level"] == "subject"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert main(["classify", "--config", str(bad), "--out", str(tmp_path / "o3")]) == 1


def test_text_fallback_flag(gen_dir, tmp_path):
    assert _classify(gen_dir, tmp_path / "tf", "--text-fallback") == 0
    rows = _result_rows(tmp_path / "tf" / "result.tsv")
    assert any(r.endswith("\ttfidf") for r in rows)


def test_taxonomy_commands(tmp_path, capsys):
    assert main(["taxonomy", "check"]) == 0
    assert "252 categories, 14 broad areas, 9 multidisciplinary" in capsys.readouterr().out
    out = tmp_path / "t.tsv"
    assert main(["taxonomy", "export", "--out", str(out)]) == 0
    assert main(["taxonomy", "check", str(out)]) == 0
    dup = tmp_path / "dup.tsv"
    dup.write_text("label\tbroad_area\tmultidisciplinary\nEcology\tBio\t0\nEcology\tBio\t0\n")
    assert main(["taxonomy", "check", str(dup)]) == 1
    assert main(["taxonomy", "check", str(tmp_path / "absent.tsv")]) == 2


def test_unknown_category_strict(tmp_path):
    items = tmp_path / "items.tsv"
    items.write_text("key\tdoc_type\tyear\tcategories\ttitle\nA\tarticle\t2000\tOtpics\t\nB\tarticle\t2000\tOptics\t\n")
    refs = tmp_path / "refs.tsv"
    refs.write_text("citing_key\tcited_key\nA\tB\n")
    base = ["classify", "--items", str(items), "--refs", str(refs)]
    assert main(base + ["--out", str(tmp_path / "lenient")]) == 0
    report = json.loads((tmp_path / "lenient" / "ingest_report.json").read_text())
    assert report["rejected_count"] == 1
    assert main(base + ["--strict", "--out", str(tmp_path / "strict")]) == 1
    assert not (tmp_path / "strict").exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "refclass", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "refclass" in proc.stdout
