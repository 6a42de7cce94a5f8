import json
import shutil
from pathlib import Path

import pytest

from healthnet.cli import RESULT_COLUMNS, TABLE3_COLUMNS, main

GOLDEN = Path(__file__).parent / "golden"


def run(config, *args):
    return main(["--config", str(config), *args])


def snapshot(out: Path) -> dict:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def finished(small_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    assert run(small_corpus, "--output", str(out), "all") == 0
    return out


def test_all_writes_every_artifact(finished):
    for name in (
        "mentions.jsonl", "graph.tsv", "backbone.tsv", "partition.tsv", "taxonomy.json",
        "centrality.tsv", "scores/index.tsv", "correlations.tsv", "results.tsv", "table3.tsv",
    ):
        assert (finished / name).is_file(), name
    assert not list(finished.glob(".tmp-*"))


def test_manifests(finished):
    m = json.loads((finished / "manifest.backbone.json").read_text())
    assert m["stage"] == "backbone" and "graph.tsv" in m["inputs"]
    assert set(m["outputs"]) >= {"backbone.tsv"}
    assert "time" not in json.dumps(m).lower()


def test_result_headers_match_golden(finished):
    for name, cols in (("table3", TABLE3_COLUMNS), ("results", RESULT_COLUMNS)):
        golden = (GOLDEN / f"{name}.header.tsv").read_text().rstrip("\n")
        assert (finished / f"{name}.tsv").read_text().splitlines()[0] == golden == "\t".join(cols)


def test_rerun_is_byte_identical(finished, small_corpus, tmp_path):
    again = tmp_path / "out"
    assert run(small_corpus, "--output", str(again), "--threads", "2", "all") == 0
    a, b = snapshot(finished), snapshot(again)
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a if not k.startswith("manifest."))


def test_missing_upstream_exits_1(small_corpus, tmp_path, capsys):
    out = tmp_path / "out"
    assert run(small_corpus, "--output", str(out), "causal") == 1
    assert "run `score` first" in capsys.readouterr().err
    assert not (out / "results.tsv").exists()


def test_failed_stage_leaves_previous_outputs(finished, small_corpus, tmp_path):
    out = tmp_path / "out"
    shutil.copytree(finished, out)
    before = (out / "backbone.tsv").read_bytes()
    (out / "graph.tsv").unlink()
    assert run(small_corpus, "--output", str(out), "backbone") == 1
    assert (out / "backbone.tsv").read_bytes() == before
    assert not list(out.glob(".tmp-*"))


def test_bad_config_exits_1(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[backbone]\ndelta = -1\n")
    assert run(cfg, "graph") == 1


def test_stage_subset_reruns(finished, small_corpus, tmp_path):
    out = tmp_path / "out"
    shutil.copytree(finished, out)
    assert run(small_corpus, "--output", str(out), "correlate") == 0
    assert (out / "correlations.tsv").read_bytes() == (finished / "correlations.tsv").read_bytes()


def test_synth_command(tmp_path, capsys):
    assert main(["synth", str(tmp_path / "c"), "--documents", "500"]) == 0
    assert (tmp_path / "c" / "config.ini").is_file()
    assert sum(1 for _ in (tmp_path / "c" / "documents.jsonl").open()) == 500
