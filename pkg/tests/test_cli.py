import csv
import json
import os

import pytest

from placeattr.cli import main

TINY = {"seed": 3, "world": {"n_places": 10, "n_people": 20, "n_days": 3}}
SMALL = {
    "seed": 5,
    "world": {"n_places": 160, "n_people": 500, "n_days": 14},
    "embedder": {"rank": 8, "max_sweeps": 5},
    "evaluator": {"k": 3, "distributions": ["duration", "tprev:4h"]},
    "learner": {"epochs": 10},
}
PIPELINE = ["simulate", "featurize", "embed"]
PER_SOURCE = ["train", "evaluate", "ablate", "report"]


def _config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data), encoding="utf-8")
    return str(p)


def _run(*argv):
    return main([str(a) for a in argv])


def _tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_tiny_simulate_writes_four_files(tmp_path):
    cfg = _config(tmp_path, TINY)
    assert _run("simulate", "--config", cfg, "--out", tmp_path / "a") == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["labels.csv", "manifest.json", "places.csv", "visits.csv", "world_truth.json"]
    assert _run("simulate", "--config", cfg, "--out", tmp_path / "b") == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_bad_category_mix_names_the_field(tmp_path, capsys):
    bad = {"seed": 1, "world": {"category_mix": {"home": 0.2, "work": 0.2, "restaurant": 0.5}}}
    code = _run("simulate", "--config", _config(tmp_path, bad), "--out", tmp_path / "x")
    assert code != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    payload = json.loads(err[0])
    assert "category_mix" in payload["message"] and payload["error"] == "ValidationError"


def test_missing_upstream_artifact_is_named(tmp_path, capsys):
    code = _run("featurize", "--config", _config(tmp_path, TINY), "--out", tmp_path / "empty")
    assert code != 0
    payload = json.loads(capsys.readouterr().err.strip())
    assert "places" in payload["message"]


def test_unknown_config_field_rejected(tmp_path, capsys):
    assert _run("simulate", "--config", _config(tmp_path, {"seed": 1, "embedder": {"rnak": 3}}), "--out", tmp_path / "x") != 0
    assert "embedder.rnak" in json.loads(capsys.readouterr().err)["message"]


def _pipeline(cfg, out, workers=1):
    for c in PIPELINE:
        assert _run(c, "--config", cfg, "--out", out, "--workers", workers) == 0, c
    for source in ("steps", "embedding", "combined"):
        for c in PER_SOURCE:
            assert _run(c, "--config", cfg, "--out", out, "--source", source, "--workers", workers) == 0, (c, source)


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _config(root, SMALL)
    _pipeline(cfg, root / "one")
    _pipeline(cfg, root / "again")
    _pipeline(cfg, root / "eight", workers=8)
    return root


def test_full_pipeline_writes_manifest(pipeline_runs):
    run = pipeline_runs / "one"
    manifest = json.loads((run / "manifest.json").read_text())
    per_source = {f"{c}:{s}" for c in PER_SOURCE for s in ("steps", "embedding", "combined")}
    assert set(manifest["commands"]) == set(PIPELINE) | per_source
    entry = manifest["commands"]["evaluate:steps"]
    assert entry["seed"] == 5 and len(entry["config_sha256"]) == 64
    assert manifest["version"]
    for name in ("features_steps.csv", "features_embedding.csv", "eval_steps.csv", "ablation_combined.csv"):
        assert (run / name).is_file()


def test_rerun_and_worker_count_are_byte_identical(pipeline_runs):
    one = _tree(pipeline_runs / "one")
    assert one == _tree(pipeline_runs / "again")
    assert one == _tree(pipeline_runs / "eight")


def test_sources_are_tagged(pipeline_runs):
    run = pipeline_runs / "one"
    tags = {}
    for source in ("steps", "embedding"):
        with open(run / f"eval_{source}.csv", newline="") as fh:
            tags[source] = {row["source"] for row in csv.DictReader(fh)}
    assert tags == {"steps": {"steps"}, "embedding": {"embedding"}}


def test_seed_flag_overrides_config(tmp_path):
    cfg = _config(tmp_path, TINY)
    assert _run("simulate", "--config", cfg, "--out", tmp_path / "s9", "--seed", 9) == 0
    manifest = json.loads((tmp_path / "s9" / "manifest.json").read_text())
    assert manifest["commands"]["simulate"]["seed"] == 9
    assert manifest["commands"]["simulate"]["config"]["world"]["rng_seed"] == 9
