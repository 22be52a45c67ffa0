import json
import re

import numpy as np
import pytest

from geolang import dgg, geograph as gg, numerics as nx, sampler as sm
from geolang.cli import PipelineConfig, ConfigError

from pipeline import FIXTURE, TASKS, build, full_pipeline, ok, pretrain, run, tree_bytes

FIXTURE_COUNTS = {"nodes": {"POI": 50, "QUERY": 180}, "edges": {"OTD": 169, "PCP": 43, "QCP": 180}}


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    return full_pipeline(tmp_path_factory.mktemp("run"))


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    paths = build(tmp_path_factory.mktemp("small"))
    pretrain(paths)
    return paths


def error_of(stderr):
    return json.loads(stderr.strip().splitlines()[-1])


# -- pipeline ---------------------------------------------------------------------

def test_full_pipeline_writes_every_artifact(pipeline_dir):
    names = set(tree_bytes(pipeline_dir))
    for expected in ("graph.bin", "graph.bin.json", "corpus.txt", "corpus.txt.json", "masked.bin",
                     "masked.bin.json", "masked.bin.vocab.txt", "masked.bin.lexicon.json", "model.ckpt",
                     "model.ckpt.losses.json", "classify.ckpt", "label.ckpt", "geocode.ckpt",
                     "embeddings.npy"):
        assert expected in names
    for task, metric in (("classify", "accuracy"), ("label", "entity_f1"), ("geocode", "acc@3km"),
                         ("recommend", "acc@50")):
        report = json.loads((pipeline_dir / f"{task}.eval.json").read_text())
        assert report["metric"] == metric
        assert 0.0 <= report["value"] <= 1.0


def test_config_is_echoed_into_artifacts(pipeline_dir):
    for name in ("graph.bin.json", "corpus.txt.json"):
        echo = json.loads((pipeline_dir / name).read_text())["config"]
        assert echo["seed"] == 0 and echo["model"]["hidden"] == 16
    _, meta = nx.load_tensors(pipeline_dir / "model.ckpt")
    assert meta["pipeline"]["model"]["hidden"] == 16
    assert meta["loss_terms"] == ["mlm", "geocode"]


def test_embeddings_match_candidate_count(pipeline_dir):
    vecs = np.load(pipeline_dir / "embeddings.npy")
    assert vecs.shape == (50, 16)
    assert np.all(np.isfinite(vecs))


def test_inspect_snapshot_matches_ingestion(small):
    built = json.loads((small["graph"].parent / "graph.bin.json").read_text())
    report = json.loads(ok("inspect-snapshot", small["graph"]))
    assert report == FIXTURE_COUNTS
    ingest = built["ingest"]
    assert report["nodes"] == {"POI": ingest["pois"], "QUERY": ingest["queries"]}
    assert report["edges"] == {t: ingest[f"{t.lower()}_edges"] for t in ("OTD", "PCP", "QCP")}


def test_sample_corpus_one_walk_per_node(small):
    info = json.loads((small["corpus"].parent / "corpus.txt.json").read_text())
    assert info["documents"] == 230
    assert 1.0 <= info["mean_length"] <= 10.0


# -- config resolution ------------------------------------------------------------

def corpus_config(tmp_path, graph, *argv):
    out = tmp_path / "c.txt"
    ok("sample-corpus", "--graph", graph, "--out", out, *argv)
    return json.loads((tmp_path / "c.txt.json").read_text())["config"]


def test_precedence_file_then_set_then_flag(tmp_path, small):
    conf = tmp_path / "run.conf"
    conf.write_text("# walks\nseed = 7\nwalk.walk_length = 3\nwalk.lambda_qcp = 0.4\n")
    g = small["graph"]
    assert corpus_config(tmp_path, g, "--config", conf) == {
        "seed": 7, "walk": {"lambda_qcp": 0.4, "walk_length": 3}}
    cfg = corpus_config(tmp_path, g, "--config", conf, "--set", "walk.walk_length=5")
    assert cfg["walk"]["walk_length"] == 5
    cfg = corpus_config(tmp_path, g, "--config", conf, "--set", "walk.walk_length=5", "--walk-length", "2",
                        "--seed", "3")
    assert cfg == {"seed": 3, "walk": {"lambda_qcp": 0.4, "walk_length": 2}}


def test_lambda_flags_override_set(tmp_path, small):
    cfg = corpus_config(tmp_path, small["graph"], "--set", "walk.lambda_otd=0.9", "--lambda-otd", "0.1",
                        "--lambda-pcp", "0")
    assert cfg["walk"] == {"lambda_otd": 0.1, "lambda_pcp": 0.0}


def test_walk_length_flag_bounds_documents(tmp_path, small):
    ok("sample-corpus", "--graph", small["graph"], "--out", tmp_path / "c.txt", "--walk-length", "2")
    lengths = [len(doc) for doc in sm.read_corpus(tmp_path / "c.txt")]
    assert max(lengths) == 3


@pytest.mark.parametrize("sub", ["build-graph", "inspect-snapshot", "sample-corpus", "mask-corpus", "pretrain",
                                 "finetune", "eval", "embed", "geocode", "analogy"])
def test_every_subcommand_takes_seed_and_config(sub, capsys):
    with pytest.raises(SystemExit):
        from geolang.cli import main
        main([sub, "--help"])
    text = capsys.readouterr().out
    assert "--seed" in text and "--config" in text and "--set" in text


def test_pipeline_config_text_round_trip():
    cfg = PipelineConfig()
    cfg.update_text("seed = 4\ngraph.edge_types = qcp,pcp\ntrain.geo_weight = 0\nmodel.positional = off\n")
    again = PipelineConfig()
    again.update_text(cfg.to_text())
    assert again.to_dict() == cfg.to_dict()
    assert cfg.section("train").geo_weight == 0.0 and cfg.section("train").seed == 4
    assert cfg.section("model", vocab_size=10).positional is False
    assert cfg.section("graph").edge_type_set() == (gg.EdgeType.QCP, gg.EdgeType.PCP)


@pytest.mark.parametrize("line", ["walk.nope = 1", "bogus.key = 1", "walk.walk_length = two", "no equals sign",
                                  "model.positional = maybe"])
def test_bad_config_lines_rejected(line):
    with pytest.raises(ConfigError):
        PipelineConfig().update_text(line)


# -- errors -----------------------------------------------------------------------

def test_missing_input_is_runtime_error(tmp_path):
    code, out, err = run("inspect-snapshot", tmp_path / "absent.bin")
    assert code == 1 and out == ""
    assert error_of(err)["error"] == "FileNotFoundError"


def test_corrupt_snapshot_is_runtime_error(tmp_path, small):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(small["graph"].read_bytes()[:-9])
    code, _, err = run("inspect-snapshot", bad)
    assert code == 1
    assert error_of(err)["error"] == "SnapshotError"


@pytest.mark.parametrize("argv", [
    ["sample-corpus", "--graph", "g", "--out", "o", "--set", "walk.nope=1"],
    ["sample-corpus", "--graph", "g", "--out", "o", "--set", "walk.walk_length"],
    ["sample-corpus", "--graph", "g", "--out", "o", "--config", "/nonexistent/run.conf"],
    ["build-graph", "--pois", "p"],
    ["frobnicate"],
])
def test_usage_errors_exit_two_with_json(argv):
    code, out, err = run(*argv)
    assert code == 2 and out == ""
    assert set(error_of(err)) == {"error", "message"}


def test_invalid_section_value_is_usage_error(tmp_path, small):
    code, _, err = run("sample-corpus", "--graph", small["graph"], "--out", tmp_path / "c.txt",
                       "--set", "walk.walk_length=0")
    assert code == 2
    assert "walk_length" in error_of(err)["message"]


def test_unknown_edge_type_is_usage_error(tmp_path):
    code, _, err = run("build-graph", "--pois", FIXTURE / "pois.jsonl", "--out", tmp_path / "g.bin",
                       "--edge-types", "qcp,xyz")
    assert code == 2
    assert "xyz" in error_of(err)["message"]


def test_eval_rejects_checkpoint_of_other_task(pipeline_dir):
    code, _, err = run("eval", "label", "--checkpoint", pipeline_dir / "classify.ckpt",
                       "--vocab", pipeline_dir / "masked.bin.vocab.txt", "--data", TASKS / "label.jsonl")
    assert code == 1
    assert "classify" in error_of(err)["message"]


def test_recommend_gold_missing_from_candidates(tmp_path, pipeline_dir):
    cands = tmp_path / "c.txt"
    cands.write_text("only one candidate\n")
    code, _, err = run("eval", "recommend", "--checkpoint", pipeline_dir / "model.ckpt",
                       "--vocab", pipeline_dir / "masked.bin.vocab.txt", "--data", TASKS / "recommend.jsonl",
                       "--candidates", cands)
    assert code == 1
    assert error_of(err)["error"] == "KeyError"


# -- inference commands -----------------------------------------------------------

GEOCODE_LINE = re.compile(r"^(-?\d+\.\d{6})\t(-?\d+\.\d{6})\t([0-9a-f]+)(\tfallback=level(\d+))?$")


def test_geocode_prints_lat_lng_token(small):
    out = ok("geocode", "--checkpoint", small["model"], "--vocab", small["vocab"],
             "--text", "Yizi Food Suzhou", "--text", "Bright Star Cinema")
    lines = out.splitlines()
    assert len(lines) == 2
    for line in lines:
        if line.startswith("nan"):
            assert line == "nan\tnan\t-\tfallback=none"
            continue
        m = GEOCODE_LINE.match(line)
        assert m, line
        cell = dgg.token_to_cell(m.group(3))
        assert cell.level() == (int(m.group(5)) if m.group(4) else 22)
        center = dgg.cell_center(cell)
        assert abs(center.lat - float(m.group(1))) < 1e-6
        assert abs(center.lng - float(m.group(2))) < 1e-6


def test_embed_json_lines(small):
    out = ok("embed", "--checkpoint", small["model"], "--vocab", small["vocab"], "--text", "suzhou", "--text", "bank")
    rows = [json.loads(line) for line in out.splitlines()]
    assert [r["text"] for r in rows] == ["suzhou", "bank"]
    assert all(len(r["vector"]) == 16 for r in rows)


def test_embed_needs_input(small):
    code, _, err = run("embed", "--checkpoint", small["model"], "--vocab", small["vocab"])
    assert code == 1 and error_of(err)["error"] == "ValueError"


def test_analogy_prints_ranked_candidates(small):
    out = ok("analogy", "--checkpoint", small["model"], "--vocab", small["vocab"], "--a", "beijing",
             "--b", "shanghai", "--c", "suzhou", "--candidates", TASKS / "candidates.txt", "--top", "4")
    lines = out.splitlines()
    assert [line.split("\t")[0] for line in lines] == ["1", "2", "3", "4"]
    cands = set((TASKS / "candidates.txt").read_text().splitlines())
    assert all(line.split("\t", 1)[1] in cands for line in lines)


def test_match_task_round_trip(tmp_path, small):
    ok("finetune", "match", "--checkpoint", small["model"], "--vocab", small["vocab"],
       "--train", TASKS / "match.jsonl", "--out", tmp_path / "m.ckpt", *small["common"])
    report = json.loads(ok("eval", "match", "--checkpoint", tmp_path / "m.ckpt", "--vocab", small["vocab"],
                           "--data", TASKS / "match.jsonl"))
    assert report["metric"] == "accuracy" and report["n"] == 400
    _, meta = nx.load_tensors(tmp_path / "m.ckpt")
    assert sorted(meta["classes"]) == ["exact", "high", "irrelevant", "weak"]


# -- training ---------------------------------------------------------------------

def test_resume_continues_the_same_trace(tmp_path, small):
    common = small["common"] + ["--set", "train.checkpoint_every=3"]
    ok("pretrain", "--masked", small["masked"], "--vocab", small["vocab"], "--out", tmp_path / "full.ckpt",
       "--steps", "9", "--checkpoint-dir", tmp_path / "ck", *common)
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == [
        "step000003.ckpt", "step000006.ckpt", "step000009.ckpt"]
    ok("pretrain", "--masked", small["masked"], "--vocab", small["vocab"], "--out", tmp_path / "resumed.ckpt",
       "--steps", "9", "--resume", tmp_path / "ck" / "step000006.ckpt", *small["common"])
    full, _ = nx.load_tensors(tmp_path / "full.ckpt")
    resumed, _ = nx.load_tensors(tmp_path / "resumed.ckpt")
    assert full.keys() == resumed.keys()
    for k in full:
        assert np.array_equal(full[k], resumed[k]), k


def test_resume_past_target_runs_nothing(tmp_path, small):
    out = json.loads(ok("pretrain", "--masked", small["masked"], "--vocab", small["vocab"],
                        "--out", tmp_path / "m.ckpt", "--steps", "2", "--resume", small["model"]))
    assert out["steps"] == 6 and out["final_loss"] is None


# -- ablations --------------------------------------------------------------------

@pytest.mark.parametrize("flag, kept", [
    ("none", set()), ("otd,pcp", {"OTD", "PCP"}), ("qcp,pcp", {"QCP", "PCP"}), ("qcp,otd", {"QCP", "OTD"}),
])
def test_edge_type_ablation_snapshot(tmp_path, flag, kept):
    ok("build-graph", "--pois", FIXTURE / "pois.jsonl", "--clicks", FIXTURE / "clicks.jsonl",
       "--sessions", FIXTURE / "sessions.jsonl", "--out", tmp_path / "g.bin", "--edge-types", flag)
    report = json.loads(ok("inspect-snapshot", tmp_path / "g.bin"))
    assert {t for t, n in report["edges"].items() if n} == kept
    assert report["nodes"] == FIXTURE_COUNTS["nodes"]


@pytest.mark.parametrize("how", [["--no-geocoding"], ["--set", "train.geo_weight=0"]])
def test_no_geocoding_ablation(tmp_path, small, how):
    ok("pretrain", "--masked", small["masked"], "--vocab", small["vocab"], "--out", tmp_path / "m.ckpt",
       "--steps", "3", *small["common"], *how)
    _, meta = nx.load_tensors(tmp_path / "m.ckpt")
    assert meta["loss_terms"] == ["mlm"]
    assert meta["train_config"]["geo_weight"] == 0.0
    history = json.loads((tmp_path / "m.ckpt.losses.json").read_text())["history"]
    assert all(abs(r["total"] - r["mlm"]) < 1e-12 for r in history)


# -- determinism ------------------------------------------------------------------

def test_pipeline_is_byte_identical(tmp_path, pipeline_dir):
    again = full_pipeline(tmp_path / "again")
    a, b = tree_bytes(pipeline_dir), tree_bytes(again)
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []


def test_seed_changes_stochastic_artifacts(tmp_path, small):
    other = build(tmp_path / "s1", seed=1)
    assert other["corpus"].read_bytes() != small["corpus"].read_bytes()
    assert other["graph"].read_bytes() == small["graph"].read_bytes()
