"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line."""

import json

import numpy as np
import pytest
from scipy import stats

from geolang import dgg, model as md, numerics as nx, sampler as sm, masker as mk, tasks as tk
from geolang.dgg import LatLng
from geolang.geograph import NodeType

from graphs import profile_graph
from oracles import crf_enumerate, standard_attention, tiny_model_and_batch
from pipeline import build, full_pipeline, ok, pretrain, tree_bytes
from report import criterion
from test_dgg import REF_CODE, REF_LADDER, ref_cell, lng_diff, random_leaf_cells
from test_masker import masking_law, synthetic
from test_model import small_model, tie_types


def test_c01_codec_fidelity():
    with criterion(1, "codec fidelity on the reference cell", budget=1.0):
        code = dgg.encode_2lt3c(ref_cell())
        assert dgg.format_code(code[:15]) == "453 cf5 41f 450 475"
        ladder = dgg.decode_2lt3c(code)
        assert ladder[8:10] == ["35f054", "35f057"]
        assert dgg.decode_2lt3c(REF_CODE, allow_partial=True) == REF_LADDER
        # the last group alone is built from the L9/L10 pair
        assert code[12:15] == "475"


def test_c02_codec_round_trip():
    with criterion(2, "10,000 level-22 cells round-trip", budget=10.0) as d:
        cells = random_leaf_cells(10_000, 11)
        failures = sum(dgg.decode_2lt3c(dgg.encode_2lt3c(c)) != [c.parent(k).token() for k in range(1, 23)]
                       for c in cells)
        d["failures"] = failures
        assert failures == 0


def test_c03_oracle_equivalence(s2_oracle):
    with criterion(3, "cell ids, tokens, parents, centres vs reference") as d:
        assert len(s2_oracle) >= 1000
        worst = 0.0
        for rec in s2_oracle:
            point = LatLng(rec["lat"], rec["lng"])
            cell = dgg.latlng_to_cell(point, rec["level"])
            assert cell.id == int(rec["id"]) and cell.token() == rec["token"], rec
            leaf = dgg.latlng_to_cell(point)
            assert [leaf.parent(k).token() for k in range(31)] == rec["ladder"], rec
            c = cell.center()
            worst = max(worst, abs(c.lat - rec["center"][0]), lng_diff(c.lng, rec["center"][1]))
        d["points"] = len(s2_oracle)
        d["max_centre_err"] = f"{worst:.1e}"
        assert worst <= 1e-9


def test_c04_sampling_law():
    with criterion(4, "transition law for the 2 QcP / 1 OtD / 1 PcP profile", budget=30.0) as d:
        g = profile_graph()
        walker = sm.Walker(g, sm.WalkConfig())
        rng = np.random.default_rng(2024)
        draws = np.array([walker.step(0, rng) for _ in range(100_000)])
        counts = np.bincount(draws, minlength=5)[1:]
        freq = counts / counts.sum()
        p = stats.chisquare(counts, np.full(4, counts.sum() / 4)).pvalue
        d["max_dev"] = f"{np.max(np.abs(freq - 0.25)):.4f}"
        d["chi2_p"] = f"{p:.3f}"
        assert np.all(np.abs(freq - 0.25) <= 0.01)
        assert p > 0.001


def test_c05_masking_law():
    with criterion(5, "entity selection and action split over 100,000 entities") as d:
        docs, tok, seg, lex = synthetic(n_nodes=5000, words_per_node=20)
        examples = mk.mask_corpus(docs, tok, seg, lex, mk.MaskingConfig(seed=0))
        assert sum(n.n_entities for e in examples for n in e.nodes) == 100_000
        rate, split = masking_law(examples)
        d["rate"] = f"{rate:.4f}"
        d["split"] = "/".join(f"{x:.3f}" for x in split)
        assert abs(rate - 0.15) <= 0.005
        assert np.all(np.abs(split - [0.70, 0.10, 0.10, 0.10]) <= 0.01)


def test_c06_gradient_check():
    with criterion(6, "end-to-end gradient vs central differences", budget=120.0) as d:
        model, batch = tiny_model_and_batch(hidden=8, heads=2, layers=2)
        params = dict(model.store)
        err, rows = nx.finite_difference_check(lambda: model.loss(batch).total, params, n_samples=None)
        d["params"] = len(rows)
        d["max_rel_err"] = f"{err:.1e}"
        assert err < 1e-4


@pytest.mark.parametrize("node_type", [NodeType.POI, NodeType.QUERY])
def test_c07_transage_reduction(node_type):
    with criterion(7, f"tied TranSAGE equals standard attention ({node_type.name})") as d:
        m = small_model(hidden=16, heads=4)
        tie_types(m)
        H = np.random.default_rng(7).normal(size=(6, 16))
        got = m.transage(nx.Tensor(H), [node_type] * 6).data
        want = standard_attention(H, m.p("sage.q.w").data[0], m.p("sage.q.b").data[0],
                                  m.p("sage.k.w").data[0], m.p("sage.k.b").data[0], m.p("sage.o.w").data, 4)
        d["max_abs"] = f"{np.max(np.abs(got - want)):.1e}"
        assert np.max(np.abs(got - want)) <= 1e-12


@pytest.mark.slow
def test_c08_overfit(fixture_graph, fixture_examples, text_resources):
    with criterion(8, "overfit the 50-POI fixture in 2,000 steps", budget=600.0) as d:
        tok = text_resources[0]
        model = md.GeoLM(md.ModelConfig(vocab_size=len(tok)))
        cfg = md.TrainConfig(steps=2000, batch_size=8, lr=1e-3, warmup=100, log_every=0)
        md.pretrain(model, fixture_examples, cfg, tok.pad_id)
        ev = md.evaluate(model, fixture_examples, tok.pad_id)
        pois = [n for n in fixture_graph.nodes if n.node_type is NodeType.POI]
        # each POI's own walk starts at it, so its training document is examples[node_id]
        codes = [model.predict_geocodes(md.make_batch([fixture_examples[n.node_id]], tok.pad_id))[0]
                 for n in pois]
        exact = sum(c == n.geocode for c, n in zip(codes, pois))
        preds = [tk.code_to_prediction(c).location for c in codes]
        acc = tk.acc_at_n_km(preds, [n.location for n in pois], 3.0)
        d["loss"] = f"{ev['total']:.4f}"
        d["exact"] = f"{exact}/{len(pois)}"
        d["acc@3km"] = acc
        assert len(pois) == 50
        assert ev["total"] < 0.05
        assert exact == len(pois)
        assert acc == 1.0


def test_c09_crf_oracle():
    with criterion(9, "CRF Viterbi and partition vs enumeration, 100 draws") as d:
        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(100):
            L, T = int(rng.integers(1, 7)), int(rng.integers(1, 5))
            E, A = rng.normal(size=(L, T)), rng.normal(size=(T, T))
            s, e = rng.normal(size=T), rng.normal(size=T)
            log_z, best, path = crf_enumerate(E, A, s, e)
            got_path, got_best = tk.crf_decode(E, A, s, e)
            assert got_path == path
            worst = max(worst, abs(tk.crf_log_partition(E, A, s, e) - log_z), abs(got_best - best))
        d["max_abs"] = f"{worst:.1e}"
        assert worst <= 1e-9


ABLATIONS = [
    ("w/o geocoding task", None, ["--no-geocoding"]),
    ("w/o heterogeneous graph", "none", []),
    ("w/o QcP edges", "otd,pcp", []),
    ("w/o OtD edges", "qcp,pcp", []),
    ("w/o PcP edges", "qcp,otd", []),
]


@pytest.mark.parametrize("name, edge_types, train_flags", ABLATIONS, ids=["no-geocoding", "no-graph", "no-qcp", "no-otd", "no-pcp"])
def test_c10_ablations(tmp_path, name, edge_types, train_flags):
    with criterion(10, f"ablation '{name}' from config flags"):
        paths = build(tmp_path, extra=[f"graph.edge_types={edge_types}"] if edge_types else [])
        pretrain(paths, steps=3, extra=train_flags)
        snap = json.loads(ok("inspect-snapshot", paths["graph"]))
        _, meta = nx.load_tensors(paths["model"])
        removed = {"none": {"QCP", "OTD", "PCP"}, "otd,pcp": {"QCP"}, "qcp,pcp": {"OTD"},
                   "qcp,otd": {"PCP"}}.get(edge_types, set())
        for etype in removed:
            assert snap["edges"][etype] == 0, snap
        for etype in {"QCP", "OTD", "PCP"} - removed:
            assert snap["edges"][etype] > 0, snap
        if train_flags:
            assert meta["loss_terms"] == ["mlm"]
            history = json.loads((paths["model"].parent / "model.ckpt.losses.json").read_text())["history"]
            assert all(abs(r["total"] - r["mlm"]) < 1e-12 for r in history)
        else:
            assert meta["loss_terms"] == ["mlm", "geocode"]
        if edge_types:
            assert meta["pipeline"]["graph"]["edge_types"] == edge_types


def test_c11_determinism(tmp_path):
    with criterion(11, "full pipeline byte-identical across two runs") as d:
        a = tree_bytes(full_pipeline(tmp_path / "a"))
        b = tree_bytes(full_pipeline(tmp_path / "b"))
        d["files"] = len(a)
        assert a.keys() == b.keys()
        differing = [k for k in a if a[k] != b[k]]
        assert differing == [], differing
