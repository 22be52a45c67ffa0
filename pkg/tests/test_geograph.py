import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geolang import dgg, geograph as gg
from geolang.dgg import LatLng
from geolang.geograph import EdgeType, GraphBuilder, NodeType, PoiRecord, QueryRecord, SessionRecord


def poi(pid, lat=31.3, lng=120.6, name=None):
    return PoiRecord(pid, name or f"Shop {pid}", f"Road {pid}", "Store", LatLng(lat, lng))


def builder(pois, **kw):
    b = GraphBuilder(**kw)
    b.ingest_pois(pois)
    return b


class TestIngestPois:
    def test_node_text(self):
        b = builder([PoiRecord("p", "Yizi Food (Suzhou) Co.",
                               "No.1, Songxiang, Suzhou Industrial Park, Suzhou, Jiangsu Province",
                               "Company", LatLng(31.3, 120.7))])
        assert b.nodes[0].text == ("Yizi Food (Suzhou) Co. [SEP] No.1, Songxiang, Suzhou Industrial Park, "
                                   "Suzhou, Jiangsu Province [SEP] Company")
        assert b.nodes[0].geocode == dgg.encode_2lt3c(dgg.latlng_to_cell(LatLng(31.3, 120.7), 22))

    def test_empty_stream(self):
        g = builder([]).freeze()
        assert len(g) == 0 and all(n == 0 for n in g.edge_counts().values())

    def test_duplicate_id(self):
        with pytest.raises(gg.GraphError):
            builder([poi("a"), poi("a")])

    def test_separator_and_whitespace_cleaned(self):
        b = builder([poi("a", name="A\tB⏐C\nD")])
        assert b.nodes[0].text.startswith("A B C D [SEP]")


class TestClicks:
    def test_top_k(self):
        b = builder([poi("p")])
        counts = {"q9": 9, "q7": 7, "q5": 5, "q3": 3, "q2": 2, "q1": 1}
        b.ingest_clicks(QueryRecord(t, "p", c) for t, c in counts.items())
        g = b.freeze()
        kept = sorted(g.nodes[q].count for q in g.neighbors(0, EdgeType.QCP))
        assert kept == [3, 5, 7, 9]
        assert g.edge_counts()["QCP"] == 4

    def test_tie_break_lexicographic(self):
        b = builder([poi("p")])
        b.ingest_clicks([QueryRecord(t, "p", 1) for t in ("e", "d", "c", "b", "a")])
        assert sorted(n.text for n in b.nodes if n.node_type is NodeType.QUERY) == ["a", "b", "c", "d"]

    def test_counts_summed(self):
        b = builder([poi("p")])
        b.ingest_clicks([QueryRecord("x", "p", 2), QueryRecord("x", "p", 3), QueryRecord("y", "p", 4)], k=1)
        assert [n.text for n in b.nodes[1:]] == ["x"] and b.nodes[1].count == 5

    def test_k_zero(self):
        b = builder([poi("p")])
        b.ingest_clicks([QueryRecord("x", "p", 2)], k=0)
        assert len(b.nodes) == 1

    def test_query_scoped_to_poi(self):
        b = builder([poi("a"), poi("b", lat=40, lng=116)])
        b.ingest_clicks([QueryRecord("coffee", "a"), QueryRecord("coffee", "b")])
        queries = [n for n in b.nodes if n.node_type is NodeType.QUERY]
        assert len(queries) == 2 and {q.key for q in queries} == {"a", "b"}

    def test_unknown_poi_counted(self):
        b = builder([poi("a")])
        b.ingest_clicks([QueryRecord("x", "zz")])
        assert b.stats["unknown_click_poi"] == 1

    def test_bad_count(self):
        with pytest.raises(gg.GraphError):
            QueryRecord("x", "a", 0)


class TestSessions:
    def setup_method(self):
        self.b = builder([poi("A"), poi("B", 40, 116), poi("C", 25, 102)])

    def edges(self):
        return set(self.b.freeze().edge_list(EdgeType.OTD))

    def test_chain(self):
        self.b.ingest_sessions([SessionRecord(("A", "B", "C"))])
        assert self.edges() == {(0, 1), (1, 2)}

    def test_single(self):
        self.b.ingest_sessions([SessionRecord(("A",))])
        assert self.edges() == set()

    def test_back_and_forth(self):
        self.b.ingest_sessions([SessionRecord(("A", "B", "A"))])
        assert self.edges() == {(0, 1), (1, 0)}

    def test_repeat_collapses(self):
        self.b.ingest_sessions([SessionRecord(("A", "B"))] * 3)
        assert self.b.freeze().edge_counts()["OTD"] == 1


def brute_colocation(pois, level):
    out = set()
    for (i, a), (j, b) in itertools.combinations(enumerate(pois), 2):
        if dgg.latlng_to_cell(a.location, level) == dgg.latlng_to_cell(b.location, level):
            out.add((i, j))
    return out


class TestColocation:
    def test_clique(self):
        b = builder([poi("a"), poi("b"), poi("c")])
        b.build_colocation()
        assert b.freeze().edge_counts()["PCP"] == 3

    def test_separate_cells(self):
        b = builder([poi("a"), poi("b", 40, 116)])
        b.build_colocation()
        assert b.freeze().edge_counts()["PCP"] == 0

    def test_fixture_matches_brute_force(self, fixture_dir):
        rows = [json.loads(line) for line in open(fixture_dir / "pois.jsonl")]
        pois = [PoiRecord.from_json(r) for r in rows]
        b = builder(pois)
        b.build_colocation()
        assert set(b.freeze().edge_list(EdgeType.PCP)) == brute_colocation(pois, 15)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.floats(31.30, 31.32), st.floats(120.60, 120.62)), min_size=1, max_size=30),
           st.randoms(use_true_random=False))
    def test_permutation_invariant(self, points, rnd):
        pois = [poi(f"p{i}", lat, lng) for i, (lat, lng) in enumerate(points)]
        shuffled = pois[:]
        rnd.shuffle(shuffled)

        def keyed(ps):
            b = builder(ps)
            b.build_colocation()
            g = b.freeze()
            return {frozenset((g.nodes[a].key, g.nodes[c].key)) for a, c in g.edge_list(EdgeType.PCP)}

        expected = {frozenset((pois[i].poi_id, pois[j].poi_id)) for i, j in brute_colocation(pois, 15)}
        assert keyed(pois) == keyed(shuffled) == expected

    def test_cap(self):
        pois = [poi(f"p{i}", 31.3 + i * 1e-7) for i in range(8)]
        b = builder(pois, max_cell_pois=3)
        b.build_colocation()
        g = b.freeze()
        assert b.stats["capped_cells"] == 1
        for v in range(8):
            assert len(g.neighbors(v, EdgeType.PCP)) >= 3


class TestDomains:
    def test_edge_domains_on_fixture(self, fixture_graph):
        g = fixture_graph
        for a, b in g.edge_list(EdgeType.QCP):
            assert {g.nodes[a].node_type, g.nodes[b].node_type} == {NodeType.POI, NodeType.QUERY}
        for t in (EdgeType.OTD, EdgeType.PCP):
            for a, b in g.edge_list(t):
                assert g.nodes[a].node_type is g.nodes[b].node_type is NodeType.POI

    def test_bad_edge_rejected(self):
        b = builder([poi("a")])
        b.ingest_clicks([QueryRecord("x", "a")])
        with pytest.raises(gg.GraphError):
            b._add_edge(EdgeType.PCP, 0, 1)

    def test_fixture_counts(self, fixture_graph):
        assert fixture_graph.node_counts() == {"POI": 50, "QUERY": 180}
        assert fixture_graph.edge_counts() == {"QCP": 180, "OTD": 169, "PCP": 43}
        for v in range(50):
            assert len(fixture_graph.neighbors(v, EdgeType.QCP)) <= 4

    @pytest.mark.parametrize("removed", list(EdgeType))
    def test_edge_type_ablation(self, fixture_dir, removed):
        keep = [t for t in EdgeType if t is not removed]
        g = GraphBuilder.from_files(fixture_dir / "pois.jsonl", fixture_dir / "clicks.jsonl",
                                    fixture_dir / "sessions.jsonl", edge_types=keep).freeze()
        assert g.edge_counts()[removed.name] == 0
        assert all(g.edge_counts()[t.name] > 0 for t in keep)


def random_graph(n, seed):
    rng = np.random.default_rng(seed)
    nodes, b = [], GraphBuilder()
    n_poi = n // 2
    b.ingest_pois(poi(f"p{i}", float(rng.uniform(20, 40)), float(rng.uniform(100, 120))) for i in range(n_poi))
    b.ingest_clicks(QueryRecord(f"q{i}", f"p{int(rng.integers(n_poi))}") for i in range(n - n_poi))
    b.ingest_sessions(SessionRecord(tuple(f"p{int(x)}" for x in rng.integers(0, n_poi, 5))) for _ in range(n // 5))
    b.build_colocation(level=6)
    return b.freeze()


class TestSnapshot:
    def test_empty_round_trip(self):
        g = GraphBuilder().freeze()
        blob = gg.save_snapshot(g)
        assert gg.save_snapshot(gg.load_snapshot(blob)) == blob

    def test_large_round_trip(self):
        g = random_graph(10_000, 0)
        blob = gg.save_snapshot(g)
        h = gg.load_snapshot(blob)
        assert gg.save_snapshot(h) == blob
        assert h.nodes == g.nodes
        for t in EdgeType:
            assert h.edge_list(t) == g.edge_list(t)

    def test_truncated(self, fixture_graph):
        blob = gg.save_snapshot(fixture_graph)
        with pytest.raises(gg.SnapshotError):
            gg.load_snapshot(blob[:-10])
        with pytest.raises(gg.SnapshotError):
            gg.load_snapshot(b"XXXX" + blob[4:])

    def test_file(self, fixture_graph, tmp_path):
        gg.write_snapshot(fixture_graph, tmp_path / "g.ggr")
        assert (tmp_path / "g.ggr").read_bytes()[:4] == b"GGR1"
        assert gg.read_snapshot(tmp_path / "g.ggr").edge_counts() == fixture_graph.edge_counts()
