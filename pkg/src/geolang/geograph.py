"""Heterogeneous POI/query graph: ingestion, co-location edges, snapshots."""

from __future__ import annotations

import enum
import json
import logging
import random
import struct
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import dgg

log = logging.getLogger(__name__)

SEP = "[SEP]"
SNAPSHOT_MAGIC = b"GGR1"
SNAPSHOT_VERSION = 1


class NodeType(enum.IntEnum):
    POI = 0
    QUERY = 1


class EdgeType(enum.IntEnum):
    QCP = 0
    OTD = 1
    PCP = 2

    @property
    def directed(self) -> bool:
        return self is EdgeType.OTD

    @classmethod
    def parse(cls, name: str) -> "EdgeType":
        return cls[name.strip().upper().replace("-", "")]


ALL_EDGE_TYPES = tuple(EdgeType)


class GraphError(ValueError):
    pass


class SnapshotError(GraphError):
    pass


@dataclass(frozen=True)
class PoiRecord:
    poi_id: str
    name: str
    address: str
    poi_type: str
    location: dgg.LatLng

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise GraphError(f"POI {self.poi_id!r} has an empty name")
        if not isinstance(self.location, dgg.LatLng):
            object.__setattr__(self, "location", dgg.LatLng(*self.location))

    @classmethod
    def from_json(cls, row: dict) -> "PoiRecord":
        return cls(str(row["poi_id"]), row["name"], row.get("address", ""), row.get("type", ""),
                   dgg.LatLng(row["lat"], row["lng"]))


@dataclass(frozen=True)
class QueryRecord:
    text: str
    clicked_poi_id: str
    count: int = 1

    def __post_init__(self):
        if int(self.count) < 1:
            raise GraphError(f"click count must be >= 1, got {self.count}")

    @classmethod
    def from_json(cls, row: dict) -> "QueryRecord":
        return cls(row["query"], str(row["poi_id"]), int(row.get("count", 1)))


@dataclass(frozen=True)
class SessionRecord:
    poi_ids: tuple

    @classmethod
    def from_json(cls, row: dict) -> "SessionRecord":
        return cls(tuple(str(p) for p in row["poi_ids"]))


@dataclass(frozen=True)
class Node:
    node_id: int
    node_type: NodeType
    key: str
    text: str
    location: dgg.LatLng | None = None
    geocode: str | None = None
    count: int = 0


def clean_text(text: str) -> str:
    # tabs, newlines and the corpus node separator are reserved by the corpus format
    return " ".join(text.replace("⏐", " ").split())


def poi_text(name: str, address: str, poi_type: str) -> str:
    return f" {SEP} ".join(clean_text(part) for part in (name, address, poi_type))


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


class GraphBuilder:
    """Single-writer accumulator; call :meth:`freeze` to get a :class:`HeteroGraph`.

    ``edge_types`` restricts which edge types are ever created, which is how
    the edge-removal ablations are configured.
    """

    def __init__(self, edge_types: Iterable[EdgeType] = ALL_EDGE_TYPES, top_k_queries: int = 4,
                 colocation_level: int = 15, max_cell_pois: int = 256, seed: int = 0):
        self.edge_types = frozenset(EdgeType(t) for t in edge_types)
        self.top_k_queries = top_k_queries
        self.colocation_level = colocation_level
        self.max_cell_pois = max_cell_pois
        self.seed = seed
        self.nodes: list[Node] = []
        self._poi_index: dict[str, int] = {}
        self._query_index: dict[tuple[str, str], int] = {}
        self.edges: dict[EdgeType, set[tuple[int, int]]] = {t: set() for t in EdgeType}
        self.stats = defaultdict(int)

    # -- nodes ---------------------------------------------------------------
    def ingest_pois(self, records: Iterable[PoiRecord]) -> None:
        for rec in records:
            if rec.poi_id in self._poi_index:
                raise GraphError(f"duplicate poi_id {rec.poi_id!r}")
            cell = dgg.latlng_to_cell(rec.location, dgg.CODE_LEVELS)
            node = Node(len(self.nodes), NodeType.POI, rec.poi_id,
                        poi_text(rec.name, rec.address, rec.poi_type),
                        rec.location, dgg.encode_2lt3c(cell))
            self._poi_index[rec.poi_id] = node.node_id
            self.nodes.append(node)
            self.stats["pois"] += 1

    def ingest_clicks(self, records: Iterable[QueryRecord], k: int | None = None) -> None:
        """Attach the ``k`` most-clicked distinct queries of every POI.

        Counts of repeated (query, poi) records are summed; ties are broken by
        query text.  A query node is scoped to the POI it clicked.
        """
        k = self.top_k_queries if k is None else k
        per_poi: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
        for rec in records:
            if rec.clicked_poi_id not in self._poi_index:
                self.stats["unknown_click_poi"] += 1
                continue
            text = clean_text(rec.text)
            if not text:
                self.stats["empty_query"] += 1
                continue
            per_poi[rec.clicked_poi_id][text] += int(rec.count)
        for poi_id in sorted(per_poi, key=self._poi_index.__getitem__):
            ranked = sorted(per_poi[poi_id].items(), key=lambda kv: (-kv[1], kv[0]))[:max(k, 0)]
            poi = self._poi_index[poi_id]
            for text, count in ranked:
                key = (text, poi_id)
                if key in self._query_index:
                    continue
                node = Node(len(self.nodes), NodeType.QUERY, poi_id, text, count=count)
                self._query_index[key] = node.node_id
                self.nodes.append(node)
                self.stats["queries"] += 1
                self._add_edge(EdgeType.QCP, node.node_id, poi)

    def ingest_sessions(self, records: Iterable[SessionRecord]) -> None:
        for rec in records:
            ids = []
            for pid in rec.poi_ids:
                if pid in self._poi_index:
                    ids.append(self._poi_index[pid])
                else:
                    self.stats["unknown_session_poi"] += 1
            for a, b in zip(ids, ids[1:]):
                self._add_edge(EdgeType.OTD, a, b)

    def build_colocation(self, level: int | None = None) -> None:
        """Link POIs sharing a cell at ``level`` (default 15) with PcP edges.

        Cells with more than ``max_cell_pois`` POIs link each POI to that many
        randomly chosen cellmates instead of forming a full clique.
        """
        level = self.colocation_level if level is None else level
        cells: dict[int, list[int]] = defaultdict(list)
        for node in self.nodes:
            if node.node_type is NodeType.POI:
                cells[dgg.latlng_to_cell(node.location, level).id].append(node.node_id)
        rng = random.Random(self.seed)
        for cell_id in sorted(cells):
            members = sorted(cells[cell_id])
            if len(members) <= self.max_cell_pois:
                for i, a in enumerate(members):
                    for b in members[i + 1:]:
                        self._add_edge(EdgeType.PCP, a, b)
            else:
                self.stats["capped_cells"] += 1
                for a in members:
                    others = [m for m in members if m != a]
                    for b in rng.sample(others, self.max_cell_pois):
                        self._add_edge(EdgeType.PCP, a, b)

    def _add_edge(self, etype: EdgeType, a: int, b: int) -> None:
        if etype not in self.edge_types:
            self.stats[f"dropped_{etype.name.lower()}"] += 1
            return
        if a == b:
            self.stats["self_loops"] += 1
            return
        ta, tb = self.nodes[a].node_type, self.nodes[b].node_type
        if etype is EdgeType.QCP:
            if {ta, tb} != {NodeType.POI, NodeType.QUERY}:
                raise GraphError("QcP edges connect a query and a POI")
        elif ta is not NodeType.POI or tb is not NodeType.POI:
            raise GraphError(f"{etype.name} edges connect two POIs")
        key = (a, b) if etype.directed else (min(a, b), max(a, b))
        if key in self.edges[etype]:
            self.stats[f"duplicate_{etype.name.lower()}"] += 1
            return
        self.edges[etype].add(key)
        self.stats[f"{etype.name.lower()}_edges"] += 1

    def freeze(self) -> "HeteroGraph":
        return HeteroGraph.from_edges(self.nodes, self.edges)

    @classmethod
    def from_files(cls, pois, clicks=None, sessions=None, **kwargs) -> "GraphBuilder":
        b = cls(**kwargs)
        b.ingest_pois(PoiRecord.from_json(r) for r in _read_jsonl(pois))
        if clicks:
            b.ingest_clicks(QueryRecord.from_json(r) for r in _read_jsonl(clicks))
        if sessions:
            b.ingest_sessions(SessionRecord.from_json(r) for r in _read_jsonl(sessions))
        b.build_colocation()
        return b


@dataclass
class Csr:
    offsets: np.ndarray
    indices: np.ndarray

    def row(self, v: int) -> np.ndarray:
        return self.indices[self.offsets[v]:self.offsets[v + 1]]

    @classmethod
    def from_pairs(cls, n: int, pairs) -> "Csr":
        pairs = sorted(set(pairs))
        offsets = np.zeros(n + 1, dtype=np.int64)
        for a, _ in pairs:
            offsets[a + 1] += 1
        np.cumsum(offsets, out=offsets)
        indices = np.array([b for _, b in pairs], dtype=np.int64)
        return cls(offsets, indices)


@dataclass
class HeteroGraph:
    """Frozen graph.  ``out[t]`` holds sorted neighbor lists per edge type;
    for undirected types it is symmetric, for OtD it holds successors and
    ``inc`` the predecessors."""

    nodes: list[Node]
    out: dict[EdgeType, Csr]
    inc: Csr = field(repr=False)

    @classmethod
    def from_edges(cls, nodes, edges) -> "HeteroGraph":
        n = len(nodes)
        out = {}
        for t in EdgeType:
            pairs = list(edges.get(t, ()))
            if not t.directed:
                pairs = pairs + [(b, a) for a, b in pairs]
            out[t] = Csr.from_pairs(n, pairs)
        inc = Csr.from_pairs(n, [(b, a) for a, b in edges.get(EdgeType.OTD, ())])
        return cls(list(nodes), out, inc)

    def __len__(self):
        return len(self.nodes)

    def neighbors(self, v: int, etype: EdgeType) -> np.ndarray:
        return self.out[EdgeType(etype)].row(v)

    def walk_neighbors(self, v: int, etype: EdgeType) -> np.ndarray:
        """Neighbors used by the random walk: OtD edges count in both directions."""
        if etype is EdgeType.OTD:
            return np.union1d(self.out[etype].row(v), self.inc.row(v))
        return self.out[etype].row(v)

    def edge_list(self, etype: EdgeType) -> list[tuple[int, int]]:
        csr = self.out[etype]
        pairs = []
        for a in range(len(self.nodes)):
            for b in csr.row(a):
                if etype.directed or a < b:
                    pairs.append((a, int(b)))
        return pairs

    def edge_counts(self) -> dict[str, int]:
        counts = {}
        for t, csr in self.out.items():
            total = len(csr.indices)
            counts[t.name] = total if t.directed else total // 2
        return counts

    def node_counts(self) -> dict[str, int]:
        counts = {t.name: 0 for t in NodeType}
        for node in self.nodes:
            counts[node.node_type.name] += 1
        return counts

    def node_by_key(self, key: str) -> Node:
        for node in self.nodes:
            if node.node_type is NodeType.POI and node.key == key:
                return node
        raise KeyError(key)


# -- snapshot ----------------------------------------------------------------
# Layout: magic | u32 version | sections | u32 crc32 of everything before it.
# Each section is u64 byte length followed by its payload.

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_snapshot(graph: HeteroGraph) -> bytes:
    node_blob = bytearray(struct.pack("<Q", len(graph.nodes)))
    for node in graph.nodes:
        has_loc = node.location is not None
        node_blob += struct.pack("<BBq", int(node.node_type), int(has_loc), node.count)
        node_blob += _pack_str(node.key) + _pack_str(node.text)
        if has_loc:
            node_blob += struct.pack("<dd", node.location.lat, node.location.lng)
            node_blob += node.geocode.encode("ascii")
    sections = [bytes(node_blob)]
    for t in EdgeType:
        csr = graph.out[t]
        sections.append(struct.pack("<B", int(t)) + csr.offsets.astype("<i8").tobytes()
                        + csr.indices.astype("<i8").tobytes())
    body = bytearray(SNAPSHOT_MAGIC + struct.pack("<I", SNAPSHOT_VERSION))
    for sec in sections:
        body += struct.pack("<Q", len(sec)) + sec
    return bytes(body) + struct.pack("<I", zlib.crc32(body))


def load_snapshot(blob: bytes) -> HeteroGraph:
    if len(blob) < 12 or blob[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError("not a graph snapshot (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise SnapshotError("snapshot checksum mismatch (truncated or corrupted)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    pos = 8
    sections = []
    while pos < len(blob) - 4:
        (size,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        sections.append(blob[pos:pos + size])
        pos += size

    node_blob = sections[0]
    (n,) = struct.unpack_from("<Q", node_blob, 0)
    p = 8
    nodes = []

    def read_str():
        nonlocal p
        (length,) = struct.unpack_from("<I", node_blob, p)
        p += 4
        s = node_blob[p:p + length].decode("utf-8")
        p += length
        return s

    for node_id in range(n):
        ntype, has_loc, count = struct.unpack_from("<BBq", node_blob, p)
        p += 10
        key, text = read_str(), read_str()
        loc = geocode = None
        if has_loc:
            lat, lng = struct.unpack_from("<dd", node_blob, p)
            p += 16
            loc = dgg.LatLng(lat, lng)
            geocode = node_blob[p:p + dgg.CODE_LENGTH].decode("ascii")
            p += dgg.CODE_LENGTH
        nodes.append(Node(node_id, NodeType(ntype), key, text, loc, geocode, count))

    out = {}
    for sec in sections[1:]:
        t = EdgeType(sec[0])
        offsets = np.frombuffer(sec, dtype="<i8", count=n + 1, offset=1).astype(np.int64)
        indices = np.frombuffer(sec, dtype="<i8", offset=1 + 8 * (n + 1)).astype(np.int64)
        out[t] = Csr(offsets, indices)
    otd = out[EdgeType.OTD]
    inc = Csr.from_pairs(n, [(int(b), a) for a in range(n) for b in otd.row(a)])
    return HeteroGraph(nodes, out, inc)


def write_snapshot(graph: HeteroGraph, path) -> None:
    Path(path).write_bytes(save_snapshot(graph))


def read_snapshot(path) -> HeteroGraph:
    return load_snapshot(Path(path).read_bytes())
