"""Weighted random walks over the heterogeneous graph.

The transition probability from ``v`` to a neighbor ``u`` reached through an
edge of type ``t`` is ``lambda_t / |N_t(v)|``.  Contributions of a neighbor
reachable through several edge types add up, and the map is divided by the
sum of ``lambda_t`` over the edge types actually present at ``v`` so that it
is a proper distribution.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .geograph import EdgeType, HeteroGraph, Node, NodeType

NODE_SEP = "⏐"


@dataclass(frozen=True)
class WalkConfig:
    walk_length: int = 9
    lambda_qcp: float = 0.5
    lambda_otd: float = 0.25
    lambda_pcp: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.walk_length < 1:
            raise ValueError("walk_length must be >= 1")
        lams = (self.lambda_qcp, self.lambda_otd, self.lambda_pcp)
        if min(lams) < 0 or sum(lams) <= 0:
            raise ValueError(f"edge weights must be non-negative with a positive sum, got {lams}")

    def weight(self, etype: EdgeType) -> float:
        return (self.lambda_qcp, self.lambda_otd, self.lambda_pcp)[int(etype)]


@dataclass(frozen=True)
class WalkDocument:
    node_ids: tuple[int, ...]

    @property
    def start_id(self) -> int:
        return self.node_ids[0]

    def __len__(self):
        return len(self.node_ids)


@dataclass(frozen=True)
class CorpusStats:
    documents: int
    total_nodes: int

    @property
    def mean_length(self) -> float:
        return self.total_nodes / self.documents if self.documents else 0.0


def transition_distribution(graph: HeteroGraph, v: int, cfg: WalkConfig) -> dict[int, float]:
    """Exact next-node distribution at ``v``; empty when ``v`` has no usable neighbors."""
    probs: dict[int, float] = {}
    present = 0.0
    for etype in EdgeType:
        lam = cfg.weight(etype)
        nbrs = graph.walk_neighbors(v, etype)
        if lam == 0 or len(nbrs) == 0:
            continue
        present += lam
        share = lam / len(nbrs)
        for u in nbrs:
            probs[int(u)] = probs.get(int(u), 0.0) + share
    if not probs:
        return {}
    return {u: p / present for u, p in sorted(probs.items())}


class Walker:
    """Caches per-node cumulative transition tables for repeated sampling."""

    def __init__(self, graph: HeteroGraph, cfg: WalkConfig):
        self.graph = graph
        self.cfg = cfg
        self._tables: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def table(self, v: int):
        tab = self._tables.get(v)
        if tab is None:
            dist = transition_distribution(self.graph, v, self.cfg)
            nbrs = np.fromiter(dist.keys(), dtype=np.int64, count=len(dist))
            cum = np.cumsum(np.fromiter(dist.values(), dtype=np.float64, count=len(dist)))
            tab = self._tables[v] = (nbrs, cum)
        return tab

    def step(self, v: int, rng: np.random.Generator) -> int | None:
        nbrs, cum = self.table(v)
        if len(nbrs) == 0:
            return None
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        return int(nbrs[min(k, len(nbrs) - 1)])

    def walk(self, start: int) -> WalkDocument:
        # one RNG stream per (seed, start) keeps corpora independent of scheduling
        rng = np.random.default_rng([self.cfg.seed, start])
        ids = [start]
        v = start
        for _ in range(self.cfg.walk_length):
            u = self.step(v, rng)
            if u is None:
                break
            ids.append(u)
            v = u
        return WalkDocument(tuple(ids))


def sample_walk(graph: HeteroGraph, start: int, cfg: WalkConfig) -> WalkDocument:
    """Walk of at most ``cfg.walk_length`` steps from ``start``; stops at dead ends."""
    if not 0 <= start < len(graph):
        raise IndexError(f"node {start} not in graph")
    return Walker(graph, cfg).walk(start)


def generate_corpus(graph: HeteroGraph, cfg: WalkConfig, sink: Callable[[WalkDocument], None],
                    workers: int = 1) -> CorpusStats:
    """Start one walk from every node and hand the documents to ``sink`` in node order."""
    walker = Walker(graph, cfg)
    for v in range(len(graph)):
        walker.table(v)
    starts = range(len(graph))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            docs: Iterable[WalkDocument] = pool.map(walker.walk, starts, chunksize=64)
            return _drain(docs, sink)
    return _drain(map(walker.walk, starts), sink)


def _drain(docs, sink):
    n = total = 0
    for doc in docs:
        sink(doc)
        n += 1
        total += len(doc)
    return CorpusStats(n, total)


# -- corpus file -------------------------------------------------------------

@dataclass(frozen=True)
class DocNode:
    """A node as it appears in a corpus document."""

    node_type: NodeType
    text: str
    geocode: str | None = None

    @classmethod
    def from_node(cls, node: Node) -> "DocNode":
        return cls(node.node_type, node.text, node.geocode)


def render_document(graph: HeteroGraph, doc: WalkDocument) -> str:
    parts = []
    for v in doc.node_ids:
        node = graph.nodes[v]
        parts.append(f"{node.node_type.name}\t{node.text}\t{node.geocode or ''}")
    return NODE_SEP.join(parts)


def parse_document(line: str) -> list[DocNode]:
    nodes = []
    for part in line.rstrip("\n").split(NODE_SEP):
        ntype, text, geocode = part.split("\t")
        nodes.append(DocNode(NodeType[ntype], text, geocode or None))
    return nodes


def write_corpus(graph: HeteroGraph, cfg: WalkConfig, path, workers: int = 1) -> CorpusStats:
    buf = io.StringIO()
    stats = generate_corpus(graph, cfg, lambda d: buf.write(render_document(graph, d) + "\n"),
                            workers=workers)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())
    return stats


def read_corpus(path) -> list[list[DocNode]]:
    with open(path, encoding="utf-8") as fh:
        return [parse_document(line) for line in fh if line.strip()]
