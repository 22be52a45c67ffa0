import json
from pathlib import Path

import numpy as np
import pytest

from geolang import geograph as gg, masker as mk, sampler as sm
from geolang.cli import build_text_resources

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "geolang" / "data" / "fixture"
DATA = Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def fixture_dir():
    return FIXTURE


@pytest.fixture(scope="session")
def s2_oracle():
    return json.loads((DATA / "s2_oracle.json").read_text())["records"]


@pytest.fixture(scope="session")
def fixture_graph():
    b = gg.GraphBuilder.from_files(FIXTURE / "pois.jsonl", FIXTURE / "clicks.jsonl", FIXTURE / "sessions.jsonl")
    return b.freeze()


@pytest.fixture(scope="session")
def fixture_docs(fixture_graph):
    docs = []
    sm.generate_corpus(fixture_graph, sm.WalkConfig(), docs.append)
    return [[sm.DocNode.from_node(fixture_graph.nodes[v]) for v in d.node_ids] for d in docs]


@pytest.fixture(scope="session")
def text_resources(fixture_graph):
    return build_text_resources(fixture_graph)


@pytest.fixture(scope="session")
def fixture_examples(fixture_docs, text_resources):
    tok, seg, lex = text_resources
    return mk.mask_corpus(fixture_docs, tok, seg, lex, mk.MaskingConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s[6:8])):
            terminalreporter.write_line(line)
