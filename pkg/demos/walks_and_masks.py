"""Random walks over the fixture graph and what masking does to them.

Run:  python3 demos/walks_and_masks.py
"""

from collections import Counter
from pathlib import Path

import numpy as np

from geolang import geograph as gg, masker as mk, sampler as sm
from geolang.cli import build_text_resources

FIXTURE = Path(gg.__file__).parent / "data" / "fixture"

builder = gg.GraphBuilder.from_files(FIXTURE / "pois.jsonl", FIXTURE / "clicks.jsonl", FIXTURE / "sessions.jsonl")
graph = builder.freeze()
print("nodes", dict(graph.node_counts()), "edges", dict(graph.edge_counts()))

cfg = sm.WalkConfig()
start = 0
print("\nneighbours of", graph.nodes[start].text.split(" [SEP] ")[0])
for v, p in sorted(sm.transition_distribution(graph, start, cfg).items(), key=lambda kv: -kv[1]):
    node = graph.nodes[v]
    print(f"  {p:.3f}  {node.node_type.name:5s} {node.text[:60]}")

walk = sm.sample_walk(graph, start, cfg)
print("\none walk:", " -> ".join(graph.nodes[v].node_type.name for v in walk.node_ids))

docs = []
sm.generate_corpus(graph, cfg, docs.append)
docs = [[sm.DocNode.from_node(graph.nodes[v]) for v in d.node_ids] for d in docs]
print("documents", len(docs), "mean length", np.mean([len(d) for d in docs]).round(2))

tok, seg, lex = build_text_resources(graph)
examples = mk.mask_corpus(docs, tok, seg, lex, mk.MaskingConfig())

# show the first node of the first document before and after masking
node = examples[0].nodes[0]
words = tok.decode(node.token_ids)
gold = [tok.decode([g])[0] if g != mk.NO_LABEL else "" for g in node.labels]
print("\nmasked input:", " ".join(words))
print("targets:     ", " ".join(g for g in gold if g))
print("geocode target:", node.geocode)

# few fixture words have a known misspelling, so most MISSPELL draws fall back
# to RANDOM here; the synthetic test corpus with a full lexicon shows the 70/10/10/10 split
actions = Counter(int(a) for e in examples for n in e.nodes for a, l in zip(n.actions, n.labels)
                  if l != mk.NO_LABEL)
total = sum(actions.values())
for a in mk.Action:
    if a in actions:
        print(f"  {a.name:8s} {actions[a] / total:.3f}")
