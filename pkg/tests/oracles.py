"""Independent reference computations used as test oracles."""

import itertools
import math

import numpy as np
from scipy.special import logsumexp

from geolang import masker as mk, model as md
from geolang.geograph import NodeType


def standard_attention(H, Wq, bq, Wk, bk, Wo, heads):
    """Single-type multi-head attention with H as the value matrix, head by head."""
    n, d = H.shape
    dh = d // heads
    out = []
    for j in range(heads):
        cols = slice(j * dh, (j + 1) * dh)
        Q = H @ Wq[:, cols] + bq[cols]
        K = H @ Wk[:, cols] + bk[cols]
        S = Q @ K.T / math.sqrt(dh)
        A = np.exp(S - S.max(axis=1, keepdims=True))
        A /= A.sum(axis=1, keepdims=True)
        out.append(A @ H)
    return np.concatenate(out, axis=1) @ Wo


def crf_enumerate(E, A, s, e):
    """(log Z, best score, best path) by listing every tag path."""
    L, T = E.shape
    scores = {}
    for path in itertools.product(range(T), repeat=L):
        v = s[path[0]] + E[0, path[0]] + e[path[-1]]
        for i in range(1, L):
            v += A[path[i - 1], path[i]] + E[i, path[i]]
        scores[path] = v
    best = max(scores, key=scores.get)
    return logsumexp(list(scores.values())), scores[best], list(best)


def tiny_model_and_batch(hidden=8, heads=2, layers=1, seed=0):
    """Two-node document (a POI and a query) through a small model with random weights."""
    vocab = {t: i for i, t in enumerate(list(mk.SPECIALS) + ["a", "b", "c", "d"])}
    tok = mk.WordTokenizer(vocab)
    cfg = md.ModelConfig(vocab_size=len(vocab), hidden=hidden, layers=layers, heads=heads, ffn=2 * hidden,
                         max_len=8, seed=seed, init_std=0.5)
    model = md.GeoLM(cfg)
    rng = np.random.default_rng(seed + 1)
    for _, t in model.store:
        t.data = t.data + rng.normal(0, 0.1, t.data.shape)
    code = "453cf541f450475" + "0" * 18
    poi = mk.MaskedNode(NodeType.POI, np.array([2, 5, 3, 6]), np.array([0, 0, 1, 0], np.int8),
                        np.array([-1, -1, 6, -1]), code)
    query = mk.MaskedNode(NodeType.QUERY, np.array([2, 7, 3]), np.array([0, 0, 1], np.int8),
                          np.array([-1, -1, 8]))
    return model, md.make_batch([mk.MaskedExample([poi, query])], tok.pad_id)
