"""Downstream heads, metrics and evaluation harnesses.

Five task shapes are covered: text classification (also used for 4-level
query/POI relevance), sequence labelling with a linear-chain CRF,
geocoding, next-POI recommendation with a two-tower retriever, and the
embedding-arithmetic analogy probe.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import numerics as nx
from .dgg import (CODE_LEVELS, CellId, CodeConsistencyError, LatLng, TokenParseError, cell_center,
                  decode_2lt3c, deepest_consistent, encode_2lt3c, latlng_to_cell, token_to_cell)
from .geograph import NodeType
from .masker import WordTokenizer
from .model import (GeoLM, batch_indices, classes_to_geocode, embed_texts, geocode_to_classes,
                    tokenize_nodes)

EARTH_RADIUS_KM = 6371.0088
RELEVANCE_LEVELS = ("exact", "high", "weak", "irrelevant")


# -- datasets -------------------------------------------------------------------

@dataclass(frozen=True)
class ClassificationExample:
    text: str
    label: str


@dataclass(frozen=True)
class MatchingExample:
    query: str
    poi: str
    relevance: str

    def __post_init__(self):
        if self.relevance not in RELEVANCE_LEVELS:
            raise ValueError(f"relevance must be one of {RELEVANCE_LEVELS}, got {self.relevance!r}")

    @property
    def text(self) -> str:
        return f"{self.query} [SEP] {self.poi}"

    @property
    def label(self) -> str:
        return self.relevance


@dataclass(frozen=True)
class LabelingExample:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ValueError(f"{len(self.tokens)} tokens but {len(self.tags)} tags")


@dataclass(frozen=True)
class GeocodeExample:
    text: str
    lat: float
    lng: float

    @property
    def location(self) -> LatLng:
        return LatLng(self.lat, self.lng)


@dataclass(frozen=True)
class RecommendExample:
    history: tuple[str, ...]
    gold: str


TASK_TYPES = {
    "classify": ClassificationExample,
    "match": MatchingExample,
    "label": LabelingExample,
    "geocode": GeocodeExample,
    "recommend": RecommendExample,
}


def load_task_jsonl(path, task: str) -> list:
    """Read one JSON object per line into the example type of ``task``."""
    cls = TASK_TYPES[task]
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            for key in ("tokens", "tags", "history"):
                if key in rec:
                    rec[key] = tuple(rec[key])
            try:
                out.append(cls(**rec))
            except TypeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    n: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {"metric": self.metric, "value": self.value, "n": self.n}
        d.update(self.extra)
        return json.dumps(d, sort_keys=True)


def accuracy(predicted: Sequence, gold: Sequence) -> float:
    if len(predicted) != len(gold):
        raise ValueError("prediction and gold lengths differ")
    if not gold:
        raise ValueError("empty evaluation set")
    return sum(p == g for p, g in zip(predicted, gold)) / len(gold)


# -- fine-tuning loop --------------------------------------------------------------

@dataclass(frozen=True)
class FinetuneConfig:
    steps: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    warmup: int = 0
    train_encoder: bool = True
    clip_norm: float = 1.0
    seed: int = 0


def clone_model(model: GeoLM) -> GeoLM:
    """Copy of the parameters with fresh optimizer state."""
    twin = GeoLM(model.cfg)
    for name, t in model.store:
        twin.store[name].data = t.data.copy()
    return twin


def _fit(stores: Sequence[nx.ParameterStore], n: int, loss_fn: Callable[[np.ndarray], nx.Tensor],
         cfg: FinetuneConfig) -> list[float]:
    if n == 0:
        raise ValueError("empty training set")
    history = []
    for step in range(cfg.steps):
        idx = batch_indices(n, cfg.batch_size, step, cfg.seed)
        for s in stores:
            s.zero_grad()
        loss = loss_fn(idx)
        value = loss.item()
        if not math.isfinite(value):
            raise nx.NonFiniteError(f"non-finite fine-tuning loss at step {step}")
        loss.backward()
        grads = [t.grad for s in stores for _, t in s if t.grad is not None]
        norm = math.sqrt(sum(float((g ** 2).sum()) for g in grads))
        if cfg.clip_norm and norm > cfg.clip_norm:
            for s in stores:
                for _, t in s:
                    if t.grad is not None:
                        t.grad = t.grad * (cfg.clip_norm / norm)
        lr = nx.linear_schedule(step, cfg.steps, cfg.lr, cfg.warmup)
        for s in stores:
            nx.adam_step(s, lr=lr)
        history.append(value)
    return history


def _encode(model: GeoLM, tokenizer: WordTokenizer, texts: Sequence[str]):
    ids, valid, _ = tokenize_nodes(texts, tokenizer, model.cfg.max_len)
    return model.encode_nodes(ids, valid)


# -- classification / matching ------------------------------------------------------

class TextClassifier:
    """Linear layer over the single-node [CLS] vector."""

    def __init__(self, model: GeoLM, tokenizer: WordTokenizer, classes: Sequence[str], seed: int = 0):
        if len(classes) < 2:
            raise ValueError("need at least two classes")
        self.model = model
        self.tokenizer = tokenizer
        self.classes = tuple(classes)
        rng = np.random.default_rng(seed)
        self.head = nx.ParameterStore()
        self.head.add("w", rng.normal(0.0, model.cfg.init_std, (model.cfg.hidden, len(classes))))
        self.head.add("b", np.zeros(len(classes)))

    def logits(self, texts: Sequence[str]) -> nx.Tensor:
        h_cls, _ = _encode(self.model, self.tokenizer, texts)
        return nx.linear(h_cls, self.head["w"], self.head["b"])

    def predict(self, texts: Sequence[str], batch_size: int = 64) -> list[str]:
        out = []
        with nx.no_grad():
            for k in range(0, len(texts), batch_size):
                z = self.logits(texts[k:k + batch_size]).data
                out.extend(self.classes[i] for i in z.argmax(axis=-1))
        return out

    def evaluate(self, examples: Sequence) -> MetricReport:
        pred = self.predict([e.text for e in examples])
        return MetricReport("accuracy", accuracy(pred, [e.label for e in examples]), len(examples))


def finetune_classifier(model: GeoLM, tokenizer: WordTokenizer, examples: Sequence,
                        classes: Sequence[str] | None = None,
                        cfg: FinetuneConfig = FinetuneConfig()) -> tuple[TextClassifier, list[float]]:
    """Fit a classifier on examples with ``.text`` and ``.label``.

    ``MatchingExample`` fits here too: its text is "query [SEP] poi" and
    its label is one of the four relevance levels.
    """
    if not examples:
        raise ValueError("empty dataset")
    if classes is None:
        if isinstance(examples[0], MatchingExample):
            classes = RELEVANCE_LEVELS
        else:
            classes = sorted({e.label for e in examples})
    index = {c: i for i, c in enumerate(classes)}
    unknown = {e.label for e in examples} - set(index)
    if unknown:
        raise ValueError(f"labels outside the class list: {sorted(unknown)}")
    enc = clone_model(model) if cfg.train_encoder else model
    clf = TextClassifier(enc, tokenizer, classes, cfg.seed)
    texts = [e.text for e in examples]
    labels = np.array([index[e.label] for e in examples])

    def loss_fn(idx):
        if cfg.train_encoder:
            return nx.cross_entropy(clf.logits([texts[i] for i in idx]), labels[idx])
        with nx.no_grad():
            h, _ = _encode(enc, tokenizer, [texts[i] for i in idx])
        return nx.cross_entropy(nx.linear(nx.Tensor(h.data), clf.head["w"], clf.head["b"]), labels[idx])

    stores = [clf.head, enc.store] if cfg.train_encoder else [clf.head]
    return clf, _fit(stores, len(examples), loss_fn, cfg)


# -- linear-chain CRF ---------------------------------------------------------------

def crf_path_score(emissions, transitions, start, stop, path) -> float:
    path = list(path)
    s = start[path[0]] + emissions[0, path[0]] + stop[path[-1]]
    for i in range(1, len(path)):
        s += transitions[path[i - 1], path[i]] + emissions[i, path[i]]
    return float(s)


def _forward_backward(emissions, transitions, start, stop):
    L, T = emissions.shape
    alpha = np.empty((L, T))
    beta = np.empty((L, T))
    alpha[0] = start + emissions[0]
    for i in range(1, L):
        alpha[i] = logsumexp(alpha[i - 1][:, None] + transitions, axis=0) + emissions[i]
    beta[-1] = stop
    for i in range(L - 2, -1, -1):
        beta[i] = logsumexp(transitions + (emissions[i + 1] + beta[i + 1])[None, :], axis=1)
    return alpha, beta, float(logsumexp(alpha[-1] + stop))


def crf_log_partition(emissions, transitions, start, stop) -> float:
    """log of the sum over all tag paths of exp(path score)."""
    return _forward_backward(np.asarray(emissions, dtype=np.float64), transitions, start, stop)[2]


def crf_decode(emissions, transitions, start, stop) -> tuple[list[int], float]:
    """Viterbi best path and its score."""
    emissions = np.asarray(emissions, dtype=np.float64)
    L, T = emissions.shape
    score = start + emissions[0]
    back = np.zeros((L, T), dtype=np.int64)
    for i in range(1, L):
        cand = score[:, None] + transitions
        back[i] = cand.argmax(axis=0)
        score = cand.max(axis=0) + emissions[i]
    score = score + stop
    best = int(score.argmax())
    path = [best]
    for i in range(L - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    return path[::-1], float(score[best])


def crf_nll(emissions: nx.Tensor, transitions: nx.Tensor, start: nx.Tensor, stop: nx.Tensor,
            tags: Sequence[int]) -> nx.Tensor:
    """Negative log-likelihood of ``tags``; gradients come from forward-backward marginals."""
    E, A, s0, s1 = emissions.data, transitions.data, start.data, stop.data
    L, T = E.shape
    if A.shape != (T, T) or s0.shape != (T,) or s1.shape != (T,):
        raise nx.ShapeError("crf_nll", E.shape, A.shape, s0.shape, s1.shape, detail="tag-set mismatch")
    tags = np.asarray(tags, dtype=np.int64)
    if tags.shape != (L,) or tags.min() < 0 or tags.max() >= T:
        raise ValueError(f"tags must be {L} ids in [0, {T})")
    alpha, beta, log_z = _forward_backward(E, A, s0, s1)
    value = log_z - crf_path_score(E, A, s0, s1, tags)

    def backward(g):
        unary = np.exp(alpha + beta - log_z)
        pair = np.zeros((T, T))
        for i in range(1, L):
            pair += np.exp(alpha[i - 1][:, None] + A + (E[i] + beta[i])[None, :] - log_z)
        gE, gA = unary.copy(), pair
        gs0, gs1 = unary[0].copy(), unary[-1].copy()
        gE[np.arange(L), tags] -= 1.0
        np.subtract.at(gA, (tags[:-1], tags[1:]), 1.0)
        gs0[tags[0]] -= 1.0
        gs1[tags[-1]] -= 1.0
        return g * gE, g * gA, g * gs0, g * gs1

    return nx.custom_op(np.array(value), (emissions, transitions, start, stop), backward)


# -- BIO chunks and entity F1 ---------------------------------------------------------

def bio_tag_set(chunk_types: Sequence[str]) -> list[str]:
    return ["O"] + [f"{p}-{t}" for t in chunk_types for p in ("B", "I")]


def bio_chunks(tags: Sequence[str]) -> tuple[set[tuple[str, int, int]], int]:
    """(type, start, end) chunks with end exclusive, and the number of repaired tags.

    An I- tag that does not continue a chunk of the same type opens a new
    chunk, the usual conlleval convention.
    """
    chunks = set()
    fixups = 0
    cur = None
    for i, tag in enumerate(list(tags) + ["O"]):
        if tag == "O":
            prefix, ctype = "O", None
        else:
            prefix, _, ctype = tag.partition("-")
            if prefix not in ("B", "I") or not ctype:
                raise ValueError(f"malformed tag {tag!r}")
        if cur is not None and (prefix != "I" or ctype != cur[0]):
            chunks.add((cur[0], cur[1], i))
            cur = None
        if prefix == "B":
            cur = (ctype, i)
        elif prefix == "I" and cur is None:
            fixups += 1
            cur = (ctype, i)
    return chunks, fixups


def entity_f1(gold: Sequence[set], predicted: Sequence[set]) -> dict:
    """Exact-match precision, recall and F1 over per-sentence chunk sets."""
    if len(gold) != len(predicted):
        raise ValueError("gold and predicted sentence counts differ")
    tp = sum(len(g & p) for g, p in zip(gold, predicted))
    n_gold = sum(len(g) for g in gold)
    n_pred = sum(len(p) for p in predicted)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    if not n_gold and not n_pred:
        precision = recall = f1 = 1.0
    return {"precision": precision, "recall": recall, "f1": f1}


def entity_f1_from_tags(gold_tags: Sequence[Sequence[str]], pred_tags: Sequence[Sequence[str]]) -> dict:
    gold, pred, fixups = [], [], 0
    for g, p in zip(gold_tags, pred_tags, strict=True):
        cg, fg = bio_chunks(g)
        cp, fp = bio_chunks(p)
        gold.append(cg)
        pred.append(cp)
        fixups += fg + fp
    out = entity_f1(gold, pred)
    out["fixups"] = fixups
    return out


class CrfTagger:
    """Token emissions from the encoder context, scored by a linear-chain CRF."""

    def __init__(self, model: GeoLM, tokenizer: WordTokenizer, tags: Sequence[str], seed: int = 0):
        self.model = model
        self.tokenizer = tokenizer
        self.tags = tuple(tags)
        T = len(self.tags)
        rng = np.random.default_rng(seed)
        self.head = nx.ParameterStore()
        self.head.add("emit.w", rng.normal(0.0, model.cfg.init_std, (model.cfg.hidden, T)))
        self.head.add("emit.b", np.zeros(T))
        self.head.add("trans", np.zeros((T, T)))
        self.head.add("start", np.zeros(T))
        self.head.add("stop", np.zeros(T))

    def _ids(self, tokens: Sequence[str]):
        limit = self.model.cfg.max_len - 1
        if len(tokens) > limit:
            raise ValueError(f"sequence of {len(tokens)} tokens exceeds the {limit}-token limit")
        ids = np.array([[self.tokenizer.cls_id] + self.tokenizer.encode(list(tokens))])
        return ids, np.ones_like(ids, dtype=bool)

    def emissions(self, tokens: Sequence[str]) -> nx.Tensor:
        _, ctx = self.model.encode_nodes(*self._ids(tokens))
        return nx.linear(ctx[0], self.head["emit.w"], self.head["emit.b"])

    def loss(self, ex: LabelingExample) -> nx.Tensor:
        index = {t: i for i, t in enumerate(self.tags)}
        try:
            gold = [index[t] for t in ex.tags]
        except KeyError as exc:
            raise ValueError(f"tag {exc.args[0]!r} not in tag set") from None
        return crf_nll(self.emissions(ex.tokens), self.head["trans"], self.head["start"],
                       self.head["stop"], gold)

    def predict(self, tokens: Sequence[str]) -> list[str]:
        with nx.no_grad():
            e = self.emissions(tokens).data
        path, _ = crf_decode(e, self.head["trans"].data, self.head["start"].data, self.head["stop"].data)
        return [self.tags[i] for i in path]

    def evaluate(self, examples: Sequence[LabelingExample]) -> MetricReport:
        res = entity_f1_from_tags([e.tags for e in examples], [self.predict(e.tokens) for e in examples])
        return MetricReport("entity_f1", res["f1"], len(examples),
                            {"precision": res["precision"], "recall": res["recall"],
                             "fixups": res["fixups"]})


def finetune_tagger(model: GeoLM, tokenizer: WordTokenizer, examples: Sequence[LabelingExample],
                    chunk_types: Sequence[str] | None = None,
                    cfg: FinetuneConfig = FinetuneConfig()) -> tuple[CrfTagger, list[float]]:
    if not examples:
        raise ValueError("empty dataset")
    if chunk_types is None:
        chunk_types = sorted({t[2:] for e in examples for t in e.tags if t != "O"})
    enc = clone_model(model) if cfg.train_encoder else model
    tagger = CrfTagger(enc, tokenizer, bio_tag_set(chunk_types), cfg.seed)

    def loss_fn(idx):
        total = None
        for i in idx:
            term = tagger.loss(examples[i])
            total = term if total is None else total + term
        return total * (1.0 / len(idx))

    stores = [tagger.head, enc.store] if cfg.train_encoder else [tagger.head]
    return tagger, _fit(stores, len(examples), loss_fn, cfg)


# -- geocoding ------------------------------------------------------------------------

def haversine_km(a: LatLng, b: LatLng) -> float:
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dp = p2 - p1
    dl = math.radians(b.lng - a.lng)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def acc_at_n_km(predicted: Sequence[LatLng | None], gold: Sequence[LatLng], n_km: float = 3.0) -> float:
    """Fraction of predictions strictly closer than ``n_km`` to their gold point.

    A missing prediction (``None``) counts as a miss.
    """
    if len(predicted) != len(gold):
        raise ValueError("prediction and gold lengths differ")
    if not gold:
        raise ValueError("empty evaluation set")
    return sum(p is not None and haversine_km(p, g) < n_km for p, g in zip(predicted, gold)) / len(gold)


@dataclass(frozen=True)
class GeocodePrediction:
    code: str
    token: str
    level: int
    location: LatLng | None
    fallback: bool

    def as_dict(self) -> dict:
        d = asdict(self)
        if self.location is not None:
            d["location"] = {"lat": self.location.lat, "lng": self.location.lng}
        return d


def code_to_prediction(code: str) -> GeocodePrediction:
    """Decode a predicted code.

    A damaged code falls back to its deepest consistent level (down to the
    face cell).  A code whose face digit is invalid has no location.
    """
    try:
        cell = token_to_cell(decode_2lt3c(code)[-1])
        return GeocodePrediction(code, cell.token(), cell.level(), cell_center(cell), False)
    except (CodeConsistencyError, TokenParseError):
        pass
    try:
        cell, _ = deepest_consistent(code)
    except CodeConsistencyError:
        # no level decodes; the face bits sit in the first penultimate char
        face = int(code[2], 16) >> 1
        if face > 5:
            return GeocodePrediction(code, "", -1, None, True)
        cell = CellId((face << 61) | (1 << 60))
    return GeocodePrediction(code, cell.token(), cell.level(), cell_center(cell), True)


def geocode_logits(model: GeoLM, tokenizer: WordTokenizer, texts: Sequence[str]) -> nx.Tensor:
    """(n, 33, 16) logits for texts read as one-node POI documents."""
    ids, valid, _ = tokenize_nodes(texts, tokenizer, model.cfg.max_len)
    h_cls, h_ctx = model.encode_nodes(ids, valid)
    n = len(texts)
    h_tilde = model.transage(h_cls, np.full(n, int(NodeType.POI)), np.arange(n))
    f_cls, _ = model.fuse(h_tilde, h_ctx, valid)
    return model.geocode_logits(f_cls)


def geocode_predict(model: GeoLM, tokenizer: WordTokenizer, texts: Sequence[str],
                    batch_size: int = 64) -> list[GeocodePrediction]:
    out = []
    with nx.no_grad():
        for k in range(0, len(texts), batch_size):
            z = geocode_logits(model, tokenizer, texts[k:k + batch_size]).data
            out.extend(code_to_prediction(classes_to_geocode(row)) for row in z.argmax(axis=-1))
    return out


def target_code(location: LatLng) -> str:
    return encode_2lt3c(latlng_to_cell(location, CODE_LEVELS))


def finetune_geocoder(model: GeoLM, tokenizer: WordTokenizer, examples: Sequence[GeocodeExample],
                      cfg: FinetuneConfig = FinetuneConfig()) -> tuple[GeoLM, list[float]]:
    """Train the geocoding head (and encoder) on text to location pairs."""
    if not examples:
        raise ValueError("empty dataset")
    tuned = clone_model(model)
    texts = [e.text for e in examples]
    targets = np.stack([geocode_to_classes(target_code(e.location)) for e in examples])

    def loss_fn(idx):
        z = geocode_logits(tuned, tokenizer, [texts[i] for i in idx])
        return nx.cross_entropy(z, targets[idx], reduction="sum") * (1.0 / len(idx))

    return tuned, _fit([tuned.store], len(examples), loss_fn, cfg)


def evaluate_geocoder(model: GeoLM, tokenizer: WordTokenizer, examples: Sequence[GeocodeExample],
                      n_km: float = 3.0) -> MetricReport:
    preds = geocode_predict(model, tokenizer, [e.text for e in examples])
    value = acc_at_n_km([p.location for p in preds], [e.location for e in examples], n_km)
    return MetricReport(f"acc@{n_km:g}km", value, len(examples),
                        {"fallbacks": sum(p.fallback for p in preds)})


# -- retrieval ------------------------------------------------------------------------

def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norm == 0, 1.0, norm)


def rank_by_cosine(query: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Candidate indices by decreasing cosine; ties keep index order."""
    scores = _unit(candidates) @ _unit(query)
    return np.argsort(-scores, kind="stable")


def encode_history(model: GeoLM, tokenizer: WordTokenizer, history: Sequence[str]) -> np.ndarray:
    """Visited POIs as one origin-to-destination chain, read in graph mode.

    The user vector is the mean of the fused [CLS] vectors of the chain.
    """
    if not history:
        raise ValueError("empty history")
    ids, valid, _ = tokenize_nodes(list(history), tokenizer, model.cfg.max_len)
    with nx.no_grad():
        h_cls, h_ctx = model.encode_nodes(ids, valid)
        h_tilde = model.transage(h_cls, np.full(len(history), int(NodeType.POI)))
        f_cls, _ = model.fuse(h_tilde, h_ctx, valid)
    return f_cls.data.mean(axis=0)


def two_tower_recommend(model: GeoLM, tokenizer: WordTokenizer, history: Sequence[str],
                        candidates: Sequence[str], candidate_vectors: np.ndarray | None = None,
                        top_k: int | None = None) -> list[str]:
    if candidate_vectors is None:
        candidate_vectors = embed_texts(model, tokenizer, list(candidates))
    order = rank_by_cosine(encode_history(model, tokenizer, history), candidate_vectors)
    if top_k is not None:
        order = order[:top_k]
    return [candidates[i] for i in order]


def rank_of(gold: str, ranked: Sequence[str]) -> int:
    """1-based position of ``gold``."""
    try:
        return list(ranked).index(gold) + 1
    except ValueError:
        raise KeyError(f"gold item {gold!r} is not among the candidates") from None


def acc_at_k(ranks: Sequence[int], k: int = 50) -> float:
    if not ranks:
        raise ValueError("empty evaluation set")
    return sum(r <= k for r in ranks) / len(ranks)


def evaluate_recommender(model: GeoLM, tokenizer: WordTokenizer, examples: Sequence[RecommendExample],
                         candidates: Sequence[str], k: int = 50) -> MetricReport:
    vecs = embed_texts(model, tokenizer, list(candidates))
    ranks = [rank_of(e.gold, two_tower_recommend(model, tokenizer, e.history, candidates, vecs))
             for e in examples]
    return MetricReport(f"acc@{k}", acc_at_k(ranks, k), len(examples))


# -- analogy ----------------------------------------------------------------------------

def analogy(a: np.ndarray, b: np.ndarray, c: np.ndarray, candidates: np.ndarray,
            top: int = 10) -> list[int]:
    """Indices of the candidates closest in cosine to a - b + c."""
    target = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64) + np.asarray(c, dtype=np.float64)
    return rank_by_cosine(target, candidates)[:top].tolist()


def analogy_texts(model: GeoLM, tokenizer: WordTokenizer, a: str, b: str, c: str,
                  candidates: Sequence[str], top: int = 10) -> list[str]:
    va, vb, vc = embed_texts(model, tokenizer, [a, b, c])
    vecs = embed_texts(model, tokenizer, list(candidates))
    return [candidates[i] for i in analogy(va, vb, vc, vecs, top)]
