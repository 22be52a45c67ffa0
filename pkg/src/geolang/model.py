"""Geography-language encoder: per-node Transformer, type-aware aggregation
across the nodes of a document, a fusion layer and the two pre-training heads.

Shapes used throughout: ``N`` nodes in a batch (all documents stacked),
``L`` padded node length including the leading [CLS], ``d`` hidden size,
``h`` heads.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .dgg import CODE_LENGTH, HEX_ALPHABET
from .geograph import NodeType
from .masker import NO_LABEL, MaskedExample, WordTokenizer

log = logging.getLogger(__name__)

NEG_INF = -1e30
N_NODE_TYPES = len(NodeType)
GEO_CLASSES = len(HEX_ALPHABET)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ffn: int = 0
    max_len: int = 64
    node_types: int = N_NODE_TYPES
    geocode_positions: int = CODE_LENGTH
    geocode_classes: int = GEO_CLASSES
    positional: bool = True
    transage_residual: bool = False
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")
        if self.geocode_positions != CODE_LENGTH or self.geocode_classes != GEO_CLASSES:
            raise ValueError("geocode head is fixed at 33 positions over 16 classes")
        if not self.ffn:
            object.__setattr__(self, "ffn", 4 * self.hidden)

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


BERT_BASE = dict(hidden=768, layers=12, heads=12, ffn=3072, max_len=512)


@dataclass
class Batch:
    ids: np.ndarray            # (N, L) token ids, PAD-filled
    valid: np.ndarray          # (N, L) bool
    node_types: np.ndarray     # (N,)
    doc_index: np.ndarray      # (N,)
    mlm_rows: np.ndarray       # (M,) node index of each labelled position
    mlm_cols: np.ndarray       # (M,) position within the node
    mlm_labels: np.ndarray     # (M,)
    geo_rows: np.ndarray       # (P,) POI nodes with a geocode target
    geo_targets: np.ndarray    # (P, 33)

    @property
    def n_nodes(self):
        return len(self.node_types)


def geocode_to_classes(code: str) -> np.ndarray:
    return np.array([HEX_ALPHABET.index(c) for c in code], dtype=np.int64)


def classes_to_geocode(classes) -> str:
    return "".join(HEX_ALPHABET[int(c)] for c in classes)


def make_batch(examples: Sequence[MaskedExample], pad_id: int) -> Batch:
    nodes = [(k, node) for k, ex in enumerate(examples) for node in ex.nodes]
    if not nodes:
        raise ValueError("empty batch")
    width = max(len(n.token_ids) for _, n in nodes)
    ids = np.full((len(nodes), width), pad_id, dtype=np.int64)
    valid = np.zeros((len(nodes), width), dtype=bool)
    rows, cols, labels, geo_rows, geo_targets = [], [], [], [], []
    for i, (_, node) in enumerate(nodes):
        n = len(node.token_ids)
        ids[i, :n] = node.token_ids
        valid[i, :n] = True
        pos = np.flatnonzero(node.labels != NO_LABEL)
        rows.extend([i] * len(pos))
        cols.extend(pos.tolist())
        labels.extend(node.labels[pos].tolist())
        if node.node_type is NodeType.POI and node.geocode:
            geo_rows.append(i)
            geo_targets.append(geocode_to_classes(node.geocode))
    return Batch(ids, valid,
                 np.array([int(n.node_type) for _, n in nodes], dtype=np.int64),
                 np.array([k for k, _ in nodes], dtype=np.int64),
                 np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                 np.array(labels, dtype=np.int64), np.array(geo_rows, dtype=np.int64),
                 np.array(geo_targets, dtype=np.int64).reshape(-1, CODE_LENGTH))


@dataclass
class Outputs:
    h_cls: nx.Tensor        # (N, d)   per-node encoder [CLS]
    h_context: nx.Tensor    # (N, L-1, d)
    h_tilde: nx.Tensor      # (N, d)   aggregated across the document
    fused_cls: nx.Tensor    # (N, d)
    fused_context: nx.Tensor  # (N, L-1, d)
    attention: dict = field(default_factory=dict)


@dataclass
class LossReport:
    total: nx.Tensor
    mlm: float
    geo: float
    n_masked: int
    n_geo: int
    mlm_empty: bool


class GeoLM:
    """Encoder + aggregation + fusion + heads over a :class:`ParameterStore`."""

    def __init__(self, cfg: ModelConfig, store: nx.ParameterStore | None = None):
        self.cfg = cfg
        self.keep_attention = False
        if store is None:
            store = nx.ParameterStore()
            self._init_params(store, np.random.default_rng(cfg.seed))
        self.store = store

    # -- parameters ---------------------------------------------------------
    def _init_params(self, s, rng):
        c = self.cfg
        d = c.hidden

        def normal(*shape):
            return rng.normal(0.0, c.init_std, size=shape)

        s.add("emb.tok", normal(c.vocab_size, d))
        s.add("emb.pos", normal(c.max_len, d))
        s.add("emb.ln.g", np.ones(d))
        s.add("emb.ln.b", np.zeros(d))
        for i in range(c.layers):
            self._init_block(s, f"enc.{i}", normal)
        # per-type query/key projections; each (d, d) matrix holds all heads side by side
        s.add("sage.q.w", normal(c.node_types, d, d))
        s.add("sage.q.b", np.zeros((c.node_types, d)))
        s.add("sage.k.w", normal(c.node_types, d, d))
        s.add("sage.k.b", np.zeros((c.node_types, d)))
        s.add("sage.o.w", normal(c.heads * d, d))
        if c.transage_residual:
            s.add("sage.ln.g", np.ones(d))
            s.add("sage.ln.b", np.zeros(d))
        self._init_block(s, "fuse", normal)
        s.add("mlm.dense.w", normal(d, d))
        s.add("mlm.dense.b", np.zeros(d))
        s.add("mlm.ln.g", np.ones(d))
        s.add("mlm.ln.b", np.zeros(d))
        s.add("mlm.bias", np.zeros(c.vocab_size))
        s.add("geo.w", normal(d, c.geocode_positions * c.geocode_classes))
        s.add("geo.b", np.zeros(c.geocode_positions * c.geocode_classes))

    def _init_block(self, s, prefix, normal):
        d, f = self.cfg.hidden, self.cfg.ffn
        for name in "qkvo":
            s.add(f"{prefix}.attn.{name}.w", normal(d, d))
            s.add(f"{prefix}.attn.{name}.b", np.zeros(d))
        s.add(f"{prefix}.ln1.g", np.ones(d))
        s.add(f"{prefix}.ln1.b", np.zeros(d))
        s.add(f"{prefix}.ffn.w1", normal(d, f))
        s.add(f"{prefix}.ffn.b1", np.zeros(f))
        s.add(f"{prefix}.ffn.w2", normal(f, d))
        s.add(f"{prefix}.ffn.b2", np.zeros(d))
        s.add(f"{prefix}.ln2.g", np.ones(d))
        s.add(f"{prefix}.ln2.b", np.zeros(d))

    def p(self, name) -> nx.Tensor:
        return self.store[name]

    # -- building blocks ------------------------------------------------------
    def _block(self, prefix, x, key_mask, tag=None):
        """Post-LN Transformer layer over x (N, L, d); key_mask (N, L) bool."""
        n, length, d = x.shape
        h, dh = self.cfg.heads, self.cfg.head_dim
        p = self.p

        def split(t):
            return nx.transpose(nx.reshape(t, (n, length, h, dh)), (0, 2, 1, 3))

        q = split(nx.linear(x, p(f"{prefix}.attn.q.w"), p(f"{prefix}.attn.q.b")))
        k = split(nx.linear(x, p(f"{prefix}.attn.k.w"), p(f"{prefix}.attn.k.b")))
        v = split(nx.linear(x, p(f"{prefix}.attn.v.w"), p(f"{prefix}.attn.v.b")))
        scores = nx.matmul(q, nx.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        mask = np.where(key_mask, 0.0, NEG_INF)[:, None, None, :]
        att = nx.softmax(scores, axis=-1, additive_mask=mask)
        if self.keep_attention and tag:
            self._attention[tag] = att.data
        ctx = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (n, length, d))
        x = nx.layer_norm(x + nx.linear(ctx, p(f"{prefix}.attn.o.w"), p(f"{prefix}.attn.o.b")),
                          p(f"{prefix}.ln1.g"), p(f"{prefix}.ln1.b"))
        ff = nx.linear(nx.gelu(nx.linear(x, p(f"{prefix}.ffn.w1"), p(f"{prefix}.ffn.b1"))),
                       p(f"{prefix}.ffn.w2"), p(f"{prefix}.ffn.b2"))
        return nx.layer_norm(x + ff, p(f"{prefix}.ln2.g"), p(f"{prefix}.ln2.b"))

    def encode_nodes(self, ids: np.ndarray, valid: np.ndarray) -> tuple[nx.Tensor, nx.Tensor]:
        """Per-node encoder: returns (h_cls (N, d), h_context (N, L-1, d))."""
        n, length = ids.shape
        if length > self.cfg.max_len:
            raise ValueError(f"node length {length} exceeds max_len {self.cfg.max_len}")
        x = nx.embedding_lookup(self.p("emb.tok"), ids)
        if self.cfg.positional:
            x = x + self.p("emb.pos")[:length]
        x = nx.layer_norm(x, self.p("emb.ln.g"), self.p("emb.ln.b"))
        for i in range(self.cfg.layers):
            x = self._block(f"enc.{i}", x, valid, tag=f"enc.{i}")
        return x[:, 0, :], x[:, 1:, :]

    def transage(self, H: nx.Tensor, node_types: np.ndarray, doc_index: np.ndarray | None = None) -> nx.Tensor:
        """Type-aware aggregation of stacked [CLS] vectors H (N, d).

        Query and key projections are chosen per row by node type; the value
        matrix is H itself.  Attention is restricted to rows of the same
        document.  Heads are concatenated to (N, h*d) and mapped back to d.
        """
        node_types = np.asarray(node_types, dtype=np.int64)
        n, d = H.shape
        if node_types.shape != (n,):
            raise nx.ShapeError("transage", H.shape, node_types.shape)
        if n and (node_types.min() < 0 or node_types.max() >= self.cfg.node_types):
            raise ValueError(f"unknown node type in {sorted(set(node_types.tolist()))}")
        h, dh = self.cfg.heads, self.cfg.head_dim
        doc_index = np.zeros(n, dtype=np.int64) if doc_index is None else np.asarray(doc_index)
        rows = np.arange(n)

        def project(kind):
            allq = nx.matmul(H, self.p(f"sage.{kind}.w")) + nx.reshape(
                self.p(f"sage.{kind}.b"), (self.cfg.node_types, 1, d))      # (T, N, d)
            picked = allq[node_types, rows]                                  # (N, d)
            return nx.transpose(nx.reshape(picked, (n, h, dh)), (1, 0, 2))   # (h, N, dh)

        q, k = project("q"), project("k")
        scores = nx.matmul(q, nx.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        same_doc = doc_index[:, None] == doc_index[None, :]
        att = nx.softmax(scores, axis=-1, additive_mask=np.where(same_doc, 0.0, NEG_INF)[None])
        if self.keep_attention:
            self._attention["transage"] = att.data
        heads = nx.matmul(att, nx.reshape(H, (1, n, d)))                    # (h, N, d)
        cat = nx.reshape(nx.transpose(heads, (1, 0, 2)), (n, h * d))
        out = nx.matmul(cat, self.p("sage.o.w"))
        if self.cfg.transage_residual:
            out = nx.layer_norm(out + H, self.p("sage.ln.g"), self.p("sage.ln.b"))
        return out

    def fuse(self, h_tilde: nx.Tensor, h_context: nx.Tensor, valid: np.ndarray):
        """Put the aggregated vector in the [CLS] slot and run one more layer."""
        n, d = h_tilde.shape
        x = nx.concat([nx.reshape(h_tilde, (n, 1, d)), h_context], axis=1)
        out = self._block("fuse", x, valid, tag="fuse")
        return out[:, 0, :], out[:, 1:, :]

    def forward(self, batch: Batch) -> Outputs:
        self._attention = {}
        h_cls, h_ctx = self.encode_nodes(batch.ids, batch.valid)
        h_tilde = self.transage(h_cls, batch.node_types, batch.doc_index)
        f_cls, f_ctx = self.fuse(h_tilde, h_ctx, batch.valid)
        return Outputs(h_cls, h_ctx, h_tilde, f_cls, f_ctx, self._attention)

    # -- heads ------------------------------------------------------------------
    def mlm_logits(self, context: nx.Tensor, rows, cols) -> nx.Tensor:
        """Vocabulary logits at (row, col) of the full node sequence (col 0 is [CLS])."""
        x = context[np.asarray(rows), np.asarray(cols) - 1]
        x = nx.gelu(nx.linear(x, self.p("mlm.dense.w"), self.p("mlm.dense.b")))
        x = nx.layer_norm(x, self.p("mlm.ln.g"), self.p("mlm.ln.b"))
        return nx.matmul(x, nx.transpose(self.p("emb.tok"))) + self.p("mlm.bias")

    def mlm_loss(self, context, rows, cols, labels):
        """Mean cross-entropy over labelled positions; (zero, True) when there are none."""
        if len(labels) == 0:
            return nx.Tensor(0.0), True
        return nx.cross_entropy(self.mlm_logits(context, rows, cols), labels), False

    def geocode_logits(self, cls_vecs: nx.Tensor) -> nx.Tensor:
        """(P, 33, 16) logits: 33 independent 16-way classifiers."""
        z = nx.linear(cls_vecs, self.p("geo.w"), self.p("geo.b"))
        return nx.reshape(z, (cls_vecs.shape[0], CODE_LENGTH, GEO_CLASSES))

    def geocode_loss(self, cls_vecs, targets):
        """Sum of the 33 per-character cross-entropies, averaged over nodes."""
        targets = np.asarray(targets)
        if targets.shape[1:] != (CODE_LENGTH,):
            raise ValueError("geocode targets must be 33 class ids per node")
        if len(targets) == 0:
            return nx.Tensor(0.0)
        return nx.cross_entropy(self.geocode_logits(cls_vecs), targets, reduction="sum") * (1.0 / len(targets))

    def loss(self, batch: Batch, mlm_weight=1.0, geo_weight=1.0) -> LossReport:
        out = self.forward(batch)
        mlm, empty = self.mlm_loss(out.fused_context, batch.mlm_rows, batch.mlm_cols, batch.mlm_labels)
        total = mlm * mlm_weight
        geo_val = 0.0
        if geo_weight and len(batch.geo_rows):
            geo = self.geocode_loss(out.fused_cls[batch.geo_rows], batch.geo_targets)
            geo_val = geo.item()
            total = total + geo * geo_weight
        return LossReport(total, mlm.item(), geo_val, len(batch.mlm_labels), len(batch.geo_rows), empty)

    # -- inference ----------------------------------------------------------------
    def predict_geocodes(self, batch: Batch) -> list[str]:
        """Argmax geocode for every node of the batch (graph mode)."""
        with nx.no_grad():
            out = self.forward(batch)
            logits = self.geocode_logits(out.fused_cls).data
        return [classes_to_geocode(row) for row in logits.argmax(axis=-1)]

    # -- persistence --------------------------------------------------------------
    def save(self, path, meta: dict | None = None) -> None:
        info = {"model_config": asdict(self.cfg), "step": self.store.step}
        info.update(meta or {})
        nx.save_tensors(path, self.store.state_arrays(), info)

    @classmethod
    def load(cls, path) -> tuple["GeoLM", dict]:
        arrays, meta = nx.load_tensors(path)
        model = cls(ModelConfig.from_dict(meta["model_config"]))
        model.store.load_arrays(arrays, step=int(meta.get("step", 0)))
        return model, meta


# -- single-node helpers ------------------------------------------------------

def tokenize_nodes(texts: Sequence[str], tokenizer: WordTokenizer, max_len: int):
    """Token id matrix for independent texts, each as its own [CLS]-prefixed node."""
    seqs, truncated = [], []
    for text in texts:
        toks = tokenizer.tokenize(text)
        truncated.append(len(toks) > max_len - 1)
        seqs.append([tokenizer.cls_id] + tokenizer.encode(toks[:max_len - 1]))
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), tokenizer.pad_id, dtype=np.int64)
    valid = np.zeros_like(ids, dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        valid[i, :len(s)] = True
    return ids, valid, truncated


def embed_texts(model: GeoLM, tokenizer: WordTokenizer, texts: Sequence[str], batch_size: int = 64,
                graph_mode: bool = False, node_type: NodeType = NodeType.POI) -> np.ndarray:
    """[CLS] embeddings of independent texts.

    By default the plain encoder vector is returned.  With ``graph_mode``
    each text is treated as a one-node document and the fused vector after
    aggregation is returned instead.
    """
    out = []
    with nx.no_grad():
        for k in range(0, len(texts), batch_size):
            ids, valid, _ = tokenize_nodes(texts[k:k + batch_size], tokenizer, model.cfg.max_len)
            h_cls, h_ctx = model.encode_nodes(ids, valid)
            if graph_mode:
                n = len(ids)
                h_tilde = model.transage(h_cls, np.full(n, int(node_type)), np.arange(n))
                h_cls, _ = model.fuse(h_tilde, h_ctx, valid)
            out.append(h_cls.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.cfg.hidden))


def embed_document(model: GeoLM, tokenizer: WordTokenizer, texts: Sequence[str],
                   node_types: Sequence[NodeType]) -> np.ndarray:
    """Fused [CLS] vector of every node of one document (graph mode)."""
    ids, valid, _ = tokenize_nodes(texts, tokenizer, model.cfg.max_len)
    with nx.no_grad():
        h_cls, h_ctx = model.encode_nodes(ids, valid)
        h_tilde = model.transage(h_cls, np.array([int(t) for t in node_types]))
        f_cls, _ = model.fuse(h_tilde, h_ctx, valid)
    return f_cls.data


def cosine(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# -- pre-training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 5e-5
    warmup: int = 0
    mlm_weight: float = 1.0
    geo_weight: float = 1.0
    clip_norm: float = 1.0
    checkpoint_every: int = 0
    log_every: int = 50
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainResult:
    history: list[dict]
    checkpoints: list[str]
    seconds: float

    @property
    def final_loss(self):
        return self.history[-1]["total"] if self.history else None


def batch_indices(n_examples: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Examples used at ``step``: a fresh permutation per epoch keyed by (seed, epoch)."""
    per_epoch = max(1, math.ceil(n_examples / batch_size))
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n_examples)
    return perm[k * batch_size:(k + 1) * batch_size]


class TrainingAborted(RuntimeError):
    def __init__(self, msg, last_checkpoint=None):
        super().__init__(msg)
        self.last_checkpoint = last_checkpoint


def clip_gradients(store: nx.ParameterStore, max_norm: float) -> float:
    total = math.sqrt(sum(float((t.grad ** 2).sum()) for _, t in store if t.grad is not None))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, t in store:
            if t.grad is not None:
                t.grad = t.grad * scale
    return total


def pretrain(model: GeoLM, examples: Sequence[MaskedExample], tcfg: TrainConfig, pad_id: int,
             checkpoint_dir=None, meta: dict | None = None, callback=None) -> TrainResult:
    """Adam on MLM + geocoding loss with a linearly decaying learning rate.

    Resumes from ``model.store.step``; the batch for each step depends only on
    (seed, step), so a resumed run continues the same trace.
    """
    if not examples:
        raise ValueError("no training examples")
    history, checkpoints = [], []
    last_good = None
    t0 = time.perf_counter()
    store = model.store
    if checkpoint_dir and tcfg.checkpoint_every:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    while store.step < tcfg.steps:
        step = store.step
        idx = batch_indices(len(examples), tcfg.batch_size, step, tcfg.seed)
        batch = make_batch([examples[i] for i in idx], pad_id)
        store.zero_grad()
        rep = model.loss(batch, tcfg.mlm_weight, tcfg.geo_weight)
        total = rep.total.item()
        if not math.isfinite(total):
            raise TrainingAborted(f"non-finite loss at step {step}", last_good)
        rep.total.backward()
        gnorm = clip_gradients(store, tcfg.clip_norm)
        lr = nx.linear_schedule(step, tcfg.steps, tcfg.lr, tcfg.warmup)
        try:
            nx.adam_step(store, lr=lr)
        except nx.NonFiniteError as exc:
            raise TrainingAborted(str(exc), last_good) from exc
        rec = {"step": store.step, "total": total, "mlm": rep.mlm, "geo": rep.geo,
               "lr": lr, "grad_norm": gnorm}
        history.append(rec)
        if callback:
            callback(rec)
        if tcfg.log_every and store.step % tcfg.log_every == 0:
            log.info("step %d loss %.4f (mlm %.4f geo %.4f)", store.step, total, rep.mlm, rep.geo)
        if checkpoint_dir and tcfg.checkpoint_every and store.step % tcfg.checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"step{store.step:06d}.ckpt"
            model.save(path, {"train_config": asdict(tcfg), **(meta or {})})
            checkpoints.append(str(path))
            last_good = str(path)
    return TrainResult(history, checkpoints, time.perf_counter() - t0)


def evaluate(model: GeoLM, examples: Sequence[MaskedExample], pad_id: int, batch_size: int = 16,
             mlm_weight=1.0, geo_weight=1.0) -> dict:
    """Loss over a whole example set: MLM averaged over all labelled tokens,
    geocoding averaged over all POI nodes."""
    mlm_sum = geo_sum = 0.0
    n_mlm = n_geo = 0
    with nx.no_grad():
        for k in range(0, len(examples), batch_size):
            batch = make_batch(examples[k:k + batch_size], pad_id)
            out = model.forward(batch)
            if len(batch.mlm_labels):
                mlm, _ = model.mlm_loss(out.fused_context, batch.mlm_rows, batch.mlm_cols, batch.mlm_labels)
                mlm_sum += mlm.item() * len(batch.mlm_labels)
                n_mlm += len(batch.mlm_labels)
            if len(batch.geo_rows):
                geo = model.geocode_loss(out.fused_cls[batch.geo_rows], batch.geo_targets)
                geo_sum += geo.item() * len(batch.geo_rows)
                n_geo += len(batch.geo_rows)
    mlm = mlm_sum / n_mlm if n_mlm else 0.0
    geo = geo_sum / n_geo if n_geo else 0.0
    return {"total": mlm_weight * mlm + geo_weight * geo, "mlm": mlm, "geo": geo,
            "n_masked": n_mlm, "n_geo": n_geo}
