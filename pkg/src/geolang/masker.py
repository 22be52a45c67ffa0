"""Whole-entity masking of walk documents for masked language modeling.

Every entity segment of every node is selected with probability 0.15.  Each
word of a selected entity is then replaced by ``[MASK]`` (70%), by a
misspelling mined from click logs (10%, falling back to a random word when
none is known), by a random word (10%), or kept (10%).  The label of every
selected word is its original token.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
import struct
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .geograph import SEP, NodeType
from .sampler import DocNode

CLS, MASK, UNK, PAD = "[CLS]", "[MASK]", "[UNK]", "[PAD]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
NO_LABEL = -1

_TOKEN_RE = re.compile(r"\[(?:CLS|SEP|MASK|UNK|PAD)\]|\w+(?:[.'\-#&]\w+)*|[^\w\s]")


class Action(enum.IntEnum):
    NONE = 0
    MASK = 1
    MISSPELL = 2
    RANDOM = 3
    KEEP = 4


class Tokenizer(Protocol):
    vocab: dict[str, int]

    def tokenize(self, text: str) -> list[str]: ...

    def encode(self, tokens: Sequence[str]) -> list[int]: ...


class WordTokenizer:
    """Whitespace-and-punctuation word tokenizer over a fixed vocabulary.

    Intra-word punctuation ("No.1", "O'Hare") stays inside the word.
    """

    def __init__(self, vocab: dict[str, int]):
        for tok in SPECIALS:
            if tok not in vocab:
                raise ValueError(f"vocabulary lacks special token {tok}")
        self.vocab = dict(vocab)
        self.inverse = {i: t for t, i in self.vocab.items()}
        self.special_ids = frozenset(self.vocab[t] for t in SPECIALS)
        self.word_ids = np.array(sorted(i for i in self.inverse if i not in self.special_ids),
                                 dtype=np.int64)

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return _TOKEN_RE.findall(text)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self.vocab[UNK]
        return [self.vocab.get(t, unk) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.inverse.get(int(i), UNK) for i in ids]

    def __len__(self):
        return len(self.vocab)

    @property
    def pad_id(self):
        return self.vocab[PAD]

    @property
    def cls_id(self):
        return self.vocab[CLS]

    @property
    def sep_id(self):
        return self.vocab[SEP]

    @property
    def mask_id(self):
        return self.vocab[MASK]

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1, extra: Iterable[str] = ()) -> "WordTokenizer":
        counts = Counter()
        for text in texts:
            counts.update(cls.tokenize(text))
        counts.update(extra)
        words = sorted((w for w, c in counts.items() if c >= min_count and w not in SPECIALS),
                       key=lambda w: (-counts[w], w))
        return cls({t: i for i, t in enumerate(list(SPECIALS) + words)})

    def fingerprint(self) -> str:
        blob = json.dumps(sorted(self.vocab.items(), key=lambda kv: kv[1]), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        tokens = [self.inverse[i] for i in range(len(self.inverse))]
        Path(path).write_text("\n".join(tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "WordTokenizer":
        tokens = Path(path).read_text(encoding="utf-8").rstrip("\n").split("\n")
        return cls({t: i for i, t in enumerate(tokens)})


class Segmenter:
    """Greedy longest-match entity segmenter over token sequences."""

    def __init__(self, entities: Iterable[str] = ()):
        self.entries: set[tuple[str, ...]] = set()
        for ent in entities:
            toks = tuple(WordTokenizer.tokenize(ent))
            if toks and SEP not in toks:
                self.entries.add(toks)
        self.max_len = max((len(e) for e in self.entries), default=1)

    def segment(self, tokens: Sequence[str]) -> list[tuple[int, int]]:
        """Half-open (start, end) spans covering ``tokens``; [SEP] gets its own span."""
        spans = []
        i = 0
        n = len(tokens)
        while i < n:
            width = 1
            for w in range(min(self.max_len, n - i), 1, -1):
                if tuple(tokens[i:i + w]) in self.entries:
                    width = w
                    break
            spans.append((i, i + width))
            i += width
        return spans

    def segment_text(self, text: str) -> list[str]:
        toks = WordTokenizer.tokenize(text)
        return [" ".join(toks[a:b]) for a, b in self.segment(toks)]


def default_segmenter(pois: Iterable[tuple[str, str, str]]) -> Segmenter:
    """Dictionary from POI names, comma-separated address parts and POI types."""
    entities = []
    for name, address, poi_type in pois:
        entities.append(name)
        entities.extend(part.strip() for part in address.split(","))
        entities.append(poi_type)
    return Segmenter(e for e in entities if e)


def segmenter_from_poi_texts(texts: Iterable[str]) -> Segmenter:
    triples = []
    for text in texts:
        parts = [p.strip() for p in text.split(SEP)] + ["", ""]
        triples.append((parts[0], parts[1], parts[2]))
    return default_segmenter(triples)


# -- misspellings -----------------------------------------------------------

def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass
class MisspellLexicon:
    entries: dict[str, Counter] = field(default_factory=lambda: defaultdict(Counter))

    def add(self, correct: str, wrong: str, count: int = 1) -> None:
        if wrong == correct:
            return
        self.entries[correct][wrong] += count

    def get(self, word: str) -> list[tuple[str, int]]:
        return sorted(self.entries.get(word, {}).items(), key=lambda kv: (-kv[1], kv[0]))

    def __contains__(self, word):
        return bool(self.entries.get(word))

    def __len__(self):
        return sum(1 for v in self.entries.values() if v)

    def to_json(self) -> dict:
        return {k: dict(sorted(v.items())) for k, v in sorted(self.entries.items()) if v}

    @classmethod
    def from_json(cls, data: dict) -> "MisspellLexicon":
        lex = cls()
        for correct, wrongs in data.items():
            for wrong, c in wrongs.items():
                lex.add(correct, wrong, int(c))
        return lex


def build_misspell_lexicon(pairs: Iterable[tuple[str, str]], threshold: float = 0.5) -> MisspellLexicon:
    """Mine misspellings from (query, clicked POI name) pairs.

    A query word that does not occur in the name is attached to the closest
    name word by Levenshtein distance normalized by the longer length, if
    that distance is at most ``threshold``.  Comparison ignores case.
    """
    lex = MisspellLexicon()
    for query, name in pairs:
        name_words = [w for w in WordTokenizer.tokenize(name) if w[0].isalnum()]
        lowered = {w.lower() for w in name_words}
        for qw in WordTokenizer.tokenize(query):
            if not qw[0].isalnum() or qw.lower() in lowered:
                continue
            best = None
            for nw in name_words:
                d = levenshtein(qw.lower(), nw.lower()) / max(len(qw), len(nw))
                if best is None or (d, nw) < best:
                    best = (d, nw)
            if best is not None and best[0] <= threshold:
                lex.add(best[1], qw)
    return lex


# -- masking ----------------------------------------------------------------

@dataclass(frozen=True)
class MaskingConfig:
    select_prob: float = 0.15
    mask_prob: float = 0.70
    misspell_prob: float = 0.10
    random_prob: float = 0.10
    keep_prob: float = 0.10
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        total = self.mask_prob + self.misspell_prob + self.random_prob + self.keep_prob
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"action probabilities must sum to 1, got {total}")


@dataclass
class MaskedNode:
    node_type: NodeType
    token_ids: np.ndarray
    actions: np.ndarray
    labels: np.ndarray
    geocode: str | None = None
    truncated: bool = False
    n_entities: int = 0

    @property
    def mask_positions(self) -> np.ndarray:
        return np.flatnonzero(self.labels != NO_LABEL)


@dataclass
class MaskedExample:
    nodes: list[MaskedNode]

    def __len__(self):
        return len(self.nodes)


def mask_document(doc: Sequence[DocNode], tokenizer: WordTokenizer, segmenter: Segmenter,
                  lexicon: MisspellLexicon | None, rng: np.random.Generator,
                  cfg: MaskingConfig = MaskingConfig()) -> MaskedExample:
    lexicon = lexicon or MisspellLexicon()
    cum = np.cumsum([cfg.mask_prob, cfg.misspell_prob, cfg.random_prob, cfg.keep_prob])
    nodes = []
    for dn in doc:
        tokens = tokenizer.tokenize(dn.text)
        truncated = len(tokens) > cfg.max_len - 1
        tokens = tokens[:cfg.max_len - 1]
        ids = np.array([tokenizer.cls_id] + tokenizer.encode(tokens), dtype=np.int64)
        actions = np.zeros(len(ids), dtype=np.int8)
        labels = np.full(len(ids), NO_LABEL, dtype=np.int64)
        spans = [(a, b) for a, b in segmenter.segment(tokens) if tokens[a] != SEP]
        for a, b in spans:
            if rng.random() >= cfg.select_prob:
                continue
            for k in range(a, b):
                pos = k + 1
                labels[pos] = ids[pos]
                act = Action(int(np.searchsorted(cum, rng.random(), side="right")) + 1)
                if act is Action.MISSPELL:
                    options = lexicon.get(tokens[k])
                    if options:
                        weights = np.array([c for _, c in options], dtype=np.float64)
                        pick = int(rng.choice(len(options), p=weights / weights.sum()))
                        ids[pos] = tokenizer.encode([options[pick][0]])[0]
                    else:
                        act = Action.RANDOM
                if act is Action.MASK:
                    ids[pos] = tokenizer.mask_id
                elif act is Action.RANDOM:
                    ids[pos] = tokenizer.word_ids[rng.integers(len(tokenizer.word_ids))]
                actions[pos] = act
        geocode = dn.geocode if dn.node_type is NodeType.POI else None
        nodes.append(MaskedNode(dn.node_type, ids, actions, labels, geocode, truncated, len(spans)))
    return MaskedExample(nodes)


def mask_corpus(docs: Sequence[Sequence[DocNode]], tokenizer: WordTokenizer, segmenter: Segmenter,
                lexicon: MisspellLexicon | None, cfg: MaskingConfig = MaskingConfig()) -> list[MaskedExample]:
    """Mask every document with an RNG stream keyed by (seed, document index)."""
    return [mask_document(doc, tokenizer, segmenter, lexicon,
                          np.random.default_rng([cfg.seed, k]), cfg)
            for k, doc in enumerate(docs)]


def unmasked_example(doc: Sequence[DocNode], tokenizer: WordTokenizer, max_len: int = 64) -> MaskedExample:
    nodes = []
    for dn in doc:
        tokens = tokenizer.tokenize(dn.text)
        ids = np.array([tokenizer.cls_id] + tokenizer.encode(tokens[:max_len - 1]), dtype=np.int64)
        nodes.append(MaskedNode(dn.node_type, ids, np.zeros(len(ids), dtype=np.int8),
                                np.full(len(ids), NO_LABEL, dtype=np.int64),
                                dn.geocode if dn.node_type is NodeType.POI else None,
                                len(tokens) > max_len - 1))
    return MaskedExample(nodes)


# -- masked-example file ----------------------------------------------------
# magic | u32 version | u64 count | records.  A record is u16 node count, then
# per node: u8 type, u16 length, i64 token ids, u8 actions, i64 labels,
# u8 has_geocode and the 33 geocode bytes when present.

MASKED_MAGIC = b"GMX1"


def save_masked(examples: Sequence[MaskedExample], path, tokenizer: WordTokenizer,
                cfg: MaskingConfig, extra: dict | None = None) -> None:
    out = bytearray(MASKED_MAGIC + struct.pack("<IQ", 1, len(examples)))
    for ex in examples:
        out += struct.pack("<H", len(ex.nodes))
        for node in ex.nodes:
            out += struct.pack("<BH", int(node.node_type), len(node.token_ids))
            out += node.token_ids.astype("<i8").tobytes()
            out += node.actions.astype("u1").tobytes()
            out += node.labels.astype("<i8").tobytes()
            if node.geocode:
                out += b"\x01" + node.geocode.encode("ascii")
            else:
                out += b"\x00"
    Path(path).write_bytes(bytes(out))
    sidecar = {"vocab_sha256": tokenizer.fingerprint(), "vocab_size": len(tokenizer),
               "examples": len(examples), "config": asdict(cfg)}
    sidecar.update(extra or {})
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")


def load_masked(path) -> list[MaskedExample]:
    blob = Path(path).read_bytes()
    if blob[:4] != MASKED_MAGIC:
        raise ValueError(f"{path} is not a masked-example file")
    _, count = struct.unpack_from("<IQ", blob, 4)
    p = 16
    examples = []
    for _ in range(count):
        (n_nodes,) = struct.unpack_from("<H", blob, p)
        p += 2
        nodes = []
        for _ in range(n_nodes):
            ntype, length = struct.unpack_from("<BH", blob, p)
            p += 3
            ids = np.frombuffer(blob, "<i8", length, p).astype(np.int64)
            p += 8 * length
            actions = np.frombuffer(blob, "u1", length, p).astype(np.int8)
            p += length
            labels = np.frombuffer(blob, "<i8", length, p).astype(np.int64)
            p += 8 * length
            geocode = None
            if blob[p]:
                geocode = blob[p + 1:p + 34].decode("ascii")
                p += 34
            else:
                p += 1
            nodes.append(MaskedNode(NodeType(ntype), ids, actions, labels, geocode))
        examples.append(MaskedExample(nodes))
    return examples
