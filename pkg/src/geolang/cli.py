"""Command-line pipeline: graph, corpus, masking, pre-training, tasks.

Every subcommand accepts ``--config FILE`` (flat ``section.key = value``
lines), ``--seed`` and repeated ``--set section.key=value``; explicit
flags win over ``--set``, which wins over the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import dgg, geograph as gg, masker as mk, model as md, numerics as nx, sampler as sm, tasks as tk

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GraphConfig:
    edge_types: str = "qcp,otd,pcp"
    top_k_queries: int = 4
    colocation_level: int = 15
    max_cell_pois: int = 256

    def edge_type_set(self) -> tuple[gg.EdgeType, ...]:
        names = [n.strip() for n in self.edge_types.split(",") if n.strip() and n.strip().lower() != "none"]
        kinds = set()
        for name in names:
            try:
                kinds.add(gg.EdgeType.parse(name))
            except KeyError:
                raise ConfigError(f"unknown edge type {name!r}; expected qcp, otd, pcp or none") from None
        return tuple(sorted(kinds))


SECTIONS = {
    "graph": GraphConfig,
    "walk": sm.WalkConfig,
    "mask": mk.MaskingConfig,
    "model": md.ModelConfig,
    "train": md.TrainConfig,
    "finetune": tk.FinetuneConfig,
}


def _coerce(kind: str, raw: str):
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


class PipelineConfig:
    """Sectioned settings with one global seed; serializes to the flat text form."""

    def __init__(self):
        self.seed = 0
        self.values: dict[str, dict] = {name: {} for name in SECTIONS}

    def set(self, key: str, raw: str) -> None:
        key = key.strip()
        if key == "seed":
            self.seed = int(raw)
            return
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section in {key!r}")
        kinds = {f.name: f.type if isinstance(f.type, str) else f.type.__name__
                 for f in fields(SECTIONS[section]) if f.name != "seed"}
        if name not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            self.values[section][name] = _coerce(kinds[name], raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def update_text(self, text: str, origin: str = "<config>") -> None:
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{origin}:{lineno}: expected key = value")
            self.set(key, value.strip())

    def section(self, name: str, **extra):
        cls = SECTIONS[name]
        kwargs = dict(self.values[name], **extra)
        if any(f.name == "seed" for f in fields(cls)):
            kwargs["seed"] = self.seed
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from None

    def to_dict(self) -> dict:
        return {"seed": self.seed, **{k: dict(sorted(v.items())) for k, v in self.values.items() if v}}

    def to_text(self) -> str:
        lines = [f"seed = {self.seed}"]
        for section, vals in self.values.items():
            lines += [f"{section}.{k} = {v}" for k, v in sorted(vals.items())]
        return "\n".join(lines) + "\n"


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


# -- shared vocabulary helpers ----------------------------------------------------

def _poi_name(node: gg.Node) -> str:
    return node.text.split(" [SEP] ")[0]


def query_poi_pairs(graph: gg.HeteroGraph) -> list[tuple[str, str]]:
    pairs = []
    for node in graph.nodes:
        if node.node_type is gg.NodeType.QUERY:
            for poi in graph.neighbors(node.node_id, gg.EdgeType.QCP):
                pairs.append((node.text, _poi_name(graph.nodes[int(poi)])))
    return pairs


def build_text_resources(graph: gg.HeteroGraph):
    lexicon = mk.build_misspell_lexicon(query_poi_pairs(graph))
    extra = [w for words in lexicon.entries.values() for w in words]
    tokenizer = mk.WordTokenizer.build([n.text for n in graph.nodes], extra=extra)
    segmenter = mk.segmenter_from_poi_texts([n.text for n in graph.nodes if n.node_type is gg.NodeType.POI])
    return tokenizer, segmenter, lexicon


# -- subcommands ------------------------------------------------------------------

def cmd_build_graph(args, cfg: PipelineConfig):
    gcfg = cfg.section("graph")
    builder = gg.GraphBuilder.from_files(
        _require(args.pois, "POI file"),
        _require(args.clicks, "click file") if args.clicks else None,
        _require(args.sessions, "session file") if args.sessions else None,
        edge_types=gcfg.edge_type_set(), top_k_queries=gcfg.top_k_queries,
        colocation_level=gcfg.colocation_level, max_cell_pois=gcfg.max_cell_pois, seed=cfg.seed)
    graph = builder.freeze()
    gg.write_snapshot(graph, args.out)
    report = _graph_report(graph)
    report["ingest"] = dict(sorted(builder.stats.items()))
    _write_json(str(args.out) + ".json", {"config": cfg.to_dict(), **report})
    print(json.dumps(report, sort_keys=True))


def _graph_report(graph: gg.HeteroGraph) -> dict:
    return {"nodes": dict(graph.node_counts()),
            "edges": dict(graph.edge_counts())}


def cmd_inspect_snapshot(args, cfg):
    graph = gg.read_snapshot(_require(args.graph, "snapshot"))
    print(json.dumps(_graph_report(graph), sort_keys=True))


def cmd_sample_corpus(args, cfg):
    graph = gg.read_snapshot(_require(args.graph, "snapshot"))
    wcfg = cfg.section("walk")
    stats = sm.write_corpus(graph, wcfg, args.out, workers=args.workers)
    info = {"config": cfg.to_dict(), "documents": stats.documents, "total_nodes": stats.total_nodes,
            "mean_length": stats.mean_length}
    _write_json(str(args.out) + ".json", info)
    print(json.dumps({k: v for k, v in info.items() if k != "config"}, sort_keys=True))


def cmd_mask_corpus(args, cfg):
    graph = gg.read_snapshot(_require(args.graph, "snapshot"))
    docs = sm.read_corpus(_require(args.corpus, "corpus"))
    tokenizer, segmenter, lexicon = build_text_resources(graph)
    mcfg = cfg.section("mask")
    examples = mk.mask_corpus(docs, tokenizer, segmenter, lexicon, mcfg)
    vocab = Path(args.vocab or str(args.out) + ".vocab.txt")
    tokenizer.save(vocab)
    _write_json(str(args.out) + ".lexicon.json", lexicon.to_json())
    mk.save_masked(examples, args.out, tokenizer, mcfg, {"pipeline": cfg.to_dict()})
    n_masked = sum(int((n.labels != mk.NO_LABEL).sum()) for e in examples for n in e.nodes)
    print(json.dumps({"examples": len(examples), "vocab_size": len(tokenizer),
                      "labelled_tokens": n_masked}, sort_keys=True))


def _load_vocab(args) -> mk.WordTokenizer:
    return mk.WordTokenizer.load(_require(args.vocab, "vocabulary"))


def cmd_pretrain(args, cfg):
    examples = mk.load_masked(_require(args.masked, "masked corpus"))
    tokenizer = _load_vocab(args)
    mcfg = cfg.section("model", vocab_size=len(tokenizer))
    tcfg = cfg.section("train")
    if args.resume:
        model, _ = md.GeoLM.load(_require(args.resume, "checkpoint"))
    else:
        model = md.GeoLM(mcfg)
    terms = ["mlm"] + (["geocode"] if tcfg.geo_weight else [])
    meta = {"pipeline": cfg.to_dict(), "train_config": asdict(tcfg), "loss_terms": terms,
            "vocab_sha256": tokenizer.fingerprint()}
    result = md.pretrain(model, examples, tcfg, tokenizer.pad_id, args.checkpoint_dir, meta)
    model.save(args.out, meta)
    curve = {"loss_terms": terms, "history": result.history}
    _write_json(str(args.out) + ".losses.json", curve)
    print(json.dumps({"steps": model.store.step, "final_loss": result.final_loss,
                      "checkpoints": result.checkpoints}, sort_keys=True))


FINETUNE_TASKS = ("classify", "match", "label", "geocode")
EVAL_TASKS = ("classify", "match", "label", "geocode", "recommend")


def _save_finetuned(path, model: md.GeoLM, head: nx.ParameterStore | None, meta: dict):
    arrays = model.store.state_arrays()
    arrays = type(arrays)((k, v) for k, v in arrays.items() if k.startswith("param/"))
    if head is not None:
        for k, t in head:
            arrays[f"head/{k}"] = t.data
    nx.save_tensors(path, arrays, {"model_config": asdict(model.cfg), **meta})


def _load_finetuned(path):
    arrays, meta = nx.load_tensors(_require(path, "checkpoint"))
    model = md.GeoLM(md.ModelConfig.from_dict(meta["model_config"]))
    model.store.load_arrays(arrays)
    head = {k[5:]: v for k, v in arrays.items() if k.startswith("head/")}
    return model, head, meta


def cmd_finetune(args, cfg):
    model, _ = md.GeoLM.load(_require(args.checkpoint, "checkpoint"))
    tokenizer = _load_vocab(args)
    examples = tk.load_task_jsonl(_require(args.train, "training data"), args.task)
    fcfg = cfg.section("finetune")
    meta = {"task": args.task, "pipeline": cfg.to_dict(), "finetune_config": asdict(fcfg)}
    if args.task in ("classify", "match"):
        clf, hist = tk.finetune_classifier(model, tokenizer, examples, cfg=fcfg)
        meta["classes"] = list(clf.classes)
        _save_finetuned(args.out, clf.model, clf.head, meta)
    elif args.task == "label":
        tagger, hist = tk.finetune_tagger(model, tokenizer, examples, cfg=fcfg)
        meta["tags"] = list(tagger.tags)
        _save_finetuned(args.out, tagger.model, tagger.head, meta)
    else:
        tuned, hist = tk.finetune_geocoder(model, tokenizer, examples, fcfg)
        _save_finetuned(args.out, tuned, None, meta)
    print(json.dumps({"task": args.task, "examples": len(examples), "steps": len(hist),
                      "final_loss": hist[-1]}, sort_keys=True))


def _restore_head(store: nx.ParameterStore, arrays: dict):
    for k, t in store:
        t.data = np.array(arrays[k], dtype=np.float64)


def cmd_eval(args, cfg):
    tokenizer = _load_vocab(args)
    examples = tk.load_task_jsonl(_require(args.data, "evaluation data"), args.task)
    if not examples:
        raise ValueError("empty evaluation set")
    if args.task == "recommend":
        model, _ = md.GeoLM.load(_require(args.checkpoint, "checkpoint"))
        candidates = _read_lines(_require(args.candidates, "candidate file"))
        report = tk.evaluate_recommender(model, tokenizer, examples, candidates, args.k)
    else:
        model, head, meta = _load_finetuned(args.checkpoint)
        if meta.get("task", args.task) != args.task and {meta.get("task"), args.task} != {"classify", "match"}:
            raise ValueError(f"checkpoint was fine-tuned for {meta.get('task')!r}, not {args.task!r}")
        if args.task in ("classify", "match"):
            clf = tk.TextClassifier(model, tokenizer, meta["classes"])
            _restore_head(clf.head, head)
            report = clf.evaluate(examples)
        elif args.task == "label":
            tagger = tk.CrfTagger(model, tokenizer, meta["tags"])
            _restore_head(tagger.head, head)
            report = tagger.evaluate(examples)
        else:
            report = tk.evaluate_geocoder(model, tokenizer, examples, args.km)
    print(report.to_json())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")


def _read_lines(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def _model_for_inference(path) -> md.GeoLM:
    arrays, meta = nx.load_tensors(_require(path, "checkpoint"))
    model = md.GeoLM(md.ModelConfig.from_dict(meta["model_config"]))
    model.store.load_arrays(arrays)
    return model


def cmd_embed(args, cfg):
    model = _model_for_inference(args.checkpoint)
    tokenizer = _load_vocab(args)
    texts = list(args.text or []) + (_read_lines(args.input) if args.input else [])
    if not texts:
        raise ValueError("nothing to embed: pass --text or --input")
    vecs = md.embed_texts(model, tokenizer, texts, graph_mode=args.graph_mode)
    if args.out:
        np.save(args.out, vecs)
    else:
        for text, v in zip(texts, vecs):
            print(json.dumps({"text": text, "vector": [round(float(x), 8) for x in v]}, ensure_ascii=False))


def cmd_geocode(args, cfg):
    model = _model_for_inference(args.checkpoint)
    tokenizer = _load_vocab(args)
    for text in args.text:
        pred = tk.geocode_predict(model, tokenizer, [text])[0]
        if pred.location is None:
            print("nan\tnan\t-\tfallback=none")
            continue
        line = f"{pred.location.lat:.6f}\t{pred.location.lng:.6f}\t{pred.token}"
        if pred.fallback:
            line += f"\tfallback=level{pred.level}"
        print(line)


def cmd_analogy(args, cfg):
    model = _model_for_inference(args.checkpoint)
    tokenizer = _load_vocab(args)
    candidates = _read_lines(_require(args.candidates, "candidate file"))
    for rank, text in enumerate(tk.analogy_texts(model, tokenizer, args.a, args.b, args.c,
                                                 candidates, args.top), 1):
        print(f"{rank}\t{text}")


# -- argument parsing ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Reports usage errors as a JSON line on stderr, like runtime failures."""

    def error(self, message):
        self.exit(EXIT_USAGE, json.dumps({"error": "UsageError", "message": f"{self.prog}: {message}"}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config file)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. train.steps=500")

    parser = _Parser(prog="geolang", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-graph", parents=[common], help="ingest JSONL files into a graph snapshot")
    p.add_argument("--pois", required=True)
    p.add_argument("--clicks")
    p.add_argument("--sessions")
    p.add_argument("--out", required=True)
    p.add_argument("--edge-types", help="comma list of qcp,otd,pcp or 'none'")
    p.set_defaults(func=cmd_build_graph, overrides={"edge_types": "graph.edge_types"})

    p = sub.add_parser("inspect-snapshot", parents=[common], help="print node and edge counts")
    p.add_argument("graph")
    p.set_defaults(func=cmd_inspect_snapshot)

    p = sub.add_parser("sample-corpus", parents=[common], help="random-walk documents from a snapshot")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--walk-length", type=int)
    for etype in ("qcp", "otd", "pcp"):
        p.add_argument(f"--lambda-{etype}", type=float, help=f"walk weight of {etype.upper()} edges")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sample_corpus, overrides={"walk_length": "walk.walk_length",
                                                      "lambda_qcp": "walk.lambda_qcp",
                                                      "lambda_otd": "walk.lambda_otd",
                                                      "lambda_pcp": "walk.lambda_pcp"})

    p = sub.add_parser("mask-corpus", parents=[common], help="tokenize and mask a walk corpus")
    p.add_argument("--graph", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", help="vocabulary output (default: OUT.vocab.txt)")
    p.set_defaults(func=cmd_mask_corpus)

    p = sub.add_parser("pretrain", parents=[common], help="pre-train on a masked corpus")
    p.add_argument("--masked", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--no-geocoding", action="store_true", help="drop the geocoding loss term")
    p.add_argument("--checkpoint-dir")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.set_defaults(func=cmd_pretrain, overrides={"steps": "train.steps", "lr": "train.lr",
                                                 "batch_size": "train.batch_size"})

    p = sub.add_parser("finetune", parents=[common], help="fine-tune a task head")
    p.add_argument("task", choices=FINETUNE_TASKS)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_finetune, overrides={"steps": "finetune.steps"})

    p = sub.add_parser("eval", parents=[common], help="evaluate a task and print a metric report")
    p.add_argument("task", choices=EVAL_TASKS)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--candidates", help="candidate POI texts, one per line (recommend)")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--km", type=float, default=3.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", parents=[common], help="[CLS] vectors for texts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--text", action="append")
    p.add_argument("--input", help="file with one text per line")
    p.add_argument("--graph-mode", action="store_true", help="read each text as a one-node document")
    p.add_argument("--out", help="write a .npy matrix instead of JSON lines")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("geocode", parents=[common], help="predict a location for texts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--text", action="append", required=True)
    p.set_defaults(func=cmd_geocode)

    p = sub.add_parser("analogy", parents=[common], help="rank candidates by a - b + c")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--c", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_analogy)
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        path = _require(args.config, "config file")
        cfg.update_text(path.read_text(encoding="utf-8"), str(path))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key, value)
    for attr, key in getattr(args, "overrides", {}).items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(key, str(value))
    if getattr(args, "no_geocoding", False):
        cfg.set("train.geo_weight", "0")
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, FileNotFoundError) as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))
    try:
        args.func(args, cfg)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, "ConfigError", str(exc))
    except (FileNotFoundError, ValueError, KeyError, gg.SnapshotError, nx.CheckpointError,
            dgg.GridError, md.TrainingAborted, nx.NonFiniteError) as exc:
        return _fail(EXIT_RUNTIME, type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
