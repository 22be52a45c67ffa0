"""The whole command-line pipeline on the bundled fixture, in a temp dir.

Run:  python3 demos/pipeline_walkthrough.py [--steps N]

A small model is used so this finishes in well under a minute; raise
--steps (and drop the model.* overrides) for a model that actually learns.
"""

import argparse
import json
import tempfile
from pathlib import Path

from geolang import cli

FIXTURE = Path(cli.__file__).parent / "data" / "fixture"
TASKS = FIXTURE / "tasks"


def run(*argv):
    argv = [str(a) for a in argv]
    print("$ geolang", " ".join(a if len(a) < 40 else "..." + a[-30:] for a in argv))
    code = cli.main(argv)
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=40)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        w = Path(tmp)
        conf = w / "run.conf"
        conf.write_text("seed = 0\nmodel.hidden = 32\nmodel.layers = 1\nmodel.heads = 2\n"
                        "train.batch_size = 8\ntrain.lr = 1e-3\nfinetune.steps = 150\nfinetune.lr = 3e-3\n")
        common = ["--config", conf]

        run("build-graph", "--pois", FIXTURE / "pois.jsonl", "--clicks", FIXTURE / "clicks.jsonl",
            "--sessions", FIXTURE / "sessions.jsonl", "--out", w / "graph.bin", *common)
        run("inspect-snapshot", w / "graph.bin")
        run("sample-corpus", "--graph", w / "graph.bin", "--out", w / "corpus.txt", *common)
        run("mask-corpus", "--graph", w / "graph.bin", "--corpus", w / "corpus.txt", "--out", w / "masked.bin",
            *common)
        vocab = w / "masked.bin.vocab.txt"
        run("pretrain", "--masked", w / "masked.bin", "--vocab", vocab, "--out", w / "model.ckpt",
            "--steps", args.steps, *common)
        curve = json.loads((w / "model.ckpt.losses.json").read_text())["history"]
        print(f"loss {curve[0]['total']:.2f} -> {curve[-1]['total']:.2f}")

        run("finetune", "classify", "--checkpoint", w / "model.ckpt", "--vocab", vocab,
            "--train", TASKS / "classify.jsonl", "--out", w / "city.ckpt", *common)
        run("eval", "classify", "--checkpoint", w / "city.ckpt", "--vocab", vocab,
            "--data", TASKS / "classify.jsonl")
        run("eval", "recommend", "--checkpoint", w / "model.ckpt", "--vocab", vocab,
            "--data", TASKS / "recommend.jsonl", "--candidates", TASKS / "candidates.txt", "--k", 5)
        run("geocode", "--checkpoint", w / "model.ckpt", "--vocab", vocab,
            "--text", "Yizi Food (Suzhou) Co. [SEP] No.1, Songxiang, Suzhou Industrial Park")
        run("analogy", "--checkpoint", w / "model.ckpt", "--vocab", vocab, "--a", "Beijing", "--b", "Shanghai",
            "--c", "Suzhou", "--candidates", TASKS / "candidates.txt", "--top", 3)


if __name__ == "__main__":
    main()
