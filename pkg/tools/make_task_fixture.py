"""Derive small downstream-task datasets from the bundled fixture.

Writes classify/match/label/geocode/recommend JSONL files and a candidate
list to src/geolang/data/fixture/tasks/.  Deterministic.
"""
import json
import random
from pathlib import Path

from geolang.geograph import poi_text
from geolang.masker import WordTokenizer

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "geolang" / "data" / "fixture"
OUT = FIXTURE / "tasks"
ADDRESS_PARTS = ("NUM", "ROAD", "DISTRICT", "CITY", "PROV")


def read(name):
    return [json.loads(line) for line in (FIXTURE / name).read_text().splitlines() if line.strip()]


def write(name, rows):
    with open(OUT / name, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def city_of(poi):
    return poi["address"].split(",")[-2].strip()


def tag_address(address):
    tokens, tags = [], []
    for k, part in enumerate(p.strip() for p in address.split(",")):
        if k:
            tokens.append(",")
            tags.append("O")
        words = WordTokenizer.tokenize(part)
        tokens += words
        tags += [f"B-{ADDRESS_PARTS[k]}"] + [f"I-{ADDRESS_PARTS[k]}"] * (len(words) - 1)
    return tokens, tags


def main(seed=0):
    rng = random.Random(seed)
    OUT.mkdir(exist_ok=True)
    pois = read("pois.jsonl")
    by_id = {p["poi_id"]: p for p in pois}
    clicks = read("clicks.jsonl")
    sessions = read("sessions.jsonl")

    write("classify.jsonl", [{"text": c["query"], "label": city_of(by_id[c["poi_id"]])} for c in clicks])

    match = []
    for c in clicks[::2]:
        p = by_id[c["poi_id"]]
        brand = p["name"].split()[0]
        same_brand = [q for q in pois if q["name"].split()[0] == brand and q is not p]
        same_city = [q for q in pois if city_of(q) == city_of(p) and q is not p]
        others = [q for q in pois if city_of(q) != city_of(p) and q["name"].split()[0] != brand]
        for level, q in (("exact", p), ("high", rng.choice(same_brand or [p])),
                         ("weak", rng.choice(same_city)), ("irrelevant", rng.choice(others))):
            match.append({"query": c["query"], "poi": poi_text(q["name"], q["address"], q["type"]),
                          "relevance": level})
    write("match.jsonl", match)

    write("label.jsonl", [dict(zip(("tokens", "tags"), tag_address(p["address"]))) for p in pois])
    write("geocode.jsonl", [{"text": f"{p['name']} {p['address']}", "lat": p["lat"], "lng": p["lng"]}
                            for p in pois])

    texts = {p["poi_id"]: poi_text(p["name"], p["address"], p["type"]) for p in pois}
    rec = []
    for s in sessions:
        ids = [i for i in s["poi_ids"] if i in texts]
        if len(ids) >= 2:
            rec.append({"history": [texts[i] for i in ids[:-1]], "gold": texts[ids[-1]]})
    write("recommend.jsonl", rec)
    (OUT / "candidates.txt").write_text("\n".join(texts[p["poi_id"]] for p in pois) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
