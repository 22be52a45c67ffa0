"""Regenerate the bundled synthetic fixture (50 POIs, 200 queries, 100 sessions).

Output goes to src/geolang/data/fixture/.  Deterministic for a given seed.
"""
import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "geolang" / "data" / "fixture"

CITIES = [
    # city, province, district, streets, anchor lat/lng
    ("Suzhou", "Jiangsu Province", "Suzhou Industrial Park",
     ["Songxiang", "Xinghu Street", "Suhong Road", "Jinji Lake Avenue"], 31.3170, 120.7290),
    ("Beijing", "Beijing", "Dongcheng District",
     ["Wangfujing Street", "Dongdan North Street", "Jianguomen Inner Street", "Chaoyangmen Street"], 39.9130, 116.4110),
    ("Shanghai", "Shanghai", "Huangpu District",
     ["Nanjing East Road", "Middle Henan Road", "Fuzhou Road", "Jiujiang Road"], 31.2370, 121.4800),
    ("Changchun", "Jilin Province", "Nanguan District",
     ["Jingyue Street", "Renmin Street", "Ziyou Road", "Xinfa Road"], 43.8600, 125.3300),
    ("Kunming", "Yunnan Province", "Wuhua District",
     ["Dongfeng West Road", "Qingnian Road", "Renmin Middle Road", "Beijing Road"], 25.0420, 102.7100),
]

BRANDS = ["Yizi Food", "Golden Lotus", "Jade Garden", "Bright Star", "Sunrise", "Silver Crane",
          "Harmony", "Red Lantern", "Blue Sky", "Green Willow"]
KINDS = [("Co.", "Company"), ("Hotel", "Hotel"), ("Restaurant", "Restaurant"), ("Bank", "Bank"),
         ("Supermarket", "Supermarket"), ("Hospital", "Hospital"), ("Bus Station", "Bus Station"),
         ("Bookstore", "Bookstore"), ("Pharmacy", "Pharmacy"), ("Cinema", "Cinema")]


def typo(word, rng):
    if len(word) < 4:
        return word + word[-1]
    i = rng.randrange(1, len(word) - 1)
    ops = [word[:i] + word[i + 1:], word[:i] + word[i + 1] + word[i] + word[i + 2:],
           word[:i] + rng.choice("aeiouhcz") + word[i + 1:]]
    out = rng.choice(ops)
    return out if out != word else word + "h"


def main(seed=7):
    rng = random.Random(seed)
    pois, clicks, sessions = [], [], []
    by_city = {}
    for c, (city, province, district, streets, lat0, lng0) in enumerate(CITIES):
        by_city[city] = []
        for k in range(10):
            brand = BRANDS[(k + 3 * c) % len(BRANDS)]
            suffix, ptype = KINDS[(k + c) % len(KINDS)]
            name = f"{brand} ({city}) {suffix}" if k % 3 == 0 else f"{brand} {suffix}"
            street = streets[k % len(streets)]
            address = f"No.{rng.randint(1, 300)}, {street}, {district}, {city}, {province}"
            # clusters of ~3 POIs within a few tens of metres share a level-15 cell
            cluster = k // 3
            lat = lat0 + 0.004 * cluster + rng.uniform(-0.0002, 0.0002)
            lng = lng0 + 0.005 * cluster + rng.uniform(-0.0002, 0.0002)
            if c == 0 and k == 0:
                name, address, ptype = ("Yizi Food (Suzhou) Co.",
                                        "No.1, Songxiang, Suzhou Industrial Park, Suzhou, Jiangsu Province",
                                        "Company")
            pid = f"P{c:01d}{k:02d}"
            pois.append({"poi_id": pid, "name": name, "address": address, "type": ptype,
                         "lat": round(lat, 6), "lng": round(lng, 6)})
            by_city[city].append(pid)

    # 200 click records; every fifth POI gets six distinct queries, so top-4 truncation matters
    for n, poi in enumerate(pois):
        words = poi["name"].replace("(", "").replace(")", "").split()
        street = poi["address"].split(", ")[1]
        city = poi["address"].split(", ")[3]
        variants = [
            poi["name"].lower(),
            f"{words[0]} {words[-1]}",
            f"{typo(words[0], rng)} {words[1] if len(words) > 1 else ''}".strip(),
            f"{street} {words[0]}",
            f"{city} {poi['type'].lower()}",
            f"{words[0]} near {street}",
        ]
        if n == 0:
            variants[2] = "Yichi Food"
            variants[3] = "No.1 Songzhuang Road Yichi Food"
        take = 6 if n % 5 == 0 else (4 if n % 5 in (1, 2) else 3)
        for v in variants[:take]:
            clicks.append({"query": v, "poi_id": poi["poi_id"], "count": rng.randint(1, 20)})
    while len(clicks) < 200:
        poi = rng.choice(pois)
        clicks.append({"query": poi["name"].lower(), "poi_id": poi["poi_id"], "count": rng.randint(1, 5)})
    clicks = clicks[:200]

    for _ in range(100):
        city = rng.choice(list(by_city))
        length = rng.randint(2, 5)
        sessions.append({"poi_ids": [rng.choice(by_city[city]) for _ in range(length)]})

    OUT.mkdir(parents=True, exist_ok=True)
    for name, rows in (("pois", pois), ("clicks", clicks), ("sessions", sessions)):
        with open(OUT / f"{name}.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(len(pois), len(clicks), len(sessions))


if __name__ == "__main__":
    main()
