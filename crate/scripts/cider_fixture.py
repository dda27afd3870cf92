"""Regenerates crates/core/tests/fixtures/cider_cases.json.

Needs the reference CIDEr-D scorer from pycocoevalcap (cider/cider_scorer.py)
on PYTHONPATH, plus numpy:

    PYTHONPATH=path/to/pycocoevalcap/cider python3 scripts/cider_fixture.py
"""

import json
import random
import sys
from pathlib import Path

from cider_scorer import CiderScorer

WORDS = "a the man woman dog cat zebra horse field street couch sitting standing on in of next to two".split()
OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/cider_cases.json"


def sentence(rng, lo=2, hi=12):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def perturb(rng, s):
    toks = s.split()
    for _ in range(rng.randint(0, 3)):
        op = rng.randrange(3)
        if op == 0 and len(toks) > 1:
            toks.pop(rng.randrange(len(toks)))
        elif op == 1:
            toks.insert(rng.randrange(len(toks) + 1), rng.choice(WORDS))
        else:
            toks[rng.randrange(len(toks))] = rng.choice(WORDS)
    return " ".join(toks)


def score(images):
    scorer = CiderScorer(n=4, sigma=6.0)
    for im in images:
        scorer += (im["candidate"], im["refs"])
    mean, per_image = scorer.compute_score()
    return float(mean), [float(x) for x in per_image]


def main():
    rng = random.Random(20240611)
    cases = []
    exact = [
        {"candidate": "a zebra standing in a field", "refs": ["a zebra standing in a field"] * 5},
        {"candidate": "a man sitting on a couch", "refs": ["a man sitting on a couch"] * 5},
    ]
    cases.append({"name": "exact_match", "images": exact})
    single = [{"candidate": "a dog on the street", "refs": ["a dog on a street", "the dog in the street"]}]
    cases.append({"name": "single_image", "images": single})
    while len(cases) < 25:
        n_images = rng.randint(2, 6)
        images = []
        for _ in range(n_images):
            base = sentence(rng)
            refs = [perturb(rng, base) for _ in range(rng.randint(1, 5))]
            kind = rng.random()
            if kind < 0.4:
                cand = perturb(rng, base)
            elif kind < 0.6:
                cand = refs[0]
            else:
                cand = sentence(rng, 1, 14)
            images.append({"candidate": cand, "refs": refs})
        cases.append({"name": f"random_{len(cases):02d}", "images": images})
    for case in cases:
        case["mean"], case["scores"] = score(case["images"])
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"cases": cases}, indent=1) + "\n")
    print(f"wrote {len(cases)} cases to {OUT}", file=sys.stderr)


if __name__ == "__main__":
    main()
