#!/usr/bin/env python3
"""Write data/golden/predictions.jsonl: perturbed copies of the generation
test references covering exact hits, renamed variables, dropped tokens and
unparseable output. data/golden/report.json is then produced by running

    codetext evaluate --config data/golden/config.toml --output-dir <dir>

and copying <dir>/report.json into data/golden/.
"""
import json
import os
import random

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


def main():
    rng = random.Random(11)
    src = os.path.join(ROOT, "tasks", "generation", "test.jsonl")
    with open(src) as f:
        records = [json.loads(line) for line in f if line.strip()]
    out = []
    for i, r in enumerate(records):
        toks = r["code"].split()
        kind = i % 5
        if kind == 1:
            names = sorted({t for t in toks if t.isidentifier() and t.islower() and len(t) <= 5})
            if names:
                old = rng.choice(names)
                toks = [t + "2" if t == old else t for t in toks]
        elif kind == 2 and len(toks) > 4:
            del toks[rng.randrange(1, len(toks) - 1)]
        elif kind == 3:
            toks = toks[: max(1, len(toks) // 2)]
        elif kind == 4:
            toks = ["return", "@"] + toks[2:]
        out.append({"id": r["id"], "prediction": " ".join(toks)})
    dst = os.path.join(ROOT, "golden", "predictions.jsonl")
    with open(dst, "w") as f:
        for p in out:
            f.write(json.dumps(p, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
