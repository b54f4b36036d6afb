#!/usr/bin/env python3
"""High-precision softmax cross-entropy oracle; writes loss_cases.json.

Each case stores unit-ish float vectors (exact decimal reprs) and the loss
-log softmax_0(s / tau) computed with mpmath at 60 digits from those exact
floats. Padding logits contribute nothing.
"""
import json
import random
from pathlib import Path

from mpmath import exp, fsum, log, mp, mpf

mp.dps = 60


def unit(rng, d):
    v = [rng.gauss(0.0, 1.0) for _ in range(d)]
    n = sum(x * x for x in v) ** 0.5
    return [x / n for x in v]


def loss(item, pos, negs, tau):
    logits = [fsum(mpf(a) * mpf(b) for a, b in zip(item, v)) / mpf(tau) for v in [pos] + negs]
    m = max(logits)
    lse = m + log(fsum(exp(z - m) for z in logits))
    return lse - logits[0]


if __name__ == "__main__":
    rng = random.Random(20240531)
    cases = []
    for _ in range(100):
        d = rng.randint(2, 16)
        n_neg = rng.randint(0, 12)
        tau = rng.choice([0.05, 0.1, 0.5, 1.0, rng.uniform(0.02, 2.0)])
        item, pos = unit(rng, d), unit(rng, d)
        negs = [unit(rng, d) for _ in range(n_neg)]
        cases.append({
            "tau": repr(tau),
            "pad_count": rng.randint(0, 5),
            "item": [repr(x) for x in item],
            "positive": [repr(x) for x in pos],
            "negatives": [[repr(x) for x in v] for v in negs],
            "loss": mp.nstr(loss(item, pos, negs, tau), 30),
        })
    worked = mp.nstr(log(1 + exp(-8) + exp(-16)), 30)
    path = Path(__file__).with_name("loss_cases.json")
    path.write_text(json.dumps({"worked_example": worked, "cases": cases}, indent=1) + "\n")
