"""Golden reward values for randomized sibling groups.

Writes crates/core/tests/fixtures/scoring_golden.json. Every number is
computed here with plain floats from the raw measurements; the Rust test
feeds the same raw measurements to the engine and compares.
"""
import json
import math
import random
from pathlib import Path

WORDS = "ash bell cart dune elm fern gate hill iris jade kite lake moss nest oak pier".split()
N_CASES = 60

rng = random.Random(20240611)


def sentence():
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(2, 7)))


def minmax(v):
    lo, hi = min(v), max(v)
    if len(v) < 2 or hi == lo:
        return [0.0] * len(v)
    return [(x - lo) / (hi - lo) for x in v]


def redundancy(case, e):
    ex, ey = e["emb_x"], e["emb_y"]
    dot = sum(a * b for a, b in zip(ex, ey))
    nx = math.sqrt(sum(a * a for a in ex))
    ny = math.sqrt(sum(b * b for b in ey))
    cos = dot / (nx * ny)
    tx, ty = set(e["x"].lower().split()), set(e["y"].lower().split())
    union = len(tx | ty)
    jac = len(tx & ty) / union if union else 0.0
    r = case["reward"]
    jterm = jac if r["redundancy_form"] == "main_text" else 1.0 - jac
    return max(0.0, r["omega_cos"] * (1.0 - cos) + r["omega_jac"] * jterm)


def score(case):
    r = case["reward"]
    edges = case["edges"]
    m = len(edges[0]["lm"])
    red = [redundancy(case, e) for e in edges]
    ne = minmax([e["nli"]["p_ent"] for e in edges])
    nc = minmax([e["nli"]["p_contr"] for e in edges])
    nr = minmax(red)
    nn = [minmax([e["lm"][k]["nll"] for e in edges]) for k in range(m)]
    nh = [minmax([e["lm"][k]["entropy"] for e in edges]) for k in range(m)]
    out = []
    for i, e in enumerate(edges):
        eff = e["nli"]["p_ent"] * (1.0 - e["nli"]["p_contr"])
        used = 1.0 if r["ablation"] == "without_effect" else eff
        costs, rels = [], []
        for k in range(m):
            if r["ablation"] == "without_cost":
                c = 0.0
            else:
                c = ((1.0 - ne[i]) + r["lambda_contr"] * nc[i] + r["alpha_nll"] * nn[k][i]
                     + r["beta_entropy"] * nh[k][i] + r["beta_redund"] * nr[i])
            costs.append(c)
            rels.append(math.log((used + r["epsilon"]) / (c + r["epsilon"])))
        mu = sum(rels) / m
        var = sum((x - mu) ** 2 for x in rels) / m
        out.append({
            "redundancy": red[i],
            "effect": eff,
            "cost_per_model": costs,
            "relevance_per_model": rels,
            "relevance": mu - r["gamma_var"] * var,
        })
    return out


def case():
    m = rng.randint(1, 3)
    reward = {
        "lambda_contr": rng.uniform(0, 1),
        "alpha_nll": rng.uniform(0, 1),
        "beta_entropy": rng.uniform(0, 1),
        "beta_redund": rng.uniform(0, 1),
        "gamma_var": rng.uniform(0, 1),
        "epsilon": rng.choice([1e-6, 1e-3]),
        "omega_cos": 0.5,
        "omega_jac": 0.5,
        "redundancy_form": rng.choice(["main_text", "appendix"]),
        "ablation": rng.choice(["full", "full", "without_cost", "without_effect"]),
    }
    y = sentence()
    emb_y = [rng.gauss(0, 1) for _ in range(8)]
    edges = []
    for _ in range(rng.randint(1, 5)):
        pe = rng.uniform(0, 1)
        pc = rng.uniform(0, 1 - pe)
        edges.append({
            "x": sentence(),
            "y": y,
            "emb_x": [rng.gauss(0, 1) for _ in range(8)],
            "emb_y": emb_y,
            "nli": {"p_ent": pe, "p_neu": 1.0 - pe - pc, "p_contr": pc},
            "lm": [{"nll": rng.uniform(0, 6), "entropy": rng.uniform(0, 3)} for _ in range(m)],
        })
    c = {"reward": reward, "edges": edges}
    c["expected"] = score(c)
    rel = [e["relevance"] for e in c["expected"]]
    c["chain_score"] = sum(x / len(rel) for x in rel)
    return c


dst = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/scoring_golden.json"
dst.write_text(json.dumps([case() for _ in range(N_CASES)], indent=1) + "\n")
print(f"wrote {dst}")
