"""Expected report rows for the moderator count fixture.

Reads fixtures/moderator_counts.csv with the csv module and writes
fixtures/moderator_expected.csv: per-model HSR and deltas, per-cluster
unweighted means and the overall unweighted mean. Kept independent of the
Rust report code on purpose.
"""
import csv
import sys
from pathlib import Path

TIERS = ["hard", "soft_base", "soft_gv", "soft_hv"]

root = Path(__file__).resolve().parent.parent
src = root / "fixtures" / "moderator_counts.csv"
dst = root / "fixtures" / "moderator_expected.csv"

rows = list(csv.DictReader(src.open()))
hsr = {r["model"]: [100.0 * int(r[t]) / int(r["total"]) for t in TIERS] for r in rows}
clusters = {}
for r in rows:
    clusters.setdefault(r["cluster"], []).append(r["model"])


def mean(vals):
    return sum(vals) / len(vals)


def line(name, h):
    return [name] + [f"{v:.2f}" for v in h] + [f"{v - h[0]:.2f}" for v in h[1:]]


out = [["row"] + TIERS + ["delta_" + t for t in TIERS[1:]]]
for m, h in hsr.items():
    out.append(line(m, h))
for c, ms in clusters.items():
    out.append(line(c, [mean([hsr[m][i] for m in ms]) for i in range(4)]))
out.append(line("Overall Average", [mean([h[i] for h in hsr.values()]) for i in range(4)]))

with dst.open("w", newline="") as f:
    csv.writer(f, lineterminator="\n").writerows(out)
if "-q" not in sys.argv:
    for r in out:
        print(",".join(r))
