#!/usr/bin/env python3
"""Regenerate the shipped case files under cases/.

Outputs:
  case118.json  118-bus, 9-region system patterned on the IEEE 118-bus network
  graph9.json   9-operator communication graph (ring with distance-2 chords)
  inj9.json     joint wind-injection mixture for the 9 farms (dimension 18)
  wind9.csv     sample rows drawn from that mixture (one [P_W, Q_W] per row)
  case6.json    6-bus, 2-region tutorial system
  graph2.json   2-operator graph
  inj6.json     joint mixture for the 2 farms (dimension 4)
  wind6.csv     sample rows for the 6-bus system

Everything is deterministic (fixed seeds, sorted iteration), so re-running the
script reproduces the committed files byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import random
from collections import deque
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "cases"

# ---------------------------------------------------------------------------
# 118-bus topology (standard branch list; parallel circuits kept)
# ---------------------------------------------------------------------------

BRANCHES_118 = [
    (1, 2), (1, 3), (4, 5), (3, 5), (5, 6), (6, 7), (8, 9), (8, 5), (9, 10),
    (4, 11), (5, 11), (11, 12), (2, 12), (3, 12), (7, 12), (11, 13), (12, 14),
    (13, 15), (14, 15), (12, 16), (15, 17), (16, 17), (17, 18), (18, 19),
    (19, 20), (15, 19), (20, 21), (21, 22), (22, 23), (23, 24), (23, 25),
    (26, 25), (25, 27), (27, 28), (28, 29), (30, 17), (8, 30), (26, 30),
    (17, 31), (29, 31), (23, 32), (31, 32), (27, 32), (15, 33), (19, 34),
    (35, 36), (35, 37), (33, 37), (34, 36), (34, 37), (38, 37), (37, 39),
    (37, 40), (30, 38), (39, 40), (40, 41), (40, 42), (41, 42), (43, 44),
    (34, 43), (44, 45), (45, 46), (46, 47), (46, 48), (47, 49), (42, 49),
    (42, 49), (45, 49), (48, 49), (49, 50), (49, 51), (51, 52), (52, 53),
    (53, 54), (49, 54), (49, 54), (54, 55), (54, 56), (55, 56), (56, 57),
    (50, 57), (56, 58), (51, 58), (54, 59), (56, 59), (56, 59), (55, 59),
    (59, 60), (59, 61), (60, 61), (60, 62), (61, 62), (63, 59), (63, 64),
    (64, 61), (38, 65), (64, 65), (49, 66), (49, 66), (62, 66), (62, 67),
    (65, 66), (66, 67), (65, 68), (47, 69), (49, 69), (68, 69), (69, 70),
    (24, 70), (70, 71), (24, 72), (71, 72), (71, 73), (70, 74), (70, 75),
    (69, 75), (74, 75), (76, 77), (69, 77), (75, 77), (77, 78), (78, 79),
    (77, 80), (77, 80), (79, 80), (68, 81), (81, 80), (77, 82), (82, 83),
    (83, 84), (83, 85), (84, 85), (85, 86), (86, 87), (85, 88), (85, 89),
    (88, 89), (89, 90), (89, 90), (90, 91), (89, 92), (89, 92), (91, 92),
    (92, 93), (92, 94), (93, 94), (94, 95), (80, 96), (82, 96), (94, 96),
    (80, 97), (80, 98), (80, 99), (92, 100), (94, 100), (95, 96), (96, 97),
    (98, 100), (99, 100), (100, 101), (92, 102), (101, 102), (100, 103),
    (100, 104), (103, 104), (103, 105), (100, 106), (104, 105), (105, 106),
    (105, 107), (105, 108), (106, 107), (108, 109), (103, 110), (109, 110),
    (110, 111), (110, 112), (17, 113), (32, 113), (32, 114), (27, 115),
    (114, 115), (68, 116), (12, 117), (75, 118), (76, 118),
]

# Generator buses (PV set plus the slack bus 69).
GEN_118 = {
    1, 4, 6, 8, 10, 12, 15, 18, 19, 24, 25, 26, 27, 31, 32, 34, 36, 40, 42,
    46, 49, 54, 55, 56, 59, 61, 62, 65, 66, 69, 70, 72, 73, 74, 76, 77, 80,
    85, 87, 89, 90, 91, 92, 99, 100, 103, 104, 105, 107, 110, 111, 112, 113,
    116,
}
SLACK_118 = 69
# One seed per region, spread over the grid's natural zones.
REGION_SEEDS_118 = [2, 15, 25, 37, 49, 56, 69, 80, 100]
N_BUS_118 = 118


def adjacency(branches):
    adj = {}
    for a, b in branches:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj


def partition_regions(adj, seeds, n_bus):
    """Capped multi-source BFS giving connected, roughly balanced regions."""
    cap = math.ceil(n_bus / len(seeds))
    region = {s: i + 1 for i, s in enumerate(seeds)}
    size = {i + 1: 1 for i in range(len(seeds))}
    queue = deque(seeds)
    while queue:
        u = queue.popleft()
        r = region[u]
        for v in sorted(adj[u]):
            if v not in region and size[r] < cap:
                region[v] = r
                size[r] += 1
                queue.append(v)
    # Attach anything a capped frontier left behind to its smallest
    # already-assigned neighbour region (keeps every region connected).
    while len(region) < n_bus:
        progressed = False
        for u in sorted(adj):
            if u in region:
                continue
            candidates = [region[v] for v in sorted(adj[u]) if v in region]
            if candidates:
                r = min(candidates, key=lambda c: (size[c], c))
                region[u] = r
                size[r] += 1
                progressed = True
        assert progressed, "graph is disconnected"
    return region


def pick_wind_buses(adj, region, gens, slack, n_regions):
    """Per region: the highest-degree non-generator bus becomes the wind bus."""
    wind = []
    for r in range(1, n_regions + 1):
        members = sorted(b for b, rr in region.items() if rr == r)
        candidates = [b for b in members if b not in gens and b != slack]
        assert len(candidates) >= 2, f"region {r} needs a wind and a load bus"
        best = max(candidates, key=lambda b: (len(adj[b]), -b))
        wind.append(best)
    return wind


def make_case(branches, gens, slack, region, wind, rng):
    wind_set = set(wind)
    buses = []
    for b in sorted(region):
        if b == slack:
            buses.append({"id": b, "class": "slack", "v": 1.035, "theta": 0.0})
        elif b in wind_set:
            buses.append({"id": b, "class": "uncertain"})
        elif b in gens:
            buses.append({
                "id": b,
                "class": "pv",
                "p": round(rng.uniform(0.1, 0.9), 6),
                "v": round(rng.uniform(1.0, 1.05), 6),
            })
        else:
            p = -round(rng.uniform(0.15, 0.65), 6)
            buses.append({
                "id": b,
                "class": "pq",
                "p": p,
                "q": round(p * rng.uniform(0.25, 0.40), 6),
            })
    out_branches = []
    for a, b in branches:
        x = round(rng.uniform(0.03, 0.25), 6)
        out_branches.append({
            "from": a,
            "to": b,
            "r": round(x * rng.uniform(0.15, 0.35), 6),
            "x": x,
            "b": round(rng.uniform(0.0, 0.08), 6),
        })
    return {
        "base_mva": 100.0,
        "buses": buses,
        "branches": out_branches,
        "regions": {str(b): region[b] for b in sorted(region)},
    }


# ---------------------------------------------------------------------------
# Injection mixtures and sample files
# ---------------------------------------------------------------------------

def factor_cov(rng, m, p_std, q_std, n_factors=3):
    """PSD covariance over [P_1..P_m, Q_1..Q_m] from a low-rank factor model."""
    d = 2 * m
    scales = np.array([p_std] * m + [q_std] * m)
    f = np.array([[rng.uniform(-1.0, 1.0) for _ in range(n_factors)] for _ in range(d)])
    f *= scales[:, None] / math.sqrt(n_factors)
    cov = f @ f.T + np.diag((0.4 * scales) ** 2)
    return cov


def make_mixture(rng, m, weights, p_levels, p_std, q_std):
    """Joint [P_W, Q_W] mixture; Q tracks P at ~0.12 power factor ratio."""
    means, covs = [], []
    for level in p_levels:
        p_mean = [level + rng.uniform(-0.05, 0.05) for _ in range(m)]
        q_mean = [0.12 * p + rng.uniform(-0.01, 0.01) for p in p_mean]
        means.append([round(v, 6) for v in p_mean + q_mean])
        covs.append(factor_cov(rng, m, p_std, q_std))
    return {
        "weights": list(weights),
        "means": means,
        "covariances": [[[float(v) for v in row] for row in c] for c in covs],
    }


def sample_mixture(mix, n, seed):
    rng = np.random.default_rng(seed)
    weights = np.array(mix["weights"])
    means = [np.array(m) for m in mix["means"]]
    chols = [np.linalg.cholesky(np.array(c)) for c in mix["covariances"]]
    comps = rng.choice(len(weights), size=n, p=weights)
    d = len(means[0])
    out = np.empty((n, d))
    for i, k in enumerate(comps):
        out[i] = means[k] + chols[k] @ rng.standard_normal(d)
    return out


def write_json(path, obj):
    path.write_text(json.dumps(obj, indent=1) + "\n")
    print(f"wrote {path}")


def write_csv(path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    print(f"wrote {path} ({len(rows)} rows)")


# ---------------------------------------------------------------------------
# Main
# ---------------------------------------------------------------------------

def gen_118():
    adj = adjacency(BRANCHES_118)
    assert sorted(adj) == list(range(1, N_BUS_118 + 1)), "bus coverage"
    region = partition_regions(adj, REGION_SEEDS_118, N_BUS_118)
    wind = pick_wind_buses(adj, region, GEN_118, SLACK_118, len(REGION_SEEDS_118))
    rng = random.Random(118)
    case = make_case(BRANCHES_118, GEN_118, SLACK_118, region, wind, rng)
    write_json(OUT / "case118.json", case)

    sizes = {}
    for b, r in region.items():
        sizes[r] = sizes.get(r, 0) + 1
    print(f"  regions: {sorted(sizes.items())}")
    print(f"  wind buses: {sorted(wind)}")

    # Ring over the 9 operators plus distance-2 chords for faster mixing.
    h = 9
    edges = [[i, i % h + 1] for i in range(1, h + 1)]
    edges += [[i, (i + 1) % h + 1] for i in range(1, h + 1)]
    write_json(OUT / "graph9.json", {"h": h, "edges": edges})

    m = len(wind)
    mix = make_mixture(
        random.Random(911), m,
        weights=[0.5, 0.3, 0.2], p_levels=[0.25, 0.35, 0.45],
        p_std=0.045, q_std=0.012,
    )
    write_json(OUT / "inj9.json", mix)
    header = [f"p_bus{b}" for b in sorted(wind)] + [f"q_bus{b}" for b in sorted(wind)]
    write_csv(OUT / "wind9.csv", header, sample_mixture(mix, 2000, 9118))


def gen_6():
    case = {
        "base_mva": 100.0,
        "buses": [
            {"id": 1, "class": "slack", "v": 1.02, "theta": 0.0},
            {"id": 2, "class": "pv", "p": 0.4, "v": 1.01},
            {"id": 3, "class": "pq", "p": -0.35, "q": -0.12},
            {"id": 4, "class": "uncertain"},
            {"id": 5, "class": "pq", "p": -0.3, "q": -0.1},
            {"id": 6, "class": "uncertain"},
        ],
        "branches": [
            {"from": 1, "to": 2, "r": 0.02, "x": 0.1, "b": 0.02},
            {"from": 2, "to": 3, "r": 0.03, "x": 0.14, "b": 0.02},
            {"from": 3, "to": 4, "r": 0.025, "x": 0.12, "b": 0.015},
            {"from": 4, "to": 5, "r": 0.035, "x": 0.16, "b": 0.02},
            {"from": 5, "to": 6, "r": 0.03, "x": 0.13, "b": 0.015},
            {"from": 6, "to": 1, "r": 0.02, "x": 0.11, "b": 0.02},
            {"from": 2, "to": 5, "r": 0.04, "x": 0.18, "b": 0.025},
            {"from": 3, "to": 6, "r": 0.045, "x": 0.2, "b": 0.025},
        ],
        "regions": {"1": 1, "2": 1, "3": 1, "4": 1, "5": 2, "6": 2},
    }
    write_json(OUT / "case6.json", case)
    write_json(OUT / "graph2.json", {"h": 2, "edges": [[1, 2]]})

    mix = make_mixture(
        random.Random(66), 2,
        weights=[0.6, 0.4], p_levels=[0.3, 0.45],
        p_std=0.05, q_std=0.015,
    )
    write_json(OUT / "inj6.json", mix)
    header = ["p_bus4", "p_bus6", "q_bus4", "q_bus6"]
    write_csv(OUT / "wind6.csv", header, sample_mixture(mix, 500, 906))


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    gen_118()
    gen_6()
