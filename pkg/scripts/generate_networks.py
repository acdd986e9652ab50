#!/usr/bin/env python3
"""Deterministically generate the bundled Anytown-mod / D-Town-mod networks.

Anytown-mod: 22 junctions (4x5 grid + 2 satellites), 41 pipes (incl. the
tank connector), 1 reservoir, 1 tank, 1 pump station of 2 identical pumps.

D-Town-mod: 399 junctions in 5 weakly-interconnected districts, 443 pipes,
1 reservoir, 5 tanks, 5 pump stations.

Tank heads are calibrated in a second pass: the network is solved once at
mid demands / mid speeds and each tank head is pinned near the equilibrium
head of its junction, which places the feed-optimal speed ratios inside the
feasibility box across the scenario demand range.

Run from the repository root:

    python3 scripts/generate_networks.py [--out src/pumpsurge/data]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from pumpsurge.hydraulics import HydraulicModel
from pumpsurge.network import parse_network

GENERATOR_SEED = 20240817


# --------------------------------------------------------------------------
# Anytown-mod
# --------------------------------------------------------------------------

ANYTOWN_DEMANDS = [3.0, 2.0, 5.0, 4.0, 3.0,
                   2.0, 6.0, 3.0, 4.0, 5.0,
                   4.0, 3.0, 5.0, 2.0, 6.0,
                   3.0, 4.0, 2.0, 5.0, 3.0,
                   5.0, 4.0]
ANYTOWN_RESERVOIR_HEAD = 10.0
ANYTOWN_PUMP = {"a": 70.0, "b": 0.014, "n": 2}          # H0(q) = a - b q^2
ANYTOWN_EFF = {"peak": 0.75, "q_peak": 55.0, "width": 80.0}  # eta = peak*(1-((q-qp)/W)^2)
ANYTOWN_TANK_SPEED = 0.875                              # calibration operating point
ANYTOWN_TANK_DEMAND_FACTOR = 0.7


def _anytown_rows():
    """Junction grid helpers: J01..J20 in a 4x5 grid, J21/J22 satellites."""
    def jid(r, c):
        return f"J{r * 5 + c + 1:02d}"
    pipes = []
    for r in range(4):
        for c in range(4):
            pipes.append((jid(r, c), jid(r, c + 1)))
    for r in range(3):
        for c in range(5):
            pipes.append((jid(r, c), jid(r + 1, c)))
    pipes.append(("J10", "J21"))
    pipes.append(("J18", "J22"))
    diagonals = [("J01", "J07"), ("J03", "J09"), ("J07", "J13"),
                 ("J09", "J15"), ("J11", "J17"), ("J13", "J19"), ("J06", "J12")]
    pipes.extend(diagonals)
    return pipes


def _anytown_diameter(a: str, b: str) -> int:
    trunk = {"J01", "J02", "J03", "J06", "J07", "J11"}
    if a in trunk and b in trunk:
        return 350
    satellites = {"J21", "J22"}
    if a in satellites or b in satellites:
        return 200
    return 250 if (int(a[1:]) + int(b[1:])) % 3 else 300


def _eff_points(peak: float, q_peak: float, width: float | None = None):
    """Three samples of eta(q) = peak*(1 - ((q - q_peak)/width)^2), vertex included."""
    width = q_peak if width is None else width
    lo = q_peak * 15.0 / 55.0
    hi = 2.0 * q_peak - lo
    eta_side = peak * (1.0 - ((lo - q_peak) / width) ** 2)
    return [(lo, eta_side), (q_peak, peak), (hi, eta_side)]


def build_anytown(tank_head: float | None = None) -> str:
    lines = ["; Anytown-mod: 22 junctions, 41 pipes, 1 pump station (2 pumps)"]
    lines.append("[RESERVOIRS]")
    lines.append(f"R1 {ANYTOWN_RESERVOIR_HEAD}")
    lines.append("[TANKS]")
    lines.append(f"T1 {55.0 if tank_head is None else tank_head}")
    lines.append("[JUNCTIONS]")
    for i, demand in enumerate(ANYTOWN_DEMANDS, start=1):
        lines.append(f"J{i:02d} 0.0 {demand}")
    lines.append("[PIPES]")
    for k, (a, b) in enumerate(_anytown_rows(), start=1):
        length = 700 + 40 * ((int(a[1:]) + int(b[1:])) % 4)
        lines.append(f"P{k:02d} {a} {b} {length} {_anytown_diameter(a, b)} 130")
    lines.append("P41 J15 T1 1500 75 130")
    lines.append("[PUMPS]")
    lines.append(f"PG1 R1 J01 HC1 EC1 {ANYTOWN_PUMP['n']}")
    lines.append("[CURVES]")
    a, b = ANYTOWN_PUMP["a"], ANYTOWN_PUMP["b"]
    for q in (0.0, 40.0, 60.0):
        lines.append(f"HC1 {q} {a - b * q * q}")
    for q, eta in _eff_points(ANYTOWN_EFF["peak"], ANYTOWN_EFF["q_peak"],
                              ANYTOWN_EFF["width"]):
        lines.append(f"EC1 {q} {eta}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# D-Town-mod
# --------------------------------------------------------------------------

DTOWN_SIZES = [80, 80, 80, 80, 79]
DTOWN_PUMPS = [
    # a [m], n_identical, eta peak
    {"a": 72.0, "n": 2, "peak": 0.76},
    {"a": 68.0, "n": 3, "peak": 0.74},
    {"a": 75.0, "n": 2, "peak": 0.75},
    {"a": 70.0, "n": 2, "peak": 0.77},
    {"a": 66.0, "n": 2, "peak": 0.73},
]
DTOWN_RESERVOIR_HEAD = 12.0
DTOWN_CHORDS_PER_DISTRICT = 8
DTOWN_TANK_SPEED = 0.875
DTOWN_TANK_DEMAND_FACTOR = 0.7


def build_dtown(rng: np.random.Generator, tank_heads=None) -> str:
    lines = ["; D-Town-mod: 399 junctions, 443 pipes, 5 pump stations"]
    lines.append("[RESERVOIRS]")
    lines.append(f"R1 {DTOWN_RESERVOIR_HEAD}")
    junction_rows, pipe_rows, pump_rows, curve_rows, tank_rows = [], [], [], [], []
    pipe_seq = 0

    for d, size in enumerate(DTOWN_SIZES, start=1):
        names = [f"D{d}N{i:02d}" for i in range(size)]
        depth = {0: 0}
        parents = {}
        # Windowed random attachment: locally branching, globally chain-like.
        for i in range(1, size):
            parent = int(rng.integers(max(0, i - 8), i))
            parents[i] = parent
            depth[i] = depth[parent] + 1
        max_depth = max(depth.values())

        # Demands: entry node and every 13th node are demand-free.
        demands = rng.uniform(0.15, 0.75, size=size)
        demands[0] = 0.0
        demands[::13] = 0.0
        for i, name in enumerate(names):
            junction_rows.append(f"{name} 0.0 {round(float(demands[i]), 3)}")

        district_total = float(np.sum(demands))

        def diameter_for(dep):
            if dep <= 2:
                return 350
            if dep <= 5:
                return 250
            if dep <= 9:
                return 200
            return 150

        for i in range(1, size):
            pipe_seq += 1
            length = int(rng.integers(150, 420))
            dia = diameter_for(depth[i])
            pipe_rows.append(
                f"P{pipe_seq:03d} {names[parents[i]]} {names[i]} {length} {dia} 130"
            )
        for _ in range(DTOWN_CHORDS_PER_DISTRICT):
            while True:
                i, j = int(rng.integers(1, size)), int(rng.integers(1, size))
                if i != j and parents.get(max(i, j)) != min(i, j):
                    break
            pipe_seq += 1
            length = int(rng.integers(200, 500))
            dia = diameter_for(max(depth[i], depth[j]))
            pipe_rows.append(f"P{pipe_seq:03d} {names[i]} {names[j]} {length} {dia} 130")

        # Tank: on a deep node, behind a long narrow connector.
        deep = max(range(size), key=lambda i: depth[i])
        head = 55.0 if tank_heads is None else tank_heads[d - 1]
        tank_rows.append(f"T{d} {head}")
        pipe_seq += 1
        pipe_rows.append(f"P{pipe_seq:03d} {names[deep]} T{d} 1000 100 130")

        # Pump station: reservoir to the district entry node.
        spec = DTOWN_PUMPS[d - 1]
        pump_rows.append(f"PG{d} R1 {names[0]} HC{d} EC{d} {spec['n']}")
        # Design point: per-pump flow at nominal demand, mid speed.
        q_design = max(6.0, district_total / spec["n"] / 0.875)
        b = spec["a"] * 0.45 / (1.6 * q_design) ** 2
        for q in (0.0, q_design, 1.6 * q_design):
            curve_rows.append(f"HC{d} {q} {spec['a'] - b * q * q}")
        for q, eta in _eff_points(spec["peak"], q_design):
            curve_rows.append(f"EC{d} {round(q, 4)} {round(eta, 6)}")

    # Interlinks: a chain over districts, joining mid-tree nodes.
    for d in range(1, 5):
        pipe_seq += 1
        pipe_rows.append(f"P{pipe_seq:03d} D{d}N40 D{d + 1}N40 2000 100 130")

    lines.append("[TANKS]")
    lines.extend(tank_rows)
    lines.append("[JUNCTIONS]")
    lines.extend(junction_rows)
    lines.append("[PIPES]")
    lines.extend(pipe_rows)
    lines.append("[PUMPS]")
    lines.extend(pump_rows)
    lines.append("[CURVES]")
    lines.extend(curve_rows)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Tank-head calibration and output
# --------------------------------------------------------------------------

def calibrate_tank_heads(text: str, speed: float, demand_factor: float) -> list[float]:
    """Solve once at mid-range load and read the heads at the tank junctions."""
    net = parse_network(text)
    model = HydraulicModel(net)
    tank_junction = {}
    for pipe in net.pipes:
        tank_ids = {t.id for t in net.tanks}
        if pipe.to_node in tank_ids:
            tank_junction[pipe.to_node] = pipe.from_node
        elif pipe.from_node in tank_ids:
            tank_junction[pipe.from_node] = pipe.to_node
    demands = model.base_demands * demand_factor
    state = model.solve(np.full(net.n_groups, speed), demands=demands)
    heads = dict(zip(net.node_index, state.heads))
    return [round(float(heads[tank_junction[t.id]]), 1) for t in net.tanks]


def generate(out_dir: Path) -> None:
    draft = build_anytown()
    tank = calibrate_tank_heads(draft, ANYTOWN_TANK_SPEED, ANYTOWN_TANK_DEMAND_FACTOR)
    anytown = build_anytown(tank_head=tank[0])
    net = parse_network(anytown)
    assert (net.n_nodes, len(net.pipes), net.n_groups) == (22, 41, 1)
    (out_dir / "anytown_mod.inp").write_text(anytown)
    print(f"anytown_mod.inp: 22 junctions, 41 pipes, tank head {tank[0]} m")

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(GENERATOR_SEED)))
    draft = build_dtown(rng)
    tanks = calibrate_tank_heads(draft, DTOWN_TANK_SPEED, DTOWN_TANK_DEMAND_FACTOR)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(GENERATOR_SEED)))
    dtown = build_dtown(rng, tank_heads=tanks)
    net = parse_network(dtown)
    assert (net.n_nodes, len(net.pipes), net.n_groups) == (399, 443, 5)
    (out_dir / "dtown_mod.inp").write_text(dtown)
    print(f"dtown_mod.inp: 399 junctions, 443 pipes, tank heads {tanks}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("src/pumpsurge/data"))
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    generate(args.out)


if __name__ == "__main__":
    main()
