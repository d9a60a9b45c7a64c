"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line.

The lines are printed when the test runs (visible with ``-s``) and repeated
in the terminal summary of every pytest run.
"""

from __future__ import annotations

import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from oracles import example1_posat, example2_posat, two_arc_max_marginal, two_arc_worst
from posat.analysis import check_necessary_condition, posat_curve, search_worst_posat, verify_msatue, zeta_bound
from posat.analysis.bounds import zeta_threshold
from posat.errors import MaxItersExceeded
from posat.instances import gen_example1, gen_example2, gen_two_arc, load_sioux_falls, random_instance
from posat.network import aggregate_to_arcflow, scale_demands
from posat.solvers import all_or_nothing, kkt_certificate, solve_prue, solve_uepe

RESULTS: dict[int, str] = {}

KAPPA_GRID = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5]
CIRCULAR_CMD = [
    sys.executable, "-m", "posat", "search", "--circular-degree", "4", "--circular-ratio", "posat",
    "--kappa-grid", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0", "--seed", "0", "--budget", "10",
]


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def cost_of(instance, x) -> float:
    v = aggregate_to_arcflow(x) if np.ndim(x) == 2 else x
    return float(instance.cost.times(v) @ v)


def random_feasible_flow(instance, rng):
    """Convex mix of all-or-nothing loads under random arc times."""
    x = np.zeros((instance.n_od, instance.n_arcs))
    for wgt in rng.dirichlet(np.ones(3)):
        y, _ = all_or_nothing(instance, rng.uniform(0.05, 1.0, instance.n_arcs))
        x += wgt * y
    return x


# ---------------------------------------------------------------------------


def test_criterion_01_example1_closed_form():
    t0 = time.perf_counter()
    inst = gen_example1(1.0)
    errs = [abs(search_worst_posat(inst, k).posat - example1_posat(k)) for k in KAPPA_GRID]
    dt = time.perf_counter() - t0
    report(1, max(errs) <= 1e-3 and dt < 10.0, f"example 1 max |PoSat - closed form| = {max(errs):.3g}, {dt:.2f} s")


def test_criterion_02_example2_closed_form():
    t0 = time.perf_counter()
    inst = gen_example2(1.0)
    errs = [abs(search_worst_posat(inst, k).posat - example2_posat(k)) for k in KAPPA_GRID]
    dt = time.perf_counter() - t0
    report(2, max(errs) <= 1e-3 and dt < 10.0, f"example 2 max |PoSat - closed form| = {max(errs):.3g}, {dt:.2f} s")


def _run_circular():
    out = subprocess.run(CIRCULAR_CMD, capture_output=True, check=False)
    return out.returncode, out.stdout


def test_criterion_03_circular_tightness():
    t0 = time.perf_counter()
    code, data = _run_circular()
    dt = time.perf_counter() - t0
    lines = data.decode().strip().split("\n")
    header = lines[0].split(",")
    errs = []
    for line in lines[1:]:
        row = dict(zip(header, line.split(",")))
        k = float(row["kappa"])
        errs.append(abs(float(row["posat"]) - (1.0 + k) ** 5))
    ok = code == 0 and len(errs) == 10 and max(errs) <= 1e-3 and dt < 120.0
    report(3, ok, f"circular n=4, 10 kappas, max |PoSat - (1+k)^5| = {max(errs, default=np.nan):.3g}, {dt:.1f} s")


def test_criterion_04_zeta_values():
    exact = zeta_bound(0.0, 1) == 4.0 / 3.0
    cont = max(
        abs(
            1.0 / (1.0 / (1.0 + zeta_threshold(n)) - n / (n + 1.0) ** ((n + 1.0) / n))
            - (1.0 + zeta_threshold(n)) ** (n + 1)
        )
        for n in range(1, 5)
    )
    grid = np.linspace(0.0, 0.999, 1000)
    fig = max(abs(zeta_bound(k, 1) - 4 * (1 + k) / (3 - k)) for k in grid)
    report(4, exact and cont <= 1e-9 and fig <= 1e-12, f"zeta(0,1)=4/3 {exact}, branch jump {cont:.2g}, linear branch err {fig:.2g}")


def test_criterion_05_scaled_prue_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(500)
    worst = 0.0
    for _ in range(200):
        inst = random_instance(rng, max_nodes=6, max_arcs=10, degree=int(rng.integers(1, 5)))
        k = float(rng.uniform(0.0, 2.0))
        n = inst.degree
        z0 = solve_prue(inst, tol=1e-12).Z
        zh = solve_prue(scale_demands(inst, 1.0 + k), tol=1e-12).Z
        worst = max(worst, zh / ((1.0 + k) ** (n + 1) * z0))
    dt = time.perf_counter() - t0
    report(5, worst <= 1 + 1e-6 and dt < 120.0, f"200 instances, max C(f_hat0) / ((1+k)^(n+1) C(f0)) = {worst:.6f}, {dt:.1f} s")


def test_criterion_06_scaled_flow_bound():
    rng = np.random.default_rng(600)
    worst = 0.0
    for _ in range(500):
        inst = random_instance(rng, degree=int(rng.integers(1, 5)))
        x = random_feasible_flow(inst, rng)
        k = float(rng.uniform(0.0, 2.0))
        n = inst.degree
        worst = max(worst, cost_of(inst, (1.0 + k) * x) / ((1.0 + k) ** (n + 1) * cost_of(inst, x)))
    report(6, worst <= 1 + 1e-12, f"500 triples, max C((1+k)f) / ((1+k)^(n+1) C(f)) = {worst:.15f}")


def test_criterion_07_implication_chain():
    rng = np.random.default_rng(700)
    converged = violations = 0
    for _ in range(100):
        inst = random_instance(rng, degree=int(rng.integers(1, 5)))
        k = float(rng.uniform(0.0, 2.0))
        lam = rng.uniform(1.0 / (1.0 + k), 1.0, (inst.n_od, inst.n_arcs))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxItersExceeded)
            rep = solve_uepe(inst, lam, tol=1e-12, max_iters=20000)
        if not rep.converged:
            continue
        converged += 1
        ok = (
            verify_msatue(inst, rep.x, k).passed
            and check_necessary_condition(inst, rep.v, k).holds
            and kkt_certificate(inst, lam, rep.x, tol=1e-6).passed
        )
        violations += not ok
    report(7, violations == 0 and converged >= 90, f"{converged}/100 solves converged, {violations} violations")


def test_criterion_08_scaled_prue_satisficing():
    rng = np.random.default_rng(800)
    worst_excess = -np.inf
    for _ in range(100):
        inst = random_instance(rng, degree=int(rng.integers(1, 5)))
        k = float(rng.uniform(0.0, 2.0))
        sigma = (1.0 + k) ** inst.degree - 1.0
        x0 = solve_prue(inst, tol=1e-12).x
        ver = verify_msatue(scale_demands(inst, 1.0 + k), (1.0 + k) * x0, sigma, tol=1e-6)
        worst_excess = max(worst_excess, ver.smallest - sigma)
    report(8, worst_excess <= 1e-6, f"100 instances, max (certifying kappa - sigma) = {worst_excess:.3g}")


def test_criterion_09_brute_force_two_arc():
    rng = np.random.default_rng(900)
    worst = -np.inf
    for _ in range(50):
        q = float(rng.uniform(0.5, 3.0))
        coeffs = []
        for _arc in range(2):
            deg = int(rng.integers(1, 5))
            c = rng.uniform(0.0, 2.0, deg + 1) * (rng.random(deg + 1) < 0.6)
            c[deg] = rng.uniform(0.1, 2.0)
            coeffs.append(c.tolist())
        inst = gen_two_arc(q, *coeffs)
        k = float(rng.uniform(0.0, 2.0))
        z_oracle, _, delta = two_arc_worst(inst, k)
        res = search_worst_posat(inst, k, starts=4)
        allowed = 2.0 * delta * two_arc_max_marginal(inst)
        worst = max(worst, abs(res.z_worst - z_oracle) / allowed)
    report(9, worst <= 1.0, f"50 two-arc instances, max |Z_search - Z_oracle| / (2 delta max marginal) = {worst:.3g}")


@pytest.mark.slow
def test_criterion_10_sioux_falls():
    t0 = time.perf_counter()
    sf = load_sioux_falls()
    kappas = [0.0, 0.1, 0.2, 0.3]
    rows = posat_curve(sf, kappas, starts=8, seed=0, budget=8, threads=8)
    dt = time.perf_counter() - t0
    post = [r.posat for r in rows]
    mono = all(b >= a for a, b in zip(post, post[1:]))
    above = all(p >= 1.0 for p in post)
    below = all(p <= zeta_bound(k, 4) for p, k in zip(post, kappas))
    gap = rows[0].prue_gap
    ok = mono and above and below and gap <= 1e-6 and dt < 900.0
    curve = ", ".join(f"{p:.5f}" for p in post)
    report(10, ok, f"Sioux Falls PoSat [{curve}], PRUE gap {gap:.2g}, {dt:.0f} s")


def test_criterion_11_determinism():
    a = _run_circular()
    b = _run_circular()
    report(11, a[0] == 0 and a[1] == b[1] and len(a[1]) > 0, f"two runs of the circular search, {len(a[1])} bytes, identical={a[1] == b[1]}")
