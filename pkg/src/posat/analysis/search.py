"""Worst-case PoSat search over the box of perception multipliers.

For a fixed multiplier field the perceived-cost equilibrium is a satisficing
flow, so every certified solve gives a lower bound on the worst satisficing
travel time. The search runs several starts and then a coordinate ascent
that snaps multipliers to the box corners, whole arc columns first and then
single (class, arc) entries.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import MaxItersExceeded, NegativeKappa, PRUEFailed
from ..network import Instance, PathFlow
from ..solvers.kkt import kkt_certificate
from ..solvers.report import LambdaField
from ..solvers.uepe import solve_prue, solve_uepe
from .bounds import simple_posat_bound, zeta_bound
from .verify import check_necessary_condition, verify_msatue

log = logging.getLogger(__name__)

CSV_COLUMNS = ["kappa", "z_prue", "z_worst", "posat", "zeta_bound", "simple_bound", "converged_starts"]


@dataclass
class SearchSettings:
    solve_tol: float = 1e-10
    solve_max_iters: int = 2000
    ascent_max_iters: int = 200  # warm-started flips either settle fast or are dropped
    stall_window: int = 50
    kkt_tol: float = 1e-6
    verify_tol: float = 1e-6
    prue_tol: float = 1e-10


@dataclass
class Candidate:
    lam: np.ndarray
    Z: float
    x: np.ndarray
    paths: PathFlow | None
    converged: bool
    accepted: bool
    reason: str = ""


@dataclass
class PoSatResult:
    kappa: float
    z_prue: float
    z_worst: float
    posat: float
    zeta: float
    simple: float
    lam: LambdaField | None
    x: np.ndarray | None
    converged_starts: int
    start_trace: list = field(default_factory=list)  # (start index, seed, Z or nan, status)
    solver_calls: int = 0
    prue_gap: float = 0.0
    best_source: str = "prue"
    paths: PathFlow | None = None

    def csv_row(self) -> list[str]:
        return [fmt(self.kappa), fmt(self.z_prue), fmt(self.z_worst), fmt(self.posat), fmt(self.zeta), fmt(self.simple), str(self.converged_starts)]

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "z_prue": self.z_prue,
            "z_worst": self.z_worst,
            "posat": self.posat,
            "zeta_bound": self.zeta,
            "simple_bound": self.simple,
            "converged_starts": self.converged_starts,
            "solver_calls": self.solver_calls,
            "prue_gap": self.prue_gap,
            "best_source": self.best_source,
            "start_trace": [list(s) for s in self.start_trace],
            "lambda": None if self.lam is None else self.lam.values.tolist(),
        }


def fmt(x: float) -> str:
    """Floats in outputs carry 12 significant digits."""
    return f"{float(x):.12g}"


def _evaluate(instance: Instance, kappa: float, lam: np.ndarray, init, settings: SearchSettings, max_iters=None) -> Candidate:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxItersExceeded)
        rep = solve_uepe(
            instance, lam, tol=settings.solve_tol, max_iters=max_iters or settings.solve_max_iters, init=init,
            stall_window=settings.stall_window,
        )
    if not rep.converged:
        return Candidate(lam, rep.Z, rep.x, rep.paths, False, False, "not converged")
    kkt = kkt_certificate(instance, lam, rep.x, tol=settings.kkt_tol, relative=True)
    if not kkt.passed:
        return Candidate(lam, rep.Z, rep.x, rep.paths, True, False, "kkt")
    ver = verify_msatue(instance, rep.x, kappa, tol=settings.verify_tol)
    if not ver.passed:
        return Candidate(lam, rep.Z, rep.x, rep.paths, True, False, "msatue")
    return Candidate(lam, rep.Z, rep.x, rep.paths, True, True, ver.status)


def externality_field(instance: Instance, v: np.ndarray, kappa: float) -> np.ndarray:
    """Multipliers at the lower corner on arcs whose congestion externality
    ``v_a t'_a / t_a`` is at least the median, 1 elsewhere.

    Perceiving the most congestible arcs as cheap draws flow onto them,
    which tends to raise the total travel time.
    """
    t = instance.cost.times(v)
    slope = instance.cost.jacobian_diag(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        ext = np.where(t > 0.0, v * slope / t, 0.0)
    row = np.where(ext >= np.median(ext), 1.0 / (1.0 + kappa), 1.0)
    return np.tile(row, (instance.n_od, 1))


def _start_fields(instance: Instance, kappa: float, starts: int, seed: int, v_prue=None):
    """(label, seed, lambda, initial flow) per start, in start-index order."""
    lo = 1.0 / (1.0 + kappa)
    shape = (instance.n_od, instance.n_arcs)
    out = [("lower", None, np.full(shape, lo), None)]
    if starts >= 2 and v_prue is not None:
        out.append(("externality", None, externality_field(instance, v_prue, kappa), None))
    if starts >= 2 and instance.metadata.get("name") == "circular":
        from ..instances import circular_lambda, circular_strategy

        # the pattern is built to support the clockwise strategy; start there
        out.append(("pattern", None, circular_lambda(instance, kappa), circular_strategy(instance, True)))
    if starts >= 3 and v_prue is not None:
        # the mirror corner: single flips from one corner rarely reach the other
        ext = out[1][2]
        out.append(("mirror", None, np.where(ext < 1.0, 1.0, lo), None))
    i = len(out)
    while len(out) < starts:
        rng = np.random.default_rng(seed + i)
        out.append(("uniform", seed + i, rng.uniform(lo, 1.0, shape), None))
        i += 1
    return out[:starts]


def _run_start(args):
    instance, kappa, lam, init, settings = args
    return _evaluate(instance, kappa, lam, init, settings)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("POSAT_THREADS", "1")))
    except ValueError:
        return 1


def search_worst_posat(
    instance: Instance,
    kappa: float,
    starts: int = 16,
    seed: int = 0,
    budget: int | None = None,
    threads: int | None = None,
    settings: SearchSettings | None = None,
    prue=None,
    incumbents: Sequence[tuple] = (),
) -> PoSatResult:
    """Largest certified satisficing travel time found, divided by the PRUE one.

    ``budget`` caps the number of equilibrium solves spent in coordinate
    ascent (default ``50 |W| |A|``). ``incumbents`` are extra
    ``(lambda, initial flow)`` pairs evaluated before the ascent, e.g. the
    previous point of a kappa sweep. ``prue`` reuses a PRUE report.
    """
    if kappa < 0:
        raise NegativeKappa(f"kappa must be >= 0, got {kappa}")
    if starts < 1:
        raise ValueError("starts must be >= 1")
    settings = settings or SearchSettings()
    if budget is None:
        budget = 50 * instance.n_od * instance.n_arcs
    threads = default_threads() if threads is None else max(1, threads)
    lo = 1.0 / (1.0 + kappa)

    if prue is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxItersExceeded)
            prue = solve_prue(instance, tol=settings.prue_tol, max_iters=max(settings.solve_max_iters, 5000))
    if not prue.converged:
        raise PRUEFailed(f"PRUE did not converge (gap {prue.gap:.3g})")
    z_prue = prue.Z
    ones = np.ones((instance.n_od, instance.n_arcs))
    # lambda = 1 is always feasible, so PRUE is the first incumbent
    best = Candidate(ones, z_prue, prue.x, prue.paths, True, True, "prue")
    best_source = "prue"
    calls = 0

    fields = _start_fields(instance, kappa, starts, seed, prue.v)
    init_default = prue.paths
    jobs = [(instance, kappa, lam, init if init is not None else init_default, settings) for _, _, lam, init in fields]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_run_start, jobs))
    else:
        results = [_run_start(j) for j in jobs]
    calls += len(jobs)

    trace = []
    converged_starts = 0
    for idx, ((label, s, _, _), cand) in enumerate(zip(fields, results)):
        trace.append((idx, label if s is None else s, cand.Z if cand.accepted else float("nan"), cand.reason))
        if cand.accepted:
            converged_starts += 1
            if cand.Z > best.Z:
                best, best_source = cand, f"start {idx}"

    for j, (lam, init) in enumerate(incumbents):
        lam = np.clip(np.asarray(lam, dtype=float), lo, 1.0)
        cand = _evaluate(instance, kappa, lam, init if init is not None else init_default, settings)
        calls += 1
        trace.append((f"incumbent {j}", None, cand.Z if cand.accepted else float("nan"), cand.reason))
        if cand.accepted and cand.Z > best.Z:
            best, best_source = cand, f"incumbent {j}"

    # coordinate ascent on box corners: whole arc columns first, then single cells
    coords = [(slice(None), a) for a in range(instance.n_arcs)]
    if instance.n_od > 1:
        coords += [(w, a) for w in range(instance.n_od) for a in range(instance.n_arcs)]
    ascent_calls = 0
    if kappa > 0 and budget > 0:
        improved = True
        while improved and ascent_calls < budget:
            improved = False
            cur = best
            scan_best = None
            for key in coords:
                old = cur.lam[key]
                for new in (lo, 1.0):
                    if np.all(old == new) or ascent_calls >= budget:
                        continue
                    # raising multipliers on unused arcs leaves the equilibrium unchanged
                    if np.all(old <= new) and np.all(cur.x[key] <= 0.0):
                        continue
                    lam = cur.lam.copy()
                    lam[key] = new
                    cand = _evaluate(instance, kappa, lam, cur.paths, settings, settings.ascent_max_iters)
                    ascent_calls += 1
                    if cand.accepted and cand.Z > cur.Z * (1.0 + 1e-12) and (scan_best is None or cand.Z > scan_best.Z):
                        scan_best = cand
            if scan_best is not None:
                best, best_source = scan_best, "ascent"
                improved = True
    calls += ascent_calls

    z_worst = best.Z
    n = instance.degree
    posat = z_worst / z_prue if z_prue > 0 else 1.0
    nec = check_necessary_condition(instance, best.x.sum(axis=0), kappa, tol=settings.verify_tol)
    if not nec.holds:
        log.warning("best flow violates the necessary condition (slack %.3g)", nec.slack)
    return PoSatResult(
        kappa=float(kappa),
        z_prue=z_prue,
        z_worst=z_worst,
        posat=posat,
        zeta=zeta_bound(kappa, n),
        simple=simple_posat_bound(kappa, n),
        lam=LambdaField(best.lam, kappa),
        x=best.x,
        converged_starts=converged_starts,
        start_trace=trace,
        solver_calls=calls,
        prue_gap=prue.gap,
        best_source=best_source,
        paths=best.paths,
    )


def posat_curve(
    instance: Instance | Callable[[float], Instance],
    kappas: Sequence[float],
    starts: int = 16,
    seed: int = 0,
    budget: int | None = None,
    threads: int | None = None,
    settings: SearchSettings | None = None,
) -> list[PoSatResult | None]:
    """Run the search along an ascending kappa grid.

    With a fixed instance the PRUE is solved once, and each kappa is seeded
    with the previous best multipliers both as they were (still inside the
    larger box, which keeps the curve nondecreasing) and rescaled into the
    new box. ``instance`` may instead be a factory ``kappa -> Instance``
    (e.g. the circular network, which changes with kappa); then no state
    is carried. A kappa whose search fails yields ``None``.
    """
    kappas = [float(k) for k in kappas]
    if any(k < 0 for k in kappas):
        raise NegativeKappa("kappa grid must be nonnegative")
    if kappas != sorted(kappas):
        raise ValueError("kappa grid must be sorted ascending")
    settings = settings or SearchSettings()
    factory = instance if callable(instance) else None
    prue = None
    prev = None
    rows: list[PoSatResult | None] = []
    for k in kappas:
        inst = factory(k) if factory else instance
        incumbents = []
        if factory is None and prev is not None:
            incumbents.append((prev.lam.values, prev.paths))
            incumbents.append((prev.lam.rescaled(k).values, prev.paths))
        try:
            if factory is None and prue is None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", MaxItersExceeded)
                    prue = solve_prue(inst, tol=settings.prue_tol, max_iters=max(settings.solve_max_iters, 5000))
            res = search_worst_posat(
                inst, k, starts=starts, seed=seed, budget=budget, threads=threads, settings=settings,
                prue=prue if factory is None else None, incumbents=incumbents,
            )
        except PRUEFailed as exc:
            log.error("kappa=%s: %s", k, exc)
            rows.append(None)
            continue
        rows.append(res)
        prev = res
    return rows


def curve_to_csv(kappas: Sequence[float], rows: Sequence[PoSatResult | None], degree: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for k, r in zip(kappas, rows):
        if r is None:
            writer.writerow([fmt(k), "nan", "nan", "nan", fmt(zeta_bound(k, degree)), fmt(simple_posat_bound(k, degree)), "0"])
        else:
            writer.writerow(r.csv_row())
    return buf.getvalue()
