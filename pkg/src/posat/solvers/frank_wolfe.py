"""Frank-Wolfe solvers for the user equilibrium and the system optimum, and the
diagonalization loop for asymmetric costs."""

from __future__ import annotations

import logging
import warnings

import numpy as np

from ..costs import beckmann_potential, line_potential
from ..errors import MaxItersExceeded, NotSeparable
from ..network import Instance, PolynomialCost, aggregate_to_arcflow
from .report import EquilibriumReport
from .shortest import all_or_nothing

log = logging.getLogger(__name__)

DEFAULT_FW_TOL = 1e-8
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 50_000


def relative_gap(t: np.ndarray, v: np.ndarray, q: np.ndarray, mu: np.ndarray) -> float:
    """``(t.v - sum_w Q_w mu_w) / t.v``; zero when no time is spent at all."""
    tv = float(np.dot(t, v))
    lb = float(np.dot(q, mu))
    if tv <= 0.0:
        return 0.0
    return (tv - lb) / tv


def _line_search(direction_slope, z_scale: float, max_steps: int = 200) -> float:
    """Root of the nondecreasing slope g on [0, 1] by bisection."""
    g1 = direction_slope(1.0)
    if g1 <= 0.0:
        return 1.0
    target = 1e-12 * max(z_scale, 1e-300)
    lo, hi = 0.0, 1.0
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        g = direction_slope(mid)
        if abs(g) <= target:
            return mid
        if g < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-16:
            break
    return 0.5 * (lo + hi)


def _potential_fn(cost: PolynomialCost):
    if cost.separable:
        return lambda v: beckmann_potential(cost, v)
    if cost.integrable:
        return lambda v: line_potential(cost, v)
    raise NotSeparable(
        "Frank-Wolfe on a potential needs separable (or symmetric-Jacobian) costs; "
        "use solve_prue_diagonalization or solve_prue for asymmetric interactions"
    )


def _conjugate_weight(hess_v, prev_dir, aon_dir, aon_minus_prev) -> float:
    """Weight on the previous vertex that makes the new direction conjugate.

    ``hess_v`` applies the Hessian of the objective to an arc vector.
    Clamped to [0, 0.9999] so the direction never collapses onto the old one.
    """
    h = hess_v(aon_minus_prev)
    den = float(np.dot(prev_dir, h))
    if den == 0.0:
        return 0.0
    num = float(np.dot(prev_dir, hess_v(aon_dir)))
    return min(max(num / den, 0.0), 0.9999)


def _frank_wolfe(instance, price, slope_cost, objective, gap_fn, tol, max_iters, x0, method, check_descent, hessian=None):
    n_od, n_arcs = instance.n_od, instance.n_arcs
    if x0 is None:
        x, _ = all_or_nothing(instance, price(np.zeros(n_arcs)))
    else:
        x = np.array(x0, dtype=float)
    v = aggregate_to_arcflow(x)
    obj = objective(v)
    trace = []
    gap, mu = np.inf, np.zeros(n_od)
    converged = False
    s_prev = None  # previous search vertex (conjugate variant)
    it = 0
    for it in range(1, max_iters + 1):
        p = price(v)
        y, mu = all_or_nothing(instance, p)
        vy = aggregate_to_arcflow(y)
        gap = gap_fn(p, v, vy, mu)
        trace.append((it, gap, obj))
        if gap < -1e-12:
            log.debug("%s: negative gap %.3g at iteration %d", method, gap, it)
        if gap <= tol:
            converged = True
            break
        target = y
        if hessian is not None and s_prev is not None:
            hess = hessian(v)
            vs = aggregate_to_arcflow(s_prev)
            beta = _conjugate_weight(lambda u: hess @ u if hess.ndim == 2 else hess * u, vs - v, vy - v, vy - vs)
            if beta > 0.0:
                target = beta * s_prev + (1.0 - beta) * y
                if float(np.dot(p, aggregate_to_arcflow(target) - v)) >= 0.0:
                    target = y  # not a descent direction; plain step
        d = aggregate_to_arcflow(target) - v
        alpha = _line_search(lambda a: float(np.dot(slope_cost(v + a * d), d)), abs(float(np.dot(p, v))))
        if alpha <= 0.0:
            if target is y:
                break
            s_prev = None
            continue
        x += alpha * (target - x)
        s_prev = target
        v = aggregate_to_arcflow(x)
        new_obj = objective(v)
        if check_descent:
            assert new_obj <= obj + 1e-12 * max(1.0, abs(obj)), f"{method}: objective increased at iteration {it}"
        obj = new_obj
    if not converged:
        warnings.warn(f"{method}: relative gap {gap:.3g} after {it} iterations", MaxItersExceeded, stacklevel=3)
    t = instance.cost.times(v)
    return EquilibriumReport(
        x=x, v=v, Z=float(np.dot(t, v)), gap=max(float(gap), 0.0), iterations=it,
        converged=converged, mu=mu, method=method, trace=trace,
    )


def solve_prue_fw(
    instance: Instance,
    tol: float = DEFAULT_FW_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    x0: np.ndarray | None = None,
    conjugate: bool = True,
) -> EquilibriumReport:
    """User equilibrium by Frank-Wolfe on the Beckmann potential.

    The step is an exact line search (bisection on the directional
    derivative of the potential). Costs with a symmetric Jacobian are
    accepted too; their potential is the line integral of ``t``.
    With ``conjugate`` each search vertex is mixed with the previous one
    so successive directions are conjugate w.r.t. the Jacobian of ``t``
    (conjugate Frank-Wolfe); ``conjugate=False`` gives the textbook method.
    """
    cost = instance.cost
    potential = _potential_fn(cost)

    def gap_fn(p, v, vy, mu):
        return relative_gap(p, v, instance.q, mu)

    hessian = None
    if conjugate:
        hessian = cost.jacobian_diag if cost.separable else cost.jacobian
    return _frank_wolfe(
        instance, cost.times, cost.times, potential, gap_fn, tol, max_iters, x0,
        "prue-cfw" if conjugate else "prue-fw", True, hessian,
    )


def solve_so(
    instance: Instance,
    tol: float = DEFAULT_FW_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    x0: np.ndarray | None = None,
) -> EquilibriumReport:
    """System optimum by Frank-Wolfe on ``Z`` with marginal-cost prices.

    ``gap`` is the duality bound ``grad Z(v) . (v - y) / Z(v)``. For
    non-separable symmetric costs ``Z`` need not be convex, so the result
    is a stationary point only.
    """
    cost = instance.cost
    if not cost.integrable:
        raise NotSeparable("system optimum is only supported for separable or symmetric-Jacobian costs")

    def objective(v):
        return float(np.dot(cost.times(v), v))

    def gap_fn(p, v, vy, mu):
        z = objective(v)
        if z <= 0.0:
            return 0.0
        return float(np.dot(p, v - vy)) / z

    rep = _frank_wolfe(instance, cost.marginal, cost.marginal, objective, gap_fn, tol, max_iters, x0, "so-fw", cost.separable)
    return rep


def solve_prue_diagonalization(
    instance: Instance,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    inner_max_iters: int = 2000,
    step: str = "full",
) -> EquilibriumReport:
    """User equilibrium for asymmetric costs by diagonalization.

    Each outer iteration freezes cross-arc interactions at the current flow,
    solves the separable subproblem by Frank-Wolfe (warm started), and moves
    toward its solution. ``step="full"`` takes the subproblem solution
    and falls back to 1/k averaging once the gap stops decreasing;
    ``step="msa"`` always averages. The gap uses the full asymmetric costs.
    """
    if step not in ("full", "msa"):
        raise ValueError(f"unknown step rule {step!r}")
    cost = instance.cost
    n_arcs = instance.n_arcs
    x, _ = all_or_nothing(instance, cost.times(np.zeros(n_arcs)))
    v = aggregate_to_arcflow(x)
    averaging = step == "msa"
    k_avg = 1
    best = None
    rising = 0
    trace = []
    gap, mu = np.inf, np.zeros(instance.n_od)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        t = cost.times(v)
        _, mu = all_or_nothing(instance, t)
        gap = relative_gap(t, v, instance.q, mu)
        trace.append((it, gap, float(np.dot(t, v))))
        if best is None or gap < best[0]:
            best = (gap, x.copy(), mu.copy())
            rising = 0
        else:
            rising += 1
        if gap <= tol:
            converged = True
            break
        if not averaging and rising >= 3:
            log.debug("diagonalization: gap stalled at %.3g, switching to averaging", gap)
            averaging = True
            x = best[1].copy()
            v = aggregate_to_arcflow(x)
            continue
        sub = Instance(instance.network, instance.demands, cost.frozen(v))
        inner_tol = max(min(1e-3, 0.01 * gap), 0.01 * tol)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxItersExceeded)
            rep = solve_prue_fw(sub, tol=inner_tol, max_iters=inner_max_iters, x0=x)
        if averaging:
            k_avg += 1
            x = x + (rep.x - x) / k_avg
        else:
            x = rep.x
        v = aggregate_to_arcflow(x)
    if not converged:
        gap, x, mu = best
        v = aggregate_to_arcflow(x)
        warnings.warn(f"diagonalization: relative gap {gap:.3g} after {it} iterations", MaxItersExceeded, stacklevel=2)
    t = cost.times(v)
    return EquilibriumReport(
        x=x, v=v, Z=float(np.dot(t, v)), gap=max(float(gap), 0.0), iterations=it,
        converged=converged, mu=mu, method="prue-diagonalization", trace=trace,
    )
