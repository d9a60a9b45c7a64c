"""Network, demand and cost data model plus flow-space transformations.

Flows use three interchangeable shapes:

* arc flow ``v``: float array of length ``n_arcs``
* class flow ``x``: float array of shape ``(n_od, n_arcs)``, one row per OD pair
* path flow: :class:`PathFlow`, a list of ``(od, arc-id path, flow)`` entries

Node ids are arbitrary hashables (ints in every bundled instance); arcs are
addressed by their dense integer id everywhere.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CyclicResidual,
    InvalidInstance,
    NegativeKappa,
    NonpositiveDemand,
    PathNotConnected,
    UnknownNode,
)

# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Network:
    """Directed graph with dense arc ids ``0..n_arcs-1``."""

    nodes: tuple
    arcs: tuple  # ((arc_id, tail, head), ...) sorted by arc id

    def __init__(self, nodes: Iterable, arcs: Iterable[Sequence]):
        nodes = tuple(nodes)
        index = {}
        for i, n in enumerate(nodes):
            if n in index:
                raise InvalidInstance(f"duplicate node id {n!r}")
            index[n] = i
        arcs = tuple(sorted((int(a[0]), a[1], a[2]) for a in arcs))
        ids = [a[0] for a in arcs]
        if ids != list(range(len(arcs))):
            raise InvalidInstance("arc ids must be unique and dense 0..|A|-1")
        tails, heads = [], []
        for aid, t, h in arcs:
            if t not in index or h not in index:
                raise UnknownNode(f"arc {aid} references unknown node ({t!r}, {h!r})")
            if t == h:
                raise InvalidInstance(f"arc {aid} is a self-loop on node {t!r}")
            tails.append(index[t])
            heads.append(index[h])
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "arcs", arcs)
        object.__setattr__(self, "node_index", index)
        object.__setattr__(self, "tail", np.array(tails, dtype=np.int64))
        object.__setattr__(self, "head", np.array(heads, dtype=np.int64))
        # plain lists for the pure-Python graph loops
        object.__setattr__(self, "tail_list", tails)
        object.__setattr__(self, "head_list", heads)
        out_arcs = [[] for _ in nodes]
        in_arcs = [[] for _ in nodes]
        for aid in range(len(arcs)):
            out_arcs[tails[aid]].append(aid)
            in_arcs[heads[aid]].append(aid)
        object.__setattr__(self, "out_arcs", tuple(tuple(a) for a in out_arcs))
        object.__setattr__(self, "in_arcs", tuple(tuple(a) for a in in_arcs))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)

    def index_of(self, node) -> int:
        try:
            return self.node_index[node]
        except KeyError:
            raise UnknownNode(f"unknown node {node!r}") from None

    def reverse_arc(self) -> np.ndarray:
        """Opposite-direction arc id for every arc, -1 where none exists.

        With parallel arcs the first (smallest id) reverse arc is taken.
        """
        lookup: dict[tuple[int, int], int] = {}
        for a in range(self.n_arcs):
            lookup.setdefault((int(self.tail[a]), int(self.head[a])), a)
        return np.array(
            [lookup.get((int(self.head[a]), int(self.tail[a])), -1) for a in range(self.n_arcs)],
            dtype=np.int64,
        )


@dataclass(frozen=True)
class DemandTable:
    """OD pairs indexed by position: entry ``w`` is ``(origin, dest, Q_w)``."""

    entries: tuple

    def __init__(self, entries: Iterable[Sequence]):
        entries = tuple((e[0], e[1], float(e[2])) for e in entries)
        seen = set()
        for w, (o, d, q) in enumerate(entries):
            if not (math.isfinite(q) and q > 0):
                raise NonpositiveDemand(f"OD {w} ({o!r} -> {d!r}) has demand {q!r}; must be > 0")
            if o == d:
                raise InvalidInstance(f"OD {w} has origin == destination ({o!r})")
            if (o, d) in seen:
                raise InvalidInstance(f"duplicate OD pair ({o!r}, {d!r})")
            seen.add((o, d))
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def q(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=float)

    @property
    def origins(self) -> list:
        return [e[0] for e in self.entries]

    @property
    def dests(self) -> list:
        return [e[1] for e in self.entries]

    def scaled(self, factor: float) -> "DemandTable":
        return DemandTable((o, d, q * factor) for o, d, q in self.entries)


# ---------------------------------------------------------------------------
# polynomial costs
# ---------------------------------------------------------------------------


def ipow(base: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Elementwise ``base**m`` for small nonnegative integer ``m`` by repeated products."""
    out = np.ones_like(base)
    top = int(m.max()) if m.size else 0
    for k in range(1, top + 1):
        out = np.where(m >= k, out * base, out)
    return out


@dataclass(frozen=True)
class CostTerm:
    """One term ``b * (d . v)**m`` of an arc travel-time polynomial.

    ``d`` is a tuple of ``(arc, weight)`` pairs; ``None`` means the unit
    vector on the owning arc.
    """

    m: int
    b: float
    d: tuple | None = None


class PolynomialCost:
    """Arc travel times ``t_a(v) = sum_m b_am (d_am . v)**m`` with nonnegative data.

    Terms are flattened into arrays so evaluation is vectorised over all arcs.
    """

    def __init__(self, terms: Sequence[Sequence[CostTerm]], degree: int | None = None):
        n_arcs = len(terms)
        term_arc, term_m, term_b, ptr, idx, wts, self_w = [], [], [], [0], [], [], []
        frozen_terms = []
        separable = True
        for a, arc_terms in enumerate(terms):
            kept = []
            for term in arc_terms:
                m, b = int(term.m), float(term.b)
                if m < 0:
                    raise InvalidInstance(f"arc {a}: negative exponent {m}")
                if not (math.isfinite(b) and b >= 0):
                    raise InvalidInstance(f"arc {a}: coefficient b={b!r} must be finite and >= 0")
                if term.d is None:
                    d = ((a, 1.0),)
                else:
                    agg: dict[int, float] = {}
                    for e, w in term.d:
                        e, w = int(e), float(w)
                        if not 0 <= e < n_arcs:
                            raise InvalidInstance(f"arc {a}: interaction references unknown arc {e}")
                        if not (math.isfinite(w) and w >= 0):
                            raise InvalidInstance(f"arc {a}: interaction weight {w!r} must be >= 0")
                        agg[e] = agg.get(e, 0.0) + w
                    d = tuple(sorted(agg.items()))
                    if not d:
                        raise InvalidInstance(f"arc {a}: empty interaction vector")
                unit = d == ((a, 1.0),)
                if m > 0 and b > 0 and not unit:
                    separable = False
                kept.append(CostTerm(m, b, None if unit else d))
                term_arc.append(a)
                term_m.append(m)
                term_b.append(b)
                for e, w in d:
                    idx.append(e)
                    wts.append(w)
                ptr.append(len(idx))
                self_w.append(dict(d).get(a, 0.0))
            frozen_terms.append(tuple(kept))
        max_m = max((m for m, b in zip(term_m, term_b) if b > 0), default=0)
        if degree is None:
            degree = max_m
        elif degree < max_m:
            raise InvalidInstance(f"declared degree {degree} below highest term degree {max_m}")
        self.terms = tuple(frozen_terms)
        self.degree = int(degree)
        self.n_arcs = n_arcs
        self.separable = separable
        self.term_arc = np.array(term_arc, dtype=np.int64)
        self.term_m = np.array(term_m, dtype=np.int64)
        self.term_b = np.array(term_b, dtype=float)
        self.d_ptr = np.array(ptr, dtype=np.int64)
        self.d_idx = np.array(idx, dtype=np.int64)
        self.d_w = np.array(wts, dtype=float)
        self.term_self = np.array(self_w, dtype=float)
        self.entry_term = np.repeat(np.arange(len(term_arc)), np.diff(self.d_ptr))
        self._integrable: bool | None = None

    # -- evaluation ---------------------------------------------------------

    def args(self, v: np.ndarray) -> np.ndarray:
        """Per-term argument ``d_am . v``."""
        if self.separable or self.term_arc.size == 0:
            return v[self.term_arc]
        return np.bincount(self.entry_term, weights=self.d_w * v[self.d_idx], minlength=self.term_arc.size)

    def times(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        a = self.args(v)
        return np.bincount(self.term_arc, weights=self.term_b * ipow(a, self.term_m), minlength=self.n_arcs)

    def _slopes(self, v: np.ndarray) -> np.ndarray:
        # b * m * arg**(m-1) per term
        a = self.args(v)
        m = self.term_m
        return self.term_b * m * ipow(a, np.maximum(m - 1, 0)) * (m > 0)

    def jacobian_diag(self, v: np.ndarray) -> np.ndarray:
        """``dt_a / dv_a`` for every arc."""
        return np.bincount(self.term_arc, weights=self._slopes(v) * self.term_self, minlength=self.n_arcs)

    def jacobian(self, v: np.ndarray) -> np.ndarray:
        """Dense Jacobian ``J[a, e] = dt_a / dv_e``."""
        s = self._slopes(v)
        J = np.zeros((self.n_arcs, self.n_arcs))
        np.add.at(J, (self.term_arc[self.entry_term], self.d_idx), s[self.entry_term] * self.d_w)
        return J

    def marginal(self, v: np.ndarray) -> np.ndarray:
        """Gradient of ``Z(v) = sum_a t_a(v) v_a``."""
        v = np.asarray(v, dtype=float)
        s = self._slopes(v) * v[self.term_arc]
        cross = np.bincount(self.d_idx, weights=s[self.entry_term] * self.d_w, minlength=self.n_arcs)
        return self.times(v) + cross

    # -- structure ----------------------------------------------------------

    @property
    def integrable(self) -> bool:
        """True when the Jacobian is symmetric, so a Beckmann-type potential exists."""
        if self._integrable is None:
            if self.separable:
                self._integrable = True
            else:
                rng = np.random.default_rng(12345)
                ok = True
                for _ in range(3):
                    J = self.jacobian(rng.uniform(0.1, 1.1, self.n_arcs))
                    scale = max(np.abs(J).max(), 1e-300)
                    if np.abs(J - J.T).max() > 1e-9 * scale:
                        ok = False
                        break
                self._integrable = ok
        return self._integrable

    def frozen(self, v_bar: np.ndarray) -> "PolynomialCost":
        """Separable cost with every cross-arc interaction frozen at ``v_bar``.

        A term ``b (s v_a + c)**m`` with ``c`` the frozen cross contribution is
        expanded binomially, so the result has nonnegative coefficients.
        """
        v_bar = np.asarray(v_bar, dtype=float)
        out: list[dict[int, float]] = [dict() for _ in range(self.n_arcs)]
        cross_all = self.args(v_bar) - self.term_self * v_bar[self.term_arc]
        for k in range(self.term_arc.size):
            a, m, b = int(self.term_arc[k]), int(self.term_m[k]), float(self.term_b[k])
            s, c = float(self.term_self[k]), max(float(cross_all[k]), 0.0)
            for j in range(m + 1):
                coef = b * math.comb(m, j) * s**j * c ** (m - j)
                if coef != 0.0 or j == 0:
                    out[a][j] = out[a].get(j, 0.0) + coef
        terms = [[CostTerm(j, b) for j, b in sorted(d.items())] for d in out]
        return PolynomialCost(terms, degree=self.degree)

    def with_interaction(self, reverse: np.ndarray, weight: float) -> "PolynomialCost":
        """Replace each argument ``v_a`` by ``v_a + weight * v_rev(a)`` (separable input)."""
        terms = []
        for a, arc_terms in enumerate(self.terms):
            new = []
            for t in arc_terms:
                if t.d is not None:
                    raise InvalidInstance("with_interaction expects a separable cost")
                r = int(reverse[a])
                if r >= 0 and weight != 0.0 and t.m > 0:
                    new.append(CostTerm(t.m, t.b, ((a, 1.0), (r, float(weight)))))
                else:
                    new.append(t)
            terms.append(new)
        return PolynomialCost(terms, degree=self.degree)

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        arcs = []
        for arc_terms in self.terms:
            out = []
            for t in arc_terms:
                item: dict[str, Any] = {"m": t.m, "b": t.b}
                if t.d is not None:
                    item["d"] = [{"arc": e, "w": w} for e, w in t.d]
                out.append(item)
            arcs.append({"terms": out})
        return {"degree": self.degree, "arcs": arcs}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PolynomialCost":
        terms = []
        for arc in data["arcs"]:
            arc_terms = []
            for t in arc.get("terms", []):
                d = t.get("d")
                if d is not None:
                    d = tuple((int(e["arc"]), float(e["w"])) for e in d)
                arc_terms.append(CostTerm(int(t["m"]), float(t["b"]), d))
            terms.append(arc_terms)
        return cls(terms, degree=data.get("degree"))

    def __eq__(self, other) -> bool:
        return isinstance(other, PolynomialCost) and self.terms == other.terms and self.degree == other.degree

    def __repr__(self) -> str:
        kind = "separable" if self.separable else "asymmetric"
        return f"PolynomialCost(n_arcs={self.n_arcs}, degree={self.degree}, {kind})"


def separable_cost(coeffs: Sequence[Sequence[float]], degree: int | None = None) -> PolynomialCost:
    """Build a separable cost from per-arc coefficient lists ``[b_a0, b_a1, ...]``."""
    return PolynomialCost([[CostTerm(m, b) for m, b in enumerate(c)] for c in coeffs], degree=degree)


# ---------------------------------------------------------------------------
# instance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    network: Network
    demands: DemandTable
    cost: PolynomialCost
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.cost.n_arcs != self.network.n_arcs:
            raise InvalidInstance(
                f"cost defines {self.cost.n_arcs} arcs, network has {self.network.n_arcs}"
            )
        o = np.array([self.network.index_of(e[0]) for e in self.demands.entries], dtype=np.int64)
        d = np.array([self.network.index_of(e[1]) for e in self.demands.entries], dtype=np.int64)
        object.__setattr__(self, "od_origin", o)
        object.__setattr__(self, "od_dest", d)
        object.__setattr__(self, "q", self.demands.q)

    @property
    def n_od(self) -> int:
        return len(self.demands)

    @property
    def n_arcs(self) -> int:
        return self.network.n_arcs

    @property
    def degree(self) -> int:
        return self.cost.degree

    def node_balance(self) -> np.ndarray:
        """Required ``outflow - inflow`` per (OD, node): ``+Q`` at origin, ``-Q`` at destination."""
        b = np.zeros((self.n_od, self.network.n_nodes))
        rows = np.arange(self.n_od)
        b[rows, self.od_origin] += self.q
        b[rows, self.od_dest] -= self.q
        return b

    def to_dict(self) -> dict:
        net = self.network
        out = {
            "nodes": list(net.nodes),
            "arcs": [{"id": a, "tail": t, "head": h} for a, t, h in net.arcs],
            "demands": [{"origin": o, "dest": d, "q": q} for o, d, q in self.demands.entries],
            "costs": self.cost.to_dict(),
        }
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Instance":
        try:
            network = Network(data["nodes"], [(a["id"], a["tail"], a["head"]) for a in data["arcs"]])
            demands = DemandTable((d["origin"], d["dest"], d["q"]) for d in data["demands"])
            cost = PolynomialCost.from_dict(data["costs"])
        except KeyError as exc:
            raise InvalidInstance(f"instance JSON missing field {exc}") from None
        return cls(network, demands, cost, dict(data.get("metadata", {})))


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance.to_dict(), indent=1) + "\n")


def load_instance(path) -> Instance:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInstance(f"{path}: invalid JSON ({exc})") from None
    return Instance.from_dict(data)


def scale_demands(instance: Instance, factor: float) -> Instance:
    """Copy of ``instance`` with every demand multiplied by ``factor = 1 + kappa``."""
    if factor < 1.0:
        raise NegativeKappa(f"scaling factor {factor} implies kappa < 0")
    meta = dict(instance.metadata)
    meta["demand_scale"] = meta.get("demand_scale", 1.0) * factor
    return Instance(instance.network, instance.demands.scaled(factor), instance.cost, meta)


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathFlow:
    """Path flows as ``(od, arcs, flow)`` entries.

    ``cycle_flow`` is only set by :func:`decompose_to_paths` and records the
    largest class-flow residual that sat on cycles and was dropped.
    """

    entries: tuple
    cycle_flow: float = 0.0

    def __init__(self, entries: Iterable[Sequence], cycle_flow: float = 0.0):
        object.__setattr__(
            self, "entries", tuple((int(w), tuple(int(a) for a in p), float(f)) for w, p, f in entries)
        )
        object.__setattr__(self, "cycle_flow", float(cycle_flow))

    def as_dict(self) -> dict[tuple[int, tuple], float]:
        out: dict[tuple[int, tuple], float] = {}
        for w, p, f in self.entries:
            out[(w, p)] = out.get((w, p), 0.0) + f
        return out

    def od_totals(self, n_od: int) -> np.ndarray:
        tot = np.zeros(n_od)
        for w, _, f in self.entries:
            tot[w] += f
        return tot

    def scaled(self, factor: float) -> "PathFlow":
        return PathFlow(((w, p, f * factor) for w, p, f in self.entries), self.cycle_flow * factor)


def aggregate_to_arcflow(x: np.ndarray) -> np.ndarray:
    """``v_a = sum_w x^w_a``, summed in OD order."""
    x = np.asarray(x, dtype=float)
    v = np.zeros(x.shape[1])
    for row in x:
        v += row
    return v


def conservation_residual(instance: Instance, x: np.ndarray) -> np.ndarray:
    """Per (OD, node) violation of ``outflow - inflow = balance``."""
    net = instance.network
    n = net.n_nodes
    out = np.zeros((instance.n_od, n))
    for w in range(instance.n_od):
        out[w] = np.bincount(net.tail, weights=x[w], minlength=n) - np.bincount(net.head, weights=x[w], minlength=n)
    return out - instance.node_balance()


def check_classflow(instance: Instance, x: np.ndarray, rtol: float = 1e-9) -> None:
    """Raise ``InvalidInstance`` unless ``x`` is a nonnegative member of X."""
    x = np.asarray(x, dtype=float)
    if x.shape != (instance.n_od, instance.n_arcs):
        raise InvalidInstance(f"class flow has shape {x.shape}, expected {(instance.n_od, instance.n_arcs)}")
    tol = rtol * np.maximum(1.0, instance.q)
    if (x < -tol[:, None]).any():
        raise InvalidInstance("class flow has negative entries")
    res = np.abs(conservation_residual(instance, x)).max(axis=1)
    bad = np.nonzero(res > tol)[0]
    if bad.size:
        w = int(bad[0])
        raise InvalidInstance(f"class flow violates conservation for OD {w} (residual {res[w]:.3g})")


def _walk(instance: Instance, w: int, path: Sequence[int]) -> None:
    net = instance.network
    node = int(instance.od_origin[w])
    for a in path:
        if not 0 <= a < net.n_arcs or int(net.tail[a]) != node:
            raise PathNotConnected(f"OD {w}: path {tuple(path)} breaks at arc {a}")
        node = int(net.head[a])
    if node != int(instance.od_dest[w]):
        raise PathNotConnected(f"OD {w}: path {tuple(path)} does not end at the destination")


def paths_to_classflow(instance: Instance, f: PathFlow) -> np.ndarray:
    """``x^w_a = sum_{p in P_w} delta^p_a f_p``."""
    x = np.zeros((instance.n_od, instance.n_arcs))
    for w, p, flow in f.entries:
        _walk(instance, w, p)
        for a in p:
            x[w, a] += flow
    return x


def paths_to_arcflow(instance: Instance, f: PathFlow) -> np.ndarray:
    v = np.zeros(instance.n_arcs)
    for w, p, flow in f.entries:
        _walk(instance, w, p)
        for a in p:
            v[a] += flow
    return v


def _extract_path(net: Network, residual: np.ndarray, origin: int, dest: int, tol: float):
    """Minimum-hop path on arcs with residual > tol, lexicographically smallest arc ids."""
    live = residual > tol
    hops = np.full(net.n_nodes, -1)
    hops[dest] = 0
    queue = deque([dest])
    while queue:
        j = queue.popleft()
        for a in net.in_arcs[j]:
            i = int(net.tail[a])
            if live[a] and hops[i] < 0:
                hops[i] = hops[j] + 1
                queue.append(i)
    if hops[origin] < 0:
        return None
    path = []
    node = origin
    while node != dest:
        for a in net.out_arcs[node]:  # sorted by arc id
            if live[a] and hops[int(net.head[a])] == hops[node] - 1:
                path.append(a)
                node = int(net.head[a])
                break
    return path


def decompose_to_paths(instance: Instance, x: np.ndarray, tol: float | None = None) -> PathFlow:
    """One deterministic path decomposition of class flow ``x``.

    Paths are pulled off greedily (minimum hop count, then smallest arc ids)
    on arcs carrying more than ``tol``; whatever is left on cycles is dropped
    and reported through ``cycle_flow`` and a :class:`CyclicResidual` warning.
    """
    x = np.asarray(x, dtype=float)
    net = instance.network
    entries = []
    cycle = 0.0
    for w in range(instance.n_od):
        t = tol if tol is not None else 1e-9 * max(1.0, instance.q[w])
        r = x[w].copy()
        o, d = int(instance.od_origin[w]), int(instance.od_dest[w])
        while True:
            path = _extract_path(net, r, o, d, t)
            if path is None:
                break
            flow = float(r[path].min())
            r[path] -= flow
            r[path[int(np.argmin(r[path]))]] = 0.0  # exact zero on the bottleneck
            entries.append((w, tuple(path), flow))
        left = float(r[r > t].max()) if (r > t).any() else 0.0
        cycle = max(cycle, left)
    if cycle > 0.0:
        warnings.warn(f"dropped residual cycle flow up to {cycle:.3g}", CyclicResidual, stacklevel=2)
    return PathFlow(entries, cycle_flow=cycle)


def write_classflow_csv(x: np.ndarray, path=None) -> str:
    """Sparse ``od,arc,flow`` rows for the nonzero entries of a class flow."""
    lines = ["od,arc,flow"]
    for w, a in zip(*np.nonzero(x)):
        lines.append(f"{w},{a},{x[w, a]:.12g}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def read_classflow_csv(instance: Instance, path) -> np.ndarray:
    x = np.zeros((instance.n_od, instance.n_arcs))
    with open(path) as fh:
        header = fh.readline().strip().lower().replace(" ", "")
        if header != "od,arc,flow":
            raise InvalidInstance(f"{path}: expected header 'od,arc,flow', got {header!r}")
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                w, a, f = line.split(",")
                w, a, f = int(w), int(a), float(f)
            except ValueError:
                raise InvalidInstance(f"{path}:{lineno}: bad row {line.strip()!r}") from None
            if not (0 <= w < instance.n_od and 0 <= a < instance.n_arcs):
                raise InvalidInstance(f"{path}:{lineno}: OD {w} / arc {a} out of range")
            x[w, a] += f
    return x
