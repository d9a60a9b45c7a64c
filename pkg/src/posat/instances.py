"""Instance generators, TNTP ingestion and random test instances."""

from __future__ import annotations

import csv
import logging
import math
import re
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    InvalidInstance,
    NegativeDegree,
    NegativeKappa,
    NoIntegerRatio,
    NonpositiveDemand,
    ParseError,
    UnknownNode,
    UnsupportedPower,
)
from .network import CostTerm, DemandTable, Instance, Network, PolynomialCost, separable_cost

log = logging.getLogger(__name__)


def _check_q(q: float) -> float:
    q = float(q)
    if not (math.isfinite(q) and q > 0):
        raise NonpositiveDemand(f"demand must be > 0, got {q!r}")
    return q


def gen_example1(q: float = 1.0) -> Instance:
    """Two parallel arcs, ``t_1 = 1`` and ``t_2 = 1 + v_2``."""
    q = _check_q(q)
    net = Network([1, 2], [(0, 1, 2), (1, 1, 2)])
    cost = separable_cost([[1.0], [1.0, 1.0]], degree=1)
    return Instance(net, DemandTable([(1, 2, q)]), cost, {"name": "example1", "Q": q})


def gen_example2(q: float = 1.0) -> Instance:
    """Two parallel arcs with identity costs ``t_a = v_a``."""
    q = _check_q(q)
    net = Network([1, 2], [(0, 1, 2), (1, 1, 2)])
    cost = separable_cost([[0.0, 1.0], [0.0, 1.0]], degree=1)
    return Instance(net, DemandTable([(1, 2, q)]), cost, {"name": "example2", "Q": q})


def gen_two_arc(q: float, coeffs1: Sequence[float], coeffs2: Sequence[float]) -> Instance:
    """Two parallel arcs with arbitrary separable polynomial costs."""
    q = _check_q(q)
    net = Network([1, 2], [(0, 1, 2), (1, 1, 2)])
    return Instance(net, DemandTable([(1, 2, q)]), separable_cost([coeffs1, coeffs2]), {"name": "two-arc", "Q": q})


# ---------------------------------------------------------------------------
# circular network
# ---------------------------------------------------------------------------


def circular_ratio(kappa: float, degree: int, ratio: str = "kappa", max_den: int = 1000) -> Fraction:
    """Smallest integers ``m/l`` for the circular construction.

    ``ratio="kappa"`` asks for ``m/l = 1 + kappa``. ``ratio="posat"`` asks
    for the clockwise/counterclockwise cost ratio ``(m/l)**(degree+1)`` to
    equal ``(1+kappa)**(degree+1)``; for integer degrees both give the
    same pair, the flag only records which target was meant.
    """
    if kappa < 0:
        raise NegativeKappa(f"kappa must be >= 0, got {kappa}")
    if degree < 1:
        raise NegativeDegree(f"circular network needs degree >= 1, got {degree}")
    if ratio == "kappa":
        target = 1.0 + kappa
    elif ratio == "posat":
        target = ((1.0 + kappa) ** (degree + 1)) ** (1.0 / (degree + 1))
    else:
        raise ValueError(f"unknown ratio convention {ratio!r}")
    frac = Fraction(target).limit_denominator(max_den)
    if abs(float(frac) - target) > 1e-9 * target:
        raise NoIntegerRatio(f"no m/l with l <= {max_den} matches {target!r} within 1e-9")
    return frac


def gen_circular(kappa: float, degree: int, ratio: str = "kappa") -> Instance:
    """Cycle of ``m + l`` nodes, two opposite arcs per edge, cost ``(v_a + v_rev)^n``.

    Clockwise arcs ``i -> i+1`` get ids ``0..N-1`` and counterclockwise arcs
    ``i+1 -> i`` ids ``N..2N-1``. OD ``i`` goes from node ``i`` to node
    ``i + m`` with unit demand.
    """
    frac = circular_ratio(kappa, degree, ratio)
    m, l = frac.numerator, frac.denominator
    if m < l:
        raise NoIntegerRatio("circular network needs m >= l (kappa >= 0)")
    n_nodes = m + l
    if n_nodes < 2:
        raise InvalidInstance("circular network needs at least two nodes")
    nodes = list(range(n_nodes))
    arcs = [(i, i, (i + 1) % n_nodes) for i in range(n_nodes)]
    arcs += [(n_nodes + i, (i + 1) % n_nodes, i) for i in range(n_nodes)]
    terms = []
    for a in range(2 * n_nodes):
        partner = a + n_nodes if a < n_nodes else a - n_nodes
        terms.append([CostTerm(degree, 1.0, ((a, 1.0), (partner, 1.0)))])
    cost = PolynomialCost(terms, degree=degree)
    demands = DemandTable((i, (i + m) % n_nodes, 1.0) for i in range(n_nodes))
    meta = {
        "name": "circular",
        "m": m,
        "l": l,
        "kappa_requested": float(kappa),
        "kappa_exact": m / l - 1.0,
        "ratio": ratio,
        "degree": degree,
    }
    return Instance(Network(nodes, arcs), demands, cost, meta)


def circular_clockwise_arcs(instance: Instance, w: int) -> list[int]:
    m, n_nodes = instance.metadata["m"], instance.network.n_nodes
    i = int(instance.od_origin[w])
    return [(i + j) % n_nodes for j in range(m)]


def circular_counter_arcs(instance: Instance, w: int) -> list[int]:
    l, n_nodes = instance.metadata["l"], instance.network.n_nodes
    i = int(instance.od_origin[w])
    # arc i-1 <- i ... ; counterclockwise arc for edge e is n_nodes + e
    return [n_nodes + (i - 1 - j) % n_nodes for j in range(l)]


def circular_lambda(instance: Instance, kappa: float) -> np.ndarray:
    """Multipliers making the clockwise strategy an equilibrium.

    ``1/(1+kappa)`` on each OD's clockwise path, 1 everywhere else.
    """
    lam = np.ones((instance.n_od, instance.n_arcs))
    for w in range(instance.n_od):
        lam[w, circular_clockwise_arcs(instance, w)] = 1.0 / (1.0 + kappa)
    return lam


def circular_strategy(instance: Instance, clockwise: bool = True) -> np.ndarray:
    """Class flow sending every unit demand clockwise (or counterclockwise)."""
    x = np.zeros((instance.n_od, instance.n_arcs))
    for w in range(instance.n_od):
        arcs = circular_clockwise_arcs(instance, w) if clockwise else circular_counter_arcs(instance, w)
        x[w, arcs] = instance.q[w]
    return x


# ---------------------------------------------------------------------------
# nine-node asymmetric network
# ---------------------------------------------------------------------------

# (tail, head, A, B, C); every arc also exists reversed with the same data
NINE_NODE_ARCS = (
    (1, 5, 12, 1.80, 5),
    (1, 6, 18, 2.70, 6),
    (2, 5, 35, 5.25, 3),
    (2, 6, 35, 5.25, 9),
    (5, 6, 20, 3.00, 9),
    (5, 7, 11, 1.65, 2),
    (5, 9, 26, 3.90, 8),
    (6, 8, 33, 4.95, 6),
    (6, 9, 30, 4.50, 8),
    (7, 3, 25, 3.75, 3),
    (7, 4, 24, 3.60, 6),
    (7, 8, 19, 2.85, 2),
    (8, 3, 39, 5.85, 8),
    (8, 4, 43, 6.45, 6),
    (9, 7, 26, 3.90, 4),
    (9, 8, 30, 4.50, 8),
)


def nine_node_parameters() -> list[tuple]:
    """All 32 directed rows ``(tail, head, A, B, C)``: forward arcs then reverses."""
    fwd = list(NINE_NODE_ARCS)
    return fwd + [(h, t, a, b, c) for t, h, a, b, c in fwd]


def default_nine_node_demands() -> DemandTable:
    """Externally sourced OD table shipped with the package (not derived here)."""
    text = resources.files("posat.data").joinpath("nine_node_demands.csv").read_text()
    return read_demands_csv_text(text)


def read_demands_csv_text(text: str) -> DemandTable:
    rows = [r for r in csv.reader(line for line in text.splitlines() if line.strip() and not line.startswith("#"))]
    if rows and rows[0][0].strip().lower() == "origin":
        rows = rows[1:]
    try:
        return DemandTable((int(o), int(d), float(q)) for o, d, q in rows)
    except ValueError as exc:
        raise ParseError(f"bad demand row ({exc})") from None


def read_demands_csv(path) -> DemandTable:
    return read_demands_csv_text(Path(path).read_text())


def gen_nine_node_asymmetric(demands: DemandTable | None = None, omega: float = 0.5) -> Instance:
    """Nine-node network with ``t_a = A + B ((omega v_rev + v_a) / C)^4``."""
    if demands is None:
        demands = default_nine_node_demands()
    rows = nine_node_parameters()
    arcs = [(i, t, h) for i, (t, h, *_rest) in enumerate(rows)]
    rev = {(t, h): i for i, (t, h, *_rest) in enumerate(rows)}
    terms = []
    for i, (t, h, a_, b_, c_) in enumerate(rows):
        j = rev[(h, t)]
        d = ((i, 1.0), (j, float(omega))) if omega else None
        terms.append([CostTerm(0, float(a_)), CostTerm(4, float(b_) / float(c_) ** 4, d)])
    net = Network(range(1, 10), arcs)
    for o, d, _ in demands.entries:
        if o not in net.node_index or d not in net.node_index:
            raise UnknownNode(f"demand references node outside 1..9: ({o!r}, {d!r})")
    return Instance(net, demands, PolynomialCost(terms, degree=4), {"name": "nine-node-asym", "omega": omega})


def make_asymmetric_variant(instance: Instance, omega: float = 0.5) -> Instance:
    """Replace each term's argument ``v_a`` by ``v_a + omega * v_rev(a)``.

    Arcs without a reverse arc stay separable and are listed in
    ``metadata["no_reverse_arcs"]``.
    """
    rev = instance.network.reverse_arc()
    meta = dict(instance.metadata)
    meta["omega"] = float(omega)
    missing = [int(a) for a in np.nonzero(rev < 0)[0]]
    if missing:
        meta["no_reverse_arcs"] = missing
        log.warning("%d arcs have no reverse arc and stay separable", len(missing))
    if omega == 0:
        return Instance(instance.network, instance.demands, instance.cost, meta)
    return Instance(instance.network, instance.demands, instance.cost.with_interaction(rev, omega), meta)


# ---------------------------------------------------------------------------
# TNTP
# ---------------------------------------------------------------------------

_TAG = re.compile(r"<([^>]+)>\s*(.*)")


def _strip(line: str) -> str:
    i = line.find("~")
    return (line if i < 0 else line[:i]).strip()


def _read_net(path):
    meta = {}
    rows = []
    in_body = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = _strip(raw)
            if not line:
                continue
            if not in_body:
                m = _TAG.match(line)
                if m is None:
                    raise ParseError(f"unexpected header line {line!r}", lineno, path)
                tag, value = m.group(1).strip().upper(), m.group(2).strip()
                if tag == "END OF METADATA":
                    in_body = True
                else:
                    meta[tag] = value
                continue
            fields = line.rstrip(";").split()
            if len(fields) < 7:
                raise ParseError(f"expected at least 7 columns, got {len(fields)}", lineno, path)
            try:
                init, term = int(fields[0]), int(fields[1])
                cap, length, fft, bcoef = (float(f) for f in fields[2:6])
                power = float(fields[6])
            except ValueError as exc:
                raise ParseError(str(exc), lineno, path) from None
            if power < 0 or power != int(power):
                raise UnsupportedPower(f"power {fields[6]} is not a nonnegative integer", lineno, path)
            if cap <= 0 and bcoef != 0:
                raise ParseError(f"capacity must be > 0, got {cap}", lineno, path)
            if fft < 0 or bcoef < 0:
                raise ParseError("free-flow time and B must be nonnegative", lineno, path)
            rows.append((init, term, cap, length, fft, bcoef, int(power)))
    if not in_body:
        raise ParseError("missing <END OF METADATA>", None, path)
    return meta, rows


def _read_trips(path):
    meta = {}
    entries = []
    origin = None
    in_body = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = _strip(raw)
            if not line:
                continue
            if not in_body:
                m = _TAG.match(line)
                if m is not None:
                    tag, value = m.group(1).strip().upper(), m.group(2).strip()
                    if tag == "END OF METADATA":
                        in_body = True
                    else:
                        meta[tag] = value
                    continue
                in_body = True
            if line.lower().startswith("origin"):
                try:
                    origin = int(line.split()[1])
                except (IndexError, ValueError):
                    raise ParseError(f"bad origin line {line!r}", lineno, path) from None
                continue
            if origin is None:
                raise ParseError("destination entries before any 'Origin' line", lineno, path)
            for item in line.split(";"):
                item = item.strip()
                if not item:
                    continue
                parts = item.split(":")
                if len(parts) != 2:
                    raise ParseError(f"bad entry {item!r}", lineno, path)
                try:
                    entries.append((origin, int(parts[0]), float(parts[1])))
                except ValueError:
                    raise ParseError(f"bad entry {item!r}", lineno, path) from None
    return meta, entries


def load_tntp(net_file, trips_file) -> Instance:
    """Read a TNTP net/trips pair into an instance with BPR costs.

    ``t = fft (1 + B (v/cap)^power)`` becomes the separable polynomial
    ``b_0 = fft``, ``b_power = fft B / cap^power``. Zero and intrazonal
    demand entries are skipped; their counts land in the metadata.
    """
    net_meta, rows = _read_net(net_file)
    trip_meta, entries = _read_trips(trips_file)
    n_nodes = int(net_meta.get("NUMBER OF NODES", 0)) or max(max(r[0], r[1]) for r in rows)
    if "NUMBER OF LINKS" in net_meta and int(net_meta["NUMBER OF LINKS"]) != len(rows):
        raise ParseError(
            f"header declares {net_meta['NUMBER OF LINKS']} links, file has {len(rows)}", None, net_file
        )
    nodes = list(range(1, n_nodes + 1))
    arcs = [(i, r[0], r[1]) for i, r in enumerate(rows)]
    terms = []
    degree = 0
    for init, term, cap, length, fft, bcoef, power in rows:
        arc_terms = [CostTerm(0, fft)]
        if bcoef != 0 and fft != 0:
            arc_terms.append(CostTerm(power, fft * bcoef / cap**power))
            degree = max(degree, power)
        terms.append(arc_terms)
    listed = len(entries)
    intrazonal = [(o, d, q) for o, d, q in entries if o == d and q > 0]
    kept = [(o, d, q) for o, d, q in entries if q > 0 and o != d]
    total = float(trip_meta.get("TOTAL OD FLOW", "nan"))
    meta = {
        "name": Path(net_file).stem,
        "nodes": n_nodes,
        "arcs": len(rows),
        "od_entries_listed": listed,
        "od_pairs_positive": len(kept),
        "intrazonal_skipped": len(intrazonal),
        "total_od_flow_header": total,
        "first_thru_node": int(net_meta.get("FIRST THRU NODE", 1)),
    }
    if math.isfinite(total) and abs(total - sum(q for *_x, q in kept)) > 1e-6 * max(1.0, total):
        log.warning("trips header total %.6g differs from the sum of entries", total)
    cost = PolynomialCost(terms, degree=degree)
    return Instance(Network(nodes, arcs), DemandTable(kept), cost, meta)


def load_sioux_falls() -> Instance:
    data = resources.files("posat.data")
    with resources.as_file(data.joinpath("SiouxFalls_net.tntp")) as net, resources.as_file(
        data.joinpath("SiouxFalls_trips.tntp")
    ) as trips:
        return load_tntp(net, trips)


# ---------------------------------------------------------------------------
# random instances (tests and property checks)
# ---------------------------------------------------------------------------


def random_instance(
    rng: np.random.Generator,
    max_nodes: int = 6,
    max_arcs: int = 10,
    degree: int | None = None,
    max_od: int = 3,
    monomial: bool = False,
    zero_free: bool = False,
) -> Instance:
    """Random connected separable instance with nonnegative polynomial costs.

    Every arc gets a top-degree coefficient > 0. ``monomial`` keeps only
    the top-degree term; ``zero_free`` forces a positive constant term.
    """
    if degree is None:
        degree = int(rng.integers(1, 5))
    n_nodes = int(rng.integers(2, max_nodes + 1))
    order = list(range(n_nodes))
    arcs = []
    # a Hamiltonian path keeps every later node reachable from the first
    for i in range(n_nodes - 1):
        arcs.append((order[i], order[i + 1]))
    n_arcs = int(rng.integers(len(arcs), max_arcs + 1))
    while len(arcs) < n_arcs:
        t, h = rng.choice(n_nodes, size=2, replace=False)
        arcs.append((int(t), int(h)))
    coeffs = []
    for _ in arcs:
        c = np.zeros(degree + 1)
        c[degree] = rng.uniform(0.1, 2.0)
        if not monomial:
            for m in range(degree):
                if rng.random() < 0.5:
                    c[m] = rng.uniform(0.0, 2.0)
            if zero_free:
                c[0] = rng.uniform(0.1, 2.0)
        coeffs.append(c.tolist())
    net = Network(range(n_nodes), [(i, t, h) for i, (t, h) in enumerate(arcs)])
    # reachable pairs
    pairs = []
    for o in range(n_nodes):
        seen = {o}
        stack = [o]
        while stack:
            i = stack.pop()
            for a in net.out_arcs[i]:
                j = int(net.head[a])
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        pairs += [(o, d) for d in sorted(seen) if d != o]
    k = int(rng.integers(1, min(max_od, len(pairs)) + 1))
    pick = rng.choice(len(pairs), size=k, replace=False)
    demands = DemandTable((pairs[i][0], pairs[i][1], float(rng.uniform(0.5, 3.0))) for i in sorted(pick))
    return Instance(net, demands, separable_cost(coeffs, degree=degree), {"name": "random"})
