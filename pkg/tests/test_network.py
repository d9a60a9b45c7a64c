from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posat.errors import (
    CyclicResidual,
    InvalidInstance,
    NegativeKappa,
    NonpositiveDemand,
    PathNotConnected,
    UnknownNode,
)
from posat.instances import circular_counter_arcs, circular_strategy, gen_circular, gen_example1, gen_example2, random_instance
from posat.network import (
    CostTerm,
    DemandTable,
    Instance,
    Network,
    PathFlow,
    PolynomialCost,
    aggregate_to_arcflow,
    check_classflow,
    conservation_residual,
    decompose_to_paths,
    load_instance,
    paths_to_classflow,
    read_classflow_csv,
    save_instance,
    scale_demands,
    separable_cost,
    write_classflow_csv,
)
from posat.solvers import all_or_nothing


def diamond():
    # 1 -> 2 -> 4, 1 -> 3 -> 4, plus 2 -> 3
    net = Network([1, 2, 3, 4], [(0, 1, 2), (1, 1, 3), (2, 2, 4), (3, 3, 4), (4, 2, 3)])
    cost = separable_cost([[1.0, 1.0]] * 5)
    return Instance(net, DemandTable([(1, 4, 5.0)]), cost)


# ---------------------------------------------------------------------------
# validation


def test_network_rejects_bad_arcs():
    with pytest.raises(InvalidInstance):
        Network([1, 2], [(0, 1, 1)])  # self-loop
    with pytest.raises(InvalidInstance):
        Network([1, 2], [(0, 1, 2), (2, 2, 1)])  # ids not dense
    with pytest.raises(InvalidInstance):
        Network([1, 2], [(0, 1, 2), (0, 2, 1)])  # duplicate id
    with pytest.raises((InvalidInstance, UnknownNode)):
        Network([1, 2], [(0, 1, 3)])


def test_demand_table_validation():
    with pytest.raises(NonpositiveDemand):
        DemandTable([(1, 2, 0.0)])
    with pytest.raises(NonpositiveDemand):
        DemandTable([(1, 2, float("nan"))])
    with pytest.raises(InvalidInstance):
        DemandTable([(1, 1, 1.0)])
    with pytest.raises(InvalidInstance):
        DemandTable([(1, 2, 1.0), (1, 2, 2.0)])


def test_negative_coefficients_rejected():
    with pytest.raises(InvalidInstance):
        separable_cost([[1.0, -1.0]])
    with pytest.raises(InvalidInstance):
        PolynomialCost([[CostTerm(1, 1.0, ((0, -0.5),))]])


def test_separable_flag():
    assert separable_cost([[1.0, 2.0], [0.0, 1.0]]).separable
    unit = PolynomialCost([[CostTerm(2, 1.0, ((0, 1.0),))], [CostTerm(1, 1.0)]])
    assert unit.separable
    inter = PolynomialCost([[CostTerm(1, 1.0, ((0, 1.0), (1, 0.5)))], [CostTerm(1, 1.0)]])
    assert not inter.separable


def test_instance_rejects_unknown_od_node():
    net = Network([1, 2], [(0, 1, 2)])
    with pytest.raises((InvalidInstance, UnknownNode)):
        Instance(net, DemandTable([(1, 9, 1.0)]), separable_cost([[1.0]]))


def test_instance_json_roundtrip(tmp_path):
    inst = gen_circular(0.5, 3)
    path = tmp_path / "c.json"
    save_instance(inst, path)
    back = load_instance(path)
    assert back.network.arcs == inst.network.arcs
    assert back.demands.entries == inst.demands.entries
    assert back.cost == inst.cost
    v = np.linspace(0.0, 2.0, inst.n_arcs)
    assert np.array_equal(back.cost.times(v), inst.cost.times(v))


# ---------------------------------------------------------------------------
# aggregate / paths


def test_aggregate_zero_and_additivity():
    assert np.array_equal(aggregate_to_arcflow(np.zeros((3, 5))), np.zeros(5))
    x = np.zeros((2, 5))
    x[:, 3] = 1.0
    assert aggregate_to_arcflow(x)[3] == 2.0


def test_circular_counterclockwise_load():
    inst = gen_circular(1.5, 2)  # m/l = 5/2
    m, l = inst.metadata["m"], inst.metadata["l"]
    x = circular_strategy(inst, clockwise=False)
    v = aggregate_to_arcflow(x)
    n = inst.network.n_nodes
    assert np.allclose(v[n:], l)
    assert np.allclose(v[:n], 0.0)
    assert (m, l) == (5, 2)
    assert sorted({a for w in range(inst.n_od) for a in circular_counter_arcs(inst, w)}) == list(range(n, 2 * n))


def test_paths_to_classflow():
    inst = diamond()
    x = paths_to_classflow(inst, PathFlow([(0, (0, 2), 5.0)]))
    assert np.array_equal(x[0], [5, 0, 5, 0, 0])
    x = paths_to_classflow(inst, PathFlow([(0, (0, 2), 2.0), (0, (0, 4, 3), 3.0)]))
    assert x[0, 0] == 5.0
    assert np.array_equal(x[0], [5, 0, 2, 3, 3])


def test_paths_to_classflow_example2_split():
    q, k = 1.0, 0.4
    inst = gen_example2(q)
    x = paths_to_classflow(inst, PathFlow([(0, (0,), q / (2 + k)), (0, (1,), (1 + k) * q / (2 + k))]))
    assert np.allclose(x[0], [q / (2 + k), (1 + k) * q / (2 + k)])


def test_paths_must_connect():
    inst = diamond()
    with pytest.raises(PathNotConnected):
        paths_to_classflow(inst, PathFlow([(0, (0, 3), 1.0)]))
    with pytest.raises(PathNotConnected):
        paths_to_classflow(inst, PathFlow([(0, (0,), 1.0)]))


def test_decompose_single_path():
    inst = diamond()
    x = paths_to_classflow(inst, PathFlow([(0, (0, 4, 3), 5.0)]))
    pf = decompose_to_paths(inst, x)
    assert pf.entries == ((0, (0, 4, 3), 5.0),)


def test_decompose_example1_worst_flow():
    q, k = 1.0, 0.3
    inst = gen_example1(q)
    x = np.array([[q - k, k]])
    d = decompose_to_paths(inst, x).as_dict()
    assert d == pytest.approx({(0, (0,)): q - k, (0, (1,)): k})


def test_decompose_warns_on_cycle():
    net = Network([1, 2, 3], [(0, 1, 2), (1, 2, 3), (2, 3, 2)])
    inst = Instance(net, DemandTable([(1, 2, 1.0)]), separable_cost([[1.0]] * 3))
    x = np.array([[1.0, 0.5, 0.5]])  # unit path plus a 2-3-2 circulation
    with pytest.warns(CyclicResidual):
        pf = decompose_to_paths(inst, x)
    assert pf.as_dict() == {(0, (0,)): 1.0}
    assert pf.cycle_flow == pytest.approx(0.5)


@given(st.integers(0, 10_000))
def test_decompose_roundtrip(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_nodes=6, max_arcs=10, max_od=3)
    # random conservative flow: mix of all-or-nothing loads under random times
    x = np.zeros((inst.n_od, inst.n_arcs))
    weights = rng.dirichlet(np.ones(3))
    for wgt in weights:
        y, _ = all_or_nothing(inst, rng.uniform(0.1, 1.0, inst.n_arcs))
        x += wgt * y
    with warnings.catch_warnings():
        warnings.simplefilter("error", CyclicResidual)
        pf = decompose_to_paths(inst, x)
    back = paths_to_classflow(inst, pf)
    assert np.allclose(back, x, atol=1e-9 * max(1.0, inst.q.max()))
    assert np.allclose(pf.od_totals(inst.n_od), inst.q)


# ---------------------------------------------------------------------------
# conservation


def test_conservation_sign_convention():
    inst = diamond()
    x = paths_to_classflow(inst, PathFlow([(0, (1, 3), 5.0)]))
    assert np.allclose(conservation_residual(inst, x), 0.0)
    check_classflow(inst, x)
    bal = inst.node_balance()
    # outflow - inflow = +Q at the origin, -Q at the destination
    assert bal[0, inst.network.index_of(1)] == 5.0
    assert bal[0, inst.network.index_of(4)] == -5.0
    with pytest.raises(InvalidInstance):
        check_classflow(inst, 0.5 * x)
    with pytest.raises(InvalidInstance):
        check_classflow(inst, -x)


# ---------------------------------------------------------------------------
# scaling


def test_scale_demands():
    net = Network([1, 2, 3], [(0, 1, 2), (1, 2, 3)])
    inst = Instance(net, DemandTable([(1, 2, 1.0), (1, 3, 2.0)]), separable_cost([[1.0], [1.0]]))
    assert np.array_equal(scale_demands(inst, 1.0).q, inst.q)
    assert np.allclose(scale_demands(inst, 1.5).q, [1.5, 3.0])
    with pytest.raises(NegativeKappa):
        scale_demands(inst, 0.9)


def test_pathflow_scaled_sums():
    pf = PathFlow([(0, (0,), 0.3), (0, (1,), 0.7)])
    assert pf.scaled(1.5).od_totals(1) == pytest.approx([1.5])


# ---------------------------------------------------------------------------
# class-flow csv


def test_classflow_csv_roundtrip(tmp_path):
    inst = diamond()
    x = paths_to_classflow(inst, PathFlow([(0, (0, 2), 1.0 / 3.0), (0, (1, 3), 5.0 - 1.0 / 3.0)]))
    p = tmp_path / "x.csv"
    write_classflow_csv(x, p)
    back = read_classflow_csv(inst, p)
    assert np.allclose(back, x, rtol=1e-11)
    p.write_text("od,arc,flow\n0,99,1\n")
    with pytest.raises(InvalidInstance):
        read_classflow_csv(inst, p)
    p.write_text("a,b,c\n")
    with pytest.raises(InvalidInstance):
        read_classflow_csv(inst, p)
