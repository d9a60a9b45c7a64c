from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from posat.cli import main
from posat.instances import circular_strategy, gen_circular, gen_example1
from posat.network import load_instance, read_classflow_csv, save_instance, write_classflow_csv


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv(text):
    return list(csv.DictReader(text.splitlines()))


def test_gen_types(tmp_path, capsys):
    p = tmp_path / "c.json"
    assert run(capsys, "gen", "--type", "circular", "--kappa", 1, "--degree", 4, "--out", p)[0] == 0
    assert load_instance(p).network.n_nodes == 3
    p = tmp_path / "e.json"
    assert run(capsys, "gen", "--type", "example1", "--q", 1, "--out", p)[0] == 0
    assert load_instance(p).n_arcs == 2
    d = tmp_path / "d.csv"
    d.write_text("origin,dest,q\n1,3,5\n2,4,7\n")
    p = tmp_path / "n.json"
    assert run(capsys, "gen", "--type", "nine-node-asym", "--demands", d, "--out", p)[0] == 0
    inst = load_instance(p)
    assert inst.network.n_nodes == 9 and inst.n_arcs == 32


def test_gen_errors(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--type", "circular", "--kappa", 1)
    assert code == 1 and "degree" in err
    code, _, err = run(capsys, "gen", "--type", "example1", "--q", -1)
    assert code == 1


def test_solve_ue_and_uepe(tmp_path, capsys):
    inst_path = tmp_path / "ex2.json"
    run(capsys, "gen", "--type", "example2", "--q", 2, "--out", inst_path)
    out = tmp_path / "ue.json"
    code, _, _ = run(capsys, "solve", "ue", "--instance", inst_path, "--out", out)
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["Z"] == pytest.approx(2.0)
    rows = read_csv((tmp_path / "ue_arcflow.csv").read_text())
    assert [float(r["flow"]) for r in rows] == pytest.approx([1.0, 1.0])
    assert (tmp_path / "ue_classflow.csv").exists()
    lam = tmp_path / "lam.json"
    lam.write_text(json.dumps({"per_arc": [1.0, 1.0]}))
    code, text, _ = run(capsys, "solve", "uepe", "--instance", inst_path, "--lambda", lam)
    assert code == 0
    assert json.loads(text)["Z"] == pytest.approx(rep["Z"], rel=1e-5)


def test_solve_so_circular(tmp_path, capsys):
    inst_path = tmp_path / "c.json"
    run(capsys, "gen", "--type", "circular", "--kappa", 1, "--degree", 4, "--out", inst_path)
    out = tmp_path / "so.json"
    assert run(capsys, "solve", "so", "--instance", inst_path, "--out", out)[0] == 0
    rows = read_csv((tmp_path / "so_arcflow.csv").read_text())
    flow = np.array([float(r["flow"]) for r in rows])
    # arcs 0..2 clockwise, 3..5 counterclockwise with l = 1 unit each
    assert flow[:3] == pytest.approx(0.0, abs=1e-6)
    assert flow[3:] == pytest.approx(1.0, abs=1e-6)


def test_solve_exit_codes(tmp_path, capsys):
    inst_path = tmp_path / "n.json"
    run(capsys, "gen", "--type", "nine-node-asym", "--out", inst_path)
    code, _, _ = run(capsys, "solve", "ue", "--instance", inst_path, "--method", "diag", "--max-iters", 1)
    assert code == 2
    code, _, err = run(capsys, "solve", "uepe", "--instance", inst_path)
    assert code == 1 and "lambda" in err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "solve", "ue", "--instance", bad)[0] == 1
    assert run(capsys, "solve", "ue", "--instance", tmp_path / "missing.json")[0] == 1


def test_bounds(capsys, tmp_path):
    code, text, _ = run(capsys, "bounds", "--kappa-grid", "0,0.5,1", "--degree", 1)
    assert code == 0
    rows = read_csv(text)
    assert float(rows[0]["zeta_bound"]) == pytest.approx(4 / 3, abs=1e-11)
    assert float(rows[1]["zeta_bound"]) == pytest.approx(2.4)
    assert float(rows[2]["simple_bound"]) == 4.0
    code, text, _ = run(capsys, "bounds", "--kappa", 0, "--degree", 4)
    row = read_csv(text)[0]
    assert float(row["zeta_bound"]) == pytest.approx(1 / (1 - 4 / 5 ** (5 / 4)), rel=1e-11)
    assert all(float(v) >= 1.0 for k, v in row.items() if k != "kappa")
    p = tmp_path / "e.json"
    save_instance(gen_example1(1.0), p)
    code, text, _ = run(capsys, "bounds", "--kappa", 0.5, "--degree", 1, "--instance", p)
    assert float(read_csv(text)[0]["deviation_bound"]) == pytest.approx(1.5)
    c = tmp_path / "c.json"
    save_instance(gen_circular(1.0, 1), c)
    assert run(capsys, "bounds", "--kappa", 0.5, "--degree", 1, "--instance", c)[0] == 1
    assert run(capsys, "bounds", "--kappa", 0.5, "--degree", -1)[0] == 1


def test_verify(tmp_path, capsys):
    inst = gen_circular(1.0, 2)
    ip = tmp_path / "c.json"
    save_instance(inst, ip)
    fp = tmp_path / "x.csv"
    write_classflow_csv(circular_strategy(inst, True), fp)
    code, text, _ = run(capsys, "verify", "--instance", ip, "--flow", fp, "--kappa", 1.0)
    assert code == 0
    res = json.loads(text)
    assert res["verdict"]["status"] == "certified"
    assert res["necessary_condition"]["slack"] == pytest.approx(0.0, abs=1e-9)
    code, text, _ = run(capsys, "verify", "--instance", ip, "--flow", fp, "--kappa", 0.9)
    assert code == 3 and json.loads(text)["verdict"]["status"] == "failed"

    # example 1 worst flow with its multipliers passes the KKT check at 1e-8
    k = 0.4
    ip = tmp_path / "e.json"
    save_instance(gen_example1(1.0), ip)
    write_classflow_csv(np.array([[1 - k, k]]), fp)
    lam = tmp_path / "lam.json"
    lam.write_text(json.dumps({"kappa": k, "values": [[1.0, 1 / (1 + k)]]}))
    code, text, _ = run(capsys, "verify", "--instance", ip, "--flow", fp, "--kappa", k, "--lambda", lam)
    assert code == 0
    res = json.loads(text)
    assert res["kkt"]["passed"] and res["kkt"]["tol"] == 1e-8
    code, text, _ = run(capsys, "verify", "--instance", ip, "--flow", fp, "--epsilon-additive", k)
    assert code == 0 and json.loads(text)["verdict"]["smallest"] == pytest.approx(k)


def test_verify_invalid_flow(tmp_path, capsys):
    ip = tmp_path / "e.json"
    save_instance(gen_example1(1.0), ip)
    fp = tmp_path / "x.csv"
    fp.write_text("od,arc,flow\n0,0,0.3\n")  # does not carry the demand
    assert run(capsys, "verify", "--instance", ip, "--flow", fp, "--kappa", 0.1)[0] == 1
    assert read_classflow_csv is not None


def test_search_example1(tmp_path, capsys):
    ip = tmp_path / "e.json"
    save_instance(gen_example1(1.0), ip)
    out = tmp_path / "s.csv"
    code, _, _ = run(capsys, "search", "--instance", ip, "--kappa-grid", "0,0.25,0.5,1,1.5", "--starts", 4, "--out", out)
    assert code == 0
    rows = read_csv(out.read_text())
    post = [float(r["posat"]) for r in rows]
    assert post == pytest.approx([1.0, 1.0625, 1.25, 2.0, 2.0], abs=1e-6)


def test_search_circular_and_determinism(tmp_path, capsys):
    args = ["search", "--circular-degree", 2, "--kappa-grid", "0,0.5,1", "--starts", 3, "--seed", 5, "--budget", 5]
    code, a, _ = run(capsys, *args)
    assert code == 0
    code, b, _ = run(capsys, *args)
    assert a == b
    rows = read_csv(a)
    assert float(rows[0]["posat"]) == 1.0
    assert [float(r["posat"]) for r in rows[1:]] == pytest.approx([1.5**3, 8.0], abs=1e-6)


def test_search_errors(tmp_path, capsys):
    assert run(capsys, "search", "--kappa", 0.1)[0] == 1
    assert run(capsys, "search", "--circular-degree", 2, "--kappa", -0.1)[0] == 1
    with pytest.raises(SystemExit):
        main(["search", "--circular-degree", "2"])  # argparse: kappa required
