import json

import numpy as np
import pytest

from fndeform.cli import main
from fndeform.groups import encode_element, haar_sample


def write_elements(path, elems):
    path.write_text(json.dumps({"elements": [encode_element(g) for g in elems]}))
    return str(path)


def load(path):
    return json.loads(open(path).read())


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--help"])
    assert err.value.code == 0
    assert "deform" in capsys.readouterr().out


def test_deform_end_to_end(tmp_path):
    rng = np.random.default_rng(0)
    targets = write_elements(tmp_path / "t.json", [haar_sample("so3", rng) for _ in range(3)])
    gamma = write_elements(tmp_path / "g.json", [haar_sample("so3", rng) for _ in range(2)])
    out = str(tmp_path / "d.json")
    assert main(["deform", "--group", "so3", "--n", "3", "--targets", targets, "--gamma", gamma,
                 "--eps", "0.25", "--out", out]) == 0
    res = load(out)
    assert res["replay_residual"] < 1e-7 and res["mode"] == "semisimple"
    assert main(["replay", "--cert", out, "--out", str(tmp_path / "r.json")]) == 0
    man = load(out + ".manifest.json")
    assert man["command"] == "deform" and man["thresholds"]["replay"] == 1e-8
    assert set(man["inputs"]) == {"targets", "gamma"}
    assert main(["rerun", out + ".manifest.json"]) == 0


def test_deform_rejects_non_orthogonal_input(tmp_path, capsys):
    rng = np.random.default_rng(1)
    targets = write_elements(tmp_path / "t.json", [haar_sample("so3", rng) for _ in range(3)])
    bad = encode_element(haar_sample("so3", rng))
    bad["entries"][0][0] += 0.1
    gpath = tmp_path / "g.json"
    gpath.write_text(json.dumps([bad, encode_element(haar_sample("so3", rng))]))
    code = main(["deform", "--group", "so3", "--n", "3", "--targets", targets, "--gamma", str(gpath),
                 "--eps", "0.25", "--out", str(tmp_path / "d.json")])
    assert code == 1
    assert "orthogonal" in capsys.readouterr().err


def test_deform_budget_exit_code(tmp_path):
    rng = np.random.default_rng(2)
    targets = write_elements(tmp_path / "t.json", [haar_sample("so3", rng) for _ in range(3)])
    gamma = write_elements(tmp_path / "g.json", [haar_sample("so3", rng) for _ in range(2)])
    code = main(["deform", "--group", "so3", "--n", "3", "--targets", targets, "--gamma", gamma,
                 "--eps", "0.25", "--budget", '{"lengths": [2]}', "--out", str(tmp_path / "d.json")])
    assert code == 2
    assert load(tmp_path / "d.json")["error"]["type"] == "BudgetExhausted"


@pytest.mark.parametrize("group", ["so3", "su2"])
def test_fa_witness_command(tmp_path, group):
    rng = np.random.default_rng(3)
    pair = write_elements(tmp_path / "p.json", [haar_sample(group, rng) for _ in range(2)])
    out = str(tmp_path / "w.json")
    assert main(["fa-witness", "--group", group, "--pair", pair, "--eps", "0.3", "--out", out]) == 0
    assert len(load(out)["witness"]["orders"]) == 3


def test_fa_witness_qmax_too_small(tmp_path, capsys):
    rng = np.random.default_rng(4)
    pair = write_elements(tmp_path / "p.json", [haar_sample("so3", rng) for _ in range(2)])
    code = main(["fa-witness", "--group", "so3", "--pair", pair, "--eps", "0.3", "--qmax", "3",
                 "--out", str(tmp_path / "w.json")])
    assert code == 2
    assert "projection bound" in capsys.readouterr().err


def test_certify_walk_net_z2(tmp_path):
    rng = np.random.default_rng(5)
    pair = write_elements(tmp_path / "p.json", [haar_sample("so3", rng) for _ in range(2)])
    out = str(tmp_path / "c.json")
    assert main(["certify", "--group", "so3", "--tuple", pair, "--out", out]) == 0
    assert load(out)["certificate"]["all_true"]

    out = str(tmp_path / "n.json")
    assert main(["net", "--group", "so3", "--pair", pair, "--eps", "6.0", "--samples", "500", "--out", out]) == 0
    assert load(out)["net"]["size"] == 1

    out = str(tmp_path / "w.json")
    assert main(["walk", "--group", "so3", "--steps", "2000", "--out", out, "--csv", str(tmp_path / "w.csv")]) == 0
    assert load(out)["stats"]["count"] == 180
    assert main(["walk", "--group", "so3", "--steps", "10", "--burn-in", "20", "--out", out]) == 1

    trip = write_elements(tmp_path / "t.json", [haar_sample("so3", rng) for _ in range(3)])
    out = str(tmp_path / "z.json")
    assert main(["z2", "--group", "so3", "--triple", trip, "--eps", "0.2", "--out", out]) == 0
    assert load(out)["report"]["free_abelian_up_to_bound"]


def test_config_override_and_threads(tmp_path):
    rng = np.random.default_rng(6)
    pair = write_elements(tmp_path / "p.json", [haar_sample("so3", rng) for _ in range(2)])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rank": 1e-9}))
    outs = []
    for threads in ("1", "4"):
        out = str(tmp_path / f"c{threads}.json")
        assert main(["certify", "--group", "so3", "--tuple", pair, "--config", str(cfg), "--threads", threads,
                     "--out", out]) == 0
        outs.append(open(out).read())
    assert outs[0] == outs[1]
    assert load(str(tmp_path / "c1.json") + ".manifest.json")["thresholds"]["rank"] == 1e-9
    cfg.write_text(json.dumps({"no_such_threshold": 1}))
    assert main(["certify", "--group", "so3", "--tuple", pair, "--config", str(cfg),
                 "--out", str(tmp_path / "x.json")]) == 1


def test_rerun_detects_changed_input(tmp_path):
    rng = np.random.default_rng(7)
    pair = write_elements(tmp_path / "p.json", [haar_sample("so3", rng) for _ in range(2)])
    out = str(tmp_path / "c.json")
    assert main(["certify", "--group", "so3", "--tuple", pair, "--out", out]) == 0
    assert main(["rerun", out + ".manifest.json"]) == 0
    write_elements(tmp_path / "p.json", [haar_sample("so3", rng) for _ in range(2)])
    assert main(["rerun", out + ".manifest.json"]) == 1
