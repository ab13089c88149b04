import csv
import json

import pytest

from treemem import cli
from treemem.errors import ConfigError, MonotonicityViolated


def write_cfg(tmp_path, name="cfg.json", **cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(out):
    return json.loads((out / "report.json").read_text())


TMP = dict(m=2, depth=8, beta1=0.25, beta2=0.25, f="1", g="0.5", h1="-2*0.5^k", h2="2*0.5^k")


def test_single_constant_cells(tmp_path):
    cfg = write_cfg(tmp_path, m=2, depth=5, beta=0.25, f="2", h="0")
    out = tmp_path / "out"
    assert cli.main(["single", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_rows(out / "fields.csv")
    assert len(rows) == 2**6 - 1
    assert list(rows[0]) == ["level", "index", "psi", "u", "v", "residual_u", "residual_v", "contact"]
    assert all(float(r["u"]) == 2.0 and r["v"] == "" for r in rows)
    rep = report(out)
    assert rep["results"]["direct"]["final_residual"] <= 1e-10
    assert rep["version"] and "wall_time" in rep["timing"]


def test_single_all_methods(tmp_path):
    cfg = write_cfg(tmp_path, m=3, depth=5, beta1=0.3, f="s*s", h1="0.5^k",
                    methods=["direct", "representation", "representation_discrete", "value_iteration"], tol=1e-12)
    out = tmp_path / "out"
    assert cli.run("single", cfg, out) == 0
    res = report(out)["results"]
    gaps = res["gaps"]
    assert len(gaps) == 6
    assert gaps["direct|representation_discrete"] <= 1e-12
    assert gaps["direct|representation"] <= res["representation"]["tail_bound"] + 1e-10


def test_check_constant_source_fails(tmp_path):
    cfg = write_cfg(tmp_path, m=2, beta=0.25, h="1")
    out = tmp_path / "out"
    assert cli.run("check", cfg, out) == 0
    rep = report(out)
    assert rep["results"]["passes"] is False
    assert len(rep["results"]["equation1"]["trace"]) > 3
    assert not (out / "fields.csv").exists()


def test_tmp_writes_coincidence(tmp_path):
    cfg = write_cfg(tmp_path, mode="tmp", **TMP)
    out = tmp_path / "out"
    assert cli.run("tmp", cfg, out) == 0
    rows = read_rows(out / "coincidence.csv")
    assert rows and rows[0]["level"] == "0"
    res = report(out)["results"]
    assert res["coupled"]["certificate"]["empty_beyond"] is True
    assert res["gap_u"] <= 2e-9 and res["primary"] == "coupled"
    fields = read_rows(out / "fields.csv")
    assert sum(int(r["contact"]) for r in fields) == len(rows)


def test_obstacle_mode(tmp_path):
    cfg = write_cfg(tmp_path, m=2, depth=4, beta=0.4, f="1+s", h="-0.5^k", obstacle="1.6+s-0.5*k")
    out = tmp_path / "out"
    assert cli.run("obstacle", cfg, out) == 0
    res = report(out)["results"]
    assert res["contact_nodes"] > 0 and res["complementarity_residual"] <= 1e-10


def test_game_report_keys(tmp_path):
    cfg = write_cfg(tmp_path, **TMP, game={"paths": 20000, "seed": 4, "start_board": 2})
    out = tmp_path / "out"
    assert cli.run("game", cfg, out) == 0
    rep = report(out)
    game = rep["results"]["game"]
    for key in ("mean", "std_error", "capped_fraction", "solved_value", "z_score"):
        assert key in game
    assert rep["seed"] == 4 and game["capped_fraction"] == 0.0
    assert "game" in rep["timing"]


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, **TMP, game={"paths": 30000, "seed": 9})
    outs = []
    for i, threads in enumerate(("1", "4")):
        monkeypatch.setenv("TREEMEM_THREADS", threads)
        out = tmp_path / f"out{i}"
        assert cli.run("game", cfg, out) == 0
        outs.append(out)
    a, b = outs
    assert (a / "fields.csv").read_bytes() == (b / "fields.csv").read_bytes()
    assert (a / "coincidence.csv").read_bytes() == (b / "coincidence.csv").read_bytes()
    ra, rb = report(a), report(b)
    ra.pop("timing"), rb.pop("timing")
    assert ra == rb


@pytest.mark.parametrize("cfg,code", [
    (dict(m=2, depth=4, beta=0.6, f="2", h="0"), 2),
    (dict(m=2, depth=4, beta=0.2, f="2 +", h="0"), 2),
    (dict(m=2, depth=4, beta=0.2, f="2"), 2),
    (dict(m=2, depth=4, beta=0.2, f="2", h="0", color="red"), 2),
    (dict(m=2, depth=4, beta=0.2, beta1=0.2, f="2", h="0"), 2),
    (dict(m=2, depth=6, beta=0.4, f="s", h="0", methods=["value_iteration"], max_iter=2), 3),
])
def test_exit_codes(tmp_path, cfg, code):
    path = write_cfg(tmp_path, **cfg)
    out = tmp_path / "out"
    assert cli.run("single", path, out) == code
    err = report(out)["error"]
    assert err["code"] and err["message"]


def test_separation_and_invariant_codes(tmp_path, monkeypatch):
    bad = write_cfg(tmp_path, **{**TMP, "g": "2"})
    assert cli.run("tmp", bad, tmp_path / "o1") == 2

    def boom(cfg):
        raise MonotonicityViolated("forced")

    monkeypatch.setitem(cli.RUNNERS, "single", boom)
    ok = write_cfg(tmp_path, "ok.json", m=2, depth=3, beta=0.2, f="1", h="0")
    assert cli.run("single", ok, tmp_path / "o2") == 4
    assert cli.run("single", tmp_path / "missing.json", tmp_path / "o3") == 2


def test_mode_mismatch(tmp_path):
    path = write_cfg(tmp_path, mode="tmp", **TMP)
    with pytest.raises(ConfigError):
        cli.load_config(path, "single")


def test_config_round_trip(tmp_path):
    table = tmp_path / "h.csv"
    table.write_text("level,index,value\n0,0,0.5\n1,0,0.25\n1,1,0.25\n")
    path = write_cfg(tmp_path, m=2, depth=4, beta=0.2, f="s", h1_table="h.csv", methods=["direct"])
    cfg = cli.load_config(path, "single")
    assert cfg.h1_table == str(table.resolve())
    again = cli.RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    # the echo in report.json reproduces the run on its own
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.run("single", path, out1) == 0
    echo = write_cfg(tmp_path, "echo.json", **report(out1)["config"])
    assert cli.run("single", echo, out2) == 0
    assert (out1 / "fields.csv").read_bytes() == (out2 / "fields.csv").read_bytes()


def test_schema_ships_with_package():
    schema = cli.load_schema()
    assert schema["additionalProperties"] is False
    assert {"beta1", "h1", "game", "methods"} <= set(schema["properties"])


def test_shipped_configs_validate():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    paths = sorted(root.glob("*.json"))
    assert len(paths) == 5
    for path in paths:
        cfg = cli.load_config(path)
        assert cfg.mode == path.stem
