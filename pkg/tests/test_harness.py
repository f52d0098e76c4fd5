import csv
from dataclasses import replace

import numpy as np
import pytest

from crowdpriv import two_room_example, run_sweep
from crowdpriv.errors import ConfigError, ValidationError
from crowdpriv.harness import (
    CSV_HEADER,
    GridSpec,
    config_from_dict,
    dumps_config,
    load_config,
    read_rows,
    save_config,
    tomllib,
    write_rows,
)

TWO_ROOM_TOML = """
[model]
A = [[0.991, 0.0075], [0.006, 0.990]]
W = [[1e-4, 0.0], [0.0, 1e-4]]

[[sensors]]
C = [1.0, 0.0]
V = 0.1

[[sensors]]
C = [1.0, 0.0]
V = 0.01

[selection]
uniform = true

[observer]
L = [0.5, 0.0]
xi_base = [[1.0, 0.0], [0.0, 0.0]]
xi_offset = [[0.0, 0.0], [0.0, 1e-32]]

[experiment]
runs = 100
horizon = 1000
burn_in = 500
"""


def _small(cfg, **kw):
    return replace(cfg, runs=20, horizon=200, burn_in=100, **kw)


def test_two_room_constants():
    cfg = two_room_example()
    A = cfg.model.A
    assert A[0, 1] == 0.0075 and A[1, 0] == 0.006
    assert A[0, 0] == 0.991 and A[1, 1] == 0.990
    V1, V2 = (s.V[0, 0] for s in cfg.pool.sensors)
    assert V2 / V1 == pytest.approx(0.1)
    assert cfg.xi(0.0)[1, 1] == 1e-32
    assert cfg.xi(0.3)[0, 0] == 0.3
    np.testing.assert_array_equal(cfg.L, [[0.5], [0.0]])
    assert (cfg.runs, cfg.horizon) == (100, 1000)
    np.testing.assert_array_equal(cfg.pool.probs, [0.5, 0.5])


def test_grid_values():
    g = GridSpec(1e-6, 1.0, 30).values()
    assert len(g) == 30 and g[0] == pytest.approx(1e-6) and g[-1] == pytest.approx(1.0)
    assert np.all(np.diff(np.log(g)) > 0)
    np.testing.assert_allclose(GridSpec(0.0, 1.0, 3, "linear").values(), [0, 0.5, 1])
    for bad in (GridSpec(1.0, 0.5, 3), GridSpec(0.0, 1.0, 3), GridSpec(1e-3, 1.0, 1),
                GridSpec(1e-3, 1.0, 3, "cubic")):
        with pytest.raises(ConfigError):
            bad.check("g")


def test_toml_matches_builtin_example(tmp_path):
    p = tmp_path / "two_room.toml"
    p.write_text(TWO_ROOM_TOML)
    cfg = load_config(p)
    ref = two_room_example()
    np.testing.assert_array_equal(cfg.model.A, ref.model.A)
    np.testing.assert_array_equal(cfg.model.X0, np.eye(2))
    np.testing.assert_array_equal(cfg.pool.probs, [0.5, 0.5])
    np.testing.assert_array_equal(cfg.L, ref.L)
    np.testing.assert_array_equal(cfg.xi(0.0), ref.xi(0.0))
    assert cfg.effective_burn_in == 500


def test_config_round_trip(tmp_path):
    cfg = replace(two_room_example(), tau=0.1, seed=7)
    p = tmp_path / "c.toml"
    save_config(cfg, p)
    back = load_config(p)
    assert dumps_config(back) == dumps_config(cfg)
    assert "probs" in p.read_text()
    with pytest.raises(FileExistsError):
        save_config(cfg, p)


def test_malformed_matrix_names_field(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(TWO_ROOM_TOML.replace("A = [[0.991, 0.0075], [0.006, 0.990]]",
                                       "A = [[0.991, 0.0075], [0.006, 0.990, 1.0]]"))
    with pytest.raises(ConfigError, match=r"model\.A: row 2 has 3 entries, expected 2"):
        load_config(p)


def test_parse_error_reports_location(tmp_path):
    p = tmp_path / "broken.toml"
    p.write_text("[model]\nA = [[1.0, 2.0]\n")
    with pytest.raises(ConfigError, match=r"line \d+"):
        load_config(p)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


@pytest.mark.parametrize("edit,needle", [
    (lambda d: d.pop("observer"), r"\[observer\]"),
    (lambda d: d["selection"].pop("uniform"), "probs"),
    (lambda d: d["experiment"].update(runs="ten"), "experiment.runs"),
    (lambda d: d["experiment"].update(detector="oracle"), "detector"),
    (lambda d: d.update(sweep={"axis": "gain", "min": 1e-3, "max": 1.0, "points": 3}),
     "sweep.axis"),
])
def test_schema_errors(edit, needle):
    doc = tomllib.loads(TWO_ROOM_TOML)
    edit(doc)
    with pytest.raises(ConfigError, match=needle):
        config_from_dict(doc)


def test_invalid_system_rejected_on_load(tmp_path):
    p = tmp_path / "unstable.toml"
    p.write_text(TWO_ROOM_TOML.replace("L = [0.5, 0.0]", "L = [0.0, 0.0]")
                 .replace("0.991", "1.2"))
    with pytest.raises(ValidationError):
        load_config(p)
    assert load_config(p, validate=False).model.A[0, 0] == 1.2


def test_single_sensor_sweep_has_zero_bound():
    cfg = two_room_example()
    cfg = _small(replace(cfg, pool=type(cfg.pool)([cfg.pool.sensors[0]], [1.0])),
                 sweep=GridSpec(1e-4, 1e-1, 3))
    rows = run_sweep(cfg)
    assert [r.leakage_bound_nats for r in rows] == [0.0, 0.0, 0.0]


def test_sweep_csv_and_overwrite(tmp_path):
    cfg = _small(two_room_example(), sweep=GridSpec(1e-4, 1e-1, 3))
    out = tmp_path / "s.csv"
    rows = run_sweep(cfg, output=out)
    with open(out) as fh:
        assert next(csv.reader(fh)) == CSV_HEADER
    back = read_rows(out)
    assert len(back) == 3
    assert back[0].runs == 20 and back[0].horizon == 200 and back[0].seed == 0
    assert back[1].leakage_bound_nats == pytest.approx(rows[1].leakage_bound_nats,
                                                       rel=1e-11, abs=0)
    with pytest.raises(FileExistsError):
        run_sweep(cfg, output=out)
    run_sweep(cfg, output=out, overwrite=True)


def test_sweep_deterministic_and_thread_invariant(tmp_path):
    cfg = _small(two_room_example(), sweep=GridSpec(1e-4, 1e-1, 4))
    run_sweep(cfg, output=tmp_path / "a.csv", threads=1)
    run_sweep(cfg, output=tmp_path / "b.csv", threads=3)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_tau_sweep_rows():
    cfg = _small(two_room_example(), axis="tau", sweep=GridSpec(1e-3, 1.0, 5))
    rows = run_sweep(cfg)
    assert [r.axis_value for r in rows] == pytest.approx(list(GridSpec(1e-3, 1.0, 5).values()))
    assert len({r.leakage_bound_nats for r in rows}) == 1
    with pytest.raises(ConfigError):
        run_sweep(replace(cfg, detector="map"))


def test_map_sweep_runs():
    cfg = _small(two_room_example(), detector="map", sweep=GridSpec(1e-4, 1e-1, 2))
    rows = run_sweep(cfg)
    assert all(0.0 <= r.accuracy <= 1.0 for r in rows)


def test_sweep_perf_consistent_with_mse():
    cfg = replace(two_room_example(), runs=200, sweep=GridSpec(1e-3, 1e-1, 3))
    for r in run_sweep(cfg):
        assert abs(r.emp_mse - r.perf_trace) < 5 * r.emp_mse_se


def test_write_rows_formats(tmp_path):
    cfg = _small(two_room_example(), sweep=GridSpec(1e-4, 1e-1, 2))
    rows = run_sweep(cfg)
    write_rows(tmp_path / "r.csv", rows)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    fields = lines[1].split(",")
    assert fields[-3:] == ["20", "200", "0"]
    assert "e" in fields[0]
