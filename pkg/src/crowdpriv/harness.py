"""Experiment configs, the two-room example, sweeps and CSV output."""

from __future__ import annotations

import csv
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import adversary
from . import _linalg as la
from .covariance import performance, steady_state_cov
from .errors import ConfigError
from .leakage import leakage_bound
from .model import ObserverConfig, Sensor, SensorPool, SystemModel, require_valid
from .simulate import default_burn_in, map_batches

OUTPUT_DIR_ENV = "CROWDPRIV_OUTPUT_DIR"

CSV_HEADER = ["axis_value", "accuracy", "accuracy_se", "leakage_bound_nats", "perf_trace",
              "emp_mse", "emp_mse_se", "runs", "horizon", "seed"]
AXES = ("tau", "sigma_xi")
DETECTORS = ("threshold", "map")


@dataclass
class GridSpec:
    min: float
    max: float
    points: int
    scale: str = "log"

    def check(self, where):
        if not self.min < self.max:
            raise ConfigError(f"{where}: min ({self.min}) must be < max ({self.max})")
        if self.points < 2:
            raise ConfigError(f"{where}: points must be >= 2, got {self.points}")
        if self.scale not in ("log", "linear"):
            raise ConfigError(f"{where}: scale must be 'log' or 'linear', got {self.scale!r}")
        if self.scale == "log" and self.min <= 0:
            raise ConfigError(f"{where}: log grid needs min > 0")

    def values(self):
        if self.scale == "log":
            return np.logspace(math.log10(self.min), math.log10(self.max), self.points)
        return np.linspace(self.min, self.max, self.points)


@dataclass
class ExperimentConfig:
    model: SystemModel
    pool: SensorPool
    L: np.ndarray
    Omega: np.ndarray
    xi_base: np.ndarray
    xi_offset: np.ndarray
    sigma_xi: float = 0.0
    horizon: int = 1000
    runs: int = 100
    seed: int = 0
    burn_in: int | None = None
    detector: str = "threshold"
    tau: float | None = None
    tau_grid: GridSpec = field(default_factory=lambda: GridSpec(
        adversary.TAU_MIN, adversary.TAU_MAX, adversary.TAU_POINTS))
    sweep: GridSpec = field(default_factory=lambda: GridSpec(1e-6, 1.0, 30))
    axis: str = "sigma_xi"
    output: str = "sweep.csv"

    def xi(self, sigma=None):
        s = self.sigma_xi if sigma is None else sigma
        return la.symmetrize(np.asarray(self.xi_offset) + s * np.asarray(self.xi_base))

    def observer(self, sigma=None):
        return ObserverConfig(L=self.L, Xi=self.xi(sigma), Omega=self.Omega)

    @property
    def effective_burn_in(self):
        return default_burn_in(self.horizon) if self.burn_in is None else self.burn_in


@dataclass
class SweepRow:
    axis_value: float
    accuracy: float
    accuracy_se: float
    leakage_bound_nats: float
    perf_trace: float
    emp_mse: float
    emp_mse_se: float
    runs: int
    horizon: int
    seed: int

    def as_list(self):
        return [getattr(self, k) for k in CSV_HEADER]


def two_room_example(sigma_xi=0.0) -> ExperimentConfig:
    """Two interconnected rooms with one noisy and one accurate crowd sensor.

    ``X0`` is not given for this example; the identity is used.  The
    steady-state window starts at k = 500 because the slow closed-loop mode
    (|eig| ~ 0.990) still carries a visible transient from ``X0 = I`` at the
    usual 20% mark.
    """
    model = SystemModel(A=[[0.991, 0.0075], [0.006, 0.990]], W=1e-4 * np.eye(2), X0=np.eye(2))
    pool = SensorPool.uniform([Sensor(C=[[1.0, 0.0]], V=[[1e-1]]),
                               Sensor(C=[[1.0, 0.0]], V=[[1e-2]])])
    return ExperimentConfig(
        model=model, pool=pool,
        L=np.array([[0.5], [0.0]]), Omega=np.eye(2),
        xi_base=np.diag([1.0, 0.0]), xi_offset=np.diag([0.0, 1e-32]),
        sigma_xi=sigma_xi, horizon=1000, runs=100, seed=0, burn_in=500,
    )


# --- config files -----------------------------------------------------------

def _matrix(value, name, vector="row"):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.array([[float(value)]])
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{name}: expected a number or a non-empty list of rows")
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        arr = np.array(value, dtype=float)
        return arr.reshape(1, -1) if vector == "row" else arr.reshape(-1, 1)
    width = None
    for i, row in enumerate(value):
        if not isinstance(row, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
            raise ConfigError(f"{name}: row {i + 1} is not a list of numbers")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ConfigError(f"{name}: row {i + 1} has {len(row)} entries, expected {width}")
    return np.array(value, dtype=float)


def _get(table, key, where, default=..., kind=None):
    if key not in table:
        if default is ...:
            raise ConfigError(f"{where}: missing required field '{key}'")
        return default
    value = table[key]
    if kind is None:
        return value
    wrong_bool = isinstance(value, bool) and kind is not bool
    if wrong_bool or not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, "
                          f"got {type(value).__name__}")
    return value


_NUM = (int, float)


def _grid(table, where, default):
    if table is None:
        return default
    g = GridSpec(float(_get(table, "min", where, kind=_NUM)),
                 float(_get(table, "max", where, kind=_NUM)),
                 int(_get(table, "points", where, kind=int)),
                 str(_get(table, "scale", where, "log", kind=str)))
    g.check(where)
    return g


def config_from_dict(doc) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed document."""
    try:
        mt = doc["model"]
    except KeyError:
        raise ConfigError("missing required table [model]") from None
    A = _matrix(_get(mt, "A", "model"), "model.A")
    n = A.shape[0]
    W = _matrix(_get(mt, "W", "model"), "model.W")
    X0 = _matrix(_get(mt, "X0", "model", np.eye(n).tolist()), "model.X0")

    sensors_doc = doc.get("sensors")
    if not isinstance(sensors_doc, list) or not sensors_doc:
        raise ConfigError("missing required array of tables [[sensors]]")
    sensors = []
    for i, st in enumerate(sensors_doc):
        where = f"sensors[{i}]"
        sensors.append(Sensor(C=_matrix(_get(st, "C", where), f"{where}.C", "row"),
                              V=_matrix(_get(st, "V", where), f"{where}.V")))

    sel = doc.get("selection", {})
    if "probs" in sel:
        probs = _get(sel, "probs", "selection", kind=list)
        if not all(isinstance(p, _NUM) and not isinstance(p, bool) for p in probs):
            raise ConfigError("selection.probs: expected a list of numbers")
        pool = SensorPool(tuple(sensors), np.array(probs, dtype=float))
    elif _get(sel, "uniform", "selection", False, kind=bool):
        pool = SensorPool.uniform(sensors)
    else:
        raise ConfigError("selection: give 'probs' or set 'uniform = true'")

    ot = doc.get("observer")
    if ot is None:
        raise ConfigError("missing required table [observer]")
    L = _matrix(_get(ot, "L", "observer"), "observer.L", "col")
    Omega = _matrix(_get(ot, "Omega", "observer", np.eye(n).tolist()), "observer.Omega")
    xi_base = _matrix(_get(ot, "xi_base", "observer", np.eye(n).tolist()), "observer.xi_base")
    xi_offset = _matrix(_get(ot, "xi_offset", "observer", np.zeros((n, n)).tolist()),
                        "observer.xi_offset")
    sigma = float(_get(ot, "sigma_xi", "observer", 0.0, kind=_NUM))
    if sigma < 0:
        raise ConfigError("observer.sigma_xi: must be >= 0")

    et = doc.get("experiment", {})
    cfg = ExperimentConfig(
        model=SystemModel(A=A, W=W, X0=X0), pool=pool, L=L, Omega=Omega,
        xi_base=xi_base, xi_offset=xi_offset, sigma_xi=sigma,
        horizon=int(_get(et, "horizon", "experiment", 1000, kind=int)),
        runs=int(_get(et, "runs", "experiment", 100, kind=int)),
        seed=int(_get(et, "seed", "experiment", 0, kind=int)),
        burn_in=_get(et, "burn_in", "experiment", None, kind=int),
        detector=str(_get(et, "detector", "experiment", "threshold", kind=str)),
        tau=_get(et, "tau", "experiment", None, kind=_NUM),
        tau_grid=_grid(doc.get("tau_grid"), "tau_grid", GridSpec(
            adversary.TAU_MIN, adversary.TAU_MAX, adversary.TAU_POINTS)),
    )
    if cfg.tau is not None:
        cfg.tau = float(cfg.tau)
    if cfg.horizon < 1 or cfg.runs < 1 or cfg.seed < 0:
        raise ConfigError("experiment: horizon and runs must be >= 1 and seed >= 0")
    if cfg.burn_in is not None and not 0 <= cfg.burn_in < cfg.horizon:
        raise ConfigError(f"experiment.burn_in: must be in [0, {cfg.horizon})")
    if cfg.detector not in DETECTORS:
        raise ConfigError(f"experiment.detector: must be one of {DETECTORS}")

    sw = doc.get("sweep")
    if sw is not None:
        cfg.axis = str(_get(sw, "axis", "sweep", kind=str))
        if cfg.axis not in AXES:
            raise ConfigError(f"sweep.axis: must be one of {AXES}, got {cfg.axis!r}")
        cfg.sweep = _grid(sw, "sweep", cfg.sweep)
        cfg.output = str(_get(sw, "output", "sweep", cfg.output, kind=str))
    return cfg


def load_config(path, validate=True) -> ExperimentConfig:
    """Read a TOML experiment config.

    Raises :class:`ConfigError` on syntax or schema problems and, when
    ``validate`` is set, :class:`~crowdpriv.errors.ValidationError` if the
    system/sensor/observer matrices fail the model checks.
    """
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        if "end of document" in msg:
            last = len(Path(path).read_bytes().splitlines())
            msg = msg.replace("end of document", f"end of document, line {last}")
        raise ConfigError(f"{path}: {msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        cfg = config_from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if validate:
        require_valid(cfg.model, cfg.pool, cfg.observer())
    return cfg


def _mat(M):
    return np.asarray(M, dtype=float).tolist()


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical document form (probabilities always explicit)."""
    exp = {"horizon": cfg.horizon, "runs": cfg.runs, "seed": cfg.seed,
           "detector": cfg.detector}
    if cfg.burn_in is not None:
        exp["burn_in"] = cfg.burn_in
    if cfg.tau is not None:
        exp["tau"] = float(cfg.tau)
    return {
        "model": {"A": _mat(cfg.model.A), "W": _mat(cfg.model.W), "X0": _mat(cfg.model.X0)},
        "sensors": [{"C": _mat(s.C), "V": _mat(s.V)} for s in cfg.pool.sensors],
        "selection": {"probs": [float(p) for p in cfg.pool.probs]},
        "observer": {"L": _mat(cfg.L), "Omega": _mat(cfg.Omega), "xi_base": _mat(cfg.xi_base),
                     "xi_offset": _mat(cfg.xi_offset), "sigma_xi": float(cfg.sigma_xi)},
        "experiment": exp,
        "tau_grid": {"min": float(cfg.tau_grid.min), "max": float(cfg.tau_grid.max),
                     "points": cfg.tau_grid.points, "scale": cfg.tau_grid.scale},
        "sweep": {"axis": cfg.axis, "min": float(cfg.sweep.min), "max": float(cfg.sweep.max),
                  "points": cfg.sweep.points, "scale": cfg.sweep.scale, "output": cfg.output},
    }


def dumps_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def save_config(cfg, path, overwrite=False):
    _check_writable(path, overwrite)
    Path(path).write_text(dumps_config(cfg))


# --- CSV --------------------------------------------------------------------

def _check_writable(path, overwrite):
    if os.path.exists(path) and not overwrite:
        raise FileExistsError(f"{path} exists; pass overwrite=True (--force) to replace it")


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.12e" % v


class RowWriter:
    """Incremental CSV writer with the fixed sweep header."""

    def __init__(self, path, overwrite=False):
        _check_writable(path, overwrite)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_HEADER)

    def write(self, row: SweepRow):
        self._w.writerow([_fmt(v) for v in row.as_list()])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_rows(path, rows, overwrite=False):
    with RowWriter(path, overwrite) as w:
        for r in rows:
            w.write(r)


def read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {header}")
        out = []
        for rec in reader:
            vals = [float(x) for x in rec]
            out.append(SweepRow(*vals[:7], int(vals[7]), int(vals[8]), int(vals[9])))
        return out


# --- sweeps -----------------------------------------------------------------

@dataclass
class _PointSim:
    """Monte Carlo results for one configuration."""

    acc_by_run: np.ndarray   # (R, T) threshold, or (R, 1) for MAP
    mse_by_run: np.ndarray   # (R,)


def _simulate_point(cfg, sigma, taus, threads=1):
    obs = cfg.observer(sigma)
    burn = cfg.effective_burn_in
    C = cfg.pool.sensors[0].C

    def per_chunk(batch):
        e = batch.errors[:, burn:]
        mse = np.einsum("rki,rki->rk", e, e).mean(axis=1)
        if cfg.detector == "map":
            acc = adversary.map_accuracy_by_run(batch, cfg.model, cfg.pool, obs, burn)[:, None]
        else:
            acc = adversary.threshold_accuracy_by_run(batch, C, taus, burn)
        return acc, mse

    parts = map_batches(per_chunk, cfg.model, cfg.pool, obs, cfg.horizon, cfg.runs, cfg.seed,
                        threads=threads)
    return _PointSim(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def _analysis(cfg, sigma):
    obs = cfg.observer(sigma)
    E, _ = steady_state_cov(cfg.model, cfg.pool, obs, keep_sequence=False)
    bound = leakage_bound(cfg.model, cfg.pool, obs, E).bound_nats
    return E, float(bound), performance(E, cfg.Omega)


def _with_context(exc, context):
    """Same exception type with ``context`` prefixed, when the type allows it."""
    try:
        new = type(exc)(f"{context}: {exc}")
    except Exception:
        return exc
    return new


def _se(x):
    return float(np.std(x) / np.sqrt(len(x)))


def _row(cfg, axis_value, acc_runs, sim, bound, perf):
    return SweepRow(float(axis_value), float(np.mean(acc_runs)), _se(acc_runs), bound, perf,
                    float(np.mean(sim.mse_by_run)), _se(sim.mse_by_run),
                    cfg.runs, cfg.horizon, cfg.seed)


def best_tau(acc_by_run, taus):
    """Index and value of the threshold with the highest mean accuracy."""
    j = int(np.argmax(acc_by_run.mean(axis=0)))
    return j, float(taus[j])


def evaluate_sigma(cfg, sigma, threads=1):
    """One sweep row at privacy-noise magnitude ``sigma``."""
    _, bound, perf = _analysis(cfg, sigma)
    if cfg.detector == "map":
        taus = np.array([np.nan])
    elif cfg.tau is not None:
        taus = np.array([cfg.tau])
    else:
        taus = cfg.tau_grid.values()
    sim = _simulate_point(cfg, sigma, taus, threads)
    j, _ = best_tau(sim.acc_by_run, taus)
    return _row(cfg, sigma, sim.acc_by_run[:, j], sim, bound, perf)


def run_sweep(cfg: ExperimentConfig, output=None, overwrite=False, threads=1):
    """Evaluate every grid point of ``cfg.sweep`` along ``cfg.axis``.

    Each grid point reuses the master seed (common random numbers), so
    neighbouring rows differ only through the swept parameter.  Rows are
    written in grid order as they become available; on failure the rows
    already computed stay on disk and the error names the grid point.
    """
    grid = cfg.sweep.values()
    writer = RowWriter(output, overwrite) if output is not None else None
    rows = []
    try:
        if cfg.axis == "tau":
            if cfg.detector != "threshold":
                raise ConfigError("a tau sweep needs the threshold detector")
            try:
                _, bound, perf = _analysis(cfg, cfg.sigma_xi)
                sim = _simulate_point(cfg, cfg.sigma_xi, grid, threads)
            except Exception as exc:
                raise _with_context(exc, f"tau sweep at sigma_xi={cfg.sigma_xi:g}") from exc
            for j, tau in enumerate(grid):
                row = _row(cfg, tau, sim.acc_by_run[:, j], sim, bound, perf)
                rows.append(row)
                if writer:
                    writer.write(row)
        elif cfg.axis == "sigma_xi":
            def job(i):
                try:
                    return evaluate_sigma(cfg, grid[i])
                except Exception as exc:
                    raise _with_context(exc, f"grid point {i} (sigma_xi={grid[i]:g})") from exc

            with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
                for row in ex.map(job, range(len(grid))):
                    rows.append(row)
                    if writer:
                        writer.write(row)
        else:
            raise ConfigError(f"unknown sweep axis {cfg.axis!r}")
    finally:
        if writer:
            writer.close()
    return rows


FIGURE_FILES = ("fig1_accuracy_vs_tau.csv", "fig2_bound_vs_sigma.csv",
               "fig3_accuracy_vs_sigma.csv", "fig4_error_vs_sigma.csv")


def reproduce_figures(out_dir, seed=0, threads=1, runs=None, horizon=None, overwrite=False):
    """Write the data behind the four figures of the two-room example.

    Figure 1 is a threshold sweep at zero privacy noise.  Figures 2-4 come
    from one privacy-noise sweep (best threshold per point); the three files
    carry the same rows, each figure reading a different column.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f for f in FIGURE_FILES]
    for p in paths:
        _check_writable(p, overwrite)
    cfg = two_room_example()
    cfg = replace(cfg, seed=seed, runs=runs or cfg.runs, horizon=horizon or cfg.horizon)
    if horizon:
        cfg.burn_in = min(cfg.burn_in, horizon // 2)

    tau_cfg = replace(cfg, axis="tau", sweep=cfg.tau_grid, sigma_xi=0.0)
    run_sweep(tau_cfg, output=paths[0], overwrite=overwrite, threads=threads)
    sigma_cfg = replace(cfg, axis="sigma_xi")
    rows = run_sweep(sigma_cfg, threads=threads)
    for p in paths[1:]:
        write_rows(p, rows, overwrite=overwrite)
    return paths
