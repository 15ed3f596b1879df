"""Monte Carlo harness: trial generation, RMSE cells, sweeps and runtime study.

Seeding
-------
Trial ``t`` of an experiment with master seed ``s`` draws each random
component from its own stream ``np.random.SeedSequence([s, t, k])``:

=====  ==========================================
``k``  component
=====  ==========================================
0      pilots (``t`` is forced to 0 with ``freeze_pilots``)
1      LOS gain phase
2      noise
3      NLOS geometry (scatterers, reflection loss, NLOS phases)
=====  ==========================================

Seeds do not depend on the sweep axis value, so every cell of a sweep sees
the same random draws (common random numbers), which tightens comparisons
between neighbouring cells.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .bounds import ChannelParamVector, compute_bounds
from .errors import ConfigError, MisoposError
from .estimators import Method, SearchGrid, estimate
from .model import (SPEED_OF_LIGHT, ChannelRealization, ObservationSet, PilotBook,
                    generate_pilots, los_path, nlos_path, noise_variance_for_snr,
                    sample_scatterers, scale_to_lmr, synthesize)
from .scenario import Scenario

STREAM_PILOTS = 0
STREAM_PHASE = 1
STREAM_NOISE = 2
STREAM_GEOMETRY = 3

AXES = ("G", "SNR_dB", "LMR_dB", "P_grid")
CSV_HEADER = ("axis_value", "estimator", "rmse_d_m", "rmse_theta_rad", "rmse_pos_m",
              "crlb_d_m", "crlb_theta_rad", "peb_m", "mean_runtime_s", "n_trials", "seed")
BOUND_LABEL = "BOUND"


def stream(master_seed: int, trial: int, component: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(trial), int(component)])


# --------------------------------------------------------------------------
# Trials


@dataclass(frozen=True)
class Trial:
    pilots: PilotBook
    channel: ChannelRealization
    sigma2: float
    observation: ObservationSet

    @property
    def truth(self) -> ChannelParamVector:
        los = self.channel.los
        return ChannelParamVector.from_gain(los.gain, los.delay_s, los.aod_rad)


def build_channel(scenario: Scenario, trial: int, master_seed: int) -> ChannelRealization:
    cfg = scenario.system
    if scenario.gain_phase_rad is None:
        phase = np.random.default_rng(stream(master_seed, trial, STREAM_PHASE)).uniform(0, 2 * np.pi)
    else:
        phase = scenario.gain_phase_rad
    los = los_path(cfg, scenario.ms_position_m, phase)
    if scenario.n_nlos == 0 or scenario.lmr_db == math.inf:
        return ChannelRealization(los, (), scenario.ms_position_m)
    rng = np.random.default_rng(stream(master_seed, trial, STREAM_GEOMETRY))
    if scenario.scatterers_m is not None:
        scatterers = np.asarray(scenario.scatterers_m)
    else:
        scatterers = sample_scatterers(cfg, scenario.ms_position_m, scenario.n_nlos,
                                       scenario.d_max_m, rng)
    loss_db = scenario.reflection_loss_db + scenario.reflection_loss_spread_db * \
        rng.standard_normal(len(scatterers))
    phases = rng.uniform(0, 2 * np.pi, len(scatterers))
    nlos = tuple(
        nlos_path(cfg, scenario.ms_position_m, s, ph, scenario.reflector_density_per_m, l)
        for s, ph, l in zip(scatterers, phases, loss_db))
    channel = ChannelRealization(los, nlos, scenario.ms_position_m)
    if scenario.lmr_db is not None:
        channel = scale_to_lmr(channel, scenario.lmr_db)
    return channel


def draw_trial(scenario: Scenario, trial: int, master_seed: int | None = None) -> Trial:
    """Pilots, channel, noise variance and observations of one Monte Carlo trial."""
    seed = scenario.master_seed if master_seed is None else master_seed
    cfg = scenario.system
    pilots = generate_pilots(cfg, stream(seed, 0 if scenario.freeze_pilots else trial, STREAM_PILOTS))
    channel = build_channel(scenario, trial, seed)
    if scenario.snr_db is None:
        sigma2 = cfg.thermal_noise_watts
    else:
        sigma2 = noise_variance_for_snr(channel.los.gain, scenario.snr_db)
    obs = synthesize(cfg, pilots, channel, sigma2, stream(seed, trial, STREAM_NOISE))
    return Trial(pilots, channel, sigma2, obs)


def grid_for(scenario: Scenario) -> SearchGrid:
    return SearchGrid.default(scenario.grid_points, scenario.d_max_m)


# --------------------------------------------------------------------------
# Estimator labels


def parse_estimator(label: str) -> tuple[Method, int | None]:
    """``"UML"``, ``"ML2D"``, ``"MM"`` or ``"MM:<L>"`` (case-insensitive)."""
    name, _, lag = label.strip().upper().partition(":")
    if name in ("ML", "ML2D"):
        name = "ML2D"
    try:
        method = Method(name)
    except ValueError:
        raise ConfigError(f"unknown estimator '{label}'") from None
    if lag and method is not Method.MM:
        raise ConfigError(f"only MM takes a lag count, got '{label}'")
    return method, (int(lag) if lag else None)


def applicable(method: Method, scenario: Scenario) -> bool:
    cfg = scenario.system
    if method is Method.MM:
        return cfg.n_transmissions >= cfg.n_bs_antennas
    if method is Method.UML:
        return cfg.n_subcarriers >= cfg.n_bs_antennas
    return True


# --------------------------------------------------------------------------
# Cells


def rmse_with_se(sq_errors: np.ndarray) -> tuple[float, float]:
    """RMSE and its jackknife standard error."""
    sq = np.asarray(sq_errors, dtype=float)
    n = sq.size
    rmse = float(np.sqrt(np.mean(sq)))
    if n < 2:
        return rmse, math.nan
    loo = np.sqrt((np.sum(sq) - sq) / (n - 1))
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return rmse, se


@dataclass(frozen=True)
class CellResult:
    rmse_d_m: float
    rmse_theta_rad: float
    rmse_pos_m: float
    se_d_m: float
    se_theta_rad: float
    se_pos_m: float
    mean_runtime_s: float
    n_trials: int
    status: str = "ok"
    sq_errors: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def inapplicable(cls, n_trials: int, status: str = "inapplicable") -> "CellResult":
        nan = math.nan
        return cls(nan, nan, nan, nan, nan, nan, nan, n_trials, status)


def run_cell(scenario: Scenario, estimator: str | Method, n_trials: int,
             seed: int | None = None, keep_errors: bool = False) -> CellResult:
    """RMSE of ``d``, ``theta`` and position over ``n_trials`` trials.

    The estimator receives only observations, pilots, the grid and the
    configuration. Inapplicable estimators return a marked result.
    """
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    label = estimator.value if isinstance(estimator, Method) else estimator
    method, lag = parse_estimator(label)
    lags = lag or scenario.lags
    seed = scenario.master_seed if seed is None else seed
    if not applicable(method, scenario):
        return CellResult.inapplicable(n_trials)
    grid = grid_for(scenario)
    cfg = scenario.system
    sq = np.empty((n_trials, 3))
    runtime = 0.0
    for t in range(n_trials):
        trial = draw_trial(scenario, t, seed)
        start = time.perf_counter()
        try:
            est = estimate(method, trial.observation, trial.pilots, grid, cfg,
                           lags=lags, refine=scenario.refine)
        except MisoposError as exc:
            return CellResult.inapplicable(n_trials, status=f"error: {exc}")
        runtime += time.perf_counter() - start
        los = trial.channel.los
        d_true = SPEED_OF_LIGHT * los.delay_s
        sq[t] = ((est.d_hat - d_true) ** 2,
                 (est.theta_hat - los.aod_rad) ** 2,
                 float(np.sum((est.p_hat - np.asarray(scenario.ms_position_m)) ** 2)))
    (rd, sd), (rt, st), (rp, sp) = (rmse_with_se(sq[:, k]) for k in range(3))
    return CellResult(rd, rt, rp, sd, st, sp, runtime / n_trials, n_trials,
                      sq_errors=sq if keep_errors else None)


@dataclass(frozen=True)
class CellBounds:
    crlb_d_m: float
    crlb_theta_rad: float
    peb_m: float
    n_singular: int = 0


def cell_bounds(scenario: Scenario, n_trials: int, seed: int | None = None) -> CellBounds:
    """Trial-averaged bounds: square root of the mean per-trial CRLB (variance) and PEB^2.

    Each trial uses its own pilot book, so the bound matches the MSE
    averaged over the same pilot draws the estimators see.
    """
    seed = scenario.master_seed if seed is None else seed
    acc = np.zeros(3)
    singular = 0
    for t in range(n_trials):
        trial = draw_trial(scenario, t, seed)
        rec = compute_bounds(scenario.system, trial.pilots, trial.truth, trial.sigma2)
        singular += rec.singular
        acc += (rec.crlb_d ** 2, rec.crlb_theta ** 2, rec.peb_m ** 2)
    acc = np.sqrt(acc / n_trials)
    return CellBounds(float(acc[0]), float(acc[1]), float(acc[2]), singular)


# --------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class SweepSpec:
    scenario: Scenario
    axis: str
    values: tuple[float, ...]
    estimators: tuple[str, ...] = ("ML2D", "UML", "MM")
    n_trials: int = 200
    master_seed: int | None = None

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown sweep axis '{self.axis}', expected one of {AXES}")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        for label in self.estimators:
            parse_estimator(label)
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if self.master_seed is None:
            object.__setattr__(self, "master_seed", self.scenario.master_seed)

    def scenario_at(self, value: float) -> Scenario:
        return apply_axis(self.scenario, self.axis, value)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "axis": self.axis, "values": list(self.values),
                "estimators": list(self.estimators), "n_trials": self.n_trials,
                "master_seed": self.master_seed}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()


def apply_axis(scenario: Scenario, axis: str, value: float) -> Scenario:
    if axis == "G":
        return scenario.override(n_transmissions=int(value))
    if axis == "SNR_dB":
        return scenario.override(snr_db=float(value))
    if axis == "LMR_dB":
        n_nlos = scenario.n_nlos or 2
        return scenario.override(lmr_db=float(value), n_nlos=n_nlos)
    if axis == "P_grid":
        return scenario.override(grid_points=int(value))
    raise ConfigError(f"unknown sweep axis '{axis}'")


@dataclass(frozen=True)
class ResultRow:
    axis_value: float
    estimator: str
    rmse_d_m: float
    rmse_theta_rad: float
    rmse_pos_m: float
    crlb_d_m: float
    crlb_theta_rad: float
    peb_m: float
    mean_runtime_s: float
    n_trials: int
    seed: int
    se_d_m: float = math.nan
    se_theta_rad: float = math.nan
    se_pos_m: float = math.nan
    status: str = "ok"


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def select(self, estimator: str | None = None, axis_value: float | None = None) -> list[ResultRow]:
        return [r for r in self.rows
                if (estimator is None or r.estimator == estimator)
                and (axis_value is None or r.axis_value == axis_value)]

    def column(self, name: str, estimator: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.select(estimator)])

    def to_csv(self, path: str | Path) -> Path:
        """Write the fixed-header CSV (floats in round-trip precision)."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in self.rows:
                writer.writerow([_fmt(getattr(row, name)) for name in CSV_HEADER])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "ResultTable":
        rows = []
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_HEADER:
                raise ConfigError(f"{path}: unexpected CSV header {reader.fieldnames}")
            for rec in reader:
                rows.append(ResultRow(
                    axis_value=float(rec["axis_value"]), estimator=rec["estimator"],
                    **{k: float(rec[k]) for k in CSV_HEADER[2:9]},
                    n_trials=int(rec["n_trials"]), seed=int(rec["seed"])))
        return cls(rows)

    def summary(self, spec: SweepSpec | None = None) -> dict:
        meta = {"code_version": __version__, "n_rows": len(self.rows)}
        if spec is not None:
            meta.update(spec_hash=spec.digest(), master_seed=spec.master_seed,
                        axis=spec.axis, values=list(spec.values),
                        estimators=list(spec.estimators), n_trials=spec.n_trials,
                        seed_streams={"pilots": STREAM_PILOTS, "phase": STREAM_PHASE,
                                      "noise": STREAM_NOISE, "geometry": STREAM_GEOMETRY})
        return {"meta": meta, "rows": [asdict(r) for r in self.rows]}

    def to_json(self, path: str | Path, spec: SweepSpec | None = None) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(spec), indent=2, default=_json_default))
        return path


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj)}")


def _run_cell_job(args):
    scenario, label, n_trials, seed = args
    return run_cell(scenario, label, n_trials, seed)


def _bounds_job(args):
    scenario, n_trials, seed = args
    return cell_bounds(scenario, n_trials, seed)


def run_sweep(spec: SweepSpec, workers: int = 1) -> ResultTable:
    """One row per (axis value, estimator), plus bound columns shared by the rows.

    With an empty estimator list the table holds one bounds-only row per
    axis value. Cells are independent; ``workers > 1`` evaluates them in a
    process pool and the rows are assembled in a fixed order.
    """
    seed = spec.master_seed
    scenarios = [spec.scenario_at(v) for v in spec.values]
    cell_jobs = [(sc, label, spec.n_trials, seed) for sc in scenarios for label in spec.estimators]
    bound_jobs = [(sc, spec.n_trials, seed) for sc in scenarios]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            bounds = list(pool.map(_bounds_job, bound_jobs))
            cells = list(pool.map(_run_cell_job, cell_jobs))
    else:
        bounds = [_bounds_job(j) for j in bound_jobs]
        cells = [_run_cell_job(j) for j in cell_jobs]

    table = ResultTable()
    cell_iter = iter(cells)
    for value, bnd in zip(spec.values, bounds):
        labels = spec.estimators or (BOUND_LABEL,)
        for label in labels:
            if spec.estimators:
                cell = next(cell_iter)
            else:
                cell = CellResult.inapplicable(spec.n_trials, status="bounds-only")
            table.rows.append(ResultRow(
                axis_value=float(value), estimator=label.upper(),
                rmse_d_m=cell.rmse_d_m, rmse_theta_rad=cell.rmse_theta_rad,
                rmse_pos_m=cell.rmse_pos_m, crlb_d_m=bnd.crlb_d_m,
                crlb_theta_rad=bnd.crlb_theta_rad, peb_m=bnd.peb_m,
                mean_runtime_s=cell.mean_runtime_s, n_trials=spec.n_trials, seed=seed,
                se_d_m=cell.se_d_m, se_theta_rad=cell.se_theta_rad, se_pos_m=cell.se_pos_m,
                status=cell.status))
    return table


# --------------------------------------------------------------------------
# Runtime study


@dataclass(frozen=True)
class RuntimeRow:
    grid_points: int
    estimator: str
    mean_runtime_s: float
    normalized: float
    repeats: int


def benchmark_runtimes(P_values: Sequence[int], G: int, scenario: Scenario, repeats: int = 20,
                       estimators: Iterable[str] = ("MM", "UML", "ML2D"),
                       reference_P: int = 150) -> list[RuntimeRow]:
    """Mean estimator wall time per grid size, normalized to MM at ``reference_P``.

    Each repeat uses a fresh trial; one warm-up call per (P, estimator) is
    discarded. Estimators run on a single BLAS thread, each in its own
    contiguous block of repeats, with ML2D measured last. Refinement is
    always off here.
    """
    if repeats < 3:
        raise ConfigError("benchmark needs at least 3 repeats")
    from threadpoolctl import threadpool_limits

    labels = [parse_estimator(e)[0] for e in estimators]
    scenario = scenario.override(n_transmissions=G, refine=False)
    P_all = sorted(set(int(p) for p in P_values) | {int(reference_P)})
    trials = [draw_trial(scenario, t) for t in range(repeats + 1)]
    cfg = scenario.system
    means: dict[tuple[int, Method], float] = {}
    # Light estimators first, ML2D last: a block that follows ML2D inherits its
    # cache and allocator state, which skews sub-millisecond timings.
    order = sorted((m for m in labels if applicable(m, scenario)), key=lambda m: m is Method.ML2D)
    with threadpool_limits(limits=1):
        for m in order:
            for P in P_all:
                grid = SearchGrid.default(P, scenario.d_max_m)
                estimate(m, trials[0].observation, trials[0].pilots, grid, cfg, lags=scenario.lags)
                total = 0.0
                for trial in trials[1:]:
                    start = time.perf_counter()
                    estimate(m, trial.observation, trial.pilots, grid, cfg, lags=scenario.lags)
                    total += time.perf_counter() - start
                means[(P, m)] = total / repeats
    ref = means.get((int(reference_P), Method.MM))
    if ref is None:
        ref = min(means.values())
    rows = []
    for P in sorted(set(int(p) for p in P_values)):
        for m in labels:
            if (P, m) in means:
                rows.append(RuntimeRow(P, m.value, means[(P, m)], means[(P, m)] / ref, repeats))
    return rows


def runtime_table_to_csv(rows: Sequence[RuntimeRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("grid_points", "estimator", "mean_runtime_s", "normalized_to_mm_150", "repeats"))
        for r in rows:
            writer.writerow((r.grid_points, r.estimator, repr(r.mean_runtime_s), repr(r.normalized), r.repeats))
    return path
