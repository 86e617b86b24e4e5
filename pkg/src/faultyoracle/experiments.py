"""Experiment orchestration: runtime sweeps, bound audits, noise unraveling
checks, scaling fits and result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from faultyoracle.dynamics import (
    IntegratorConfig,
    NoiseTrajectoryConfig,
    evolve_lindblad,
    stochastic_oracle_run,
)
from faultyoracle.progress import (
    CRITERIA,
    P_THRESHOLD,
    BoundReport,
    PairedTrajectory,
    bound_reports,
    growth_rate_cap,
    paired_trajectory,
    runtime_lower_bound,
)
from faultyoracle.quantum_core import hermiticity_error, projector
from faultyoracle.search_model import SearchModel, build_oracle_generator

log = logging.getLogger(__name__)

CSV_COLUMNS = ["N", "gamma", "E", "p", "criterion", "T_measured", "T_bound", "satisfied",
               "wall_time_s"]
TRAJECTORY_COLUMNS = ["t", "success_prob", "F_w", "F_total", "rate_direct", "rate_closed_form",
                      "purity_w", "trace_w"]
DEFAULT_N_VALUES = [2**k for k in range(6, 13)]
# samples kept per run; exact stepping makes the reduced grid as fine as we like
REDUCED_SAMPLES = 20000
FULL_SAMPLES_SMALL = 4000
FULL_SAMPLES_LARGE = 1000
CROSSCHECK_MAX_N = 32


class NoRowsError(ValueError):
    pass


@dataclass
class SweepSpec:
    n_values: list[int] = field(default_factory=lambda: list(DEFAULT_N_VALUES))
    gamma: float = 1.0
    alpha: float | None = None
    delta: float | None = None
    E: float = 1.0
    p: float = 0.8
    criterion: str = "trace-distance"
    t_max: float | None = None
    step_size: float | None = None
    engine: str = "reduced"
    jobs: int = 1
    seed: int = 0
    crosscheck_max_n: int = CROSSCHECK_MAX_N
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.n_values:
            raise ValueError("n_values must be nonempty")
        if any(n < 2 for n in self.n_values):
            raise ValueError("every N must be >= 2")
        if self.power_law:
            if self.alpha is None:
                self.alpha = 1.0
            if self.delta is None:
                self.delta = 0.0
            if not self.alpha > 0 or self.delta < 0:
                raise ValueError("power-law rule needs alpha > 0 and delta >= 0")
        elif self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.engine not in ("reduced", "full"):
            raise ValueError("engine must be 'reduced' or 'full'")

    @property
    def power_law(self) -> bool:
        return self.alpha is not None or self.delta is not None

    @property
    def gamma_rule(self) -> str:
        return "power-law" if self.power_law else "constant"

    def gamma_for(self, N: int) -> float:
        if self.power_law:
            return self.alpha * N ** (-2 * self.delta)
        return self.gamma


@dataclass
class SweepResult:
    rows: list[BoundReport]
    fitted_exponent: float | None = None
    fit_stderr: float | None = None
    crosscheck: list[BoundReport] = field(default_factory=list)
    spec: SweepSpec | None = None


def settle_time(N: int, gamma: float, E: float) -> float:
    """Relaxation time of the winner population in the strongly dephased regime."""
    if gamma <= 0:
        return 0.0
    return N * gamma / (8 * E**2)


def sweep_t_max(N: int, gamma: float, E: float, p: float) -> float:
    horizon = max(math.pi * math.sqrt(N) / (2 * E), 3 * settle_time(N, gamma, E))
    if gamma > 0 and p >= P_THRESHOLD:
        horizon = max(horizon, runtime_lower_bound(N, gamma, E, p))
    return 2 * horizon


def bound_t_max(N: int, gamma: float, E: float, ps: Sequence[float]) -> float:
    """Twice the largest bound (and the noiseless peak time): later crossings cannot violate it."""
    horizon = math.pi * math.sqrt(N) / (2 * E)
    if gamma > 0:
        horizon = max([horizon] + [runtime_lower_bound(N, gamma, E, p) for p in ps
                                   if p >= P_THRESHOLD])
    return 2 * horizon


def run_plan(model: SearchModel, t_max: float, engine: str,
             step_size: float | None = None) -> tuple[IntegratorConfig, int]:
    """Integrator and sampling stride for one paired run.

    The reduced engine steps with the exact propagator, so its step is the
    sampling interval; the full engine uses RK4 at the default step.
    """
    if engine == "reduced":
        dt = step_size or t_max / REDUCED_SAMPLES
        return IntegratorConfig(dt, "expm"), 1
    cfg = IntegratorConfig(step_size).resolve(model.E, model.gamma)
    budget = FULL_SAMPLES_SMALL if model.N <= 32 else FULL_SAMPLES_LARGE
    n_steps = math.ceil(t_max / cfg.step_size)
    return cfg, max(1, math.ceil(n_steps / budget))


def run_paired(model: SearchModel, t_max: float, engine: str,
               step_size: float | None = None) -> PairedTrajectory:
    cfg, stride = run_plan(model, t_max, engine, step_size)
    return paired_trajectory(model, t_max, cfg, engine, stride, brute_force_sum=False)


def _measure_point(args) -> BoundReport:
    model, p, criterion, t_max, engine, step_size, record = args
    start = time.perf_counter()
    try:
        pt = run_paired(model, t_max, engine, step_size)
    except Exception as exc:  # recorded in the row; the sweep carries on
        log.warning("N=%d failed: %s", model.N, exc)
        bound = (runtime_lower_bound(model.N, model.gamma, model.E, p)
                 if model.gamma > 0 and p >= P_THRESHOLD else None)
        return BoundReport(model.N, model.gamma, model.E, p, criterion, None, bound, None,
                           t_max, engine, error=f"{type(exc).__name__}: {exc}")
    report = bound_reports(pt, [p], criterion)[0]
    report.wall_time = time.perf_counter() - start if record else 0.0
    return report


def _map(func, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, tasks))
    return [func(t) for t in tasks]


def fit_power_law(n_values: Iterable[float], times: Iterable[float]) -> tuple[float, float]:
    """Least-squares slope of ``log T`` against ``log N`` and its standard error."""
    x = np.log(np.asarray(list(n_values), dtype=float))
    y = np.log(np.asarray(list(times), dtype=float))
    if x.size < 3:
        raise ValueError("need at least 3 points to fit an exponent")
    res = stats.linregress(x, y)
    return float(res.slope), float(res.stderr)


def fit_rows(rows: Sequence[BoundReport]) -> tuple[float | None, float | None]:
    ok = [r for r in rows if r.T_measured is not None and r.T_measured > 0]
    if len(ok) < 3:
        return None, None
    return fit_power_law([r.N for r in ok], [r.T_measured for r in ok])


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Threshold time per N, a log-log exponent fit, and full-space cross-checks for small N."""
    n_values = sorted(set(spec.n_values))
    tasks = []
    for N in n_values:
        gamma = spec.gamma_for(N)
        model = SearchModel(N=N, E=spec.E, gamma=gamma)
        t_max = spec.t_max or sweep_t_max(N, gamma, spec.E, spec.p)
        tasks.append((model, spec.p, spec.criterion, t_max, spec.engine, spec.step_size,
                      spec.record_wall_time))
    cross_tasks = []
    if spec.engine == "reduced":
        cross_tasks = [(t[0], t[1], t[2], t[3], "full", None, t[6]) for t in tasks
                       if t[0].N <= spec.crosscheck_max_n]
    reports = _map(_measure_point, tasks + cross_tasks, spec.jobs)
    rows, cross = reports[:len(tasks)], reports[len(tasks):]
    exponent, stderr = fit_rows(rows)
    return SweepResult(rows, exponent, stderr, cross, spec)


@dataclass
class VerifyReport:
    rows: list[BoundReport]

    @property
    def checked(self) -> list[BoundReport]:
        return [r for r in self.rows if r.T_lower_bound is not None]

    @property
    def violations(self) -> list[BoundReport]:
        return [r for r in self.checked if r.satisfied is False]

    @property
    def ok(self) -> bool:
        return not self.violations

    def lines(self) -> list[str]:
        out = []
        for r in self.rows:
            if r.T_lower_bound is None:
                status = "SKIP (no bound)"
            elif r.T_measured is None:
                status = "ok (not reached)"
            else:
                status = "ok" if r.satisfied else "VIOLATED"
            ratio = "" if r.ratio is None else f" ratio={r.ratio:.4g}"
            out.append(f"N={r.N} gamma={r.gamma:g} E={r.E:g} p={r.p:g} "
                       f"T={_fmt(r.T_measured)} bound={_fmt(r.T_lower_bound)}{ratio} {status}")
        return out


def verify_rows(rows: Sequence[BoundReport]) -> VerifyReport:
    """Re-derive the satisfied flag of every row from its own numbers."""
    if not rows:
        raise NoRowsError("no rows")
    checked = []
    for r in rows:
        if r.gamma > 0 and r.p >= P_THRESHOLD:
            bound = runtime_lower_bound(r.N, r.gamma, r.E, r.p)
            satisfied = r.T_measured is None or r.T_measured >= bound - 1e-9
        else:
            bound, satisfied = None, None
        checked.append(BoundReport(r.N, r.gamma, r.E, r.p, r.criterion, r.T_measured, bound,
                                   satisfied, r.t_max, r.engine, r.wall_time))
    return VerifyReport(checked)


def verify_bounds(specs: SweepSpec | Sequence[SweepSpec]) -> VerifyReport:
    if isinstance(specs, SweepSpec):
        specs = [specs]
    rows = []
    for spec in specs:
        result = run_sweep(spec)
        rows.extend(r for r in result.rows + result.crosscheck if r.gamma > 0)
    return verify_rows(rows)


@dataclass
class TrajectoryAudit:
    """Per-trajectory checks of the growth-rate machinery."""

    N: int
    gamma: float
    E: float
    engine: str
    samples: int
    cap: float
    max_rate_excess: float
    max_integrated_excess: float
    max_rate_ratio: float
    max_closed_form_mismatch: float
    max_fd_mismatch: float
    fd_points: int
    max_trace_error: float
    max_hermiticity_error: float
    min_eigenvalue: float


def audit_trajectory(pt: PairedTrajectory, fd_points: int = 100, h: float = 1e-4) -> TrajectoryAudit:
    """Cap inequality, integrated cap, and three-way rate agreement along one run."""
    obs = pt.observables
    m = pt.model
    cap = growth_rate_cap(m.E, m.gamma)
    summed_rate = m.N * obs["rate_direct"]
    idx = np.unique(np.linspace(1, len(pt.times) - 2, fd_points).round().astype(int))
    fd = np.array([pt.finite_difference_rate(i, h) for i in idx])
    fd_mismatch = np.maximum(np.abs(fd - obs["rate_direct"][idx]),
                             np.abs(fd - obs["rate_closed_form"][idx]))
    return TrajectoryAudit(
        N=m.N, gamma=m.gamma, E=m.E, engine=pt.engine, samples=len(pt.times), cap=cap,
        max_rate_excess=float(np.max(summed_rate - cap)),
        max_integrated_excess=float(np.max(obs["F_total"] - cap * pt.times)),
        max_rate_ratio=float(np.max(summed_rate) / cap),
        max_closed_form_mismatch=float(np.max(np.abs(obs["rate_direct"] - obs["rate_closed_form"]))),
        max_fd_mismatch=float(np.max(fd_mismatch)),
        fd_points=len(idx),
        max_trace_error=float(np.max(np.abs(obs["trace_w"] - 1.0))),
        max_hermiticity_error=hermiticity_error(pt.rho_w),
        min_eigenvalue=float(np.linalg.eigvalsh(pt.rho_w).min()),
    )


def _grid_point(args):
    N, gamma, E, ps, criterion, engine, fd_points = args
    model = SearchModel(N=N, E=E, gamma=gamma)
    t_max = bound_t_max(N, gamma, E, ps)
    start = time.perf_counter()
    pt = run_paired(model, t_max, engine)
    reports = bound_reports(pt, ps, criterion, time.perf_counter() - start)
    audit = audit_trajectory(pt, fd_points)
    chain = derivation_chain_check(pt, reports)
    return reports, audit, chain


def derivation_chain_check(pt: PairedTrajectory, reports: Sequence[BoundReport]) -> float:
    """Smallest slack in ``F_w >= 1 - 2<phi|rho_w|phi> >= 2p^2 - 1`` at crossing samples.

    Only meaningful for the trace-distance criterion; returns ``inf`` when
    no row crossed.
    """
    obs = pt.observables
    worst = math.inf
    for r in reports:
        if r.T_measured is None or r.criterion != "trace-distance":
            continue
        i = int(np.searchsorted(pt.times, r.T_measured))
        i = min(i, len(pt.times) - 1)
        first = obs["F_w"][i] - obs["fidelity_term"][i]
        second = obs["fidelity_term"][i] - (2 * r.p**2 - 1)
        worst = min(worst, float(first), float(second))
    return worst


@dataclass
class GridResult:
    reports: list[BoundReport]
    audits: list[TrajectoryAudit]
    chain_slack: float


def bound_grid(full_n: Sequence[int], reduced_n: Sequence[int], gammas: Sequence[float],
               energies: Sequence[float], ps: Sequence[float],
               criterion: str = "trace-distance", fd_points: int = 100,
               jobs: int = 1) -> GridResult:
    """One paired run per (engine, N, gamma, E); every p is read off the same run."""
    tasks = [(N, g, E, list(ps), criterion, engine, fd_points)
             for engine, ns in (("full", full_n), ("reduced", reduced_n))
             for N in ns for g in gammas for E in energies]
    results = _map(_grid_point, tasks, jobs)
    reports = [r for rs, _, _ in results for r in rs]
    audits = [a for _, a, _ in results]
    slack = min((c for _, _, c in results), default=math.inf)
    return GridResult(reports, audits, slack)


@dataclass
class UnravelReport:
    n_trajectories: int
    max_frobenius_distance: float
    decay_rate_stochastic: float
    decay_rate_stochastic_stderr: float
    decay_rate_lindblad: float
    gamma: float

    @property
    def rate_ratio(self) -> float:
        return self.decay_rate_stochastic / self.decay_rate_lindblad


def coherence_magnitude(states: np.ndarray, w: int) -> np.ndarray:
    """Norm of the off-diagonal part of row ``w``."""
    row = states[:, w, :].copy()
    row[:, w] = 0.0
    return np.linalg.norm(row, axis=1)


def fit_decay_rate(times: np.ndarray, coherence: np.ndarray, mask: np.ndarray) -> float:
    """Dephasing rate from ``|coherence| ~ exp(-rate t / 2)``."""
    res = stats.linregress(times[mask], np.log(coherence[mask]))
    return float(-2 * res.slope)


def unravel_check(noise: NoiseTrajectoryConfig, model: SearchModel, t_final: float,
                  cfg: IntegratorConfig | None = None, jobs: int = 1,
                  min_coherence_fraction: float = 0.05) -> UnravelReport:
    """Compare the noise-averaged fluctuating oracle with the dephasing Lindbladian."""
    if not math.isclose(model.gamma, noise.dephasing_rate, rel_tol=1e-9, abs_tol=1e-15):
        raise ValueError(f"model gamma {model.gamma} differs from the noise-equivalent rate "
                         f"{noise.dephasing_rate}")
    # exact stepping on both sides leaves only Monte-Carlo error in the comparison
    cfg = (cfg or IntegratorConfig(method="expm")).resolve(model.E, model.gamma)
    psi0 = model.start_state()
    stoch = stochastic_oracle_run(model, noise, psi0, t_final, cfg, jobs=jobs)
    lind = evolve_lindblad(build_oracle_generator(model), projector(psi0), t_final, cfg)
    dist = np.sqrt(np.sum(np.abs(stoch.states - lind.states) ** 2, axis=(1, 2)))
    c_lind = coherence_magnitude(lind.states, model.w)
    c_stoch = coherence_magnitude(stoch.states, model.w)
    mask = c_lind >= min_coherence_fraction * c_lind[0]
    if model.gamma > 0:
        rate_l = fit_decay_rate(lind.times, c_lind, mask)
        rate_s = fit_decay_rate(stoch.times, c_stoch, mask)
    else:
        rate_l = rate_s = 0.0
    stderr = 0.0
    chunks = stoch.chunk_means
    if model.gamma > 0 and chunks is not None and len(chunks) > 1:
        # leave-one-chunk-out jackknife over equally seeded chunks
        k = len(chunks)
        total = chunks.sum(axis=0)
        loo = [fit_decay_rate(stoch.times, coherence_magnitude((total - c) / (k - 1), model.w), mask)
               for c in chunks]
        stderr = float(np.sqrt((k - 1) / k * np.sum((np.array(loo) - np.mean(loo)) ** 2)))
    return UnravelReport(noise.n_trajectories, float(dist.max()), rate_s, stderr, rate_l,
                         model.gamma)


def unravel_convergence(noise: NoiseTrajectoryConfig, model: SearchModel, t_final: float,
                        counts: Sequence[int], n_seeds: int = 4,
                        cfg: IntegratorConfig | None = None, jobs: int = 1) -> dict[int, float]:
    """Mean over independent seeds of the max-over-time distance, per trajectory count.

    A single seed's maximum is too noisy to show the Monte-Carlo decay; the
    seed average should fall roughly as ``1/sqrt(count)``.
    """
    base = np.random.SeedSequence(noise.rng_seed)
    out = {}
    for count in counts:
        seeds = base.spawn(n_seeds)
        distances = [
            unravel_check(replace(noise, n_trajectories=count,
                                  rng_seed=int(s.generate_state(1)[0])),
                          model, t_final, cfg, jobs).max_frobenius_distance
            for s in seeds
        ]
        out[count] = float(np.mean(distances))
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_record(r: BoundReport, record_wall_time: bool = True) -> dict:
    return {
        "N": r.N, "gamma": r.gamma, "E": r.E, "p": r.p, "criterion": r.criterion,
        "T_measured": r.T_measured, "T_bound": r.T_lower_bound, "satisfied": r.satisfied,
        "wall_time_s": r.wall_time if record_wall_time else None,
    }


def results_csv(rows: Sequence[BoundReport], record_wall_time: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        rec = report_record(r, record_wall_time)
        writer.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def results_json(result: SweepResult) -> str:
    record = result.spec.record_wall_time if result.spec else True
    payload = {
        "rows": [report_record(r, record) for r in result.rows],
        "crosscheck": [dict(report_record(r, record), engine=r.engine) for r in result.crosscheck],
        "fitted_exponent": result.fitted_exponent,
        "fit_stderr": result.fit_stderr,
        "spec": asdict(result.spec) if result.spec else None,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_results(result: SweepResult, path: str | Path, fmt: str = "csv") -> None:
    path = Path(path)
    if fmt == "csv":
        record = result.spec.record_wall_time if result.spec else True
        text = results_csv(result.rows, record)
    elif fmt == "json":
        text = results_json(result)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def _parse_optional(value: str, cast):
    return None if value == "" else cast(value)


def _parse_bool(value: str) -> bool | None:
    if value == "":
        return None
    return value.strip().lower() == "true"


def read_results_csv(path: str | Path) -> list[BoundReport]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read results from {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    rows = []
    for rec in reader:
        rows.append(BoundReport(
            N=int(rec["N"]), gamma=float(rec["gamma"]), E=float(rec["E"]), p=float(rec["p"]),
            criterion=rec["criterion"],
            T_measured=_parse_optional(rec["T_measured"], float),
            T_lower_bound=_parse_optional(rec["T_bound"], float),
            satisfied=_parse_bool(rec["satisfied"]),
            t_max=math.nan,
            wall_time=_parse_optional(rec["wall_time_s"], float) or 0.0,
        ))
    return rows


def read_results_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def trajectory_csv(pt: PairedTrajectory) -> str:
    obs = pt.observables
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    for i in range(len(pt.times)):
        writer.writerow([repr(float(obs[c][i])) for c in TRAJECTORY_COLUMNS])
    return buf.getvalue()
