"""Experiment layer: repeated optimizations, success statistics, cost model.

Every randomized quantity is derived from one master seed. Trial ``i`` of an
experiment gets ``trial_seed(master, i)``; results are collected in trial
order, so the worker count never changes the output.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.optimize

from insitu.fidelity import (
    MeasurementModel,
    cnot_target,
    gate_fidelity_unitary,
    local_estimator,
)
from insitu.optimizer import OptimizationOutcome, OptimizerConfig, optimize
from insitu.propagation import Dynamics, random_initial_pulse
from insitu.quantum import matrix_exponential, random_hamiltonian
from insitu.system import SpinSystem

log = logging.getLogger(__name__)

PLACEMENTS = ("fixed", "first_pair", "middle_gap", "next_nearest", "random")


class ThresholdRangeError(ValueError):
    """Requested success probability is outside the measured curve."""


# ------------------------------------------------------------------ seeding


def trial_seed(master: int, index: int, stream: int = 0) -> int:
    """Deterministic 63-bit seed for trial ``index`` of stream ``stream``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(stream), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get("INSITU_WORKERS", "1") or 1)
    return max(1, int(workers))


def ordered_map(fn: Callable, items: Sequence, workers: Optional[int] = None) -> list:
    """``map`` over a process pool; results come back in input order."""
    workers = resolve_workers(workers)
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------------ scenarios


@dataclass(frozen=True)
class Scenario:
    """One optimization problem: system, CNOT placement, pulse grid, optimizer."""

    system: SpinSystem
    t_gate: float
    n_ts: int
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    control: int = 0
    target: int = 1
    placement: str = "fixed"

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        n = self.system.n
        if self.placement in ("middle_gap", "next_nearest") and n < 3:
            raise ValueError(f"placement {self.placement!r} needs at least 3 qubits")
        if self.placement == "fixed":
            if not (0 <= self.control < n and 0 <= self.target < n):
                raise ValueError("control/target qubit out of range")
            if self.control == self.target:
                raise ValueError("control and target qubit must differ")

    def pair(self, rng: Optional[np.random.Generator] = None) -> tuple[int, int]:
        n = self.system.n
        if self.placement == "fixed":
            return self.control, self.target
        if self.placement == "first_pair":
            return 0, 1
        if self.placement == "middle_gap":
            # two qubits near the centre with one qubit between them
            c = (n - 2) // 2
            return c, c + 2
        if self.placement == "next_nearest":
            return 0, 2
        if rng is None:
            raise ValueError("random placement needs a generator")
        c, t = rng.choice(n, size=2, replace=False)
        return int(c), int(t)

    def with_n(self, n: int) -> "Scenario":
        system = SpinSystem(n, self.system.topology, self.system.coupling, None, self.system.strength_seed)
        return replace(self, system=system)

    def with_a_num(self, a_num: float) -> "Scenario":
        return replace(self, optimizer=replace(self.optimizer, measurement=MeasurementModel.from_a_num(a_num)))


@dataclass(frozen=True)
class TrialResult:
    index: int
    seed: int
    control: int
    target: int
    success: bool
    reason: str
    n_upds: int
    n_fids: int
    f_le: float
    f_exact: float


def run_trial(scenario: Scenario, index: int, seed: int, keep_outcome: bool = False):
    rng = np.random.default_rng(seed)
    c, t = scenario.pair(rng)
    target = cnot_target(scenario.system.n, c, t)
    init = random_initial_pulse(scenario.system.n_ctrl, scenario.n_ts, scenario.t_gate, rng)
    cfg = replace(scenario.optimizer, seed=int(rng.integers(2**62)))
    outcome = optimize(Dynamics.from_system(scenario.system), target, init, cfg)
    last = outcome.final
    res = TrialResult(
        index, seed, c, t, outcome.success, outcome.reason, outcome.n_upds, outcome.n_fids,
        last.f_le_exact, last.f_exact,
    )
    return (res, outcome) if keep_outcome else res


def _trial_job(args):
    scenario, index, seed = args
    return run_trial(scenario, index, seed)


# ------------------------------------------------------------------ p_succ


@dataclass(frozen=True)
class PsuccEstimate:
    trials: int
    successes: int
    results: tuple[TrialResult, ...] = ()

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError("successes must lie in [0, trials]")

    @property
    def p(self) -> float:
        return self.successes / self.trials

    @property
    def stderr(self) -> float:
        p = self.p
        return math.sqrt(p * (1 - p) / self.trials)

    @property
    def nupds(self) -> np.ndarray:
        """Update counts of the successful trials."""
        return np.array([r.n_upds for r in self.results if r.success], dtype=float)

    @property
    def mean_nupds(self) -> float:
        x = self.nupds
        return float(x.mean()) if x.size else float("nan")

    @property
    def stderr_nupds(self) -> float:
        x = self.nupds
        return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")


def estimate_psucc(
    scenario: Scenario, n_trials: int, seed: int, workers: Optional[int] = None, stream: int = 0
) -> PsuccEstimate:
    """Run ``n_trials`` optimizations from independent random initial pulses."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    jobs = [(scenario, i, trial_seed(seed, i, stream)) for i in range(n_trials)]
    results = tuple(ordered_map(_trial_job, jobs, workers))
    return PsuccEstimate(n_trials, sum(r.success for r in results), results)


# ------------------------------------------------------------------ A_num threshold


def interpolate_threshold(a_nums: Sequence[float], p_succ: Sequence[float], target_p: float) -> float:
    """``a_num`` at which the success curve crosses ``target_p``.

    The measured ``p_succ`` values are first made non-increasing in ``a_num``
    (isotonic regression), then interpolated linearly in ``log(a_num)``.
    """
    a = np.asarray(a_nums, dtype=float)
    p = np.asarray(p_succ, dtype=float)
    if a.ndim != 1 or a.shape != p.shape or a.size < 1:
        raise ValueError("a_nums and p_succ must be 1-D of equal length")
    if np.any(a <= 0) or np.any(np.diff(a) <= 0):
        raise ValueError("a_num grid must be positive and strictly increasing")
    if not 0 < target_p < 1:
        raise ValueError("target_p must lie in (0, 1)")
    p = scipy.optimize.isotonic_regression(p, increasing=False).x
    if target_p > p[0] or target_p < p[-1]:
        raise ThresholdRangeError(
            f"target p_succ {target_p} outside interpolated range [{p[-1]}, {p[0]}]"
        )
    i = int(np.argmax(p <= target_p))
    if p[i] == target_p or i == 0:
        return float(a[i])
    la, lb = np.log(a[i - 1]), np.log(a[i])
    frac = (p[i - 1] - target_p) / (p[i - 1] - p[i])
    return float(np.exp(la + frac * (lb - la)))


@dataclass(frozen=True)
class ThresholdResult:
    a_num: float
    grid: tuple[float, ...]
    p_succ: tuple[float, ...]
    estimates: tuple[PsuccEstimate, ...]


def anum_at_psucc(
    scenario: Scenario,
    target_p: float,
    anum_grid: Sequence[float],
    trials_per_point: int,
    seed: int,
    workers: Optional[int] = None,
) -> ThresholdResult:
    """Estimate p_succ on every grid point and interpolate the crossing."""
    grid = [float(a) for a in anum_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("anum_grid must be sorted ascending")
    ests = tuple(
        estimate_psucc(scenario.with_a_num(a), trials_per_point, seed, workers, stream=j)
        for j, a in enumerate(grid)
    )
    ps = [e.p for e in ests]
    return ThresholdResult(interpolate_threshold(grid, ps, target_p), tuple(grid), tuple(ps), ests)


# ------------------------------------------------------------------ cost model

N_MEAS_MODES = ("full", "sequential_local", "parallel_local")


@dataclass(frozen=True)
class CostModel:
    t_gate: float
    n_fids: int
    n_upds: int
    p_succ: float
    a_num: float = 0.0
    n_meas_mode: str = "parallel_local"
    t_init: float = 1.0
    t_meas: float = 1.0

    def __post_init__(self):
        if self.n_meas_mode not in N_MEAS_MODES:
            raise ValueError(f"n_meas_mode must be one of {N_MEAS_MODES}")
        if not 0 < self.p_succ <= 1:
            raise ValueError("p_succ must lie in (0, 1]")
        if self.n_fids < 1 or self.n_upds < 1:
            raise ValueError("n_fids and n_upds must be >= 1")
        if self.a_num < 0:
            raise ValueError("a_num must be non-negative")


def n_meas(mode: str, n: int, subsystem_dims: Sequence[int]) -> int:
    if mode == "full":
        return 4**n
    if mode == "sequential_local":
        return int(sum(d * d for d in subsystem_dims))
    if mode == "parallel_local":
        return int(max(d * d for d in subsystem_dims))
    raise ValueError(f"unknown n_meas mode {mode!r}")


def n_prec(a_num: float) -> int:
    """Repetitions for accuracy ``a_num``: ``ceil(a_num**-2)``, unit constant."""
    if a_num == 0:
        return 1
    # guard against 0.01**-2 evaluating to 10000.000000000002
    return int(math.ceil(round(a_num**-2, 9)))


def cost_report(cm: CostModel, n: int, subsystem_dims: Sequence[int]) -> dict:
    """Total runs and wall time to find one gate.

    ``N_runs = N_meas N_prec N_fids N_upds``, ``T_run = T_init + T_gate +
    T_meas`` and ``T_total = T_run N_runs / p_succ``.
    """
    nm = n_meas(cm.n_meas_mode, n, subsystem_dims)
    npr = n_prec(cm.a_num)
    n_runs = nm * npr * cm.n_fids * cm.n_upds
    t_run = cm.t_init + cm.t_gate + cm.t_meas
    return {
        "n": n,
        "subsystem_dims": [int(d) for d in subsystem_dims],
        "n_meas_mode": cm.n_meas_mode,
        "a_num": cm.a_num,
        "p_succ": cm.p_succ,
        "t_init": cm.t_init,
        "t_gate": cm.t_gate,
        "t_meas": cm.t_meas,
        "n_meas": nm,
        "n_prec": npr,
        "n_prec_constant": 1.0,
        "n_fids": cm.n_fids,
        "n_upds": cm.n_upds,
        "n_runs": n_runs,
        "t_run": t_run,
        "t_total": t_run * n_runs / cm.p_succ,
    }


# ------------------------------------------------------------------ perturbation study


@dataclass(frozen=True)
class PerturbationRow:
    n: int
    mean_f: float
    mean_fle: float
    samples: int


def perturbation_scaling(
    n_range: Iterable[int], norm: float = 0.1, samples: int = 100, seed: int = 0
) -> list[PerturbationRow]:
    """Mean gate fidelity and local estimator of ``exp(-iH) U_T`` for random H."""
    if norm <= 0:
        raise ValueError("norm must be positive")
    rows = []
    for n in n_range:
        target = cnot_target(n, 0, 1)
        u_t = target.full()
        f = np.empty(samples)
        fle = np.empty(samples)
        for s in range(samples):
            h = random_hamiltonian(n, norm, trial_seed(seed, s, stream=n))
            u = matrix_exponential(h, -1j) @ u_t
            f[s] = gate_fidelity_unitary(u, u_t)
            fle[s] = local_estimator(u, target)
        rows.append(PerturbationRow(n, float(f.mean()), float(fle.mean()), samples))
    return rows


# ------------------------------------------------------------------ scaling fits


def linear_vs_exponential(ns: Sequence[float], values: Sequence[float]) -> dict:
    """Residual sums of squares of ``a + b n`` and ``a exp(b n)`` fits."""
    x = np.asarray(ns, dtype=float)
    y = np.asarray(values, dtype=float)
    lin = np.polyfit(x, y, 1)
    rss_lin = float(np.sum((np.polyval(lin, x) - y) ** 2))
    b0, loga0 = np.polyfit(x, np.log(y), 1)
    (a, b), _ = scipy.optimize.curve_fit(
        lambda t, a, b: a * np.exp(b * t), x, y, p0=(np.exp(loga0), b0), maxfev=20000
    )
    rss_exp = float(np.sum((a * np.exp(b * x) - y) ** 2))
    return {"linear": lin.tolist(), "rss_linear": rss_lin, "exponential": [float(a), float(b)], "rss_exponential": rss_exp}


def outcome_rows(outcome: OptimizationOutcome) -> list[dict]:
    return [asdict(r) for r in outcome.trace]


# ------------------------------------------------------------------ experiment drivers

TRACE_COLUMNS = ("iteration", "f_le_measured", "f_le_exact", "f_exact")
SCALING_COLUMNS = ("n", "mean_nupds", "stderr_nupds", "trials", "p_succ")
ANUM_COLUMNS = ("n", "f_targ", "anum_at_50", "grid_points")
PERTURB_COLUMNS = ("n", "mean_f", "mean_fle", "samples")
TOPOLOGY_COLUMNS = (
    "topology", "coupling", "t_gate", "n_ts", "trials", "p_succ", "mean_nupds", "stderr_nupds",
)
PSUCC_COLUMNS = ("trial", "seed", "control", "target", "success", "reason", "n_upds", "n_fids", "f_le", "f_exact")


@dataclass
class ResultSet:
    """One tabular artifact plus a JSON-able summary."""

    name: str
    columns: tuple[str, ...]
    rows: list[dict]
    summary: dict = field(default_factory=dict)


def fidelity_trace(scenario: Scenario, seed: int) -> ResultSet:
    """Single optimization with the per-update (F_LE, F) trace."""
    res, outcome = run_trial(scenario, 0, trial_seed(seed, 0), keep_outcome=True)
    rows = outcome_rows(outcome)
    gaps = [r["f_exact"] - r["f_le_exact"] for r in rows if not math.isnan(r["f_exact"])]
    summary = {
        "success": res.success,
        "reason": res.reason,
        "n_upds": res.n_upds,
        "n_fids": res.n_fids,
        "control": res.control,
        "target": res.target,
        "min_gap": min(gaps) if gaps else None,
    }
    return ResultSet("trace", TRACE_COLUMNS, rows, summary)


def psucc_table(est: PsuccEstimate) -> ResultSet:
    rows = [
        {
            "trial": r.index, "seed": r.seed, "control": r.control, "target": r.target,
            "success": int(r.success), "reason": r.reason, "n_upds": r.n_upds, "n_fids": r.n_fids,
            "f_le": r.f_le, "f_exact": r.f_exact,
        }
        for r in est.results
    ]
    summary = {
        "trials": est.trials,
        "successes": est.successes,
        "p_succ": est.p,
        "stderr": est.stderr,
        "mean_nupds": est.mean_nupds,
        "stderr_nupds": est.stderr_nupds,
    }
    return ResultSet("psucc", PSUCC_COLUMNS, rows, summary)


def topology_table(
    scenarios: Sequence[Scenario], trials: int, seed: int, workers: Optional[int] = None
) -> ResultSet:
    rows = []
    for j, sc in enumerate(scenarios):
        est = estimate_psucc(sc, trials, seed, workers, stream=j)
        log.info("%s/%s: p_succ=%.3f", sc.system.topology, sc.system.coupling, est.p)
        rows.append({
            "topology": sc.system.topology,
            "coupling": sc.system.coupling,
            "t_gate": sc.t_gate,
            "n_ts": sc.n_ts,
            "trials": trials,
            "p_succ": est.p,
            "mean_nupds": est.mean_nupds,
            "stderr_nupds": est.stderr_nupds,
        })
    return ResultSet("topology", TOPOLOGY_COLUMNS, rows, {"rows": len(rows)})


def nupds_scaling(
    scenario: Scenario, n_values: Sequence[int], trials: int, seed: int, workers: Optional[int] = None
) -> ResultSet:
    """Mean N_upds of successful runs against qubit number.

    Fits compare a linear and an exponential law; ``n = 3`` is left out of
    the fits because its cost is anomalously low.
    """
    rows = []
    for n in n_values:
        est = estimate_psucc(scenario.with_n(n), trials, seed, workers, stream=n)
        rows.append({
            "n": n,
            "mean_nupds": est.mean_nupds,
            "stderr_nupds": est.stderr_nupds,
            "trials": trials,
            "p_succ": est.p,
        })
    summary: dict = {}
    fit = [(r["n"], r["mean_nupds"]) for r in rows if r["n"] != 3 and np.isfinite(r["mean_nupds"])]
    if len(fit) >= 3:
        try:
            summary["fit"] = linear_vs_exponential(*zip(*fit))
        except RuntimeError as exc:  # curve_fit did not converge
            summary["fit_error"] = str(exc)
    return ResultSet("scaling", SCALING_COLUMNS, rows, summary)


def anum_scaling(
    scenario: Scenario,
    n_values: Sequence[int],
    anum_grid: Sequence[float],
    trials: int,
    seed: int,
    target_p: float = 0.5,
    workers: Optional[int] = None,
) -> ResultSet:
    """``a_num`` at which p_succ crosses ``target_p``, per qubit number.

    The ``anum_at_50`` column holds the crossing for ``target_p`` (0.5 by
    default); it is ``nan`` when the grid does not bracket the target.
    """
    rows = []
    curves = {}
    for n in n_values:
        sc = scenario.with_n(n)
        try:
            res = anum_at_psucc(sc, target_p, anum_grid, trials, seed + n, workers)
            a, ps = res.a_num, list(res.p_succ)
        except ThresholdRangeError as exc:
            log.warning("n=%d: %s", n, exc)
            a, ps = float("nan"), None
        rows.append({"n": n, "f_targ": scenario.optimizer.f_targ, "anum_at_50": a, "grid_points": len(anum_grid)})
        curves[str(n)] = ps
    return ResultSet("anum", ANUM_COLUMNS, rows, {"target_p": target_p, "grid": list(anum_grid), "p_succ": curves})


def perturbation_table(n_values: Sequence[int], norm: float, samples: int, seed: int) -> ResultSet:
    rows = [asdict(r) for r in perturbation_scaling(n_values, norm, samples, seed)]
    return ResultSet("perturb", PERTURB_COLUMNS, rows, {"norm": norm})


def table_scenarios(spec) -> list[Scenario]:
    """Scenarios for the topology table rows of ``spec``.

    Fully connected systems get randomized strengths; the draw is seeded by
    ``system.strength_seed`` or, failing that, the master seed.
    """
    from insitu.spec import DEFAULT_TABLE_ROWS, parse_time

    h = spec.section("harness")
    rows = h["rows"] or DEFAULT_TABLE_ROWS
    out = []
    for r in rows:
        sc = spec.scenario(topology=r["topology"], coupling=r["coupling"], t_gate=parse_time(r["t_gate"]), n_ts=r["n_ts"])
        if r["topology"] == "fully_connected" and sc.system.strength_seed is None:
            sc = replace(sc, system=replace(sc.system, strengths=None, strength_seed=h["seed"]))
        out.append(sc)
    return out


def run_experiment(spec) -> ResultSet:
    """Dispatch a validated :class:`~insitu.spec.ExperimentSpec` on its kind."""
    h = spec.section("harness")
    seed, workers, trials = h["seed"], h["workers"], h["trials"]
    n_values = h["n_values"] or [spec.section("system")["n"]]
    kind = spec.kind
    if kind == "fidelity_trace":
        return fidelity_trace(spec.scenario(), seed)
    if kind == "topology_table":
        return topology_table(table_scenarios(spec), trials, seed, workers)
    if kind == "nupds_scaling":
        return nupds_scaling(spec.scenario(), n_values, trials, seed, workers)
    if kind == "anum_scaling":
        return anum_scaling(spec.scenario(), n_values, h["anum_grid"], trials, seed, h["target_p"], workers)
    if kind == "perturbation":
        return perturbation_table(n_values, h["norm"], h["samples"], seed)
    raise ValueError(f"unknown experiment kind {kind!r}")
