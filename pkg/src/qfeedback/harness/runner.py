"""Trajectory and ensemble execution with deterministic, thread-count-free results.

Each trajectory draws its noise from its own stream, derived from
``(master_seed, index)``. Ensembles run trajectories on a thread pool (the
compiled integrator releases the GIL) and fold the results in index order,
so every statistic is bit-identical for any number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from qfeedback import _kernels
from qfeedback.analysis import lyapunov_V, lyapunov_v
from qfeedback.control import (
    ControlLaw,
    Regime,
    fixed_law,
    spin_feedback_law,
    spin_switching_law,
    two_qubit_feedback_law,
    two_qubit_switching_law,
)
from qfeedback.dynamics import (
    INITIAL_STATE_STREAM,
    WIENER_STREAM,
    SystemSpec,
    spin_system,
    trajectory_rng,
    two_qubit_system,
    wiener_increments,
)
from qfeedback.harness.config import ConfigError, SimulationConfig
from qfeedback.operators import TargetKind, TargetSpec, bell_vector, target_state
from qfeedback.qstate import DEFAULT_TOL, DensityMatrix, random_pure

SAMPLE_COLUMNS = ("t", "fidelity", "v", "trFz", "u1", "u2", "regime")
EVENT_COLUMNS = ("t", "from_regime", "to_regime", "fidelity")


@dataclass(frozen=True, eq=False)
class Setup:
    """Objects built once per config: system, target and control law."""

    spec: SystemSpec
    target: TargetSpec
    law: ControlLaw


@lru_cache(maxsize=32)
def _setup(system_kind, two_J, eta, target_kind, target_m, ctrl_kind, ctrl_k, ctrl_gamma) -> Setup:
    if system_kind == "spin":
        spec = spin_system(two_J, eta)
        target = target_state(target_kind, two_J=two_J, m=target_m)
    else:
        spec = two_qubit_system(eta)
        target = target_state(target_kind)
    n = spec.N
    m = spec.n_controls
    if ctrl_kind == "zero":
        law = fixed_law([0.0] * m, n)
    elif ctrl_kind == "constant":
        law = fixed_law([ctrl_k] * m, n)
    elif ctrl_kind == "switching":
        law = spin_switching_law(ctrl_gamma, target)
    elif ctrl_kind == "feedback":
        law = spin_feedback_law(target)
    elif ctrl_kind == "two_qubit_switching":
        law = two_qubit_switching_law(ctrl_gamma, target)
    elif ctrl_kind == "two_qubit_feedback":
        law = two_qubit_feedback_law(target)
    else:
        raise ConfigError(f"controller.kind: unsupported {ctrl_kind!r}")
    return Setup(spec, target, law)


def build(config: SimulationConfig) -> Setup:
    c = config.controller
    return _setup(config.system.kind, config.system.two_J, config.eta, config.target.kind, config.target.m,
                  c.kind, c.k, c.gamma)


def initial_state(config: SimulationConfig, index: int) -> np.ndarray:
    """Initial density matrix of trajectory `index` (random kinds use stream 1)."""
    n = config.system.N
    kind = config.initial_state.kind
    if kind == "maximally_mixed":
        return np.eye(n, dtype=np.complex128) / n
    if kind == "eigenstate":
        rho = np.zeros((n, n), dtype=np.complex128)
        rho[config.initial_state.m, config.initial_state.m] = 1.0
        return rho
    if kind == "explicit":
        return np.array(DensityMatrix(config.initial_state.as_array()).matrix)
    if kind == "random_pure":
        rng = trajectory_rng(config.master_seed, index, INITIAL_STATE_STREAM)
        return np.array(random_pure(n, rng).matrix)
    raise ConfigError(f"initial_state.kind: unsupported {kind!r}")


@dataclass(eq=False)
class TrajectoryRecord:
    """Result of one integrated path.

    ``samples`` has one row per recorded step with columns
    :data:`SAMPLE_COLUMNS` (``u2`` is NaN for single-input systems);
    ``switch_events`` has columns :data:`EVENT_COLUMNS`.
    """

    seed_index: int
    samples: np.ndarray
    switch_events: np.ndarray
    final_rho: np.ndarray
    converged: bool
    final_V: float
    final_v: float
    min_fidelity: float
    failed: bool = False
    fail_step: int | None = None
    fail_reason: str = ""

    @property
    def n_switches(self) -> int:
        return len(self.switch_events)

    @property
    def n_exits(self) -> int:
        """Number of feedback-to-drive hand-overs."""
        ev = self.switch_events
        return int(np.count_nonzero((ev[:, 1] == Regime.FEEDBACK) & (ev[:, 2] == Regime.DRIVE)))

    @property
    def final_fidelity(self) -> float:
        return 1.0 - self.final_V


def _integrate(setup: Setup, rho: np.ndarray, dws: np.ndarray, dt: float, stride: int, n_events: int):
    law = setup.law
    spec = setup.spec
    state = law.initial_state(rho)
    gamma = law.gamma
    n_rows = len(dws) // stride + 1
    samples = np.empty((n_rows, _kernels.N_SAMPLE_COLS))
    events = np.empty((n_events, _kernels.N_EVENT_COLS))
    rf = setup.target.rho_f.matrix
    out = _kernels.run_path(rho, spec.F, spec.stacked_controls, spec.c, rf, spec.c, math.sqrt(spec.eta),
                            int(law.mode), gamma, int(state.regime), int(state.last_entry),
                            law.offsets, law.observables, law.drives, dws, dt, stride,
                            0.5 * DEFAULT_TOL.tol_psd, samples, events)
    return out, samples, events


def run_trajectory(config: SimulationConfig, index: int = 0) -> TrajectoryRecord:
    """Integrate trajectory `index` of `config`.

    The result depends only on ``(config, index)``. A path that leaves the
    density set is returned with ``failed=True`` and the samples recorded up
    to the failure.
    """
    if index < 0:
        raise ValueError("trajectory index must be nonnegative")
    setup = build(config)
    rho0 = initial_state(config, index)
    dws = wiener_increments(trajectory_rng(config.master_seed, index, WIENER_STREAM), config.n_steps, config.dt)
    cap = 256
    while True:
        rho = rho0.copy()
        (status, done, n_ev, min_fid, _, _), samples, events = _integrate(
            setup, rho, dws, config.dt, config.record_stride, cap)
        if n_ev <= cap:
            break
        cap = n_ev  # rerun with room for the full log; the path is identical
    n_rec = done // config.record_stride + 1
    failed = status != _kernels.OK
    final_V = float(lyapunov_V(rho, setup.target))
    final_v = float(lyapunov_v(rho, setup.spec.c))
    reason = ""
    if failed:
        what = "non-finite entries" if status == _kernels.FAIL_NONFINITE else "nonpositive trace"
        reason = f"step {done} (t={done * config.dt:g}): {what} after the update"
    return TrajectoryRecord(
        seed_index=int(index),
        samples=samples[:n_rec],
        switch_events=events[:n_ev],
        final_rho=rho,
        converged=bool(not failed and final_V < config.converge_eps),
        final_V=final_V,
        final_v=final_v,
        min_fidelity=float(min_fid),
        failed=bool(failed),
        fail_step=int(done) if failed else None,
        fail_reason=reason,
    )


# -- ensembles -----------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySummary:
    """Per-trajectory scalars kept by ensembles (one row of ``trajectories.csv``)."""

    index: int
    failed: bool
    converged: bool
    final_V: float
    final_v: float
    final_fidelity: float
    cross_fidelity: float
    min_fidelity: float
    n_switches: int
    n_exits: int
    collapse_class: int
    drift_slope: float


SUMMARY_COLUMNS = tuple(TrajectorySummary.__dataclass_fields__)


@dataclass
class EnsembleStats:
    """Aggregates over an ensemble.

    Fractions count failed trajectories in the denominator (as not
    converged, not resolved); means of final values use successful paths
    only. Standard errors are NaN when fewer than two values exist.

    ``collapse_histogram[k]`` is the fraction whose final state has
    ``v < converge_eps`` and lies in the k-th eigenspace of the measured
    observable (eigenvalues in increasing order); the remainder is
    ``unresolved_fraction``. ``martingale_drift`` is the least-squares slope
    of the mean fidelity path over time, computed as the mean of the
    per-trajectory slopes so that its standard error is available.
    ``switch_survival[k]`` and ``exit_survival[k]`` are the fractions with at
    least k switches and at least k feedback-to-drive exits.
    """

    n: int
    n_failed: int
    convergence_fraction: float
    convergence_stderr: float
    collapse_histogram: list
    unresolved_fraction: float
    mean_switch_count: float
    max_switch_count: int
    switch_survival: list
    exit_survival: list
    mean_final_V: float
    mean_final_V_stderr: float
    mean_cross_fidelity: float
    martingale_drift: float
    martingale_drift_stderr: float
    band_exit_fraction: float
    mean_fidelity_path: np.ndarray = field(repr=False)
    trajectories: list = field(repr=False, default_factory=list)
    failures: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__
             if k not in ("mean_fidelity_path", "trajectories")}
        return d


def _eigenspaces(obs: np.ndarray) -> list[np.ndarray]:
    """Index sets of the standard basis grouped by equal diagonal value of `obs`."""
    d = np.real(np.diag(obs))
    vals = np.unique(np.round(d, 12))
    return [np.flatnonzero(np.abs(d - v) < 1e-9) for v in vals]


def _classify(rho, v, eps, spaces) -> int:
    if not v < eps:
        return -1
    diag = np.real(np.diag(rho))
    weights = [diag[s].sum() for s in spaces]
    return int(np.argmax(weights))


def _other_target(target: TargetSpec):
    if target.kind is TargetKind.TWO_QUBIT_ANTISYMMETRIC:
        return bell_vector(TargetKind.TWO_QUBIT_SYMMETRIC)
    if target.kind is TargetKind.TWO_QUBIT_SYMMETRIC:
        return bell_vector(TargetKind.TWO_QUBIT_ANTISYMMETRIC)
    return None


def _slope(t, y) -> float:
    tc = t - t.mean()
    den = float(tc @ tc)
    return float(tc @ (y - y.mean()) / den) if den > 0 else math.nan


def _summarize(config: SimulationConfig, setup: Setup, rec: TrajectoryRecord, spaces, other) -> TrajectorySummary:
    cross = math.nan
    if other is not None:
        cross = float(np.real(other.conj() @ rec.final_rho @ other))
    cls = -1 if rec.failed else _classify(rec.final_rho, rec.final_v, config.converge_eps, spaces)
    s = rec.samples
    return TrajectorySummary(
        index=rec.seed_index,
        failed=rec.failed,
        converged=rec.converged,
        final_V=rec.final_V,
        final_v=rec.final_v,
        final_fidelity=rec.final_fidelity,
        cross_fidelity=cross,
        min_fidelity=rec.min_fidelity,
        n_switches=rec.n_switches,
        n_exits=rec.n_exits,
        collapse_class=cls,
        drift_slope=_slope(s[:, 0], s[:, 1]) if len(s) > 1 else math.nan,
    )


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return math.nan, math.nan
    if len(x) == 1:
        return float(x[0]), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def _survival(counts, n) -> list:
    counts = np.asarray(counts, dtype=int)
    top = int(counts.max()) if len(counts) else 0
    return [float(np.count_nonzero(counts >= k)) / n for k in range(top + 1)]


def default_workers() -> int:
    return os.cpu_count() or 1


def iter_records(config: SimulationConfig, workers: int | None = None, chunk: int = 64):
    """Yield ``run_trajectory(config, i)`` for all indices, in index order."""
    n = config.n_trajectories
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be at least 1")
    build(config)  # warm the cache before threads race on it
    if workers == 1:
        for i in range(n):
            yield run_trajectory(config, i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, n, chunk):
            idx = range(start, min(n, start + chunk))
            yield from pool.map(lambda i: run_trajectory(config, i), idx)


def run_ensemble(config: SimulationConfig, workers: int | None = None, on_record=None) -> EnsembleStats:
    """Run all trajectories of `config` and aggregate them in index order.

    `on_record`, if given, is called with each :class:`TrajectoryRecord` in
    index order (for writing per-trajectory files); records are not kept.
    """
    setup = build(config)
    spaces = _eigenspaces(setup.spec.c)
    other = _other_target(setup.target)
    n = config.n_trajectories
    rows: list[TrajectorySummary] = []
    failures = []
    path_sum = path_sq = path_t = None
    n_path = 0
    for rec in iter_records(config, workers):
        if on_record is not None:
            on_record(rec)
        rows.append(_summarize(config, setup, rec, spaces, other))
        if rec.failed:
            failures.append({"index": rec.seed_index, "reason": rec.fail_reason})
            continue
        fid = rec.samples[:, 1]
        if path_sum is None:
            path_t = rec.samples[:, 0].copy()
            path_sum = np.zeros_like(fid)
            path_sq = np.zeros_like(fid)
        path_sum += fid
        path_sq += fid * fid
        n_path += 1

    ok = [r for r in rows if not r.failed]
    conv = np.array([r.converged for r in rows], dtype=float)
    conv_frac, conv_se = _mean_se(conv)
    hist = [sum(1 for r in rows if r.collapse_class == k) / n for k in range(len(spaces))]
    switches = [r.n_switches for r in rows]
    mean_V, se_V = _mean_se([r.final_V for r in ok])
    drift, drift_se = _mean_se([r.drift_slope for r in ok if not math.isnan(r.drift_slope)])
    gamma = config.controller.gamma
    band = (float(np.mean([r.min_fidelity <= 0.5 * gamma for r in rows])) if gamma is not None else math.nan)
    if n_path:
        mean = path_sum / n_path
        var = np.maximum(path_sq / n_path - mean * mean, 0.0) * n_path / (n_path - 1) if n_path > 1 else None
        se = np.sqrt(var / n_path) if var is not None else np.full_like(mean, math.nan)
        mpath = np.column_stack([path_t, mean, se])
    else:
        mpath = np.empty((0, 3))
    return EnsembleStats(
        n=n,
        n_failed=len(failures),
        convergence_fraction=conv_frac,
        convergence_stderr=conv_se,
        collapse_histogram=hist,
        unresolved_fraction=1.0 - sum(hist),
        mean_switch_count=float(np.mean(switches)),
        max_switch_count=int(max(switches)),
        switch_survival=_survival(switches, n),
        exit_survival=_survival([r.n_exits for r in rows], n),
        mean_final_V=mean_V,
        mean_final_V_stderr=se_V,
        mean_cross_fidelity=_mean_se([r.cross_fidelity for r in ok])[0] if other is not None else math.nan,
        martingale_drift=drift,
        martingale_drift_stderr=drift_se,
        band_exit_fraction=band,
        mean_fidelity_path=mpath,
        trajectories=rows,
        failures=failures,
    )


def reduction_experiment(config: SimulationConfig, workers: int | None = None, on_record=None) -> EnsembleStats:
    """Uncontrolled ensemble whose final states are classified by eigenspace.

    Raises
    ------
    ConfigError
        If the controller is not ``zero``.
    """
    if config.controller.kind != "zero":
        raise ConfigError(f"controller.kind: the reduction experiment needs 'zero', got {config.controller.kind!r}")
    return run_ensemble(config, workers, on_record)
