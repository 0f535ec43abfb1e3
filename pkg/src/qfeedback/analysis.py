"""Lyapunov functions, their generators, and the spectral reachability check.

Three Lyapunov functions are used:

* ``V(rho) = 1 - Tr[rho rho_f]``, the distance to the target;
* ``v(rho) = Tr[F_z^2 rho] - Tr[F_z rho]^2``, the variance of the measured
  observable;
* ``VV(rho) = 1 - Tr[rho rho_f]^2``.

Their generators (drift of ``f(rho_t)``) have closed forms under the
relevant laws. :func:`generator_mc_estimate` checks those against a Monte
Carlo estimate ``(E f(rho_delta) - f(rho)) / delta`` and
:func:`generator_ito` against the Ito formula evaluated by finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from qfeedback import _kernels
from qfeedback.control import ControlLaw, Mode, Regime, u_feedback_spin
from qfeedback.dynamics import SystemSpec, filter_diffusion, filter_drift
from qfeedback.operators import (
    SpinParams,
    TargetKind,
    TargetSpec,
    angular_momentum_ops,
    bell_vector,
    two_qubit_ops,
)
from qfeedback.qstate import DEFAULT_TOL, ProjectionError, Tolerances, as_matrix


def _tr(a, b):
    # Tr[A B] for stacks of matrices
    return np.einsum("...ij,ji->...", a, b)


def lyapunov_V(rho, target: TargetSpec):
    return 1.0 - _tr(np.asarray(rho), target.rho_f.matrix).real


def lyapunov_v(rho, fz):
    rho = np.asarray(rho)
    fz = np.asarray(fz)
    mean = _tr(rho, fz).real
    return _tr(rho, fz @ fz).real - mean**2


def lyapunov_VV(rho, target: TargetSpec):
    return 1.0 - _tr(np.asarray(rho), target.rho_f.matrix).real ** 2


def generator_v_analytic(rho, eta: float, fz):
    """Drift of ``v`` without control: ``-4 eta v^2``."""
    return -4.0 * eta * lyapunov_v(rho, fz) ** 2


def generator_V_analytic(rho, target: TargetSpec) -> float:
    """Drift of ``V`` under the pure spin feedback law: ``-u^2``."""
    return -u_feedback_spin(rho, target) ** 2


def generator_VV_analytic(rho, target: TargetSpec, eta: float, system_kind: str) -> float:
    """Drift of ``VV`` under the pure feedback law of the given system.

    ``system_kind`` is ``"spin"`` or ``"two_qubit"``. For two qubits the
    squared feedback corrections are ``(u_i - offset_i)^2`` where the offsets
    are (1, 1) for the antisymmetric target and (1, -1) for the symmetric one.
    """
    rho = as_matrix(rho)
    fid = float(np.trace(rho @ target.rho_f.matrix).real)
    if system_kind == "spin":
        _, fz = angular_momentum_ops(SpinParams(target.two_J))
        u1 = u_feedback_spin(rho, target)
        gap = target.lambda_f - float(np.trace(rho @ fz).real)
        return -2.0 * u1**2 * fid - 4.0 * eta * gap**2 * fid**2
    if system_kind == "two_qubit":
        if target.is_spin:
            raise ValueError("two-qubit generator needs a two-qubit target")
        ops = two_qubit_ops()
        rf = target.rho_f.matrix
        corr = [-np.trace(1j * (g @ rho - rho @ g) @ rf).real for g in (ops.sy1, ops.sy2)]
        mz = float(np.trace(rho @ ops.fz).real)
        return -2.0 * (corr[0] ** 2 + corr[1] ** 2) * fid - 4.0 * eta * mz**2 * fid**2
    raise ValueError(f"unknown system kind {system_kind!r}; expected 'spin' or 'two_qubit'")


def lyapunov_function(name: str, target: TargetSpec, fz) -> Callable:
    """Look up one of ``"V"``, ``"v"``, ``"VV"`` as a function of (stacked) states."""
    if name == "V":
        return lambda r: lyapunov_V(r, target)
    if name == "v":
        return lambda r: lyapunov_v(r, fz)
    if name == "VV":
        return lambda r: lyapunov_VV(r, target)
    raise ValueError(f"unknown Lyapunov function {name!r}; expected V, v or VV")


def generator_analytic(name: str, spec: SystemSpec, target: TargetSpec, rho) -> float:
    """Closed-form generator matching the law each function is paired with.

    ``v`` goes with zero control, ``V`` and ``VV`` with pure feedback.
    """
    if name == "v":
        return float(generator_v_analytic(rho, spec.eta, spec.c))
    if name == "V":
        return generator_V_analytic(rho, target)
    if name == "VV":
        return generator_VV_analytic(rho, target, spec.eta, "spin" if target.is_spin else "two_qubit")
    raise ValueError(f"unknown Lyapunov function {name!r}; expected V, v or VV")


def generator_ito(spec: SystemSpec, law: ControlLaw, f: Callable, rho, h: float = 1e-4) -> float:
    """Ito generator ``Df[a] + 1/2 D^2 f[b, b]`` by central differences.

    ``a`` and ``b`` are the filter drift and diffusion at ``rho`` under the
    law's feedback (or fixed) regime. Independent of the integrator.
    """
    rho = as_matrix(rho)
    regime = Regime.FEEDBACK if law.mode is Mode.FEEDBACK else Regime.DRIVE
    u = law.evaluate(rho, regime)
    a = filter_drift(spec, rho, u)
    b = filter_diffusion(spec, rho)
    first = (f(rho + h * a) - f(rho - h * a)) / (2 * h)
    second = (f(rho + h * b) - 2 * f(rho) + f(rho - h * b)) / h**2
    return float(first + 0.5 * second)


@dataclass(frozen=True)
class GeneratorReport:
    analytic: float
    mc_estimate: float
    mc_stderr: float
    n_samples: int
    delta: float

    def __post_init__(self):
        if self.mc_stderr < 0 or self.n_samples < 1:
            raise ValueError("invalid generator report")

    @property
    def error(self) -> float:
        return abs(self.mc_estimate - self.analytic)


def _advance(spec: SystemSpec, law: ControlLaw, rho, dws, dt, tol):
    if law.mode is Mode.SWITCHING:
        raise ValueError("generator estimates need a memoryless law (fixed or pure feedback)")
    rho0 = np.ascontiguousarray(as_matrix(rho))
    out = np.empty((dws.shape[0],) + rho0.shape, dtype=np.complex128)
    status = np.empty(dws.shape[0], dtype=np.int64)
    _kernels.run_batch(rho0, spec.F, spec.stacked_controls, spec.c, np.sqrt(spec.eta), int(law.mode),
                       law.offsets, law.observables, law.drives, np.ascontiguousarray(dws), dt,
                       0.5 * tol.tol_psd, out, status)
    if np.any(status != _kernels.OK):
        raise ProjectionError(f"{np.count_nonzero(status)} generator sample paths left the density set")
    return out


def _slope_along_noise(spec: SystemSpec, f, rho, h: float = 1e-4) -> float:
    # directional derivative of f along the diffusion coefficient at rho
    b = filter_diffusion(spec, rho)
    return float((f(rho + h * b) - f(rho - h * b)) / (2 * h))


def _report(f, rho, finals, delta, analytic, w=None, slope=0.0):
    # `w` (the Brownian increment over delta) with `slope` is a zero-mean control variate
    g = (f(finals) - f(np.asarray(rho))) / delta
    if w is not None:
        g = g - slope * w / delta
    n = g.shape[0]
    return GeneratorReport(analytic=float(analytic), mc_estimate=float(g.mean()),
                           mc_stderr=float(g.std(ddof=1) / np.sqrt(n)), n_samples=n, delta=float(delta))


def generator_mc_estimate(spec: SystemSpec, law: ControlLaw, rho, delta: float, n: int, *,
                          function: str, target: TargetSpec, rng: np.random.Generator,
                          substeps: int = 10, tol: Tolerances = DEFAULT_TOL,
                          control_variate: bool = True) -> GeneratorReport:
    """Monte Carlo estimate of the generator of one Lyapunov function at `rho`.

    Runs `n` independent paths of length `delta`, each with `substeps`
    Euler-Maruyama steps, and averages ``(f(rho_delta) - f(rho)) / delta``.

    With `control_variate` the first-order noise term ``Df(rho)[b] W_delta``
    is subtracted from each sample. It has mean zero, so the estimate keeps
    its expectation while the per-sample spread drops from
    ``O(delta^-1/2)`` to ``O(1)``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if n < 100:
        raise ValueError("need at least 100 samples")
    if substeps < 10:
        raise ValueError("use at least 10 integrator substeps per delta")
    f = lyapunov_function(function, target, spec.c)
    dt = delta / substeps
    dws = np.sqrt(dt) * rng.standard_normal((n, substeps))
    finals = _advance(spec, law, rho, dws, dt, tol)
    cv = dict(w=dws.sum(axis=1), slope=_slope_along_noise(spec, f, as_matrix(rho))) if control_variate else {}
    return _report(f, rho, finals, delta, generator_analytic(function, spec, target, rho), **cv)


@dataclass(frozen=True)
class DeltaStudy:
    """Estimates at ``delta, delta/2, ...`` on a shared Brownian path.

    ``bias_slope`` is the least-squares slope of the estimates against the
    horizon, the constant C in ``|mc - analytic| <= 3 stderr + C delta``.
    With two levels it is ``2 |est(delta) - est(delta/2)| / delta``.
    """

    levels: tuple

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ValueError("a delta study needs at least two horizons")

    @property
    def coarse(self) -> GeneratorReport:
        return self.levels[0]

    @property
    def fine(self) -> GeneratorReport:
        return self.levels[1]

    @property
    def bias_slope(self) -> float:
        d = np.array([r.delta for r in self.levels])
        est = np.array([r.mc_estimate for r in self.levels])
        return float(abs(np.polyfit(d, est, 1)[0]))

    @property
    def tolerance(self) -> float:
        return 3.0 * self.coarse.mc_stderr + self.bias_slope * self.coarse.delta

    @property
    def passed(self) -> bool:
        return self.coarse.error <= self.tolerance


def generator_delta_study(spec: SystemSpec, law: ControlLaw, rho, delta: float, n: int, *,
                          function: str, target: TargetSpec, rng: np.random.Generator,
                          substeps: int = 10, halvings: int = 2, tol: Tolerances = DEFAULT_TOL,
                          control_variate: bool = True) -> DeltaStudy:
    """Run the estimator at ``delta / 2**k`` for ``k = 0..halvings`` with common random numbers.

    The Brownian path is sampled on the finest grid; level k integrates its
    first ``delta / 2**k`` with `substeps` steps, each the sum of
    ``2**(halvings - k)`` fine increments.
    """
    if halvings < 1:
        raise ValueError("need at least one halving")
    f = lyapunov_function(function, target, spec.c)
    analytic = generator_analytic(function, spec, target, rho)
    slope = _slope_along_noise(spec, f, as_matrix(rho)) if control_variate else 0.0
    dt_fine = delta / (2**halvings * substeps)
    dw = np.sqrt(dt_fine) * rng.standard_normal((n, 2**halvings * substeps))
    reports = []
    for k in range(halvings + 1):
        group = 2 ** (halvings - k)
        inc = dw[:, :substeps * group].reshape(n, substeps, group).sum(axis=2)
        finals = _advance(spec, law, rho, inc, group * dt_fine, tol)
        w = inc.sum(axis=1) if control_variate else None
        reports.append(_report(f, rho, finals, delta / 2**k, analytic, w, slope))
    return DeltaStudy(levels=tuple(reports))


# -- linear vs nonlinear filter ----------------------------------------------

def zakai_filter_gap(spec: SystemSpec, law: ControlLaw, rho0, dws, dt: float,
                     tol: Tolerances = DEFAULT_TOL) -> float:
    """Max over steps of ``|normalize(rho_tilde_t) - rho_t|_F`` on shared noise.

    The nonlinear filter is driven by the innovations `dws`; the linear
    filter by the observation increments rebuilt from them. The control is
    evaluated on the nonlinear filter and must be memoryless.
    """
    if law.mode is Mode.SWITCHING:
        raise ValueError("the linear/nonlinear comparison needs a memoryless law")
    regime = Regime.FEEDBACK if law.mode is Mode.FEEDBACK else Regime.DRIVE
    rho = np.array(as_matrix(rho0), dtype=np.complex128, order="C")
    worst, status = _kernels.run_zakai_pair(rho, spec.F, spec.stacked_controls, spec.c, np.sqrt(spec.eta),
                                            int(regime), law.offsets, law.observables, law.drives,
                                            np.ascontiguousarray(dws, dtype=float), float(dt),
                                            0.5 * tol.tol_psd)
    if status != _kernels.OK:
        raise ProjectionError("linear/nonlinear filter comparison left the density set")
    return float(worst)


# -- reachability ------------------------------------------------------------

@dataclass(frozen=True)
class ReachabilityReport:
    kappa: float
    eigenvalues: np.ndarray
    eigenvalue_min_gap: float
    min_abs_eigvec_entry: float
    vandermonde_logdet_modulus: float
    eigvec_condition: float
    passed: bool

    @property
    def pass_(self) -> bool:
        return self.passed


def drive_matrix(system, kappa: float) -> tuple[np.ndarray, list[np.ndarray]]:
    """``A = -i G - F_z^2 + kappa F_z`` for the constant drive, plus default targets.

    `system` is ``"two_qubit"`` or the integer ``2J`` of a spin system. The
    drive generator is ``F_y`` for spins and ``sigma_y^1`` for two qubits.
    """
    if isinstance(system, str) and system == "two_qubit":
        ops = two_qubit_ops()
        g, fz = ops.sy1, ops.fz
        targets = [bell_vector(TargetKind.TWO_QUBIT_ANTISYMMETRIC), bell_vector(TargetKind.TWO_QUBIT_SYMMETRIC)]
    else:
        two_J = int(system)
        g, fz = angular_momentum_ops(SpinParams(two_J))
        targets = list(np.eye(two_J + 1, dtype=np.complex128))
    a = -1j * g - fz @ fz + kappa * fz
    return a, targets


def reachability_check(system, kappa: float, tol: float = 1e-8, targets=None) -> ReachabilityReport:
    """Spectral test that the constant drive leaves ``{v : v* v_f = 0}``.

    Checks that ``A`` has distinct eigenvalues and that every target vector
    has no zero component in the eigenbasis (``P* v_f`` with unit-norm
    eigenvector columns in ``P``). Together these make the moment matrix
    ``M`` (a weighted Vandermonde matrix) invertible. For spin systems the
    default targets are all basis states, so the second condition is that no
    eigenvector has a zero entry.

    A double eigenvalue of a defective ``A`` comes back from a floating-point
    solver split by about ``sqrt(eps) |A|``, so the gap must exceed
    ``max(tol, 100 sqrt(eps) |A|)`` to count as distinct.
    """
    a, default_targets = drive_matrix(system, kappa)
    targets = default_targets if targets is None else [np.asarray(t, dtype=np.complex128) for t in targets]
    try:
        d, p = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise ProjectionError(f"eigen-solver failed for kappa={kappa}") from exc
    order = np.lexsort((d.imag, d.real))
    d, p = d[order], p[:, order]
    p = p / np.linalg.norm(p, axis=0)
    n = len(d)
    diffs = np.abs(d[:, None] - d[None, :])[np.triu_indices(n, 1)]
    gap = float(diffs.min())
    gap_tol = max(tol, 100.0 * np.sqrt(np.finfo(float).eps) * np.linalg.norm(a, 2))
    entries = [np.abs(p.conj().T @ v) for v in targets]
    min_entry = float(min(e.min() for e in entries))
    with np.errstate(divide="ignore"):
        logdet = float(min(np.sum(np.log(e)) for e in entries) + np.sum(np.log(diffs)))
    return ReachabilityReport(kappa=float(kappa), eigenvalues=d, eigenvalue_min_gap=gap,
                              min_abs_eigvec_entry=min_entry, vandermonde_logdet_modulus=logdet,
                              eigvec_condition=float(np.linalg.cond(p)),
                              passed=bool(gap > gap_tol and min_entry > tol))


def moment_matrix(a: np.ndarray, v_f: np.ndarray) -> np.ndarray:
    """Rows ``((A*)^k v_f)^*``; ``M v_0 = 0`` iff ``(A^k v_0)^* v_f = 0`` for k < N."""
    n = a.shape[0]
    rows = []
    w = np.asarray(v_f, dtype=np.complex128)
    for _ in range(n):
        rows.append(w.conj())
        w = a.conj().T @ w
    return np.array(rows)


def smallest_passing_kappa(system, kappas, tol: float = 1e-8):
    for k in kappas:
        if reachability_check(system, k, tol).passed:
            return k
    return None
