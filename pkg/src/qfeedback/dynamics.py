"""Controlled quantum filter: drift, diffusion, one-step integrators.

The filter evolves a density matrix ``rho`` as

    d rho = -i[H_u, rho] dt + D[c](rho) dt + sqrt(eta) (c rho + rho c* - Tr[(c+c*) rho] rho) dW

with ``H_u = F + sum_i u_i G_i`` and ``D[c]`` the Lindblad dissipator. The
unnormalized (linear) form replaces the last term by
``sqrt(eta) (c rho + rho c*) dy`` where ``dy`` is the raw observation
increment.

The integrator is Euler-Maruyama followed by :func:`project_to_density` on
every step; the projection restores positivity that the discretization can
lose at O(dt).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from qfeedback import _kernels
from qfeedback.operators import SpinParams, angular_momentum_ops, two_qubit_ops
from qfeedback.qstate import (
    DEFAULT_TOL,
    DensityMatrix,
    DimensionError,
    ProjectionError,
    Tolerances,
    as_matrix,
    check_efficiency,
    commutator,
    lindblad_dissipator,
    measurement_superop,
)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Parameters of one filtering equation.

    Attributes
    ----------
    F : ndarray
        Free Hamiltonian (Hermitian).
    controls : tuple of ndarray
        Control Hamiltonians ``G_i``, one per scalar input.
    c : ndarray
        Measurement coupling operator.
    eta : float
        Detector efficiency in (0, 1].
    """

    F: np.ndarray
    controls: tuple
    c: np.ndarray
    eta: float = 1.0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        check_efficiency(self.eta)
        f = as_matrix(self.F)
        c = as_matrix(self.c)
        gs = tuple(as_matrix(g) for g in self.controls)
        n = f.shape[0]
        for label, a in [("F", f), ("c", c)] + [(f"G[{i}]", g) for i, g in enumerate(gs)]:
            if a.shape != (n, n):
                raise DimensionError(f"{label} has shape {a.shape}, expected {(n, n)}")
        for label, a in [("F", f)] + [(f"G[{i}]", g) for i, g in enumerate(gs)]:
            if np.linalg.norm(a - a.conj().T) > 1e-12:
                raise ValueError(f"{label} must be Hermitian")
        object.__setattr__(self, "F", f)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "controls", gs)
        object.__setattr__(self, "_gs", np.ascontiguousarray(np.array(gs, dtype=np.complex128).reshape(len(gs), n, n)))

    @property
    def N(self) -> int:
        return self.F.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def stacked_controls(self) -> np.ndarray:
        return self._gs

    def hamiltonian(self, u: Sequence[float]) -> np.ndarray:
        u = _check_controls(self, u)
        return self.F + np.tensordot(u, self._gs, axes=1) if len(u) else self.F.copy()


def spin_system(two_J: int, eta: float = 1.0) -> SystemSpec:
    """Spin-J ensemble: ``c = F_z``, ``F = 0``, ``G = F_y``."""
    fy, fz = angular_momentum_ops(SpinParams(two_J))
    n = two_J + 1
    return SystemSpec(F=np.zeros((n, n), dtype=np.complex128), controls=(fy,), c=fz, eta=eta,
                      name=f"spin(2J={two_J})")


def two_qubit_system(eta: float = 1.0) -> SystemSpec:
    """Two qubits with local y-fields: ``c = F_z``, ``G_1 = sigma_y^1``, ``G_2 = sigma_y^2``."""
    ops = two_qubit_ops()
    return SystemSpec(F=np.zeros((4, 4), dtype=np.complex128), controls=(ops.sy1, ops.sy2),
                      c=ops.fz, eta=eta, name="two_qubit")


@dataclass(frozen=True)
class StepInput:
    rho: DensityMatrix
    u: tuple
    dW: float
    dt: float

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive and finite, got {self.dt!r}")
        if not np.isfinite(self.dW):
            raise ValueError("dW must be finite")
        u = tuple(float(x) for x in np.atleast_1d(self.u))
        if not all(np.isfinite(u)):
            raise ValueError("control values must be finite")
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class ObservationIncrement:
    dy: float


def _check_controls(spec: SystemSpec, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (spec.n_controls,):
        raise DimensionError(f"expected {spec.n_controls} control values, got {u.shape[0]}")
    return u


def _check_state(spec: SystemSpec, rho) -> np.ndarray:
    r = as_matrix(rho)
    if r.shape != (spec.N, spec.N):
        raise DimensionError(f"state has shape {r.shape}, system is {spec.N}-dimensional")
    return r


def filter_drift(spec: SystemSpec, rho, u) -> np.ndarray:
    """Deterministic part: ``-i[H_u, rho] + D[c](rho)``."""
    r = _check_state(spec, rho)
    return -1j * commutator(spec.hamiltonian(u), r) + lindblad_dissipator(spec.c, r)


def filter_diffusion(spec: SystemSpec, rho) -> np.ndarray:
    return measurement_superop(spec.c, _check_state(spec, rho), spec.eta)


def filter_step(spec: SystemSpec, s: StepInput, tol: Tolerances = DEFAULT_TOL) -> DensityMatrix:
    """One Euler-Maruyama step followed by projection onto the densities.

    Raises
    ------
    ProjectionError
        When the updated matrix has no positive part left (step blew up).
    """
    rho = np.array(_check_state(spec, s.rho), dtype=np.complex128, order="C")
    u = _check_controls(spec, s.u)
    status = _kernels.filter_step_inplace(rho, spec.F, spec.stacked_controls, u, spec.c,
                                          np.sqrt(spec.eta), float(s.dW), float(s.dt),
                                          0.5 * tol.tol_psd)
    if status != _kernels.OK:
        raise ProjectionError(f"filter step failed (dt={s.dt}, dW={s.dW}, u={s.u}): "
                              "state left the density set")
    return DensityMatrix(rho, tol)


def zakai_step(spec: SystemSpec, rho_tilde, u, dy: float, dt: float) -> np.ndarray:
    """One Euler-Maruyama step of the linear (unnormalized) filter."""
    r = _check_state(spec, rho_tilde)
    if np.trace(r).real <= 0:
        raise ValueError("unnormalized state must have positive trace")
    h = spec.hamiltonian(u)
    c = spec.c
    lin = -1j * commutator(h, r) + lindblad_dissipator(c, r)
    out = r + lin * dt + np.sqrt(spec.eta) * (c @ r + r @ c.conj().T) * dy
    if not np.trace(out).real > 0:
        raise ProjectionError(f"linear filter trace became nonpositive (dy={dy}, dt={dt})")
    return out


def normalize(rho_tilde) -> np.ndarray:
    r = np.asarray(rho_tilde)
    return r / np.trace(r).real


def innovation_to_observation(spec: SystemSpec, rho, dW: float, dt: float) -> ObservationIncrement:
    """Observation increment ``dy = dW + sqrt(eta) Tr[(c + c*) rho] dt``."""
    r = _check_state(spec, rho)
    mean = np.trace((spec.c + spec.c.conj().T) @ r).real
    return ObservationIncrement(float(dW + np.sqrt(spec.eta) * mean * dt))


# -- noise streams -----------------------------------------------------------

WIENER_STREAM = 0
INITIAL_STATE_STREAM = 1


def trajectory_rng(master_seed: int, index: int, stream: int = WIENER_STREAM) -> np.random.Generator:
    """Generator for one trajectory.

    Splitting rule: ``SeedSequence(master_seed, spawn_key=(index, stream))``
    feeding a PCG64 bit generator. Stream 0 carries the innovation noise,
    stream 1 any randomness in the initial state.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def wiener_increments(rng: np.random.Generator, n_steps: int, dt: float) -> np.ndarray:
    return np.sqrt(dt) * rng.standard_normal(n_steps)
