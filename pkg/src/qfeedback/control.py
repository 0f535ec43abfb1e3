"""Feedback laws, including the hysteresis switch between feedback and drive.

Every law used here has the same shape. In the *feedback* regime each input
is ``u_i = offset_i - Tr(i[G_i, rho] rho_f)``, which is linear in ``rho``:
``u_i = offset_i + Tr[rho K_i]`` with ``K_i = -i[rho_f, G_i]``. In the
*drive* regime the inputs are constants. A switching law picks the regime
from the fidelity ``Tr[rho rho_f]`` with a band ``(gamma/2, gamma)`` in which
the regime depends on the side the state last entered from.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from qfeedback import _kernels
from qfeedback.operators import SpinParams, TargetKind, TargetSpec, angular_momentum_ops, two_qubit_ops
from qfeedback.qstate import DimensionError, as_matrix, commutator, fidelity_to_target


class Regime(enum.IntEnum):
    DRIVE = _kernels.DRIVE
    FEEDBACK = _kernels.FEEDBACK


class LastEntry(enum.IntEnum):
    NOT_IN_BAND = _kernels.NOT_IN_BAND
    FROM_ABOVE = _kernels.FROM_ABOVE
    FROM_BELOW = _kernels.FROM_BELOW


@dataclass(frozen=True)
class SwitchingState:
    regime: Regime = Regime.DRIVE
    last_entry: LastEntry = LastEntry.NOT_IN_BAND


@dataclass(frozen=True)
class ControlParams:
    gamma: float
    target: TargetSpec

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma!r}")


def zero_control() -> float:
    return 0.0


def constant_control(k: float) -> float:
    return float(k)


def _spin_fy(target: TargetSpec) -> np.ndarray:
    if not target.is_spin:
        raise ValueError("target is not a spin eigenstate")
    fy, _ = angular_momentum_ops(SpinParams(target.two_J))
    return fy


def u_feedback_spin(rho, target: TargetSpec) -> float:
    """``-Tr(i[F_y, rho] rho_f)``."""
    fy = _spin_fy(target)
    rho = as_matrix(rho)
    if rho.shape != fy.shape:
        raise DimensionError(f"state has shape {rho.shape}, target is {fy.shape[0]}-dimensional")
    val = -np.trace(1j * commutator(fy, rho) @ target.rho_f.matrix)
    return float(val.real)


def next_state(fid: float, state: SwitchingState, gamma: float) -> SwitchingState:
    """Hysteresis transition for a new fidelity sample.

    At or above ``gamma`` the law is feedback, at or below ``gamma/2`` it is
    drive. Inside the band the regime is that of the side the state entered
    from, which is read off the previous regime when the state was outside
    the band.
    """
    if fid >= gamma:
        return SwitchingState(Regime.FEEDBACK, LastEntry.NOT_IN_BAND)
    if fid <= 0.5 * gamma:
        return SwitchingState(Regime.DRIVE, LastEntry.NOT_IN_BAND)
    entry = state.last_entry
    if entry is LastEntry.NOT_IN_BAND:
        entry = LastEntry.FROM_ABOVE if state.regime is Regime.FEEDBACK else LastEntry.FROM_BELOW
    regime = Regime.FEEDBACK if entry is LastEntry.FROM_ABOVE else Regime.DRIVE
    return SwitchingState(regime, entry)


def switching_control(rho, state: SwitchingState, params: ControlParams) -> tuple[float, SwitchingState]:
    new = next_state(fidelity_to_target(rho, params.target.rho_f), state, params.gamma)
    if new.regime is Regime.FEEDBACK:
        return u_feedback_spin(rho, params.target), new
    return 1.0, new


def _two_qubit_feedback(rho, target: TargetSpec) -> tuple[float, float]:
    ops = two_qubit_ops()
    rho = as_matrix(rho)
    if rho.shape != (4, 4):
        raise DimensionError(f"two-qubit control needs a 4x4 state, got {rho.shape}")
    rf = target.rho_f.matrix
    a1 = -np.trace(1j * commutator(ops.sy1, rho) @ rf).real
    a2 = -np.trace(1j * commutator(ops.sy2, rho) @ rf).real
    off2 = 1.0 if target.kind is TargetKind.TWO_QUBIT_ANTISYMMETRIC else -1.0
    return 1.0 + a1, off2 + a2


def two_qubit_control(rho, state: SwitchingState, params: ControlParams) -> tuple[float, float, SwitchingState]:
    if params.target.is_spin:
        raise ValueError("two-qubit control needs a two-qubit target")
    new = next_state(fidelity_to_target(rho, params.target.rho_f), state, params.gamma)
    if new.regime is Regime.FEEDBACK:
        u1, u2 = _two_qubit_feedback(rho, params.target)
        return u1, u2, new
    return 1.0, 0.0, new


class Mode(enum.IntEnum):
    FIXED = _kernels.MODE_FIXED
    FEEDBACK = _kernels.MODE_FEEDBACK
    SWITCHING = _kernels.MODE_SWITCHING


@dataclass(frozen=True, eq=False)
class ControlLaw:
    """Vectorizable description of a law, consumed by the compiled integrators.

    ``offsets`` and ``observables`` define the feedback regime, ``drives`` the
    drive regime; ``mode`` fixes which regimes are reachable.
    """

    mode: Mode
    offsets: np.ndarray
    observables: np.ndarray
    drives: np.ndarray
    gamma: float = 0.5
    rho_f: np.ndarray | None = None
    label: str = field(default="", compare=False)

    @property
    def n_controls(self) -> int:
        return len(self.drives)

    def initial_state(self, rho) -> SwitchingState:
        if self.mode is Mode.FIXED:
            return SwitchingState(Regime.DRIVE)
        if self.mode is Mode.FEEDBACK:
            return SwitchingState(Regime.FEEDBACK)
        return next_state(fidelity_to_target(rho, self.rho_f), SwitchingState(), self.gamma)

    def step(self, rho, state: SwitchingState) -> tuple[np.ndarray, SwitchingState]:
        """Update the regime for `rho` and return the control values."""
        if self.mode is Mode.SWITCHING:
            state = next_state(fidelity_to_target(rho, self.rho_f), state, self.gamma)
        return self.evaluate(rho, state.regime), state

    def evaluate(self, rho, regime: Regime) -> np.ndarray:
        """Control values in the given regime; `rho` may be a stack ``(..., N, N)``."""
        if regime is Regime.FEEDBACK:
            rho = np.asarray(rho)
            lin = np.einsum("...ij,kji->...k", rho, self.observables).real
            return self.offsets + lin
        shape = np.shape(rho)[:-2] + (self.n_controls,)
        return np.broadcast_to(self.drives, shape).copy()


def _law(mode, offsets, gens, rho_f, drives, gamma=0.5, label=""):
    n = gens[0].shape[0]
    rf = np.zeros((n, n), dtype=np.complex128) if rho_f is None else np.asarray(rho_f, dtype=np.complex128)
    ks = np.array([-1j * commutator(rf, g) if rho_f is not None else np.zeros((n, n)) for g in gens],
                  dtype=np.complex128)
    return ControlLaw(mode=Mode(mode), offsets=np.asarray(offsets, dtype=float),
                      observables=np.ascontiguousarray(ks), drives=np.asarray(drives, dtype=float),
                      gamma=float(gamma), rho_f=None if rho_f is None else rf, label=label)


def fixed_law(values, dim: int) -> ControlLaw:
    """Constant inputs (``u = 0`` for free evolution, ``u = 1`` for the drive)."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    gens = [np.zeros((dim, dim), dtype=np.complex128)] * len(values)
    return _law(Mode.FIXED, np.zeros(len(values)), gens, None, values, label=f"constant{tuple(values)}")


def spin_feedback_law(target: TargetSpec) -> ControlLaw:
    """Pure feedback ``u = -Tr(i[F_y, rho] rho_f)`` with no switching."""
    fy = _spin_fy(target)
    return _law(Mode.FEEDBACK, [0.0], [fy], target.rho_f.matrix, [1.0], label="spin_feedback")


def spin_switching_law(gamma: float, target: TargetSpec) -> ControlLaw:
    ControlParams(gamma, target)
    fy = _spin_fy(target)
    return _law(Mode.SWITCHING, [0.0], [fy], target.rho_f.matrix, [1.0], gamma, label="spin_switching")


def _two_qubit_offsets(target: TargetSpec):
    if target.kind is TargetKind.TWO_QUBIT_ANTISYMMETRIC:
        return [1.0, 1.0]
    if target.kind is TargetKind.TWO_QUBIT_SYMMETRIC:
        return [1.0, -1.0]
    raise ValueError("two-qubit laws need a two-qubit target")


def two_qubit_feedback_law(target: TargetSpec) -> ControlLaw:
    ops = two_qubit_ops()
    return _law(Mode.FEEDBACK, _two_qubit_offsets(target), [ops.sy1, ops.sy2], target.rho_f.matrix,
                [1.0, 0.0], label="two_qubit_feedback")


def two_qubit_switching_law(gamma: float, target: TargetSpec) -> ControlLaw:
    ControlParams(gamma, target)
    ops = two_qubit_ops()
    return _law(Mode.SWITCHING, _two_qubit_offsets(target), [ops.sy1, ops.sy2], target.rho_f.matrix,
                [1.0, 0.0], gamma, label="two_qubit_switching")


def check_hysteresis(events, gamma: float) -> list[str]:
    """Return violations of the switching rule in a log of ``(t, from, to, fidelity)`` rows.

    Feedback may only hand over to drive at or below ``gamma/2`` and drive
    to feedback at or above ``gamma``.
    """
    bad = []
    for t, src, dst, fid in np.asarray(events, dtype=float).reshape(-1, 4):
        if (src, dst) == (Regime.FEEDBACK, Regime.DRIVE) and fid > 0.5 * gamma:
            bad.append(f"feedback->drive at t={t:g} with fidelity {fid:.6g} > gamma/2")
        elif (src, dst) == (Regime.DRIVE, Regime.FEEDBACK) and fid < gamma:
            bad.append(f"drive->feedback at t={t:g} with fidelity {fid:.6g} < gamma")
    return bad
