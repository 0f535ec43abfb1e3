"""Fixed operators: spin-J angular momentum, Pauli matrices and two-qubit targets.

Basis conventions
-----------------
Spin J (N = 2J + 1): the standard basis ``psi_0 .. psi_2J`` with
``F_z psi_k = (k - J) psi_k``, so index 0 is the lowest ``F_z`` eigenvalue.

Two qubits: ``(up-up, up-down, down-up, down-down)``, i.e. ``kron`` order
with ``psi_up = (1, 0)`` first.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from qfeedback.qstate import DensityMatrix


@dataclass(frozen=True)
class SpinParams:
    """Angular momentum ``J = two_J / 2``; kept as an integer to stay exact."""

    two_J: int

    def __post_init__(self):
        if not isinstance(self.two_J, (int, np.integer)) or self.two_J < 1:
            raise ValueError(f"two_J must be a positive integer, got {self.two_J!r}")

    @property
    def N(self) -> int:
        return self.two_J + 1

    @property
    def J(self) -> Fraction:
        return Fraction(self.two_J, 2)


def _ladder_coefficient(two_J: int, two_m: int) -> float:
    # c_m = 1/2 sqrt((J - m)(J + m + 1)), with 2J and 2m passed as integers
    return 0.5 * np.sqrt((two_J - two_m) * (two_J + two_m + 2) / 4.0)


@lru_cache(maxsize=None)
def _spin_ops(two_J: int):
    n = two_J + 1
    fz = np.diag([(2 * k - two_J) / 2.0 for k in range(n)]).astype(np.complex128)
    fy = np.zeros((n, n), dtype=np.complex128)
    for k in range(n):
        # F_y psi_k = i c_{k-J} psi_{k+1} - i c_{J-k} psi_{k-1}
        if k + 1 < n:
            fy[k + 1, k] = 1j * _ladder_coefficient(two_J, 2 * k - two_J)
        if k - 1 >= 0:
            fy[k - 1, k] = -1j * _ladder_coefficient(two_J, two_J - 2 * k)
    fy.flags.writeable = False
    fz.flags.writeable = False
    return fy, fz


def angular_momentum_ops(p: SpinParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(F_y, F_z)`` for spin ``J = p.two_J / 2`` (read-only arrays)."""
    return _spin_ops(int(p.two_J))


SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
PSI_UP = np.array([1, 0], dtype=np.complex128)
PSI_DOWN = np.array([0, 1], dtype=np.complex128)
for _a in (SIGMA_X, SIGMA_Y, SIGMA_Z, PSI_UP, PSI_DOWN):
    _a.flags.writeable = False


def pauli() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return SIGMA_X, SIGMA_Y, SIGMA_Z


def kron(a, b) -> np.ndarray:
    return np.kron(np.asarray(a, dtype=np.complex128), np.asarray(b, dtype=np.complex128))


@dataclass(frozen=True)
class TwoQubitOps:
    sy1: np.ndarray
    sy2: np.ndarray
    fy: np.ndarray
    fz: np.ndarray


@lru_cache(maxsize=None)
def two_qubit_ops() -> TwoQubitOps:
    """Local ``sigma_y`` on each qubit and the collective ``F_y``, ``F_z``."""
    eye = np.eye(2, dtype=np.complex128)
    sy1 = kron(SIGMA_Y, eye)
    sy2 = kron(eye, SIGMA_Y)
    fz = kron(SIGMA_Z, eye) + kron(eye, SIGMA_Z)
    ops = TwoQubitOps(sy1=sy1, sy2=sy2, fy=sy1 + sy2, fz=fz)
    for a in (ops.sy1, ops.sy2, ops.fy, ops.fz):
        a.flags.writeable = False
    return ops


class TargetKind(enum.Enum):
    SPIN_EIGENSTATE = "spin_eigenstate"
    TWO_QUBIT_SYMMETRIC = "two_qubit_symmetric"
    TWO_QUBIT_ANTISYMMETRIC = "two_qubit_antisymmetric"


@dataclass(frozen=True)
class TargetSpec:
    """Pure target state together with the ``F_z`` value it carries.

    ``m`` is the basis index for spin targets and ``None`` otherwise;
    ``two_J`` is ``None`` for two-qubit targets.
    """

    rho_f: DensityMatrix
    lambda_f: float
    kind: TargetKind
    m: int | None = None
    two_J: int | None = None

    @property
    def vector(self) -> np.ndarray:
        w, v = np.linalg.eigh(self.rho_f.matrix)
        return v[:, -1]

    @property
    def is_spin(self) -> bool:
        return self.kind is TargetKind.SPIN_EIGENSTATE


def spin_eigenstate(two_J: int, m: int) -> TargetSpec:
    p = SpinParams(two_J)
    if not (isinstance(m, (int, np.integer)) and 0 <= m <= two_J):
        raise ValueError(f"eigenstate index m must be an integer in [0, {two_J}], got {m!r}")
    psi = np.zeros(p.N, dtype=np.complex128)
    psi[m] = 1.0
    return TargetSpec(
        rho_f=DensityMatrix.pure(psi),
        lambda_f=(2 * m - two_J) / 2.0,
        kind=TargetKind.SPIN_EIGENSTATE,
        m=int(m),
        two_J=int(two_J),
    )


def bell_vector(kind: TargetKind) -> np.ndarray:
    """``(psi_ud +- psi_du) / sqrt 2`` for the symmetric / antisymmetric target."""
    ud = kron(PSI_UP, PSI_DOWN)
    du = kron(PSI_DOWN, PSI_UP)
    if kind is TargetKind.TWO_QUBIT_SYMMETRIC:
        return (ud + du) / np.sqrt(2.0)
    if kind is TargetKind.TWO_QUBIT_ANTISYMMETRIC:
        return (ud - du) / np.sqrt(2.0)
    raise ValueError(f"{kind} is not a two-qubit target")


def target_state(kind: TargetKind | str, *, two_J: int | None = None, m: int | None = None) -> TargetSpec:
    """Build a target.

    Examples
    --------
    >>> target_state("spin_eigenstate", two_J=2, m=2).lambda_f
    1.0
    >>> target_state("two_qubit_antisymmetric").lambda_f
    0.0
    """
    kind = TargetKind(kind)
    if kind is TargetKind.SPIN_EIGENSTATE:
        if two_J is None or m is None:
            raise ValueError("spin eigenstate targets need two_J and m")
        return spin_eigenstate(two_J, m)
    v = bell_vector(kind)
    return TargetSpec(rho_f=DensityMatrix(np.outer(v, v.conj())), lambda_f=0.0, kind=kind)


def eigenstate_projectors(obs: np.ndarray) -> list[np.ndarray]:
    """Rank-one projectors onto the standard basis; ``obs`` must be diagonal."""
    obs = np.asarray(obs)
    if np.count_nonzero(obs - np.diag(np.diag(obs))):
        raise ValueError("observable is not diagonal in the standard basis")
    n = obs.shape[0]
    return [np.diag(np.eye(n)[k]).astype(np.complex128) for k in range(n)]
