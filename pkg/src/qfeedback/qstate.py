"""Dense complex matrices and the density-matrix state type.

Matrices are plain ``numpy`` arrays of dtype ``complex128``. A
:class:`DensityMatrix` wraps a read-only array and checks Hermiticity, unit
trace and positivity at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qfeedback import _kernels


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class ProjectionError(FloatingPointError):
    """A matrix could not be mapped back onto the set of densities."""


@dataclass(frozen=True)
class Tolerances:
    """Numerical slack allowed on the three density-matrix invariants."""

    tol_herm: float = 1e-9
    tol_trace: float = 1e-9
    tol_psd: float = 1e-8

    def __post_init__(self):
        for name in ("tol_herm", "tol_trace", "tol_psd"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite nonnegative number, got {value!r}")


DEFAULT_TOL = Tolerances()


def as_matrix(a) -> np.ndarray:
    """Return `a` as a square complex128 array, validating shape and finiteness."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] < 2:
        raise DimensionError(f"matrix dimension must be at least 2, got {m.shape[0]}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def _pair(a, b):
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite matrix.

    Parameters
    ----------
    matrix : array_like
        Square complex matrix of dimension at least 2.
    tol : Tolerances, optional
        Slack on each invariant; a :class:`ValueError` is raised when any is
        exceeded.
    """

    __slots__ = ("_m",)

    def __init__(self, matrix, tol: Tolerances = DEFAULT_TOL):
        m = np.array(as_matrix(matrix), order="C")
        code = _kernels.density_check(m, tol.tol_herm, tol.tol_trace, tol.tol_psd)
        if code == 1:
            herm = np.linalg.norm(m - m.conj().T)
            raise ValueError(f"matrix is not Hermitian (||rho - rho*||_F = {herm:.3e})")
        if code == 2:
            raise ValueError(f"trace is {np.trace(m).real:.12g}, expected 1")
        if code == 3:
            lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
            raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {lam:.3e})")
        m.flags.writeable = False
        self._m = m

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        """Projector onto the normalized vector `psi`."""
        v = np.asarray(psi, dtype=np.complex128).ravel()
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, n: int) -> "DensityMatrix":
        return cls(np.eye(n, dtype=np.complex128) / n)

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    def purity(self) -> float:
        return float(np.real(np.vdot(self._m, self._m)))

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._m
        return self._m.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return np.array_equal(self._m, other._m)

    def __hash__(self):
        return hash(self._m.tobytes())

    def __repr__(self):
        return f"DensityMatrix(dim={self.dim}, purity={self.purity():.6f})"


def commutator(a, b) -> np.ndarray:
    """Return ``AB - BA``."""
    a, b = _pair(a, b)
    return a @ b - b @ a


def lindblad_dissipator(c, rho) -> np.ndarray:
    r"""Return :math:`c\rho c^* - \tfrac12(c^*c\rho + \rho c^*c)`."""
    c, rho = _pair(c, rho)
    cd = c.conj().T
    cdc = cd @ c
    return c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)


def measurement_superop(c, rho, eta: float) -> np.ndarray:
    r"""Return :math:`\sqrt\eta\,(c\rho + \rho c^* - \mathrm{Tr}[(c+c^*)\rho]\rho)`.

    This is the diffusion coefficient of the filter; it multiplies the
    innovation increment.
    """
    check_efficiency(eta)
    c, rho = _pair(c, rho)
    cd = c.conj().T
    mean = np.trace((c + cd) @ rho).real
    return np.sqrt(eta) * (c @ rho + rho @ cd - mean * rho)


def check_efficiency(eta: float) -> float:
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"detector efficiency eta must lie in (0, 1], got {eta!r}")
    return float(eta)


def trace_inner(a, b) -> complex:
    """Hilbert-Schmidt inner product ``Tr[A* B]``."""
    a, b = _pair(a, b)
    return complex(np.vdot(a, b))


def frobenius_norm(a) -> float:
    return float(np.sqrt(trace_inner(a, a).real))


def project_to_density(m, tol: Tolerances = DEFAULT_TOL) -> DensityMatrix:
    """Map a nearly-valid matrix back onto the density matrices.

    The input is Hermitized by symmetric averaging. If its smallest
    eigenvalue is certifiably above ``-tol_psd / 2`` it is only renormalized;
    otherwise negative eigenvalues are clipped to zero before renormalizing.
    Inputs that are already densities come back unchanged up to round-off.

    Raises
    ------
    ProjectionError
        If the trace is not positive after clipping.
    """
    m = as_matrix(m)
    out = np.array(m, dtype=np.complex128, order="C")
    status = _kernels.project_inplace(out, 0.5 * tol.tol_psd)
    if status != 0:
        raise ProjectionError("trace is not positive after eigenvalue clipping")
    return DensityMatrix(out, tol)


def fidelity_to_target(rho, rho_f) -> float:
    """``Tr[rho rho_f]`` for a pure target; the distance ``V`` is one minus this."""
    rho, rho_f = _pair(rho, rho_f)
    val = np.sum(rho.T * rho_f)
    if abs(val.imag) > 1e-9:
        raise ValueError(f"Tr[rho rho_f] has imaginary part {val.imag:.3e}; inputs not Hermitian")
    return float(val.real)


def hermiticity_error(m) -> float:
    m = np.asarray(m)
    return float(np.linalg.norm(m - m.conj().T))


def min_eigenvalue(m) -> float:
    m = np.asarray(m)
    return float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])


def random_density(n: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Random density ``M M* / Tr[M M*]`` with complex Gaussian ``M`` (n x rank)."""
    k = n if rank is None else rank
    g = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    m = g @ g.conj().T
    m = 0.5 * (m + m.conj().T) / np.trace(m).real
    return DensityMatrix(m)


def random_pure(n: int, rng: np.random.Generator) -> DensityMatrix:
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return DensityMatrix.pure(v)
