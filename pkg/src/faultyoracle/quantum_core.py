"""Dense complex linear algebra for states, operators and distances.

Every operation accepts plain ``numpy`` arrays as well as the thin value
types defined here; the types only exist to validate invariants once at
construction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ATOL = 1e-10
NORM_ATOL = 1e-12
POSITIVITY_ATOL = 1e-9
DEGENERATE_OVERLAP = 1.0 - 1e-12


class DegenerateDecomposition(ValueError):
    """Raised when a state is parallel to the winner, so ``|w_perp>`` is undefined."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PureState:
    """Unit vector in C^N."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.ndim != 1:
            raise ValueError(f"amplitudes must be a vector, got shape {amps.shape}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_ATOL:
            raise ValueError(f"state is not normalized (norm={norm!r})")
        object.__setattr__(self, "amplitudes", amps)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.amplitudes, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @classmethod
    def normalized(cls, vector) -> "PureState":
        v = np.asarray(vector, dtype=complex)
        return cls(v / np.linalg.norm(v))

    def projector(self) -> "DensityMatrix":
        return DensityMatrix(projector(self.amplitudes))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive semidefinite, unit-trace matrix."""

    entries: np.ndarray

    def __post_init__(self):
        rho = _frozen(self.entries)
        check_density_matrix(rho)
        object.__setattr__(self, "entries", rho)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def purity(self) -> float:
        return purity(self.entries)


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Hermitian matrix in energy units (hbar = 1)."""

    entries: np.ndarray

    def __post_init__(self):
        h = _frozen(self.entries)
        _check_square(h)
        dev = hermiticity_error(h)
        if dev > ATOL:
            raise ValueError(f"operator is not Hermitian (max deviation {dev:.3e})")
        object.__setattr__(self, "entries", h)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def _check_square(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")


def _same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def hermiticity_error(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a - np.swapaxes(a, -1, -2).conj()), initial=0.0))


def check_density_matrix(rho, atol: float = ATOL, positivity_atol: float = POSITIVITY_ATOL) -> None:
    """Raise ``ValueError`` unless ``rho`` satisfies the density-matrix invariants."""
    rho = np.asarray(rho)
    _check_square(rho)
    dev = hermiticity_error(rho)
    if dev > atol:
        raise ValueError(f"density matrix is not Hermitian (max deviation {dev:.3e})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > atol:
        raise ValueError(f"density matrix trace is {tr!r}, expected 1")
    lam_min = float(np.linalg.eigvalsh(rho).min())
    if lam_min < -positivity_atol:
        raise ValueError(f"density matrix has negative eigenvalue {lam_min:.3e}")


def basis_state(n: int, k: int) -> PureState:
    if not 0 <= k < n:
        raise ValueError(f"basis index {k} out of range for dimension {n}")
    v = np.zeros(n, dtype=complex)
    v[k] = 1.0
    return PureState(v)


def uniform_state(n: int) -> PureState:
    """Equal superposition ``|s> = N^{-1/2} sum_k |k>``."""
    if n < 2:
        raise ValueError(f"search space needs N >= 2, got {n}")
    return PureState(np.full(n, n**-0.5, dtype=complex))


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def purity(rho) -> float:
    rho = np.asarray(rho)
    # tr(rho^2) for Hermitian rho is the squared Frobenius norm
    return float(np.sum(np.abs(rho) ** 2, axis=(-2, -1)))


def frobenius_norm_sq_diff(a, b) -> float:
    """Squared Frobenius norm ``tr[(a-b)^dagger (a-b)]``."""
    a, b = np.asarray(a), np.asarray(b)
    _same_dim(a, b)
    return float(np.sum(np.abs(a - b) ** 2))


def trace_distance(a, b) -> float:
    """Half the trace norm of ``a - b`` from the eigenvalues of the Hermitian difference."""
    a, b = np.asarray(a), np.asarray(b)
    _same_dim(a, b)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a - b))))


def trace_distance_batch(a, b) -> np.ndarray:
    """Trace distance along the leading axis of stacked matrices."""
    a, b = np.asarray(a), np.asarray(b)
    _same_dim(a, b)
    return 0.5 * np.sum(np.abs(np.linalg.eigvalsh(a - b)), axis=-1)


def fidelity_upper_bound(rho, phi) -> float:
    """``sqrt(1 - <phi|rho|phi>)``, an upper bound on the trace distance to ``|phi><phi|``."""
    rho, phi = np.asarray(rho), np.asarray(phi)
    if rho.shape != (phi.shape[0], phi.shape[0]):
        raise ValueError(f"dimension mismatch: {rho.shape} vs {phi.shape}")
    radicand = 1.0 - float(np.real(phi.conj() @ rho @ phi))
    if radicand < 0.0:
        if radicand < -NORM_ATOL:
            raise ValueError(f"overlap exceeds 1 by {-radicand:.3e}; invalid state pair")
        radicand = 0.0
    return float(np.sqrt(radicand))


def two_dim_decompose(phi, w: int) -> tuple[complex, complex, PureState]:
    """Split ``phi`` into its winner component and the orthogonal remainder.

    Returns ``(<w|phi>, f, w_perp)`` with ``f = <w|phi> sqrt(1 - |<w|phi>|^2)``
    and ``phi = <w|phi> |w> + sqrt(1 - |<w|phi>|^2) |w_perp>``.

    Raises:
        DegenerateDecomposition: if ``|<w|phi>| >= 1 - 1e-12``.
    """
    phi = np.asarray(phi, dtype=complex)
    overlap = complex(phi[w])
    if abs(overlap) >= DEGENERATE_OVERLAP:
        raise DegenerateDecomposition(f"state is parallel to basis vector {w}")
    rest = phi.copy()
    rest[w] = 0.0
    perp_norm = np.linalg.norm(rest)
    # phi normalized, so perp_norm == sqrt(1 - |overlap|^2) up to rounding
    f = overlap * perp_norm
    return overlap, f, PureState(rest / perp_norm)


def fallback_perp(n: int, w: int) -> PureState:
    """Fixed orthogonal partner used when the decomposition degenerates."""
    return basis_state(n, 1 if w == 0 else 0)
