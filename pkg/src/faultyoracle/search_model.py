"""The analog search model: oracle, driver, noisy generator, oracle-free
generator and the exact two-level reduction for the uniform driver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from faultyoracle.dynamics import LindbladGenerator
from faultyoracle.quantum_core import projector, uniform_state

DriverSpec = Union[str, np.ndarray, Callable[[float], np.ndarray]]


@dataclass(frozen=True, eq=False)
class SearchModel:
    """Search over ``N`` items for winner ``w``.

    ``driver`` is ``"uniform"`` (``E|s><s|``), ``"none"`` (no driver), a
    constant matrix, or a callable ``t -> matrix``.
    """

    N: int
    w: int = 0
    E: float = 1.0
    gamma: float = 0.0
    driver: DriverSpec = "uniform"
    initial_state: np.ndarray | None = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if not 0 <= self.w < self.N:
            raise ValueError(f"winner index {self.w} out of range for N={self.N}")
        if not self.E > 0:
            raise ValueError(f"E must be positive, got {self.E}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if isinstance(self.driver, str) and self.driver not in ("uniform", "none"):
            raise ValueError(f"unknown driver {self.driver!r}")
        if self.initial_state is not None:
            psi = np.asarray(self.initial_state, dtype=complex)
            if psi.shape != (self.N,) or abs(np.linalg.norm(psi) - 1) > 1e-12:
                raise ValueError("initial_state must be a normalized length-N vector")

    @property
    def uniform_driver(self) -> bool:
        return isinstance(self.driver, str) and self.driver == "uniform"

    @property
    def time_independent(self) -> bool:
        return not callable(self.driver)

    def replace(self, **changes) -> "SearchModel":
        fields = dict(N=self.N, w=self.w, E=self.E, gamma=self.gamma, driver=self.driver,
                      initial_state=self.initial_state)
        fields.update(changes)
        return SearchModel(**fields)

    def oracle_hamiltonian(self) -> np.ndarray:
        H = np.zeros((self.N, self.N), dtype=complex)
        H[self.w, self.w] = self.E
        return H

    def winner_projector(self) -> np.ndarray:
        P = np.zeros((self.N, self.N), dtype=complex)
        P[self.w, self.w] = 1.0
        return P

    def driver_hamiltonian(self, t: float = 0.0) -> np.ndarray:
        if isinstance(self.driver, str):
            if self.driver == "uniform":
                return self.E * projector(uniform_state(self.N).amplitudes)
            return np.zeros((self.N, self.N), dtype=complex)
        if callable(self.driver):
            return np.asarray(self.driver(t), dtype=complex)
        return np.asarray(self.driver, dtype=complex)

    def start_state(self) -> np.ndarray:
        if self.initial_state is not None:
            return np.asarray(self.initial_state, dtype=complex)
        return uniform_state(self.N).amplitudes


def _hamiltonian(model: SearchModel, with_oracle: bool):
    oracle = model.oracle_hamiltonian() if with_oracle else 0.0
    if model.time_independent:
        return model.driver_hamiltonian() + oracle
    return lambda t: model.driver_hamiltonian(t) + oracle


def build_oracle_generator(m: SearchModel) -> LindbladGenerator:
    """``H = E|w><w| + H_D(t)`` with the single jump operator ``sqrt(gamma)|w><w|``."""
    jumps = [np.sqrt(m.gamma) * m.winner_projector()] if m.gamma > 0 else []
    return LindbladGenerator(_hamiltonian(m, True), jumps)


def build_no_oracle_generator(m: SearchModel) -> LindbladGenerator:
    """Driver alone, no dissipation."""
    return LindbladGenerator(_hamiltonian(m, False), [])


@dataclass(frozen=True)
class ReducedModel:
    """Uniform-driver dynamics restricted to span{|w>, |w_perp>}, index 0 = winner."""

    a: float
    h2: np.ndarray
    gamma: float
    E: float
    N: int

    @property
    def b(self) -> float:
        return float(np.sqrt(1.0 - self.a**2))

    def start_state(self) -> np.ndarray:
        return np.array([self.a, self.b], dtype=complex)

    def driver_hamiltonian(self) -> np.ndarray:
        return self.E * projector(self.start_state())

    def oracle_generator(self) -> LindbladGenerator:
        jumps = [np.sqrt(self.gamma) * np.diag([1.0, 0.0]).astype(complex)] if self.gamma > 0 else []
        return LindbladGenerator(self.h2, jumps)

    def no_oracle_generator(self) -> LindbladGenerator:
        return LindbladGenerator(self.driver_hamiltonian(), [])


def build_reduced_model(m: SearchModel) -> ReducedModel:
    if not m.uniform_driver:
        raise ValueError("the two-level reduction only holds for the uniform driver")
    if m.initial_state is not None:
        raise ValueError("the two-level reduction assumes the uniform start state")
    a = m.N**-0.5
    b = np.sqrt(1.0 - 1.0 / m.N)
    h2 = m.E * np.array([[1.0 + a * a, a * b], [a * b, b * b]], dtype=complex)
    return ReducedModel(a=a, h2=h2, gamma=m.gamma, E=m.E, N=m.N)


def success_probability(state, w: int) -> float:
    """``<w|rho|w>`` for a density matrix, ``|<w|psi>|^2`` for a vector."""
    state = np.asarray(state)
    if state.ndim == 1:
        return float(abs(state[w]) ** 2)
    return float(np.real(state[w, w]))
