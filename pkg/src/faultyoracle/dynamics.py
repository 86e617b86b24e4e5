"""Time evolution engines: Lindblad master equation, Schrodinger propagation,
and the fluctuating-oracle unraveling averaged over noise realizations."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from faultyoracle.quantum_core import (
    ATOL,
    NORM_ATOL,
    POSITIVITY_ATOL,
    projector,
)

if TYPE_CHECKING:
    from faultyoracle.search_model import SearchModel

HamiltonianLike = Union[np.ndarray, Callable[[float], np.ndarray]]

METHODS = ("rk4", "adaptive", "expm")
# superoperators are n^2 x n^2; beyond this the dense exponential is wasteful
EXPM_MAX_DIM = 32


class IntegrationError(RuntimeError):
    """An invariant broke during integration; ``time`` is where it was detected."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t={time:.6g})")
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size and scheme. ``step_size=None`` picks ``0.01 / max(E, gamma, 1)``."""

    step_size: float | None = None
    method: str = "rk4"
    error_tolerance: float = 1e-10

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if not self.error_tolerance > 0:
            raise ValueError(f"error_tolerance must be positive, got {self.error_tolerance}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")

    @staticmethod
    def default_step(energy: float, gamma: float = 0.0) -> float:
        return 0.01 / max(energy, gamma, 1.0)

    def resolve(self, energy: float, gamma: float = 0.0) -> "IntegratorConfig":
        if self.step_size is not None:
            return self
        return IntegratorConfig(self.default_step(energy, gamma), self.method, self.error_tolerance)


@dataclass(frozen=True)
class NoiseTrajectoryConfig:
    """Fluctuating oracle strength ``E + xi(t)``.

    ``xi`` is white noise whose accumulated phase over one ``window`` has
    variance ``variance_factor * noise_std_s**2``.  The default factor 1/2
    makes the averaged dynamics equal the dephasing Lindbladian with rate
    ``noise_std_s**2 / (2*pi)`` for the default window of pi.
    """

    noise_std_s: float
    n_trajectories: int = 1000
    rng_seed: int = 0
    window: float = math.pi
    variance_factor: float = 0.5
    chunk_size: int = 500

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if not self.window > 0:
            raise ValueError("window must be positive")
        if self.noise_std_s < 0:
            raise ValueError("noise_std_s must be non-negative")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")

    @classmethod
    def for_rate(cls, gamma: float, **kwargs) -> "NoiseTrajectoryConfig":
        """Pick ``noise_std_s`` so the equivalent dephasing rate is ``gamma``."""
        window = kwargs.get("window", math.pi)
        factor = kwargs.get("variance_factor", 0.5)
        return cls(noise_std_s=math.sqrt(gamma * window / factor), **kwargs)

    @property
    def dephasing_rate(self) -> float:
        """White-noise intensity, i.e. the equivalent Lindblad rate."""
        return self.variance_factor * self.noise_std_s**2 / self.window

    def xi_std(self, dt: float) -> float:
        """Standard deviation of the piecewise-constant noise over a step ``dt``."""
        return math.sqrt(self.dephasing_rate / dt)


@dataclass
class Trajectory:
    """Sampled evolution: ``states[k]`` is the state at ``times[k]``."""

    times: np.ndarray
    states: np.ndarray
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    # per-chunk averaged states of a stochastic run, shape (chunks, samples, n, n)
    chunk_means: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def is_density(self) -> bool:
        return self.states.ndim == 3


class LindbladGenerator:
    """Generator ``-i[H(t), rho] + sum_i L_i rho L_i^+ - 1/2 {L_i^+ L_i, rho}``."""

    def __init__(self, hamiltonian: HamiltonianLike, jump_operators: Sequence[np.ndarray] = ()):
        self.jump_operators = tuple(np.asarray(L, dtype=complex) for L in jump_operators)
        if callable(hamiltonian):
            self._h_func = hamiltonian
            self._h_const = None
            h0 = np.asarray(hamiltonian(0.0), dtype=complex)
        else:
            self._h_func = None
            self._h_const = np.asarray(hamiltonian, dtype=complex)
            h0 = self._h_const
        if h0.ndim != 2 or h0.shape[0] != h0.shape[1]:
            raise ValueError(f"Hamiltonian must be square, got shape {h0.shape}")
        self.dim = h0.shape[0]
        for L in self.jump_operators:
            if L.shape != h0.shape:
                raise ValueError(f"jump operator shape {L.shape} does not match H {h0.shape}")
        self._jump_dag = tuple(L.conj().T for L in self.jump_operators)
        self._decay = sum((Ld @ L for Ld, L in zip(self._jump_dag, self.jump_operators)),
                          np.zeros_like(h0))
        self._h_eff_const = None if self._h_const is None else self._h_const - 0.5j * self._decay

    @property
    def time_independent(self) -> bool:
        return self._h_const is not None

    def hamiltonian(self, t: float) -> np.ndarray:
        if self._h_const is not None:
            return self._h_const
        return np.asarray(self._h_func(t), dtype=complex)

    def dissipator(self, rho: np.ndarray) -> np.ndarray:
        out = -0.5 * (self._decay @ rho + rho @ self._decay)
        for L, Ld in zip(self.jump_operators, self._jump_dag):
            out += L @ rho @ Ld
        return out

    def __call__(self, rho: np.ndarray, t: float) -> np.ndarray:
        # -i[H, rho] - 1/2{K, rho} == -i(H_eff rho - rho H_eff^+), H_eff = H - iK/2
        if self._h_eff_const is not None:
            h_eff = self._h_eff_const
        else:
            h_eff = self.hamiltonian(t) - 0.5j * self._decay
        out = -1j * (h_eff @ rho - rho @ h_eff.conj().T)
        for L, Ld in zip(self.jump_operators, self._jump_dag):
            out += L @ rho @ Ld
        return out

    def scale(self) -> float:
        """Rough frequency scale used to choose a default step."""
        h = np.linalg.norm(self.hamiltonian(0.0), 2)
        g = sum(np.linalg.norm(L, 2) ** 2 for L in self.jump_operators)
        return max(h, g, 1.0)

    def superoperator(self) -> np.ndarray:
        """Matrix acting on row-major ``rho.ravel()``; requires a constant Hamiltonian."""
        if not self.time_independent:
            raise ValueError("superoperator needs a time-independent Hamiltonian")
        n = self.dim
        eye = np.eye(n)
        H = self._h_const
        # row-major vec(A X B) = (A kron B^T) vec(X)
        S = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
        S -= 0.5 * (np.kron(self._decay, eye) + np.kron(eye, self._decay.T))
        for L, Ld in zip(self.jump_operators, self._jump_dag):
            S += np.kron(L, Ld.T)
        return S


def lindblad_rhs(gen: LindbladGenerator, rho, t: float = 0.0) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (gen.dim, gen.dim):
        raise ValueError(f"state shape {rho.shape} does not match generator dimension {gen.dim}")
    return gen(rho, t)


def rk4_step(rhs, y: np.ndarray, t: float, h: float) -> np.ndarray:
    """One classical fourth-order step of ``dy/dt = rhs(y, t)``; ``h`` may be negative."""
    k1 = rhs(y, t)
    k2 = rhs(y + 0.5 * h * k1, t + 0.5 * h)
    k3 = rhs(y + 0.5 * h * k2, t + 0.5 * h)
    k4 = rhs(y + h * k3, t + h)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _step_grid(t_final: float, dt: float, sample_every: int) -> tuple[int, float, np.ndarray]:
    if t_final < 0:
        raise ValueError(f"t_final must be >= 0, got {t_final}")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    if t_final == 0:
        return 0, dt, np.array([0], dtype=int)
    n_steps = max(1, math.ceil(t_final / dt - 1e-9))
    sample_steps = np.arange(0, n_steps + 1, sample_every)
    if sample_steps[-1] != n_steps:
        sample_steps = np.append(sample_steps, n_steps)
    return n_steps, t_final / n_steps, sample_steps


def _fixed_step(rhs, y0: np.ndarray, n_steps: int, dt: float, sample_steps: np.ndarray,
                propagator: np.ndarray | None = None) -> np.ndarray:
    out = np.empty((len(sample_steps),) + y0.shape, dtype=complex)
    out[0] = y0
    y = y0.copy()
    flat_shape = y0.shape
    next_sample = 1
    for k in range(n_steps):
        t = k * dt
        if propagator is not None:
            y = (propagator @ y.ravel()).reshape(flat_shape)
        else:
            y = rk4_step(rhs, y, t, dt)
        if k + 1 == sample_steps[next_sample]:
            if not np.all(np.isfinite(y)):
                raise IntegrationError("non-finite state", (k + 1) * dt)
            out[next_sample] = y
            next_sample += 1
    return out


def _adaptive(rhs, y0: np.ndarray, times: np.ndarray, tol: float) -> np.ndarray:
    shape = y0.shape

    def f(t, y):
        return rhs(y.reshape(shape), t).ravel()

    sol = solve_ivp(f, (0.0, times[-1]), y0.ravel(), method="DOP853", t_eval=times,
                    rtol=tol, atol=tol)
    if not sol.success:
        raise IntegrationError(f"adaptive integrator failed: {sol.message}", float(sol.t[-1]))
    return sol.y.T.reshape((len(times),) + shape)


def _integrate(rhs, y0, t_final, cfg, scale, sample_every, exact_generator=None):
    dt = cfg.step_size if cfg.step_size is not None else 0.01 / scale
    n_steps, dt, sample_steps = _step_grid(t_final, dt, sample_every)
    times = sample_steps * dt
    if n_steps == 0:
        return times, y0[None].copy()
    if cfg.method == "adaptive":
        return times, _adaptive(rhs, y0, times, cfg.error_tolerance)
    propagator = None
    if cfg.method == "expm":
        if exact_generator is None:
            raise ValueError("method 'expm' needs a time-independent generator")
        propagator = expm(exact_generator * dt)
    return times, _fixed_step(rhs, y0, n_steps, dt, sample_steps, propagator)


def check_density_trajectory(times, states, atol: float = ATOL,
                             positivity_atol: float = POSITIVITY_ATOL) -> None:
    """Raise ``IntegrationError`` at the first sample violating a density-matrix invariant."""
    traces = np.trace(states, axis1=1, axis2=2)
    herm = np.max(np.abs(states - np.conj(np.swapaxes(states, 1, 2))), axis=(1, 2))
    lam_min = np.linalg.eigvalsh(states).min(axis=1)
    bad_trace = np.abs(traces - 1.0) > atol
    bad_herm = herm > atol
    bad_pos = lam_min < -positivity_atol
    bad = bad_trace | bad_herm | bad_pos
    if np.any(bad):
        i = int(np.argmax(bad))
        if bad_trace[i]:
            what = f"trace drifted to {traces[i]:.12g}"
        elif bad_herm[i]:
            what = f"Hermiticity broken by {herm[i]:.3e}"
        else:
            what = f"negative eigenvalue {lam_min[i]:.3e}"
        raise IntegrationError(what, float(times[i]))


def evolve_lindblad(gen: LindbladGenerator, rho0, t_final: float,
                    cfg: IntegratorConfig | None = None, sample_every: int = 1,
                    validate: bool = True) -> Trajectory:
    """Integrate the master equation from ``rho0`` up to ``t_final``."""
    cfg = cfg or IntegratorConfig()
    rho0 = np.array(rho0, dtype=complex)
    if rho0.shape != (gen.dim, gen.dim):
        raise ValueError(f"rho0 shape {rho0.shape} does not match generator dimension {gen.dim}")
    exact = None
    if cfg.method == "expm":
        if gen.dim > EXPM_MAX_DIM:
            raise ValueError(f"method 'expm' is limited to dimension <= {EXPM_MAX_DIM}")
        if gen.time_independent:
            exact = gen.superoperator()
    times, states = _integrate(lambda r, t: gen(r, t), rho0, t_final, cfg, gen.scale(),
                               sample_every, exact)
    if validate:
        check_density_trajectory(times, states)
    return Trajectory(times, states, {"trace": np.real(np.trace(states, axis1=1, axis2=2))})


def evolve_schrodinger(hamiltonian: HamiltonianLike, psi0, t_final: float,
                       cfg: IntegratorConfig | None = None, sample_every: int = 1,
                       validate: bool = True) -> Trajectory:
    """Integrate ``i d/dt psi = H(t) psi``."""
    cfg = cfg or IntegratorConfig()
    psi0 = np.array(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1.0) > NORM_ATOL:
        raise ValueError("psi0 is not normalized")
    if callable(hamiltonian):
        h_of_t = hamiltonian
        h_const = None
    else:
        h_const = np.asarray(hamiltonian, dtype=complex)
        h_of_t = lambda t: h_const  # noqa: E731
    h0 = np.asarray(h_of_t(0.0))
    if h0.shape != (psi0.shape[0],) * 2:
        raise ValueError(f"Hamiltonian shape {h0.shape} does not match state {psi0.shape}")
    exact = -1j * h_const if (cfg.method == "expm" and h_const is not None) else None
    scale = max(float(np.linalg.norm(h0, 2)), 1.0)
    times, states = _integrate(lambda y, t: -1j * (h_of_t(t) @ y), psi0, t_final, cfg, scale,
                               sample_every, exact)
    norms = np.linalg.norm(states, axis=1)
    if validate:
        bad = np.abs(norms - 1.0) > ATOL
        if np.any(bad):
            i = int(np.argmax(bad))
            raise IntegrationError(f"norm drifted to {norms[i]:.12g}", float(times[i]))
    return Trajectory(times, states, {"norm": norms})


def _stochastic_chunk(args) -> np.ndarray:
    """Sum of ``|psi><psi|`` over one chunk of noise realizations, at each sample."""
    model, noise, psi0, n_traj, seed_seq, n_steps, dt, sample_steps = args
    rng = np.random.default_rng(seed_seq)
    n = psi0.shape[0]
    psi = np.broadcast_to(psi0, (n_traj, n)).copy()
    acc = np.zeros((len(sample_steps), n, n), dtype=complex)
    acc[0] = n_traj * projector(psi0)
    sigma = noise.xi_std(dt) if noise.noise_std_s > 0 else 0.0
    w = model.w
    next_sample = 1
    for k in range(n_steps):
        t_mid = (k + 0.5) * dt
        xi = sigma * rng.standard_normal(n_traj) if sigma > 0 else np.zeros(n_traj)
        H = np.broadcast_to(model.driver_hamiltonian(t_mid), (n_traj, n, n)).copy()
        H[:, w, w] += model.E + xi
        # H is constant over the step, so propagate exactly
        lam, V = np.linalg.eigh(H)
        phase = np.exp(-1j * lam * dt)
        coeff = np.einsum("bji,bj->bi", V.conj(), psi)
        psi = np.einsum("bij,bj->bi", V, phase * coeff)
        if k + 1 == sample_steps[next_sample]:
            acc[next_sample] = np.einsum("bi,bj->ij", psi, psi.conj())
            next_sample += 1
    return acc


def stochastic_oracle_run(model: "SearchModel", noise: NoiseTrajectoryConfig, psi0,
                          t_final: float, cfg: IntegratorConfig | None = None,
                          sample_every: int = 1, jobs: int = 1) -> Trajectory:
    """Average ``|psi_t><psi_t|`` over realizations of ``H = (E + xi(t))|w><w| + H_D(t)``.

    Realizations are split into fixed-size chunks, each seeded from
    ``rng_seed`` by chunk index, and summed in chunk order, so the result
    does not depend on ``jobs``.
    """
    cfg = (cfg or IntegratorConfig()).resolve(model.E, noise.dephasing_rate)
    psi0 = np.array(psi0, dtype=complex)
    if psi0.shape != (model.N,):
        raise ValueError(f"psi0 shape {psi0.shape} does not match N={model.N}")
    n_steps, dt, sample_steps = _step_grid(t_final, cfg.step_size, sample_every)
    times = sample_steps * dt
    sizes = [noise.chunk_size] * (noise.n_trajectories // noise.chunk_size)
    if noise.n_trajectories % noise.chunk_size:
        sizes.append(noise.n_trajectories % noise.chunk_size)
    seeds = np.random.SeedSequence(noise.rng_seed).spawn(len(sizes))
    tasks = [(model, noise, psi0, m, s, n_steps, dt, sample_steps) for m, s in zip(sizes, seeds)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_stochastic_chunk, tasks))
    else:
        parts = [_stochastic_chunk(t) for t in tasks]
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    rho = total / noise.n_trajectories
    w = model.w
    return Trajectory(
        times, rho,
        {
            "success_prob": np.real(rho[:, w, w]),
            "trace": np.real(np.trace(rho, axis1=1, axis2=2)),
        },
        chunk_means=np.stack([p / m for p, m in zip(parts, sizes)]),
    )
