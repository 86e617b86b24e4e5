"""Progress measure, its growth rate, and the runtime lower bound.

The progress measure for winner ``w`` is ``F_w(t) = ||rho_w(t) - rho_0(t)||_F^2``
where ``rho_w`` evolves under the noisy oracle and ``rho_0 = |phi_t><phi_t|``
under the driver alone.  Its growth rate is capped by
``(gamma^2 + 4E^2) / (2 gamma) * |<w|phi_t>|^2``; summing over winners and
integrating gives ``T >= N 2 gamma (2p^2 - 1) / (gamma^2 + 4E^2)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from faultyoracle.dynamics import (
    IntegratorConfig,
    LindbladGenerator,
    evolve_lindblad,
    evolve_schrodinger,
    rk4_step,
)
from faultyoracle.quantum_core import (
    fallback_perp,
    frobenius_norm_sq_diff,
    projector,
    trace_distance_batch,
)
from faultyoracle.search_model import (
    SearchModel,
    build_no_oracle_generator,
    build_oracle_generator,
    build_reduced_model,
)

P_THRESHOLD = 2**-0.5
CRITERIA = ("trace-distance", "success-prob")
ENGINES = ("full", "reduced", "auto")


def progress_measure(rho_w, rho_0) -> float:
    """Squared Frobenius distance between the oracle and oracle-free states."""
    return frobenius_norm_sq_diff(rho_w, rho_0)


def progress_lower_bound_at_T(p: float, N: int) -> float:
    """Minimum summed progress ``N (2p^2 - 1)`` for success probability ``p``."""
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    return N * (2 * p * p - 1)


def winner_dissipator(rho, w: int, gamma: float) -> np.ndarray:
    rho = np.asarray(rho)
    P = np.zeros_like(rho)
    P[w, w] = 1.0
    return gamma * (P @ rho @ P - 0.5 * (P @ rho + rho @ P))


def growth_rate_direct(rho_w, rho_0, w: int, E: float, gamma: float) -> float:
    """``dF_w/dt`` from the three trace terms; the driver drops out."""
    rho_w = np.asarray(rho_w, dtype=complex)
    rho_0 = np.asarray(rho_0, dtype=complex)
    Hw = np.zeros_like(rho_w)
    Hw[w, w] = E
    Lrho = winner_dissipator(rho_w, w, gamma)
    value = 2 * (np.trace(Lrho @ rho_w) - np.trace(Lrho @ rho_0)
                 + 1j * np.trace((Hw @ rho_w - rho_w @ Hw) @ rho_0))
    return float(np.real(value))


def growth_rate_closed_form(x: complex, f: complex, E: float, gamma: float) -> float:
    """Rate in terms of the coherence ``x = [rho_w]_{w, w_perp}`` and ``f``."""
    value = 2 * (-gamma * abs(x) ** 2
                 + (gamma / 2 + 1j * E) * x * np.conj(f)
                 + (gamma / 2 - 1j * E) * np.conj(x) * f)
    assert abs(value.imag) < 1e-12 * max(1.0, abs(value)), value
    return float(value.real)


def optimal_coherence(f: complex, E: float, gamma: float) -> complex:
    """Coherence maximizing the closed-form rate: ``(1/2 - iE/gamma) f``."""
    if not gamma > 0:
        raise ValueError("optimal coherence diverges for gamma = 0")
    return complex((0.5 - 1j * E / gamma) * f)


def growth_rate_cap(E: float, gamma: float) -> float:
    """Upper bound on the rate of the progress summed over all winners."""
    if not gamma > 0:
        raise ValueError("growth-rate cap is undefined for gamma = 0")
    return (gamma**2 + 4 * E**2) / (2 * gamma)


def growth_rate_cap_per_winner(E: float, gamma: float, overlap: complex) -> float:
    return growth_rate_cap(E, gamma) * abs(overlap) ** 2


def runtime_lower_bound(N: int, gamma: float, E: float, p: float) -> float:
    if not gamma > 0:
        raise ValueError("runtime bound is undefined for gamma = 0")
    if not P_THRESHOLD - 1e-15 <= p <= 1:
        raise ValueError(f"p must lie in [2^-1/2, 1], got {p}")
    return N * 2 * gamma * (2 * p * p - 1) / (gamma**2 + 4 * E**2)


@dataclass(frozen=True)
class ProgressSample:
    t: float
    F_w: float
    F_total: float
    overlap: complex
    f: complex
    x: complex
    rate_direct: float
    rate_closed_form: float


@dataclass
class BoundReport:
    """Outcome of one threshold-time measurement.

    ``T_measured`` is ``None`` when the criterion was not met before
    ``t_max``; such rows count as satisfied because no violation was seen.
    ``T_lower_bound`` and ``satisfied`` are ``None`` for ``gamma = 0``.
    """

    N: int
    gamma: float
    E: float
    p: float
    criterion: str
    T_measured: float | None
    T_lower_bound: float | None
    satisfied: bool | None
    t_max: float
    engine: str = "full"
    wall_time: float = 0.0
    error: str | None = None

    @property
    def reached(self) -> bool:
        return self.T_measured is not None

    @property
    def ratio(self) -> float | None:
        if self.T_measured is None or not self.T_lower_bound:
            return None
        return self.T_measured / self.T_lower_bound


def _batched_chunks(n: int, size: int = 256):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def rate_direct_batch(rho_w: np.ndarray, rho_0: np.ndarray, w: int, E: float,
                      gamma: float) -> np.ndarray:
    """Vectorized ``growth_rate_direct`` over a stack of state pairs.

    Uses the rank-one structure of ``|w><w|``: the dissipator only touches
    row and column ``w``.
    """
    out = np.empty(rho_w.shape[0])
    for sl in _batched_chunks(rho_w.shape[0]):
        r, s = rho_w[sl], rho_0[sl]
        Lr = np.zeros_like(r)
        Lr[:, w, :] = -0.5 * gamma * r[:, w, :]
        Lr[:, :, w] = -0.5 * gamma * r[:, :, w]
        Lr[:, w, w] = 0.0
        # tr(A B) = sum_ij A_ij B_ji
        t1 = np.einsum("bij,bji->b", Lr, r)
        t2 = np.einsum("bij,bji->b", Lr, s)
        comm = np.zeros_like(r)
        comm[:, w, :] += E * r[:, w, :]
        comm[:, :, w] -= E * r[:, :, w]
        t3 = np.einsum("bij,bji->b", comm, s)
        out[sl] = np.real(2 * (t1 - t2 + 1j * t3))
    return out


def decompose_batch(phi: np.ndarray, rho_w: np.ndarray, w: int):
    """Overlap, ``f`` and ``x`` for every sample; degenerate samples get ``f = 0``."""
    overlap = phi[:, w].copy()
    rest = phi.copy()
    rest[:, w] = 0.0
    perp_norm = np.linalg.norm(rest, axis=1)
    degenerate = np.abs(overlap) >= 1.0 - 1e-12
    safe = np.where(degenerate, 1.0, perp_norm)
    w_perp = rest / safe[:, None]
    if np.any(degenerate):
        w_perp[degenerate] = fallback_perp(phi.shape[1], w).amplitudes
    f = np.where(degenerate, 0.0, overlap * perp_norm)
    x = np.einsum("bj,bj->b", rho_w[:, w, :], w_perp)
    return overlap, f, x


def rate_closed_form_batch(x, f, E: float, gamma: float) -> np.ndarray:
    value = 2 * (-gamma * np.abs(x) ** 2 + (gamma / 2 + 1j * E) * x * np.conj(f)
                 + (gamma / 2 - 1j * E) * np.conj(x) * f)
    return np.real(value)


@dataclass
class PairedTrajectory:
    """Co-evolved noisy-oracle state ``rho_w`` and oracle-free pure state ``phi``.

    ``w`` indexes the winner in the basis of the stored states, which is 0
    for the reduced engine.
    """

    model: SearchModel
    engine: str
    times: np.ndarray
    rho_w: np.ndarray
    phi: np.ndarray
    w: int
    gen_w: LindbladGenerator
    gen_0: LindbladGenerator
    F_total_override: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.model.N

    @cached_property
    def rho_0(self) -> np.ndarray:
        return np.einsum("bi,bj->bij", self.phi, self.phi.conj())

    @cached_property
    def observables(self) -> dict[str, np.ndarray]:
        m, w = self.model, self.w
        rho_w, rho_0 = self.rho_w, self.rho_0
        F_w = np.sum(np.abs(rho_w - rho_0) ** 2, axis=(1, 2))
        overlap, f, x = decompose_batch(self.phi, rho_w, w)
        if self.F_total_override is not None:
            F_total = self.F_total_override
        else:
            F_total = self.N * F_w
        phi_rho_phi = np.real(np.einsum("bi,bij,bj->b", self.phi.conj(), rho_w, self.phi))
        return {
            "t": self.times,
            "success_prob": np.real(rho_w[:, w, w]),
            "F_w": F_w,
            "F_total": F_total,
            "rate_direct": rate_direct_batch(rho_w, rho_0, w, m.E, m.gamma),
            "rate_closed_form": rate_closed_form_batch(x, f, m.E, m.gamma),
            "purity_w": np.sum(np.abs(rho_w) ** 2, axis=(1, 2)),
            "trace_w": np.real(np.trace(rho_w, axis1=1, axis2=2)),
            "trace_distance": trace_distance_batch(rho_w, rho_0),
            "fidelity_term": 1.0 - 2.0 * phi_rho_phi,
            "overlap": overlap,
            "f": f,
            "x": x,
        }

    def sample(self, i: int) -> ProgressSample:
        obs = self.observables
        return ProgressSample(
            t=float(self.times[i]), F_w=float(obs["F_w"][i]), F_total=float(obs["F_total"][i]),
            overlap=complex(obs["overlap"][i]), f=complex(obs["f"][i]), x=complex(obs["x"][i]),
            rate_direct=float(obs["rate_direct"][i]),
            rate_closed_form=float(obs["rate_closed_form"][i]),
        )

    def finite_difference_rate(self, i: int, h: float = 1e-4) -> float:
        """Central difference of ``F_w`` from single RK4 steps of size ``+-h``."""
        t = float(self.times[i])
        rho, phi = self.rho_w[i], self.phi[i]

        def schrod(y, s):
            return -1j * (self.gen_0.hamiltonian(s) @ y)

        values = []
        for step in (h, -h):
            r = rk4_step(self.gen_w, rho, t, step)
            p = rk4_step(schrod, phi, t, step)
            values.append(progress_measure(r, projector(p)))
        return (values[0] - values[1]) / (2 * h)

    def criterion_series(self, criterion: str) -> tuple[np.ndarray, float]:
        """Values to threshold and the exponent applied to ``p``."""
        if criterion == "trace-distance":
            return self.observables["trace_distance"], 1
        if criterion == "success-prob":
            return self.observables["success_prob"], 2
        raise ValueError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")


def crossing_time(times: np.ndarray, values: np.ndarray, threshold: float) -> float | None:
    """First time ``values`` reaches ``threshold``, linearly interpolated."""
    hits = np.nonzero(values >= threshold)[0]
    if hits.size == 0:
        return None
    i = int(hits[0])
    if i == 0:
        return float(times[0])
    v0, v1 = values[i - 1], values[i]
    return float(times[i - 1] + (threshold - v0) / (v1 - v0) * (times[i] - times[i - 1]))


def _resolve_engine(model: SearchModel, engine: str) -> str:
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; choose from {ENGINES}")
    if engine == "auto":
        return "reduced" if model.uniform_driver and model.initial_state is None else "full"
    return engine


def paired_trajectory(model: SearchModel, t_final: float, cfg: IntegratorConfig | None = None,
                      engine: str = "auto", sample_every: int = 1,
                      brute_force_sum: bool | None = None) -> PairedTrajectory:
    """Evolve the noisy-oracle state and the oracle-free state on one time grid.

    The summed progress uses winner symmetry for the uniform driver; other
    drivers (or ``brute_force_sum=True``) sum explicit runs over all winners.
    """
    engine = _resolve_engine(model, engine)
    cfg = (cfg or IntegratorConfig()).resolve(model.E, model.gamma)
    if engine == "reduced":
        rm = build_reduced_model(model)
        gen_w, gen_0 = rm.oracle_generator(), rm.no_oracle_generator()
        psi0, w = rm.start_state(), 0
    else:
        gen_w, gen_0 = build_oracle_generator(model), build_no_oracle_generator(model)
        psi0, w = model.start_state(), model.w
    traj_w = evolve_lindblad(gen_w, projector(psi0), t_final, cfg, sample_every)
    if gen_0.time_independent:
        # a constant driver is propagated exactly on the same grid; RK4 would leak norm on long runs
        traj_0 = evolve_schrodinger(gen_0.hamiltonian(0.0), psi0, t_final,
                                    replace(cfg, method="expm"), sample_every)
    else:
        traj_0 = evolve_schrodinger(gen_0.hamiltonian, psi0, t_final, cfg, sample_every)
    if brute_force_sum is None:
        brute_force_sum = not model.uniform_driver
    override = None
    if brute_force_sum:
        override = all_winners_progress(model, t_final, cfg, sample_every)
    return PairedTrajectory(model, engine, traj_w.times, traj_w.states, traj_0.states, w,
                            gen_w, gen_0, override)


def all_winners_progress(model: SearchModel, t_final: float, cfg: IntegratorConfig | None = None,
                         sample_every: int = 1) -> np.ndarray:
    """``F_t = sum_w F_t^w`` from one full-space paired run per winner."""
    total = None
    for w in range(model.N):
        pt = paired_trajectory(model.replace(w=w), t_final, cfg, "full", sample_every,
                               brute_force_sum=False)
        F_w = pt.observables["F_w"]
        total = F_w.copy() if total is None else total + F_w
    return total


def bound_reports(pt: PairedTrajectory, ps: Sequence[float], criterion: str = "trace-distance",
                  wall_time: float = 0.0) -> list[BoundReport]:
    values, power = pt.criterion_series(criterion)
    m = pt.model
    t_max = float(pt.times[-1])
    reports = []
    for p in ps:
        T = crossing_time(pt.times, values, p**power)
        bound = runtime_lower_bound(m.N, m.gamma, m.E, p) if m.gamma > 0 and p >= P_THRESHOLD else None
        if bound is None:
            satisfied = None
        else:
            satisfied = T is None or T >= bound - 1e-9
        reports.append(BoundReport(m.N, m.gamma, m.E, p, criterion, T, bound, satisfied, t_max,
                                   pt.engine, wall_time))
    return reports


def measure_runtime(model: SearchModel, p: float, criterion: str = "trace-distance",
                    t_max: float = 100.0, cfg: IntegratorConfig | None = None,
                    engine: str = "auto", sample_every: int = 1) -> BoundReport:
    """Time at which the oracle run first meets the success criterion, with the bound.

    ``trace-distance`` asks for ``1/2 ||rho_w - rho_0||_tr >= p``;
    ``success-prob`` asks for ``<w|rho_w|w> >= p^2``.
    """
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
    start = time.perf_counter()
    pt = paired_trajectory(model, t_max, cfg, engine, sample_every, brute_force_sum=False)
    return bound_reports(pt, [p], criterion, time.perf_counter() - start)[0]

