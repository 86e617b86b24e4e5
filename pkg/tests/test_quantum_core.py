import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import sqrtm

from faultyoracle.quantum_core import (
    DegenerateDecomposition,
    DensityMatrix,
    HermitianOperator,
    PureState,
    basis_state,
    fidelity_upper_bound,
    frobenius_norm_sq_diff,
    projector,
    trace_distance,
    two_dim_decompose,
    uniform_state,
)

from conftest import random_density, random_pure


class TestUniformState:
    def test_n4_amplitudes(self):
        s = uniform_state(4)
        np.testing.assert_allclose(s.amplitudes, 0.5)
        assert abs(s.amplitudes[2]) == pytest.approx(0.5)

    def test_n100_overlap(self):
        assert uniform_state(100).amplitudes[37].real == pytest.approx(0.1, abs=1e-15)

    def test_rejects_n1(self):
        with pytest.raises(ValueError):
            uniform_state(1)


class TestTypes:
    def test_pure_state_rejects_unnormalized(self):
        with pytest.raises(ValueError, match="normalized"):
            PureState(np.array([1.0, 1.0]))

    def test_density_matrix_invariants(self, rng):
        DensityMatrix(random_density(rng, 4))
        with pytest.raises(ValueError, match="trace"):
            DensityMatrix(2 * random_density(rng, 3))
        with pytest.raises(ValueError, match="negative"):
            DensityMatrix(np.diag([1.5, -0.5]))
        with pytest.raises(ValueError, match="Hermitian"):
            DensityMatrix(np.array([[0.5, 0.3], [0.1, 0.5]]))

    def test_hermitian_operator(self):
        HermitianOperator(np.array([[1, 1j], [-1j, 2]]))
        with pytest.raises(ValueError):
            HermitianOperator(np.array([[1, 1j], [1j, 2]]))

    def test_values_are_immutable(self):
        s = uniform_state(3)
        with pytest.raises(ValueError):
            s.amplitudes[0] = 1.0

    def test_array_protocol(self):
        rho = basis_state(3, 1).projector()
        assert trace_distance(rho, np.asarray(rho)) == 0.0
        assert rho.purity() == pytest.approx(1.0)


def _frobenius_oracle(a, b):
    n = a.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            d = a[i, j] - b[i, j]
            total += d.real**2 + d.imag**2
    return total


class TestFrobenius:
    def test_identical(self, rng):
        rho = random_density(rng, 4)
        assert frobenius_norm_sq_diff(rho, rho) == 0.0

    def test_orthogonal_projectors(self):
        assert frobenius_norm_sq_diff(projector([1, 0, 0]), projector([0, 0, 1])) == pytest.approx(2.0)

    def test_random_pair_against_elementwise_sum(self, rng):
        a, b = random_density(rng, 4), random_density(rng, 4)
        assert frobenius_norm_sq_diff(a, b) == pytest.approx(_frobenius_oracle(a, b), abs=1e-14)
        assert frobenius_norm_sq_diff(a, b) == pytest.approx(frobenius_norm_sq_diff(b, a), abs=1e-15)

    def test_trace_expansion(self, rng):
        for n in (2, 5, 8):
            a, b = random_density(rng, n), random_density(rng, n)
            expansion = np.trace(a @ a) + np.trace(b @ b) - 2 * np.trace(a @ b)
            assert frobenius_norm_sq_diff(a, b) == pytest.approx(expansion.real, abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            frobenius_norm_sq_diff(np.eye(2) / 2, np.eye(3) / 3)


class TestTraceDistance:
    def test_identical(self, rng):
        rho = random_density(rng, 3)
        assert trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_pure(self):
        assert trace_distance(projector([1, 0]), projector([0, 1])) == pytest.approx(1.0)

    def test_n3_against_matrix_square_root(self, rng):
        a, b = random_density(rng, 3), random_density(rng, 3)
        d = a - b
        oracle = 0.5 * np.trace(sqrtm(d.conj().T @ d)).real
        assert trace_distance(a, b) == pytest.approx(oracle, abs=1e-10)

    def test_metric_properties(self, rng):
        for n in (2, 4, 8):
            states = [random_density(rng, n, rank=rng.integers(1, n + 1)) for _ in range(5)]
            for a, b, c in itertools.permutations(states, 3):
                assert trace_distance(a, b) == pytest.approx(trace_distance(b, a), abs=1e-12)
                assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            trace_distance(np.eye(2) / 2, np.eye(4) / 4)


class TestFidelityBound:
    def test_perfect_overlap(self):
        phi = uniform_state(5).amplitudes
        assert fidelity_upper_bound(projector(phi), phi) == pytest.approx(0.0, abs=1e-7)

    def test_orthogonal(self):
        assert fidelity_upper_bound(projector([0, 1, 0]), np.array([1, 0, 0])) == pytest.approx(1.0)

    def test_clamps_tiny_negative(self):
        phi = np.array([1.0, 0.0])
        rho = np.diag([1.0 + 1e-13, -1e-13])
        assert fidelity_upper_bound(rho, phi) == 0.0

    def test_rejects_large_negative(self):
        with pytest.raises(ValueError):
            fidelity_upper_bound(np.diag([1.1, -0.1]), np.array([1.0, 0.0]))

    def test_random_n5_bounds_trace_distance(self, rng):
        rho, phi = random_density(rng, 5), random_pure(rng, 5)
        assert trace_distance(rho, projector(phi)) <= fidelity_upper_bound(rho, phi) + 1e-10

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(2, 8), seed=st.integers(0, 2**32 - 1), rank=st.integers(1, 8))
    def test_bound_property(self, n, seed, rank):
        rng = np.random.default_rng(seed)
        rho = random_density(rng, n, rank=min(rank, n))
        phi = random_pure(rng, n)
        assert trace_distance(rho, projector(phi)) <= fidelity_upper_bound(rho, phi) + 1e-10


class TestTwoDimDecompose:
    def test_uniform_n4(self):
        overlap, f, _ = two_dim_decompose(uniform_state(4), 0)
        assert overlap == pytest.approx(0.5)
        assert f == pytest.approx(0.5 * np.sqrt(0.75))
        assert abs(f) == pytest.approx(0.4330, abs=1e-4)

    def test_parallel_is_degenerate(self):
        with pytest.raises(DegenerateDecomposition):
            two_dim_decompose(basis_state(3, 2), 2)

    def test_orthogonal(self):
        overlap, f, perp = two_dim_decompose(basis_state(3, 1), 0)
        assert overlap == 0 and f == 0
        np.testing.assert_allclose(perp.amplitudes, [0, 1, 0])

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(2, 16), seed=st.integers(0, 2**32 - 1))
    def test_round_trip(self, n, seed):
        rng = np.random.default_rng(seed)
        phi = random_pure(rng, n)
        w = int(rng.integers(n))
        overlap, f, perp = two_dim_decompose(phi, w)
        rebuilt = overlap * basis_state(n, w).amplitudes + np.sqrt(1 - abs(overlap) ** 2) * perp.amplitudes
        np.testing.assert_allclose(rebuilt, phi, atol=1e-12)
        assert abs(perp.amplitudes[w]) == 0.0
        assert f == pytest.approx(overlap * np.sqrt(1 - abs(overlap) ** 2), abs=1e-14)
