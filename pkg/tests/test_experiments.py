import csv
import io
import json
import math

import numpy as np
import pytest

from faultyoracle.dynamics import NoiseTrajectoryConfig
from faultyoracle.experiments import (
    CSV_COLUMNS,
    DEFAULT_N_VALUES,
    TRAJECTORY_COLUMNS,
    NoRowsError,
    SweepResult,
    SweepSpec,
    audit_trajectory,
    emit_results,
    fit_power_law,
    fit_rows,
    read_results_csv,
    read_results_json,
    results_csv,
    run_paired,
    run_sweep,
    trajectory_csv,
    unravel_check,
    unravel_convergence,
    verify_rows,
)
from faultyoracle.progress import BoundReport
from faultyoracle.search_model import SearchModel


def _row(N=64, T=30.0, bound=25.6, satisfied=True, p=0.8):
    return BoundReport(N, 1.0, 1.0, p, "trace-distance", T, bound, satisfied, 100.0, "reduced")


class TestSweepSpec:
    @pytest.mark.parametrize("kwargs", [{"n_values": []}, {"n_values": [1, 4]},
                                        {"alpha": 0.0}, {"delta": -0.1}, {"p": 1.0},
                                        {"criterion": "x"}, {"engine": "auto"}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            SweepSpec(**kwargs)

    def test_gamma_rules(self):
        assert SweepSpec(gamma=0.3).gamma_for(1000) == 0.3
        spec = SweepSpec(alpha=2.0, delta=0.25)
        assert spec.gamma_rule == "power-law"
        assert spec.gamma_for(16) == pytest.approx(0.5)
        assert SweepSpec(delta=0.0).gamma_for(99) == 1.0


class TestFit:
    def test_recovers_exact_power_law(self):
        n = np.array([64, 128, 256, 512])
        slope, stderr = fit_power_law(n, 3.0 * n**0.75)
        assert slope == pytest.approx(0.75, abs=1e-12) and stderr < 1e-12

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            fit_power_law([1, 2], [1, 2])
        assert fit_rows([_row(), _row(N=128), _row(N=256, T=None)]) == (None, None)


class TestSweep:
    def test_noiseless_exponent_is_one_half(self):
        spec = SweepSpec(n_values=DEFAULT_N_VALUES, gamma=0.0, p=math.sqrt(0.999),
                         criterion="success-prob")
        result = run_sweep(spec)
        assert [r.N for r in result.rows] == DEFAULT_N_VALUES
        assert result.fitted_exponent == pytest.approx(0.5, abs=0.02)

    def test_crosscheck_rows_agree_with_reduced(self):
        result = run_sweep(SweepSpec(n_values=[16, 32, 64], gamma=1.0, p=0.4))
        assert [r.N for r in result.crosscheck] == [16, 32]
        assert all(r.engine == "full" for r in result.crosscheck)
        reduced = {r.N: r.T_measured for r in result.rows}
        for r in result.crosscheck:
            assert r.T_measured == pytest.approx(reduced[r.N], rel=5e-3)
        assert result.fitted_exponent == pytest.approx(fit_rows(result.rows)[0])

    def test_fit_stable_when_densest_n_doubled(self):
        base = [64, 128, 256, 512, 1024, 2048, 4096]
        a = run_sweep(SweepSpec(n_values=base, alpha=1.0, delta=0.25, p=0.4))
        b = run_sweep(SweepSpec(n_values=base + [8192], alpha=1.0, delta=0.25, p=0.4))
        assert abs(a.fitted_exponent - b.fitted_exponent) <= max(a.fit_stderr, b.fit_stderr)

    def test_failed_point_is_recorded(self):
        spec = SweepSpec(n_values=[4, 8, 16], gamma=1.0, p=0.4, engine="full", step_size=50.0,
                     t_max=100.0)
        result = run_sweep(spec)
        assert all(r.error for r in result.rows)
        assert result.fitted_exponent is None

    def test_output_independent_of_jobs(self, tmp_path):
        spec = dict(n_values=[16, 64, 128], gamma=1.0, p=0.4, seed=3)
        paths = []
        for jobs in (1, 2):
            result = run_sweep(SweepSpec(jobs=jobs, **spec))
            for fmt in ("csv", "json"):
                path = tmp_path / f"out{jobs}.{fmt}"
                emit_results(result, path, fmt)
                paths.append(path)
        assert paths[0].read_bytes() == paths[2].read_bytes()
        assert json.loads(paths[1].read_text())["spec"]["jobs"] == 1
        assert paths[1].read_text().replace('"jobs": 1', '"jobs": 2') == paths[3].read_text()


class TestVerify:
    def test_violation_detected(self):
        report = verify_rows([_row(), _row(N=128, T=10.0, bound=51.2, satisfied=True)])
        assert not report.ok
        assert [r.N for r in report.violations] == [128]
        assert "VIOLATED" in report.lines()[1]

    def test_unreached_and_noiseless_rows(self):
        noiseless = BoundReport(8, 0.0, 1.0, 0.8, "trace-distance", 3.0, None, None, 10.0)
        report = verify_rows([_row(T=None), noiseless])
        assert report.ok and len(report.checked) == 1
        assert "not reached" in report.lines()[0] and "SKIP" in report.lines()[1]

    def test_empty(self):
        with pytest.raises(NoRowsError, match="no rows"):
            verify_rows([])


class TestResultsFiles:
    def test_empty_result_is_header_only(self, tmp_path):
        path = tmp_path / "r.csv"
        emit_results(SweepResult([]), path)
        assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"

    def test_one_row_is_two_lines(self):
        text = results_csv([_row()])
        lines = text.splitlines()
        assert len(lines) == 2
        rec = next(csv.DictReader(io.StringIO(text)))
        assert rec["satisfied"] == "true" and rec["T_measured"] == "30.0"

    def test_csv_round_trip(self, tmp_path):
        rows = [_row(), _row(N=128, T=None, satisfied=True)]
        path = tmp_path / "r.csv"
        path.write_text(results_csv(rows))
        back = read_results_csv(path)
        for a, b in zip(rows, back):
            assert (a.N, a.gamma, a.E, a.p, a.T_measured, a.T_lower_bound, a.satisfied) == \
                   (b.N, b.gamma, b.E, b.p, b.T_measured, b.T_lower_bound, b.satisfied)

    def test_json_round_trip(self, tmp_path):
        result = run_sweep(SweepSpec(n_values=[64, 128, 256], gamma=1.0, p=0.4))
        path = tmp_path / "r.json"
        emit_results(result, path, "json")
        data = read_results_json(path)
        assert data["fitted_exponent"] == result.fitted_exponent
        assert data["fit_stderr"] == result.fit_stderr
        for rec, row in zip(data["rows"], result.rows):
            assert rec["T_measured"] == row.T_measured and rec["T_bound"] == row.T_lower_bound
            assert rec["satisfied"] == row.satisfied and rec["N"] == row.N
        assert set(data["rows"][0]) == set(CSV_COLUMNS)

    def test_unwritable_path_names_the_path(self, tmp_path):
        bad = tmp_path / "missing" / "r.csv"
        with pytest.raises(OSError, match="missing"):
            emit_results(SweepResult([]), bad)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("N,gamma\n4,1.0\n")
        with pytest.raises(ValueError, match="missing columns"):
            read_results_csv(path)

    def test_trajectory_dump(self):
        pt = run_paired(SearchModel(N=8, gamma=1.0), 2.0, "reduced")
        rows = list(csv.reader(io.StringIO(trajectory_csv(pt))))
        assert rows[0] == TRAJECTORY_COLUMNS
        assert len(rows) == len(pt.times) + 1
        assert float(rows[-1][0]) == pytest.approx(2.0)


class TestAudit:
    def test_small_run(self):
        pt = run_paired(SearchModel(N=8, gamma=4.0, E=0.5), 20.0, "full")
        audit = audit_trajectory(pt, fd_points=100)
        assert audit.fd_points == 100
        assert audit.max_rate_excess <= 1e-8 and audit.max_integrated_excess <= 1e-6
        assert audit.max_closed_form_mismatch <= 1e-8 and audit.max_fd_mismatch <= 1e-6
        assert 0 < audit.max_rate_ratio <= 1.0


class TestUnravel:
    def test_zero_noise_single_trajectory(self):
        noise = NoiseTrajectoryConfig(0.0, n_trajectories=1)
        report = unravel_check(noise, SearchModel(N=2, driver="none"), 3.0)
        assert report.max_frobenius_distance <= 1e-12

    def test_rate_mismatch_rejected(self):
        noise = NoiseTrajectoryConfig.for_rate(0.5, n_trajectories=1)
        with pytest.raises(ValueError):
            unravel_check(noise, SearchModel(N=2, gamma=0.4, driver="none"), 1.0)

    def test_with_uniform_driver(self):
        noise = NoiseTrajectoryConfig.for_rate(0.5, n_trajectories=2000, rng_seed=1)
        report = unravel_check(noise, SearchModel(N=2, gamma=0.5), 4.0)
        assert report.max_frobenius_distance < 0.05

    def test_standard_error_halves_with_four_times_the_trajectories(self):
        # Monte-Carlo error falls as 1/sqrt(n): doubling gives 1/sqrt(2), quadrupling 1/2
        noise = NoiseTrajectoryConfig.for_rate(0.5, rng_seed=21)
        model = SearchModel(N=2, gamma=0.5, driver="none")
        d = unravel_convergence(noise, model, 2.0, [250, 1000], n_seeds=8)
        assert 0.3 <= d[1000] / d[250] <= 0.75
