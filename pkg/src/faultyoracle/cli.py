"""Command-line front end.

Settings come from built-in defaults, then an optional TOML file given
with ``--config``, then explicit flags.  Exit codes: 0 success, 1 usage or
config error, 2 bound violation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from faultyoracle.dynamics import IntegrationError, IntegratorConfig, NoiseTrajectoryConfig
from faultyoracle.experiments import (
    DEFAULT_N_VALUES,
    NoRowsError,
    SweepSpec,
    emit_results,
    fit_rows,
    read_results_csv,
    results_csv,
    results_json,
    run_sweep,
    sweep_t_max,
    trajectory_csv,
    unravel_check,
    verify_bounds,
    verify_rows,
)
from faultyoracle.progress import paired_trajectory
from faultyoracle.search_model import SearchModel

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = {
    "n_values": list(DEFAULT_N_VALUES),
    "gamma": [1.0],
    "alpha": None,
    "delta": None,
    "energy": [1.0],
    "threshold_p": [0.8],
    "criterion": "trace-distance",
    "t_max": None,
    "dt": None,
    "seed": 0,
    "jobs": 1,
    "out": None,
    "format": "csv",
    "engine": None,
    "input": None,
    "noise_std": None,
    "trajectories": 10000,
    "window": math.pi,
    "driver": None,
    "wall_time": False,
}
LIST_KEYS = {"n_values", "gamma", "energy", "threshold_p"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file with any of the options below")
    p.add_argument("--n-values", type=_int_list, help="comma-separated search-space sizes")
    p.add_argument("--gamma", type=_float_list, help="dephasing rate(s), constant rule")
    p.add_argument("--alpha", type=float, help="power-law rule gamma = alpha * N^(-2 delta)")
    p.add_argument("--delta", type=float, help="power-law exponent delta")
    p.add_argument("--energy", type=_float_list, help="oracle energy E")
    p.add_argument("--threshold-p", type=_float_list, help="success threshold p")
    p.add_argument("--criterion", choices=["trace-distance", "success-prob"])
    p.add_argument("--t-max", type=float, help="integration horizon (default: automatic)")
    p.add_argument("--dt", type=float, help="integrator step")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--out", help="output file")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faultyoracle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="dump one paired trajectory as CSV")
    _add_common(p)
    p.add_argument("--engine", choices=["full", "reduced", "auto"])

    p = sub.add_parser("sweep", help="threshold time versus N with an exponent fit")
    _add_common(p)
    p.add_argument("--engine", choices=["full", "reduced"])
    p.add_argument("--wall-time", action="store_true", default=None,
                   help="record wall-clock time per row (output is then not byte-stable)")

    p = sub.add_parser("verify-bounds", help="check measured times against the runtime bound")
    _add_common(p)
    p.add_argument("--engine", choices=["full", "reduced"])
    p.add_argument("--input", help="re-verify rows of an existing results CSV instead of simulating")

    p = sub.add_parser("unravel", help="noise-averaged fluctuating oracle versus the Lindbladian")
    _add_common(p)
    p.add_argument("--noise-std", type=float, help="noise strength s; gamma = s^2 / (2 pi)")
    p.add_argument("--trajectories", type=int)
    p.add_argument("--window", type=float, help="phase accumulation window (default pi)")
    p.add_argument("--driver", choices=["none", "uniform"])

    p = sub.add_parser("fit", help="re-fit the exponent of an existing results CSV")
    p.add_argument("--config")
    p.add_argument("--input", required=False)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    cfg = {}
    for key, value in raw.items():
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}: unknown key {key!r}")
        if key in LIST_KEYS and not isinstance(value, list):
            value = [value]
        cfg[key] = value
    return cfg


def resolve(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    settings.update(load_config(getattr(args, "config", None)))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def _single(settings: dict, key: str):
    values = settings[key]
    if len(values) != 1:
        raise UsageError(f"--{key.replace('_', '-')} takes a single value for this command")
    return values[0]


def _spec(settings: dict, gamma: float, energy: float, p: float, engine: str) -> SweepSpec:
    try:
        return SweepSpec(
            n_values=list(settings["n_values"]), gamma=gamma, alpha=settings["alpha"],
            delta=settings["delta"], E=energy, p=p, criterion=settings["criterion"],
            t_max=settings["t_max"], step_size=settings["dt"], engine=engine,
            jobs=settings["jobs"], seed=settings["seed"],
            record_wall_time=bool(settings["wall_time"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(settings: dict) -> int:
    N = settings["n_values"][0]
    gamma, E = _single(settings, "gamma"), _single(settings, "energy")
    model = SearchModel(N=N, E=E, gamma=gamma)
    t_max = settings["t_max"] or sweep_t_max(N, gamma, E, _single(settings, "threshold_p"))
    cfg = IntegratorConfig(settings["dt"])
    pt = paired_trajectory(model, t_max, cfg, settings["engine"] or "auto")
    _write(trajectory_csv(pt), settings["out"])
    return EXIT_OK


def cmd_sweep(settings: dict) -> int:
    spec = _spec(settings, _single(settings, "gamma"), _single(settings, "energy"),
                 _single(settings, "threshold_p"), settings["engine"] or "reduced")
    result = run_sweep(spec)
    if settings["out"]:
        emit_results(result, settings["out"], settings["format"])
    else:
        _write(results_json(result) if settings["format"] == "json"
               else results_csv(result.rows, spec.record_wall_time), None)
    if result.fitted_exponent is not None:
        print(f"fitted exponent {result.fitted_exponent:.4f} +- {result.fit_stderr:.4f}",
              file=sys.stderr)
    else:
        print("fit skipped: fewer than 3 rows reached the threshold", file=sys.stderr)
    if any(r.error for r in result.rows + result.crosscheck):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_verify(settings: dict) -> int:
    if settings["input"]:
        report = verify_rows(read_results_csv(settings["input"]))
    else:
        specs = [_spec(settings, g, E, p, settings["engine"] or "reduced")
                 for g, E, p in itertools.product(settings["gamma"], settings["energy"],
                                                  settings["threshold_p"])]
        report = verify_bounds(specs)
    text = "\n".join(report.lines()) + "\n"
    _write(text, settings["out"])
    print(f"{len(report.checked)} rows checked, {len(report.violations)} violations",
          file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_unravel(settings: dict) -> int:
    N = settings["n_values"][0] if settings["n_values"] != DEFAULTS["n_values"] else 2
    window = settings["window"]
    if settings["noise_std"] is not None:
        noise = NoiseTrajectoryConfig(settings["noise_std"], settings["trajectories"],
                                      settings["seed"], window)
    else:
        noise = NoiseTrajectoryConfig.for_rate(_single(settings, "gamma"),
                                               n_trajectories=settings["trajectories"],
                                               rng_seed=settings["seed"], window=window)
    model = SearchModel(N=N, E=_single(settings, "energy"), gamma=noise.dephasing_rate,
                        driver=settings["driver"] or "none")
    t_final = settings["t_max"] or (2.0 / noise.dephasing_rate if noise.dephasing_rate else 4.0)
    report = unravel_check(noise, model, t_final, IntegratorConfig(settings["dt"]),
                           jobs=settings["jobs"])
    payload = {
        "N": N, "noise_std_s": noise.noise_std_s, "gamma": report.gamma,
        "n_trajectories": report.n_trajectories,
        "max_frobenius_distance": report.max_frobenius_distance,
        "decay_rate_stochastic": report.decay_rate_stochastic,
        "decay_rate_stochastic_stderr": report.decay_rate_stochastic_stderr,
        "decay_rate_lindblad": report.decay_rate_lindblad,
    }
    _write(json.dumps(payload, indent=2, sort_keys=True) + "\n", settings["out"])
    return EXIT_OK


def cmd_fit(settings: dict) -> int:
    if not settings["input"]:
        raise UsageError("fit needs --input <results.csv>")
    rows = read_results_csv(settings["input"])
    exponent, stderr = fit_rows(rows)
    if exponent is None:
        raise UsageError("fit needs at least 3 rows with a measured time")
    print(f"exponent {exponent:.6f} stderr {stderr:.6f}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "verify-bounds": cmd_verify,
    "unravel": cmd_unravel,
    "fit": cmd_fit,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args)
        return COMMANDS[args.command](settings)
    except (UsageError, NoRowsError) as exc:
        print(f"faultyoracle: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrationError as exc:
        print(f"faultyoracle: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"faultyoracle: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
