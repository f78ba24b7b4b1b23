"""Command-line runner for mode sweeps and tolerance studies.

Settings come from flags and optionally from a flat ``key = value`` file
(``--config``); keys are the long flag names with dashes or underscores,
and flags given on the command line win. Exit codes: 0 success, 1
configuration error, 2 when at least one run of the sweep failed.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .experiments import ExperimentSpec, any_failed, run_mode_sweep, run_tolerance_study
from .optimizer import METHODS, OptimizerConfig

log = logging.getLogger("spodcontrol")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

DEFAULTS = {
    "example": 1,
    "scale": 1.0,
    "method": "fom,pod,spod",
    "modes": "10",
    "eps": "",
    "out": "results",
    "seed": 0,
    "threads": 1,
    "dump_snapshots": False,
    "n_iter": 100000,
    "n_samples": 800,
    "adjoint": "discrete",
    "mu": 1e-3,
    "delta": 1e-4,
}


class ConfigError(ValueError):
    pass


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        lines = open(path).read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{num}: unknown key {key!r}")
        values[key] = value
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spodcontrol", description=__doc__.splitlines()[0])
    # no defaults here so that unset flags can fall back to the config file
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--example", type=int, help="test problem 1, 2 or 3")
    p.add_argument("--scale", type=float, help="grid scale; 1.0 is m=3200, n=3360")
    p.add_argument("--method", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--modes", help="comma-separated mode counts for the sweep")
    p.add_argument("--eps", help="comma-separated tolerances; switches to the tolerance study")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="recorded in the metadata; the runs are deterministic")
    p.add_argument("--threads", type=int, help="workers for cache assembly")
    p.add_argument("--dump-snapshots", action="store_const", const=True, help="also write final states")
    p.add_argument("--n-iter", type=int, help="iteration cap")
    p.add_argument("--n-samples", type=int, help="shift samples of the Galerkin cache")
    p.add_argument("--adjoint", choices=("discrete", "otd"), help="full-order adjoint variant")
    p.add_argument("--mu", type=float, help="control cost weight")
    p.add_argument("--delta", type=float, help="relative gradient stop tolerance")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _as_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _split(v, kind):
    s = str(v).strip()
    if not s:
        return ()
    try:
        return tuple(kind(x) for x in s.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad list {v!r}: {exc}") from exc


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(parse_config_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def spec_from_settings(s: dict) -> ExperimentSpec:
    try:
        opt = OptimizerConfig(
            mu=float(s["mu"]), delta=float(s["delta"]), n_iter=int(s["n_iter"]),
            n_samples=int(s["n_samples"]), adjoint=str(s["adjoint"]), threads=int(s["threads"]),
        )
        return ExperimentSpec(
            example=int(s["example"]),
            scale=float(s["scale"]),
            methods=_split(s["method"], str),
            modes=_split(s["modes"], int),
            eps=_split(s["eps"], float),
            out=str(s["out"]),
            seed=int(s["seed"]),
            threads=int(s["threads"]),
            dump_snapshots=_as_bool(s["dump_snapshots"]),
            optimizer=opt,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        spec = spec_from_settings(resolve_settings(args))
        if spec.eps:
            outcomes = run_tolerance_study(spec)
        else:
            if not spec.modes and set(spec.methods) != {"fom"}:
                raise ConfigError("mode sweep needs --modes")
            outcomes = run_mode_sweep(spec)
    except (ConfigError, ValueError) as exc:
        # runs catch their own failures, so anything reaching here is a setup problem
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for o in outcomes:
        log.info("%-4s %-8g J=%-12.6g iters=%-6d %-10s %s", o.method, o.setting, o.J_final, o.iterations,
                 o.exit_reason, o.status)
    return EXIT_PARTIAL if any_failed(outcomes) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
