"""Command line entry point: ``qfeedback <subcommand> [options]``.

Subcommands
-----------
simulate          one trajectory; writes trajectory/switch CSVs
ensemble          many trajectories; writes summary.json and tables
reduce            uncontrolled ensemble with eigenspace classification
check-generator   Monte Carlo vs closed-form generator of V, v or VV
reachability      spectral check of the constant-drive system
validate-config   parse a config and print it with defaults filled

Flags override fields of the ``--config`` file, which override defaults.
Exit codes: 0 success, 1 config error, 2 numerical failure, 3 a check run
with ``--assert`` failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from qfeedback.analysis import generator_delta_study, reachability_check
from qfeedback.control import fixed_law, spin_feedback_law, two_qubit_feedback_law
from qfeedback.dynamics import trajectory_rng
from qfeedback.harness.config import ConfigError, parse_config
from qfeedback.harness.io import default_out_dir, write_outputs, write_trajectory
from qfeedback.harness.runner import build, initial_state, reduction_experiment, run_ensemble, run_trajectory
from qfeedback.qstate import ProjectionError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_CHECK = 3

KAPPA_GRID = (1.0, 2.0, 4.0, 8.0)

# flag dest -> top-level config field
_OVERRIDES = {
    "dt": "dt",
    "T": "T",
    "eta": "eta",
    "n_trajectories": "n_trajectories",
    "seed": "master_seed",
    "record_stride": "record_stride",
    "converge_eps": "converge_eps",
}


def _add_config_flags(p: argparse.ArgumentParser, ensemble: bool = False):
    p.add_argument("--config", type=Path, required=True, help="JSON config file")
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float, help="horizon")
    p.add_argument("--eta", type=float, help="detector efficiency")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--record-stride", type=int)
    p.add_argument("--converge-eps", type=float)
    p.add_argument("--gamma", type=float, help="switching threshold of the controller")
    if ensemble:
        p.add_argument("--n-trajectories", type=int)
        p.add_argument("--workers", type=int, default=None, help="threads (default: CPU count)")


def load_config(args):
    """Config from ``args.config`` with command line overrides applied."""
    try:
        data = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"--config: cannot read {args.config}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--config: {args.config} is not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    for dest, key in _OVERRIDES.items():
        val = getattr(args, dest, None)
        if val is not None:
            data[key] = val
    if getattr(args, "gamma", None) is not None:
        ctrl = dict(data.get("controller", {"kind": "zero"}))
        if ctrl.get("kind") in (None, "zero", "constant"):
            raise ConfigError("--gamma: the configured controller has no switching threshold")
        ctrl["gamma"] = args.gamma
        data["controller"] = ctrl
    return parse_config(data)


def _out(args) -> Path:
    return Path(args.out) if args.out else default_out_dir()


def cmd_simulate(args) -> int:
    config = load_config(args)
    rec = run_trajectory(config, args.index)
    out = _out(args)
    write_trajectory(rec, out)
    write_outputs(None, None, out, config)
    print(f"trajectory {rec.seed_index}: converged={rec.converged} final_V={rec.final_V:.6g} "
          f"switches={rec.n_switches} -> {out}")
    if rec.failed:
        print(f"numerical failure: {rec.fail_reason}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _run_ensemble(args, fn) -> int:
    config = load_config(args)
    out = _out(args)
    hook = (lambda r: write_trajectory(r, out)) if args.write_trajectories else None
    if hook:
        out.mkdir(parents=True, exist_ok=True)
    stats = fn(config, args.workers, hook)
    write_outputs(None, stats, out, config)
    print(f"n={stats.n} failed={stats.n_failed} converged={stats.convergence_fraction:.4f} "
          f"mean_final_V={stats.mean_final_V:.4g} -> {out}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    return _run_ensemble(args, run_ensemble)


def cmd_reduce(args) -> int:
    return _run_ensemble(args, reduction_experiment)


def cmd_check_generator(args) -> int:
    config = load_config(args)
    setup = build(config)
    spec, target = setup.spec, setup.target
    if args.function == "v":
        law = fixed_law([0.0] * spec.n_controls, spec.N)
    elif target.is_spin:
        law = spin_feedback_law(target)
    else:
        law = two_qubit_feedback_law(target)
    rho = initial_state(config, 0)
    rng = trajectory_rng(config.master_seed, 0)
    study = generator_delta_study(spec, law, rho, args.delta, args.samples, function=args.function,
                                  target=target, rng=rng, substeps=args.substeps,
                                  halvings=args.halvings)
    report = {
        "function": args.function,
        "delta": args.delta,
        "samples": args.samples,
        "analytic": study.coarse.analytic,
        "mc_estimate": study.coarse.mc_estimate,
        "mc_stderr": study.coarse.mc_stderr,
        "estimates_by_delta": [[r.delta, r.mc_estimate] for r in study.levels],
        "bias_slope": study.bias_slope,
        "tolerance": study.tolerance,
        "error": study.coarse.error,
        "passed": study.passed,
    }
    print(json.dumps(report, indent=2))
    return EXIT_CHECK if args.assert_ and not study.passed else EXIT_OK


def _parse_system(text: str):
    if text == "two_qubit":
        return "two_qubit"
    kind, _, two_j = text.partition(":")
    if kind == "spin" and two_j.isdigit() and int(two_j) >= 1:
        return int(two_j)
    raise ConfigError(f"--system: expected 'two_qubit' or 'spin:<2J>' with 2J >= 1, got {text!r}")


def cmd_reachability(args) -> int:
    system = _parse_system(args.system)
    kappas = [args.kappa] if args.kappa is not None else list(KAPPA_GRID)
    results = []
    for k in kappas:
        r = reachability_check(system, k, args.tol)
        results.append({
            "kappa": r.kappa,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in r.eigenvalues],
            "eigenvalue_min_gap": r.eigenvalue_min_gap,
            "min_abs_eigvec_entry": r.min_abs_eigvec_entry,
            "vandermonde_logdet_modulus": r.vandermonde_logdet_modulus if np.isfinite(r.vandermonde_logdet_modulus)
            else None,
            "eigvec_condition": r.eigvec_condition,
            "pass": r.passed,
        })
    print(json.dumps({"system": args.system, "tol": args.tol, "results": results}, indent=2))
    ok = any(r["pass"] for r in results)
    return EXIT_CHECK if args.assert_ and not ok else EXIT_OK


def cmd_validate_config(args) -> int:
    config = load_config(args)
    print(json.dumps(config.to_dict(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qfeedback", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one trajectory")
    _add_config_flags(p)
    p.add_argument("--index", type=int, default=0, help="trajectory index within the seed's streams")
    p.add_argument("--out", help="output directory (default $QFEEDBACK_OUT or ./qfeedback_out)")
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (("ensemble", cmd_ensemble, "run an ensemble"),
                             ("reduce", cmd_reduce, "uncontrolled state-reduction ensemble")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p, ensemble=True)
        p.add_argument("--out", help="output directory (default $QFEEDBACK_OUT or ./qfeedback_out)")
        p.add_argument("--write-trajectories", action="store_true", help="also write per-trajectory files")
        p.set_defaults(func=func)

    p = sub.add_parser("check-generator", help="compare Monte Carlo and closed-form generators")
    _add_config_flags(p)
    p.add_argument("--function", choices=("V", "v", "VV"), required=True)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--substeps", type=int, default=10)
    p.add_argument("--halvings", type=int, default=2, help="delta halvings used to fit the bias constant")
    p.add_argument("--assert", dest="assert_", action="store_true", help="exit 3 if the check fails")
    p.set_defaults(func=cmd_check_generator)

    p = sub.add_parser("reachability", help="spectral reachability check")
    p.add_argument("--system", required=True, help="'two_qubit' or 'spin:<2J>'")
    p.add_argument("--kappa", type=float, help="default: try 1, 2, 4, 8")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--assert", dest="assert_", action="store_true", help="exit 3 if no kappa passes")
    p.set_defaults(func=cmd_reachability)

    p = sub.add_parser("validate-config", help="parse a config and print it with defaults")
    _add_config_flags(p)
    p.set_defaults(func=cmd_validate_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProjectionError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
