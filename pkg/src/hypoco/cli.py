"""Command-line entry point.

Subcommands: assemble, verify, bound, constants, lemmas, sweep, report.
All JSON output is serialized with sorted keys and compact separators and all
CSV columns are fixed, so identical configurations produce byte-identical
files.  Exit codes follow the error taxonomy: 0 success, 1 invariant
violation, 2 configuration error, 3 numerical failure (including unconverged
reports).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import constants as con
from . import models as mod
from .basis import BasisSpec, build_basis
from .config import RunConfig, parse_config, parse_range
from .container import save_container
from .errors import ConfigError, HypocoError, NumericalFailure
from .operators import ModelSpec, assemble_model, verify_structural_assumptions
from .schur import BOUND_JSON_KEYS  # noqa: F401  (re-exported for reports)

CSV_COLUMNS = ("model", "gamma", "epsilon", "d", "n_q", "n_p",
               "s", "a", "bound", "exact", "margin", "converged")


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def _load_config(args) -> RunConfig:
    if args.config is None:
        raise ConfigError(["--config is required for this subcommand"])
    config = parse_config(args.config)
    if getattr(args, "model", None):
        if args.model not in ("langevin", "boltzmann_rhmc", "adaptive_langevin"):
            raise ConfigError([f"unknown model {args.model!r}"])
        config.model = args.model
    if getattr(args, "gamma", None):
        try:
            config.gammas = parse_range(args.gamma)
        except ValueError as exc:
            raise ConfigError([str(exc)]) from exc
        if not np.all(config.gammas > 0):
            raise ConfigError(["gamma values must be positive"])
    if getattr(args, "epsilon_range", None):
        try:
            config.epsilons = parse_range(args.epsilon_range)
        except ValueError as exc:
            raise ConfigError([str(exc)]) from exc
        if not np.all(config.epsilons > 0):
            raise ConfigError(["epsilon values must be positive"])
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "out", None):
        config.out = args.out
    if getattr(args, "max_dim", None):
        os.environ["HYPOCO_MAX_DIM"] = str(args.max_dim)
    if config.model == "adaptive_langevin" and config.epsilons is None:
        raise ConfigError(["epsilon is required for the adaptive_langevin model"])
    return config


def _basis_spec(config: RunConfig) -> BasisSpec:
    has_xi = config.model == "adaptive_langevin"
    return BasisSpec(d=config.d, n_q=config.n_q, n_p=config.n_p,
                     beta=config.beta, mass=config.mass,
                     torus_length=config.torus_length,
                     has_xi=has_xi, n_xi=config.n_xi if has_xi else 0)


def _model_spec(config: RunConfig, gamma: float, epsilon: float | None) -> ModelSpec:
    return ModelSpec(model=config.model, gamma=float(gamma), beta=config.beta,
                     mass=config.mass, d=config.d,
                     epsilon=None if epsilon is None else float(epsilon))


def _first_point(config: RunConfig) -> tuple[float, float | None]:
    gamma = float(config.gammas[0])
    epsilon = None if config.epsilons is None else float(config.epsilons[0])
    return gamma, epsilon


def _assemble(config: RunConfig):
    gamma, epsilon = _first_point(config)
    basis = build_basis(_basis_spec(config), potential=config.potential(),
                        tol_identity=config.tol_identity)
    ops = assemble_model(basis, _model_spec(config, gamma, epsilon))
    return basis, ops


def cmd_assemble(args) -> int:
    config = _load_config(args)
    basis, ops = _assemble(config)
    summary = {
        "model": ops.model.model, "dim": ops.dim,
        "dim0": int(len(ops.idx0)), "dim_plus": int(len(ops.idx_plus)),
        "nnz": {"A": int(ops.A.matrix.nnz), "S": int(ops.S.matrix.nnz),
                "L": int(ops.L.nnz)},
        "s_analytic": ops.model.s_analytic,
    }
    sys.stdout.write(_json_dumps(summary))
    if config.out:
        meta = {"model": ops.model.model, "gamma": ops.model.gamma,
                "epsilon": ops.model.epsilon, "beta": config.beta,
                "mass": config.mass, "d": config.d, "n_q": config.n_q,
                "n_p": config.n_p,
                "n_xi": config.n_xi if basis.spec.has_xi else 0,
                "potential": config.potential_text, "dim": ops.dim}
        save_container(config.out, {
            "A": ops.A.matrix, "S": ops.S.matrix, "L": ops.L,
            "pi0": ops.pi0.matrix, "reversal": ops.reversal.matrix,
        }, meta=meta)
        sys.stdout.write(f"wrote {config.out}\n")
    return 0


def cmd_verify(args) -> int:
    config = _load_config(args)
    _, ops = _assemble(config)
    report = verify_structural_assumptions(ops, tol=config.tol_identity)
    sys.stdout.write(report.table() + "\n")
    if args.json:
        _emit(_json_dumps({
            "model": ops.model.model,
            "passed": report.passed,
            "residuals": {k: float(v) for k, v in report.residuals.items()},
            "s_analytic": report.s_analytic, "s_numeric": report.s_numeric,
        }), args.json)
    if not report.passed:
        sys.stderr.write("structural assumption check failed\n")
        return 1
    return 0


def _bound_report(config: RunConfig, gamma: float, epsilon: float | None,
                  constants: dict | None = None):
    return mod.model_bound_report(
        _model_spec(config, gamma, epsilon), _basis_spec(config),
        potential=config.potential(), constants=constants,
        rel_tol=config.conv_tol, tol_identity=config.tol_identity)


def _config_constants(config: RunConfig) -> dict:
    return con.constants_summary(
        config.potential(), config.beta, config.mass, config.d,
        n_q=max(32, 2 * config.n_q), torus_length=config.torus_length,
        c2=config.c2)


def cmd_bound(args) -> int:
    config = _load_config(args)
    gamma, epsilon = _first_point(config)
    report = _bound_report(config, gamma, epsilon,
                           constants=_config_constants(config))
    payload = report.to_json() + "\n"
    _emit(payload, args.json)
    if args.json:
        sys.stdout.write(payload)
    if not report.converged:
        sys.stderr.write("bound report is not converged under cutoff doubling\n")
        return 3
    if config.model != "adaptive_langevin" and report.margin < 1.0:
        sys.stderr.write(f"margin {report.margin:.6f} < 1 on a converged point\n")
        return 1
    return 0


def cmd_constants(args) -> int:
    config = _load_config(args)
    summary = _config_constants(config)
    _emit(_json_dumps(summary), args.json)
    if args.json:
        sys.stdout.write(_json_dumps(summary))
    return 0


def cmd_lemmas(args) -> int:
    config = _load_config(args)
    potential = config.potential()
    suite = args.suite
    rng = np.random.default_rng(config.seed)
    size = (2 * config.n_q + 1) ** config.d
    growth = con.estimate_growth_constants(potential, config.beta, config.d,
                                           torus_length=config.torus_length,
                                           c2=config.c2)
    if potential.is_zero:
        case, params = "convex", {}
    else:
        case = "hessian_lower_bound"
        params = {"K": con.estimate_hessian_K(potential, config.d,
                                              torus_length=config.torus_length)}
    villani = controlh2 = bochner = 0.0
    for _ in range(suite):
        phi = rng.standard_normal(size)
        villani = max(villani, con.check_villani_lemma(
            phi, potential, config.beta, config.d, growth.c1,
            torus_length=config.torus_length))
        u = rng.standard_normal(size)
        controlh2 = max(controlh2, con.check_controlH2(
            u, potential, config.beta, case, params=params, d=config.d,
            torus_length=config.torus_length))
        bochner = max(bochner, con.check_bochner(
            u, potential, config.beta, d=config.d,
            torus_length=config.torus_length))
    out = {"suite": suite, "seed": config.seed, "case": case,
           "villani_max_ratio": villani, "controlH2_max_ratio": controlh2,
           "bochner_max_residual": bochner, "c1": growth.c1}
    _emit(_json_dumps(out), args.json)
    if args.json:
        sys.stdout.write(_json_dumps(out))
    return 0


def _sweep_worker(payload: dict) -> dict:
    config = RunConfig(**payload["config"])
    report = _bound_report(config, payload["gamma"], payload["epsilon"],
                           constants=payload["constants"])
    row = {"model": config.model, "gamma": float(payload["gamma"]),
           "epsilon": payload["epsilon"], "d": config.d,
           "n_q": config.n_q, "n_p": config.n_p,
           "s": report.s, "a": report.a, "bound": report.bound,
           "exact": report.exact, "margin": report.margin,
           "converged": report.converged}
    return row


def _config_payload(config: RunConfig) -> dict:
    payload = {f: getattr(config, f) for f in (
        "model", "d", "beta", "mass", "potential_text", "torus_length",
        "n_q", "n_p", "n_xi", "tol_identity", "conv_tol", "rank_tol",
        "seed")}
    return payload


def cmd_sweep(args) -> int:
    config = _load_config(args)
    epsilons = [None] if config.epsilons is None else list(config.epsilons)
    constants = _config_constants(config)
    payloads = [{"config": _config_payload(config), "gamma": float(g),
                 "epsilon": None if e is None else float(e),
                 "constants": constants}
                for g in config.gammas for e in epsilons]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_worker, payloads))
    else:
        rows = [_sweep_worker(p) for p in payloads]
    text = _csv_text(rows)
    _emit(text, args.csv)
    if args.csv:
        sys.stdout.write(f"wrote {args.csv} ({len(rows)} rows)\n")
    if not all(r["converged"] for r in rows):
        sys.stderr.write("sweep contains unconverged points\n")
        return 3
    if config.model != "adaptive_langevin" and any(r["margin"] < 1.0 for r in rows):
        sys.stderr.write("sweep contains converged points with margin < 1\n")
        return 1
    return 0


def cmd_report(args) -> int:
    config = _load_config(args)
    gamma, epsilon = _first_point(config)
    _, ops = _assemble(config)
    verify = verify_structural_assumptions(ops, tol=config.tol_identity)
    constants = _config_constants(config)
    bound = _bound_report(config, gamma, epsilon, constants=constants)
    document = {
        "config": {**_config_payload(config),
                   "gamma": gamma, "epsilon": epsilon},
        "assumptions": {
            "passed": verify.passed,
            "residuals": {k: float(v) for k, v in verify.residuals.items()},
            "s_numeric": verify.s_numeric, "s_analytic": verify.s_analytic,
        },
        "constants": constants,
        "bound": bound.to_json_dict(),
        "seed": config.seed,
    }
    _emit(_json_dumps(document), args.json)
    if args.json:
        sys.stdout.write(_json_dumps(document))
    if args.csv:
        row = {"model": config.model, "gamma": gamma, "epsilon": epsilon,
               "d": config.d, "n_q": config.n_q, "n_p": config.n_p,
               "s": bound.s, "a": bound.a, "bound": bound.bound,
               "exact": bound.exact, "margin": bound.margin,
               "converged": bound.converged}
        _emit(_csv_text([row]), args.csv)
    if not verify.passed:
        return 1
    if not bound.converged:
        return 3
    if config.model != "adaptive_langevin" and bound.margin < 1.0:
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypoco",
        description="Kinetic-generator assembly, Schur-complement resolvent "
                    "bounds, and their verification suite.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, jobs=False, csv=False, suite=False):
        p.add_argument("--config", required=False, help="key=value config file")
        p.add_argument("--model", help="override the configured model")
        p.add_argument("--gamma", help="value or range start:stop:logN|linN")
        p.add_argument("--epsilon-range", dest="epsilon_range",
                       help="value or range for the thermostat parameter")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output path (container or report)")
        p.add_argument("--json", help="write JSON output to this path")
        p.add_argument("--max-dim", dest="max_dim", type=int,
                       help="override the basis dimension guard")
        if jobs:
            p.add_argument("--jobs", type=int, default=1,
                           help="parallel workers for sweep points")
        if csv:
            p.add_argument("--csv", help="write CSV output to this path")
        if suite:
            p.add_argument("--suite", type=int, default=100,
                           help="number of random functions per lemma")

    for name, func, extra in (
            ("assemble", cmd_assemble, {}),
            ("verify", cmd_verify, {}),
            ("bound", cmd_bound, {}),
            ("constants", cmd_constants, {}),
            ("lemmas", cmd_lemmas, {"suite": True}),
            ("sweep", cmd_sweep, {"jobs": True, "csv": True}),
            ("report", cmd_report, {"csv": True})):
        p = sub.add_parser(name)
        common(p, **extra)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HypocoError as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except FileNotFoundError as exc:
        sys.stderr.write(f"ConfigError: {exc}\n")
        return ConfigError([str(exc)]).exit_code


if __name__ == "__main__":
    sys.exit(main())
