"""Command-line entry point.

Every subcommand reads a model config (see :mod:`qcrystal.config`),
writes its report files into ``--output`` and a ``manifest.json`` with
the config digest, seed, version and file hashes. Exit codes: 0 success,
1 invalid input, 2 numerical failure, 3 inequality-suite failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .criteria import evaluate_criteria
from .errors import InputError, NumericError, QCrystalError
from .inequalities import (EXACT_TOL, antiferromagnetic_meta_check, harmonic_instance, random_instances, run_suite,
                           suite_quadrature, verify_lebowitz)
from .lattice import build_action, build_periodic_action
from .leeyang import locate_partition_zeros, potential_laguerre_condition, pressure_bounds, pressure_curve
from .model import validate_model
from .pimc import default_threads, estimate_mean, estimate_order_parameter, run_chains
from .serialize import SCHEMAS, dumps, schema, write_csv, write_json
from .spectral import (SchrodingerProblem, low_variance, matsubara_two_point, solve_schrodinger, spectral_gap,
                       upp_correlator_integral)

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_INPUT", "EXIT_NUMERIC", "EXIT_INEQUALITY"]

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INEQUALITY = 0, 1, 2, 3
SUITES = ("canonical", "harmonic", "meta", "random", "model", "all")
RANDOM_COUNT = 100
WICK_TOL = 1e-10


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; here that code means numerical failure."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INPUT)


class _Run:
    """Output directory plus the list of files written so far."""

    def __init__(self, outdir: str):
        self.outdir = outdir
        self.files: dict = {}
        os.makedirs(outdir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.outdir, name)

    def _track(self, name):
        with open(self.path(name), "rb") as fh:
            self.files[name] = hashlib.sha256(fh.read()).hexdigest()

    def json(self, name, obj):
        write_json(self.path(name), obj)
        self._track(name)

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows)
        self._track(name)


# ---------------------------------------------------------------------------
# subcommands


def _spectral_problem(cfg: RunConfig) -> SchrodingerProblem:
    s = cfg.spectrum
    return SchrodingerProblem(cfg.spec.mass, cfg.spec.rigidity, cfg.spec.potential, x_max=s["x_max"],
                              n_points=s["n_points"], n_keep=s["n_keep"], method=s["method"])


def _parse_table(arg: str) -> tuple:
    target, sep, rng = arg.partition("=")
    parts = rng.split(":")
    if not sep or "." not in target or len(parts) != 3:
        raise InputError(f"--table expects section.key=start:stop:num, got {arg!r}")
    try:
        start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise InputError(f"cannot parse --table range {rng!r}") from None
    if num < 1:
        raise InputError("--table needs at least one point")
    return target.strip(), np.linspace(start, stop, num)


def cmd_criteria(args, cfg: RunConfig, run: _Run) -> int:
    res = cfg.spectrum["n_points"], cfg.spectrum["n_keep"]
    report = evaluate_criteria(cfg.spec, cfg.decomposition, n_points=res[0], n_keep=res[1])
    run.json("criteria.json", {"status": "ok", "validation": validate_model(cfg.spec).to_dict(),
                               "report": report.to_dict()})
    if args.table:
        target, values = _parse_table(args.table)
        header = [target, "phase_transition_predicted", "beta_star", "phase_threshold", "t_star", "delta_gap",
                  "quantum_stabilization", "high_T_unique"]
        rows = []
        for v in values:
            sub = load_config(args.config, list(args.set) + [f"{target}={float(v)!r}"], args.seed)
            r = evaluate_criteria(sub.spec, sub.decomposition, n_points=res[0], n_keep=res[1])
            rows.append([float(v), r.phase_transition_predicted, r.beta_star, r.phase_threshold, r.t_star,
                         r.delta_gap, r.quantum_stabilization, r.high_T_unique])
        run.csv("criteria_table.csv", header, rows)
    return EXIT_OK


def cmd_spectrum(args, cfg: RunConfig, run: _Run) -> int:
    dec = solve_schrodinger(_spectral_problem(cfg))
    gap = spectral_gap(dec)
    beta, m = cfg.spec.beta, cfg.spec.mass
    run.json("spectrum.json", {
        "status": "ok",
        "beta": beta,
        "energies": dec.energies,
        "gap": gap.value,
        "gap_index": gap.index,
        "gap_at_edge": gap.at_truncation_edge,
        "K_upp": upp_correlator_integral(dec, beta),
        "K_upp_bound": 1.0 / (m * gap.value**2),
        "variance": low_variance(dec, beta),
        "x_max": dec.x_max,
        "n_points": cfg.spectrum["n_points"],
    })
    n_tau = cfg.spectrum["tau_points"]
    if n_tau:
        tau = np.linspace(0.0, beta, n_tau)
        run.csv("gamma.csv", ["tau", "gamma"], zip(tau, matsubara_two_point(dec, beta, tau)))
    return EXIT_OK


def _action(cfg: RunConfig):
    box, P = cfg.require_box()
    if box.boundary == "periodic":
        return build_periodic_action(cfg.spec, box.shape[0] // 2, P)
    return build_action(cfg.spec, box, P)


def _label(key) -> str:
    if isinstance(key, str):
        return key
    counts: dict = {}
    for p in key:
        counts[p] = counts.get(p, 0) + 1
    return "*".join(f"x[{s},{t}]" + (f"^{k}" if k > 1 else "") for (s, t), k in counts.items())


def cmd_simulate(args, cfg: RunConfig, run: _Run) -> int:
    action = _action(cfg)
    stats = run_chains(action, cfg.mc, threads=args.threads)
    labels = [_label(k) for k in stats.keys]
    report = {
        "status": "ok",
        "n_sites": action.n_sites,
        "P": action.P,
        "beta": action.beta,
        "params": asdict(cfg.mc),
        "estimates": {lab: estimate_mean(stats, k) for lab, k in zip(labels, stats.keys)},
        "ess": {lab: stats.ess(k) for lab, k in zip(labels, stats.keys)},
        "acceptance": stats.acceptance(),
        "widths": [list(c.widths) for c in stats.chains],
    }
    if stats.periodic:
        report["order_parameter"] = estimate_order_parameter(stats, action.box)
    run.json("simulate.json", report)
    if cfg.mc.trace_stride:
        stride = cfg.mc.trace_stride
        rows = ([c.chain_index, s * stride] + list(row) for c in stats.chains for s, row in enumerate(c.trace))
        run.csv("trace.csv", ["chain", "sweep"] + labels, rows)
    return EXIT_OK


def _case(report, classname: str, expect_pass: bool = True, extra_ok=None) -> dict:
    ok = report.passed if expect_pass else not report.passed
    if extra_ok is not None:
        ok = ok and extra_ok
    return {"name": f"{report.name}[{report.instance}]", "classname": classname,
            "status": "passed" if ok else "failed", "margin": report.margin, "detail": report.to_dict()}


def _suite_cases(suite: str, cfg: RunConfig | None, seed: int = 0) -> list:
    cases = []
    if suite in ("canonical", "all"):
        cases += [_case(r, "canonical") for r in run_suite()]
    if suite in ("harmonic", "all"):
        name, action = harmonic_instance()
        r = verify_lebowitz(action, [[(0, 0), (0, 0), (1, 2), (1, 2)], [(0, 0), (1, 1), (0, 2), (1, 0)]],
                            suite_quadrature(action))
        cases.append(_case(r, "harmonic", extra_ok=abs(r.margin) < WICK_TOL))
    if suite in ("meta", "all"):
        cases.append(_case(antiferromagnetic_meta_check(), "meta", expect_pass=False))
    if suite == "random":
        cases += [_case(r, "random") for r in run_suite(random_instances(RANDOM_COUNT, seed))]
    if suite == "model":
        if cfg is None:
            raise InputError("suite 'model' needs --config")
        action = _action(cfg)
        if action.box is not None and action.box.boundary == "periodic":
            raise InputError("suite 'model' runs on zero-boundary boxes")
        cases += [_case(r, "model") for r in run_suite([("config", action)])]
    return cases


def cmd_verify(args, cfg: RunConfig | None, run: _Run) -> int:
    cases = _suite_cases(args.suite, cfg, args.seed)
    failures = sum(c["status"] == "failed" for c in cases)
    run.json("verify.json", {"status": "failed" if failures else "ok", "suite": args.suite, "tests": len(cases),
                             "failures": failures, "tolerance": EXACT_TOL, "testcases": cases})
    return EXIT_INEQUALITY if failures else EXIT_OK


def _h_grid(cfg: RunConfig) -> np.ndarray:
    hm, n = cfg.pressure["h_max"], cfg.pressure["h_points"]
    if n < 3 or not hm > 0:
        raise InputError("pressure needs h_points >= 3 and h_max > 0")
    return np.linspace(-hm, hm, n)


def _pressure_block(cfg: RunConfig, run: _Run, csv_name: str) -> dict:
    box, P = cfg.require_box()
    if box.boundary == "periodic":
        raise InputError("pressure curves are computed on zero-boundary boxes")
    curve = pressure_curve(cfg.spec, box, P, _h_grid(cfg))
    run.csv(csv_name, ["h", "p", "magnetization"], curve.rows())
    sd = curve.second_differences()
    return {
        "n_sites": len(box),
        "P": P,
        "h": curve.h,
        "p": curve.p,
        "magnetization": curve.magnetization,
        "min_second_difference": float(sd.min()),
        "convex": curve.is_convex(),
        "evenness_defect": curve.evenness_defect(),
    }


def cmd_pressure(args, cfg: RunConfig, run: _Run) -> int:
    block = _pressure_block(cfg, run, "pressure.csv")
    box, P = cfg.require_box()
    b = pressure_bounds(cfg.spec, box, P) if cfg.spec.couplings.is_ferromagnetic else None
    bounds = None if b is None else dict(asdict(b), upper=b.upper, holds=b.holds)
    run.json("pressure.json", dict({"status": "ok"}, **block, bounds=bounds))
    return EXIT_OK


def cmd_leeyang(args, cfg: RunConfig, run: _Run) -> int:
    cond = potential_laguerre_condition(cfg.spec.potential, cfg.spec.rigidity)
    box, P = cfg.require_box()
    if box.boundary == "periodic":
        raise InputError("zeros are located on zero-boundary boxes")
    zeros = [locate_partition_zeros(cfg.spec, box, P, order=k) for k in cfg.orders]
    report = {
        "status": "ok",
        "condition": cond.to_dict(),
        "zeros": [z.to_dict() for z in zeros],
        "orders_agree": len({z.classification for z in zeros}) == 1,
        "pressure": _pressure_block(cfg, run, "pressure.csv"),
        "scope": "finite volume: condition on the one-site potential and zeros of the box partition function",
    }
    run.json("leeyang.json", report)
    return EXIT_OK


COMMANDS = {
    "criteria": cmd_criteria,
    "spectrum": cmd_spectrum,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "leeyang": cmd_leeyang,
    "pressure": cmd_pressure,
}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qcrystal", description="Euclidean Gibbs measures of quantum anharmonic crystals.")
    p.add_argument("--version", action="version", version=f"qcrystal {__version__}")
    p.add_argument("--schema", nargs="?", const="all", metavar="NAME",
                   help=f"print the JSON schema of a report ({', '.join(SCHEMAS)}) or all of them, then exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?" if name == "verify" else None, help="model config file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config entry (repeatable)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $QCRYSTAL_THREADS or min(8, cpus))")
        sp.add_argument("--output", "-o", default="qcrystal-out", help="directory for reports")
        if name == "criteria":
            sp.add_argument("--table", metavar="SECTION.KEY=START:STOP:NUM",
                            help="also write a CSV sweep over one config entry")
        if name == "verify":
            sp.add_argument("--suite", choices=SUITES, default="canonical")
    return p


def _error_payload(exc: Exception, code: int) -> dict:
    return {"status": "error", "exit_code": code, "error_type": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.schema is not None:
        if args.schema != "all" and args.schema not in SCHEMAS:
            sys.stderr.write(f"unknown schema {args.schema!r}\n")
            return EXIT_INPUT
        out = {k: schema(k) for k in SCHEMAS} if args.schema == "all" else schema(args.schema)
        sys.stdout.write(dumps(out))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    if args.threads is not None and args.threads < 1:
        sys.stderr.write("--threads must be >= 1\n")
        return EXIT_INPUT
    if args.threads is None:
        args.threads = default_threads()

    run = _Run(args.output)
    cfg = None
    try:
        if args.config is not None:
            cfg = load_config(args.config, args.set, args.seed)
        elif args.set:
            raise InputError("--set needs a config file")
        code = COMMANDS[args.command](args, cfg, run)
    except InputError as exc:
        code = EXIT_INPUT
        run.json("error.json", _error_payload(exc, code))
    except (NumericError, np.linalg.LinAlgError) as exc:
        code = EXIT_NUMERIC
        run.json("error.json", _error_payload(exc, code))
    except QCrystalError as exc:  # pragma: no cover - every package error is one of the above
        code = EXIT_NUMERIC
        run.json("error.json", _error_payload(exc, code))
    if code in (EXIT_INPUT, EXIT_NUMERIC):
        with open(run.path("error.json"), encoding="utf-8") as fh:
            sys.stderr.write(fh.read())
    run.json("manifest.json", {
        "subcommand": args.command,
        "config_sha256": None if cfg is None else cfg.digest,
        "seed": args.seed,
        "version": __version__,
        "overrides": list(args.set),
        "files": dict(sorted(run.files.items())),
        "exit_code": code,
    })
    for name in sorted(run.files):
        print(os.path.join(args.output, name))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
