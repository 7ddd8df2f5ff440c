"""Command-line front end.

Every command that writes files puts them, together with one
``manifest.json``, into the ``--out`` directory.  Exit codes: 0 success,
1 invalid input, 2 assumption violation, 3 numeric or identity failure,
4 resource cap.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, moments, oracle, output, renewal, tail, treesim
from .law import ConfigError, closed_mu, closed_rho, load_law

EXIT_OK, EXIT_INPUT, EXIT_ASSUMPTION, EXIT_IDENTITY, EXIT_RESOURCE = 0, 1, 2, 3, 4


class IdentityFailure(RuntimeError):
    pass


class Run:
    """Collects output files of one command and writes the manifest."""

    def __init__(self, args, law=None):
        self.args = args
        self.law = law
        self.out = Path(args.out)
        self.files = []
        self.started = time.time()

    def path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.files.append(name)
        return p

    def finish(self):
        params = {k: v for k, v in vars(self.args).items() if k not in ("func", "out", "argv")}
        manifest = {
            "command": self.args.command,
            "argv": getattr(self.args, "argv", None),
            "fingerprint": self.law.fingerprint() if self.law is not None else None,
            "seed": self.args.seed,
            "parameters": params,
            "version": __version__,
            "wall_clock": round(time.time() - self.started, 3),
            "outputs": sorted(self.files),
        }
        self.out.mkdir(parents=True, exist_ok=True)
        output.write_json(self.out / "manifest.json", manifest)


def _say(obj):
    print(json.dumps(output._plain(obj), indent=2, sort_keys=True))


def _alpha_for(law, args):
    if getattr(args, "alpha", None) is not None:
        return args.alpha
    return moments.solve_alpha(law, mode="exact", seed=args.seed).alpha


def _mu_for(law, alpha, seed):
    mu = closed_mu(law, alpha)
    return mu if mu is not None else moments.mu_estimate(law, alpha, seed=seed, exact=False).estimate


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def validation_warnings(law):
    """Tail-analysis preconditions that cannot be confirmed up front."""
    warnings = []
    if closed_rho(law, 1.0) is None:
        warnings.append("no closed form for rho_beta: alpha must be found in mc mode")
        return warnings
    try:
        res = moments.solve_alpha(law)
    except moments.NonPositiveMuError as exc:
        warnings.append(f"no valid tail index: {exc}")
        return warnings
    except moments.NoRootError as exc:
        warnings.append(f"no tail index in the default bracket: {exc}")
        return warnings
    rho1 = closed_rho(law, 1.0)
    if res.alpha > 1 and rho1 >= 1:
        warnings.append(f"alpha = {res.alpha:.6g} > 1 needs E[sum |C_i|] < 1, but it is {rho1:.6g}")
    if not any(closed_rho(law, b) < 1 for b in treesim.BETA_GRID):
        warnings.append("no beta in (0, 1] with rho_beta < 1: the truncation error cannot be bounded")
    return warnings


def cmd_validate(args):
    law = load_law(args.config)
    warnings = validation_warnings(law)
    _say({"law": law.to_dict(), "fingerprint": law.fingerprint(), "warnings": warnings})
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_alpha(args):
    law = load_law(args.config)
    res = moments.solve_alpha(law, bracket=tuple(args.bracket), tol=args.tol, mode=args.mode,
                              count=args.count, seed=args.seed)
    run = Run(args, law)
    output.write_alpha(run.path("alpha.json"), res)
    run.finish()
    _say(res.to_dict())
    return EXIT_OK


def cmd_simulate(args):
    law = load_law(args.config)
    if args.depth == "auto":
        if args.beta is None:
            depth = treesim.pick_depth(law, args.epsilon, args.delta)
        else:
            depth = treesim.pick_depth(law, args.epsilon, args.delta, beta=args.beta)
    else:
        depth = int(args.depth)
    batch = treesim.batch_R(law, depth, args.count, seed=args.seed, stream_count=args.streams,
                            method=args.method)
    run = Run(args, law)
    output.write_samples(run.path("samples.csv"), batch.values)
    run.finish()
    _say({"depth": depth, "count": args.count, "method": batch.method})
    return EXIT_OK


def cmd_trace(args):
    law = load_law(args.config)
    from . import rng as rngmod
    trace = treesim.generation_trace(law, args.depth, rngmod.stream(args.seed))
    run = Run(args, law)
    output.write_trace(run.path("trace.csv"), trace)
    run.finish()
    return EXIT_OK


def _load_samples(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"samples file not found: {path}")
    return output.read_samples(path)


def cmd_tail(args):
    law = load_law(args.config)
    values = _load_samples(args.samples)
    alpha = _alpha_for(law, args)
    mu = _mu_for(law, alpha, args.seed)
    hc = tail.estimate_H_moment(law, values, alpha, mu, count=args.h_count, seed=args.seed)
    if hc.case == "a":
        hp, hm = hc.h_plus.estimate, hc.h_minus.estimate
    else:
        hp = hm = hc.h.estimate
    k_grid = args.k if args.k else None
    curve = tail.hill(values, k_grid)
    rows = tail.tail_table(values, alpha, hp, hm)
    run = Run(args, law)
    output.write_tail(run.path("tail.csv"), rows)
    output.write_hill(run.path("hill.csv"), curve)
    report = {"alpha_used": alpha, "mu": mu, "constants": hc.to_dict(), "hill_errors": curve.errors}
    output.write_json(run.path("tail_report.json"), report)
    if args.svg:
        output.write_ccdf_svg(run.path("tail.svg"), rows, alpha)
    run.finish()
    _say({k: report[k] for k in ("alpha_used", "mu", "constants")})
    return EXIT_OK


def cmd_hconst(args):
    law = load_law(args.config)
    values = _load_samples(args.samples)
    alpha = _alpha_for(law, args)
    mu = _mu_for(law, alpha, args.seed)
    result = {"alpha": alpha, "mu": mu}
    if args.method in ("moment", "both"):
        result["moment"] = tail.estimate_H_moment(law, values, alpha, mu, count=args.count,
                                                  seed=args.seed).to_dict()
    if args.method in ("integral", "both"):
        est = tail.estimate_H_integral(law, values, alpha, mu, count=args.count, seed=args.seed)
        d = est.to_dict()
        for v in d["diagnostics"].values():
            if isinstance(v, dict):
                v.pop("integrand", None)
        result["integral"] = d
    if args.t:
        result["lattice"] = [renewal.lattice_H(law, values, alpha, mu, t, seed=args.seed).to_dict()
                             for t in args.t]
    run = Run(args, law)
    output.write_json(run.path("hconst.json"), result)
    run.finish()
    _say(result)
    return EXIT_OK


def cmd_renewal(args):
    law = load_law(args.config)
    if args.mode in ("enumerate", "both") and not law.is_finite_discrete:
        raise oracle.NotFiniteDiscrete("not finite-discrete")
    alpha = _alpha_for(law, args)
    run = Run(args, law)
    summary = {"alpha": alpha, "n": args.n}
    conv = enum = None
    if args.mode in ("convolve", "both"):
        eta = renewal.eta_grids(law, alpha, {"seed": args.seed})
        output.write_measure(run.path("eta.csv"), *eta)
        conv = renewal.mu_n_via_convolution(eta, args.n)
        output.write_measure(run.path(f"mu_{args.n}_convolve.csv"), *conv)
        summary["mass_matrix"] = renewal.mass_matrix_checks(renewal.MatrixMeasure.from_eta(*eta))
        summary["eta_total"] = eta[0].total() + eta[1].total()
        summary["eta_mean"] = eta[0].mean() + eta[1].mean()
    if args.mode in ("enumerate", "both"):
        enum = renewal.mu_n_via_enumeration(law, alpha, args.n)
        output.write_measure(run.path(f"mu_{args.n}_enumerate.csv"), *enum)
    if conv is not None and enum is not None:
        diff = max(renewal.compare_measures(conv[0], enum[0]), renewal.compare_measures(conv[1], enum[1]))
        summary["max_diff"] = diff
    output.write_json(run.path("renewal.json"), summary)
    run.finish()
    _say(summary)
    if summary.get("max_diff", 0.0) > args.tol:
        raise IdentityFailure(f"convolution identity fails: max atom difference {summary['max_diff']:.3g}")
    return EXIT_OK


def cmd_oracle(args):
    law = load_law(args.config)
    pmf = oracle.enumerate_Rn(law, args.depth)
    run = Run(args, law)
    output.write_pmf(run.path("pmf.csv"), pmf)
    checks = {}
    alpha = args.alpha
    if alpha is None and any(c in args.checks for c in ("max_approx", "indicator")):
        try:
            alpha = moments.solve_alpha(law).alpha
        except moments.AssumptionError:
            alpha = 1.0
    if "max_approx" in args.checks:
        checks["max_approx"] = {v: oracle.max_approx_identity_check(law, alpha, v, pmf).to_dict()
                                for v in ("CR", "-CR", "|CR|")}
    if "indicator" in args.checks:
        w = oracle.enumerate_Wn(law, 0)
        joint = oracle.JointPmf.independent(pmf, w)
        checks["indicator"] = oracle.indicator_integral_bound_check(joint, alpha).to_dict()
    if "alpha_moment" in args.checks:
        checks["alpha_moment"] = oracle.alpha_moment_bound_check(law, pmf, args.beta).to_dict()
    output.write_json(run.path("checks.json"), checks)
    run.finish()
    _say({"atoms": len(pmf), "total": pmf.total(), "checks": checks})
    failed = [k for k, v in checks.items()
              if not (all(x["holds"] for x in v.values()) if k == "max_approx" else v["holds"])]
    if failed:
        raise IdentityFailure(f"lemma checks failed: {', '.join(failed)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="law JSON file")
    common.add_argument("--seed", type=_u64, default=0)
    common.add_argument("--streams", type=_positive_int, default=1)
    common.add_argument("--out", default="branchtail_out", help="output directory")

    p = argparse.ArgumentParser(prog="branchtail", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="parse a law and report warnings")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("alpha", parents=[common], help="solve rho_alpha = 1")
    s.add_argument("--bracket", type=float, nargs=2, default=list(moments.DEFAULT_BRACKET))
    s.add_argument("--tol", type=float)
    s.add_argument("--mode", choices=["exact", "mc"], default="exact")
    s.add_argument("--count", type=_positive_int, default=moments.DEFAULT_COUNT)
    s.set_defaults(func=cmd_alpha)

    s = sub.add_parser("simulate", parents=[common], help="sample R^(n)")
    s.add_argument("--depth", default="auto", help="integer or 'auto'")
    s.add_argument("--count", type=_positive_int, default=10**5)
    s.add_argument("--beta", type=float)
    s.add_argument("--epsilon", type=float, default=1e-3)
    s.add_argument("--delta", type=float, default=1e-3)
    s.add_argument("--method", choices=["auto", "exact", "pool"], default="auto")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("trace", parents=[common], help="generation statistics of one tree")
    s.add_argument("--depth", type=int, required=True)
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("tail", parents=[common], help="Hill curves and tail table")
    s.add_argument("--samples", required=True)
    s.add_argument("--alpha", type=float)
    s.add_argument("--k", type=_positive_int, nargs="*")
    s.add_argument("--h-count", type=_positive_int, default=10**6)
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=cmd_tail)

    s = sub.add_parser("hconst", parents=[common], help="tail constants")
    s.add_argument("--samples", required=True)
    s.add_argument("--alpha", type=float)
    s.add_argument("--method", choices=["moment", "integral", "both"], default="both")
    s.add_argument("--count", type=_positive_int, default=10**6)
    s.add_argument("--t", type=float, nargs="*", help="lattice laws: evaluate H+-(t) here")
    s.set_defaults(func=cmd_hconst)

    s = sub.add_parser("renewal", parents=[common], help="tilted measures and their convolution powers")
    s.add_argument("--alpha", type=float)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--mode", choices=["convolve", "enumerate", "both"], default="both")
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=cmd_renewal)

    s = sub.add_parser("oracle", parents=[common], help="exact pmf of R^(n) and lemma checks")
    s.add_argument("--depth", type=int, required=True)
    s.add_argument("--checks", nargs="*", default=[], choices=["max_approx", "indicator", "alpha_moment"])
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float, default=2.0)
    s.set_defaults(func=cmd_oracle)
    return p


def exit_code(exc):
    """Map an exception to the exit-code contract."""
    if isinstance(exc, (treesim.TreeTooLarge, oracle.EnumerationTooLarge, renewal.SupportOverflow, MemoryError)):
        return EXIT_RESOURCE
    if isinstance(exc, (IdentityFailure, tail.IntegralNotConverged)):
        return EXIT_IDENTITY
    if isinstance(exc, (moments.AssumptionError, treesim.ContractivityError, renewal.NotNormalized)):
        return EXIT_ASSUMPTION
    if isinstance(exc, (ConfigError, ValueError, OSError, json.JSONDecodeError)):
        return EXIT_INPUT
    raise exc


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    # kept in the manifest so that a run can be replayed verbatim
    args.argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args)
    except Exception as exc:  # mapped to the exit-code contract
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
