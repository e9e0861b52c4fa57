"""Command-line interface: ``rbm-phase <subcommand> [options]``.

Every subcommand writes one CSV (or JSON) table. CSV output starts with a
``#`` comment line holding the version and the full parameter set, then a
header row. Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__
from . import curie_weiss as cw
from . import mean_field_limit as mfl
from . import particle_sim as ps
from . import stationary as st
from .errors import NearCriticalError, NumericalError, PreconditionError, SupercriticalError
from .numerics import RngStream

SUITES = ("appendix-a", "critical", "scaling", "clt", "batch-force")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise PreconditionError(f"{self.prog}: {message}")


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _require_seed(args):
    if args.seed is None:
        raise PreconditionError(f"{args.command}: this run is stochastic; pass --seed")
    return RngStream(args.seed)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _params(args):
    skip = {"func", "out", "format"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def emit(args, header, rows, meta=None):
    """Write the table to ``args.out`` (or stdout) in the chosen format."""
    params = _params(args)
    meta = meta or {}
    if args.format == "json":
        doc = {
            "version": __version__,
            "command": args.command,
            "params": params,
            "meta": meta,
            "columns": list(header),
            "rows": [list(r) for r in rows],
        }
        text = json.dumps(doc, indent=1, allow_nan=True) + "\n"
    else:
        buf = io.StringIO()
        fields = [f"rbm-phase {__version__}"]
        fields += [f"{k}={v}" for k, v in params.items()]
        fields += [f"{k}={v}" for k, v in meta.items()]
        buf.write("# " + " ".join(fields) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        text = buf.getvalue()
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_cw_probs(args):
    params = cw.CwParams(args.N, args.beta, args.p)
    right, left = cw.rates(params)
    grid = cw.magnetization_grid(args.N)
    header = ["m", "right_theoretical", "left_theoretical"]
    cols = [grid, right, left]
    if args.trials:
        emp = cw.empirical_rates(params, args.trials, _require_seed(args), protocol=args.protocol)
        header += ["right_empirical", "left_empirical"]
        cols += [emp.right, emp.left]
    rows = [[float(c[i]) for c in cols] for i in range(grid.size)]
    emit(args, header, rows)


def cmd_cw_invariant(args):
    params = cw.CwParams(args.N, args.beta, args.p)
    nu, iters = cw.invariant_distribution(params, args.eps, args.max_iter)
    print(f"power iteration converged in {iters} iterations", file=sys.stderr)
    grid = cw.magnetization_grid(args.N)
    emit(args, ["m", "probability"], [[float(m), float(v)] for m, v in zip(grid, nu)],
         meta={"iterations": iters, "modes": cw.count_modes(nu)})


def cmd_cw_critical(args):
    stream = None
    if args.mc_samples:
        stream = _require_seed(args)
    header = ["p", "beta_c", "asymptotic", "g_p_1", "g_p_asymptotic"]
    if stream is not None:
        header += ["g_p_1_mc", "g_p_1_se", "g_p_asymptotic_mc", "g_p_asymptotic_se"]
    rows = []
    for i, p in enumerate(args.p):
        asym = mfl.critical_beta_asymptotic(p)
        try:
            bc = mfl.critical_beta(p, args.tol)
        except PreconditionError:
            bc = float("nan")
        row = [p, bc, asym, mfl.g_p_exact(p, 1.0), mfl.g_p_exact(p, asym)]
        if stream is not None:
            sub = stream.spawn(i)
            row += [*mfl.g_p_monte_carlo(p, 1.0, args.mc_samples, sub.spawn(0)),
                    *mfl.g_p_monte_carlo(p, asym, args.mc_samples, sub.spawn(1))]
        rows.append(row)
    emit(args, header, rows)


def cmd_ips_run(args):
    stream = _require_seed(args)
    cfg = ps.SimConfig(args.N, args.delta, args.sigma, ps.PotentialPair.double_well(args.L_W),
                       p=args.p, dt_inner=args.dt_inner)
    init = ps.InitSpec.parse(args.init)
    traj = ps.run(args.scheme, cfg, args.steps, init, stream, record_every=args.record_every)
    emit(args, ["step", "time", "mean", "variance", "diffusion_coefficient"],
         [list(r) for r in traj.rows()])


def _sigma_values(args):
    if args.sigma:
        return list(args.sigma)
    lo, hi, n = args.sigma_grid
    return list(np.linspace(lo, hi, int(n)))


def cmd_stationary(args):
    if (args.delta is None) != (args.p is None):
        raise PreconditionError("--delta and --p must be given together")
    L_W = args.L_W
    header = ["sigma", "model", "branch", "kappa1", "kappa2", "residual"]
    rows = []
    meta = {"quadrature": "gauss-legendre-32x64", "sigma_c": st.critical_sigma(L_W)}
    if args.delta is None:
        for s in _sigma_values(args):
            sols = [st.solve_branch(s, L_W, "zero")]
            try:
                plus = st.solve_branch(s, L_W, "plus")
                sols += [plus, plus.negated()]
            except SupercriticalError:
                pass
            except NearCriticalError as exc:
                print(f"sigma={s!r}: {exc}", file=sys.stderr)
            for sol in sols:
                rows.append([s, "NL", sol.branch, sol.kappa1, sol.kappa2, max(sol.residuals())])
    else:
        header.append("sigma_nl")
        meta["sigma_c_eff"] = st.effective_critical_sigma(meta["sigma_c"], args.delta, args.p, L_W)
        meta["c0"] = st.smallness_threshold(L_W)
        st.ModelParams(L_W, 1.0, args.delta, args.p, c0=meta["c0"])
        for s in _sigma_values(args):
            try:
                sols = st.solve_effective(s, args.delta, args.p, L_W)
            except NearCriticalError as exc:
                print(f"sigma'={s!r}: {exc}", file=sys.stderr)
                continue
            for sol in sols:
                rows.append([s, "Eff", sol.branch, sol.kappa1, sol.kappa2,
                             max(sol.residuals(args.delta, args.p)), sol.sigma_nl])
    emit(args, header, rows, meta)


# ---------------------------------------------------------------------------
# Verification suites
# ---------------------------------------------------------------------------

def _check(name, value, target, tol, passed=None):
    if passed is None:
        passed = abs(value - target) <= tol
    return [name, float(value), float(target), float(tol), "PASS" if passed else "FAIL"]


def suite_appendix_a(args):
    out = [_check("A(0)", st.kurtosis_A(0.0), 3.0, 1e-10),
           _check("A'(0)", st.kurtosis_A_slope_at_zero(), -24.0, 24 * 0.05)]
    betas = np.geomspace(1e-3, 10.0, 50)
    worst = max(st.kurtosis_A(b) for b in betas)
    out.append(_check("max A(beta) on log grid (1e-3, 10]", worst, 3.0, 0.0, worst < 3.0))
    for L_W in (0.5, 1.0, 2.0):
        sigmas = np.linspace(0.05, 5.0, 30)
        worst = max(st.F1_and_derivative(s, L_W)[1] for s in sigmas)
        out.append(_check(f"max F1'(sigma), L_W={L_W}", worst, 0.0, 0.0, worst < 0.0))
        f1c = st.F1_and_derivative(st.critical_sigma(L_W), L_W)[0]
        out.append(_check(f"F1(sigma_c), L_W={L_W}", f1c, 1.0, 1e-7))
    return out


def suite_critical(args):
    out = []
    tol = args.tol
    out.append(_check("classical beta_c", mfl.critical_beta_classic(tol), 1.0, 1e-10))
    for p in (4, 16, 64, 256, 1024):
        bc = mfl.critical_beta(p, tol)
        out.append(_check(f"g_p(beta_c,p) residual, p={p}", mfl.dm_drift_rb_at_zero(p, bc), 0.0,
                          1e-8))
        out.append(_check(f"beta_c,{p} vs asymptotic", bc, mfl.critical_beta_asymptotic(p),
                          math.inf, bc > 1.0))
    for L_W in (0.5, 1.0, 2.0):
        sc = st.critical_sigma(L_W)
        out.append(_check(f"L_W f2(sigma_c,0)/sigma_c, L_W={L_W}",
                          L_W * st.f2(sc, 0.0, L_W) / sc, 1.0, 1e-8))
        out.append(_check(f"sigma_c two routes, L_W={L_W}", sc,
                          st.critical_sigma_raw_integral(L_W), 1e-8))
    return out


def suite_scaling(args):
    offsets = [1e-2, 3e-3, 1e-3, 3e-4]
    ratios, spread = st.sqrt_scaling_probe(1.0, offsets)
    out = [_check(f"kappa1/sqrt(offset) at {o:g}", r, ratios[-1], math.inf, True)
           for o, r in zip(offsets, ratios)]
    out.append(_check("last-3 relative spread", spread, 0.0, 0.05))
    return out


def suite_clt(args):
    stream = _require_seed(args)
    out = []
    for i, (p, n) in enumerate(((100, 10 ** 6), (10 ** 4, 10 ** 6))):
        for c in st.moment_clt_check(p, n, stream.spawn(i)):
            if p != 100 and c.name == "E|Z|^4":
                continue
            out.append(_check(f"{c.name}, p={p}", c.estimate, c.target,
                              3 * c.se if c.se > 0 else 1e-12, c.passed))
    return out


def suite_batch_force(args):
    stream = _require_seed(args)
    x = stream.spawn(0).gaussian(1000)
    pot = ps.PotentialPair.double_well(1.0)
    out = []
    for p in (2, 10, 50):
        s = ps.batch_force_statistics(x, pot, p, args.resamples, stream.spawn(p))
        n_mean = int(np.sum(np.abs(s.mean_z()) > 3))
        n_var = int(np.sum(np.abs(s.variance_z()) > 3))
        n_exact = int(np.sum(np.abs(s.variance_z(exact=True)) > 3))
        out.append(_check(f"p={p}: particles with |mean z|>3", n_mean, 0, 0))
        out.append(_check(f"p={p}: particles with |var z|>3 vs L_W^2 Var/(p-1)", n_var, 0, 0))
        out.append(_check(f"p={p}: particles with |var z|>3 vs exact finite-N variance",
                          n_exact, 0, 0))
    return out


_SUITE_FUNCS = {
    "appendix-a": suite_appendix_a,
    "critical": suite_critical,
    "scaling": suite_scaling,
    "clt": suite_clt,
    "batch-force": suite_batch_force,
}


def cmd_verify(args):
    if args.suite not in _SUITE_FUNCS:
        raise PreconditionError(
            f"unknown suite {args.suite!r}; available suites: {', '.join(SUITES)}")
    rows = _SUITE_FUNCS[args.suite](args)
    emit(args, ["check", "value", "target", "tolerance", "status"], rows)
    failed = [r[0] for r in rows if r[-1] != "PASS"]
    for name in failed:
        print(f"FAIL: {name}", file=sys.stderr)
    return 2 if failed else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_seed, default=None, help="unsigned 64-bit seed")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = _Parser(prog="rbm-phase", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rbm-phase {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cw-probs", parents=[common], help="Curie-Weiss transition probabilities")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--p", type=int, default=None, help="batch size (omit for classical)")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--trials", type=int, default=None, help="add empirical columns")
    p.add_argument("--protocol", choices=("independent", "trajectory"), default="independent")
    p.set_defaults(func=cmd_cw_probs)

    p = sub.add_parser("cw-invariant", parents=[common], help="invariant law by power iteration")
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--eps", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=10_000_000)
    p.set_defaults(func=cmd_cw_invariant)

    p = sub.add_parser("cw-critical", parents=[common], help="critical inverse temperatures")
    p.add_argument("--p", type=int, nargs="+", default=[4, 8, 16, 32, 64, 128, 256, 512, 1024])
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--mc-samples", type=int, default=None)
    p.set_defaults(func=cmd_cw_critical)

    p = sub.add_parser("ips-run", parents=[common], help="particle-system trajectory")
    p.add_argument("--scheme", choices=ps.SCHEMES, required=True)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--L-W", dest="L_W", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--init", default="gaussian:0,1",
                   help="point:LOC | gaussian:MEAN,SD | two_point:LOC")
    p.add_argument("--dt-inner", type=float, default=None)
    p.add_argument("--record-every", type=int, default=1)
    p.set_defaults(func=cmd_ips_run)

    p = sub.add_parser("stationary", parents=[common], help="stationary branch solutions")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--sigma", type=float, nargs="+")
    g.add_argument("--sigma-grid", type=float, nargs=3, metavar=("START", "STOP", "COUNT"))
    p.add_argument("--L-W", dest="L_W", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--p", type=int, default=None)
    p.set_defaults(func=cmd_stationary)

    p = sub.add_parser("verify", parents=[common], help="numerical verification suites")
    p.add_argument("suite", help=f"one of: {', '.join(SUITES)}")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--resamples", type=int, default=10_000)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        status = args.func(args)
        return int(status or 0)
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
