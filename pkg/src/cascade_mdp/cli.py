"""
Command-line front end.

Subcommands: solve, simulate, qp, sweep, benchmark, classify, zoo.  Every
table is written as CSV with a header row and 17 significant digits.

Exit codes: 0 success, 2 parse or usage error, 3 admissibility failure,
4 numerical failure.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import bellman, singular, zoo
from .cost import CostSpec, ShiftedQuadratic
from .errors import (
    BadKind,
    CascadeError,
    CustomPsiDimension,
    DimensionMismatch,
    GeneratorInvalid,
    InvalidStep,
    ModelParseError,
    NonAdmissibleModel,
    PreconditionNotMet,
)
from .model import ConstantPolicy, TabulatedPolicy, diagonalizable_sufficient, model_coupling, triangular_form
from .modelfile import ParsedModel, export_model, load_model
from .simulate import estimate_eta, portfolio_series, simulate

log = logging.getLogger("cascade_mdp")

EXIT_OK, EXIT_PARSE, EXIT_ADMISSIBLE, EXIT_NUMERIC = 0, 2, 3, 4
FLOAT_FMT = "%.17g"


# -- helpers -----------------------------------------------------------------------

def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _fmt(v):
    return FLOAT_FMT % v


def write_csv(path, header, rows):
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header))
    np.savetxt(path, rows, fmt=FLOAT_FMT, delimiter=",", header=",".join(header), comments="")


def load_source(spec):
    """A model file path, or the name of a zoo model."""
    if os.path.exists(spec):
        return load_model(spec)
    try:
        entry = zoo.get(spec)
    except (BadKind, ValueError):
        raise ModelParseError(f"no such model file or zoo name: {spec!r}") from None
    return ParsedModel(entry, zoo.default_cost(entry))


def resolve_cost(parsed, psi=None, alpha=None):
    cost = parsed.cost or zoo.default_cost(parsed.entry)
    model = parsed.model
    kind = cost.psi
    if psi == "zero":
        kind = "zero"
    elif psi == "quad":
        kind = "quadratic"
    elif psi == "custom":
        if model.p > 2:
            raise CustomPsiDimension(f"custom control cost supports p <= 2, got p = {model.p}")
        # Quadratic penalty on moving away from the lower corner of the box.
        kind = ShiftedQuadratic(1.0, tuple(model.bounds[:, 0]))
    return CostSpec(cost.L, cost.Phi, kind, cost.alpha if alpha is None else alpha)


def k_columns(r, n):
    return [f"k[{z}][{x}]" for z in range(r) for x in range(n)]


def read_policy(path, model):
    """Policy CSV written by ``solve``: columns t, z, x, u1..up."""
    if not os.path.exists(path) and os.path.exists(path + "_policy.csv"):
        path = path + "_policy.csv"
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    r, n, p = model.r, model.n, model.p
    if data.shape[1] != 3 + p or len(data) % (r * n):
        raise ModelParseError(f"policy table {path} does not match the model dimensions")
    m = len(data) // (r * n)
    grid = data[:: r * n, 0].copy()
    return TabulatedPolicy(grid, data[:, 3:].reshape(m, r, n, p))


def _state_table(values, r, n):
    return [(z, x, values(z, x)) for z in range(r) for x in range(n)]


# -- subcommands -------------------------------------------------------------------

def cmd_solve(args):
    parsed = load_source(args.model)
    model = parsed.model
    cost = resolve_cost(parsed, args.psi, args.alpha)
    out = args.out
    summary = [f"T,{_fmt(args.T)}", f"dt,{_fmt(args.dt)}"]
    if args.coupled_baseline:
        sol = bellman.solve_coupled_baseline(model, cost, args.T, args.dt)
        K = sol.as_matrices()
        etas = _state_table(sol.value, model.r, model.n)
        summary.insert(0, "method,coupled-baseline")
    elif args.diag_reduce:
        sol = bellman.solve_diagonalizable(model, cost, args.T, args.dt, args.diag_reduce, args.c)
        write_csv(f"{out}_k.csv", ["t"] + [f"k[{x}]" for x in range(model.n)],
                  np.column_stack([sol.grid, sol.k]))
        summary.insert(0, f"method,diagonalizable-{args.diag_reduce}")
        summary.append("x0,eta_star")
        summary += [f"{x},{_fmt(sol.value(x))}" for x in range(model.n)]
        return _finish_summary(out, summary)
    else:
        if args.partial_feedback:
            pz0 = np.full(model.r, 1.0 / model.r) if args.pz0 is None else np.asarray(args.pz0)
            sol = bellman.solve_partial_feedback(model, cost, args.T, pz0, args.dt)
            summary.insert(0, "method,partial-feedback")
            summary.append(f"eta_star_pz0,{_fmt(sol.value())}")
        else:
            sol = bellman.solve_bellman(model, cost, args.T, args.dt)
            summary.insert(0, "method,decoupled")
        K = sol.K
        etas = _state_table(sol.value, model.r, model.n)
        table = sol.control_table()
        m = len(sol.grid)
        zz, xx = np.meshgrid(np.arange(model.r), np.arange(model.n), indexing="ij")
        rows = np.column_stack([
            np.repeat(sol.grid, model.r * model.n),
            np.tile(zz.ravel(), m),
            np.tile(xx.ravel(), m),
            table.reshape(-1, model.p),
        ])
        write_csv(f"{out}_policy.csv", ["t", "z", "x"] + [f"u{j + 1}" for j in range(model.p)], rows)
    grid = sol.grid
    flat = np.transpose(K, (0, 2, 1)).reshape(len(grid), -1)
    write_csv(f"{out}_K.csv", ["t"] + k_columns(model.r, model.n), np.column_stack([grid, flat]))
    summary.append("z0,x0,eta_star")
    summary += [f"{z},{x},{_fmt(v)}" for z, x, v in etas]
    return _finish_summary(out, summary)


def _finish_summary(out, lines):
    text = "\n".join(lines) + "\n"
    with open(f"{out}_summary.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args):
    parsed = load_source(args.model)
    model = parsed.model
    if args.policy:
        policy = read_policy(args.policy, model)
    else:
        u = model.midpoint() if args.u is None else np.asarray(args.u, dtype=float)
        if u.shape != (model.p,):
            raise DimensionMismatch(f"--u needs {model.p} values, got {len(u)}")
        policy = ConstantPolicy(u)
    out = args.out
    if args.paths == 1:
        path = simulate(model, policy, args.z0, args.x0, args.T, args.seed)
        with open(f"{out}_path.csv", "w", encoding="utf-8") as fh:
            fh.write(path.to_text())
        if args.portfolio:
            if parsed.entry.V is None:
                raise PreconditionNotMet("model has no value matrix V")
            series = portfolio_series(path, parsed.entry.V)
            write_csv(f"{out}_portfolio.csv", ["t", "v", "s", "w"],
                      np.column_stack([series.times, series.v, series.s, series.w]))
        sys.stdout.write(f"events,{len(path.events)}\n")
    else:
        cost = resolve_cost(parsed, args.psi, args.alpha)
        est = estimate_eta(model, policy, cost, args.z0, args.x0, args.T, args.paths, args.seed,
                           workers=args.threads)
        text = (f"n_paths,{est.n_paths}\nmean,{_fmt(est.mean)}\nstderr,{_fmt(est.stderr)}\n"
                f"clamped,{policy.violations}\n")
        with open(f"{out}_eta.txt", "w", encoding="utf-8") as fh:
            fh.write(text)
        sys.stdout.write(text)
    if policy.violations:
        log.warning("policy values clamped to the control box %d times", policy.violations)
    return EXIT_OK


def cmd_qp(args):
    if len(args.c) != 3:
        raise DimensionMismatch(f"--c needs three weights, got {len(args.c)}")
    qp = singular.build_qp(args.c, tuple(args.bounds))
    sol = singular.solve_box_qp(qp)
    lines = [
        "c," + ",".join(_fmt(v) for v in qp.c),
        "u0," + ",".join(_fmt(v) for v in sol.u0),
        f"eta_star,{_fmt(sol.eta_star)}",
        f"classification,{sol.classification}",
        "active," + ",".join(str(int(v)) for v in sol.active),
        f"iterations,{sol.iterations}",
        f"converged,{int(sol.converged)}",
    ]
    if args.oracle_step > 0:
        u_or, eta_or = singular.qp_oracle_grid(qp, args.oracle_step)
        lines += ["oracle_u," + ",".join(_fmt(v) for v in u_or),
                  f"oracle_eta,{_fmt(eta_or)}",
                  f"oracle_gap,{_fmt(sol.eta_star - eta_or)}"]
    margin = singular.interior_margin(qp)
    lines.append(f"interior_margin,{'none' if margin is None else _fmt(margin)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args):
    rows = singular.sweep(args.resolution, args.oracle_step or None, args.claim)
    header = ["c1", "c2", "c3", "u1", "u2", "u3", "eta_star", "interior_zero", "oracle_eta", "interior_solution"]
    data = []
    for row in rows:
        data.append(list(row.c) + list(row.solution.u0) + [
            row.solution.eta_star,
            float(row.solution.classification is singular.QpClass.INTERIOR_ZERO),
            np.nan if row.oracle_eta is None else row.oracle_eta,
            np.nan if row.interior is None else float(row.interior),
        ])
    write_csv(args.out or sys.stdout, header, data)
    return EXIT_OK


def benchmark_case(r, n=4, p=2, seed=0):
    entry = zoo.random_cascade(r, n, p=p, seed=seed + r)
    rng = np.random.default_rng(seed)
    return entry.model, CostSpec(rng.uniform(size=(n, r)), rng.uniform(size=(n, r)))


def run_benchmark(r_list, n=4, p=2, T=1.0, dt=1e-3, repeats=25, seed=0, threads=1):
    """Median wall-clock times of the decoupled and coupled solvers.

    Each case gets one discarded warm-up run per solver; the timed runs
    alternate between the two solvers so slow drift affects both alike.
    At small r both solvers are dominated by per-call numpy overhead, so the
    ratio changes by only a few percent between neighbouring sizes; the
    default repeat count keeps timing noise below that.

    Returns
    -------
    list of (r, decoupled_seconds, coupled_seconds, ratio)
    """
    solvers = (bellman.solve_bellman, bellman.solve_coupled_baseline)
    cases = [benchmark_case(r, n, p, seed) for r in r_list]
    rows = []
    with threadpool_limits(threads):
        for r, (model, cost) in zip(r_list, cases):
            for solve in solvers:
                solve(model, cost, T, dt)
            times = np.empty((2, repeats))
            for rep in range(repeats):
                for k, solve in enumerate(solvers):
                    start = time.perf_counter()
                    solve(model, cost, T, dt)
                    times[k, rep] = time.perf_counter() - start
            dec, cou = np.median(times, axis=1)
            rows.append((r, float(dec), float(cou), float(cou / dec)))
    return rows


def cmd_benchmark(args):
    rows = run_benchmark(args.r_list, args.n, args.p, args.T, args.dt, args.repeats, args.seed, args.threads)
    write_csv(args.out or sys.stdout, ["r", "decoupled_s", "coupled_s", "ratio"], rows)
    return EXIT_OK


def cmd_classify(args):
    parsed = load_source(args.model)
    model = parsed.model
    tri = triangular_form(model)
    lines = [
        str(model_coupling(model)),
        f"diagonalizable_full_feedback,{diagonalizable_sufficient(model, True)}",
        f"diagonalizable_x_feedback,{diagonalizable_sufficient(model, False)}",
        f"triangular,{'column ' + str(tri.column) if tri.valid else 'no'}",
    ]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_zoo(args):
    if args.list or not args.name:
        sys.stdout.write("\n".join(sorted(zoo.ZOO) + ["binary-N"]) + "\n")
        return EXIT_OK
    entry = zoo.get(args.name)
    text = export_model(entry, zoo.default_cost(entry))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="cascade-mdp", description="Cascade Markov decision process toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def horizon(p, T=1.0):
        p.add_argument("--T", type=_positive, default=T, help="horizon (default %(default)s)")
        p.add_argument("--dt", type=_positive, default=1e-3, help="integration step (default %(default)s)")

    def costs(p):
        p.add_argument("--psi", choices=("zero", "quad", "custom"), help="override the control cost")
        p.add_argument("--alpha", type=float, help="override the discount rate")

    p = sub.add_parser("solve", help="solve the Bellman equation for a model")
    p.add_argument("model", help="model file or zoo name")
    horizon(p)
    costs(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--partial-feedback", action="store_true", help="controls see x only")
    mode.add_argument("--coupled-baseline", action="store_true", help="solve on the joint chain")
    mode.add_argument("--diag-reduce", choices=("C1", "Cweighted"), help="reduced single-chain solve")
    p.add_argument("--c", type=_floats, help="stationary driver distribution for Cweighted")
    p.add_argument("--pz0", type=_floats, help="initial driver distribution for partial feedback")
    p.add_argument("-o", "--out", default="out", help="output prefix (default %(default)s)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="simulate sample paths or estimate the expected cost")
    p.add_argument("model", help="model file or zoo name")
    horizon(p)
    costs(p)
    p.add_argument("--policy", help="policy CSV or the prefix given to solve")
    p.add_argument("--u", type=_floats, help="constant control (default: box midpoint)")
    p.add_argument("--z0", type=int, default=0)
    p.add_argument("--x0", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--portfolio", action="store_true", help="also write the v/s/w series")
    p.add_argument("--threads", type=int, default=1, help="worker processes for Monte Carlo")
    p.add_argument("-o", "--out", default="out", help="output prefix (default %(default)s)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("qp", help="steady-state diversification quadratic program")
    p.add_argument("--c", type=_floats, required=True, help="driver distribution c1,c2,c3")
    p.add_argument("--bounds", type=_floats, default=[-0.5, 0.5])
    p.add_argument("--oracle-step", type=float, default=0.01, help="grid oracle step, 0 to skip")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_qp)

    p = sub.add_parser("sweep", help="QP over a grid of the driver simplex")
    p.add_argument("--resolution", type=int, default=20)
    p.add_argument("--oracle-step", type=float, default=0.0)
    p.add_argument("--claim", action="store_true", help="also test for an interior exact solution")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("benchmark", help="decoupled vs coupled solve times")
    p.add_argument("--r-list", type=_ints, default=[4, 8, 16, 32])
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--p", type=int, default=2)
    horizon(p)
    p.add_argument("--repeats", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default %(default)s)")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("classify", help="coupling and diagonalizability report")
    p.add_argument("model", help="model file or zoo name")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("zoo", help="export a named model")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_zoo)
    return ap


def _validate(args):
    for name in ("paths", "threads", "repeats", "resolution"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise ValueError(f"--{name} must be at least 1, got {v}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        _validate(args)
        return args.func(args)
    except (NonAdmissibleModel, GeneratorInvalid) as exc:
        log.error("admissibility failure: %s", exc)
        return EXIT_ADMISSIBLE
    except (ModelParseError, DimensionMismatch, BadKind, PreconditionNotMet, CustomPsiDimension,
            InvalidStep, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except (CascadeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
