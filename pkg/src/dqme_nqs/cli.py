"""Command line entry point ``dqme``.

Exit codes
----------
0  success
2  usage error (bad flags or arguments)
3  configuration error (schema violation, unknown key, bad override)
4  file I/O error (unreadable input, unwritable output, malformed CSV)
5  solver error (divergence, degenerate steady state, sampler failure, ...)
6  check failed (``counts`` found N_para >= N_RDT)
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np

from .config import MODES, load_config
from .errors import ConfigError, DqmeError
from .io import CsvSchemaError, read_trajectory_csv, write_svg, write_trajectory_csv, provenance_lines

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4, 5, 6

COMPARE_COLUMNS = ("I_L", "I_R", "n_up", "n_dn", "S12", "SvN", "Ehyb")

log = logging.getLogger("dqme_nqs")


def _resolve(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.rbm.seed = args.seed
    if getattr(args, "output", None) is not None:
        cfg.output.dir = args.output
    if getattr(args, "mode", None) is not None:
        cfg.mode = args.mode
    return cfg.validate()


def _out(cfg, suffix):
    return Path(cfg.output.dir) / f"{cfg.output.prefix}_{suffix}"


def compare_columns(test, ref, columns=COMPARE_COLUMNS):
    """Integral errors of every observable present in both column maps."""
    from .observables import integral_error

    out = {}
    for c in columns:
        a, b = test[c], ref[c]
        if np.all(np.isnan(a)) or np.all(np.isnan(b)):
            continue
        try:
            out[c] = integral_error(test["t"], a, ref["t"], b)
        except ZeroDivisionError:
            out[c] = 0.0 if np.allclose(a, b) else np.inf
    return out


def _print_table(errors):
    print(f"{'observable':<10} {'integral_error':>16}")
    for k, v in errors.items():
        print(f"{k:<10} {v:>16.6e}")


def _svg(cfg, traj_map, name):
    if not cfg.output.svg:
        return
    cols = ("I_R", "n_up") if cfg.model.kind == "anderson" else ("S12", "SvN")
    for c in cols:
        series = {label: (tr.t, tr.column(c)) for label, tr in traj_map.items()}
        write_svg(_out(cfg, f"{name}_{c}.svg"), series, title=f"{cfg.output.prefix}: {c}")


def cmd_bath_check(args):
    from .pipeline import bath_report, build_problem

    cfg = _resolve(args)
    rows = bath_report(build_problem(cfg), args.t_max)
    print(f"{'reservoir':<10} {'scheme':<9} {'poles':>5} {'max|dC+|':>12} {'max|dC-|':>12}")
    for r in rows:
        print(f"{r['reservoir']:<10} {r['scheme']:<9} {r['poles']:>5} "
              f"{r['max_abs_plus']:>12.4e} {r['max_abs_minus']:>12.4e}")
    return EXIT_OK


def _dense(cfg, problem, rho0):
    from .pipeline import run_dense

    traj, _ = run_dense(problem, rho0)
    path = write_trajectory_csv(_out(cfg, "dense.csv"), traj.records, cfg.to_toml(),
                                {"solver": "dense", "configs": problem.space.count})
    print(f"dense trajectory: {path}")
    return traj


def cmd_bench_dense(args):
    from .pipeline import build_problem, initial_state

    cfg = _resolve(args)
    problem = build_problem(cfg)
    traj = _dense(cfg, problem, initial_state(problem))
    _svg(cfg, {"dense": traj}, "dense")
    return EXIT_OK


def cmd_run_rbm(args):
    from .pipeline import build_problem, initial_state, run_rbm
    from .rbm import save_checkpoint

    cfg = _resolve(args)
    problem = build_problem(cfg)
    rho0 = initial_state(problem)
    trajs = {}
    if cfg.mode in ("dense", "both"):
        trajs["dense"] = _dense(cfg, problem, rho0)
    if cfg.mode in ("rbm", "both"):
        traj, est, summary = run_rbm(problem, rho0)
        notes = {"solver": "rbm", "n_para": summary["n_para"], "n_rdt": problem.space.count,
                 "fit_error": "%.6e" % summary["fit_error"]}
        path = write_trajectory_csv(_out(cfg, "rbm.csv"), traj.records, cfg.to_toml(), notes)
        diag = _out(cfg, "rbm_diagnostics.csv")
        with open(diag, "w") as fh:
            fh.write("\n".join(provenance_lines(cfg.to_toml())) + "\n")
            fh.write("t,ds2,trace,lam,path\n")
            for t, ds2, tr, lam, how in traj.diagnostics:
                fh.write(f"{t:.17g},{ds2:.17g},{tr:.17g},{lam:.17g},{how}\n")
        ckpt = save_checkpoint(_out(cfg, "rbm_checkpoint.npz"), est.params_, t=traj.times[-1],
                               seed=cfg.rbm.seed)
        print(f"rbm trajectory: {path}\ndiagnostics: {diag}\ncheckpoint: {ckpt}")
        print(f"N_para = {summary['n_para']}, N_RDT = {problem.space.count}; "
              f"fit error {summary['fit_error']:.3e}; fit {summary['fit_seconds']:.1f} s, "
              f"tdvp {summary['tdvp_seconds']:.1f} s")
        trajs["rbm"] = traj
    if "dense" in trajs and "rbm" in trajs:
        def cols(tr):
            return {"t": tr.t, **{c: tr.column(c) for c in COMPARE_COLUMNS}}
        errors = compare_columns(cols(trajs["rbm"]), cols(trajs["dense"]))
        _print_table(errors)
    _svg(cfg, trajs, "run")
    return EXIT_OK


def cmd_steady(args):
    from .pipeline import build_problem, steady_report

    cfg = _resolve(args)
    report, _ = steady_report(build_problem(cfg), args.epoch, args.method)
    lines = [f"{k} = {v!r}" for k, v in report.items()]
    print("\n".join(lines))
    path = _out(cfg, "steady.txt")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(provenance_lines(cfg.to_toml()) + lines) + "\n")
    return EXIT_OK


def cmd_compare(args):
    test, _ = read_trajectory_csv(args.test)
    ref, _ = read_trajectory_csv(args.reference)
    _print_table(compare_columns(test, ref))
    return EXIT_OK


def cmd_counts(args):
    from .pipeline import counts_report

    if args.config is not None or None in (args.n_sys, args.n_diss):
        from .pipeline import build_problem

        cfg = _resolve(args)
        sp = build_problem(cfg).space
        ns, ne, L, nh, na = sp.n_sys, sp.n_diss, sp.max_tier, cfg.rbm.n_hidden, cfg.rbm.n_aux
    else:
        ns, ne, L, nh, na = args.n_sys, args.n_diss, args.max_tier, args.n_hidden, args.n_aux
    r = counts_report(ns, ne, L, nh, na)
    print(f"N_s={ns} N_E={ne} L={L} N_h={nh} N_a={na}")
    print(f"N_RDT(unfiltered) = {r['n_rdt_unfiltered']}")
    print(f"N_RDT(filtered)   = {r['n_rdt_filtered']}")
    print(f"N_para(exact)     = {r['n_para']}")
    print(f"N_para(estimate)  = {r['n_para_estimate']}")
    ok = r["n_para"] < r["n_rdt_unfiltered"]
    print("N_para < N_RDT(unfiltered):", "yes" if ok else "no")
    print("N_para < N_RDT(filtered):  ", "yes" if r["n_para"] < r["n_rdt_filtered"] else "no")
    return EXIT_OK if ok else EXIT_CHECK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run configuration")
    common.add_argument("--output", metavar="DIR", help="artifact directory (overrides output.dir)")
    common.add_argument("--seed", type=int, metavar="N", help="RBM seed (overrides rbm.seed)")
    common.add_argument("--threads", type=int, metavar="N", help="BLAS/OpenMP worker threads")
    common.add_argument("--mode", choices=MODES, help="solvers to run (overrides mode)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(
        prog="dqme", description="Fermionic open-system dynamics: dense tensor oracle and RBM/TDVP.",
        epilog=__doc__.split("Exit codes", 1)[1].replace("----------\n", "exit codes:\n"),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("bath-check", parents=[common], help="decomposition error report")
    s.add_argument("--t-max", type=float, default=10.0)
    s.set_defaults(func=cmd_bath_check)
    s = sub.add_parser("bench-dense", parents=[common], help="dense trajectory CSV")
    s.set_defaults(func=cmd_bench_dense)
    s = sub.add_parser("run-rbm", parents=[common],
                       help="RBM trajectory, diagnostics and checkpoint (plus dense and comparison in mode both)")
    s.set_defaults(func=cmd_run_rbm)
    s = sub.add_parser("steady", parents=[common], help="dense steady-state report")
    s.add_argument("--epoch", choices=("pre", "post"), default="post")
    s.add_argument("--method", choices=("auto", "direct", "iterative"), default="auto")
    s.set_defaults(func=cmd_steady)
    s = sub.add_parser("compare", parents=[common], help="integral errors of TEST against REFERENCE")
    s.add_argument("test")
    s.add_argument("reference")
    s.set_defaults(func=cmd_compare)
    s = sub.add_parser("counts", parents=[common], help="N_para against N_RDT")
    s.add_argument("--n-sys", type=int)
    s.add_argument("--n-diss", type=int)
    s.add_argument("--max-tier", type=int, default=2)
    s.add_argument("--n-hidden", type=int, default=8)
    s.add_argument("--n-aux", type=int, default=8)
    s.set_defaults(func=cmd_counts)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    limits = contextlib.nullcontext()
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be >= 1")
        from threadpoolctl import threadpool_limits

        limits = threadpool_limits(args.threads)
    try:
        with limits:
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CsvSchemaError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DqmeError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
