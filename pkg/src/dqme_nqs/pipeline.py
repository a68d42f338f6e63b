"""End-to-end runs assembled from a :class:`config.RunConfig`.

These functions are what the command line calls; they are importable so the
same runs can be scripted or tested without subprocesses.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .bath import decompose_all, decomposition_error
from .dense import equilibrate, rk4_propagate, steady_state_dense, vacuum
from .liouvillian import Epoch, Generator, ScaledGenerator, mode_weights
from .models import AndersonSpec, TwoImpuritySpec
from .observables import Observer
from .rbm import RbmDensityTensor, param_count
from .space import SpaceIndex, unfiltered_count
from .tdvp import propagate_parameters

log = logging.getLogger(__name__)


@dataclass
class Problem:
    """Model, bath and generator for one configuration."""

    config: object
    model: object
    reservoirs: tuple
    pre: object
    post: object
    space: SpaceIndex
    gen: Generator


def build_model(cfg):
    m = cfg.model
    t0 = cfg.integrator.t0
    if m.kind == "anderson":
        return AndersonSpec(m.eps0, m.U0, m.d_eps, m.d_U, t0, cfg.bath.bias)
    return TwoImpuritySpec(m.eps0, m.U0, m.J, t0)


def build_problem(cfg):
    model = build_model(cfg)
    b = cfg.bath
    reservoirs = model.reservoirs(b.temperature, b.coupling, b.bandwidth)
    pre = decompose_all(reservoirs, b.scheme, b.poles)
    post = pre.shifted(model.post_quench_shifts())
    space = SpaceIndex(model.n_orb, pre.n_states, cfg.truncation.max_tier, cfg.truncation.parity_filter)
    t0 = cfg.integrator.t0
    gen = Generator(space, Epoch(model.hamiltonian(t0 - 1.0), pre),
                    Epoch(model.hamiltonian(t0), post), t0)
    return Problem(cfg, model, reservoirs, pre, post, space, gen)


def initial_state(problem):
    """Equilibrium of the pre-quench generator reached from the factorized vacuum.

    With ``integrator.initial = "vacuum"`` the factorized vacuum itself.
    """
    if problem.config.integrator.initial == "vacuum":
        return vacuum(problem.space)
    return equilibrate(problem.gen, problem.config.integrator.equilibrate_tol, epoch="pre")


def run_dense(problem, rho_init=None):
    """Dense trajectory from ``t = 0`` to ``t_end``; returns ``(Trajectory, rho_init)``."""
    rho_init = initial_state(problem) if rho_init is None else rho_init
    ic = problem.config.integrator
    traj, _ = rk4_propagate(problem.gen, rho_init, ic.dt, ic.n_steps, [Observer(problem.pre)])
    return traj, rho_init


def make_estimator(problem, seed=None):
    rc = problem.config.rbm
    return RbmDensityTensor(
        n_sys=problem.space.n_sys, max_tier=problem.space.max_tier, n_hidden=rc.n_hidden,
        n_aux=rc.n_aux, parity_filter=problem.space.parity_filter, init_scale=rc.init_scale,
        init_bias=rc.init_bias, staged=rc.init_staged, tol=rc.init_tol, max_iter=rc.init_max_iter,
        n_init=rc.init_restarts, share_weights=rc.share_weights,
        random_state=rc.seed if seed is None else seed)


def run_rbm(problem, rho_init=None, seed=None, callback=None):
    """Fit the RBM to the initial state, then evolve it by TDVP.

    Returns
    -------
    VariationalTrajectory, RbmDensityTensor, dict
        Trajectory, evolved estimator and a small summary (fit error,
        parameter count, wall times).
    """
    rho_init = initial_state(problem) if rho_init is None else rho_init
    rc, ic = problem.config.rbm, problem.config.integrator
    gen = problem.gen
    target = rho_init.values
    if rc.balanced:
        gen = ScaledGenerator(problem.gen, mode_weights(problem.space, problem.pre))
        target = target / gen.weights
    est = make_estimator(problem, seed)
    t_start = time.perf_counter()
    est.fit(problem.space.bits(), target)
    t_fit = time.perf_counter() - t_start
    log.info("initial fit: relative error %.3e after %d trial steps", est.fit_error_, est.n_iter_)
    sampler_options = None
    if rc.estimator == "sampled":
        sampler_options = {"n_samples": rc.n_samples, "seed": rc.seed if seed is None else seed}
    # variational states are only approximately positive
    obs = Observer(problem.pre, positivity_tol=np.inf)
    traj = propagate_parameters(est, gen, ic.dt, ic.n_steps, 0.0, obs, rc.lam, rc.eps,
                                rc.estimator, sampler_options, rc.ds2_ceiling, callback=callback)
    summary = {"fit_error": float(est.fit_error_), "n_para": int(est.param_count()[0]),
               "fit_seconds": t_fit, "tdvp_seconds": time.perf_counter() - t_start - t_fit}
    return traj, est, summary


def steady_report(problem, epoch="post", method="auto"):
    """Stationary observables of the dense generator."""
    rho, resid = steady_state_dense(problem.gen, epoch, method=method)
    rec = Observer(problem.pre if epoch == "pre" else problem.post)(np.inf, rho)
    out = {"residual": resid, "trace": rec.trace, "n": list(rec.n), "SvN": rec.SvN, "Ehyb": rec.Ehyb}
    out.update({f"I_{k}": v for k, v in rec.extra.get("currents", {}).items()})
    if rec.S12 is not None:
        out["S12"] = rec.S12
    return out, rho


def bath_report(problem, t_max=10.0, n_grid=101):
    """Worst-case decomposition error per reservoir on ``[0, t_max]``."""
    grid = np.linspace(0.0, t_max, n_grid)
    rows = []
    for spec in problem.reservoirs:
        rep = decomposition_error(problem.pre, spec, grid)
        rows.append({"reservoir": spec.label, "scheme": problem.config.bath.scheme,
                     "poles": problem.config.bath.poles, "max_abs_plus": rep.max_abs["+"],
                     "max_abs_minus": rep.max_abs["-"], "worst": rep.worst()})
    return rows


def counts_report(n_sys, n_diss, max_tier, n_hidden, n_aux):
    """Variational parameter count against tensor sizes, filtered and unfiltered."""
    exact, estimate = param_count(n_sys, n_diss, n_hidden, n_aux)
    filtered = SpaceIndex(n_sys, n_diss, max_tier, True).count
    return {"n_sys": n_sys, "n_diss": n_diss, "max_tier": max_tier, "n_hidden": n_hidden,
            "n_aux": n_aux, "n_para": exact, "n_para_estimate": estimate,
            "n_rdt_unfiltered": unfiltered_count(n_sys, n_diss, max_tier),
            "n_rdt_filtered": filtered}
