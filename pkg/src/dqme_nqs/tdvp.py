"""Variational time evolution and stationary states of a parameterized tensor.

With ``J`` the Jacobian of the tensor with respect to the real parameters and
``Z = sum |rho|^2``, the residual ``|J a - L rho|^2 / Z`` is minimized by

    S a = F,    S = Re(J^H J) / Z,    F = Re(J^H L rho) / Z.

Dividing by ``Z`` makes exact sums and Monte Carlo averages (which estimate
these ratios directly) interchangeable. The reported ``ds2`` is the same
ratio, so it is dimensionless and invariant under rescaling of ``rho``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.linalg.blas import dsyrk

from .errors import DivergenceError, ExpressivenessWarning, GaugeError
from .observables import RdtVector

log = logging.getLogger(__name__)


@dataclass
class NormalEquations:
    """Least-squares data of one variational step.

    Attributes
    ----------
    S : (n, n) float
    F : (n,) float
    lrho2 : float
        ``|L rho|^2 / Z``.
    mode : str
    S_err, F_err : arrays or None
        Standard errors (sampled mode only).
    """

    S: np.ndarray
    F: np.ndarray
    lrho2: float
    mode: str = "exact"
    S_err: np.ndarray | None = None
    F_err: np.ndarray | None = None
    lrho2_err: float | None = None
    extra: dict = field(default_factory=dict)

    def eigenvalue_report(self):
        """Smallest and largest eigenvalues of ``S``."""
        w = np.linalg.eigvalsh(self.S)
        return float(w[0]), float(w[-1])


def _gram(J):
    """``Re(J^H J)`` using one symmetric rank-k update on stacked real parts."""
    A = np.concatenate([J.real, J.imag], axis=0)
    A = np.asfortranarray(A)
    C = dsyrk(1.0, A, trans=1, lower=0)
    return np.triu(C) + np.triu(C, 1).T


def _space_bits(space):
    cached = getattr(space, "_bits_cache", None)
    if cached is None:
        cached = space.bits()
        cached.setflags(write=False)
        space._bits_cache = cached
    return cached


def assemble(ansatz, gen, epoch="pre", mode="exact", sampler_options=None):
    """Normal equations of the residual at the current parameters.

    Parameters
    ----------
    ansatz : object
        Provides ``values_and_jacobian(bits)``.
    gen : Generator
    epoch : {"pre", "post"}
    mode : {"exact", "sampled"}
    sampler_options : dict, optional
        Keyword arguments of :func:`sampler.metropolis_sample` (sampled mode).
    """
    if mode == "sampled":
        from .sampler import estimate_moments, metropolis_sample
        opts = dict(sampler_options or {})
        samples = metropolis_sample(ansatz, gen.space, **opts)
        return estimate_moments(samples, ansatz, gen, epoch=epoch)
    if mode != "exact":
        raise ValueError(f"unknown assembly mode {mode!r}")
    bits = _space_bits(gen.space)
    values, J = ansatz.values_and_jacobian(bits)
    lrho = gen.sparse(epoch) @ values
    Z = float(np.vdot(values, values).real)
    if Z == 0:
        raise GaugeError("ansatz vanishes on the whole space")
    S = _gram(J) / Z
    F = (J.real.T @ lrho.real + J.imag.T @ lrho.imag) / Z
    ne = NormalEquations(S, F, float(np.vdot(lrho, lrho).real) / Z, "exact")
    ne.extra.update(values=values, Z=Z)
    return ne


def solve_regularized(ne, lam=1e-4, eps=1e-10):
    """Solve ``(S + lam diag(S) + eps I) a = F``.

    Returns
    -------
    adot : ndarray
    ds2 : float
        ``lrho2 - 2 a.F + a.S.a``, clamped at zero beyond ``-1e-12``.
    path : {"cholesky", "eigh"}
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    S, F = ne.S, ne.F
    A = S + lam * np.diag(np.diag(S)) + eps * np.eye(len(F))
    try:
        c = linalg.cho_factor(A, lower=False, check_finite=True)
        adot = linalg.cho_solve(c, F)
        path = "cholesky"
    except (linalg.LinAlgError, ValueError):
        w, v = np.linalg.eigh(A)
        cut = max(w.max(), 0.0) * 1e-12
        inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
        adot = v @ (inv * (v.T @ F))
        path = "eigh"
    ds2 = float(ne.lrho2 - 2 * adot @ F + adot @ S @ adot)
    if ds2 < -1e-12 * max(1.0, ne.lrho2):
        log.debug("negative residual %.3e from round-off", ds2)
    return adot, max(ds2, 0.0), path


@dataclass
class VariationalTrajectory:
    times: list = field(default_factory=list)
    records: list = field(default_factory=list)
    params: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def column(self, name):
        if name in ("n_up", "n_dn"):
            k = 0 if name == "n_up" else 1
            return np.array([r.n[k] for r in self.records], dtype=float)
        vals = [getattr(r, name) for r in self.records]
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

    @property
    def t(self):
        return np.asarray(self.times)


def ansatz_state(ansatz, space, t=0.0, max_tier=None, weights=None):
    """Tensor components of ``ansatz`` over ``space``.

    With ``max_tier`` only configurations up to that tier are evaluated (the
    rest are zero), which suffices for all observables when ``max_tier = 1``.
    ``weights`` multiplies the values (the ansatz then represents a scaled
    tensor, see :class:`liouvillian.ScaledGenerator`).
    """
    bits = _space_bits(space)
    x = np.zeros(space.count, dtype=complex)
    if max_tier is None:
        x[:] = ansatz.values(bits)
    else:
        sel = np.nonzero(space.tiers() <= max_tier)[0]
        x[sel] = ansatz.values(bits[sel])
    if weights is not None:
        x *= weights
    return RdtVector(x, space, t)


def propagate_parameters(ansatz, gen, dt, n_steps, t_start=0.0, observer=None, lam=1e-4,
                         eps=1e-10, mode="exact", sampler_options=None, ds2_ceiling=np.inf,
                         keep_params=False, callback=None):
    """RK4 integration of the variational equations of motion.

    The ansatz is updated in place. A step straddling ``gen.t0`` is split so
    each sub-step uses a single epoch.

    Parameters
    ----------
    ansatz : object
        Provides ``get_real``, ``set_real``, ``values`` and ``values_and_jacobian``.
    gen : Generator
    dt : float
    n_steps : int
    t_start : float
    observer : callable, optional
        ``observer(t, RdtVector) -> ObservableRecord``; the record's ``ds2``
        is filled with the residual of the step starting at ``t``.
    lam, eps : float
        Regularization of :func:`solve_regularized`.
    mode : {"exact", "sampled"}
    sampler_options : dict, optional
        Passed to the sampler; its ``seed`` is advanced per evaluation.
    ds2_ceiling : float
        Residuals above it emit an :class:`ExpressivenessWarning`.
    keep_params : bool
        Store the parameter vector at every step.
    callback : callable, optional
        ``callback(step, t, ansatz)`` after every step.

    Returns
    -------
    VariationalTrajectory
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    traj = VariationalTrajectory()
    counter = {"n": 0}

    def rhs(alpha, epoch):
        ansatz.set_real(alpha)
        opts = None
        if mode == "sampled":
            opts = dict(sampler_options or {})
            opts["seed"] = int(opts.get("seed", 0)) + counter["n"]
        counter["n"] += 1
        ne = assemble(ansatz, gen, epoch, mode, opts)
        adot, ds2, path = solve_regularized(ne, lam, eps)
        return adot, ds2, path

    def rk4(alpha, h, epoch, first=None):
        k1 = first if first is not None else rhs(alpha, epoch)[0]
        k2 = rhs(alpha + 0.5 * h * k1, epoch)[0]
        k3 = rhs(alpha + 0.5 * h * k2, epoch)[0]
        k4 = rhs(alpha + h * k3, epoch)[0]
        return alpha + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    alpha = np.array(ansatz.get_real(), dtype=float)
    t = float(t_start)
    for step in range(n_steps + 1):
        epoch = gen.epoch_at(t)
        k1, ds2, path = rhs(alpha, epoch)
        ansatz.set_real(alpha)
        full = mode == "exact"
        state = ansatz_state(ansatz, gen.space, t, max_tier=None if full else 1,
                             weights=getattr(gen, "weights", None))
        rec = observer(t, state) if observer is not None else None
        if rec is not None:
            rec.ds2 = ds2
        tr = float(np.real(np.sum(state.values[gen.space.diagonal_ranks()])))
        traj.times.append(t)
        traj.records.append(rec)
        traj.diagnostics.append((t, ds2, tr, lam, path))
        if keep_params:
            traj.params.append(alpha.copy())
        if ds2 > ds2_ceiling:
            warnings.warn(f"residual {ds2:.3e} above ceiling at t = {t:.4g}", ExpressivenessWarning,
                          stacklevel=2)
        if step == n_steps:
            break
        t_next = t_start + (step + 1) * dt
        if t < gen.t0 < t_next - 1e-14 * max(1.0, abs(t_next)):
            alpha = rk4(alpha, gen.t0 - t, "pre", k1)
            alpha = rk4(alpha, t_next - gen.t0, "post")
        else:
            alpha = rk4(alpha, dt, epoch, k1)
        if not np.all(np.isfinite(alpha)):
            raise DivergenceError(f"non-finite parameters at step {step + 1}", step + 1)
        t = t_next
        ansatz.set_real(alpha)
        if callback is not None:
            callback(step + 1, t, ansatz)
    ansatz.set_real(alpha)
    return traj


def scaled_norm(ansatz, gen, epoch="post"):
    """``|L rho|^2 / (tr rho0)^2`` over the whole space."""
    values = ansatz.values(_space_bits(gen.space))
    tr = np.sum(values[gen.space.diagonal_ranks()]).real
    lrho = gen.sparse(epoch) @ values
    return float(np.vdot(lrho, lrho).real / tr**2)


def _scaled_norm_and_grad(ansatz, gen, epoch, diag):
    values, J = ansatz.values_and_jacobian(_space_bits(gen.space))
    mat = gen.sparse(epoch).matrix
    lrho = mat @ values
    LJ = mat @ J
    tr = values[diag].sum().real
    if abs(tr) < 1e-300:
        raise GaugeError("trace vanished during steady-state search")
    n2 = np.vdot(lrho, lrho).real
    dn2 = 2 * (LJ.real.T @ lrho.real + LJ.imag.T @ lrho.imag)
    dtr = J[diag].sum(0).real
    return n2 / tr**2, dn2 / tr**2 - 2 * n2 * dtr / tr**3


@dataclass
class SteadyResult:
    value: float
    n_iter: int
    converged: bool
    history: list


def steady_minimize(ansatz, gen, epoch="post", method="descent", lr=1e-2, momentum=0.9,
                    max_iter=2000, tol=1e-10, min_lr=1e-12):
    """Minimize ``|L rho|^2 / (tr rho0)^2`` over the parameters.

    ``method="descent"`` is heavy-ball gradient descent whose step size is
    halved (and momentum reset) whenever the objective increases;
    ``method="lbfgs"`` delegates to SciPy. The ansatz ends at the best point.

    Returns
    -------
    SteadyResult
    """
    diag = gen.space.diagonal_ranks()
    alpha = np.array(ansatz.get_real(), dtype=float)
    value, grad = _scaled_norm_and_grad(ansatz, gen, epoch, diag)
    history = [value]
    if value <= tol:
        return SteadyResult(value, 0, True, history)
    if method == "lbfgs":
        from scipy.optimize import minimize

        def fun(a):
            ansatz.set_real(a)
            return _scaled_norm_and_grad(ansatz, gen, epoch, diag)

        res = minimize(fun, alpha, jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter, "ftol": 0.0, "gtol": 0.0})
        ansatz.set_real(res.x)
        value = float(res.fun)
        return SteadyResult(value, int(res.nit), value <= tol, history + [value])
    if method != "descent":
        raise ValueError(f"unknown method {method!r}")
    best, best_alpha = value, alpha.copy()
    vel = np.zeros_like(alpha)
    it = 0
    for it in range(1, max_iter + 1):
        vel = momentum * vel - lr * grad
        trial = alpha + vel
        ansatz.set_real(trial)
        try:
            v_new, g_new = _scaled_norm_and_grad(ansatz, gen, epoch, diag)
        except GaugeError:
            v_new, g_new = np.inf, None
        if not np.isfinite(v_new) or v_new > value:
            lr *= 0.5
            vel[:] = 0
            if lr < min_lr:
                break
            continue
        alpha, value, grad = trial, v_new, g_new
        history.append(value)
        if value < best:
            best, best_alpha = value, alpha.copy()
        if value <= tol:
            break
    ansatz.set_real(best_alpha)
    return SteadyResult(best, it, best <= tol, history)
