"""Exact propagation and steady states of the full reduced density tensor.

This is the reference solver: classic RK4 on the assembled sparse generator,
a bordered sparse solve for the stationary state, and equilibration from the
factorized vacuum.

Snapshot CSV layout: optional ``#`` comment lines, then a header
``rank,re,im`` and one row per stored component, ``%.17g`` formatted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import DegenerateSteadyStateError, DivergenceError, EquilibrationError
from .liouvillian import mode_weights
from .observables import RdtVector

log = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """Time grid with per-time observable records and optional snapshots."""

    times: list = field(default_factory=list)
    records: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    def append(self, t, record):
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must be strictly increasing")
        self.times.append(float(t))
        self.records.append(record)

    def column(self, name):
        """Array of one observable; ``n_up``/``n_dn`` map to ``n[0]``/``n[1]``."""
        if name in ("n_up", "n_dn"):
            k = 0 if name == "n_up" else 1
            return np.array([r.n[k] for r in self.records], dtype=float)
        vals = [getattr(r, name) for r in self.records]
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

    @property
    def t(self):
        return np.asarray(self.times)


def vacuum(space):
    """Factorized state: system vacuum with no dissipaton excitations."""
    x = np.zeros(space.count, dtype=complex)
    x[space.rank(0)] = 1.0
    return RdtVector(x, space, 0.0)


@np.errstate(over="ignore", invalid="ignore")
def _rk4_step(mat, x, dt):
    k1 = mat @ x
    k2 = mat @ (x + 0.5 * dt * k1)
    k3 = mat @ (x + 0.5 * dt * k2)
    k4 = mat @ (x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_propagate(gen, rho_init, dt, n_steps, observers=(), snapshot_every=None, callback=None):
    """Propagate ``rho_init`` by ``n_steps`` classic RK4 steps of size ``dt``.

    A step straddling the quench time ``gen.t0`` is split there into two
    sub-steps so each piece sees a constant generator.

    Parameters
    ----------
    gen : Generator
    rho_init : RdtVector
        Its ``t`` attribute is the start time.
    dt : float
    n_steps : int
    observers : sequence of callables ``(t, RdtVector) -> record``
        Records of the first observer fill ``Trajectory.records``; further
        observers are called for side effects.
    snapshot_every : int, optional
        Store the state every this many steps (and at the end).
    callback : callable, optional
        ``callback(step, t, values)`` after every step.

    Returns
    -------
    Trajectory, RdtVector
        The trajectory and the final state.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(rho_init.values, dtype=complex)
    t = float(rho_init.t)
    space = rho_init.space
    for ep in ("pre", "post"):
        bound = gen.norm_bound(ep)
        log.info("epoch %s: spectral-radius bound %.3g, dt*bound %.3g", ep, bound, dt * bound)
    traj = Trajectory()

    def observe(step):
        state = RdtVector(x, space, t)
        recs = [obs(t, state) for obs in observers]
        traj.append(t, recs[0] if recs else None)
        if snapshot_every and (step % snapshot_every == 0 or step == n_steps):
            traj.snapshots[t] = x.copy()

    observe(0)
    for step in range(1, n_steps + 1):
        t_next = t + dt
        if t < gen.t0 < t_next - 1e-14 * max(1.0, abs(t_next)):
            x = _rk4_step(gen.sparse("pre").matrix, x, gen.t0 - t)
            x = _rk4_step(gen.sparse("post").matrix, x, t_next - gen.t0)
        else:
            x = _rk4_step(gen.sparse(gen.epoch_at(t)).matrix, x, dt)
        t = t_start_plus(rho_init.t, step, dt)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at step {step} (t = {t:.6g})", step)
        if callback is not None:
            callback(step, t, x)
        observe(step)
    return traj, RdtVector(x, space, t)


def t_start_plus(t_start, step, dt):
    """Grid time ``t_start + step*dt`` without accumulated round-off."""
    return float(t_start) + step * dt


def _border_vector(space):
    b = np.zeros(space.count, dtype=complex)
    b[space.diagonal_ranks()] = 1.0
    return b


def steady_state_dense(gen, epoch="post", rtol=1e-9, method="auto", direct_limit=60_000):
    """Stationary state with unit trace.

    Solves the bordered system ``[[L, b], [b^T, 0]] [rho; z] = [0; 1]``, where
    ``b`` selects the diagonal system components. The multiplier ``z`` is zero
    for an exact solution since ``b^T L = 0`` (trace conservation).

    Parameters
    ----------
    gen : Generator
    epoch : {"pre", "post"}
    rtol : float
        Acceptance threshold on the relative residual.
    method : {"auto", "direct", "iterative"}
        ``direct`` factorizes with SuperLU. ``iterative`` runs restarted GMRES
        preconditioned by an incomplete LU of the tier-balanced system, which
        needs far less memory at tier 3. ``auto`` picks by size.
    direct_limit : int
        Largest space handled directly under ``auto``.

    Returns
    -------
    RdtVector, float
        State and relative residual ``|L rho| / |rho|``.
    """
    space = gen.space
    n = space.count
    if method == "auto":
        method = "direct" if n <= direct_limit else "iterative"
    if method not in ("direct", "iterative"):
        raise ValueError(f"unknown method {method!r}")
    mat = gen.sparse(epoch).matrix
    b = _border_vector(space)
    # balance tiers: the solve runs on W^-1 L W, which has the same kernel up to W
    w = mode_weights(space, gen.epochs[epoch].dissipatons) if method == "iterative" else np.ones(n)
    scaled = (sparse.diags(1.0 / w) @ mat @ sparse.diags(w)).tocsr() if method == "iterative" else mat
    big = sparse.bmat([[scaled, sparse.csr_matrix((b * w)[:, None])],
                       [sparse.csr_matrix((b * w)[None, :]), None]], format="csc")
    rhs = np.zeros(n + 1, dtype=complex)
    rhs[-1] = 1.0
    if method == "direct":
        lu = spla.splu(big)
        sol = lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise DegenerateSteadyStateError("bordered solve broke down", _nullity_estimate(mat))
        sol = sol + lu.solve(rhs - big @ sol)  # one refinement step
    else:
        ilu = spla.spilu(big, drop_tol=1e-4, fill_factor=20)
        prec = spla.LinearOperator(big.shape, ilu.solve, dtype=complex)
        sol, info = spla.gmres(big, rhs, M=prec, rtol=0.1 * rtol, restart=100, maxiter=400)
        if not np.all(np.isfinite(sol)):
            raise DegenerateSteadyStateError("iterative solve broke down", -1)
        log.info("gmres exit status %d", info)
    x = sol[:n] * w
    resid = float(np.linalg.norm(mat @ x) / np.linalg.norm(x))
    if resid > rtol:
        raise DegenerateSteadyStateError(f"steady-state residual {resid:.3e} exceeds {rtol:.1e}",
                                         _nullity_estimate(mat))
    log.info("steady state (%s): residual %.3e, multiplier %.3e", method, resid, abs(sol[-1]))
    return RdtVector(x, space, np.inf), resid


def _nullity_estimate(mat, k=4):
    """Count near-zero singular values among the smallest ``k`` (small spaces only)."""
    n = mat.shape[0]
    if n > 4000:
        return -1
    s = np.linalg.svd(mat.toarray(), compute_uv=False)
    return int(np.sum(s < 1e-9 * s[0]))


def equilibrate(gen, tol=1e-8, dt=None, max_steps=2_000_000, epoch="pre", start=None):
    """Propagate from the factorized vacuum under a fixed epoch until stationary.

    Stops when ``max |L rho| < tol``.

    Parameters
    ----------
    gen : Generator
    tol : float
    dt : float, optional
        Defaults to ``2.5 / bound`` with ``bound`` the Gershgorin estimate of
        the spectral radius, capped at 0.05.
    max_steps : int
    epoch : {"pre", "post"}
    start : RdtVector, optional
        Initial state instead of the vacuum.

    Returns
    -------
    RdtVector
        Stationary state, stamped with ``t = gen.t0``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    space = gen.space
    mat = gen.sparse(epoch).matrix
    if dt is None:
        dt = min(0.05, 2.5 / max(gen.norm_bound(epoch), 1e-12))
    x = (start.values if start is not None else vacuum(space).values).copy()
    for step in range(max_steps + 1):
        k1 = mat @ x
        res = np.max(np.abs(k1))
        if res < tol:
            log.info("equilibrated after %d steps (residual %.2e)", step, res)
            return RdtVector(x, space, gen.t0)
        k2 = mat @ (x + 0.5 * dt * k1)
        k3 = mat @ (x + 0.5 * dt * k2)
        k4 = mat @ (x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("equilibration diverged; reduce dt", step)
    raise EquilibrationError(f"residual {res:.2e} above {tol:.1e} after {max_steps} steps")


def symmetry_defect(rho):
    """``max |rho(s) - sign(s) conj(rho(partner(s)))|`` over the retained space."""
    pr, sign = rho.space.partner_ranks()
    x = rho.values
    ok = pr >= 0
    d = np.abs(x[ok] - sign[ok] * np.conj(x[pr[ok]]))
    return float(d.max()) if len(d) else 0.0


def dump_snapshot(rho, path, header=None):
    """Write nonzero components as ``rank,re,im`` CSV rows."""
    nz = np.nonzero(rho.values)[0]
    with open(path, "w", encoding="utf-8") as fh:
        for line in (header or ()):
            fh.write(f"# {line}\n")
        fh.write(f"# t={rho.t!r} count={rho.space.count}\n")
        fh.write("rank,re,im\n")
        for r in nz:
            v = rho.values[r]
            fh.write(f"{r},{v.real:.17g},{v.imag:.17g}\n")


def load_snapshot(path, space):
    """Read a file written by :func:`dump_snapshot` back onto ``space``."""
    x = np.zeros(space.count, dtype=complex)
    t = 0.0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# t="):
                t = float(line[4:].split()[0])
            if not line or line.startswith("#") or line == "rank,re,im":
                continue
            r, re, im = line.split(",")
            x[int(r)] = float(re) + 1j * float(im)
    return RdtVector(x, space, t)
