"""Restricted-Boltzmann-machine representation of the reduced density tensor.

Two complex RBMs share the dissipaton visible units ``m = (m-, m+)`` and a
layer of auxiliary units ``a``. The ket network ``psi`` sees ``n``, the bra
network ``phi`` sees ``n'``; each has its own hidden layer. Energies

    E_psi = c.n + d.m + n.D.m + b.a + m.K.a + n.X'.a + g.h + n.X.h + m.Y.h

(and the primed copy for ``phi``). Tracing hidden and auxiliary units gives

    rho_pre = exp(-(c.n + d.m + n.D.m)) conj(exp(-(c'.n' + d'.m + n'.D'.m)))
              * prod_k (1 + exp(-theta_k)) conj(prod_k (1 + exp(-theta'_k)))
              * prod_l (1 + exp(-u_l - conj(u'_l)))

with ``theta = g + X^T n + Y^T m`` and ``u = b + K^T m + X'^T n``. The tensor
is ``rho(s) = f(s) [rho_pre(s) + sign(s) conj(rho_pre(partner(s)))]``.

Real parameter layout: ``concat(Re p, Im p)`` with ``p`` the complex
parameters flattened (C order) in :data:`PARAM_NAMES` order, ket copy first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DimensionError

log = logging.getLogger(__name__)

PARAM_NAMES = ("b", "c", "d", "g", "D", "K", "X", "Xa", "Y")
CHECKPOINT_VERSION = 1


def _shapes(ns, ne, nh, na):
    return {"b": (na,), "c": (ns,), "d": (ne,), "g": (nh,), "D": (ns, ne),
            "K": (ne, na), "X": (ns, nh), "Xa": (ns, na), "Y": (ne, nh)}


def param_count(n_sys, n_diss, n_hidden, n_aux):
    """Exact complex parameter count and the asymptotic reporting estimate.

    Returns
    -------
    exact : int
        Both network copies of this layout.
    estimate : int
        ``2 Ns (2 Nh + Na) + NE (Nh + Na)``.
    """
    per_copy = sum(int(np.prod(s)) for s in _shapes(n_sys, n_diss, n_hidden, n_aux).values())
    estimate = 2 * n_sys * (2 * n_hidden + n_aux) + n_diss * (n_hidden + n_aux)
    return 2 * per_copy, estimate


@dataclass
class RbmParams:
    """Complex parameters of both network copies, stored as one flat vector."""

    n_sys: int
    n_diss: int
    n_hidden: int
    n_aux: int
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=complex).ravel()
        if self.flat.size != self.size:
            raise DimensionError(f"expected {self.size} complex parameters, got {self.flat.size}")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("parameters must be finite")

    @property
    def shapes(self):
        return _shapes(self.n_sys, self.n_diss, self.n_hidden, self.n_aux)

    @property
    def size(self):
        return param_count(self.n_sys, self.n_diss, self.n_hidden, self.n_aux)[0]

    def _offsets(self):
        out, pos = {}, 0
        for copy in ("", "_p"):
            for name in PARAM_NAMES:
                shape = self.shapes[name]
                k = int(np.prod(shape))
                out[name + copy] = (pos, pos + k, shape)
                pos += k
        return out

    def __getitem__(self, key):
        lo, hi, shape = self._offsets()[key]
        return self.flat[lo:hi].reshape(shape)

    def names(self):
        return list(self._offsets())

    @classmethod
    def zeros(cls, n_sys, n_diss, n_hidden, n_aux):
        size = param_count(n_sys, n_diss, n_hidden, n_aux)[0]
        return cls(n_sys, n_diss, n_hidden, n_aux, np.zeros(size, dtype=complex))

    @classmethod
    def random(cls, n_sys, n_diss, n_hidden, n_aux, scale=0.01, random_state=None):
        rng = np.random.default_rng(random_state)
        size = param_count(n_sys, n_diss, n_hidden, n_aux)[0]
        flat = scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))
        return cls(n_sys, n_diss, n_hidden, n_aux, flat)

    def to_real(self):
        return np.concatenate([self.flat.real, self.flat.imag])

    def with_real(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.size != 2 * self.size:
            raise DimensionError(f"expected {2 * self.size} real parameters")
        k = self.size
        return RbmParams(self.n_sys, self.n_diss, self.n_hidden, self.n_aux, vec[:k] + 1j * vec[k:])

    def copy(self):
        return RbmParams(self.n_sys, self.n_diss, self.n_hidden, self.n_aux, self.flat.copy())


# -- kernels -----------------------------------------------------------------

def _log1pexp_neg(z):
    """``log(1 + exp(-z))`` for complex ``z`` without overflow."""
    z = np.asarray(z, dtype=complex)
    big = z.real < 0
    out = np.empty_like(z)
    out[~big] = np.log1p(np.exp(-z[~big]))
    out[big] = -z[big] + np.log1p(np.exp(z[big]))
    return out


def _sigmoid_neg(z):
    """``1 / (1 + exp(z))`` evaluated stably."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    pos = z.real > 0
    e = np.exp(-z[pos])
    out[pos] = e / (1 + e)
    out[~pos] = 1 / (1 + np.exp(z[~pos]))
    return out


def split_bits(bits, n_sys):
    bits = np.asarray(bits, dtype=float)
    return bits[:, :n_sys], bits[:, n_sys:2 * n_sys], bits[:, 2 * n_sys:]


def _fields(p, n, nb, m):
    vis = -(n @ p["c"] + m @ p["d"] + np.einsum("bi,ij,bj->b", n, p["D"], m))
    vis_p = -(nb @ p["c_p"] + m @ p["d_p"] + np.einsum("bi,ij,bj->b", nb, p["D_p"], m))
    theta = p["g"] + n @ p["X"] + m @ p["Y"]
    theta_p = p["g_p"] + nb @ p["X_p"] + m @ p["Y_p"]
    u = p["b"] + m @ p["K"] + n @ p["Xa"]
    u_p = p["b_p"] + m @ p["K_p"] + nb @ p["Xa_p"]
    return vis, vis_p, theta, theta_p, u + np.conj(u_p)


def log_rho_pre(p, bits):
    """``log rho_pre`` for each row of the visible bit matrix (principal branch not implied)."""
    n, nb, m = split_bits(bits, p.n_sys)
    vis, vis_p, theta, theta_p, z = _fields(p, n, nb, m)
    return (vis + np.conj(vis_p) + _log1pexp_neg(theta).sum(1)
            + np.conj(_log1pexp_neg(theta_p).sum(1)) + _log1pexp_neg(z).sum(1))


def _pre_logderivs(p, bits):
    """``log rho_pre`` and the holomorphic log-derivatives ``O`` (ket copy) and ``Q`` (bra copy).

    ``Q`` is the derivative with respect to the conjugated bra parameters.
    """
    n, nb, m = split_bits(bits, p.n_sys)
    vis, vis_p, theta, theta_p, z = _fields(p, n, nb, m)
    logv = (vis + np.conj(vis_p) + _log1pexp_neg(theta).sum(1)
            + np.conj(_log1pexp_neg(theta_p).sum(1)) + _log1pexp_neg(z).sum(1))
    sh = -_sigmoid_neg(theta)
    shp = -_sigmoid_neg(np.conj(theta_p))
    ta = -_sigmoid_neg(z)
    B = len(bits)

    def block(nv, s_h):
        outer = lambda a, b: (a[:, :, None] * b[:, None, :]).reshape(B, -1)
        return np.concatenate([ta, -nv, -m, s_h, -outer(nv, m), outer(m, ta), outer(nv, s_h),
                               outer(nv, ta), outer(m, s_h)], axis=1)

    return logv, block(n, sh), block(nb, shp)


def partner_bits(bits, n_sys):
    """Partner visible bits and the symmetry sign for each row."""
    bits = np.asarray(bits)
    ne = bits.shape[1] - 2 * n_sys
    h = ne // 2
    n, nb = bits[:, :n_sys], bits[:, n_sys:2 * n_sys]
    mm, mp = bits[:, 2 * n_sys:2 * n_sys + h], bits[:, 2 * n_sys + h:]
    pb = np.concatenate([nb, n, mp, mm], axis=1)
    k = (mm.sum(1) // 2 + mp.sum(1) // 2) % 2
    return pb, 1 - 2 * k


def filter_mask(bits, n_sys, max_tier, parity_filter=True):
    bits = np.asarray(bits)
    ok = bits[:, 2 * n_sys:].sum(1) <= max_tier
    if parity_filter:
        ok &= bits.sum(1) % 2 == 0
    return ok


def eval_pre(p, bits):
    return np.exp(log_rho_pre(p, np.atleast_2d(bits)))


def evaluate(p, bits, max_tier, parity_filter=True):
    """Symmetry-adapted, filtered tensor values at each visible configuration."""
    bits = np.atleast_2d(bits)
    pb, sign = partner_bits(bits, p.n_sys)
    val = np.exp(log_rho_pre(p, bits)) + sign * np.conj(np.exp(log_rho_pre(p, pb)))
    return np.where(filter_mask(bits, p.n_sys, max_tier, parity_filter), val, 0)


def log_evaluate(p, bits, max_tier, parity_filter=True):
    """``log rho`` computed without forming the (possibly huge) pre-values."""
    bits = np.atleast_2d(bits)
    pb, sign = partner_bits(bits, p.n_sys)
    l1 = log_rho_pre(p, bits)
    l2 = np.conj(log_rho_pre(p, pb))
    ref = np.maximum(l1.real, l2.real)
    with np.errstate(divide="ignore"):
        out = ref + np.log(np.exp(l1 - ref) + sign * np.exp(l2 - ref))
    return np.where(filter_mask(bits, p.n_sys, max_tier, parity_filter), out, -np.inf)


def jacobian(p, bits, max_tier, parity_filter=True):
    """Values and ``d rho / d alpha`` for every real parameter.

    Returns
    -------
    values : (B,) complex
    jac : (B, 2 * n_complex) complex
    """
    bits = np.atleast_2d(bits)
    pb, sign = partner_bits(bits, p.n_sys)
    lv, O, Q = _pre_logderivs(p, bits)
    lvp, Op, Qp = _pre_logderivs(p, pb)
    v, vp = np.exp(lv), np.exp(lvp)
    G = v[:, None] * np.concatenate([O, Q], axis=1)
    Gp = vp[:, None] * np.concatenate([Op, Qp], axis=1)
    k = O.shape[1]
    phase = np.concatenate([np.ones(k), -np.ones(k)])
    sg = sign[:, None]
    jx = G + sg * np.conj(Gp)
    jy = 1j * phase * (G - sg * np.conj(Gp))
    mask = filter_mask(bits, p.n_sys, max_tier, parity_filter)
    values = np.where(mask, v + sign * np.conj(vp), 0)
    jac = np.concatenate([jx, jy], axis=1) * mask[:, None]
    return values, jac


def _levenberg_marquardt(values_fn, jac_fn, y, a0, tol, max_iter):
    """Damped Gauss-Newton on ``|v(a) - y| / |y|`` using the normal equations.

    Returns the best parameters and the number of accepted steps; the budget
    ``max_iter`` counts accepted and rejected trial steps.
    """
    from scipy.linalg.blas import dsyrk

    scale = max(np.linalg.norm(y), 1e-300)
    a = np.asarray(a0, dtype=float).copy()
    v, J = jac_fn(a)
    r = v - y
    err = np.linalg.norm(r) / scale
    mu, trials, accepted = 1e-3, 0, 0
    while err > tol and trials < max_iter:
        A = np.asfortranarray(np.concatenate([J.real, J.imag], axis=0))
        JtJ = dsyrk(1.0, A, trans=1, lower=0)
        JtJ = np.triu(JtJ) + np.triu(JtJ, 1).T
        g = J.real.T @ r.real + J.imag.T @ r.imag
        dj = np.diag(JtJ) + 1e-12 * np.diag(JtJ).max()
        improved = False
        while trials < max_iter and mu < 1e12:
            try:
                c = linalg.cho_factor(JtJ + mu * np.diag(dj))
            except linalg.LinAlgError:
                mu *= 10
                continue
            step = -linalg.cho_solve(c, g)
            trials += 1
            with np.errstate(all="ignore"):
                r_new = values_fn(a + step) - y
                err_new = np.linalg.norm(r_new) / scale
            if np.isfinite(err_new) and err_new < err:
                a, err = a + step, err_new
                v, J = jac_fn(a)
                r = v - y
                mu = max(mu / 3, 1e-12)
                accepted += 1
                improved = True
                break
            mu *= 4
        if not improved:
            break
    return a, accepted


# -- estimator ---------------------------------------------------------------

class RbmDensityTensor(BaseEstimator):
    """Neural reduced density tensor with a scikit-learn style interface.

    ``X`` is always a visible bit matrix of shape ``(n_configs, 2*n_sys + N_E)``
    in packing order (``n``, ``n'``, ``m-``, ``m+``).

    Parameters
    ----------
    n_sys : int
        Number of system spin orbitals.
    max_tier : int
        Truncation tier of the filter.
    n_hidden, n_aux : int
        Hidden units per network copy and shared auxiliary units.
    parity_filter : bool
    init_scale : float
        Standard deviation of the complex Gaussian initialization.
    init_bias : float
        Real offset added to the hidden and auxiliary biases at
        initialization. Each traced unit then contributes a factor near one
        instead of two, which keeps the starting amplitudes O(1) and the fit
        well conditioned.
    share_weights : bool
        Tie the bra network to the ket network (``phi = psi``). The real
        parameter vector then covers one copy only. Off by default.
    staged : bool
        Fit tier by tier (configurations with at most 0, 1, ... dissipaton
        excitations), warm-starting each stage from the previous one.
    tol : float
        Target relative L2 error of :meth:`fit`.
    max_iter : int
        Trial-step budget of each fitting stage.
    n_init : int
        Maximum number of random starts; later starts run only while the
        fit has not reached ``tol``.
    random_state : int, Generator or None

    Attributes
    ----------
    params_ : RbmParams
    n_diss_ : int
    fit_error_ : float
    converged_ : bool
    """

    def __init__(self, n_sys=2, max_tier=2, n_hidden=4, n_aux=4, parity_filter=True,
                 init_scale=0.01, init_bias=2.0, staged=True, tol=1e-4, max_iter=500,
                 n_init=3, share_weights=False, random_state=None):
        self.n_sys = n_sys
        self.max_tier = max_tier
        self.n_hidden = n_hidden
        self.n_aux = n_aux
        self.parity_filter = parity_filter
        self.init_scale = init_scale
        self.init_bias = init_bias
        self.staged = staged
        self.tol = tol
        self.max_iter = max_iter
        self.n_init = n_init
        self.share_weights = share_weights
        self.random_state = random_state

    def _check_bits(self, X, reset=False):
        X = check_array(X, dtype=np.int8, ensure_min_samples=1)
        if np.any((X != 0) & (X != 1)):
            raise ValueError("visible configurations must be 0/1")
        ne = X.shape[1] - 2 * self.n_sys
        if ne < 0 or ne % 2:
            raise DimensionError(f"{X.shape[1]} columns do not fit n_sys={self.n_sys} with even N_E")
        if not reset and ne != self.n_diss_:
            raise DimensionError(f"estimator was built for N_E={self.n_diss_}, got {ne}")
        return X, ne

    def initialize(self, n_diss, random_state=None):
        """Random initialization without fitting (``random_state`` overrides the attribute)."""
        self.n_diss_ = int(n_diss)
        rs = self.random_state if random_state is None else random_state
        p = RbmParams.random(self.n_sys, n_diss, self.n_hidden, self.n_aux, self.init_scale, rs)
        flat = p.flat.copy()
        offsets = p._offsets()
        for name in ("g", "g_p", "b", "b_p"):
            lo, hi, _ = offsets[name]
            flat[lo:hi] += self.init_bias
        if self.share_weights:
            k = p.size // 2
            flat[k:] = flat[:k]
        self.params_ = RbmParams(p.n_sys, p.n_diss, p.n_hidden, p.n_aux, flat)
        self.fit_error_ = np.nan
        self.converged_ = False
        return self

    def fit(self, X, y):
        """Supervised initialization on target tensor values ``y`` at configs ``X``.

        Minimizes ``sum |rho(s) - y(s)|^2`` by Levenberg-Marquardt from the
        random start until the relative L2 error is below ``tol`` or the
        trial budget is spent. With ``staged`` the rows are fitted in order of
        increasing tier. A start that stagnates above ``tol`` is followed by
        fresh random starts, up to ``n_init`` in total; the best fit is kept.
        Final stagnation is logged, not raised.
        """
        X, ne = self._check_bits(X, reset=True)
        y = np.asarray(y, dtype=complex).ravel()
        if y.shape[0] != X.shape[0]:
            raise DimensionError("X and y have different lengths")
        scale = np.linalg.norm(y) or 1.0

        def err(p):
            return np.linalg.norm(evaluate(p, X, self.max_tier, self.parity_filter) - y) / scale

        self.initialize(ne)
        self.fit_error_ = err(self.params_)
        self.n_iter_ = 0
        if not np.isfinite(self.tol) or self.fit_error_ <= self.tol:
            self.converged_ = self.fit_error_ <= self.tol
            return self
        best = None
        for attempt in range(max(1, self.n_init)):
            if attempt:
                self.initialize(ne, self._restart_state(attempt))
            params, n = self._fit_from(self.params_, X, y)
            self.n_iter_ += n
            e = err(params)
            if best is None or e < best[1]:
                best = (params, e)
            if e <= self.tol:
                break
            log.info("fit attempt %d stagnated at %.3e", attempt, e)
        self.params_, self.fit_error_ = best
        self.converged_ = bool(self.fit_error_ <= self.tol)
        if not self.converged_:
            log.warning("supervised init stagnated at relative error %.3e (tol %.1e)",
                        self.fit_error_, self.tol)
        return self

    def _restart_state(self, attempt):
        rs = self.random_state
        if isinstance(rs, (int, np.integer)):
            return np.random.default_rng([int(rs), attempt])
        return rs  # a Generator advances on its own; None draws fresh entropy

    def _fit_from(self, p0, X, y):
        a = self._reduce(p0.to_real())
        tiers = X[:, 2 * self.n_sys:].sum(1)
        stages = np.unique(np.minimum(tiers, self.max_tier)) if self.staged else [self.max_tier]
        total = 0
        for k in stages:
            rows = tiers <= k
            Xk, yk = X[rows], y[rows]
            if not np.any(yk):
                continue
            a, n = _levenberg_marquardt(
                lambda a: evaluate(p0.with_real(self._expand(a)), Xk, self.max_tier,
                                   self.parity_filter),
                lambda a: self._tie(jacobian(p0.with_real(self._expand(a)), Xk, self.max_tier,
                                             self.parity_filter)),
                yk, a, self.tol, self.max_iter)
            total += n
            log.info("fit stage tier<=%d: %d accepted steps", k, n)
        return p0.with_real(self._expand(a)), total

    def predict(self, X):
        """Tensor values ``rho(s)`` at visible configurations."""
        check_is_fitted(self, "params_")
        X, _ = self._check_bits(X)
        return evaluate(self.params_, X, self.max_tier, self.parity_filter)

    def score(self, X, y):
        """Negative relative L2 error (higher is better)."""
        y = np.asarray(y, dtype=complex)
        return -float(np.linalg.norm(self.predict(X) - y) / np.linalg.norm(y))

    # tied weights: full real layout is (Re ket, Re bra, Im ket, Im bra)
    def _expand(self, a):
        if not self.share_weights:
            return a
        re, im = np.split(np.asarray(a, dtype=float), 2)
        return np.concatenate([re, re, im, im])

    def _reduce(self, a):
        if not self.share_weights:
            return a
        q = np.asarray(a).size // 4
        return np.concatenate([a[:q], a[2 * q:3 * q]])

    def _tie(self, vj):
        if not self.share_weights:
            return vj
        v, J = vj
        q = J.shape[1] // 4
        return v, np.concatenate([J[:, :q] + J[:, q:2 * q], J[:, 2 * q:3 * q] + J[:, 3 * q:]], axis=1)

    # ansatz protocol shared with LinearAnsatz
    @property
    def n_real(self):
        return 2 * self.params_.size // (2 if self.share_weights else 1)

    def get_real(self):
        check_is_fitted(self, "params_")
        return self._reduce(self.params_.to_real())

    def set_real(self, vec):
        self.params_ = self.params_.with_real(self._expand(vec))

    def values(self, bits):
        return evaluate(self.params_, bits, self.max_tier, self.parity_filter)

    def values_and_jacobian(self, bits):
        return self._tie(jacobian(self.params_, bits, self.max_tier, self.parity_filter))

    def param_count(self):
        """Independent complex parameters (one copy when shared) and the estimate."""
        exact, estimate = param_count(self.n_sys, self.n_diss_, self.n_hidden, self.n_aux)
        return (exact // 2 if self.share_weights else exact), estimate


class LinearAnsatz:
    """One complex parameter per retained configuration (exact tangent space).

    Parameters
    ----------
    space : SpaceIndex
    values : array_like, optional
        Initial tensor components in rank order.
    """

    def __init__(self, space, values=None):
        self.space = space
        self.coef = np.zeros(space.count, dtype=complex) if values is None \
            else np.array(values, dtype=complex)

    @property
    def n_real(self):
        return 2 * self.space.count

    def get_real(self):
        return np.concatenate([self.coef.real, self.coef.imag])

    def set_real(self, vec):
        k = self.space.count
        self.coef = vec[:k] + 1j * vec[k:]

    def _ranks(self, bits):
        w = (np.asarray(bits, dtype=np.int64) << np.arange(bits.shape[1])).sum(1)
        return self.space.rank(w)

    def values(self, bits):
        r = self._ranks(np.atleast_2d(bits))
        return np.where(r >= 0, self.coef[np.maximum(r, 0)], 0)

    def values_and_jacobian(self, bits):
        bits = np.atleast_2d(bits)
        r = self._ranks(bits)
        k = self.space.count
        jac = np.zeros((len(r), 2 * k), dtype=complex)
        ok = np.nonzero(r >= 0)[0]
        jac[ok, r[ok]] = 1.0
        jac[ok, k + r[ok]] = 1j
        return self.values(bits), jac


# -- checkpoint --------------------------------------------------------------

def save_checkpoint(path, params, **meta):
    """Write parameters as a versioned ``.npz``: one ``re``/``im`` pair per named block."""
    arrays = {"version": np.array(CHECKPOINT_VERSION),
              "sizes": np.array([params.n_sys, params.n_diss, params.n_hidden, params.n_aux])}
    for name in params.names():
        arrays[f"{name}.re"] = params[name].real
        arrays[f"{name}.im"] = params[name].imag
    for k, v in meta.items():
        arrays[f"meta.{k}"] = np.asarray(v)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    with np.load(path) as z:
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        ns, ne, nh, na = (int(x) for x in z["sizes"])
        p = RbmParams.zeros(ns, ne, nh, na)
        parts = []
        for name in p.names():
            parts.append((z[f"{name}.re"] + 1j * z[f"{name}.im"]).ravel())
        meta = {k[5:]: z[k] for k in z.files if k.startswith("meta.")}
    return RbmParams(ns, ne, nh, na, np.concatenate(parts)), meta
