"""Generalized Liouvillian of the dissipaton-embedded master equation.

The reduced density tensor is read as the matrix of an operator on the
extended Fock space (system orbitals first, then dissipaton modes):

    rho(n, n'; m-, m+) = chi(s) <n, m-| rho_hat |n', m+>,   chi = (-1)**floor(M+/2)

so that left multiplication acts on the ket word ``(n, m-)`` and right
multiplication on the bra word ``(n', m+)``. Operators carry Jordan-Wigner
signs over all lower-positioned orbitals and modes. With ``gamma+ = conj(gamma-)``
for every mode, the generator maps the symmetry-adapted subspace into itself.

Per mode ``j`` coupled to orbital ``nu`` the generator is

    -i[H, rho] - (g-_j N_j rho + g+_j rho N_j)
    - i (c+ b rho - b rho c+ + c rho b+ - rho b+ c)
    - i (-e-_j c b+ rho - conj(e+_j) b+ rho c)
    - i (e+_j c+ rho b + conj(e-_j) rho b c+)

and any target beyond the truncation tier is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import CapacityError, DimensionError
from .space import popcount

# (name, ket ops, bra ops); an op is (kind, create). Ops in each list are applied
# left to right. Right multiplication by X acts on the bra as X^dagger.
_TERMS = (
    ("lower_ket_c", (("b", False), ("c", True)), ()),
    ("lower_ket_r", (("b", False),), (("c", False),)),
    ("lower_bra_l", (("c", False),), (("b", False),)),
    ("lower_bra_r", (), (("b", False), ("c", True))),
    ("raise_ket_l", (("b", True), ("c", False)), ()),
    ("raise_ket_r", (("b", True),), (("c", True),)),
    ("raise_bra_l", (("c", True),), (("b", True),)),
    ("raise_bra_r", (), (("b", True), ("c", False))),
)


def _term_coefficient(name, mode):
    ep, em = mode.eta_plus, mode.eta_minus
    return {
        "lower_ket_c": -1j,
        "lower_ket_r": 1j,
        "lower_bra_l": -1j,
        "lower_bra_r": 1j,
        "raise_ket_l": 1j * em,
        "raise_ket_r": 1j * np.conj(ep),
        "raise_bra_l": -1j * ep,
        "raise_bra_r": -1j * np.conj(em),
    }[name]


def _act(words, pos, create):
    occupied = ((words >> pos) & 1).astype(bool)
    valid = ~occupied if create else occupied
    sign = 1 - 2 * (popcount(words & ((1 << pos) - 1)) % 2)
    return words ^ (1 << pos), sign, valid


def rdt_sign(space, words=None):
    """Component sign ``(-1)**floor(M+/2)`` relating RDT and operator elements."""
    w = space.words if words is None else words
    return 1 - 2 * ((popcount(space.m_plus(w)) // 2) % 2)


@dataclass(frozen=True)
class Epoch:
    hamiltonian: np.ndarray
    dissipatons: object


@dataclass(frozen=True)
class _Table:
    src: np.ndarray
    tgt: np.ndarray
    sign: np.ndarray


class Generator:
    """Linear generator over a :class:`SpaceIndex`, with an optional quench.

    Parameters
    ----------
    space : SpaceIndex
    pre : Epoch
        Hamiltonian and dissipatons before ``t0`` (or for all times).
    post : Epoch, optional
        Hamiltonian and dissipatons from ``t0`` on. Mode order and orbital
        assignment must match ``pre``.
    t0 : float
    """

    def __init__(self, space, pre, post=None, t0=0.0):
        self.space = space
        self.t0 = float(t0)
        self.epochs = {"pre": pre, "post": post if post is not None else pre}
        dim = 2**space.n_sys
        for name, ep in self.epochs.items():
            if ep.hamiltonian.shape != (dim, dim):
                raise DimensionError(f"{name} Hamiltonian must be {dim}x{dim}")
            if len(ep.dissipatons) != space.n_modes:
                raise DimensionError(
                    f"{name} epoch has {len(ep.dissipatons)} modes, space expects {space.n_modes}")
        orb_pre = self.epochs["pre"].dissipatons.orbitals
        orb_post = self.epochs["post"].dissipatons.orbitals
        if not np.array_equal(orb_pre, orb_post):
            raise DimensionError("mode-to-orbital map differs between epochs")
        if np.any(orb_pre >= space.n_sys):
            raise DimensionError("dissipaton couples to an orbital outside the system")
        self.orbitals = orb_pre
        self._chi = rdt_sign(space)
        self._tables = self._build_mode_tables()
        self._cache = {}

    # -- structure -------------------------------------------------------
    def _positions(self, j):
        return {"c": int(self.orbitals[j]), "b": self.space.n_sys + j}

    def _transport(self, ket_ops, bra_ops, pos):
        sp = self.space
        ket, bra = sp.ket_word(sp.words), sp.bra_word(sp.words)
        sign = np.ones(len(ket), dtype=np.int64)
        valid = np.ones(len(ket), dtype=bool)
        for kind, create in ket_ops:
            ket, s, v = _act(ket, pos[kind], create)
            sign *= s
            valid &= v
        for kind, create in bra_ops:
            bra, s, v = _act(bra, pos[kind], create)
            sign *= s
            valid &= v
        src = np.nonzero(valid)[0]
        tgt = sp.rank(sp.join(ket[src], bra[src]))
        keep = tgt >= 0
        src, tgt = src[keep], tgt[keep]
        sign = sign[src] * self._chi[src] * self._chi[tgt]
        return _Table(src, tgt, sign.astype(float))

    def _build_mode_tables(self):
        tables = {}
        for j in range(self.space.n_modes):
            pos = self._positions(j)
            for name, ket_ops, bra_ops in _TERMS:
                tables[(j, name)] = self._transport(ket_ops, bra_ops, pos)
        return tables

    def _hamiltonian_tables(self, h):
        """Off-diagonal commutator entries as (src, tgt, coefficient)."""
        sp = self.space
        w = sp.words
        ket_s, bra_s = sp.ket_sys(w), sp.bra_sys(w)
        out = []
        rows, cols = np.nonzero(h - np.diag(np.diag(h)))
        for a, b in zip(rows, cols):
            # left: (H rho)(a..) += H[a, b] rho(b..)
            src = np.nonzero(ket_s == b)[0]
            tgt = sp.rank((w[src] & ~np.int64((1 << sp.n_sys) - 1)) | a)
            keep = tgt >= 0
            out.append((src[keep], tgt[keep], np.full(keep.sum(), -1j * h[a, b])))
            # right: (rho H)(.., b) += rho(.., a) H[a, b]
            src = np.nonzero(bra_s == a)[0]
            mask = np.int64(((1 << sp.n_sys) - 1) << sp.n_sys)
            tgt = sp.rank((w[src] & ~mask) | (np.int64(b) << sp.n_sys))
            keep = tgt >= 0
            out.append((src[keep], tgt[keep], np.full(keep.sum(), 1j * h[a, b])))
        return out

    # -- coefficients ----------------------------------------------------
    def _epoch_data(self, epoch):
        if epoch not in self._cache:
            ep = self.epochs[epoch]
            sp = self.space
            h = np.asarray(ep.hamiltonian)
            w = sp.words
            hd = np.real_if_close(np.diag(h))
            diag = -1j * (hd[sp.ket_sys(w)] - hd[sp.bra_sys(w)])
            mm, mp = sp.m_minus(w), sp.m_plus(w)
            for j, mode in enumerate(ep.dissipatons):
                diag = diag - mode.gamma_minus * ((mm >> j) & 1) - mode.gamma_plus * ((mp >> j) & 1)
            terms = []
            for (j, name), tab in self._tables.items():
                coef = _term_coefficient(name, ep.dissipatons[j])
                if coef != 0 and len(tab.src):
                    terms.append((tab.src, tab.tgt, coef * tab.sign))
            terms.extend(self._hamiltonian_tables(h))
            self._cache[epoch] = (diag.astype(complex), terms)
        return self._cache[epoch]

    def epoch_at(self, t):
        return "post" if t >= self.t0 else "pre"

    # -- action ----------------------------------------------------------
    def apply(self, rho, t=None, epoch=None):
        """Matrix-free action ``L rho`` at time ``t`` (or on a named epoch)."""
        x = np.asarray(getattr(rho, "values", rho))
        if x.shape[0] != self.space.count:
            raise DimensionError(f"vector of length {x.shape[0]} for space of {self.space.count}")
        epoch = epoch or (self.epoch_at(t) if t is not None else "pre")
        diag, terms = self._epoch_data(epoch)
        y = diag * x if x.ndim == 1 else diag[:, None] * x
        y = y.astype(complex)
        for src, tgt, coef in terms:
            if x.ndim == 1:
                np.add.at(y, tgt, coef * x[src])
            else:
                np.add.at(y, tgt, coef[:, None] * x[src])
        return y

    def build_sparse(self, epoch="pre", max_nnz=200_000_000):
        diag, terms = self._epoch_data(epoch)
        n = self.space.count
        nnz = n + sum(len(s) for s, _, _ in terms)
        if nnz > max_nnz:
            raise CapacityError(f"{nnz} nonzeros exceed budget {max_nnz}")
        rows = np.concatenate([np.arange(n)] + [t for _, t, _ in terms])
        cols = np.concatenate([np.arange(n)] + [s for s, _, _ in terms])
        vals = np.concatenate([diag] + [c for _, _, c in terms])
        mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        mat.eliminate_zeros()
        return SparseGenerator(mat, epoch)

    def sparse(self, epoch):
        key = ("sparse", epoch)
        if key not in self._cache:
            self._cache[key] = self.build_sparse(epoch)
        return self._cache[key]

    def lowering_part(self, epoch, modes):
        """Sparse matrix of only the tier-lowering terms of the given modes."""
        n = self.space.count
        rows, cols, vals = [], [], []
        ep = self.epochs[epoch]
        for (j, name), tab in self._tables.items():
            if j in modes and name.startswith("lower"):
                rows.append(tab.tgt)
                cols.append(tab.src)
                vals.append(_term_coefficient(name, ep.dissipatons[j]) * tab.sign)
        if not rows:
            return sparse.csr_matrix((n, n), dtype=complex)
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(n, n))

    def norm_bound(self, epoch="pre"):
        """Gershgorin bound on the spectral radius (max absolute row sum)."""
        m = self.sparse(epoch).matrix
        return float(np.abs(m).sum(axis=1).max())


@dataclass(frozen=True)
class SparseGenerator:
    matrix: sparse.csr_matrix
    epoch: str

    @property
    def nnz(self):
        return self.matrix.nnz

    def __matmul__(self, x):
        return self.matrix @ x


def apply(gen, rho, t):
    return gen.apply(rho, t)


def build_sparse(gen, epoch):
    return gen.build_sparse(epoch)


def mode_weights(space, dissipatons):
    """Component weights ``w(s) = prod_j |eta_j|**((m-_j + m+_j)/2)``.

    The tensor ``rho / w`` has tier components of comparable size, which
    balances the variational metric. The weight is partner invariant.
    """
    amp = np.array([np.sqrt(max(abs(m.eta_plus), abs(m.eta_minus), 1e-300)) for m in dissipatons])
    w = np.ones(space.count)
    mm, mp = space.m_minus(space.words), space.m_plus(space.words)
    for j, a in enumerate(amp):
        w *= a ** (((mm >> j) & 1) + ((mp >> j) & 1))
    return w


class ScaledGenerator:
    """Similarity transform ``W^-1 L W`` of a generator with diagonal ``W``.

    Acts on the scaled tensor ``rho / weights``; dynamics are unchanged.
    """

    def __init__(self, gen, weights):
        self.base = gen
        self.space = gen.space
        self.t0 = gen.t0
        self.weights = np.asarray(weights, dtype=float)
        self._cache = {}

    def epoch_at(self, t):
        return self.base.epoch_at(t)

    def sparse(self, epoch):
        if epoch not in self._cache:
            m = self.base.sparse(epoch).matrix
            w = sparse.diags(self.weights)
            wi = sparse.diags(1.0 / self.weights)
            self._cache[epoch] = SparseGenerator((wi @ m @ w).tocsr(), epoch)
        return self._cache[epoch]

    def apply(self, rho, t=None, epoch=None):
        x = np.asarray(getattr(rho, "values", rho))
        epoch = epoch or (self.epoch_at(t) if t is not None else "pre")
        return self.sparse(epoch) @ x

    def norm_bound(self, epoch="pre"):
        return float(np.abs(self.sparse(epoch).matrix).sum(axis=1).max())
