"""Metropolis estimation of the variational sums.

The chain targets ``pi(s) ~ |rho(s)|^2`` over retained configurations. Each
proposal flips two bits, so total parity is conserved: either one bit of
``n`` and one of ``n'``, or one dissipaton bit together with one system bit.
Every move is its own inverse and is drawn with the same probability in both
directions, so the proposal kernel is symmetric. Proposals beyond the tier
bound are rejected.

Local estimators ``O(s) = grad rho(s) / rho(s)`` and ``l(s) = (L rho)(s) / rho(s)``
give ``S = E[Re(O^H O)]``, ``F = E[Re(O^H l)]`` and ``|L rho|^2 / Z = E|l|^2``.
Because ``pi`` is invariant under the conjugation partner map, each sample
is counted half at itself and half at its partner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimatorError, SamplerError


@dataclass
class SampleSet:
    """Chain output.

    Attributes
    ----------
    words : (n_steps, n_chains) int64
        Packed configurations, time major.
    acceptance : float
    seed : int
    autocorr_time : float
        Integrated autocorrelation time (in steps) of the tier, a cheap
        mixing diagnostic.
    """

    words: np.ndarray
    acceptance: float
    seed: int
    autocorr_time: float

    @property
    def n_samples(self):
        return self.words.size

    def counts(self):
        """Unique configurations and multiplicities."""
        return np.unique(self.words.ravel(), return_counts=True)


def _bits_to_words(bits):
    return (bits.astype(np.int64) << np.arange(bits.shape[1], dtype=np.int64)).sum(1)


def _autocorr_time(x, max_lag=200):
    x = np.asarray(x, dtype=float)
    x = x - x.mean(axis=0)
    var = np.mean(x * x)
    if var == 0:
        return 0.0
    tau = 1.0
    for lag in range(1, min(max_lag, len(x) // 4)):
        c = np.mean(x[:-lag] * x[lag:]) / var
        if c <= 0:
            break
        tau += 2 * c
    return float(tau)


def metropolis_sample(ansatz, space, n_samples, n_burn=None, seed=0, n_chains=16, max_retries=100):
    """Draw ``n_samples`` configurations with probability ``~ |rho(s)|^2``.

    Parameters
    ----------
    ansatz : object
        Provides ``values(bits)``.
    space : SpaceIndex
        Supplies sizes, the tier bound and the parity filter.
    n_samples : int
        Total over all chains (rounded up to a multiple of ``n_chains``).
    n_burn : int, optional
        Steps discarded per chain; defaults to ten times the visible bit count.
    seed : int
    n_chains : int
        Independent chains advanced together.
    max_retries : int
        Random diagonal starting points tried per chain.

    Returns
    -------
    SampleSet
    """
    rng = np.random.default_rng(seed)
    ns, ne, L = space.n_sys, space.n_diss, space.max_tier
    nbits = space.n_bits
    if n_burn is None:
        n_burn = 10 * nbits
    n_steps = -(-int(n_samples) // n_chains)

    # start on diagonal system configurations with nonzero amplitude
    diag = space.bits(space.words[space.diagonal_ranks()])
    dv = np.abs(ansatz.values(diag))
    support = np.nonzero(dv > 0)[0]
    if len(support) == 0:
        cand = space.bits(space.words[rng.integers(0, space.count, size=max_retries)])
        cv = np.abs(ansatz.values(cand))
        if not np.any(cv > 0):
            raise SamplerError("no configuration with nonzero amplitude found")
        state = np.repeat(cand[np.argmax(cv)][None], n_chains, axis=0)
    else:
        state = diag[support[rng.integers(0, len(support), size=n_chains)]].copy()
    prob = np.abs(ansatz.values(state)) ** 2

    out = np.empty((n_steps, n_chains), dtype=np.int64)
    accepted = 0
    rows = np.arange(n_chains)
    for step in range(n_burn + n_steps):
        prop = state.copy()
        kind = rng.random(n_chains) < 0.5 if ne else np.ones(n_chains, dtype=bool)
        # move (i): one bit of n and one of n'
        i1 = rng.integers(0, ns, size=n_chains)
        i2 = ns + rng.integers(0, ns, size=n_chains)
        # move (ii): one dissipaton bit and one system bit
        j1 = 2 * ns + rng.integers(0, max(ne, 1), size=n_chains)
        j2 = rng.integers(0, 2 * ns, size=n_chains)
        a = np.where(kind, i1, j1)
        b = np.where(kind, i2, j2)
        prop[rows, a] ^= 1
        prop[rows, b] ^= 1
        ok = prop[:, 2 * ns:].sum(1) <= L
        pv = np.zeros(n_chains)
        if np.any(ok):
            pv[ok] = np.abs(ansatz.values(prop[ok])) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(prob > 0, pv / prob, 1.0)
        acc = ok & (rng.random(n_chains) < ratio) & (pv > 0)
        state[acc] = prop[acc]
        prob[acc] = pv[acc]
        if step >= n_burn:
            accepted += int(acc.sum())
            out[step - n_burn] = _bits_to_words(state)
    tiers = np.bitwise_count((out >> (2 * ns)).astype(np.uint64)).astype(float)
    tau = _autocorr_time(tiers)
    return SampleSet(out, accepted / out.size, int(seed), tau)


def _local_data(ansatz, gen, words, epoch):
    """Values, Jacobian and ``(L rho)`` at the given configurations."""
    space = gen.space
    ranks = space.rank(words)
    if np.any(ranks < 0):
        raise EstimatorError("sample outside the retained space")
    mat = gen.sparse(epoch).matrix[ranks]
    cols = np.unique(mat.indices)
    colvals = ansatz.values(space.bits(space.words[cols]))
    full = np.zeros(space.count, dtype=complex)
    full[cols] = colvals
    lrho = mat @ full
    values, J = ansatz.values_and_jacobian(space.bits(words))
    if np.any(values == 0):
        raise EstimatorError("zero amplitude at a sampled configuration")
    return values, J, lrho


def estimate_moments(samples, ansatz, gen, epoch="pre", n_batches=20):
    """Sampled normal equations with batch-means standard errors.

    Returns
    -------
    NormalEquations
        ``mode="sampled"``; ``S_err``, ``F_err`` and ``lrho2_err`` are set.
    """
    from .tdvp import NormalEquations

    w = samples.words
    if w.size == 0:
        raise EstimatorError("empty sample set")
    space = gen.space
    partner, _ = space.partner_words(w.ravel())
    allw = np.concatenate([w.ravel(), partner])
    uniq, inv = np.unique(allw, return_inverse=True)
    values, J, lrho = _local_data(ansatz, gen, uniq, epoch)
    O = J / values[:, None]
    ell = lrho / values
    n_steps = w.shape[0]
    n_batches = max(2, min(n_batches, n_steps))
    edges = np.linspace(0, n_steps, n_batches + 1).astype(int)
    idx = inv[: w.size].reshape(w.shape)
    pidx = inv[w.size:].reshape(w.shape)
    Ss, Fs, Ls = [], [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        c = np.bincount(idx[lo:hi].ravel(), minlength=len(uniq)).astype(float)
        c += np.bincount(pidx[lo:hi].ravel(), minlength=len(uniq))
        p = c / c.sum()
        Or = O * np.sqrt(p)[:, None]
        Ss.append(Or.real.T @ Or.real + Or.imag.T @ Or.imag)
        Fs.append(O.real.T @ (p * ell.real) + O.imag.T @ (p * ell.imag))
        Ls.append(float(p @ np.abs(ell) ** 2))
    Ss, Fs, Ls = np.array(Ss), np.array(Fs), np.array(Ls)
    sizes = np.diff(edges).astype(float)
    wts = sizes / sizes.sum()
    S = np.tensordot(wts, Ss, axes=1)
    F = wts @ Fs
    lr = float(wts @ Ls)
    k = len(wts)
    se = lambda a, m: np.sqrt(np.tensordot(wts, (a - m) ** 2, axes=1) * k / (k - 1) / k)
    ne = NormalEquations(S, F, lr, "sampled", S_err=se(Ss, S), F_err=se(Fs, F),
                         lrho2_err=float(se(Ls, lr)))
    ne.extra.update(acceptance=samples.acceptance, autocorr_time=samples.autocorr_time,
                    n_unique=len(uniq))
    return ne


def empirical_distribution(samples, space, symmetrize=False):
    """Empirical frequencies over space ranks."""
    words = samples.words.ravel()
    c = np.bincount(space.rank(words), minlength=space.count).astype(float)
    if symmetrize:
        pr, _ = space.partner_ranks()
        c = 0.5 * (c + c[pr])
    return c / c.sum()


def exact_distribution(ansatz, space):
    p = np.abs(ansatz.values(space.bits())) ** 2
    return p / p.sum()
