"""Configuration space of the reduced density tensor.

A visible state ``s = (n, n'; m-, m+)`` is packed into one integer word. Bit
order, lowest first: ``n`` (orbitals ``0..Ns-1``), ``n'``, ``m-`` (mode order of
the dissipaton set), ``m+``. ``m-`` labels the ket-side dissipaton
occupations and ``m+`` the bra-side ones, so ``N_E = len(m-) + len(m+)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import CapacityError, DimensionError

MAX_BITS = 62
MAX_CONFIGS = 50_000_000


def popcount(words):
    return np.bitwise_count(np.asarray(words, dtype=np.int64).astype(np.uint64)).astype(np.int64)


@dataclass(frozen=True)
class Config:
    n: tuple
    n_prime: tuple
    m_minus: tuple
    m_plus: tuple

    def __post_init__(self):
        for name in ("n", "n_prime", "m_minus", "m_plus"):
            v = tuple(int(x) for x in getattr(self, name))
            if any(x not in (0, 1) for x in v):
                raise ValueError(f"{name} must be a 0/1 vector")
            object.__setattr__(self, name, v)
        if len(self.n) != len(self.n_prime) or len(self.m_minus) != len(self.m_plus):
            raise DimensionError("ket/bra halves must have equal length")

    @property
    def tier(self):
        return sum(self.m_minus) + sum(self.m_plus)

    def parity(self):
        return (sum(self.n) + sum(self.n_prime) + self.tier) % 2

    def pack(self):
        bits = self.n + self.n_prime + self.m_minus + self.m_plus
        return sum(b << i for i, b in enumerate(bits))

    @classmethod
    def unpack(cls, word, n_sys, n_diss):
        if n_diss % 2:
            raise DimensionError("N_E must be even (ket and bra halves)")
        word = int(word)
        bits = [(word >> i) & 1 for i in range(2 * n_sys + n_diss)]
        m = n_diss // 2
        return cls(tuple(bits[:n_sys]), tuple(bits[n_sys:2 * n_sys]),
                   tuple(bits[2 * n_sys:2 * n_sys + m]), tuple(bits[2 * n_sys + m:]))


def passes_filter(s, max_tier, parity_filter=True):
    """Zero-value terminator plus optional fermion-parity superselection."""
    if s.tier > max_tier:
        return False
    return not (parity_filter and s.parity())


def conjugate_partner(s):
    """Partner config of the Hermitian-type symmetry and its sign."""
    sign = (-1) ** (sum(s.m_minus) // 2 + sum(s.m_plus) // 2)
    return Config(s.n_prime, s.n, s.m_plus, s.m_minus), sign


def unfiltered_count(n_sys, n_diss, max_tier):
    return 4**n_sys * sum(comb(n_diss, k) for k in range(min(max_tier, n_diss) + 1))


def rdt_size_estimate(n_sys, n_diss, max_tier):
    """Asymptotic component count ``4**Ns * N_E**L``."""
    return 4**n_sys * n_diss**max_tier


class SpaceIndex:
    """Bijection between retained configurations and ranks ``0..count-1``.

    Ranks follow ascending packed word. The object is immutable after
    construction.
    """

    def __init__(self, n_sys, n_diss, max_tier, parity_filter=True, max_configs=MAX_CONFIGS):
        if n_sys < 1 or n_diss < 0 or max_tier < 0:
            raise ValueError("need n_sys >= 1, n_diss >= 0, max_tier >= 0")
        if n_diss % 2:
            raise DimensionError("N_E must be even (ket and bra halves)")
        if 2 * n_sys + n_diss > MAX_BITS:
            raise CapacityError(f"{2 * n_sys + n_diss} visible bits exceed {MAX_BITS}")
        total = unfiltered_count(n_sys, n_diss, max_tier)
        if total > max_configs:
            raise CapacityError(f"{total} configurations exceed the limit {max_configs}")
        self.n_sys = n_sys
        self.n_diss = n_diss
        self.n_modes = n_diss // 2
        self.max_tier = max_tier
        self.parity_filter = parity_filter
        self.n_bits = 2 * n_sys + n_diss
        self.unfiltered_count = total

        sys_words = np.arange(4**n_sys, dtype=np.int64)
        patterns = [0]
        for k in range(1, min(max_tier, n_diss) + 1):
            for pos in itertools.combinations(range(n_diss), k):
                patterns.append(sum(1 << p for p in pos))
        patterns = np.array(patterns, dtype=np.int64) << (2 * n_sys)
        words = (sys_words[None, :] | patterns[:, None]).ravel()
        if parity_filter:
            words = words[popcount(words) % 2 == 0]
        words.sort()
        words.setflags(write=False)
        self.words = words

    @property
    def count(self):
        return len(self.words)

    def __len__(self):
        return len(self.words)

    def __repr__(self):
        return (f"SpaceIndex(n_sys={self.n_sys}, n_diss={self.n_diss}, L={self.max_tier}, "
                f"parity_filter={self.parity_filter}, count={self.count})")

    def rank(self, words):
        """Ranks of packed words; ``-1`` where the word is not retained."""
        w = np.asarray(words, dtype=np.int64)
        idx = np.searchsorted(self.words, w)
        idx = np.minimum(idx, len(self.words) - 1)
        return np.where(self.words[idx] == w, idx, -1)

    def rank_of(self, s):
        r = int(self.rank(s.pack()))
        if r < 0:
            raise KeyError(f"{s} is not in the retained space")
        return r

    def config(self, r):
        return Config.unpack(self.words[r], self.n_sys, self.n_diss)

    # field extraction on packed words
    def ket_sys(self, w):
        return w & ((1 << self.n_sys) - 1)

    def bra_sys(self, w):
        return (w >> self.n_sys) & ((1 << self.n_sys) - 1)

    def m_minus(self, w):
        return (w >> (2 * self.n_sys)) & ((1 << self.n_modes) - 1)

    def m_plus(self, w):
        return (w >> (2 * self.n_sys + self.n_modes)) & ((1 << self.n_modes) - 1)

    def ket_word(self, w):
        """Extended-space ket occupation word: orbitals then ket-side modes."""
        return self.ket_sys(w) | (self.m_minus(w) << self.n_sys)

    def bra_word(self, w):
        return self.bra_sys(w) | (self.m_plus(w) << self.n_sys)

    def join(self, ket, bra):
        """Inverse of (:meth:`ket_word`, :meth:`bra_word`)."""
        ns, nm = self.n_sys, self.n_modes
        sys_mask = (1 << ns) - 1
        return ((ket & sys_mask) | ((bra & sys_mask) << ns)
                | ((ket >> ns) << (2 * ns)) | ((bra >> ns) << (2 * ns + nm)))

    def tiers(self, w=None):
        w = self.words if w is None else w
        return popcount(w >> (2 * self.n_sys))

    def partner_words(self, w=None):
        """Partner words and signs ``(-1)**(floor(M-/2) + floor(M+/2))``."""
        w = self.words if w is None else np.asarray(w, dtype=np.int64)
        mm, mp = self.m_minus(w), self.m_plus(w)
        pw = self.join(self.bra_word(w), self.ket_word(w))
        sign = 1 - 2 * ((popcount(mm) // 2 + popcount(mp) // 2) % 2)
        return pw, sign

    def partner_ranks(self):
        pw, sign = self.partner_words()
        return self.rank(pw), sign

    def bits(self, w=None):
        """Visible 0/1 matrix of shape ``(len(w), n_bits)`` in packing order."""
        w = self.words if w is None else np.asarray(w, dtype=np.int64)
        return ((w[:, None] >> np.arange(self.n_bits)) & 1).astype(np.int8)

    def diagonal_ranks(self):
        """Ranks of ``(n, n; 0, 0)`` for every system Fock state ``n``."""
        n = np.arange(2**self.n_sys, dtype=np.int64)
        return self.rank(n | (n << self.n_sys))
