"""System Hamiltonians and fermionic operators in the system Fock basis.

Basis state ``k`` has orbital ``nu`` occupied when bit ``nu`` of ``k`` is set.
Jordan-Wigner strings run over lower-numbered orbitals. Spin orbitals are
ordered (impurity 1 up, impurity 1 down, impurity 2 up, impurity 2 down).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bath import ReservoirSpec

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def annihilation(n_orb, nu):
    dim = 2**n_orb
    c = np.zeros((dim, dim), dtype=complex)
    for k in range(dim):
        if k >> nu & 1:
            sign = (-1) ** bin(k & ((1 << nu) - 1)).count("1")
            c[k ^ (1 << nu), k] = sign
    return c


@dataclass(frozen=True)
class SystemOperators:
    n_orb: int
    c: tuple
    cdag: tuple
    n: tuple

    @property
    def dim(self):
        return 2**self.n_orb

    @property
    def number(self):
        return sum(self.n)

    def spin(self, impurity):
        """Spin vector ``(Sx, Sy, Sz)`` of impurity ``impurity`` (0-based)."""
        up, dn = 2 * impurity, 2 * impurity + 1
        ops = (self.cdag[up], self.cdag[dn])
        ann = (self.c[up], self.c[dn])
        out = []
        for axis in "xyz":
            s = np.zeros((self.dim, self.dim), dtype=complex)
            for a in range(2):
                for b in range(2):
                    if PAULI[axis][a, b] != 0:
                        s += 0.5 * PAULI[axis][a, b] * ops[a] @ ann[b]
            out.append(s)
        return tuple(out)

    def spin_dot(self, i=0, j=1):
        si, sj = self.spin(i), self.spin(j)
        return sum(a @ b for a, b in zip(si, sj))


@lru_cache(maxsize=None)
def system_operators(n_orb):
    if n_orb > 12:
        raise ValueError("dense system operators are limited to 12 orbitals")
    c = tuple(annihilation(n_orb, nu) for nu in range(n_orb))
    cdag = tuple(x.conj().T for x in c)
    n = tuple(cd @ x for cd, x in zip(cdag, c))
    for arr in c + cdag + n:
        arr.setflags(write=False)
    return SystemOperators(n_orb, c, cdag, n)


@dataclass(frozen=True)
class AndersonSpec:
    """Single-impurity Anderson model with a level/interaction quench at ``t0``.

    A bias ``V`` is applied at ``t0`` as ``mu_L = +V/2``, ``mu_R = -V/2``.
    """

    eps0: float = 2.0
    U0: float = 4.0
    d_eps: float = -7.0
    d_U: float = 6.0
    t0: float = 0.0
    bias: float = 0.2
    n_orb = 2

    def hamiltonian(self, t):
        ops = system_operators(2)
        post = t >= self.t0
        eps = self.eps0 + (self.d_eps if post else 0.0)
        U = self.U0 + (self.d_U if post else 0.0)
        return eps * (ops.n[0] + ops.n[1]) + U * ops.n[0] @ ops.n[1]

    def reservoirs(self, temperature, coupling=1.0, bandwidth=10.0):
        return (
            ReservoirSpec("L", temperature, coupling, bandwidth, 0.0, (0, 1)),
            ReservoirSpec("R", temperature, coupling, bandwidth, 0.0, (0, 1)),
        )

    def post_quench_shifts(self):
        return {"L": 0.5 * self.bias, "R": -0.5 * self.bias}


@dataclass(frozen=True)
class TwoImpuritySpec:
    """Two Anderson impurities with a ferromagnetic exchange switched on at ``t0``."""

    eps0: float = -6.0
    U0: float = 12.0
    J: float = 8.0
    t0: float = 0.0
    n_orb = 4

    def hamiltonian(self, t):
        ops = system_operators(4)
        h = np.zeros((16, 16), dtype=complex)
        for imp in range(2):
            up, dn = ops.n[2 * imp], ops.n[2 * imp + 1]
            h += self.eps0 * (up + dn) + self.U0 * up @ dn
        if t >= self.t0:
            h -= self.J * ops.spin_dot(0, 1)
        return h

    def reservoirs(self, temperature, coupling=1.0, bandwidth=10.0):
        return (ReservoirSpec("E", temperature, coupling, bandwidth, 0.0, (0, 1, 2, 3)),)

    def post_quench_shifts(self):
        return {}


def build_system_hamiltonian(spec, t):
    return spec.hamiltonian(t)
