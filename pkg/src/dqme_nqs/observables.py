"""Physical readouts from a reduced density tensor.

Currents are inflow-positive: ``I_alpha > 0`` when electrons enter the system
from reservoir ``alpha``. With ``A_j`` the system-operator slice of the
ket-side first-tier component of mode ``j``,

    z_alpha = sum_{j in alpha} tr[c_nu(j)^dagger A_j]
    I_alpha = 2 Im z_alpha,     E_hyb = 2 Re sum_alpha z_alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import logging

import numpy as np

from .errors import DimensionError, GaugeError, PositivityError, UnsupportedError
from .models import system_operators

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "I_L", "I_R", "n_up", "n_dn", "S12", "SvN", "Ehyb", "trace", "ds2")


@dataclass
class RdtVector:
    """Complex tensor components indexed by the ranks of ``space``."""

    values: np.ndarray
    space: object
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.space.count,):
            raise DimensionError(f"expected {self.space.count} components, got {self.values.shape}")

    def copy(self):
        return RdtVector(self.values.copy(), self.space, self.t)


@lru_cache(maxsize=32)
def _tier_ranks(space):
    ns = space.n_sys
    dim = 2**ns
    n = np.arange(dim, dtype=np.int64)
    ket, bra = np.meshgrid(n, n, indexing="ij")
    base = ket | (bra << ns)
    tier0 = space.rank(base)
    tier1 = np.stack([space.rank(base | np.int64(1 << (2 * ns + j))) for j in range(space.n_modes)]) \
        if space.n_modes else np.zeros((0, dim, dim), dtype=np.int64)
    ket_parity = 1 - 2 * (np.vectorize(lambda k: bin(k).count("1"))(ket) % 2)
    return tier0, tier1, ket_parity


def _gather(values, ranks):
    out = np.zeros(ranks.shape, dtype=complex)
    ok = ranks >= 0
    out[ok] = values[ranks[ok]]
    return out


def system_block(rho):
    """System density matrix ``rho0[n, n']`` (dissipaton vacuum), unnormalized."""
    tier0, _, _ = _tier_ranks(rho.space)
    return _gather(rho.values, tier0)


def trace(rho):
    return complex(np.trace(system_block(rho)))


def normalized_block(rho):
    tr = trace(rho)
    if abs(tr) < 1e-14:
        raise GaugeError("system-block trace vanishes")
    return system_block(rho) / tr


def first_tier(rho, j):
    """System-operator slice ``A_j`` of the ket-side first-tier component."""
    _, tier1, parity = _tier_ranks(rho.space)
    return parity * _gather(rho.values, tier1[j])


def occupancy(rho, nu):
    ops = system_operators(rho.space.n_sys)
    return float(np.real(np.trace(ops.n[nu] @ normalized_block(rho))))


def _z(rho, dissipatons, reservoir=None):
    if rho.space.max_tier < 1:
        raise UnsupportedError("first-tier components are required (L >= 1)")
    ops = system_operators(rho.space.n_sys)
    tr = trace(rho)
    if abs(tr) < 1e-14:
        raise GaugeError("system-block trace vanishes")
    z = 0j
    for j, mode in enumerate(dissipatons):
        if reservoir is None or mode.reservoir == reservoir:
            z += np.sum(ops.cdag[mode.orbital].T * first_tier(rho, j))
    return z / tr


def current(rho, dissipatons, reservoir):
    """Particle current into the system from ``reservoir`` (inflow positive)."""
    return float(2.0 * np.imag(_z(rho, dissipatons, reservoir)))


def hybridization_energy(rho, dissipatons):
    """Expectation value of the system-reservoir coupling Hamiltonian."""
    return float(2.0 * np.real(_z(rho, dissipatons)))


def spin_correlation(rho):
    if rho.space.n_sys != 4:
        raise DimensionError("spin correlation needs two impurities (4 spin orbitals)")
    s12 = system_operators(4).spin_dot(0, 1)
    return float(np.real(np.trace(s12 @ normalized_block(rho))))


def entropy_vn(rho, positivity_tol=1e-6):
    """Von Neumann entropy (natural log) of the normalized system block."""
    block = rho if isinstance(rho, np.ndarray) else normalized_block(rho)
    block = 0.5 * (block + block.conj().T)
    block = block / np.trace(block).real
    p = np.linalg.eigvalsh(block)
    if p.min() < -positivity_tol:
        raise PositivityError(f"system block has eigenvalue {p.min():.3e}")
    if p.min() < 0:
        log.debug("clipping eigenvalue defect %.3e", p.min())
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def integral_error(t_test, y_test, t_ref, y_ref, t_start=None, t_end=None):
    """``int |O_test - O_ref| dt / int |O_ref| dt`` by the trapezoidal rule.

    The test series is linearly interpolated onto the reference grid.
    """
    t_ref = np.asarray(t_ref, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float)
    y_test = np.interp(t_ref, np.asarray(t_test, dtype=float), np.asarray(y_test, dtype=float))
    lo = t_ref[0] if t_start is None else t_start
    hi = t_ref[-1] if t_end is None else t_end
    sel = (t_ref >= lo - 1e-12) & (t_ref <= hi + 1e-12)
    num = np.trapezoid(np.abs(y_test[sel] - y_ref[sel]), t_ref[sel])
    den = np.trapezoid(np.abs(y_ref[sel]), t_ref[sel])
    if den == 0:
        raise ZeroDivisionError("reference series integrates to zero")
    return float(num / den)


@dataclass
class ObservableRecord:
    t: float
    trace: float
    I_L: float | None = None
    I_R: float | None = None
    n: tuple = ()
    S12: float | None = None
    SvN: float | None = None
    Ehyb: float | None = None
    ds2: float | None = None
    extra: dict = field(default_factory=dict)

    def row(self):
        """Values in :data:`CSV_COLUMNS` order (``None`` for absent fields)."""
        n_up = self.n[0] if len(self.n) > 0 else None
        n_dn = self.n[1] if len(self.n) > 1 else None
        return (self.t, self.I_L, self.I_R, n_up, n_dn, self.S12, self.SvN,
                self.Ehyb, self.trace, self.ds2)


class Observer:
    """Callable producing an :class:`ObservableRecord` for a state at time ``t``.

    Parameters
    ----------
    dissipatons : DissipatonSet
    positivity_tol : float
        Passed to :func:`entropy_vn`. Variational states are not exactly
        positive, so their observers use a loose value; the clipped defect is
        kept in ``record.extra["min_eig"]``.
    """

    def __init__(self, dissipatons, positivity_tol=1e-6):
        self.dissipatons = dissipatons
        self.reservoirs = sorted(set(dissipatons.reservoirs))
        self.positivity_tol = positivity_tol

    def __call__(self, t, rho):
        if not isinstance(rho, RdtVector):
            raise TypeError("observer expects an RdtVector")
        ns = rho.space.n_sys
        tr = trace(rho)
        rec = ObservableRecord(t=float(t), trace=float(tr.real))
        rec.n = tuple(occupancy(rho, nu) for nu in range(ns))
        block = normalized_block(rho)
        rec.SvN = entropy_vn(block, self.positivity_tol)
        rec.extra["min_eig"] = float(np.linalg.eigvalsh(0.5 * (block + block.conj().T))[0])
        if rho.space.max_tier >= 1 and len(self.dissipatons):
            currents = {a: current(rho, self.dissipatons, a) for a in self.reservoirs}
            rec.I_L = currents.get("L")
            rec.I_R = currents.get("R")
            rec.extra["currents"] = currents
            rec.Ehyb = hybridization_energy(rho, self.dissipatons)
        if ns == 4:
            rec.S12 = spin_correlation(rho)
        return rec
