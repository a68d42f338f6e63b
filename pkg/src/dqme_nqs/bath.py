"""Exponential decomposition of fermionic hybridization correlation functions.

Each reservoir has a Lorentzian hybridization

    Gamma(w) = Gamma * W**2 / ((w - mu)**2 + W**2)

and correlation functions

    C+(t) = 1/(2 pi) int dw exp(+i w t) Gamma(w) f(w - mu)
    C-(t) = 1/(2 pi) int dw exp(-i w t) Gamma(w) (1 - f(w - mu))

which are expanded as ``sum_j eta_j exp(-gamma_j t)``. Every pole of the
integrand closed in the relevant half plane gives one dissipaton mode: the
Lorentzian pole at ``mu +/- iW`` and ``P`` poles of the (approximated) Fermi
function. The two signs of one mode always satisfy
``gamma_plus == conj(gamma_minus)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate
from scipy.linalg import eigh_tridiagonal

from .errors import DecompositionError, OracleError

SCHEMES = ("pade", "matsubara")


@dataclass(frozen=True)
class ReservoirSpec:
    """One electron reservoir (lead) with a Lorentzian band."""

    label: str
    temperature: float
    coupling: float = 1.0
    bandwidth: float = 10.0
    chemical_potential: float = 0.0
    orbitals: tuple = (0,)

    def __post_init__(self):
        if not self.coupling > 0:
            raise ValueError(f"coupling must be positive, got {self.coupling}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        object.__setattr__(self, "orbitals", tuple(int(o) for o in self.orbitals))

    def linewidth(self, omega):
        d = np.asarray(omega) - self.chemical_potential
        return self.coupling * self.bandwidth**2 / (d**2 + self.bandwidth**2)


@dataclass(frozen=True)
class DissipatonMode:
    reservoir: str
    orbital: int
    eta_plus: complex
    eta_minus: complex
    gamma_plus: complex
    gamma_minus: complex
    kind: str = "spectral-pole"

    def __post_init__(self):
        vals = (self.eta_plus, self.eta_minus, self.gamma_plus, self.gamma_minus)
        if not all(np.isfinite(complex(v)) for v in vals):
            raise DecompositionError(f"non-finite mode parameters: {vals}")
        if self.gamma_plus.real <= 0 or self.gamma_minus.real <= 0:
            raise DecompositionError("dissipaton rates must have positive real part")

    def eta(self, sigma):
        return self.eta_plus if sigma > 0 else self.eta_minus

    def gamma(self, sigma):
        return self.gamma_plus if sigma > 0 else self.gamma_minus


@dataclass(frozen=True)
class DissipatonSet:
    """Ordered collection of dissipaton modes, slowest decay first."""

    modes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        ordered = sorted(self.modes, key=lambda m: m.gamma_minus.real)
        object.__setattr__(self, "modes", tuple(ordered))

    def __len__(self):
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __getitem__(self, j):
        return self.modes[j]

    @property
    def n_states(self):
        """Number of single-dissipaton states (one per mode and sign)."""
        return 2 * len(self.modes)

    @property
    def orbitals(self):
        return np.array([m.orbital for m in self.modes], dtype=int)

    @property
    def reservoirs(self):
        return tuple(m.reservoir for m in self.modes)

    def select(self, reservoir=None, orbital=None):
        keep = [
            m for m in self.modes
            if (reservoir is None or m.reservoir == reservoir)
            and (orbital is None or m.orbital == orbital)
        ]
        return DissipatonSet(tuple(keep))

    def correlation(self, sigma, t):
        """Sum of exponentials ``sum_j eta_j^sigma exp(-gamma_j^sigma t)``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for m in self.modes:
            out += m.eta(sigma) * np.exp(-m.gamma(sigma) * t)
        return out

    def shifted(self, shifts):
        """Rigidly shift reservoir energies by ``shifts[label]``.

        A uniform shift ``delta`` of all lead levels (band centre and chemical
        potential together) multiplies ``C^sigma(t)`` by ``exp(sigma i delta t)``,
        which only moves the rates: ``gamma^sigma -> gamma^sigma - sigma i delta``.
        """
        out = []
        for m in self.modes:
            d = float(shifts.get(m.reservoir, 0.0))
            out.append(replace(m, gamma_plus=m.gamma_plus - 1j * d,
                               gamma_minus=m.gamma_minus + 1j * d))
        return DissipatonSet(tuple(out))

    def __add__(self, other):
        return DissipatonSet(self.modes + tuple(other.modes))


def fermi(x, temperature):
    """Fermi function of the energy ``x`` measured from the chemical potential."""
    return 0.5 * (1.0 - np.tanh(np.asarray(x) / (2.0 * temperature)))


def pade_poles(n_poles):
    """Poles ``xi`` and residues ``kappa`` of the [N-1/N] Pade Fermi expansion.

    The approximant is ``f(x) ~ 1/2 - sum_p 2 kappa_p y / (y**2 + xi_p**2)`` with
    ``y = x / T``. Poles follow from the eigenvalues of the symmetric
    tridiagonal matrix with off-diagonal ``1/sqrt((2m+1)(2m+3))``; the residues
    from a second matrix with off-diagonal ``1/sqrt((2m+3)(2m+5))``.
    """
    n = int(n_poles)
    if n < 0:
        raise ValueError("pole count must be non-negative")
    if n == 0:
        return np.zeros(0), np.zeros(0)
    m = np.arange(2 * n - 1)
    off = 1.0 / np.sqrt((2 * m + 1) * (2 * m + 3))
    try:
        lam = eigh_tridiagonal(np.zeros(2 * n), off, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"Pade eigenproblem failed: {exc}") from exc
    xi = np.sort(2.0 / lam[lam > 0])
    if n > 1:
        m2 = np.arange(2 * n - 2)
        off2 = 1.0 / np.sqrt((2 * m2 + 3) * (2 * m2 + 5))
        lam2 = eigh_tridiagonal(np.zeros(2 * n - 1), off2, eigvals_only=True)
        zeta = np.sort(2.0 / lam2[lam2 > 1e-14])
    else:
        zeta = np.zeros(0)
    if len(xi) != n or len(zeta) != n - 1:
        raise DecompositionError("Pade eigenproblem returned an unexpected spectrum")
    kappa = np.empty(n)
    for j in range(n):
        num = np.prod(zeta**2 - xi[j] ** 2)
        den = np.prod(np.delete(xi, j) ** 2 - xi[j] ** 2)
        kappa[j] = 0.5 * n * (2 * n + 1) * num / den
    if not (np.all(np.isfinite(kappa)) and np.all(np.isfinite(xi))):
        raise DecompositionError("Pade residues are not finite")
    return xi, kappa


def matsubara_poles(n_poles):
    k = np.arange(1, int(n_poles) + 1)
    return (2 * k - 1) * np.pi, np.ones(len(k))


def fermi_approx(x, temperature, xi, kappa):
    """Evaluate the pole-expansion approximant of the Fermi function."""
    y = np.asarray(x, dtype=complex) / temperature
    out = 0.5 + 0j * y
    for x_p, k_p in zip(xi, kappa):
        out = out - 2 * k_p * y / (y**2 + x_p**2)
    return out


def decompose(spec, scheme="pade", n_poles=2):
    """Exponential decomposition of one reservoir's correlation functions.

    Returns a :class:`DissipatonSet` with, for every coupled orbital, one
    Lorentzian-pole mode and ``n_poles`` Fermi-pole modes.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if n_poles < 0:
        raise ValueError("pole count must be non-negative")
    T, W, G, mu = spec.temperature, spec.bandwidth, spec.coupling, spec.chemical_potential
    xi, kappa = pade_poles(n_poles) if scheme == "pade" else matsubara_poles(n_poles)

    terms = [(0.5 * G * W * complex(fermi_approx(1j * W, T, xi, kappa)), W, "spectral-pole")]
    for x_p, k_p in zip(xi, kappa):
        rate = x_p * T
        if abs(W**2 - rate**2) < 1e-12 * W**2:
            raise DecompositionError("Fermi pole coincides with the Lorentzian pole")
        terms.append((-1j * k_p * T * G * W**2 / (W**2 - rate**2), rate, "fermi-pole"))

    modes = []
    for orb in spec.orbitals:
        for eta, rate, kind in terms:
            modes.append(DissipatonMode(
                reservoir=spec.label, orbital=orb,
                eta_plus=complex(eta), eta_minus=complex(eta),
                gamma_plus=complex(rate - 1j * mu), gamma_minus=complex(rate + 1j * mu),
                kind=kind,
            ))
    return DissipatonSet(tuple(modes))


def decompose_all(specs, scheme="pade", n_poles=2):
    out = DissipatonSet()
    for s in specs:
        p = n_poles[s.label] if isinstance(n_poles, dict) else n_poles
        out = out + decompose(s, scheme, p)
    return out


def reference_correlation(spec, sigma, t, rtol=1e-10):
    """Correlation function ``C^sigma(t)`` by adaptive quadrature.

    With ``x = w - mu`` both signs reduce to
    ``exp(sigma i mu t) / (2 pi) * int dx exp(i x t) Gamma0(x) f(x)``; the
    integral is split into even (cosine) and odd (sine) parts on ``[0, inf)``.
    """
    if t < 0:
        raise ValueError("reference correlation is defined for t >= 0")
    T, W, G = spec.temperature, spec.bandwidth, spec.coupling

    def g(x):
        return G * W**2 / (x**2 + W**2) * fermi(x, T)

    def even(x):
        return g(x) + g(-x)

    def odd(x):
        return g(x) - g(-x)

    scale = G * W
    tol = rtol * scale
    with np.errstate(all="ignore"):
        if t == 0:
            re, err_re = integrate.quad(even, 0, np.inf, epsabs=tol, epsrel=rtol, limit=500)
            im, err_im = 0.0, 0.0
        else:
            re, err_re = integrate.quad(even, 0, np.inf, weight="cos", wvar=t,
                                        epsabs=tol, limlst=200, limit=500)
            im, err_im = integrate.quad(odd, 0, np.inf, weight="sin", wvar=t,
                                        epsabs=tol, limlst=200, limit=500)
    if not (np.isfinite(re) and np.isfinite(im)) or max(err_re, err_im) > 100 * tol:
        raise OracleError(f"quadrature did not converge at t={t} (err={max(err_re, err_im)})")
    phase = np.exp(1j * sigma * spec.chemical_potential * t)
    return complex(phase * (re + 1j * im) / (2 * np.pi))


@dataclass(frozen=True)
class DecompositionErrorReport:
    max_abs: dict
    l2: dict

    def worst(self):
        return max(self.max_abs.values())


def decomposition_error(dset, spec, grid, reference=None):
    """Deviation of the exponential sum from the reference correlation.

    ``reference(sigma, t)`` defaults to :func:`reference_correlation`. Only the
    modes of ``spec.label`` on its first coupled orbital are summed.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0 or np.any(grid < 0):
        raise ValueError("grid must be non-empty with non-negative times")
    if reference is None:
        def reference(sigma, t):
            return reference_correlation(spec, sigma, t)
    sub = dset.select(reservoir=spec.label, orbital=spec.orbitals[0])
    max_abs, l2 = {}, {}
    for sigma, key in ((1, "+"), (-1, "-")):
        ref = np.array([reference(sigma, t) for t in grid])
        dev = np.abs(sub.correlation(sigma, grid) - ref)
        max_abs[key] = float(dev.max())
        l2[key] = float(np.sqrt(np.sum(dev**2)))
    return DecompositionErrorReport(max_abs, l2)


def default_pole_count(spec, scheme="pade", tol=None, t_max=None, n_grid=101, max_poles=64):
    """Smallest pole count whose max-abs error is below ``tol`` on ``[0, t_max]``.

    Defaults: ``tol = 1e-4 * Gamma**2`` and ``t_max = 10 / Gamma``.
    """
    tol = 1e-4 * spec.coupling**2 if tol is None else tol
    t_max = 10.0 / spec.coupling if t_max is None else t_max
    grid = np.linspace(0.0, t_max, n_grid)
    ref = {s: np.array([reference_correlation(spec, s, t) for t in grid]) for s in (1, -1)}
    cache = lambda s, t: ref[s][np.searchsorted(grid, t)]  # noqa: E731
    for p in range(max_poles + 1):
        try:
            rep = decomposition_error(decompose(spec, scheme, p), spec, grid, cache)
        except DecompositionError:
            continue
        if rep.worst() <= tol:
            return p
    raise DecompositionError(f"no pole count up to {max_poles} reaches tolerance {tol}")
