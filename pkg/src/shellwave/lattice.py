"""Diagonal spectral lattice on the round sphere, with conformal backgrounds.

Everything downstream works in a fixed eigenbasis of the round Laplacian on
S^n, so a field is just one coefficient per eigenmode slot.  A conformal
background rescales the metric by f(tau)^2, which moves every eigenvalue to
lambda(tau) = lambda0 / f(tau)^2 and nothing else.  That is the whole model:
operators are multipliers, norms are weighted sums of squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Lattice",
    "ConformalBackground",
    "Field",
    "TimeGrid",
    "build_lattice",
    "desitter_background",
    "constant_background",
    "eigenvalue_at",
    "eigenvalue_rate",
    "sobolev_norm",
    "graded_sobolev_norm",
    "sphere_eigenvalue",
    "sphere_multiplicity",
    "zero_field",
    "random_field",
    "make_time_grid",
]


def sphere_eigenvalue(n, l):
    """Laplace eigenvalue l*(l+n-1) of degree-l harmonics on the unit S^n."""
    return float(l * (l + n - 1))


def sphere_multiplicity(n, l):
    """Dimension of the degree-l spherical-harmonic space on S^n.

    Closed form C(n+l, n) - C(n+l-2, n); the second term is absent for l < 2.
    """
    if l < 0:
        raise ValueError(f"degree must be nonnegative, got {l}")
    dim = math.comb(n + l, n)
    if l >= 2:
        dim -= math.comb(n + l - 2, n)
    return dim


@dataclass(frozen=True, eq=False)
class Lattice:
    """Fixed eigenbasis bookkeeping for S^n truncated at degree l_max.

    Arrays indexed by degree run over l = 0..l_max; arrays indexed by slot run
    over one entry per harmonic, degree by degree.  Multipliers depend only on
    the degree, so ``lam0_slot`` is the per-slot copy used for vectorized ops.
    """

    n: int
    l_max: int
    degrees: np.ndarray
    lam0: np.ndarray
    mult: np.ndarray
    slot_l: np.ndarray
    lam0_slot: np.ndarray
    offsets: np.ndarray

    @property
    def n_slots(self):
        return int(self.offsets[-1])

    def modes(self):
        """Yield (l, lam0, mult) per degree."""
        for l in range(self.l_max + 1):
            yield int(self.degrees[l]), float(self.lam0[l]), int(self.mult[l])

    def slots_of_degree(self, l):
        """Slice of the slot axis belonging to degree l."""
        return slice(int(self.offsets[l]), int(self.offsets[l + 1]))


def build_lattice(n, l_max):
    """Build the truncated spectral lattice for S^n.

    Parameters
    ----------
    n : int
        Sphere dimension, >= 1.
    l_max : int
        Largest harmonic degree kept, >= 0.
    """
    if n < 1:
        raise ValueError(f"sphere dimension must be >= 1, got {n}")
    if l_max < 0:
        raise ValueError(f"l_max must be >= 0, got {l_max}")
    degrees = np.arange(l_max + 1)
    lam0 = np.array([sphere_eigenvalue(n, l) for l in degrees], dtype=float)
    mult = np.array([sphere_multiplicity(n, l) for l in degrees], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(mult)])
    slot_l = np.repeat(degrees, mult)
    lam0_slot = np.repeat(lam0, mult)
    return Lattice(
        n=int(n),
        l_max=int(l_max),
        degrees=degrees,
        lam0=lam0,
        mult=mult,
        slot_l=slot_l,
        lam0_slot=lam0_slot,
        offsets=offsets,
    )


@dataclass(frozen=True)
class ConformalBackground:
    """Conformal factor profile f(tau) = sum_j f_even[j] tau^(2j).

    Only even profiles with f(0) > 0 are admitted so that f'(tau)/tau extends
    smoothly to tau = 0; kappa(tau) = f'(tau)/(tau f(tau)) is then finite on
    the closed interval and the three coupling weights {1, kappa, tau^2 kappa}
    are well defined everywhere.
    """

    name: str
    f_even: tuple[float, ...]

    def __post_init__(self):
        if not self.f_even:
            raise ValueError("f_even must have at least the constant term")
        if self.f_even[0] <= 0.0:
            raise ValueError(f"f(0) must be positive, got {self.f_even[0]}")

    def f(self, tau):
        tau = np.asarray(tau, dtype=float)
        u = tau * tau
        out = np.zeros_like(u)
        for c in reversed(self.f_even):
            out = out * u + c
        return out

    def f_prime(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.f_prime_over_tau(tau) * tau

    def f_prime_over_tau(self, tau):
        # d/dtau sum c_j tau^(2j) = tau * sum 2j c_j tau^(2j-2); smooth at 0.
        tau = np.asarray(tau, dtype=float)
        u = tau * tau
        out = np.zeros_like(u)
        for j in range(len(self.f_even) - 1, 0, -1):
            out = out * u + 2 * j * self.f_even[j]
        return out

    def kappa(self, tau):
        """f'(tau) / (tau f(tau)), extended continuously to tau = 0."""
        return self.f_prime_over_tau(tau) / self.f(tau)

    def psi_weights(self, tau):
        """The three scalar coupling profiles (1, kappa, tau^2 kappa)."""
        tau = np.asarray(tau, dtype=float)
        k = self.kappa(tau)
        return np.ones_like(k), k, tau * tau * k

    def inv_f_sq_series(self, order):
        """Even Taylor coefficients of 1/f(tau)^2 through tau^(2*order)."""
        f = np.zeros(order + 1)
        m = min(order + 1, len(self.f_even))
        f[:m] = self.f_even[:m]
        # g = 1/f^2 solves (f^2) g = 1; convolve order by order.
        fsq = np.convolve(f, f)[: order + 1]
        g = np.zeros(order + 1)
        g[0] = 1.0 / fsq[0]
        for j in range(1, order + 1):
            g[j] = -np.dot(fsq[1 : j + 1], g[j - 1 :: -1]) / fsq[0]
        return g


def desitter_background():
    """The shrinking-sphere profile f(tau) = 1/2 + 2 tau^2."""
    return ConformalBackground(name="desitter", f_even=(0.5, 2.0))


def constant_background(f0=1.0):
    """Frozen profile f = f0; kappa vanishes identically."""
    return ConformalBackground(name=f"constant({f0})", f_even=(float(f0),))


def eigenvalue_at(bg, lam0, tau):
    """Rescaled eigenvalue lambda(tau) = lam0 / f(tau)^2."""
    f = bg.f(tau)
    return np.asarray(lam0, dtype=float) / (f * f)


def eigenvalue_rate(bg, lam0, tau):
    """d lambda / d tau = -2 lam0 f'(tau) / f(tau)^3."""
    f = bg.f(tau)
    return -2.0 * np.asarray(lam0, dtype=float) * bg.f_prime(tau) / (f * f * f)


@dataclass(frozen=True, eq=False)
class Field:
    """One real coefficient per lattice slot.

    Treated as immutable: operations return new fields and never write into
    ``coeffs`` in place.
    """

    lattice: Lattice
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        if self.coeffs.shape != (self.lattice.n_slots,):
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} does not match "
                f"{self.lattice.n_slots} lattice slots"
            )

    def l2_norm(self):
        return float(np.sqrt(np.dot(self.coeffs, self.coeffs)))

    def with_coeffs(self, coeffs):
        return Field(lattice=self.lattice, coeffs=np.asarray(coeffs, dtype=float))

    def __add__(self, other):
        _check_same_lattice(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_same_lattice(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return self.with_coeffs(self.coeffs * float(scalar))

    __rmul__ = __mul__


def _check_same_lattice(a, b):
    if a.lattice is not b.lattice and (
        a.lattice.n != b.lattice.n or a.lattice.l_max != b.lattice.l_max
    ):
        raise ValueError("fields live on different lattices")


def zero_field(lattice):
    return Field(lattice=lattice, coeffs=np.zeros(lattice.n_slots))


def random_field(lattice, rng, decay=1.0, exclude_l0=False):
    """Gaussian coefficients damped by (1 + lam0)^(-decay/2) per slot.

    ``decay`` controls how fast the spectrum falls off; ``exclude_l0`` zeroes
    the constant mode, which has lambda = 0 and is invisible to any dyadic
    frequency window.
    """
    c = rng.standard_normal(lattice.n_slots)
    c *= (1.0 + lattice.lam0_slot) ** (-0.5 * decay)
    if exclude_l0:
        c[lattice.slots_of_degree(0)] = 0.0
    return Field(lattice=lattice, coeffs=c)


def sobolev_norm(field, s, tau, bg):
    """Fractional norm  sqrt( sum (1 + lambda(tau))^s |c|^2 ).

    The weight uses the tau-rescaled eigenvalues, so the same coefficients
    measure differently on different slices.
    """
    lam = eigenvalue_at(bg, field.lattice.lam0_slot, tau)
    w = (1.0 + lam) ** s
    return float(np.sqrt(np.dot(w, field.coeffs * field.coeffs)))


def graded_sobolev_norm(field, grad_order, s, tau, bg):
    """Norm of the grad_order-fold derivative: weights lambda^m (1+lambda)^s."""
    lam = eigenvalue_at(bg, field.lattice.lam0_slot, tau)
    w = lam**grad_order * (1.0 + lam) ** s
    return float(np.sqrt(np.dot(w, field.coeffs * field.coeffs)))


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing evaluation times in (0, 1]."""

    taus: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "taus", np.asarray(self.taus, dtype=float))
        t = self.taus
        if t.ndim != 1 or len(t) == 0:
            raise ValueError("time grid must be a nonempty 1-d array")
        if np.any(t <= 0.0) or np.any(t > 1.0):
            raise ValueError("times must lie in (0, 1]")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.taus)


def make_time_grid(tau_min, tau_max=1.0, count=33, spacing="log"):
    """Convenience grid builder; log spacing suits the collapsing end."""
    if not 0.0 < tau_min < tau_max <= 1.0:
        raise ValueError(f"need 0 < tau_min < tau_max <= 1, got [{tau_min}, {tau_max}]")
    if count < 2:
        raise ValueError("count must be at least 2")
    if spacing == "log":
        taus = np.geomspace(tau_min, tau_max, count)
    elif spacing == "linear":
        taus = np.linspace(tau_min, tau_max, count)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    # guard the endpoints against geomspace rounding
    taus[0], taus[-1] = tau_min, tau_max
    return TimeGrid(taus=taus)
