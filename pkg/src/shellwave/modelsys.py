"""Per-mode solver for the two coupled wave-system families.

Each spherical-harmonic slot of the lattice carries a small linear ODE system
in time: one distinguished column with a logarithmic branch at tau = 0 plus
``n_regular`` columns that stay bounded there.  The families differ only in
the sign of the 1/tau drag on the regular rows ("first": +, "second": -, and
the second family forbids regular rows from feeling the singular column).

Everything here is built around three devices:

* a hand-rolled Bessel oracle (series + large-argument asymptotics) used as
  the independent reference for constant-coefficient runs,
* Frobenius fundamental systems of the per-mode self-equation, which seed
  integrations at a small tau_seed and invert trajectories back into
  asymptotic data,
* adaptive integration in the chart s = log(tau), where the drag term is
  absorbed and steps stay uniform across the collapsing end.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .lattice import Field, eigenvalue_at, zero_field
from .lp import log_grad_weights

__all__ = [
    "Forcing",
    "SystemConfig",
    "AsymptoticData",
    "ModeState",
    "Trajectory",
    "FrobeniusBasis",
    "EpsilonReport",
    "bessel_oracle",
    "frobenius_basis",
    "make_asymptotic_data",
    "renormalize_h",
    "mode_rhs",
    "seed_state",
    "integrate",
    "constant_mode_run",
    "split_singular_component",
    "extract_asymptotic_data",
    "epsilon_construction_check",
    "fundamental_matrices",
    "forced_profile",
    "data_to_state_maps",
    "random_coupling",
]

EULER_GAMMA = float(np.euler_gamma)

# ------------------------------------------------------------------ Bessel

_SPLIT_X = 12.0


def _j0_series(x):
    q = -0.25 * x * x
    term, total = 1.0, 1.0
    for m in range(1, 200):
        term *= q / (m * m)
        total += term
        if abs(term) < 1e-18 * (abs(total) + 1.0):
            break
    return total


def _y0_series(x):
    # (2/pi) [ (log(x/2)+gamma) J0 + sum (-1)^(m+1) H_m (x^2/4)^m / (m!)^2 ]
    q = 0.25 * x * x
    term, total, harmonic = 1.0, 0.0, 0.0
    for m in range(1, 200):
        term *= q / (m * m)
        harmonic += 1.0 / m
        contrib = ((-1.0) ** (m + 1)) * harmonic * term
        total += contrib
        if abs(contrib) < 1e-18 * (abs(total) + 1.0):
            break
    return (2.0 / math.pi) * ((math.log(0.5 * x) + EULER_GAMMA) * _j0_series(x) + total)


def _j0y0_asymptotic(x):
    # Hankel expansion: a_m = a_{m-1} * (-(2m-1)^2) / (8m); P sums even m,
    # Q sums odd m, with alternating signs inside each.
    p_sum, q_sum = 1.0, 0.0
    a, last = 1.0, 1.0
    for m in range(1, 40):
        a *= -((2 * m - 1) ** 2) / (8.0 * m)
        w = a / x**m
        if abs(w) >= last:
            break
        last = abs(w)
        if m % 2 == 0:
            p_sum += ((-1.0) ** (m // 2)) * w
        else:
            q_sum += ((-1.0) ** ((m - 1) // 2)) * w
        if abs(w) < 1e-17:
            break
    chi = x - 0.25 * math.pi
    amp = math.sqrt(2.0 / (math.pi * x))
    j0 = amp * (p_sum * math.cos(chi) - q_sum * math.sin(chi))
    y0 = amp * (p_sum * math.sin(chi) + q_sum * math.cos(chi))
    return j0, y0


def _bessel_scalar(kind, x):
    if x < 0.0:
        raise ValueError(f"argument must be nonnegative, got {x}")
    if x == 0.0:
        if kind == "J":
            return 1.0
        raise ValueError("second-kind value diverges at zero argument")
    if x < _SPLIT_X:
        return _j0_series(x) if kind == "J" else _y0_series(x)
    j0, y0 = _j0y0_asymptotic(x)
    return j0 if kind == "J" else y0


def bessel_oracle(kind, lam, tau):
    """Reference cylinder-function values J0/Y0 at argument 2 sqrt(lam) tau.

    This is the closed-form solution pair of  u'' + u'/tau + 4 lam u = 0  at
    constant lam, used as the independent check on every constant-coefficient
    integration.  Power series below x = 12, Hankel asymptotics above; both
    branches are accurate to well below 1e-8 relative for lam <= 1e4.
    """
    if kind not in ("J", "Y"):
        raise ValueError(f"kind must be 'J' or 'Y', got {kind!r}")
    lam = np.asarray(lam, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(lam < 0.0):
        raise ValueError("negative eigenvalue")
    x = 2.0 * np.sqrt(lam) * tau
    if x.ndim == 0:
        return _bessel_scalar(kind, float(x))
    out = np.empty(x.shape)
    flat, oflat = x.ravel(), out.ravel()
    for i in range(flat.size):
        oflat[i] = _bessel_scalar(kind, float(flat[i]))
    return out


# -------------------------------------------------- even-series utilities


def _series_mul(a, b, order):
    return np.convolve(a, b)[: order + 1]


def _series_inv(a, order):
    out = np.zeros(order + 1)
    out[0] = 1.0 / a[0]
    for j in range(1, order + 1):
        acc = 0.0
        for i in range(1, min(j, len(a) - 1) + 1):
            acc += a[i] * out[j - i]
        out[j] = -acc / a[0]
    return out


def _pad(a, order):
    out = np.zeros(order + 1)
    m = min(order + 1, len(a))
    out[:m] = np.asarray(a, dtype=float)[:m]
    return out


def _psi_over_f_series(bg, psi_index, order):
    """Even coefficients of psi(tau)/f(tau) for psi in {1, kappa, tau^2 kappa}."""
    f = _pad(bg.f_even, order)
    inv_f = _series_inv(f, order)
    if psi_index == 0:
        return inv_f
    fpt = np.zeros(order + 1)  # f'(tau)/tau as an even series
    for j in range(1, len(bg.f_even)):
        if j <= order:
            fpt[j - 1] = 2.0 * j * bg.f_even[j]
    kappa_over_f = _series_mul(fpt, _series_mul(inv_f, inv_f, order), order)
    if psi_index == 1:
        return kappa_over_f
    shifted = np.zeros(order + 1)
    shifted[1:] = kappa_over_f[:-1]
    return shifted


def _q_series(lam0, bg, order, diag_psi=None, diag_scale=0.0):
    """Even coefficients of the self-equation potential.

    q(tau) = 4 lam0 / f(tau)^2 minus the diagonal coupling
    diag_scale * psi(tau) * sqrt(lambda(tau)), which is also even.
    """
    q = 4.0 * lam0 * bg.inv_f_sq_series(order)
    if diag_scale != 0.0 and lam0 > 0.0:
        q = q - diag_scale * math.sqrt(lam0) * _psi_over_f_series(bg, diag_psi, order)
    return q


def _poly_even(coeffs, tau):
    """Evaluate sum c_m tau^(2m) and its tau-derivative."""
    tau = np.asarray(tau, dtype=float)
    u = tau * tau
    val = np.zeros_like(u)
    dval_du = np.zeros_like(u)
    for c in coeffs[::-1]:
        dval_du = dval_du * u + val
        val = val * u + c
    return val, 2.0 * tau * dval_du


@dataclass(frozen=True, eq=False)
class FrobeniusBasis:
    """Fundamental system of the per-mode self-equation near tau = 0.

    ``main`` is the branch with value 1 at tau = 0 whose coefficient carries
    the asymptotic datum; ``aux`` is the complementary branch: the log branch
    (main * log tau + correction) when the drag sign is +1, and the tau^2
    branch when it is -1 (where the log attaches to main instead).
    """

    lam0: float
    drag_sign: int
    order: int
    q: np.ndarray
    main_poly: np.ndarray
    aux_poly: np.ndarray
    log_coupling: float  # multiplies aux*log(tau) inside main when drag_sign=-1

    def main(self, tau):
        tau = np.asarray(tau, dtype=float)
        v, dv = _poly_even(self.main_poly, tau)
        if self.drag_sign == -1 and self.log_coupling != 0.0:
            a, da = _poly_even(self.aux_poly, tau)
            lg = np.log(tau)
            v = v + self.log_coupling * a * lg
            dv = dv + self.log_coupling * (da * lg + a / tau)
        return v, dv

    def aux(self, tau):
        tau = np.asarray(tau, dtype=float)
        a, da = _poly_even(self.aux_poly, tau)
        if self.drag_sign == 1:
            m, dm = _poly_even(self.main_poly, tau)
            lg = np.log(tau)
            return m * lg + a, dm * lg + m / tau + da
        return a, da

    def truncation_defect(self, tau):
        """Relative size of the last kept series term; small means trustworthy."""
        u = float(tau) * float(tau)
        top = self.order
        m_last = abs(self.main_poly[top]) * u**top
        a_last = abs(self.aux_poly[top]) * u**top
        scale = 1.0 + abs(float(_poly_even(self.main_poly, tau)[0]))
        return (m_last + a_last) / scale


def frobenius_basis(lam0, bg, order=12, drag_sign=1, diag_psi=None, diag_scale=0.0):
    """Series fundamental system for u'' + drag_sign u'/tau + q(tau) u = 0.

    ``q`` is the rescaled-eigenvalue potential 4 lam0/f^2 minus an optional
    diagonal coupling term (see _q_series).  ``order`` counts the tau^2 powers
    kept; 2 is the minimum for a meaningful log-branch correction.
    """
    if order < 2:
        raise ValueError(f"series order must be >= 2, got {order}")
    if drag_sign not in (1, -1):
        raise ValueError(f"drag sign must be +1 or -1, got {drag_sign}")
    q = _q_series(float(lam0), bg, order, diag_psi, diag_scale)
    if drag_sign == 1:
        # main = sum a_m tau^2m (a_0 = 1); aux correction w with
        # aux = main*log(tau) + w, w = sum b_m tau^2m (b_0 = 0).
        a = np.zeros(order + 1)
        b = np.zeros(order + 1)
        a[0] = 1.0
        for m in range(1, order + 1):
            acc = 0.0
            for j in range(0, m):
                acc += q[j] * a[m - 1 - j]
            a[m] = -acc / (4.0 * m * m)
        for m in range(1, order + 1):
            acc = 0.0
            for j in range(0, m):
                acc += q[j] * b[m - 1 - j]
            b[m] = (-4.0 * m * a[m] - acc) / (4.0 * m * m)
        return FrobeniusBasis(
            lam0=float(lam0), drag_sign=1, order=order, q=q,
            main_poly=a, aux_poly=b, log_coupling=0.0,
        )
    # drag_sign == -1: indicial roots 0 and 2; the root-0 branch picks up a
    # resonant aux*log(tau) term with coefficient -q_0/2.
    e = np.zeros(order + 1)
    e[1] = 1.0
    for m in range(2, order + 1):
        acc = 0.0
        for j in range(0, m - 1):
            acc += q[j] * e[m - 1 - j]
        e[m] = -acc / (4.0 * m * (m - 1))
    c = -0.5 * q[0]
    p = np.zeros(order + 1)
    p[0] = 1.0
    for m in range(2, order + 1):
        acc = 0.0
        for j in range(0, m):
            acc += q[j] * p[m - 1 - j]
        p[m] = (-acc - 2.0 * c * (2 * m - 1) * e[m]) / (4.0 * m * (m - 1))
    return FrobeniusBasis(
        lam0=float(lam0), drag_sign=-1, order=order, q=q,
        main_poly=p, aux_poly=e, log_coupling=c,
    )


# ------------------------------------------------------------ configuration

_FORCING_KINDS = ("zero", "tau_bump", "mode_pulse")


@dataclass(frozen=True)
class Forcing:
    """Scalar time-profile forcing for one column.

    ``tau_bump`` applies a gaussian bump in tau uniformly across all slots;
    ``mode_pulse`` restricts the same bump to the slots of one degree.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    center: float = 0.5
    width: float = 0.1
    degree: int | None = None

    def __post_init__(self):
        if self.kind not in _FORCING_KINDS:
            raise ValueError(f"unknown forcing kind {self.kind!r}; expected {_FORCING_KINDS}")
        if self.kind != "zero" and self.width <= 0.0:
            raise ValueError(f"forcing width must be positive, got {self.width}")
        if self.kind == "mode_pulse" and self.degree is None:
            raise ValueError("mode_pulse forcing needs a degree")

    def profile(self, tau):
        if self.kind == "zero" or self.amplitude == 0.0:
            return 0.0
        z = (tau - self.center) / self.width
        return self.amplitude * math.exp(-z * z)

    def degree_weights(self, lattice):
        """Per-degree indicator (every slot of a degree is forced equally)."""
        w = np.zeros(lattice.l_max + 1)
        if self.kind == "zero":
            return w
        if self.kind == "tau_bump":
            w[:] = 1.0
        else:
            if not 0 <= self.degree <= lattice.l_max:
                raise ValueError(f"forced degree {self.degree} outside lattice range")
            w[self.degree] = 1.0
        return w


_SECOND_DECOUPLING_MSG = (
    "the second system family forbids coupling of regular rows to the singular "
    "column 0"
)


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """Shape of one coupled run.

    ``n_regular`` counts the bounded columns (>= 1); ``system`` picks the drag
    sign of their rows ("first": +1/tau, "second": -1/tau, whose rows must not
    couple back to column 0).  Coupling entry (i, j) contributes
    scale[i,j] * psi[psi_index[i,j]](tau) * sqrt(lambda(tau)) * column_j to
    row i, with psi profiles {1, kappa, tau^2 kappa}.  ``top_order`` is the
    highest derivative level the energy norms weigh.
    """

    n_regular: int
    system: str = "first"
    top_order: int = 2
    coupling_scale: np.ndarray | None = None
    coupling_psi: np.ndarray | None = None
    forcings: tuple[Forcing, ...] = ()
    tau_seed: float = 1e-4
    rtol: float = 1e-10
    atol: float = 1e-12
    basis_order: int = 12

    def __post_init__(self):
        if self.n_regular < 1:
            raise ValueError(f"need at least one regular column, got {self.n_regular}")
        if self.system not in ("first", "second"):
            raise ValueError(f"system must be 'first' or 'second', got {self.system!r}")
        if self.top_order < 0:
            raise ValueError("top_order must be >= 0")
        if not 0.0 < self.tau_seed < 1.0:
            raise ValueError(f"tau_seed must lie in (0, 1), got {self.tau_seed}")
        c = self.n_columns
        scale = self.coupling_scale
        scale = np.zeros((c, c)) if scale is None else np.asarray(scale, dtype=float)
        psi = self.coupling_psi
        psi = np.zeros((c, c), dtype=int) if psi is None else np.asarray(psi, dtype=int)
        if scale.shape != (c, c) or psi.shape != (c, c):
            raise ValueError(f"coupling matrices must be {c}x{c}")
        if np.any((psi < 0) | (psi > 2)):
            raise ValueError("psi selector entries must be 0, 1 or 2")
        if self.system == "second" and np.any(scale[1:, 0] != 0.0):
            raise ValueError(_SECOND_DECOUPLING_MSG)
        object.__setattr__(self, "coupling_scale", scale)
        object.__setattr__(self, "coupling_psi", psi)
        if self.forcings and len(self.forcings) != c:
            raise ValueError(f"need one forcing per column ({c}), got {len(self.forcings)}")

    @property
    def n_columns(self):
        return self.n_regular + 1

    @property
    def drag_signs(self):
        s = np.ones(self.n_columns)
        if self.system == "second":
            s[1:] = -1.0
        return s

    def forcing_list(self):
        if self.forcings:
            return list(self.forcings)
        return [Forcing()] * self.n_columns


def random_coupling(n_regular, system, rng, scale):
    """Random coupling matrices at the given magnitude, legal for the family."""
    c = n_regular + 1
    mat = scale * rng.uniform(-1.0, 1.0, size=(c, c))
    psi = rng.integers(0, 3, size=(c, c))
    if system == "second":
        mat[1:, 0] = 0.0
    return mat, psi


# ------------------------------------------------------------ data handling


@dataclass(frozen=True, eq=False)
class AsymptoticData:
    """Data at the singular time.

    O_field multiplies the logarithmic branch of column 0, h_field is its
    finite part, frak_h the renormalized finite part (h - 2 log_nabla O), and
    phi0_fields are the limits of the regular columns.
    """

    O_field: Field
    h_field: Field
    frak_h: Field
    phi0_fields: tuple[Field, ...]

    @property
    def n_regular(self):
        return len(self.phi0_fields)


def renormalize_h(h, O, part, bg, tau0=0.0):
    """Renormalized finite part h - 2 (log-derivative weights at tau0) O."""
    lam = eigenvalue_at(bg, O.lattice.lam0_slot, tau0)
    ell = log_grad_weights(part, lam)
    return h.with_coeffs(h.coeffs - 2.0 * ell * O.coeffs)


def make_asymptotic_data(lattice, part, bg, O=None, h=None, frak_h=None, phis=(), tau0=0.0):
    """Assemble data, deriving whichever of h / frak_h was not given."""
    O = O if O is not None else zero_field(lattice)
    if (h is None) == (frak_h is None):
        raise ValueError("give exactly one of h and frak_h")
    lam = eigenvalue_at(bg, lattice.lam0_slot, tau0)
    ell = log_grad_weights(part, lam)
    if h is None:
        h = frak_h.with_coeffs(frak_h.coeffs + 2.0 * ell * O.coeffs)
    else:
        frak_h = h.with_coeffs(h.coeffs - 2.0 * ell * O.coeffs)
    return AsymptoticData(O_field=O, h_field=h, frak_h=frak_h, phi0_fields=tuple(phis))


@dataclass(frozen=True, eq=False)
class ModeState:
    """Values and tau-derivatives of every column on one slice."""

    tau: float
    values: np.ndarray  # (n_columns, n_slots)
    derivs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "derivs", np.asarray(self.derivs, dtype=float))
        if self.values.shape != self.derivs.shape or self.values.ndim != 2:
            raise ValueError("values and derivs must be matching 2-d arrays")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"state time must lie in (0, 1], got {self.tau}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-sampled solution; taus are ordered as integrated."""

    taus: np.ndarray
    values: np.ndarray  # (n_times, n_columns, n_slots)
    derivs: np.ndarray
    config: SystemConfig
    lattice: object
    bg: object

    def state_at(self, index):
        return ModeState(
            tau=float(self.taus[index]),
            values=self.values[index],
            derivs=self.derivs[index],
        )

    def column(self, i):
        return self.values[:, i, :]

    def column_deriv(self, i):
        return self.derivs[:, i, :]

    def __len__(self):
        return len(self.taus)


# ----------------------------------------------------------------- the RHS


def mode_rhs(config, lattice, bg, tau, values, derivs, include_forcing=True):
    """Right-hand side in physical time: returns (d values, d derivs).

    Row i:  v_i'' = -sign_i v_i'/tau - 4 lambda(tau) v_i
                    + sum_j scale[i,j] psi_{ij}(tau) sqrt(lambda) v_j + F_i.
    The integrator itself runs in the log-time chart; this form exists as the
    public definition and for finite-difference consistency checks.
    """
    values = np.asarray(values, dtype=float)
    derivs = np.asarray(derivs, dtype=float)
    lam = eigenvalue_at(bg, lattice.lam0_slot, tau)
    sqrt_lam = np.sqrt(lam)
    psi = _psi_scalars(bg, tau)
    amat = config.coupling_scale * psi[config.coupling_psi]
    rhs = (amat @ values) * sqrt_lam - 4.0 * lam * values
    rhs -= (config.drag_signs / tau)[:, None] * derivs
    if include_forcing:
        rhs += _forcing_stack(config, lattice, tau)
    return derivs, rhs


def _psi_scalars(bg, tau):
    k = float(bg.kappa(tau))
    return np.array([1.0, k, tau * tau * k])


def _forcing_stack(config, lattice, tau):
    """(n_columns, n_slots) forcing values at one time."""
    out = np.zeros((config.n_columns, lattice.n_slots))
    for i, f in enumerate(config.forcing_list()):
        p = f.profile(tau)
        if p != 0.0:
            out[i] = p * np.repeat(f.degree_weights(lattice), lattice.mult)
    return out


def _make_log_rhs(lam0_slot, bg, signs, scale, psi_idx, source_fn):
    """RHS in the chart s = log tau for a block of coupled columns.

    State layout: y = (values.ravel(), theta.ravel()) with theta = tau * v'.
    The drag term is absorbed: theta_s = (1 - sign) theta
    + tau^2 (coupling + source - 4 lambda v).
    """
    n_cols = len(signs)
    n_slots = lam0_slot.size
    one_minus_sign = (1.0 - np.asarray(signs, dtype=float))[:, None]

    def rhs(s, y):
        tau = math.exp(s)
        f = float(bg.f(tau))
        lam = lam0_slot / (f * f)
        v = y[: n_cols * n_slots].reshape(n_cols, n_slots)
        th = y[n_cols * n_slots :].reshape(n_cols, n_slots)
        psi = _psi_scalars(bg, tau)
        amat = scale * psi[psi_idx]
        drive = (amat @ v) * np.sqrt(lam)
        if source_fn is not None:
            drive = drive + source_fn(tau)
        dth = one_minus_sign * th + (tau * tau) * (drive - 4.0 * lam * v)
        return np.concatenate([th.ravel(), dth.ravel()])

    return rhs


def _solve_log(rhs, y0, tau_from, tau_to, tau_eval, rtol, atol, dense=False):
    s_span = (math.log(tau_from), math.log(tau_to))
    s_eval = np.log(tau_eval) if tau_eval is not None else None
    sol = solve_ivp(
        rhs, s_span, y0, method="DOP853", t_eval=s_eval,
        rtol=rtol, atol=atol, dense_output=dense,
    )
    if not sol.success:
        raise RuntimeError(
            f"integration failed between tau={tau_from:g} and {tau_to:g}: {sol.message}; "
            "try a larger tau_seed or looser tolerances"
        )
    return sol


def _eval_taus(tau_from, tau_to, grid, n_default=33):
    lo, hi = min(tau_from, tau_to), max(tau_from, tau_to)
    if grid is not None:
        inner = grid.taus[(grid.taus > lo) & (grid.taus < hi)]
    else:
        inner = np.geomspace(lo, hi, n_default)[1:-1]
    taus = np.concatenate([[lo], inner, [hi]])
    if tau_to < tau_from:
        taus = taus[::-1]
    return taus


# ------------------------------------------------------- seeding/extraction


def _column_bases(config, lattice, bg):
    """Per-degree fundamental systems, one per column, diagonal coupling folded in."""
    bases = []
    for i in range(config.n_columns):
        sign = 1 if i == 0 or config.system == "first" else -1
        scale = float(config.coupling_scale[i, i])
        psi = int(config.coupling_psi[i, i])
        bases.append(
            [
                frobenius_basis(
                    lam0, bg, order=config.basis_order, drag_sign=sign,
                    diag_psi=psi, diag_scale=scale,
                )
                for lam0 in lattice.lam0
            ]
        )
    return bases


def _seed_tolerance_check(config, bases, tau):
    worst = 0.0
    for per_degree in bases:
        for basis in per_degree:
            worst = max(worst, basis.truncation_defect(tau))
    limit = max(100.0 * config.rtol, 1e-11)
    if worst > limit:
        raise ValueError(
            f"tau_seed={tau:g} too large: series remainder {worst:.2e} exceeds "
            f"{limit:.2e}; move the seed earlier or raise basis_order"
        )
    return worst


def seed_state(config, lattice, bg, data, tau_seed=None):
    """Cauchy data at tau_seed built from the fundamental systems.

    Column 0 combines the log branch (coefficient 2 * O) with the bounded
    branch (coefficient h); regular columns use their bounded branch with
    coefficient phi0.  As tau -> 0 this reduces to the defining expansions
    2 O log tau + h + O(tau^2 log^2 tau) and phi0 + O(tau^2 log^2 tau).
    """
    tau = float(config.tau_seed if tau_seed is None else tau_seed)
    if data.n_regular != config.n_regular:
        raise ValueError(
            f"data carries {data.n_regular} regular columns, config wants {config.n_regular}"
        )
    bases = _column_bases(config, lattice, bg)
    _seed_tolerance_check(config, bases, tau)
    n_cols = config.n_columns
    values = np.zeros((n_cols, lattice.n_slots))
    derivs = np.zeros_like(values)
    mult = lattice.mult

    main_v = np.array([b.main(tau)[0] for b in bases[0]])
    main_d = np.array([b.main(tau)[1] for b in bases[0]])
    aux_v = np.array([b.aux(tau)[0] for b in bases[0]])
    aux_d = np.array([b.aux(tau)[1] for b in bases[0]])
    oc, hc = data.O_field.coeffs, data.h_field.coeffs
    values[0] = 2.0 * oc * np.repeat(aux_v, mult) + hc * np.repeat(main_v, mult)
    derivs[0] = 2.0 * oc * np.repeat(aux_d, mult) + hc * np.repeat(main_d, mult)

    for i in range(1, n_cols):
        mv = np.array([b.main(tau)[0] for b in bases[i]])
        md = np.array([b.main(tau)[1] for b in bases[i]])
        pc = data.phi0_fields[i - 1].coeffs
        values[i] = pc * np.repeat(mv, mult)
        derivs[i] = pc * np.repeat(md, mult)
    return ModeState(tau=tau, values=values, derivs=derivs)


def extract_asymptotic_data(config, lattice, bg, state, part):
    """Invert a small-tau state into asymptotic data.

    Per mode and column this is a 2x2 solve against the fundamental system at
    state.tau.  Degrees whose series remainder is untrustworthy fall back to
    the raw two-term expansion and are counted in the diagnostics (with a
    warning suggesting a smaller extraction time).
    """
    tau = state.tau
    bases = _column_bases(config, lattice, bg)
    mult = lattice.mult
    n_degrees = lattice.l_max + 1
    flagged = np.zeros(n_degrees, dtype=bool)
    for per_degree in bases:
        for l, basis in enumerate(per_degree):
            if basis.truncation_defect(tau) > 1e-9:
                flagged[l] = True
    if np.any(flagged):
        warnings.warn(
            f"{int(np.count_nonzero(flagged))} degrees ill-conditioned for extraction "
            f"at tau={tau:g}; using the two-term expansion there (extract from a "
            "smaller tau or raise basis_order for full accuracy)",
            RuntimeWarning,
        )
    flagged_slots = np.repeat(flagged, mult)

    def solve_column(i):
        basis = bases[i]
        av = np.repeat(np.array([b.aux(tau)[0] for b in basis]), mult)
        ad = np.repeat(np.array([b.aux(tau)[1] for b in basis]), mult)
        mv = np.repeat(np.array([b.main(tau)[0] for b in basis]), mult)
        md = np.repeat(np.array([b.main(tau)[1] for b in basis]), mult)
        det = av * md - mv * ad
        v, d = state.values[i], state.derivs[i]
        c_aux = (md * v - mv * d) / det
        c_main = (-ad * v + av * d) / det
        return c_aux, c_main

    c_aux0, c_main0 = solve_column(0)
    # two-term fallback: v' ~ 2 O / tau, v ~ 2 O log tau + h
    crude_o = 0.5 * tau * state.derivs[0]
    crude_h = state.values[0] - 2.0 * crude_o * math.log(tau)
    o_coeffs = np.where(flagged_slots, crude_o, 0.5 * c_aux0)
    h_coeffs = np.where(flagged_slots, crude_h, c_main0)
    o_field = Field(lattice=lattice, coeffs=o_coeffs)
    h_field = Field(lattice=lattice, coeffs=h_coeffs)

    phis = []
    contamination = 0.0
    for i in range(1, config.n_columns):
        c_aux, c_main = solve_column(i)
        phi = np.where(flagged_slots, state.values[i], c_main)
        phis.append(Field(lattice=lattice, coeffs=phi))
        if config.system == "first":
            # with a +1/tau drag the aux branch is the log branch; a clean
            # regular column should not contain it
            contamination = max(contamination, float(np.max(np.abs(c_aux), initial=0.0)))
    data = make_asymptotic_data(lattice, part, bg, O=o_field, h=h_field, phis=phis)
    diagnostics = {
        "ill_conditioned_degrees": int(np.count_nonzero(flagged)),
        "singular_contamination": contamination,
        "extraction_tau": tau,
    }
    return data, diagnostics


# -------------------------------------------------------------- integration


def _state_to_y(values, derivs, tau):
    return np.concatenate([values.ravel(), (tau * derivs).ravel()])


def _y_to_state(y, n_cols, n_slots, tau):
    v = y[: n_cols * n_slots].reshape(n_cols, n_slots)
    th = y[n_cols * n_slots :].reshape(n_cols, n_slots)
    return v, th / tau


def _forcing_source(config, lattice, rows):
    """Source closure returning stacked forcing for the given rows, or None."""
    forcings = config.forcing_list()
    chosen = [forcings[r] for r in rows]
    if all(f.kind == "zero" or f.amplitude == 0.0 for f in chosen):
        return None
    weights = [np.repeat(f.degree_weights(lattice), lattice.mult) for f in chosen]

    def source(tau):
        return np.stack([f.profile(tau) * w for f, w in zip(chosen, weights)])

    return source


def integrate(config, lattice, bg, state, tau_to, grid=None, include_forcing=True):
    """Propagate a state to tau_to; direction follows sign(tau_to - state.tau).

    Runs in the log-time chart throughout (so the mandatory substitution below
    tau = 1e-3 is always active).  For the second family the regular block is
    integrated on its own and column 0 afterwards, reading the regular columns
    through the dense interpolant; the regular trajectories therefore do not
    depend on the singular data in any way, bit for bit.
    """
    tau_from = state.tau
    tau_to = float(tau_to)
    if not 0.0 < tau_to <= 1.0:
        raise ValueError(f"target time must lie in (0, 1], got {tau_to}")
    if tau_to == tau_from:
        raise ValueError("target time equals the state time")
    n_cols, n_slots = state.values.shape
    if n_cols != config.n_columns or n_slots != lattice.n_slots:
        raise ValueError("state shape does not match config/lattice")
    taus = _eval_taus(tau_from, tau_to, grid)
    scale, psi = config.coupling_scale, config.coupling_psi

    if config.system == "first":
        src = _forcing_source(config, lattice, range(n_cols)) if include_forcing else None
        rhs = _make_log_rhs(lattice.lam0_slot, bg, config.drag_signs, scale, psi, src)
        sol = _solve_log(
            rhs, _state_to_y(state.values, state.derivs, tau_from),
            tau_from, tau_to, taus, config.rtol, config.atol,
        )
        values = np.empty((len(taus), n_cols, n_slots))
        derivs = np.empty_like(values)
        for t in range(len(taus)):
            values[t], derivs[t] = _y_to_state(sol.y[:, t], n_cols, n_slots, taus[t])
        return Trajectory(taus=taus, values=values, derivs=derivs,
                          config=config, lattice=lattice, bg=bg)

    # second family: regular block first, then the singular column
    reg_rows = list(range(1, n_cols))
    src_reg = _forcing_source(config, lattice, reg_rows) if include_forcing else None
    rhs_reg = _make_log_rhs(
        lattice.lam0_slot, bg, -np.ones(len(reg_rows)),
        scale[1:, 1:], psi[1:, 1:], src_reg,
    )
    sol_reg = _solve_log(
        rhs_reg, _state_to_y(state.values[1:], state.derivs[1:], tau_from),
        tau_from, tau_to, taus, config.rtol, config.atol, dense=True,
    )

    n_reg = len(reg_rows)
    row0 = scale[0], psi[0]
    src_f0 = _forcing_source(config, lattice, [0]) if include_forcing else None

    def source_col0(tau):
        y = sol_reg.sol(math.log(tau))
        v_reg = y[: n_reg * n_slots].reshape(n_reg, n_slots)
        f = float(bg.f(tau))
        lam = lattice.lam0_slot / (f * f)
        psi_s = _psi_scalars(bg, tau)
        coeffs = row0[0][1:] * psi_s[row0[1][1:]]
        drive = (coeffs @ v_reg) * np.sqrt(lam)
        if src_f0 is not None:
            drive = drive + src_f0(tau)[0]
        return drive[None, :]

    rhs0 = _make_log_rhs(
        lattice.lam0_slot, bg, np.ones(1),
        scale[:1, :1], psi[:1, :1], source_col0,
    )
    sol0 = _solve_log(
        rhs0, _state_to_y(state.values[:1], state.derivs[:1], tau_from),
        tau_from, tau_to, taus, config.rtol, config.atol,
    )
    values = np.empty((len(taus), n_cols, n_slots))
    derivs = np.empty_like(values)
    for t in range(len(taus)):
        v0, d0 = _y_to_state(sol0.y[:, t], 1, n_slots, taus[t])
        vr, dr = _y_to_state(sol_reg.y[:, t], n_reg, n_slots, taus[t])
        values[t, 0], derivs[t, 0] = v0[0], d0[0]
        values[t, 1:], derivs[t, 1:] = vr, dr
    return Trajectory(taus=taus, values=values, derivs=derivs,
                      config=config, lattice=lattice, bg=bg)


def constant_mode_run(lam, u0, du0, tau_from, tau_to, taus=None, rtol=1e-11, atol=1e-13):
    """Integrate the calibration scalar mode u'' + u'/tau + lam u = 0.

    Returns (taus, u, du).  This is the toy the dyadic decay measurement runs
    shell by shell against the Bessel oracle.
    """
    lam = float(lam)
    eval_taus = _eval_taus(tau_from, tau_to, None) if taus is None else np.asarray(taus)

    def rhs(s, y):
        tau = math.exp(s)
        return np.array([y[1], -tau * tau * lam * y[0]])

    sol = _solve_log(rhs, np.array([u0, tau_from * du0]), tau_from, tau_to,
                     eval_taus, rtol, atol)
    u = sol.y[0]
    du = sol.y[1] / eval_taus
    return eval_taus, u, du


# --------------------------------------------------- singular/regular split


def split_singular_component(config, lattice, bg, data, grid, tau_seed=None, part=None):
    """Evolve the log-branch and renormalized components of column 0.

    The log-branch component solves the homogeneous self-coupled column-0
    equation with data (2 O log tau + 2 log_nabla O); the renormalized
    component solves the full column-0 equation (couplings to the regular
    columns and forcing included) with data frak_h.  Their sum reproduces the
    direct column-0 run; both are returned as single-column trajectories.
    """
    if part is None:
        raise ValueError("a frequency partition is needed for the log-derivative data")
    tau0 = float(config.tau_seed if tau_seed is None else tau_seed)
    n_cols, n_slots = config.n_columns, lattice.n_slots
    bases = _column_bases(config, lattice, bg)
    _seed_tolerance_check(config, bases, tau0)
    mult = lattice.mult

    aux_v = np.repeat(np.array([b.aux(tau0)[0] for b in bases[0]]), mult)
    aux_d = np.repeat(np.array([b.aux(tau0)[1] for b in bases[0]]), mult)
    main_v = np.repeat(np.array([b.main(tau0)[0] for b in bases[0]]), mult)
    main_d = np.repeat(np.array([b.main(tau0)[1] for b in bases[0]]), mult)

    lam0_at0 = eigenvalue_at(bg, lattice.lam0_slot, 0.0)
    ell = log_grad_weights(part, lam0_at0)
    oc = data.O_field.coeffs
    y_val = 2.0 * oc * aux_v + 2.0 * ell * oc * main_v
    y_der = 2.0 * oc * aux_d + 2.0 * ell * oc * main_d
    j_val = data.frak_h.coeffs * main_v
    j_der = data.frak_h.coeffs * main_d

    base = seed_state(config, lattice, bg, data, tau_seed=tau0)
    values = np.concatenate([base.values, y_val[None], j_val[None]])
    derivs = np.concatenate([base.derivs, y_der[None], j_der[None]])

    # augmented coupling: the log-branch row is purely self-coupled, the
    # renormalized row keeps the self term plus the original cross terms
    c_ext = n_cols + 2
    scale = np.zeros((c_ext, c_ext))
    psi = np.zeros((c_ext, c_ext), dtype=int)
    scale[:n_cols, :n_cols] = config.coupling_scale
    psi[:n_cols, :n_cols] = config.coupling_psi
    a00, p00 = config.coupling_scale[0, 0], config.coupling_psi[0, 0]
    scale[n_cols, n_cols], psi[n_cols, n_cols] = a00, p00
    scale[n_cols + 1, n_cols + 1], psi[n_cols + 1, n_cols + 1] = a00, p00
    scale[n_cols + 1, 1:n_cols] = config.coupling_scale[0, 1:]
    psi[n_cols + 1, 1:n_cols] = config.coupling_psi[0, 1:]

    signs = np.ones(c_ext)
    if config.system == "second":
        signs[1:n_cols] = -1.0

    forcings = config.forcing_list()
    aug_forcings = tuple(forcings + [Forcing(), forcings[0]])
    aug = SystemConfig(
        n_regular=c_ext - 1, system="first", top_order=config.top_order,
        coupling_scale=scale, coupling_psi=psi, forcings=aug_forcings,
        tau_seed=tau0, rtol=config.rtol, atol=config.atol,
        basis_order=config.basis_order,
    )
    # drag signs of the embedded regular block must follow the original family
    taus = _eval_taus(tau0, 1.0, grid)
    src = _forcing_source(aug, lattice, range(c_ext))
    rhs = _make_log_rhs(lattice.lam0_slot, bg, signs, scale, psi, src)
    sol = _solve_log(rhs, _state_to_y(values, derivs, tau0), tau0, 1.0, taus,
                     config.rtol, config.atol)

    vals = np.empty((len(taus), c_ext, n_slots))
    ders = np.empty_like(vals)
    for t in range(len(taus)):
        vals[t], ders[t] = _y_to_state(sol.y[:, t], c_ext, n_slots, taus[t])

    def one_column(idx):
        return Trajectory(
            taus=taus, values=vals[:, idx : idx + 1, :], derivs=ders[:, idx : idx + 1, :],
            config=config, lattice=lattice, bg=bg,
        )

    return one_column(n_cols), one_column(n_cols + 1)


# -------------------------------------------------- epsilon-regularization


@dataclass(frozen=True)
class EpsilonReport:
    eps_ladder: tuple[float, ...]
    discrepancies: tuple[float, ...]
    ratios: tuple[float, ...]
    monotone: bool
    passed: bool


def epsilon_construction_check(config, lattice, bg, data, eps=1e-2, rungs=3, part=None):
    """Cutoff-stability of the renormalized construction.

    Subtracting the leading expansion from column 0 (and the limits from the
    regular columns) leaves a problem with zero Cauchy data at any small
    cutoff; runs started at eps, eps/2, ... must agree at tau = 1 up to a
    discrepancy shrinking like eps^2 log^2 eps, i.e. successive differences
    contract by at least ~3 per halving at eps = 1e-2.  Differences are
    measured in the phase-free envelope metric at tau = 1.
    """
    if not 0.0 < eps < 0.1:
        raise ValueError(f"cutoff must lie in (0, 0.1), got {eps}")
    if rungs < 2:
        raise ValueError("need at least two rungs to form a ratio")
    n_cols, n_slots = config.n_columns, lattice.n_slots
    oc, hc = data.O_field.coeffs, data.h_field.coeffs
    limits = np.zeros((n_cols, n_slots))
    for i in range(1, n_cols):
        limits[i] = data.phi0_fields[i - 1].coeffs
    scale, psi = config.coupling_scale, config.coupling_psi
    signs = config.drag_signs
    base_src = _forcing_source(config, lattice, range(n_cols))

    def subtracted(tau):
        s = limits.copy()
        s[0] = 2.0 * oc * math.log(tau) + hc
        return s

    def source(tau):
        f = float(bg.f(tau))
        lam = lattice.lam0_slot / (f * f)
        psi_s = _psi_scalars(bg, tau)
        amat = scale * psi_s[psi]
        s = subtracted(tau)
        drive = (amat @ s) * np.sqrt(lam) - 4.0 * lam * s
        if base_src is not None:
            drive = drive + base_src(tau)
        return drive

    rhs = _make_log_rhs(lattice.lam0_slot, bg, signs, scale, psi, source)
    lam1 = eigenvalue_at(bg, lattice.lam0_slot, 1.0)
    omega = 2.0 * np.sqrt(np.maximum(lam1, 1.0))

    ends = []
    ladder = [eps / 2.0**j for j in range(rungs + 1)]
    for cut in ladder:
        sol = _solve_log(rhs, np.zeros(2 * n_cols * n_slots), cut, 1.0,
                         np.array([cut, 1.0]), config.rtol, config.atol)
        v, d = _y_to_state(sol.y[:, -1], n_cols, n_slots, 1.0)
        ends.append((v, d))

    discrepancies = []
    for (v1, d1), (v2, d2) in zip(ends[:-1], ends[1:]):
        dv, dd = v1 - v2, d1 - d2
        discrepancies.append(float(np.sqrt(np.sum(dv * dv) + np.sum((dd / omega) ** 2))))
    ratios = []
    for a, b in zip(discrepancies[:-1], discrepancies[1:]):
        ratios.append(a / b if b > 0.0 else math.inf)
    monotone = all(a >= b for a, b in zip(discrepancies[:-1], discrepancies[1:]))
    zero_everything = all(d == 0.0 for d in discrepancies)
    passed = zero_everything or (monotone and all(r >= 3.0 for r in ratios))
    return EpsilonReport(
        eps_ladder=tuple(ladder), discrepancies=tuple(discrepancies),
        ratios=tuple(ratios), monotone=monotone, passed=passed,
    )


# ------------------------------------------------- ensemble fast machinery


def fundamental_matrices(config, lattice, bg, tau_anchor, taus):
    """Per-degree propagators from tau_anchor to each requested time.

    Returns (n_degrees, n_times, d, d) with d = 2 n_columns, acting on the
    stacked (values, tau * derivs) vector of one slot.  The per-mode system
    only depends on the degree, so ensembles over random data reduce to
    matrix multiplication against these.
    """
    n_cols = config.n_columns
    d = 2 * n_cols
    n_deg = lattice.l_max + 1
    lam0_cols = np.repeat(lattice.lam0, d)
    rhs = _make_log_rhs(lam0_cols, bg, config.drag_signs,
                        config.coupling_scale, config.coupling_psi, None)
    v0 = np.zeros((n_cols, n_deg * d))
    t0 = np.zeros_like(v0)
    for j in range(d):
        cols = np.arange(n_deg) * d + j
        if j < n_cols:
            v0[j, cols] = 1.0
        else:
            t0[j - n_cols, cols] = 1.0
    taus = np.asarray(taus, dtype=float)
    sol = _solve_log(rhs, np.concatenate([v0.ravel(), t0.ravel()]),
                     tau_anchor, taus[-1], taus, config.rtol, config.atol)
    out = np.empty((n_deg, len(taus), d, d))
    for t in range(len(taus)):
        y = sol.y[:, t]
        v = y[: n_cols * n_deg * d].reshape(n_cols, n_deg, d)
        th = y[n_cols * n_deg * d :].reshape(n_cols, n_deg, d)
        out[:, t, :n_cols, :] = np.moveaxis(v, 1, 0)
        out[:, t, n_cols:, :] = np.moveaxis(th, 1, 0)
    return out


def forced_profile(config, lattice, bg, tau_anchor, taus):
    """Zero-data response to the configured forcing, per degree.

    Returns (n_degrees, n_times, d); every slot of a degree is forced with
    the same profile, so this broadcasts across slots.
    """
    n_cols = config.n_columns
    d = 2 * n_cols
    n_deg = lattice.l_max + 1
    forcings = config.forcing_list()
    weights = [f.degree_weights(lattice) for f in forcings]
    if all(f.kind == "zero" or f.amplitude == 0.0 for f in forcings):
        return np.zeros((n_deg, len(taus), d))

    def source(tau):
        return np.stack([f.profile(tau) * w for f, w in zip(forcings, weights)])

    rhs = _make_log_rhs(lattice.lam0, bg, config.drag_signs,
                        config.coupling_scale, config.coupling_psi, source)
    taus = np.asarray(taus, dtype=float)
    sol = _solve_log(rhs, np.zeros(2 * n_cols * n_deg), tau_anchor, taus[-1], taus,
                     config.rtol, config.atol)
    out = np.empty((n_deg, len(taus), d))
    for t in range(len(taus)):
        y = sol.y[:, t]
        out[:, t, :n_cols] = y[: n_cols * n_deg].reshape(n_cols, n_deg).T
        out[:, t, n_cols:] = y[n_cols * n_deg :].reshape(n_cols, n_deg).T
    return out


def data_to_state_maps(config, lattice, bg, tau_seed, part):
    """Per-degree linear maps from data vectors to seed states.

    Data vector per slot: (O, frak_h, phi0_1..phi0_I); output is the stacked
    (values, tau * derivs) seed vector of length 2 n_columns.
    """
    n_cols = config.n_columns
    d = 2 * n_cols
    bases = _column_bases(config, lattice, bg)
    _seed_tolerance_check(config, bases, tau_seed)
    lam0_at0 = eigenvalue_at(bg, lattice.lam0, 0.0)
    ell = log_grad_weights(part, lam0_at0)
    n_deg = lattice.l_max + 1
    maps = np.zeros((n_deg, d, n_cols + 1))
    for l in range(n_deg):
        b0 = bases[0][l]
        av, ad = b0.aux(tau_seed)
        mv, md = b0.main(tau_seed)
        # h = frak_h + 2 ell O, so the O column carries 2(aux + ell*main)
        maps[l, 0, 0] = 2.0 * (av + ell[l] * mv)
        maps[l, n_cols, 0] = tau_seed * 2.0 * (ad + ell[l] * md)
        maps[l, 0, 1] = mv
        maps[l, n_cols, 1] = tau_seed * md
        for i in range(1, n_cols):
            bv, bd = bases[i][l].main(tau_seed)
            maps[l, i, 1 + i] = bv
            maps[l, n_cols + i, 1 + i] = tau_seed * bd
    return maps
