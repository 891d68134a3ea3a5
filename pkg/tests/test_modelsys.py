import math
import warnings

import mpmath
import numpy as np
import pytest

from shellwave import (
    Field,
    Forcing,
    SystemConfig,
    bessel_oracle,
    build_lattice,
    constant_background,
    constant_mode_run,
    data_to_state_maps,
    eigenvalue_at,
    epsilon_construction_check,
    extract_asymptotic_data,
    forced_profile,
    frobenius_basis,
    fundamental_matrices,
    integrate,
    log_grad_weights,
    make_asymptotic_data,
    make_time_grid,
    random_coupling,
    renormalize_h,
    seed_state,
    split_singular_component,
    zero_field,
)
from tests.conftest import bounded_field, zero_like


# ------------------------------------------------------------ bessel oracle

# Abramowitz & Stegun table values, J0/Y0 at integer and half arguments
AS_TABLE = [
    ("J", 0.5, 0.9384698072408130),
    ("J", 1.0, 0.7651976865579666),
    ("J", 2.0, 0.2238907791412357),
    ("J", 5.0, -0.1775967713143383),
    ("Y", 0.5, -0.4445187335067066),
    ("Y", 1.0, 0.0882569642156769),
    ("Y", 2.0, 0.5103756726497451),
    ("Y", 5.0, -0.3085176252490338),
]


def test_bessel_oracle_frozen_table():
    # bessel_oracle(kind, lam, tau) evaluates the branch at x = 2 sqrt(lam) tau,
    # so lam = 1, tau = x/2 hits the plain argument
    for kind, x, expect in AS_TABLE:
        got = bessel_oracle(kind, 1.0, x / 2.0)
        assert got == pytest.approx(expect, abs=2e-15), (kind, x)


def test_bessel_oracle_against_mpmath():
    mpmath.mp.dps = 30
    xs = [0.05, 0.3, 1.0, 4.0, 11.0, 11.9, 12.1, 13.0, 25.0, 80.0, 200.0, 400.0]
    worst = 0.0
    for x in xs:
        for kind, ref_fn in (("J", mpmath.besselj), ("Y", mpmath.bessely)):
            ref = float(ref_fn(0, x))
            got = bessel_oracle(kind, 1.0, x / 2.0)
            worst = max(worst, abs(got - ref) / max(abs(ref), 1e-3))
    assert worst <= 1e-10


def test_bessel_oracle_series_asymptotic_seam():
    # both evaluation routes must hold full accuracy right at the switchover
    mpmath.mp.dps = 25
    for kind in ("J", "Y"):
        fn = mpmath.besselj if kind == "J" else mpmath.bessely
        assert bessel_oracle(kind, 1.0, 5.9995) == pytest.approx(
            float(fn(0, 11.999)), abs=1e-10)
        assert bessel_oracle(kind, 1.0, 6.0005) == pytest.approx(
            float(fn(0, 12.001)), abs=1e-10)


def test_bessel_oracle_origin_and_errors():
    assert bessel_oracle("J", 4.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        bessel_oracle("Y", 4.0, 0.0)
    with pytest.raises(ValueError):
        bessel_oracle("K", 1.0, 0.5)


def test_bessel_oracle_vectorized():
    taus = np.array([0.25, 0.5, 1.0])
    vals = bessel_oracle("J", 1.0, taus)
    assert vals.shape == (3,)
    assert vals[1] == pytest.approx(0.7651976865579666, abs=1e-14)


# --------------------------------------------------------- frobenius bases


def test_q_series_frozen(bg):
    basis = frobenius_basis(1.0, bg, order=4)
    # q = 4 lam0 / f^2 = lam0 * (16 - 128 tau^2 + 768 tau^4 - ...)
    assert basis.q[0] == pytest.approx(16.0)
    assert basis.q[1] == pytest.approx(-128.0)
    assert basis.q[2] == pytest.approx(768.0)
    basis2 = frobenius_basis(3.0, bg, order=2)
    assert basis2.q[0] == pytest.approx(48.0)


def test_frobenius_drag_plus_matches_j0_y0_series():
    # constant f = 1 gives q = 4 lam0; lam0 = 1 is J0(2 tau) / Y0-type aux
    cb = constant_background(1.0)
    basis = frobenius_basis(1.0, cb, order=6)
    # main = sum (-1)^m tau^(2m) / (m!)^2
    for m in range(5):
        assert basis.main_poly[m] == pytest.approx((-1.0) ** m / math.factorial(m) ** 2, rel=1e-13)
    # aux correction carries the harmonic numbers: b_m = (-1)^(m+1) H_m/(m!)^2
    assert basis.aux_poly[1] == pytest.approx(1.0)
    assert basis.aux_poly[2] == pytest.approx(-3.0 / 8.0)
    assert basis.aux_poly[3] == pytest.approx((1.0 + 0.5 + 1.0 / 3.0) / 36.0, rel=1e-13)


EULER = float(np.euler_gamma)


def test_frobenius_aux_is_scaled_y0():
    # aux = main log tau + w must equal (pi/2) Y0(2 tau) - gamma J0(2 tau):
    # the argument 2 tau turns the usual log(x/2) of Y0 into a plain log tau
    cb = constant_background(1.0)
    basis = frobenius_basis(1.0, cb, order=14)
    for tau in (0.05, 0.2, 0.6):
        y0 = float(mpmath.bessely(0, 2.0 * tau))
        j0 = float(mpmath.besselj(0, 2.0 * tau))
        got = basis.aux(tau)[0]
        assert got == pytest.approx(math.pi / 2.0 * y0 - EULER * j0, abs=1e-11), tau


def test_frobenius_drag_minus_matches_tau_j1():
    # aux branch with roots {0, 2}: tau J1(2 tau) normalized to tau^2 leading term
    cb = constant_background(1.0)
    basis = frobenius_basis(1.0, cb, order=10, drag_sign=-1)
    assert basis.aux_poly[1] == pytest.approx(1.0)
    assert basis.aux_poly[2] == pytest.approx(-0.5)
    assert basis.aux_poly[3] == pytest.approx(1.0 / 12.0, rel=1e-13)
    assert basis.log_coupling == pytest.approx(-2.0)
    for tau in (0.1, 0.4):
        ref = tau * float(mpmath.besselj(1, 2.0 * tau))
        assert basis.aux(tau)[0] == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("drag", [1, -1])
def test_frobenius_solves_equation(bg, drag):
    # residual of u'' + drag u'/tau + q(tau) u at series order 12, via FD
    lam0 = 6.0
    basis = frobenius_basis(lam0, bg, order=12, drag_sign=drag)
    h = 1e-5
    for branch in ("main", "aux"):
        fn = getattr(basis, branch)
        for tau in (0.02, 0.05):
            up, _ = fn(tau + h)
            um, _ = fn(tau - h)
            u0, du = fn(tau)
            d2 = (up - 2 * u0 + um) / (h * h)
            qv = sum(c * tau ** (2 * i) for i, c in enumerate(basis.q))
            resid = d2 + drag * du / tau + qv * u0
            scale = abs(qv * u0) + abs(du / tau) + 1.0
            assert abs(resid) / scale < 5e-5, (branch, tau)


def test_frobenius_derivative_consistent(bg):
    basis = frobenius_basis(4.0, bg, order=12)
    h = 1e-6
    for tau in (0.03, 0.1):
        v_p = basis.main(tau + h)[0]
        v_m = basis.main(tau - h)[0]
        assert basis.main(tau)[1] == pytest.approx((v_p - v_m) / (2 * h), rel=1e-7)
        a_p = basis.aux(tau + h)[0]
        a_m = basis.aux(tau - h)[0]
        assert basis.aux(tau)[1] == pytest.approx((a_p - a_m) / (2 * h), rel=1e-6)


def test_frobenius_validation(bg):
    with pytest.raises(ValueError):
        frobenius_basis(1.0, bg, order=1)
    with pytest.raises(ValueError):
        frobenius_basis(1.0, bg, drag_sign=0)


# ------------------------------------------------------------ configuration


def test_config_validation():
    with pytest.raises(ValueError):
        SystemConfig(n_regular=0)
    with pytest.raises(ValueError):
        SystemConfig(n_regular=1, system="third")
    with pytest.raises(ValueError):
        SystemConfig(n_regular=1, tau_seed=1.5)
    with pytest.raises(ValueError):
        SystemConfig(n_regular=1, coupling_scale=np.zeros((3, 3)))
    bad_psi = np.zeros((2, 2), dtype=int)
    bad_psi[0, 1] = 5
    with pytest.raises(ValueError):
        SystemConfig(n_regular=1, coupling_psi=bad_psi)


def test_second_family_rejects_feedback_to_singular():
    scale = np.zeros((3, 3))
    scale[2, 0] = 0.1
    with pytest.raises(ValueError, match="forbids coupling of regular rows"):
        SystemConfig(n_regular=2, system="second", coupling_scale=scale)
    # the first family allows the same entry
    SystemConfig(n_regular=2, system="first", coupling_scale=scale)


def test_random_coupling_respects_family():
    rng = np.random.default_rng(0)
    mat, psi = random_coupling(3, "second", rng, 0.2)
    assert np.all(mat[1:, 0] == 0.0)
    assert np.all((psi >= 0) & (psi <= 2))
    mat1, _ = random_coupling(2, "first", rng, 0.5)
    assert np.max(np.abs(mat1)) <= 0.5


def test_forcing_validation():
    with pytest.raises(ValueError):
        Forcing(kind="sawtooth")
    with pytest.raises(ValueError):
        Forcing(kind="tau_bump", amplitude=1.0, width=0.0)
    with pytest.raises(ValueError):
        Forcing(kind="mode_pulse", amplitude=1.0)
    with pytest.raises(ValueError):
        SystemConfig(n_regular=2, forcings=(Forcing(),))


def test_asymptotic_data_requires_one_finite_part(small_lattice, part, bg):
    z = zero_field(small_lattice)
    with pytest.raises(ValueError):
        make_asymptotic_data(small_lattice, part, bg, O=z)
    with pytest.raises(ValueError):
        make_asymptotic_data(small_lattice, part, bg, O=z, h=z, frak_h=z)


def test_renormalize_round_trips(small_lattice, part, bg):
    rng = np.random.default_rng(0)
    O = bounded_field(small_lattice, rng)
    h = bounded_field(small_lattice, rng)
    data = make_asymptotic_data(small_lattice, part, bg, O=O, h=h, phis=())
    again = renormalize_h(data.h_field, data.O_field, part, bg)
    assert np.allclose(again.coeffs, data.frak_h.coeffs, atol=1e-15)
    # giving frak_h instead reproduces h
    data2 = make_asymptotic_data(small_lattice, part, bg, O=O, frak_h=data.frak_h)
    assert np.allclose(data2.h_field.coeffs, h.coeffs, atol=1e-14)


def test_renormalize_zero_mode_is_identity(small_lattice, part, bg):
    # ell(0) = 0: a zero-mode-only O leaves h untouched
    coeffs = np.zeros(small_lattice.n_slots)
    coeffs[small_lattice.slots_of_degree(0)] = 2.0
    O = Field(lattice=small_lattice, coeffs=coeffs)
    rng = np.random.default_rng(1)
    h = bounded_field(small_lattice, rng)
    out = renormalize_h(h, O, part, bg)
    assert np.allclose(out.coeffs, h.coeffs, atol=1e-15)


# ----------------------------------------------------------------- seeding


def test_seed_state_log_conventions(part, bg):
    lat = build_lattice(2, 2)
    tau_s = 1e-4
    unit = np.zeros(lat.n_slots)
    sl = lat.slots_of_degree(1)
    unit[sl.start] = 1.0
    O = Field(lattice=lat, coeffs=unit)
    cfg = SystemConfig(n_regular=1, tau_seed=tau_s)
    lam_at0 = 4.0 * 2.0  # lam0 = 2 quadrupled at tau = 0
    ell = log_grad_weights(part, np.array([lam_at0]))[0]

    # frak_h = 0: the finite part is the 2 ell correction
    d1 = make_asymptotic_data(lat, part, bg, O=O, frak_h=zero_like(lat), phis=[zero_like(lat)])
    s1 = seed_state(cfg, lat, bg, d1)
    # expansions hold up to the tau^2 log^2 tau correction, here ~1e-6
    expect1 = 2.0 * math.log(tau_s) + 2.0 * ell
    assert s1.values[0, sl.start] == pytest.approx(expect1, abs=1e-5)

    # raw h = 0: no correction survives
    d2 = make_asymptotic_data(lat, part, bg, O=O, h=zero_like(lat), phis=[zero_like(lat)])
    s2 = seed_state(cfg, lat, bg, d2)
    assert s2.values[0, sl.start] == pytest.approx(2.0 * math.log(tau_s), abs=1e-5)

    # either way the derivative is 2 O / tau to leading order
    assert s1.derivs[0, sl.start] == pytest.approx(2.0 / tau_s, rel=1e-5)


def test_seed_state_zero_mode_exact(part, bg):
    # lam0 = 0 solves u'' + u'/tau = 0 exactly: column is 2 O log tau + h
    lat = build_lattice(2, 0)
    O = Field(lattice=lat, coeffs=np.array([1.0]))
    h = Field(lattice=lat, coeffs=np.array([0.25]))
    cfg = SystemConfig(n_regular=1, tau_seed=1e-4, rtol=1e-12, atol=1e-14)
    data = make_asymptotic_data(lat, part, bg, O=O, h=h, phis=[zero_like(lat)])
    state = seed_state(cfg, lat, bg, data)
    assert state.values[0, 0] == pytest.approx(2.0 * math.log(1e-4) + 0.25, rel=1e-12)
    traj = integrate(cfg, lat, bg, state, 1.0)
    # at tau = 1 the log vanishes: phi = h, tau phi' = 2 O
    assert traj.values[-1, 0, 0] == pytest.approx(0.25, abs=1e-9)
    assert traj.derivs[-1, 0, 0] == pytest.approx(2.0, rel=1e-9)


def test_seed_rejects_large_tau(part, bg, small_lattice):
    cfg = SystemConfig(n_regular=1, tau_seed=0.3)
    rng = np.random.default_rng(0)
    data = make_asymptotic_data(
        small_lattice, part, bg, O=bounded_field(small_lattice, rng),
        h=bounded_field(small_lattice, rng), phis=[bounded_field(small_lattice, rng)],
    )
    with pytest.raises(ValueError, match="tau"):
        seed_state(cfg, small_lattice, bg, data)


def test_seed_data_shape_mismatch(part, bg, small_lattice):
    cfg = SystemConfig(n_regular=2)
    rng = np.random.default_rng(0)
    data = make_asymptotic_data(
        small_lattice, part, bg, O=bounded_field(small_lattice, rng),
        h=bounded_field(small_lattice, rng), phis=[bounded_field(small_lattice, rng)],
    )
    with pytest.raises(ValueError, match="regular columns"):
        seed_state(cfg, small_lattice, bg, data)


# ------------------------------------------------------------- integration


def test_constant_run_matches_oracle(bg):
    # raw coefficient 4 lam integrates the same mode the oracle evaluates at lam
    lam = 25.0
    tau0, tau1 = 0.05, 1.0
    taus = np.linspace(tau0, tau1, 7)
    mpmath.mp.dps = 25
    j_v = float(mpmath.besselj(0, 2 * math.sqrt(lam) * tau0))
    j_d = float(-2 * math.sqrt(lam) * mpmath.besselj(1, 2 * math.sqrt(lam) * tau0))
    got = constant_mode_run(4.0 * lam, j_v, j_d, tau0, tau1, taus=taus)
    for t, u in zip(got[0], got[1]):
        ref = bessel_oracle("J", lam, t)
        assert u == pytest.approx(ref, abs=1e-9), t


def test_integrate_linearity(part, bg, small_lattice):
    rng = np.random.default_rng(7)
    cs, cp = random_coupling(1, "first", rng, 0.1)
    cfg = SystemConfig(n_regular=1, coupling_scale=cs, coupling_psi=cp,
                       rtol=1e-12, atol=1e-14)
    grid = make_time_grid(cfg.tau_seed, 1.0, count=9)

    def run(data):
        return integrate(cfg, small_lattice, bg, seed_state(cfg, small_lattice, bg, data),
                         1.0, grid=grid)

    d1 = make_asymptotic_data(small_lattice, part, bg, O=bounded_field(small_lattice, rng),
                              h=bounded_field(small_lattice, rng),
                              phis=[bounded_field(small_lattice, rng)])
    d2 = make_asymptotic_data(small_lattice, part, bg, O=bounded_field(small_lattice, rng),
                              h=bounded_field(small_lattice, rng),
                              phis=[bounded_field(small_lattice, rng)])
    a, b = 2.0, -0.5
    combo = make_asymptotic_data(
        small_lattice, part, bg,
        O=a * d1.O_field + b * d2.O_field,
        h=a * d1.h_field + b * d2.h_field,
        phis=[a * d1.phi0_fields[0] + b * d2.phi0_fields[0]],
    )
    t1, t2, tc = run(d1), run(d2), run(combo)
    lin = a * t1.values + b * t2.values
    scale = np.max(np.abs(tc.values))
    assert np.max(np.abs(tc.values - lin)) / scale <= 1e-10
    lin_d = a * t1.derivs + b * t2.derivs
    scale_d = np.max(np.abs(tc.derivs))
    assert np.max(np.abs(tc.derivs - lin_d)) / scale_d <= 1e-10


def test_stored_derivative_matches_finite_difference(part, bg):
    # centered differences of phi converge to the stored phi' at O(dt^2)
    lat = build_lattice(2, 3)
    rng = np.random.default_rng(3)
    cfg = SystemConfig(n_regular=1, rtol=1e-12, atol=1e-14)
    data = make_asymptotic_data(lat, part, bg, O=bounded_field(lat, rng),
                                h=bounded_field(lat, rng), phis=[bounded_field(lat, rng)])
    state = seed_state(cfg, lat, bg, data)

    def fd_error(n_pts):
        traj = integrate(cfg, lat, bg, state, 0.9,
                         grid=make_time_grid(0.5, 0.9, count=n_pts, spacing="linear"))
        # the trajectory starts at the seed time; keep the uniform segment
        keep = traj.taus >= 0.5 - 1e-12
        vals, ders, ts = traj.values[keep], traj.derivs[keep], traj.taus[keep]
        dt = ts[1] - ts[0]
        fd = (vals[2:] - vals[:-2]) / (2 * dt)
        return np.max(np.abs(fd - ders[1:-1]))

    e1 = fd_error(41)
    e2 = fd_error(81)
    # halving the step should cut the error by about four
    assert e1 / e2 > 3.0
    assert e2 < 1e-3


def test_integrate_zero_data_stays_zero(part, bg, small_lattice):
    cfg = SystemConfig(n_regular=2)
    data = make_asymptotic_data(small_lattice, part, bg, O=zero_like(small_lattice),
                                h=zero_like(small_lattice),
                                phis=[zero_like(small_lattice)] * 2)
    traj = integrate(cfg, small_lattice, bg, seed_state(cfg, small_lattice, bg, data), 1.0)
    assert np.max(np.abs(traj.values)) == 0.0


def test_roundtrip_recovery(part, bg):
    lat = build_lattice(2, 4)
    rng = np.random.default_rng(11)
    cfg = SystemConfig(n_regular=1, rtol=1e-11, atol=1e-13)
    data = make_asymptotic_data(lat, part, bg, O=bounded_field(lat, rng),
                                h=bounded_field(lat, rng), phis=[bounded_field(lat, rng)])
    fwd = integrate(cfg, lat, bg, seed_state(cfg, lat, bg, data), 1.0)
    back = integrate(cfg, lat, bg, fwd.state_at(-1), cfg.tau_seed)
    rec, diag = extract_asymptotic_data(cfg, lat, bg, back.state_at(-1), part)
    for got, want in ((rec.O_field, data.O_field), (rec.h_field, data.h_field),
                      (rec.phi0_fields[0], data.phi0_fields[0])):
        rel = np.max(np.abs(got.coeffs - want.coeffs) / np.abs(want.coeffs))
        assert rel <= 1e-6
    assert diag["ill_conditioned_degrees"] == 0


def test_extract_pure_regular_has_no_log_branch(part, bg, small_lattice):
    rng = np.random.default_rng(13)
    cfg = SystemConfig(n_regular=1, rtol=1e-11, atol=1e-13)
    data = make_asymptotic_data(small_lattice, part, bg, O=zero_like(small_lattice),
                                h=bounded_field(small_lattice, rng),
                                phis=[bounded_field(small_lattice, rng)])
    state = seed_state(cfg, small_lattice, bg, data)
    rec, diag = extract_asymptotic_data(cfg, small_lattice, bg, state, part)
    assert np.max(np.abs(rec.O_field.coeffs)) <= 1e-10
    assert diag["singular_contamination"] <= 1e-10


def test_extract_warns_when_series_cannot_reach(part, bg):
    lat = build_lattice(2, 8)
    rng = np.random.default_rng(17)
    cfg = SystemConfig(n_regular=1, rtol=1e-10, atol=1e-12)
    data = make_asymptotic_data(lat, part, bg, O=bounded_field(lat, rng),
                                h=bounded_field(lat, rng), phis=[bounded_field(lat, rng)])
    traj = integrate(cfg, lat, bg, seed_state(cfg, lat, bg, data), 0.3)
    with pytest.warns(RuntimeWarning, match="ill-conditioned"):
        rec, diag = extract_asymptotic_data(cfg, lat, bg, traj.state_at(-1), part)
    assert diag["ill_conditioned_degrees"] > 0


def test_second_family_regulars_ignore_singular_data(part, bg, small_lattice):
    rng = np.random.default_rng(19)
    cs, cp = random_coupling(2, "second", rng, 0.1)
    cfg = SystemConfig(n_regular=2, system="second", coupling_scale=cs, coupling_psi=cp)
    phis = [bounded_field(small_lattice, rng) for _ in range(2)]
    runs = []
    for _ in range(2):
        data = make_asymptotic_data(small_lattice, part, bg,
                                    O=bounded_field(small_lattice, rng),
                                    h=bounded_field(small_lattice, rng), phis=phis)
        traj = integrate(cfg, small_lattice, bg, seed_state(cfg, small_lattice, bg, data), 1.0)
        runs.append(traj)
    assert np.array_equal(runs[0].values[:, 1:, :], runs[1].values[:, 1:, :])
    assert np.array_equal(runs[0].derivs[:, 1:, :], runs[1].derivs[:, 1:, :])
    # column 0 does depend on its own data
    assert not np.array_equal(runs[0].values[:, 0, :], runs[1].values[:, 0, :])


def test_mode_rhs_forcing_flag(part, bg, small_lattice):
    from shellwave import mode_rhs

    cfg = SystemConfig(
        n_regular=1,
        forcings=(Forcing(kind="tau_bump", amplitude=1.0, center=0.5, width=0.1), Forcing()),
    )
    values = np.zeros((2, small_lattice.n_slots))
    derivs = np.zeros_like(values)
    dv_f, dd_f = mode_rhs(cfg, small_lattice, bg, 0.5, values, derivs, include_forcing=True)
    dv_0, dd_0 = mode_rhs(cfg, small_lattice, bg, 0.5, values, derivs, include_forcing=False)
    assert np.max(np.abs(dd_f)) > 0.0
    assert np.max(np.abs(dd_0)) == 0.0
    assert np.allclose(dv_f, dv_0)


# ------------------------------------------------------- split & epsilon


def test_split_reconstructs_and_tags_branches(part, bg):
    lat = build_lattice(2, 4)
    rng = np.random.default_rng(23)
    cs, cp = random_coupling(1, "first", rng, 0.05)
    cfg = SystemConfig(n_regular=1, coupling_scale=cs, coupling_psi=cp,
                       tau_seed=1e-5, rtol=1e-11, atol=1e-13)
    data = make_asymptotic_data(lat, part, bg, O=bounded_field(lat, rng),
                                h=bounded_field(lat, rng), phis=[bounded_field(lat, rng)])
    grid = make_time_grid(1e-4, 1.0, count=61)
    ty, tj = split_singular_component(cfg, lat, bg, data, grid, part=part)
    direct = integrate(cfg, lat, bg, seed_state(cfg, lat, bg, data), 1.0, grid=grid)
    num = np.max(np.abs(ty.values[:, 0, :] + tj.values[:, 0, :] - direct.values[:, 0, :]))
    den = np.max(np.abs(direct.values[:, 0, :]))
    assert num / den <= 1e-9
    # the log branch is 2 O (log tau + ell) + O(tau^2 log^2 tau)
    small = ty.taus < 1e-3
    ell = log_grad_weights(part, eigenvalue_at(bg, lat.lam0_slot, 0.0))
    expect = (2.0 * data.O_field.coeffs[None, :] * (np.log(ty.taus[small])[:, None] + ell))
    drift = np.max(np.abs(ty.values[small, 0, :] - expect))
    assert drift <= 1e-4
    assert np.max(np.abs(tj.values[small, 0, :])) <= 10.0 * np.max(np.abs(data.frak_h.coeffs))


def test_split_requires_partition(part, bg, small_lattice):
    rng = np.random.default_rng(29)
    cfg = SystemConfig(n_regular=1)
    data = make_asymptotic_data(small_lattice, part, bg, O=bounded_field(small_lattice, rng),
                                h=bounded_field(small_lattice, rng),
                                phis=[bounded_field(small_lattice, rng)])
    grid = make_time_grid(1e-3, 1.0, count=9)
    with pytest.raises(ValueError, match="partition"):
        split_singular_component(cfg, small_lattice, bg, data, grid)


def test_epsilon_check_zero_data(part, bg, small_lattice):
    cfg = SystemConfig(n_regular=1)
    data = make_asymptotic_data(small_lattice, part, bg, O=zero_like(small_lattice),
                                h=zero_like(small_lattice), phis=[zero_like(small_lattice)])
    rep = epsilon_construction_check(cfg, small_lattice, bg, data, eps=1e-2)
    assert rep.passed
    assert all(d == 0.0 for d in rep.discrepancies)


def test_epsilon_check_range(part, bg, small_lattice):
    rng = np.random.default_rng(31)
    cfg = SystemConfig(n_regular=1)
    data = make_asymptotic_data(small_lattice, part, bg, O=bounded_field(small_lattice, rng),
                                h=bounded_field(small_lattice, rng),
                                phis=[bounded_field(small_lattice, rng)])
    with pytest.raises(ValueError):
        epsilon_construction_check(cfg, small_lattice, bg, data, eps=0.5)


def test_epsilon_ladder_soft_at_centi(part, bg):
    # the documented 1e-2 example: ratio should sit near the asymptotic 3.02
    lat = build_lattice(2, 4)
    rng = np.random.default_rng(37)
    cfg = SystemConfig(n_regular=1, rtol=1e-11, atol=1e-13)
    data = make_asymptotic_data(lat, part, bg, O=bounded_field(lat, rng),
                                h=bounded_field(lat, rng), phis=[bounded_field(lat, rng)])
    rep = epsilon_construction_check(cfg, lat, bg, data, eps=1e-2)
    assert rep.monotone
    for r in rep.ratios:
        assert 2.7 <= r <= 3.6


# ------------------------------------------------------------- propagators


def test_fundamental_matrices_match_integrate(part, bg):
    lat = build_lattice(2, 3)
    rng = np.random.default_rng(41)
    cs, cp = random_coupling(1, "first", rng, 0.1)
    cfg = SystemConfig(
        n_regular=1, coupling_scale=cs, coupling_psi=cp,
        forcings=(Forcing(kind="tau_bump", amplitude=0.3, center=0.5, width=0.1), Forcing()),
        rtol=1e-11, atol=1e-13,
    )
    data = make_asymptotic_data(lat, part, bg, O=bounded_field(lat, rng),
                                h=bounded_field(lat, rng), phis=[bounded_field(lat, rng)])
    state = seed_state(cfg, lat, bg, data)
    taus = np.geomspace(cfg.tau_seed, 1.0, 9)
    taus[0], taus[-1] = cfg.tau_seed, 1.0
    props = fundamental_matrices(cfg, lat, bg, cfg.tau_seed, taus)
    forced = forced_profile(cfg, lat, bg, cfg.tau_seed, taus)
    direct = integrate(cfg, lat, bg, state, 1.0,
                       grid=make_time_grid(cfg.tau_seed, 1.0, count=9))

    n_cols = cfg.n_columns
    worst = 0.0
    for l in range(lat.l_max + 1):
        sl = lat.slots_of_degree(l)
        for s in range(sl.start, sl.stop):
            y0 = np.concatenate([state.values[:, s], cfg.tau_seed * state.derivs[:, s]])
            for t in range(len(taus)):
                y = props[l, t] @ y0 + forced[l, t]
                ref_v = direct.values[t, :, s]
                ref_d = direct.derivs[t, :, s] * taus[t]
                worst = max(worst, float(np.max(np.abs(y[:n_cols] - ref_v))))
                worst = max(worst, float(np.max(np.abs(y[n_cols:] - ref_d))))
    scale = np.max(np.abs(direct.values))
    assert worst / scale <= 1e-8


def test_data_to_state_maps_match_seed(part, bg):
    lat = build_lattice(2, 3)
    rng = np.random.default_rng(43)
    cfg = SystemConfig(n_regular=2)
    data = make_asymptotic_data(lat, part, bg, O=bounded_field(lat, rng),
                                h=bounded_field(lat, rng),
                                phis=[bounded_field(lat, rng) for _ in range(2)])
    state = seed_state(cfg, lat, bg, data)
    maps = data_to_state_maps(cfg, lat, bg, cfg.tau_seed, part)
    n_cols = cfg.n_columns
    for l in range(lat.l_max + 1):
        sl = lat.slots_of_degree(l)
        for s in range(sl.start, sl.stop):
            vec = np.concatenate([
                [data.O_field.coeffs[s], data.frak_h.coeffs[s]],
                [p.coeffs[s] for p in data.phi0_fields],
            ])
            y = maps[l] @ vec
            assert np.allclose(y[:n_cols], state.values[:, s], rtol=1e-12, atol=1e-12)
            assert np.allclose(y[n_cols:], cfg.tau_seed * state.derivs[:, s],
                               rtol=1e-12, atol=1e-12)


# ------------------------------------------------------------ state objects


def test_mode_state_validation(small_lattice):
    with pytest.raises(ValueError):
        from shellwave import ModeState

        ModeState(tau=0.5, values=np.zeros((2, 3)), derivs=np.zeros((2, 4)))


def test_trajectory_helpers(part, bg, small_lattice):
    rng = np.random.default_rng(47)
    cfg = SystemConfig(n_regular=1)
    data = make_asymptotic_data(small_lattice, part, bg, O=bounded_field(small_lattice, rng),
                                h=bounded_field(small_lattice, rng),
                                phis=[bounded_field(small_lattice, rng)])
    grid = make_time_grid(cfg.tau_seed, 1.0, count=5)
    traj = integrate(cfg, small_lattice, bg, seed_state(cfg, small_lattice, bg, data),
                     1.0, grid=grid)
    assert len(traj) == 5
    st = traj.state_at(2)
    assert st.tau == pytest.approx(grid.taus[2])
    assert traj.column(0).shape == (5, small_lattice.n_slots)
    assert traj.column_deriv(1).shape == (5, small_lattice.n_slots)
