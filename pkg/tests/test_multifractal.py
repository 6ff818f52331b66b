import math

import numpy as np
import pytest

from dickemf import multifractal as mf
from dickemf.coherent import EigenExpansion
from dickemf.multifractal import (
    InsufficientDataError,
    IPRSeries,
    MassExponentCurve,
    classify_dimension,
    curvature_scan,
    default_q_grid,
    effective_dim,
    fit_tau,
    ipr_q,
    ipr_series,
    ipr_values,
    mass_exponents,
    pdos_q,
    synth_random_gaussian,
    synth_sequence_state,
)


def hand_expansion(weights, energies=None, j=10.0, converged=None):
    w = np.asarray(weights, dtype=float)
    e = np.arange(w.size, dtype=float) if energies is None else np.asarray(
        energies, dtype=float)
    return EigenExpansion(
        coeffs_sq=w, scaled_energies=e, mean_energy=float(np.dot(w, e)),
        tail_weight=0.0, j=j,
        converged=None if converged is None else np.asarray(converged, bool))


def test_default_q_grid():
    q = default_q_grid()
    assert q.size == 79
    assert q[0] == 0.10 and q[-1] == 4.00
    assert 1.0 in q and 0.3 in q and 2.0 in q
    np.testing.assert_allclose(np.diff(q), 0.05, atol=1e-10)


def test_effective_dim():
    assert effective_dim(4.0) == 8.0
    assert effective_dim(25.0) == 125.0
    with pytest.raises(ValueError):
        effective_dim(0.0)


def test_ipr_exact_cases():
    uniform = hand_expansion(np.full(8, 0.125))
    assert ipr_q(uniform, 2.0) == pytest.approx(0.125, abs=1e-15)
    assert ipr_q(uniform, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert ipr_q(uniform, 0.5) == pytest.approx(math.sqrt(8.0), rel=1e-14)
    delta = hand_expansion([1.0])
    for q in (0.3, 1.0, 2.5):
        assert ipr_q(delta, q) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        ipr_q(uniform, 0.0)
    with pytest.raises(ValueError):
        ipr_values(np.array([1.0]), np.array([0.5, -1.0]))
    # exact zeros contribute nothing at any q, including q < 1
    padded = ipr_values(np.array([0.5, 0.5, 0.0, 0.0]), np.array([0.5, 1.0, 2.0]))
    bare = ipr_values(np.array([0.5, 0.5]), np.array([0.5, 1.0, 2.0]))
    np.testing.assert_allclose(padded, bare, rtol=1e-15)
    # truncation deficits are renormalized away: IPR_1 is one regardless
    truncated = np.array([0.3, 0.2, 0.1, 0.0, 0.4 - 7e-8])
    assert ipr_values(truncated, np.array([1.0]))[0] == pytest.approx(
        1.0, abs=1e-12)
    with pytest.raises(ValueError):
        ipr_values(np.zeros(4), np.array([1.0]))


def test_ipr_series_flags_and_guards():
    q = np.array([0.5, 1.0, 2.0])
    good = hand_expansion([0.5, 0.5 - 5e-7])       # norm 1 - 5e-7
    bad = hand_expansion([0.5, 0.5 - 2e-6])        # norm 1 - 2e-6
    series = ipr_series([(10.0, good), (20.0, bad)], q, tail_budget=1e-6)
    assert series.ipr.shape == (3, 2)
    assert series.converged[:, 0].all()
    assert not series.converged[:, 1].any()
    with pytest.raises(ValueError):
        ipr_series([(10.0, good), (10.0, bad)], q)
    with pytest.raises(InsufficientDataError):
        ipr_series([], q)
    with pytest.raises(ValueError):
        IPRSeries(q_grid=q, j_values=np.array([10.0]),
                  ipr=np.zeros((3, 2)), converged=np.zeros((3, 2), bool))


def power_law_series(q_grid, j_values, tau_of_q, amp=1.0):
    q = np.asarray(q_grid, float)
    js = np.asarray(j_values, float)
    tau = np.array([tau_of_q(x) for x in q])
    ipr = amp * np.exp(np.outer(-tau, 1.5 * np.log(js)))
    return IPRSeries(q_grid=q, j_values=js, ipr=ipr,
                     converged=np.ones(ipr.shape, bool))


def test_mass_exponents_recovers_power_law():
    q = default_q_grid()
    series = power_law_series(q, [25, 30, 35, 40], lambda x: 0.7 * (x - 1.0))
    curve = mass_exponents(series)
    np.testing.assert_allclose(curve.tau, 0.7 * (q - 1.0), atol=1e-10)
    assert np.all(curve.stderr <= 1e-8)
    np.testing.assert_allclose(curve.j_used, [25, 30, 35, 40])
    assert curve.trusted_range == (0.1, 4.0)


def test_mass_exponents_exclusion_is_strict():
    q = np.array([0.5, 1.0, 1.5, 2.0])
    series = power_law_series(q, [20, 25, 30, 35, 40], lambda x: x - 1.0)
    curve = mass_exponents(series, j_exclude_below=20.0)
    np.testing.assert_allclose(curve.j_used, [25, 30, 35, 40])
    with pytest.raises(InsufficientDataError):
        mass_exponents(power_law_series(q, [5, 10, 15, 40], lambda x: x - 1.0))
    bad = power_law_series(q, [25, 30, 35, 40], lambda x: x - 1.0)
    conv = bad.converged.copy()
    conv[:, 2] = False
    bad = IPRSeries(q_grid=bad.q_grid, j_values=bad.j_values, ipr=bad.ipr,
                    converged=conv)
    with pytest.raises(InsufficientDataError):
        mass_exponents(bad)


def test_curvature_scan_windows():
    q = default_q_grid()
    # linear tau: zero curvature everywhere
    assert curvature_scan(q, q - 1.0) == (0.1, 4.0)
    # strong concavity is fine: only convexity invalidates the fit
    assert curvature_scan(q, -5.0 * (q - 1.0) ** 2) == (0.1, 4.0)
    # convex kink beyond q = 2.5 stops the window there
    tau = (q - 1.0) + 5.0 * np.clip(q - 2.5, 0.0, None) ** 2
    lo, hi = curvature_scan(q, tau)
    assert lo == pytest.approx(0.1)
    assert hi == pytest.approx(2.45)
    # strongly convex everywhere: the window degenerates to q = 1
    assert curvature_scan(q, 5.0 * (q - 1.0) ** 2) == (1.0, 1.0)
    # fewer than three points: nothing to test, full range returned
    assert curvature_scan(np.array([0.9, 1.1]), np.array([0.0, 1.0])) == (0.9, 1.1)
    # non-uniform grids use the spacing-weighted second difference
    qn = np.array([0.5, 0.9, 1.0, 1.1, 1.5])
    assert curvature_scan(qn, 2.0 * qn - 1.0) == (0.5, 1.5)


def test_fit_tau_recovers_each_model():
    q = default_q_grid()

    def curve_for(tau):
        return MassExponentCurve(q_grid=q, tau=tau, stderr=np.zeros_like(q),
                                 trusted_range=(0.1, 4.0), j_used=np.arange(4.0))

    lin = fit_tau(curve_for(0.2 + 0.9 * (q - 1.0)), (0.3, 2.0), model="linear")
    assert lin.D0 == pytest.approx(0.2, abs=1e-12)
    assert lin.D1 == pytest.approx(0.9, abs=1e-12)
    assert lin.D2 is None and lin.rms < 1e-12

    par = fit_tau(curve_for(0.1 + 0.8 * (q - 1.0) - 0.03 * q**2), (0.3, 2.0))
    assert par.model == "parabolic"
    assert (par.D0, par.D1, par.D2) == pytest.approx((0.1, 0.8, -0.03), abs=1e-10)

    sq = fit_tau(curve_for(-0.2 + 1.1 * (q - 1.0) + 0.4 * np.sqrt(q)),
                 (0.3, 2.0), model="sqrt")
    assert (sq.D0, sq.D1, sq.D2) == pytest.approx((-0.2, 1.1, 0.4), abs=1e-10)

    with pytest.raises(ValueError):
        fit_tau(curve_for(q), (0.3, 2.0), model="cubic")
    with pytest.raises(ValueError):
        fit_tau(curve_for(q), (2.0, 0.3))
    with pytest.raises(InsufficientDataError):
        fit_tau(curve_for(q), (0.71, 0.79))  # single grid point


def test_classify_dimension_rules():
    assert classify_dimension(0.95, None) == "ergodic"
    assert classify_dimension(0.35, None) == "regular"
    assert classify_dimension(0.04, None) == "localized"
    assert classify_dimension(0.05, None) == "localized"   # boundary inclusive
    assert classify_dimension(0.6, None) == "intermediate"
    assert classify_dimension(1.0, 0.006) == "discarded"   # convex fit wins
    assert classify_dimension(1.0, 0.005) == "ergodic"     # boundary not discarded
    assert classify_dimension(1.0, -0.5) == "ergodic"


def test_anomalous_exponent_projection_and_reciprocity():
    q = default_q_grid()

    def curve_for(tau):
        return MassExponentCurve(q_grid=q, tau=tau, stderr=np.zeros_like(q),
                                 trusted_range=(0.1, 4.0), j_used=np.arange(4.0))

    flat = mf.anomalous_exponent(curve_for(0.8 * (q - 1.0)), 0.8)
    np.testing.assert_allclose(flat.delta_q, 0.0, atol=1e-14)
    assert flat.delta_weak == pytest.approx(0.0, abs=1e-14)
    assert flat.reciprocity_residual == pytest.approx(0.0, abs=1e-12)

    weak = mf.anomalous_exponent(
        curve_for(0.8 * (q - 1.0) + 0.2 * (1.0 - q) * q), 0.8)
    assert weak.delta_weak == pytest.approx(0.2, abs=1e-12)
    # delta(q) = delta(1-q) holds exactly for the parabola
    assert weak.reciprocity_residual < 1e-9


def test_pdos_mass_and_binning():
    # no certification mask: everything participates, q = 1 mass is the norm
    exp = hand_expansion([0.4, 0.3, 0.2], energies=[-1.0, 0.0, 1.0])
    h = pdos_q(exp, 1.0, n_bins=4)
    assert h.mass.sum() == pytest.approx(0.9, abs=1e-14)
    assert h.bin_edges[0] == -1.0 and h.bin_edges[-1] == 1.0
    np.testing.assert_allclose(h.centers, 0.5 * (h.bin_edges[:-1] + h.bin_edges[1:]))
    # q reweights each level before binning
    h2 = pdos_q(exp, 2.0, n_bins=1)
    assert h2.mass.sum() == pytest.approx(0.4**2 + 0.3**2 + 0.2**2, abs=1e-14)


def test_pdos_certified_mask_and_fallback():
    exp = hand_expansion([0.4, 0.3, 0.2, 0.1], energies=[-2.0, -1.0, 1.0, 2.0],
                         converged=[True, True, True, False])
    h = pdos_q(exp, 1.0, n_bins=3)
    assert h.bin_edges[-1] == 1.0          # uncertified level excluded
    assert h.mass.sum() == pytest.approx(0.9, abs=1e-14)
    # fewer than two certified levels: fall back to the full spectrum
    lone = hand_expansion([0.4, 0.6], energies=[0.0, 1.0],
                          converged=[True, False])
    h = pdos_q(lone, 1.0, n_bins=2)
    assert h.mass.sum() == pytest.approx(1.0, abs=1e-14)


def test_pdos_range_override_and_guards():
    exp = hand_expansion([1.0], energies=[0.5])
    h = pdos_q(exp, 1.0, n_bins=2, eps_range=(-2.0, -1.0))
    assert h.mass.sum() == 0.0             # state sits outside the window
    h = pdos_q(exp, 1.0, n_bins=1)
    assert h.mass.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        pdos_q(exp, 1.0, eps_range=(1.0, 1.0))
    with pytest.raises(ValueError):
        pdos_q(exp, 0.0)
    with pytest.raises(ValueError):
        pdos_q(exp, 1.0, n_bins=0)


def test_synthetic_closed_forms():
    st = synth_random_gaussian(10.0, r_dist="constant")
    assert st.sigma * st.nubar > 50.0
    for q in (0.5, 1.0, 2.0, 4.0):
        assert ipr_q(st.expansion, q) == pytest.approx(
            st.closed_form(q), rel=1e-12)
    seq = synth_sequence_state(10.0)
    for q in (0.5, 1.0, 2.0, 4.0):
        assert ipr_q(seq.expansion, q) == pytest.approx(
            seq.closed_form(q), rel=1e-12)
    # random-amplitude variant: exact at q = 1, sampling noise elsewhere
    rnd = synth_random_gaussian(10.0, r_dist="exponential")
    assert ipr_q(rnd.expansion, 1.0) == pytest.approx(1.0, abs=1e-12)
    for q in (0.5, 2.0):
        assert ipr_q(rnd.expansion, q) == pytest.approx(
            rnd.closed_form(q), rel=0.02)
    with pytest.raises(ValueError):
        synth_random_gaussian(10.0, r_dist="uniform")


def test_sequence_density_doubling():
    st1 = synth_sequence_state(10.0, omega_cl=1.0)
    st2 = synth_sequence_state(10.0, omega_cl=2.0)
    for q in (0.5, 1.0, 2.0, 4.0):
        ratio = ipr_q(st2.expansion, q) / ipr_q(st1.expansion, q)
        assert ratio == pytest.approx(2.0 ** (q - 1.0), rel=1e-4)
    # only every step-th level carries weight
    w = st1.expansion.coeffs_sq
    assert np.count_nonzero(w) * 350 < w.size


def test_oracle_scaling_slopes():
    q = default_q_grid()
    js = (10.0, 20.0, 30.0, 40.0)

    pairs = [(j, synth_random_gaussian(j).expansion) for j in js]
    curve = mass_exponents(ipr_series(pairs, q), j_exclude_below=0.0)
    d1 = fit_tau(curve, (1.0, 2.0), model="linear").D1
    assert abs(d1 - 1.0) <= 0.03

    pairs = [(j, synth_sequence_state(j).expansion) for j in js]
    curve = mass_exponents(ipr_series(pairs, q), j_exclude_below=0.0)
    d1 = fit_tau(curve, (1.0, 2.0), model="linear").D1
    assert abs(d1 - 1.0 / 3.0) <= 0.05
