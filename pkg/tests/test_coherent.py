import math

import numpy as np
import pytest

from dickemf import coherent, model
from dickemf.coherent import EigenExpansion, PhaseSpacePoint
from dickemf.model import ModelParams


def direct_coeffs(point, params):
    """Brute-force product-state coefficients, safe for small n_max only."""
    beta = math.sqrt(params.j / 2.0) * complex(point.x, point.p)
    r = math.sqrt((1.0 + point.jz) / (1.0 - point.jz))
    w = r * complex(math.cos(point.phi), math.sin(point.phi))
    two_j = params.two_j
    out = np.empty(params.dim_full, dtype=complex)
    for n in range(params.n_max + 1):
        f = math.exp(-0.5 * abs(beta) ** 2) * beta ** n / math.sqrt(math.factorial(n))
        for k in range(two_j + 1):
            b = math.sqrt(math.comb(two_j, k)) * w ** k / (1 + abs(w) ** 2) ** params.j
            out[n * (two_j + 1) + k] = f * b
    return out


def test_point_validation():
    with pytest.raises(ValueError):
        PhaseSpacePoint(x=0.0, p=0.0, phi=0.0, jz=1.2)
    PhaseSpacePoint(x=0.0, p=0.0, phi=0.0, jz=-1.0)  # poles are legal points


def test_classical_energy_minimum_exact():
    params = ModelParams()  # omega = omega0 = 1, coupling = 2
    jz = -0.25
    x = -params.coupling * math.sqrt(1 - jz * jz)
    pt = PhaseSpacePoint(x=x, p=0.0, phi=0.0, jz=jz)
    assert coherent.classical_energy(pt, params) == pytest.approx(-2.125, abs=1e-14)
    # nearby points sit higher
    for dx, djz in ((0.01, 0.0), (-0.01, 0.0), (0.0, 0.01), (0.0, -0.01)):
        nearby = PhaseSpacePoint(x=x + dx, p=0.0, phi=0.0, jz=jz + djz)
        assert coherent.classical_energy(nearby, params) > -2.125


def test_canonical_to_complex():
    pt = PhaseSpacePoint(x=0.3, p=-0.4, phi=0.7, jz=0.6)
    beta, w = coherent.canonical_to_complex(pt, j=8.0)
    assert beta == pytest.approx(2.0 * complex(0.3, -0.4))
    assert abs(w) == pytest.approx(2.0, abs=1e-14)          # sqrt(1.6 / 0.4)
    assert math.atan2(w.imag, w.real) == pytest.approx(0.7)
    with pytest.raises(coherent.PoleError):
        coherent.canonical_to_complex(
            PhaseSpacePoint(x=0.0, p=0.0, phi=0.0, jz=1.0 - 1e-13), j=8.0)


def test_basis_coeffs_match_direct_formula():
    params = ModelParams(j=1.5, n_max=25)
    pt = PhaseSpacePoint(x=0.8, p=-0.3, phi=1.1, jz=0.35)
    got, deficit = coherent.basis_coeffs(pt, params)
    want = direct_coeffs(pt, params)
    np.testing.assert_allclose(got, want, atol=1e-13)
    assert deficit == pytest.approx(1.0 - np.sum(np.abs(want) ** 2), abs=1e-13)


def test_basis_coeffs_real_on_real_section():
    params = ModelParams(j=2.0, n_max=30)
    pt = PhaseSpacePoint(x=-1.1, p=0.0, phi=0.0, jz=-0.492)
    coeffs, deficit = coherent.basis_coeffs(pt, params)
    assert coeffs.dtype == np.float64
    assert abs(deficit) < 1e-12
    np.testing.assert_allclose(np.sum(coeffs**2), 1.0, atol=1e-12)


def test_basis_coeffs_polar_and_vacuum_deltas():
    params = ModelParams(j=1.5, n_max=8)
    two_j = params.two_j
    # south pole, empty oscillator: exactly one basis state carries weight
    pt = PhaseSpacePoint(x=0.0, p=0.0, phi=0.4, jz=-1.0)
    coeffs, deficit = coherent.basis_coeffs(pt, params)
    w = np.abs(coeffs) ** 2
    assert w[0] == pytest.approx(1.0, abs=1e-14)      # (n = 0, k = 0)
    assert np.all(w[1:] == 0.0)
    assert deficit == pytest.approx(0.0, abs=1e-14)
    # north pole: weight confined to k = 2j columns
    params = ModelParams(j=1.5, n_max=20)
    pt = PhaseSpacePoint(x=0.5, p=0.2, phi=0.0, jz=1.0)
    coeffs, _ = coherent.basis_coeffs(pt, params)
    w = np.abs(coeffs.reshape(params.n_max + 1, two_j + 1)) ** 2
    assert np.all(w[:, :two_j] == 0.0)
    assert w[:, two_j].sum() == pytest.approx(1.0, abs=1e-12)


def test_solve_xplus_properties():
    params = ModelParams()
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(200):
        eps0 = rng.uniform(-2.0, 0.5)
        jz = rng.uniform(-0.95, 0.95)
        phi = rng.uniform(-np.pi, np.pi)
        x = coherent.solve_xplus(eps0, phi, jz, params)
        b = params.coupling * math.sqrt(1 - jz * jz) * math.cos(phi)
        disc = b * b - 2.0 * params.omega * (params.omega0 * jz - eps0)
        if x is None:
            assert disc < 0.0
            continue
        hits += 1
        pt = PhaseSpacePoint(x=x, p=0.0, phi=phi, jz=jz)
        assert coherent.classical_energy(pt, params) == pytest.approx(eps0, abs=1e-12)
        x_minus = (-b - math.sqrt(disc)) / params.omega
        assert x >= x_minus
    assert hits > 100
    with pytest.raises(ValueError):
        coherent.solve_xplus(-1.8, 0.0, 1.5, params)


def test_solve_xplus_frozen_value():
    params = ModelParams()
    x = coherent.solve_xplus(-1.8, 0.0, -0.492, params)
    assert x == pytest.approx(-1.0964082636530668, abs=1e-14)


def test_surface_sample_skips_and_energies():
    params = ModelParams()
    grid = [-1.0, -0.9, -0.4, 0.0, 0.5, 1.0]
    points, skipped = coherent.surface_sample(-1.8, grid, params)
    reasons = dict(skipped)
    assert reasons[-1.0] == "pole"
    assert reasons[1.0] == "pole"
    assert reasons[0.5] == "no real root"     # above the -1.8 surface range
    assert {pt.jz for pt in points} == {-0.4, 0.0}
    for pt in points:
        assert coherent.classical_energy(pt, params) == pytest.approx(-1.8, abs=1e-12)
        assert pt.p == 0.0


def blocks_for(params):
    return {parity: model.solve_block(params, parity) for parity in (+1, -1)}


def test_eigen_expansion_norm_mean_and_order():
    params = ModelParams(j=6.0, n_max=60)
    pt = PhaseSpacePoint(
        x=coherent.solve_xplus(-1.8, 0.0, -0.492, params), p=0.0, phi=0.0, jz=-0.492)
    coeffs, deficit = coherent.basis_coeffs(pt, params)
    exp = coherent.eigen_expansion(coeffs, blocks_for(params), params, pt)
    assert exp.coeffs_sq.size == params.dim_full
    assert np.all(np.diff(exp.scaled_energies) >= 0)
    assert exp.norm == pytest.approx(1.0 - deficit, abs=1e-12)
    # Glauber/Bloch expectations are exact, so the mean scaled energy equals
    # the classical energy up to the (here negligible) truncation loss
    assert exp.mean_energy == pytest.approx(
        coherent.classical_energy(pt, params), abs=1e-10)
    assert exp.tail_weight == 0.0
    assert exp.source_point == pt


def test_eigen_expansion_tail_weight_tracks_certification():
    params = ModelParams(j=2.0, n_max=20)
    pt = PhaseSpacePoint(x=0.6, p=0.1, phi=0.3, jz=0.2)
    coeffs, _ = coherent.basis_coeffs(pt, params)
    blocks = blocks_for(params)
    cut = {par: model.with_converged_count(spec, 7) for par, spec in blocks.items()}
    full = coherent.eigen_expansion(coeffs, blocks, params)
    part = coherent.eigen_expansion(coeffs, cut, params)
    np.testing.assert_allclose(part.coeffs_sq, full.coeffs_sq)
    expected_tail = 0.0
    for par, spec in blocks.items():
        idx = model.block_indices(params, par)
        amp = spec.eigenvectors.T @ coeffs[idx]
        expected_tail += np.sum(np.abs(amp[7:]) ** 2)
    assert part.tail_weight == pytest.approx(expected_tail, abs=1e-13)
    assert part.converged.sum() == 14


def test_eigen_expansion_single_block():
    params = ModelParams(j=1.0, n_max=10)
    pt = PhaseSpacePoint(x=0.4, p=0.0, phi=0.0, jz=0.1)
    coeffs, _ = coherent.basis_coeffs(pt, params)
    spec = model.solve_block(params, +1)
    exp = coherent.eigen_expansion(coeffs, {+1: spec}, params)
    idx = model.block_indices(params, +1)
    assert exp.coeffs_sq.size == idx.size
    assert exp.norm < 1.0  # the odd block's share is missing


def test_eigen_expansion_input_guards():
    params = ModelParams(j=1.0, n_max=10)
    blocks = blocks_for(params)
    with pytest.raises(ValueError):
        coherent.eigen_expansion(np.zeros(5), blocks, params)
    other = model.solve_block(ModelParams(j=1.0, n_max=12), +1)
    coeffs, _ = coherent.basis_coeffs(
        PhaseSpacePoint(x=0.1, p=0.0, phi=0.0, jz=0.0), params)
    with pytest.raises(ValueError):
        coherent.eigen_expansion(coeffs, {+1: other, -1: blocks[-1]}, params)


def test_expansion_dataclass_guards():
    with pytest.raises(ValueError):
        EigenExpansion(
            coeffs_sq=np.array([0.5, -0.1]),
            scaled_energies=np.array([0.0, 1.0]),
            mean_energy=0.0, tail_weight=0.0, j=2.0,
        )
    with pytest.raises(ValueError):
        EigenExpansion(
            coeffs_sq=np.array([1.0]),
            scaled_energies=np.array([0.0, 1.0]),
            mean_energy=0.0, tail_weight=0.0, j=2.0,
        )
    exp = EigenExpansion(
        coeffs_sq=np.array([0.25, 0.75]),
        scaled_energies=np.array([-1.0, 1.0]),
        mean_energy=0.5, tail_weight=0.0, j=2.0,
    )
    assert exp.norm == pytest.approx(1.0)
    with pytest.raises(ValueError):
        exp.coeffs_sq[0] = 1.0


def test_energy_std_exact_two_level():
    exp = EigenExpansion(
        coeffs_sq=np.array([0.5, 0.5]),
        scaled_energies=np.array([-1.0, 1.0]),
        mean_energy=0.0, tail_weight=0.0, j=2.0,
    )
    assert coherent.energy_std(exp) == pytest.approx(1.0, abs=1e-15)
    lop = EigenExpansion(
        coeffs_sq=np.array([0.9, 0.1]),
        scaled_energies=np.array([0.0, 1.0]),
        mean_energy=0.1, tail_weight=0.0, j=2.0,
    )
    assert coherent.energy_std(lop) == pytest.approx(math.sqrt(0.09), abs=1e-15)
