"""Product coherent states, their eigenbasis expansions, and energy surfaces.

A phase-space point (x, p, phi, jz) with |jz| <= 1 labels the product of a
boson (Glauber) coherent state and an atomic (Bloch) coherent state:

    |z> = |beta> x |w>,   beta = sqrt(j/2) (x + i p),
                          |w|  = sqrt((1 + jz) / (1 - jz)),  arg w = phi.

Expectation of H / j over |z> tends, for large j, to the classical energy
function

    h(x, p, phi, jz) = (omega/2)(x^2 + p^2) + omega0 jz
                       + coupling * sqrt(1 - jz^2) * x * cos(phi)

which is what :func:`classical_energy` evaluates.  Coefficients of |z> in the
truncated product basis are assembled in the log domain so that boson cutoffs
of a few hundred do not overflow factorials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from .model import ModelParams, SpectralData, block_indices

__all__ = [
    "PhaseSpacePoint",
    "EigenExpansion",
    "PoleError",
    "POLE_GUARD",
    "classical_energy",
    "canonical_to_complex",
    "basis_coeffs",
    "eigen_expansion",
    "energy_std",
    "solve_xplus",
    "surface_sample",
]

# Points closer than this to jz = +-1 are treated as exactly polar: the
# stereographic parameter w degenerates there (w -> 0 or |w| -> inf).
POLE_GUARD = 1e-12


class PoleError(ValueError):
    """Phase-space point sits on (or numerically at) a coordinate pole."""


@dataclass(frozen=True)
class PhaseSpacePoint:
    """Canonical coordinates: oscillator pair (x, p), atomic pair (phi, jz)."""

    x: float
    p: float
    phi: float
    jz: float

    def __post_init__(self):
        if not abs(self.jz) <= 1.0:
            raise ValueError(f"|jz| must be <= 1, got {self.jz}")


def classical_energy(point: PhaseSpacePoint, params: ModelParams) -> float:
    s = math.sqrt(max(1.0 - point.jz * point.jz, 0.0))
    return (
        0.5 * params.omega * (point.x**2 + point.p**2)
        + params.omega0 * point.jz
        + params.coupling * s * point.x * math.cos(point.phi)
    )


def canonical_to_complex(point: PhaseSpacePoint, j: float) -> Tuple[complex, complex]:
    """Map canonical coordinates to the labels (beta, w) of the product state.

    Raises PoleError within POLE_GUARD of jz = +-1 where w is degenerate;
    callers wanting exact polar states should branch before mapping (see
    :func:`basis_coeffs`, which handles the poles exactly).
    """
    beta = math.sqrt(j / 2.0) * complex(point.x, point.p)
    if 1.0 - abs(point.jz) < POLE_GUARD:
        raise PoleError(f"jz = {point.jz} is within {POLE_GUARD} of a pole")
    r = math.sqrt((1.0 + point.jz) / (1.0 - point.jz))
    w = r * complex(math.cos(point.phi), math.sin(point.phi))
    return beta, w


def _boson_log_amps(point: PhaseSpacePoint, params: ModelParams) -> np.ndarray:
    """log <n|beta> for n = 0..n_max (complex log; -inf column for beta = 0)."""
    n = np.arange(params.n_max + 1)
    beta = math.sqrt(params.j / 2.0) * complex(point.x, point.p)
    if beta == 0:
        out = np.full(n.size, -np.inf, dtype=complex)
        out[0] = 0.0
        return out
    return -0.5 * abs(beta) ** 2 + n * np.log(beta) - 0.5 * gammaln(n + 1.0)


def _spin_log_amps(point: PhaseSpacePoint, params: ModelParams) -> np.ndarray:
    """log <j, m|w> for k = j + m = 0..2j, written directly in terms of jz.

    Using 1 + |w|^2 = 2/(1 - jz) keeps every term finite all the way to the
    guard band; exactly polar points get a delta amplitude.
    """
    two_j = params.two_j
    k = np.arange(two_j + 1)
    jz = point.jz
    if 1.0 - abs(jz) < POLE_GUARD:
        out = np.full(k.size, -np.inf, dtype=complex)
        out[0 if jz < 0 else two_j] = 0.0
        return out
    log_binom = gammaln(two_j + 1.0) - gammaln(k + 1.0) - gammaln(two_j - k + 1.0)
    log_mod = (
        -params.j * math.log(2.0 / (1.0 - jz))
        + 0.5 * log_binom
        + 0.5 * k * math.log((1.0 + jz) / (1.0 - jz))
    )
    return log_mod + 1j * k * point.phi


def basis_coeffs(
    point: PhaseSpacePoint, params: ModelParams
) -> Tuple[np.ndarray, float]:
    """Coefficients of |z> in the full truncated basis, plus truncation deficit.

    Returns
    -------
    coeffs : ndarray
        One coefficient per basis state in n-major, m-minor order.  Real
        when p = 0 and sin(phi) = 0, complex otherwise.
    deficit : float
        1 - sum|coeffs|^2, i.e. the weight lost to the boson cutoff (the
        spin factor is complete, so only the Fock tail leaks).
    """
    log_f = _boson_log_amps(point, params)
    log_b = _spin_log_amps(point, params)
    with np.errstate(invalid="ignore"):  # exp(-inf + 0j) warns, result is 0
        f = np.exp(log_f)
        b = np.exp(log_b)
    f = np.nan_to_num(f, nan=0.0)
    b = np.nan_to_num(b, nan=0.0)
    coeffs = np.outer(f, b).ravel()
    if point.p == 0.0 and abs(math.sin(point.phi)) == 0.0:
        coeffs = coeffs.real.copy()
    norm = float(np.sum(np.abs(coeffs) ** 2))
    return coeffs, 1.0 - norm


@dataclass(frozen=True)
class EigenExpansion:
    """A state resolved in the eigenbasis: weights |c_k|^2 against e_k = E_k / j.

    tail_weight is the probability sitting on eigenstates *not* certified
    converged; expansions with tail_weight above the caller's budget should
    be treated as unconverged rather than silently used.
    """

    coeffs_sq: np.ndarray
    scaled_energies: np.ndarray
    mean_energy: float
    tail_weight: float
    j: float
    source_point: Optional[PhaseSpacePoint] = None
    converged: Optional[np.ndarray] = None  # per-eigenstate certification mask

    def __post_init__(self):
        if self.coeffs_sq.shape != self.scaled_energies.shape:
            raise ValueError("coeffs_sq and scaled_energies must align")
        if np.any(self.coeffs_sq < 0):
            raise ValueError("negative weight")
        self.coeffs_sq.flags.writeable = False
        self.scaled_energies.flags.writeable = False

    @property
    def norm(self) -> float:
        return float(self.coeffs_sq.sum())


def eigen_expansion(
    coeffs: np.ndarray,
    spectra: Mapping[int, SpectralData],
    params: ModelParams,
    source_point: Optional[PhaseSpacePoint] = None,
) -> EigenExpansion:
    """Project full-basis coefficients onto the eigenstates of both blocks.

    Parameters
    ----------
    coeffs : ndarray
        Full-basis coefficient vector (see :func:`basis_coeffs`).
    spectra : mapping
        Parity (+1 / -1) to SpectralData of that block.  A single block is
        allowed; weights then cover that block only.
    """
    if coeffs.shape != (params.dim_full,):
        raise ValueError(
            f"expected {params.dim_full} coefficients, got {coeffs.shape}"
        )
    weights, energies, conv = [], [], []
    for parity, spec in sorted(spectra.items()):
        idx = block_indices(params, parity)
        if spec.dim != idx.size:
            raise ValueError(f"block {parity:+d} spectra do not match params")
        amp = spec.eigenvectors.T @ coeffs[idx]
        weights.append(np.abs(amp) ** 2)
        energies.append(spec.eigenvalues)
        conv.append(np.arange(spec.dim) < spec.n_converged)
    w = np.concatenate(weights)
    e = np.concatenate(energies)
    c = np.concatenate(conv)
    order = np.argsort(e, kind="stable")
    w, e, c = w[order], e[order], c[order]
    if params.j == 0:
        raise ValueError("scaled energies undefined at j = 0")
    eps = e / params.j
    return EigenExpansion(
        coeffs_sq=w,
        scaled_energies=eps,
        mean_energy=float(np.dot(w, eps)),
        tail_weight=float(w[~c].sum()),
        j=params.j,
        source_point=source_point,
        converged=c,
    )


def energy_std(expansion: EigenExpansion) -> float:
    """Standard deviation of the scaled-energy distribution |c_k|^2."""
    w, eps = expansion.coeffs_sq, expansion.scaled_energies
    norm = w.sum()
    if norm <= 0:
        raise ValueError("empty expansion")
    mean = np.dot(w, eps) / norm
    var = np.dot(w, (eps - mean) ** 2) / norm
    return float(np.sqrt(max(var, 0.0)))


def solve_xplus(
    eps0: float, phi: float, jz: float, params: ModelParams
) -> Optional[float]:
    """Positive-branch root of h(x, 0, phi, jz) = eps0, or None if complex.

    The energy condition is a quadratic in x; the branch returned is the one
    with the + sign in front of the square root (the larger root).
    """
    if abs(jz) > 1.0:
        raise ValueError("|jz| must be <= 1")
    b = params.coupling * math.sqrt(max(1.0 - jz * jz, 0.0)) * math.cos(phi)
    disc = b * b - 2.0 * params.omega * (params.omega0 * jz - eps0)
    if disc < 0.0:
        return None
    return (-b + math.sqrt(disc)) / params.omega


def surface_sample(
    eps0: float,
    jz_grid: Sequence[float],
    params: ModelParams,
    phi: float = 0.0,
) -> Tuple[list, list]:
    """Sample the energy surface h = eps0 along a jz grid at fixed phi, p = 0.

    Returns (points, skipped) where skipped holds (jz, reason) pairs for grid
    values with no real positive-branch root or sitting on a pole.
    """
    points, skipped = [], []
    for jz in jz_grid:
        if 1.0 - abs(jz) < POLE_GUARD:
            skipped.append((float(jz), "pole"))
            continue
        x = solve_xplus(eps0, phi, float(jz), params)
        if x is None:
            skipped.append((float(jz), "no real root"))
            continue
        points.append(PhaseSpacePoint(x=x, p=0.0, phi=phi, jz=float(jz)))
    return points, skipped
