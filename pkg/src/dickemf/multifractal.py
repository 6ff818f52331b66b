"""Multifractal analysis of eigenbasis expansions.

Generalized inverse participation ratios of a normalized expansion,

    IPR_q = sum_k (|c_k|^2)^q,

are fitted against the effective basis size aleph = j**1.5 (the number of
eigenstates a localized wave packet overlaps grows like j**1.5 here, not like
the Hilbert dimension).  The mass exponents

    tau_q = - d log IPR_q / d log aleph

interpolate between tau_q = q - 1 (ergodic filling), tau_q = (q - 1)/3
(regular, one effective degree of freedom out of three scaling powers), and
tau_q = 0 (localized).  Fits of tau_q in a q-window give the generalized
dimensions D1 (slope) and D2 (curvature); positive curvature is unphysical
for a true multifractal and flags an untrustworthy fit.

Two synthetic families with closed-form IPR_q serve as oracles: a random
Gaussian-enveloped state (slope 1) and a picket-fence sequence state with
j-independent level spacing (slope 1/3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from .coherent import EigenExpansion

__all__ = [
    "IPRSeries",
    "MassExponentCurve",
    "FitReport",
    "AnomalousExponents",
    "PDoSHistogram",
    "SyntheticState",
    "InsufficientDataError",
    "ipr_q",
    "ipr_values",
    "effective_dim",
    "ipr_series",
    "mass_exponents",
    "curvature_scan",
    "fit_tau",
    "classify_dimension",
    "anomalous_exponent",
    "pdos_q",
    "synth_random_gaussian",
    "synth_sequence_state",
    "default_q_grid",
]

# Fit bookkeeping defaults: positive-curvature discard threshold and the
# curvature level treated as numerically flat in the trusted-range scan.
EPS_POSITIVE_D2 = 0.005
EPS_CURVATURE = 0.01

J_EXCLUDE_BELOW = 20      # drop sizes below this from scaling fits
TAIL_BUDGET = 1e-6        # max norm loss (1 - sum|c|^2) for a trusted expansion


class InsufficientDataError(ValueError):
    """Not enough converged sizes to fit a scaling law."""


def default_q_grid(q_min: float = 0.10, q_max: float = 4.00, q_step: float = 0.05):
    n = int(round((q_max - q_min) / q_step))
    return np.round(q_min + q_step * np.arange(n + 1), 10)


def effective_dim(j: float) -> float:
    """Effective number of participating eigenstates, j**(3/2)."""
    if j <= 0:
        raise ValueError("j must be positive")
    return float(j) ** 1.5


def ipr_q(expansion: EigenExpansion, q: float) -> float:
    """Generalized inverse participation ratio sum_k (|c_k|^2)^q, q > 0."""
    if q <= 0:
        raise ValueError("q must be positive")
    return float(np.sum(expansion.coeffs_sq**q))


def ipr_values(weights: np.ndarray, q_grid: np.ndarray) -> np.ndarray:
    """IPR_q over a whole q grid for one weight vector (zeros are fine).

    The weights are renormalized to unit total first, so IPR_1 is one by
    construction and basis-truncation deficits never leak into the moments;
    the untruncated norm stays available on the expansion itself.
    """
    q = np.asarray(q_grid, dtype=float)
    if np.any(q <= 0):
        raise ValueError("q grid must be positive")
    w = weights[weights > 0.0]
    if w.size == 0:
        raise ValueError("weights carry no positive mass")
    # power via exp(q * log p); one q at a time keeps memory flat for the
    # million-level synthetic spectra
    logp = np.log(w / w.sum())
    return np.array([np.exp(qi * logp).sum() for qi in q])


@dataclass(frozen=True)
class IPRSeries:
    """IPR_q tabulated over (q grid) x (system sizes j)."""

    q_grid: np.ndarray
    j_values: np.ndarray
    ipr: np.ndarray        # shape (len(q_grid), len(j_values))
    converged: np.ndarray  # same shape, bool

    def __post_init__(self):
        if self.ipr.shape != (self.q_grid.size, self.j_values.size):
            raise ValueError("ipr shape mismatch")
        if self.converged.shape != self.ipr.shape:
            raise ValueError("converged shape mismatch")


def ipr_series(
    expansions: Sequence[Tuple[float, EigenExpansion]],
    q_grid: np.ndarray,
    tail_budget: float = TAIL_BUDGET,
) -> IPRSeries:
    """Tabulate IPR_q for expansions at increasing j.

    An expansion is convergence-flagged when its squared norm is within
    ``tail_budget`` of unity, i.e. the boson truncation lost at most that
    much probability.  The flag is shared by every q of that size.  The
    certified tail weight carried by the expansion is a separate, stricter
    diagnostic: it alarms whenever individual eigenvalues have not settled,
    which happens long before the state itself is misrepresented.
    """
    q = np.asarray(q_grid, dtype=float)
    js = np.array([j for j, _ in expansions], dtype=float)
    if js.size == 0:
        raise InsufficientDataError("no expansions given")
    if np.any(np.diff(js) <= 0):
        raise ValueError("j values must be strictly increasing")
    ipr = np.empty((q.size, js.size))
    conv = np.empty((q.size, js.size), dtype=bool)
    for col, (_, exp) in enumerate(expansions):
        ipr[:, col] = ipr_values(exp.coeffs_sq, q)
        conv[:, col] = exp.norm >= 1.0 - tail_budget
    return IPRSeries(q_grid=q, j_values=js, ipr=ipr, converged=conv)


def _slope_with_err(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    resid = y - ym - slope * (x - xm)
    if n > 2:
        err = math.sqrt(max(np.sum(resid**2), 0.0) / (n - 2) / sxx)
    else:
        err = 0.0
    return float(slope), float(err)


@dataclass(frozen=True)
class MassExponentCurve:
    """tau_q with per-q regression errors and a curvature-trusted q window."""

    q_grid: np.ndarray
    tau: np.ndarray
    stderr: np.ndarray
    trusted_range: Tuple[float, float]
    j_used: np.ndarray


def mass_exponents(
    series: IPRSeries,
    j_exclude_below: float = J_EXCLUDE_BELOW,
    eps_curvature: float = EPS_CURVATURE,
) -> MassExponentCurve:
    """Fit tau_q = -slope of log IPR_q against log(j**1.5), per q.

    Sizes up to and including ``j_exclude_below`` are ignored: the smallest
    systems have not reached the scaling regime, and keeping them biases
    the slopes low.  Requires at least 4 retained sizes, all
    convergence-flagged; anything less is an error rather than a guess.
    """
    keep = series.j_values > j_exclude_below
    if np.count_nonzero(keep) < 4:
        raise InsufficientDataError(
            f"only {np.count_nonzero(keep)} sizes above j = {j_exclude_below}"
        )
    if not series.converged[:, keep].all():
        bad = series.j_values[keep][~series.converged[:, keep].all(axis=0)]
        raise InsufficientDataError(
            f"unconverged expansions at j = {bad.tolist()}; filter before fitting"
        )
    x = 1.5 * np.log(series.j_values[keep])
    tau = np.empty(series.q_grid.size)
    err = np.empty(series.q_grid.size)
    for i in range(series.q_grid.size):
        y = np.log(series.ipr[i, keep])
        slope, serr = _slope_with_err(x, y)
        tau[i], err[i] = -slope, serr
    lo, hi = curvature_scan(series.q_grid, tau, eps_curvature)
    return MassExponentCurve(
        q_grid=series.q_grid.copy(),
        tau=tau,
        stderr=err,
        trusted_range=(lo, hi),
        j_used=series.j_values[keep].copy(),
    )


def curvature_scan(
    q_grid: np.ndarray, tau: np.ndarray, eps_curvature: float = EPS_CURVATURE
) -> Tuple[float, float]:
    """Largest contiguous q interval around q = 1 with curvature <= eps.

    A positive discrete second difference of tau_q beyond ``eps_curvature``
    marks q values where the scaling fit is no longer trustworthy (true
    mass exponents are concave).  The test quantity is the plain second
    difference on the grid (tau[i+1] - 2 tau[i] + tau[i-1] for uniform
    spacing), not a second-derivative estimate: dividing by the squared
    step would amplify per-point regression noise far beyond the signal.
    Endpoints inherit the verdict of their single interior neighbor.
    """
    q = np.asarray(q_grid, dtype=float)
    t = np.asarray(tau, dtype=float)
    n = q.size
    if n < 3:
        return float(q[0]), float(q[-1])
    ok = np.zeros(n, dtype=bool)
    h_lo = q[1:-1] - q[:-2]
    h_hi = q[2:] - q[1:-1]
    d2 = 2.0 * (h_lo * t[2:] - (h_lo + h_hi) * t[1:-1] + h_hi * t[:-2]) / (
        h_lo + h_hi
    )
    ok[1:-1] = np.isfinite(d2) & (d2 <= eps_curvature)
    ok[0], ok[-1] = ok[1], ok[-2]
    i1 = int(np.argmin(np.abs(q - 1.0)))
    if not ok[i1]:
        return float(q[i1]), float(q[i1])
    lo = i1
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    hi = i1
    while hi < n - 1 and ok[hi + 1]:
        hi += 1
    return float(q[lo]), float(q[hi])


@dataclass(frozen=True)
class FitReport:
    """One parametric fit of tau_q over a q window."""

    model: str                  # "linear", "parabolic" or "sqrt"
    q_range: Tuple[float, float]
    D0: float
    D1: float
    D2: Optional[float]         # curvature coefficient; sqrt coefficient for "sqrt"
    rms: float
    classification: str


def classify_dimension(D1: float, D2: Optional[float],
                       eps_positive: float = EPS_POSITIVE_D2) -> str:
    """Label a fitted (D1, D2): ergodic / regular / localized / intermediate.

    Classification is withheld ("discarded") when the fitted curvature is
    positive beyond ``eps_positive``, since that signals a failed scaling
    window rather than a physical dimension.
    """
    if D2 is not None and D2 > eps_positive:
        return "discarded"
    if D1 <= 0.05:
        return "localized"
    if abs(D1 - 1.0) <= 0.1:
        return "ergodic"
    if abs(D1 - 1.0 / 3.0) <= 0.1:
        return "regular"
    return "intermediate"


def fit_tau(
    curve: MassExponentCurve,
    q_range: Tuple[float, float],
    model: str = "parabolic",
    eps_positive: float = EPS_POSITIVE_D2,
) -> FitReport:
    """Least-squares fit of tau_q over [q_lo, q_hi] with one of three forms.

        linear:     tau = D0 + D1 (q - 1)
        parabolic:  tau = D0 + D1 (q - 1) + D2 q^2
        sqrt:       tau = D0 + D1 (q - 1) + D2 sqrt(q)

    The classification (and its discard rule for positive curvature) only
    uses D1 and, for the parabolic form, D2.
    """
    lo, hi = q_range
    if not lo < hi:
        raise ValueError("empty q range")
    sel = (curve.q_grid >= lo - 1e-12) & (curve.q_grid <= hi + 1e-12)
    sel &= np.isfinite(curve.tau)
    q = curve.q_grid[sel]
    t = curve.tau[sel]
    if q.size < 3:
        raise InsufficientDataError("fewer than 3 tau points in the fit window")
    cols = [np.ones_like(q), q - 1.0]
    if model == "parabolic":
        cols.append(q**2)
    elif model == "sqrt":
        cols.append(np.sqrt(q))
    elif model != "linear":
        raise ValueError(f"unknown model {model!r}")
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, t, rcond=None)
    resid = t - A @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    D0, D1 = float(coef[0]), float(coef[1])
    D2 = float(coef[2]) if len(coef) > 2 else None
    curv = D2 if model == "parabolic" else None
    return FitReport(
        model=model,
        q_range=(float(lo), float(hi)),
        D0=D0,
        D1=D1,
        D2=D2,
        rms=rms,
        classification=classify_dimension(D1, curv, eps_positive),
    )


@dataclass(frozen=True)
class AnomalousExponents:
    """Deviation of tau_q from the linear law D(q-1)."""

    q_grid: np.ndarray
    delta_q: np.ndarray
    delta_weak: float              # least-squares Delta in delta_q ~ Delta (1-q) q
    reciprocity_residual: float    # max |delta_q - delta_{1-q}| over the overlap


def anomalous_exponent(curve: MassExponentCurve, d_linear: float) -> AnomalousExponents:
    """Anomalous exponents delta_q = tau_q - d_linear (q - 1).

    The weak-multifractality constant comes from projecting delta_q on the
    parabola (1 - q) q.  The reciprocity residual quantifies how well
    delta_q = delta_{1-q} holds on the part of the grid where both q and
    1 - q are available; it is a diagnostic, not a constraint.
    """
    q = curve.q_grid
    delta = curve.tau - d_linear * (q - 1.0)
    g = (1.0 - q) * q
    denom = float(np.dot(g, g))
    weak = float(np.dot(delta, g) / denom) if denom > 0 else float("nan")
    mirror = 1.0 - q
    sel = (mirror >= q.min() - 1e-12) & (mirror <= q.max() + 1e-12)
    if np.any(sel):
        mirrored = np.interp(mirror[sel], q, delta)
        resid = float(np.max(np.abs(delta[sel] - mirrored)))
    else:
        resid = float("nan")
    return AnomalousExponents(
        q_grid=q.copy(), delta_q=delta, delta_weak=weak, reciprocity_residual=resid
    )


@dataclass(frozen=True)
class PDoSHistogram:
    """q-weighted participation mass binned over scaled energy."""

    q: float
    bin_edges: np.ndarray
    mass: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def pdos_q(
    expansion: EigenExpansion,
    q: float,
    n_bins: int = 200,
    eps_range: Optional[Tuple[float, float]] = None,
) -> PDoSHistogram:
    """Histogram of |c_k|^(2q) against e_k over the converged spectrum.

    At q = 1 the histogram mass totals the converged part of the state
    norm.  ``eps_range`` overrides the binning window; without it the bins
    span the certified part of the spectrum, falling back to the full
    spectrum when fewer than two certified levels exist (deep truncation).
    """
    if q <= 0:
        raise ValueError("q must be positive")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    mask = (
        expansion.converged
        if expansion.converged is not None
        else np.ones(expansion.coeffs_sq.size, dtype=bool)
    )
    if np.count_nonzero(mask) < 2:
        mask = np.ones(expansion.coeffs_sq.size, dtype=bool)
    eps = expansion.scaled_energies[mask]
    w = expansion.coeffs_sq[mask] ** q
    if eps_range is not None:
        lo, hi = float(eps_range[0]), float(eps_range[1])
        if not hi > lo:
            raise ValueError("eps_range must be an increasing pair")
    else:
        lo, hi = float(eps.min()), float(eps.max())
        if lo == hi:
            hi = lo + 1e-12
    mass, edges = np.histogram(eps, bins=n_bins, range=(lo, hi), weights=w)
    return PDoSHistogram(q=float(q), bin_edges=edges, mass=mass)


# ---------------------------------------------------------------------------
# Synthetic oracle states with closed-form IPR_q


@dataclass(frozen=True)
class SyntheticState:
    expansion: EigenExpansion
    closed_form: Callable[[float], float]
    sigma: float
    nubar: float


def _gaussian_weights(energies: np.ndarray, sigma: float, r: np.ndarray) -> np.ndarray:
    g = r * np.exp(-0.5 * (energies / sigma) ** 2)
    return g / g.sum()


def synth_random_gaussian(
    j: float,
    seed: int = 7,
    nu0: float = 40.0,
    sigma0: float = 1.0,
    r_dist: str = "exponential",
    window: float = 14.0,
) -> SyntheticState:
    """Random state under a Gaussian envelope on a dense spectrum.

    Level density nubar = nu0 * j and envelope width sigma = sigma0 * sqrt(j),
    so the effective dimension sigma * nubar grows like j**1.5 and the mass
    exponents approach tau_q = q - 1.  Closed form:

        IPR_q = sqrt((2 pi)^(1-q) / q) * E[r^q] * (sigma * nubar)^(1-q)

    with E[r^q] = Gamma(1+q) for unit-mean exponential r, and 1 when
    ``r_dist == "constant"`` (the deterministic variant used to check the
    quadrature against the closed form).
    """
    sigma = sigma0 * math.sqrt(j)
    nubar = nu0 * j
    n = int(math.ceil(2.0 * window * sigma * nubar))
    energies = (np.arange(n) - 0.5 * (n - 1)) / nubar
    if r_dist == "exponential":
        r = np.random.default_rng(seed).exponential(1.0, size=n)

        def moment(q):
            return math.exp(gammaln(1.0 + q))

    elif r_dist == "constant":
        r = np.ones(n)

        def moment(q):
            return 1.0

    else:
        raise ValueError(f"unknown r_dist {r_dist!r}")
    w = _gaussian_weights(energies, sigma, r)
    exp = EigenExpansion(
        coeffs_sq=w,
        scaled_energies=energies / j,
        mean_energy=float(np.dot(w, energies / j)),
        tail_weight=0.0,
        j=j,
    )

    def closed_form(q: float) -> float:
        return math.sqrt((2.0 * math.pi) ** (1.0 - q) / q) * moment(q) * (
            sigma * nubar
        ) ** (1.0 - q)

    return SyntheticState(expansion=exp, closed_form=closed_form,
                          sigma=sigma, nubar=nubar)


def synth_sequence_state(
    j: float,
    omega_cl: float = 1.0,
    nu0: float = 40.0,
    sigma0: float = 1.0,
    window: float = 14.0,
) -> SyntheticState:
    """Gaussian envelope carried by a picket-fence subsequence of levels.

    The dense spectrum has density nu0 * j, but only levels spaced by the
    classical period scale ``omega_cl`` carry weight; everything off the
    sequence is exactly zero.  The participating density 1/omega_cl stays
    finite as j grows, so IPR_q scales like (j**1.5)^((1-q)/3): slope 1/3.

        IPR_q = sqrt((2 pi)^(1-q) / q) * (sigma / omega_cl)^(1-q)
    """
    sigma = sigma0 * math.sqrt(j)
    nubar = nu0 * j
    step = max(int(round(omega_cl * nubar)), 1)
    omega_eff = step / nubar  # grid-commensurate sequence spacing
    n = int(math.ceil(2.0 * window * sigma * nubar))
    energies = (np.arange(n) - 0.5 * (n - 1)) / nubar
    w = np.zeros(n)
    on_seq = np.arange(n) % step == (n // 2) % step  # sequence through the center
    w[on_seq] = np.exp(-0.5 * (energies[on_seq] / sigma) ** 2)
    w /= w.sum()
    exp = EigenExpansion(
        coeffs_sq=w,
        scaled_energies=energies / j,
        mean_energy=float(np.dot(w, energies / j)),
        tail_weight=0.0,
        j=j,
    )

    def closed_form(q: float) -> float:
        return math.sqrt((2.0 * math.pi) ** (1.0 - q) / q) * (
            sigma / omega_eff
        ) ** (1.0 - q)

    return SyntheticState(expansion=exp, closed_form=closed_form,
                          sigma=sigma, nubar=1.0 / omega_eff)
