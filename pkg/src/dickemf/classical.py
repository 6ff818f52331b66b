"""Mean-field dynamics: Hamilton equations, trajectories, surface sections.

The classical Hamiltonian (see :func:`dickemf.coherent.classical_energy`)
generates, for the canonical pairs (x, p) and (phi, jz),

    dx/dt  =  omega * p
    dp/dt  = -omega * x - coupling * sqrt(1 - jz^2) * cos(phi)
    dphi/dt = omega0 - coupling * x * jz * cos(phi) / sqrt(1 - jz^2)
    djz/dt =  coupling * sqrt(1 - jz^2) * x * sin(phi)

Integration uses an adaptive high-order embedded Runge-Kutta pair (DOP853)
at tight local tolerance.  The (phi, jz) chart degenerates at the sphere
poles (dphi/dt ~ 1/sqrt(1 - jz^2)), so internally the spin is propagated in
its Cartesian embedding s = (sx, sy, sz), |s| = 1,

    ds/dt = B x s,   B = (coupling * x, 0, omega0),

which is regular everywhere and agrees with the canonical equations away
from the poles.  Energy drift along the trajectory is monitored; |s| drifts
only at integrator roundoff and jz is reported clipped to [-1, 1].

Surface sections are taken on p = 0.  At a crossing the energy constraint
makes x one of the two roots of a quadratic; falling-p crossings (dp/dt < 0)
sit exactly on the positive branch of that quadratic, so recording that one
side both selects the positive-branch solution and avoids double plotting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .coherent import PhaseSpacePoint, classical_energy, solve_xplus
from .model import ModelParams

__all__ = [
    "Trajectory",
    "SectionPoint",
    "equations_of_motion",
    "integrate_trajectory",
    "poincare_section",
    "wrap_angle",
    "section_occupancy",
    "allowed_section_mask",
    "surface_xmax",
]

logger = logging.getLogger(__name__)

LOCAL_TOL = 1e-10   # per-step integrator tolerance (relative and absolute)
DRIFT_TOL = 1e-8    # max |h(t) - h(0)| before a trajectory is distrusted
POLE_NEAR = 1e-10   # report pole contact when 1 - |jz| falls below this


def equations_of_motion(y: Sequence[float], params: ModelParams) -> np.ndarray:
    """Time derivatives (dx, dp, dphi, djz) at state y = (x, p, phi, jz).

    This is the canonical-chart vector field; it is singular at jz = +-1
    (the chart pole), where it raises rather than returning garbage.
    """
    x, p, phi, jz = float(y[0]), float(y[1]), float(y[2]), float(y[3])
    if abs(jz) >= 1.0:
        raise ValueError(f"|jz| = {abs(jz)} not inside the sphere")
    s = math.sqrt(1.0 - jz * jz)
    c, sn = math.cos(phi), math.sin(phi)
    om, om0, g = params.omega, params.omega0, params.coupling
    return np.array(
        [om * p, -om * x - g * s * c, om0 - g * x * jz * c / s, g * s * x * sn]
    )


def _rhs(params: ModelParams):
    """Pole-free RHS closure in embedded coordinates (x, p, sx, sy, sz)."""
    om, om0, g = params.omega, params.omega0, params.coupling

    def fun(t, y):
        x, p, sx, sy, sz = y[0], y[1], y[2], y[3], y[4]
        return (
            om * p,
            -om * x - g * sx,
            -om0 * sy,
            om0 * sx - g * x * sz,
            g * x * sy,
        )

    return fun


def _embed(point: PhaseSpacePoint) -> list:
    s = math.sqrt(max(1.0 - point.jz * point.jz, 0.0))
    return [
        point.x,
        point.p,
        s * math.cos(point.phi),
        s * math.sin(point.phi),
        point.jz,
    ]


def _energy_embedded(y: np.ndarray, params: ModelParams) -> np.ndarray:
    """h over embedded samples, rows of shape (5,) stacked as (n, 5)."""
    return (
        0.5 * params.omega * (y[:, 0] ** 2 + y[:, 1] ** 2)
        + params.omega0 * y[:, 4]
        + params.coupling * y[:, 0] * y[:, 2]
    )


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of the mean-field equations with drift bookkeeping."""

    t: np.ndarray
    states: np.ndarray          # shape (len(t), 4): columns x, p, phi, jz
    energies: np.ndarray        # h along the samples
    drift: float                # max |h(t) - h(0)| over the samples
    reached_pole: bool = False

    @property
    def initial(self) -> PhaseSpacePoint:
        x, p, phi, jz = self.states[0]
        return PhaseSpacePoint(x=x, p=p, phi=phi, jz=min(max(jz, -1.0), 1.0))


def integrate_trajectory(
    point: PhaseSpacePoint,
    t_max: float,
    params: ModelParams,
    n_samples: int = 400,
    rtol: float = LOCAL_TOL,
    atol: float = LOCAL_TOL,
) -> Trajectory:
    """Integrate from ``point`` for time ``t_max`` (may be negative).

    Sampling is uniform with ``n_samples`` points for the drift monitor and
    any downstream plotting; the adaptive solver controls accuracy, not the
    sample grid.
    """
    if t_max == 0:
        raise ValueError("t_max must be nonzero")
    t_eval = np.linspace(0.0, t_max, max(int(n_samples), 2))
    sol = solve_ivp(
        _rhs(params),
        (0.0, t_max),
        _embed(point),
        method="DOP853",
        rtol=rtol,
        atol=atol,
        t_eval=t_eval,
    )
    if sol.status != 0:
        raise RuntimeError(f"integration failed: {sol.message}")
    emb = sol.y.T
    energies = _energy_embedded(emb, params)
    drift = float(np.abs(energies - energies[0]).max()) if energies.size else 0.0
    phi = np.arctan2(emb[:, 3], emb[:, 2])
    jz = np.clip(emb[:, 4], -1.0, 1.0)
    states = np.column_stack([emb[:, 0], emb[:, 1], phi, jz])
    return Trajectory(
        t=sol.t,
        states=states,
        energies=energies,
        drift=drift,
        reached_pole=bool(np.any(1.0 - np.abs(jz) < POLE_NEAR)),
    )


def wrap_angle(phi):
    """Wrap angles to (-pi, pi]."""
    w = -((-np.asarray(phi) + np.pi) % (2.0 * np.pi) - np.pi)
    return w if w.ndim else float(w)


@dataclass(frozen=True)
class SectionPoint:
    """One p = 0, positive-branch crossing of a trajectory."""

    trajectory_id: int
    t: float
    phi: float  # wrapped to (-pi, pi]
    jz: float


def poincare_section(
    eps0: float,
    seeds: Sequence[PhaseSpacePoint],
    t_max: float,
    params: ModelParams,
    drift_tol: float = DRIFT_TOL,
    energy_tol: float = 1e-8,
    rtol: float = LOCAL_TOL,
    atol: float = LOCAL_TOL,
) -> list[SectionPoint]:
    """Collect p = 0 section crossings for every seed on the surface eps0.

    Seeds must lie on the energy surface (checked against ``energy_tol``).
    Crossing times are root-polished on the solver's dense interpolant; only
    falling-p crossings are kept (positive-branch convention, one-sided).
    Trajectories whose sampled energy drift exceeds ``drift_tol`` are dropped
    with a log message rather than contaminating the section.
    """
    points: list[SectionPoint] = []

    def falling_p(t, y):
        return y[1]

    falling_p.direction = -1.0

    for traj_id, seed in enumerate(seeds):
        h0 = classical_energy(seed, params)
        if abs(h0 - eps0) > energy_tol:
            raise ValueError(
                f"seed {traj_id} off the surface: h = {h0:.12g}, eps0 = {eps0:.12g}"
            )
        sol = solve_ivp(
            _rhs(params),
            (0.0, float(t_max)),
            _embed(seed),
            method="DOP853",
            rtol=rtol,
            atol=atol,
            t_eval=np.linspace(0.0, float(t_max), 200),
            events=[falling_p],
        )
        if sol.status != 0:
            logger.warning("trajectory %d: integrator failure (%s), dropped",
                           traj_id, sol.message)
            continue
        h = _energy_embedded(sol.y.T, params)
        drift = float(np.abs(h - eps0).max()) if h.size else 0.0
        if drift > drift_tol:
            logger.warning("trajectory %d: energy drift %.3e > %.1e, dropped",
                           traj_id, drift, drift_tol)
            continue
        for t_c, y_c in zip(sol.t_events[0], sol.y_events[0]):
            points.append(
                SectionPoint(
                    trajectory_id=traj_id,
                    t=float(t_c),
                    phi=float(wrap_angle(math.atan2(y_c[3], y_c[2]))),
                    jz=float(min(max(y_c[4], -1.0), 1.0)),
                )
            )
    return points


def section_occupancy(
    points: Sequence[SectionPoint], n_bins: int = 50
) -> np.ndarray:
    """Boolean occupancy grid of section points over (-pi, pi] x [-1, 1]."""
    occ = np.zeros((n_bins, n_bins), dtype=bool)
    for pt in points:
        i = min(int((pt.phi + np.pi) / (2.0 * np.pi) * n_bins), n_bins - 1)
        k = min(int((pt.jz + 1.0) / 2.0 * n_bins), n_bins - 1)
        occ[i, k] = True
    return occ


def surface_xmax(eps0: float, params: ModelParams) -> float:
    """Largest |x| reached anywhere on the scaled energy surface eps0.

    With p = 0 and the spin direction chosen to pull the energy down as far
    as it can go, the spin contribution at field amplitude x bottoms out at
    -sqrt(omega0^2 + coupling^2 x^2).  The outermost point of the surface is
    therefore the largest root of

        g(x) = omega x^2 / 2 - sqrt(omega0^2 + coupling^2 x^2) - eps0 = 0.

    The minimum of g over x >= 0 equals eps_GS - eps0 (the classical ground
    energy appears as the bottom of this radial profile), so a surface
    exists exactly when eps0 is at or above the ground energy; below it a
    ValueError is raised.  The quantity j * surface_xmax^2 / 2 is the
    largest boson occupation the surface explores, which bounds the Fock
    support of eigenstates living at eps0.
    """
    om, om0, g = params.omega, params.omega0, params.coupling

    def profile(x: float) -> float:
        return 0.5 * om * x * x - math.hypot(om0, g * x) - eps0

    x_star = math.sqrt(max(g**4 / om**2 - om0**2, 0.0)) / g if g > 0 else 0.0
    bottom = profile(x_star)
    if bottom > 0.0:
        raise ValueError(
            f"eps0 = {eps0} lies below the classical ground energy "
            f"{eps0 + bottom:.6f}; the energy surface is empty"
        )
    if bottom == 0.0:
        return x_star
    hi = max(2.0 * x_star, 1.0)
    while profile(hi) < 0.0:
        hi *= 2.0
    return float(brentq(profile, x_star, hi, xtol=1e-12, rtol=1e-14))


def allowed_section_mask(
    eps0: float, params: ModelParams, n_bins: int = 50
) -> np.ndarray:
    """Cells of the (phi, jz) grid whose center admits a positive-branch root."""
    phi_c = -np.pi + (np.arange(n_bins) + 0.5) * (2.0 * np.pi / n_bins)
    jz_c = -1.0 + (np.arange(n_bins) + 0.5) * (2.0 / n_bins)
    mask = np.zeros((n_bins, n_bins), dtype=bool)
    for i, phi in enumerate(phi_c):
        for k, jz in enumerate(jz_c):
            mask[i, k] = solve_xplus(eps0, float(phi), float(jz), params) is not None
    return mask
