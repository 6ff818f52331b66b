"""Finite-size spin-boson model: basis, Hamiltonian blocks, dense spectra.

The Hamiltonian couples a single bosonic mode (frequency ``omega``) to a
collective spin of length ``j`` built from ``N = 2j`` two-level atoms
(splitting ``omega0``):

    H = omega * a'a + omega0 * Jz + (coupling / sqrt(2j)) * (a' + a) * Jx

The product basis |n> x |j, m> is truncated at ``n <= n_max``.  The discrete
parity exp[i pi (a'a + Jz + j)] commutes with H, so the matrix splits into
two blocks labelled by (-1)**(n + m + j); everything downstream works per
block and recombines when needed.

Energies are reported in units of omega unless stated otherwise; "intensive"
or "scaled" energy means E / j.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np
import scipy.linalg

__all__ = [
    "ModelParams",
    "BasisState",
    "SpectralData",
    "DimensionOverflowError",
    "DiagonalizationError",
    "params_digest",
    "family_digest",
    "basis_states",
    "basis_arrays",
    "block_indices",
    "build_hamiltonian",
    "diagonalize",
    "solve_block",
    "converged_count",
    "converged_count_values",
    "with_converged_count",
    "ground_energy_intensive",
    "level_count_window",
]

# Hard ceiling on a single parity block; a dense eigensolve beyond this is
# not a desk-scale computation and almost certainly a config mistake.
MAX_BLOCK_DIM = 20_000

# Relative residual allowed for an accepted eigensolve, |H v - E v| vs |H|_max.
RESIDUAL_TOL = 1e-9


class DimensionOverflowError(RuntimeError):
    """Requested basis exceeds the dense-solver size guard."""


class DiagonalizationError(RuntimeError):
    """Eigensolver failed or produced an unacceptable residual."""


@dataclass(frozen=True)
class ModelParams:
    """Physical and truncation parameters of one model instance.

    Parameters
    ----------
    omega : float
        Boson frequency, > 0.
    omega0 : float
        Atomic splitting, > 0.
    coupling : float
        Atom-boson coupling strength Omega, >= 0.  The critical value is
        ``sqrt(omega * omega0)``.
    j : float
        Collective spin length; 2j must be a non-negative integer.
    n_max : int
        Largest boson occupation kept in the truncated basis.
    """

    omega: float = 1.0
    omega0: float = 1.0
    coupling: float = 2.0
    j: float = 10.0
    n_max: int = 60

    def __post_init__(self):
        if not (self.omega > 0 and self.omega0 > 0):
            raise ValueError("omega and omega0 must be positive")
        if self.coupling < 0:
            raise ValueError("coupling must be non-negative")
        two_j = 2.0 * self.j
        if abs(two_j - round(two_j)) > 1e-12 or self.j < 0:
            raise ValueError(f"2j must be a non-negative integer, got j={self.j}")
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ValueError("n_max must be a non-negative integer")

    @property
    def two_j(self) -> int:
        return int(round(2.0 * self.j))

    @property
    def critical_coupling(self) -> float:
        return float(np.sqrt(self.omega * self.omega0))

    @property
    def dim_full(self) -> int:
        """Size of the truncated product basis (both parity blocks)."""
        return (self.n_max + 1) * (self.two_j + 1)


@dataclass(frozen=True)
class BasisState:
    """One product state |n> x |j, m> with its block bookkeeping."""

    n: int
    m: float
    parity: int
    index: int  # position in the n-major, m-minor enumeration of its block


def params_digest(params: ModelParams, parity: Optional[int] = None) -> bytes:
    """32-byte content digest of (params, parity) for caching and metadata.

    The digest is over the exact binary float values, so two configs agree
    iff they produce bit-identical Hamiltonians.
    """
    tag = 0 if parity is None else int(parity)
    payload = struct.pack(
        "<3d3q",
        params.omega,
        params.omega0,
        params.coupling,
        params.two_j,
        params.n_max,
        tag,
    )
    return hashlib.sha256(b"DCKS1" + payload).digest()


def family_digest(params: ModelParams, parity: Optional[int] = None) -> bytes:
    """Hash of everything but the boson cutoff.

    Two spectra are cutoff-comparable (same physical block, different
    n_max) exactly when their family digests agree.
    """
    tag = 0 if parity is None else int(parity)
    payload = struct.pack(
        "<3d2q",
        params.omega,
        params.omega0,
        params.coupling,
        params.two_j,
        tag,
    )
    return hashlib.sha256(b"DCKSF" + payload).digest()


def basis_arrays(params: ModelParams, parity: Optional[int] = None):
    """Return (n, k) index arrays of the basis in n-major, m-minor order.

    Here ``k = j + m`` runs over 0..2j.  ``parity`` of +1 or -1 restricts to
    the corresponding block; None returns the full product basis.
    """
    two_j = params.two_j
    n = np.repeat(np.arange(params.n_max + 1), two_j + 1)
    k = np.tile(np.arange(two_j + 1), params.n_max + 1)
    if parity is None:
        return n, k
    if parity not in (+1, -1):
        raise ValueError("parity must be +1, -1 or None")
    want_odd = parity == -1
    sel = ((n + k) % 2 == 1) == want_odd
    return n[sel], k[sel]


def block_indices(params: ModelParams, parity: int) -> np.ndarray:
    """Positions of a parity block's states inside the full enumeration."""
    n, k = basis_arrays(params, None)
    want_odd = parity == -1
    return np.nonzero(((n + k) % 2 == 1) == want_odd)[0]


def basis_states(params: ModelParams, parity: Optional[int] = None) -> Iterator[BasisState]:
    n, k = basis_arrays(params, parity)
    j = params.j
    for idx in range(n.size):
        p = +1 if (n[idx] + k[idx]) % 2 == 0 else -1
        yield BasisState(n=int(n[idx]), m=float(k[idx] - j), parity=p, index=idx)


def build_hamiltonian(params: ModelParams, parity: Optional[int] = None) -> np.ndarray:
    """Dense real-symmetric Hamiltonian on the full basis or one parity block.

    Matrix elements: diagonal ``omega*n + omega0*m``; the coupling term
    ``(coupling/sqrt(2j)) * (a'+a) * (J+ + J-)/2`` links (n, m) to
    (n+1, m+1) and (n+1, m-1), staying inside one parity block.

    Raises
    ------
    DimensionOverflowError
        If the requested block exceeds ``MAX_BLOCK_DIM`` states.
    """
    n, k = basis_arrays(params, parity)
    dim = n.size
    if dim > MAX_BLOCK_DIM:
        raise DimensionOverflowError(
            f"basis block has {dim} states, over the {MAX_BLOCK_DIM} guard"
        )
    two_j = params.two_j
    j = params.j

    pos = np.full((params.n_max + 2, two_j + 3), -1, dtype=np.int64)
    pos[n, k + 1] = np.arange(dim)  # k shifted by 1 so k-1 lookups stay in range

    # Fortran order lets the dense eigensolver work in place (no transposed
    # copy); for a symmetric matrix the bytes are the same either way.
    H = np.zeros((dim, dim), order="F")
    idx = np.arange(dim)
    H[idx, idx] = params.omega * n + params.omega0 * (k - j)

    if params.coupling != 0.0 and two_j > 0:
        g = 0.5 * params.coupling / np.sqrt(two_j)
        # (n, k) -> (n+1, k+1):  g * sqrt(n+1) * sqrt((2j-k)(k+1))
        sel = (n < params.n_max) & (k < two_j)
        i_lo, i_hi = idx[sel], pos[n[sel] + 1, k[sel] + 2]
        v = g * np.sqrt(n[sel] + 1.0) * np.sqrt((two_j - k[sel]) * (k[sel] + 1.0))
        H[i_lo, i_hi] = v
        H[i_hi, i_lo] = v
        # (n, k) -> (n+1, k-1):  g * sqrt(n+1) * sqrt(k(2j-k+1))
        sel = (n < params.n_max) & (k > 0)
        i_lo, i_hi = idx[sel], pos[n[sel] + 1, k[sel]]
        v = g * np.sqrt(n[sel] + 1.0) * np.sqrt(k[sel] * (two_j - k[sel] + 1.0))
        H[i_lo, i_hi] = v
        H[i_hi, i_lo] = v
    return H


@dataclass(frozen=True)
class SpectralData:
    """Eigenvalues/eigenvectors of one Hamiltonian block, plus provenance.

    ``n_converged`` counts eigenstates certified against a larger boson
    cutoff (see :func:`converged_count`); a freshly diagonalized block starts
    with ``n_converged == dim`` and should be re-certified before use in
    truncation-sensitive analyses.  Arrays are frozen after creation.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # column k is the eigenvector of eigenvalues[k]
    n_converged: int
    digest: bytes
    family: bytes = b""  # cutoff-independent block identity, may be absent

    def __post_init__(self):
        self.eigenvalues.flags.writeable = False
        self.eigenvectors.flags.writeable = False
        if not (0 <= self.n_converged <= self.dim):
            raise ValueError("n_converged out of range")

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)


def _abs_max(a: np.ndarray, chunk: int = 512) -> float:
    """max|a| over column blocks, avoiding a full-matrix temporary."""
    worst = 0.0
    for c0 in range(0, a.shape[1], chunk):
        worst = max(worst, float(np.abs(a[:, c0:c0 + chunk]).max()))
    return worst


def _residual_max(H: np.ndarray, evals: np.ndarray, evecs: np.ndarray,
                  chunk: int = 256) -> float:
    """max|H v_k - E_k v_k| over column blocks of the eigenvector matrix."""
    worst = 0.0
    for c0 in range(0, evals.size, chunk):
        c1 = min(c0 + chunk, evals.size)
        r = H @ evecs[:, c0:c1]
        r -= evecs[:, c0:c1] * evals[c0:c1]
        worst = max(worst, float(np.abs(r).max()))
    return worst


def _checked_spectral(
    evals: np.ndarray,
    evecs: np.ndarray,
    H: np.ndarray,
    scale: float,
    params: ModelParams,
    parity: Optional[int],
) -> SpectralData:
    resid = _residual_max(H, evals, evecs)
    if resid > RESIDUAL_TOL * scale:
        raise DiagonalizationError(
            f"residual {resid:.3e} above {RESIDUAL_TOL:.1e} * |H|_max"
        )
    return SpectralData(
        eigenvalues=evals,
        eigenvectors=evecs,
        n_converged=evals.size,
        digest=params_digest(params, parity),
        family=family_digest(params, parity),
    )


def diagonalize(
    H: np.ndarray, params: ModelParams, parity: Optional[int] = None
) -> SpectralData:
    """Full dense eigensolve of a symmetric block with a residual check.

    Eigenvalues come back ascending; the residual max|H V - V diag(E)| must
    not exceed ``RESIDUAL_TOL * max|H|`` or DiagonalizationError is raised.
    The caller's matrix is left untouched; when the matrix is large, prefer
    :func:`solve_block`, which avoids the solver's internal copy.
    """
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    scale = max(_abs_max(H), 1.0)
    try:
        evals, evecs = scipy.linalg.eigh(H)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise DiagonalizationError(f"eigensolver failed: {exc}") from exc
    return _checked_spectral(evals, evecs, H, scale, params, parity)


def solve_block(params: ModelParams, parity: Optional[int] = None) -> SpectralData:
    """Build and diagonalize one parity block (or the full matrix).

    The solver is allowed to destroy the freshly built matrix, and the
    matrix is rebuilt for the residual check; at the largest desk-scale
    blocks this keeps the peak near two matrix copies instead of four.
    """
    H = build_hamiltonian(params, parity)
    scale = max(_abs_max(H), 1.0)
    try:
        evals, evecs = scipy.linalg.eigh(H, overwrite_a=True)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise DiagonalizationError(f"eigensolver failed: {exc}") from exc
    del H
    H = build_hamiltonian(params, parity)
    return _checked_spectral(evals, evecs, H, scale, params, parity)


def converged_count_values(
    vals_lo: np.ndarray, vals_hi: np.ndarray, tol: float
) -> int:
    """Largest K with |vals_lo[k] - vals_hi[k]| <= tol for every k < K.

    Bare-array variant of :func:`converged_count`; the caller is responsible
    for the two spectra belonging to the same physical block.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = min(len(vals_lo), len(vals_hi))
    diff = np.abs(np.asarray(vals_lo)[:n] - np.asarray(vals_hi)[:n])
    bad = np.nonzero(diff > tol)[0]
    return int(bad[0]) if bad.size else n


def converged_count(lo: SpectralData, hi: SpectralData, tol: float) -> int:
    """Largest K with |E_k(lo) - E_k(hi)| <= tol for every k < K.

    ``lo`` and ``hi`` are spectra of the same physical block at two boson
    cutoffs; eigenvalues below the returned count are insensitive to the
    truncation at tolerance ``tol``.
    """
    if lo.family and hi.family and lo.family != hi.family:
        raise ValueError("spectra come from different parameter families")
    if lo.dim > hi.dim:
        raise ValueError("lo must be the spectrum at the smaller cutoff")
    return converged_count_values(lo.eigenvalues, hi.eigenvalues, tol)


def with_converged_count(spectra: SpectralData, n_converged: int) -> SpectralData:
    return replace(spectra, n_converged=int(n_converged))


def ground_energy_intensive(spectra: SpectralData, params: ModelParams) -> float:
    """Ground energy per spin, E_0 / j."""
    if params.j == 0:
        raise ValueError("ground_energy_intensive undefined at j = 0")
    return float(spectra.eigenvalues[0]) / params.j


def level_count_window(
    spectra: SpectralData, params: ModelParams, center: float, width: float
) -> int:
    """Number of converged levels in an energy window.

    The window sits at scaled energy ``center`` (units of j) and has a fixed
    *unscaled* width ``width``, i.e. E in [j*center - width/2, j*center + width/2].
    With that convention the count grows linearly in j when the density of
    states per unit energy does.
    """
    e = spectra.eigenvalues[: spectra.n_converged]
    mid = params.j * center
    return int(np.count_nonzero((e >= mid - width / 2) & (e <= mid + width / 2)))
