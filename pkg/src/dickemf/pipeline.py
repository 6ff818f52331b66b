"""Batch experiment drivers: certified spectra, scans, sections, reports.

Every driver takes an :class:`ExperimentConfig` (JSON-loadable, fully
defaulted) plus a spectrum cache directory and an output directory, and
emits CSV files.  Output rules:

* RFC 4180 (CRLF, minimal quoting) with one leading ``#`` metadata line
  carrying the config digest, so every table is traceable to the exact
  configuration that produced it.
* Runs are deterministic: a fixed config and seed give byte-identical
  files, and a completed output is not recomputed (the metadata line is
  checked before skipping).

Heavy diagonalizations go through the content-addressed spectrum cache;
surface scans over a hundred points reuse the same handful of spectra.
"""

from __future__ import annotations

import dataclasses
import json
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import cache as cache_mod
from . import classical, coherent, model, multifractal

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "ExperimentConfig",
    "build_ladder",
    "point_expansions",
    "run_spectrum",
    "run_state_analysis",
    "run_surface_scan",
    "run_poincare",
    "run_bounds_check",
    "run_convergence_sweep",
]


class ConfigError(ValueError):
    """Configuration file missing, malformed, or inconsistent."""


class ConvergenceError(RuntimeError):
    """No usable converged data for the requested analysis."""


def _float_list(values) -> Tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class ExperimentConfig:
    """Run parameters for the batch drivers (all fields have defaults).

    ``n_max`` of None selects the base cutoff per energy surface: 120 up to
    scaled energy -1.1, 160 above.  With ``enforce_shell`` on (the default)
    the cutoff is raised per size to contain the classical shell of the
    surface: eigenstates at eps0 occupy boson levels up to
    j * surface_xmax(eps0)^2 / 2, so a fixed cutoff silently corrupts the
    largest sizes while every smaller check still passes.  The enforced
    cutoff adds ``shell_margin`` quantum widths (sqrt of the shell need) on
    top.  Convergence certification, when requested, compares eigenvalues
    against a reference spectrum ``n_ref_offset`` above the working cutoff.
    """

    omega: float = 1.0
    omega0: float = 1.0
    coupling: float = 2.0
    j_list: Tuple[float, ...] = (5, 10, 15, 20, 25, 30, 35, 40)
    n_max: Optional[int] = None
    n_ref_offset: int = 30
    enforce_shell: bool = True
    shell_margin: float = 5.0
    certify: bool = False
    energies: Tuple[float, ...] = (-1.8,)
    points: Tuple[Dict, ...] = ()
    jz_grid: int = 101
    q_min: float = 0.10
    q_max: float = 4.00
    q_step: float = 0.05
    fit_range_high: Tuple[float, float] = (1.0, 2.0)
    fit_range_low: Tuple[float, float] = (0.3, 1.0)
    j_exclude_below: float = 20.0
    tail_budget: float = 1e-6
    conv_tol: float = 1e-8
    eps_positive: float = 0.005
    eps_curvature: float = 0.01
    pdos_bins: int = 200
    pdos_q: Tuple[float, ...] = (0.5, 1.0, 2.0)
    oracle_j: Tuple[float, ...] = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120)
    nu0: float = 40.0
    sigma0: float = 1.0
    omega_cl: float = 1.0
    t_max: float = 2000.0
    drift_tol: float = 1e-8
    seed_stride: int = 5
    n_max_alt: Optional[int] = None
    seed: int = 7
    threads: int = 1

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            raw = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = {f.name: f.default for f in dataclasses.fields(cls)}
        merged.update(data)
        try:
            cfg = cls(
                omega=float(merged["omega"]),
                omega0=float(merged["omega0"]),
                coupling=float(merged["coupling"]),
                j_list=_float_list(merged["j_list"]),
                n_max=None if merged["n_max"] is None else int(merged["n_max"]),
                n_ref_offset=int(merged["n_ref_offset"]),
                enforce_shell=bool(merged["enforce_shell"]),
                shell_margin=float(merged["shell_margin"]),
                certify=bool(merged["certify"]),
                energies=_float_list(merged["energies"]),
                points=tuple(dict(p) for p in merged["points"]),
                jz_grid=int(merged["jz_grid"]),
                q_min=float(merged["q_min"]),
                q_max=float(merged["q_max"]),
                q_step=float(merged["q_step"]),
                fit_range_high=tuple(_float_list(merged["fit_range_high"])),
                fit_range_low=tuple(_float_list(merged["fit_range_low"])),
                j_exclude_below=float(merged["j_exclude_below"]),
                tail_budget=float(merged["tail_budget"]),
                conv_tol=float(merged["conv_tol"]),
                eps_positive=float(merged["eps_positive"]),
                eps_curvature=float(merged["eps_curvature"]),
                pdos_bins=int(merged["pdos_bins"]),
                pdos_q=_float_list(merged["pdos_q"]),
                oracle_j=_float_list(merged["oracle_j"]),
                nu0=float(merged["nu0"]),
                sigma0=float(merged["sigma0"]),
                omega_cl=float(merged["omega_cl"]),
                t_max=float(merged["t_max"]),
                drift_tol=float(merged["drift_tol"]),
                seed_stride=int(merged["seed_stride"]),
                n_max_alt=None if merged["n_max_alt"] is None else int(merged["n_max_alt"]),
                seed=int(merged["seed"]),
                threads=int(merged["threads"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.omega <= 0 or self.omega0 <= 0:
            raise ConfigError("omega and omega0 must be positive")
        if self.coupling < 0:
            raise ConfigError("coupling must be non-negative")
        if not self.j_list or any(j <= 0 for j in self.j_list):
            raise ConfigError("j_list must be non-empty and positive")
        if list(self.j_list) != sorted(self.j_list):
            raise ConfigError("j_list must be increasing")
        if self.n_max is not None and self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.n_ref_offset < 1:
            raise ConfigError("n_ref_offset must be >= 1")
        if self.shell_margin < 0:
            raise ConfigError("shell_margin must be >= 0")
        if not (0 < self.q_min < self.q_max):
            raise ConfigError("need 0 < q_min < q_max")
        if self.q_step <= 0:
            raise ConfigError("q_step must be positive")
        for rng in (self.fit_range_high, self.fit_range_low):
            if len(rng) != 2 or not rng[0] < rng[1]:
                raise ConfigError(f"bad fit range {rng}")
        if self.jz_grid < 2:
            raise ConfigError("jz_grid must be >= 2")
        if self.tail_budget <= 0 or self.conv_tol <= 0:
            raise ConfigError("tail_budget and conv_tol must be positive")
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")
        if self.seed_stride < 1:
            raise ConfigError("seed_stride must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for pt in self.points:
            if "eps0" not in pt or "jz" not in pt:
                raise ConfigError(f"point {pt} needs eps0 and jz")
        probe = self.model_params(self.j_list[0], 1)
        for eps0 in set(self.energies) | {float(p["eps0"]) for p in self.points}:
            try:
                classical.surface_xmax(eps0, probe)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        retained = [j for j in self.j_list if j > self.j_exclude_below]
        if len(retained) < 4:
            raise ConfigError(
                f"only {len(retained)} sizes above j_exclude_below="
                f"{self.j_exclude_below}; scaling fits need at least 4"
            )

    # -- derived helpers ---------------------------------------------------

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def q_grid(self) -> np.ndarray:
        return multifractal.default_q_grid(self.q_min, self.q_max, self.q_step)

    def base_cutoff(self, eps0: float) -> int:
        if self.n_max is not None:
            return self.n_max
        return 120 if eps0 <= -1.1 else 160

    def shell_cutoff(self, j: float, eps0: float) -> int:
        """Smallest cutoff whose Fock range contains the eps0 shell at size j."""
        xm = classical.surface_xmax(eps0, self.model_params(j, 1))
        need = j * xm * xm / 2.0
        return int(math.ceil(need + self.shell_margin * math.sqrt(need)))

    def cutoff_for(self, eps0: float, j: Optional[float] = None) -> int:
        """Effective boson cutoff for surface eps0 (shell-enforced per size)."""
        base = self.base_cutoff(eps0)
        if j is None or not self.enforce_shell:
            return base
        return max(base, self.shell_cutoff(j, eps0))

    def ladder_cutoffs(self, eps0: float, base: Optional[int] = None) -> Dict[float, int]:
        """Per-size cutoffs for a ladder on surface eps0.

        ``base`` overrides the configured base cutoff (used by the sweep
        driver to compare two working cutoffs); shell enforcement still
        applies on top unless disabled.
        """
        out = {}
        for j in self.j_list:
            floor = base if base is not None else self.base_cutoff(eps0)
            if self.enforce_shell:
                floor = max(floor, self.shell_cutoff(j, eps0))
            out[j] = floor
        return out

    def model_params(self, j: float, n_max: int) -> model.ModelParams:
        return model.ModelParams(
            omega=self.omega, omega0=self.omega0, coupling=self.coupling,
            j=j, n_max=n_max,
        )


# ---------------------------------------------------------------------------
# CSV plumbing


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, meta: str, header: Sequence[str], rows) -> bool:
    """Write one CSV with a '#' metadata line; skip if already current.

    Returns True when the file was (re)written, False on an idempotent skip.
    """
    path = Path(path)
    meta_line = "# " + meta
    if path.exists():
        try:
            first = path.open("r", newline="").readline().rstrip("\r\n")
        except OSError:
            first = None
        if first == meta_line:
            logger.info("up to date: %s", path)
            return False
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(meta_line + "\r\n")
        fh.write(",".join(header) + "\r\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\r\n")
    tmp.replace(path)
    logger.info("wrote %s", path)
    return True


def _point_tag(eps0: float, jz: float) -> str:
    return f"e{eps0:+.3f}_jz{jz:+.4f}"


# ---------------------------------------------------------------------------
# Spectrum ladders


def _materialize_block(
    store: cache_mod.SpectrumCache, params: model.ModelParams, parity: int
) -> None:
    """Solve one block into the cache without keeping it in memory.

    The largest desk-scale eigensolves peak near two matrix copies on their
    own, so nothing else may be held while they run.
    """
    if not store.has(params, parity):
        store.store(model.solve_block(params, parity), params, parity)


def _certified_count(
    config: ExperimentConfig,
    store: cache_mod.SpectrumCache,
    j: float,
    n_max: int,
    parity: int,
) -> int:
    """Converged-level count against the cutoff ``n_ref_offset`` higher.

    Works on cached eigenvalue strips only; neither eigenvector matrix is
    loaded.  The tolerance is on scaled energies, hence ``conv_tol * j``.
    """
    p_work = config.model_params(j, n_max)
    p_ref = config.model_params(j, n_max + config.n_ref_offset)
    _materialize_block(store, p_work, parity)
    _materialize_block(store, p_ref, parity)
    return model.converged_count_values(
        store.load_values(p_work, parity),
        store.load_values(p_ref, parity),
        config.conv_tol * j,
    )


def build_ladder(
    config: ExperimentConfig,
    cutoffs: Dict[float, int],
    store: cache_mod.SpectrumCache,
    certify: bool = False,
) -> Dict[float, Dict[int, model.SpectralData]]:
    """Diagonalize both parity blocks for every j at its cutoff.

    With ``certify`` on, each block is compared against the same block at
    the reference cutoff ``n_ref_offset`` higher; eigenvalues equal within
    ``conv_tol * j`` (the tolerance is on scaled energies) are counted
    converged.  Without it n_converged stays at the full dimension, meaning
    "not certified" rather than "all converged".  Everything goes through
    the content-addressed cache, so a repeated call does no linear algebra.

    The returned dict holds every requested eigenvector matrix, so callers
    pass one size at a time at production cutoffs; solving happens in a
    materialize-first pass that keeps at most one block in flight.
    """
    sizes = sorted(cutoffs)
    jobs = [(j, parity) for j in sizes for parity in (+1, -1)]

    if config.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        def materialize(j, parity):
            _materialize_block(store, config.model_params(j, cutoffs[j]), parity)
            if certify:
                _materialize_block(
                    store,
                    config.model_params(j, cutoffs[j] + config.n_ref_offset),
                    parity,
                )

        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            for fut in [pool.submit(materialize, *key) for key in jobs]:
                fut.result()
    else:
        for j, parity in jobs:
            _materialize_block(store, config.model_params(j, cutoffs[j]), parity)
            if certify:
                _materialize_block(
                    store,
                    config.model_params(j, cutoffs[j] + config.n_ref_offset),
                    parity,
                )

    results = {}
    for j, parity in jobs:
        p_work = config.model_params(j, cutoffs[j])
        work = store.load(p_work, parity)
        if certify:
            k = _certified_count(config, store, j, cutoffs[j], parity)
            logger.info("ladder j=%g parity=%+d n_max=%d dim=%d certified=%d",
                        j, parity, cutoffs[j], work.dim, k)
            work = model.with_converged_count(work, k)
        results[(j, parity)] = work

    return {
        j: {parity: results[(j, parity)] for parity in (+1, -1)}
        for j in sizes
    }


def point_expansions(
    eps0: float,
    jz: float,
    phi: float,
    config: ExperimentConfig,
    store: cache_mod.SpectrumCache,
    cutoffs: Dict[float, int],
    certify: bool = False,
) -> List[Tuple[float, coherent.EigenExpansion]]:
    """Expand the surface point (eps0, jz, phi) at every ladder size.

    Blocks stream through one size at a time (expansions are small,
    eigenvector matrices are not).
    """
    out = []
    for j in config.j_list:
        params = config.model_params(j, cutoffs[j])
        x = coherent.solve_xplus(eps0, phi, jz, params)
        if x is None:
            raise ConvergenceError(
                f"point eps0={eps0}, jz={jz} has no real surface root"
            )
        blocks = build_ladder(config, {j: cutoffs[j]}, store, certify=certify)[j]
        pt = coherent.PhaseSpacePoint(x=x, p=0.0, phi=phi, jz=jz)
        coeffs, _ = coherent.basis_coeffs(pt, params)
        out.append((j, coherent.eigen_expansion(coeffs, blocks, params, pt)))
        # released before the next (larger) solve; expansions hold no
        # reference to the eigenvector matrices
        del blocks
    return out


# ---------------------------------------------------------------------------
# Drivers


def run_spectrum(config: ExperimentConfig, cache_dir: Path, out_dir: Path) -> List[Path]:
    """Ensure cached, certified spectra for every configured energy surface.

    Certification and the summary rows need only eigenvalue strips, so no
    eigenvector matrix is ever held; a full production ladder of those does
    not fit in memory at once.
    """
    store = cache_mod.SpectrumCache(cache_dir)
    written = []
    done = set()
    for eps0 in config.energies:
        cutoffs = config.ladder_cutoffs(eps0)
        key = tuple(sorted(cutoffs.items()))
        if key in done:
            continue
        done.add(key)
        rows = []
        for j in config.j_list:
            for parity in (+1, -1):
                k = _certified_count(config, store, j, cutoffs[j], parity)
                vals = store.load_values(config.model_params(j, cutoffs[j]), parity)
                logger.info("spectrum j=%g parity=%+d n_max=%d dim=%d certified=%d",
                            j, parity, cutoffs[j], vals.size, k)
                rows.append((
                    j, parity, cutoffs[j], vals.size, k, float(vals[0]) / j,
                ))
        path = Path(out_dir) / f"spectra_e{eps0:+.3f}.csv"
        _write_csv(
            path,
            f"dickemf spectrum config={config.digest()} eps0={eps0!r}",
            ("j", "parity", "n_max", "dim", "n_converged",
             "ground_energy_intensive"),
            rows,
        )
        written.append(path)
    return written


def _analyze_expansions(
    exps: List[Tuple[float, coherent.EigenExpansion]],
    config: ExperimentConfig,
) -> Tuple[multifractal.IPRSeries, multifractal.MassExponentCurve]:
    series = multifractal.ipr_series(exps, config.q_grid(), config.tail_budget)
    curve = multifractal.mass_exponents(
        series, config.j_exclude_below, config.eps_curvature
    )
    return series, curve


def run_state_analysis(
    config: ExperimentConfig, cache_dir: Path, out_dir: Path
) -> List[Path]:
    """Full per-point analysis: expansion, tau curve, fits, anomalous, PDoS.

    Points come from ``config.points``; each needs eps0 and jz (phi defaults
    to 0).  Raises ConvergenceError when a point has unconverged expansions
    at retained sizes, rather than fitting through bad data.
    """
    if not config.points:
        raise ConfigError("state analysis needs config.points")
    store = cache_mod.SpectrumCache(cache_dir)
    out = Path(out_dir)
    written: List[Path] = []
    for spec_pt in config.points:
        eps0 = float(spec_pt["eps0"])
        jz = float(spec_pt["jz"])
        phi = float(spec_pt.get("phi", 0.0))
        cutoffs = config.ladder_cutoffs(eps0)
        exps = point_expansions(eps0, jz, phi, config, store, cutoffs,
                                certify=config.certify)
        tag = _point_tag(eps0, jz)
        meta = f"dickemf state-analyze config={config.digest()} point={tag}"

        # largest-size expansion dump
        j_big, exp_big = exps[-1]
        rows = [
            (k, exp_big.scaled_energies[k] * j_big, exp_big.scaled_energies[k],
             exp_big.coeffs_sq[k])
            for k in range(exp_big.coeffs_sq.size)
        ]
        written.append(out / f"expansion_{tag}_j{j_big:g}.csv")
        _write_csv(written[-1],
                   meta + f" norm={exp_big.norm!r}"
                          f" tail_weight={exp_big.tail_weight!r}",
                   ("k", "E_k", "eps_k", "ck_sq"), rows)

        try:
            series, curve = _analyze_expansions(exps, config)
        except multifractal.InsufficientDataError as exc:
            raise ConvergenceError(f"point {tag}: {exc}") from exc
        lo, hi = curve.trusted_range
        rows = [
            (q, curve.tau[i], curve.stderr[i],
             int(lo - 1e-12 <= q <= hi + 1e-12))
            for i, q in enumerate(curve.q_grid)
        ]
        written.append(out / f"tau_{tag}.csv")
        _write_csv(written[-1], meta + f" trusted=({lo!r},{hi!r})",
                   ("q", "tau", "stderr", "trusted"), rows)

        fit_rows = []
        d1_for_delta = None
        for rng in (config.fit_range_high, config.fit_range_low):
            for mdl in ("linear", "parabolic", "sqrt"):
                rep = multifractal.fit_tau(curve, rng, mdl, config.eps_positive)
                fit_rows.append((
                    rep.model, rep.q_range[0], rep.q_range[1], rep.D0, rep.D1,
                    "" if rep.D2 is None else rep.D2, rep.rms, rep.classification,
                ))
                if mdl == "linear" and rng == config.fit_range_high:
                    d1_for_delta = rep.D1
        written.append(out / f"fits_{tag}.csv")
        _write_csv(written[-1], meta,
                   ("model", "q_lo", "q_hi", "D0", "D1", "D2", "rms",
                    "classification"), fit_rows)

        anom = multifractal.anomalous_exponent(curve, d1_for_delta)
        rows = [(q, anom.delta_q[i]) for i, q in enumerate(anom.q_grid)]
        written.append(out / f"anomalous_{tag}.csv")
        _write_csv(
            written[-1],
            meta + f" D_linear={d1_for_delta!r} delta_weak={anom.delta_weak!r}"
                   f" reciprocity={anom.reciprocity_residual!r}",
            ("q", "delta_q"), rows,
        )

        pd_rows = []
        for q in config.pdos_q:
            hist = multifractal.pdos_q(exp_big, q, config.pdos_bins)
            for b in range(hist.mass.size):
                pd_rows.append((q, hist.bin_edges[b], hist.bin_edges[b + 1],
                                hist.mass[b]))
        written.append(out / f"pdos_{tag}_j{j_big:g}.csv")
        _write_csv(written[-1], meta, ("q", "eps_lo", "eps_hi", "mass"), pd_rows)
    return written


def run_surface_scan(
    config: ExperimentConfig, cache_dir: Path, out_dir: Path
) -> List[Path]:
    """Dimension estimates along a jz grid on each configured energy surface.

    Per grid point: D1 from the linear fit on the upper q window, plus the
    curvatures D2 of parabolic refits on both windows with their discard
    flags (positive curvature voids a point).  Points with no surface root
    are listed in a companion skips file, and points whose expansions are
    unconverged at retained sizes survive with converged=0 and no fit values.
    """
    store = cache_mod.SpectrumCache(cache_dir)
    out = Path(out_dir)
    written: List[Path] = []
    q_grid = config.q_grid()
    for eps0 in config.energies:
        cutoffs = config.ladder_cutoffs(eps0)
        jz_values = np.linspace(-1.0, 1.0, config.jz_grid)
        params_ref = config.model_params(config.j_list[-1], cutoffs[config.j_list[-1]])
        points, skipped = coherent.surface_sample(eps0, jz_values, params_ref)

        # IPR cube point-by-point, j outermost: each parity block is
        # solved (or loaded) once, applied to the whole grid in a single
        # matrix product, then dropped, since holding more than one large
        # eigenvector matrix does not fit in memory at the larger cutoffs
        n_pts = len(points)
        ipr_cube = np.empty((len(config.j_list), q_grid.size, n_pts))
        norms = np.empty((len(config.j_list), n_pts))
        for jdx, j in enumerate(config.j_list):
            params = config.model_params(j, cutoffs[j])
            cols = []
            for pt in points:
                x = coherent.solve_xplus(eps0, pt.phi, pt.jz, params)
                cpt = coherent.PhaseSpacePoint(x=x, p=0.0, phi=pt.phi, jz=pt.jz)
                cols.append(coherent.basis_coeffs(cpt, params)[0])
            amps = np.stack(cols, axis=1)
            del cols
            weights = np.empty((params.dim_full, n_pts))
            row = 0
            for parity in (+1, -1):
                _materialize_block(store, params, parity)
                idx = model.block_indices(params, parity)
                spec = store.load(params, parity)
                w = spec.eigenvectors.T @ amps[idx]
                del spec
                weights[row:row + idx.size] = np.abs(w) ** 2
                row += idx.size
                del w
            del amps
            norms[jdx] = weights.sum(axis=0)
            for pdx in range(n_pts):
                ipr_cube[jdx, :, pdx] = multifractal.ipr_values(
                    weights[:, pdx], q_grid)
            del weights

        rows = []
        js = np.array(config.j_list, dtype=float)
        for pdx, pt in enumerate(points):
            conv = norms[:, pdx] >= 1.0 - config.tail_budget
            series = multifractal.IPRSeries(
                q_grid=q_grid,
                j_values=js,
                ipr=ipr_cube[:, :, pdx].T.copy(),
                converged=np.broadcast_to(conv, (q_grid.size, js.size)).copy(),
            )
            base = [pt.jz, pt.x]
            try:
                curve = multifractal.mass_exponents(
                    series, config.j_exclude_below, config.eps_curvature
                )
            except multifractal.InsufficientDataError:
                rows.append(base + [0, "", "", "", "", "", "", "", ""])
                continue
            # D1 is the slope of the linear fit above q = 1; the parabolic
            # refits on both windows supply only the curvature that decides
            # whether a point is trustworthy at all
            lin = multifractal.fit_tau(curve, config.fit_range_high, "linear",
                                       config.eps_positive)
            hi = multifractal.fit_tau(curve, config.fit_range_high, "parabolic",
                                      config.eps_positive)
            lo = multifractal.fit_tau(curve, config.fit_range_low, "parabolic",
                                      config.eps_positive)
            label = multifractal.classify_dimension(lin.D1, hi.D2,
                                                    config.eps_positive)
            rows.append(base + [
                1, lin.D1, label,
                hi.D2, int(hi.D2 > config.eps_positive),
                lo.D2, int(lo.D2 > config.eps_positive),
                curve.trusted_range[0], curve.trusted_range[1],
            ])
        meta = (f"dickemf surface-scan config={config.digest()} eps0={eps0!r}"
                f" cutoffs={sorted(cutoffs.items())}"
                f" fit_high={config.fit_range_high} fit_low={config.fit_range_low}")
        path = out / f"scan_e{eps0:+.3f}.csv"
        _write_csv(path, meta,
                   ("jz", "x", "converged", "D1", "class",
                    "D2_high", "discard_high",
                    "D2_low", "discard_low", "q_lo", "q_hi"), rows)
        written.append(path)
        skip_path = out / f"scan_e{eps0:+.3f}_skipped.csv"
        _write_csv(skip_path, meta, ("jz", "reason"),
                   [(jz, reason) for jz, reason in skipped])
        written.append(skip_path)
    return written


def run_poincare(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    """Surface sections for seeds subsampled from each jz grid."""
    out = Path(out_dir)
    written = []
    params = config.model_params(config.j_list[-1], 1)  # classical: j, n_max unused
    for eps0 in config.energies:
        jz_values = np.linspace(-1.0, 1.0, config.jz_grid)
        points, _ = coherent.surface_sample(eps0, jz_values, params)
        seeds = points[:: config.seed_stride]
        section = classical.poincare_section(
            eps0, seeds, config.t_max, params, config.drift_tol
        )
        rows = [(pt.trajectory_id, pt.t, pt.phi, pt.jz) for pt in section]
        meta = (f"dickemf poincare config={config.digest()} eps0={eps0!r}"
                f" seeds={len(seeds)} t_max={config.t_max!r}")
        path = out / f"section_e{eps0:+.3f}.csv"
        _write_csv(path, meta, ("trajectory_id", "t", "phi", "jz"), rows)
        written.append(path)
    return written


def run_bounds_check(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    """Synthetic-oracle report: scaling slopes and closed-form agreement."""
    out = Path(out_dir)
    q_grid = config.q_grid()
    rnd, seq = [], []
    for idx, j in enumerate(config.oracle_j):
        rnd.append((j, multifractal.synth_random_gaussian(
            j, seed=config.seed + idx, nu0=config.nu0, sigma0=config.sigma0
        ).expansion))
        seq.append((j, multifractal.synth_sequence_state(
            j, omega_cl=config.omega_cl, nu0=config.nu0, sigma0=config.sigma0
        ).expansion))
    series_r = multifractal.ipr_series(rnd, q_grid)
    series_s = multifractal.ipr_series(seq, q_grid)
    curve_r = multifractal.mass_exponents(series_r, j_exclude_below=0.0)
    curve_s = multifractal.mass_exponents(series_s, j_exclude_below=0.0)
    fit_r = multifractal.fit_tau(curve_r, config.fit_range_high, "linear")
    fit_s = multifractal.fit_tau(curve_s, config.fit_range_high, "linear")

    j_chk = config.oracle_j[0]
    const = multifractal.synth_random_gaussian(
        j_chk, r_dist="constant", nu0=config.nu0, sigma0=config.sigma0
    )
    seq_chk = multifractal.synth_sequence_state(
        j_chk, omega_cl=config.omega_cl, nu0=config.nu0, sigma0=config.sigma0
    )
    agree_rows = []
    for q in (0.5, 1.0, 2.0, 4.0):
        e_r = abs(multifractal.ipr_q(const.expansion, q) / const.closed_form(q) - 1)
        e_s = abs(multifractal.ipr_q(seq_chk.expansion, q) / seq_chk.closed_form(q) - 1)
        agree_rows.append((q, e_r, e_s))

    meta = (f"dickemf bounds-check config={config.digest()}"
            f" slope_random={fit_r.D1!r} slope_sequence={fit_s.D1!r}"
            f" sigma_nubar={const.sigma * const.nubar!r}")
    tau_path = Path(out) / "oracle_tau.csv"
    _write_csv(tau_path, meta, ("q", "tau_random", "tau_sequence"),
               [(q, curve_r.tau[i], curve_s.tau[i]) for i, q in enumerate(q_grid)])
    agree_path = Path(out) / "oracle_closed_form.csv"
    _write_csv(agree_path, meta,
               ("q", "rel_err_random_const", "rel_err_sequence"), agree_rows)
    return [tau_path, agree_path]


def run_convergence_sweep(
    config: ExperimentConfig, cache_dir: Path, out_dir: Path
) -> List[Path]:
    """tau_q at two boson working cutoffs for each configured point.

    The alternate base cutoff defaults to ``n_max - n_ref_offset``.  Shell
    enforcement applies to both sides when enabled, so with it on the
    comparison reports how much (if at all) results move once the base
    cutoff stops binding; disable ``enforce_shell`` to compare the literal
    cutoffs.  Reports the per-q difference and the separation scale q_sep:
    the largest q whose relative difference still exceeds 1% (empty when
    the curves agree everywhere).
    """
    if not config.points:
        raise ConfigError("convergence sweep needs config.points")
    store = cache_mod.SpectrumCache(cache_dir)
    out = Path(out_dir)
    written = []
    for spec_pt in config.points:
        eps0 = float(spec_pt["eps0"])
        jz = float(spec_pt["jz"])
        phi = float(spec_pt.get("phi", 0.0))
        n_hi = config.base_cutoff(eps0)
        n_lo = config.n_max_alt if config.n_max_alt is not None \
            else n_hi - config.n_ref_offset
        if n_lo >= n_hi:
            raise ConfigError(f"alternate cutoff {n_lo} must be below {n_hi}")
        curves = {}
        for n_max in (n_lo, n_hi):
            cutoffs = config.ladder_cutoffs(eps0, base=n_max)
            exps = point_expansions(eps0, jz, phi, config, store, cutoffs)
            try:
                _, curves[n_max] = _analyze_expansions(exps, config)
            except multifractal.InsufficientDataError as exc:
                raise ConvergenceError(
                    f"cutoff {n_max}, point eps0={eps0}, jz={jz}: {exc}"
                ) from exc
        q = curves[n_hi].q_grid
        t_lo, t_hi = curves[n_lo].tau, curves[n_hi].tau
        denom = np.maximum(np.abs(t_hi), 1e-12)
        rel = np.abs(t_lo - t_hi) / denom
        sep = q[rel > 0.01]
        q_sep = float(sep.max()) if sep.size else ""
        tag = _point_tag(eps0, jz)
        meta = (f"dickemf convergence-sweep config={config.digest()} point={tag}"
                f" n_lo={n_lo} n_hi={n_hi} q_sep={q_sep!r}")
        path = out / f"sweep_{tag}_n{n_lo}v{n_hi}.csv"
        _write_csv(path, meta,
                   ("q", "tau_lo", "tau_hi", "abs_diff", "rel_diff"),
                   [(qi, t_lo[i], t_hi[i], abs(t_lo[i] - t_hi[i]), rel[i])
                    for i, qi in enumerate(q)])
        written.append(path)
    return written
