"""Content-addressed on-disk cache for diagonalized blocks.

File layout (all little-endian), magic "DCKS":

    offset  size      field
    0       4         magic b"DCKS"
    4       4         format version (u32), currently 1
    8       32        params digest (sha256 of params + parity)
    40      8         block dimension (u64)
    48      8         n_converged (u64)
    56      8*dim     eigenvalues, float64
    ...     8*dim^2   eigenvectors, float64, column-major

Files are named by the digest hex, so a cache hit is a pure function of the
physical parameters; writes go through a temp file + rename to stay atomic.
"""

from __future__ import annotations

import os
import struct
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .model import ModelParams, SpectralData, family_digest, params_digest

__all__ = ["CacheCorruptionError", "SpectrumCache", "write_spectrum",
           "read_spectrum", "read_values"]

MAGIC = b"DCKS"
VERSION = 1
_HEADER = struct.Struct("<4sI32sQQ")


class CacheCorruptionError(RuntimeError):
    """Cache file is unreadable, truncated, or fails its digest check."""


def write_spectrum(path: Path, spectra: SpectralData) -> None:
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, spectra.digest, spectra.dim,
                          spectra.n_converged)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(spectra.eigenvalues, dtype="<f8").tobytes())
        # column blocks: a whole-matrix tobytes() would double peak memory
        # on the gigabyte-sized blocks
        evecs = np.asarray(spectra.eigenvectors, dtype="<f8")
        for c0 in range(0, spectra.dim, 512):
            fh.write(evecs[:, c0:c0 + 512].tobytes(order="F"))
    os.replace(tmp, path)


def read_spectrum(path: Path, expected_digest: Optional[bytes] = None) -> SpectralData:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CacheCorruptionError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise CacheCorruptionError(f"{path}: truncated header")
    magic, version, digest, dim, n_conv = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CacheCorruptionError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CacheCorruptionError(f"{path}: unsupported version {version}")
    if expected_digest is not None and digest != expected_digest:
        raise CacheCorruptionError(f"{path}: digest mismatch")
    want = _HEADER.size + 8 * dim + 8 * dim * dim
    if len(raw) != want:
        raise CacheCorruptionError(
            f"{path}: size {len(raw)} != expected {want} for dim {dim}"
        )
    if not 0 <= n_conv <= dim:
        raise CacheCorruptionError(f"{path}: n_converged {n_conv} out of range")
    evals = np.frombuffer(raw, dtype="<f8", count=dim, offset=_HEADER.size)
    evecs = np.frombuffer(
        raw, dtype="<f8", count=dim * dim, offset=_HEADER.size + 8 * dim
    ).reshape((dim, dim), order="F")
    return SpectralData(
        eigenvalues=evals, eigenvectors=evecs, n_converged=int(n_conv), digest=digest
    )


def read_values(path: Path, expected_digest: Optional[bytes] = None) -> np.ndarray:
    """Eigenvalues only, without pulling the eigenvector matrix off disk."""
    path = Path(path)
    try:
        size = os.stat(path).st_size
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise CacheCorruptionError(f"{path}: truncated header")
            magic, version, digest, dim, n_conv = _HEADER.unpack(head)
            if magic != MAGIC:
                raise CacheCorruptionError(f"{path}: bad magic {magic!r}")
            if version != VERSION:
                raise CacheCorruptionError(f"{path}: unsupported version {version}")
            if expected_digest is not None and digest != expected_digest:
                raise CacheCorruptionError(f"{path}: digest mismatch")
            if size != _HEADER.size + 8 * dim + 8 * dim * dim:
                raise CacheCorruptionError(
                    f"{path}: size {size} != expected for dim {dim}"
                )
            strip = fh.read(8 * dim)
    except OSError as exc:
        raise CacheCorruptionError(f"cannot read {path}: {exc}") from exc
    if len(strip) != 8 * dim:
        raise CacheCorruptionError(f"{path}: truncated eigenvalues")
    return np.frombuffer(strip, dtype="<f8")


class SpectrumCache:
    """Digest-keyed spectrum store in one directory."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, params: ModelParams, parity: Optional[int]) -> Path:
        return self.directory / (params_digest(params, parity).hex() + ".dcks")

    def has(self, params: ModelParams, parity: Optional[int]) -> bool:
        return self.path_for(params, parity).exists()

    def load(self, params: ModelParams, parity: Optional[int]) -> SpectralData:
        spectra = read_spectrum(
            self.path_for(params, parity), params_digest(params, parity)
        )
        # the file format carries only the full digest; knowing the params
        # here lets the cutoff-independent identity be reattached
        return replace(spectra, family=family_digest(params, parity))

    def load_values(self, params: ModelParams, parity: Optional[int]) -> np.ndarray:
        return read_values(
            self.path_for(params, parity), params_digest(params, parity)
        )

    def store(self, spectra: SpectralData, params: ModelParams,
              parity: Optional[int]) -> Path:
        if spectra.digest != params_digest(params, parity):
            raise ValueError("spectra digest does not match params")
        path = self.path_for(params, parity)
        write_spectrum(path, spectra)
        return path

    def get_or_compute(
        self,
        params: ModelParams,
        parity: Optional[int],
        compute: Callable[[], SpectralData],
    ) -> SpectralData:
        if self.has(params, parity):
            return self.load(params, parity)
        spectra = compute()
        self.store(spectra, params, parity)
        return spectra
