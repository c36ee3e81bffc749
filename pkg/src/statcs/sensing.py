"""Sensing-matrix families and orthonormal bases.

All matrices are dense; experiment sizes stay in the low hundreds so
structured fast paths are not worth their complexity. Generators are pure
functions of (rows, cols, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SeededRng

MATRIX_KINDS = ("gaussian", "bernoulli", "subsample", "composed")
BASIS_KINDS = ("identity", "dct")

ORTHONORMALITY_TOL = 1e-10


def _locked(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SensingMatrix:
    """Dense M x N measurement operator with a provenance tag."""

    rows: int
    cols: int
    entries: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        m, n = int(self.rows), int(self.cols)
        if not 1 <= m <= n:
            raise ValueError(f"need 1 <= rows <= cols, got rows={m}, cols={n}")
        if self.kind not in MATRIX_KINDS:
            raise ValueError(f"unknown matrix kind {self.kind!r}")
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (m, n):
            raise ValueError(f"entries must have shape ({m}, {n}), got {entries.shape}")
        object.__setattr__(self, "rows", m)
        object.__setattr__(self, "cols", n)
        object.__setattr__(self, "entries", _locked(entries))

    def to_json_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "kind": self.kind,
            "entries": [float(v) for v in self.entries.reshape(-1)],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SensingMatrix":
        m, n = int(data["rows"]), int(data["cols"])
        return cls(
            rows=m,
            cols=n,
            entries=np.asarray(data["entries"], dtype=float).reshape(m, n),
            kind=str(data["kind"]),
        )


@dataclass(frozen=True)
class Basis:
    """Orthonormal N x N change of basis."""

    dim: int
    entries: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        n = int(self.dim)
        if n < 1:
            raise ValueError("dim must be positive")
        if self.kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (n, n):
            raise ValueError(f"entries must have shape ({n}, {n}), got {entries.shape}")
        dev = np.max(np.abs(entries.T @ entries - np.eye(n)))
        if dev > ORTHONORMALITY_TOL:
            raise ValueError(f"basis not orthonormal (max deviation {dev:.3e})")
        object.__setattr__(self, "dim", n)
        object.__setattr__(self, "entries", _locked(entries))

    def to_json_dict(self) -> dict:
        return {
            "rows": self.dim,
            "cols": self.dim,
            "kind": self.kind,
            "entries": [float(v) for v in self.entries.reshape(-1)],
        }


def gaussian_matrix(m: int, n: int, rng: SeededRng) -> SensingMatrix:
    """Entries iid N(0, 1/M), so E||Phi x||^2 = ||x||^2."""
    _check_dims(m, n)
    entries = rng.generator().standard_normal((m, n)) / math.sqrt(m)
    return SensingMatrix(rows=m, cols=n, entries=entries, kind="gaussian")


def bernoulli_matrix(m: int, n: int, rng: SeededRng) -> SensingMatrix:
    """Entries uniform on {+1/sqrt(M), -1/sqrt(M)}."""
    _check_dims(m, n)
    signs = rng.generator().integers(0, 2, size=(m, n)) * 2 - 1
    return SensingMatrix(
        rows=m, cols=n, entries=signs / math.sqrt(m), kind="bernoulli"
    )


def subsampling_matrix(m: int, n: int, rng: SeededRng) -> SensingMatrix:
    """Each row selects one coordinate; selected columns are distinct."""
    _check_dims(m, n)
    columns = rng.generator().choice(n, size=m, replace=False)
    entries = np.zeros((m, n))
    entries[np.arange(m), columns] = 1.0
    return SensingMatrix(rows=m, cols=n, entries=entries, kind="subsample")


def subsample_columns(phi: SensingMatrix) -> np.ndarray:
    """Column index selected by each row of a subsampling matrix."""
    if phi.kind != "subsample":
        raise ValueError("subsample_columns requires a subsampling matrix")
    return np.argmax(phi.entries, axis=1)


def dct_basis(n: int) -> Basis:
    """Orthonormal DCT-II matrix; row j, sample t:
    sqrt(2/N) cos(pi (2t+1) j / (2N)), with row 0 constant 1/sqrt(N)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.arange(n)
    j = np.arange(n)[:, None]
    entries = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * t + 1) * j / (2 * n))
    entries[0, :] = 1.0 / np.sqrt(n)
    return Basis(dim=n, entries=entries, kind="dct")


def dct2_basis(patch_side: int) -> Basis:
    """Separable 2-D DCT over row-major patch_side^2 vectors.

    Columns are the 2-D atoms ordered by total frequency (then row
    frequency), so column 0 is the flat patch and applying the matrix to a
    coefficient vector synthesizes pixels. This is the low-coherence
    companion of pixel subsampling on square patches.
    """
    if patch_side < 1:
        raise ValueError("patch_side must be >= 1")
    d1 = dct_basis(patch_side).entries
    pairs = sorted(
        ((u, v) for u in range(patch_side) for v in range(patch_side)),
        key=lambda p: (p[0] + p[1], p[0]),
    )
    cols = [np.outer(d1[u], d1[v]).reshape(-1) for u, v in pairs]
    return Basis(dim=patch_side * patch_side, entries=np.column_stack(cols), kind="dct")


def identity_basis(n: int) -> Basis:
    return Basis(dim=n, entries=np.eye(n), kind="identity")


def compose(phi: SensingMatrix, psi: Basis) -> SensingMatrix:
    """Sensing through a basis change: entries Phi @ Psi, tagged Composed."""
    if phi.cols != psi.dim:
        raise ValueError(
            f"dimension mismatch: phi has {phi.cols} cols, basis dim is {psi.dim}"
        )
    return SensingMatrix(
        rows=phi.rows, cols=phi.cols, entries=phi.entries @ psi.entries, kind="composed"
    )


def sense(phi: SensingMatrix, x: np.ndarray) -> np.ndarray:
    """Measure y = Phi x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (phi.cols,):
        raise ValueError(f"signal must have shape ({phi.cols},), got {x.shape}")
    return phi.entries @ x


def _check_dims(m: int, n: int) -> None:
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= M <= N, got M={m}, N={n}")
