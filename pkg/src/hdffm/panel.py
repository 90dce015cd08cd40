"""Mixed scalar/functional panels stored as basis coefficients.

Every series lives in its own Hilbert space, described by a basis dimension
and a Gram matrix of basis inner products.  All panel-level quantities
(inner products, the T x T panel Gram matrix, centering, subpanels) are
computed in coefficient space, so scalar series, orthonormal functional
bases and non-orthonormal bases (e.g. B-splines) are handled uniformly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SCALAR = "scalar"
FUNCTIONAL = "functional"

_GRAM_SYM_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpaceSpec:
    """Description of one series' Hilbert space.

    Parameters
    ----------
    kind : str
        ``"scalar"`` or ``"functional"``.
    dim : int
        Basis dimension (1 for scalar series).
    gram : ndarray of shape (dim, dim)
        Symmetric positive-definite matrix of basis inner products.
        Identity for scalar series and orthonormal functional bases.
    """

    kind: str
    dim: int
    gram: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in (SCALAR, FUNCTIONAL):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        gram = np.asarray(self.gram, dtype=float)
        if gram.shape != (self.dim, self.dim):
            raise ValueError(f"gram must be {self.dim}x{self.dim}, got {gram.shape}")
        scale = max(1.0, float(np.abs(gram).max()))
        if np.abs(gram - gram.T).max() > _GRAM_SYM_RTOL * scale:
            raise ValueError("gram matrix is not symmetric")
        gram = 0.5 * (gram + gram.T)
        try:
            chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            raise ValueError("gram matrix is not positive definite") from None
        if self.kind == SCALAR:
            if self.dim != 1:
                raise ValueError("scalar series must have dim=1")
            if abs(gram[0, 0] - 1.0) > _GRAM_SYM_RTOL:
                raise ValueError("scalar series must have gram [[1]]")
        gram.flags.writeable = False
        chol.flags.writeable = False
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "chol", chol)

    @property
    def is_identity_gram(self) -> bool:
        return bool(np.array_equal(self.gram, np.eye(self.dim)))

    def matches(self, other: "SpaceSpec") -> bool:
        """Structural equality: same kind, dimension, and Gram matrix."""
        return (
            self.kind == other.kind
            and self.dim == other.dim
            and np.allclose(self.gram, other.gram, rtol=1e-12, atol=1e-12)
        )

    def whiten(self, coeffs: np.ndarray) -> np.ndarray:
        """Map coefficient rows to coordinates in which <a,b> is Euclidean."""
        if self.is_identity_gram:
            return coeffs
        return coeffs @ self.chol

    def unwhiten(self, white: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`whiten` (rows)."""
        if self.is_identity_gram:
            return white
        return np.linalg.solve(self.chol.T, white.T).T


def scalar_space() -> SpaceSpec:
    """The space of a scalar time series."""
    return SpaceSpec(SCALAR, 1, np.eye(1))


def functional_space(dim: int, gram: np.ndarray | None = None) -> SpaceSpec:
    """A functional series represented in a ``dim``-dimensional basis."""
    if gram is None:
        gram = np.eye(dim)
    return SpaceSpec(FUNCTIONAL, dim, gram)


@dataclass(frozen=True, eq=False)
class MeanVector:
    """Per-series sample means, one coefficient vector per series."""

    means: tuple

    def __post_init__(self):
        object.__setattr__(self, "means", tuple(np.asarray(m, dtype=float) for m in self.means))

    def __len__(self):
        return len(self.means)

    def __getitem__(self, i):
        return self.means[i]


class Panel:
    """An N x T panel of coefficient vectors plus the per-series spaces.

    ``coeffs[i]`` is a ``(T, dim_i)`` array whose row ``t`` holds the
    coefficients of series ``i`` at time ``t``.  Panels are immutable;
    all operations return new panels.
    """

    def __init__(self, spaces: Sequence[SpaceSpec], coeffs: Sequence[np.ndarray]):
        spaces = tuple(spaces)
        if len(spaces) < 1:
            raise ValueError("panel needs at least one series")
        if len(coeffs) != len(spaces):
            raise ValueError("coeffs and spaces length mismatch")
        arrays = []
        T = None
        for i, (spec, block) in enumerate(zip(spaces, coeffs)):
            block = np.ascontiguousarray(block, dtype=float)
            if block.ndim == 1:
                block = block[:, None]
            if block.ndim != 2 or block.shape[1] != spec.dim:
                raise ValueError(
                    f"series {i}: coefficient block has shape {block.shape}, "
                    f"expected (T, {spec.dim})"
                )
            if T is None:
                T = block.shape[0]
            elif block.shape[0] != T:
                raise ValueError(f"series {i}: time length {block.shape[0]} != {T}")
            block.flags.writeable = False
            arrays.append(block)
        if T < 2:
            raise ValueError("panel needs T >= 2")
        self.spaces = spaces
        self.coeffs = tuple(arrays)
        self.N = len(spaces)
        self.T = T
        self._stacked = None

    @property
    def dims(self) -> tuple:
        return tuple(s.dim for s in self.spaces)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    def block_slices(self) -> list:
        """Slices of each series' block in the stacked coefficient layout."""
        out, off = [], 0
        for d in self.dims:
            out.append(slice(off, off + d))
            off += d
        return out

    def stacked_white(self) -> np.ndarray:
        """(total_dim, T) matrix of whitened coefficients; columns are x_t.

        In these coordinates the H_N inner product of two time slices is
        the Euclidean inner product of the corresponding columns.
        """
        if self._stacked is None:
            cols = [s.whiten(c).T for s, c in zip(self.spaces, self.coeffs)]
            stacked = np.concatenate(cols, axis=0)
            stacked.flags.writeable = False
            self._stacked = stacked
        return self._stacked

    def stacked_coeffs(self) -> np.ndarray:
        """(total_dim, T) matrix of raw coefficients; columns are x_t."""
        return np.concatenate([c.T for c in self.coeffs], axis=0)

    def _check_time(self, t: int) -> int:
        if not 0 <= t < self.T:
            raise IndexError(f"time index {t} out of range [0, {self.T})")
        return t

    def __repr__(self):
        return f"Panel(N={self.N}, T={self.T}, dims={self.dims})"


def spaces_match(a: Sequence[SpaceSpec], b: Sequence[SpaceSpec]) -> bool:
    """Structural equality of two space sequences."""
    return len(a) == len(b) and all(x.matches(y) for x, y in zip(a, b))


def panel_from_stacked(spaces: Sequence[SpaceSpec], stacked: np.ndarray) -> Panel:
    """Rebuild a panel from a (total_dim, T) raw-coefficient matrix."""
    blocks, off = [], 0
    for spec in spaces:
        blocks.append(stacked[off : off + spec.dim].T)
        off += spec.dim
    return Panel(spaces, blocks)


def inner_product(panel: Panel, s: int, t: int) -> float:
    """H_N inner product <x_s, x_t> = sum_i a_is' G_i a_it (0-based times)."""
    s = panel._check_time(s)
    t = panel._check_time(t)
    total = 0.0
    for spec, block in zip(panel.spaces, panel.coeffs):
        total += float(block[s] @ spec.gram @ block[t])
    return total


def gram_matrix(panel: Panel) -> np.ndarray:
    """T x T panel Gram matrix with entries <x_s, x_t> / N."""
    Z = panel.stacked_white()
    F = (Z.T @ Z) / panel.N
    return 0.5 * (F + F.T)


def center(panel: Panel) -> tuple:
    """Subtract each series' time-average coefficient vector.

    Returns the centered panel and the removed means.
    """
    means = []
    blocks = []
    for block in panel.coeffs:
        mu = block.mean(axis=0)
        means.append(mu)
        blocks.append(block - mu)
    return Panel(panel.spaces, blocks), MeanVector(tuple(means))


def add_means(panel: Panel, means: MeanVector) -> Panel:
    """Add per-series constant vectors back onto a panel."""
    if len(means) != panel.N:
        raise ValueError("means length does not match panel")
    return Panel(panel.spaces, [c + m for c, m in zip(panel.coeffs, means.means)])


def subpanel(panel: Panel, n: int, t_len: int, perm: Sequence[int]) -> Panel:
    """First ``n`` series under ``perm`` and first ``t_len`` time points."""
    if not 1 <= n <= panel.N:
        raise ValueError(f"n={n} out of range [1, {panel.N}]")
    if not 2 <= t_len <= panel.T:
        raise ValueError(f"t_len={t_len} out of range [2, {panel.T}]")
    perm = list(perm)
    if sorted(perm) != list(range(panel.N)):
        raise ValueError("perm is not a permutation of 0..N-1")
    take = perm[:n]
    return Panel(
        [panel.spaces[i] for i in take],
        [panel.coeffs[i][:t_len] for i in take],
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def space_to_dict(spec: SpaceSpec) -> dict:
    out = {"kind": spec.kind, "dim": spec.dim}
    if not spec.is_identity_gram:
        out["gram"] = spec.gram.tolist()
    return out


def space_from_dict(d: dict) -> SpaceSpec:
    kind = d["kind"]
    dim = int(d["dim"])
    gram = np.asarray(d["gram"], dtype=float) if "gram" in d else np.eye(dim)
    return SpaceSpec(kind, dim, gram)


def panel_to_dict(panel: Panel, manifest: dict | None = None) -> dict:
    out = {
        "N": panel.N,
        "T": panel.T,
        "spaces": [space_to_dict(s) for s in panel.spaces],
        "coeffs": [c.tolist() for c in panel.coeffs],
    }
    if manifest is not None:
        out["manifest"] = manifest
    return out


def panel_from_dict(d: dict) -> Panel:
    spaces = [space_from_dict(s) for s in d["spaces"]]
    panel = Panel(spaces, [np.asarray(c, dtype=float) for c in d["coeffs"]])
    if panel.N != d["N"] or panel.T != d["T"]:
        raise ValueError("panel header does not match coefficient arrays")
    return panel


def save_panel(panel: Panel, path, manifest: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(panel_to_dict(panel, manifest), fh)


def load_panel(path) -> Panel:
    with open(path) as fh:
        return panel_from_dict(json.load(fh))


def load_scalar_csv(path) -> Panel:
    """Read an all-scalar panel from CSV laid out as N rows x T columns."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            rows.append([float(v) for v in row])
    if not rows:
        raise ValueError("empty CSV panel")
    T = len(rows[0])
    if any(len(r) != T for r in rows):
        raise ValueError("ragged CSV panel")
    return Panel(
        [scalar_space() for _ in rows],
        [np.asarray(r, dtype=float)[:, None] for r in rows],
    )
