"""Least-squares estimation of factors, loadings, and common components.

The estimator eigendecomposes the T x T panel Gram matrix F (entries
<x_s, x_t>/N).  With eigenvalues lambda_tilde_1 >= lambda_tilde_2 >= ...
and f_hat_l the eigenvectors rescaled to norm sqrt(T):

* ``lambda_hat_l = lambda_tilde_l / T`` (the eigenvalues of F/T, which
  stay O(1) as N and T grow),
* ``e_hat_l = lambda_hat_l**-0.5 * T**-1 * sum_t (f_hat_l)_t x_t``, which
  has H_N-norm exactly sqrt(N),
* ``b_tilde_l = lambda_hat_l**0.5 * e_hat_l``.

The rank-k fit ``b_tilde @ factors`` is the k-term truncated singular value
decomposition of the panel operator, so the goodness of fit V(k) is
available in closed form from the eigenvalues alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .panel import (
    Panel,
    SpaceSpec,
    gram_matrix,
    panel_from_stacked,
    space_from_dict,
    space_to_dict,
    spaces_match,
)

RANK_EPS = 1e-12


class RankDeficientError(ValueError):
    """Requested more factors than the panel's numerical rank supports."""

    def __init__(self, level: int):
        self.level = level
        super().__init__(f"eigenvalue {level} of the panel Gram is numerically zero")


def symmetric_eigen(M: np.ndarray, k: int) -> tuple:
    """Leading ``k`` eigenpairs of a symmetric matrix, deterministically.

    Eigenvalues are returned in descending order; each eigenvector is
    normalized and its first coordinate of magnitude > 1e-12 is made
    positive so repeated calls (and parallel callers) agree on signs.

    Returns
    -------
    (values, vectors) : ndarray of shape (k,), ndarray of shape (T, k)
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > 1e-10 * scale:
        raise ValueError("M is not symmetric")
    if not 1 <= k <= M.shape[0]:
        raise ValueError(f"k={k} out of range [1, {M.shape[0]}]")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    vals = vals[::-1][:k]
    vecs = vecs[:, ::-1][:, :k]
    for l in range(k):
        v = vecs[:, l]
        nz = np.nonzero(np.abs(v) > 1e-12)[0]
        if nz.size and v[nz[0]] < 0:
            vecs[:, l] = -v
    return vals.copy(), vecs.copy()


@dataclass(frozen=True, eq=False)
class FactorFit:
    """Result of fitting ``k`` factors to a panel.

    Attributes
    ----------
    k : int
        Number of fitted factors.
    lambda_hat : ndarray of shape (k,)
        Rescaled eigenvalues, nonincreasing.
    factors : ndarray of shape (k, T)
        Estimated factor values; rows have norm sqrt(T) and are orthogonal.
    e_hat : ndarray of shape (total_dim, k)
        Normalized loading columns in stacked coefficient form
        (H_N-norm sqrt(N) each).
    b_tilde : ndarray of shape (total_dim, k)
        Scaled loading columns ``lambda_hat**0.5 * e_hat``.
    trace_F : float
        Trace of the panel Gram matrix.
    spaces : tuple of SpaceSpec
        Per-series spaces of the fitted panel.
    """

    k: int
    lambda_hat: np.ndarray
    factors: np.ndarray
    e_hat: np.ndarray
    b_tilde: np.ndarray
    trace_F: float
    spaces: tuple

    @property
    def T(self) -> int:
        return self.factors.shape[1]

    def loading_block(self, l: int, i: int) -> np.ndarray:
        """Coefficient vector of series ``i`` in normalized loading ``l``."""
        off = sum(s.dim for s in self.spaces[:i])
        return self.e_hat[off : off + self.spaces[i].dim, l]


def fit_factors(panel: Panel, k: int) -> FactorFit:
    """Fit ``k`` factors by least squares on the panel Gram matrix.

    Raises
    ------
    RankDeficientError
        If some requested eigenvalue is below ``1e-12 * trace(F)``,
        i.e. the panel has numerical rank < k.
    """
    max_k = min(panel.total_dim, panel.T)
    if not 0 <= k <= max_k:
        raise ValueError(f"k={k} out of range [0, {max_k}]")
    F = gram_matrix(panel)
    trace_F = float(np.trace(F))
    D = panel.total_dim
    if k == 0:
        return FactorFit(
            k=0,
            lambda_hat=np.zeros(0),
            factors=np.zeros((0, panel.T)),
            e_hat=np.zeros((D, 0)),
            b_tilde=np.zeros((D, 0)),
            trace_F=trace_F,
            spaces=panel.spaces,
        )
    lam_tilde, vecs = symmetric_eigen(F, k)
    for l in range(k):
        if lam_tilde[l] <= RANK_EPS * trace_F:
            raise RankDeficientError(l + 1)
    T = panel.T
    factors = np.sqrt(T) * vecs.T
    lambda_hat = lam_tilde / T
    Z = panel.stacked_white()
    # e_hat_l = lambda_hat_l**-0.5 / T * sum_t (f_hat_l)_t x_t
    e_white = (Z @ factors.T) / (T * np.sqrt(lambda_hat))
    e_hat = _unwhiten_columns(panel.spaces, e_white)
    b_tilde = e_hat * np.sqrt(lambda_hat)
    return FactorFit(
        k=k,
        lambda_hat=lambda_hat,
        factors=factors,
        e_hat=e_hat,
        b_tilde=b_tilde,
        trace_F=trace_F,
        spaces=panel.spaces,
    )


def _unwhiten_columns(spaces: Sequence[SpaceSpec], white: np.ndarray) -> np.ndarray:
    out = np.empty_like(white)
    off = 0
    for spec in spaces:
        blk = white[off : off + spec.dim]
        out[off : off + spec.dim] = spec.unwhiten(blk.T).T
        off += spec.dim
    return out


def common_component(fit: FactorFit) -> Panel:
    """Panel of fitted common components ``chi_hat = b_tilde @ factors``."""
    stacked = fit.b_tilde @ fit.factors
    return panel_from_stacked(fit.spaces, stacked)


def idiosyncratic_residual(panel: Panel, fit: FactorFit) -> Panel:
    """Panel minus its fitted common component, entrywise in coefficients."""
    if fit.T != panel.T or not spaces_match(fit.spaces, panel.spaces):
        raise ValueError("fit does not match panel shape")
    chi = fit.b_tilde @ fit.factors
    stacked = panel.stacked_coeffs() - chi
    return panel_from_stacked(panel.spaces, stacked)


def gram_eigenvalues(panel: Panel) -> tuple:
    """All eigenvalues of the panel Gram (descending, clipped at 0) and its trace."""
    F = gram_matrix(panel)
    vals = np.linalg.eigvalsh(F)[::-1]
    return np.clip(vals, 0.0, None), float(np.trace(F))


def v_profile(eigenvalues: np.ndarray, trace: float, T: int, k_max: int) -> np.ndarray:
    """V(k) for k = 0..k_max from Gram eigenvalues: (trace - sum_{l<=k} lam_l)/T."""
    if k_max > eigenvalues.size:
        raise ValueError(f"k_max={k_max} exceeds number of eigenvalues {eigenvalues.size}")
    csum = np.concatenate([[0.0], np.cumsum(eigenvalues[:k_max])])
    return np.clip(trace - csum, 0.0, None) / T


def goodness_of_fit(panel: Panel, k: int) -> float:
    """Minimized average squared residual V(k) after regressing on k factors."""
    max_k = min(panel.total_dim, panel.T)
    if not 0 <= k <= max_k:
        raise ValueError(f"k={k} out of range [0, {max_k}]")
    vals, trace = gram_eigenvalues(panel)
    return float(v_profile(vals, trace, panel.T, k)[k])


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def fit_to_dict(fit: FactorFit, manifest: dict | None = None) -> dict:
    e_blocks = []
    slices, off = [], 0
    for spec in fit.spaces:
        slices.append(slice(off, off + spec.dim))
        off += spec.dim
    for l in range(fit.k):
        e_blocks.append({str(i): fit.e_hat[sl, l].tolist() for i, sl in enumerate(slices)})
    out = {
        "k": fit.k,
        "lambda_hat": fit.lambda_hat.tolist(),
        "factors": fit.factors.tolist(),
        "e_hat": e_blocks,
        "trace_F": fit.trace_F,
        "spaces": [space_to_dict(s) for s in fit.spaces],
    }
    if manifest is not None:
        out["manifest"] = manifest
    return out


def fit_from_dict(d: dict) -> FactorFit:
    spaces = tuple(space_from_dict(s) for s in d["spaces"])
    k = int(d["k"])
    lambda_hat = np.asarray(d["lambda_hat"], dtype=float)
    factors = np.asarray(d["factors"], dtype=float).reshape(k, -1)
    D = sum(s.dim for s in spaces)
    e_hat = np.zeros((D, k))
    for l, blocks in enumerate(d["e_hat"]):
        off = 0
        for i, spec in enumerate(spaces):
            e_hat[off : off + spec.dim, l] = np.asarray(blocks[str(i)], dtype=float)
            off += spec.dim
    return FactorFit(
        k=k,
        lambda_hat=lambda_hat,
        factors=factors,
        e_hat=e_hat,
        b_tilde=e_hat * np.sqrt(lambda_hat),
        trace_F=float(d["trace_F"]),
        spaces=spaces,
    )


def save_fit(fit: FactorFit, path, manifest: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(fit_to_dict(fit, manifest), fh)


def load_fit(path) -> FactorFit:
    with open(path) as fh:
        return fit_from_dict(json.load(fh))
