"""h-step-ahead forecasting of functional panels.

``tnh_forecast`` runs the factor pipeline: select the number of factors,
center, split the panel into common and idiosyncratic parts, forecast the
factor series and the idiosyncratic coefficient series with AR models
chosen by BIC, and recompose.  ``cf_forecast`` is the componentwise
baseline: per-series functional PCA scores forecast independently,
ignoring all cross-sectional structure.

The AR family is AR(p) with intercept, fitted by conditional least squares
on a common effective sample so BIC values are comparable across orders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimate import RankDeficientError, fit_factors, idiosyncratic_residual
from .panel import Panel, center
from .select import IC2A, AbcConfig, SelectionTrace, abc_select_r

_RADIUS_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ArModel:
    """AR(p) model with intercept: y_t = intercept + sum_j coef_j y_{t-j} + eps."""

    order: int
    intercept: float
    coefficients: np.ndarray
    innovation_variance: float

    def __post_init__(self):
        coefs = np.asarray(self.coefficients, dtype=float)
        if coefs.shape != (self.order,):
            raise ValueError(f"expected {self.order} coefficients, got shape {coefs.shape}")
        if self.innovation_variance < 0:
            raise ValueError("innovation variance must be >= 0")
        if companion_radius(coefs) >= 1.0 + _RADIUS_TOL:
            raise ValueError("companion-matrix spectral radius exceeds 1 + 1e-8")
        object.__setattr__(self, "coefficients", coefs)


def companion_radius(coefs: np.ndarray) -> float:
    """Spectral radius of the companion matrix of an AR coefficient vector."""
    p = len(coefs)
    if p == 0:
        return 0.0
    comp = np.zeros((p, p))
    comp[0] = coefs
    if p > 1:
        comp[1:, :-1] = np.eye(p - 1)
    return float(np.abs(np.linalg.eigvals(comp)).max())


def fit_ar_bic(series: np.ndarray, p_max: int = 5) -> ArModel:
    """Fit AR(p) with intercept for p = 0..p_max and keep the BIC minimizer.

    All orders are fitted by conditional least squares on the common
    effective sample of the last ``T - p_max`` observations, with
    BIC = T_eff * log(RSS / T_eff) + (p + 2) * log(T_eff).  Ties go to the
    smaller order.  Candidates whose companion matrix is explosive beyond
    the 1e-8 tolerance are discarded; the intercept-only model always
    remains available, so an exactly constant series yields AR(0) with zero
    innovation variance.
    """
    y = np.asarray(series, dtype=float).ravel()
    T = y.size
    if T < 3 * (p_max + 2):
        raise ValueError(f"series of length {T} too short for p_max={p_max}")
    t_eff = T - p_max
    target = y[p_max:]
    # below this, residual sums of squares are pure roundoff (exact fits)
    rss_floor = 1e-24 * t_eff * max(float(np.mean(target**2)), 1e-30)
    best = None
    for p in range(p_max + 1):
        X = np.ones((t_eff, p + 1))
        for j in range(1, p + 1):
            X[:, j] = y[p_max - j : T - j]
        beta, _, _, _ = np.linalg.lstsq(X, target, rcond=None)
        resid = target - X @ beta
        rss = float(resid @ resid)
        if rss <= rss_floor:
            bic, sigma2 = -np.inf, 0.0
        else:
            bic, sigma2 = t_eff * np.log(rss / t_eff) + (p + 2) * np.log(t_eff), rss / t_eff
        coefs = beta[1:]
        if companion_radius(coefs) >= 1.0 + _RADIUS_TOL:
            continue
        if best is None or bic < best[0]:
            best = (bic, p, float(beta[0]), coefs, sigma2)
    _, p, intercept, coefs, sigma2 = best
    return ArModel(order=p, intercept=intercept, coefficients=coefs, innovation_variance=sigma2)


def ar_forecast(model: ArModel, history: np.ndarray, h: int) -> np.ndarray:
    """Iterated plug-in forecasts for steps 1..h."""
    history = np.asarray(history, dtype=float).ravel()
    if history.size < model.order:
        raise ValueError(f"need at least {model.order} past values, got {history.size}")
    if h < 1:
        raise ValueError("h must be >= 1")
    buf = list(history[len(history) - model.order :]) if model.order else []
    out = np.empty(h)
    for step in range(h):
        val = model.intercept
        for j in range(model.order):
            val += model.coefficients[j] * buf[-1 - j]
        out[step] = val
        if model.order:
            buf.append(val)
    return out


@dataclass(frozen=True)
class ForecastConfig:
    """Settings of the factor forecasting pipeline."""

    horizon: int
    p_max: int = 5
    penalty_kind: str = IC2A
    fixed_r: int | None = None
    abc: AbcConfig | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.p_max < 0:
            raise ValueError("p_max must be >= 0")
        if self.fixed_r is not None and self.fixed_r < 1:
            raise ValueError("fixed_r must be >= 1")


@dataclass(frozen=True, eq=False)
class ForecastResult:
    """Per-series forecasts (h, dim_i) plus how the factor count was chosen."""

    steps: tuple  # one (h, dim_i) array per series
    r: int
    trace: SelectionTrace | None

    def at_step(self, step: int) -> list:
        """Coefficient vectors of all series at forecast step (1-based)."""
        return [s[step - 1] for s in self.steps]


def tnh_forecast(panel: Panel, cfg: ForecastConfig) -> ForecastResult:
    """Factor-model forecast of every series, h steps ahead.

    Pipeline: select the factor count (tuned criterion unless ``fixed_r``
    is set), center, fit factors on the centered panel, forecast each
    factor series and each idiosyncratic coefficient series by AR-BIC,
    then recompose mean + loadings @ factor forecasts + idiosyncratic
    forecasts in coefficient form.
    """
    if 3 * (cfg.p_max + 2) > panel.T:
        raise ValueError(f"p_max={cfg.p_max} too large for T={panel.T}")
    trace = None
    if cfg.fixed_r is not None:
        r = cfg.fixed_r
    else:
        abc = cfg.abc or AbcConfig.for_panel(panel.N, panel.T, rng_seed=cfg.rng_seed)
        r, trace = abc_select_r(panel, abc, cfg.penalty_kind)

    centered, means = center(panel)
    try:
        fit = fit_factors(centered, r)
    except RankDeficientError as exc:
        # degenerate training window (e.g. constant panel): fit what is there
        r = exc.level - 1
        fit = fit_factors(centered, r)
    xi = idiosyncratic_residual(centered, fit)

    h = cfg.horizon
    u_fc = np.empty((r, h))
    for l in range(r):
        model = fit_ar_bic(fit.factors[l], cfg.p_max)
        u_fc[l] = ar_forecast(model, fit.factors[l], h)

    slices = panel.block_slices()
    steps = []
    for i in range(panel.N):
        d = panel.spaces[i].dim
        common_fc = (fit.b_tilde[slices[i]] @ u_fc).T  # (h, d)
        xi_block = xi.coeffs[i]  # (T, d)
        xi_fc = np.empty((h, d))
        for j in range(d):
            model = fit_ar_bic(xi_block[:, j], cfg.p_max)
            xi_fc[:, j] = ar_forecast(model, xi_block[:, j], h)
        steps.append(means[i][None, :] + common_fc + xi_fc)
    return ForecastResult(steps=tuple(steps), r=r, trace=trace)


def cf_forecast(panel: Panel, h: int, n_components: int, p_max: int = 5) -> ForecastResult:
    """Componentwise baseline: per-series PCA scores forecast independently.

    Each series is centered, its sample coefficient covariance is
    eigendecomposed in the series' own Hilbert geometry, the leading
    ``n_components`` score series are forecast by AR-BIC, and the curve
    forecast is recomposed from the score forecasts.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    if 3 * (p_max + 2) > panel.T:
        raise ValueError(f"p_max={p_max} too large for T={panel.T}")
    steps = []
    for spec, block in zip(panel.spaces, panel.coeffs):
        if n_components > spec.dim:
            raise ValueError(f"n_components={n_components} exceeds series dimension {spec.dim}")
        mu = block.mean(axis=0)
        zw = spec.whiten(block - mu)  # (T, d), Euclidean geometry
        cov = zw.T @ zw / panel.T
        vals, vecs = np.linalg.eigh(cov)
        vecs = vecs[:, ::-1][:, :n_components]
        scores = zw @ vecs  # (T, m)
        z_fc = np.zeros((h, spec.dim))
        for m in range(n_components):
            model = fit_ar_bic(scores[:, m], p_max)
            z_fc += np.outer(ar_forecast(model, scores[:, m], h), vecs[:, m])
        steps.append(mu[None, :] + spec.unwhiten(z_fc))
    return ForecastResult(steps=tuple(steps), r=n_components, trace=None)


def persistence_forecast(panel: Panel, h: int) -> ForecastResult:
    """Naive baseline: repeat the last observation at every step."""
    steps = tuple(np.repeat(c[-1][None, :], h, axis=0) for c in panel.coeffs)
    return ForecastResult(steps=steps, r=0, trace=None)
