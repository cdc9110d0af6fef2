"""Bias-score orientation, latent-space matching, and the bias estimators.

The learned bias score is identifiable only up to sign and scale, so the
threshold and orientation are chosen on a validation set: candidate cutoffs
are quantiles of the oriented score and the pair (orientation, cutoff)
maximizing the matched contrast is kept.  Scanning both orientations with the
same quantile grid makes the selection exactly invariant to a global sign
flip of the score.

The magnitude estimate contrasts each high-score unit against the average
outcome of its K nearest low-score neighbors in content space:

    alpha_hat = (1/|I1|) sum_{i in I1} ( y_i - (1/K) sum_{j in N_K(i)} y_j )

and the per-unit effect is the absolute contrast |y_i - mean neighbor y|.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import OverlapError, ParameterError, ShapeError

Array = np.ndarray

THRESHOLD_LEVELS = tuple(np.round(np.arange(0.30, 0.7001, 0.05), 2))
_CHUNK = 256


@dataclass
class BiasGroups:
    """Treated/control split of units by oriented bias score.

    ``threshold`` lives on the oriented score axis: a unit is treated when
    orientation * score > threshold.
    """

    treated: Array
    control: Array
    threshold: float
    orientation: int
    source: str = "validation-chosen"

    def validate(self, n: int) -> None:
        if len(self.treated) == 0 or len(self.control) == 0:
            raise OverlapError("both bias groups must be non-empty")
        if len(np.intersect1d(self.treated, self.control)) > 0:
            raise OverlapError("treated and control groups overlap")
        if len(self.treated) + len(self.control) != n:
            raise OverlapError("groups must cover all units")


@dataclass
class CalibrationResult:
    """Matched-neighbor estimate with its full decision trail."""

    alpha_hat: float
    per_unit_tau: Array
    signed_contrasts: Array
    matches: dict[int, list[tuple[int, float]]]
    groups: BiasGroups
    k_neighbors: int


def _knn(z: Array, treated: Array, control: Array, k: int) -> tuple[Array, Array]:
    """K nearest control units per treated unit, Euclidean in z.

    Returns (indices into ``control``'s order, distances), ties broken by
    lower control index.  Chunked so the full distance matrix never
    materializes for large groups.
    """
    zt = z[treated]
    zc = z[control]
    cc = np.einsum("ij,ij->i", zc, zc)
    nn_idx = np.empty((len(treated), k), dtype=np.intp)
    nn_d2 = np.empty((len(treated), k))
    for start in range(0, len(treated), _CHUNK):
        block = zt[start : start + _CHUNK]
        d2 = np.einsum("ij,ij->i", block, block)[:, None] - 2.0 * block @ zc.T + cc[None, :]
        # stable sort keeps the lowest control index first among equal distances
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        nn_idx[start : start + _CHUNK] = order
        nn_d2[start : start + _CHUNK] = np.take_along_axis(d2, order, axis=1)
    return nn_idx, np.sqrt(np.maximum(nn_d2, 0.0))


def _matched_contrasts(
    y: Array, z: Array, treated: Array, control: Array, k: int
) -> tuple[Array, Array, Array]:
    """Signed per-treated contrast plus the neighbor indices and distances."""
    if len(control) < k:
        raise ParameterError(f"control group has {len(control)} units, need at least K={k}")
    nn_idx, nn_dist = _knn(z, treated, control, k)
    neighbor_y = y[control][nn_idx]
    contrasts = y[treated] - neighbor_y.mean(axis=1)
    return contrasts, nn_idx, nn_dist


def orient_and_threshold(
    a_hat: Array,
    z_hat: Array,
    y_obs: Array,
    validation_idx: Array,
    k_neighbors: int = 5,
    levels: tuple = THRESHOLD_LEVELS,
) -> BiasGroups:
    """Choose orientation and cutoff on the validation units, group all units.

    For each orientation and each validation quantile of the oriented score,
    the matched contrast is computed on validation units only; the candidate
    with the largest (signed, post-orientation) contrast wins.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    validation_idx = np.asarray(validation_idx)
    if len(validation_idx) == 0:
        raise ParameterError("validation index set is empty")
    a_val = a_hat[validation_idx]
    if np.max(a_val) - np.min(a_val) <= 0.0:
        raise OverlapError("bias score is constant on the validation set")

    best = None  # (contrast, orientation, threshold)
    for orientation in (1, -1):
        s = orientation * a_hat
        s_val = s[validation_idx]
        for level in levels:
            t = float(np.quantile(s_val, level))
            val_treated = validation_idx[s_val > t]
            val_control = validation_idx[s_val <= t]
            if len(val_treated) == 0 or len(val_control) < k_neighbors:
                continue
            contrasts, _, _ = _matched_contrasts(
                y_obs, z_hat, val_treated, val_control, k_neighbors
            )
            c = float(contrasts.mean())
            if best is None or c > best[0]:
                best = (c, orientation, t)
    if best is None:
        raise OverlapError("no threshold candidate produced two usable groups")

    _, orientation, threshold = best
    s = orientation * a_hat
    all_idx = np.arange(len(a_hat))
    treated = all_idx[s > threshold]
    control = all_idx[s <= threshold]
    groups = BiasGroups(treated, control, threshold, orientation)
    groups.validate(len(a_hat))
    return groups


def estimate_alpha(
    y_obs: Array, z_hat: Array, groups: BiasGroups, k_neighbors: int = 5
) -> CalibrationResult:
    """Matched-neighbor estimate of the bias magnitude."""
    y_obs = np.asarray(y_obs, dtype=float)
    if z_hat.ndim != 2 or z_hat.shape[0] != len(y_obs):
        raise ShapeError("z_hat rows must match y_obs")
    groups.validate(len(y_obs))
    contrasts, nn_idx, nn_dist = _matched_contrasts(
        y_obs, z_hat, groups.treated, groups.control, k_neighbors
    )
    matches = {
        int(i): [(int(groups.control[j]), float(d)) for j, d in zip(row, drow)]
        for i, row, drow in zip(groups.treated, nn_idx, nn_dist)
    }
    return CalibrationResult(
        alpha_hat=float(contrasts.mean()),
        per_unit_tau=np.abs(contrasts),
        signed_contrasts=contrasts,
        matches=matches,
        groups=groups,
        k_neighbors=k_neighbors,
    )


def estimate_cate(
    y_obs: Array, z_hat: Array, groups: BiasGroups, k_neighbors: int = 5
) -> Array:
    """Per-treated-unit absolute matched contrast tau_i."""
    return estimate_alpha(y_obs, z_hat, groups, k_neighbors).per_unit_tau


def cate_by_group(result: CalibrationResult, keys: Array) -> dict[str, float]:
    """Mean tau_i aggregated by a per-unit string key (e.g. hazard type)."""
    treated_keys = np.asarray(keys)[result.groups.treated]
    out: dict[str, float] = {}
    for key in sorted(set(treated_keys.tolist())):
        out[str(key)] = float(result.per_unit_tau[treated_keys == key].mean())
    return out


def _ols_fit(x: Array, y: Array) -> Array:
    """OLS with intercept; ridge fallback (lambda=1e-6) when rank-deficient."""
    design = np.column_stack([np.ones(len(y)), x])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        warnings.warn("rank-deficient regressors; falling back to ridge (lambda=1e-6)")
        lam = 1e-6
        gram = design.T @ design + lam * np.eye(design.shape[1])
        coef = np.linalg.solve(gram, design.T @ y)
    return coef


def _ols_predict(coef: Array, x: Array) -> Array:
    return np.column_stack([np.ones(len(x)), x]) @ coef


def baseline_proxy_only(ds: Dataset, groups: BiasGroups, fit_idx: Array | None = None) -> float:
    """Residual contrast after predicting y_obs from the proxies.

    The regression treats proxies as unbiased outcome measurements; the bias
    estimate is the mean residual difference between the two groups.
    """
    fit_idx = np.arange(ds.n) if fit_idx is None else np.asarray(fit_idx)
    coef = _ols_fit(ds.proxies[fit_idx], ds.y_obs[fit_idx])
    resid = ds.y_obs - _ols_predict(coef, ds.proxies)
    return float(resid[groups.treated].mean() - resid[groups.control].mean())


def baseline_env_only(ds: Dataset, groups: BiasGroups, fit_idx: Array | None = None) -> float:
    """Predicted-outcome contrast from an environment-only regression.

    Models y_obs directly as a function of the environment covariates and
    attributes the predicted difference across groups to reporting bias.
    """
    fit_idx = np.arange(ds.n) if fit_idx is None else np.asarray(fit_idx)
    coef = _ols_fit(ds.env[fit_idx], ds.y_obs[fit_idx])
    pred = _ols_predict(coef, ds.env)
    return float(pred[groups.treated].mean() - pred[groups.control].mean())
