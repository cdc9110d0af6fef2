"""Latent-recovery metrics and the k-fold evaluation harness.

Latent recovery is scored up to the indeterminacies a VAE leaves open:
``permuted_r2`` aligns recovered dimensions to true dimensions with the
assignment maximizing the average per-pair R^2, and ``latent_mae`` measures
absolute error after that alignment plus a per-dimension affine rescaling.

``kfold_run`` executes the full two-stage pipeline with unit-level folds:
train on the training folds, pick threshold/orientation on a held-out
validation fold, and estimate the bias on the test fold only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import rng as rngmod
from .avae import encode_a, reconstruct_yobs, train_avae
from .calibrate import (
    BiasGroups,
    baseline_env_only,
    baseline_proxy_only,
    estimate_alpha,
    orient_and_threshold,
)
from .dataset import Dataset
from .errors import ParameterError, ShapeError
from .vae_core import VaeConfig
from .zvae import encode_z, reconstruct_proxies, train_zvae

Array = np.ndarray

_K_FOLDS = 101  # stream sub-key for fold assignment


def rmse(pred: Array, target: Array) -> float:
    """Root mean squared error over all entries."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def _pairwise_r2(z_hat: Array, z_true: Array) -> Array:
    """R^2 of the simple regression z_true[:, j] ~ z_hat[:, k], all pairs."""
    zh = z_hat - z_hat.mean(axis=0)
    zt = z_true - z_true.mean(axis=0)
    var_h = (zh**2).mean(axis=0)
    var_t = (zt**2).mean(axis=0)
    cov = zh.T @ zt / len(zh)  # (d_hat, d_true)
    denom = np.outer(var_h, var_t)
    r2 = np.zeros_like(denom)
    ok = denom > 0
    r2[ok] = cov[ok] ** 2 / denom[ok]
    return r2


def permuted_r2(z_hat: Array, z_true: Array) -> tuple[float, Array]:
    """Best average per-dimension R^2 over assignments of ẑ-dims to z-dims.

    Returns the score and the permutation ``perm`` such that column
    ``z_hat[:, perm[j]]`` is matched to ``z_true[:, j]``.  Solved exactly via
    the Hungarian assignment, so wide latent spaces stay cheap.
    """
    if z_hat.ndim != 2 or z_true.ndim != 2 or z_hat.shape[0] != z_true.shape[0]:
        raise ShapeError("z_hat and z_true must be 2-d with equal row counts")
    if z_hat.shape[1] != z_true.shape[1]:
        raise ShapeError(
            f"dimension mismatch: {z_hat.shape[1]} recovered vs {z_true.shape[1]} true"
        )
    r2 = _pairwise_r2(z_hat, z_true)
    rows, cols = linear_sum_assignment(-r2)
    perm = np.empty(z_true.shape[1], dtype=np.intp)
    perm[cols] = rows
    score = float(r2[rows, cols].mean())
    return score, perm


def latent_mae(z_hat: Array, z_true: Array) -> float:
    """MAE after permutation alignment and per-dimension OLS rescaling."""
    score_perm = permuted_r2(z_hat, z_true)[1]
    total = 0.0
    n, d = z_true.shape
    for j in range(d):
        x = z_hat[:, score_perm[j]]
        design = np.column_stack([np.ones(n), x])
        coef, *_ = np.linalg.lstsq(design, z_true[:, j], rcond=None)
        total += float(np.abs(design @ coef - z_true[:, j]).sum())
    return total / (n * d)


@dataclass
class PipelineConfig:
    """Everything one end-to-end run needs."""

    d_latent: int = 5
    hidden: int = 64
    epochs: int = 50
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta: float = 1.0
    prior_mode: str = "standard_normal"
    encoder_uses_env: bool = True
    k_neighbors: int = 5
    seed: int = 0
    baselines: bool = True

    def stage_config(self, d_latent: int, seed: int) -> VaeConfig:
        return VaeConfig(
            d_latent=d_latent,
            hidden=self.hidden,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            beta=self.beta,
            prior_mode=self.prior_mode,
            encoder_uses_env=self.encoder_uses_env,
            seed=seed,
        )


@dataclass
class MetricsReport:
    """Aggregated pipeline metrics over folds."""

    alpha_true: float | None
    alpha_hat_mean: float
    alpha_hat_std: float
    folds: int
    n: int
    permuted_r2_z: float | None = None
    z_mae: float | None = None
    a_mae: float | None = None
    rmse_proxies: float | None = None
    rmse_yobs: float | None = None
    baseline_proxy_mean: float | None = None
    baseline_env_mean: float | None = None
    per_fold: list[dict] = field(default_factory=list)


def fold_assignments(n: int, folds: int, seed: int) -> Array:
    """Fold id per unit from a seeded shuffle; depends only on (n, seed)."""
    order = rngmod.stream(seed, _K_FOLDS).permutation(n)
    fold_of = np.empty(n, dtype=np.intp)
    fold_of[order] = np.arange(n) % folds
    return fold_of


def run_fold(
    ds: Dataset,
    cfg: PipelineConfig,
    train_idx: Array,
    val_idx: Array,
    test_idx: Array,
    fold: int,
) -> dict:
    """Train both stages on the training split, evaluate on the test split."""
    train_ds = ds.subset(train_idx)
    val_ds = ds.subset(val_idx)
    test_ds = ds.subset(test_idx)

    z_seed = rngmod.derive_seed(cfg.seed, fold, 1)
    a_seed = rngmod.derive_seed(cfg.seed, fold, 2)

    zmodel = train_zvae(train_ds, cfg.stage_config(cfg.d_latent, z_seed))
    z_train = encode_z(zmodel, train_ds)
    z_val = encode_z(zmodel, val_ds)
    z_test = encode_z(zmodel, test_ds)

    amodel = train_avae(train_ds, z_train, cfg.stage_config(1, a_seed))
    a_val = encode_a(amodel, val_ds, z_val)
    a_test = encode_a(amodel, test_ds, z_test)

    # threshold and orientation from the validation fold, groups on the test fold
    a_cat = np.concatenate([a_val, a_test])
    z_cat = np.vstack([z_val, z_test])
    y_cat = np.concatenate([val_ds.y_obs, test_ds.y_obs])
    groups_cat = orient_and_threshold(
        a_cat, z_cat, y_cat, np.arange(len(val_idx)), cfg.k_neighbors
    )
    offset = len(val_idx)
    s_test = groups_cat.orientation * a_test
    test_treated = np.arange(len(test_idx))[s_test > groups_cat.threshold]
    test_control = np.arange(len(test_idx))[s_test <= groups_cat.threshold]
    groups_test = BiasGroups(
        test_treated, test_control, groups_cat.threshold, groups_cat.orientation
    )
    result = estimate_alpha(test_ds.y_obs, z_test, groups_test, cfg.k_neighbors)

    row: dict = {
        "fold": fold,
        "alpha_hat": result.alpha_hat,
        "threshold": groups_cat.threshold,
        "orientation": groups_cat.orientation,
        "n_treated": len(test_treated),
        "n_control": len(test_control),
    }
    alpha_true = ds.meta.get("alpha")
    if alpha_true is not None:
        row["alpha_err"] = abs(result.alpha_hat - float(alpha_true))

    row["rmse_proxies"] = rmse(reconstruct_proxies(zmodel, test_ds), test_ds.proxies)
    row["rmse_yobs"] = rmse(reconstruct_yobs(amodel, test_ds, z_test), test_ds.y_obs)
    if test_ds.z_true is not None and test_ds.z_true.shape[1] == z_test.shape[1]:
        score, _ = permuted_r2(z_test, test_ds.z_true)
        row["permuted_r2_z"] = score
        row["z_mae"] = latent_mae(z_test, test_ds.z_true)
    if test_ds.a_true is not None:
        row["a_mae"] = latent_mae(a_test[:, None], test_ds.a_true[:, None])
    if cfg.baselines:
        # regressions fit on the training fold, contrasts on the test groups
        coef_fit_idx = np.arange(len(train_idx))
        merged = ds.subset(np.concatenate([train_idx, test_idx]))
        shifted = BiasGroups(
            groups_test.treated + len(train_idx),
            groups_test.control + len(train_idx),
            groups_test.threshold,
            groups_test.orientation,
        )
        row["baseline_proxy_only"] = baseline_proxy_only(merged, shifted, coef_fit_idx)
        row["baseline_env_only"] = baseline_env_only(merged, shifted, coef_fit_idx)
    return row


def kfold_run(ds: Dataset, cfg: PipelineConfig, folds: int = 10) -> MetricsReport:
    """Cross-validated pipeline metrics with rotating validation folds."""
    if ds.n < folds:
        raise ParameterError(f"n={ds.n} smaller than fold count {folds}")
    fold_of = fold_assignments(ds.n, folds, cfg.seed)
    counts = np.bincount(fold_of, minlength=folds)
    if counts.min() < cfg.k_neighbors + 1:
        raise ParameterError(
            f"smallest fold has {counts.min()} units, too few for K={cfg.k_neighbors} matching"
        )

    rows = []
    for f in range(folds):
        v = (f + 1) % folds
        test_idx = np.where(fold_of == f)[0]
        val_idx = np.where(fold_of == v)[0]
        train_idx = np.where((fold_of != f) & (fold_of != v))[0]
        rows.append(run_fold(ds, cfg, train_idx, val_idx, test_idx, f))

    alpha_hats = np.array([r["alpha_hat"] for r in rows])
    mean_of = lambda key: (
        float(np.mean([r[key] for r in rows])) if key in rows[0] else None
    )
    alpha_true = ds.meta.get("alpha")
    return MetricsReport(
        alpha_true=None if alpha_true is None else float(alpha_true),
        alpha_hat_mean=float(alpha_hats.mean()),
        alpha_hat_std=float(alpha_hats.std(ddof=1)) if folds > 1 else 0.0,
        folds=folds,
        n=ds.n,
        permuted_r2_z=mean_of("permuted_r2_z"),
        z_mae=mean_of("z_mae"),
        a_mae=mean_of("a_mae"),
        rmse_proxies=mean_of("rmse_proxies"),
        rmse_yobs=mean_of("rmse_yobs"),
        baseline_proxy_mean=mean_of("baseline_proxy_only"),
        baseline_env_mean=mean_of("baseline_env_only"),
        per_fold=rows,
    )
