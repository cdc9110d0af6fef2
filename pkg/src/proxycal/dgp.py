"""Synthetic data generator and structural sanity diagnostics.

The generative process: environment e ~ N(0, I); content z = W_z' e + eps_z;
binary bias A = 1{sigmoid(w_a' e + eps_a) > 1/2}; true outcome
y_true = w_y' z + eps_y; observed outcome y_obs = y_true + alpha * A + eps_obs;
proxies y_proxy_k = c_k * y_true + eps_proxy_k.

Each noise source draws from its own counter-based stream, so runs with the
same seed share the (e, z, A, y_true) draws across noise models and across
alpha; only the measurement noises differ between the gaussian and scaled
Poisson settings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .dataset import Dataset
from .errors import ParameterError, UnsupportedDatasetError

Array = np.ndarray

NOISE_MODELS = ("gaussian", "poisson_scaled")
_POISSON_LAMBDA = 10.0

# stream sub-keys, one per randomness source
_K_WEIGHTS, _K_ENV, _K_EPS_Z, _K_EPS_A, _K_EPS_Y, _K_EPS_OBS, _K_EPS_PROXY = range(7)


@dataclass
class DgpConfig:
    n: int
    d_e: int = 10
    d_z: int = 5
    m: int = 5
    alpha: float = 0.0
    noise_model: str = "gaussian"
    sigma_z: float = 1.0
    sigma_y: float = 0.5
    sigma_obs: float = 0.1
    sigma_proxy: float = 0.1
    sigma_a: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n < 10:
            raise ParameterError("n must be at least 10")
        if min(self.d_e, self.d_z, self.m) < 1:
            raise ParameterError("d_e, d_z, m must be >= 1")
        if self.noise_model not in NOISE_MODELS:
            raise ParameterError(f"unknown noise model {self.noise_model!r}")
        for name in ("sigma_z", "sigma_y", "sigma_obs", "sigma_proxy", "sigma_a"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")


@dataclass
class DgpWeights:
    """Structural coefficients drawn once per seed and recorded for replay."""

    w_z: Array  # (d_e, d_z)
    w_a: Array  # (d_e,)
    w_y: Array  # (d_z,)
    c: Array  # (m,)


def sample_weights(config: DgpConfig) -> DgpWeights:
    """Unit-scale structural coefficients: N(0,1)/sqrt(fan-in), c ~ U(0.5, 1.5)."""
    g = rng.stream(config.seed, _K_WEIGHTS)
    w_z = g.standard_normal((config.d_e, config.d_z)) / np.sqrt(config.d_e)
    w_a = g.standard_normal(config.d_e) / np.sqrt(config.d_e)
    w_y = g.standard_normal(config.d_z) / np.sqrt(config.d_z)
    c = g.uniform(0.5, 1.5, config.m)
    return DgpWeights(w_z, w_a, w_y, c)


def noise_draw(model: str, scale: float, g: np.random.Generator, size=None):
    """Zero-mean noise with standard deviation ``scale``.

    gaussian: N(0, scale^2).  poisson_scaled: centered variance-matched
    transform (Pois(lam) - lam) / sqrt(lam) * scale with lam = 10.
    """
    if scale < 0:
        raise ParameterError("scale must be non-negative")
    if model == "gaussian":
        return scale * g.standard_normal(size)
    if model == "poisson_scaled":
        lam = _POISSON_LAMBDA
        raw = (g.poisson(lam, size) - lam) / np.sqrt(lam)
        return scale * raw
    raise ParameterError(f"unknown noise model {model!r}")


def sample_dataset(config: DgpConfig, weights: DgpWeights | None = None) -> tuple[Dataset, DgpWeights]:
    """Draw one dataset; returns it together with the structural weights.

    Passing ``weights`` overrides the seeded draw (used to construct
    degenerate or adversarial instances in tests).
    """
    config.validate()
    if weights is None:
        weights = sample_weights(config)
    n, seed = config.n, config.seed

    e = rng.stream(seed, _K_ENV).standard_normal((n, config.d_e))
    z = e @ weights.w_z + config.sigma_z * rng.stream(seed, _K_EPS_Z).standard_normal(
        (n, config.d_z)
    )
    # sigmoid(x) > 1/2 iff x > 0
    a_index = e @ weights.w_a + config.sigma_a * rng.stream(seed, _K_EPS_A).standard_normal(n)
    a = (a_index > 0.0).astype(float)
    y_true = z @ weights.w_y + config.sigma_y * rng.stream(seed, _K_EPS_Y).standard_normal(n)
    y_obs = y_true + config.alpha * a + noise_draw(
        config.noise_model, config.sigma_obs, rng.stream(seed, _K_EPS_OBS), n
    )
    proxies = y_true[:, None] * weights.c[None, :] + noise_draw(
        config.noise_model, config.sigma_proxy, rng.stream(seed, _K_EPS_PROXY), (n, config.m)
    )

    ds = Dataset(
        env=e,
        proxies=proxies,
        y_obs=y_obs,
        z_true=z,
        a_true=a,
        y_true=y_true,
        meta={
            "alpha": config.alpha,
            "seed": seed,
            "source": "dgp",
            "noise_model": config.noise_model,
        },
    )
    return ds, weights


def _ols_r2(x: Array, y: Array) -> float:
    """In-sample R^2 of OLS with intercept; 0 if the target is constant."""
    design = np.column_stack([np.ones(len(y)), x]) if x.ndim == 2 else np.column_stack(
        [np.ones(len(y)), x[:, None]]
    )
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0
    return 1.0 - float(np.sum(resid**2)) / ss_tot


@dataclass
class SanityStats:
    """Structural diagnostics of a ground-truth dataset."""

    r2_ytrue_given_z: float
    r2_yobs_given_ytrue: float
    delta_r2_bias: float
    per_dim_r2: Array  # R^2(z_j | E) per latent dimension
    bias_prevalence: float
    moments: dict[str, dict[str, float]]
    correlation_labels: list[str]
    correlation: Array

    def moment_rows(self) -> list[dict]:
        rows = []
        for name, stats in self.moments.items():
            row = {"variable": name}
            row.update(stats)
            rows.append(row)
        return rows


def _moments(x: Array) -> dict[str, float]:
    q25, q50, q75 = np.percentile(x, [25, 50, 75])
    return {
        "mean": float(x.mean()),
        "std": float(x.std()),
        "min": float(x.min()),
        "q25": float(q25),
        "median": float(q50),
        "q75": float(q75),
        "max": float(x.max()),
    }


def sanity_report(ds: Dataset) -> SanityStats:
    """Distribution and regression diagnostics; needs ground-truth columns."""
    ds.require_ground_truth("z_true", "a_true", "y_true")
    z, a, y_true, y_obs = ds.z_true, ds.a_true, ds.y_true, ds.y_obs

    r2_yt_z = _ols_r2(z, y_true)
    r2_yo_yt = _ols_r2(y_true, y_obs)
    r2_yo_z = _ols_r2(z, y_obs)
    r2_yo_za = _ols_r2(np.column_stack([z, a]), y_obs)
    per_dim = np.array([_ols_r2(ds.env, z[:, j]) for j in range(z.shape[1])])

    moments: dict[str, dict[str, float]] = {}
    for j in range(ds.d_e):
        moments[f"E_{j + 1}"] = _moments(ds.env[:, j])
    for j in range(z.shape[1]):
        moments[f"Z_{j + 1}"] = _moments(z[:, j])
    moments["A"] = _moments(a)
    moments["Ytrue"] = _moments(y_true)
    moments["Yobs"] = _moments(y_obs)
    for k in range(ds.m):
        moments[f"Yproxy_{k + 1}"] = _moments(ds.proxies[:, k])

    labels = [f"Z_{j + 1}" for j in range(z.shape[1])] + ["A", "Ytrue", "Yobs"]
    stacked = np.column_stack([z, a, y_true, y_obs])
    corr = np.corrcoef(stacked, rowvar=False)

    return SanityStats(
        r2_ytrue_given_z=r2_yt_z,
        r2_yobs_given_ytrue=r2_yo_yt,
        delta_r2_bias=r2_yo_za - r2_yo_z,
        per_dim_r2=per_dim,
        bias_prevalence=float(a.mean()),
        moments=moments,
        correlation_labels=labels,
        correlation=corr,
    )
