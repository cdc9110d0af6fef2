"""Stage 2: infer the scalar bias latent from the observed outcome.

With z_hat frozen, training maximizes

    L_A = E_q[log p(y_obs | z_hat, a)] - beta * KL(q(a | y_obs, E, z_hat) || p(a | E))

The latent is a 1-d Gaussian score; its scale and sign are arbitrary and are
resolved downstream by the calibration step.  z_hat enters only as input
data, so no gradient ever reaches it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ShapeError
from .vae_core import VaeConfig, VaeCore, core_elbo, fit_vae, posterior_mean, reconstruct_mean

Array = np.ndarray

__all__ = ["AModel", "train_avae", "encode_a", "elbo_a", "reconstruct_yobs"]


@dataclass
class AModel:
    """Trained Stage-2 bundle; latent dimension is fixed at 1."""

    core: VaeCore
    config: VaeConfig
    d_e: int
    d_z: int
    ablate_content: bool = False

    @property
    def training_log(self) -> list[dict]:
        return self.core.training_log


def _check_zhat(ds: Dataset, z_hat: Array) -> None:
    if z_hat.ndim != 2 or z_hat.shape[0] != ds.n:
        raise ShapeError(f"z_hat shape {z_hat.shape} does not match dataset rows {ds.n}")


def _enc_in(ds: Dataset, z_hat: Array) -> Array:
    return np.hstack([ds.y_obs[:, None], ds.env, z_hat])


def _dec_context(z_hat: Array, ablate: bool) -> Array:
    # ablation: the decoder sees zeros instead of the content estimate
    return np.zeros_like(z_hat) if ablate else z_hat


def train_avae(
    ds: Dataset, z_hat: Array, cfg: VaeConfig, ablate_content: bool = False
) -> AModel:
    """Fit the outcome VAE on (y_obs, E, z_hat) with z_hat held fixed."""
    _check_zhat(ds, z_hat)
    stage_cfg = VaeConfig(
        d_latent=1,
        hidden=cfg.hidden,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        beta=cfg.beta,
        prior_mode=cfg.prior_mode,
        encoder_uses_env=cfg.encoder_uses_env,
        seed=cfg.seed,
    )
    prior_in = ds.env if stage_cfg.prior_mode == "env_conditioned" else None
    core = fit_vae(
        ds.y_obs[:, None],
        _enc_in(ds, z_hat),
        prior_in,
        _dec_context(z_hat, ablate_content),
        stage_cfg,
    )
    return AModel(core, stage_cfg, ds.d_e, z_hat.shape[1], ablate_content)


def encode_a(model: AModel, ds: Dataset, z_hat: Array) -> Array:
    """Posterior mean of the bias score, one real per unit; deterministic."""
    _check_zhat(ds, z_hat)
    if z_hat.shape[1] != model.d_z:
        raise ShapeError(f"z_hat has {z_hat.shape[1]} columns, model expects {model.d_z}")
    return posterior_mean(model.core, _enc_in(ds, z_hat))[:, 0]


def elbo_a(
    model: AModel, ds: Dataset, z_hat: Array, g: np.random.Generator
) -> tuple[float, float, float]:
    """Single-sample (recon_term, kl_term, total) on the given batch."""
    _check_zhat(ds, z_hat)
    prior_in = ds.env if model.config.prior_mode == "env_conditioned" else None
    return core_elbo(
        model.core,
        ds.y_obs[:, None],
        _enc_in(ds, z_hat),
        prior_in,
        _dec_context(z_hat, model.ablate_content),
        g,
    )


def reconstruct_yobs(model: AModel, ds: Dataset, z_hat: Array) -> Array:
    """Decoder mean for y_obs at the posterior-mean bias score."""
    _check_zhat(ds, z_hat)
    return reconstruct_mean(
        model.core, _enc_in(ds, z_hat), _dec_context(z_hat, model.ablate_content)
    )[:, 0]
