"""Stage 1: learn content latents from proxy measurements.

Training maximizes the proxy ELBO

    L_Z = E_q[log p(y_proxy | z)] - beta * KL(q(z | y_proxy, E) || p(z | E))

and never reads the observed outcome: the trainer operates on a ProxyView,
which has no outcome field.  The frozen point estimate z_hat is the posterior
mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .dataset import Dataset, ProxyView
from .errors import SchemaError, ShapeError
from .vae_core import (
    VaeConfig,
    VaeCore,
    core_elbo,
    fit_vae,
    posterior_mean,
    reconstruct_mean,
)

Array = np.ndarray

__all__ = ["VaeConfig", "ZModel", "train_zvae", "encode_z", "elbo_z", "reconstruct_proxies"]


@dataclass
class ZModel:
    """Trained Stage-1 bundle."""

    core: VaeCore
    config: VaeConfig
    m: int
    d_e: int

    @property
    def training_log(self) -> list[dict]:
        return self.core.training_log


def _as_view(data: Dataset | ProxyView) -> ProxyView:
    if isinstance(data, Dataset):
        return data.proxy_view()
    return data


def _enc_in(view: ProxyView, cfg_uses_env: bool) -> Array:
    return np.hstack([view.proxies, view.env]) if cfg_uses_env else view.proxies


def train_zvae(data: Dataset | ProxyView, cfg: VaeConfig) -> ZModel:
    """Fit the proxy VAE.  Accepts a full dataset but trains on its proxy view."""
    view = _as_view(data)
    if view.proxies.shape[1] < 1:
        raise SchemaError("dataset has no proxy columns")
    enc_in = _enc_in(view, cfg.encoder_uses_env)
    prior_in = view.env if cfg.prior_mode == "env_conditioned" else None
    core = fit_vae(view.proxies, enc_in, prior_in, None, cfg)
    return ZModel(core, cfg, view.proxies.shape[1], view.env.shape[1])


def _check_schema(model: ZModel, view: ProxyView) -> None:
    if view.proxies.shape[1] != model.m:
        raise ShapeError(f"dataset has {view.proxies.shape[1]} proxies, model expects {model.m}")
    if model.config.encoder_uses_env and view.env.shape[1] != model.d_e:
        raise ShapeError(f"dataset has {view.env.shape[1]} env columns, model expects {model.d_e}")


def encode_z(model: ZModel, data: Dataset | ProxyView) -> Array:
    """Posterior mean z_hat, shape (n, d_latent); deterministic."""
    view = _as_view(data)
    _check_schema(model, view)
    return posterior_mean(model.core, _enc_in(view, model.config.encoder_uses_env))


def elbo_z(
    model: ZModel, data: Dataset | ProxyView, g: np.random.Generator
) -> tuple[float, float, float]:
    """Single-sample (recon_term, kl_term, total) on the given batch."""
    view = _as_view(data)
    _check_schema(model, view)
    prior_in = view.env if model.config.prior_mode == "env_conditioned" else None
    return core_elbo(
        model.core,
        view.proxies,
        _enc_in(view, model.config.encoder_uses_env),
        prior_in,
        None,
        g,
    )


def reconstruct_proxies(model: ZModel, data: Dataset | ProxyView) -> Array:
    """Decoder mean at the posterior mean; used for proxy-reconstruction RMSE."""
    view = _as_view(data)
    _check_schema(model, view)
    return reconstruct_mean(model.core, _enc_in(view, model.config.encoder_uses_env), None)
