"""Shared machinery for the two VAE stages.

A stage is a pair of Gaussian-head MLPs (encoder, decoder) plus a prior that
is either the standard normal or a third Gaussian-head MLP conditioned on the
environment.  The ELBO is reconstruction log-likelihood minus a weighted KL,
estimated with a single reparameterized sample per example.  Gradients are
hand-written reverse mode; optimization is mini-batch Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ParameterError, ShapeError, TrainingDivergenceError
from .nn import (
    LOG_VAR_MAX,
    LOG_VAR_MIN,
    GaussianHead,
    MlpGrads,
    MlpParams,
    _backward_cached,
    _forward_cached,
    adam_init,
    adam_step,
    mlp_init,
)

Array = np.ndarray

PRIOR_MODES = ("standard_normal", "env_conditioned")

# stream sub-keys for one training run
_K_INIT_ENC, _K_INIT_DEC, _K_INIT_PRIOR, _K_SHUFFLE, _K_NOISE = range(5)


@dataclass
class VaeConfig:
    """Hyperparameters shared by both stages."""

    d_latent: int
    hidden: int = 64
    epochs: int = 50
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta: float = 1.0
    prior_mode: str = "standard_normal"
    encoder_uses_env: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.d_latent < 1:
            raise ParameterError("d_latent must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.beta <= 0:
            raise ParameterError("kl weight beta must be > 0")
        if self.prior_mode not in PRIOR_MODES:
            raise ParameterError(f"unknown prior_mode {self.prior_mode!r}")


@dataclass
class GaussianNet:
    """MLP whose output is split into mean and log-variance halves."""

    mlp: MlpParams
    d_out: int


def gaussian_net_init(d_in: int, hidden: int, d_out: int, g: np.random.Generator) -> GaussianNet:
    return GaussianNet(mlp_init([d_in, hidden, 2 * d_out], g), d_out)


def gaussian_net_head(net: GaussianNet, x: Array) -> GaussianHead:
    out, _ = _forward_cached(net.mlp, x)
    return GaussianHead(out[:, : net.d_out], out[:, net.d_out :])


@dataclass
class VaeCore:
    """Trained encoder/decoder pair with its prior and training history."""

    encoder: GaussianNet
    decoder: GaussianNet
    prior_net: GaussianNet | None
    d_latent: int
    beta: float
    training_log: list[dict] = field(default_factory=list)


def _split_head(raw: Array, d: int) -> tuple[Array, Array, Array]:
    """Split raw net output into mean, clipped log-var, and the clip mask."""
    mean = raw[:, :d]
    lv_raw = raw[:, d:]
    lv = np.clip(lv_raw, LOG_VAR_MIN, LOG_VAR_MAX)
    mask = (lv_raw > LOG_VAR_MIN) & (lv_raw < LOG_VAR_MAX)
    return mean, lv, mask


def _elbo_forward(
    encoder: GaussianNet,
    decoder: GaussianNet,
    prior_net: GaussianNet | None,
    x: Array,
    enc_in: Array,
    prior_in: Array | None,
    dec_context: Array | None,
    eps: Array,
    beta: float,
):
    """Single-sample ELBO forward pass; returns loss plus all caches."""
    enc_out, enc_acts = _forward_cached(encoder.mlp, enc_in)
    mu_q, lv_q, q_mask = _split_head(enc_out, encoder.d_out)
    sigma_q = np.exp(0.5 * lv_q)
    z = mu_q + sigma_q * eps

    dec_in = z if dec_context is None else np.hstack([dec_context, z])
    dec_out, dec_acts = _forward_cached(decoder.mlp, dec_in)
    mu_x, lv_x, x_mask = _split_head(dec_out, decoder.d_out)

    if prior_net is None:
        mu_p = np.zeros_like(mu_q)
        lv_p = np.zeros_like(lv_q)
        p_mask = None
        prior_acts = None
    else:
        p_out, prior_acts = _forward_cached(prior_net.mlp, prior_in)
        mu_p, lv_p, p_mask = _split_head(p_out, prior_net.d_out)

    diff_x = x - mu_x
    recon = -0.5 * (np.log(2 * np.pi) + lv_x + diff_x * diff_x * np.exp(-lv_x)).sum(axis=1)
    diff_q = mu_q - mu_p
    kl = 0.5 * (
        np.exp(lv_q - lv_p) + diff_q * diff_q * np.exp(-lv_p) - 1.0 + lv_p - lv_q
    ).sum(axis=1)

    loss = float(np.mean(-recon + beta * kl))
    caches = dict(
        enc_acts=enc_acts,
        dec_acts=dec_acts,
        prior_acts=prior_acts,
        mu_q=mu_q,
        lv_q=lv_q,
        q_mask=q_mask,
        sigma_q=sigma_q,
        mu_x=mu_x,
        lv_x=lv_x,
        x_mask=x_mask,
        mu_p=mu_p,
        lv_p=lv_p,
        p_mask=p_mask,
        diff_x=diff_x,
        diff_q=diff_q,
    )
    return loss, float(np.mean(recon)), float(np.mean(kl)), caches


def elbo_value(encoder, decoder, prior_net, x, enc_in, prior_in, dec_context, eps, beta):
    """Loss, mean reconstruction term, mean KL term (no gradients)."""
    loss, recon, kl, _ = _elbo_forward(
        encoder, decoder, prior_net, x, enc_in, prior_in, dec_context, eps, beta
    )
    return loss, recon, kl


def elbo_step(encoder, decoder, prior_net, x, enc_in, prior_in, dec_context, eps, beta):
    """Loss, ELBO terms, and gradients for every network in the stage."""
    loss, recon, kl, c = _elbo_forward(
        encoder, decoder, prior_net, x, enc_in, prior_in, dec_context, eps, beta
    )
    n = x.shape[0]

    # decoder head: Gaussian negative log-likelihood
    inv_var_x = np.exp(-c["lv_x"])
    d_mu_x = -c["diff_x"] * inv_var_x / n
    d_lv_x = 0.5 * (1.0 - c["diff_x"] ** 2 * inv_var_x) / n * c["x_mask"]
    dec_grads, d_dec_in = _backward_cached(
        decoder.mlp, c["dec_acts"], np.hstack([d_mu_x, d_lv_x])
    )
    d_latent = encoder.d_out
    dz = d_dec_in[:, -d_latent:]

    # KL contributions
    inv_var_p = np.exp(-c["lv_p"])
    scale = beta / n
    d_mu_q = scale * c["diff_q"] * inv_var_p
    d_lv_q = scale * 0.5 * (np.exp(c["lv_q"] - c["lv_p"]) - 1.0)

    # reparameterization path from the reconstruction term
    d_mu_q = d_mu_q + dz
    d_lv_q = d_lv_q + dz * eps * 0.5 * c["sigma_q"]

    enc_grads, _ = _backward_cached(
        encoder.mlp, c["enc_acts"], np.hstack([d_mu_q, d_lv_q * c["q_mask"]])
    )

    prior_grads = None
    if prior_net is not None:
        d_mu_p = -scale * c["diff_q"] * inv_var_p
        d_lv_p = scale * 0.5 * (
            1.0 - np.exp(c["lv_q"] - c["lv_p"]) - c["diff_q"] ** 2 * inv_var_p
        )
        prior_grads, _ = _backward_cached(
            prior_net.mlp, c["prior_acts"], np.hstack([d_mu_p, d_lv_p * c["p_mask"]])
        )

    return loss, recon, kl, enc_grads, dec_grads, prior_grads


def fit_vae(
    x_target: Array,
    enc_in: Array,
    prior_in: Array | None,
    dec_context: Array | None,
    cfg: VaeConfig,
) -> VaeCore:
    """Train one stage by mini-batch Adam on the negative ELBO."""
    cfg.validate()
    n, d_x = x_target.shape
    if enc_in.shape[0] != n:
        raise ShapeError("encoder input rows do not match target rows")
    if cfg.prior_mode == "env_conditioned" and prior_in is None:
        raise ParameterError("env_conditioned prior requires environment columns")

    encoder = gaussian_net_init(
        enc_in.shape[1], cfg.hidden, cfg.d_latent, rngmod.stream(cfg.seed, _K_INIT_ENC)
    )
    d_ctx = 0 if dec_context is None else dec_context.shape[1]
    decoder = gaussian_net_init(
        d_ctx + cfg.d_latent, cfg.hidden, d_x, rngmod.stream(cfg.seed, _K_INIT_DEC)
    )
    prior_net = None
    if cfg.prior_mode == "env_conditioned":
        prior_net = gaussian_net_init(
            prior_in.shape[1], cfg.hidden, cfg.d_latent, rngmod.stream(cfg.seed, _K_INIT_PRIOR)
        )

    opt_enc = adam_init(encoder.mlp, cfg.learning_rate)
    opt_dec = adam_init(decoder.mlp, cfg.learning_rate)
    opt_prior = adam_init(prior_net.mlp, cfg.learning_rate) if prior_net else None

    shuffle = rngmod.stream(cfg.seed, _K_SHUFFLE)
    noise = rngmod.stream(cfg.seed, _K_NOISE)
    log: list[dict] = []

    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        recon_sum = kl_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            eps = noise.standard_normal((len(idx), cfg.d_latent))
            loss, recon, kl, g_enc, g_dec, g_prior = elbo_step(
                encoder,
                decoder,
                prior_net,
                x_target[idx],
                enc_in[idx],
                None if prior_in is None else prior_in[idx],
                None if dec_context is None else dec_context[idx],
                eps,
                cfg.beta,
            )
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
            recon_sum += recon * len(idx)
            kl_sum += kl * len(idx)
            encoder.mlp, opt_enc = adam_step(encoder.mlp, g_enc, opt_enc)
            decoder.mlp, opt_dec = adam_step(decoder.mlp, g_dec, opt_dec)
            if prior_net is not None:
                prior_net.mlp, opt_prior = adam_step(prior_net.mlp, g_prior, opt_prior)
        recon_mean = recon_sum / n
        kl_mean = kl_sum / n
        log.append(
            {"recon": recon_mean, "kl": kl_mean, "elbo": recon_mean - cfg.beta * kl_mean}
        )

    return VaeCore(encoder, decoder, prior_net, cfg.d_latent, cfg.beta, log)


def posterior_mean(core: VaeCore, enc_in: Array) -> Array:
    """Encoder mean, the deterministic latent point estimate."""
    return gaussian_net_head(core.encoder, enc_in).mean


def prior_head(core: VaeCore, prior_in: Array | None, n: int) -> GaussianHead:
    if core.prior_net is None:
        return GaussianHead(np.zeros((n, core.d_latent)), np.zeros((n, core.d_latent)))
    return gaussian_net_head(core.prior_net, prior_in)


def core_elbo(
    core: VaeCore,
    x: Array,
    enc_in: Array,
    prior_in: Array | None,
    dec_context: Array | None,
    g: np.random.Generator,
) -> tuple[float, float, float]:
    """Single-sample (recon, kl, total) with total = recon - beta * kl."""
    eps = g.standard_normal((x.shape[0], core.d_latent))
    loss, recon, kl = elbo_value(
        core.encoder, core.decoder, core.prior_net, x, enc_in, prior_in, dec_context, eps, core.beta
    )
    return recon, kl, recon - core.beta * kl


def reconstruct_mean(core: VaeCore, enc_in: Array, dec_context: Array | None) -> Array:
    """Decoder mean evaluated at the posterior mean (no sampling)."""
    z = posterior_mean(core, enc_in)
    dec_in = z if dec_context is None else np.hstack([dec_context, z])
    return gaussian_net_head(core.decoder, dec_in).mean
