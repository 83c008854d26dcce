"""Objective terms for adversarial disparity fusion.

All expectations are realized as means (over valid pixels, neighbor pairs,
samples and patches), which keeps the loss weights resolution-independent.
Every term is differentiable w.r.t. the refined disparity; the critic
gradient penalty additionally supports differentiation through the
gradient-norm expression (second-order autodiff).
"""

from dataclasses import dataclass, field

import torch

from .core import GAN_JS, GAN_WGAN_GP
from .errors import ConfigurationError, ShapeError
from .validation import check_same_shape

_LOG_FLOOR = 1e-8
_NORM_EPS = 1e-12  # keeps the gradient of the penalty finite at zero gradient


@dataclass
class LossBreakdown:
    """Scalar parts plus the composed totals of one optimization step.

    ``gan_term_per_scale`` / ``gan_term_per_scale_d`` carry the refiner- and
    discriminator-side adversarial terms on labeled data; the ``_unlabeled``
    twins are empty outside semi mode.  ``gp_term`` is the lambda-weighted
    penalty summed over scales (already contained in the d terms).
    """

    l1_term: float = 0.0
    smooth_term: float = 0.0
    gan_term_per_scale: tuple = ()
    gan_term_per_scale_d: tuple = ()
    gan_term_per_scale_unlabeled: tuple = ()
    gan_term_per_scale_d_unlabeled: tuple = ()
    gp_term: float = 0.0
    total_refiner: float = 0.0
    total_discriminator: float = 0.0
    extras: dict = field(default_factory=dict)

    def as_dict(self):
        def f(v):
            return float(v)

        return {
            "l1": f(self.l1_term),
            "smooth": f(self.smooth_term),
            "gan_refiner": [f(v) for v in self.gan_term_per_scale],
            "gan_discriminator": [f(v) for v in self.gan_term_per_scale_d],
            "gan_refiner_unlabeled": [f(v) for v in self.gan_term_per_scale_unlabeled],
            "gan_discriminator_unlabeled": [
                f(v) for v in self.gan_term_per_scale_d_unlabeled
            ],
            "gp": f(self.gp_term),
            "total_refiner": f(self.total_refiner),
            "total_discriminator": f(self.total_discriminator),
            **{k: f(v) for k, v in self.extras.items()},
        }


# ---------------------------------------------------------------------------
# Data terms


def weighted_l1(refined, gt, gradient_map, alpha, valid_mask):
    """Gradient-weighted L1: mean over valid pixels of exp(alpha*|grad|)*|x - x~|.

    Pixels outside ``valid_mask`` are excluded from numerator and count; an
    all-invalid mask yields 0 by convention (sparse ground truth).
    """
    if alpha < 0:
        raise ConfigurationError(f"alpha must be >= 0, got {alpha}")
    check_same_shape(refined, gt, "refined", "gt")
    check_same_shape(refined, gradient_map, "refined", "gradient_map")
    check_same_shape(refined, valid_mask, "refined", "valid_mask")
    mask = valid_mask.bool()
    if not bool(mask.any()):
        return refined.sum() * 0.0
    weight = torch.exp(alpha * gradient_map)
    residual = (refined - gt).abs()
    return (weight * residual)[mask].mean()


def smoothness(refined, intensity, beta):
    """Edge-aware smoothness over right/down neighbor pairs.

    Each ordered pair (u, v) contributes exp(1 - beta*|I_u - I_v|) * |x~_u -
    x~_v|; the result is the mean over all pairs (border pixels without a
    neighbor contribute none).
    """
    if beta < 0:
        raise ConfigurationError(f"beta must be >= 0, got {beta}")
    check_same_shape(refined, intensity, "refined", "intensity")
    if refined.shape[-1] < 2 and refined.shape[-2] < 2:
        return refined.sum() * 0.0
    terms = []
    dx = (refined[..., :, 1:] - refined[..., :, :-1]).abs()
    if dx.numel():
        wx = torch.exp(1.0 - beta * (intensity[..., :, 1:] - intensity[..., :, :-1]).abs())
        terms.append((wx * dx).reshape(-1))
    dy = (refined[..., 1:, :] - refined[..., :-1, :]).abs()
    if dy.numel():
        wy = torch.exp(1.0 - beta * (intensity[..., 1:, :] - intensity[..., :-1, :]).abs())
        terms.append((wy * dy).reshape(-1))
    return torch.cat(terms).mean()


# ---------------------------------------------------------------------------
# Adversarial terms


def _check_probabilities(scores, what):
    for s in scores:
        lo, hi = float(s.detach().min()), float(s.detach().max())
        if lo < 0.0 or hi > 1.0:
            raise ConfigurationError(
                f"{what} scores outside (0,1): range [{lo:.4g}, {hi:.4g}]"
            )


def _safe_log(x):
    return torch.log(torch.clamp(x, min=_LOG_FLOOR))


def js_gan_terms(real_scores, fake_scores):
    """Per-scale JS-GAN losses from probability score maps.

    Discriminator loss is the negated two-sided log-likelihood; the refiner
    uses the non-saturating -log D(fake) form, which shares its fixed points
    with the minimax objective but keeps gradients alive early in training.
    """
    if len(real_scores) != len(fake_scores):
        raise ShapeError(
            f"{len(real_scores)} real score maps vs {len(fake_scores)} fake"
        )
    _check_probabilities(real_scores, "real")
    _check_probabilities(fake_scores, "fake")
    d_losses, r_losses = [], []
    for real, fake in zip(real_scores, fake_scores):
        d_losses.append(-(_safe_log(real).mean()) - (_safe_log(1.0 - fake).mean()))
        r_losses.append(-(_safe_log(fake).mean()))
    return d_losses, r_losses


def wgan_gp_terms(
    discriminator,
    condition_stack,
    real_disp,
    fake_disp,
    lambda_gp,
    rng,
    real_condition=None,
):
    """Per-scale critic losses with the unit-gradient-norm penalty.

    The interpolate x_hat = eps*real + (1-eps)*fake (eps ~ U(0,1), one draw
    per sample from ``rng``) mixes the disparity channel only; the condition
    stack passes through unchanged.  Real scores may be conditioned on their
    own stack via ``real_condition`` (used by the semi-supervised pairing of
    pool ground truth against unlabeled refinements).

    Returns (d_losses, r_losses, penalties); each d loss already contains its
    lambda-weighted penalty.
    """
    if lambda_gp <= 0:
        raise ConfigurationError(f"lambda_gp must be > 0, got {lambda_gp}")
    check_same_shape(real_disp, fake_disp, "real_disp", "fake_disp")
    real_scores = discriminator(
        condition_stack if real_condition is None else real_condition, real_disp
    )
    fake_scores = discriminator(condition_stack, fake_disp)
    if len(real_scores) != len(fake_scores):
        raise ShapeError("real/fake score map counts differ")

    b = fake_disp.shape[0]
    eps = torch.as_tensor(
        rng.random(b), dtype=fake_disp.dtype, device=fake_disp.device
    ).reshape((b,) + (1,) * (fake_disp.ndim - 1))
    # x_hat stays connected to its endpoints so the penalty is differentiable
    # w.r.t. the refined disparity; callers detach the fake when they only
    # want critic gradients (the trainer does).
    x_hat = eps * real_disp + (1.0 - eps) * fake_disp
    if not x_hat.requires_grad:
        x_hat.requires_grad_(True)
    hat_scores = discriminator(condition_stack, x_hat)

    d_losses, r_losses, penalties = [], [], []
    for real, fake, hat in zip(real_scores, fake_scores, hat_scores):
        grad = torch.autograd.grad(
            hat.sum(), x_hat, create_graph=True, retain_graph=True
        )[0]
        norms = torch.sqrt(grad.reshape(b, -1).pow(2).sum(dim=1) + _NORM_EPS)
        penalty = ((norms - 1.0) ** 2).mean()
        d_losses.append(fake.mean() - real.mean() + lambda_gp * penalty)
        r_losses.append(-fake.mean())
        penalties.append(lambda_gp * penalty)
    return d_losses, r_losses, penalties


def refiner_gan_terms(fake_scores, gan_kind):
    """Refiner-side adversarial terms from fake scores alone."""
    if gan_kind == GAN_JS:
        _check_probabilities(fake_scores, "fake")
        return [-(_safe_log(s).mean()) for s in fake_scores]
    if gan_kind == GAN_WGAN_GP:
        return [-s.mean() for s in fake_scores]
    raise ConfigurationError(f"unknown gan_kind {gan_kind!r}")


# ---------------------------------------------------------------------------
# Composition


def refiner_objective_supervised(l1_term, smooth_term, r_gan_terms, cfg):
    return cfg.theta1 * l1_term + cfg.theta2 * smooth_term + cfg.theta3 * sum(
        r_gan_terms
    )


def discriminator_objective_supervised(d_gan_terms, cfg):
    return cfg.theta3 * sum(d_gan_terms)


def refiner_objective_semi(l1_term, smooth_term, r_gan_labeled, r_gan_unlabeled, cfg):
    return (
        cfg.theta1 * l1_term
        + cfg.theta2 * smooth_term
        + (cfg.theta3 / 2.0) * (sum(r_gan_labeled) + sum(r_gan_unlabeled))
    )


def discriminator_objective_semi(d_gan_labeled, d_gan_unlabeled, cfg):
    return (cfg.theta3 / 2.0) * (sum(d_gan_labeled) + sum(d_gan_unlabeled))


def total_supervised(l1_term, smooth_term, r_gan_terms, d_gan_terms, cfg, gp_term=0.0):
    """Compose the fully supervised objective into a LossBreakdown."""
    return LossBreakdown(
        l1_term=l1_term,
        smooth_term=smooth_term,
        gan_term_per_scale=tuple(r_gan_terms),
        gan_term_per_scale_d=tuple(d_gan_terms),
        gp_term=gp_term,
        total_refiner=refiner_objective_supervised(l1_term, smooth_term, r_gan_terms, cfg),
        total_discriminator=discriminator_objective_supervised(d_gan_terms, cfg),
    )


def total_semi(
    l1_term,
    smooth_term,
    r_gan_labeled,
    d_gan_labeled,
    r_gan_unlabeled,
    d_gan_unlabeled,
    cfg,
    gp_term=0.0,
):
    """Compose the semi-supervised objective into a LossBreakdown.

    The unlabeled adversarial terms pair refined unlabeled disparities
    against ground truth sampled from the labeled pool; data terms come from
    the labeled batch alone.
    """
    if r_gan_unlabeled is None or d_gan_unlabeled is None:
        raise ConfigurationError("semi composition requires unlabeled GAN terms")
    return LossBreakdown(
        l1_term=l1_term,
        smooth_term=smooth_term,
        gan_term_per_scale=tuple(r_gan_labeled),
        gan_term_per_scale_d=tuple(d_gan_labeled),
        gan_term_per_scale_unlabeled=tuple(r_gan_unlabeled),
        gan_term_per_scale_d_unlabeled=tuple(d_gan_unlabeled),
        gp_term=gp_term,
        total_refiner=refiner_objective_semi(
            l1_term, smooth_term, r_gan_labeled, r_gan_unlabeled, cfg
        ),
        total_discriminator=discriminator_objective_semi(
            d_gan_labeled, d_gan_unlabeled, cfg
        ),
    )
