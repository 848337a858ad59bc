"""Discriminator/generator objectives for the adversarial variants.

Every variant is described the same way: the discriminator is a feature map
followed by a linear classifier, and the variants differ in which separating
hyperplane they search for and in the per-sample scaling factors ``(t_i, s_i)``
that weight true and fake feature vectors in the updates.

Loss functions accept plain arrays (and then return floats) or graph nodes
(and then return graph nodes, ready for :func:`geogan.autodiff.backward`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

KINDS = ("geometric", "mean-difference", "wgan", "vanilla-gan", "fgan", "ebgan", "erm")
DIVERGENCES = ("total-variation", "kl", "reverse-kl", "pearson-chi2", "jensen-shannon", "gan")


class VariantError(ValueError):
    pass


@dataclass(frozen=True)
class VariantSpec:
    kind: str
    divergence: str | None = None
    C: float | None = None
    margin: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise VariantError(f"unknown variant kind {self.kind!r}; expected one of {KINDS}")
        if (self.kind == "fgan") != (self.divergence is not None):
            raise VariantError("divergence is required for fgan and only for fgan")
        if self.divergence is not None and self.divergence not in DIVERGENCES:
            raise VariantError(f"unknown divergence {self.divergence!r}")
        if (self.kind == "geometric") != (self.C is not None):
            raise VariantError("C is required for geometric and only for geometric")
        if self.C is not None and not self.C > 0:
            raise VariantError("C must be positive")
        if (self.kind == "ebgan") != (self.margin is not None):
            raise VariantError("margin is required for ebgan and only for ebgan")
        if self.margin is not None and not self.margin > 0:
            raise VariantError("margin must be positive")

    @property
    def name(self) -> str:
        return f"fgan-{self.divergence}" if self.kind == "fgan" else self.kind


@dataclass(frozen=True)
class ScalingFactors:
    t: np.ndarray
    s: np.ndarray


@dataclass
class LossPair:
    d_loss: Tensor
    g_loss: Tensor


def _lift(*xs):
    graph = any(isinstance(x, Tensor) for x in xs)
    return graph, [ad.as_tensor(x) for x in xs]


def _out(graph: bool, t: Tensor):
    return t if graph else t.item()


def _check_nonempty(*xs):
    for x in xs:
        v = x.value if isinstance(x, Tensor) else np.asarray(x)
        if v.size == 0:
            raise VariantError("score sequences must be nonempty")


# ----------------------------------------------------------- geometric (SVM)


def svm_discriminator_loss(scores_real, scores_fake, w_norm_sq, C: float = 1.0, n: int | None = None):
    """Soft-margin SVM hinge objective in loss + penalty form.

    ``||w||^2 / (2 C n) + mean [1 - D(x)]_+ + mean [1 + D(g(z))]_+``. Pass
    ``w_norm_sq=0`` for the penalty-free population cost.
    """
    graph, (r, f, wsq) = _lift(scores_real, scores_fake, w_norm_sq)
    _check_nonempty(r, f)
    if r.shape != f.shape:
        raise VariantError(f"real/fake batch sizes differ: {r.shape} vs {f.shape}")
    n = r.value.size if n is None else n
    if n != r.value.size:
        raise VariantError(f"n={n} does not match batch size {r.value.size}")
    if not C > 0:
        raise VariantError("C must be positive")
    real_term = ad.mean(ad.hinge(1.0 - r))
    fake_term = ad.mean(ad.hinge(1.0 + f))
    return _out(graph, wsq * (1.0 / (2.0 * C * n)) + real_term + fake_term)


def svm_generator_loss(scores_fake):
    graph, (f,) = _lift(scores_fake)
    _check_nonempty(f)
    return _out(graph, -ad.mean(f))


def margin_membership(score: float) -> bool:
    return abs(score) <= 1.0


def geometric_scaling(scores_real, scores_fake) -> ScalingFactors:
    """Binary factors: 1 for feature vectors inside the closed margin band."""
    r, f = np.asarray(scores_real, float), np.asarray(scores_fake, float)
    if r.size == 0 or f.size == 0:
        raise VariantError("score sequences must be nonempty")
    return ScalingFactors((np.abs(r) <= 1.0).astype(float), (np.abs(f) <= 1.0).astype(float))


# ---------------------------------------------------------------- GAN family


def _sigmoid(u):
    return ad.sigmoid(ad.as_tensor(np.atleast_1d(np.asarray(u, float)))).value


def gan_scaling(u_real, u_fake) -> ScalingFactors:
    """Sigmoid-output GAN: ``t = 1 - D(x)``, ``s = D(g(z))``."""
    return ScalingFactors(1.0 - _sigmoid(u_real), _sigmoid(u_fake))


def vanilla_gan_losses(logits_real, logits_fake) -> LossPair:
    """Minimax GAN with ``D = sigmoid(logit)``.

    ``log D(x) = -softplus(-u)`` and ``log(1 - D(x)) = -softplus(u)``.
    """
    _, (r, f) = _lift(logits_real, logits_fake)
    _check_nonempty(r, f)
    d_loss = ad.mean(ad.softplus(-r)) + ad.mean(ad.softplus(f))
    g_loss = -ad.mean(ad.softplus(f))
    return LossPair(d_loss, g_loss)


@dataclass(frozen=True)
class Divergence:
    """Output activation ``S_f``, conjugate ``f*`` and their fused composition.

    ``fake_term(v) = f*(S_f(v))`` written in a numerically stable form.
    ``t`` and ``s`` are the closed-form scaling factors
    ``S_f'(u)`` and ``(f*)'(S_f(u)) S_f'(u)``.
    """

    name: str
    activation: Callable[[Tensor], Tensor]
    conjugate: Callable[[Tensor], Tensor]
    fake_term: Callable[[Tensor], Tensor]
    t: Callable[[np.ndarray], np.ndarray]
    s: Callable[[np.ndarray], np.ndarray]


_LOG2 = float(np.log(2.0))


def _sech2_half(u):
    return 0.5 / np.cosh(u) ** 2


DIVERGENCE_TABLE: dict[str, Divergence] = {
    "total-variation": Divergence(
        "total-variation",
        activation=lambda v: 0.5 * ad.tanh(v),
        conjugate=lambda t: t,
        fake_term=lambda v: 0.5 * ad.tanh(v),
        t=_sech2_half,
        s=_sech2_half,
    ),
    "kl": Divergence(
        "kl",
        activation=lambda v: v,
        conjugate=lambda t: ad.exp(t - 1.0),
        fake_term=lambda v: ad.exp(v - 1.0),
        t=lambda u: np.ones_like(u),
        s=lambda u: np.exp(u - 1.0),
    ),
    "reverse-kl": Divergence(
        "reverse-kl",
        activation=lambda v: -ad.exp(v),
        conjugate=lambda t: -1.0 - ad.log(-t),
        fake_term=lambda v: -1.0 - v,
        t=lambda u: -np.exp(u),
        s=lambda u: -np.ones_like(u),
    ),
    "pearson-chi2": Divergence(
        "pearson-chi2",
        activation=lambda v: v,
        conjugate=lambda t: 0.25 * ad.square(t) + t,
        fake_term=lambda v: 0.25 * ad.square(v) + v,
        t=lambda u: np.ones_like(u),
        s=lambda u: u / 2.0 + 1.0,
    ),
    "jensen-shannon": Divergence(
        "jensen-shannon",
        activation=lambda v: _LOG2 - ad.softplus(-v),
        conjugate=lambda t: -ad.log(2.0 - ad.exp(t)),
        # 2 - exp(S_f(v)) = 2 sigmoid(-v)
        fake_term=lambda v: ad.softplus(v) - _LOG2,
        t=lambda u: 1.0 - _sigmoid(u).reshape(np.shape(u)),
        s=lambda u: _sigmoid(u).reshape(np.shape(u)),
    ),
    "gan": Divergence(
        "gan",
        activation=lambda v: -ad.softplus(-v),
        conjugate=lambda t: -ad.log(1.0 - ad.exp(t)),
        fake_term=lambda v: ad.softplus(v),
        t=lambda u: 1.0 - _sigmoid(u).reshape(np.shape(u)),
        s=lambda u: _sigmoid(u).reshape(np.shape(u)),
    ),
}


def _divergence(name: str) -> Divergence:
    try:
        return DIVERGENCE_TABLE[name]
    except KeyError:
        raise VariantError(f"unknown divergence {name!r}; expected one of {DIVERGENCES}") from None


def fgan_scaling(divergence: str, u_real, u_fake) -> ScalingFactors:
    """Closed-form factors, each evaluated at its own sample's score."""
    d = _divergence(divergence)
    r, f = np.asarray(u_real, float), np.asarray(u_fake, float)
    return ScalingFactors(d.t(r), d.s(f))


def fgan_scaling_autodiff(divergence: str, u) -> ScalingFactors:
    """Same factors obtained by differentiating the ``S_f`` / ``f*`` compositions."""
    d = _divergence(divergence)
    u = np.atleast_1d(np.asarray(u, float))
    ut = ad.as_tensor(u.copy())
    ad.backward(ad.total(d.activation(ut)))
    dsf = ut.grad
    v = ad.as_tensor(d.activation(ad.as_tensor(u)).value.copy())
    ad.backward(ad.total(d.conjugate(v)))
    return ScalingFactors(dsf.copy(), v.grad * dsf)


def fgan_losses(divergence: str, scores_real, scores_fake) -> LossPair:
    """Variational f-divergence objective ``mean S_f(V(x)) - mean f*(S_f(V(g(z))))``.

    The discriminator maximizes it, the generator minimizes its fake term.
    """
    d = _divergence(divergence)
    _, (r, f) = _lift(scores_real, scores_fake)
    _check_nonempty(r, f)
    fake = ad.mean(d.fake_term(f))
    return LossPair(fake - ad.mean(d.activation(r)), -fake)


# ------------------------------------------------------ IPM / mean matching


def wgan_losses(scores_real, scores_fake) -> LossPair:
    _, (r, f) = _lift(scores_real, scores_fake)
    _check_nonempty(r, f)
    return LossPair(ad.mean(f) - ad.mean(r), -ad.mean(f))


def mean_difference_direction(features_real, features_fake) -> np.ndarray:
    """Difference of class means, the normal of the mean-difference classifier."""
    a, b = np.asarray(features_real, float), np.asarray(features_fake, float)
    if a.shape != b.shape:
        raise VariantError(f"feature shape mismatch {a.shape} vs {b.shape}")
    return a.mean(axis=0) - b.mean(axis=0)


def mcgan_losses(features_real, features_fake) -> LossPair:
    """Dual mean-matching objective ``1/2 ||mean phi(x) - mean phi(g(z))||^2``.

    The discriminator's feature map maximizes it and the generator minimizes it.
    """
    _, (a, b) = _lift(features_real, features_fake)
    if a.shape != b.shape:
        raise VariantError(f"feature shape mismatch {a.shape} vs {b.shape}")
    diff = ad.mean(a, axis=0) - ad.mean(b, axis=0)
    half_sq = 0.5 * ad.total(ad.square(diff))
    return LossPair(-half_sq, half_sq)


def erm_pairwise_loss(features_real, features_fake):
    """``1/2 sum_i ||phi(x_i) - phi(g(z_i))||^2`` over paired rows."""
    graph, (a, b) = _lift(features_real, features_fake)
    if a.shape != b.shape:
        raise VariantError(f"paired batches differ: {a.shape} vs {b.shape}")
    return _out(graph, 0.5 * ad.total(ad.square(a - b)))


def erm_losses(features_real, features_fake) -> LossPair:
    """Per-pair regression; batch-averaged so it matches the 1/n update rules."""
    _, (a, b) = _lift(features_real, features_fake)
    n = a.shape[0]
    cost = erm_pairwise_loss(a, b) * (1.0 / n)
    return LossPair(-cost, cost)


# ------------------------------------------------------------------- EB-GAN


def ebgan_losses(scores_real, scores_fake, m: float) -> LossPair:
    if not m > 0:
        raise VariantError("margin must be positive")
    _, (r, f) = _lift(scores_real, scores_fake)
    _check_nonempty(r, f)
    d_loss = ad.mean(r) + ad.mean(ad.hinge(m - f))
    return LossPair(d_loss, ad.mean(f))


# ------------------------------------------------------------------ dispatch


def clip_hyperplane(variant: VariantSpec, disc) -> None:
    """Variant-owned constraint on the final-layer normal ``w``.

    The Wasserstein variant searches its hyperplane normal on the unit
    l-infinity ball; no other variant constrains ``w`` directly.
    """
    if variant.kind == "wgan":
        w = disc.head_weight
        np.clip(w.value, -1.0, 1.0, out=w.value)


def build_losses(variant: VariantSpec, disc, real_x, fake_x) -> LossPair:
    """Wire the variant's objectives onto ``disc`` applied to both batches.

    ``fake_x`` may be a graph node (generator step) or a plain array
    (discriminator step, generator held fixed).
    """
    real_x, fake_x = ad.as_tensor(real_x), ad.as_tensor(fake_x)
    if real_x.shape != fake_x.shape:
        raise VariantError(f"minibatch shapes differ: {real_x.shape} vs {fake_x.shape}")
    kind = variant.kind
    if kind in ("mean-difference", "erm"):
        fr, ff = disc.features(real_x), disc.features(fake_x)
        return mcgan_losses(fr, ff) if kind == "mean-difference" else erm_losses(fr, ff)
    sr, sf = disc(real_x), disc(fake_x)
    if kind == "geometric":
        w = disc.head_weight
        d_loss = svm_discriminator_loss(sr, sf, ad.total(ad.square(w)), variant.C, sr.shape[0])
        return LossPair(d_loss, svm_generator_loss(sf))
    if kind == "wgan":
        return wgan_losses(sr, sf)
    if kind == "vanilla-gan":
        return vanilla_gan_losses(sr, sf)
    if kind == "fgan":
        return fgan_losses(variant.divergence, sr, sf)
    if kind == "ebgan":
        return ebgan_losses(sr, sf, variant.margin)
    raise VariantError(kind)  # pragma: no cover


def generator_loss(variant: VariantSpec, disc, fake_x, real_x=None) -> Tensor:
    """Only the generator objective; real samples are needed just for the feature-matching kinds."""
    if variant.kind in ("mean-difference", "erm"):
        if real_x is None:
            raise VariantError(f"{variant.kind} generator loss needs real samples")
        return build_losses(variant, disc, real_x, fake_x).g_loss
    sf = disc(ad.as_tensor(fake_x))
    kind = variant.kind
    if kind in ("geometric", "wgan"):
        return -ad.mean(sf)
    if kind == "vanilla-gan":
        return -ad.mean(ad.softplus(sf))
    if kind == "fgan":
        return -ad.mean(_divergence(variant.divergence).fake_term(sf))
    return ad.mean(sf)  # ebgan


def scaling_factors(variant: VariantSpec, scores_real, scores_fake) -> ScalingFactors:
    """The variant's ``(t_i, s_i)`` evaluated at the given discriminator scores."""
    r, f = np.asarray(scores_real, float), np.asarray(scores_fake, float)
    kind = variant.kind
    if kind == "geometric":
        return geometric_scaling(r, f)
    if kind in ("wgan", "mean-difference", "erm"):
        return ScalingFactors(np.ones_like(r), np.ones_like(f))
    if kind == "vanilla-gan":
        return gan_scaling(r, f)
    if kind == "fgan":
        return fgan_scaling(variant.divergence, r, f)
    # EB-GAN with a linear output: t = 1, fake factor drops out beyond the margin
    return ScalingFactors(np.ones_like(r), ((f >= 0) & (f <= variant.margin)).astype(float))
