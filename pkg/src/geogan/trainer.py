"""Alternating minimization: optimizers, Lipschitz-style constraints, and the training loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

import numpy as np

from . import autodiff as ad
from . import metrics
from .variants import VariantSpec, build_losses, clip_hyperplane, generator_loss

# ---------------------------------------------------------------- optimizers


def rmsprop_step(p, g, v, lr: float, decay: float = 0.9, eps: float = 1e-8):
    """One RMSprop update; returns ``(new_param, new_second_moment)``."""
    if not 0 < decay < 1:
        raise ValueError("decay must lie in (0, 1)")
    if not eps > 0:
        raise ValueError("eps must be positive")
    p, g, v = np.asarray(p, float), np.asarray(g, float), np.asarray(v, float)
    if not (p.shape == g.shape == v.shape):
        raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {v.shape}")
    v = decay * v + (1.0 - decay) * g * g
    return p - lr * g / (np.sqrt(v) + eps), v


def adam_step(p, g, m, v, t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update at step ``t`` (1-based); returns ``(param, m, v)``."""
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError("betas must lie in [0, 1)")
    p, g = np.asarray(p, float), np.asarray(g, float)
    if not (p.shape == g.shape == np.shape(m) == np.shape(v)):
        raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return p - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


@dataclass
class RMSprop:
    lr: float
    decay: float = 0.9
    eps: float = 1e-8
    state: dict = field(default_factory=dict)

    def step(self, tensors: Iterable[ad.Tensor], grads: dict[str, np.ndarray]) -> None:
        for t in tensors:
            v = self.state.get(t.name)
            if v is None:
                v = np.zeros_like(t.value)
            t.value, self.state[t.name] = rmsprop_step(t.value, grads[t.name], v, self.lr, self.decay, self.eps)


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: dict = field(default_factory=dict)
    steps: int = 0

    def step(self, tensors: Iterable[ad.Tensor], grads: dict[str, np.ndarray]) -> None:
        self.steps += 1
        for t in tensors:
            m, v = self.state.get(t.name, (np.zeros_like(t.value), np.zeros_like(t.value)))
            t.value, m, v = adam_step(t.value, grads[t.name], m, v, self.steps, self.lr, self.beta1, self.beta2, self.eps)
            self.state[t.name] = (m, v)


# --------------------------------------------------------------- constraints


def clip_weights(tensors: Iterable[ad.Tensor], c: float) -> None:
    if not c > 0:
        raise ValueError("clip value must be positive")
    for t in tensors:
        np.clip(t.value, -c, c, out=t.value)


def project_unit_l2(tensors: Iterable[ad.Tensor]) -> None:
    """``p <- min(1, 1/||p||_2) p`` per tensor; zero tensors are left alone."""
    for t in tensors:
        norm = float(np.sqrt((t.value**2).sum()))
        if norm > 1.0:
            t.value = t.value / norm


def weight_decay_step(tensors: Iterable[ad.Tensor], lam: float, lr: float) -> None:
    if lam < 0:
        raise ValueError("weight decay must be nonnegative")
    for t in tensors:
        t.value = t.value - lr * lam * t.value


CONSTRAINT_MODES = ("none", "clip", "l2-project", "weight-decay")
DEFAULT_SCOPE = {
    "none": (),
    "clip": ("zeta",),
    "l2-project": ("zeta",),
    "weight-decay": ("zeta", "theta"),
}


@dataclass(frozen=True)
class Constraint:
    mode: str = "none"
    value: float = 0.0
    scope: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.mode not in CONSTRAINT_MODES:
            raise ValueError(f"unknown constraint mode {self.mode!r}")
        if self.mode == "clip" and not self.value > 0:
            raise ValueError("clip needs a positive value")
        if self.mode == "weight-decay" and self.value < 0:
            raise ValueError("weight decay must be nonnegative")

    @property
    def partitions(self) -> tuple[str, ...]:
        return DEFAULT_SCOPE[self.mode] if self.scope is None else self.scope

    def apply(self, params: ad.ParamSet, lr: float) -> None:
        tensors = [params[n] for n in params.names(self.partitions)]
        if not tensors:
            return
        if self.mode == "clip":
            clip_weights(tensors, self.value)
        elif self.mode == "l2-project":
            project_unit_l2(tensors)
        elif self.mode == "weight-decay":
            weight_decay_step(tensors, self.value, lr)


# ------------------------------------------------------------------- config


@dataclass(frozen=True)
class TrainConfig:
    variant: VariantSpec
    optimizer: str = "rmsprop"
    lr: float = 1e-3
    batch: int = 500
    k_d: int = 1
    k_g: int = 1
    constraint: Constraint = Constraint()
    steps: int = 1000
    seed: int = 0
    log_every: int = 100
    beta1: float = 0.5
    beta2: float = 0.999
    rms_decay: float = 0.9
    eps: float = 1e-8
    timing: bool = False

    def __post_init__(self):
        if self.optimizer not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch < 1 or self.k_d < 1 or self.k_g < 1 or self.steps < 1 or self.log_every < 1:
            raise ValueError("batch, k_d, k_g, steps and log_every must be positive")

    def make_optimizer(self):
        if self.optimizer == "rmsprop":
            return RMSprop(self.lr, self.rms_decay, self.eps)
        return Adam(self.lr, self.beta1, self.beta2, self.eps)


@dataclass(frozen=True)
class Record:
    step: int
    d_loss: float
    g_loss: float
    sv_fraction: float
    equilibrium_gap: float
    covered_modes: float = math.nan
    hq_fraction: float = math.nan
    wall_ms: float = 0.0


@dataclass(frozen=True)
class Abort:
    step: int
    loss: str
    value: float


@dataclass
class RunHistory:
    records: list[Record] = field(default_factory=list)
    abort: Abort | None = None

    def append(self, rec: Record) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("history steps must increase strictly")
        self.records.append(rec)

    @property
    def finished(self) -> bool:
        return self.abort is None


class Data(Protocol):
    def real(self, n: int) -> np.ndarray: ...

    def latent(self, n: int) -> np.ndarray: ...


class NonFinite(Exception):
    def __init__(self, loss: str, value: float):
        super().__init__(f"{loss} is not finite ({value})")
        self.loss, self.value = loss, value


def _check(name: str, t: ad.Tensor) -> float:
    v = t.item()
    if not math.isfinite(v):
        raise NonFinite(name, v)
    return v


def batchnorm_in(model) -> bool:
    spec = getattr(model, "spec", None)
    return bool(spec is not None and any(spec.batchnorm))


def discriminator_step(config: TrainConfig, disc, gen, d_params: ad.ParamSet, opt, data: Data):
    real = data.real(config.batch)
    fake = gen(data.latent(config.batch)).value
    losses = build_losses(config.variant, disc, real, fake)
    d_loss = _check("d_loss", losses.d_loss)
    grads = ad.backward(losses.d_loss, d_params)
    opt.step(d_params, grads)
    clip_hyperplane(config.variant, disc)
    config.constraint.apply(d_params, config.lr)
    return d_loss, real, fake


def generator_step(config: TrainConfig, disc, gen, g_params: ad.ParamSet, opt, data: Data):
    fake = gen(data.latent(config.batch))
    real = data.real(config.batch) if config.variant.kind in ("mean-difference", "erm") else None
    loss = generator_loss(config.variant, disc, fake, real)
    g_loss = _check("g_loss", loss)
    grads = ad.backward(loss, g_params)
    opt.step(g_params, grads)
    config.constraint.apply(g_params, config.lr)
    return g_loss


def train(
    config: TrainConfig,
    disc,
    gen,
    data: Data,
    evaluate: Callable[[object], dict] | None = None,
    sink: Callable[[Record], None] | None = None,
) -> RunHistory:
    """Run ``config.steps`` cycles of K_d discriminator then K_g generator steps.

    Discriminator steps update only the ``w``, ``b`` and ``zeta`` partitions;
    generator steps only ``theta``. ``evaluate(gen)`` may add ``covered_modes``
    and ``hq_fraction`` to each logged record. A non-finite loss stops the run
    and is reported in ``RunHistory.abort``.
    """
    if config.batch < 2 and (batchnorm_in(gen) or batchnorm_in(disc)):
        raise ValueError("batchnorm layers need batch >= 2")
    d_params, g_params = disc.params, gen.params
    opt_d, opt_g = config.make_optimizer(), config.make_optimizer()
    history = RunHistory()
    start = time.perf_counter()
    step = 0
    # overflow is caught by the explicit finiteness check on every loss
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            for step in range(1, config.steps + 1):
                for _ in range(config.k_d):
                    d_loss, real, fake = discriminator_step(config, disc, gen, d_params, opt_d, data)
                for _ in range(config.k_g):
                    g_loss = generator_step(config, disc, gen, g_params, opt_g, data)
                if step % config.log_every == 0 or step == config.steps:
                    rec = _record(config, disc, gen, step, d_loss, g_loss, real, fake, evaluate, start)
                    history.append(rec)
                    if sink is not None:
                        sink(rec)
        except NonFinite as exc:
            history.abort = Abort(step, exc.loss, exc.value)
    return history


def _record(config, disc, gen, step, d_loss, g_loss, real, fake, evaluate, start) -> Record:
    sr, sf = disc(real).value, disc(fake).value
    extra = evaluate(gen) if evaluate is not None else {}
    wall = (time.perf_counter() - start) * 1000.0 if config.timing else 0.0
    return Record(
        step=step,
        d_loss=d_loss,
        g_loss=g_loss,
        sv_fraction=metrics.support_vector_fraction(sr, sf),
        equilibrium_gap=metrics.equilibrium_gap(metrics.hinge_cost(sr, sf)),
        covered_modes=extra.get("covered_modes", math.nan),
        hq_fraction=extra.get("hq_fraction", math.nan),
        wall_ms=wall,
    )
