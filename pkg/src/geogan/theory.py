"""Closed forms and brute-force oracles for the convergence results.

These are deliberately independent of the autodiff/training stack: plain
numpy on discrete densities and scalar hinge functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DENSITY_TOL = 1e-12
# per-bin search interval for the brute-force oracle; wider than [-1, 1] on purpose
BRUTE_FORCE_RANGE = 3.0


@dataclass(frozen=True)
class DiscreteDensityPair:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p, q = np.asarray(self.p, float), np.asarray(self.q, float)
        if p.shape != q.shape or p.ndim != 1 or p.size == 0:
            raise ValueError("p and q must be nonempty 1-D arrays of equal length")
        if (p < 0).any() or (q < 0).any():
            raise ValueError("densities must be nonnegative")
        if abs(math.fsum(p) - 1.0) > DENSITY_TOL or abs(math.fsum(q) - 1.0) > DENSITY_TOL:
            raise ValueError("densities must sum to 1")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def bins(self) -> int:
        return self.p.size

    @classmethod
    def random(cls, rng: np.random.Generator, max_bins: int = 16, identical: bool = False):
        bins = int(rng.integers(1, max_bins + 1))
        p = rng.dirichlet(np.ones(bins))
        q = p.copy() if identical else rng.dirichlet(np.ones(bins))
        # renormalize with fsum so the sums are as exact as float64 allows
        return cls(p / math.fsum(p), q / math.fsum(q))


def phi_lemma1(y: float, m: float) -> float:
    """``(m - y) + [m + y]_+``; minimum ``2m`` on ``y >= -m``."""
    if not m > 0:
        raise ValueError("m must be positive")
    return (m - y) + max(0.0, m + y)


def phi_lemma2(y: float, alpha: float, beta: float, m: float) -> float:
    """``alpha [m - y]_+ + beta [m + y]_+``."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")
    if not m > 0:
        raise ValueError("m must be positive")
    return alpha * max(0.0, m - y) + beta * max(0.0, m + y)


def phi_lemma1_grid(y: np.ndarray, m: float) -> np.ndarray:
    return (m - y) + np.maximum(0.0, m + y)


def phi_lemma2_grid(y: np.ndarray, alpha: float, beta: float, m: float) -> np.ndarray:
    return alpha * np.maximum(0.0, m - y) + beta * np.maximum(0.0, m + y)


def lemma2_minimizer(alpha: float, beta: float, m: float) -> tuple[float, float]:
    """(minimum value, argmin) as stated: ``2 beta m`` at ``m`` if alpha > beta else ``2 alpha m`` at ``-m``."""
    if alpha > beta:
        return 2.0 * beta * m, m
    return 2.0 * alpha * m, -m


def optimal_discriminator_cost(d: DiscreteDensityPair) -> float:
    """Minimum over per-bin discriminator values of the penalty-free hinge cost: ``2 sum min(p, q)``.

    Evaluated as ``2 - sum |p - q|``, which is the same quantity when both sum
    to one, so that identical densities give exactly 2 despite rounding in
    the normalization.
    """
    return 2.0 - math.fsum(np.abs(d.p - d.q))


def per_bin_cost(p: np.ndarray, q: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``p [1 - D]_+ + q [1 + D]_+`` for every (bin, candidate) pair."""
    v = values[None, :]
    return p[:, None] * np.maximum(0.0, 1.0 - v) + q[:, None] * np.maximum(0.0, 1.0 + v)


def brute_force_discriminator_cost(
    d: DiscreteDensityPair, grid_step: float = 1e-3, half_width: float = BRUTE_FORCE_RANGE
) -> float:
    """Exhaustive per-bin minimization of the hinge cost over ``[-half_width, half_width]``."""
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    count = int(round(2 * half_width / grid_step)) + 1
    values = np.linspace(-half_width, half_width, count)
    return math.fsum(per_bin_cost(d.p, d.q, values).min(axis=1))


def parallel_lines_hyperplane(theta: float) -> tuple[np.ndarray, float]:
    """SVM hyperplane separating the line ``x = 0`` from the line ``x = theta``."""
    if theta >= 0:
        return np.array([-1.0, 0.0]), theta / 2.0
    return np.array([1.0, 0.0]), -theta / 2.0


def parallel_lines_generator_loss(theta: float) -> float:
    return abs(theta) / 2.0


def parallel_lines_discriminator_cost(theta: float) -> float:
    return 2.0 * max(0.0, 1.0 - abs(theta) / 2.0)


# ------------------------------------------------------------------ suite


def _check_hinge_sum(step: float) -> tuple[bool, str]:
    worst = 0.0
    for m in (0.5, 1.0, 2.0):
        y = np.arange(-5 * m, 5 * m + step / 2, step)
        phi = phi_lemma1_grid(y, m)
        flat = y[np.isclose(phi, 2 * m, rtol=0, atol=1e-9)]
        worst = max(worst, abs(phi.min() - 2 * m), abs(flat.min() + m))
    return worst <= 2 * step, f"max deviation {worst:.2e}"


def _check_weighted_hinge(step: float, rng: np.random.Generator, trials: int = 50) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(trials):
        alpha, beta, m = rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0.1, 3)
        y = np.arange(-5 * m, 5 * m + step / 2, step)
        phi = phi_lemma2_grid(y, alpha, beta, m)
        worst = max(worst, abs(phi.min() - 2 * min(alpha, beta) * m))
    return worst <= 2e-3, f"max deviation {worst:.2e}"


def _check_optimal_cost(step: float, rng: np.random.Generator, pairs: int = 1000) -> tuple[bool, str]:
    worst, iff = 0.0, True
    for k in range(pairs):
        d = DiscreteDensityPair.random(rng, identical=(k % 10 == 0))
        closed = optimal_discriminator_cost(d)
        worst = max(worst, abs(closed - brute_force_discriminator_cost(d, step)))
        iff &= (closed == 2.0) == bool(np.array_equal(d.p, d.q))
    return worst <= 2 * step and iff, f"max |closed - brute| {worst:.2e}, equality iff p=q: {iff}"


def _check_parallel_lines(rng: np.random.Generator, n: int = 100_000) -> tuple[bool, str]:
    worst = 0.0
    for theta in (-3.0, -1.0, -0.25, 0.0, 0.5, 2.0):
        w, b = parallel_lines_hyperplane(theta)
        real = np.column_stack([np.zeros(n), rng.uniform(size=n)])
        fake = np.column_stack([np.full(n, theta), rng.uniform(size=n)])
        sr, sf = real @ w + b, fake @ w + b
        cost = float(np.maximum(0, 1 - sr).mean() + np.maximum(0, 1 + sf).mean())
        worst = max(worst, abs(cost - parallel_lines_discriminator_cost(theta)))
        worst = max(worst, abs(-float(sf.mean()) - parallel_lines_generator_loss(theta)))
    return worst < 1e-2, f"max Monte Carlo deviation {worst:.2e}"


def theory_suite(seed: int = 0, grid_step: float = 1e-3) -> list[tuple[str, bool, str]]:
    """Run every closed-form check; returns ``(name, passed, detail)`` rows."""
    rng = np.random.default_rng(seed)
    return [
        ("hinge-sum-minimum", *_check_hinge_sum(grid_step)),
        ("weighted-hinge-minimum", *_check_weighted_hinge(grid_step, rng)),
        ("optimal-discriminator-cost", *_check_optimal_cost(grid_step, rng)),
        ("parallel-lines", *_check_parallel_lines(rng)),
    ]
