"""Mode-collapse and equilibrium diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GridMixtureSpec

EQUILIBRIUM_COST = 2.0


@dataclass(frozen=True)
class ModeReport:
    covered_modes: int
    hq_fraction: float
    counts: tuple[int, ...]


def nearest_modes(samples: np.ndarray, spec: GridMixtureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Index of and distance to the closest mode mean for each sample."""
    samples = np.asarray(samples, float).reshape(-1, 2)
    means = spec.means()
    d2 = ((samples[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
    idx = d2.argmin(axis=1)
    return idx, np.sqrt(d2[np.arange(len(idx)), idx])


def mode_coverage(
    samples: np.ndarray, spec: GridMixtureSpec = GridMixtureSpec(), radius_stds: float = 3.0, min_count: int = 5
) -> ModeReport:
    """Count modes reached by at least ``min_count`` samples within ``radius_stds`` stds."""
    if not radius_stds > 0:
        raise ValueError("radius_stds must be positive")
    samples = np.asarray(samples, float).reshape(-1, 2)
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    idx, dist = nearest_modes(samples, spec)
    good = np.isfinite(dist) & (dist <= radius_stds * spec.std)
    counts = np.bincount(idx[good], minlength=spec.n_modes)
    return ModeReport(
        covered_modes=int((counts >= min_count).sum()),
        hq_fraction=float(good.sum()) / len(samples),
        counts=tuple(int(c) for c in counts),
    )


def support_vector_fraction(scores_real, scores_fake) -> float:
    r, f = np.asarray(scores_real, float), np.asarray(scores_fake, float)
    if r.size == 0 or f.size == 0:
        raise ValueError("scores must be nonempty")
    inside = (np.abs(r) <= 1.0).sum() + (np.abs(f) <= 1.0).sum()
    return float(inside) / (r.size + f.size)


def hinge_cost(scores_real, scores_fake) -> float:
    """Penalty-free soft-margin cost ``mean [1 - D(x)]_+ + mean [1 + D(g(z))]_+``."""
    r, f = np.asarray(scores_real, float), np.asarray(scores_fake, float)
    return float(np.maximum(0.0, 1.0 - r).mean() + np.maximum(0.0, 1.0 + f).mean())


def equilibrium_gap(d_loss_geometric: float) -> float:
    """Distance of a penalty-free hinge cost from its equilibrium value 2."""
    return abs(d_loss_geometric - EQUILIBRIUM_COST)
