"""Synthetic datasets, latent samplers and seeded random streams."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

# stream indices per (run, role); distinct roles never share a generator
STREAM_INIT_D = 0
STREAM_INIT_G = 1
STREAM_DATA = 2
STREAM_LATENT = 3
STREAM_EVAL = 4
STREAM_POOL = 5


@dataclass(frozen=True)
class RngStream:
    """A Philox (counter-based) generator keyed by ``(seed, stream)``."""

    seed: int
    stream: int = 0
    algorithm: str = "philox"

    def generator(self) -> np.random.Generator:
        if self.algorithm != "philox":
            raise ValueError(f"unsupported algorithm {self.algorithm!r}")
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class GridMixtureSpec:
    grid_side: int = 5
    low: float = -21.0
    high: float = 21.0
    std: float = 0.316

    @property
    def n_modes(self) -> int:
        return self.grid_side**2

    def means(self) -> np.ndarray:
        """Mode means, row-major over (x, y)."""
        axis = np.linspace(self.low, self.high, self.grid_side)
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])


def sample_grid_mixture(spec: GridMixtureSpec, n: int, rng, return_modes: bool = False):
    if n < 1:
        raise ValueError("n must be at least 1")
    g = _gen(rng)
    modes = g.integers(0, spec.n_modes, size=n)
    points = spec.means()[modes] + spec.std * g.standard_normal((n, 2))
    return (points, modes) if return_modes else points


def sample_latent(n: int, dim: int, rng) -> np.ndarray:
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be at least 1")
    return _gen(rng).standard_normal((n, dim))


def sample_parallel_lines_real(n: int, rng) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    u = _gen(rng).uniform(0.0, 1.0, size=n)
    return np.column_stack([np.zeros(n), u])


def parallel_lines_generator(theta, z) -> ad.Tensor | np.ndarray:
    """Rows ``(theta, z_i)``; differentiable when ``theta`` is a graph node."""
    z = np.asarray(z, float).reshape(-1)
    if not isinstance(theta, ad.Tensor):
        return np.column_stack([np.full(z.size, float(theta)), z])
    selector = np.tile([1.0, 0.0], (z.size, 1))
    return ad.mul(theta, selector) + np.column_stack([np.zeros(z.size), z])


class LinesGenerator:
    """The one-parameter generator ``g_theta(z) = (theta, z)``."""

    latent_dim = 1

    def __init__(self, theta0: float = 2.0, name: str = "G.theta"):
        self.params = ad.ParamSet()
        self.theta = self.params.add(ad.parameter(np.array([float(theta0)]), name), "theta")

    def __call__(self, z) -> ad.Tensor:
        z = z.value if isinstance(z, ad.Tensor) else z
        return parallel_lines_generator(self.theta, z)


def write_points_csv(path: str | Path, points: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in np.asarray(points, float):
            w.writerow([f"{x:.6f}", f"{y:.6f}"])


# ------------------------------------------------------------ minibatch feeds


class GridData:
    """Real minibatches from a fixed pool (without replacement per epoch) and normal latents."""

    def __init__(self, seed: int, spec: GridMixtureSpec = GridMixtureSpec(), pool_size: int = 100_000,
                 latent_dim: int = 4, fixed_pool: bool = True):
        self.spec = spec
        self.latent_dim = latent_dim
        self.fixed_pool = fixed_pool
        self._data_rng = RngStream(seed, STREAM_DATA).generator()
        self._latent_rng = RngStream(seed, STREAM_LATENT).generator()
        self.pool = sample_grid_mixture(spec, pool_size, RngStream(seed, STREAM_POOL)) if fixed_pool else None
        self._order = np.empty(0, dtype=np.int64)
        self._cursor = 0

    def real(self, n: int) -> np.ndarray:
        if not self.fixed_pool:
            return sample_grid_mixture(self.spec, n, self._data_rng)
        if n > len(self.pool):
            raise ValueError("batch larger than the data pool")
        if self._cursor + n > self._order.size:
            self._order = self._data_rng.permutation(len(self.pool))
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + n]
        self._cursor += n
        return self.pool[idx]

    def latent(self, n: int) -> np.ndarray:
        return sample_latent(n, self.latent_dim, self._latent_rng)


class LinesData:
    latent_dim = 1

    def __init__(self, seed: int):
        self._data_rng = RngStream(seed, STREAM_DATA).generator()
        self._latent_rng = RngStream(seed, STREAM_LATENT).generator()

    def real(self, n: int) -> np.ndarray:
        return sample_parallel_lines_real(n, self._data_rng)

    def latent(self, n: int) -> np.ndarray:
        return self._latent_rng.uniform(0.0, 1.0, size=(n, 1))
