"""Reference augmenters: SMOTE interpolation and a capacity-matched classical GAN."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import neural as nn
from .errors import InvalidArgumentError
from .qgan_train import HybridGenerator, MLPGenerator, TrainConfig, TrainResult, fit_adversarial


@dataclass(frozen=True)
class SmoteConfig:
    n_samples: int
    k_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 0 or self.k_neighbors < 1:
            raise InvalidArgumentError("SmoteConfig needs n_samples >= 0 and k_neighbors >= 1")


@dataclass(frozen=True)
class SmoteResult:
    samples: np.ndarray
    base: np.ndarray  # index of the row each sample starts from
    neighbor: np.ndarray  # index of the neighbor it moves towards
    step: np.ndarray  # interpolation weight in [0, 1)


def nearest_neighbors(x: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows (Euclidean, ties broken by index)."""
    sq = np.sum(x * x, axis=1)
    dist = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def smote_generate(minority, config: SmoteConfig) -> SmoteResult:
    x = np.atleast_2d(np.asarray(minority, dtype=float))
    if x.shape[0] <= config.k_neighbors:
        raise InvalidArgumentError(
            f"SMOTE needs more than k_neighbors={config.k_neighbors} minority rows, got {x.shape[0]}")
    rng = np.random.default_rng(config.seed)
    nbrs = nearest_neighbors(x, config.k_neighbors)
    n = config.n_samples
    base = rng.integers(0, x.shape[0], n)
    neighbor = nbrs[base, rng.integers(0, config.k_neighbors, n)]
    step = rng.random(n)
    samples = x[base] + step[:, None] * (x[neighbor] - x[base])
    return SmoteResult(samples, base, neighbor, step)


# ---------------------------------------------------------------------------
# classical GAN


def mlp_param_count(m: int, h: int, d: int) -> int:
    return m * h + h + h * h + h + h * d + d


def quantum_param_count(d: int, config: TrainConfig) -> int:
    m = config.latent_dim or d
    return m * config.hidden + config.hidden + config.hidden * 3 * d + 3 * d


def matched_hidden_width(d: int, config: TrainConfig) -> int:
    """Width of both hidden layers whose parameter count is closest to the hybrid generator's."""
    m = config.latent_dim or d
    target = quantum_param_count(d, config)
    return min(range(1, 4 * target), key=lambda h: (abs(mlp_param_count(m, h, d) - target), h))


def classical_generator(d: int, config: TrainConfig, rng, hidden: int | None = None) -> MLPGenerator:
    m = config.latent_dim or d
    h = hidden or matched_hidden_width(d, config)
    return MLPGenerator(nn.MLPParams.init([m, h, h, d], rng, output="tanh", leaky_slope=config.leaky_slope))


def classical_gan_train(data, config: TrainConfig = TrainConfig(), seed: int | None = None, log=None) -> TrainResult:
    """Same adversarial recipe as the hybrid model with a dense generator of matched capacity."""
    if seed is not None:
        config = replace(config, seed=seed)
    data = np.asarray(data, dtype=float)
    rng = np.random.default_rng(config.seed)
    generator = classical_generator(data.shape[1], config, rng)
    return fit_adversarial(generator, data, config, rng, log=log)


def capacity_gap(classical, hybrid: HybridGenerator) -> float:
    """Relative difference in trainable parameter counts."""
    q = hybrid.n_trainable()
    return abs(classical.n_trainable() - q) / q
