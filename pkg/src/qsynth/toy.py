"""Bounded low-dimensional targets for quick convergence checks."""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


def ring_mixture(n: int, seed: int = 0, n_modes: int = 8, radius: float = 0.5, spread: float = 0.15,
                 dim: int = 2) -> np.ndarray:
    """Gaussian blobs placed evenly on a circle in the first two coordinates, clipped to [-1, 1].

    Extra coordinates (``dim > 2``) are independent ``N(0, spread)`` noise.
    """
    if n < 0 or n_modes < 1 or dim < 2 or spread < 0:
        raise InvalidArgumentError("invalid ring_mixture arguments")
    rng = np.random.default_rng(seed)
    modes = rng.integers(0, n_modes, n)
    angle = 2 * np.pi * modes / n_modes + np.pi / 4
    x = spread * rng.standard_normal((n, dim))
    x[:, 0] += radius * np.cos(angle)
    x[:, 1] += radius * np.sin(angle)
    return np.clip(x, -1.0, 1.0)
