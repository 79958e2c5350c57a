"""Seeded point-cloud fixtures for the geometry-estimation pipeline."""
from __future__ import annotations

import numpy as np

from .spaceform import random_orthogonal


def swiss_roll(n: int = 5000, seed: int = 0, noise: float = 0.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    h = 21.0 * rng.random(n)
    X = np.column_stack([t * np.cos(t), h, t * np.sin(t)])
    if noise > 0:
        X += noise * rng.standard_normal(X.shape)
    return X


def flat_disk(n: int = 3000, seed: int = 0, radius: float = 1.0) -> np.ndarray:
    """Uniform disk in the z=0 plane of R^3."""
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.random(n))
    th = 2.0 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(th), r * np.sin(th), np.zeros(n)])


def noisy_sphere(n: int = 3000, seed: int = 0, radius: float = 1.0,
                 noise: float = 0.01) -> np.ndarray:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 3))
    X *= radius / np.linalg.norm(X, axis=1, keepdims=True)
    return X + noise * rng.standard_normal(X.shape)


def synthetic_embedding(n: int = 3000, seed: int = 0, latent_dim: int = 7,
                        D: int = 64, noise: float = 0.0) -> np.ndarray:
    """Smooth nonlinear image of a ``latent_dim``-cube in R^D.

    Stands in for a learned embedding: low intrinsic dimension, high ambient
    dimension, mild curvature from the sinusoidal component.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, (n, latent_dim))
    A = rng.standard_normal((latent_dim, D)) / np.sqrt(latent_dim)
    C = rng.standard_normal((latent_dim, D)) / np.sqrt(latent_dim)
    X = z @ A + 0.3 * np.sin(1.5 * z @ C)
    X = X @ random_orthogonal(D, seed + 1).T
    if noise > 0:
        X += noise * rng.standard_normal(X.shape)
    return X


FIXTURES = {
    "swiss_roll": swiss_roll,
    "flat_disk": flat_disk,
    "noisy_sphere": noisy_sphere,
    "embedding64": synthetic_embedding,
}


def make_fixture(name: str, seed: int = 0, **kwargs) -> np.ndarray:
    try:
        fn = FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    return fn(seed=seed, **kwargs)
