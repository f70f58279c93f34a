"""Synthetic shape classes used for smoke tests and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud, rotation_matrix

SHAPES = ("sphere", "cube", "torus", "cross")


def _sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(rng, n):
    pts = rng.uniform(-1, 1, size=(n, 3))
    face = rng.integers(0, 6, n)
    pts[np.arange(n), face % 3] = np.where(face < 3, -1.0, 1.0)
    return pts


def _torus(rng, n, major=1.0, minor=0.35):
    # Rejection-free area weighting: accept angle phi with density ∝ R + r cos(phi).
    theta = rng.uniform(0, 2 * np.pi, n)
    phi = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = cand[rng.uniform(0, major + minor, 2 * n) < major + minor * np.cos(cand)]
        take = keep[: n - filled]
        phi[filled : filled + take.size] = take
        filled += take.size
    ring = major + minor * np.cos(phi)
    return np.stack([ring * np.cos(theta), ring * np.sin(theta), minor * np.sin(phi)], axis=1)


def _cross(rng, n):
    a = rng.uniform(-1, 1, n)
    b = rng.uniform(-1, 1, n)
    first = rng.uniform(size=n) < 0.5
    zeros = np.zeros(n)
    return np.where(first[:, None], np.stack([a, zeros, b], 1), np.stack([zeros, a, b], 1))


_MAKERS = {"sphere": _sphere, "cube": _cube, "torus": _torus, "cross": _cross}


def make_shape(name: str, num_points: int, rng: np.random.Generator, noise: float = 0.01) -> np.ndarray:
    """Sample one jittered shape: random per-axis scale in [0.85, 1.15],
    random rotation about z, isotropic Gaussian noise of std ``noise``."""
    pts = _MAKERS[name](rng, num_points)
    pts = pts * rng.uniform(0.85, 1.15, size=3)
    pts = pts @ rotation_matrix(rng.uniform(0, 2 * np.pi), "z").T
    return pts + rng.normal(scale=noise, size=pts.shape)


def make_dataset(per_class: int, num_points: int = 1024, seed: int = 0, noise: float = 0.01,
                 shapes=SHAPES) -> list:
    """``per_class`` labelled clouds for each shape, class-major order."""
    rng = np.random.default_rng(seed)
    return [
        PointCloud(make_shape(name, num_points, rng, noise), label)
        for label, name in enumerate(shapes)
        for _ in range(per_class)
    ]
