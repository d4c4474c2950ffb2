"""Angle accumulation along closed sequences of planar vectors."""
from __future__ import annotations

import numpy as np

__all__ = ["angle_increments", "winding_sum", "shoelace_area"]


def angle_increments(vectors: np.ndarray) -> np.ndarray:
    """Principal-branch angle steps between consecutive vectors, closing the loop.

    ``vectors`` has shape ``(n, 2)``; the last vector connects back to the first.
    """
    v = np.asarray(vectors, dtype=float)
    w = np.roll(v, -1, axis=0)
    cross = v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0]
    dot = v[:, 0] * w[:, 0] + v[:, 1] * w[:, 1]
    return np.arctan2(cross, dot)


def winding_sum(vectors: np.ndarray) -> tuple[float, float]:
    """Total turning in units of full turns, and the largest single step."""
    inc = angle_increments(vectors)
    return float(inc.sum() / (2 * np.pi)), float(np.max(np.abs(inc)))


def shoelace_area(points: np.ndarray) -> float:
    """Signed area of the closed polygon ``points`` (counterclockwise positive)."""
    p = np.asarray(points, dtype=float)
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]))
