"""Keypoint and correspondence records shared by both feature engines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, slots=True)
class Keypoint:
    """A located, oriented feature in image (pixel-centre) coordinates.

    ``octave_scale`` is the pyramid scale factor for corner features and the
    characteristic Gaussian scale (in pixels) for scale-space features.
    ``octave`` is the pyramid level the feature was detected on.
    """

    x: float
    y: float
    response: float
    orientation: float
    octave_scale: float = 1.0
    octave: int = 0

    @property
    def pt(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True, slots=True)
class MatchPair:
    idx_a: int
    idx_b: int
    distance: float


def keypoint_array(kps) -> np.ndarray:
    """``(N, 2)`` array of keypoint coordinates."""
    if len(kps) == 0:
        return np.zeros((0, 2))
    return np.array([(k.x, k.y) for k in kps], dtype=float)


def matched_points(kps_a, kps_b, matches) -> tuple[np.ndarray, np.ndarray]:
    pa = keypoint_array(kps_a)
    pb = keypoint_array(kps_b)
    ia = np.array([m.idx_a for m in matches], dtype=np.int64)
    ib = np.array([m.idx_b for m in matches], dtype=np.int64)
    if ia.size == 0:
        return np.zeros((0, 2)), np.zeros((0, 2))
    return pa[ia], pb[ib]

