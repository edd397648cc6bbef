"""Affine camera-pose matrices and the cone-viewpoint sampling grid.

A camera pose is decomposed as ``A = T(tx, ty) R(psi) S(s) T_tilt(t) R(phi)``
where ``T_tilt = diag(t, 1)`` and the latitude is ``theta = arccos(1/t)``.

Matrices are plain 3x3 ``float64`` arrays with last row ``(0, 0, 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AffineParams",
    "GridConfig",
    "ParamGrid",
    "affine_from_params",
    "simulation_matrix",
    "latitude_from_tilt",
    "tilt_from_latitude",
    "invert",
    "map_point",
    "map_points",
    "build_param_grid",
    "translation",
    "rotation",
]

# longitudes closer than this to the 180 degree bound are treated as equal to it
_ANGLE_EPS = 1e-9


@dataclass(frozen=True)
class AffineParams:
    """One sampling point of the viewpoint space.

    Angles are in radians, translations in pixels.
    """

    psi: float = 0.0
    tilt: float = 1.0
    phi: float = 0.0
    scale: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.tilt >= 1.0:
            raise ValueError(f"tilt must be >= 1, got {self.tilt}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    @property
    def latitude(self) -> float:
        return latitude_from_tilt(self.tilt)

    def as_dict(self) -> dict:
        return {
            "psi_deg": math.degrees(self.psi),
            "tilt": self.tilt,
            "latitude_deg": math.degrees(self.latitude),
            "phi_deg": math.degrees(self.phi),
            "scale": self.scale,
            "tx": self.tx,
            "ty": self.ty,
        }


def latitude_from_tilt(t: float) -> float:
    """Latitude angle ``arccos(1/t)`` in radians."""
    if not t >= 1.0:
        raise ValueError(f"tilt must be >= 1, got {t}")
    return math.acos(1.0 / t)


def tilt_from_latitude(theta: float) -> float:
    """Inverse of :func:`latitude_from_tilt` for ``theta`` in ``[0, pi/2)``."""
    if not 0.0 <= theta < math.pi / 2:
        raise ValueError(f"latitude must lie in [0, pi/2), got {theta}")
    return 1.0 / math.cos(theta)


def translation(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _scaling(sx: float, sy: float) -> np.ndarray:
    return np.diag([sx, sy, 1.0])


def affine_from_params(p: AffineParams) -> np.ndarray:
    """Compose ``T R1(psi) S T_tilt R2(phi)`` for the pose ``p``.

    ``T_tilt = diag(1/cos(theta), 1) = diag(t, 1)``, so the matrix stretches
    the longitude-rotated x axis by the tilt.
    """
    if not p.tilt >= 1.0 or not p.scale > 0.0:
        raise ValueError("invalid affine parameters")
    t_tau = _scaling(1.0 / math.cos(p.latitude), 1.0)
    return (
        translation(p.tx, p.ty)
        @ rotation(p.psi)
        @ _scaling(p.scale, p.scale)
        @ t_tau
        @ rotation(p.phi)
    )


def simulation_matrix(p: AffineParams) -> np.ndarray:
    """Source-to-simulated-view map used when rendering a pose.

    Same factor order as :func:`affine_from_params`, but the tilt compresses
    the rotated x axis by ``1/t`` (an oblique camera foreshortens the plane)
    while ``S`` magnifies. The result is the view of the plane that an
    oblique camera at distance ``1/s`` would record, and its pixel count grows
    like ``s**2 / t`` rather than ``s**2 * t``.
    """
    if not p.tilt >= 1.0 or not p.scale > 0.0:
        raise ValueError("invalid affine parameters")
    return (
        translation(p.tx, p.ty)
        @ rotation(p.psi)
        @ _scaling(p.scale, p.scale)
        @ _scaling(1.0 / p.tilt, 1.0)
        @ rotation(p.phi)
    )


def invert(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    det = np.linalg.det(m)
    scale = np.abs(m).max()
    if scale == 0.0 or abs(det) <= 1e-12 * scale**3:
        raise np.linalg.LinAlgError("matrix is singular")
    inv = np.linalg.inv(m)
    if np.allclose(m[2], [0.0, 0.0, 1.0]):
        inv[2] = [0.0, 0.0, 1.0]
    return inv


def map_point(m: np.ndarray, x: float, y: float) -> tuple[float, float]:
    """Apply the affine part of ``m`` to a single point."""
    return (
        float(m[0, 0] * x + m[0, 1] * y + m[0, 2]),
        float(m[1, 0] * x + m[1, 1] * y + m[1, 2]),
    )


def map_points(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a 3x3 matrix to an ``(N, 2)`` array, with projective division.

    For affine matrices the division is by exactly 1.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    out = pts @ m[:2, :2].T + m[:2, 2]
    if not np.array_equal(m[2], [0.0, 0.0, 1.0]):
        w = pts @ m[2, :2] + m[2, 2]
        out = out / w[:, None]
    return out


@dataclass(frozen=True)
class GridConfig:
    """Sampling rule parameters; ``b_deg`` is the longitude base step in degrees."""

    a: float = math.sqrt(2.0)
    n: int = 5
    b_deg: float = 72.0
    delta_s: float = 0.5

    def __post_init__(self):
        if not self.a > 1.0:
            raise ValueError(f"tilt ratio a must be > 1, got {self.a}")
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"n must be a non-negative integer, got {self.n}")
        if not self.b_deg > 0.0:
            raise ValueError(f"b_deg must be > 0, got {self.b_deg}")
        if not self.delta_s >= 0.0:
            raise ValueError(f"delta_s must be >= 0, got {self.delta_s}")


@dataclass(frozen=True)
class ParamGrid:
    entries: tuple[AffineParams, ...]
    config: GridConfig
    # (tilt index k, longitude index j) of each entry
    indices: tuple[tuple[int, int], ...] = field(default=())

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def _longitude_count(b_deg: float, t: float) -> int:
    # largest j with j*b/t < 180, strict, so j*b/t == 180 is excluded
    step = b_deg / t
    j = 0
    while (j + 1) * step < 180.0 - _ANGLE_EPS:
        j += 1
    return j + 1


def build_param_grid(cfg: GridConfig = GridConfig()) -> ParamGrid:
    """Enumerate the sampling points in (tilt index, longitude index) order.

    Tilt ``t_k = a**k`` for ``k = 0..n`` with scale ``1 + k*delta_s``. The
    frontal tilt contributes a single entry; every other tilt gets
    longitudes ``j*b/t_k`` below 180 degrees.
    """
    entries = []
    indices = []
    for k in range(int(cfg.n) + 1):
        t = cfg.a**k
        s = 1.0 + k * cfg.delta_s
        count = 1 if k == 0 else _longitude_count(cfg.b_deg, t)
        for j in range(count):
            phi = math.radians(j * cfg.b_deg / t)
            entries.append(AffineParams(psi=0.0, tilt=t, phi=phi, scale=s))
            indices.append((k, j))
    return ParamGrid(tuple(entries), cfg, tuple(indices))
