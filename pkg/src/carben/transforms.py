"""The six perturbation components as differentiable image maps.

Each component provides:
  - forward application (pre-clamp formula, then clamp to [0, 1]),
  - a vector-Jacobian product w.r.t. the input image,
  - a derivative of <output, upstream> w.r.t. the scalar parameter.

Clamp subgradient convention: pass-through where the pre-clamp value lies
strictly inside (0, 1), zero elsewhere (standard projected-gradient choice).

Hue is realized as a rotation of the (U, V) chroma plane: smooth everywhere
with an exact analytic parameter derivative. Rotation uses inverse-map
bilinear resampling around the image center with zero fill outside; its
angle derivative uses a central finite difference (h = 0.1 degrees).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .imaging import (
    LUMA_WEIGHTS,
    RGB_TO_YUV,
    YUV_TO_RGB,
    clamp_unit,
    to_grayscale,
)

ROTATION_FD_DEGREES = 0.1


class Kind(enum.IntEnum):
    """Perturbation components, ordered by the canonical fixed attack order."""

    LINF = 0
    HUE = 1
    SATURATION = 2
    BRIGHTNESS = 3
    CONTRAST = 4
    ROTATION = 5

    @property
    def key(self) -> str:
        return self.name.lower()


KIND_NAMES = {k.key: k for k in Kind}
CANONICAL_ORDER = tuple(sorted(Kind))
SEMANTIC_KINDS = tuple(k for k in CANONICAL_ORDER if k is not Kind.LINF)


@dataclass(frozen=True)
class ParamBounds:
    kind: Kind
    lo: float
    hi: float
    identity: float

    def __post_init__(self):
        if not (self.lo <= self.identity <= self.hi):
            raise ValueError(f"bounds must satisfy lo <= identity <= hi for {self.kind}")

    def clip(self, value: float) -> float:
        return float(min(self.hi, max(self.lo, value)))


# Conventional semantic-attack budgets; all overridable through AttackConfig.
DEFAULT_BOUNDS: dict[Kind, ParamBounds] = {
    Kind.HUE: ParamBounds(Kind.HUE, -math.pi, math.pi, 0.0),
    Kind.SATURATION: ParamBounds(Kind.SATURATION, 0.7, 1.3, 1.0),
    Kind.BRIGHTNESS: ParamBounds(Kind.BRIGHTNESS, -0.2, 0.2, 0.0),
    Kind.CONTRAST: ParamBounds(Kind.CONTRAST, 0.7, 1.3, 1.0),
    Kind.ROTATION: ParamBounds(Kind.ROTATION, -10.0, 10.0, 0.0),
}
DEFAULT_EPSILON = 8.0 / 255.0


@dataclass(frozen=True)
class LinfDelta:
    """Additive per-pixel perturbation bounded in max-norm by epsilon."""

    delta: np.ndarray
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.delta.size and float(np.abs(self.delta).max()) > self.epsilon + 1e-7:
            raise ValueError("delta exceeds the epsilon ball")


def _hue_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], dtype=np.float64)
    return YUV_TO_RGB @ rot @ RGB_TO_YUV


def _hue_matrix_dtheta(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    drot = np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]], dtype=np.float64)
    return YUV_TO_RGB @ drot @ RGB_TO_YUV


def _apply_matrix(mat: np.ndarray, image: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jhw->ihw", mat, image.astype(np.float64)).astype(np.float32)


def _rotation_grid(h: int, w: int, phi_deg: float):
    """Source coordinates and bilinear weights for inverse-map rotation."""
    rad = math.radians(phi_deg)
    c, s = math.cos(rad), math.sin(rad)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    # Inverse map: rotate output coordinates by -phi to find the source.
    src_x = c * dx + s * dy + cx
    src_y = -s * dx + c * dy + cy
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0
    corners = []
    for oy, ox, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        ys, xs = y0 + oy, x0 + ox
        valid = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        corners.append((np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1), wgt * valid))
    return corners


def _rotate_raw(image: np.ndarray, phi_deg: float) -> np.ndarray:
    return _rotate_f64(image, phi_deg).astype(np.float32)


def _rotate_f64(image: np.ndarray, phi_deg: float) -> np.ndarray:
    h, w = image.shape[1], image.shape[2]
    out = np.zeros((image.shape[0], h, w), dtype=np.float64)
    for ys, xs, wgt in _rotation_grid(h, w, phi_deg):
        out += image[:, ys, xs].astype(np.float64) * wgt[None, :, :]
    return out


def raw_apply(kind: Kind, image: np.ndarray, param) -> np.ndarray:
    """Pre-clamp forward formula for a component."""
    x = np.asarray(image, dtype=np.float32)
    if kind is Kind.HUE:
        theta = float(param)
        if not -math.pi <= theta <= math.pi:
            raise ValueError("hue angle must lie in [-pi, pi]")
        return _apply_matrix(_hue_matrix(theta), x)
    if kind is Kind.SATURATION:
        s = float(param)
        if s < 0:
            raise ValueError("saturation factor must be >= 0")
        gray = to_grayscale(clamp_unit(x))[None, :, :]
        return ((1.0 - s) * gray + s * x).astype(np.float32)
    if kind is Kind.BRIGHTNESS:
        return (x + np.float32(param)).astype(np.float32)
    if kind is Kind.CONTRAST:
        c = float(param)
        if c < 0:
            raise ValueError("contrast factor must be >= 0")
        return ((x - 0.5) * np.float32(c) + np.float32(0.5)).astype(np.float32)
    if kind is Kind.ROTATION:
        return _rotate_raw(x, float(param))
    if kind is Kind.LINF:
        delta = param.delta if isinstance(param, LinfDelta) else np.asarray(param)
        if delta.shape != x.shape:
            raise ValueError("delta shape must match the image")
        return (x + delta.astype(np.float32)).astype(np.float32)
    raise ValueError(f"unknown kind {kind!r}")


def _is_identity(kind: Kind, param) -> bool:
    if kind is Kind.LINF:
        delta = param.delta if isinstance(param, LinfDelta) else np.asarray(param)
        return not np.any(delta)
    identity = {Kind.HUE: 0.0, Kind.SATURATION: 1.0, Kind.BRIGHTNESS: 0.0, Kind.CONTRAST: 1.0, Kind.ROTATION: 0.0}[kind]
    return float(param) == identity


def apply(kind: Kind, image: np.ndarray, param) -> np.ndarray:
    """Clamped forward application. Identity parameters return the input bit-equal."""
    x = np.asarray(image, dtype=np.float32)
    if _is_identity(kind, param):
        return x.copy()
    return clamp_unit(raw_apply(kind, x, param))


def apply_hue(image: np.ndarray, theta: float) -> np.ndarray:
    return apply(Kind.HUE, image, theta)


def apply_saturation(image: np.ndarray, s: float) -> np.ndarray:
    return apply(Kind.SATURATION, image, s)


def apply_brightness(image: np.ndarray, b: float) -> np.ndarray:
    return apply(Kind.BRIGHTNESS, image, b)


def apply_contrast(image: np.ndarray, c: float) -> np.ndarray:
    return apply(Kind.CONTRAST, image, c)


def apply_rotation(image: np.ndarray, phi_deg: float) -> np.ndarray:
    return apply(Kind.ROTATION, image, phi_deg)


def apply_linf(image: np.ndarray, delta: LinfDelta) -> np.ndarray:
    return apply(Kind.LINF, image, delta)


def compose(image: np.ndarray, chain) -> np.ndarray:
    """Apply a chain of (kind, param) left to right. Each kind at most once."""
    seen = set()
    out = np.asarray(image, dtype=np.float32)
    for kind, param in chain:
        if kind in seen:
            raise ValueError(f"duplicate kind {kind.key} in chain")
        seen.add(kind)
        out = apply(kind, out, param)
    return out


def clamp_mask(kind: Kind, image: np.ndarray, param) -> np.ndarray:
    """Pass-through mask of the clamp at (image, param): 1 where raw in (0,1)."""
    raw = raw_apply(kind, np.asarray(image, dtype=np.float32), param)
    return ((raw > 0.0) & (raw < 1.0)).astype(np.float32)


def vjp_image(kind: Kind, image: np.ndarray, param, upstream: np.ndarray) -> np.ndarray:
    """J^T . upstream for the clamped transform at (image, param)."""
    x = np.asarray(image, dtype=np.float32)
    u = np.asarray(upstream, dtype=np.float32)
    if u.shape != x.shape:
        raise ValueError("upstream shape must match the image")
    um = u * clamp_mask(kind, x, param)
    if kind in (Kind.BRIGHTNESS, Kind.LINF):
        return um
    if kind is Kind.CONTRAST:
        return (um * np.float32(float(param))).astype(np.float32)
    if kind is Kind.SATURATION:
        s = float(param)
        w = LUMA_WEIGHTS.astype(np.float32)
        usum = um.sum(axis=0, keepdims=True)
        return (np.float32(s) * um + np.float32(1.0 - s) * w[:, None, None] * usum).astype(np.float32)
    if kind is Kind.HUE:
        return _apply_matrix(_hue_matrix(float(param)).T, um)
    if kind is Kind.ROTATION:
        h, w_ = x.shape[1], x.shape[2]
        out = np.zeros((3, h, w_), dtype=np.float64)
        for ys, xs, wgt in _rotation_grid(h, w_, float(param)):
            contrib = um.astype(np.float64) * wgt[None, :, :]
            for ch in range(3):
                np.add.at(out[ch], (ys, xs), contrib[ch])
        return out.astype(np.float32)
    raise ValueError(f"unknown kind {kind!r}")


def param_grad(kind: Kind, image: np.ndarray, param, upstream: np.ndarray) -> float:
    """d<output, upstream>/dparam for the clamped transform."""
    if kind is Kind.LINF:
        raise ValueError("linf has a tensor parameter; use vjp_image for its gradient")
    x = np.asarray(image, dtype=np.float32)
    u = np.asarray(upstream, dtype=np.float32)
    if u.shape != x.shape:
        raise ValueError("upstream shape must match the image")
    if kind is Kind.ROTATION:
        # Central difference in float64: the float32 forward leaves too much
        # rounding noise relative to the small per-degree derivative.
        h = ROTATION_FD_DEGREES
        hi = _rotate_f64(x, float(param) + h)
        lo = _rotate_f64(x, float(param) - h)
        return float(((np.clip(hi, 0.0, 1.0) - np.clip(lo, 0.0, 1.0)) * u.astype(np.float64)).sum() / (2 * h))
    um = (u * clamp_mask(kind, x, param)).astype(np.float64)
    xd = x.astype(np.float64)
    if kind is Kind.BRIGHTNESS:
        return float(um.sum())
    if kind is Kind.CONTRAST:
        return float(((xd - 0.5) * um).sum())
    if kind is Kind.SATURATION:
        gray = to_grayscale(x).astype(np.float64)[None, :, :]
        return float(((xd - gray) * um).sum())
    if kind is Kind.HUE:
        dx = _apply_matrix(_hue_matrix_dtheta(float(param)), x).astype(np.float64)
        return float((dx * um).sum())
    raise ValueError(f"unknown kind {kind!r}")
