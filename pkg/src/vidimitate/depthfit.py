"""Metric alignment of predicted depth and depth-quality diagnostics.

Monocular depth predictions are only defined up to ``d -> s * d + b``. The
scale and shift are recovered by least squares against one real depth frame,
restricted to a dilated mask around the manipulated object, and then applied
to every predicted frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

__all__ = [
    "DepthMap",
    "Mask",
    "AffineDepthFit",
    "InsufficientPixels",
    "DegeneratePred",
    "fit_scale_shift",
    "apply_affine",
    "mean_masked_depth",
    "flicker_profile",
    "FlickerProfile",
    "read_depth",
    "write_depth",
    "read_mask",
    "write_mask",
]


class InsufficientPixels(ValueError):
    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


class DegeneratePred(ValueError):
    """Predicted depth is constant over the fitting pixels."""


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Row-major (height, width) range raster in meters, NaN marks invalid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"depth raster must be a non-empty 2-D array, got shape {v.shape}")
        v[~np.isfinite(v)] = np.nan
        if np.any(v[np.isfinite(v)] <= 0):
            raise ValueError("finite depth values must be positive")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass(frozen=True, eq=False)
class Mask:
    pixels: np.ndarray

    def __post_init__(self):
        m = np.array(self.pixels, dtype=bool)
        if m.ndim != 2 or m.size == 0:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {m.shape}")
        m.flags.writeable = False
        object.__setattr__(self, "pixels", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def dilate(self, radius: int) -> "Mask":
        if radius <= 0:
            return self
        yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
        disk = xx**2 + yy**2 <= radius**2
        return Mask(ndimage.binary_dilation(self.pixels, structure=disk))


@dataclass(frozen=True)
class AffineDepthFit:
    scale: float
    shift: float
    rmse: float
    pixel_count: int

    def __call__(self, d):
        return self.scale * np.asarray(d) + self.shift


def _solve_normal_equations(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    # 2x2 system [[sum x^2, sum x], [sum x, n]] [s, b] = [sum xy, sum y], centered for conditioning
    n = x.size
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    sxx = float(np.dot(dx, dx))
    if np.sqrt(sxx / n) <= 1e-12 * max(abs(xm), 1.0):
        raise DegeneratePred("predicted depth is constant over the fitting pixels")
    s = float(np.dot(dx, y - ym)) / sxx
    b = float(ym - s * xm)
    return s, b


def fit_scale_shift(
    pred: DepthMap,
    real: DepthMap,
    mask: Mask,
    dilation_px: int = 10,
    robust: bool = False,
) -> AffineDepthFit:
    """Least-squares ``(s, b)`` with ``s * pred + b ~= real`` near the masked object.

    The mask is dilated by ``dilation_px`` (disk) and intersected with pixels
    valid in both rasters. With ``robust=True`` residuals beyond 3 MAD are
    dropped and the fit is solved once more.
    """
    if pred.values.shape != real.values.shape or mask.shape != pred.values.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.values.shape}, real {real.values.shape}, mask {mask.shape}"
        )
    region = mask.dilate(dilation_px).pixels & pred.valid & real.valid
    x = pred.values[region]
    y = real.values[region]
    if x.size < 2:
        raise InsufficientPixels(f"only {x.size} usable pixels, need at least 2")
    s, b = _solve_normal_equations(x, y)

    if robust:
        r = s * x + b - y
        med = np.median(r)
        mad = np.median(np.abs(r - med))
        keep = np.abs(r - med) <= 3.0 * mad if mad > 0 else np.ones_like(r, dtype=bool)
        if keep.sum() >= 2 and not keep.all():
            x, y = x[keep], y[keep]
            s, b = _solve_normal_equations(x, y)

    resid = s * x + b - y
    rmse = float(np.sqrt(np.mean(resid**2)))
    return AffineDepthFit(scale=s, shift=b, rmse=rmse, pixel_count=int(x.size))


def apply_affine(depth: DepthMap, fit: AffineDepthFit) -> tuple[DepthMap, int]:
    """Map every finite pixel through the fit.

    Returns the new raster and the number of pixels invalidated because the
    mapped depth was not positive.
    """
    out = fit.scale * depth.values + fit.shift
    clipped = np.isfinite(out) & (out <= 0)
    out = np.where(clipped, np.nan, out)
    return DepthMap(out), int(clipped.sum())


def mean_masked_depth(depth: DepthMap, mask: Mask) -> float:
    if mask.shape != depth.values.shape:
        raise ValueError("mask and depth shapes differ")
    sel = mask.pixels & depth.valid
    if not sel.any():
        raise InsufficientPixels("no valid depth under the mask")
    return float(np.mean(depth.values[sel]))


@dataclass(frozen=True)
class FlickerProfile:
    means: tuple[float, ...]
    deltas: tuple[float, ...]

    @property
    def max(self) -> float:
        return max(self.deltas)


def flicker_profile(depths: Sequence[DepthMap], masks: Sequence[Mask]) -> FlickerProfile:
    """Frame-to-frame change of the mean masked depth."""
    if len(depths) != len(masks):
        raise ValueError("depths and masks differ in length")
    if len(depths) < 2:
        raise ValueError("need at least two frames")
    means = []
    for i, (d, m) in enumerate(zip(depths, masks)):
        try:
            means.append(mean_masked_depth(d, m))
        except InsufficientPixels as exc:
            raise InsufficientPixels("no valid depth under the mask", frame=i) from exc
    deltas = tuple(abs(b - a) for a, b in zip(means[:-1], means[1:]))
    return FlickerProfile(means=tuple(means), deltas=deltas)


_DEPTH_MAGIC = b"DPTH"


def write_depth(depth: DepthMap, path) -> None:
    h, w = depth.values.shape
    with open(path, "wb") as fh:
        fh.write(_DEPTH_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(depth.values.astype("<f4").tobytes())


def read_depth(path) -> DepthMap:
    raw = Path(path).read_bytes()
    if raw[:4] != _DEPTH_MAGIC:
        raise ValueError(f"{path}: missing DPTH magic")
    w, h = struct.unpack("<II", raw[4:12])
    n = w * h
    if len(raw) != 12 + 4 * n:
        raise ValueError(f"{path}: expected {12 + 4 * n} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", count=n, offset=12).astype(np.float64)
    return DepthMap(values.reshape(h, w))


def write_mask(mask: Mask, path) -> None:
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.where(mask.pixels, 255, 0).astype(np.uint8).tobytes())


def read_mask(path) -> Mask:
    raw = Path(path).read_bytes()
    # header: magic, width, height, maxval separated by whitespace, comments allowed
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM masks are not supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return Mask(data.reshape(h, w) > 0)
