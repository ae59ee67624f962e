"""Dense flow fields, synthetic flows, the Middlebury ``.flo`` codec and
bilinear warping.

Convention: forward flow in pixels, row-major, y pointing down.  Pixel ``p``
of frame k moves to ``p + (u[p], v[p])`` in frame k+1.  Pixel centers sit at
integer coordinates, so the image covers ``[-0.5, W-0.5] x [-0.5, H-0.5]``.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FlowField", "CoverageMap", "FloFormatError", "FLO_MAGIC",
    "make_synthetic_flow", "compose_flow", "sample_bilinear", "warp_frame",
    "coverage_map", "subpixel_centers", "read_flo", "write_flo",
    "load_flo", "save_flo",
]

FLO_MAGIC = 202021.25
_MAX_DIM = 2 ** 16


class FloFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement ``(u, v)``; both arrays have shape (H, W)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u and v must be 2-D with equal shape, got {u.shape} and {v.shape}")
        if u.shape[0] < 1 or u.shape[1] < 1:
            raise ValueError("flow dimensions must be >= 1")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("flow contains non-finite values")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    def equals(self, other) -> bool:
        return (self.shape == other.shape and np.array_equal(self.u, other.u)
                and np.array_equal(self.v, other.v))

    def max_abs(self) -> float:
        return float(max(np.abs(self.u).max(), np.abs(self.v).max()))


@dataclass(frozen=True, eq=False)
class CoverageMap:
    """Number of transported sub-samples landing in each target pixel."""

    count: np.ndarray
    transported: int

    @property
    def height(self) -> int:
        return self.count.shape[0]

    @property
    def width(self) -> int:
        return self.count.shape[1]

    def holes(self) -> np.ndarray:
        return self.count == 0


def _grid(width, height):
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs, ys


def make_synthetic_flow(kind, params, width, height) -> FlowField:
    """Flow sending every pixel center through a translation, rotation or zoom.

    ``translate`` takes ``(dx, dy)``, ``rotate`` an angle in radians and
    ``zoom`` a scale factor; rotation and zoom act about the image center
    ``((W-1)/2, (H-1)/2)``.  For ``rotate`` the displacement is rounded to the
    nearest integer when it lies within 1e-9 of one, so quarter turns on a
    square grid induce exact permutations.
    """
    params = tuple(float(p) for p in np.atleast_1d(params))
    if not all(math.isfinite(p) for p in params):
        raise ValueError(f"non-finite flow parameters {params}")
    if width < 1 or height < 1:
        raise ValueError("flow dimensions must be >= 1")
    xs, ys = _grid(width, height)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    if kind == "translate":
        if len(params) != 2:
            raise ValueError("translate takes (dx, dy)")
        u = np.full((height, width), params[0])
        v = np.full((height, width), params[1])
    elif kind == "rotate":
        if len(params) != 1:
            raise ValueError("rotate takes one angle")
        c, s = math.cos(params[0]), math.sin(params[0])
        rx, ry = xs - cx, ys - cy
        u = cx + c * rx - s * ry - xs
        v = cy + s * rx + c * ry - ys
        for a in (u, v):
            r = np.round(a)
            snap = np.abs(a - r) < 1e-9
            a[snap] = r[snap]
    elif kind == "zoom":
        if len(params) != 1:
            raise ValueError("zoom takes one scale factor")
        s = params[0]
        if s <= 0:
            raise ValueError(f"zoom factor must be > 0, got {s}")
        u = (s - 1.0) * (xs - cx)
        v = (s - 1.0) * (ys - cy)
    else:
        raise ValueError(f"unknown flow kind {kind!r}")
    return FlowField(u, v)


def sample_bilinear(img, x, y, edge="clamp"):
    """Sample ``img`` (H, W) at real coordinates ``(x, y)``.

    ``edge="clamp"`` clamps coordinates into the pixel-center hull;
    ``edge="extrapolate"`` continues the border cell linearly, which is exact
    for affine fields.  Interpolation uses the lerp form, so constant fields
    and integer coordinates are reproduced bit-exactly.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if edge == "clamp":
        x = np.clip(x, 0.0, w - 1.0)
        y = np.clip(y, 0.0, h - 1.0)
    elif edge != "extrapolate":
        raise ValueError(f"unknown edge policy {edge!r}")
    x0 = np.clip(np.floor(x), 0, w - 1).astype(np.intp)
    y0 = np.clip(np.floor(y), 0, h - 1).astype(np.intp)
    # past the last center, extrapolate from the last cell
    if w > 1:
        x0[(x > w - 1) & (x0 == w - 1)] = w - 2
    if h > 1:
        y0[(y > h - 1) & (y0 == h - 1)] = h - 2
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0 if w > 1 else np.zeros_like(x)
    fy = y - y0 if h > 1 else np.zeros_like(y)
    f00, f10 = img[y0, x0], img[y0, x1]
    f01, f11 = img[y1, x0], img[y1, x1]
    top = f00 + fx * (f10 - f00)
    bot = f01 + fx * (f11 - f01)
    return top + fy * (bot - top)


def compose_flow(f_ab: FlowField, f_bc: FlowField) -> FlowField:
    """Flow a->c: ``f_ab(p) + f_bc(p + f_ab(p))`` with border clamping."""
    if f_ab.shape != f_bc.shape:
        raise ValueError(f"dimension mismatch {f_ab.shape} vs {f_bc.shape}")
    xs, ys = _grid(f_ab.width, f_ab.height)
    qx, qy = xs + f_ab.u, ys + f_ab.v
    return FlowField(f_ab.u + sample_bilinear(f_bc.u, qx, qy),
                     f_ab.v + sample_bilinear(f_bc.v, qx, qy))


def warp_frame(frame, flow: FlowField, mode="backward-bilinear"):
    """Output pixel q is ``frame`` sampled at ``q - flow(q)``, border-clamped."""
    if mode != "backward-bilinear":
        raise ValueError(f"unsupported warp mode {mode!r}")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != flow.shape:
        raise ValueError(f"dimension mismatch {frame.shape} vs {flow.shape}")
    if not np.isfinite(frame).all():
        raise ValueError("frame contains non-finite values")
    xs, ys = _grid(flow.width, flow.height)
    return sample_bilinear(frame, xs - flow.u, ys - flow.v)


def subpixel_centers(width, height, subdiv):
    """Sub-pixel centers, ``subdiv**2`` per pixel, grouped by pixel.

    Returns ``(x, y, pixel)`` flat arrays; particle j of pixel p sits at index
    ``p * subdiv**2 + j``.
    """
    s = int(subdiv)
    if s < 1:
        raise ValueError("subdiv must be >= 1")
    off = (np.arange(s) + 0.5) / s - 0.5
    oy, ox = np.meshgrid(off, off, indexing="ij")
    ys, xs = np.mgrid[0:height, 0:width]
    x = (xs.reshape(-1, 1) + ox.reshape(1, -1)).ravel()
    y = (ys.reshape(-1, 1) + oy.reshape(1, -1)).ravel()
    pixel = np.repeat(np.arange(width * height), s * s)
    return x, y, pixel


def transport_points(flow: FlowField, x, y):
    """Displace points by the flow sampled (with linear extrapolation) at them.

    Returns the displaced coordinates and the flat index of the target pixel
    (nearest pixel center), with ``-1`` for points leaving the image.
    """
    nx = x + sample_bilinear(flow.u, x, y, edge="extrapolate")
    ny = y + sample_bilinear(flow.v, x, y, edge="extrapolate")
    tx = np.floor(nx + 0.5).astype(np.intp)
    ty = np.floor(ny + 0.5).astype(np.intp)
    inside = (tx >= 0) & (tx < flow.width) & (ty >= 0) & (ty < flow.height)
    target = np.where(inside, ty * flow.width + tx, -1)
    return nx, ny, target


def coverage_map(flow: FlowField, subdiv=1) -> CoverageMap:
    """Count sub-pixel centers landing in each target pixel after transport.

    Off-image samples are dropped.  Uses exactly the geometry of noise
    advection, so holes here are the pixels advection refills.
    """
    x, y, _ = subpixel_centers(flow.width, flow.height, subdiv)
    _, _, target = transport_points(flow, x, y)
    kept = target[target >= 0]
    count = np.bincount(kept, minlength=flow.width * flow.height)
    return CoverageMap(count.reshape(flow.shape), int(kept.size))


def write_flo(flow: FlowField) -> bytes:
    """Encode as Middlebury ``.flo`` (values stored as float32)."""
    h, w = flow.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = flow.u
    data[..., 1] = flow.v
    return struct.pack("<fii", FLO_MAGIC, w, h) + data.tobytes()


def read_flo(buf) -> FlowField:
    buf = bytes(buf)
    if len(buf) < 12:
        raise FloFormatError("truncated header")
    magic, w, h = struct.unpack_from("<fii", buf, 0)
    if magic != FLO_MAGIC:
        raise FloFormatError(f"bad magic {magic!r}")
    if not (0 < w <= _MAX_DIM and 0 < h <= _MAX_DIM):
        raise FloFormatError(f"bad dimensions {w}x{h}")
    need = 12 + 8 * w * h
    if len(buf) < need:
        raise FloFormatError(f"truncated payload: {len(buf)} < {need} bytes")
    if len(buf) > need:
        raise FloFormatError(f"trailing bytes: {len(buf)} > {need}")
    data = np.frombuffer(buf, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2)
    try:
        return FlowField(data[..., 0].astype(np.float64), data[..., 1].astype(np.float64))
    except ValueError as e:
        raise FloFormatError(str(e)) from None


def load_flo(path) -> FlowField:
    with open(path, "rb") as fh:
        return read_flo(fh.read())


def save_flo(path, flow: FlowField):
    with open(path, "wb") as fh:
        fh.write(write_flo(flow))
