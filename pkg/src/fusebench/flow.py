"""Classical optical flow, flow-guided warping, and occlusion masks.

The estimator is coarse-to-fine pyramidal Lucas-Kanade with iterative
refinement. It deliberately sits behind a small interface (any callable
(src, dst) -> FlowField works) so precomputed flows, e.g. from a neural
estimator exported as Middlebury .flo files, can be swapped in.

Flow convention: estimate_flow(src, dst) returns the displacement field O,
anchored on src's pixel grid, such that dst(p + O(p)) ~ src(p). Warping
therefore aligns the *second* frame onto the first:
warp(dst, estimate_flow(src, dst)) ~ src.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates, uniform_filter

from .core import (ContractError, FlowField, Frame, FrameIOError,
                   LUMA_WEIGHTS, StructuralError)

FLO_MAGIC = 202021.25
UNKNOWN_FLOW = 1e9      # values at or above this in a .flo file mean "unknown"
MIN_LEVEL_SIZE = 8      # stop shrinking the pyramid below this many pixels


@dataclass(frozen=True)
class FlowEstimatorConfig:
    pyramid_levels: int = 4
    window_radius: int = 7
    iterations: int = 3
    smoothing: float = 1.0
    min_eigenvalue: float = 1e-6

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ContractError("pyramid_levels must be >= 1")
        if self.window_radius < 1:
            raise ContractError("window_radius must be >= 1")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.smoothing < 0:
            raise ContractError("smoothing must be >= 0")


@dataclass(frozen=True)
class OcclusionParams:
    alpha: float = 0.01
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractError("occlusion parameters must be non-negative")


def _to_luma(image):
    if isinstance(image, Frame):
        return np.asarray(image.luma(), dtype=np.float64)
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        w = LUMA_WEIGHTS
        arr = w[0] * arr[:, :, 0] + w[1] * arr[:, :, 1] + w[2] * arr[:, :, 2]
    if arr.ndim != 2:
        raise ContractError("flow inputs must be 2-D or RGB images")
    return arr


def _pyramid(img, levels):
    pyr = [img]
    for _ in range(levels - 1):
        if min(img.shape) // 2 < MIN_LEVEL_SIZE:
            break
        img = gaussian_filter(img, 1.0)[::2, ::2]
        pyr.append(img)
    return pyr


def _resize_linear(field, shape):
    h, w = field.shape
    th, tw = shape
    ys = np.linspace(0.0, h - 1.0, th)
    xs = np.linspace(0.0, w - 1.0, tw)
    grid = np.meshgrid(ys, xs, indexing="ij")
    return map_coordinates(field, grid, order=1, mode="nearest")


def _lk_refine(a, b, u, v, cfg):
    """Iterative Lucas-Kanade at one pyramid level (box window)."""
    h, w = a.shape
    gy, gx = np.gradient(b)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    win = 2 * cfg.window_radius + 1
    valid = np.zeros((h, w), dtype=bool)
    for _ in range(cfg.iterations):
        coords = [yy + v, xx + u]
        bw = map_coordinates(b, coords, order=1, mode="nearest")
        gxw = map_coordinates(gx, coords, order=1, mode="nearest")
        gyw = map_coordinates(gy, coords, order=1, mode="nearest")
        it = bw - a
        axx = uniform_filter(gxw * gxw, win)
        axy = uniform_filter(gxw * gyw, win)
        ayy = uniform_filter(gyw * gyw, win)
        bx = uniform_filter(gxw * it, win)
        by = uniform_filter(gyw * it, win)
        tr = axx + ayy
        det = axx * ayy - axy * axy
        disc = np.sqrt(np.maximum(tr * tr / 4.0 - det, 0.0))
        lmin = tr / 2.0 - disc
        valid = lmin > cfg.min_eigenvalue
        ok = valid & (det > 1e-300)
        safe_det = np.where(ok, det, 1.0)
        du = np.where(ok, -(ayy * bx - axy * by) / safe_det, 0.0)
        dv = np.where(ok, -(axx * by - axy * bx) / safe_det, 0.0)
        u = u + du
        v = v + dv
    return u, v, valid


def estimate_flow(src, dst, cfg=None):
    """Dense flow anchored on src, pointing toward dst (see module doc).

    Deterministic for a fixed config; textureless regions come back with
    zero displacement and valid=False.
    """
    cfg = cfg or FlowEstimatorConfig()
    a = _to_luma(src)
    b = _to_luma(dst)
    if a.shape != b.shape:
        raise StructuralError("flow inputs differ in size: %s vs %s"
                              % (a.shape, b.shape))
    if cfg.smoothing > 0:
        a = gaussian_filter(a, cfg.smoothing)
        b = gaussian_filter(b, cfg.smoothing)
    pyr_a = _pyramid(a, cfg.pyramid_levels)
    pyr_b = _pyramid(b, cfg.pyramid_levels)

    u = np.zeros(pyr_a[-1].shape, dtype=np.float64)
    v = np.zeros_like(u)
    valid = np.zeros(u.shape, dtype=bool)
    for a_l, b_l in zip(reversed(pyr_a), reversed(pyr_b)):
        if u.shape != a_l.shape:
            u = _resize_linear(u, a_l.shape) * 2.0
            v = _resize_linear(v, a_l.shape) * 2.0
        u, v, valid = _lk_refine(a_l, b_l, u, v, cfg)
    return FlowField(u=u, v=v, valid=valid)


def warp(image, flow):
    """Sample image at p + flow(p) for every pixel p.

    Returns (warped, valid): bilinear samples plus a mask that is False
    where the sampling position leaves the image or the flow itself is
    marked invalid. Warped values outside the mask are nearest-edge
    extensions, present only so the array stays finite.
    """
    is_frame = isinstance(image, Frame)
    data = np.asarray(image.data if is_frame else image, dtype=np.float64)
    h, w = flow.shape
    if data.shape[:2] != (h, w):
        raise StructuralError("flow shape %s does not match image %s"
                              % ((h, w), data.shape[:2]))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = yy + flow.v
    cx = xx + flow.u
    inb = (cx >= 0.0) & (cx <= w - 1.0) & (cy >= 0.0) & (cy <= h - 1.0)
    valid = inb & flow.valid
    coords = [np.clip(cy, 0.0, h - 1.0), np.clip(cx, 0.0, w - 1.0)]
    if data.ndim == 2:
        out = map_coordinates(data, coords, order=1, mode="nearest")
    else:
        out = np.stack([map_coordinates(data[:, :, c], coords, order=1,
                                        mode="nearest")
                        for c in range(data.shape[2])], axis=2)
    if is_frame:
        return image.with_data(out), valid
    return out, valid


def occlusion_mask(fwd, bwd, params=None):
    """Forward-backward consistency mask.

    Pixel p is reliable iff |fwd(p) + bwd(p + fwd(p))|^2 stays below
    alpha * (|fwd(p)|^2 + |bwd(p + fwd(p))|^2) + beta. bwd is sampled
    bilinearly with nearest-edge extension, so constant opposing fields
    validate everywhere.
    """
    params = params or OcclusionParams()
    if fwd.shape != bwd.shape:
        raise StructuralError("flow fields differ in size")
    h, w = fwd.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [np.clip(yy + fwd.v, 0.0, h - 1.0),
              np.clip(xx + fwd.u, 0.0, w - 1.0)]
    bu = map_coordinates(bwd.u, coords, order=1, mode="nearest")
    bv = map_coordinates(bwd.v, coords, order=1, mode="nearest")
    lhs = (fwd.u + bu) ** 2 + (fwd.v + bv) ** 2
    rhs = params.alpha * (fwd.u ** 2 + fwd.v ** 2 + bu ** 2 + bv ** 2) + params.beta
    return lhs < rhs


def zero_flow(shape):
    """All-zero FlowField with a fully valid mask (identity warp)."""
    z = np.zeros(shape, dtype=np.float64)
    return FlowField(u=z, v=z.copy(), valid=np.ones(shape, dtype=bool))


def write_flo(path, flow):
    """Write a FlowField as a Middlebury .flo file (little-endian float32)."""
    h, w = flow.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[:, :, 0] = flow.u
    data[:, :, 1] = flow.v
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(np.array([FLO_MAGIC], dtype="<f4").tobytes())
            f.write(np.array([w, h], dtype="<i4").tobytes())
            f.write(data.tobytes())
    except OSError as exc:
        raise FrameIOError("could not write %s: %s" % (path, exc))


def read_flo(path):
    """Read a Middlebury .flo file into a FlowField.

    Samples at magnitude >= 1e9 follow the format's "unknown flow"
    convention and come back with valid=False (displacement zeroed).
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FrameIOError("could not read %s: %s" % (path, exc))
    if len(raw) < 12:
        raise StructuralError("%s: too short for a .flo header" % path)
    magic = np.frombuffer(raw, dtype="<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise StructuralError("%s: bad .flo magic %r" % (path, float(magic)))
    w, h = (int(x) for x in np.frombuffer(raw, dtype="<i4", count=2, offset=4))
    if not (0 < w < 100000 and 0 < h < 100000):
        raise StructuralError("%s: implausible size %dx%d" % (path, w, h))
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise StructuralError("%s: expected %d bytes, found %d"
                              % (path, expected, len(raw)))
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    u = data[:, :, 0].astype(np.float64)
    v = data[:, :, 1].astype(np.float64)
    valid = (np.abs(u) < UNKNOWN_FLOW) & (np.abs(v) < UNKNOWN_FLOW)
    valid &= np.isfinite(u) & np.isfinite(v)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    return FlowField(u=u, v=v, valid=valid)
