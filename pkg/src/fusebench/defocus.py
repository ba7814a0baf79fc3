"""Depth-driven defocus: circle-of-confusion maps and spatially varying blur.

The multi-focus pair synthesis picks two focal depths per scene (background
plane and nearest segmented object), converts per-pixel inverse depth into
a circle-of-confusion radius for each, and renders a far-focused and a
near-focused copy of every frame with a per-pixel Gaussian blur.
"""

import logging

import cv2
import numpy as np

from .core import (ContractError, DepthMap, Frame, SegmentMaskSet,
                   StructuralError, VideoSequence)
from pathlib import Path

log = logging.getLogger("fusebench.defocus")

DEFAULT_SIGMA = 0.025
BACKGROUND_PERCENTILE = 20.0
MIN_KERNEL = 0.5          # below this many pixels the blur degenerates to identity
STD_PER_KERNEL = 1.0 / 3.0


def compute_coc(inv_depth, focal_inv_depth, sigma=DEFAULT_SIGMA):
    """Normalized circle of confusion from normalized inverse depth.

    c = d_f * |1 - d/d_f| * sigma, expressed as a fraction of the long
    image side. Grows linearly with distance (in inverse depth) from the
    focal plane and vanishes on it.
    """
    d_f = float(focal_inv_depth)
    if d_f <= 0.0:
        raise ContractError("focal inverse depth must be positive")
    d = np.asarray(inv_depth, dtype=np.float64)
    return d_f * np.abs(1.0 - d / d_f) * float(sigma)


def coc_exact(depth, focal_depth, aperture, focal_length):
    """Thin-lens circle of confusion on metric depths.

    c = A * f * |D - D_f| / (D * (D_f - f)). Used as the physical
    reference the normalized approximation is checked against.
    """
    d = np.asarray(depth, dtype=np.float64)
    d_f = float(focal_depth)
    f = float(focal_length)
    if f <= 0.0 or d_f <= f:
        raise ContractError("need focal_depth > focal_length > 0")
    if d.size and d.min() <= 0.0:
        raise ContractError("metric depth must be positive")
    return float(aperture) * f * np.abs(d - d_f) / (d * (d_f - f))


def select_focal_depths(depth_maps, mask_set):
    """Scene focal depths (far, near) fixed from the first frame.

    far: the 20th percentile of first-frame inverse depth, i.e. a plane
    inside the background. near: the mean inverse depth of the closest
    segmented object (max over objects of per-object mean).
    """
    first = depth_maps[0].values
    far = float(np.percentile(first, BACKGROUND_PERCENTILE))

    labels = mask_set[0]
    ids = np.unique(labels)
    ids = ids[ids > 0]
    if ids.size == 0:
        raise StructuralError(
            "first-frame mask has no foreground objects; "
            "select a near focal depth manually")
    near = max(float(first[labels == i].mean()) for i in ids)
    if far <= 0.0:
        raise ContractError(
            "background focal depth is not positive; depth map degenerate")
    if near <= 0.0:
        raise ContractError("object focal depth is not positive")
    return far, near


def spatially_varying_blur(image, coc):
    """Per-pixel Gaussian blur with kernel size driven by the CoC map.

    Each output pixel is the Gaussian-weighted mean of its square
    neighborhood: kernel size k = coc * max(H, W) pixels, std = k/3,
    window radius ceil(k). Pixels with k < 0.5 pass through unblurred.
    Weights renormalize over in-bounds taps so borders stay unbiased.
    Radii are capped at min(H, W)//4 (logged when it happens).
    """
    arr = np.asarray(image, dtype=np.float64)
    coc = np.asarray(coc, dtype=np.float64)
    if coc.shape != arr.shape[:2]:
        raise ContractError("CoC map shape %s does not match image %s"
                            % (coc.shape, arr.shape[:2]))
    if coc.size and coc.min() < 0.0:
        raise ContractError("CoC values must be non-negative")
    h, w = arr.shape[:2]
    k = coc * max(h, w)

    radius = np.ceil(k).astype(np.int64)
    radius[k < MIN_KERNEL] = 0
    cap = min(h, w) // 4
    if radius.max() > cap:
        log.warning("capping blur radius %d to %d (image %dx%d)",
                    int(radius.max()), cap, w, h)
        radius = np.minimum(radius, cap)

    r_max = int(radius.max())
    if r_max == 0:
        return arr.copy()

    std = np.maximum(k * STD_PER_KERNEL, 1e-12)
    inv_two_var = 1.0 / (2.0 * std * std)

    planes = arr if arr.ndim == 3 else arr[:, :, None]
    acc = np.zeros_like(planes)
    norm = np.zeros((h, w), dtype=np.float64)

    for dy in range(-r_max, r_max + 1):
        ys_lo, ys_hi = max(0, dy), h + min(0, dy)        # source rows
        yt_lo, yt_hi = max(0, -dy), h + min(0, -dy)      # target rows
        for dx in range(-r_max, r_max + 1):
            xs_lo, xs_hi = max(0, dx), w + min(0, dx)
            xt_lo, xt_hi = max(0, -dx), w + min(0, -dx)
            cheb = max(abs(dy), abs(dx))
            rad_t = radius[yt_lo:yt_hi, xt_lo:xt_hi]
            sel = rad_t >= cheb
            if not sel.any():
                continue
            if cheb == 0:
                wgt = np.ones(rad_t.shape, dtype=np.float64)
            else:
                dist2 = float(dy * dy + dx * dx)
                wgt = np.exp(-dist2 * inv_two_var[yt_lo:yt_hi, xt_lo:xt_hi])
                wgt = np.where(sel, wgt, 0.0)
            acc[yt_lo:yt_hi, xt_lo:xt_hi] += (
                wgt[:, :, None] * planes[ys_lo:ys_hi, xs_lo:xs_hi])
            norm[yt_lo:yt_hi, xt_lo:xt_hi] += wgt

    out = acc / norm[:, :, None]
    return out if arr.ndim == 3 else out[:, :, 0]


def synth_mff_pair(seq, depth_maps, mask_set, sigma=DEFAULT_SIGMA):
    """Far-focused and near-focused copies of a sequence.

    depth_maps: one DepthMap per frame. mask_set: per-frame object labels;
    only the first frame drives focal-depth selection, which then stays
    fixed for the whole scene.
    """
    if len(depth_maps) != len(seq):
        raise StructuralError(
            "depth count %d does not match frame count %d"
            % (len(depth_maps), len(seq)))
    if len(mask_set) != len(seq):
        raise StructuralError(
            "mask count %d does not match frame count %d"
            % (len(mask_set), len(seq)))
    for i, dm in enumerate(depth_maps):
        if (dm.height, dm.width) != (seq.height, seq.width):
            raise StructuralError("depth map %d size mismatch" % i)

    far_fd, near_fd = select_focal_depths(depth_maps, mask_set)
    far_frames, near_frames = [], []
    for frame, dm in zip(seq, depth_maps):
        for fd, sink in ((far_fd, far_frames), (near_fd, near_frames)):
            coc = compute_coc(dm.values, fd, sigma)
            blurred = spatially_varying_blur(frame.data, coc)
            sink.append(frame.with_data(np.clip(blurred, 0.0, 1.0)))
    make = lambda frames, role: VideoSequence(
        frames=tuple(frames), fps=seq.fps, scene_id=seq.scene_id, role=role)
    return make(far_frames, "source-A"), make(near_frames, "source-B")


def _read_gray(path):
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise StructuralError("could not read %s" % path)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    return arr


def load_depth_maps(directory):
    """Directory of grayscale PNGs -> list of DepthMap.

    8-bit maps normalize by 255, 16-bit by 65535; either way the stored
    value is taken as inverse depth (brighter = closer).
    """
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise StructuralError("no depth PNGs in %s" % directory)
    maps = []
    for path in paths:
        arr = _read_gray(path)
        scale = 255.0 if arr.dtype == np.uint8 else 65535.0
        maps.append(DepthMap(values=arr.astype(np.float64) / scale))
    return maps


def load_mask_set(directory):
    """Directory of label-map PNGs -> SegmentMaskSet (0 = background)."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise StructuralError("no mask PNGs in %s" % directory)
    return SegmentMaskSet(labels=tuple(
        _read_gray(p).astype(np.int64) for p in paths))
