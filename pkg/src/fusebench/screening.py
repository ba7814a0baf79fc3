"""Objective quality screening for paired infrared-visible sequences.

Three stages, each only removing scenes:

1. hard per-frame rules on the infrared channel (entropy, contrast, dark
   area), with a configurable tolerance for the fraction of failing frames
   (default: one bad frame fails the scene);
2. composite-score ranking, dropping the bottom slice;
3. illumination ranking on the visible channel, dropping the brightest
   slice (classical single-scale Retinex stands in for the learned
   decomposition; only the mean-illumination ordering is consumed).

All intensity statistics run on 0-255 integer levels of the luma plane.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import (ContractError, Frame, LUMA_WEIGHTS, StructuralError,
                   quantize_levels)

HIST_BINS = 256


def _levels(image):
    """Frame or array -> flat int array of 0-255 luma levels.

    2-D integer arrays are taken as levels directly; float data (and
    Frames) are [0, 1] luma quantized with round-half-away rounding.
    """
    if isinstance(image, Frame):
        data = image.luma()
    else:
        arr = np.asarray(image)
        if arr.size == 0:
            raise ContractError("empty image")
        if arr.ndim == 2 and np.issubdtype(arr.dtype, np.integer):
            if arr.min() < 0 or arr.max() > 255:
                raise ContractError("integer levels must lie in 0..255")
            return arr.astype(np.int64).ravel()
        data = arr.astype(np.float64)
        if data.ndim == 3:
            w = LUMA_WEIGHTS
            data = (w[0] * data[:, :, 0] + w[1] * data[:, :, 1]
                    + w[2] * data[:, :, 2])
    if data.size == 0:
        raise ContractError("empty image")
    if data.min() < 0.0 or data.max() > 1.0:
        raise ContractError("float image samples must lie in [0, 1]")
    return quantize_levels(data, 255).ravel()


def image_entropy(image):
    """Shannon entropy in bits of the 256-bin level histogram.

    Empty bins contribute zero; the result lies in [0, 8].
    """
    levels = _levels(image)
    counts = np.bincount(levels, minlength=HIST_BINS)
    p = counts[counts > 0] / levels.size
    return float(-(p * np.log2(p)).sum() + 0.0)


def global_contrast(image):
    """Population standard deviation of the 0-255 levels (divide by N)."""
    levels = _levels(image).astype(np.float64)
    return float(np.sqrt(np.mean((levels - levels.mean()) ** 2)))


def dark_area_proportion(image, threshold=10):
    """Fraction of pixels at or below the dark threshold (inclusive)."""
    levels = _levels(image)
    return float(np.mean(levels <= int(threshold)))


def composite_score(h, sigma, d, h_max, sigma_max,
                    weights=(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)):
    """Weighted quality score: w1*H/H_max + w2*sigma/sigma_max + w3*(1-D).

    The maxima normalize the first two terms across the dataset, so the
    score lands in [0, 1] when the weights sum to 1.
    """
    w = tuple(float(x) for x in weights)
    if abs(sum(w) - 1.0) > 1e-9:
        raise ContractError("score weights must sum to 1")
    if h_max <= 0.0 or sigma_max <= 0.0:
        raise ContractError("normalization maxima must be positive")
    return w[0] * h / h_max + w[1] * sigma / sigma_max + w[2] * (1.0 - d)


def retinex_illumination(image):
    """Classical illumination estimate: smoothed per-pixel channel maximum.

    The surround is a Gaussian with standard deviation max(W, H)/8
    (reflect boundary, so constants are preserved). Returns the
    illumination map and its spatial mean; downstream only the mean's
    ranking is used.
    """
    data = image.data if isinstance(image, Frame) else np.asarray(
        image, dtype=np.float64)
    bright = data.max(axis=2) if data.ndim == 3 else data
    sigma = max(bright.shape) / 8.0
    l_map = gaussian_filter(bright.astype(np.float64), sigma)
    return l_map, float(l_map.mean())


@dataclass(frozen=True)
class ScreenThresholds:
    """Knobs for the three screening stages (values are the defaults)."""

    h_min: float = 6.0
    sigma_min: float = 30.0
    dark_max: float = 0.05
    dark_level: int = 10
    drop_bottom: float = 0.10
    drop_top_illum: float = 0.25
    frame_fail_limit: float = 0.0
    weights: tuple = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    h_max: float = None
    sigma_max: float = None


@dataclass(frozen=True)
class ScreenReport:
    """Every per-frame statistic and per-scene decision, with reasons."""

    scenes: tuple
    h_max: float
    sigma_max: float
    thresholds: ScreenThresholds
    kept: tuple = field(default=())

    def to_dict(self):
        t = self.thresholds
        return {
            "thresholds": {
                "h_min": t.h_min, "sigma_min": t.sigma_min,
                "dark_max": t.dark_max, "dark_level": t.dark_level,
                "drop_bottom": t.drop_bottom,
                "drop_top_illum": t.drop_top_illum,
                "frame_fail_limit": t.frame_fail_limit,
                "weights": list(t.weights),
            },
            "h_max": self.h_max,
            "sigma_max": self.sigma_max,
            "kept": list(self.kept),
            "scenes": [dict(s) for s in self.scenes],
        }


def _frame_rules(h, sigma, d, th):
    """Failing rule names for one frame (empty tuple = passes)."""
    reasons = []
    if not h > th.h_min:
        reasons.append("entropy <= %g" % th.h_min)
    if not sigma > th.sigma_min:
        reasons.append("contrast <= %g" % th.sigma_min)
    if not d < th.dark_max:
        reasons.append("dark fraction >= %g" % th.dark_max)
    return tuple(reasons)


def screen_scene_set(scenes, thresholds=None):
    """Run the full three-stage screen over (scene_id, ir_seq, rgb_seq) triples.

    H/sigma/D come from the infrared sequence, illumination from the
    visible one. Normalization maxima are the largest per-scene mean H and
    sigma over the whole input set unless the thresholds pin them; with a
    single scene they must be pinned explicitly.
    """
    th = thresholds or ScreenThresholds()
    scenes = list(scenes)
    if not scenes:
        raise StructuralError("screening needs at least one scene")
    if len(scenes) < 2 and (th.h_max is None or th.sigma_max is None):
        raise ContractError(
            "normalization maxima are undefined for a single scene; "
            "pass explicit h_max/sigma_max")

    records = []
    for scene_id, ir_seq, rgb_seq in scenes:
        per_frame = []
        fails = 0
        for idx, (ir, rgb) in enumerate(zip(ir_seq, rgb_seq)):
            h = image_entropy(ir)
            sigma = global_contrast(ir)
            d = dark_area_proportion(ir, th.dark_level)
            _, mean_l = retinex_illumination(rgb)
            rules = _frame_rules(h, sigma, d, th)
            if rules:
                fails += 1
            per_frame.append({"frame": idx, "H": h, "sigma": sigma, "D": d,
                              "mean_L": mean_l,
                              "failed_rules": list(rules)})
        n = len(per_frame)
        rec = {
            "scene_id": str(scene_id),
            "frames": per_frame,
            "mean_H": sum(f["H"] for f in per_frame) / n,
            "mean_sigma": sum(f["sigma"] for f in per_frame) / n,
            "mean_D": sum(f["D"] for f in per_frame) / n,
            "mean_L": sum(f["mean_L"] for f in per_frame) / n,
            "frame_fail_fraction": fails / n,
            "discard_reasons": [],
        }
        records.append(rec)

    h_max = th.h_max if th.h_max is not None else max(
        r["mean_H"] for r in records)
    sigma_max = th.sigma_max if th.sigma_max is not None else max(
        r["mean_sigma"] for r in records)

    # stage 1: hard per-frame rules
    stage1 = []
    for rec in records:
        if rec["frame_fail_fraction"] > th.frame_fail_limit:
            bad = sorted({r for f in rec["frames"] for r in f["failed_rules"]})
            rec["discard_reasons"].append(
                "stage1: %.0f%% of frames fail hard rules (%s)"
                % (100.0 * rec["frame_fail_fraction"], "; ".join(bad)))
        else:
            stage1.append(rec)

    # every scene gets a score for the report; ranking uses stage-1 survivors
    for rec in records:
        rec["score"] = composite_score(rec["mean_H"], rec["mean_sigma"],
                                       rec["mean_D"], h_max, sigma_max,
                                       th.weights)

    # stage 2: drop the floor(drop_bottom * n) lowest scores
    n_drop = math.floor(th.drop_bottom * len(stage1))
    ranked = sorted(stage1, key=lambda r: (r["score"], r["scene_id"]))
    for rec in ranked[:n_drop]:
        rec["discard_reasons"].append(
            "stage2: composite score %.4f in bottom %g%%"
            % (rec["score"], 100.0 * th.drop_bottom))
    stage2 = ranked[n_drop:]

    # stage 3: drop the ceil(drop_top_illum * n) brightest scenes
    n_top = math.ceil(th.drop_top_illum * len(stage2)) if stage2 else 0
    by_illum = sorted(stage2, key=lambda r: (-r["mean_L"], r["scene_id"]))
    for rec in by_illum[:n_top]:
        rec["discard_reasons"].append(
            "stage3: mean illumination %.4f in top %g%%"
            % (rec["mean_L"], 100.0 * th.drop_top_illum))
    stage3 = by_illum[n_top:]

    kept = tuple(sorted(r["scene_id"] for r in stage3))
    for rec in records:
        rec["kept"] = rec["scene_id"] in kept
    records.sort(key=lambda r: r["scene_id"])
    return ScreenReport(scenes=tuple(records), h_max=float(h_max),
                        sigma_max=float(sigma_max), thresholds=th, kept=kept)
