"""Fusion quality metrics: VIF, SSIM, MI, Qabf, BiSWE, MS2R, and the
reference loss calculators.

Every constant is pinned here because cross-implementation comparability
is the whole point:

- SSIM: 11x11 Gaussian window (std 1.5), K1=0.01, K2=0.03, dynamic range
  1.0, valid-region windows (no padding), mean over window positions.
- MI: 256x256 joint histogram of round-half-away 0-255 levels, in bits.
- VIF: pixel-domain, 4 scales with Gaussian windows of size 2^(5-s)+1 and
  std size/5, decimation by 2 after a valid-mode pre-filter, noise
  variance sigma_nsq=2 on the 0-255 scale (inputs are scaled by 255
  internally), stabilizer eps=1e-10.
- Qabf: 3x3 Sobel (zero padding), strength ratio and mod-pi orientation
  agreement through the standard sigmoids, normalized so that perfect
  preservation scores exactly 1.
- BiSWE is reported on the 0-255 level scale; every other quantity stays
  on [0, 1] luma.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate

from .core import (ContractError, Frame, LUMA_WEIGHTS, StructuralError,
                   quantize_levels)
from .flow import estimate_flow, occlusion_mask, warp

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0

VIF_SIGMA_NSQ = 2.0
VIF_EPS = 1e-10
VIF_SCALES = 4

QABF_GAMMA_G = 0.9994
QABF_KAPPA_G = -15.0
QABF_SIGMA_G = 0.5
QABF_GAMMA_A = 0.9879
QABF_KAPPA_A = -22.0
QABF_SIGMA_A = 0.8

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = np.array([[-1.0, -2.0, -1.0],
                    [0.0, 0.0, 0.0],
                    [1.0, 2.0, 1.0]])

LOSS_WEIGHTS = {
    "MEF": (10.0, 2.0),
    "MFF": (1.0, 0.5),
    "IVF": (5.0, 2.0),
    "MVF": (1.0, 1.0),
}

AGGREGATION_DEFAULTS = {"vif": "sum", "mi": "sum", "ssim": "mean"}


def _luma01(image):
    if isinstance(image, Frame):
        return np.asarray(image.luma(), dtype=np.float64)
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        w = LUMA_WEIGHTS
        arr = w[0] * arr[:, :, 0] + w[1] * arr[:, :, 1] + w[2] * arr[:, :, 2]
    if arr.ndim != 2:
        raise ContractError("metric inputs must be 2-D or RGB images")
    return arr


def _same_shape(*imgs):
    shapes = {i.shape for i in imgs}
    if len(shapes) > 1:
        raise StructuralError("metric inputs differ in size: %s" % shapes)


def gaussian_window(size, sigma):
    """Normalized 2-D Gaussian kernel (separable product form)."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img, kernel):
    """'valid'-mode correlation with the kernel (no padding anywhere)."""
    view = sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", view, kernel)


def sobel_gradients(img):
    """Zero-padded 3x3 Sobel derivatives (gx, gy), correlation semantics."""
    img = np.asarray(img, dtype=np.float64)
    gx = correlate(img, SOBEL_X, mode="constant", cval=0.0)
    gy = correlate(img, SOBEL_Y, mode="constant", cval=0.0)
    return gx, gy


def gradient_magnitude(img):
    gx, gy = sobel_gradients(img)
    return np.hypot(gx, gy)


def ssim(a, b):
    """Mean local structural similarity (constants in the module doc)."""
    x = _luma01(a)
    y = _luma01(b)
    _same_shape(x, y)
    if min(x.shape) < SSIM_WINDOW:
        raise ContractError("image smaller than the %dx%d SSIM window"
                            % (SSIM_WINDOW, SSIM_WINDOW))
    win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    mx = _filter_valid(x, win)
    my = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    smap = (((2.0 * mx * my + c1) * (2.0 * sxy + c2))
            / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return float(smap.mean())


def mutual_information(a, b):
    """MI in bits over the 256x256 joint level histogram; mi(x,x) = H(x)."""
    x = _luma01(a)
    y = _luma01(b)
    _same_shape(x, y)
    for img in (x, y):
        if img.min() < 0.0 or img.max() > 1.0:
            raise ContractError("MI inputs must lie in [0, 1]")
    lx = quantize_levels(x, 255).ravel()
    ly = quantize_levels(y, 255).ravel()
    joint = np.bincount(lx * 256 + ly, minlength=256 * 256).reshape(256, 256)
    p = joint / lx.size
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    nz = p > 0
    pi, pj = np.nonzero(nz)
    vals = p[nz]
    return float((vals * (np.log2(vals) - np.log2(px[pi])
                          - np.log2(py[pj]))).sum())


def vif(ref, dist):
    """Pixel-domain visual information fidelity over 4 Gaussian scales.

    Inputs are [0, 1] luma; internally both are scaled by 255 so the
    canonical sigma_nsq=2 noise floor applies. Degenerate (flat) reference
    content yields 1.0 by convention.
    """
    x = _luma01(ref) * 255.0
    y = _luma01(dist) * 255.0
    _same_shape(x, y)
    num = 0.0
    den = 0.0
    for scale in range(1, VIF_SCALES + 1):
        size = 2 ** (VIF_SCALES - scale + 1) + 1
        win = gaussian_window(size, size / 5.0)
        if scale > 1:
            if min(x.shape) < size:
                raise ContractError("image too small for VIF scale %d" % scale)
            x = _filter_valid(x, win)[::2, ::2]
            y = _filter_valid(y, win)[::2, ::2]
        if min(x.shape) < size:
            raise ContractError("image too small for VIF scale %d" % scale)
        mx = _filter_valid(x, win)
        my = _filter_valid(y, win)
        s1 = np.maximum(_filter_valid(x * x, win) - mx * mx, 0.0)
        s2 = np.maximum(_filter_valid(y * y, win) - my * my, 0.0)
        s12 = _filter_valid(x * y, win) - mx * my

        g = s12 / (s1 + VIF_EPS)
        sv = s2 - g * s12
        low1 = s1 < VIF_EPS
        g = np.where(low1, 0.0, g)
        sv = np.where(low1, s2, sv)
        s1 = np.where(low1, 0.0, s1)
        low2 = s2 < VIF_EPS
        g = np.where(low2, 0.0, g)
        sv = np.where(low2, 0.0, sv)
        neg = g < 0.0
        sv = np.where(neg, s2, sv)
        g = np.where(neg, 0.0, g)
        sv = np.maximum(sv, VIF_EPS)

        num += float(np.log10(1.0 + g * g * s1 / (sv + VIF_SIGMA_NSQ)).sum())
        den += float(np.log10(1.0 + s1 / VIF_SIGMA_NSQ).sum())
    if den == 0.0:
        return 1.0
    return num / den


def _strength_orientation(img):
    gx, gy = sobel_gradients(img)
    g = np.hypot(gx, gy)
    alpha = np.arctan2(gy, gx)
    alpha = np.where(alpha > np.pi / 2.0, alpha - np.pi, alpha)
    alpha = np.where(alpha <= -np.pi / 2.0, alpha + np.pi, alpha)
    return g, alpha


def _qabf_max():
    qg = QABF_GAMMA_G / (1.0 + np.exp(QABF_KAPPA_G * (1.0 - QABF_SIGMA_G)))
    qa = QABF_GAMMA_A / (1.0 + np.exp(QABF_KAPPA_A * (1.0 - QABF_SIGMA_A)))
    return qg * qa


def _qabf_preservation(gs, als, gf, alf):
    gmax = np.maximum(gs, gf)
    ratio = np.where(gmax > 0.0, np.minimum(gs, gf) / np.where(gmax > 0.0,
                                                               gmax, 1.0), 1.0)
    dalpha = np.abs(als - alf)
    dalpha = np.where(dalpha > np.pi / 2.0, np.pi - dalpha, dalpha)
    agree = 1.0 - dalpha / (np.pi / 2.0)
    qg = QABF_GAMMA_G / (1.0 + np.exp(QABF_KAPPA_G * (ratio - QABF_SIGMA_G)))
    qa = QABF_GAMMA_A / (1.0 + np.exp(QABF_KAPPA_A * (agree - QABF_SIGMA_A)))
    return qg * qa / _qabf_max()


def qabf(src_a, src_b, fused):
    """Gradient-preservation score in [0, 1], 1 at perfect preservation.

    Per pixel, how faithfully each source's Sobel strength and orientation
    survive in the fused image, sigmoid-shaped and weighted by the source
    strengths. Both sources completely flat -> 0 by convention.
    """
    a = _luma01(src_a)
    b = _luma01(src_b)
    f = _luma01(fused)
    _same_shape(a, b, f)
    ga, ala = _strength_orientation(a)
    gb, alb = _strength_orientation(b)
    gf, alf = _strength_orientation(f)
    qa = _qabf_preservation(ga, ala, gf, alf)
    qb = _qabf_preservation(gb, alb, gf, alf)
    wsum = (ga + gb).sum()
    if wsum == 0.0:
        return 0.0
    return float((qa * ga + qb * gb).sum() / wsum)


def two_source_aggregate(metric, src_a, src_b, fused, mode=None):
    """Collapse a two-input metric against both sources into one number.

    metric is "vif", "ssim", or "mi". The recorded conventions are sum for
    VIF/MI and mean for SSIM; pass mode="sum"/"mean" to override. Reports
    echo whichever convention was used.
    """
    funcs = {"vif": vif, "ssim": ssim, "mi": mutual_information}
    if metric not in funcs:
        raise ContractError("unknown two-source metric %r" % (metric,))
    mode = mode or AGGREGATION_DEFAULTS[metric]
    if mode not in ("sum", "mean"):
        raise ContractError("aggregation mode must be sum or mean")
    fn = funcs[metric]
    m1 = fn(src_a, fused)
    m2 = fn(src_b, fused)
    return m1 + m2 if mode == "sum" else (m1 + m2) / 2.0


def biswe_report(prev, cur, nxt, flows, masks):
    """Bidirectional self-warping error with full term breakdown.

    flows = (cur->prev, cur->next), both anchored on the middle frame;
    masks are the matching occlusion masks. Each term is the masked mean
    absolute difference between the middle frame and a warped neighbor,
    scaled to 0-255 levels. An empty effective mask zeroes its term and
    raises the corresponding flag.
    """
    c = _luma01(cur)
    neighbors = {"prev": _luma01(prev), "next": _luma01(nxt)}
    out = {}
    total01 = 0.0
    for key, fl, m in (("prev", flows[0], masks[0]),
                       ("next", flows[1], masks[1])):
        img = neighbors[key]
        _same_shape(c, img)
        warped, wvalid = warp(img, fl)
        eff = np.asarray(m, dtype=bool) & wvalid
        if eff.any():
            term01 = float(np.abs(c - warped)[eff].mean())
            out["empty_%s" % key] = False
        else:
            term01 = 0.0
            out["empty_%s" % key] = True
        out["term_%s" % key] = term01 * 255.0
        total01 += term01
    out["value"] = out["term_prev"] + out["term_next"]
    out["value_01"] = total01
    return out


def biswe(prev, cur, nxt, flows, masks):
    """Scalar BiSWE on the 0-255 level scale (see biswe_report)."""
    return biswe_report(prev, cur, nxt, flows, masks)["value"]


def ms2r_from_flows(fused_flows, ref_a_flows, ref_b_flows):
    """MS2R given precomputed (O_0to1, O_1to2) per clip.

    Compares the flow change (acceleration) of the fused clip against each
    reference clip: mean over all pixels of the L1 norm of the 2-vector
    difference, summed over both references.
    """
    def accel(pair):
        o01, o12 = pair
        return o12.u - o01.u, o12.v - o01.v

    fu, fv = accel(fused_flows)
    total = 0.0
    for pair in (ref_a_flows, ref_b_flows):
        ru, rv = accel(pair)
        total += float(np.mean(np.abs(fu - ru) + np.abs(fv - rv)))
    return total


def ms2r(fused_clip, ref_a_clip, ref_b_clip, estimator=None):
    """MS2R of three aligned 3-frame clips, estimating flows on the fly.

    estimator is any callable (src, dst) -> FlowField; defaults to the
    internal pyramidal estimator.
    """
    est = estimator or estimate_flow

    def clip_flows(clip):
        return (est(clip[0], clip[1]), est(clip[1], clip[2]))

    return ms2r_from_flows(clip_flows(fused_clip), clip_flows(ref_a_clip),
                           clip_flows(ref_b_clip))


def loss_reference(fused_clip, src_a_clip, src_b_clip, task,
                   flows=None, masks=None, estimator=None):
    """Reference evaluation of the compound training loss on one triple.

    All terms are computed on [0, 1] luma of the middle frame (the
    temporal term covers the whole triple):

    - IVF/MVF spatial: mean |F - max(A, B)|.
    - MEF/MFF spatial: L_int + L_SSIM with L_int = mean |F - mean(A, B)|
      and L_SSIM = 2 - SSIM(A, F) - SSIM(B, F).
    - gradient: mean | |grad F| - max(|grad A|, |grad B|) | (Sobel).
    - temporal: the BiSWE construction on the fused triple, kept on the
      [0, 1] scale to match the other terms.

    total = l_spatial + alpha1 * l_grad + alpha2 * l_temp with the task's
    weight preset.
    """
    task = str(task).upper()
    if task not in LOSS_WEIGHTS:
        raise ContractError("unknown task %r (expected MEF/MFF/IVF/MVF)"
                            % (task,))
    alpha1, alpha2 = LOSS_WEIGHTS[task]
    f = _luma01(fused_clip[1])
    a = _luma01(src_a_clip[1])
    b = _luma01(src_b_clip[1])
    _same_shape(f, a, b)

    terms = {"task": task, "alpha1": alpha1, "alpha2": alpha2}
    if task in ("IVF", "MVF"):
        l_spatial = float(np.mean(np.abs(f - np.maximum(a, b))))
    else:
        l_int = float(np.mean(np.abs(f - (a + b) / 2.0)))
        l_ssim = 2.0 - ssim(a, f) - ssim(b, f)
        terms["l_int"] = l_int
        terms["l_ssim"] = l_ssim
        l_spatial = l_int + l_ssim

    l_grad = float(np.mean(np.abs(
        gradient_magnitude(f)
        - np.maximum(gradient_magnitude(a), gradient_magnitude(b)))))

    if flows is None:
        est = estimator or estimate_flow
        fwd_p = est(fused_clip[1], fused_clip[0])
        fwd_n = est(fused_clip[1], fused_clip[2])
        flows = (fwd_p, fwd_n)
        if masks is None:
            bwd_p = est(fused_clip[0], fused_clip[1])
            bwd_n = est(fused_clip[2], fused_clip[1])
            masks = (occlusion_mask(fwd_p, bwd_p),
                     occlusion_mask(fwd_n, bwd_n))
    if masks is None:
        raise ContractError("masks are required when flows are supplied")
    rep = biswe_report(fused_clip[0], fused_clip[1], fused_clip[2],
                       flows, masks)
    l_temp = rep["value_01"]

    terms["l_spatial"] = l_spatial
    terms["l_grad"] = l_grad
    terms["l_temp"] = l_temp
    terms["temp_empty_prev"] = rep["empty_prev"]
    terms["temp_empty_next"] = rep["empty_next"]
    terms["total"] = l_spatial + alpha1 * l_grad + alpha2 * l_temp
    return terms


class InternalFlowProvider:
    """Memoized adjacent-pair flows using the built-in estimator."""

    def __init__(self, sequences, cfg=None):
        self._seqs = dict(sequences)
        self._cfg = cfg
        self._cache = {}

    def get(self, kind, t_from, t_to):
        key = (kind, t_from, t_to)
        if key not in self._cache:
            seq = self._seqs[kind]
            self._cache[key] = estimate_flow(seq[t_from], seq[t_to],
                                             self._cfg)
        return self._cache[key]


class FloDirectoryProvider:
    """Adjacent-pair flows from a directory tree of .flo files.

    Layout: <root>/<kind>/fwd_%06d.flo holds the flow anchored on frame t
    sampling frame t+1; <root>/<kind>/bwd_%06d.flo is anchored on t+1
    sampling t. kind is one of fused, src-a, src-b.
    """

    def __init__(self, root):
        from pathlib import Path
        self.root = Path(root)

    def get(self, kind, t_from, t_to):
        from .flow import read_flo
        if t_to == t_from + 1:
            name = "fwd_%06d.flo" % t_from
        elif t_to == t_from - 1:
            name = "bwd_%06d.flo" % t_to
        else:
            raise ContractError("only adjacent-frame flows are stored")
        return read_flo(self.root / kind / name)


@dataclass(frozen=True)
class MetricReport:
    """Everything evaluate produces for one fused sequence."""

    per_frame: tuple
    per_triple: tuple
    summary: dict
    loss: dict
    aggregation: dict
    task: str

    def to_dict(self):
        return {
            "task": self.task,
            "aggregation": dict(self.aggregation),
            "per_frame": [dict(r) for r in self.per_frame],
            "per_triple": [dict(r) for r in self.per_triple],
            "summary": dict(self.summary),
            "loss": dict(self.loss),
        }


def _frame_record(t, fused_f, a_f, b_f, agg):
    return {
        "frame": t,
        "vif": two_source_aggregate("vif", a_f, b_f, fused_f, agg["vif"]),
        "ssim": two_source_aggregate("ssim", a_f, b_f, fused_f, agg["ssim"]),
        "mi": two_source_aggregate("mi", a_f, b_f, fused_f, agg["mi"]),
        "qabf": qabf(a_f, b_f, fused_f),
    }


def _triple_record(t, fused, src_a, src_b, provider, task):
    fwd_p = provider.get("fused", t, t - 1)
    bwd_p = provider.get("fused", t - 1, t)
    fwd_n = provider.get("fused", t, t + 1)
    bwd_n = provider.get("fused", t + 1, t)
    masks = (occlusion_mask(fwd_p, bwd_p), occlusion_mask(fwd_n, bwd_n))
    rep = biswe_report(fused[t - 1], fused[t], fused[t + 1],
                       (fwd_p, fwd_n), masks)
    ms = ms2r_from_flows(
        (bwd_p, fwd_n),
        (provider.get("src-a", t - 1, t), provider.get("src-a", t, t + 1)),
        (provider.get("src-b", t - 1, t), provider.get("src-b", t, t + 1)))
    loss = loss_reference(
        (fused[t - 1], fused[t], fused[t + 1]),
        (src_a[t - 1], src_a[t], src_a[t + 1]),
        (src_b[t - 1], src_b[t], src_b[t + 1]),
        task, flows=(fwd_p, fwd_n), masks=masks)
    return {
        "frame": t,
        "biswe": rep["value"],
        "biswe_term_prev": rep["term_prev"],
        "biswe_term_next": rep["term_next"],
        "biswe_empty_prev": rep["empty_prev"],
        "biswe_empty_next": rep["empty_next"],
        "ms2r": ms,
        "loss": loss,
    }


def evaluate_sequences(fused, src_a, src_b, task="IVF", provider=None,
                       aggregation=None, map_fn=map):
    """Full metric protocol over aligned fused/source sequences.

    provider supplies adjacent-frame flows (defaults to the internal
    estimator); aggregation optionally overrides the two-source
    conventions. map_fn lets the CLI inject a parallel mapper; results
    are ordered by frame index regardless.
    """
    if not (len(fused) == len(src_a) == len(src_b)):
        raise StructuralError("sequence lengths differ: %d/%d/%d"
                              % (len(fused), len(src_a), len(src_b)))
    if not (fused.width == src_a.width == src_b.width
            and fused.height == src_a.height == src_b.height):
        raise StructuralError("sequence sizes differ")
    task = str(task).upper()
    if task not in LOSS_WEIGHTS:
        raise ContractError("unknown task %r" % (task,))
    agg = dict(AGGREGATION_DEFAULTS)
    agg.update(aggregation or {})
    if provider is None:
        provider = InternalFlowProvider(
            {"fused": fused, "src-a": src_a, "src-b": src_b})

    n = len(fused)
    per_frame = list(map_fn(
        lambda t: _frame_record(t, fused[t], src_a[t], src_b[t], agg),
        range(n)))
    per_triple = list(map_fn(
        lambda t: _triple_record(t, fused, src_a, src_b, provider, task),
        range(1, n - 1)))

    summary = {}
    for key in ("vif", "ssim", "mi", "qabf"):
        summary[key] = sum(r[key] for r in per_frame) / len(per_frame)
    for key in ("biswe", "ms2r"):
        vals = [r[key] for r in per_triple]
        summary[key] = sum(vals) / len(vals) if vals else None

    loss_summary = {"task": task}
    if per_triple:
        first = per_triple[0]["loss"]
        loss_summary["alpha1"] = first["alpha1"]
        loss_summary["alpha2"] = first["alpha2"]
        for key in ("l_spatial", "l_grad", "l_temp", "total"):
            loss_summary[key] = (sum(r["loss"][key] for r in per_triple)
                                 / len(per_triple))
    return MetricReport(per_frame=tuple(per_frame),
                        per_triple=tuple(per_triple),
                        summary=summary, loss=loss_summary,
                        aggregation=agg, task=task)
