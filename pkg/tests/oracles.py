"""Independent brute-force reference implementations.

Everything here recomputes a metric or kernel from its definition with
plain window loops: no separable filtering, no incremental or vectorized
shortcuts shared with the library code. These are the fixtures the fast
implementations are held against.
"""

import math

import numpy as np

# shared constants restated here on purpose so a typo in the library
# constants cannot hide
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2

VIF_SIGMA_NSQ = 2.0
VIF_EPS = 1e-10

QABF_GG, QABF_KG, QABF_SG = 0.9994, -15.0, 0.5
QABF_GA, QABF_KA, QABF_SA = 0.9879, -22.0, 0.8


def gaussian_kernel_ref(size, sigma):
    k = np.empty((size, size))
    c = (size - 1) / 2.0
    for i in range(size):
        for j in range(size):
            k[i, j] = math.exp(-((i - c) ** 2 + (j - c) ** 2)
                               / (2.0 * sigma * sigma))
    return k / k.sum()


def window_mean_ref(img, kernel, i, j):
    size = kernel.shape[0]
    return float((img[i:i + size, j:j + size] * kernel).sum())


def ssim_ref(x, y):
    """Per-window weighted statistics, one window at a time."""
    win = gaussian_kernel_ref(SSIM_WINDOW, SSIM_SIGMA)
    h, w = x.shape
    vals = []
    for i in range(h - SSIM_WINDOW + 1):
        for j in range(w - SSIM_WINDOW + 1):
            mx = window_mean_ref(x, win, i, j)
            my = window_mean_ref(y, win, i, j)
            sxx = window_mean_ref(x * x, win, i, j) - mx * mx
            syy = window_mean_ref(y * y, win, i, j) - my * my
            sxy = window_mean_ref(x * y, win, i, j) - mx * my
            vals.append(((2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1)
                           * (sxx + syy + SSIM_C2)))
    return float(np.mean(vals))


def entropy_ref(levels):
    counts = {}
    for v in np.asarray(levels).ravel().tolist():
        counts[v] = counts.get(v, 0) + 1
    n = sum(counts.values())
    h = 0.0
    for c in counts.values():
        p = c / n
        h -= p * math.log2(p)
    return h


def contrast_ref(levels):
    vals = np.asarray(levels, dtype=np.float64).ravel().tolist()
    mu = sum(vals) / len(vals)
    return math.sqrt(sum((v - mu) ** 2 for v in vals) / len(vals))


def dark_ref(levels, t=10):
    vals = np.asarray(levels).ravel().tolist()
    return sum(1 for v in vals if v <= t) / len(vals)


def quantize_ref(x):
    """[0,1] floats to 0..255 levels, round half away from zero."""
    return np.floor(np.asarray(x, dtype=np.float64) * 255.0 + 0.5).astype(int)


def mi_ref(x, y):
    lx = quantize_ref(x).ravel().tolist()
    ly = quantize_ref(y).ravel().tolist()
    joint = {}
    for a, b in zip(lx, ly):
        joint[(a, b)] = joint.get((a, b), 0) + 1
    n = len(lx)
    px, py = {}, {}
    for (a, b), c in joint.items():
        px[a] = px.get(a, 0) + c
        py[b] = py.get(b, 0) + c
    mi = 0.0
    for (a, b), c in joint.items():
        p = c / n
        mi += p * (math.log2(p) - math.log2(px[a] / n) - math.log2(py[b] / n))
    return mi


def _valid_filter_ref(img, kernel):
    size = kernel.shape[0]
    h, w = img.shape
    out = np.empty((h - size + 1, w - size + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = (img[i:i + size, j:j + size] * kernel).sum()
    return out


def vif_ref(ref, dist):
    """Four-scale pixel-domain VIF from the definition, window by window."""
    x = np.asarray(ref, dtype=np.float64) * 255.0
    y = np.asarray(dist, dtype=np.float64) * 255.0
    num = 0.0
    den = 0.0
    for scale in range(1, 5):
        size = 2 ** (4 - scale + 1) + 1
        win = gaussian_kernel_ref(size, size / 5.0)
        if scale > 1:
            x = _valid_filter_ref(x, win)[::2, ::2]
            y = _valid_filter_ref(y, win)[::2, ::2]
        mx = _valid_filter_ref(x, win)
        my = _valid_filter_ref(y, win)
        s1 = _valid_filter_ref(x * x, win) - mx * mx
        s2 = _valid_filter_ref(y * y, win) - my * my
        s12 = _valid_filter_ref(x * y, win) - mx * my
        for i in range(mx.shape[0]):
            for j in range(mx.shape[1]):
                v1 = max(s1[i, j], 0.0)
                v2 = max(s2[i, j], 0.0)
                v12 = s12[i, j]
                g = v12 / (v1 + VIF_EPS)
                sv = v2 - g * v12
                if v1 < VIF_EPS:
                    g, sv, v1 = 0.0, v2, 0.0
                if v2 < VIF_EPS:
                    g, sv = 0.0, 0.0
                if g < 0.0:
                    sv, g = v2, 0.0
                sv = max(sv, VIF_EPS)
                num += math.log10(1.0 + g * g * v1 / (sv + VIF_SIGMA_NSQ))
                den += math.log10(1.0 + v1 / VIF_SIGMA_NSQ)
    if den == 0.0:
        return 1.0
    return num / den


def sobel_ref(img):
    """Zero-padded 3x3 Sobel, explicit taps."""
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    ky = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]]
    h, w = img.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            ax = ay = 0.0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    y, x = i + di, j + dj
                    v = img[y, x] if 0 <= y < h and 0 <= x < w else 0.0
                    ax += kx[di + 1][dj + 1] * v
                    ay += ky[di + 1][dj + 1] * v
            gx[i, j] = ax
            gy[i, j] = ay
    return gx, gy


def _fold_angle(a):
    if a > math.pi / 2.0:
        return a - math.pi
    if a <= -math.pi / 2.0:
        return a + math.pi
    return a


def qabf_ref(src_a, src_b, fused):
    """Per-pixel preservation factors computed with scalar math."""
    def strength_orientation(img):
        gx, gy = sobel_ref(img)
        g = np.hypot(gx, gy)
        al = np.vectorize(_fold_angle)(np.arctan2(gy, gx))
        return g, al

    ga, ala = strength_orientation(np.asarray(src_a, dtype=np.float64))
    gb, alb = strength_orientation(np.asarray(src_b, dtype=np.float64))
    gf, alf = strength_orientation(np.asarray(fused, dtype=np.float64))

    qg_max = QABF_GG / (1.0 + math.exp(QABF_KG * (1.0 - QABF_SG)))
    qa_max = QABF_GA / (1.0 + math.exp(QABF_KA * (1.0 - QABF_SA)))
    qmax = qg_max * qa_max

    def pres(gs, als, gfv, alfv):
        m = max(gs, gfv)
        ratio = (min(gs, gfv) / m) if m > 0.0 else 1.0
        d = abs(als - alfv)
        if d > math.pi / 2.0:
            d = math.pi - d
        agree = 1.0 - d / (math.pi / 2.0)
        qg = QABF_GG / (1.0 + math.exp(QABF_KG * (ratio - QABF_SG)))
        qa = QABF_GA / (1.0 + math.exp(QABF_KA * (agree - QABF_SA)))
        return qg * qa / qmax

    h, w = ga.shape
    numer = 0.0
    denom = 0.0
    for i in range(h):
        for j in range(w):
            wa, wb = ga[i, j], gb[i, j]
            numer += (pres(wa, ala[i, j], gf[i, j], alf[i, j]) * wa
                      + pres(wb, alb[i, j], gf[i, j], alf[i, j]) * wb)
            denom += wa + wb
    if denom == 0.0:
        return 0.0
    return numer / denom


def dense_varying_blur_ref(img, coc):
    """Definitionally direct spatially varying Gaussian blur."""
    img = np.asarray(img, dtype=np.float64)
    coc = np.asarray(coc, dtype=np.float64)
    h, w = img.shape[:2]
    k = coc * max(h, w)
    cap = min(h, w) // 4
    out = np.empty_like(img)
    for i in range(h):
        for j in range(w):
            kij = k[i, j]
            if kij < 0.5:
                out[i, j] = img[i, j]
                continue
            r = min(int(math.ceil(kij)), cap)
            std = kij / 3.0
            acc = 0.0 if img.ndim == 2 else np.zeros(img.shape[2])
            wsum = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    y, x = i + dy, j + dx
                    if 0 <= y < h and 0 <= x < w:
                        wgt = math.exp(-(dy * dy + dx * dx)
                                       / (2.0 * std * std))
                        acc = acc + wgt * img[y, x]
                        wsum += wgt
            out[i, j] = acc / wsum
    return out


def percentile_ref(values, q):
    """Linear-interpolated percentile of the flattened values."""
    vals = sorted(np.asarray(values, dtype=np.float64).ravel().tolist())
    if len(vals) == 1:
        return vals[0]
    rank = q / 100.0 * (len(vals) - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, len(vals) - 1)
    frac = rank - lo
    return vals[lo] + frac * (vals[hi] - vals[lo])
