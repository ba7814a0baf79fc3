"""HLG decode, exposure shift, gamut reduction, BT.709 re-encode.

This implements the multi-exposure pair synthesis: an HLG/BT.2020 source
sequence is decoded to linear light, pushed up and down by a fixed EV,
mapped into the BT.709 gamut, gamma-encoded, and quantized to 8 bits.
All per-sample math runs in float64.
"""

import numpy as np

from .core import ContractError, Frame, VideoSequence, quantize_levels

# HLG EOTF constants (upper-branch exponential segment)
HLG_A = 0.1788
HLG_B = 0.2847
HLG_C = 0.5599

# BT.709 OETF constants
BT709_LINEAR_SLOPE = 4.5
BT709_KNEE = 0.018
BT709_GAIN = 1.099
BT709_POWER = 0.45
BT709_OFFSET = 0.099

# CIE 1931 chromaticities (x, y)
BT2020_PRIMARIES = ((0.708, 0.292), (0.170, 0.797), (0.131, 0.046))
BT709_PRIMARIES = ((0.640, 0.330), (0.300, 0.600), (0.150, 0.060))
D65_WHITE = (0.3127, 0.3290)


def hlg_eotf(signal):
    """Hybrid log-gamma signal in [0, 1] -> relative linear light.

    Quadratic segment below the 0.5 knee, exponential above it. The two
    branches do not meet exactly at the knee (the published constants are
    rounded); the mismatch there is about 1.4e-5.

    Accepts a Frame (encoding must be HLG; result is a linear Frame) or a
    bare array of signal values.
    """
    if isinstance(signal, Frame):
        signal.require_encoding("HLG")
        return signal.with_data(hlg_eotf(signal.data), encoding="linear")
    v = np.asarray(signal, dtype=np.float64)
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise ContractError("HLG signal must lie in [0, 1]")
    lower = v * v / 3.0
    upper = (np.exp((v - HLG_C) / HLG_A) + HLG_B) / 12.0
    return np.where(v <= 0.5, lower, upper)


def bt709_oetf(linear):
    """Linear light -> BT.709 gamma signal; input is clipped to [0, 1] first.

    The clip is the pipeline's single clipping point for over/under exposed
    values, so callers feed unclamped linear light straight in.
    """
    if isinstance(linear, Frame):
        linear.require_encoding("linear")
        return linear.with_data(bt709_oetf(linear.data), encoding="BT709-gamma")
    l = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    lower = BT709_LINEAR_SLOPE * l
    upper = BT709_GAIN * np.power(l, BT709_POWER) - BT709_OFFSET
    return np.where(l < BT709_KNEE, lower, upper)


def adjust_exposure(linear, ev):
    """Scale linear light by 2**ev. No clamping; headroom survives until
    the encode stage."""
    if isinstance(linear, Frame):
        linear.require_encoding("linear")
        return linear.with_data(adjust_exposure(linear.data, ev))
    l = np.asarray(linear, dtype=np.float64)
    if l.size and l.min() < 0.0:
        raise ContractError("exposure adjustment requires non-negative linear light")
    return l * (2.0 ** float(ev))


def rgb_to_xyz_matrix(primaries, white):
    """3x3 RGB->XYZ from CIE xy chromaticities of the primaries and white.

    Columns are the primaries' XYZ coordinates scaled so that RGB (1,1,1)
    lands exactly on the white point.
    """
    cols = []
    for x, y in primaries:
        cols.append([x / y, 1.0, (1.0 - x - y) / y])
    p = np.array(cols, dtype=np.float64).T
    xw, yw = white
    w = np.array([xw / yw, 1.0, (1.0 - xw - yw) / yw], dtype=np.float64)
    s = np.linalg.solve(p, w)
    return p * s


def gamut_matrix_2020_to_709():
    """Linear BT.2020 RGB -> linear BT.709 RGB conversion matrix."""
    m2020 = rgb_to_xyz_matrix(BT2020_PRIMARIES, D65_WHITE)
    m709 = rgb_to_xyz_matrix(BT709_PRIMARIES, D65_WHITE)
    return np.linalg.solve(m709, m2020)


_GAMUT_2020_TO_709 = gamut_matrix_2020_to_709()


def gamut_map_2020_to_709(rgb):
    """Map linear BT.2020 RGB to BT.709 and hard-clip to [0, 1].

    Out-of-gamut and out-of-range values saturate channel-wise; that is the
    intended rendering of a +/-EV push, not an error.
    """
    if isinstance(rgb, Frame):
        rgb.require_encoding("linear")
        rgb.require_primaries("BT2020")
        if rgb.channels != 3:
            raise ContractError("gamut mapping requires an RGB frame")
        return rgb.with_data(gamut_map_2020_to_709(rgb.data), primaries="BT709")
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.shape[-1] != 3:
        raise ContractError("gamut mapping needs an RGB last axis")
    mapped = arr @ _GAMUT_2020_TO_709.T
    return np.clip(mapped, 0.0, 1.0)


def develop_frame(frame, ev):
    """Full pipeline for one frame: HLG decode, EV shift, gamut map,
    BT.709 encode, 8-bit quantize. Returns an 8-bit BT.709 frame whose
    samples sit exactly on the 0..255 lattice."""
    frame.require_encoding("HLG")
    frame.require_primaries("BT2020")
    if frame.channels != 3:
        raise ContractError("exposure synthesis expects RGB frames")
    linear = hlg_eotf(frame.data)
    pushed = adjust_exposure(linear, ev)
    narrowed = gamut_map_2020_to_709(pushed)
    encoded = bt709_oetf(narrowed)
    codes = quantize_levels(encoded, 255)
    return Frame(data=codes.astype(np.float64) / 255.0, bit_depth="8",
                 encoding="BT709-gamma", primaries="BT709")


def synth_mef_pair(seq, ev=3.0):
    """Over/under exposed 8-bit BT.709 pair from one HLG source sequence.

    ev is the magnitude of the push: the first returned sequence is +ev
    (over), the second -ev (under).
    """
    ev = float(ev)
    if not np.isfinite(ev) or ev <= 0.0:
        raise ContractError("ev must be a positive finite number")
    over = [develop_frame(f, +ev) for f in seq]
    under = [develop_frame(f, -ev) for f in seq]
    make = lambda frames, role: VideoSequence(
        frames=tuple(frames), fps=seq.fps, scene_id=seq.scene_id, role=role)
    return make(over, "source-A"), make(under, "source-B")
