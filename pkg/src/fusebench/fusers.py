"""Trivial non-learned fusion baselines.

These exist so the evaluation pipeline has deterministic subjects end to
end, and so the temporal metrics have ordering fixtures. They are not
fusion methods worth reporting on their own.
"""

import numpy as np

from .core import ContractError, StructuralError, VideoSequence


def _check_aligned(src_a, src_b):
    if len(src_a) != len(src_b):
        raise StructuralError("sequence lengths differ: %d vs %d"
                              % (len(src_a), len(src_b)))
    if (src_a.width, src_a.height) != (src_b.width, src_b.height):
        raise StructuralError("sequence sizes differ")
    if src_a[0].channels != src_b[0].channels:
        raise StructuralError("sequence channel counts differ")


def _fused(src_a, frames):
    return VideoSequence(frames=tuple(frames), fps=src_a.fps,
                         scene_id=src_a.scene_id, role="fused")


def fuse_max(src_a, src_b):
    """Per-pixel, per-frame maximum of two aligned sequences."""
    _check_aligned(src_a, src_b)
    return _fused(src_a, (fa.with_data(np.maximum(fa.data, fb.data))
                          for fa, fb in zip(src_a, src_b)))


def fuse_mean(src_a, src_b):
    """Per-pixel, per-frame average (a + b) / 2 of two aligned sequences."""
    _check_aligned(src_a, src_b)
    return _fused(src_a, (fa.with_data((fa.data + fb.data) / 2.0)
                          for fa, fb in zip(src_a, src_b)))


def temporal_smooth(seq, window):
    """Per-pixel temporal moving average with edge clamping.

    window must be odd and >= 1; frames past either end repeat the edge
    frame. window = 1 is the identity.
    """
    window = int(window)
    if window < 1 or window % 2 == 0:
        raise ContractError("window must be an odd integer >= 1")
    if window == 1:
        return seq
    r = window // 2
    n = len(seq)
    frames = []
    for t in range(n):
        stack = np.stack([seq[min(max(t + k, 0), n - 1)].data
                          for k in range(-r, r + 1)])
        frames.append(seq[t].with_data(stack.mean(axis=0)))
    return VideoSequence(frames=tuple(frames), fps=seq.fps,
                         scene_id=seq.scene_id, role=seq.role)
