"""Toolkit for building video-fusion benchmark data and scoring fused videos.

The package has three jobs:

* synthesize aligned source pairs (exposure-bracketed pairs from HDR
  footage, focus-bracketed pairs from depth maps),
* screen candidate sequences with objective quality rules,
* evaluate fused videos with four spatial metrics (VIF, SSIM, MI, Qabf),
  two flow-based temporal metrics (BiSWE, MS2R) and the reference
  training-loss terms.

Everything operates on directories of PNG frames; see ``fusebench.core``
for the data model and ``fusebench.cli`` for the command-line interface.
"""

from fusebench.core import (
    ContractError,
    Frame,
    FrameIOError,
    FusebenchError,
    StructuralError,
    VideoSequence,
)

__all__ = [
    "ContractError",
    "Frame",
    "FrameIOError",
    "FusebenchError",
    "StructuralError",
    "VideoSequence",
]

__version__ = "0.1.0"
