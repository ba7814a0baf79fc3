"""Data model and frame I/O shared by every other module.

Sequences live on disk as directories of PNG frames named ``000000.png``,
``000001.png``, ... (8-bit, or 16-bit containers for deeper content).
In memory every sample is a float in [0, 1]; quantization happens only
when a sequence is written back out.
"""

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import cv2
import numpy as np


class FusebenchError(Exception):
    """Base class for all toolkit errors."""


class ContractError(FusebenchError):
    """An operation was called with inputs that violate its contract."""


class StructuralError(ContractError):
    """Input data is malformed (empty dirs, mixed sizes, bad manifests)."""


class FrameIOError(FusebenchError):
    """A frame or report could not be read or written."""


BIT_DEPTHS = ("8", "10-in-16", "16")
ENCODINGS = ("linear", "HLG", "BT709-gamma", "unspecified")
PRIMARIES = ("BT2020", "BT709", "none")
SCALINGS = ("left-justified", "value-scaled")
ROLES = ("source-A", "source-B", "fused", "reference")

# ITU BT.709 luma weights, used everywhere a color frame is reduced to one plane
LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)

FRAME_NAME_FORMAT = "%06d.png"


def quantize_levels(values, max_code):
    """Map floats in [0, 1] to integer codes 0..max_code.

    Rounding is half-away-from-zero (values are non-negative, so this is
    floor(x * max_code + 0.5)), not the banker's rounding of np.round.
    """
    values = np.asarray(values, dtype=np.float64)
    codes = np.floor(values * max_code + 0.5)
    return codes.astype(np.int64)


@dataclass(frozen=True)
class Frame:
    """A single image plane set with explicit signal metadata.

    data is (H, W) or (H, W, 3) float32/float64, nominally in [0, 1].
    Linear-light frames may exceed 1.0 mid-pipeline (exposure headroom);
    the [0, 1] range is enforced again at save time.
    """

    data: np.ndarray
    bit_depth: str = "8"
    encoding: str = "unspecified"
    primaries: str = "none"

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype not in (np.float32, np.float64):
            raise ContractError(
                "frame samples must be float32/float64, got %s" % arr.dtype
            )
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ContractError("frame data must be (H, W) or (H, W, 3), got %s"
                                % (arr.shape,))
        if not np.all(np.isfinite(arr)):
            raise ContractError("frame contains non-finite samples")
        if self.bit_depth not in BIT_DEPTHS:
            raise ContractError("unknown bit depth %r" % (self.bit_depth,))
        if self.encoding not in ENCODINGS:
            raise ContractError("unknown encoding %r" % (self.encoding,))
        if self.primaries not in PRIMARIES:
            raise ContractError("unknown primaries %r" % (self.primaries,))
        arr = arr.copy()
        arr.setflags(write=False)  # frames are immutable after construction
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    def with_data(self, data, encoding=None, primaries=None, bit_depth=None):
        """New frame with replaced samples; metadata defaults to self's."""
        return Frame(
            data=data,
            bit_depth=self.bit_depth if bit_depth is None else bit_depth,
            encoding=self.encoding if encoding is None else encoding,
            primaries=self.primaries if primaries is None else primaries,
        )

    def luma(self):
        """Single-plane view: BT.709-weighted luma for color, identity for gray."""
        if self.channels == 1:
            return self.data
        w = LUMA_WEIGHTS
        return (w[0] * self.data[:, :, 0]
                + w[1] * self.data[:, :, 1]
                + w[2] * self.data[:, :, 2])

    def require_encoding(self, encoding):
        if self.encoding != encoding:
            raise ContractError(
                "operation requires %s-encoded frame, got %s"
                % (encoding, self.encoding)
            )

    def require_primaries(self, primaries):
        if self.primaries != primaries:
            raise ContractError(
                "operation requires %s primaries, got %s"
                % (primaries, self.primaries)
            )


@dataclass(frozen=True)
class VideoSequence:
    """Ordered frames plus manifest metadata."""

    frames: tuple
    fps: float = 30.0
    scene_id: str = ""
    role: str = "source-A"

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 1:
            raise StructuralError("sequence must contain at least one frame")
        first = frames[0]
        for i, f in enumerate(frames):
            if (f.width, f.height, f.channels) != (first.width, first.height,
                                                   first.channels):
                raise StructuralError(
                    "frame %d size %s does not match frame 0 size %s"
                    % (i, (f.width, f.height, f.channels),
                       (first.width, first.height, first.channels))
                )
            if f.bit_depth != first.bit_depth or f.encoding != first.encoding:
                raise StructuralError(
                    "frame %d metadata differs from frame 0" % i
                )
        if self.role not in ROLES:
            raise ContractError("unknown sequence role %r" % (self.role,))
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def width(self):
        return self.frames[0].width

    @property
    def height(self):
        return self.frames[0].height


@dataclass(frozen=True)
class DepthMap:
    """Normalized inverse depth in [0, 1]; larger values are closer."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ContractError("depth map must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise ContractError("depth map contains non-finite values")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ContractError("normalized inverse depth must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class SegmentMaskSet:
    """Per-frame integer label maps; 0 is background."""

    labels: tuple

    def __post_init__(self):
        maps = []
        for i, m in enumerate(self.labels):
            arr = np.asarray(m)
            if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.integer):
                raise ContractError("mask %d must be a 2-D integer label map" % i)
            arr = arr.copy()
            arr.setflags(write=False)
            maps.append(arr)
        if not maps:
            raise StructuralError("mask set must contain at least one map")
        object.__setattr__(self, "labels", tuple(maps))

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return self.labels[i]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (u right, v down) with a validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if u.shape != v.shape or u.shape != valid.shape or u.ndim != 2:
            raise ContractError("flow components and mask must share one 2-D shape")
        if not (np.all(np.isfinite(u[valid])) and np.all(np.isfinite(v[valid]))):
            raise ContractError("flow has non-finite values inside its valid mask")
        for arr in (u, v, valid):
            arr.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.u.shape


@dataclass(frozen=True)
class SequenceSpec:
    """Declares how stored frame files map to the internal representation.

    scaling applies only to 10-in-16 content: "left-justified" stores the
    10-bit code shifted into the top bits of the 16-bit container,
    "value-scaled" rescales it across the full 16-bit range.
    """

    encoding: str = "unspecified"
    primaries: str = "none"
    bit_depth: str = "8"
    scaling: str = "left-justified"

    def __post_init__(self):
        if self.bit_depth not in BIT_DEPTHS:
            raise ContractError("unknown bit depth %r" % (self.bit_depth,))
        if self.encoding not in ENCODINGS:
            raise ContractError("unknown encoding %r" % (self.encoding,))
        if self.primaries not in PRIMARIES:
            raise ContractError("unknown primaries %r" % (self.primaries,))
        if self.scaling not in SCALINGS:
            raise ContractError("unknown 10-in-16 scaling %r" % (self.scaling,))


def _decode_stored(arr, bit_depth, scaling, name):
    """Stored integer codes -> float samples in [0, 1]."""
    if bit_depth == "8":
        if arr.dtype != np.uint8:
            raise StructuralError(
                "%s: declared 8-bit but stored as %s" % (name, arr.dtype)
            )
        return arr.astype(np.float64) / 255.0
    if arr.dtype != np.uint16:
        raise StructuralError(
            "%s: declared %s-bit but stored as %s" % (name, bit_depth, arr.dtype)
        )
    if bit_depth == "16":
        return arr.astype(np.float64) / 65535.0
    # 10-in-16
    if scaling == "left-justified":
        codes = arr.astype(np.int64) >> 6
    else:
        codes = quantize_levels(arr.astype(np.float64) / 65535.0, 1023)
    return codes.astype(np.float64) / 1023.0


def _encode_stored(data, bit_depth, scaling):
    """Float samples in [0, 1] -> stored integer codes (round half away)."""
    if bit_depth == "8":
        return quantize_levels(data, 255).astype(np.uint8)
    if bit_depth == "16":
        return quantize_levels(data, 65535).astype(np.uint16)
    codes = quantize_levels(data, 1023)
    if scaling == "left-justified":
        return (codes << 6).astype(np.uint16)
    return quantize_levels(codes.astype(np.float64) / 1023.0, 65535).astype(np.uint16)


def _read_png(path):
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FrameIOError("could not read frame %s" % path)
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            raise StructuralError("%s: alpha channels are not supported" % path)
        arr = cv2.cvtColor(arr, cv2.COLOR_BGR2RGB)
    return arr


def _write_png(path, arr):
    if arr.ndim == 3:
        arr = cv2.cvtColor(arr, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), arr):
        raise FrameIOError("could not write frame %s" % path)


def load_frame(path, spec=None):
    """Load one PNG as a Frame, normalized per the (optional) spec.

    Without a spec the stored dtype picks the depth: uint8 -> 8-bit,
    uint16 -> 16-bit full range.
    """
    path = Path(path)
    if not path.is_file():
        raise FrameIOError("frame %s does not exist" % path)
    arr = _read_png(path)
    if spec is None:
        depth = "8" if arr.dtype == np.uint8 else "16"
        spec = SequenceSpec(bit_depth=depth)
    data = _decode_stored(arr, spec.bit_depth, spec.scaling, path.name)
    return Frame(data=data, bit_depth=spec.bit_depth,
                 encoding=spec.encoding, primaries=spec.primaries)


def load_sequence(directory, spec, fps=30.0, scene_id="", role="source-A"):
    """Load a sequence from a directory of PNG frames.

    Frames are taken in lexicographic filename order and normalized to
    [0, 1] floats according to the declared bit depth / scaling.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FrameIOError("sequence directory %s does not exist" % directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise StructuralError("no PNG frames in %s" % directory)

    frames = []
    size = None
    for path in paths:
        arr = _read_png(path)
        if size is None:
            size = arr.shape[:2]
        elif arr.shape[:2] != size:
            raise StructuralError(
                "mixed frame sizes in %s: %s is %s, expected %s"
                % (directory, path.name, arr.shape[:2], size)
            )
        data = _decode_stored(arr, spec.bit_depth, spec.scaling, path.name)
        frames.append(Frame(data=data, bit_depth=spec.bit_depth,
                            encoding=spec.encoding, primaries=spec.primaries))
    return VideoSequence(frames=tuple(frames), fps=fps,
                         scene_id=scene_id or directory.name, role=role)


def save_sequence(seq, directory, target_bit_depth=None, scaling="left-justified"):
    """Write a sequence as %06d.png frames, quantized to the target depth.

    Samples must already lie in [0, 1]; out-of-range values are a contract
    violation here, not silently clamped (clamping belongs to the encoding
    stage that produced the frame).
    """
    if target_bit_depth is None:
        target_bit_depth = seq.frames[0].bit_depth
    if target_bit_depth not in BIT_DEPTHS:
        raise ContractError("unknown bit depth %r" % (target_bit_depth,))
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        if frame.data.min() < 0.0 or frame.data.max() > 1.0:
            raise ContractError(
                "frame %d has samples outside [0, 1]; refuse to quantize" % i
            )
        stored = _encode_stored(frame.data, target_bit_depth, scaling)
        _write_png(directory / (FRAME_NAME_FORMAT % i), stored)


def bilinear_sample(frame, x, y):
    """Bilinear interpolation of the 4 neighbors at real coordinates (x, y).

    Coordinates index pixel centers: valid domain is 0 <= x <= W-1,
    0 <= y <= H-1. Outside it the sample is invalid and None is returned
    (warp masks consume that marker).

    Returns a length-channels array, or None when out of bounds.
    """
    data = frame.data if isinstance(frame, Frame) else np.asarray(frame)
    h, w = data.shape[:2]
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        return None
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    if x0 == w - 1 and w > 1:
        x0 -= 1
    if y0 == h - 1 and h > 1:
        y0 -= 1
    fx = x - x0
    fy = y - y0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    out = ((1 - fy) * (1 - fx) * data[y0, x0]
           + (1 - fy) * fx * data[y0, x1]
           + fy * (1 - fx) * data[y1, x0]
           + fy * fx * data[y1, x1])
    return np.atleast_1d(np.asarray(out, dtype=np.float64))


def parse_fps(value):
    """fps from a manifest field: integer, float, or rational string "30000/1001"."""
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(Fraction(str(value)))
    except (ValueError, ZeroDivisionError) as exc:
        raise StructuralError("bad fps value %r" % (value,)) from exc


@dataclass(frozen=True)
class SceneEntry:
    scene_id: str
    roles: dict          # role name -> relative directory
    fps: float
    split: str = "train"
    notes: str = ""


@dataclass(frozen=True)
class Manifest:
    """Scene index for a benchmark branch, backed by a JSON document."""

    scenes: tuple
    root: Path = field(default_factory=Path)

    def scene(self, scene_id):
        for s in self.scenes:
            if s.scene_id == scene_id:
                return s
        raise StructuralError("scene %r not in manifest" % scene_id)


def load_manifest(path, check_dirs=True):
    """Parse a manifest JSON file and validate its directory references.

    Expected schema: {"scenes": [{"scene_id": ..., "roles": {role: relpath},
    "fps": 30 | "30000/1001", "split": "train"|"test", "notes": ...}, ...]}.
    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise FrameIOError("manifest %s does not exist" % path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise StructuralError("manifest %s is not valid JSON: %s" % (path, exc))
    if not isinstance(doc, dict) or "scenes" not in doc:
        raise StructuralError("manifest %s lacks a 'scenes' array" % path)

    root = path.parent
    scenes = []
    for entry in doc["scenes"]:
        if "scene_id" not in entry or "roles" not in entry:
            raise StructuralError("manifest scene entry missing scene_id/roles")
        scene = SceneEntry(
            scene_id=str(entry["scene_id"]),
            roles=dict(entry["roles"]),
            fps=parse_fps(entry.get("fps", 30)),
            split=entry.get("split", "train"),
            notes=entry.get("notes", ""),
        )
        if scene.split not in ("train", "test"):
            raise StructuralError(
                "scene %s: split must be train|test" % scene.scene_id
            )
        if check_dirs:
            counts = {}
            for role, rel in scene.roles.items():
                d = root / rel
                if not d.is_dir():
                    raise StructuralError(
                        "scene %s role %s: directory %s does not exist"
                        % (scene.scene_id, role, d)
                    )
                counts[role] = len(sorted(d.glob("*.png")))
            if len(set(counts.values())) > 1:
                raise StructuralError(
                    "scene %s: frame counts differ across roles: %s"
                    % (scene.scene_id, counts)
                )
        scenes.append(scene)
    return Manifest(scenes=tuple(scenes), root=root)
