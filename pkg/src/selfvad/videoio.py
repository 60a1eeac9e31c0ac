"""Dataset layout, ground truth, and auxiliary data I/O.

On-disk layout (one root, one directory per split):

    <root>/<split>/frames/<video_id>/<%06d>.png|jpg      frame images, 0-based index
    <root>/<split>/labels/<video_id>.txt                 one 0/1 per line, one line per frame
    <root>/<split>/masks/<video_id>/<%06d>.png           binary anomaly masks (optional per frame)
    <root>/<split>/aux/detections/<video_id>.jsonl       detection records (see Detection)
    <root>/<split>/aux/flow/<video_id>/<%06d>.flo        dense flow, "VADF" binary format
    <root>/<split>/aux/teacher/<name>/<video_id>.jsonl   per-object teacher outputs
    <root>/<split>/tracks/<video_id>.jsonl               anomaly track identities (optional)

Flow binary format: magic b"VADF", uint32 H, uint32 W (little endian), then
H*W*2 little-endian float32 in (dx, dy) channel order, row-major.

Boxes are (x1, y1, x2, y2) with inclusive top-left and exclusive bottom-right,
so a box never references pixels outside the frame once clamped to
0 <= x1 < x2 <= W, 0 <= y1 < y2 <= H.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AuxMissingError, ConfigError, ValidationError

FLOW_MAGIC = b"VADF"
FRAME_NAME = "{:06d}"


@dataclass(frozen=True)
class Detection:
    """One axis-aligned box on one frame."""

    frame: int
    box: tuple[float, float, float, float]
    confidence: float
    source: str = "detector"  # detector | flow | background
    class_probs: tuple[float, ...] | None = None

    def to_record(self) -> dict:
        rec = {
            "frame": self.frame,
            "x1": self.box[0],
            "y1": self.box[1],
            "x2": self.box[2],
            "y2": self.box[3],
            "confidence": self.confidence,
            "source": self.source,
        }
        if self.class_probs is not None:
            rec["class_probs"] = list(self.class_probs)
        return rec

    @staticmethod
    def from_record(rec: dict) -> "Detection":
        probs = rec.get("class_probs")
        return Detection(
            frame=int(rec["frame"]),
            box=(float(rec["x1"]), float(rec["y1"]), float(rec["x2"]), float(rec["y2"])),
            confidence=float(rec["confidence"]),
            source=rec.get("source", "detector"),
            class_probs=None if probs is None else tuple(float(p) for p in probs),
        )


def clamp_box(box, width: int, height: int) -> tuple[float, float, float, float]:
    """Clamp a box to frame bounds. Idempotent; may produce a zero-area box."""
    x1, y1, x2, y2 = box
    x1 = min(max(x1, 0.0), float(width))
    x2 = min(max(x2, 0.0), float(width))
    y1 = min(max(y1, 0.0), float(height))
    y2 = min(max(y2, 0.0), float(height))
    return (x1, y1, x2, y2)


def box_area(box) -> float:
    x1, y1, x2, y2 = box
    return max(0.0, x2 - x1) * max(0.0, y2 - y1)


@dataclass(frozen=True)
class VideoInfo:
    video_id: str
    frame_count: int
    resolution: tuple[int, int]  # (height, width)


@dataclass
class VideoDataset:
    """Index over one split of a dataset root. Holds no pixel data."""

    root: Path
    split: str
    videos: list[VideoInfo]
    has_frame_labels: bool
    has_pixel_masks: bool

    def video(self, video_id: str) -> VideoInfo:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise ValidationError(f"unknown video id {video_id!r} in split {self.split!r}")

    def frames(self, video_id: str) -> "FrameReader":
        return FrameReader(DatasetPaths(self.root, self.split).frames_dir(video_id))

    @property
    def video_ids(self) -> list[str]:
        return [v.video_id for v in self.videos]


@dataclass
class GroundTruth:
    """Frame-level labels and optional per-frame pixel masks for one video."""

    labels: np.ndarray  # (N,) uint8 in {0, 1}
    masks: np.ndarray | None = None  # (N, H, W) bool, None when masks absent

    @property
    def frame_count(self) -> int:
        return len(self.labels)


class DatasetPaths:
    """Path arithmetic for the documented layout."""

    def __init__(self, root, split: str):
        self.root = Path(root)
        self.split = split
        self.base = self.root / split

    def frames_root(self) -> Path:
        return self.base / "frames"

    def frames_dir(self, video_id: str) -> Path:
        return self.base / "frames" / video_id

    def label_file(self, video_id: str) -> Path:
        return self.base / "labels" / f"{video_id}.txt"

    def masks_dir(self, video_id: str) -> Path:
        return self.base / "masks" / video_id

    def mask_file(self, video_id: str, frame: int) -> Path:
        return self.masks_dir(video_id) / f"{FRAME_NAME.format(frame)}.png"

    def detections_file(self, video_id: str) -> Path:
        return self.base / "aux" / "detections" / f"{video_id}.jsonl"

    def flow_dir(self, video_id: str) -> Path:
        return self.base / "aux" / "flow" / video_id

    def flow_file(self, video_id: str, frame: int) -> Path:
        return self.flow_dir(video_id) / f"{FRAME_NAME.format(frame)}.flo"

    def teacher_file(self, teacher: str, video_id: str) -> Path:
        return self.base / "aux" / "teacher" / teacher / f"{video_id}.jsonl"

    def tracks_file(self, video_id: str) -> Path:
        return self.base / "tracks" / f"{video_id}.jsonl"


class FrameReader:
    """Lazy random access to the frames of one video.

    Reads are pure: the same index always yields the same pixels. A small
    decoded-frame cache keeps object-centric cropping cheap.
    """

    CACHE_FRAMES = 48

    def __init__(self, frames_dir: Path):
        self.frames_dir = Path(frames_dir)
        if not self.frames_dir.is_dir():
            raise ConfigError(f"frames directory missing: {self.frames_dir}")
        self._paths = sorted(
            p for p in self.frames_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not self._paths:
            raise ValidationError(f"video has no frames: {self.frames_dir}")
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()

    def __len__(self) -> int:
        return len(self._paths)

    def resolution(self) -> tuple[int, int]:
        with Image.open(self._paths[0]) as im:
            w, h = im.size
        return (h, w)

    def __getitem__(self, index: int) -> np.ndarray:
        """Return frame `index` as float32 RGB HxWx3 in [0, 1]."""
        if not 0 <= index < len(self._paths):
            raise ValidationError(f"frame index {index} out of range [0, {len(self._paths)})")
        cached = self._cache.get(index)
        if cached is None:
            with Image.open(self._paths[index]) as im:
                cached = np.asarray(im.convert("RGB"), dtype=np.uint8)
            self._cache[index] = cached
            if len(self._cache) > self.CACHE_FRAMES:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(index)
        return cached.astype(np.float32) / 255.0


def load_dataset(root, split: str) -> VideoDataset:
    """Index a dataset split without loading pixel data.

    Frame resolutions are read from image headers only; a video whose frames
    disagree on resolution fails validation.
    """
    paths = DatasetPaths(root, split)
    if not paths.base.is_dir():
        raise ConfigError(f"dataset split directory missing: {paths.base}")
    frames_root = paths.frames_root()
    if not frames_root.is_dir():
        raise ConfigError(f"frames directory missing: {frames_root}")

    video_dirs = sorted(p for p in frames_root.iterdir() if p.is_dir())
    if not video_dirs:
        raise ValidationError(f"no videos found under {frames_root}")

    videos = []
    for vdir in video_dirs:
        frame_paths = sorted(
            p for p in vdir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not frame_paths:
            raise ValidationError(f"no frames found for video {vdir.name!r}")
        sizes = set()
        for fp in frame_paths:
            with Image.open(fp) as im:
                sizes.add((im.size[1], im.size[0]))
        if len(sizes) != 1:
            raise ValidationError(
                f"video {vdir.name!r} mixes frame resolutions: {sorted(sizes)}"
            )
        videos.append(VideoInfo(vdir.name, len(frame_paths), sizes.pop()))

    ids = [v.video_id for v in videos]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate video ids in split {split!r}")

    has_labels = any(paths.label_file(v.video_id).is_file() for v in videos)
    has_masks = any(paths.masks_dir(v.video_id).is_dir() for v in videos)
    return VideoDataset(Path(root), split, videos, has_labels, has_masks)


def load_ground_truth(dataset: VideoDataset, video_id: str) -> GroundTruth:
    """Load frame labels and pixel masks for one video.

    Labels come from the label file when present, otherwise they are derived
    from the masks (any nonzero pixel => label 1). When both exist, a mask
    with content on a frame labeled 0 is a validation error. Masks are
    binarized at 0.5 of full scale; a missing per-frame mask file reads as an
    all-zero mask.
    """
    info = dataset.video(video_id)
    paths = DatasetPaths(dataset.root, dataset.split)
    label_file = paths.label_file(video_id)
    masks_dir = paths.masks_dir(video_id)

    masks = None
    if masks_dir.is_dir():
        h, w = info.resolution
        masks = np.zeros((info.frame_count, h, w), dtype=bool)
        for i in range(info.frame_count):
            mf = paths.mask_file(video_id, i)
            if not mf.is_file():
                continue
            with Image.open(mf) as im:
                arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
            if arr.shape != (h, w):
                raise ValidationError(
                    f"mask {mf} shape {arr.shape} != frame shape {(h, w)}"
                )
            masks[i] = arr >= 0.5

    if label_file.is_file():
        raw = [line.strip() for line in label_file.read_text().splitlines() if line.strip()]
        labels = np.array([int(v) for v in raw], dtype=np.uint8)
        if len(labels) != info.frame_count:
            raise ValidationError(
                f"label count {len(labels)} != frame count {info.frame_count} for {video_id!r}"
            )
        if masks is not None:
            bad = np.nonzero(masks.any(axis=(1, 2)) & (labels == 0))[0]
            if bad.size:
                raise ValidationError(
                    f"video {video_id!r}: nonzero mask on frames labeled 0: {bad[:5].tolist()}"
                )
    elif masks is not None:
        labels = masks.any(axis=(1, 2)).astype(np.uint8)
    else:
        raise AuxMissingError(f"no ground truth (labels or masks) for video {video_id!r}")

    return GroundTruth(labels=labels, masks=masks)


def load_aux(dataset: VideoDataset, kind: str, video_id: str, frame: int | None = None, *,
             teacher: str = "features"):
    """Load auxiliary data: 'detections', 'flow', or 'teacher'.

    detections -> list[Detection] (all frames, or one frame when `frame` given)
    flow       -> (H, W, 2) float32 field for `frame`
    teacher    -> TeacherStore for the whole video
    """
    paths = DatasetPaths(dataset.root, dataset.split)
    if kind == "detections":
        dets = read_detections(paths.detections_file(video_id))
        if frame is not None:
            dets = [d for d in dets if d.frame == frame]
        info = dataset.video(video_id)
        h, w = info.resolution
        return [
            Detection(d.frame, clamp_box(d.box, w, h), d.confidence, d.source, d.class_probs)
            for d in dets
        ]
    if kind == "flow":
        if frame is None:
            raise ConfigError("flow requires a frame index")
        return read_flow(paths.flow_file(video_id, frame))
    if kind == "teacher":
        return TeacherStore.open(paths.teacher_file(teacher, video_id))
    raise ConfigError(f"unknown aux kind {kind!r}")


# --- detections -----------------------------------------------------------

def read_detections(path: Path) -> list[Detection]:
    path = Path(path)
    if not path.is_file():
        raise AuxMissingError(f"detections file missing: {path}")
    dets = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                dets.append(Detection.from_record(json.loads(line)))
    return dets


def write_detections(path: Path, detections: list[Detection]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for det in detections:
            fh.write(json.dumps(det.to_record()) + "\n")


# --- flow fields ----------------------------------------------------------

def read_flow(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise AuxMissingError(f"flow file missing: {path}")
    data = path.read_bytes()
    if data[:4] != FLOW_MAGIC:
        raise ValidationError(f"bad flow magic in {path}")
    h, w = struct.unpack("<II", data[4:12])
    field = np.frombuffer(data[12:], dtype="<f4")
    if field.size != h * w * 2:
        raise ValidationError(f"flow payload size mismatch in {path}")
    return field.reshape(h, w, 2).astype(np.float32)


def write_flow(path: Path, field: np.ndarray) -> None:
    if field.ndim != 3 or field.shape[2] != 2:
        raise ValidationError(f"flow field must be (H, W, 2), got {field.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = field.shape[:2]
    with path.open("wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(field, dtype="<f4").tobytes())


# --- frames / labels / masks ----------------------------------------------

def write_frame(path: Path, image: np.ndarray) -> None:
    """Write an RGB uint8 (or [0,1] float) image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if image.dtype != np.uint8:
        image = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(image).save(path)


def write_labels(path: Path, labels) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{int(v)}\n" for v in labels))


def write_mask(path: Path, mask: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((mask.astype(np.uint8)) * 255, mode="L").save(path)


# --- teacher outputs --------------------------------------------------------

def teacher_key(frame: int, box) -> str:
    """Deterministic lookup key: frame index plus integer-rounded box."""
    x1, y1, x2, y2 = (int(round(float(v))) for v in box)
    return f"{frame}:{x1},{y1},{x2},{y2}"


class TeacherStore:
    """Per-object teacher outputs for one video, keyed by (frame, rounded box)."""

    def __init__(self, path: Path, records: dict[str, dict]):
        self.path = Path(path)
        self._records = records

    @staticmethod
    def open(path: Path) -> "TeacherStore":
        path = Path(path)
        if not path.is_file():
            raise AuxMissingError(f"teacher file missing: {path}")
        records = {}
        with path.open() as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                records[teacher_key(rec["frame"], rec["box"])] = rec
        return TeacherStore(path, records)

    @staticmethod
    def create(path: Path) -> "TeacherStore":
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("")
        return TeacherStore(path, {})

    def put(self, frame: int, box, **payload) -> None:
        key = teacher_key(frame, box)
        rec = {"frame": int(frame), "box": [int(round(float(v))) for v in box], **payload}
        self._records[key] = rec
        with self.path.open("a") as fh:
            fh.write(json.dumps(rec) + "\n")

    def get(self, frame: int, box) -> dict | None:
        return self._records.get(teacher_key(frame, box))

    def __len__(self) -> int:
        return len(self._records)
