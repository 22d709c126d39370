"""Sequences on disk: PNM frames, OTB ground truth, tracking results.

A sequence directory holds numbered frames (in ``img/`` or at top level) and
``groundtruth_rect.txt`` (or ``groundtruth.txt``) with one ``x,y,w,h`` line
per frame, top-left + size, comma / tab / whitespace separated.
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import BBox

GT_NAMES = ("groundtruth_rect.txt", "groundtruth.txt")
PNM_SUFFIXES = {".ppm", ".pgm", ".pnm"}
IMAGE_SUFFIXES = PNM_SUFFIXES | {".png", ".jpg", ".jpeg", ".bmp"}


class SequenceError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


def _pnm_header(buf, path):
    # magic, width, height, maxval separated by whitespace; '#' comments allowed
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)").match(buf, pos)
        if not m:
            raise ImageFormatError(f"{path}: truncated PNM header")
        tokens.append(m.group(2))
        pos = m.end()
    return tokens, pos + 1  # exactly one whitespace byte before the raster


def read_pnm(path):
    """Binary P5 / P6 image as a ``(3, H, W)`` float32 array."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pnm_header(buf, path)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported PNM type {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * channels
    raster = np.frombuffer(buf, dtype=dtype, count=n, offset=pos) if len(buf) - pos >= n * dtype.itemsize else None
    if raster is None:
        raise ImageFormatError(f"{path}: raster shorter than {w}x{h}x{channels}")
    img = raster.reshape(h, w, channels).transpose(2, 0, 1).astype(np.float32)
    if maxval != 255:
        img *= 255.0 / maxval
    return np.repeat(img, 3, axis=0) if channels == 1 else img


def write_pnm(path, image):
    """Write a ``(3, H, W)`` array (0..255) as binary P6."""
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)
    _, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(img.transpose(1, 2, 0).tobytes())


def read_image(path):
    path = Path(path)
    if path.suffix.lower() in PNM_SUFFIXES:
        return read_pnm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1)


@dataclass
class Sequence:
    name: str
    frames: list
    boxes: list

    def __post_init__(self):
        if not self.frames:
            raise SequenceError(f"sequence {self.name!r} has no frames")
        if len(self.frames) != len(self.boxes):
            raise SequenceError(
                f"sequence {self.name!r}: {len(self.frames)} frames but {len(self.boxes)} boxes"
            )

    def __len__(self):
        return len(self.frames)

    def image(self, i):
        return read_image(self.frames[i])


def parse_groundtruth(path):
    path = Path(path)
    boxes = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = [p for p in re.split(r"[,\t ]+", line.strip()) if p]
        try:
            x, y, w, h = (float(p) for p in parts)
        except ValueError:
            raise SequenceError(f"{path}:{lineno}: cannot parse box {line!r}") from None
        boxes.append(BBox.from_xywh(x, y, w, h))
    if not boxes:
        raise SequenceError(f"{path}: ground-truth file is empty")
    return boxes


def load_sequence(directory):
    d = Path(directory)
    if not d.is_dir():
        raise SequenceError(f"{d}: sequence directory not found")
    gt = next((d / n for n in GT_NAMES if (d / n).is_file()), None)
    if gt is None:
        raise SequenceError(f"{d}: missing ground truth (expected one of {', '.join(GT_NAMES)})")
    img_dir = d / "img" if (d / "img").is_dir() else d
    frames = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    boxes = parse_groundtruth(gt)
    if len(frames) != len(boxes):
        raise SequenceError(f"{d}: {len(frames)} frames but {len(boxes)} ground-truth lines in {gt.name}")
    return Sequence(d.name, frames, boxes)


def write_sequence(directory, frames, boxes):
    """Write frames as ``img/0001.ppm...`` plus ``groundtruth_rect.txt``."""
    d = Path(directory)
    (d / "img").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames, start=1):
        write_pnm(d / "img" / f"{i:04d}.ppm", frame)
    lines = [",".join(repr(float(v)) for v in b.to_xywh()) for b in boxes]
    (d / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    return d


@dataclass
class TrackResult:
    """Per-frame ``(x, y, w, h)`` boxes, fused scores and timings."""

    boxes: list
    scores: list
    ms: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.boxes = [tuple(float(v) for v in (b.to_xywh() if isinstance(b, BBox) else b)) for b in self.boxes]
        self.scores = [float(s) for s in self.scores]
        if not self.ms:
            self.ms = [0.0] * len(self.boxes)
        if not len(self.boxes) == len(self.scores) == len(self.ms):
            raise ValueError("boxes, scores and timings must align")

    def bboxes(self):
        return [BBox.from_xywh(*b) for b in self.boxes]


def save_results(result, path):
    frames = [
        {"frame": i, "box": list(b), "score": s, "ms": float(t)}
        for i, (b, s, t) in enumerate(zip(result.boxes, result.scores, result.ms))
    ]
    Path(path).write_text(json.dumps({"sequence": result.name, "frames": frames}, indent=1))


def load_results(path):
    data = json.loads(Path(path).read_text())
    frames = sorted(data["frames"], key=lambda f: f["frame"])
    return TrackResult(
        boxes=[tuple(f["box"]) for f in frames],
        scores=[f["score"] for f in frames],
        ms=[f["ms"] for f in frames],
        name=data.get("sequence", ""),
    )
