"""Dataset ingestion, crop geometry, and episodic sampling.

Directory layout per video:
    root/<person_id>/<video_id>/frames/%05d.png   8-bit RGB frames
    root/<person_id>/<video_id>/masks/%05d.png    8-bit single-channel masks
    root/<person_id>/<video_id>/boxes.tsv         frame_index, x0, y0, x1, y1

Images are handled internally as float arrays: RGB in [-1, 1] (H, W, 3),
masks in [0, 1] (H, W, 1). Out-of-bounds crop regions are zero-padded in the
pre-normalization [0, 1] space, i.e. they come out black.
"""
from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


@dataclass
class FrameRecord:
    """One preprocessed frame: RGB in [-1,1], optional mask in [0,1]."""
    person_id: str
    video_id: str
    frame_index: int
    image: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("FrameRecord.image must be HxWx3")
        if self.mask is not None and (self.mask.ndim != 3 or self.mask.shape[2] != 1):
            raise ValueError("FrameRecord.mask must be HxWx1")


@dataclass
class Episode:
    """K identity frames plus one pose-source frame from a single video."""
    identity_frames: list[np.ndarray]
    pose_frame_raw: np.ndarray
    pose_frame_augmented: np.ndarray
    pose_mask: Optional[np.ndarray]
    source_ids: tuple[str, str, tuple[int, ...]]
    video_index: int = 0


@dataclass
class VideoEntry:
    person_id: str
    video_id: str
    path: Path
    frame_indices: list[int]
    boxes: dict[int, tuple[int, int, int, int]]

    @property
    def n_frames(self) -> int:
        return len(self.frame_indices)


@dataclass
class DatasetManifest:
    root: Path
    entries: list[VideoEntry]
    subsample_stride: int = 25

    def __post_init__(self):
        if self.subsample_stride < 1:
            raise ValueError("subsample_stride must be >= 1")

    def __len__(self) -> int:
        return len(self.entries)


def grow_crop_box(box: tuple[int, int, int, int], growth: float) -> tuple[int, int, int, int]:
    """Square a box by enlarging its smaller side, then scale both sides by
    (1 + growth) about the fixed center. The result may extend beyond image
    bounds; crop_frame pads those regions."""
    x0, y0, x1, y1 = box
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"degenerate box {box}")
    if growth < 0:
        raise ValueError("growth must be >= 0")
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    side = max(x1 - x0, y1 - y0) * (1.0 + growth)
    side_i = int(round(side))
    nx0 = int(round(cx - side / 2.0))
    ny0 = int(round(cy - side / 2.0))
    return (nx0, ny0, nx0 + side_i, ny0 + side_i)


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling (align_corners=False).

    Source coordinate for output pixel i is (i + 0.5) * in/out - 0.5, with
    edge clamping. Same-size resize is exactly the identity.
    """
    in_h, in_w = image.shape[:2]
    out = image.astype(np.float64, copy=False)

    def axis_weights(n_in: int, n_out: int):
        coords = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(coords).astype(np.int64)
        frac = coords - lo
        lo0 = np.clip(lo, 0, n_in - 1)
        lo1 = np.clip(lo + 1, 0, n_in - 1)
        return lo0, lo1, frac

    y0, y1, fy = axis_weights(in_h, out_h)
    x0, x1, fx = axis_weights(in_w, out_w)
    top = out[y0][:, x0] * (1 - fx)[None, :, None] + out[y0][:, x1] * fx[None, :, None]
    bot = out[y1][:, x0] * (1 - fx)[None, :, None] + out[y1][:, x1] * fx[None, :, None]
    res = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return res.astype(np.float64)


def crop_frame(image: np.ndarray, box: tuple[int, int, int, int],
               out_resolution: int) -> np.ndarray:
    """Crop `box` (zero-padding out-of-bounds regions) and bilinearly resize
    to out_resolution x out_resolution. Deterministic; warns when the box lies
    entirely outside the image."""
    if out_resolution < 8 or out_resolution % 4 != 0:
        raise ValueError("out_resolution must be >= 8 and a multiple of 4")
    x0, y0, x1, y1 = box
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"degenerate box {box}")
    h, w = image.shape[:2]
    if x1 <= 0 or y1 <= 0 or x0 >= w or y0 >= h:
        log.warning("crop box %s entirely outside %dx%d image; output is all padding",
                    box, h, w)
    ch, cw = y1 - y0, x1 - x0
    patch = np.zeros((ch, cw) + image.shape[2:], dtype=np.float64)
    sy0, sy1 = max(y0, 0), min(y1, h)
    sx0, sx1 = max(x0, 0), min(x1, w)
    if sy1 > sy0 and sx1 > sx0:
        patch[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = image[sy0:sy1, sx0:sx1]
    return bilinear_resize(patch, out_resolution, out_resolution)


def box_to_crop_transform(box: tuple[int, int, int, int],
                          out_resolution: int) -> tuple[float, float, float]:
    """Affine map (scale, dx, dy) taking continuous source-image coordinates
    into crop coordinates: p_crop = (p_src - (x0, y0) + 0.5) * scale - 0.5.

    Matches the half-pixel convention of bilinear_resize, so closed-form
    landmark positions can be compared against detections on cropped frames.
    """
    x0, y0, x1, y1 = box
    scale = out_resolution / float(x1 - x0)
    return scale, float(x0), float(y0)


def apply_crop_transform(points: np.ndarray, transform: tuple[float, float, float]) -> np.ndarray:
    scale, x0, y0 = transform
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] - x0 + 0.5) * scale - 0.5
    out[..., 1] = (pts[..., 1] - y0 + 0.5) * scale - 0.5
    return out


def load_image_01(path: Path) -> np.ndarray:
    """8-bit RGB file -> float (H, W, 3) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def load_mask_01(path: Path) -> np.ndarray:
    """8-bit single-channel file -> float (H, W, 1) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return (arr / 255.0)[..., None]


def to_signed(image01: np.ndarray) -> np.ndarray:
    return image01 * 2.0 - 1.0


def read_boxes_tsv(path: Path) -> dict[int, tuple[int, int, int, int]]:
    boxes: dict[int, tuple[int, int, int, int]] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}: expected 5 tab-separated fields, got {line!r}")
        idx, x0, y0, x1, y1 = (int(p) for p in parts)
        boxes[idx] = (x0, y0, x1, y1)
    return boxes


def scan_manifest(root: str | Path, subsample_stride: int = 25) -> DatasetManifest:
    """Walk root/<person>/<video>/ collecting frame indices and boxes.

    Frames are subsampled by keeping every `subsample_stride`-th index
    (sorted order). Videos without frames are rejected.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    entries: list[VideoEntry] = []
    for person_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for video_dir in sorted(v for v in person_dir.iterdir() if v.is_dir()):
            frames_dir = video_dir / "frames"
            if not frames_dir.is_dir():
                continue
            indices = sorted(int(f.stem) for f in frames_dir.glob("*.png"))
            if not indices:
                raise ValueError(f"video {video_dir} lists no frame files")
            indices = indices[::subsample_stride]
            boxes_path = video_dir / "boxes.tsv"
            boxes = read_boxes_tsv(boxes_path) if boxes_path.exists() else {}
            entries.append(VideoEntry(person_id=person_dir.name, video_id=video_dir.name,
                                      path=video_dir, frame_indices=indices, boxes=boxes))
    if not entries:
        raise ValueError(f"no videos found under {root}")
    return DatasetManifest(root=root, entries=entries, subsample_stride=subsample_stride)


def load_frame_record(entry: VideoEntry, frame_index: int, resolution: int,
                      box_growth: float, with_mask: bool) -> FrameRecord:
    """Load one frame (and mask), apply the grown square crop, normalize."""
    img = load_image_01(entry.path / "frames" / f"{frame_index:05d}.png")
    h, w = img.shape[:2]
    box = entry.boxes.get(frame_index, (0, 0, w, h))
    box = grow_crop_box(box, box_growth)
    image = to_signed(crop_frame(img, box, resolution))
    mask = None
    if with_mask:
        mask_path = entry.path / "masks" / f"{frame_index:05d}.png"
        if mask_path.exists():
            mask = crop_frame(load_mask_01(mask_path), box, resolution)
    return FrameRecord(person_id=entry.person_id, video_id=entry.video_id,
                       frame_index=frame_index, image=image, mask=mask)


def draw_episode_indices(entry: VideoEntry, rng: np.random.Generator, k: int) -> list[int]:
    """Draw K+1 frame indices from one video, distinct whenever possible."""
    n = entry.n_frames
    if n >= k + 1:
        picks = rng.choice(n, size=k + 1, replace=False)
    else:
        picks = rng.integers(0, n, size=k + 1)
    return [entry.frame_indices[i] for i in picks]


def sample_episode(manifest: DatasetManifest, rng: np.random.Generator, k: int, *,
                   resolution: int, box_growth: float, augment_fn=None,
                   require_mask: bool = True, max_resamples: int = 100) -> Episode:
    """Uniformly pick a video, draw K+1 frames (distinct when the video has
    at least K+1), and assemble an Episode. The pose frame's augmentation is
    delegated to `augment_fn(image, rng)`; identity is used when absent.

    When segmentation is required and the pose frame's mask is missing, the
    draw is logged and resampled.
    """
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    for _ in range(max_resamples):
        video_index = int(rng.integers(0, len(manifest.entries)))
        entry = manifest.entries[video_index]
        indices = draw_episode_indices(entry, rng, k)
        pose_index = indices[-1]
        pose_rec = load_frame_record(entry, pose_index, resolution, box_growth,
                                     with_mask=require_mask)
        if require_mask and pose_rec.mask is None:
            log.warning("video %s/%s frame %d has no mask; resampling episode",
                        entry.person_id, entry.video_id, pose_index)
            continue
        identity = [load_frame_record(entry, i, resolution, box_growth, with_mask=False).image
                    for i in indices[:-1]]
        augmented = augment_fn(pose_rec.image, rng) if augment_fn is not None \
            else pose_rec.image.copy()
        return Episode(identity_frames=identity,
                       pose_frame_raw=pose_rec.image,
                       pose_frame_augmented=augmented,
                       pose_mask=pose_rec.mask,
                       source_ids=(entry.person_id, entry.video_id, tuple(indices)),
                       video_index=video_index)
    raise RuntimeError("sample_episode: exceeded resample budget (masks missing?)")


class EpisodePrefetcher:
    """Bounded-queue episode prefetcher.

    Episode index draws happen sequentially on the sampling thread from one
    seeded generator, so the episode stream is identical for any worker
    count; workers only perform the (pure) loading and augmentation.
    """

    def __init__(self, manifest: DatasetManifest, rng: np.random.Generator, k: int, *,
                 resolution: int, box_growth: float, augment_fn=None,
                 require_mask: bool = True, capacity: int = 16, workers: int = 1):
        self._manifest = manifest
        self._rng = rng
        self._k = k
        self._kwargs = dict(resolution=resolution, box_growth=box_growth,
                            augment_fn=augment_fn, require_mask=require_mask)
        self._queue: queue.Queue = queue.Queue(maxsize=max(1, capacity))
        self._workers = max(1, workers)
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def __iter__(self) -> Iterator[Episode]:
        if self._workers <= 1:
            while True:
                yield sample_episode(self._manifest, self._rng, self._k, **self._kwargs)
        else:
            self._thread = threading.Thread(target=self._produce, daemon=True)
            self._thread.start()
            try:
                while True:
                    yield self._queue.get()
            finally:
                self.close()

    def _produce(self) -> None:
        while not self._stop.is_set():
            ep = sample_episode(self._manifest, self._rng, self._k, **self._kwargs)
            while not self._stop.is_set():
                try:
                    self._queue.put(ep, timeout=0.2)
                    break
                except queue.Full:
                    continue

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            try:
                while True:
                    self._queue.get_nowait()
            except queue.Empty:
                pass
            self._thread.join(timeout=2.0)
            self._thread = None
