"""Synthetic audio-visual clip generation with exact ground truth.

A clip is T frames of moving coloured shapes over a dark background plus a
per-second spectrogram. Each shape class owns a fixed colour and a fixed
pair of frequency bins; sounding shapes write their tone into the
spectrogram, silent ones do not. Ground-truth masks mark every pixel
covered by at least one sounding shape, independent of occlusion, which
keeps the mask exactly the union of sounding rasterizations. Silent
shapes are drawn first so they can never hide a sounding one.

Everything is a pure function of the seed, so regeneration is
bit-identical and per-source solo spectrograms can be rebuilt in
isolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container, netpbm

T_FRAMES = 5
F_BINS = 32
T_BINS = 8

MODES = ("S4", "MS3")

CLASS_NAMES = ("disc", "square", "triangle", "ring", "bar", "cross")

# Per-class RGB fill colours; background deliberately dark and unsaturated.
CLASS_COLORS = np.array([
    (220, 60, 60),
    (60, 120, 220),
    (240, 200, 60),
    (70, 200, 90),
    (200, 80, 200),
    (80, 210, 210),
], dtype=np.uint8)
BACKGROUND = np.array((24, 24, 28), dtype=np.uint8)

_AUDIO_STREAM = 7
_LAYOUT_STREAM = 11


@dataclass
class SourceSpec:
    """One shape track: class, geometry per frame, and its sounding flag."""

    class_index: int
    size: float
    centers: np.ndarray  # (T, 2) float (row, col) per frame
    is_sounding: bool

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.class_index]


@dataclass
class SceneClip:
    frames: np.ndarray        # (T, 3, H, W) float64 in [0, 1]
    spectrogram: np.ndarray   # (T, F_BINS, T_BINS) float64
    gt_masks: np.ndarray      # (T, H, W) bool
    sources: list[SourceSpec]


def _check_size(h: int, w: int) -> None:
    for v in (h, w):
        if v < 32 or v & (v - 1):
            raise ValueError(f"frame size must be a power of two >= 32, got {h}x{w}")


def rasterize(class_index: int, center, size: float, h: int, w: int) -> np.ndarray:
    """Hard binary mask of one shape; no anti-aliasing so GT is exact."""
    cy, cx = float(center[0]), float(center[1])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    s = float(size)
    name = CLASS_NAMES[class_index]
    if name == "disc":
        return dy * dy + dx * dx <= s * s
    if name == "square":
        return (np.abs(dy) <= s) & (np.abs(dx) <= s)
    if name == "triangle":
        # Isoceles, apex up: half-width grows from 0 at the apex to s at the base.
        return (dy >= -s) & (dy <= s) & (np.abs(dx) <= (dy + s) / 2.0)
    if name == "ring":
        r2 = dy * dy + dx * dx
        return (r2 <= s * s) & (r2 >= (0.55 * s) ** 2)
    if name == "bar":
        return (np.abs(dx) <= s) & (np.abs(dy) <= 0.35 * s)
    if name == "cross":
        arm = 0.35 * s
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= s)) | \
               ((np.abs(dy) <= arm) & (np.abs(dx) <= s))
    raise ValueError(f"unknown class index {class_index}")


def source_spectrogram(seed: int, slot: int, class_index: int) -> np.ndarray:
    """Solo track of one sounding source, reproducible from (seed, slot).

    The class tone occupies two fixed frequency bins; loudness jitters per
    spectrogram column so the audio has temporal texture.
    """
    rng = np.random.default_rng([seed, slot, _AUDIO_STREAM])
    amp = 0.7 + 0.6 * rng.random((T_FRAMES, T_BINS))
    solo = np.zeros((T_FRAMES, F_BINS, T_BINS))
    base = 2 + 4 * class_index
    solo[:, base, :] = amp
    solo[:, base + 1, :] = amp
    return solo


def _sample_track(rng: np.random.Generator, size: float, h: int, w: int) -> np.ndarray:
    margin = size + 1.0
    centers = np.zeros((T_FRAMES, 2))
    pos = np.zeros(2)
    vel = np.zeros(2)
    for axis, extent in enumerate((h, w)):
        lo, hi = margin, extent - 1.0 - margin
        pos[axis] = rng.uniform(lo, hi)
        vel[axis] = rng.uniform(-extent / 20.0, extent / 20.0)
        end = pos[axis] + (T_FRAMES - 1) * vel[axis]
        if end < lo or end > hi:
            vel[axis] = -vel[axis]  # box width exceeds max travel, one flip suffices
    for t in range(T_FRAMES):
        centers[t] = pos + t * vel
    return centers


def generate_clip(seed: int, mode: str, h: int = 64, w: int = 64) -> SceneClip:
    """Build one clip. Same arguments always produce bit-identical output."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    _check_size(h, w)
    rng = np.random.default_rng([seed, MODES.index(mode), h, w, _LAYOUT_STREAM])

    n_sounding = 1 if mode == "S4" else int(rng.integers(2, 4))
    n_silent = int(rng.integers(0, 3))
    classes = rng.choice(len(CLASS_NAMES), size=n_sounding + n_silent, replace=False)

    sources: list[SourceSpec] = []
    flags = [False] * n_silent + [True] * n_sounding
    for cls, sounding in zip(classes, flags):
        size = rng.uniform(h / 10.0, h / 6.0)
        centers = _sample_track(rng, size, h, w)
        sources.append(SourceSpec(int(cls), size, centers, sounding))

    frames_u8 = np.empty((T_FRAMES, h, w, 3), dtype=np.uint8)
    gt = np.zeros((T_FRAMES, h, w), dtype=bool)
    for t in range(T_FRAMES):
        img = np.tile(BACKGROUND, (h, w, 1))
        for src in sources:
            m = rasterize(src.class_index, src.centers[t], src.size, h, w)
            img[m] = CLASS_COLORS[src.class_index]
            if src.is_sounding:
                gt[t] |= m
        frames_u8[t] = img

    spec = np.zeros((T_FRAMES, F_BINS, T_BINS))
    for slot, src in enumerate(sources):
        if src.is_sounding:
            spec += source_spectrogram(seed, slot, src.class_index)

    frames = frames_u8.astype(np.float64).transpose(0, 3, 1, 2) / 255.0
    return SceneClip(frames, spec, gt, sources)


# ---------------------------------------------------------------------------
# On-disk layout
# ---------------------------------------------------------------------------

def clip_id(mode: str, seed: int) -> str:
    return f"{mode.lower()}_{seed:06d}"


def write_clip(clip: SceneClip, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    u8 = np.round(clip.frames * 255.0).astype(np.uint8).transpose(0, 2, 3, 1)
    for t in range(clip.frames.shape[0]):
        netpbm.write_ppm(out / f"frame_{t}.ppm", np.ascontiguousarray(u8[t]))
        netpbm.write_mask(out / f"mask_{t}.pgm", clip.gt_masks[t])
    container.write_tensors(out / "audio.tavs", {"spectrogram": clip.spectrogram})


def load_clip(clip_dir) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read back (frames, spectrogram, gt_masks) from a clip directory."""
    d = Path(clip_dir)
    frames, masks = [], []
    t = 0
    while (d / f"frame_{t}.ppm").exists():
        frames.append(netpbm.read_ppm(d / f"frame_{t}.ppm"))
        masks.append(netpbm.read_mask(d / f"mask_{t}.pgm"))
        t += 1
    if not frames:
        raise FileNotFoundError(f"no frames found in {d}")
    fr = np.stack(frames).astype(np.float64).transpose(0, 3, 1, 2) / 255.0
    spec = container.read_tensors(d / "audio.tavs")["spectrogram"]
    return fr, spec, np.stack(masks)


def write_dataset(out_dir, n_train: int, n_valid: int, n_test: int,
                  mode: str, seed0: int, h: int = 64, w: int = 64):
    """Generate clips for three disjoint splits and write a manifest.

    Seeds are consecutive from seed0 (train block, then valid, then test),
    so splits never share a seed. Returns the manifest path.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    for name, n in (("train", n_train), ("valid", n_valid), ("test", n_test)):
        if n < 1:
            raise ValueError(f"{name} count must be >= 1, got {n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    seed = seed0
    for split, count in (("train", n_train), ("valid", n_valid), ("test", n_test)):
        for _ in range(count):
            cid = clip_id(mode, seed)
            rel = f"{split}/{cid}"
            write_clip(generate_clip(seed, mode, h, w), out / rel)
            records.append({"id": cid, "mode": mode, "split": split,
                            "dir": rel, "seed": seed})
            seed += 1
    manifest = out / "manifest.jsonl"
    with open(manifest, "w", encoding="ascii") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return manifest


def read_manifest(manifest_path) -> list[dict]:
    path = Path(manifest_path)
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    for rec in records:
        for key in ("id", "mode", "split", "dir", "seed"):
            if key not in rec:
                raise ValueError(f"{path}: manifest record missing key {key!r}: {rec}")
    return records


def manifest_clip_dir(manifest_path, record: dict) -> Path:
    return Path(manifest_path).parent / record["dir"]
