"""Grayscale frames, patch sampling, and the 405-d block-division HOG.

Frames are (height, width) float arrays with intensities in [0, 1].
Tracked regions are resampled to a fixed 32x32 patch with bilinear
interpolation before feature extraction.

The HOG layout follows a five-mode spatial block division of the patch:
full patch, top 2/3, bottom 2/3, left 2/3, right 2/3. Each mode region
is split into 3x3 cells on integer boundaries floor(k * size / 3), each
cell accumulates a 9-bin unsigned orientation histogram (bilinear bin
interpolation, magnitude weighted, cell-wise L2 normalized), giving
5 * 9 * 9 = 405 dimensions. The exact per-pixel arithmetic is part of
the contract (tests compare against a naive re-implementation
bit-for-bit):

* gradients: central differences, borders replicated (no 1/2 factor),
* magnitude: sqrt(gx^2 + gy^2),
* orientation: atan2(gy, gx) folded into [0, pi),
* bin position: pos = angle * (9.0 / pi) - 0.5; votes (1 - frac) and
  frac go to bins floor(pos) % 9 and (floor(pos) + 1) % 9, in that
  order, scanning pixels row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PATCH_SIZE = 32
HOG_BINS = 9
HOG_DIM = 405
RAW_DIM = PATCH_SIZE * PATCH_SIZE

MIN_FRAME_SIDE = 16

_NINE_OVER_PI = HOG_BINS / math.pi

# Mode regions (r0, r1, c0, c1) over the 32x32 patch: full, top 2/3,
# bottom 2/3, left 2/3, right 2/3.
_TWO_THIRDS = (2 * PATCH_SIZE) // 3
_MODE_REGIONS = (
    (0, PATCH_SIZE, 0, PATCH_SIZE),
    (0, _TWO_THIRDS, 0, PATCH_SIZE),
    (PATCH_SIZE - _TWO_THIRDS, PATCH_SIZE, 0, PATCH_SIZE),
    (0, PATCH_SIZE, 0, _TWO_THIRDS),
    (0, PATCH_SIZE, PATCH_SIZE - _TWO_THIRDS, PATCH_SIZE),
)


@dataclass
class BoundingBox:
    """Axis-aligned pixel-space region, top-left (x, y) plus size."""

    x: float
    y: float
    w: float
    h: float

    @property
    def cx(self) -> float:
        return self.x + 0.5 * self.w

    @property
    def cy(self) -> float:
        return self.y + 0.5 * self.h

    @property
    def area(self) -> float:
        return self.w * self.h


def validate_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise ValueError("frame must be a 2-d intensity array")
    if min(frame.shape) < MIN_FRAME_SIDE:
        raise ValueError(f"frame sides must be >= {MIN_FRAME_SIDE} pixels")
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError("frame intensities must lie in [0, 1]")
    return frame


def load_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM, bit-exact, normalized by 255."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    width, height, maxval = (int(f) for f in fields[1:])
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace byte separates header and raster
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ValueError(f"{path}: raster shorter than {width}x{height}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return pixels.astype(float) / 255.0


def save_pgm(path, frame: np.ndarray) -> None:
    """Write intensities in [0, 1] as a binary 8-bit PGM."""
    frame = np.asarray(frame, dtype=float)
    pixels = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def load_frame(path) -> np.ndarray:
    """Load a grayscale frame; binary PGM natively, 8-bit PNG via Pillow."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return validate_frame(load_pgm(path))
    if suffix == ".png":
        from PIL import Image

        with Image.open(path) as img:
            gray = img.convert("L")
            pixels = np.asarray(gray, dtype=np.uint8)
        return validate_frame(pixels.astype(float) / 255.0)
    raise ValueError(f"{path}: unsupported frame format {suffix!r}")


def extract_patch(frame: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Resample the box region to PATCH_SIZE^2 via bilinear interpolation.

    Patch pixel (r, c) samples the source at
    (y + (r + 0.5) h / 32 - 0.5, x + (c + 0.5) w / 32 - 0.5); coordinates
    falling outside the frame clamp to the border pixels.
    """
    if box.w <= 0 or box.h <= 0:
        raise ValueError("box must have positive area")
    height, width = frame.shape
    cols = box.x + (np.arange(PATCH_SIZE) + 0.5) * (box.w / PATCH_SIZE) - 0.5
    rows = box.y + (np.arange(PATCH_SIZE) + 0.5) * (box.h / PATCH_SIZE) - 0.5
    cols = np.clip(cols, 0.0, width - 1.0)
    rows = np.clip(rows, 0.0, height - 1.0)

    c0 = np.floor(cols).astype(int)
    r0 = np.floor(rows).astype(int)
    c1 = np.minimum(c0 + 1, width - 1)
    r1 = np.minimum(r0 + 1, height - 1)
    fc = cols - c0
    fr = rows - r0

    top = frame[r0[:, None], c0[None, :]] * (1.0 - fc)[None, :] + frame[
        r0[:, None], c1[None, :]
    ] * fc[None, :]
    bot = frame[r1[:, None], c0[None, :]] * (1.0 - fc)[None, :] + frame[
        r1[:, None], c1[None, :]
    ] * fc[None, :]
    return top * (1.0 - fr)[:, None] + bot * fr[:, None]


def _cell_edges(lo: int, hi: int) -> list[int]:
    size = hi - lo
    return [lo + (k * size) // 3 for k in range(4)]


def gradient_maps(patch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients with replicated borders."""
    gx = np.empty_like(patch)
    gy = np.empty_like(patch)
    gx[:, 1:-1] = patch[:, 2:] - patch[:, :-2]
    gx[:, 0] = patch[:, 1] - patch[:, 0]
    gx[:, -1] = patch[:, -1] - patch[:, -2]
    gy[1:-1, :] = patch[2:, :] - patch[:-2, :]
    gy[0, :] = patch[1, :] - patch[0, :]
    gy[-1, :] = patch[-1, :] - patch[-2, :]
    return gx, gy


def hog405(patch: np.ndarray) -> np.ndarray:
    """405-d five-mode block-division HOG of a 32x32 patch."""
    patch = np.asarray(patch, dtype=float)
    if patch.shape != (PATCH_SIZE, PATCH_SIZE):
        raise ValueError(f"patch must be {PATCH_SIZE}x{PATCH_SIZE}")

    gx, gy = gradient_maps(patch)
    mag = np.sqrt(gx * gx + gy * gy)
    ang = np.arctan2(gy, gx)
    ang = np.where(ang < 0.0, ang + math.pi, ang)
    ang = np.where(ang >= math.pi, ang - math.pi, ang)
    pos = ang * _NINE_OVER_PI - 0.5
    low = np.floor(pos)
    frac = pos - low
    b0 = low.astype(int) % HOG_BINS
    b1 = (b0 + 1) % HOG_BINS
    v0 = mag * (1.0 - frac)
    v1 = mag * frac

    out = np.zeros(HOG_DIM)
    offset = 0
    for r0, r1, c0, c1 in _MODE_REGIONS:
        redges = _cell_edges(r0, r1)
        cedges = _cell_edges(c0, c1)
        for cr in range(3):
            rs, re = redges[cr], redges[cr + 1]
            for cc in range(3):
                cs, ce = cedges[cc], cedges[cc + 1]
                # Interleave the two votes per pixel so the accumulation
                # order matches a row-major per-pixel scan exactly.
                idx = np.stack(
                    [b0[rs:re, cs:ce], b1[rs:re, cs:ce]], axis=-1
                ).ravel()
                val = np.stack(
                    [v0[rs:re, cs:ce], v1[rs:re, cs:ce]], axis=-1
                ).ravel()
                hist = np.zeros(HOG_BINS)
                np.add.at(hist, idx, val)
                sq = 0.0
                for b in range(HOG_BINS):
                    sq += hist[b] * hist[b]
                norm = math.sqrt(sq)
                if norm > 0.0:
                    out[offset : offset + HOG_BINS] = hist / norm
                offset += HOG_BINS
    return out


def raw_pixels(patch: np.ndarray) -> np.ndarray:
    """Row-major flattened patch, mean-subtracted and L2-normalized."""
    patch = np.asarray(patch, dtype=float)
    if patch.shape != (PATCH_SIZE, PATCH_SIZE):
        raise ValueError(f"patch must be {PATCH_SIZE}x{PATCH_SIZE}")
    v = patch.ravel()
    v = v - v.mean()
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros(RAW_DIM)
    return v / norm
