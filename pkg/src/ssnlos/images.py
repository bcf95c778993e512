"""Binary PGM/PPM encoders for albedo, depth and normal maps.

Images are written row-major with the map's first axis (x) across and its
second axis (y) down, flipped so that +y points up as on the wall.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .metrics import ReconMaps

_HEADER = re.compile(rb"(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s")


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def to_bytes(values: np.ndarray) -> np.ndarray:
    """Map ``[0, 1]`` to ``0..255`` with round-half-up and clipping."""
    return np.clip(_round_half_up(255.0 * np.asarray(values, dtype=np.float64)), 0, 255).astype(np.uint8)


def encode_normals(normal_map: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Channels ``round(255 * (n + 1) / 2)``; pixels outside ``mask`` are black."""
    pix = np.clip(_round_half_up(255.0 * (np.asarray(normal_map) + 1.0) / 2.0), 0, 255).astype(np.uint8)
    pix[~np.asarray(mask, dtype=bool)] = 0
    return pix


def _raster(img: np.ndarray) -> np.ndarray:
    # (x, y[, c]) -> rows of constant y, top row = largest y
    return np.ascontiguousarray(np.swapaxes(img, 0, 1)[::-1])


def encode_pgm(img: np.ndarray) -> bytes:
    rows = _raster(np.asarray(img, dtype=np.uint8))
    h, w = rows.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + rows.tobytes()


def encode_ppm(img: np.ndarray) -> bytes:
    rows = _raster(np.asarray(img, dtype=np.uint8))
    h, w, c = rows.shape
    if c != 3:
        raise ValueError("PPM images need three channels")
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rows.tobytes()


def decode_pnm(buf: bytes) -> np.ndarray:
    """Read back a P5/P6 image as an ``(x, y[, 3])`` uint8 array."""
    m = _HEADER.match(buf)
    if m is None:
        raise ValueError("not a binary PGM/PPM image")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    channels = 3 if magic == b"P6" else 1
    arr = np.frombuffer(buf, dtype=np.uint8, count=w * h * channels, offset=m.end())
    arr = arr.reshape((h, w, 3) if channels == 3 else (h, w))
    return np.swapaxes(arr[::-1], 0, 1)


def map_images(maps: ReconMaps, max_depth: float) -> dict[str, bytes]:
    """Encoded albedo, normal and depth images of a set of maps."""
    albedo = to_bytes(maps.albedo_map)
    depth = to_bytes(np.where(maps.mask, maps.depth_map / max_depth, 0.0))
    normal = encode_normals(maps.normal_map, maps.mask)
    return {
        "albedo.pgm": encode_pgm(albedo),
        "normal.ppm": encode_ppm(normal),
        "depth.pgm": encode_pgm(depth),
    }


def write_map_images(maps: ReconMaps, max_depth: float, outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, payload in map_images(maps, max_depth).items():
        path = outdir / name
        path.write_bytes(payload)
        written.append(path)
    return written
