"""Frame and mask I/O: binary PPM/PGM, nearest-neighbor resize, JSON-lines."""

from __future__ import annotations

import json
import os
import re

import numpy as np


def _read_pnm_tokens(fh, count: int) -> list[bytes]:
    """Read whitespace-separated header tokens, skipping '#' comments."""
    tokens: list[bytes] = []
    while len(tokens) < count:
        ch = fh.read(1)
        if not ch:
            raise ValueError("truncated header")
        if ch in b" \t\r\n":
            continue
        if ch == b"#":
            while ch and ch not in b"\r\n":
                ch = fh.read(1)
            continue
        token = ch
        while True:
            ch = fh.read(1)
            if not ch or ch in b" \t\r\n":
                break
            token += ch
        tokens.append(token)
    return tokens


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        got = fh.read(2)
        if got != magic:
            raise ValueError(f"{path}: expected {magic.decode()} file, got {got!r}")
        width, height, maxval = (int(t) for t in _read_pnm_tokens(fh, 3))
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
        data = fh.read(width * height * channels)
    if len(data) != width * height * channels:
        raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=np.uint8)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return arr.reshape(shape).copy()


def read_ppm(path) -> np.ndarray:
    """Binary P6 RGB image as (h, w, 3) uint8."""
    return _read_pnm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    """Binary P5 grayscale image as (h, w) uint8."""
    return _read_pnm(path, b"P5", 1)


def write_ppm(path, image) -> None:
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs (h, w, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(arr).tobytes())


def write_pgm(path, image) -> None:
    arr = np.asarray(image)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    arr = arr.astype(np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs (h, w), got {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_edge_map(path) -> np.ndarray:
    """PGM file interpreted as edge magnitudes / 255, in [0, 1]."""
    return (read_pgm(path).astype(np.float32)) / 255.0


def resize_nearest(image, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize to (width, height)."""
    arr = np.asarray(image)
    width, height = size
    h, w = arr.shape[:2]
    if (w, h) == (width, height):
        return arr
    ys = np.minimum((np.arange(height) * h) // height, h - 1)
    xs = np.minimum((np.arange(width) * w) // width, w - 1)
    return arr[np.ix_(ys, xs)] if arr.ndim == 2 else arr[np.ix_(ys, xs)]


_NUM_RE = re.compile(r"(\d+)")


def _numeric_key(name: str):
    parts = _NUM_RE.split(name)
    return tuple(int(p) if p.isdigit() else p for p in parts)


def list_frames(directory, suffix: str = ".ppm") -> list[str]:
    """Frame files in a directory, ordered by the numbers in their names."""
    names = [n for n in os.listdir(directory) if n.endswith(suffix)]
    names.sort(key=_numeric_key)
    return [os.path.join(directory, n) for n in names]


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(", ", ": ")) + "\n")


def read_jsonl(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, separators=(", ", ": "))
