"""Binary PPM (P6, maxval 255) image I/O for video frame directories."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import ParseError

FRAME_PATTERN = "frame_%05d.ppm"
_FRAME_RE = re.compile(r"^frame_(\d{5})\.ppm$")


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) image. Float inputs are taken in [0, 1] and quantized
    with round-half-away-from-zero to u8."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    if img.dtype != np.uint8:
        img = np.clip(np.floor(img.astype(np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a P6 PPM into an (H, W, 3) float32 image in [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(b"P6"):
        raise ParseError(path, 1, "not a binary P6 PPM")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed.
    tokens = []
    i = 2
    while len(tokens) < 3 and i < len(raw):
        c = raw[i:i + 1]
        if c == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace():
                j += 1
            tokens.append(raw[i:j])
            i = j
    if len(tokens) < 3:
        raise ParseError(path, 1, "truncated PPM header")
    i += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ParseError(path, 1, "malformed PPM header") from None
    if maxval != 255:
        raise ParseError(path, 1, f"only maxval 255 is supported, got {maxval}")
    expect = w * h * 3
    if len(raw) - i < expect:
        raise ParseError(path, 1, f"pixel payload is {len(raw) - i} bytes, expected {expect}")
    img = np.frombuffer(raw, dtype=np.uint8, count=expect, offset=i).reshape(h, w, 3)
    return img.astype(np.float32) / 255.0


def write_frame_dir(directory, video: np.ndarray) -> list[Path]:
    """Write an (n, H, W, 3) video as frame_%05d.ppm files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(video):
        p = directory / (FRAME_PATTERN % i)
        write_ppm(p, frame)
        paths.append(p)
    return paths


def read_frame_dir(directory) -> np.ndarray:
    """Read frame_%05d.ppm files into an (n, H, W, 3) float32 video."""
    directory = Path(directory)
    entries = []
    for p in directory.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            entries.append((int(m.group(1)), p))
    if not entries:
        raise ParseError(directory, 1, "no frame_%05d.ppm files found")
    entries.sort()
    indices = [i for i, _ in entries]
    if indices != list(range(len(entries))):
        raise ParseError(directory, 1, f"frame indices are not contiguous from 0: {indices[:8]}...")
    frames = [read_ppm(p) for _, p in entries]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ParseError(directory, 1, f"frames have inconsistent shapes: {sorted(shapes)}")
    return np.stack(frames)
