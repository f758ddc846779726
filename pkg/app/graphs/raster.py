"""
Rasterisation of layouts into single-channel images, and PGM file I/O.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

BACKGROUND = 1.0
INK = 0.0


@dataclass
class RenderConfig:
    side: int = 128
    margin: int = 4

    def validate(self):
        problems = []
        if self.side < 1:
            problems.append(f"render.side must be >= 1 (got {self.side})")
        if self.margin < 0 or 2 * self.margin >= self.side:
            problems.append(f"render.margin must leave drawable pixels (got {self.margin})")
        return problems


@dataclass
class FdlImage:
    pixels: np.ndarray
    label: int = -1

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1]:
            raise ShapeError("Image must be square", self.pixels.shape)


def _line(r0, c0, r1, c1):
    """Integer Bresenham line from (r0, c0) to (r1, c1), both ends included."""
    rows, cols = [], []
    dr, dc = abs(r1 - r0), -abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr + dc
    r, c = r0, c0
    while True:
        rows.append(r)
        cols.append(c)
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 >= dc:
            err += dc
            r += sr
        if e2 <= dr:
            err += dr
            c += sc
    return rows, cols


def pixel_coordinates(positions, config=None):
    """
    Map layout positions to integer (row, col) pixels.

    Positions are min-max scaled into the square inside the margin with the
    aspect ratio preserved and the shorter axis centred; y grows upwards.
    """
    config = config or RenderConfig()
    P = np.asarray(positions, dtype=np.float64)
    usable = config.side - 1 - 2 * config.margin
    lo = P.min(axis=0)
    span = P.max(axis=0) - lo
    extent = float(span.max())
    if extent == 0.0:
        centre = config.side // 2
        return np.full(len(P), centre, dtype=np.int64), np.full(len(P), centre, dtype=np.int64)
    # unit coordinates are rounded so a uniformly rescaled layout lands on the same pixels
    unit = np.round((P - lo) / extent, 9)
    offset = config.margin + usable * (1.0 - unit.max(axis=0)) / 2.0
    xy = np.rint(unit * usable + offset).astype(np.int64)
    return (config.side - 1) - xy[:, 1], xy[:, 0]


def rasterize(result, config=None, label=-1, edges=None):
    """
    Draw a layout as dark 1-pixel edges and vertices on a white square.

    Args:
        result (LayoutResult): Layout to draw.
        config (RenderConfig): Image side and margin.
        label (int): Class index stored on the image.
        edges (array-like): (m, 2) vertex pairs; defaults to the unit-distance
            pairs of ``result.distances``.

    Returns:
        FdlImage: Pixels in [0, 1].
    """
    config = config or RenderConfig()
    problems = config.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    P = np.asarray(result.positions, dtype=np.float64)
    if not np.isfinite(P).all():
        raise ShapeError("Layout positions must be finite", P.shape)

    if edges is None:
        i, j = np.nonzero(np.triu(result.distances == 1))
        edges = np.column_stack([i, j])
    rows, cols = pixel_coordinates(P, config)

    pixels = np.full((config.side, config.side), BACKGROUND)
    for a, b in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
        line_rows, line_cols = _line(int(rows[a]), int(cols[a]), int(rows[b]), int(cols[b]))
        pixels[line_rows, line_cols] = INK
    pixels[rows, cols] = INK
    return FdlImage(np.clip(pixels, 0.0, 1.0), label)


def write_pgm(image, path):
    """Write an 8-bit binary (P5) PGM; stored values are round(pixel * 255)."""
    path = Path(path)
    data = np.rint(np.clip(image.pixels, 0.0, 1.0) * 255).astype(np.uint8)
    height, width = data.shape
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + data.tobytes())
    return path


def _pgm_tokens(raw, count):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(raw[start:pos]))
    return tokens, pos + 1


def read_pgm(path, label=-1):
    """Read a P5 PGM into an FdlImage with values pixel / maxval."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise ShapeError(f"{path} is not a binary PGM")
    try:
        (width, height, maxval), start = _pgm_tokens(raw, 3)
    except (ValueError, IndexError):
        raise ShapeError(f"{path} has a malformed PGM header")
    dtype = np.uint8 if maxval < 256 else ">u2"
    data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=start)
    return FdlImage(data.reshape(height, width).astype(np.float64) / maxval, label)
