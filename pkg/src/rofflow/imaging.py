"""Greyscale image I/O (PGM), grid conversion, noise and PSNR.

Pixels are float arrays indexed ``[row, col]`` with nominal range [0, 255];
values are only clamped and rounded when encoded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import GridFunction

__all__ = [
    "Image",
    "PGMError",
    "PGMHeaderError",
    "PGMTruncatedError",
    "PGMMaxvalError",
    "read_pgm",
    "write_pgm",
    "load_pgm",
    "save_pgm",
    "image_to_grid",
    "grid_to_image",
    "add_gaussian_noise",
    "psnr",
    "synthetic_corpus",
]


class PGMError(ValueError):
    """Malformed PGM data."""


class PGMHeaderError(PGMError):
    pass


class PGMTruncatedError(PGMError):
    pass


class PGMMaxvalError(PGMError):
    pass


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


# -- PGM --------------------------------------------------------------------


def _header(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset just past the last one.
    """
    tokens = []
    pos, end = 0, len(data)
    while len(tokens) < count:
        while pos < end and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= end:
            raise PGMHeaderError("incomplete PGM header")
        if data[pos : pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            pos = end if nl < 0 else nl + 1
            continue
        start = pos
        while pos < end and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(data: bytes) -> Image:
    """Decode binary (P5) or ASCII (P2) PGM with maxval <= 255."""
    if data[:2] not in (b"P5", b"P2"):
        raise PGMHeaderError(f"not a PGM file (magic {data[:2]!r})")
    tokens, pos = _header(data, 4)
    magic, *rest = tokens
    try:
        width, height, maxval = (int(t) for t in rest)
    except ValueError:
        raise PGMHeaderError(f"non-integer header field in {rest!r}") from None
    if width <= 0 or height <= 0:
        raise PGMHeaderError(f"invalid dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise PGMMaxvalError(f"unsupported maxval {maxval} (need 1..255)")
    npix = width * height

    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        if pos >= len(data) or not data[pos : pos + 1].isspace():
            raise PGMTruncatedError("missing raster data")
        raster = data[pos + 1 : pos + 1 + npix]
        if len(raster) < npix:
            raise PGMTruncatedError(f"expected {npix} pixels, found {len(raster)}")
        vals = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    else:
        lines = data[pos:].split(b"\n")
        fields = [t for line in lines for t in line.split(b"#", 1)[0].split()]
        if len(fields) < npix:
            raise PGMTruncatedError(f"expected {npix} pixels, found {len(fields)}")
        try:
            vals = np.array([int(t) for t in fields[:npix]], dtype=np.float64)
        except ValueError:
            raise PGMError("non-integer pixel value") from None
    if np.any(vals > maxval) or np.any(vals < 0):
        raise PGMMaxvalError(f"pixel value outside 0..{maxval}")
    return Image(vals.reshape(height, width))


def write_pgm(img: Image) -> bytes:
    """Encode as binary P5 with maxval 255 (round half to even, then clamp)."""
    vals = np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + vals.tobytes()


def load_pgm(path) -> Image:
    return read_pgm(Path(path).read_bytes())


def save_pgm(path, img: Image) -> None:
    Path(path).write_bytes(write_pgm(img))


# -- grid conversion --------------------------------------------------------


def image_to_grid(img: Image) -> GridFunction:
    """Pixel ``[row j, col i]`` becomes cell ``(i, j)``; values are unchanged."""
    if img.width != img.height:
        raise ValueError(f"only square images are supported, got {img.width}x{img.height}")
    return GridFunction(img.pixels)


def grid_to_image(u: GridFunction) -> Image:
    return Image(np.clip(np.rint(u.values), 0, 255))


# -- noise and quality ------------------------------------------------------


def _standard_normal(seed: int, count: int) -> np.ndarray:
    # Box-Muller on Philox uniforms: the Philox stream is counter based and
    # fixed by the seed, so the noise does not depend on numpy's sampler choices
    gen = np.random.Generator(np.random.Philox(seed))
    pairs = (count + 1) // 2
    u1 = 1.0 - gen.random(pairs)  # (0, 1], keeps log finite
    u2 = gen.random(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(2 * np.pi * u2)
    z[1::2] = r * np.sin(2 * np.pi * u2)
    return z[:count]


def add_gaussian_noise(img: Image, sigma: float, seed: int) -> Image:
    """Add i.i.d. normal noise with standard deviation ``sigma`` (grey levels)."""
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise ValueError(f"sigma must be a non-negative number, got {sigma}")
    if sigma == 0:
        return Image(img.pixels)
    z = _standard_normal(int(seed), img.pixels.size).reshape(img.pixels.shape)
    return Image(img.pixels + sigma * z)


def psnr(a: Image, b: Image, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"shape mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# -- synthetic test images --------------------------------------------------


def _shapes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    img = np.full(np.broadcast(x, y).shape, 60.0)
    img[(np.abs(x - 0.28) < 0.16) & (np.abs(y - 0.3) < 0.12)] = 200.0
    img[(x - 0.7) ** 2 + (y - 0.3) ** 2 < 0.17**2] = 150.0
    ring = (x - 0.3) ** 2 + (y - 0.72) ** 2
    img[(ring < 0.17**2) & (ring > 0.09**2)] = 220.0
    # triangle with vertices (0.55, 0.9), (0.9, 0.9), (0.9, 0.55)
    img[(x <= 0.9) & (y <= 0.9) & (x + y >= 1.45)] = 110.0
    return img


def _texture(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    img = _shapes(x, y)
    patch = (np.abs(x - 0.62) < 0.14) & (np.abs(y - 0.7) < 0.1)
    stripes = 130.0 + 50.0 * np.sign(np.sin(2 * np.pi * 10 * (x + 0.5 * y)))
    img[patch] = stripes[patch]
    return img


def synthetic_corpus(n: int = 256) -> dict[str, Image]:
    """Deterministic piecewise-constant test images: plain shapes, and shapes with a striped patch."""
    c = (np.arange(n) + 0.5) / n
    x, y = np.meshgrid(c, c)
    return {
        "shapes": Image(_shapes(x, y)),
        "texture": Image(_texture(x, y)),
    }
