"""Images, perturbations and binary PPM/PGM I/O.

Images are plain ``float64`` numpy arrays of shape ``(C, H, W)`` with values
in ``[0, 1]``. They are treated as immutable: every function here returns a
new array.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class ImageFormatError(ValueError):
    """Malformed or unsupported PPM/PGM file."""


def as_image(data, copy: bool = True) -> np.ndarray:
    """Validate ``data`` as a ``(C, H, W)`` image in ``[0, 1]``."""
    x = np.array(data, dtype=np.float64, copy=copy)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError(f"image must have shape (C, H, W), got {x.shape}")
    if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return x


@dataclass(frozen=True)
class Perturbation:
    """An L-inf bounded perturbation ``delta`` with budget ``epsilon``.

    ``delta`` holds the effective (post-clamp) difference between the
    perturbed and the clean image, so ``|delta| <= epsilon`` always holds.
    """

    epsilon: float
    delta: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        d = np.asarray(self.delta, dtype=np.float64)
        if d.ndim != 3:
            raise ValueError(f"delta must have shape (C, H, W), got {d.shape}")
        if np.abs(d).max(initial=0.0) > self.epsilon * (1 + 1e-12):
            raise ValueError("delta exceeds the epsilon budget")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "delta", d)

    @classmethod
    def zeros(cls, shape, epsilon: float) -> "Perturbation":
        return cls(epsilon, np.zeros(shape))

    @property
    def touched(self) -> set[tuple[int, int]]:
        """Pixel coordinates where any channel of ``delta`` is nonzero."""
        hs, ws = np.nonzero(np.any(self.delta != 0.0, axis=0))
        return {(int(h), int(w)) for h, w in zip(hs, ws)}


def apply_perturbation(x: np.ndarray, d: Perturbation | np.ndarray) -> np.ndarray:
    """Return ``clamp(x + delta, 0, 1)``."""
    delta = d.delta if isinstance(d, Perturbation) else np.asarray(d, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != delta.shape:
        raise ValueError(f"shape mismatch: image {x.shape} vs delta {delta.shape}")
    return np.clip(x + delta, 0.0, 1.0)


def effective_delta(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """The post-clamp difference ``clamp(x + delta) - x``."""
    return apply_perturbation(x, delta) - x


# --------------------------------------------------------------------------
# PPM (P6) / PGM (P5) with maxval 255


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated header")
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> np.ndarray:
    """Decode a binary P5/P6 byte string to a ``(C, H, W)`` image."""
    magic, pos = _read_token(buf, 0)
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise ImageFormatError(f"unsupported magic number {magic!r}")
    values = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"malformed header field {tok!r}")
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise ImageFormatError("image dimensions must be positive")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}, only 255 is allowed")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise ImageFormatError("missing whitespace before raster")
    pos += 1
    size = width * height * channels
    raster = buf[pos : pos + size]
    if len(raster) < size:
        raise ImageFormatError(f"truncated raster: expected {size} bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def encode_pnm(x: np.ndarray) -> bytes:
    """Encode a 1- or 3-channel image as binary PGM/PPM bytes."""
    x = as_image(x, copy=False)
    c, h, w = x.shape
    if c not in (1, 3):
        raise ValueError(f"PNM supports 1 or 3 channels, got {c}")
    raster = np.rint(x * 255.0).astype(np.uint8).transpose(1, 2, 0)
    magic = b"P6" if c == 3 else b"P5"
    return magic + b"\n%d %d\n255\n" % (w, h) + raster.tobytes()


def read_image(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def write_image(x: np.ndarray, path: str | os.PathLike) -> None:
    data = encode_pnm(x)
    with open(path, "wb") as fh:
        fh.write(data)
