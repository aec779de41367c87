"""Geometry and raster primitives.

Pixel coordinates have their origin at the top-left lattice point, ``x`` grows
to the right and ``y`` grows downward.  A point is a length-2 array ``(x, y)``;
functions that take points also accept an ``(n, 2)`` stack of them.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, SingularMap

DET_MIN = 1e-6


def as_points(z) -> np.ndarray:
    """Return ``z`` as a float array of shape (2,) or (n, 2)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 2 or z.ndim > 2:
        raise DimensionMismatch(f"expected points of shape (2,) or (n, 2), got {z.shape}")
    return z


@dataclass(frozen=True, eq=False)
class AffineMap:
    """The map z -> a @ z + b."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(2, 2)
        b = np.array(self.b, dtype=float).reshape(2)
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def identity(cls) -> AffineMap:
        return cls(np.eye(2), np.zeros(2))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.a))

    def is_valid(self, det_min: float = DET_MIN) -> bool:
        return bool(np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))
                    and abs(self.det) >= det_min)

    def params(self) -> np.ndarray:
        """Flatten to (a11, a12, a21, a22, b1, b2)."""
        return np.concatenate([self.a.ravel(), self.b])

    @classmethod
    def from_params(cls, p) -> AffineMap:
        p = np.asarray(p, dtype=float)
        return cls(p[:4].reshape(2, 2), p[4:6])

    def __call__(self, z):
        return apply_affine(self, z)


def apply_affine(m: AffineMap, z) -> np.ndarray:
    z = as_points(z)
    return z @ m.a.T + m.b


def invert_affine(m: AffineMap, det_min: float = DET_MIN) -> AffineMap:
    det = m.det
    if not np.isfinite(det) or abs(det) < det_min:
        raise SingularMap(f"|det(A)| = {abs(det):.3g} below det_min = {det_min:g}")
    a_inv = np.linalg.inv(m.a)
    return AffineMap(a_inv, -a_inv @ m.b)


def compose_affine(outer: AffineMap, inner: AffineMap) -> AffineMap:
    """Map equal to applying ``inner`` first, then ``outer``."""
    return AffineMap(outer.a @ inner.a, outer.a @ inner.b + outer.b)


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    """Real values on a ``height`` x ``width`` pixel lattice, stored row-major.

    ``values[y, x]`` is the sample at pixel ``(x, y)``.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 2:
            raise DimensionMismatch(f"field must be 2-D with both sides >= 2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def grid(self) -> np.ndarray:
        """Lattice coordinates as an (h, w, 2) array of (x, y)."""
        return pixel_grid(self.width, self.height)


def pixel_grid(width: int, height: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    return np.stack([xs, ys], axis=-1)


def _bilinear(values: np.ndarray, z: np.ndarray) -> np.ndarray:
    h, w = values.shape
    x = np.clip(z[..., 0], 0.0, w - 1.0)
    y = np.clip(z[..., 1], 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(int), w - 2)
    y0 = np.minimum(np.floor(y).astype(int), h - 2)
    fx = x - x0
    fy = y - y0
    v00 = values[y0, x0]
    v01 = values[y0, x0 + 1]
    v10 = values[y0 + 1, x0]
    v11 = values[y0 + 1, x0 + 1]
    return (v00 * (1 - fx) * (1 - fy) + v01 * fx * (1 - fy)
            + v10 * (1 - fx) * fy + v11 * fx * fy)


def bilinear_sample(f: ScalarField2D, z):
    """Bilinear interpolation of ``f`` at ``z``; out-of-range points clamp to the border."""
    z = as_points(z)
    out = _bilinear(f.values, z)
    return float(out) if z.ndim == 1 else out


def lattice_gradient(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences inside, one-sided differences on the border rows/columns."""
    gy, gx = np.gradient(np.asarray(values, dtype=float))
    return gx, gy


def central_gradient(f: ScalarField2D, z) -> np.ndarray:
    """Lattice gradient of ``f`` bilinearly interpolated at ``z``; returns (..., 2)."""
    z = as_points(z)
    gx, gy = lattice_gradient(f.values)
    return np.stack([_bilinear(gx, z), _bilinear(gy, z)], axis=-1)


# -- serialization ---------------------------------------------------------

RAW_MAGIC = b"MCF1"


def write_pgm(path, values, maxval: int | None = None) -> None:
    """Write a grayscale P5 PGM.  Values are rounded and clipped to [0, maxval]."""
    v = np.asarray(values.values if isinstance(values, ScalarField2D) else values, dtype=float)
    if maxval is None:
        maxval = 255 if v.max(initial=0) <= 255 else 65535
    data = np.clip(np.rint(v), 0, maxval)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        if maxval < 256:
            fh.write(data.astype(np.uint8).tobytes())
        else:
            fh.write(data.astype(">u2").tobytes())


def _pgm_tokens(buf: bytes, count: int, pos: int):
    tokens = []
    while len(tokens) < count:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while buf[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> ScalarField2D:
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pgm_tokens(buf, 4, 0)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos)
    return ScalarField2D(data.reshape(h, w).astype(float))


def write_raw_field(path, f) -> None:
    """Little-endian float64 dump behind a 16-byte header: magic, u32 width, u32 height, 4 pad bytes."""
    v = np.asarray(f.values if isinstance(f, ScalarField2D) else f, dtype="<f8")
    h, w = v.shape
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC + struct.pack("<II", w, h) + b"\0" * 4)
        fh.write(v.tobytes())


def read_raw_array(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != RAW_MAGIC:
        raise ValueError(f"{path}: bad magic {buf[:4]!r}")
    w, h = struct.unpack("<II", buf[4:12])
    return np.frombuffer(buf, dtype="<f8", count=w * h, offset=16).reshape(h, w).copy()


def read_raw_field(path) -> ScalarField2D:
    return ScalarField2D(read_raw_array(path))
