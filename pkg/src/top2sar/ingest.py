"""16-bit PGM ingestion, log transform and non-overlapping patch tiling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PATCH_SIZE = 160
PIXEL_SPACING_M = 1.25


class PGMError(ValueError):
    pass


class UnsupportedFormatError(PGMError):
    pass


class BadMaxvalError(PGMError):
    pass


class TruncatedPayloadError(PGMError):
    pass


@dataclass
class ImageGrid:
    width: int
    height: int
    values: np.ndarray  # uint16, shape (height, width)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint16).reshape(self.height, self.width)


@dataclass
class Patch:
    origin_x: int
    origin_y: int
    values: np.ndarray  # flattened row-major


@dataclass
class PatchSet:
    patch_size: int
    patches: list[Patch] = field(default_factory=list)
    too_small: bool = False
    pixel_spacing_m: float = PIXEL_SPACING_M

    @property
    def footprint_m(self) -> float:
        return self.patch_size * self.pixel_spacing_m

    def matrix(self) -> np.ndarray:
        if not self.patches:
            return np.empty((0, self.patch_size * self.patch_size))
        return np.stack([p.values for p in self.patches])


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise TruncatedPayloadError("header ends prematurely")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def parse_pgm(data: bytes) -> ImageGrid:
    if data[:2] != b"P5":
        raise UnsupportedFormatError(f"unsupported format: magic {data[:2]!r}, expected b'P5'")
    tokens, start = _header_tokens(data[2:], 3)
    start += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PGMError(f"non-integer header field in {tokens!r}") from None
    if width < 1 or height < 1:
        raise PGMError(f"invalid dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise BadMaxvalError(f"maxval {maxval} outside [1, 65535]")
    nbytes = 2 if maxval > 255 else 1
    need = width * height * nbytes
    payload = data[start:start + need]
    if len(payload) < need:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {need}")
    dtype = ">u2" if nbytes == 2 else "u1"
    values = np.frombuffer(payload, dtype=dtype).astype(np.uint16)
    return ImageGrid(width, height, values)


def read_pgm16(path) -> ImageGrid:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def write_pgm16(img: ImageGrid, path, maxval: int = 65535) -> None:
    if not 1 <= maxval <= 65535:
        raise BadMaxvalError(f"maxval {maxval} outside [1, 65535]")
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + img.values.astype(dtype).tobytes())


def log_transform(img: ImageGrid) -> np.ndarray:
    """``ln(1 + v)`` per pixel; maps [0, 65535] onto [0, ln 65536]."""
    return np.log1p(img.values.astype(np.float64))


def tile(img: ImageGrid | np.ndarray, patch_size: int = PATCH_SIZE) -> PatchSet:
    """Cut an image into non-overlapping square patches; edge remainders are dropped."""
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    grid = img.values if isinstance(img, ImageGrid) else np.asarray(img)
    height, width = grid.shape
    rows, cols = height // patch_size, width // patch_size
    out = PatchSet(patch_size)
    if rows == 0 or cols == 0:
        log.warning("image %dx%d is smaller than one %d-pixel patch", width, height, patch_size)
        out.too_small = True
        return out
    for r in range(rows):
        for c in range(cols):
            y0, x0 = r * patch_size, c * patch_size
            block = grid[y0:y0 + patch_size, x0:x0 + patch_size]
            out.patches.append(Patch(x0, y0, np.array(block, dtype=np.float64).ravel()))
    return out


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray  # 0 marks a constant feature

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        safe = np.where(self.scale > 0, self.scale, 1.0)
        return np.where(self.scale > 0, (x - self.mean) / safe, 0.0)


def standardize(train_patches) -> tuple[Standardizer, np.ndarray]:
    """Fit per-feature mean/std on training rows and apply them."""
    x = np.asarray(train_patches.matrix() if isinstance(train_patches, PatchSet) else train_patches, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("standardization needs at least 2 training rows")
    std = x.std(axis=0)
    params = Standardizer(x.mean(axis=0), np.where(std > 0, std, 0.0))
    return params, params.apply(x)


def read_label_sidecar(path) -> dict[tuple[int, int], int]:
    labels = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                x, y, label = (int(v) for v in line.split(","))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'origin_x,origin_y,label'") from None
            labels[(x, y)] = label
    return labels


def write_label_sidecar(entries, path) -> None:
    with open(path, "w") as fh:
        for (x, y), label in sorted(entries.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            fh.write(f"{x},{y},{label}\n")
