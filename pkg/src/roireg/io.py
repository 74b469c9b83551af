"""Grid files, pair/mask manifests and PGM export.

Grid file layout (all little-endian)::

    b"RGRD" | version u32 = 1 | dtype u32 (0 = uint8, 1 = float32) | ndim u32
    | dims ndim x u32 | channels u32 | spacing ndim x f32 | payload

The payload is row-major with the channel index varying fastest.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import FormatError

MAGIC = b"RGRD"
VERSION = 1
DTYPES = {0: np.dtype("<u1"), 1: np.dtype("<f4")}
PAIRS_HEADER = "#samreg-pairs v1"
MASKS_HEADER = "#samreg-masks v1"
MASKS_MANIFEST = "masks.tsv"


@dataclass
class GridFile:
    data: np.ndarray  # dims, or dims + (channels,) when channels > 1
    spacing: tuple
    channels: int = 1

    @property
    def dims(self):
        return self.data.shape[:-1] if self.channels > 1 else self.data.shape

    @property
    def dtype_code(self):
        return 0 if self.data.dtype == np.uint8 else 1


def atomic_write(path, payload: bytes):
    """Write bytes via a temp file in the target directory and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_grid(data, spacing=None, channels: int = 1) -> bytes:
    a = np.asarray(data)
    if a.dtype == bool:
        a = a.astype(np.uint8)
    code = 0 if a.dtype == np.uint8 else 1
    a = np.ascontiguousarray(a, dtype=DTYPES[code])
    dims = a.shape[:-1] if channels > 1 else a.shape
    if channels > 1 and a.shape[-1] != channels:
        raise FormatError(f"last axis {a.shape[-1]} != channels {channels}")
    if len(dims) not in (2, 3):
        raise FormatError(f"grid must have 2 or 3 spatial axes, got {len(dims)}")
    spacing = (1.0,) * len(dims) if spacing is None else tuple(float(s) for s in spacing)
    if len(spacing) != len(dims):
        raise FormatError("spacing length must match the number of axes")
    head = MAGIC + struct.pack("<3I", VERSION, code, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims) + struct.pack("<I", channels)
    head += struct.pack(f"<{len(dims)}f", *spacing)
    return head + a.tobytes()


def decode_grid(buf: bytes) -> GridFile:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise FormatError("not a grid file (bad magic)")
    version, code, ndim = struct.unpack_from("<3I", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported grid version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if ndim not in (2, 3):
        raise FormatError(f"ndim must be 2 or 3, got {ndim}")
    off = 16
    need = off + 4 * ndim + 4 + 4 * ndim
    if len(buf) < need:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    (channels,) = struct.unpack_from("<I", buf, off + 4 * ndim)
    spacing = struct.unpack_from(f"<{ndim}f", buf, off + 4 * ndim + 4)
    if channels < 1:
        raise FormatError("channels must be >= 1")
    dt = DTYPES[code]
    size = int(np.prod(dims)) * channels * dt.itemsize
    payload = buf[need:]
    if len(payload) != size:
        raise FormatError(f"payload is {len(payload)} bytes, expected {size}")
    shape = tuple(dims) + ((channels,) if channels > 1 else ())
    data = np.frombuffer(payload, dtype=dt).reshape(shape).copy()
    return GridFile(data, tuple(float(s) for s in spacing), channels)


def write_grid(path, data, spacing=None, channels: int = 1):
    atomic_write(path, encode_grid(data, spacing, channels))


def read_grid(path) -> GridFile:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror or e}") from None
    try:
        return decode_grid(buf)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


def write_field(path, vectors, spacing=None):
    """Store a (ndim, *dims) displacement array as an ndim-channel float grid."""
    v = np.asarray(vectors)
    write_grid(path, np.moveaxis(v, 0, -1).astype(np.float32), spacing, channels=v.shape[0])


def read_field(path):
    """Return ((ndim, *dims) float64 vectors, spacing)."""
    g = read_grid(path)
    ndim = len(g.dims)
    if g.channels != ndim:
        raise FormatError(f"{path}: field needs {ndim} channels, found {g.channels}")
    return np.moveaxis(g.data.astype(np.float64), -1, 0), g.spacing


# -- manifests ---------------------------------------------------------------

@dataclass(frozen=True)
class PairRecord:
    moving_path: str
    fixed_path: str
    moving_slice: int
    fixed_slice: int
    similarity: float


@dataclass
class PairManifest:
    records: List[PairRecord]
    dims: Optional[tuple] = None
    spacing: Optional[tuple] = None
    epsilon: Optional[float] = None


def _rel(path, base_dir):
    return os.path.relpath(os.path.abspath(path), os.path.abspath(base_dir))


def format_pairs(manifest: PairManifest, base_dir) -> str:
    lines = [PAIRS_HEADER]
    if manifest.dims is not None:
        lines.append("#dims\t" + "\t".join(str(int(d)) for d in manifest.dims))
    if manifest.spacing is not None:
        lines.append("#spacing\t" + "\t".join(repr(float(s)) for s in manifest.spacing))
    if manifest.epsilon is not None:
        lines.append(f"#epsilon\t{manifest.epsilon!r}")
    for r in manifest.records:
        lines.append("\t".join([_rel(r.moving_path, base_dir), _rel(r.fixed_path, base_dir),
                                str(int(r.moving_slice)), str(int(r.fixed_slice)), f"{r.similarity:.6f}"]))
    return "\n".join(lines) + "\n"


def write_pairs(path, manifest: PairManifest):
    base = os.path.dirname(os.path.abspath(path))
    atomic_write(path, format_pairs(manifest, base).encode())


def _read_lines(path, header):
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise FormatError(f"cannot read {path}: {e}") from None
    if not lines or lines[0].strip() != header:
        raise FormatError(f"{path}: missing '{header}' header")
    return lines[1:]


def read_pairs(path) -> PairManifest:
    base = os.path.dirname(os.path.abspath(path))
    out = PairManifest([])
    for n, line in enumerate(_read_lines(path, PAIRS_HEADER), start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        try:
            if line.startswith("#"):
                if cols[0] == "#dims":
                    out.dims = tuple(int(c) for c in cols[1:])
                elif cols[0] == "#spacing":
                    out.spacing = tuple(float(c) for c in cols[1:])
                elif cols[0] == "#epsilon":
                    out.epsilon = float(cols[1])
                continue
            if len(cols) != 5:
                raise ValueError(f"expected 5 fields, got {len(cols)}")
            sim = float(cols[4])
            rec = PairRecord(os.path.join(base, cols[0]), os.path.join(base, cols[1]),
                             int(cols[2]), int(cols[3]), sim)
        except (ValueError, IndexError) as e:
            raise FormatError(f"{path}:{n}: {e}") from None
        lo = out.epsilon if out.epsilon is not None else 0.0
        if not lo < sim <= 1.0:
            raise FormatError(f"{path}:{n}: similarity {sim} outside ({lo}, 1]")
        out.records.append(rec)
    return out


@dataclass(frozen=True)
class MaskRecord:
    path: str
    slice_index: int
    index: int


def mask_name(slice_index, k):
    return f"m_{slice_index}_{k}.rgrd"


def write_masks(out_dir, masks_by_slice: Sequence[Sequence[np.ndarray]], spacing=None) -> List[MaskRecord]:
    """One uint8 grid per mask plus a ``masks.tsv`` manifest; the manifest is written last."""
    records = []
    for s, masks in enumerate(masks_by_slice):
        for k, m in enumerate(masks):
            p = os.path.join(out_dir, mask_name(s, k))
            write_grid(p, np.asarray(m, dtype=np.uint8), spacing)
            records.append(MaskRecord(p, s, k))
    lines = [MASKS_HEADER] + [f"{os.path.basename(r.path)}\t{r.slice_index}\t{r.index}" for r in records]
    atomic_write(os.path.join(out_dir, MASKS_MANIFEST), ("\n".join(lines) + "\n").encode())
    return records


def read_masks(path) -> List[MaskRecord]:
    """Read a mask manifest (or a directory holding ``masks.tsv``)."""
    if os.path.isdir(path):
        path = os.path.join(path, MASKS_MANIFEST)
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for n, line in enumerate(_read_lines(path, MASKS_HEADER), start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        try:
            out.append(MaskRecord(os.path.join(base, cols[0]), int(cols[1]), int(cols[2])))
        except (ValueError, IndexError) as e:
            raise FormatError(f"{path}:{n}: {e}") from None
    return out


def load_mask(path) -> np.ndarray:
    return read_grid(path).data > 0


# -- PGM ---------------------------------------------------------------------

def write_pgm(path, image, mask=None):
    """Binary (P5) 8-bit grayscale export; ``mask`` outlines are drawn white."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2:
        raise FormatError("PGM export takes a 2D image")
    lo, hi = a.min(), a.max()
    g = np.zeros(a.shape, np.uint8) if hi == lo else np.round((a - lo) / (hi - lo) * 200).astype(np.uint8)
    if mask is not None:
        from scipy import ndimage
        m = np.asarray(mask, dtype=bool)
        g[m & ~ndimage.binary_erosion(m)] = 255
    head = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode()
    atomic_write(path, head + g.tobytes())
