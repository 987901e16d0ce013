"""File formats: JSON sidecar + raw little-endian float32, and a minimal NIfTI-1 reader.

A volume stored at ``name.json`` keeps its samples in ``name.raw``.  Volumes are
written channel-major with x varying fastest; displacement fields are written
voxel-interleaved, three float32 values ``(dz, dy, dx)`` per voxel.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ._validation import InvalidDataError, NumericError
from .field import DisplacementField, Volume

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "write_json",
    "read_json",
    "raw_path",
    "write_volume",
    "write_field",
    "read_volume",
    "read_field",
    "read_nifti",
    "load_volume",
]

_LE_F32 = np.dtype("<f4")


def _file_mode() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


_FILE_MODE = _file_mode()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        # mkstemp creates 0600 files; give outputs the usual umask-based mode
        os.chmod(tmp, _FILE_MODE)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _check_json_finite(obj, where="$"):
    if isinstance(obj, float) and not np.isfinite(obj):
        raise NumericError(f"non-finite number at {where}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_json_finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_json_finite(v, f"{where}[{i}]")


def write_json(path, obj) -> None:
    """Atomically write ``obj`` as sorted, indented JSON.

    Raises
    ------
    NumericError
        If any number in ``obj`` is NaN or infinite.
    """
    _check_json_finite(obj)
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InvalidDataError(f"cannot parse JSON {path}: {exc}") from exc


def raw_path(sidecar) -> Path:
    return Path(sidecar).with_suffix(".raw")


def _sidecar(kind: str, dims, spacing, channels: int) -> dict:
    return {
        "kind": kind,
        "dims": [int(d) for d in dims],
        "spacing": [float(s) for s in spacing],
        "channels": int(channels),
        "dtype": "f32",
    }


def _to_f32(arr: np.ndarray) -> bytes:
    # values beyond float32 range become inf and are rejected below
    with np.errstate(over="ignore"):
        out = np.ascontiguousarray(arr, dtype=_LE_F32)
    if not np.all(np.isfinite(out)):
        raise NumericError("refusing to write non-finite samples")
    return out.tobytes()


def write_volume(path, vol: Volume) -> None:
    """Write a volume as ``path`` (sidecar) plus the matching ``.raw`` file."""
    atomic_write_bytes(raw_path(path), _to_f32(vol.data))
    write_json(path, _sidecar("volume", vol.dims, vol.spacing, vol.channels))


def write_field(path, ddf: DisplacementField, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a displacement field, voxel-interleaved, as sidecar plus ``.raw``."""
    atomic_write_bytes(raw_path(path), _to_f32(np.moveaxis(ddf.data, 0, -1)))
    write_json(path, _sidecar("ddf", ddf.dims, spacing, 3))


def _parse_sidecar(path) -> tuple[dict, np.ndarray]:
    meta = read_json(path)
    try:
        dims = tuple(int(d) for d in meta["dims"])
        spacing = tuple(float(s) for s in meta.get("spacing", (1.0, 1.0, 1.0)))
        channels = int(meta.get("channels", 1))
        dtype = meta.get("dtype", "f32")
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidDataError(f"malformed sidecar {path}: {exc}") from exc
    if dtype != "f32":
        raise InvalidDataError(f"{path}: unsupported dtype {dtype!r} (only 'f32')")
    if len(dims) != 3 or min(dims) < 1 or len(spacing) != 3 or channels < 1:
        raise InvalidDataError(f"{path}: invalid dims/spacing/channels in sidecar")
    raw = raw_path(path)
    try:
        buf = raw.read_bytes()
    except OSError as exc:
        raise InvalidDataError(f"cannot read {raw}: {exc}") from exc
    n = int(np.prod(dims)) * channels
    if len(buf) != 4 * n:
        raise InvalidDataError(f"{raw}: expected {4 * n} bytes, found {len(buf)}")
    data = np.frombuffer(buf, dtype=_LE_F32).astype(np.float64)
    meta = dict(meta, dims=list(dims), spacing=list(spacing), channels=channels)
    return meta, data


def read_volume(path) -> Volume:
    meta, data = _parse_sidecar(path)
    if meta.get("kind", "volume") == "ddf":
        raise InvalidDataError(f"{path} holds a displacement field, not a volume")
    shape = (meta["channels"],) + tuple(meta["dims"])
    try:
        return Volume(data.reshape(shape), tuple(meta["spacing"]))
    except ValueError as exc:
        raise InvalidDataError(f"{path}: {exc}") from exc


def read_field(path) -> DisplacementField:
    meta, data = _parse_sidecar(path)
    if meta["channels"] != 3:
        raise InvalidDataError(f"{path}: displacement fields need 3 channels")
    arr = np.moveaxis(data.reshape(tuple(meta["dims"]) + (3,)), -1, 0)
    try:
        return DisplacementField(arr)
    except ValueError as exc:
        raise InvalidDataError(f"{path}: {exc}") from exc


# NIfTI-1 datatype codes accepted by the reader
_NIFTI_TYPES = {2: np.dtype("u1"), 16: np.dtype("<f4")}


def read_nifti(path) -> Volume:
    """Read a single-file little-endian NIfTI-1 image (``n+1``) of uint8 or float32.

    A 4-D image with ``dim[4] > 1`` is read as a multi-channel volume.
    """
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise InvalidDataError(f"cannot read {path}: {exc}") from exc
    if len(buf) < 352:
        raise InvalidDataError(f"{path}: too short for a NIfTI-1 header")
    if struct.unpack_from("<i", buf, 0)[0] != 348:
        if struct.unpack_from(">i", buf, 0)[0] == 348:
            raise InvalidDataError(f"{path}: big-endian NIfTI is not supported")
        raise InvalidDataError(f"{path}: not a NIfTI-1 file")
    if buf[344:348] != b"n+1\x00":
        raise InvalidDataError(f"{path}: only single-file NIfTI-1 ('n+1') is supported")
    dim = struct.unpack_from("<8h", buf, 40)
    datatype = struct.unpack_from("<h", buf, 70)[0]
    pixdim = struct.unpack_from("<8f", buf, 76)
    vox_offset = int(struct.unpack_from("<f", buf, 108)[0])
    slope, inter = struct.unpack_from("<2f", buf, 112)
    if datatype not in _NIFTI_TYPES:
        raise InvalidDataError(f"{path}: datatype {datatype} unsupported (uint8 or float32 only)")
    ndim = dim[0]
    if ndim not in (3, 4) or any(d < 1 for d in dim[1:ndim + 1]):
        raise InvalidDataError(f"{path}: need a 3-D or 4-D image, dim={dim}")
    nx, ny, nz = dim[1:4]
    nc = dim[4] if ndim == 4 else 1
    dt = _NIFTI_TYPES[datatype]
    count = nx * ny * nz * nc
    if vox_offset < 352 or len(buf) < vox_offset + count * dt.itemsize:
        raise InvalidDataError(f"{path}: truncated image data")
    data = np.frombuffer(buf, dtype=dt, count=count, offset=vox_offset).astype(np.float64)
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data * (slope if slope != 0.0 else 1.0) + inter
    # x varies fastest on disk, so C order gives (c, z, y, x)
    data = data.reshape(nc, nz, ny, nx)
    spacing = tuple(abs(float(p)) if p else 1.0 for p in (pixdim[3], pixdim[2], pixdim[1]))
    try:
        return Volume(data, spacing)
    except ValueError as exc:
        raise InvalidDataError(f"{path}: {exc}") from exc


def load_volume(path) -> Volume:
    """Dispatch on extension: ``.json`` sidecar or ``.nii`` NIfTI-1."""
    suffix = Path(path).suffix.lower()
    if suffix == ".json":
        return read_volume(path)
    if suffix == ".nii":
        return read_nifti(path)
    raise InvalidDataError(f"{path}: unknown volume format (expected .json or .nii)")
