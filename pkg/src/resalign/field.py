"""Dense displacement field algebra on 3-D voxel grids.

Volumes are stored channel-first as ``(c, T, H, W)`` arrays (z slowest, x
fastest).  Displacement fields are stored component-first as ``(3, T, H, W)``
with components ``(dz, dy, dx)`` in voxel units.  A field ``phi`` pulls
samples: ``warp(v, phi)[x] = v(x + phi[x])``.

All sampling is trilinear with clamp-to-edge coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_dims, check_finite, check_same_dims, check_spacing

__all__ = [
    "Volume",
    "DisplacementField",
    "identity_field",
    "warp",
    "compose",
    "resample_field",
    "resample_volume",
    "gradient",
    "jacobian_det",
    "sample",
]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, order="C")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar or multi-channel 3-D raster.

    Parameters
    ----------
    data : array_like
        Either ``(T, H, W)`` (single channel) or ``(c, T, H, W)``.
    spacing : tuple of float
        Physical voxel size ``(sz, sy, sx)`` in mm.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[np.newaxis]
        if data.ndim != 4 or data.shape[0] < 1:
            raise ValueError(f"volume data must be (T,H,W) or (c,T,H,W), got {data.shape}")
        check_dims(data.shape[1:])
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def array(self) -> np.ndarray:
        """First channel as a ``(T, H, W)`` view."""
        return self.data[0]

    def with_data(self, data) -> "Volume":
        return Volume(data, self.spacing)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-voxel displacement vectors ``(dz, dy, dx)`` in voxel units, shape ``(3, T, H, W)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[0] != 3:
            raise ValueError(f"displacement data must be (3,T,H,W), got {data.shape}")
        check_dims(data.shape[1:])
        check_finite(data, "displacement field")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.data)))


def identity_field(dims) -> DisplacementField:
    """Zero displacement field on a grid of ``dims`` voxels."""
    dims = check_dims(dims)
    return DisplacementField(np.zeros((3,) + dims))


def _grid(dims) -> np.ndarray:
    return np.indices(dims, dtype=np.float64)


def sample(arr: np.ndarray, coords: np.ndarray, order: int = 1) -> np.ndarray:
    """Sample a 3-D array at fractional ``coords`` (shape ``(3, ...)``) with clamp-to-edge."""
    return ndimage.map_coordinates(arr, coords, order=order, mode="nearest", prefilter=False)


def warp(vol: Volume, ddf: DisplacementField, order: int = 1) -> Volume:
    """Resample ``vol`` at ``x + ddf[x]`` for every voxel ``x``.

    ``order=0`` gives nearest-neighbour sampling (used for label maps).
    """
    check_same_dims(vol, ddf, "volume and displacement field")
    if not np.any(ddf.data):
        return vol.with_data(vol.data)
    coords = _grid(vol.dims) + ddf.data
    out = np.stack([sample(ch, coords, order) for ch in vol.data])
    return vol.with_data(out)


def compose(outer: DisplacementField, inner: DisplacementField, order: int = 1) -> DisplacementField:
    """Displacement of the map ``x -> y + outer(y)`` with ``y = x + inner(x)``.

    ``warp(v, compose(a, b))`` approximates ``warp(warp(v, a), b)``: the outer
    (coarse) field is applied to the source first and the inner (residual)
    field is estimated on the target grid.
    """
    check_same_dims(outer, inner, "composed fields")
    if not np.any(outer.data):
        return DisplacementField(inner.data)
    coords = _grid(inner.dims) + inner.data
    pulled = np.stack([sample(c, coords, order) for c in outer.data])
    return DisplacementField(inner.data + pulled)


def _center_aligned_coords(old_dims, new_dims) -> np.ndarray:
    axes = [
        (np.arange(m, dtype=np.float64) + 0.5) * (n / m) - 0.5
        for n, m in zip(old_dims, new_dims)
    ]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def resample_volume(vol: Volume, new_dims, order: int = 1) -> Volume:
    """Resample every channel onto a grid of ``new_dims`` with voxel-centre alignment."""
    new_dims = check_dims(new_dims)
    if new_dims == vol.dims:
        return vol.with_data(vol.data)
    coords = _center_aligned_coords(vol.dims, new_dims)
    spacing = tuple(s * n / m for s, n, m in zip(vol.spacing, vol.dims, new_dims))
    return Volume(np.stack([sample(ch, coords, order) for ch in vol.data]), spacing)


def resample_field(ddf: DisplacementField, new_dims, order: int = 1) -> DisplacementField:
    """Move a field to another grid resolution.

    Each component is resampled with voxel-centre alignment and rescaled by
    ``new_dim / old_dim`` along its own axis so it stays in voxel units.
    ``order=0`` uses nearest-neighbour resampling.
    """
    new_dims = check_dims(new_dims)
    if new_dims == ddf.dims:
        return DisplacementField(ddf.data)
    coords = _center_aligned_coords(ddf.dims, new_dims)
    out = np.stack([
        sample(c, coords, order) * (m / n)
        for c, n, m in zip(ddf.data, ddf.dims, new_dims)
    ])
    return DisplacementField(out)


def _gradient3(arr: np.ndarray) -> np.ndarray:
    # size-1 axes get a zero derivative; public callers enforce size >= 2
    out = np.zeros((3,) + arr.shape)
    for ax in range(3):
        if arr.shape[ax] >= 2:
            out[ax] = np.gradient(arr, axis=ax, edge_order=1)
    return out


def gradient(vol: Volume) -> Volume:
    """Per-channel spatial derivatives in intensity per voxel.

    Central differences in the interior, one-sided at the borders.  The output
    has ``3 * c`` channels ordered ``(d/dz, d/dy, d/dx)`` for each input channel.
    """
    if min(vol.dims) < 2:
        raise ValueError(f"gradient needs every dim >= 2, got {vol.dims}")
    return vol.with_data(np.concatenate([_gradient3(ch) for ch in vol.data]))


def _det3(m) -> np.ndarray:
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


def jacobian_det(ddf: DisplacementField) -> Volume:
    """Determinant of ``I + d(phi)/dx`` at every voxel (1 for the identity field)."""
    if min(ddf.dims) < 2:
        raise ValueError(f"jacobian_det needs every dim >= 2, got {ddf.dims}")
    grads = [_gradient3(c) for c in ddf.data]
    jac = [[grads[i][j] + (1.0 if i == j else 0.0) for j in range(3)] for i in range(3)]
    return Volume(_det3(jac))
