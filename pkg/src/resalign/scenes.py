"""Synthetic volumes with known motion: Gaussian blob images and two-body scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_dims
from .field import DisplacementField, Volume

__all__ = ["BlobSet", "random_blobs", "render_blobs", "blob_volume", "TwoBodyScene", "two_body_scene"]


@dataclass(frozen=True)
class BlobSet:
    centers: np.ndarray  # (n, 3) voxel coordinates
    sigmas: np.ndarray  # (n,)
    amplitudes: np.ndarray  # (n,)

    def shifted(self, shift) -> "BlobSet":
        return BlobSet(self.centers + np.asarray(shift, dtype=float), self.sigmas, self.amplitudes)


def random_blobs(dims, n_blobs: int = 24, sigma_range=(2.0, 4.0), seed: int = 0) -> BlobSet:
    dims = check_dims(dims)
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 1, size=(n_blobs, 3)) * (np.array(dims) - 1)
    sigmas = rng.uniform(*sigma_range, size=n_blobs)
    amps = rng.uniform(0.5, 1.0, size=n_blobs) * rng.choice([-1.0, 1.0], size=n_blobs)
    return BlobSet(centers, sigmas, amps)


def render_blobs(dims, blobs: BlobSet, spacing=(1.0, 1.0, 1.0)) -> Volume:
    dims = check_dims(dims)
    grid = np.indices(dims, dtype=np.float64)
    out = np.zeros(dims)
    for c, s, a in zip(blobs.centers, blobs.sigmas, blobs.amplitudes):
        r2 = sum((grid[i] - c[i]) ** 2 for i in range(3))
        out += a * np.exp(-r2 / (2 * s * s))
    return Volume(out, spacing)


def blob_volume(dims, n_blobs: int = 24, sigma_range=(2.0, 4.0), seed: int = 0) -> Volume:
    """Smooth random texture made of signed Gaussian blobs."""
    return render_blobs(dims, random_blobs(dims, n_blobs, sigma_range, seed))


@dataclass(frozen=True, eq=False)
class TwoBodyScene:
    src: Volume
    tgt: Volume
    truth: DisplacementField  # ground truth on the target grid
    src_labels: np.ndarray
    tgt_labels: np.ndarray


def _ball(dims, center, radius) -> np.ndarray:
    grid = np.indices(dims, dtype=np.float64)
    return sum((grid[i] - center[i]) ** 2 for i in range(3)) <= radius ** 2


def two_body_scene(
    dims=(32, 32, 32),
    gap: float = 6.0,
    motion: float = 3.0,
    sigma: float = 1.5,
    label_radius: float = 2.0,
    offset=(0.0, 0.0, 0.0),
) -> TwoBodyScene:
    """Two blobs ``gap`` voxels apart along x moving by ``+motion`` and ``-motion``.

    The blob moving in +x sits on the right so the bodies separate.  Blob
    centres refer to the source image; labels 1 and 2 mark the bodies.
    """
    dims = check_dims(dims)
    mid = (np.array(dims, dtype=float) - 1) / 2 + np.asarray(offset, dtype=float)
    half = np.array([0.0, 0.0, gap / 2])
    move = np.array([0.0, 0.0, motion])
    src_centers = [mid - half, mid + half]
    tgt_centers = [mid - half - move, mid + half + move]
    src = render_blobs(dims, BlobSet(np.array(src_centers), sigma * np.ones(2), np.ones(2)))
    tgt = render_blobs(dims, BlobSet(np.array(tgt_centers), sigma * np.ones(2), np.ones(2)))
    src_lab = np.zeros(dims, dtype=np.int64)
    tgt_lab = np.zeros(dims, dtype=np.int64)
    truth = np.zeros((3,) + dims)
    for label, (cs, ct, sign) in enumerate(zip(src_centers, tgt_centers, (-1.0, 1.0)), start=1):
        src_lab[_ball(dims, cs, label_radius)] = label
        region = _ball(dims, ct, label_radius)
        tgt_lab[region] = label
        truth[2][region] = -sign * motion
    return TwoBodyScene(src, tgt, DisplacementField(truth), src_lab, tgt_lab)
