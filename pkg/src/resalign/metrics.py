"""Segmentation overlap and surface metrics, folding counts and motion-pair densities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import UndefinedMetricError, check_label_volume, check_spacing
from .field import DisplacementField, jacobian_det, sample

__all__ = [
    "dice",
    "surface_voxels",
    "surface_distances",
    "hausdorff",
    "asd",
    "neg_jacobian_count",
    "warp_labels",
    "MotionPairPDF",
    "motion_pair_pdf",
    "region_mass",
]

_SIX = ndimage.generate_binary_structure(3, 1)


def _masks(a, b, label):
    a = check_label_volume(a, "a")
    b = check_label_volume(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a == label, b == label


def dice(a, b, label: int = 1) -> float:
    """Dice overlap of one label; 1 when both sets are empty, 0 when exactly one is."""
    ma, mb = _masks(a, b, label)
    na, nb = int(ma.sum()), int(mb.sum())
    if na == 0 and nb == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(ma & mb)) / (na + nb)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one 6-neighbour outside the mask (outside the grid counts)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, _SIX, border_value=0)


def _euclid(d: np.ndarray, spacing) -> np.ndarray:
    # one fixed evaluation order for both code paths so results agree bit for bit
    s = np.asarray(spacing, dtype=np.float64)
    return np.sqrt(((d * s) ** 2).sum(axis=-1))


def _directed(src_pts: np.ndarray, dst_surface: np.ndarray, spacing, method: str) -> np.ndarray:
    if method == "edt":
        _, idx = ndimage.distance_transform_edt(~dst_surface, sampling=spacing, return_indices=True)
        nearest = idx[(slice(None),) + tuple(src_pts.T)].T
        return _euclid((src_pts - nearest).astype(np.float64), spacing)
    if method == "brute":
        dst_pts = np.argwhere(dst_surface)
        s = np.asarray(spacing, dtype=np.float64)
        out = np.empty(len(src_pts))
        for i0 in range(0, len(src_pts), 512):
            chunk = src_pts[i0:i0 + 512]
            diff = (chunk[:, None, :] - dst_pts[None, :, :]).astype(np.float64)
            out[i0:i0 + 512] = _euclid(diff, s).min(axis=1)
        return out
    raise ValueError(f"method must be 'edt' or 'brute', got {method!r}")


def surface_distances(a, b, label: int = 1, spacing=(1.0, 1.0, 1.0), method: str = "edt"):
    """Directed surface distances ``(A -> B, B -> A)`` in mm.

    Raises
    ------
    UndefinedMetricError
        If either mask is empty.
    """
    spacing = check_spacing(spacing)
    ma, mb = _masks(a, b, label)
    if not ma.any() or not mb.any():
        raise UndefinedMetricError(f"label {label}: surface distance undefined for an empty mask")
    sa, sb = surface_voxels(ma), surface_voxels(mb)
    return (
        _directed(np.argwhere(sa), sb, spacing, method),
        _directed(np.argwhere(sb), sa, spacing, method),
    )


def hausdorff(a, b, label: int = 1, spacing=(1.0, 1.0, 1.0), method: str = "edt", percentile=None) -> float:
    """Symmetric Hausdorff distance in mm (exact maximum unless ``percentile`` is given)."""
    dab, dba = surface_distances(a, b, label, spacing, method)
    if percentile is None:
        return float(max(dab.max(), dba.max()))
    if not 0 <= percentile <= 100:
        raise ValueError(f"percentile must lie in [0, 100], got {percentile}")
    return float(max(np.percentile(dab, percentile), np.percentile(dba, percentile)))


def asd(a, b, label: int = 1, spacing=(1.0, 1.0, 1.0), method: str = "edt") -> float:
    """Average surface distance: mean of the two directed mean distances, in mm."""
    dab, dba = surface_distances(a, b, label, spacing, method)
    return float((dab.mean() + dba.mean()) / 2.0)


def neg_jacobian_count(ddf: DisplacementField, tissue_mask=None) -> int:
    """Number of interior tissue voxels whose Jacobian determinant is negative."""
    det = jacobian_det(ddf).array
    inside = np.zeros(ddf.dims, dtype=bool)
    inside[1:-1, 1:-1, 1:-1] = True
    if tissue_mask is not None:
        mask = np.asarray(getattr(tissue_mask, "array", tissue_mask))
        if mask.shape != ddf.dims:
            raise ValueError(f"dimension mismatch: mask {mask.shape} vs field {ddf.dims}")
        inside &= mask.astype(bool)
    return int(np.count_nonzero((det < 0) & inside))


def warp_labels(labels, ddf: DisplacementField) -> np.ndarray:
    """Pull a label volume through ``ddf`` with nearest-neighbour sampling."""
    lab = check_label_volume(labels)
    if lab.shape != ddf.dims:
        raise ValueError(f"dimension mismatch: labels {lab.shape} vs field {ddf.dims}")
    coords = np.indices(ddf.dims, dtype=np.float64) + ddf.data
    return np.rint(sample(lab.astype(np.float64), coords, order=0)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class MotionPairPDF:
    """Joint density of voxel distance and displacement difference over correctly mapped pairs.

    ``density[i, j]`` covers distance bin ``i`` and difference bin ``j``.
    """

    density: np.ndarray  # smoothed, sums to 1 unless empty
    raw: np.ndarray  # unsmoothed, sums to 1 unless empty
    distance_edges: np.ndarray
    difference_edges: np.ndarray
    n_correct: int
    n_pairs: int
    exact: bool
    empty: bool

    def rows(self) -> list[tuple[float, float, float, float]]:
        dc = (self.distance_edges[:-1] + self.distance_edges[1:]) / 2
        fc = (self.difference_edges[:-1] + self.difference_edges[1:]) / 2
        return [
            (float(dc[i]), float(fc[j]), float(self.density[i, j]), float(self.raw[i, j]))
            for i in range(len(dc))
            for j in range(len(fc))
        ]


def _pair_chunks(n: int, exact: bool, max_pairs: int, rng, chunk: int = 1 << 18):
    if exact:
        # unordered pairs i < j, enumerated row by row
        i_buf, j_buf, size = [], [], 0
        for i in range(n - 1):
            j = np.arange(i + 1, n)
            i_buf.append(np.full(len(j), i))
            j_buf.append(j)
            size += len(j)
            if size >= chunk:
                yield np.concatenate(i_buf), np.concatenate(j_buf)
                i_buf, j_buf, size = [], [], 0
        if size:
            yield np.concatenate(i_buf), np.concatenate(j_buf)
        return
    i = rng.integers(0, n, size=max_pairs)
    j = rng.integers(0, n - 1, size=max_pairs)
    j = np.where(j >= i, j + 1, j)
    for s in range(0, max_pairs, chunk):
        yield i[s:s + chunk], j[s:s + chunk]


def motion_pair_pdf(
    ddf: DisplacementField,
    src_labels,
    tgt_labels,
    bins: int = 16,
    sigma: float = 1.0,
    distance_range: float | None = None,
    difference_range: float | None = None,
    exact_limit: int = 10_000,
    max_pairs: int = 1_000_000,
    seed: int = 0,
) -> MotionPairPDF:
    """Density of ``(||x - y||_inf, ||phi[x] - phi[y]||_inf)`` over correctly mapped voxel pairs.

    A voxel is correct when its target label is non-zero and equals the source
    label pulled through ``ddf``.  All unordered pairs are used when at most
    ``exact_limit`` voxels are correct, otherwise ``max_pairs`` pairs are
    drawn with a seeded generator.  Values beyond a range fall in the last bin.

    Parameters
    ----------
    distance_range, difference_range : float, optional
        Upper histogram edges; default to the largest grid extent and half of it.
    """
    src = check_label_volume(src_labels, "src_labels")
    tgt = check_label_volume(tgt_labels, "tgt_labels")
    if src.shape != tgt.shape or tgt.shape != ddf.dims:
        raise ValueError(f"dimension mismatch: {src.shape}, {tgt.shape}, field {ddf.dims}")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    dmax = float(distance_range if distance_range is not None else max(ddf.dims))
    fmax = float(difference_range if difference_range is not None else max(ddf.dims) / 2)
    if dmax <= 0 or fmax <= 0:
        raise ValueError("histogram ranges must be > 0")
    d_edges = np.linspace(0.0, dmax, bins + 1)
    f_edges = np.linspace(0.0, fmax, bins + 1)

    correct = (tgt != 0) & (warp_labels(src, ddf) == tgt)
    pts = np.argwhere(correct)
    n = len(pts)
    counts = np.zeros((bins, bins), dtype=np.int64)
    exact = n <= exact_limit
    n_pairs = 0
    if n >= 2:
        vec = ddf.data[(slice(None),) + tuple(pts.T)].T
        rng = np.random.default_rng(seed)
        for i, j in _pair_chunks(n, exact, max_pairs, rng):
            dist = np.abs(pts[i] - pts[j]).max(axis=1).astype(np.float64)
            diff = np.abs(vec[i] - vec[j]).max(axis=1)
            bi = np.minimum((dist / dmax * bins).astype(np.int64), bins - 1)
            bj = np.minimum((diff / fmax * bins).astype(np.int64), bins - 1)
            counts += np.bincount(bi * bins + bj, minlength=bins * bins).reshape(bins, bins)
            n_pairs += len(i)
    if n_pairs == 0:
        zero = np.zeros((bins, bins))
        return MotionPairPDF(zero, zero.copy(), d_edges, f_edges, n, 0, exact, True)
    raw = counts / counts.sum()
    dens = ndimage.gaussian_filter(raw, sigma, mode="reflect") if sigma > 0 else raw.copy()
    dens = dens / dens.sum()
    return MotionPairPDF(dens, raw, d_edges, f_edges, n, n_pairs, exact, False)


def region_mass(density: np.ndarray, distance_edges, difference_edges, max_distance: float, min_difference: float) -> float:
    """Total of ``density`` over bins lying below ``max_distance`` and above ``min_difference``."""
    dc = (np.asarray(distance_edges)[:-1] + np.asarray(distance_edges)[1:]) / 2
    fc = (np.asarray(difference_edges)[:-1] + np.asarray(difference_edges)[1:]) / 2
    sel = (dc < max_distance)[:, None] & (fc >= min_difference)[None, :]
    return float(np.asarray(density)[sel].sum())
