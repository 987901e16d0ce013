"""Per-level residual motion estimation by dilated block matching.

For every target voxel the regressor scores a lattice of integer candidate
displacements with local normalised cross-correlation and keeps the ``m`` best
as a multi-head proposal.  The candidate lattice has radius ``||r_k||_1`` and
step ``min(r_k)`` at the level's working resolution, so the reachable motion is
exactly the receptive-field geometry of a stack of dilated 3-tap convolutions.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .analysis import ArchitectureConfig
from .field import Volume, _gradient3, resample_volume

__all__ = [
    "FeatureLevel",
    "MultiHeadProposal",
    "build_feature_levels",
    "candidate_offsets",
    "local_ncc",
    "regress_residual",
]

# scores are rounded to this many decimals so that near-equal candidates are
# resolved by the deterministic tie-break rather than by rounding noise
SCORE_DECIMALS = 9


@dataclass(frozen=True, eq=False)
class FeatureLevel:
    volume: Volume
    level_index: int
    pool_size: int

    @property
    def dims(self):
        return self.volume.dims


@dataclass(frozen=True, eq=False)
class MultiHeadProposal:
    """Top-``m`` residual candidates per voxel.

    Attributes
    ----------
    residuals : ndarray, shape (m, 3, T, H, W)
        Candidate displacements in working-resolution voxels.
    scores : ndarray, shape (m, T, H, W)
        Match quality of each head, sorted descending along axis 0.
    heads_clamped : bool
        True when fewer candidates existed than requested heads.
    """

    residuals: np.ndarray
    scores: np.ndarray
    heads_clamped: bool = False

    @property
    def heads(self) -> int:
        return self.scores.shape[0]

    @property
    def dims(self):
        return tuple(self.scores.shape[1:])


def _working_dims(dims, pool: int) -> tuple[int, int, int]:
    return tuple(int(math.ceil(d / pool)) for d in dims)


def build_feature_levels(
    vol: Volume,
    cfg: ArchitectureConfig,
    sigma_scale: float = 0.5,
    dilated_context: bool = False,
) -> list[FeatureLevel]:
    """Smoothed, pooled intensity plus gradient-magnitude channels for every level.

    The smoothing width is ``sigma_scale * p_k`` original voxels.  With
    ``dilated_context`` it is additionally multiplied by the level's search
    step, so a full-resolution level with a dilated search sees the same
    context as the pyramid level it replaces.
    """
    levels = []
    for k, lv in enumerate(cfg.levels, start=1):
        sigma = sigma_scale * lv.pool_size * (lv.search_step if dilated_context else 1)
        smooth = np.stack([
            ndimage.gaussian_filter(ch, sigma, mode="nearest") if sigma > 0 else ch
            for ch in vol.data
        ])
        pooled = resample_volume(vol.with_data(smooth), _working_dims(vol.dims, lv.pool_size))
        gmag = [np.sqrt(np.sum(_gradient3(ch) ** 2, axis=0)) for ch in pooled.data]
        feats = np.concatenate([pooled.data, np.stack(gmag)])
        levels.append(FeatureLevel(Volume(feats, pooled.spacing), k, lv.pool_size))
    return levels


def candidate_offsets(radius: int, step: int = 1) -> np.ndarray:
    """Integer displacements on the dilated lattice, in tie-break order.

    Sorted by Chebyshev norm, then lexicographically by ``(dz, dy, dx)``.
    """
    if radius < 0 or step < 1:
        raise ValueError(f"need radius >= 0 and step >= 1, got {radius}, {step}")
    n = radius // step
    axis = np.arange(-n, n + 1) * step
    offs = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
    key = np.abs(offs).max(axis=1)
    order = np.lexsort((offs[:, 2], offs[:, 1], offs[:, 0], key))
    return offs[order]


def _box_weights(size: int, dilation: int = 1) -> np.ndarray:
    w = np.zeros((size - 1) * dilation + 1)
    w[::dilation] = 1.0 / size
    return w


def _box_mean(a: np.ndarray, size: int, dilation: int = 1) -> np.ndarray:
    w = _box_weights(size, dilation)
    for ax in range(3):
        a = ndimage.correlate1d(a, w, axis=ax, mode="nearest")
    return a


def _variance_floor(mean_sq: np.ndarray) -> np.ndarray:
    return 1e-10 * mean_sq


def _ncc(mt, vt, flat_t, ms, vs, flat_s, mts):
    prod = vt * vs
    # the product can underflow to 0 for far-tail windows that passed the relative floor
    flat = flat_t | flat_s | (prod <= 0)
    r = (mts - mt * ms) / np.sqrt(np.where(flat, 1.0, prod))
    return np.clip(np.where(flat, 0.0, r), -1.0, 1.0)


def local_ncc(a: np.ndarray, b: np.ndarray, patch: int = 5) -> np.ndarray:
    """Voxel-wise NCC of two 3-D arrays over ``patch**3`` windows (clamped at borders).

    Windows where either input has (numerically) zero variance score 0.
    """
    ma, mb = _box_mean(a, patch), _box_mean(b, patch)
    ma2, mb2 = _box_mean(a * a, patch), _box_mean(b * b, patch)
    va, vb = ma2 - ma * ma, mb2 - mb * mb
    return _ncc(ma, va, va <= _variance_floor(ma2), mb, vb, vb <= _variance_floor(mb2),
                _box_mean(a * b, patch))


class _ChannelStats:
    """Padded arrays and window statistics for one feature channel."""

    def __init__(self, tgt: np.ndarray, src: np.ndarray, radius: int, patch: int, dilation: int = 1):
        h = (patch // 2) * dilation
        self.h, self.radius, self.patch, self.dilation = h, radius, patch, dilation
        self.tp = np.pad(tgt, h, mode="edge")
        self.sp = np.pad(src, h + radius, mode="edge")
        n = tgt.shape
        crop_t = tuple(slice(h, h + d) for d in n)
        mt = _box_mean(self.tp, patch, dilation)
        mt2 = _box_mean(self.tp * self.tp, patch, dilation)
        self.mt = mt[crop_t]
        self.vt = (mt2 - mt * mt)[crop_t]
        self.flat_t = self.vt <= _variance_floor(mt2[crop_t])
        ms = _box_mean(self.sp, patch, dilation)
        ms2 = _box_mean(self.sp * self.sp, patch, dilation)
        self.ms, self.ms2 = ms, ms2

    def score(self, delta, z0: int, z1: int) -> np.ndarray:
        h, R = self.h, self.radius
        dz, dy, dx = (int(d) for d in delta)
        _, H, W = self.mt.shape
        # rows [z0, z1 + 2h) of the padded target cover the windows of output rows [z0, z1)
        t_slab = self.tp[z0:z1 + 2 * h]
        s_slab = self.sp[
            R + dz + z0:R + dz + z1 + 2 * h,
            R + dy:R + dy + H + 2 * h,
            R + dx:R + dx + W + 2 * h,
        ]
        mts = _box_mean(t_slab * s_slab, self.patch, self.dilation)[h:h + (z1 - z0), h:h + H, h:h + W]
        sl = (
            slice(R + dz + h + z0, R + dz + h + z1),
            slice(R + dy + h, R + dy + h + H),
            slice(R + dx + h, R + dx + h + W),
        )
        ms, ms2 = self.ms[sl], self.ms2[sl]
        vs = ms2 - ms * ms
        zs = slice(z0, z1)
        return _ncc(self.mt[zs], self.vt[zs], self.flat_t[zs], ms, vs, vs <= _variance_floor(ms2), mts)


def _top_m_slab(stats, offsets, m, z0, z1, keep_all=False):
    _, H, W = stats[0].mt.shape
    shape = (z1 - z0, H, W)
    best_s = np.full((m,) + shape, -np.inf)
    best_i = np.zeros((m,) + shape, dtype=np.int64)
    all_s = np.empty((len(offsets),) + shape) if keep_all else None
    for ci, delta in enumerate(offsets):
        s = np.mean([st.score(delta, z0, z1) for st in stats], axis=0)
        s = np.round(s, SCORE_DECIMALS)
        if keep_all:
            all_s[ci] = s
        idx = np.full(shape, ci, dtype=np.int64)
        # insertion into the sorted head list; strict '>' keeps earlier candidates on ties
        for h in range(m):
            better = s > best_s[h]
            s_old, i_old = best_s[h].copy(), best_i[h].copy()
            best_s[h] = np.where(better, s, best_s[h])
            best_i[h] = np.where(better, idx, best_i[h])
            s = np.where(better, s_old, s)
            idx = np.where(better, i_old, idx)
    return best_s, best_i, all_s


def _neighbour_index(offsets: np.ndarray, step: int) -> np.ndarray:
    """``nb[c, axis, side]``: index of ``offsets[c] -/+ step`` along ``axis``, or -1."""
    lookup = {tuple(o): i for i, o in enumerate(offsets.tolist())}
    nb = np.full((len(offsets), 3, 2), -1, dtype=np.int64)
    for i, o in enumerate(offsets.tolist()):
        for ax in range(3):
            for side, sign in enumerate((-1, 1)):
                q = list(o)
                q[ax] += sign * step
                nb[i, ax, side] = lookup.get(tuple(q), -1)
    return nb


def _subvoxel(offsets, step, best_i, all_s, radius):
    """Parabolic peak interpolation of each head along each axis of the lattice.

    The shift is ``step * (s- - s+) / (2 (s- - 2 s0 + s+))``, kept within half a
    lattice step and within ``radius``; axes without a strict peak, with a
    missing neighbour or with a perfect score keep the lattice value.
    """
    nb = _neighbour_index(offsets, step)
    res = offsets[best_i].astype(np.float64)  # (m, ..., 3)
    s0 = np.take_along_axis(all_s, best_i, axis=0)
    for ax in range(3):
        im, ip = nb[best_i, ax, 0], nb[best_i, ax, 1]
        ok = (im >= 0) & (ip >= 0)
        sm = np.take_along_axis(all_s, np.where(ok, im, 0), axis=0)
        sp = np.take_along_axis(all_s, np.where(ok, ip, 0), axis=0)
        curv = sm - 2.0 * s0 + sp
        # a perfect correlation is already the peak
        ok &= (curv < 0) & (s0 >= sm) & (s0 >= sp) & (s0 < 1.0)
        shift = np.where(ok, 0.5 * (sm - sp) / np.where(ok, curv, -1.0), 0.0)
        res[..., ax] = np.clip(res[..., ax] + step * np.clip(shift, -0.5, 0.5), -radius, radius)
    return res


def _as_volume(feat) -> Volume:
    return feat.volume if isinstance(feat, FeatureLevel) else feat


def regress_residual(
    src_feat,
    tgt_feat,
    heads: int = 2,
    radius: int = 1,
    step: int = 1,
    patch: int = 5,
    n_jobs: int = 1,
    patch_dilation: int = 1,
    subvoxel: bool = False,
) -> MultiHeadProposal:
    """Multi-head residual displacement between warped source and target features.

    Parameters
    ----------
    src_feat, tgt_feat : FeatureLevel or Volume
        Source features (already warped by the coarser field) and target features.
    heads : int
        Number of candidates kept per voxel.
    radius, step : int
        Chebyshev radius and lattice step of the search, in working voxels.
    patch : int
        Number of taps per axis of the cubic NCC window.
    patch_dilation : int
        Spacing of the window taps (1 gives a dense ``patch**3`` window).
    subvoxel : bool
        Refine every head by parabolic interpolation of the scores of its
        lattice neighbours, giving fractional residuals.
    n_jobs : int
        Worker threads over z-slabs.  The result does not depend on this value.

    Returns
    -------
    MultiHeadProposal
        ``residuals[h, :, x]`` satisfies ``src(x + residual) ~ tgt(x)``.
    """
    src, tgt = _as_volume(src_feat), _as_volume(tgt_feat)
    if src.dims != tgt.dims or src.channels != tgt.channels:
        raise ValueError(f"feature mismatch: {src.data.shape} vs {tgt.data.shape}")
    if heads < 1:
        raise ValueError(f"heads must be >= 1, got {heads}")
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch must be a positive odd integer, got {patch}")
    offsets = candidate_offsets(radius, step)
    reach = int(offsets.max()) if len(offsets) else 0
    m = min(heads, len(offsets))
    if patch_dilation < 1:
        raise ValueError(f"patch_dilation must be >= 1, got {patch_dilation}")
    stats = [_ChannelStats(t, s, reach, patch, patch_dilation) for t, s in zip(tgt.data, src.data)]

    T = tgt.dims[0]
    n_jobs = max(1, min(int(n_jobs), T))
    bounds = np.linspace(0, T, n_jobs + 1).astype(int)
    slabs = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    def run(zb):
        best_s, best_i, all_s = _top_m_slab(stats, offsets, m, *zb, keep_all=subvoxel)
        if subvoxel:
            return best_s, _subvoxel(offsets, step, best_i, all_s, radius)
        return best_s, offsets[best_i].astype(np.float64)

    if len(slabs) == 1:
        parts = [run(slabs[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(slabs)) as pool:
            parts = list(pool.map(run, slabs))
    scores = np.concatenate([p[0] for p in parts], axis=1)
    residuals = np.moveaxis(np.concatenate([p[1] for p in parts], axis=1), -1, 1)
    return MultiHeadProposal(residuals, scores, heads_clamped=m < heads)
