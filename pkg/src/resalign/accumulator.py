"""Confidence-weighted multi-head fusion of a residual proposal with the coarser field.

The fixed kernels used here stand in for trained fusion networks:

* attributes: Fisher z-transform of the NCC scores,
* confidence: logistic map of the per-voxel best attribute,
* multi-head mask: softmax over head attributes,
* interpolation: normalised convolution weighted by confidence,
* attribute fusion: per-head ``max(new, decay * previous)``,
* field fusion: composition, coarse field first.

Attribute fields are plain ``(m, T, H, W)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import expit, softmax

from .field import DisplacementField, compose
from .regressor import MultiHeadProposal

__all__ = [
    "AccumulatorParams",
    "confidence_weights",
    "multi_head_masks",
    "interpolate_weighted",
    "accumulate",
    "score_attributes",
]


@dataclass(frozen=True)
class AccumulatorParams:
    mu: float = 0.5
    tau: float = 0.1
    temperature: float = 0.1
    sigma: float = 1.0
    decay: float = 0.9
    eps: float = 1e-8
    # smoothed weight below which normalised convolution falls back to plain smoothing
    min_weight: float = 1e-6
    # map NCC scores to attributes with arctanh so an exact match dominates near-ties
    fisher: bool = True

    def __post_init__(self):
        if self.tau <= 0 or self.temperature <= 0:
            raise ValueError("tau and temperature must be > 0")
        if self.sigma < 0 or self.decay < 0:
            raise ValueError("sigma and decay must be >= 0")


def _attr(attr) -> np.ndarray:
    a = np.asarray(attr, dtype=np.float64)
    if a.ndim == 3:
        a = a[np.newaxis]
    if a.ndim != 4:
        raise ValueError(f"attribute field must be (m,T,H,W), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("attribute field must be finite")
    return a


def confidence_weights(attr, mu: float = 0.5, tau: float = 0.1) -> np.ndarray:
    """Logistic confidence in (0, 1) of the best head attribute at each voxel."""
    return expit((_attr(attr).max(axis=0) - mu) / tau)


def multi_head_masks(attr, temperature: float = 0.1) -> np.ndarray:
    """Softmax over heads; the masks sum to 1 at every voxel."""
    return softmax(_attr(attr) / temperature, axis=0)


def _smooth(a: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(a, sigma, mode="nearest")


def interpolate_weighted(
    field: DisplacementField,
    weights,
    sigma: float = 1.0,
    eps: float = 1e-8,
    min_weight: float = 1e-6,
) -> DisplacementField:
    """Normalised convolution of each field component with non-negative voxel weights.

    Where the smoothed weight is below ``min_weight`` the output falls back to
    unweighted smoothing.  ``sigma == 0`` returns the field unchanged.
    """
    w = np.asarray(getattr(weights, "data", weights), dtype=np.float64)
    if w.ndim == 4 and w.shape[0] == 1:
        w = w[0]
    if w.shape != field.dims:
        raise ValueError(f"dimension mismatch: weights {w.shape} vs field {field.dims}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if sigma == 0:
        return DisplacementField(field.data)
    den = _smooth(w, sigma)
    low = den < min_weight
    out = np.empty_like(field.data)
    for i, comp in enumerate(field.data):
        weighted = _smooth(comp * w, sigma) / (den + eps)
        out[i] = np.where(low, _smooth(comp, sigma), weighted) if low.any() else weighted
    return DisplacementField(out)


# arctanh(1 - 1e-6) ~ 7.25 caps the attribute of a perfect match
_FISHER_CLIP = 1.0 - 1e-6


def score_attributes(scores, fisher: bool = True) -> np.ndarray:
    """Incremental attributes of a proposal: Fisher z of the NCC scores, or the scores as is."""
    s = np.asarray(scores, dtype=np.float64)
    return np.arctanh(np.clip(s, -_FISHER_CLIP, _FISHER_CLIP)) if fisher else s


def _match_heads(prev: np.ndarray, m: int) -> np.ndarray:
    if prev.shape[0] == m:
        return prev
    if prev.shape[0] > m:
        return prev[:m]
    pad = np.zeros((m - prev.shape[0],) + prev.shape[1:])
    return np.concatenate([prev, pad])


def _fuse(prev_ddf, prev_attr, proposal, params):
    prev_attr = _attr(prev_attr)
    if prev_ddf.dims != proposal.dims or prev_attr.shape[1:] != proposal.dims:
        raise ValueError(
            f"grid mismatch: field {prev_ddf.dims}, attributes {prev_attr.shape[1:]}, "
            f"proposal {proposal.dims}"
        )
    prev_attr = _match_heads(prev_attr, proposal.heads)
    incr = score_attributes(proposal.scores, params.fisher)
    attr = np.maximum(incr, params.decay * prev_attr)

    masks = multi_head_masks(attr, params.temperature)
    fused = np.einsum("h...,hc...->c...", masks, proposal.residuals)

    kw = dict(sigma=params.sigma, eps=params.eps, min_weight=params.min_weight)
    residual = interpolate_weighted(
        DisplacementField(fused), confidence_weights(incr, params.mu, params.tau), **kw
    )
    coarse = interpolate_weighted(
        prev_ddf, confidence_weights(prev_attr, params.mu, params.tau), **kw
    )
    return compose(coarse, residual), attr, residual


def accumulate(
    prev_ddf: DisplacementField,
    prev_attr,
    proposal: MultiHeadProposal,
    params: AccumulatorParams | None = None,
) -> tuple[DisplacementField, np.ndarray]:
    """Fuse the previous field and a multi-head residual proposal on one grid.

    Returns the refined field (previous field composed with the fused residual)
    and the fused attribute field.
    """
    ddf, attr, _ = _fuse(prev_ddf, prev_attr, proposal, params or AccumulatorParams())
    return ddf, attr
