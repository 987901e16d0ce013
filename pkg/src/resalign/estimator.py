"""scikit-learn style wrapper: ``fit(source, target)`` estimates a field, ``transform`` applies it."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidDataError
from .accumulator import AccumulatorParams
from .analysis import ArchitectureConfig, LevelConfig, ma_config
from .field import Volume, warp
from .metrics import warp_labels
from .pipeline import RegistrationParams, objective, register, theory_params

__all__ = ["ResidualAligner"]


def _as_volume(X, name: str) -> Volume:
    if isinstance(X, Volume):
        return X
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim not in (3, 4):
        raise ValueError(f"{name} must be a Volume or a 3-D/4-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidDataError(f"{name} contains non-finite values")
    return Volume(arr)


class ResidualAligner(TransformerMixin, BaseEstimator):
    """Coarse-to-fine residual aligner for a pair of 3-D volumes.

    Parameters
    ----------
    n_levels : int
        Number of coarse-to-fine levels ``K``.
    ma_depth : int
        Levels kept at full-pyramid-top resolution with dilated search
        (``0`` gives a plain feature pyramid, ``n_levels`` a fully motion-aware stack).
    base_dilation : tuple of int
        Dilation entries of the finest level.
    levels : sequence of (pool_size, dilations), optional
        Explicit level schedule; overrides ``n_levels`` and ``base_dilation``.
    heads : int
        Candidate displacements kept per voxel.
    subvoxel : bool
        Refine block-matching peaks between lattice points.
    similarity : {"ncc", "mse"}
        Dissimilarity used by the objective.
    lam : float
        Weight of the edge-aware smoothness penalty.
    theory_mode : bool
        Disable fusion smoothing and use nearest-neighbour field transport.
    n_jobs : int
        Worker threads; results do not depend on it.

    Attributes
    ----------
    ddf_ : DisplacementField
        Field on the input grid with ``warp(source, ddf_) ~ target``.
    result_ : RegistrationResult
    objective_trace_ : list of float
    """

    def __init__(
        self,
        n_levels: int = 3,
        ma_depth: int = 3,
        base_dilation=(1,),
        levels=None,
        heads: int = 2,
        patch_size: int = 5,
        feature_sigma_scale: float = 0.5,
        dilated_context: bool = True,
        subvoxel: bool = True,
        mu: float = 0.5,
        tau: float = 0.1,
        temperature: float = 0.1,
        sigma: float = 1.0,
        decay: float = 0.9,
        similarity: str = "ncc",
        lam: float = 0.1,
        theory_mode: bool = False,
        n_jobs: int = 1,
    ):
        self.n_levels = n_levels
        self.ma_depth = ma_depth
        self.base_dilation = base_dilation
        self.levels = levels
        self.heads = heads
        self.patch_size = patch_size
        self.feature_sigma_scale = feature_sigma_scale
        self.dilated_context = dilated_context
        self.subvoxel = subvoxel
        self.mu = mu
        self.tau = tau
        self.temperature = temperature
        self.sigma = sigma
        self.decay = decay
        self.similarity = similarity
        self.lam = lam
        self.theory_mode = theory_mode
        self.n_jobs = n_jobs

    def _architecture(self) -> ArchitectureConfig:
        if self.levels is not None:
            lv = tuple(LevelConfig(int(p), tuple(r)) for p, r in self.levels)
            return ArchitectureConfig(lv, ma_depth=min(self.ma_depth, len(lv)), heads=self.heads)
        return ma_config(self.n_levels, self.ma_depth, tuple(self.base_dilation), heads=self.heads)

    def _params(self) -> RegistrationParams:
        params = RegistrationParams(
            patch_size=self.patch_size,
            feature_sigma_scale=self.feature_sigma_scale,
            dilated_context=self.dilated_context,
            subvoxel=self.subvoxel,
            accumulator=AccumulatorParams(
                mu=self.mu, tau=self.tau, temperature=self.temperature,
                sigma=self.sigma, decay=self.decay,
            ),
            similarity=self.similarity,
            lam=self.lam,
            n_jobs=self.n_jobs,
        )
        return theory_params(params) if self.theory_mode else params

    def fit(self, X, y):
        """Estimate the field aligning source ``X`` to target ``y``."""
        src, tgt = _as_volume(X, "X"), _as_volume(y, "y")
        self.config_ = self._architecture()
        self.params_ = self._params()
        self.result_ = register(src, tgt, self.config_, self.params_)
        self.ddf_ = self.result_.final_ddf
        self.objective_trace_ = list(self.result_.objective_trace)
        self.dims_ = src.dims
        return self

    def _check_dims(self, vol: Volume):
        if vol.dims != self.dims_:
            raise ValueError(f"expected dims {self.dims_}, got {vol.dims}")

    def transform(self, X):
        """Warp ``X`` with the fitted field; returns the input's type (Volume or ndarray)."""
        check_is_fitted(self, "ddf_")
        vol = _as_volume(X, "X")
        self._check_dims(vol)
        out = warp(vol, self.ddf_)
        if isinstance(X, Volume):
            return out
        return out.data if np.ndim(X) == 4 else out.array

    def transform_labels(self, labels) -> np.ndarray:
        """Warp an integer label volume with nearest-neighbour sampling."""
        check_is_fitted(self, "ddf_")
        return warp_labels(labels, self.ddf_)

    def score(self, X, y) -> float:
        """Negative objective of the fitted field on ``(X, y)``; higher is better."""
        check_is_fitted(self, "ddf_")
        src, tgt = _as_volume(X, "X"), _as_volume(y, "y")
        self._check_dims(src)
        return -objective(src, tgt, self.ddf_, self.lam, self.similarity)
