"""Coarse-to-fine registration engine, training objective and synthetic deformations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial.transform import Rotation

from ._validation import InvalidDataError, check_dims, check_same_dims
from .accumulator import AccumulatorParams, _fuse
from .analysis import (
    ArchitectureConfig,
    covers_whole_image,
    search_reach,
    separability_profile,
)
from .field import (
    DisplacementField,
    Volume,
    _gradient3,
    identity_field,
    resample_field,
    resample_volume,
    warp,
)
from .regressor import MultiHeadProposal, build_feature_levels, regress_residual

__all__ = [
    "RegistrationParams",
    "LevelResult",
    "RegistrationResult",
    "SyntheticDeformation",
    "SeparabilityTable",
    "register",
    "objective",
    "synth_ddf",
    "theory_params",
    "measured_separability",
]

logger = logging.getLogger(__name__)

SIMILARITIES = ("ncc", "mse")


@dataclass(frozen=True)
class RegistrationParams:
    """Everything besides the level schedule that controls a registration run."""

    patch_size: int = 5
    feature_sigma_scale: float = 0.5
    accumulator: AccumulatorParams = field(default_factory=AccumulatorParams)
    similarity: str = "ncc"
    lam: float = 0.1
    # 1: trilinear inter-level transport; 0: nearest neighbour ("theory mode")
    field_order: int = 1
    # scale feature smoothing and NCC tap spacing with each level's search step
    dilated_context: bool = True
    # parabolic sub-lattice refinement of the block-matching peaks
    subvoxel: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}, got {self.similarity!r}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.field_order not in (0, 1):
            raise ValueError(f"field_order must be 0 or 1, got {self.field_order}")


def theory_params(params: RegistrationParams | None = None) -> RegistrationParams:
    """Disable fusion smoothing and sub-lattice refinement; use nearest-neighbour field transport."""
    params = params or RegistrationParams()
    return replace(
        params, accumulator=replace(params.accumulator, sigma=0.0), field_order=0, subvoxel=False
    )


@dataclass(frozen=True, eq=False)
class LevelResult:
    ddf: DisplacementField  # accumulated field on the level grid
    residual: DisplacementField  # fused residual before composition
    attributes: np.ndarray
    proposal: MultiHeadProposal
    objective: float


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    final_ddf: DisplacementField
    per_level: list[LevelResult]
    objective_trace: list[float]
    initial_objective: float
    warnings: list[str] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        """Whether the objective never increased from one level to the next (1e-6 slack)."""
        trace = [self.initial_objective] + list(self.objective_trace)
        return all(b <= a + 1e-6 for a, b in zip(trace, trace[1:]))


def _regularizer(ddf: DisplacementField, tgt: Volume) -> float:
    edge = sum(np.sum(_gradient3(ch) ** 2, axis=0) for ch in tgt.data)
    weight = np.exp(-edge)
    sq = sum(np.sum(_gradient3(c) ** 2, axis=0) for c in ddf.data)
    return float(np.sum(sq * weight) / (9 * weight.size))


def _global_ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    return float(np.sum(a * b) / den) if den > 0 else 0.0


def objective(src: Volume, tgt: Volume, ddf: DisplacementField, lam: float = 0.1, similarity: str = "ncc") -> float:
    """Dissimilarity of target and warped source plus an edge-aware smoothness penalty.

    The dissimilarity is ``1 - NCC`` or the mean squared error.  The penalty is
    the mean of squared displacement derivatives, each scaled by
    ``exp(-||grad tgt||^2)`` at its voxel, and enters with weight ``lam``.
    """
    check_same_dims(src, tgt, "source and target")
    check_same_dims(tgt, ddf, "target and displacement field")
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    moved = warp(src, ddf).data
    if similarity == "mse":
        dis = float(np.mean((tgt.data - moved) ** 2))
    elif similarity == "ncc":
        dis = 1.0 - _global_ncc(tgt.data, moved)
    else:
        raise ValueError(f"similarity must be one of {SIMILARITIES}, got {similarity!r}")
    reg = _regularizer(ddf, tgt) if lam > 0 and np.any(ddf.data) else 0.0
    return dis + lam * reg


def _check_inputs(src: Volume, tgt: Volume) -> None:
    check_same_dims(src, tgt, "source and target")
    if src.channels != tgt.channels:
        raise ValueError(f"channel mismatch: {src.channels} vs {tgt.channels}")
    for name, v in (("source", src), ("target", tgt)):
        if not np.all(np.isfinite(v.data)):
            raise InvalidDataError(f"{name} volume contains non-finite values")


def register(
    src: Volume,
    tgt: Volume,
    cfg: ArchitectureConfig,
    params: RegistrationParams | None = None,
) -> RegistrationResult:
    """Align ``src`` to ``tgt`` level by level.

    Each level warps the source features by the current field, regresses a
    multi-head residual on the level grid, fuses it into the field and carries
    the field to the next grid.  The returned field lives on the input grid and
    satisfies ``warp(src, final_ddf) ~ tgt``.
    """
    params = params or RegistrationParams()
    _check_inputs(src, tgt)
    if not cfg.levels:
        raise ValueError("configuration has no levels")
    warnings = []
    if not covers_whole_image(cfg, src.dims):
        msg = "coarsest receptive field does not cover the whole image"
        logger.warning(msg)
        warnings.append(msg)

    src_feats = build_feature_levels(src, cfg, params.feature_sigma_scale, params.dilated_context)
    tgt_feats = build_feature_levels(tgt, cfg, params.feature_sigma_scale, params.dilated_context)
    order = params.field_order

    phi = identity_field(tgt_feats[0].dims)
    theta = np.zeros((cfg.heads,) + phi.dims)
    per_level, trace = [], []
    initial = objective(src, tgt, identity_field(src.dims), params.lam, params.similarity)
    for lv, fs, ft in zip(cfg.levels, src_feats, tgt_feats):
        if phi.dims != ft.dims:
            theta = resample_volume(Volume(theta), ft.dims, order).data
            phi = resample_field(phi, ft.dims, order)
        warped = warp(fs.volume, phi)
        proposal = regress_residual(
            warped, ft.volume, heads=cfg.heads, radius=lv.dilation_norm,
            step=lv.search_step, patch=params.patch_size, n_jobs=params.n_jobs,
            patch_dilation=lv.search_step if params.dilated_context else 1,
            subvoxel=params.subvoxel,
        )
        if proposal.heads_clamped:
            warnings.append(f"level {len(per_level) + 1}: heads clamped to {proposal.heads}")
        phi, theta, residual = _fuse(phi, theta, proposal, params.accumulator)
        full = resample_field(phi, src.dims, order)
        obj = objective(src, tgt, full, params.lam, params.similarity)
        per_level.append(LevelResult(phi, residual, theta, proposal, obj))
        trace.append(obj)

    result = RegistrationResult(resample_field(phi, src.dims, order), per_level, trace, initial, warnings)
    if not result.monotone:
        msg = f"objective increased across levels: {[initial] + trace}"
        logger.warning(msg)
        warnings.append(msg)
    return result


@dataclass(frozen=True)
class SyntheticDeformation:
    """Rigid motion about the volume centre plus a random control-grid deformation.

    ``angles`` are radians about the z, y, x axes; ``translation`` is in voxels
    ``(dz, dy, dx)``; control points are ``scale`` voxels apart with offsets
    drawn uniformly from ``[-amplitude, amplitude]``.
    """

    angles: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    amplitude: float = 0.0
    scale: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if len(self.angles) != 3 or len(self.translation) != 3:
            raise ValueError("angles and translation need 3 entries")
        if self.amplitude < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")
        if self.scale < 2:
            raise ValueError(f"scale must be >= 2, got {self.scale}")


def _rotation_zyx(angles) -> np.ndarray:
    # scipy works on (x, y, z) vectors; reverse to act on (z, y, x) voxel coordinates
    m = Rotation.from_euler("xyz", angles[::-1]).as_matrix()
    return m[::-1, ::-1]


def synth_ddf(dims, sd: SyntheticDeformation) -> DisplacementField:
    """Ground-truth displacement field of a synthetic deformation."""
    dims = check_dims(dims)
    grid = np.indices(dims, dtype=np.float64)
    disp = np.zeros((3,) + dims)
    if any(sd.angles) or any(sd.translation):
        center = (np.array(dims, dtype=float) - 1) / 2
        rel = grid - center[:, None, None, None]
        rot = _rotation_zyx(tuple(float(a) for a in sd.angles))
        moved = np.einsum("ij,j...->i...", rot, rel)
        disp += moved - rel + np.asarray(sd.translation, dtype=float)[:, None, None, None]
    if sd.amplitude > 0:
        rng = np.random.default_rng(sd.seed)
        n_ctrl = tuple(int(np.ceil((d - 1) / sd.scale)) + 1 for d in dims)
        ctrl = rng.uniform(-sd.amplitude, sd.amplitude, size=(3,) + n_ctrl)
        coords = grid / sd.scale
        disp += np.stack([map_coordinates(c, coords, order=1, mode="nearest") for c in ctrl])
    return DisplacementField(disp)


@dataclass(frozen=True)
class SeparabilityTable:
    """Largest recovered displacement difference per voxel distance, next to the bound."""

    distances: tuple[int, ...]
    measured: tuple[float, ...]  # running maximum over distance
    raw: tuple[float, ...]  # per-distance maximum before the running max
    bound: tuple[float, ...]
    trials: int

    def to_rows(self) -> list[dict]:
        return [
            {"p": p, "measured": m, "raw": r, "bound": b}
            for p, m, r, b in zip(self.distances, self.measured, self.raw, self.bound)
        ]


def _impulse_pair(dims, x_a, p, v, axis, sigma):
    from .scenes import BlobSet, render_blobs

    e = np.zeros(3)
    e[axis] = 1.0
    a, b = np.asarray(x_a, dtype=float), np.asarray(x_a, dtype=float) + p * e
    ones = np.ones(2)
    tgt = render_blobs(dims, BlobSet(np.stack([a, b]), sigma * ones, ones))
    # target x = a pulls from a - v, target b pulls from b + v
    src = render_blobs(dims, BlobSet(np.stack([a - v * e, b + v * e]), sigma * ones, ones))
    return src, tgt, tuple(a.astype(int)), tuple(b.astype(int))


def measured_separability(
    cfg: ArchitectureConfig,
    trial_budget: int = 64,
    dims: Sequence[int] = (16, 16, 48),
    distances: Sequence[int] | None = None,
    params: RegistrationParams | None = None,
    seed: int = 0,
    impulse_sigma: float = 1.0,
) -> SeparabilityTable:
    """Empirical counterpart of :func:`separability_profile`.

    For each distance ``p`` two impulses ``p`` voxels apart along x are given
    opposed ground-truth motions of growing magnitude; the table reports the
    largest difference between the displacements recovered at the two impulse
    centres.  Registration runs in theory mode unless ``params`` says otherwise.
    """
    dims = check_dims(dims)
    if max(dims) > 48:
        raise ValueError("measured_separability is limited to dims <= 48 per axis")
    params = params or theory_params()
    profile = separability_profile(cfg)
    reach = sum(search_reach(lv) for lv in cfg.levels)
    if distances is None:
        top = int(np.ceil(float(profile.breakpoints[-1]))) + 1 if profile.breakpoints else 2
        distances = list(range(0, min(top, dims[2] // 2) + 1))
    distances = [int(p) for p in distances]
    rng = np.random.default_rng(seed)
    per_p = max(1, trial_budget // max(1, len(distances)))
    raw = []
    trials = 0
    for p in distances:
        best = 0.0
        if p > 0:
            for t in range(per_p):
                v = 1 + (t % max(1, reach))
                margin = v + 3
                lo = margin
                hi = dims[2] - p - margin
                if hi <= lo:
                    continue
                x = [dims[0] // 2, dims[1] // 2, int(rng.integers(lo, hi))]
                src, tgt, a, b = _impulse_pair(dims, x, p, v, 2, impulse_sigma)
                ddf = register(src, tgt, cfg, params).final_ddf.data
                diff = np.max(np.abs(ddf[(slice(None),) + a] - ddf[(slice(None),) + b]))
                best = max(best, float(diff))
                trials += 1
        raw.append(best)
    measured = np.maximum.accumulate(np.array(raw)) if raw else np.array([])
    bound = [float(profile(p)) for p in distances]
    return SeparabilityTable(tuple(distances), tuple(float(m) for m in measured), tuple(raw), tuple(bound), trials)
