"""JSON run configuration: level schedule plus regressor, accumulator and objective settings.

Example::

    {
      "levels": 3, "q": 3, "heads": 2,
      "regressor": {"base_dilation": [1], "patch_size": 5},
      "accumulator": {"sigma": 1.0, "temperature": 0.1},
      "objective": {"similarity": "ncc", "lambda": 0.1}
    }

``levels`` is either a level count ``K`` (expanded with ``q`` and
``base_dilation``) or an explicit list of ``[pool_size, [dilations...]]``
entries, coarse to fine.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

from .accumulator import AccumulatorParams
from .analysis import ArchitectureConfig, LevelConfig, ma_config
from .pipeline import RegistrationParams, theory_params

__all__ = ["ConfigError", "RunConfig", "parse_config", "default_config", "with_threads"]

_TOP_KEYS = {"levels", "q", "heads", "regressor", "accumulator", "objective", "theory_mode", "n_jobs"}
_REGRESSOR_KEYS = {
    "base_dilation", "patch_size", "feature_sigma_scale", "dilated_context", "subvoxel", "field_order",
}
_ACCUMULATOR_KEYS = {"mu", "tau", "temperature", "sigma", "decay", "eps", "min_weight", "fisher"}
_OBJECTIVE_KEYS = {"similarity", "lambda"}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class RunConfig:
    arch: ArchitectureConfig
    params: RegistrationParams
    source: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Fully expanded configuration, suitable for a run manifest."""
        p = self.params
        return {
            "levels": [[lv.pool_size, list(lv.dilation)] for lv in self.arch.levels],
            "q": self.arch.ma_depth,
            "heads": self.arch.heads,
            "regressor": {
                "patch_size": p.patch_size,
                "feature_sigma_scale": p.feature_sigma_scale,
                "dilated_context": p.dilated_context,
                "subvoxel": p.subvoxel,
                "field_order": p.field_order,
            },
            "accumulator": asdict(p.accumulator),
            "objective": {"similarity": p.similarity, "lambda": p.lam},
        }


def _section(raw: dict, key: str, allowed: set) -> dict:
    sec = raw.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"'{key}' must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{key}': {sorted(unknown)}")
    return sec


def _flag(sec: dict, key: str, default: bool) -> bool:
    value = sec.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"'{key}' must be true or false")
    return value


def _levels(raw: dict, reg: dict, heads: int) -> ArchitectureConfig:
    levels = raw.get("levels", 3)
    q = raw.get("q")
    if isinstance(levels, bool):
        raise ConfigError("'levels' must be an integer or a list")
    if isinstance(levels, int):
        base = tuple(reg.get("base_dilation", (1,)))
        return ma_config(levels, levels if q is None else int(q), base, heads=heads)
    if not isinstance(levels, list) or not levels:
        raise ConfigError("'levels' must be a positive integer or a non-empty list")
    parsed = []
    for entry in levels:
        if isinstance(entry, dict):
            pool, dil = entry.get("pool_size"), entry.get("dilation", [1])
        elif isinstance(entry, (list, tuple)) and len(entry) == 2:
            pool, dil = entry
        else:
            raise ConfigError(f"bad level entry {entry!r}; expected [pool_size, [dilations]]")
        parsed.append(LevelConfig(int(pool), tuple(int(r) for r in dil)))
    return ArchitectureConfig(tuple(parsed), 0 if q is None else int(q), heads)


def parse_config(raw: dict | None) -> RunConfig:
    """Validate a decoded JSON configuration.

    Raises
    ------
    ConfigError
        On unknown keys, out-of-range values or type errors.
    """
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    raw = dict(raw)
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        reg = _section(raw, "regressor", _REGRESSOR_KEYS)
        acc = _section(raw, "accumulator", _ACCUMULATOR_KEYS)
        obj = _section(raw, "objective", _OBJECTIVE_KEYS)
        arch = _levels(raw, reg, int(raw.get("heads", 2)))
        params = RegistrationParams(
            patch_size=int(reg.get("patch_size", 5)),
            feature_sigma_scale=float(reg.get("feature_sigma_scale", 0.5)),
            dilated_context=_flag(reg, "dilated_context", True),
            subvoxel=_flag(reg, "subvoxel", True),
            field_order=int(reg.get("field_order", 1)),
            accumulator=AccumulatorParams(
                **{k: (_flag(acc, k, True) if k == "fisher" else float(v)) for k, v in acc.items()}
            ),
            similarity=str(obj.get("similarity", "ncc")),
            lam=float(obj.get("lambda", 0.1)),
            n_jobs=int(raw.get("n_jobs", 1)),
        )
        if params.patch_size < 1 or params.patch_size % 2 == 0:
            raise ConfigError(f"patch_size must be a positive odd integer, got {params.patch_size}")
        if raw.get("theory_mode", False):
            params = theory_params(params)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(arch, params, raw)


def default_config() -> RunConfig:
    return parse_config({})


def with_threads(cfg: RunConfig, n_jobs: int) -> RunConfig:
    return replace(cfg, params=replace(cfg.params, n_jobs=max(1, int(n_jobs))))
