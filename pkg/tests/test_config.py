import pytest

from resalign.analysis import ma_config
from resalign.config import ConfigError, default_config, parse_config, with_threads


def test_defaults():
    cfg = default_config()
    assert cfg.arch == ma_config(3, 3)
    assert cfg.arch.heads == 2
    p = cfg.params
    assert (p.patch_size, p.similarity, p.lam) == (5, "ncc", 0.1)
    assert (p.accumulator.temperature, p.accumulator.sigma, p.accumulator.decay) == (0.1, 1.0, 0.9)


def test_level_count_and_depth():
    cfg = parse_config({"levels": 4, "q": 0, "heads": 3, "regressor": {"base_dilation": [1, 1]}})
    assert cfg.arch == ma_config(4, 0, (1, 1), heads=3)


def test_explicit_levels():
    cfg = parse_config({"levels": [[4, [1]], {"pool_size": 1, "dilation": [2, 1]}]})
    assert [(lv.pool_size, lv.dilation) for lv in cfg.arch.levels] == [(4, (1,)), (1, (2, 1))]


def test_sections():
    cfg = parse_config({
        "accumulator": {"sigma": 2, "temperature": 0.05, "fisher": False},
        "objective": {"similarity": "mse", "lambda": 0.5},
        "regressor": {"patch_size": 3, "subvoxel": False},
        "n_jobs": 4,
    })
    p = cfg.params
    assert p.accumulator.sigma == 2.0 and p.accumulator.temperature == 0.05 and not p.accumulator.fisher
    assert p.similarity == "mse" and p.lam == 0.5 and p.patch_size == 3 and not p.subvoxel
    assert p.n_jobs == 4


def test_theory_mode():
    p = parse_config({"theory_mode": True}).params
    assert p.accumulator.sigma == 0 and p.field_order == 0


def test_roundtrip_through_dict():
    cfg = parse_config({"levels": 2, "q": 1})
    again = parse_config({k: v for k, v in cfg.to_dict().items()})
    assert again.arch == cfg.arch
    assert again.params == cfg.params


@pytest.mark.parametrize(
    "raw",
    [
        [],
        {"bogus": 1},
        {"accumulator": {"nope": 1}},
        {"accumulator": []},
        {"levels": 4, "q": 5},
        {"levels": True},
        {"levels": []},
        {"levels": [[1]]},
        {"regressor": {"patch_size": 4}},
        {"regressor": {"subvoxel": "yes"}},
        {"objective": {"similarity": "mi"}},
        {"objective": {"lambda": -1}},
        {"accumulator": {"temperature": 0}},
        {"heads": 0},
    ],
)
def test_rejections(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_with_threads():
    assert with_threads(default_config(), 0).params.n_jobs == 1
    assert with_threads(default_config(), 6).params.n_jobs == 6
