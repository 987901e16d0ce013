"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import json
import math
import time
from fractions import Fraction as F
from pathlib import Path

import numpy as np

from resalign.analysis import (
    ArchitectureConfig,
    LevelConfig,
    capture_range,
    ma_config,
    profile_area,
    search_reach,
    separability_profile,
)
from resalign.cli import main
from resalign.field import (
    DisplacementField,
    Volume,
    compose,
    identity_field,
    jacobian_det,
    resample_field,
    warp,
)
from resalign.metrics import (
    asd,
    dice,
    hausdorff,
    motion_pair_pdf,
    neg_jacobian_count,
    region_mass,
)
from resalign.pipeline import measured_separability, objective, register, theory_params
from resalign.scenes import blob_volume, random_blobs, render_blobs, two_body_scene

from conftest import interior, smooth_random_field
from test_analysis import brute_delta
from test_metrics import hd_asd_oracle, random_mask


def test_criterion_1_field_algebra(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    dims = (16, 16, 16)
    vol = Volume(rng.standard_normal(dims))
    a, b, c = (smooth_random_field(dims, 1.5, seed=s) for s in (10, 11, 12))
    zero = identity_field(dims)
    checks = {
        "zero warp": np.array_equal(warp(vol, zero).array, vol.array),
        "compose identity": np.array_equal(compose(a, zero).data, a.data)
        and np.array_equal(compose(zero, a).data, a.data),
        "constant fields add": np.allclose(
            compose(DisplacementField(np.full((3,) + dims, 0.5)), DisplacementField(np.full((3,) + dims, -1.25))).data,
            -0.75, atol=1e-12),
        "identity jacobian": np.allclose(jacobian_det(zero).array, 1.0, atol=1e-12),
        "unit rescaling": np.allclose(resample_field(DisplacementField(np.ones((3, 8, 8, 8))), dims).data, 2.0),
    }
    x = np.indices(dims, dtype=float)
    affine = Volume(x[0] + 2 * x[1] - x[2])  # trilinear sampling is exact on affine volumes
    u, w = smooth_random_field(dims, 1.0, seed=1), smooth_random_field(dims, 1.0, seed=2)
    seq = warp(warp(affine, u), w).array
    one = warp(affine, compose(u, w)).array
    checks["sequential warp"] = np.abs(interior(seq - one, 3)).max() < 0.05
    assoc = np.abs(interior(compose(compose(a, b), c).data - compose(a, compose(b, c)).data, 4)).max()
    checks["associativity"] = assoc < 0.05
    elapsed = time.perf_counter() - t0
    checks["runtime"] = elapsed < 10
    failed = [k for k, ok in checks.items() if not ok]
    ok = criterion(1, not failed, f"associativity {assoc:.4f} < 0.05, {elapsed:.2f}s; failed: {failed or 'none'}")
    assert ok


def test_criterion_2_analyzer(criterion):
    t0 = time.perf_counter()
    hand = {
        "K=1": (ArchitectureConfig((LevelConfig(1, (1,)),)), [(1, 2)]),
        "K=2 FP": (ma_config(2, 0), [(1, 2), (4, 7)]),
        "K=4 q=4": (ma_config(4, 4), [(1, 2), (3, 6), (7, 14), (15, 30)]),
    }
    checks = {}
    for name, (cfg, table) in hand.items():
        prof = separability_profile(cfg)
        checks[f"table {name}"] = list(zip(prof.breakpoints, prof.values)) == [(F(b), F(v)) for b, v in table]
        checks[f"oracle {name}"] = all(prof(F(i, 2)) == brute_delta(cfg.levels, F(i, 2)) for i in range(80))
    areas = {q: profile_area(separability_profile(ma_config(4, q)), 16) for q in (0, 3, 4)}
    checks["area ordering"] = areas[4] > areas[3] > areas[0]
    # coarsest level: pool size times dilation norm, i.e. the search reach
    products = {q: search_reach(ma_config(4, q).levels[0]) for q in range(5)}
    checks["coarsest product"] = len(set(products.values())) == 1
    elapsed = time.perf_counter() - t0
    checks["runtime"] = elapsed < 1
    failed = [k for k, ok in checks.items() if not ok]
    ok = criterion(2, not failed, f"areas q0/q3/q4 = {[int(areas[q]) for q in (0, 3, 4)]}, "
                   f"coarsest products {sorted(set(products.values()))}, {elapsed:.3f}s; failed: {failed or 'none'}")
    assert ok


def _translation_error(seed, shift):
    dims = (32, 32, 32)
    blobs = random_blobs(dims, 24, seed=seed)
    src, tgt = render_blobs(dims, blobs), render_blobs(dims, blobs.shifted(shift))
    ddf = register(src, tgt, ma_config(3, 3)).final_ddf.data
    truth = -np.asarray(shift, dtype=float)[:, None, None, None]
    return float(interior(np.sqrt(((ddf - truth) ** 2).sum(0)), 8).mean())


def test_criterion_3_translation_recovery(criterion):
    t0 = time.perf_counter()
    cfg = ma_config(3, 3)
    reach = float(sum(capture_range(lv) for lv in cfg.levels))
    plateau = float(separability_profile(cfg).plateau)
    inside = []
    for seed in range(10):
        t = np.random.default_rng(100 + seed).integers(-int(reach), int(reach) + 1, size=3)
        inside.append(_translation_error(seed, t))
    beyond_t = int(plateau) + 3
    beyond = [_translation_error(seed, (0, 0, beyond_t)) for seed in range(2)]
    elapsed = time.perf_counter() - t0
    ok = criterion(
        3,
        max(inside) < 0.5 and min(beyond) > 1 and elapsed < 300,
        f"|t|<={reach:g}: worst mean EPE {max(inside):.3f} < 0.5; |t|={beyond_t}: "
        f"min error {min(beyond):.2f} > 1; {elapsed:.0f}s",
    )
    assert ok


def test_criterion_4_theory_bound(criterion):
    cfg = ma_config(3, 3)
    table = measured_separability(cfg, trial_budget=50, dims=(32, 32, 32), distances=range(1, 11), seed=0)
    excess = [(p, m, b) for p, m, b in zip(table.distances, table.raw, table.bound) if m > b + 1e-9]
    # finest pool 2: voxels within one 2x2x2 cell share the same displacement
    share = True
    pooled = ArchitectureConfig((LevelConfig(4, (1,)), LevelConfig(2, (1,))))
    for seed in range(3):
        src, tgt = blob_volume((32, 32, 32), seed=2 * seed), blob_volume((32, 32, 32), seed=2 * seed + 1)
        d = register(src, tgt, pooled, theory_params()).final_ddf.data
        for axis in (1, 2, 3):
            even = np.take(d, range(0, 32, 2), axis=axis)
            odd = np.take(d, range(1, 32, 2), axis=axis)
            share &= np.array_equal(even, odd)
    worst = max(excess, key=lambda e: e[1] - e[2]) if excess else None
    detail = (f"{table.trials} registrations; " +
              (f"bound exceeded at {len(excess)} distances, worst p={worst[0]}: {worst[1]:.2f} > {worst[2]:g}"
               if excess else "bound respected") + f"; cell sharing {'exact' if share else 'broken'}")
    ok = criterion(4, not excess and share and table.trials == 50, detail)
    assert ok


def test_criterion_5_two_body_contrast(criterion):
    scene = two_body_scene((32, 32, 32), gap=6.0, motion=3.0)
    errors, pdfs = {}, {}
    for q in (4, 0):
        ddf = register(scene.src, scene.tgt, ma_config(4, q)).final_ddf
        errors[q] = [
            float(np.sqrt(((ddf.data[:, m] - scene.truth.data[:, m]) ** 2).sum(0)).mean())
            for m in (scene.tgt_labels == 1, scene.tgt_labels == 2)
        ]
        pdfs[q] = motion_pair_pdf(ddf, scene.src_labels, scene.tgt_labels, bins=16,
                                  distance_range=32.0, difference_range=16.0)
    diff = pdfs[4].density - pdfs[0].density
    mass = region_mass(diff, pdfs[4].distance_edges, pdfs[4].difference_edges, 16.0, 4.0)
    ma_ok = max(errors[4]) < 1.0
    fp_ok = max(errors[0]) > 1.5
    ok = criterion(
        5,
        ma_ok and fp_ok and mass > 0,
        f"MA blob errors {np.round(errors[4], 3).tolist()} < 1; FP blob errors "
        f"{np.round(errors[0], 3).tolist()} need one > 1.5; region mass {mass:.2e} > 0",
    )
    assert ok


def test_criterion_6_metric_oracles(criterion):
    rng = np.random.default_rng(2024)
    mismatches = []
    for i in range(20):
        a, b = random_mask(rng), random_mask(rng)
        hd, mean = hd_asd_oracle(a, b, (1.0, 1.0, 1.0))
        both = int((a & b).sum())
        d = 2.0 * both / (a.sum() + b.sum())
        if (dice(a, b), hausdorff(a, b), asd(a, b)) != (d, hd, mean):
            mismatches.append(i)
    x = np.indices((8, 8, 8), dtype=float)
    phi = np.zeros((3, 8, 8, 8))
    phi[2] = -2 * x[2] * (x[0] > 3)
    phi += 0.3 * rng.standard_normal(phi.shape)
    g = np.stack([np.stack(np.gradient(c), 0) for c in phi], 0)
    det = np.linalg.det(np.moveaxis(g, (0, 1), (-2, -1)) + np.eye(3))
    brute = int((det[1:-1, 1:-1, 1:-1] < 0).sum())
    fold_ok = neg_jacobian_count(DisplacementField(phi)) == brute > 0
    m = random_mask(rng)
    ident = (dice(m, m), hausdorff(m, m), asd(m, m), neg_jacobian_count(identity_field(m.shape)))
    ok = criterion(
        6,
        not mismatches and fold_ok and ident == (1.0, 0.0, 0.0, 0),
        f"{20 - len(mismatches)}/20 mask pairs exact; folding count {brute} matches: {fold_ok}; identity {ident}",
    )
    assert ok


def test_criterion_7_objective(criterion):
    v = blob_volume((10, 10, 10), seed=0)
    perfect = objective(v, v, identity_field(v.dims), lam=0.5, similarity="mse")
    a, b = blob_volume((8, 8, 8), seed=1), blob_volume((8, 8, 8), seed=2)
    ident = identity_field(a.dims)
    reg_zero = objective(a, b, ident, lam=0.0) == objective(a, b, ident, lam=100.0)
    dims = (8, 8, 8)
    ramp = Volume(np.indices(dims, dtype=float)[2])
    flat = Volume(np.zeros(dims))
    phi = smooth_random_field(dims, 0.5, seed=3)

    def penalty(tgt):
        return (objective(tgt, tgt, phi, lam=1.0, similarity="mse")
                - objective(tgt, tgt, phi, lam=0.0, similarity="mse"))

    ratio = penalty(ramp) / penalty(flat)
    ok = criterion(
        7,
        perfect == 0.0 and reg_zero and abs(ratio - math.exp(-1)) < 1e-6,
        f"perfect alignment {perfect}; identity penalty zero: {reg_zero}; ratio {ratio:.9f} vs e^-1",
    )
    assert ok


def _snapshot(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            if path.name.endswith("manifest.json"):
                data = json.loads(path.read_text())
                data.pop("timings_s")
                out[str(path.relative_to(root))] = json.dumps(data, sort_keys=True).encode()
            else:
                out[str(path.relative_to(root))] = path.read_bytes()
    return out


def test_criterion_8_cli_determinism(criterion, tmp_path, monkeypatch):
    commands = [
        ["synth", "--src", "@sample", "--translation", "0", "1", "-2", "--amplitude", "1", "--seed", "5",
         "--out-dir", "s"],
        ["register", "--src", "s/src.json", "--tgt", "s/tgt.json", "--src-labels", "@sample-mask",
         "--tgt-labels", "@sample-mask", "--out", "r/ddf.json", "--report", "r/report.json"],
        ["metrics", "--ddf", "r/ddf.json", "--src-labels", "@sample-mask", "--tgt-labels", "@sample-mask",
         "--out", "m/metrics.json", "--pdf-csv", "m/pdf.csv"],
        ["analyze", "--K", "4", "--q", "0", "3", "4", "--format", "json", "--out", "a/profiles.json"],
        ["separability", "--K", "2", "--q", "0", "2", "--dims", "16", "16", "24", "--trials", "4",
         "--out-dir", "sep"],
    ]
    snapshots = []
    for i, threads in enumerate(("1", "1", "4")):
        run_dir = tmp_path / f"run{i}"
        run_dir.mkdir()
        monkeypatch.chdir(run_dir)
        monkeypatch.setenv("RAN_THREADS", threads)
        codes = [main(cmd) for cmd in commands]
        assert codes == [0] * len(commands)
        snapshots.append(_snapshot(run_dir))
    same = snapshots[0] == snapshots[1] == snapshots[2]
    ok = criterion(8, same and len(snapshots[0]) >= 10,
                   f"{len(commands)} subcommands, {len(snapshots[0])} files, threads 1/1/4 byte-identical: {same}")
    assert ok
