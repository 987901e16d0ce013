"""Command-line interface.

Subcommands: ``register``, ``analyze``, ``synth``, ``metrics`` and ``separability``.
Exit codes: 0 success, 2 usage or configuration error, 3 unreadable or invalid
data, 4 numeric failure.  ``RAN_THREADS`` supplies the default for ``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io as _io
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import InvalidDataError, NumericError, UndefinedMetricError
from .analysis import level_table, ma_config, profile_area, separability_profile
from .config import ConfigError, RunConfig, parse_config, with_threads
from .field import Volume, warp
from .io import (
    atomic_write_text,
    load_volume,
    raw_path,
    read_field,
    read_json,
    write_field,
    write_json,
    write_volume,
)
from .metrics import asd, dice, hausdorff, motion_pair_pdf, neg_jacobian_count, region_mass, warp_labels
from .pipeline import (
    SyntheticDeformation,
    measured_separability,
    register,
    synth_ddf,
    theory_params,
)
from .scenes import blob_volume, two_body_scene

logger = logging.getLogger("resalign")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

SAMPLE_ALIASES = {"@sample": "sample.json", "@sample-mask": "sample_mask.json"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _resolve(path: str) -> Path:
    if path in SAMPLE_ALIASES:
        return Path(str(resources.files("resalign") / "data" / SAMPLE_ALIASES[path]))
    return Path(path)


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    for p in (path, raw_path(path)) if path.suffix == ".json" else (path,):
        if p.exists():
            h.update(p.read_bytes())
    return h.hexdigest()


def _load(path: str, what: str) -> tuple[Volume, Path]:
    p = _resolve(path)
    if not p.exists():
        raise InvalidDataError(f"{what}: file not found: {path}")
    return load_volume(p), p


def _labels(path: str | None, what: str):
    if path is None:
        return None, None
    vol, p = _load(path, what)
    if vol.channels != 1:
        raise InvalidDataError(f"{what}: label volumes must have one channel")
    arr = vol.array
    if np.any(arr != np.round(arr)) or np.any(arr < 0):
        raise InvalidDataError(f"{what}: labels must be non-negative integers")
    return arr.astype(np.int64), p


def _threads(value) -> int:
    if value is None:
        env = os.environ.get("RAN_THREADS")
        if env is None or env == "":
            return 1
        value = env
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise UsageError(f"thread count must be an integer, got {value!r}")
    if n < 1:
        raise UsageError(f"thread count must be >= 1, got {n}")
    return n


def _config(path: str | None) -> RunConfig:
    if path is None:
        return parse_config({})
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    raw = read_json(p)
    return parse_config(raw)


class _Manifest:
    """Run record: command, resolved config, input and output digests, seed, timings."""

    def __init__(self, command: str, args: argparse.Namespace):
        skip = {"func", "threads", "manifest", "log_level"}
        self.data = {
            "tool": "resalign",
            "version": __version__,
            "command": command,
            "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in skip},
            "inputs": {},
            "outputs": {},
            "timings_s": {},
        }

    def input(self, path: Path):
        self.data["inputs"][str(path)] = _digest(path)

    def output(self, path: Path):
        self.data["outputs"][str(path)] = _digest(Path(path))

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        yield
        self.data["timings_s"][name] = round(time.perf_counter() - t0, 6)

    def write(self, path: Path):
        write_json(path, self.data)


def _manifest_path(args, default: Path) -> Path:
    return Path(args.manifest) if getattr(args, "manifest", None) else default


def _finite(x: float, what: str) -> float:
    if not np.isfinite(x):
        raise NumericError(f"{what} is not finite")
    return float(x)


def _label_report(src_lab, tgt_lab, ddf, spacing) -> dict:
    warped = warp_labels(src_lab, ddf)
    per_label = {}
    for lab in sorted(set(np.unique(tgt_lab)) | set(np.unique(src_lab))):
        lab = int(lab)
        if lab == 0:
            continue
        entry = {"dsc": dice(warped, tgt_lab, lab)}
        try:
            entry["hd_mm"] = hausdorff(warped, tgt_lab, lab, spacing)
            entry["asd_mm"] = asd(warped, tgt_lab, lab, spacing)
        except UndefinedMetricError:
            entry["hd_mm"] = entry["asd_mm"] = None
        per_label[str(lab)] = entry
    report = {"per_label": per_label}
    for key in ("dsc", "hd_mm", "asd_mm"):
        vals = [e[key] for e in per_label.values() if e[key] is not None]
        report[key] = float(np.mean(vals)) if vals else None
    report["detj_count"] = neg_jacobian_count(ddf, tgt_lab > 0)
    return report


# ---------------------------------------------------------------- subcommands


def cmd_register(args) -> int:
    cfg = with_threads(_config(args.config), _threads(args.threads))
    man = _Manifest("register", args)
    man.data["config"] = cfg.to_dict()
    man.data["seed"] = args.seed
    with man.stage("load"):
        src, sp = _load(args.src, "--src")
        tgt, tp = _load(args.tgt, "--tgt")
        src_lab, slp = _labels(args.src_labels, "--src-labels")
        tgt_lab, tlp = _labels(args.tgt_labels, "--tgt-labels")
    for p in (sp, tp, slp, tlp):
        if p is not None:
            man.input(p)
    if src.dims != tgt.dims:
        raise InvalidDataError(f"source dims {src.dims} differ from target dims {tgt.dims}")
    if (src_lab is None) != (tgt_lab is None):
        raise UsageError("--src-labels and --tgt-labels must be given together")
    with man.stage("register"):
        res = register(src, tgt, cfg.arch, cfg.params)
    ddf = res.final_ddf
    if not np.all(np.isfinite(ddf.data)):
        raise NumericError("registration produced a non-finite field")
    report = {
        "initial_objective": _finite(res.initial_objective, "objective"),
        "objective_trace": [_finite(v, "objective") for v in res.objective_trace],
        "monotone": res.monotone,
        "max_displacement": _finite(ddf.max_abs(), "displacement"),
        "warnings": list(res.warnings),
        "dims": list(src.dims),
    }
    with man.stage("metrics"):
        if src_lab is not None:
            report.update(_label_report(src_lab, tgt_lab, ddf, tgt.spacing))
        else:
            report["detj_count"] = neg_jacobian_count(ddf)
    out = Path(args.out)
    with man.stage("write"):
        write_field(out, ddf, tgt.spacing)
        man.output(out)
        if args.report:
            write_json(args.report, report)
            man.output(Path(args.report))
    man.write(_manifest_path(args, out.with_suffix(".manifest.json")))
    return EXIT_OK


def _analysis_configs(args):
    if args.config:
        cfg = _config(args.config)
        return [(cfg.arch.ma_depth, cfg.arch)]
    qs = args.q if args.q else [args.K]
    out = []
    for q in qs:
        try:
            out.append((q, ma_config(args.K, q, tuple(args.base_dilation), heads=1)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return out


def cmd_analyze(args) -> int:
    configs = [(q, arch, separability_profile(arch)) for q, arch in _analysis_configs(args)]
    if args.p_max is not None:
        p_max = args.p_max
        if p_max <= 0:
            raise UsageError("--p-max must be > 0")
    else:
        # one common limit so areas of different schedules are comparable
        p_max = max(float(prof.breakpoints[-1]) for _, _, prof in configs) + 1
    entries = []
    for q, arch, prof in configs:
        entries.append({
            "q": q,
            "levels": [
                {k: (float(v) if k == "capture_range" else v) for k, v in row.items()}
                for row in level_table(arch)
            ],
            "breakpoints": [float(b) for b in prof.breakpoints],
            "values": [float(v) for v in prof.values],
            "p_max": float(p_max),
            "area": float(profile_area(prof, p_max)),
        })
    if args.format == "json":
        text = json.dumps({"configs": entries}, indent=2, sort_keys=True) + "\n"
    elif args.format == "csv":
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["q", "k", "pool_size", "dilation_l1", "receptive_field", "capture_range", "breakpoint", "delta_inf"])
        for e in entries:
            n = len(e["levels"])
            for i, row in enumerate(e["levels"]):
                # breakpoints are listed fine to coarse; level k owns entry n - k
                j = n - row["k"]
                w.writerow([e["q"], row["k"], row["pool_size"], row["dilation_l1"], row["receptive_field"],
                            row["capture_range"], e["breakpoints"][j], e["values"][j]])
        text = buf.getvalue()
    else:
        lines = []
        for e in entries:
            lines.append(f"q={e['q']}  area[0,{e['p_max']:g}]={e['area']:g}")
            lines.append(f"  {'k':>2} {'p_k':>4} {'|r_k|':>5} {'s_k':>5} {'a_k':>6}")
            for row in e["levels"]:
                lines.append(f"  {row['k']:>2} {row['pool_size']:>4} {row['dilation_l1']:>5} "
                             f"{row['receptive_field']:>5} {row['capture_range']:>6g}")
            pairs = ", ".join(f"{b:g}->{v:g}" for b, v in zip(e["breakpoints"], e["values"]))
            lines.append(f"  breakpoints: {pairs}")
        text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    man = _Manifest("synth", args)
    man.data["seed"] = args.seed
    if args.src:
        src, sp = _load(args.src, "--src")
        man.input(sp)
    else:
        src = blob_volume(tuple(args.dims), seed=args.seed)
    try:
        sd = SyntheticDeformation(
            angles=tuple(args.angles), translation=tuple(args.translation),
            amplitude=args.amplitude, scale=args.scale, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with man.stage("synth"):
        ddf = synth_ddf(src.dims, sd)
        tgt = warp(src, ddf)
    out = Path(args.out_dir)
    with man.stage("write"):
        for name, writer, obj in (("src.json", write_volume, src), ("tgt.json", write_volume, tgt)):
            writer(out / name, obj)
            man.output(out / name)
        write_field(out / "ddf.json", ddf, src.spacing)
        man.output(out / "ddf.json")
    man.write(_manifest_path(args, out / "manifest.json"))
    return EXIT_OK


def _pdf_csv(path: Path, pdf) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["distance", "difference", "density", "raw"])
    for row in pdf.rows():
        w.writerow([f"{v:.10g}" for v in row])
    atomic_write_text(path, buf.getvalue())


def cmd_metrics(args) -> int:
    man = _Manifest("metrics", args)
    p = _resolve(args.ddf)
    if not p.exists():
        raise InvalidDataError(f"--ddf: file not found: {args.ddf}")
    ddf = read_field(p)
    man.input(p)
    src_lab, slp = _labels(args.src_labels, "--src-labels")
    tgt_lab, tlp = _labels(args.tgt_labels, "--tgt-labels")
    man.input(slp)
    man.input(tlp)
    if src_lab.shape != ddf.dims or tgt_lab.shape != ddf.dims:
        raise InvalidDataError("label volumes and field must share dims")
    spacing = tuple(args.spacing) if args.spacing else load_volume(tlp).spacing
    report = _label_report(src_lab, tgt_lab, ddf, spacing)
    if args.pdf_csv:
        pdf = motion_pair_pdf(ddf, src_lab, tgt_lab, bins=args.bins, max_pairs=args.pairs, seed=args.seed)
        if pdf.empty:
            logger.warning("no correctly mapped voxels; motion-pair histogram is empty")
        report["pdf"] = {"empty": pdf.empty, "n_correct": pdf.n_correct, "n_pairs": pdf.n_pairs, "exact": pdf.exact}
        _pdf_csv(Path(args.pdf_csv), pdf)
        man.output(Path(args.pdf_csv))
    write_json(args.out, report)
    man.output(Path(args.out))
    man.write(_manifest_path(args, Path(args.out).with_suffix(".manifest.json")))
    return EXIT_OK


def cmd_separability(args) -> int:
    threads = _threads(args.threads)
    base = _config(args.config)
    man = _Manifest("separability", args)
    man.data["seed"] = args.seed
    out = Path(args.out_dir)
    if args.src or args.tgt:
        if not (args.src and args.tgt and args.src_labels and args.tgt_labels):
            raise UsageError("--src, --tgt, --src-labels and --tgt-labels must be given together")
        src, sp = _load(args.src, "--src")
        tgt, tp = _load(args.tgt, "--tgt")
        src_lab, slp = _labels(args.src_labels, "--src-labels")
        tgt_lab, tlp = _labels(args.tgt_labels, "--tgt-labels")
        for p in (sp, tp, slp, tlp):
            man.input(p)
        truth = None
    else:
        scene = two_body_scene(tuple(args.dims), gap=args.gap, motion=args.motion)
        src, tgt, src_lab, tgt_lab, truth = scene.src, scene.tgt, scene.src_labels, scene.tgt_labels, scene.truth
    if not tgt_lab.any() or not src_lab.any():
        logger.warning("empty label volume; motion-pair histograms will be empty")

    params = with_threads(base, threads).params
    summary = {"K": args.K, "q": list(args.q), "bins": args.bins, "per_q": {}}
    pdfs = {}
    drange = float(max(src.dims))
    frange = float(args.difference_range)
    for q in args.q:
        try:
            arch = ma_config(args.K, q, tuple(args.base_dilation), heads=base.arch.heads)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        with man.stage(f"register_q{q}"):
            res = register(src, tgt, arch, params)
        ddf = res.final_ddf
        pdf = motion_pair_pdf(ddf, src_lab, tgt_lab, bins=args.bins, distance_range=drange,
                              difference_range=frange, max_pairs=args.pairs, seed=args.seed)
        pdfs[q] = pdf
        path = out / f"pdf_q{q}.csv"
        _pdf_csv(path, pdf)
        man.output(path)
        entry = {"empty": pdf.empty, "n_correct": pdf.n_correct, "n_pairs": pdf.n_pairs}
        if truth is not None:
            errs = {}
            for lab in (1, 2):
                m = tgt_lab == lab
                errs[str(lab)] = float(np.abs(ddf.data[:, m] - truth.data[:, m]).max(axis=0).mean())
            entry["blob_error"] = errs
        if args.trials > 0:
            with man.stage(f"measured_q{q}"):
                table = measured_separability(arch, trial_budget=args.trials, dims=tuple(args.dims),
                                              params=theory_params(params), seed=args.seed)
            tpath = out / f"separability_q{q}.csv"
            buf = _io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["p", "measured", "raw", "bound"])
            for row in table.to_rows():
                w.writerow([row["p"], f"{row['measured']:.10g}", f"{row['raw']:.10g}", f"{row['bound']:.10g}"])
            atomic_write_text(tpath, buf.getvalue())
            man.output(tpath)
        summary["per_q"][str(q)] = entry
    if len(args.q) >= 2:
        hi, lo = max(args.q), min(args.q)
        a, b = pdfs[hi], pdfs[lo]
        diff = a.density - b.density
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["distance", "difference", "density_diff"])
        for (dc, fc, _, _), v in zip(a.rows(), diff.ravel()):
            w.writerow([f"{dc:.10g}", f"{fc:.10g}", f"{v:.10g}"])
        dpath = out / f"diff_q{hi}_q{lo}.csv"
        atomic_write_text(dpath, buf.getvalue())
        man.output(dpath)
        summary["difference"] = {
            "pair": [hi, lo],
            "sum": float(diff.sum()),
            "region_mass": region_mass(diff, a.distance_edges, a.difference_edges,
                                       args.region_distance, args.region_difference),
            "region": {"max_distance": args.region_distance, "min_difference": args.region_difference},
        }
    spath = out / "summary.json"
    write_json(spath, summary)
    man.output(spath)
    man.write(_manifest_path(args, out / "manifest.json"))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resalign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def threads(p):
        p.add_argument("--threads", default=None, help="worker threads (default: $RAN_THREADS or 1)")

    p = sub.add_parser("register", help="align a source volume to a target volume")
    p.add_argument("--src", required=True, help="source volume (.json sidecar or .nii; @sample for the bundled image)")
    p.add_argument("--tgt", required=True, help="target volume")
    p.add_argument("--config", help="JSON configuration (defaults are used when omitted)")
    p.add_argument("--out", required=True, help="output displacement field (.json sidecar)")
    p.add_argument("--report", help="output metrics report (JSON)")
    p.add_argument("--src-labels", help="source label volume")
    p.add_argument("--tgt-labels", help="target label volume")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    threads(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("analyze", help="capture ranges and separability profile of a level schedule")
    p.add_argument("--config", help="JSON configuration; overrides --K/--q")
    p.add_argument("--K", type=int, default=4, help="number of levels")
    p.add_argument("--q", type=int, nargs="*", help="motion-aware depths (default: K)")
    p.add_argument("--base-dilation", type=int, nargs="+", default=[1])
    p.add_argument("--p-max", type=float, help="upper limit of the area integral (default: last breakpoint + 1 over all configs)")
    p.add_argument("--format", choices=["table", "json", "csv"], default="table")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="fabricate a (source, target, ground-truth field) triple")
    p.add_argument("--src", help="source volume (default: random blob image)")
    p.add_argument("--dims", type=int, nargs=3, default=[32, 32, 32])
    p.add_argument("--angles", type=float, nargs=3, default=[0.0, 0.0, 0.0], help="radians about z, y, x")
    p.add_argument("--translation", type=float, nargs=3, default=[0.0, 0.0, 0.0], help="voxels (dz, dy, dx)")
    p.add_argument("--amplitude", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="overlap, surface and folding metrics of a field")
    p.add_argument("--ddf", required=True)
    p.add_argument("--src-labels", required=True)
    p.add_argument("--tgt-labels", required=True)
    p.add_argument("--spacing", type=float, nargs=3, help="mm per voxel (default: from the target labels)")
    p.add_argument("--out", required=True, help="JSON report")
    p.add_argument("--pdf-csv", help="also write the motion-pair density as CSV")
    p.add_argument("--bins", type=int, default=16)
    p.add_argument("--pairs", type=int, default=1_000_000, help="pair budget when subsampling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("separability", help="motion-pair densities and measured separability across q")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--q", type=int, nargs="+", default=[0, 3, 4])
    p.add_argument("--base-dilation", type=int, nargs="+", default=[1])
    p.add_argument("--config", help="JSON configuration for regressor/accumulator settings")
    p.add_argument("--src")
    p.add_argument("--tgt")
    p.add_argument("--src-labels")
    p.add_argument("--tgt-labels")
    p.add_argument("--dims", type=int, nargs=3, default=[32, 32, 32])
    p.add_argument("--gap", type=float, default=6.0, help="built-in scene: blob spacing (voxels)")
    p.add_argument("--motion", type=float, default=3.0, help="built-in scene: opposed motion (voxels)")
    p.add_argument("--bins", type=int, default=16)
    p.add_argument("--difference-range", type=float, default=16.0)
    p.add_argument("--pairs", type=int, default=1_000_000)
    p.add_argument("--trials", type=int, default=0, help="measured-separability registrations per q")
    p.add_argument("--region-distance", type=float, default=16.0, help="difference region: pairs closer than this")
    p.add_argument("--region-difference", type=float, default=4.0, help="difference region: motion gap at least this")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest")
    threads(p)
    p.set_defaults(func=cmd_separability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=args.log_level, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"resalign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"resalign: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidDataError, UndefinedMetricError, OSError) as exc:
        print(f"resalign: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"resalign: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
