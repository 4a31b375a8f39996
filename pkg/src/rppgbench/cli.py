"""Command-line harness: synth / degrade / extract / mitigate / evaluate.

Every run with fixed seeds is reproducible; failures exit nonzero with a
machine-readable JSON error record on stderr. The evaluate command reads a
YAML config (documented in the README) and honors the RPPG_SEED environment
variable as a seed override.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from . import __version__, degrade, ingest, methods, mitigate
from .core import FrameSequence, GroundTruth, RgbTrace, mean_rgb
from .evaluate import (DegradationSpec, MitigationSpec, SynthSpec, Subject,
                       run_matrix, synth_subject, synth_trace, synth_phase)
from .hr import WindowConfig, hr_series
from .ingest import load_frames_dir, write_ppg_csv
from .report import write_report
from .temporal import DropManifest, downsample_uniform, drop_random


def _write_frames(outdir: Path, frames: np.ndarray) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        # temp-and-rename keeps partially written frames out of the directory
        target = outdir / f"frame_{i:05d}.png"
        tmp = outdir / f".frame_{i:05d}.png.tmp"
        Image.fromarray(frame, mode="RGB").save(tmp, format="PNG")
        os.replace(tmp, target)


def _parse_color(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError("base color must be R,G,B")
    return tuple(parts)


def cmd_synth(args) -> int:
    spec = SynthSpec(duration_s=args.duration, fps=args.fps, hr_bpm=args.hr,
                     hr_end_bpm=args.hr_end, amplitude=args.amplitude,
                     base_color=_parse_color(args.base_color),
                     noise_variance=args.noise_var, seed=args.seed,
                     frame_size=args.size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, phase = synth_phase(spec)
    write_ppg_csv(out / "gt_ppg.csv", np.sin(phase), spec.fps)
    entry = {"id": args.id, "gt_path": "gt_ppg.csv", "gt_kind": "ppg",
             "nominal_fps": spec.fps}
    if args.trace_only:
        synth_trace(spec).to_csv(out / "trace.csv")
        entry["trace_csv"] = "trace.csv"
    else:
        seq, _ = synth_subject(spec)
        _write_frames(out / "frames", seq.frames)
        entry["frames_dir"] = "frames"
    with open(out / "manifest.yaml", "w") as fh:
        yaml.safe_dump({"subjects": [entry]}, fh, sort_keys=True)
    print(out / "manifest.yaml")
    return 0


def _load_stream(args):
    if getattr(args, "trace", None):
        return RgbTrace.from_csv(args.trace, args.fps)
    if getattr(args, "frames", None):
        frames, ts, _ = load_frames_dir(args.frames, args.fps)
        return FrameSequence(frames, ts, args.fps)
    raise ValueError("provide --trace or --frames")


def cmd_degrade(args) -> int:
    stream = _load_stream(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    spatial = [args.resize, args.color_depth, args.blur, args.noise]
    if any(x for x in spatial) and not isinstance(stream, FrameSequence):
        raise ValueError("spatial degradations need --frames input")

    if isinstance(stream, FrameSequence):
        frames = []
        rng_seed = args.seed
        for i, frame in enumerate(stream.frames):
            if args.resize:
                frame = degrade.resize(frame, args.resize)
            if args.color_depth:
                frame = degrade.reduce_color_depth(frame, degrade.ColorDepthSpec(args.color_depth))
            if args.blur:
                frame = degrade.gaussian_blur(frame, degrade.BlurSpec())
            if args.noise:
                frame = degrade.add_gaussian_noise(
                    frame, degrade.NoiseSpec(variance=args.noise_var, seed=rng_seed + i))
            frames.append(frame)
        stream = FrameSequence(np.stack(frames), stream.timestamps, stream.nominal_fps)

    manifest = None
    if args.downsample_fps:
        stream, manifest = downsample_uniform(stream, args.downsample_fps)
    if args.drop_fraction is not None:
        stream, manifest = drop_random(stream, args.drop_fraction, args.seed)

    if isinstance(stream, FrameSequence):
        _write_frames(out / "frames", stream.frames)
    else:
        stream.to_csv(out / "trace.csv")
    if manifest is not None:
        manifest.to_csv(out / "drop_manifest.csv")
    print(out)
    return 0


def cmd_extract(args) -> int:
    stream = _load_stream(args)
    trace = mean_rgb(stream) if isinstance(stream, FrameSequence) else stream
    sig = methods.extract(trace, args.method)
    if args.signal_denoise == "tvs":
        sig = mitigate.tv_denoise_bvp(sig)
    sig.to_csv(args.out)
    if args.hr_out:
        hr_series(sig).to_csv(args.hr_out)
    print(args.out)
    return 0


def cmd_mitigate(args) -> int:
    out = Path(args.out)
    if args.denoise != "none":
        frames, ts, _ = load_frames_dir(args.frames, args.fps)
        done = []
        for frame in frames:
            if args.denoise == "nlm":
                done.append(mitigate.nlm_denoise(frame))
            else:
                done.append(mitigate.tv_denoise_image(frame))
        _write_frames(out / "frames", np.stack(done))
        print(out / "frames")
        return 0

    if args.mitigate == "s2":
        trace = RgbTrace.from_csv(args.trace, args.fps)
        target = args.target_fps or trace.nominal_fps
        fixed = mitigate.strategy2_reconstruct_trace(trace, target_fps=target)
        out.parent.mkdir(parents=True, exist_ok=True)
        fixed.to_csv(out)
        print(out)
        return 0

    if args.mitigate == "s1":
        manifest = DropManifest.from_csv(args.drop_manifest)
        window_s = args.window_s
        duration = manifest.total_original / manifest.nominal_fps
        count = int(np.floor(duration - window_s + 1e-9)) + 1
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            fh.write("t_start,n_samples,fs_hz\n")
            for k in range(count):
                t = manifest.original_timestamps
                n_w = int(np.count_nonzero((t >= k) & (t < k + window_s)))
                fs_w = mitigate.strategy1_effective_fps(n_w, window_s)
                fh.write(f"{k},{n_w},{'' if not np.isfinite(fs_w) else repr(fs_w)}\n")
        print(out)
        return 0

    # passthrough: surviving samples re-timed to the nominal grid
    trace = RgbTrace.from_csv(args.trace, args.fps)
    out.parent.mkdir(parents=True, exist_ok=True)
    mitigate.strategy0_passthrough(trace).to_csv(out)
    print(out)
    return 0


def _subjects_from_config(doc: dict, config_dir: Path) -> list[Subject]:
    subjects = []
    section = doc.get("subjects", {}) or {}
    if "manifest" in section:
        mpath = Path(section["manifest"])
        if not mpath.is_absolute():
            mpath = config_dir / mpath
        subjects.extend(ingest.load_manifest(mpath))
    for entry in section.get("synthetic", []) or []:
        entry = dict(entry)
        sid = str(entry.pop("id"))
        render = entry.pop("render", "frames")
        if "base_color" in entry:
            entry["base_color"] = tuple(entry["base_color"])
        spec = SynthSpec(**entry)
        if render == "trace":
            stream = synth_trace(spec)
            _, phase = synth_phase(spec)
            gt = GroundTruth.from_ppg(np.sin(phase), spec.fps)
        elif render == "frames":
            stream, gt = synth_subject(spec)
        else:
            raise ValueError(f"unknown render mode {render!r}")
        subjects.append(Subject(sid, stream, gt))
    if not subjects:
        raise ValueError("config names no subjects")
    return subjects


def cmd_evaluate(args) -> int:
    config_path = Path(args.config)
    with open(config_path) as fh:
        doc = yaml.safe_load(fh) or {}

    seed = int(os.environ.get("RPPG_SEED", doc.get("seed", 0)))
    subjects = _subjects_from_config(doc, config_path.parent)
    method_names = [str(m).lower() for m in doc.get("methods", list(methods.METHOD_NAMES))]
    degradations = [DegradationSpec(**d) for d in doc.get("degradations", [])]
    mitigations = [MitigationSpec(**m) for m in (doc.get("mitigations") or [{}])]

    wdoc = doc.get("window", {}) or {}
    cfg = WindowConfig(window_s=float(wdoc.get("window_s", 10.0)),
                       step_s=float(wdoc.get("step_s", 1.0)),
                       band=tuple(wdoc.get("band", (0.75, 4.0))),
                       nfft=int(wdoc.get("nfft", 4096)))

    jobs = args.jobs if args.jobs else (os.cpu_count() or 1)
    rep = run_matrix(subjects, degradations, mitigations, method_names,
                     cfg=cfg, base_seed=seed, jobs=jobs)
    rep.config["source_config"] = doc
    rep.config["schema_version"] = rep.schema_version
    path = write_report(rep, args.out, figures=args.figures, plot_data=args.plot_data)

    for row in rep.rows:
        status = row.error if row.error else (
            f"mae={row.mae:.3f}" if row.mae is not None else "mae=n/a")
        print(f"{row.subject} {row.method} {row.degradation}/{row.mitigation} {status}")
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rppgbench",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic pulse subject")
    p.add_argument("--out", required=True)
    p.add_argument("--id", default="synth")
    p.add_argument("--hr", type=float, default=72.0)
    p.add_argument("--hr-end", type=float, default=None)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--amplitude", type=float, default=4.0)
    p.add_argument("--base-color", default="140,110,95")
    p.add_argument("--noise-var", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=72)
    p.add_argument("--trace-only", action="store_true",
                   help="write the mean-color trace instead of frames")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("degrade", help="corrupt a trace or frame stream")
    p.add_argument("--trace")
    p.add_argument("--frames")
    p.add_argument("--fps", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resize", type=int)
    p.add_argument("--color-depth", type=int, choices=degrade.VALID_BIT_DEPTHS)
    p.add_argument("--blur", action="store_true")
    p.add_argument("--noise", action="store_true")
    p.add_argument("--noise-var", type=float, default=0.004)
    p.add_argument("--downsample-fps", type=float)
    p.add_argument("--drop-fraction", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("extract", help="extract a pulse signal from a stream")
    p.add_argument("--trace")
    p.add_argument("--frames")
    p.add_argument("--fps", type=float, required=True)
    p.add_argument("--method", required=True, choices=methods.METHOD_NAMES)
    p.add_argument("--signal-denoise", choices=("none", "tvs"), default="none")
    p.add_argument("--out", required=True)
    p.add_argument("--hr-out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("mitigate", help="repair a degraded stream")
    p.add_argument("--trace")
    p.add_argument("--frames")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--mitigate", choices=("none", "s1", "s2"), default="none")
    p.add_argument("--denoise", choices=("none", "nlm", "tvi"), default="none")
    p.add_argument("--drop-manifest")
    p.add_argument("--target-fps", type=float)
    p.add_argument("--window-s", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("evaluate", help="run the degradation/mitigation sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true",
                   help="render summary and per-cell figures next to the reports")
    p.add_argument("--plot-data", action="store_true",
                   help="write per-cell HR and spectrum CSVs")
    p.add_argument("--jobs", type=int, default=0,
                   help="worker threads (default: logical cores)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
