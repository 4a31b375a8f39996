"""Subject ingestion from dataset manifests.

A manifest is a YAML file listing subjects; each entry points at either a
directory of losslessly coded frames (PNG or binary PPM, ordered by filename)
or a mean-color trace CSV, plus its reference recording. Relative paths
resolve against the manifest's own directory.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .core import FrameSequence, GroundTruth, HrSeries, LandmarkSet, RgbTrace
from .evaluate import Subject

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class IngestError(ValueError):
    """Raised with the offending manifest entry's id in the message."""


def _require_lossless(path: Path) -> None:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[: len(_PNG_MAGIC)] == _PNG_MAGIC or head[:2] in (b"P6", b"P5"):
        return
    raise ValueError(f"{path.name}: not a PNG or binary PPM file")


def load_frames_dir(dirpath, nominal_fps: float):
    """Stack a directory of images (lexicographic order) into a uint8 array."""
    dirpath = Path(dirpath)
    paths = sorted(p for p in dirpath.iterdir() if p.is_file())
    if not paths:
        raise ValueError(f"{dirpath}: no frame files")
    frames = []
    for p in paths:
        _require_lossless(p)
        frames.append(np.array(Image.open(p).convert("RGB"), dtype=np.uint8))
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise ValueError(f"{dirpath}: frames disagree on size: {sorted(shapes)}")
    stack = np.stack(frames)
    ts = np.arange(len(stack)) / nominal_fps
    return stack, ts, paths


def _load_masks(mask_dir, frame_paths, shape):
    masks = np.zeros((len(frame_paths),) + shape, dtype=bool)
    mask_dir = Path(mask_dir)
    for i, p in enumerate(frame_paths):
        mp = mask_dir / p.name
        if not mp.exists():
            raise ValueError(f"missing mask for frame {p.name}")
        m = np.array(Image.open(mp).convert("L"))
        if m.shape != shape:
            raise ValueError(f"mask {mp.name} does not match the frame size")
        masks[i] = m > 127
    return masks


def _load_landmarks(path, n_frames: int, semantics: dict):
    """Parse `frame_idx x y` lines into one LandmarkSet per frame."""
    per_frame: list[list[tuple[float, float]]] = [[] for _ in range(n_frames)]
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"landmarks line {lineno}: expected `idx x y`")
            idx = int(parts[0])
            if not 0 <= idx < n_frames:
                raise ValueError(f"landmarks line {lineno}: frame index {idx} out of range")
            per_frame[idx].append((float(parts[1]), float(parts[2])))
    nose = int(semantics.get("nose_bridge", 0))
    outline = tuple(int(i) for i in semantics.get("mask_outline", ()))
    eyes = semantics.get("eye_outer")
    eyes = (int(eyes[0]), int(eyes[1])) if eyes else None
    sets = []
    for idx, pts in enumerate(per_frame):
        if not pts:
            raise ValueError(f"no landmarks for frame {idx}")
        sets.append(LandmarkSet(np.array(pts), nose, outline, eyes))
    return tuple(sets)


def load_ppg_csv(path) -> GroundTruth:
    """Reference waveform CSV with header `t,ppg`; rate inferred from t."""
    t, v = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["t", "ppg"]:
            raise ValueError(f"{path}: expected header t,ppg")
        for row in reader:
            if not row:
                continue
            t.append(float(row[0]))
            v.append(float(row[1]))
    if len(t) < 2:
        raise ValueError(f"{path}: need at least 2 reference samples")
    t = np.array(t)
    if np.any(np.diff(t) <= 0):
        raise ValueError(f"{path}: reference timestamps not strictly increasing")
    fs = (len(t) - 1) / (t[-1] - t[0])
    return GroundTruth.from_ppg(np.array(v), fs)


def write_ppg_csv(path, samples, fs: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "ppg"])
        for k, v in enumerate(np.asarray(samples, dtype=np.float64)):
            w.writerow([repr(k / fs), repr(float(v))])


def load_manifest(path) -> list[Subject]:
    """Load and validate every subject named by a manifest file."""
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "subjects" not in doc:
        raise IngestError(f"{path}: manifest needs a top-level `subjects` list")
    root = path.parent
    subjects = []
    for entry in doc["subjects"]:
        sid = str(entry.get("id", "<missing id>"))
        try:
            subjects.append(_load_entry(entry, root, sid))
        except Exception as exc:
            raise IngestError(f"entry {sid!r}: {exc}") from exc
    return subjects


def _resolve(root: Path, p) -> Path:
    p = Path(p)
    out = p if p.is_absolute() else root / p
    if not out.exists():
        raise ValueError(f"path does not exist: {out}")
    return out


def _load_entry(entry: dict, root: Path, sid: str) -> Subject:
    fps = float(entry["nominal_fps"])
    if fps <= 0:
        raise ValueError("nominal_fps must be positive")

    gt_kind = entry.get("gt_kind", "ppg")
    gt_path = _resolve(root, entry["gt_path"])
    if gt_kind == "ppg":
        gt = load_ppg_csv(gt_path)
    elif gt_kind == "hr":
        gt = GroundTruth.from_hr(HrSeries.from_csv(gt_path))
    else:
        raise ValueError(f"unknown gt_kind {gt_kind!r}")

    if "trace_csv" in entry:
        trace = RgbTrace.from_csv(_resolve(root, entry["trace_csv"]), fps)
        return Subject(sid, trace, gt)

    frames, ts, frame_paths = load_frames_dir(_resolve(root, entry["frames_dir"]), fps)
    masks = None
    if entry.get("mask_dir"):
        masks = _load_masks(_resolve(root, entry["mask_dir"]), frame_paths, frames.shape[1:3])
    landmarks = None
    if entry.get("landmarks_path"):
        landmarks = _load_landmarks(_resolve(root, entry["landmarks_path"]),
                                    len(frames), entry.get("landmark_semantics", {}))
    seq = FrameSequence(frames, ts, fps, masks, landmarks)
    return Subject(sid, seq, gt)
