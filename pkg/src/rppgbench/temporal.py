"""Frame-rate reduction and network-style random frame dropping.

Both operations work on FrameSequence and RgbTrace inputs alike and return
the surviving stream together with a DropManifest recording which original
indices (and their timestamps) made it through, which is exactly what the
timestamp-based mitigation needs on the receiving side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import FrameSequence, RgbTrace, _frozen_array


@dataclass(frozen=True)
class DropManifest:
    """Record of surviving frames: original indices and their timestamps."""

    kept_indices: np.ndarray
    original_timestamps: np.ndarray
    nominal_fps: float
    total_original: int

    def __post_init__(self):
        idx = _frozen_array(self.kept_indices, dtype=np.int64)
        ts = _frozen_array(self.original_timestamps, dtype=np.float64)
        if idx.shape != ts.shape:
            raise ValueError("indices and timestamps must align")
        if len(idx) and (np.any(np.diff(idx) <= 0)):
            raise ValueError("kept indices must be strictly increasing")
        if len(idx) and (idx[0] < 0 or idx[-1] >= self.total_original):
            raise ValueError("kept indices outside the original range")
        object.__setattr__(self, "kept_indices", idx)
        object.__setattr__(self, "original_timestamps", ts)

    def __len__(self) -> int:
        return len(self.kept_indices)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# nominal_fps={self.nominal_fps!r} total_original={self.total_original}\n")
            w = csv.writer(fh)
            w.writerow(["kept_index", "timestamp"])
            for i, t in zip(self.kept_indices, self.original_timestamps):
                w.writerow([int(i), repr(float(t))])

    @classmethod
    def from_csv(cls, path) -> "DropManifest":
        with open(path, newline="") as fh:
            meta = fh.readline().strip()
            if not meta.startswith("#"):
                raise ValueError(f"{path}: missing manifest metadata line")
            fields = dict(part.split("=", 1) for part in meta[1:].split())
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["kept_index", "timestamp"]:
                raise ValueError(f"{path}: expected header kept_index,timestamp")
            idx, ts = [], []
            for row in reader:
                if not row:
                    continue
                idx.append(int(row[0]))
                ts.append(float(row[1]))
        return cls(np.array(idx, dtype=np.int64), np.array(ts),
                   float(fields["nominal_fps"]), int(fields["total_original"]))


def _take(stream, indices: np.ndarray, nominal_fps: float):
    """Subset a FrameSequence or RgbTrace by original frame index."""
    if isinstance(stream, FrameSequence):
        masks = stream.skin_masks[indices] if stream.skin_masks is not None else None
        lms = (tuple(stream.landmarks[i] for i in indices)
               if stream.landmarks is not None else None)
        return FrameSequence(stream.frames[indices], stream.timestamps[indices],
                             nominal_fps, masks, lms)
    if isinstance(stream, RgbTrace):
        return RgbTrace(stream.timestamps[indices], stream.r[indices],
                        stream.g[indices], stream.b[indices], nominal_fps)
    raise TypeError(f"unsupported stream type {type(stream).__name__}")


def apply_manifest(stream, manifest: DropManifest):
    """Re-apply a manifest's kept indices to the original stream."""
    return _take(stream, manifest.kept_indices, manifest.nominal_fps)


def downsample_uniform(stream, target_fps: float):
    """Drop frames at the regular rate that lands nearest the target fps.

    Keeps original index floor(k * nominal / target) for k = 0, 1, ...
    (duplicates removed), so 30 -> 10 fps keeps every third frame. Survivors
    keep their original timestamps; the result claims the new nominal rate.
    """
    nominal = stream.nominal_fps
    n = len(stream.timestamps)
    if target_fps <= 0 or target_fps > nominal:
        raise ValueError("target fps must be positive and not exceed the nominal rate")
    ratio = nominal / target_fps
    k = np.arange(int(np.ceil(n / ratio)) + 1)
    idx = np.unique(np.floor(k * ratio).astype(np.int64))
    idx = idx[idx < n]
    degraded = _take(stream, idx, target_fps)
    manifest = DropManifest(idx, stream.timestamps[idx], nominal, n)
    return degraded, manifest


def drop_random(stream, fraction: float, seed: int):
    """Remove exactly round(fraction * N) frames, chosen uniformly (PCG64).

    Survivor order and timestamps are preserved; the manifest records both.
    """
    if not 0 <= fraction < 1:
        raise ValueError("drop fraction must lie in [0, 1)")
    n = len(stream.timestamps)
    n_drop = int(round(fraction * n))
    rng = np.random.default_rng(seed)
    dropped = rng.choice(n, size=n_drop, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[dropped] = False
    idx = np.nonzero(keep)[0].astype(np.int64)
    degraded = _take(stream, idx, stream.nominal_fps)
    manifest = DropManifest(idx, stream.timestamps[idx], stream.nominal_fps, n)
    return degraded, manifest
