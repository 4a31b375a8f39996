"""Shared data model: frame sequences, RGB traces, pulse signals, HR series.

All container types are immutable after construction (frozen dataclasses over
read-only numpy arrays) and every operation in this package is a pure function
of its inputs, so everything here is safe to share across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np


def _frozen_array(values, dtype=None) -> np.ndarray:
    """Copy into a read-only array so frozen dataclasses stay frozen."""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def _check_strictly_increasing(t: np.ndarray, what: str) -> None:
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        raise ValueError(f"{what} must be strictly increasing")


@dataclass(frozen=True)
class LandmarkSet:
    """Facial landmark points plus the semantic indices the occluders need.

    points: (P, 2) array of (x, y) pixel coordinates.
    nose_bridge: index of the nose-bridge anchor point.
    mask_outline: 22 distinct indices tracing the chin / face outline that a
        facemask template is pinned to (empty when unavailable).
    eye_outer: optional (left, right) indices of the outer eye corners.
    """

    points: np.ndarray
    nose_bridge: int
    mask_outline: tuple[int, ...] = ()
    eye_outer: Optional[tuple[int, int]] = None

    def __post_init__(self):
        pts = _frozen_array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("landmark points must be an (P, 2) array")
        object.__setattr__(self, "points", pts)
        n = len(pts)
        indices = [self.nose_bridge, *self.mask_outline]
        if self.eye_outer is not None:
            if len(self.eye_outer) != 2:
                raise ValueError("eye_outer must hold (left, right) indices")
            indices.extend(self.eye_outer)
        for i in indices:
            if not 0 <= int(i) < n:
                raise ValueError(f"landmark index {i} out of range (have {n} points)")
        outline = tuple(int(i) for i in self.mask_outline)
        if outline and len(outline) != 22:
            raise ValueError("mask outline needs exactly 22 indices")
        if len(set(outline)) != len(outline):
            raise ValueError("mask outline indices must be distinct")
        object.__setattr__(self, "mask_outline", outline)

    def outline_points(self) -> np.ndarray:
        """The 22 (x, y) outline coordinates, in outline order."""
        if not self.mask_outline:
            raise ValueError("landmark set has no mask outline indices")
        return self.points[list(self.mask_outline)]


@dataclass(frozen=True)
class FrameSequence:
    """A timestamped stream of 8-bit RGB face crops.

    frames: (N, H, W, 3) uint8 array.
    timestamps: seconds, strictly increasing, one per frame.
    nominal_fps: the advertised capture rate (the true spacing may differ
        after frames are dropped).
    skin_masks: optional (N, H, W) boolean array marking skin pixels.
    landmarks: optional per-frame LandmarkSet.
    """

    frames: np.ndarray
    timestamps: np.ndarray
    nominal_fps: float
    skin_masks: Optional[np.ndarray] = None
    landmarks: Optional[tuple[LandmarkSet, ...]] = None

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError("frames must be an (N, H, W, 3) array")
        if frames.dtype != np.uint8:
            raise ValueError("frames must be 8-bit (uint8)")
        object.__setattr__(self, "frames", _frozen_array(frames))
        ts = _frozen_array(self.timestamps, dtype=np.float64)
        if ts.shape != (len(frames),):
            raise ValueError("need exactly one timestamp per frame")
        _check_strictly_increasing(ts, "timestamps")
        object.__setattr__(self, "timestamps", ts)
        if not self.nominal_fps > 0:
            raise ValueError("nominal_fps must be positive")
        if self.skin_masks is not None:
            masks = _frozen_array(self.skin_masks, dtype=bool)
            if masks.shape != frames.shape[:3]:
                raise ValueError("skin masks must match frame count and size")
            object.__setattr__(self, "skin_masks", masks)
        if self.landmarks is not None:
            lms = tuple(self.landmarks)
            if len(lms) != len(frames):
                raise ValueError("need exactly one landmark set per frame")
            h, w = frames.shape[1:3]
            for k, lm in enumerate(lms):
                pts = lm.points
                if len(pts) and (
                    pts[:, 0].min() < 0 or pts[:, 0].max() >= w
                    or pts[:, 1].min() < 0 or pts[:, 1].max() >= h
                ):
                    raise ValueError(f"frame {k}: landmark outside frame bounds")
            object.__setattr__(self, "landmarks", lms)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def replace_frames(self, frames: np.ndarray) -> "FrameSequence":
        """Same stream with every frame substituted (e.g. after filtering)."""
        return FrameSequence(frames, self.timestamps, self.nominal_fps,
                             self.skin_masks, self.landmarks)


@dataclass(frozen=True)
class RgbTrace:
    """Per-frame spatial-mean RGB time series on the 0-255 scale."""

    timestamps: np.ndarray
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    nominal_fps: float

    def __post_init__(self):
        ts = _frozen_array(self.timestamps, dtype=np.float64)
        chans = {}
        for name in ("r", "g", "b"):
            c = _frozen_array(getattr(self, name), dtype=np.float64)
            if c.shape != ts.shape:
                raise ValueError("trace channels and timestamps must have equal length")
            if len(c) and (c.min() < 0 or c.max() > 255):
                raise ValueError(f"channel {name} leaves the [0, 255] range")
            chans[name] = c
        _check_strictly_increasing(ts, "timestamps")
        if not self.nominal_fps > 0:
            raise ValueError("nominal_fps must be positive")
        object.__setattr__(self, "timestamps", ts)
        for name, c in chans.items():
            object.__setattr__(self, name, c)

    def __len__(self) -> int:
        return len(self.timestamps)

    def as_matrix(self) -> np.ndarray:
        """(N, 3) float matrix with columns R, G, B."""
        return np.stack([self.r, self.g, self.b], axis=1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "r", "g", "b"])
            for t, r, g, b in zip(self.timestamps, self.r, self.g, self.b):
                w.writerow([repr(float(t)), repr(float(r)), repr(float(g)), repr(float(b))])

    @classmethod
    def from_csv(cls, path, nominal_fps: float) -> "RgbTrace":
        t, r, g, b = [], [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["t", "r", "g", "b"]:
                raise ValueError(f"{path}: expected header t,r,g,b")
            for row in reader:
                if not row:
                    continue
                t.append(float(row[0]))
                r.append(float(row[1]))
                g.append(float(row[2]))
                b.append(float(row[3]))
        return cls(np.array(t), np.array(r), np.array(g), np.array(b), nominal_fps)


@dataclass(frozen=True)
class BvpSignal:
    """Extracted blood-volume-pulse samples at an effective sampling rate.

    degenerate flags inputs where the extractor had to fall back (for example
    a zero-variance chrominance channel on a constant trace).
    """

    samples: np.ndarray
    fs: float
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples, dtype=np.float64))
        if not self.fs > 0:
            raise ValueError("sampling rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# fs={self.fs!r}\n")
            fh.write("sample\n")
            for v in self.samples:
                fh.write(repr(float(v)) + "\n")

    @classmethod
    def from_csv(cls, path) -> "BvpSignal":
        with open(path, newline="") as fh:
            meta = fh.readline().strip()
            if not meta.startswith("# fs="):
                raise ValueError(f"{path}: missing `# fs=` metadata line")
            fs = float(meta[len("# fs="):])
            header = fh.readline().strip()
            if header != "sample":
                raise ValueError(f"{path}: expected header `sample`")
            samples = [float(line) for line in fh if line.strip()]
        return cls(np.array(samples), fs)


@dataclass(frozen=True)
class HrSeries:
    """Per-window heart-rate estimates; NaN marks a window with no estimate."""

    window_start: np.ndarray
    hr_bpm: np.ndarray

    def __post_init__(self):
        starts = _frozen_array(self.window_start, dtype=np.float64)
        bpm = _frozen_array(self.hr_bpm, dtype=np.float64)
        if starts.shape != bpm.shape:
            raise ValueError("window starts and estimates must align")
        _check_strictly_increasing(starts, "window starts")
        if len(starts) > 1 and not np.allclose(np.diff(starts), 1.0):
            raise ValueError("window starts must advance in 1 s steps")
        valid = bpm[np.isfinite(bpm)]
        if len(valid) and (valid.min() < 45.0 or valid.max() > 240.0):
            raise ValueError("heart-rate estimates must stay within 45-240 bpm")
        object.__setattr__(self, "window_start", starts)
        object.__setattr__(self, "hr_bpm", bpm)

    def __len__(self) -> int:
        return len(self.window_start)

    @property
    def n_missing(self) -> int:
        return int(np.sum(~np.isfinite(self.hr_bpm)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_start", "hr_bpm"])
            for t, v in zip(self.window_start, self.hr_bpm):
                w.writerow([repr(float(t)), "" if not np.isfinite(v) else repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "HrSeries":
        t, v = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["t_start", "hr_bpm"]:
                raise ValueError(f"{path}: expected header t_start,hr_bpm")
            for row in reader:
                if not row:
                    continue
                t.append(float(row[0]))
                v.append(float(row[1]) if row[1] != "" else np.nan)
        return cls(np.array(t), np.array(v))


@dataclass(frozen=True)
class GroundTruth:
    """Reference physiology: either a PPG waveform or a precomputed HR series."""

    kind: str  # "ppg" | "hr"
    ppg: Optional[BvpSignal] = None
    hr: Optional[HrSeries] = None

    def __post_init__(self):
        if self.kind == "ppg":
            if self.ppg is None:
                raise ValueError("kind 'ppg' requires a waveform")
        elif self.kind == "hr":
            if self.hr is None:
                raise ValueError("kind 'hr' requires an HR series")
        else:
            raise ValueError(f"unknown ground-truth kind {self.kind!r}")

    @classmethod
    def from_ppg(cls, samples, fs: float) -> "GroundTruth":
        return cls(kind="ppg", ppg=BvpSignal(samples, fs))

    @classmethod
    def from_hr(cls, series: HrSeries) -> "GroundTruth":
        return cls(kind="hr", hr=series)


def mean_rgb(seq: FrameSequence) -> RgbTrace:
    """Collapse each frame to its mean skin-pixel color.

    With a skin mask present only masked pixels count; otherwise pixels that
    are exactly (0, 0, 0) are treated as blacked-out background and excluded.
    Means are real-valued (no requantization). A frame with zero skin pixels
    is an error naming the frame index.
    """
    n = len(seq)
    means = np.empty((n, 3), dtype=np.float64)
    for i in range(n):
        frame = seq.frames[i]
        if seq.skin_masks is not None:
            mask = seq.skin_masks[i]
        else:
            mask = frame.any(axis=-1)
        count = int(np.count_nonzero(mask))
        if count == 0:
            raise ValueError(f"frame {i}: no skin pixels to average")
        means[i] = frame[mask].mean(axis=0, dtype=np.float64)
    return RgbTrace(seq.timestamps, means[:, 0], means[:, 1], means[:, 2],
                    seq.nominal_fps)


def resample_check(obj) -> float:
    """Effective sampling rate of a sequence or trace from its timestamp span."""
    ts = obj.timestamps
    if len(ts) < 2:
        raise ValueError("need at least 2 samples to measure a rate")
    span = float(ts[-1] - ts[0])
    if span <= 0:
        raise ValueError("zero-duration timestamp span")
    return (len(ts) - 1) / span


def uniform_sequence(trace: RgbTrace, size: int = 72) -> FrameSequence:
    """Frames of uniform color matching the trace (debug / synthesis helper).

    Trace values are rounded to 8-bit, so round-tripping through mean_rgb is
    exact only for integer-valued traces.
    """
    vals = np.rint(trace.as_matrix()).astype(np.uint8)
    frames = np.broadcast_to(vals[:, None, None, :], (len(trace), size, size, 3))
    masks = np.ones((len(trace), size, size), dtype=bool)
    return FrameSequence(np.ascontiguousarray(frames), trace.timestamps,
                         trace.nominal_fps, skin_masks=masks)
