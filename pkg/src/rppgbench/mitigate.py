"""Mitigation strategies for degraded streams.

Covers the three responses to random frame dropping (ignore, per-window rate
recalculation, timestamp-based linear reconstruction), non-local-means and
total-variation denoising for frames, total-variation smoothing for extracted
pulse signals, occluder blanking, and Lab-space color transfer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.path import Path as _PolyPath
from scipy import ndimage
from skimage.restoration import denoise_tv_chambolle

from .core import BvpSignal, HrSeries, RgbTrace
from .hr import FILTER_ORDER, WindowConfig, bandpass_array, estimate_hr_window

DROP_STRATEGIES = ("s0", "s1", "s2")


# --- frame-drop strategies ----------------------------------------------------

def strategy0_passthrough(trace: RgbTrace) -> RgbTrace:
    """Pretend nothing was dropped: survivors re-timed to the nominal grid.

    This is the uncorrected baseline; with heavy losses the time axis
    compresses and estimated rates shift up accordingly.
    """
    n = len(trace)
    ts = np.arange(n) / trace.nominal_fps
    return RgbTrace(ts, trace.r, trace.g, trace.b, trace.nominal_fps)


def strategy1_effective_fps(window_sample_count: int, window_duration_s: float) -> float:
    """Receiver-side rate recalculation: samples per window over its duration."""
    if window_duration_s <= 0:
        raise ValueError("window duration must be positive")
    if window_sample_count == 0:
        return float("nan")
    return window_sample_count / window_duration_s


def hr_series_irregular(samples: np.ndarray, timestamps: np.ndarray,
                        cfg: WindowConfig = WindowConfig(),
                        duration: float | None = None) -> HrSeries:
    """Windowed heart rates from irregularly spaced samples (strategy 1).

    Samples are binned into [k, k + window_s) second windows by their original
    timestamps; each window is treated as uniform at its own recalculated rate
    for both the bandpass and the spectral estimate. Windows with too few
    samples (or a rate below twice the band edge) come back NaN.
    """
    samples = np.asarray(samples, dtype=np.float64)
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if samples.shape != timestamps.shape:
        raise ValueError("samples and timestamps must align")
    if duration is None:
        duration = float(timestamps[-1]) if len(timestamps) else 0.0
    if duration < cfg.window_s:
        raise ValueError("stream shorter than one window")
    count = int(np.floor(duration - cfg.window_s + 1e-9)) + 1
    # shortest window the zero-phase filter can pad (bandpass doubles the order)
    min_len = 3 * (2 * FILTER_ORDER) + 1

    starts = np.arange(count, dtype=np.float64) * cfg.step_s
    bpm = np.full(count, np.nan)
    for k, start in enumerate(starts):
        sel = (timestamps >= start) & (timestamps < start + cfg.window_s)
        n_w = int(np.count_nonzero(sel))
        fs_w = strategy1_effective_fps(n_w, cfg.window_s)
        if not np.isfinite(fs_w) or fs_w <= 2 * cfg.band[1] or n_w < min_len:
            continue
        window = bandpass_array(samples[sel], fs_w, cfg.band)
        bpm[k] = estimate_hr_window(window, fs_w, cfg)
    return HrSeries(starts, bpm)


def strategy2_reconstruct(samples: np.ndarray, timestamps: np.ndarray,
                          target_fps: float) -> np.ndarray:
    """Rebuild a uniform signal by linear interpolation at the target rate.

    The grid runs t = 0, 1/fps, ... up to the last surviving timestamp; grid
    points outside the surviving span take the nearest endpoint value.
    """
    samples = np.asarray(samples, dtype=np.float64)
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if len(samples) < 2:
        raise ValueError("need at least 2 surviving samples to reconstruct")
    if np.any(np.diff(timestamps) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    if target_fps <= 0:
        raise ValueError("target fps must be positive")
    n_out = int(np.floor(timestamps[-1] * target_fps + 1e-9)) + 1
    grid = np.arange(n_out) / target_fps
    return np.interp(grid, timestamps, samples)


def strategy2_reconstruct_trace(trace: RgbTrace, target_fps: float | None = None) -> RgbTrace:
    """Channel-wise linear reconstruction of a dropped trace onto a uniform grid."""
    fps = trace.nominal_fps if target_fps is None else target_fps
    r = strategy2_reconstruct(trace.r, trace.timestamps, fps)
    g = strategy2_reconstruct(trace.g, trace.timestamps, fps)
    b = strategy2_reconstruct(trace.b, trace.timestamps, fps)
    ts = np.arange(len(r)) / fps
    return RgbTrace(ts, r, g, b, fps)


# --- image denoisers ----------------------------------------------------------

@dataclass(frozen=True)
class NlmParams:
    """Non-local-means parameters (strengths on the 0-255 scale)."""

    strength_luma: float = 15.0
    strength_chroma: float = 15.0
    template: int = 7
    search: int = 21

    def __post_init__(self):
        if self.template % 2 == 0 or self.search % 2 == 0:
            raise ValueError("template and search sizes must be odd")
        if not self.template < self.search:
            raise ValueError("template patch must be smaller than the search window")
        if self.strength_luma < 0 or self.strength_chroma < 0:
            raise ValueError("filter strengths must be non-negative")


def _rgb_to_ycc(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def _ycc_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _nlm_channel(u: np.ndarray, h: float, template: int, search: int) -> np.ndarray:
    """Plain non-local means on one channel.

    Every pixel becomes the weighted mean of the pixels in its search window,
    weighted by exp(-d2 / h^2) where d2 is the mean squared difference of the
    two template patches (no noise pre-subtraction). Borders are handled by
    reflection. h == 0 degenerates to the identity.
    """
    if h == 0:
        return u.copy()
    t = template // 2
    s = search // 2
    hgt, wid = u.shape
    padded = np.pad(u, t + s, mode="reflect")
    # canvas carries a t-ring of context so patch means near borders are exact
    center = padded[s:s + hgt + 2 * t, s:s + wid + 2 * t]
    num = np.zeros((hgt, wid))
    den = np.zeros((hgt, wid))
    inv_h2 = 1.0 / (h * h)
    for dy in range(-s, s + 1):
        for dx in range(-s, s + 1):
            shifted = padded[s + dy:s + dy + hgt + 2 * t, s + dx:s + dx + wid + 2 * t]
            d2 = ndimage.uniform_filter((center - shifted) ** 2, size=template)
            d2 = d2[t:t + hgt, t:t + wid]
            w = np.exp(-d2 * inv_h2)
            num += w * shifted[t:t + hgt, t:t + wid]
            den += w
    return num / den


def nlm_denoise(frame: np.ndarray, p: NlmParams = NlmParams()) -> np.ndarray:
    """Non-local means over luma and chroma planes with separate strengths."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[-1] != 3 or frame.dtype != np.uint8:
        raise ValueError("expected an (H, W, 3) uint8 frame")
    if frame.shape[0] < p.search or frame.shape[1] < p.search:
        raise ValueError(f"frame smaller than the {p.search}x{p.search} search window")
    ycc = _rgb_to_ycc(frame.astype(np.float64))
    out = np.empty_like(ycc)
    out[..., 0] = _nlm_channel(ycc[..., 0], p.strength_luma, p.template, p.search)
    for c in (1, 2):
        out[..., c] = _nlm_channel(ycc[..., c], p.strength_chroma, p.template, p.search)
    rgb = _ycc_to_rgb(out)
    return np.rint(np.clip(rgb, 0.0, 255.0)).astype(np.uint8)


@dataclass(frozen=True)
class TvParams:
    """Total-variation denoising knobs (projection-algorithm solver)."""

    weight: float = 0.25
    eps: float = 0.0002
    max_iters: int = 200

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("weight must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def tv_denoise_image(frame: np.ndarray, p: TvParams = TvParams()) -> np.ndarray:
    """Total-variation smoothing per frame on the [0, 1] intensity scale."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[-1] != 3 or frame.dtype != np.uint8:
        raise ValueError("expected an (H, W, 3) uint8 frame")
    if p.weight == 0:
        return frame.copy()
    x = frame.astype(np.float64) / 255.0
    out = denoise_tv_chambolle(x, weight=p.weight, eps=p.eps,
                               max_num_iter=p.max_iters, channel_axis=-1)
    return np.rint(np.clip(out, 0.0, 1.0) * 255.0).astype(np.uint8)


def tv_denoise_signal(samples: np.ndarray, p: TvParams = TvParams()) -> np.ndarray:
    """1-D total-variation smoothing of a pulse signal."""
    x = np.asarray(samples, dtype=np.float64)
    if p.weight == 0:
        return x.copy()
    return denoise_tv_chambolle(x, weight=p.weight, eps=p.eps, max_num_iter=p.max_iters)


def tv_denoise_bvp(sig: BvpSignal, p: TvParams = TvParams()) -> BvpSignal:
    """TV-smooth an extracted signal on its standardized scale.

    The weight is calibrated for unit-variance input, so the signal is
    standardized first and rescaled after; the mean is re-removed.
    """
    sd = sig.samples.std()
    if sd == 0 or p.weight == 0:
        return BvpSignal(sig.samples, sig.fs, degenerate=sig.degenerate)
    y = tv_denoise_signal(sig.samples / sd, p) * sd
    return BvpSignal(y - y.mean(), sig.fs, degenerate=sig.degenerate)


# --- occlusion repair ---------------------------------------------------------

def skin_only(frame: np.ndarray, occluder_polygon) -> np.ndarray:
    """Black out the occluder region so trace extraction skips it.

    The polygon is an (K, 2) list of (x, y) vertices; pixels whose centers
    fall inside become (0, 0, 0), which the mean-color stage treats as
    background. Fewer than 3 vertices is a no-op.
    """
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[-1] != 3 or frame.dtype != np.uint8:
        raise ValueError("expected an (H, W, 3) uint8 frame")
    poly = np.asarray(occluder_polygon, dtype=np.float64).reshape(-1, 2)
    if len(poly) < 3:
        return frame.copy()
    h, w = frame.shape[:2]
    xx, yy = np.meshgrid(np.arange(w), np.arange(h))
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    inside = _PolyPath(poly).contains_points(pts).reshape(h, w)
    out = frame.copy()
    out[inside] = 0
    return out


# --- Lab color transfer -------------------------------------------------------

_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_LAB_DELTA = 6.0 / 29.0


@dataclass(frozen=True)
class LabStats:
    """Per-channel L*, a*, b* mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(3))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64).reshape(3))


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB (0-255) to CIE L*a*b* under the D65 white point."""
    srgb = np.asarray(rgb, dtype=np.float64) / 255.0
    linear = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T / _D65_WHITE
    f = np.where(xyz > _LAB_DELTA ** 3,
                 np.cbrt(xyz),
                 xyz / (3 * _LAB_DELTA ** 2) + 4.0 / 29.0)
    l = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([l, a, b], axis=-1)


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """CIE L*a*b* back to sRGB floats on the 0-255 scale (not clamped)."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f > _LAB_DELTA, f ** 3, 3 * _LAB_DELTA ** 2 * (f - 4.0 / 29.0))
    linear = (xyz * _D65_WHITE) @ _XYZ_TO_SRGB.T
    srgb = np.where(linear <= 0.0031308,
                    12.92 * linear,
                    1.055 * np.maximum(linear, 0.0) ** (1 / 2.4) - 0.055)
    return srgb * 255.0


def lab_stats(lab_pixels: np.ndarray) -> LabStats:
    lab = np.asarray(lab_pixels, dtype=np.float64).reshape(-1, 3)
    if len(lab) == 0:
        raise ValueError("no pixels to measure")
    return LabStats(lab.mean(axis=0), lab.std(axis=0))


def transfer_lab_stats(lab_pixels: np.ndarray, src: LabStats, target: LabStats) -> np.ndarray:
    """Affine per-channel map taking src statistics onto the target's.

    Channels whose source deviation is zero are shifted by the mean
    difference only.
    """
    lab = np.asarray(lab_pixels, dtype=np.float64)
    out = np.empty_like(lab)
    for c in range(3):
        if src.std[c] == 0:
            out[..., c] = lab[..., c] + (target.mean[c] - src.mean[c])
        else:
            gain = target.std[c] / src.std[c]
            out[..., c] = (lab[..., c] - src.mean[c]) * gain + target.mean[c]
    return out


def color_transfer_lab(region: np.ndarray, target: LabStats) -> np.ndarray:
    """Re-color pixels so their Lab statistics match the target's.

    region is any (..., 3) uint8 pixel collection; the result is converted
    back to sRGB and clamped to gamut.
    """
    region = np.asarray(region)
    if region.size == 0:
        raise ValueError("empty region")
    lab = rgb_to_lab(region)
    mapped = transfer_lab_stats(lab, lab_stats(lab), target)
    rgb = lab_to_rgb(mapped)
    return np.rint(np.clip(rgb, 0.0, 255.0)).astype(np.uint8)
