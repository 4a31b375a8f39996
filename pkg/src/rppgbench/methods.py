"""Classical blood-volume-pulse extraction from mean-RGB traces.

Four extractors, selected by name: the green channel baseline, the
chrominance-combination method, the plane-orthogonal-to-skin projection, and
the QR-orthogonalized intensity-rejection method. All of them return a
zero-mean signal at the trace's nominal rate and are invariant (the green
baseline: equivariant) to a uniform gain on all channels.
"""

from __future__ import annotations

import numpy as np

from .core import BvpSignal, RgbTrace
from .hr import bandpass_array

METHOD_NAMES = ("green", "chrom", "pos", "omit")

# absolute std threshold deciding that a normalized projection carries no
# signal (channels are ~1 after mean normalization, so this is conservative)
_DEGENERATE_STD = 1e-12

POS_WINDOW_S = 1.6


def _channel_means(trace: RgbTrace) -> np.ndarray:
    m = np.array([trace.r.mean(), trace.g.mean(), trace.b.mean()])
    if np.any(m == 0):
        raise ValueError("trace has an all-zero channel; cannot mean-normalize")
    return m


def extract_green(trace: RgbTrace) -> BvpSignal:
    """Mean-removed green channel."""
    if len(trace) < 2:
        raise ValueError("trace too short")
    g = trace.g - trace.g.mean()
    return BvpSignal(g, trace.nominal_fps)


def _chrom_segment(r, g, b, fs):
    """One chrominance mix over a span: returns (samples, degenerate)."""
    means = np.array([r.mean(), g.mean(), b.mean()])
    if np.any(means == 0):
        raise ValueError("trace has an all-zero channel; cannot mean-normalize")
    rn, gn, bn = r / means[0], g / means[1], b / means[2]
    x = 3.0 * rn - 2.0 * gn
    y = 1.5 * rn + gn - 1.5 * bn
    xf = bandpass_array(x, fs, (0.75, 4.0))
    yf = bandpass_array(y, fs, (0.75, 4.0))
    sy = yf.std()
    degenerate = bool(sy < _DEGENERATE_STD)
    alpha = 1.0 if degenerate else xf.std() / sy
    return xf - alpha * yf, degenerate


def extract_chrom(trace: RgbTrace, window_s: float | None = None) -> BvpSignal:
    """Chrominance combination with adaptive alpha mixing.

    Channels are normalized by their means, combined into the two
    chrominance axes X = 3R - 2G and Y = 1.5R + G - 1.5B, both bandpassed
    with the heart-rate filter, and mixed as X - (sd X / sd Y) * Y. A
    zero-variance Y (constant input) falls back to alpha = 1 and flags the
    output as degenerate.

    By default the normalization spans the whole trace; pass window_s to use
    the per-window variant instead (non-overlapping spans, concatenated).
    """
    fs = trace.nominal_fps
    if len(trace) < 2 * fs:
        raise ValueError("chrominance extraction needs at least 2 s of trace")
    if window_s is None:
        s, degenerate = _chrom_segment(trace.r, trace.g, trace.b, fs)
    else:
        l = int(round(window_s * fs))
        if l < 2 * fs:
            raise ValueError("per-window variant needs windows of at least 2 s")
        s = np.empty(len(trace))
        degenerate = False
        start = 0
        while start < len(trace):
            stop = min(start + l, len(trace))
            if len(trace) - start < l and start > 0:
                start = len(trace) - l  # final span backs up to full length
                stop = len(trace)
            seg, flag = _chrom_segment(trace.r[start:stop], trace.g[start:stop],
                                       trace.b[start:stop], fs)
            s[start:stop] = seg
            degenerate = degenerate or flag
            start = stop
    return BvpSignal(s - s.mean(), fs, degenerate=degenerate)


def extract_pos(trace: RgbTrace, window_s: float = POS_WINDOW_S) -> BvpSignal:
    """Plane-orthogonal-to-skin projection over overlap-added sliding windows.

    Within each window of round(window_s * fs) samples the channels are
    normalized by their window means and projected onto S1 = G - B and
    S2 = -2R + G + B; the window contributes S1 + (sd S1 / sd S2) * S2,
    mean-removed, added in place. Windows where S2 has no variance
    contribute S1 alone and mark the output degenerate.
    """
    fs = trace.nominal_fps
    l = int(round(window_s * fs))
    n = len(trace)
    if n < l:
        raise ValueError(f"trace shorter than one {window_s:g} s projection window")
    c = trace.as_matrix().T  # (3, N)
    out = np.zeros(n)
    degenerate = False
    for i in range(n - l + 1):
        seg = c[:, i:i + l]
        means = seg.mean(axis=1)
        if np.any(means == 0):
            raise ValueError("window has an all-zero channel; cannot mean-normalize")
        cn = seg / means[:, None]
        s1 = cn[1] - cn[2]
        s2 = -2.0 * cn[0] + cn[1] + cn[2]
        sd2 = s2.std()
        if sd2 < _DEGENERATE_STD:
            h = s1
            degenerate = True
        else:
            h = s1 + (s1.std() / sd2) * s2
        out[i:i + l] += h - h.mean()
    return BvpSignal(out - out.mean(), fs, degenerate=degenerate)


def omit_basis(mean_color: np.ndarray) -> np.ndarray:
    """Orthonormal basis whose first vector points along the mean color.

    Built by QR factorization of [m e1 e2] with signs fixed so the first
    column is +m/|m|; the remaining columns span the intensity-orthogonal
    plane the pulse is read from.
    """
    m = np.asarray(mean_color, dtype=np.float64)
    if np.linalg.norm(m) == 0:
        raise ValueError("mean color vector is zero")
    seed = np.column_stack([m, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    q, r = np.linalg.qr(seed)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def extract_omit(trace: RgbTrace) -> BvpSignal:
    """Projection onto the first direction orthogonal to the mean color.

    The mean color vector is completed to an orthonormal basis by QR
    factorization; the output is the second basis vector's coordinate of the
    mean-normalized zero-centered RGB matrix.
    """
    if len(trace) < 2:
        raise ValueError("trace too short")
    m = np.array([trace.r.mean(), trace.g.mean(), trace.b.mean()])
    if np.any(m == 0):
        raise ValueError("trace has an all-zero channel; cannot mean-normalize")
    x = trace.as_matrix().T / m[:, None] - 1.0  # (3, N), zero-mean per channel
    q = omit_basis(m)
    s = q.T @ x
    out = s[1] - s[1].mean()
    return BvpSignal(out, trace.nominal_fps)


_EXTRACTORS = {
    "green": extract_green,
    "chrom": extract_chrom,
    "pos": extract_pos,
    "omit": extract_omit,
}


def extract(trace: RgbTrace, method: str) -> BvpSignal:
    """Run the named extractor; method is one of green/chrom/pos/omit."""
    try:
        fn = _EXTRACTORS[method.lower()]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {METHOD_NAMES}") from None
    return fn(trace)
