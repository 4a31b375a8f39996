"""Spatial degradations and landmark-driven occlusion synthesis.

Frame operations accept and return (H, W, 3) uint8 arrays; they never touch
pixels outside the region they advertise. Randomness always flows through a
seeded numpy PCG64 generator so degraded streams are reproducible bit-for-bit
across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import LandmarkSet

VALID_BIT_DEPTHS = (2, 4, 6, 8)


@dataclass(frozen=True)
class ColorDepthSpec:
    """Per-channel bit depth target; 8 is the identity."""

    nb: int

    def __post_init__(self):
        if self.nb not in VALID_BIT_DEPTHS:
            raise ValueError(f"bit depth must be one of {VALID_BIT_DEPTHS}, got {self.nb}")

    @property
    def rf(self) -> int:
        """Reduction factor: the quantization step on the 0-255 scale."""
        return 256 // (1 << self.nb)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian pixel noise on the [0, 1] intensity scale."""

    mean: float = 0.0
    variance: float = 0.004
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")


@dataclass(frozen=True)
class BlurSpec:
    """Square Gaussian blur kernel; sigma derives from the kernel size."""

    kernel_size: int = 25

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd and >= 1")

    @property
    def sigma(self) -> float:
        # conventional size-to-sigma rule for automatically sized kernels
        return 0.3 * ((self.kernel_size - 1) * 0.5 - 1) + 0.8


@dataclass(frozen=True)
class OcclusionAsset:
    """RGBA overlay template, plus the 22 outline points for facemask fitting."""

    image: np.ndarray
    source_points: Optional[np.ndarray] = None

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[-1] != 4 or img.dtype != np.uint8:
            raise ValueError("occlusion asset must be an (H, W, 4) uint8 image")
        img = img.copy()
        img.flags.writeable = False
        object.__setattr__(self, "image", img)
        if self.source_points is not None:
            pts = np.array(self.source_points, dtype=np.float64)
            if pts.shape != (22, 2):
                raise ValueError("facemask templates carry exactly 22 source points")
            h, w = img.shape[:2]
            if (pts[:, 0].min() < 0 or pts[:, 0].max() > w - 1
                    or pts[:, 1].min() < 0 or pts[:, 1].max() > h - 1):
                raise ValueError("source points must lie inside the template")
            pts.flags.writeable = False
            object.__setattr__(self, "source_points", pts)


def _check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[-1] != 3 or frame.dtype != np.uint8:
        raise ValueError("expected an (H, W, 3) uint8 frame")
    return frame


def reduce_color_depth(frame: np.ndarray, spec: ColorDepthSpec) -> np.ndarray:
    """Quantize every channel to 2**nb levels via floor division."""
    frame = _check_frame(frame)
    rf = spec.rf
    if rf == 1:
        return frame.copy()
    return (frame // rf) * rf


def add_gaussian_noise(frame: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Add i.i.d. Gaussian noise on the [0, 1] scale, clamp, requantize.

    The same seed always produces the same byte-identical output (PCG64).
    """
    frame = _check_frame(frame)
    if spec.variance == 0 and spec.mean == 0:
        return frame.copy()
    rng = np.random.default_rng(spec.seed)
    x = frame.astype(np.float64) / 255.0
    x = x + rng.normal(spec.mean, np.sqrt(spec.variance), size=frame.shape)
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    """Sampled Gaussian taps normalized to sum to 1."""
    r = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - r
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def gaussian_blur(frame: np.ndarray, spec: BlurSpec) -> np.ndarray:
    """Separable Gaussian convolution per channel with reflected borders."""
    frame = _check_frame(frame)
    k = spec.kernel_size
    if frame.shape[0] < k or frame.shape[1] < k:
        raise ValueError(f"frame smaller than the {k}x{k} blur kernel")
    taps = gaussian_kernel_1d(k, spec.sigma)
    out = frame.astype(np.float64)
    out = ndimage.convolve1d(out, taps, axis=0, mode="reflect")
    out = ndimage.convolve1d(out, taps, axis=1, mode="reflect")
    return np.rint(np.clip(out, 0.0, 255.0)).astype(np.uint8)


def _resize_bilinear_float(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an (H, W, C) float array to (out_h, out_w, C).

    Sample positions follow the pixel-center convention, so equal sizes
    reproduce the input exactly.
    """
    h, w = img.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def resize(frame: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize to size x size, rounding half away from zero."""
    frame = _check_frame(frame)
    if size <= 0:
        raise ValueError("target size must be positive")
    if frame.shape[0] == size and frame.shape[1] == size:
        return frame.copy()
    out = _resize_bilinear_float(frame.astype(np.float64), size, size)
    return np.floor(out + 0.5).astype(np.uint8)


# --- homography -------------------------------------------------------------

def _similarity_normalization(pts: np.ndarray) -> np.ndarray:
    """Translation+scale matrix taking the points to mean 0, RMS radius sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * centroid[0]],
                     [0, s, -s * centroid[1]],
                     [0, 0, 1.0]])


def _any_triple_collinear(pts: np.ndarray) -> bool:
    n = len(pts)
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1.0)
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            for k in range(j + 1, n):
                area = abs((pts[j, 0] - pts[i, 0]) * (pts[k, 1] - pts[i, 1])
                           - (pts[k, 0] - pts[i, 0]) * (pts[j, 1] - pts[i, 1]))
                if area < 1e-9 * scale * scale:
                    return True
    return False


def estimate_homography(src, dst) -> np.ndarray:
    """3x3 projective map src -> dst via the normalized direct linear transform.

    Solves the algebraic least-squares problem over >= 4 correspondences with
    an SVD of the 2n x 9 design matrix, after similarity-normalizing both
    point sets; the result is scaled so H[2, 2] == 1.
    """
    src = np.array(src, dtype=np.float64)
    dst = np.array(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise ValueError("need matching (N, 2) source and destination points")
    n = len(src)
    if n < 4:
        raise ValueError("homography estimation needs at least 4 correspondences")
    if n == 4 and _any_triple_collinear(src):
        raise ValueError("degenerate configuration: 3 of 4 source points are collinear")

    t_src = _similarity_normalization(src)
    t_dst = _similarity_normalization(dst)
    sn = (t_src @ np.column_stack([src, np.ones(n)]).T).T
    dn = (t_dst @ np.column_stack([dst, np.ones(n)]).T).T

    a = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = sn[i, 0], sn[i, 1]
        u, v = dn[i, 0], dn[i, 1]
        a[2 * i] = [-x, -y, -1, 0, 0, 0, u * x, u * y, u]
        a[2 * i + 1] = [0, 0, 0, -x, -y, -1, v * x, v * y, v]
    _, s, vt = np.linalg.svd(a)
    if s[-2] <= 1e-10 * s[0]:
        raise ValueError("degenerate configuration: homography is not unique")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    if abs(h[2, 2]) < 1e-12 * np.abs(h).max():
        raise ValueError("homography cannot be normalized (vanishing scale entry)")
    return h / h[2, 2]


def apply_homography(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Map (N, 2) points through a 3x3 projective matrix."""
    pts = np.asarray(pts, dtype=np.float64)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ h.T
    return hom[:, :2] / hom[:, 2:3]


# --- occlusion compositing --------------------------------------------------

def _sample_rgba(asset: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinear RGBA lookup at float coordinates; alpha 0 outside the asset.

    RGB is sampled premultiplied by alpha to avoid halos at the border.
    """
    h, w = asset.shape[:2]
    inside = (xs >= -0.5) & (xs <= w - 0.5) & (ys >= -0.5) & (ys <= h - 0.5)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.floor(xc).astype(int)
    y0 = np.floor(yc).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]

    rgba = asset.astype(np.float64)
    alpha = rgba[..., 3:4] / 255.0
    pre = np.concatenate([rgba[..., :3] * alpha, alpha], axis=-1)

    def gather(yy, xx):
        return pre[yy, xx]

    top = gather(y0, x0) * (1 - fx) + gather(y0, x1) * fx
    bot = gather(y1, x0) * (1 - fx) + gather(y1, x1) * fx
    out = top * (1 - fy) + bot * fy
    out[~inside] = 0.0
    a = out[..., 3]
    rgb = np.zeros_like(out[..., :3])
    np.divide(out[..., :3], a[..., None], out=rgb, where=a[..., None] > 0)
    return rgb, a


def _composite(frame: np.ndarray, rgb: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Alpha-blend onto the frame; alpha == 0 pixels stay bit-identical."""
    out = frame.copy()
    covered = alpha > 0
    if not covered.any():
        return out
    a = alpha[covered][:, None]
    blended = (1 - a) * frame[covered].astype(np.float64) + a * rgb[covered]
    out[covered] = np.rint(np.clip(blended, 0, 255)).astype(np.uint8)
    return out


def apply_facemask(frame: np.ndarray, lm: LandmarkSet, asset: OcclusionAsset) -> np.ndarray:
    """Warp a facemask template onto the 22 face-outline landmarks.

    The warp is the homography from the template's 22 source points to the
    landmark outline, followed by alpha compositing.
    """
    frame = _check_frame(frame)
    if asset.source_points is None:
        raise ValueError("facemask asset has no source points")
    dst = lm.outline_points()
    h = estimate_homography(asset.source_points, dst)
    h_inv = np.linalg.inv(h)

    fh, fw = frame.shape[:2]
    xs, ys = np.meshgrid(np.arange(fw, dtype=np.float64),
                         np.arange(fh, dtype=np.float64))
    hom = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ h_inv.T
    sx = hom[..., 0] / hom[..., 2]
    sy = hom[..., 1] / hom[..., 2]
    rgb, alpha = _sample_rgba(asset.image, sx, sy)
    return _composite(frame, rgb, alpha)


def apply_sunglasses(frame: np.ndarray, lm: LandmarkSet, asset: OcclusionAsset) -> np.ndarray:
    """Scale a sunglasses template to the eye span and center it on the nose bridge.

    Width scales to 1.1x the horizontal outer-eye distance; the resized
    asset's midpoint lands on the nose-bridge landmark (within rounding).
    """
    frame = _check_frame(frame)
    if lm.eye_outer is None:
        raise ValueError("sunglasses placement needs outer-eye landmarks")
    left = lm.points[lm.eye_outer[0]]
    right = lm.points[lm.eye_outer[1]]
    nose = lm.points[lm.nose_bridge]

    span = abs(float(right[0] - left[0]))
    if span <= 0:
        raise ValueError("outer-eye landmarks have no horizontal span")
    ah, aw = asset.image.shape[:2]
    out_w = max(1, int(round(1.1 * span)))
    out_h = max(1, int(round(ah * out_w / aw)))
    resized = _resize_bilinear_float(asset.image.astype(np.float64), out_h, out_w)

    x0 = int(round(nose[0] - out_w / 2.0))
    y0 = int(round(nose[1] - out_h / 2.0))

    fh, fw = frame.shape[:2]
    rgb = np.zeros((fh, fw, 3))
    alpha = np.zeros((fh, fw))
    sx0, sy0 = max(0, -x0), max(0, -y0)
    dx0, dy0 = max(0, x0), max(0, y0)
    cw = min(out_w - sx0, fw - dx0)
    ch = min(out_h - sy0, fh - dy0)
    if cw > 0 and ch > 0:
        patch = resized[sy0:sy0 + ch, sx0:sx0 + cw]
        alpha[dy0:dy0 + ch, dx0:dx0 + cw] = patch[..., 3] / 255.0
        rgb[dy0:dy0 + ch, dx0:dx0 + cw] = patch[..., :3]
    return _composite(frame, rgb, alpha)


# --- asset loading / built-in templates --------------------------------------

def load_occlusion_asset(image_path, points_path=None) -> OcclusionAsset:
    """Read an RGBA template image, optionally with a 22-line `x y` point file."""
    img = np.array(Image.open(image_path).convert("RGBA"))
    points = None
    if points_path is not None:
        rows = []
        with open(points_path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                x, y = line.split()
                rows.append((float(x), float(y)))
        if len(rows) != 22:
            raise ValueError(f"{points_path}: expected 22 points, found {len(rows)}")
        points = np.array(rows)
    return OcclusionAsset(img, points)


def default_facemask(width: int = 220, height: int = 150) -> OcclusionAsset:
    """A plain white facemask template with its 22 outline source points.

    Eleven points run along the straight top edge and eleven along the chin
    curve, ordered left to right then right to left, so destination landmark
    sets must follow the same ordering.
    """
    w, h = width, height
    top_y = 0.1 * h
    xs_top = np.linspace(0.08 * w, 0.92 * w, 11)
    top = np.column_stack([xs_top, np.full(11, top_y)])
    theta = np.linspace(0, np.pi, 11)
    chin_x = w / 2 + (0.42 * w) * np.cos(theta)
    chin_y = top_y + (0.82 * h) * np.sin(theta)
    chin = np.column_stack([chin_x, chin_y])[::-1]  # left -> right under the chin
    pts = np.vstack([top, chin])

    img = np.zeros((h, w, 4), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    inside_top = (yy >= top_y) & (xx >= xs_top[0]) & (xx <= xs_top[-1])
    ell = (((xx - w / 2) / (0.42 * w)) ** 2 + ((yy - top_y) / (0.82 * h)) ** 2) <= 1.0
    body = inside_top & (ell | (yy <= top_y + 1))
    img[body] = (255, 255, 255, 255)
    return OcclusionAsset(img, pts)


def default_sunglasses(width: int = 200, height: int = 64) -> OcclusionAsset:
    """Opaque black sunglasses: two lens disks joined by a bridge bar."""
    w, h = width, height
    img = np.zeros((h, w, 4), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    cy = h / 2
    rx, ry = 0.21 * w, 0.42 * h
    for cx in (0.25 * w, 0.75 * w):
        lens = (((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2) <= 1.0
        img[lens] = (0, 0, 0, 255)
    bridge = (np.abs(yy - cy) <= 0.08 * h) & (xx >= 0.25 * w) & (xx <= 0.75 * w)
    img[bridge] = (0, 0, 0, 255)
    return OcclusionAsset(img)
