"""Ground-truth tamper masks from aligned (real, fake) image pairs.

Stages: grayscale SSIM map -> coarse region factor (1 - SSIM, Otsu-gated)
-> product with the fake's intensity, fixed threshold -> morphological
regularization (dilate, per-component convex hull twice, erode, blur,
re-threshold).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import convex_hull_image, disk

from .exceptions import ContractError

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class AnnotationConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 255.0
    product_threshold: float = 0.05
    dilate_radius: int = 5
    erode_radius: int = 3
    hull_passes: int = 2
    blur_sigma: float = 2.0
    otsu_bins: int = 256


def grayscale(image) -> np.ndarray:
    """ITU-R 601 luma of a ``[3, H, W]`` image, float64 on the input scale."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractError(f"expected an RGB [3,H,W] image, got {image.shape}")
    return np.tensordot(GRAY_WEIGHTS, image, axes=1)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(real, fake, cfg: AnnotationConfig = AnnotationConfig()) -> np.ndarray:
    """Per-pixel SSIM of the grayscale pair, clamped to [0, 1].

    Local statistics use a normalized Gaussian window with symmetric
    (half-sample) boundary reflection.
    """
    real = np.asarray(real)
    fake = np.asarray(fake)
    if real.shape != fake.shape:
        raise ContractError(f"pair dimensions differ: {real.shape} vs {fake.shape}")
    x, y = grayscale(real), grayscale(fake)
    win = gaussian_window(cfg.window, cfg.sigma)

    def filt(a):
        return ndimage.correlate(a, win, mode="reflect")

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x**2
    var_y = filt(y * y) - mu_y**2
    cov = filt(x * y) - mu_x * mu_y
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return np.clip(s, 0.0, 1.0)


def otsu_threshold(values, bins: int = 256, value_range: tuple[float, float] = (0.0, 1.0)) -> float:
    """Histogram Otsu threshold; values >= threshold form the upper class."""
    values = np.asarray(values, dtype=float).ravel()
    hist, edges = np.histogram(values, bins=bins, range=value_range)
    centers = (edges[:-1] + edges[1:]) / 2
    w0 = np.cumsum(hist)[:-1].astype(float)
    w1 = values.size - w0
    s0 = np.cumsum(hist * centers)[:-1]
    s1 = (hist * centers).sum() - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.nan_to_num(between, nan=-1.0)
    return float(edges[1:-1][int(np.argmax(between))])


def coarse_factor(S, cfg: AnnotationConfig = AnnotationConfig()) -> np.ndarray:
    """f = 1 - S with values below the Otsu threshold of f zeroed."""
    S = np.asarray(S, dtype=float)
    if S.size and (S.min() < 0 or S.max() > 1):
        raise ContractError("SSIM map must lie in [0, 1]")
    f = 1.0 - S
    if f.size == 0 or np.ptp(f) == 0:
        return f
    t = otsu_threshold(f, cfg.otsu_bins)
    return np.where(f >= t, f, 0.0)


def binarize_regions(f, fake, cfg: AnnotationConfig = AnnotationConfig()) -> np.ndarray:
    """{0,1} map where f times the fake's normalized intensity exceeds the threshold."""
    f = np.asarray(f, dtype=float)
    gray = grayscale(fake) / cfg.data_range
    if gray.shape != f.shape:
        raise ContractError(f"factor {f.shape} and image {gray.shape} differ")
    return (f * gray > cfg.product_threshold).astype(np.uint8)


def component_hulls(mask) -> np.ndarray:
    """Union of the convex hulls of the 8-connected components."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    out = np.zeros_like(mask)
    for sl, idx in zip(ndimage.find_objects(labels), range(1, n + 1)):
        comp = labels[sl] == idx
        out[sl] |= convex_hull_image(comp)
    return out


def regularize_mask(M, cfg: AnnotationConfig = AnnotationConfig()) -> np.ndarray:
    """Dilate, hull each component (repeated), erode, Gaussian blur, threshold at 0.5."""
    M = np.asarray(M).astype(bool)
    if not M.any():
        return np.zeros(M.shape, dtype=np.uint8)
    out = ndimage.binary_dilation(M, structure=disk(cfg.dilate_radius))
    for _ in range(cfg.hull_passes):
        out = component_hulls(out)
    out = ndimage.binary_erosion(out, structure=disk(cfg.erode_radius), border_value=1)
    blurred = ndimage.gaussian_filter(out.astype(float), cfg.blur_sigma, mode="nearest")
    return (blurred > 0.5).astype(np.uint8)


def annotate_pair(real, fake, is_real: bool = False, cfg: AnnotationConfig = AnnotationConfig()) -> np.ndarray:
    """Full pipeline; authentic images get an all-zero mask."""
    real = np.asarray(real)
    fake = np.asarray(fake)
    if real.shape != fake.shape:
        raise ContractError(f"pair dimensions differ: {real.shape} vs {fake.shape}")
    if is_real:
        return np.zeros(real.shape[-2:], dtype=np.uint8)
    S = ssim_map(real, fake, cfg)
    f = coarse_factor(S, cfg)
    M = binarize_regions(f, fake, cfg)
    return regularize_mask(M, cfg)
