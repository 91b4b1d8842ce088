"""Adaptive median filtering for impulse (salt-and-pepper) noise.

Windows are clipped at the image border instead of padded, and the median
of an even-sized clipped window is its lower-middle element, so the filter
only ever outputs values already present in the neighbourhood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class AmfConfig:
    w_min: int = 3
    w_max: int = 7

    def validate(self, shape=None):
        if self.w_min < 3 or self.w_min % 2 == 0:
            raise ValueError(f"w_min must be odd and >= 3, got {self.w_min}")
        if self.w_max < self.w_min or self.w_max % 2 == 0:
            raise ValueError(f"w_max must be odd and >= w_min, got {self.w_max}")
        if shape is not None and self.w_max > min(shape):
            raise ValueError(f"w_max={self.w_max} exceeds the image side {min(shape)}")


@dataclass(frozen=True)
class WindowStats:
    x_min: float
    x_med: float
    x_max: float


def window_stats(img: np.ndarray, center, side: int) -> WindowStats:
    """Min / lower-median / max of the clipped ``side`` x ``side`` window."""
    if side % 2 == 0 or side < 1:
        raise ValueError(f"window side must be odd, got {side}")
    r, c = center
    k = side // 2
    H, W = img.shape
    vals = np.sort(img[max(r - k, 0):min(r + k + 1, H), max(c - k, 0):min(c + k + 1, W)], axis=None)
    return WindowStats(vals[0], vals[(vals.size - 1) // 2], vals[-1])


def _all_window_stats(img: np.ndarray, side: int):
    """Vectorised :func:`window_stats` for every pixel at once."""
    k = side // 2
    padded = np.pad(img, k, mode="constant", constant_values=np.nan)
    win = sliding_window_view(padded, (side, side)).reshape(img.shape + (side * side,))
    # NaN padding sorts to the end, leaving the in-bounds values first
    win = np.sort(win, axis=-1)
    count = np.sum(~np.isnan(win), axis=-1)
    lo = win[..., 0]
    med = np.take_along_axis(win, ((count - 1) // 2)[..., None], axis=-1)[..., 0]
    hi = np.take_along_axis(win, (count - 1)[..., None], axis=-1)[..., 0]
    return lo, med, hi


def adaptive_median_filter(img: np.ndarray, cfg: AmfConfig = AmfConfig()) -> np.ndarray:
    """Two-level adaptive median filter.

    Level A grows the window from ``w_min`` by 2 until
    ``x_min < x_med < x_max`` holds; if ``w_max`` is passed first the pixel
    takes the last window's median. Level B then keeps the pixel when
    ``x_min < x_ij < x_max`` and otherwise replaces it with ``x_med``.
    """
    img = np.asarray(img, dtype=np.float64)
    cfg.validate(img.shape)
    out = img.copy()
    pending = np.ones(img.shape, dtype=bool)
    med = None
    for side in range(cfg.w_min, cfg.w_max + 1, 2):
        lo, med, hi = _all_window_stats(img, side)
        level_a = pending & (lo < med) & (med < hi)
        keep = (lo < img) & (img < hi)
        out[level_a] = np.where(keep, img, med)[level_a]
        pending &= ~level_a
        if not pending.any():
            break
    out[pending] = med[pending]
    return out


def salt_and_pepper(img: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Drive ``fraction`` of the pixels to 0 or 1 with equal odds."""
    noisy = np.array(img, dtype=np.float64, copy=True)
    hit = rng.random(noisy.shape) < fraction
    salt = rng.random(noisy.shape) < 0.5
    noisy[hit & salt] = 1.0
    noisy[hit & ~salt] = 0.0
    return noisy
