"""Pure-numpy fallback for the co-occurrence counting kernel.

Same contract as the compiled ``privmass._glcm``; selected at import time
when the extension is unavailable.
"""

from __future__ import annotations

import numpy as np


def glcm_counts(levels: np.ndarray, dy: int, dx: int, n_levels: int) -> np.ndarray:
    lv = np.asarray(levels, dtype=np.int64)
    h, w = lv.shape
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    a = lv[y0:y1, x0:x1].ravel()
    b = lv[y0 + dy : y1 + dy, x0 + dx : x1 + dx].ravel()
    flat = np.bincount(a * n_levels + b, minlength=n_levels * n_levels)
    return flat.reshape(n_levels, n_levels)
