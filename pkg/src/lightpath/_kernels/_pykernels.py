"""Pure numpy versions of the compiled kernels (same results, bit for bit)."""

from __future__ import annotations

import numpy as np


def best_split(xs: np.ndarray, ys: np.ndarray, min_leaf: int) -> tuple[int, int, float]:
    n, f = xs.shape
    if n < 2:
        return -1, -1, 0.0
    cs = np.cumsum(ys, axis=0)
    total = cs[-1]
    base = total * total / float(n)
    sl = cs[:-1]
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = float(n) - nl
    sr = total - sl
    gain = sl * sl / nl + sr * sr / nr - base
    pos = np.arange(n - 1)[:, None]
    valid = (xs[:-1] < xs[1:]) & (pos + 1 >= min_leaf) & (n - pos - 1 >= min_leaf)
    if not valid.any():
        return -1, -1, 0.0
    # feature-major scan order, first maximum wins
    masked = np.where(valid, gain, -np.inf).T
    flat = int(np.argmax(masked))
    j, i = divmod(flat, n - 1)
    return j, i, float(masked[j, i])


def kendall_counts(x: np.ndarray, y: np.ndarray, chunk: int = 512) -> tuple[int, int, int]:
    n = x.shape[0]
    s = tx = ty = 0
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        dx = x[None, :] - x[rows, None]
        dy = y[None, :] - y[rows, None]
        upper = np.arange(n)[None, :] > rows[:, None]
        tx += int(np.count_nonzero((dx == 0) & upper))
        ty += int(np.count_nonzero((dy == 0) & upper))
        s += int((np.sign(dx) * np.sign(dy) * upper).sum())
    return s, tx, ty
