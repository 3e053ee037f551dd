"""Pure NumPy implementations of the hot kernels.

These define the reference semantics; the compiled module must agree with
them bit for bit.
"""
import numpy as np

_CHUNK = 2048


def best_split(X, y, idx, order, n_try, min_leaf):
    """Best Gini split of the rows ``idx`` over candidate features.

    Features are visited in ``order`` until ``n_try`` features with at least
    one admissible split have been scored. A split is admissible when both
    sides hold ``min_leaf`` rows and it falls between distinct values.

    The split score is ``(sL^2 + fL^2)/nL + (sR^2 + fR^2)/nR`` (larger is
    purer). Ties go to the lowest feature index, then the lowest threshold.

    Returns
    -------
    (feature, threshold, score); feature is -1 when no admissible split exists.
    """
    n = idx.shape[0]
    best_f, best_t, best_s = -1, 0.0, -np.inf
    if n < 2 or n < 2 * min_leaf:
        return best_f, best_t, best_s
    yy = y[idx].astype(np.int64)
    s_tot = int(yy.sum())
    n_left = np.arange(1, n, dtype=np.int64)
    n_right = n - n_left
    size_ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    visited = 0
    for f in order:
        if visited >= n_try:
            break
        x = X[idx, f]
        srt = np.argsort(x, kind="stable")
        xs = x[srt]
        ok = size_ok & (xs[:-1] < xs[1:])
        if not ok.any():
            continue
        visited += 1
        s_left = np.cumsum(yy[srt])[:-1]
        f_left = n_left - s_left
        s_right = s_tot - s_left
        f_right = n_right - s_right
        score = (s_left * s_left + f_left * f_left) / n_left + (
            s_right * s_right + f_right * f_right
        ) / n_right
        score = np.where(ok, score, -np.inf)
        i = int(np.argmax(score))
        s = score[i]
        if s > best_s or (s == best_s and f < best_f):
            lo, hi = xs[i], xs[i + 1]
            thr = (lo + hi) * 0.5
            if thr >= hi:
                thr = lo
            best_f, best_t, best_s = int(f), float(thr), float(s)
    return best_f, best_t, best_s


def apply_tree(X, feature, threshold, left, right):
    """Leaf index reached by every row of ``X`` (``x <= t`` goes left)."""
    node = np.zeros(X.shape[0], dtype=np.intp)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return node


def trailing_median(p, window, first):
    """``out[t] = median(p[t - window:t])`` for ``t >= first``; NaN before."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    n = p.shape[0]
    out = np.full(n, np.nan)
    if first < window:
        raise ValueError("first must be >= window")
    if first >= n:
        return out
    view = np.lib.stride_tricks.sliding_window_view(p[first - window : n - 1], window)
    for start in range(0, view.shape[0], _CHUNK):
        out[first + start : first + start + _CHUNK] = np.median(
            view[start : start + _CHUNK], axis=1
        )
    return out
