"""Compiled inner loops for clipping, resampling and shape-context binning."""
import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True, nogil=True)
def _clampf(v, lo, hi):
    return lo if v < lo else (hi if v > hi else v)


@njit(cache=True, nogil=True)
def clip_polyline(p, xmin, ymin, xmax, ymax):
    """Inside pieces of polyline ``p`` as (points, starts); piece k is points[starts[k]:starts[k+1]]."""
    n = p.shape[0]
    out = np.empty((2 * n, 2))
    starts = np.empty(n + 1, dtype=np.int64)
    npts = 0
    npieces = 0
    open_piece = False
    prev_k = -2
    for k in range(n - 1):
        ax = p[k, 0]
        ay = p[k, 1]
        dx = p[k + 1, 0] - ax
        dy = p[k + 1, 1] - ay
        t0 = 0.0
        t1 = 1.0
        ok = True
        for side in range(4):
            if side == 0:
                pk = -dx
                qk = ax - xmin
            elif side == 1:
                pk = dx
                qk = xmax - ax
            elif side == 2:
                pk = -dy
                qk = ay - ymin
            else:
                pk = dy
                qk = ymax - ay
            if pk == 0.0:
                if qk < 0.0:
                    ok = False
            else:
                r = qk / pk
                if pk < 0.0:
                    if r > t0:
                        t0 = r
                else:
                    if r < t1:
                        t1 = r
        if not ok or t0 > t1:
            open_piece = False
            continue
        # raw vertices are clamped too: t can round to 0 or 1 for a vertex just outside
        if t0 == 0.0:
            sx = _clampf(p[k, 0], xmin, xmax)
            sy = _clampf(p[k, 1], ymin, ymax)
        else:
            sx = _clampf(ax + t0 * dx, xmin, xmax)
            sy = _clampf(ay + t0 * dy, ymin, ymax)
        if t1 == 1.0:
            ex = _clampf(p[k + 1, 0], xmin, xmax)
            ey = _clampf(p[k + 1, 1], ymin, ymax)
        else:
            ex = _clampf(ax + t1 * dx, xmin, xmax)
            ey = _clampf(ay + t1 * dy, ymin, ymax)
        if not (open_piece and t0 == 0.0 and prev_k == k - 1):
            starts[npieces] = npts
            npieces += 1
            out[npts, 0] = sx
            out[npts, 1] = sy
            npts += 1
        if out[npts - 1, 0] != ex or out[npts - 1, 1] != ey:
            out[npts, 0] = ex
            out[npts, 1] = ey
            npts += 1
        open_piece = t1 == 1.0
        prev_k = k
    starts[npieces] = npts
    # drop single-point pieces
    keep_pts = np.empty((npts, 2))
    keep_starts = np.empty(npieces + 1, dtype=np.int64)
    m = 0
    q = 0
    for k in range(npieces):
        a = starts[k]
        b = starts[k + 1]
        if b - a >= 2:
            keep_starts[q] = m
            for t in range(a, b):
                keep_pts[m, 0] = out[t, 0]
                keep_pts[m, 1] = out[t, 1]
                m += 1
            q += 1
    keep_starts[q] = m
    return keep_pts[:m], keep_starts[:q + 1]


@njit(cache=True, nogil=True)
def polyline_len(p):
    s = 0.0
    for k in range(p.shape[0] - 1):
        s += math.hypot(p[k + 1, 0] - p[k, 0], p[k + 1, 1] - p[k, 1])
    return s


@njit(cache=True, nogil=True)
def longest_piece(pts, starts):
    best = -1
    best_len = -1.0
    for k in range(starts.shape[0] - 1):
        L = polyline_len(pts[starts[k]:starts[k + 1]])
        if L > best_len:
            best_len = L
            best = k
    return best


@njit(cache=True, nogil=True)
def resample(p, n):
    """``n`` arc-length-uniform points starting at the endpoint with smaller (y, x)."""
    m = p.shape[0]
    rev = (p[m - 1, 1] < p[0, 1]) or (p[m - 1, 1] == p[0, 1] and p[m - 1, 0] < p[0, 0])
    q = np.empty((m, 2))
    for k in range(m):
        src = m - 1 - k if rev else k
        q[k, 0] = p[src, 0]
        q[k, 1] = p[src, 1]
    s = np.empty(m)
    s[0] = 0.0
    for k in range(1, m):
        s[k] = s[k - 1] + math.hypot(q[k, 0] - q[k - 1, 0], q[k, 1] - q[k - 1, 1])
    total = s[m - 1]
    out = np.empty((n, 2))
    seg = 0
    for k in range(n):
        if k == n - 1:
            out[k, 0] = q[m - 1, 0]
            out[k, 1] = q[m - 1, 1]
            continue
        t = total * k / (n - 1)
        while seg < m - 2 and s[seg + 1] <= t:
            seg += 1
        span = s[seg + 1] - s[seg]
        f = (t - s[seg]) / span
        if f == 0.0:
            out[k, 0] = q[seg, 0]
            out[k, 1] = q[seg, 1]
        else:
            out[k, 0] = q[seg, 0] + f * (q[seg + 1, 0] - q[seg, 0])
            out[k, 1] = q[seg, 1] + f * (q[seg + 1, 1] - q[seg, 1])
    return out


@njit(cache=True, nogil=True)
def bin_of(dx, dy, R, n_angles, n_radii, log_radial):
    ang = math.atan2(dy, dx)
    if ang < 0.0:
        ang += TWO_PI
    a = int(ang / (TWO_PI / n_angles))
    if a > n_angles - 1:
        a = n_angles - 1
    r = math.hypot(dx, dy)
    rb = 0
    for k in range(1, n_radii):
        if log_radial:
            edge = R / 2.0 ** (n_radii - k)
        else:
            edge = R * k / n_radii
        if r >= edge:
            rb = k
    return rb * n_angles + a


@njit(cache=True, nogil=True)
def shape_context(pts, R, n_angles, n_radii, log_radial):
    n = pts.shape[0]
    nb = n_angles * n_radii
    out = np.zeros(n * nb)
    if n < 2:
        return out
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            b = bin_of(pts[j, 0] - pts[i, 0], pts[j, 1] - pts[i, 1], R, n_angles, n_radii, log_radial)
            out[i * nb + b] += 1.0
    return out / (n - 1)


@njit(cache=True, nogil=True)
def center_counts(pts, centers, R, n_angles, n_radii, log_radial):
    """(U, z * n_bins) counts of each point set around each centre; pts is (U, n, 2)."""
    U = pts.shape[0]
    z = centers.shape[0]
    nb = n_angles * n_radii
    out = np.zeros((U, z * nb))
    for u in range(U):
        for c in range(z):
            for k in range(pts.shape[1]):
                b = bin_of(pts[u, k, 0] - centers[c, 0], pts[u, k, 1] - centers[c, 1],
                           R, n_angles, n_radii, log_radial)
                out[u, c * nb + b] += 1.0
    return out


@njit(cache=True, nogil=True)
def smo(K, L, order, starts, a, D, eps, max_steps, record):
    """Pairwise SMO over per-sample simplices; returns (steps, dual trace).

    Sample k owns constraints order[starts[k]:starts[k + 1]]. Each step
    picks the sample with the largest gap between its best gradient and
    its worst gradient carrying mass, then does an exact line search.
    """
    n = K.shape[0]
    g = L - D * (K @ a)
    trace = np.empty(max_steps if record else 0)
    steps = 0
    while steps < max_steps:
        best_v = -1.0
        bi = -1
        bj = -1
        for k in range(starts.shape[0] - 1):
            up = -np.inf
            ui = -1
            dn = np.inf
            dj = -1
            for p in range(starts[k], starts[k + 1]):
                c = order[p]
                if g[c] > up:
                    up = g[c]
                    ui = c
                if a[c] > 0.0 and g[c] < dn:
                    dn = g[c]
                    dj = c
            if dj >= 0 and up - dn > best_v:
                best_v = up - dn
                bi = ui
                bj = dj
        if best_v < eps:
            break
        i = bi
        j = bj
        q = K[i, i] + K[j, j] - 2.0 * K[i, j]
        gap = g[i] - g[j]
        t = a[j]
        if q > 1e-15 and gap / (D * q) < t:
            t = gap / (D * q)
        if t <= 0.0:
            break
        if t == a[j]:
            a[i] += a[j]
            a[j] = 0.0
        else:
            a[i] += t
            a[j] -= t
        for c in range(n):
            g[c] -= D * t * (K[c, i] - K[c, j])
        if record:
            trace[steps] = a @ L - 0.5 * D * (a @ (K @ a))
        steps += 1
    return steps, trace[:steps]
