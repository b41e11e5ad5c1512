"""Pure-numpy reference kernels.

These are the fallback implementations of the two hot loops (analytic ray
casting and z-buffer point splatting).  The compiled variants in ``_fast``
execute the same arithmetic in the same order, so results are bit-identical
between backends.
"""

import numpy as np

T_MIN = 1e-9

HIT_NONE = -1
HIT_GROUND = -2


def cast_rays(origin, dirs, boxes, include_ground=True):
    """Intersect rays with the ground plane z=0 and yaw-oriented boxes.

    origin: (3,) float64 ray origin shared by all rays.
    dirs: (N, 3) float64 ray directions; need not be normalized.  The
        returned parameter t is in units of the supplied direction, i.e.
        hit point = origin + t * dir.
    boxes: (M, 8) float64 rows [cx, cy, cz, hx, hy, hz, cos_yaw, sin_yaw].
    Returns (t, hit) where hit is HIT_NONE for a miss, HIT_GROUND for the
    ground plane, or the row index of the winning box.  Ties (equal t) keep
    the earlier candidate: ground first, then boxes in row order.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = dirs.shape[0]
    ox, oy, oz = (float(origin[0]), float(origin[1]), float(origin[2]))
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]

    t_best = np.full(n, np.inf)
    hit = np.full(n, HIT_NONE, dtype=np.int64)

    if include_ground:
        par = dz == 0.0
        tg = np.where(par, np.inf, -oz / np.where(par, 1.0, dz))
        ok = (tg > T_MIN) & (tg < t_best)
        t_best = np.where(ok, tg, t_best)
        hit = np.where(ok, HIT_GROUND, hit)

    for k in range(boxes.shape[0]):
        cx, cy, cz, hx, hy, hz, c, s = (float(v) for v in boxes[k])
        # ray in the box frame (rotate by -yaw about z)
        px = ox - cx
        py = oy - cy
        bx = c * px + s * py
        by = -s * px + c * py
        bz = oz - cz
        bdx = c * dx + s * dy
        bdy = -s * dx + c * dy
        bdz = dz

        t0 = np.full(n, -np.inf)
        t1 = np.full(n, np.inf)
        miss = np.zeros(n, dtype=bool)
        for p, d, h in ((bx, bdx, hx), (by, bdy, hy), (bz, bdz, hz)):
            p = np.broadcast_to(np.asarray(p, dtype=np.float64), (n,))
            par = d == 0.0
            inv = 1.0 / np.where(par, 1.0, d)
            ta = (-h - p) * inv
            tb = (h - p) * inv
            lo = np.minimum(ta, tb)
            hi = np.maximum(ta, tb)
            inside = np.abs(p) <= h
            lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
            hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
            t0 = np.maximum(t0, lo)
            t1 = np.minimum(t1, hi)
            miss |= t0 > t1
        ok = ~miss & (t0 > T_MIN) & (t0 < t_best)
        t_best = np.where(ok, t0, t_best)
        hit = np.where(ok, k, hit)

    return t_best, hit


def zbuffer_splat(u, v, depth, width, height, radius=1):
    """Nearest-point z-buffer splatting.

    u, v: (N,) float64 continuous pixel coordinates (rounded half-even).
    depth: (N,) float64 positive depths; non-finite or non-positive points
        are dropped.
    radius: square footprint; a point covers pixels within Chebyshev
        distance radius-1 of its rounded position (radius 1 = one pixel).
    Returns (winner, zbuf): winner is (H, W) int64 holding the index of the
    nearest point per pixel (-1 where uncovered), zbuf the winning depth
    (0 where uncovered).  Depth ties keep the lowest point index.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    n = u.shape[0]

    winner = np.full((height, width), -1, dtype=np.int64)
    zbuf = np.zeros((height, width), dtype=np.float64)
    if n == 0:
        return winner, zbuf

    keep = np.isfinite(depth) & (depth > 0.0) & np.isfinite(u) & np.isfinite(v)
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return winner, zbuf
    pu = np.rint(u[idx]).astype(np.int64)
    pv = np.rint(v[idx]).astype(np.int64)
    d = depth[idx]

    r = radius - 1
    cells_x = []
    cells_y = []
    cells_i = []
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            cells_x.append(pu + ox)
            cells_y.append(pv + oy)
            cells_i.append(idx)
    x = np.concatenate(cells_x)
    y = np.concatenate(cells_y)
    i = np.concatenate(cells_i)
    d = np.tile(d, (2 * r + 1) ** 2)

    inb = (x >= 0) & (x < width) & (y >= 0) & (y < height)
    x, y, i, d = x[inb], y[inb], i[inb], d[inb]
    if x.size == 0:
        return winner, zbuf

    pix = y * width + x
    order = np.lexsort((i, d, pix))
    pix, i, d = pix[order], i[order], d[order]
    first = np.ones(pix.shape[0], dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    winner.reshape(-1)[pix[first]] = i[first]
    zbuf.reshape(-1)[pix[first]] = d[first]
    return winner, zbuf
