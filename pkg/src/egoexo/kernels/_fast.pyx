# Compiled twins of the _ref kernels.  The arithmetic and comparison order
# mirror the numpy implementations exactly (and the extension is built with
# FP contraction off), so both backends produce bit-identical results.

import numpy as np

from libc.math cimport INFINITY, fabs, isfinite, rint

T_MIN = 1e-9
HIT_NONE = -1
HIT_GROUND = -2

cdef double _T_MIN = 1e-9


def cast_rays(origin, dirs, boxes, include_ground=True):
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 8)
    cdef double[:, ::1] D = dirs
    cdef double[:, ::1] B = boxes
    cdef Py_ssize_t n = D.shape[0]
    cdef Py_ssize_t m = B.shape[0]

    t_out = np.full(n, np.inf)
    hit_out = np.full(n, -1, dtype=np.int64)
    cdef double[::1] T = t_out
    cdef long long[::1] H = hit_out

    cdef double ox = float(origin[0])
    cdef double oy = float(origin[1])
    cdef double oz = float(origin[2])
    cdef bint ground = bool(include_ground)

    cdef Py_ssize_t i, k, a
    cdef double dx, dy, dz, tg
    cdef double cx, cy, cz, hx, hy, hz, c, s
    cdef double px, py
    cdef double pp[3]
    cdef double dd[3]
    cdef double hh[3]
    cdef double t0, t1, lo, hi, ta, tb, inv, p, d, h
    cdef bint miss

    for i in range(n):
        dx = D[i, 0]
        dy = D[i, 1]
        dz = D[i, 2]
        if ground and dz != 0.0:
            tg = -oz / dz
            if tg > _T_MIN and tg < T[i]:
                T[i] = tg
                H[i] = -2
        for k in range(m):
            cx = B[k, 0]; cy = B[k, 1]; cz = B[k, 2]
            hx = B[k, 3]; hy = B[k, 4]; hz = B[k, 5]
            c = B[k, 6]; s = B[k, 7]
            px = ox - cx
            py = oy - cy
            pp[0] = c * px + s * py
            pp[1] = -s * px + c * py
            pp[2] = oz - cz
            dd[0] = c * dx + s * dy
            dd[1] = -s * dx + c * dy
            dd[2] = dz
            hh[0] = hx; hh[1] = hy; hh[2] = hz

            t0 = -INFINITY
            t1 = INFINITY
            miss = False
            for a in range(3):
                p = pp[a]; d = dd[a]; h = hh[a]
                if d == 0.0:
                    if fabs(p) <= h:
                        lo = -INFINITY
                        hi = INFINITY
                    else:
                        lo = INFINITY
                        hi = -INFINITY
                else:
                    inv = 1.0 / d
                    ta = (-h - p) * inv
                    tb = (h - p) * inv
                    if ta <= tb:
                        lo = ta; hi = tb
                    else:
                        lo = tb; hi = ta
                if lo > t0:
                    t0 = lo
                if hi < t1:
                    t1 = hi
                if t0 > t1:
                    miss = True
                    break
            if not miss and t0 > _T_MIN and t0 < T[i]:
                T[i] = t0
                H[i] = k

    return t_out, hit_out


def zbuffer_splat(u, v, depth, width, height, radius=1):
    if radius < 1:
        raise ValueError("radius must be >= 1")
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    cdef double[::1] U = u
    cdef double[::1] V = v
    cdef double[::1] D = depth
    cdef Py_ssize_t n = U.shape[0]
    cdef Py_ssize_t W = int(width)
    cdef Py_ssize_t Hh = int(height)
    cdef Py_ssize_t r = int(radius) - 1

    winner_out = np.full((Hh, W), -1, dtype=np.int64)
    zbuf_out = np.zeros((Hh, W), dtype=np.float64)
    cdef long long[:, ::1] WN = winner_out
    cdef double[:, ::1] Z = zbuf_out

    cdef Py_ssize_t i, xx, yy, px, py
    cdef double d, uu, vv
    for i in range(n):
        d = D[i]
        uu = U[i]
        vv = V[i]
        if not (isfinite(d) and d > 0.0 and isfinite(uu) and isfinite(vv)):
            continue
        if uu < -2e9 or uu > 2e9 or vv < -2e9 or vv > 2e9:
            continue
        px = <Py_ssize_t>rint(uu)
        py = <Py_ssize_t>rint(vv)
        for yy in range(py - r, py + r + 1):
            if yy < 0 or yy >= Hh:
                continue
            for xx in range(px - r, px + r + 1):
                if xx < 0 or xx >= W:
                    continue
                if WN[yy, xx] < 0 or d < Z[yy, xx]:
                    WN[yy, xx] = i
                    Z[yy, xx] = d

    return winner_out, zbuf_out
