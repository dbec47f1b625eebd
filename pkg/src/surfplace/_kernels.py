"""Compiled scalar kernels for the constraint inner loop."""

import math

import numpy as np
from numba import njit

_EPS = 1e-12


@njit(cache=True)
def seg_seg_dist(p1, q1, p2, q2):
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2]
    e = d2[0] * d2[0] + d2[1] * d2[1] + d2[2] * d2[2]
    f = d2[0] * r[0] + d2[1] * r[1] + d2[2] * r[2]
    if a <= _EPS and e <= _EPS:
        s = 0.0
        t = 0.0
    elif a <= _EPS:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = d1[0] * r[0] + d1[1] * r[1] + d1[2] * r[2]
        if e <= _EPS:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = d1[0] * d2[0] + d1[1] * d2[1] + d1[2] * d2[2]
            denom = a * e - b * b
            if denom > _EPS * a * e:
                s = min(max((b * f - c * e) / denom, 0.0), 1.0)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    dx = p1[0] + d1[0] * s - p2[0] - d2[0] * t
    dy = p1[1] + d1[1] * s - p2[1] - d2[1] * t
    dz = p1[2] + d1[2] * s - p2[2] - d2[2] * t
    return math.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True)
def point_in_convex(x, y, z, poly, n, tol):
    """Point assumed on the polygon's plane; CCW about ``n``."""
    k = poly.shape[0]
    for i in range(k):
        j = (i + 1) % k
        ex = poly[j, 0] - poly[i, 0]
        ey = poly[j, 1] - poly[i, 1]
        ez = poly[j, 2] - poly[i, 2]
        # inward edge normal n x e
        ix = n[1] * ez - n[2] * ey
        iy = n[2] * ex - n[0] * ez
        iz = n[0] * ey - n[1] * ex
        side = (x - poly[i, 0]) * ix + (y - poly[i, 1]) * iy + (z - poly[i, 2]) * iz
        if side < -tol * math.sqrt(ex * ex + ey * ey + ez * ez):
            return False
    return True


@njit(cache=True)
def point_polygon_dist(p, poly, n):
    off = (p[0] - poly[0, 0]) * n[0] + (p[1] - poly[0, 1]) * n[1] + (p[2] - poly[0, 2]) * n[2]
    if point_in_convex(p[0] - off * n[0], p[1] - off * n[1], p[2] - off * n[2], poly, n, 1e-12):
        return abs(off)
    best = np.inf
    k = poly.shape[0]
    for i in range(k):
        d = seg_seg_dist(p, p, poly[i], poly[(i + 1) % k])
        if d < best:
            best = d
    return best


@njit(cache=True)
def edges_cross_polygon(a, poly, n):
    k = a.shape[0]
    for i in range(k):
        s = a[i]
        e = a[(i + 1) % k]
        ds = (s[0] - poly[0, 0]) * n[0] + (s[1] - poly[0, 1]) * n[1] + (s[2] - poly[0, 2]) * n[2]
        de = (e[0] - poly[0, 0]) * n[0] + (e[1] - poly[0, 1]) * n[1] + (e[2] - poly[0, 2]) * n[2]
        if ds * de < 0.0:
            w = ds / (ds - de)
            if point_in_convex(s[0] + (e[0] - s[0]) * w, s[1] + (e[1] - s[1]) * w,
                               s[2] + (e[2] - s[2]) * w, poly, n, 1e-12):
                return True
    return False


@njit(cache=True)
def polygon_distance(a, na, b, nb):
    if edges_cross_polygon(a, b, nb) or edges_cross_polygon(b, a, na):
        return 0.0
    best = np.inf
    for i in range(a.shape[0]):
        d = point_polygon_dist(a[i], b, nb)
        if d < best:
            best = d
    for j in range(b.shape[0]):
        d = point_polygon_dist(b[j], a, na)
        if d < best:
            best = d
    ka = a.shape[0]
    kb = b.shape[0]
    for i in range(ka):
        for j in range(kb):
            d = seg_seg_dist(a[i], a[(i + 1) % ka], b[j], b[(j + 1) % kb])
            if d < best:
                best = d
    return best


@njit(cache=True)
def in_front(poly1, n1, poly2, tol):
    """Max normalised back-offset of poly2 vertices behind poly1's plane.

    Returns -1.0 when every vertex pair coincides.
    """
    best = 0.0
    any_valid = False
    for i in range(poly1.shape[0]):
        for j in range(poly2.shape[0]):
            vx = poly2[j, 0] - poly1[i, 0]
            vy = poly2[j, 1] - poly1[i, 1]
            vz = poly2[j, 2] - poly1[i, 2]
            length = math.sqrt(vx * vx + vy * vy + vz * vz)
            if length <= 1e-12:
                continue
            any_valid = True
            along = vx * n1[0] + vy * n1[1] + vz * n1[2]
            if along < -tol:
                val = -along / length
                if val > best:
                    best = val
    if not any_valid:
        return -1.0
    return best


@njit(cache=True)
def outside_fraction(samples, poly2, n2, tol):
    """Fraction of samples whose projection onto poly2's plane lies outside it."""
    outside = 0
    m = samples.shape[0]
    for s in range(m):
        off = ((samples[s, 0] - poly2[0, 0]) * n2[0] + (samples[s, 1] - poly2[0, 1]) * n2[1]
               + (samples[s, 2] - poly2[0, 2]) * n2[2])
        if not point_in_convex(samples[s, 0] - off * n2[0], samples[s, 1] - off * n2[1],
                               samples[s, 2] - off * n2[2], poly2, n2, tol):
            outside += 1
    return outside / m


@njit(cache=True)
def _raster_tri(ax, ay, aw, bx, by, bw, cx, cy, cw, face, depth, owner):
    """Scan-convert one screen triangle; ``*w`` are 1/z for perspective-correct depth."""
    h, w = depth.shape
    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if abs(area) < 1e-12:
        return
    x0 = max(int(math.floor(min(ax, bx, cx))), 0)
    x1 = min(int(math.ceil(max(ax, bx, cx))), w - 1)
    y0 = max(int(math.floor(min(ay, by, cy))), 0)
    y1 = min(int(math.ceil(max(ay, by, cy))), h - 1)
    inv = 1.0 / area
    for py in range(y0, y1 + 1):
        sy = py + 0.5
        for px in range(x0, x1 + 1):
            sx = px + 0.5
            l0 = ((bx - sx) * (cy - sy) - (by - sy) * (cx - sx)) * inv
            l1 = ((cx - sx) * (ay - sy) - (cy - sy) * (ax - sx)) * inv
            l2 = 1.0 - l0 - l1
            if l0 < 0.0 or l1 < 0.0 or l2 < 0.0:
                continue
            iz = l0 * aw + l1 * bw + l2 * cw
            if iz <= 0.0:
                continue
            z = 1.0 / iz
            if z < depth[py, px]:
                depth[py, px] = z
                owner[py, px] = face


@njit(cache=True)
def rasterize(tris, near, focal, depth, owner):
    """Z-buffer camera-space triangles ``(T, 3, 3)`` (camera looks along +z).

    Triangles are clipped against the near plane before projection. Each
    pixel of ``owner`` receives the index of the nearest covering triangle.
    """
    h, w = depth.shape
    cxs = 0.5 * w
    cys = 0.5 * h
    poly = np.empty((4, 3))
    for t in range(tris.shape[0]):
        # Sutherland-Hodgman against z >= near
        k = 0
        for i in range(3):
            p = tris[t, i]
            q = tris[t, (i + 1) % 3]
            pin = p[2] >= near
            qin = q[2] >= near
            if pin:
                poly[k] = p
                k += 1
            if pin != qin:
                s = (near - p[2]) / (q[2] - p[2])
                poly[k] = p + (q - p) * s
                k += 1
        if k < 3:
            continue
        sx = np.empty(k)
        sy = np.empty(k)
        iw = np.empty(k)
        for i in range(k):
            iz = 1.0 / poly[i, 2]
            sx[i] = cxs + focal * poly[i, 0] * iz
            sy[i] = cys - focal * poly[i, 1] * iz
            iw[i] = iz
        for i in range(1, k - 1):
            _raster_tri(sx[0], sy[0], iw[0], sx[i], sy[i], iw[i], sx[i + 1], sy[i + 1], iw[i + 1],
                        t, depth, owner)
