"""Numba kernels for the ray-driven projector pair and FDK backprojection.

All kernels accumulate in float64. The forward kernel writes every detector
pixel from exactly one loop iteration; the adjoint kernels split the views
into a fixed number of chunks, each with a private accumulation buffer, and
the buffers are summed in chunk order. Results therefore do not depend on
the number of worker threads.
"""

import math

import numpy as np
from numba import njit, prange

ADJOINT_CHUNKS = 8


@njit(cache=True, inline="always")
def _ray(ct, st, d_so, d_sd, u, v):
    sx = d_so * ct
    sy = d_so * st
    px = -(d_sd - d_so) * ct - u * st
    py = -(d_sd - d_so) * st + u * ct
    dx = px - sx
    dy = py - sy
    dz = v
    norm = math.sqrt(dx * dx + dy * dy + dz * dz)
    return sx, sy, dx / norm, dy / norm, dz / norm


@njit(cache=True, inline="always")
def _slab(s, d, h, t0, t1):
    if abs(d) < 1e-15:
        if abs(s) >= h:
            return 1.0, 0.0
        return t0, t1
    a = (-h - s) / d
    b = (h - s) / d
    if a > b:
        a, b = b, a
    return max(t0, a), min(t1, b)


@njit(cache=True, inline="always")
def _clip(sx, sy, dx, dy, dz, hx, hy, hz):
    t0, t1 = -1e300, 1e300
    t0, t1 = _slab(sx, dx, hx, t0, t1)
    t0, t1 = _slab(sy, dy, hy, t0, t1)
    t0, t1 = _slab(0.0, dz, hz, t0, t1)
    return t0, t1


@njit(cache=True, parallel=True)
def forward_kernel(vol, cos_a, sin_a, d_so, d_sd, pitch, u0, v0, vs, out):
    nz, ny, nx = vol.shape
    nv, nr, nc = out.shape
    hx = 0.5 * (nx + 1) * vs
    hy = 0.5 * (ny + 1) * vs
    hz = 0.5 * (nz + 1) * vs
    cx = 0.5 * (nx - 1)
    cy = 0.5 * (ny - 1)
    cz = 0.5 * (nz - 1)
    step = vs
    inv = 1.0 / vs
    for vr in prange(nv * nr):
        iv = vr // nr
        r = vr - iv * nr
        ct = cos_a[iv]
        st = sin_a[iv]
        v = (r - 0.5 * (nr - 1) - v0) * pitch
        for c in range(nc):
            u = (c - 0.5 * (nc - 1) - u0) * pitch
            sx, sy, dx, dy, dz = _ray(ct, st, d_so, d_sd, u, v)
            t0, t1 = _clip(sx, sy, dx, dy, dz, hx, hy, hz)
            acc = 0.0
            if t1 > t0:
                ns = int(math.ceil((t1 - t0) / step))
                for k in range(ns):
                    t = t0 + (k + 0.5) * step
                    fx = (sx + t * dx) * inv + cx
                    fy = (sy + t * dy) * inv + cy
                    fz = (t * dz) * inv + cz
                    i0 = int(math.floor(fx))
                    j0 = int(math.floor(fy))
                    k0 = int(math.floor(fz))
                    wx = fx - i0
                    wy = fy - j0
                    wz = fz - k0
                    for dk in range(2):
                        kk = k0 + dk
                        if kk < 0 or kk >= nz:
                            continue
                        wk = wz if dk else 1.0 - wz
                        for dj in range(2):
                            jj = j0 + dj
                            if jj < 0 or jj >= ny:
                                continue
                            wj = wk * (wy if dj else 1.0 - wy)
                            for di in range(2):
                                ii = i0 + di
                                if ii < 0 or ii >= nx:
                                    continue
                                acc += wj * (wx if di else 1.0 - wx) * vol[kk, jj, ii]
            out[iv, r, c] = acc * step


@njit(cache=True, parallel=True)
def adjoint_kernel(proj, cos_a, sin_a, d_so, d_sd, pitch, u0, v0, vs, bufs):
    nch, nz, ny, nx = bufs.shape
    nv, nr, nc = proj.shape
    hx = 0.5 * (nx + 1) * vs
    hy = 0.5 * (ny + 1) * vs
    hz = 0.5 * (nz + 1) * vs
    cx = 0.5 * (nx - 1)
    cy = 0.5 * (ny - 1)
    cz = 0.5 * (nz - 1)
    step = vs
    inv = 1.0 / vs
    for ch in prange(nch):
        buf = bufs[ch]
        for iv in range(ch * nv // nch, (ch + 1) * nv // nch):
            ct = cos_a[iv]
            st = sin_a[iv]
            for r in range(nr):
                v = (r - 0.5 * (nr - 1) - v0) * pitch
                for c in range(nc):
                    val = proj[iv, r, c] * step
                    if val == 0.0:
                        continue
                    u = (c - 0.5 * (nc - 1) - u0) * pitch
                    sx, sy, dx, dy, dz = _ray(ct, st, d_so, d_sd, u, v)
                    t0, t1 = _clip(sx, sy, dx, dy, dz, hx, hy, hz)
                    if t1 <= t0:
                        continue
                    ns = int(math.ceil((t1 - t0) / step))
                    for k in range(ns):
                        t = t0 + (k + 0.5) * step
                        fx = (sx + t * dx) * inv + cx
                        fy = (sy + t * dy) * inv + cy
                        fz = (t * dz) * inv + cz
                        i0 = int(math.floor(fx))
                        j0 = int(math.floor(fy))
                        k0 = int(math.floor(fz))
                        wx = fx - i0
                        wy = fy - j0
                        wz = fz - k0
                        for dk in range(2):
                            kk = k0 + dk
                            if kk < 0 or kk >= nz:
                                continue
                            wk = wz if dk else 1.0 - wz
                            for dj in range(2):
                                jj = j0 + dj
                                if jj < 0 or jj >= ny:
                                    continue
                                wj = wk * (wy if dj else 1.0 - wy)
                                for di in range(2):
                                    ii = i0 + di
                                    if ii < 0 or ii >= nx:
                                        continue
                                    buf[kk, jj, ii] += val * wj * (wx if di else 1.0 - wx)


@njit(cache=True, parallel=True)
def fdk_backproject_kernel(filt, cos_a, sin_a, weights, d_so, d_sd, pitch, u0, v0, vs, out):
    """Voxel-driven FDK backprojection of cosine-weighted, filtered views.

    ``filt`` holds the filtered data on the physical detector. Each voxel
    collects ``w * (d_so / U)^2 * q(u, v)`` with bilinear interpolation;
    samples falling outside the detector contribute nothing.
    """
    nz, ny, nx = out.shape
    nv, nr, nc = filt.shape
    cu = 0.5 * (nc - 1) + u0
    cv = 0.5 * (nr - 1) + v0
    for kz in prange(nz):
        z = (kz - 0.5 * (nz - 1)) * vs
        for iv in range(nv):
            ct = cos_a[iv]
            st = sin_a[iv]
            w = weights[iv]
            for jy in range(ny):
                y = (jy - 0.5 * (ny - 1)) * vs
                for ix in range(nx):
                    x = (ix - 0.5 * (nx - 1)) * vs
                    big_u = d_so - (x * ct + y * st)
                    mag = d_sd / big_u
                    fu = mag * (-x * st + y * ct) / pitch + cu
                    fv = mag * z / pitch + cv
                    if fu < 0.0 or fu > nc - 1 or fv < 0.0 or fv > nr - 1:
                        continue
                    c0 = min(int(fu), nc - 2)
                    r0 = min(int(fv), nr - 2)
                    au = fu - c0
                    av = fv - r0
                    q = (1.0 - av) * ((1.0 - au) * filt[iv, r0, c0] + au * filt[iv, r0, c0 + 1]) + av * (
                        (1.0 - au) * filt[iv, r0 + 1, c0] + au * filt[iv, r0 + 1, c0 + 1]
                    )
                    ratio = d_so / big_u
                    out[kz, jy, ix] += w * ratio * ratio * q


def sum_buffers(bufs: np.ndarray) -> np.ndarray:
    out = bufs[0].copy()
    for b in bufs[1:]:
        out += b
    return out
