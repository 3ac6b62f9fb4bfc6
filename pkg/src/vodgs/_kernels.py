"""Numba kernels for the per-frame hot path.

Everything here is scalar loop code over Gaussians, tiles and pixels.  The
public modules (projection, rasterizer, gradients) wrap these with array
allocation and validation.  Blending constants live in one place so the
forward and backward sweeps take bit-identical skip decisions.
"""

from __future__ import annotations

import math
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2_0 = 1.0925484305920792
C2_1 = -1.0925484305920792
C2_2 = 0.31539156525252005
C2_3 = -1.0925484305920792
C2_4 = 0.5462742152960396
C3_0 = -0.5900435899266435
C3_1 = 2.890611442640554
C3_2 = -0.4570457994644658
C3_3 = 0.3731763325901154
C3_4 = -0.4570457994644658
C3_5 = 1.445305721320277
C3_6 = -0.5900435899266435

# per-splat gradient slots produced by the raster backward
G_MX, G_MY, G_CA, G_CB, G_CC, G_R, G_G, G_B, G_ALPHA = range(9)
N_SPLAT_GRADS = 9


@njit(cache=True, inline="always")
def _sh_basis(x, y, z, degree, out):
    out[0] = C0
    if degree > 0:
        out[1] = -C1 * y
        out[2] = C1 * z
        out[3] = -C1 * x
    if degree > 1:
        xx = x * x
        yy = y * y
        zz = z * z
        out[4] = C2_0 * x * y
        out[5] = C2_1 * y * z
        out[6] = C2_2 * (2.0 * zz - xx - yy)
        out[7] = C2_3 * x * z
        out[8] = C2_4 * (xx - yy)
        if degree > 2:
            out[9] = C3_0 * y * (3.0 * xx - yy)
            out[10] = C3_1 * x * y * z
            out[11] = C3_2 * y * (4.0 * zz - xx - yy)
            out[12] = C3_3 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
            out[13] = C3_4 * x * (4.0 * zz - xx - yy)
            out[14] = C3_5 * z * (xx - yy)
            out[15] = C3_6 * x * (xx - 3.0 * yy)


@njit(cache=True, inline="always")
def _sh_basis_grad(x, y, z, degree, out):
    """d basis_k / d(x, y, z) for the un-normalized polynomial basis; out is (16, 3)."""
    for k in range(16):
        out[k, 0] = 0.0
        out[k, 1] = 0.0
        out[k, 2] = 0.0
    if degree > 0:
        out[1, 1] = -C1
        out[2, 2] = C1
        out[3, 0] = -C1
    if degree > 1:
        xx = x * x
        yy = y * y
        zz = z * z
        out[4, 0] = C2_0 * y
        out[4, 1] = C2_0 * x
        out[5, 1] = C2_1 * z
        out[5, 2] = C2_1 * y
        out[6, 0] = -2.0 * C2_2 * x
        out[6, 1] = -2.0 * C2_2 * y
        out[6, 2] = 4.0 * C2_2 * z
        out[7, 0] = C2_3 * z
        out[7, 2] = C2_3 * x
        out[8, 0] = 2.0 * C2_4 * x
        out[8, 1] = -2.0 * C2_4 * y
        if degree > 2:
            out[9, 0] = C3_0 * 6.0 * x * y
            out[9, 1] = C3_0 * (3.0 * xx - 3.0 * yy)
            out[10, 0] = C3_1 * y * z
            out[10, 1] = C3_1 * x * z
            out[10, 2] = C3_1 * x * y
            out[11, 0] = C3_2 * -2.0 * x * y
            out[11, 1] = C3_2 * (4.0 * zz - xx - 3.0 * yy)
            out[11, 2] = C3_2 * 8.0 * y * z
            out[12, 0] = C3_3 * -6.0 * x * z
            out[12, 1] = C3_3 * -6.0 * y * z
            out[12, 2] = C3_3 * (6.0 * zz - 3.0 * xx - 3.0 * yy)
            out[13, 0] = C3_4 * (4.0 * zz - 3.0 * xx - yy)
            out[13, 1] = C3_4 * -2.0 * x * y
            out[13, 2] = C3_4 * 8.0 * x * z
            out[14, 0] = C3_5 * 2.0 * x * z
            out[14, 1] = C3_5 * -2.0 * y * z
            out[14, 2] = C3_5 * (xx - yy)
            out[15, 0] = C3_6 * (3.0 * xx - 3.0 * yy)
            out[15, 1] = C3_6 * -6.0 * x * y


@njit(cache=True, inline="always")
def _quat_to_rot(w, x, y, z, r):
    r[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[0, 1] = 2.0 * (x * y - w * z)
    r[0, 2] = 2.0 * (x * z + w * y)
    r[1, 0] = 2.0 * (x * y + w * z)
    r[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[1, 2] = 2.0 * (y * z - w * x)
    r[2, 0] = 2.0 * (x * z - w * y)
    r[2, 1] = 2.0 * (y * z + w * x)
    r[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def preprocess_forward(
    means, log_scales, rotations, sh, gamma, s_hat,
    view_r, view_t, campos, fx, fy, cx, cy, width, height,
    sh_degree, near, guard, radius_sigma, dilation,
    means2d, cov2d, conics, depths, radii, colors, alphas, visible, clamped,
):
    n = means.shape[0]
    rq = np.empty((3, 3))
    m = np.empty((3, 3))
    sig = np.empty((3, 3))
    tm = np.empty((2, 3))
    basis = np.empty(16)
    xlo = -guard * cx / fx
    xhi = guard * (width - cx) / fx
    ylo = -guard * cy / fy
    yhi = guard * (height - cy) / fy
    for i in range(n):
        visible[i] = False
        radii[i] = 0.0
        px = means[i, 0]
        py = means[i, 1]
        pz = means[i, 2]
        tx = view_r[0, 0] * px + view_r[0, 1] * py + view_r[0, 2] * pz + view_t[0]
        ty = view_r[1, 0] * px + view_r[1, 1] * py + view_r[1, 2] * pz + view_t[1]
        tz = view_r[2, 0] * px + view_r[2, 1] * py + view_r[2, 2] * pz + view_t[2]
        depths[i] = tz
        if tz <= near:
            continue
        xz = tx / tz
        yz = ty / tz
        if xz < xlo or xz > xhi or yz < ylo or yz > yhi:
            continue

        qw = rotations[i, 0]
        qx = rotations[i, 1]
        qy = rotations[i, 2]
        qz = rotations[i, 3]
        qn = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        _quat_to_rot(qw / qn, qx / qn, qy / qn, qz / qn, rq)
        for a in range(3):
            s = math.exp(log_scales[i, a])
            for b in range(3):
                m[b, a] = rq[b, a] * s
        for a in range(3):
            for b in range(3):
                sig[a, b] = m[a, 0] * m[b, 0] + m[a, 1] * m[b, 1] + m[a, 2] * m[b, 2]

        j00 = fx / tz
        j02 = -fx * tx / (tz * tz)
        j11 = fy / tz
        j12 = -fy * ty / (tz * tz)
        for b in range(3):
            tm[0, b] = j00 * view_r[0, b] + j02 * view_r[2, b]
            tm[1, b] = j11 * view_r[1, b] + j12 * view_r[2, b]
        ca = 0.0
        cb = 0.0
        cc = 0.0
        for a in range(3):
            for b in range(3):
                ca += tm[0, a] * sig[a, b] * tm[0, b]
                cb += tm[0, a] * sig[a, b] * tm[1, b]
                cc += tm[1, a] * sig[a, b] * tm[1, b]
        ca += dilation
        cc += dilation
        det = ca * cc - cb * cb
        if det <= 0.0:
            continue
        mid = 0.5 * (ca + cc)
        lam = mid + math.sqrt(max(mid * mid - det, 0.0))

        means2d[i, 0] = fx * xz + cx
        means2d[i, 1] = fy * yz + cy
        cov2d[i, 0] = ca
        cov2d[i, 1] = cb
        cov2d[i, 2] = cc
        conics[i, 0] = cc / det
        conics[i, 1] = -cb / det
        conics[i, 2] = ca / det
        radii[i] = radius_sigma * math.sqrt(lam)

        # omega points from the Gaussian to the camera; SH uses the opposite direction
        ux = campos[0] - px
        uy = campos[1] - py
        uz = campos[2] - pz
        un = math.sqrt(ux * ux + uy * uy + uz * uz)
        if un > 0.0:
            wx = ux / un
            wy = uy / un
            wz = uz / un
        else:
            wx = 0.0
            wy = 0.0
            wz = 1.0
        _sh_basis(-wx, -wy, -wz, sh_degree, basis)
        nk = (sh_degree + 1) * (sh_degree + 1)
        for ch in range(3):
            acc = 0.0
            for k in range(nk):
                acc += basis[k] * sh[i, k, ch]
            acc += 0.5
            if acc < 0.0:
                clamped[i, ch] = True
                colors[i, ch] = 0.0
            else:
                clamped[i, ch] = False
                colors[i, ch] = acc

        sq = (
            s_hat[i, 0] * wx * wx
            + s_hat[i, 3] * wy * wy
            + s_hat[i, 5] * wz * wz
            + 2.0 * (s_hat[i, 1] * wx * wy + s_hat[i, 2] * wx * wz + s_hat[i, 4] * wy * wz)
        )
        alphas[i] = _sigmoid(gamma[i] + sq)
        visible[i] = True


@njit(cache=True)
def pixel_span(center, radius, size):
    """Inclusive pixel index range whose centers lie within ``radius`` of ``center``."""
    lo = int(math.ceil(center - radius - 0.5))
    hi = int(math.floor(center + radius - 0.5))
    if lo < 0:
        lo = 0
    if hi > size - 1:
        hi = size - 1
    return lo, hi


@njit(cache=True)
def bin_tiles(order, means2d, radii, width, height, tile):
    """Counting sort of splats (already in global depth order) into tiles."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    counts = np.zeros(n_tiles, dtype=np.int64)
    n = order.shape[0]
    rect = np.empty((n, 4), dtype=np.int64)
    for k in range(n):
        i = order[k]
        x0, x1 = pixel_span(means2d[i, 0], radii[i], width)
        y0, y1 = pixel_span(means2d[i, 1], radii[i], height)
        if x0 > x1 or y0 > y1:
            rect[k, 0] = 1
            rect[k, 1] = 0
            rect[k, 2] = 1
            rect[k, 3] = 0
            continue
        rect[k, 0] = x0 // tile
        rect[k, 1] = x1 // tile
        rect[k, 2] = y0 // tile
        rect[k, 3] = y1 // tile
        for ty in range(rect[k, 2], rect[k, 3] + 1):
            for tx in range(rect[k, 0], rect[k, 1] + 1):
                counts[ty * tiles_x + tx] += 1
    ranges = np.empty((n_tiles, 2), dtype=np.int64)
    total = 0
    for t in range(n_tiles):
        ranges[t, 0] = total
        total += counts[t]
        ranges[t, 1] = total
    entries = np.empty(total, dtype=np.int64)
    fill = ranges[:, 0].copy()
    for k in range(n):
        for ty in range(rect[k, 2], rect[k, 3] + 1):
            for tx in range(rect[k, 0], rect[k, 1] + 1):
                t = ty * tiles_x + tx
                entries[fill[t]] = order[k]
                fill[t] += 1
    return ranges, entries


N_LOCAL = 11


@njit(cache=True, inline="always")
def _load_tile(ranges, entries, t, means2d, conics, radii, colors, alphas, loc):
    """Copy one tile's splats into a contiguous scratch block, front to back."""
    start = ranges[t, 0]
    m = ranges[t, 1] - start
    for k in range(m):
        g = entries[start + k]
        loc[k, 0] = means2d[g, 0]
        loc[k, 1] = means2d[g, 1]
        loc[k, 2] = conics[g, 0]
        loc[k, 3] = conics[g, 1]
        loc[k, 4] = conics[g, 2]
        loc[k, 5] = radii[g]
        loc[k, 6] = alphas[g]
        loc[k, 7] = colors[g, 0]
        loc[k, 8] = colors[g, 1]
        loc[k, 9] = colors[g, 2]
        # conservative: below this exponent alpha * exp(power) < ALPHA_MIN for sure,
        # so exp() can be skipped without changing any skip decision
        if loc[k, 6] > 0.0:
            loc[k, 10] = math.log(ALPHA_MIN / loc[k, 6]) - 1e-6
        else:
            loc[k, 10] = math.inf
    return start, m


def _max_tile_len(ranges):
    out = 0
    for t in range(ranges.shape[0]):
        out = max(out, ranges[t, 1] - ranges[t, 0])
    return out


def _raster_forward(
    ranges, entries, means2d, conics, radii, colors, alphas, background,
    width, height, tile, image, t_final, n_contrib, last_entry,
):
    tiles_x = (width + tile - 1) // tile
    n_tiles = ranges.shape[0]
    maxn = max_tile_len(ranges)
    for t in prange(n_tiles):
        loc = np.empty((maxn, N_LOCAL))
        start, m = _load_tile(ranges, entries, t, means2d, conics, radii, colors, alphas, loc)
        tx0 = (t % tiles_x) * tile
        ty0 = (t // tiles_x) * tile
        for py in range(ty0, min(ty0 + tile, height)):
            for px in range(tx0, min(tx0 + tile, width)):
                fx = px + 0.5
                fy = py + 0.5
                T = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                last = start
                count = 0
                for k in range(m):
                    dx = fx - loc[k, 0]
                    dy = fy - loc[k, 1]
                    r = loc[k, 5]
                    if abs(dx) > r or abs(dy) > r:
                        continue
                    power = -0.5 * (loc[k, 2] * dx * dx + loc[k, 4] * dy * dy) - loc[k, 3] * dx * dy
                    if power > 0.0 or power < loc[k, 10]:
                        continue
                    a = min(ALPHA_MAX, loc[k, 6] * math.exp(power))
                    if a < ALPHA_MIN:
                        continue
                    test_t = T * (1.0 - a)
                    if test_t < T_MIN:
                        break
                    w = a * T
                    cr += loc[k, 7] * w
                    cg += loc[k, 8] * w
                    cb += loc[k, 9] * w
                    T = test_t
                    last = start + k + 1
                    count += 1
                image[py, px, 0] = cr + T * background[0]
                image[py, px, 1] = cg + T * background[1]
                image[py, px, 2] = cb + T * background[2]
                t_final[py, px] = T
                n_contrib[py, px] = count
                last_entry[py, px] = last


def _raster_backward(
    ranges, entries, means2d, conics, radii, colors, alphas, background,
    width, height, tile, t_final, last_entry, grad_image, entry_grads,
):
    tiles_x = (width + tile - 1) // tile
    n_tiles = ranges.shape[0]
    maxn = max_tile_len(ranges)
    for t in prange(n_tiles):
        loc = np.empty((maxn, N_LOCAL))
        start, m = _load_tile(ranges, entries, t, means2d, conics, radii, colors, alphas, loc)
        tx0 = (t % tiles_x) * tile
        ty0 = (t // tiles_x) * tile
        acc = np.zeros((maxn, N_SPLAT_GRADS))
        for py in range(ty0, min(ty0 + tile, height)):
            for px in range(tx0, min(tx0 + tile, width)):
                gr = grad_image[py, px, 0]
                gg = grad_image[py, px, 1]
                gb = grad_image[py, px, 2]
                if gr == 0.0 and gg == 0.0 and gb == 0.0:
                    continue
                fx = px + 0.5
                fy = py + 0.5
                T = t_final[py, px]
                br = background[0]
                bg = background[1]
                bb = background[2]
                for k in range(last_entry[py, px] - 1 - start, -1, -1):
                    dx = fx - loc[k, 0]
                    dy = fy - loc[k, 1]
                    r = loc[k, 5]
                    if abs(dx) > r or abs(dy) > r:
                        continue
                    power = -0.5 * (loc[k, 2] * dx * dx + loc[k, 4] * dy * dy) - loc[k, 3] * dx * dy
                    if power > 0.0 or power < loc[k, 10]:
                        continue
                    gauss = math.exp(power)
                    raw = loc[k, 6] * gauss
                    a = min(ALPHA_MAX, raw)
                    if a < ALPHA_MIN:
                        continue
                    T = T / (1.0 - a)
                    w = a * T
                    acc[k, G_R] += w * gr
                    acc[k, G_G] += w * gg
                    acc[k, G_B] += w * gb
                    cr = loc[k, 7]
                    cgc = loc[k, 8]
                    cbc = loc[k, 9]
                    d_a = T * ((cr - br) * gr + (cgc - bg) * gg + (cbc - bb) * gb)
                    br = a * cr + (1.0 - a) * br
                    bg = a * cgc + (1.0 - a) * bg
                    bb = a * cbc + (1.0 - a) * bb
                    if raw > ALPHA_MAX:
                        continue
                    acc[k, G_ALPHA] += d_a * gauss
                    d_power = d_a * raw
                    acc[k, G_MX] += d_power * (loc[k, 2] * dx + loc[k, 3] * dy)
                    acc[k, G_MY] += d_power * (loc[k, 4] * dy + loc[k, 3] * dx)
                    acc[k, G_CA] += -0.5 * d_power * dx * dx
                    acc[k, G_CB] += -d_power * dx * dy
                    acc[k, G_CC] += -0.5 * d_power * dy * dy
        for k in range(m):
            for j in range(N_SPLAT_GRADS):
                entry_grads[start + k, j] = acc[k, j]


max_tile_len = njit(cache=True)(_max_tile_len)
# tiles write disjoint pixels / entry rows, so both builds produce identical results
# numpy error model: no zero-division branch in the inner loops (1 - a >= 0.01 always)
_RASTER = dict(cache=True, error_model="numpy")
raster_forward_serial = njit(**_RASTER)(_raster_forward)
raster_forward_parallel = njit(parallel=True, **_RASTER)(_raster_forward)
raster_backward_serial = njit(**_RASTER)(_raster_backward)
raster_backward_parallel = njit(parallel=True, **_RASTER)(_raster_backward)


def raster_forward(*args):
    if numba.get_num_threads() > 1:
        return raster_forward_parallel(*args)
    return raster_forward_serial(*args)


def raster_backward(*args):
    if numba.get_num_threads() > 1:
        return raster_backward_parallel(*args)
    return raster_backward_serial(*args)


@njit(cache=True)
def reduce_entry_grads(entries, entry_grads, n_splats):
    """Sum per-entry partials into per-splat gradients in fixed entry order."""
    out = np.zeros((n_splats, N_SPLAT_GRADS))
    for e in range(entries.shape[0]):
        g = entries[e]
        for k in range(N_SPLAT_GRADS):
            out[g, k] += entry_grads[e, k]
    return out


@njit(cache=True)
def preprocess_backward(
    means, log_scales, rotations, sh, gamma, s_hat,
    view_r, view_t, campos, fx, fy, sh_degree, dilation,
    visible, clamped, alphas, splat_grads, omega_grad,
    d_means, d_log_scales, d_rotations, d_sh, d_gamma, d_s_hat,
):
    n = means.shape[0]
    rq = np.empty((3, 3))
    m = np.empty((3, 3))
    sig = np.empty((3, 3))
    tm = np.empty((2, 3))
    gsig = np.empty((3, 3))
    gtm = np.empty((2, 3))
    gm = np.empty((3, 3))
    grq = np.empty((3, 3))
    scale = np.empty(3)
    basis = np.empty(16)
    dbasis = np.empty((16, 3))
    for i in range(n):
        if not visible[i]:
            continue
        px = means[i, 0]
        py = means[i, 1]
        pz = means[i, 2]
        tx = view_r[0, 0] * px + view_r[0, 1] * py + view_r[0, 2] * pz + view_t[0]
        ty = view_r[1, 0] * px + view_r[1, 1] * py + view_r[1, 2] * pz + view_t[1]
        tz = view_r[2, 0] * px + view_r[2, 1] * py + view_r[2, 2] * pz + view_t[2]

        qw0 = rotations[i, 0]
        qx0 = rotations[i, 1]
        qy0 = rotations[i, 2]
        qz0 = rotations[i, 3]
        qn = math.sqrt(qw0 * qw0 + qx0 * qx0 + qy0 * qy0 + qz0 * qz0)
        qw = qw0 / qn
        qx = qx0 / qn
        qy = qy0 / qn
        qz = qz0 / qn
        _quat_to_rot(qw, qx, qy, qz, rq)
        for a in range(3):
            scale[a] = math.exp(log_scales[i, a])
            for b in range(3):
                m[b, a] = rq[b, a] * scale[a]
        for a in range(3):
            for b in range(3):
                sig[a, b] = m[a, 0] * m[b, 0] + m[a, 1] * m[b, 1] + m[a, 2] * m[b, 2]
        iz = 1.0 / tz
        iz2 = iz * iz
        j00 = fx * iz
        j02 = -fx * tx * iz2
        j11 = fy * iz
        j12 = -fy * ty * iz2
        for b in range(3):
            tm[0, b] = j00 * view_r[0, b] + j02 * view_r[2, b]
            tm[1, b] = j11 * view_r[1, b] + j12 * view_r[2, b]
        ca = dilation
        cb = 0.0
        cc = dilation
        for a in range(3):
            for b in range(3):
                ca += tm[0, a] * sig[a, b] * tm[0, b]
                cb += tm[0, a] * sig[a, b] * tm[1, b]
                cc += tm[1, a] * sig[a, b] * tm[1, b]
        det = ca * cc - cb * cb
        ka = cc / det
        kb = -cb / det
        kc = ca / det

        # conic -> 2D covariance: dL/dSigma' = -K G_K K, off-diagonal gradient split in half
        ga = splat_grads[i, G_CA]
        gb = 0.5 * splat_grads[i, G_CB]
        gc = splat_grads[i, G_CC]
        # P = G_K K
        p00 = ga * ka + gb * kb
        p01 = ga * kb + gb * kc
        p10 = gb * ka + gc * kb
        p11 = gb * kb + gc * kc
        s00 = -(ka * p00 + kb * p10)
        s01 = -(ka * p01 + kb * p11)
        s11 = -(kb * p01 + kc * p11)

        # 2D covariance -> 3D covariance and projection matrix T = J W
        for a in range(3):
            for b in range(3):
                gsig[a, b] = (
                    tm[0, a] * s00 * tm[0, b]
                    + tm[0, a] * s01 * tm[1, b]
                    + tm[1, a] * s01 * tm[0, b]
                    + tm[1, a] * s11 * tm[1, b]
                )
        for b in range(3):
            ts0 = 0.0
            ts1 = 0.0
            for a in range(3):
                ts0 += tm[0, a] * sig[a, b]
                ts1 += tm[1, a] * sig[a, b]
            gtm[0, b] = 2.0 * (s00 * ts0 + s01 * ts1)
            gtm[1, b] = 2.0 * (s01 * ts0 + s11 * ts1)
        # dL/dJ = dL/dT W^T (only the four nonzero Jacobian entries matter)
        gj00 = 0.0
        gj02 = 0.0
        gj11 = 0.0
        gj12 = 0.0
        for b in range(3):
            gj00 += gtm[0, b] * view_r[0, b]
            gj02 += gtm[0, b] * view_r[2, b]
            gj11 += gtm[1, b] * view_r[1, b]
            gj12 += gtm[1, b] * view_r[2, b]
        gmx = splat_grads[i, G_MX]
        gmy = splat_grads[i, G_MY]
        gtx = gmx * fx * iz - gj02 * fx * iz2
        gty = gmy * fy * iz - gj12 * fy * iz2
        gtz = (
            -gmx * fx * tx * iz2
            - gmy * fy * ty * iz2
            - gj00 * fx * iz2
            + gj02 * 2.0 * fx * tx * iz2 * iz
            - gj11 * fy * iz2
            + gj12 * 2.0 * fy * ty * iz2 * iz
        )
        dmx = view_r[0, 0] * gtx + view_r[1, 0] * gty + view_r[2, 0] * gtz
        dmy = view_r[0, 1] * gtx + view_r[1, 1] * gty + view_r[2, 1] * gtz
        dmz = view_r[0, 2] * gtx + view_r[1, 2] * gty + view_r[2, 2] * gtz

        # 3D covariance -> scale and rotation; Sigma = M M^T, M = R diag(s)
        for a in range(3):
            for b in range(3):
                acc = 0.0
                for c in range(3):
                    acc += (gsig[a, c] + gsig[c, a]) * m[c, b]
                gm[a, b] = acc
        for b in range(3):
            acc = 0.0
            for a in range(3):
                acc += gm[a, b] * rq[a, b]
                grq[a, b] = gm[a, b] * scale[b]
            d_log_scales[i, b] = acc * scale[b]
        gqw = 2.0 * (-qz * grq[0, 1] + qy * grq[0, 2] + qz * grq[1, 0] - qx * grq[1, 2] - qy * grq[2, 0] + qx * grq[2, 1])
        gqx = 2.0 * (qy * grq[0, 1] + qz * grq[0, 2] + qy * grq[1, 0] - 2.0 * qx * grq[1, 1] - qw * grq[1, 2]
                     + qz * grq[2, 0] + qw * grq[2, 1] - 2.0 * qx * grq[2, 2])
        gqy = 2.0 * (-2.0 * qy * grq[0, 0] + qx * grq[0, 1] + qw * grq[0, 2] + qx * grq[1, 0] + qz * grq[1, 2]
                     - qw * grq[2, 0] + qz * grq[2, 1] - 2.0 * qy * grq[2, 2])
        gqz = 2.0 * (-2.0 * qz * grq[0, 0] - qw * grq[0, 1] + qx * grq[0, 2] + qw * grq[1, 0] - 2.0 * qz * grq[1, 1]
                     + qy * grq[1, 2] + qx * grq[2, 0] + qy * grq[2, 1])
        dot = qw * gqw + qx * gqx + qy * gqy + qz * gqz
        d_rotations[i, 0] = (gqw - qw * dot) / qn
        d_rotations[i, 1] = (gqx - qx * dot) / qn
        d_rotations[i, 2] = (gqy - qy * dot) / qn
        d_rotations[i, 3] = (gqz - qz * dot) / qn

        # view direction terms
        ux = campos[0] - px
        uy = campos[1] - py
        uz = campos[2] - pz
        un = math.sqrt(ux * ux + uy * uy + uz * uz)
        if un > 0.0:
            wx = ux / un
            wy = uy / un
            wz = uz / un
        else:
            wx = 0.0
            wy = 0.0
            wz = 1.0

        # color: SH direction is -omega
        _sh_basis(-wx, -wy, -wz, sh_degree, basis)
        _sh_basis_grad(-wx, -wy, -wz, sh_degree, dbasis)
        nk = (sh_degree + 1) * (sh_degree + 1)
        gdx = 0.0
        gdy = 0.0
        gdz = 0.0
        for ch in range(3):
            gcol = splat_grads[i, G_R + ch]
            if clamped[i, ch]:
                gcol = 0.0
            for k in range(nk):
                d_sh[i, k, ch] = basis[k] * gcol
                coef = sh[i, k, ch] * gcol
                gdx += coef * dbasis[k, 0]
                gdy += coef * dbasis[k, 1]
                gdz += coef * dbasis[k, 2]
        # chain through d = -omega: dL/domega = -dL/dd
        gwx = -gdx
        gwy = -gdy
        gwz = -gdz

        # opacity: alpha = sigmoid(gamma + w^T S w)
        al = alphas[i]
        dz = splat_grads[i, G_ALPHA] * al * (1.0 - al)
        d_gamma[i] = dz
        d_s_hat[i, 0] = dz * wx * wx
        d_s_hat[i, 1] = dz * 2.0 * wx * wy
        d_s_hat[i, 2] = dz * 2.0 * wx * wz
        d_s_hat[i, 3] = dz * wy * wy
        d_s_hat[i, 4] = dz * 2.0 * wy * wz
        d_s_hat[i, 5] = dz * wz * wz
        if omega_grad and un > 0.0:
            sw0 = s_hat[i, 0] * wx + s_hat[i, 1] * wy + s_hat[i, 2] * wz
            sw1 = s_hat[i, 1] * wx + s_hat[i, 3] * wy + s_hat[i, 4] * wz
            sw2 = s_hat[i, 2] * wx + s_hat[i, 4] * wy + s_hat[i, 5] * wz
            gwx += 2.0 * dz * sw0
            gwy += 2.0 * dz * sw1
            gwz += 2.0 * dz * sw2
            # omega = u/|u|, u = campos - mu
            wdot = wx * gwx + wy * gwy + wz * gwz
            dmx -= (gwx - wx * wdot) / un
            dmy -= (gwy - wy * wdot) / un
            dmz -= (gwz - wz * wdot) / un
        d_means[i, 0] = dmx
        d_means[i, 1] = dmy
        d_means[i, 2] = dmz

