"""Numba kernels for the tile rasterizer.

Determinism contract: results are bitwise identical for any thread count.
Every prange loop writes only to slots owned by its iteration index (a
point, a tile, or an entry that belongs to exactly one tile), and every
accumulation happens inside a sequential per-tile or per-point loop with a
fixed iteration order. No atomics, no reductions across threads, no
fastmath.

Blending follows the standard front-to-back compositing:
  alpha = min(ALPHA_CLAMP, opacity * exp(power)), power = -0.5 d^T conic d
  skip when power > 0 (degenerate numerics) or alpha < ALPHA_THRESHOLD
  C += c * alpha * T;  T *= 1 - alpha
The tiled path additionally stops a pixel once T < saturation_stop; the
reference blend in reference.py never stops, which is the only arithmetic
difference between the two.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def project_points(
    mu_w, R_w, log_scales, opacity, sh_t, sh_degree,
    cam_R, cam_t, cam_center,
    fx, fy, cx, cy, width, height, near, guard, lowpass, alpha_thresh,
    valid, p_cam, mean2d, cov2d, conic, radius, depth, color, clamp_mask, viewdir,
):
    """Camera-frame transform, frustum culling, EWA covariance projection,
    and SH color evaluation for every point. All outputs are per-point."""
    n = mu_w.shape[0]
    tanx = 0.5 * width / fx
    tany = 0.5 * height / fy
    for i in prange(n):
        valid[i] = 0
        x = mu_w[i, 0]
        y = mu_w[i, 1]
        z = mu_w[i, 2]
        px = cam_R[0, 0] * x + cam_R[0, 1] * y + cam_R[0, 2] * z + cam_t[0]
        py = cam_R[1, 0] * x + cam_R[1, 1] * y + cam_R[1, 2] * z + cam_t[1]
        pz = cam_R[2, 0] * x + cam_R[2, 1] * y + cam_R[2, 2] * z + cam_t[2]
        if pz <= near:
            continue
        if abs(px / pz) > guard * tanx or abs(py / pz) > guard * tany:
            continue

        # Sigma_w = (R S)(R S)^T
        s0 = math.exp(log_scales[i, 0])
        s1 = math.exp(log_scales[i, 1])
        s2 = math.exp(log_scales[i, 2])
        m00 = R_w[i, 0, 0] * s0
        m01 = R_w[i, 0, 1] * s1
        m02 = R_w[i, 0, 2] * s2
        m10 = R_w[i, 1, 0] * s0
        m11 = R_w[i, 1, 1] * s1
        m12 = R_w[i, 1, 2] * s2
        m20 = R_w[i, 2, 0] * s0
        m21 = R_w[i, 2, 1] * s1
        m22 = R_w[i, 2, 2] * s2
        c00 = m00 * m00 + m01 * m01 + m02 * m02
        c01 = m00 * m10 + m01 * m11 + m02 * m12
        c02 = m00 * m20 + m01 * m21 + m02 * m22
        c11 = m10 * m10 + m11 * m11 + m12 * m12
        c12 = m10 * m20 + m11 * m21 + m12 * m22
        c22 = m20 * m20 + m21 * m21 + m22 * m22

        # A = J @ cam_R, J rows scaled by the perspective Jacobian at p
        j00 = fx / pz
        j02 = -fx * px / (pz * pz)
        j11 = fy / pz
        j12 = -fy * py / (pz * pz)
        a00 = j00 * cam_R[0, 0] + j02 * cam_R[2, 0]
        a01 = j00 * cam_R[0, 1] + j02 * cam_R[2, 1]
        a02 = j00 * cam_R[0, 2] + j02 * cam_R[2, 2]
        a10 = j11 * cam_R[1, 0] + j12 * cam_R[2, 0]
        a11 = j11 * cam_R[1, 1] + j12 * cam_R[2, 1]
        a12 = j11 * cam_R[1, 2] + j12 * cam_R[2, 2]
        # Sigma' = A Sigma_w A^T + lowpass I
        t00 = a00 * c00 + a01 * c01 + a02 * c02
        t01 = a00 * c01 + a01 * c11 + a02 * c12
        t02 = a00 * c02 + a01 * c12 + a02 * c22
        t10 = a10 * c00 + a11 * c01 + a12 * c02
        t11 = a10 * c01 + a11 * c11 + a12 * c12
        t12 = a10 * c02 + a11 * c12 + a12 * c22
        va = t00 * a00 + t01 * a01 + t02 * a02 + lowpass
        vb = t00 * a10 + t01 * a11 + t02 * a12
        vc = t10 * a10 + t11 * a11 + t12 * a12 + lowpass
        det = va * vc - vb * vb
        if det <= 1e-12:
            continue

        mid = 0.5 * (va + vc)
        disc = mid * mid - det
        if disc < 0.0:
            disc = 0.0
        lam_max = mid + math.sqrt(disc)
        op = opacity[i]
        ratio = op / alpha_thresh
        if ratio < 1.0:
            continue  # alpha can never reach the blend threshold
        q = 2.0 * math.log(ratio)
        if q < 9.0:
            q = 9.0
        r = math.ceil(math.sqrt(q * lam_max))

        vx = x - cam_center[0]
        vy = y - cam_center[1]
        vz = z - cam_center[2]
        vn = math.sqrt(vx * vx + vy * vy + vz * vz)
        if vn < 1e-12:
            continue
        dx = vx / vn
        dy = vy / vn
        dz = vz / vn

        valid[i] = 1
        p_cam[i, 0] = px
        p_cam[i, 1] = py
        p_cam[i, 2] = pz
        mean2d[i, 0] = fx * px / pz + cx
        mean2d[i, 1] = fy * py / pz + cy
        cov2d[i, 0] = va
        cov2d[i, 1] = vb
        cov2d[i, 2] = vc
        conic[i, 0] = vc / det
        conic[i, 1] = -vb / det
        conic[i, 2] = va / det
        radius[i] = r
        depth[i] = pz
        viewdir[i, 0] = dx
        viewdir[i, 1] = dy
        viewdir[i, 2] = dz

        for ch in range(3):
            acc = 0.28209479177387814 * sh_t[i, 0, ch]
            if sh_degree >= 1:
                acc += 0.4886025119029199 * (
                    -dy * sh_t[i, 1, ch] + dz * sh_t[i, 2, ch] - dx * sh_t[i, 3, ch]
                )
            if sh_degree >= 2:
                xx = dx * dx
                yy = dy * dy
                zz = dz * dz
                acc += 1.0925484305920792 * dx * dy * sh_t[i, 4, ch]
                acc += -1.0925484305920792 * dy * dz * sh_t[i, 5, ch]
                acc += 0.31539156525252005 * (2 * zz - xx - yy) * sh_t[i, 6, ch]
                acc += -1.0925484305920792 * dx * dz * sh_t[i, 7, ch]
                acc += 0.5462742152960396 * (xx - yy) * sh_t[i, 8, ch]
            if sh_degree >= 3:
                xx = dx * dx
                yy = dy * dy
                zz = dz * dz
                acc += -0.5900435899266435 * dy * (3 * xx - yy) * sh_t[i, 9, ch]
                acc += 2.890611442640554 * dx * dy * dz * sh_t[i, 10, ch]
                acc += -0.4570457994644658 * dy * (4 * zz - xx - yy) * sh_t[i, 11, ch]
                acc += 0.3731763325901154 * dz * (2 * zz - 3 * xx - 3 * yy) * sh_t[i, 12, ch]
                acc += -0.4570457994644658 * dx * (4 * zz - xx - yy) * sh_t[i, 13, ch]
                acc += 1.445305721320277 * dz * (xx - yy) * sh_t[i, 14, ch]
                acc += -0.5900435899266435 * dx * (xx - 3 * yy) * sh_t[i, 15, ch]
            acc += 0.5
            if acc > 0.0:
                color[i, ch] = acc
                clamp_mask[i, ch] = 1
            else:
                color[i, ch] = 0.0
                clamp_mask[i, ch] = 0


@njit(cache=True, parallel=True)
def count_tile_hits(mean2d, radius, grid_x, grid_y, tile_size, counts):
    """Number of tiles each (sorted, valid) point's support rect covers."""
    n = mean2d.shape[0]
    for i in prange(n):
        r = radius[i]
        x0 = int(math.floor((mean2d[i, 0] - r) / tile_size))
        x1 = int(math.floor((mean2d[i, 0] + r) / tile_size)) + 1
        y0 = int(math.floor((mean2d[i, 1] - r) / tile_size))
        y1 = int(math.floor((mean2d[i, 1] + r) / tile_size)) + 1
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > grid_x:
            x1 = grid_x
        if y1 > grid_y:
            y1 = grid_y
        nx = x1 - x0
        ny = y1 - y0
        counts[i] = nx * ny if (nx > 0 and ny > 0) else 0


@njit(cache=True, parallel=True)
def fill_tile_entries(mean2d, radius, grid_x, grid_y, tile_size, offsets,
                      entry_tile, entry_point):
    """Write (tile_id, point) pairs into each point's reserved slot range."""
    n = mean2d.shape[0]
    for i in prange(n):
        r = radius[i]
        x0 = int(math.floor((mean2d[i, 0] - r) / tile_size))
        x1 = int(math.floor((mean2d[i, 0] + r) / tile_size)) + 1
        y0 = int(math.floor((mean2d[i, 1] - r) / tile_size))
        y1 = int(math.floor((mean2d[i, 1] + r) / tile_size)) + 1
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > grid_x:
            x1 = grid_x
        if y1 > grid_y:
            y1 = grid_y
        slot = offsets[i]
        for ty in range(y0, y1):
            for tx in range(x0, x1):
                entry_tile[slot] = ty * grid_x + tx
                entry_point[slot] = i
                slot += 1


@njit(cache=True, parallel=True)
def forward_tiles(
    height, width, tile_size, grid_x,
    starts, ends, entry_point,
    mean2d, conic, radius, color, sem, depth, opacity,
    saturation_stop, alpha_clamp, alpha_thresh,
    out_color, out_depth, out_sem, out_T, out_last,
):
    """Front-to-back blend, one parallel iteration per tile.

    Entries are grouped by tile and depth-ordered within each group. The
    inner loops are entry-major over the entry's pixel rect clipped to the
    tile; per-pixel transmittance lives in a tile-local buffer so the
    arithmetic per pixel is the exact depth-ordered sequence regardless of
    tiling or thread count. out_last records the last entry index that
    contributed to each pixel (-1 if none) for the backward walk.
    """
    n_tiles = starts.shape[0]
    n_sem = sem.shape[1]
    for tile in prange(n_tiles):
        s = starts[tile]
        e = ends[tile]
        ty = tile // grid_x
        tx = tile - ty * grid_x
        px0 = tx * tile_size
        py0 = ty * tile_size
        px1 = min(px0 + tile_size, width)
        py1 = min(py0 + tile_size, height)
        h = py1 - py0
        w = px1 - px0
        if h <= 0 or w <= 0:
            continue

        T = np.ones((h, w), dtype=np.float64)
        acc_c = np.zeros((h, w, 3), dtype=np.float64)
        acc_d = np.zeros((h, w), dtype=np.float64)
        acc_s = np.zeros((h, w, n_sem), dtype=np.float64)
        last = np.full((h, w), -1, dtype=np.int64)

        for k in range(s, e):
            pt = entry_point[k]
            mx = mean2d[pt, 0]
            my = mean2d[pt, 1]
            r = radius[pt]
            ca = conic[pt, 0]
            cb = conic[pt, 1]
            cc = conic[pt, 2]
            op = opacity[pt]
            ix0 = max(px0, int(math.ceil(mx - r)))
            ix1 = min(px1 - 1, int(math.floor(mx + r)))
            iy0 = max(py0, int(math.ceil(my - r)))
            iy1 = min(py1 - 1, int(math.floor(my + r)))
            for py in range(iy0, iy1 + 1):
                ly = py - py0
                for px in range(ix0, ix1 + 1):
                    lx = px - px0
                    t_cur = T[ly, lx]
                    if t_cur < saturation_stop:
                        continue
                    dx = mx - px
                    dy = my - py
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                    if power > 0.0:
                        continue
                    alpha = op * math.exp(power)
                    if alpha > alpha_clamp:
                        alpha = alpha_clamp
                    if alpha < alpha_thresh:
                        continue
                    wgt = alpha * t_cur
                    acc_c[ly, lx, 0] += color[pt, 0] * wgt
                    acc_c[ly, lx, 1] += color[pt, 1] * wgt
                    acc_c[ly, lx, 2] += color[pt, 2] * wgt
                    acc_d[ly, lx] += depth[pt] * wgt
                    for m in range(n_sem):
                        acc_s[ly, lx, m] += sem[pt, m] * wgt
                    T[ly, lx] = t_cur * (1.0 - alpha)
                    last[ly, lx] = k

        for ly in range(h):
            for lx in range(w):
                out_color[py0 + ly, px0 + lx, 0] = acc_c[ly, lx, 0]
                out_color[py0 + ly, px0 + lx, 1] = acc_c[ly, lx, 1]
                out_color[py0 + ly, px0 + lx, 2] = acc_c[ly, lx, 2]
                out_depth[py0 + ly, px0 + lx] = acc_d[ly, lx]
                out_T[py0 + ly, px0 + lx] = T[ly, lx]
                out_last[py0 + ly, px0 + lx] = last[ly, lx]
                for m in range(n_sem):
                    out_sem[py0 + ly, px0 + lx, m] = acc_s[ly, lx, m]


@njit(cache=True, parallel=True)
def backward_tiles(
    height, width, tile_size, grid_x,
    starts, ends, entry_point,
    mean2d, conic, radius, color, sem, depth, opacity,
    alpha_clamp, alpha_thresh,
    final_T, last_entry,
    d_color_img, d_depth_img, d_alpha_img, d_sem_img, sem_alpha_scale,
    g_mean2d, g_conic, g_color, g_sem, g_depth, g_opacity,
):
    """Reverse blend walk. Writes gradients per ENTRY; an entry belongs to
    exactly one tile so parallel tiles never share an output slot, and the
    entry-descending, pixel-row-major accumulation order is fixed.

    Transmittance before each contribution is recovered by dividing the
    running value by (1 - alpha); safe because alpha <= ALPHA_CLAMP < 1.
    Per-pixel suffix sums turn the downstream-contribution term of
    d(blend)/d(alpha) into an O(1) update.
    """
    n_tiles = starts.shape[0]
    n_sem = sem.shape[1]
    for tile in prange(n_tiles):
        s = starts[tile]
        e = ends[tile]
        if e <= s:
            continue
        ty = tile // grid_x
        tx = tile - ty * grid_x
        px0 = tx * tile_size
        py0 = ty * tile_size
        px1 = min(px0 + tile_size, width)
        py1 = min(py0 + tile_size, height)
        h = py1 - py0
        w = px1 - px0
        if h <= 0 or w <= 0:
            continue

        T = np.empty((h, w), dtype=np.float64)
        suf_c = np.zeros((h, w, 3), dtype=np.float64)
        suf_d = np.zeros((h, w), dtype=np.float64)
        suf_o = np.zeros((h, w), dtype=np.float64)
        suf_s = np.zeros((h, w, n_sem), dtype=np.float64)
        for ly in range(h):
            for lx in range(w):
                T[ly, lx] = final_T[py0 + ly, px0 + lx]

        for k in range(e - 1, s - 1, -1):
            pt = entry_point[k]
            mx = mean2d[pt, 0]
            my = mean2d[pt, 1]
            r = radius[pt]
            ca = conic[pt, 0]
            cb = conic[pt, 1]
            cc = conic[pt, 2]
            op = opacity[pt]
            ix0 = max(px0, int(math.ceil(mx - r)))
            ix1 = min(px1 - 1, int(math.floor(mx + r)))
            iy0 = max(py0, int(math.ceil(my - r)))
            iy1 = min(py1 - 1, int(math.floor(my + r)))
            for py in range(iy0, iy1 + 1):
                ly = py - py0
                for px in range(ix0, ix1 + 1):
                    lx = px - px0
                    if k > last_entry[py, px]:
                        continue  # never reached in forward (saturated or later)
                    dx = mx - px
                    dy = my - py
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                    if power > 0.0:
                        continue
                    G = math.exp(power)
                    raw = op * G
                    clamped = raw > alpha_clamp
                    alpha = alpha_clamp if clamped else raw
                    if alpha < alpha_thresh:
                        continue

                    om = 1.0 - alpha
                    t_before = T[ly, lx] / om
                    wgt = alpha * t_before

                    dc0 = d_color_img[py, px, 0]
                    dc1 = d_color_img[py, px, 1]
                    dc2 = d_color_img[py, px, 2]
                    dd = d_depth_img[py, px]
                    da_img = d_alpha_img[py, px]

                    g_color[k, 0] += dc0 * wgt
                    g_color[k, 1] += dc1 * wgt
                    g_color[k, 2] += dc2 * wgt
                    g_depth[k] += dd * wgt

                    d_alpha = (
                        dc0 * (color[pt, 0] * t_before - suf_c[ly, lx, 0] / om)
                        + dc1 * (color[pt, 1] * t_before - suf_c[ly, lx, 1] / om)
                        + dc2 * (color[pt, 2] * t_before - suf_c[ly, lx, 2] / om)
                        + dd * (depth[pt] * t_before - suf_d[ly, lx] / om)
                        + da_img * (t_before - suf_o[ly, lx] / om)
                    )
                    for m in range(n_sem):
                        dsm = d_sem_img[py, px, m]
                        g_sem[k, m] += dsm * wgt
                        # sem_alpha_scale = 0 realizes the stop-gradient:
                        # semantic upstream reaches only the logit slots
                        d_alpha += sem_alpha_scale * dsm * (
                            sem[pt, m] * t_before - suf_s[ly, lx, m] / om
                        )

                    suf_c[ly, lx, 0] += color[pt, 0] * wgt
                    suf_c[ly, lx, 1] += color[pt, 1] * wgt
                    suf_c[ly, lx, 2] += color[pt, 2] * wgt
                    suf_d[ly, lx] += depth[pt] * wgt
                    suf_o[ly, lx] += wgt
                    for m in range(n_sem):
                        suf_s[ly, lx, m] += sem[pt, m] * wgt
                    T[ly, lx] = t_before

                    if not clamped:
                        g_opacity[k] += d_alpha * G
                        dpower = d_alpha * op * G
                        g_mean2d[k, 0] += dpower * (-ca * dx - cb * dy)
                        g_mean2d[k, 1] += dpower * (-cc * dy - cb * dx)
                        g_conic[k, 0] += dpower * (-0.5 * dx * dx)
                        g_conic[k, 1] += dpower * (-dx * dy)
                        g_conic[k, 2] += dpower * (-0.5 * dy * dy)


@njit(cache=True)
def reference_blend(
    height, width,
    mean2d, conic, color, sem, depth, opacity,
    alpha_clamp, alpha_thresh,
    out_color, out_depth, out_sem, out_T,
):
    """Ground-truth blend: per pixel, every point in depth order, no tiles,
    no saturation stop. Same alpha formula and skip rules as the tiled
    path, so the two agree wherever no pixel saturates."""
    n = mean2d.shape[0]
    n_sem = sem.shape[1]
    for py in range(height):
        for px in range(width):
            T = 1.0
            for i in range(n):
                dx = mean2d[i, 0] - px
                dy = mean2d[i, 1] - py
                power = (
                    -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy)
                    - conic[i, 1] * dx * dy
                )
                if power > 0.0:
                    continue
                alpha = opacity[i] * math.exp(power)
                if alpha > alpha_clamp:
                    alpha = alpha_clamp
                if alpha < alpha_thresh:
                    continue
                wgt = alpha * T
                out_color[py, px, 0] += color[i, 0] * wgt
                out_color[py, px, 1] += color[i, 1] * wgt
                out_color[py, px, 2] += color[i, 2] * wgt
                out_depth[py, px] += depth[i] * wgt
                for m in range(n_sem):
                    out_sem[py, px, m] += sem[i, m] * wgt
                T *= 1.0 - alpha
            out_T[py, px] = T


@njit(cache=True, parallel=True)
def point_backward(
    valid, p_cam, cov2d, conic, R_w, log_scales, opacity, sh_t, sh_degree,
    viewdir, mu_w, cam_center, clamp_mask,
    cam_R, fx, fy,
    g_mean2d, g_conic, g_color, g_depth, g_opacity_raw,
    d_mu_w, d_R_w, d_log_scales, d_opacity_logit, d_sh_t,
):
    """Per-point chain from screen-space gradients back to world-space
    parameters: conic -> projected covariance -> world covariance ->
    (rotation matrix, log scales); mean2d/depth/J -> camera point -> world
    mean; color -> SH coefficients and view direction. Writes are disjoint
    per point."""
    n = p_cam.shape[0]
    for i in prange(n):
        if valid[i] == 0:
            continue
        X = p_cam[i, 0]
        Y = p_cam[i, 1]
        Z = p_cam[i, 2]

        # conic = inv(Sigma'), so dSigma' = -Lambda G_L Lambda with the
        # packed (a, b, c) gradient unpacked into a symmetric matrix
        la = conic[i, 0]
        lb = conic[i, 1]
        lc = conic[i, 2]
        ga = g_conic[i, 0]
        gb = 0.5 * g_conic[i, 1]
        gc = g_conic[i, 2]
        # t = Lambda @ G_L
        t00 = la * ga + lb * gb
        t01 = la * gb + lb * gc
        t10 = lb * ga + lc * gb
        t11 = lb * gb + lc * gc
        # G_S = -(t @ Lambda), symmetric
        gs00 = -(t00 * la + t01 * lb)
        gs01 = -(t00 * lb + t01 * lc)
        gs11 = -(t10 * lb + t11 * lc)

        s0 = math.exp(log_scales[i, 0])
        s1 = math.exp(log_scales[i, 1])
        s2 = math.exp(log_scales[i, 2])
        m00 = R_w[i, 0, 0] * s0
        m01 = R_w[i, 0, 1] * s1
        m02 = R_w[i, 0, 2] * s2
        m10 = R_w[i, 1, 0] * s0
        m11 = R_w[i, 1, 1] * s1
        m12 = R_w[i, 1, 2] * s2
        m20 = R_w[i, 2, 0] * s0
        m21 = R_w[i, 2, 1] * s1
        m22 = R_w[i, 2, 2] * s2
        c00 = m00 * m00 + m01 * m01 + m02 * m02
        c01 = m00 * m10 + m01 * m11 + m02 * m12
        c02 = m00 * m20 + m01 * m21 + m02 * m22
        c11 = m10 * m10 + m11 * m11 + m12 * m12
        c12 = m10 * m20 + m11 * m21 + m12 * m22
        c22 = m20 * m20 + m21 * m21 + m22 * m22

        j00 = fx / Z
        j02 = -fx * X / (Z * Z)
        j11 = fy / Z
        j12 = -fy * Y / (Z * Z)
        a00 = j00 * cam_R[0, 0] + j02 * cam_R[2, 0]
        a01 = j00 * cam_R[0, 1] + j02 * cam_R[2, 1]
        a02 = j00 * cam_R[0, 2] + j02 * cam_R[2, 2]
        a10 = j11 * cam_R[1, 0] + j12 * cam_R[2, 0]
        a11 = j11 * cam_R[1, 1] + j12 * cam_R[2, 1]
        a12 = j11 * cam_R[1, 2] + j12 * cam_R[2, 2]

        # dSigma_w = A^T G_S A
        b00 = gs00 * a00 + gs01 * a10
        b01 = gs00 * a01 + gs01 * a11
        b02 = gs00 * a02 + gs01 * a12
        b10 = gs01 * a00 + gs11 * a10
        b11 = gs01 * a01 + gs11 * a11
        b12 = gs01 * a02 + gs11 * a12
        dw00 = a00 * b00 + a10 * b10
        dw01 = a00 * b01 + a10 * b11
        dw02 = a00 * b02 + a10 * b12
        dw11 = a01 * b01 + a11 * b11
        dw12 = a01 * b02 + a11 * b12
        dw22 = a02 * b02 + a12 * b12

        # dA = 2 G_S A Sigma_w
        u00 = a00 * c00 + a01 * c01 + a02 * c02
        u01 = a00 * c01 + a01 * c11 + a02 * c12
        u02 = a00 * c02 + a01 * c12 + a02 * c22
        u10 = a10 * c00 + a11 * c01 + a12 * c02
        u11 = a10 * c01 + a11 * c11 + a12 * c12
        u12 = a10 * c02 + a11 * c12 + a12 * c22
        dA00 = 2.0 * (gs00 * u00 + gs01 * u10)
        dA01 = 2.0 * (gs00 * u01 + gs01 * u11)
        dA02 = 2.0 * (gs00 * u02 + gs01 * u12)
        dA10 = 2.0 * (gs01 * u00 + gs11 * u10)
        dA11 = 2.0 * (gs01 * u01 + gs11 * u11)
        dA12 = 2.0 * (gs01 * u02 + gs11 * u12)

        # dJ = dA @ cam_R^T (only entries 00, 02, 11, 12 are nonzero in J)
        dJ00 = dA00 * cam_R[0, 0] + dA01 * cam_R[0, 1] + dA02 * cam_R[0, 2]
        dJ02 = dA00 * cam_R[2, 0] + dA01 * cam_R[2, 1] + dA02 * cam_R[2, 2]
        dJ11 = dA10 * cam_R[1, 0] + dA11 * cam_R[1, 1] + dA12 * cam_R[1, 2]
        dJ12 = dA10 * cam_R[2, 0] + dA11 * cam_R[2, 1] + dA12 * cam_R[2, 2]

        # camera-point gradient: J entries + projected mean + depth channel
        gmx = g_mean2d[i, 0]
        gmy = g_mean2d[i, 1]
        dX = dJ02 * (-fx / (Z * Z)) + gmx * fx / Z
        dY = dJ12 * (-fy / (Z * Z)) + gmy * fy / Z
        dZ = (
            dJ00 * (-fx / (Z * Z))
            + dJ11 * (-fy / (Z * Z))
            + dJ02 * (2.0 * fx * X / (Z * Z * Z))
            + dJ12 * (2.0 * fy * Y / (Z * Z * Z))
            + gmx * (-fx * X / (Z * Z))
            + gmy * (-fy * Y / (Z * Z))
            + g_depth[i]
        )
        dmu0 = cam_R[0, 0] * dX + cam_R[1, 0] * dY + cam_R[2, 0] * dZ
        dmu1 = cam_R[0, 1] * dX + cam_R[1, 1] * dY + cam_R[2, 1] * dZ
        dmu2 = cam_R[0, 2] * dX + cam_R[1, 2] * dY + cam_R[2, 2] * dZ

        # dM = 2 dSigma_w M; dR_w = dM diag(s); dls_k = (R_w^T dM)_kk s_k
        dM00 = 2.0 * (dw00 * m00 + dw01 * m10 + dw02 * m20)
        dM01 = 2.0 * (dw00 * m01 + dw01 * m11 + dw02 * m21)
        dM02 = 2.0 * (dw00 * m02 + dw01 * m12 + dw02 * m22)
        dM10 = 2.0 * (dw01 * m00 + dw11 * m10 + dw12 * m20)
        dM11 = 2.0 * (dw01 * m01 + dw11 * m11 + dw12 * m21)
        dM12 = 2.0 * (dw01 * m02 + dw11 * m12 + dw12 * m22)
        dM20 = 2.0 * (dw02 * m00 + dw12 * m10 + dw22 * m20)
        dM21 = 2.0 * (dw02 * m01 + dw12 * m11 + dw22 * m21)
        dM22 = 2.0 * (dw02 * m02 + dw12 * m12 + dw22 * m22)

        d_R_w[i, 0, 0] = dM00 * s0
        d_R_w[i, 0, 1] = dM01 * s1
        d_R_w[i, 0, 2] = dM02 * s2
        d_R_w[i, 1, 0] = dM10 * s0
        d_R_w[i, 1, 1] = dM11 * s1
        d_R_w[i, 1, 2] = dM12 * s2
        d_R_w[i, 2, 0] = dM20 * s0
        d_R_w[i, 2, 1] = dM21 * s1
        d_R_w[i, 2, 2] = dM22 * s2

        d_log_scales[i, 0] = (
            R_w[i, 0, 0] * dM00 + R_w[i, 1, 0] * dM10 + R_w[i, 2, 0] * dM20
        ) * s0
        d_log_scales[i, 1] = (
            R_w[i, 0, 1] * dM01 + R_w[i, 1, 1] * dM11 + R_w[i, 2, 1] * dM21
        ) * s1
        d_log_scales[i, 2] = (
            R_w[i, 0, 2] * dM02 + R_w[i, 1, 2] * dM12 + R_w[i, 2, 2] * dM22
        ) * s2

        op = opacity[i]
        d_opacity_logit[i] = g_opacity_raw[i] * op * (1.0 - op)

        # color chain: clamped channels pass no gradient
        dx = viewdir[i, 0]
        dy = viewdir[i, 1]
        dz = viewdir[i, 2]
        dc0 = g_color[i, 0] * clamp_mask[i, 0]
        dc1 = g_color[i, 1] * clamp_mask[i, 1]
        dc2 = g_color[i, 2] * clamp_mask[i, 2]

        ddir0 = 0.0
        ddir1 = 0.0
        ddir2 = 0.0
        B = (sh_degree + 1) * (sh_degree + 1)
        for b in range(B):
            # basis value and its direction gradient
            y = 0.0
            gy0 = 0.0
            gy1 = 0.0
            gy2 = 0.0
            if b == 0:
                y = 0.28209479177387814
            elif b == 1:
                y = -0.4886025119029199 * dy
                gy1 = -0.4886025119029199
            elif b == 2:
                y = 0.4886025119029199 * dz
                gy2 = 0.4886025119029199
            elif b == 3:
                y = -0.4886025119029199 * dx
                gy0 = -0.4886025119029199
            elif b == 4:
                y = 1.0925484305920792 * dx * dy
                gy0 = 1.0925484305920792 * dy
                gy1 = 1.0925484305920792 * dx
            elif b == 5:
                y = -1.0925484305920792 * dy * dz
                gy1 = -1.0925484305920792 * dz
                gy2 = -1.0925484305920792 * dy
            elif b == 6:
                y = 0.31539156525252005 * (2 * dz * dz - dx * dx - dy * dy)
                gy0 = 0.31539156525252005 * (-2 * dx)
                gy1 = 0.31539156525252005 * (-2 * dy)
                gy2 = 0.31539156525252005 * (4 * dz)
            elif b == 7:
                y = -1.0925484305920792 * dx * dz
                gy0 = -1.0925484305920792 * dz
                gy2 = -1.0925484305920792 * dx
            elif b == 8:
                y = 0.5462742152960396 * (dx * dx - dy * dy)
                gy0 = 0.5462742152960396 * 2 * dx
                gy1 = -0.5462742152960396 * 2 * dy
            elif b == 9:
                y = -0.5900435899266435 * dy * (3 * dx * dx - dy * dy)
                gy0 = -0.5900435899266435 * 6 * dx * dy
                gy1 = -0.5900435899266435 * (3 * dx * dx - 3 * dy * dy)
            elif b == 10:
                y = 2.890611442640554 * dx * dy * dz
                gy0 = 2.890611442640554 * dy * dz
                gy1 = 2.890611442640554 * dx * dz
                gy2 = 2.890611442640554 * dx * dy
            elif b == 11:
                y = -0.4570457994644658 * dy * (4 * dz * dz - dx * dx - dy * dy)
                gy0 = -0.4570457994644658 * (-2 * dx * dy)
                gy1 = -0.4570457994644658 * (4 * dz * dz - dx * dx - 3 * dy * dy)
                gy2 = -0.4570457994644658 * (8 * dy * dz)
            elif b == 12:
                y = 0.3731763325901154 * dz * (2 * dz * dz - 3 * dx * dx - 3 * dy * dy)
                gy0 = 0.3731763325901154 * (-6 * dx * dz)
                gy1 = 0.3731763325901154 * (-6 * dy * dz)
                gy2 = 0.3731763325901154 * (6 * dz * dz - 3 * dx * dx - 3 * dy * dy)
            elif b == 13:
                y = -0.4570457994644658 * dx * (4 * dz * dz - dx * dx - dy * dy)
                gy0 = -0.4570457994644658 * (4 * dz * dz - 3 * dx * dx - dy * dy)
                gy1 = -0.4570457994644658 * (-2 * dx * dy)
                gy2 = -0.4570457994644658 * (8 * dx * dz)
            elif b == 14:
                y = 1.445305721320277 * dz * (dx * dx - dy * dy)
                gy0 = 1.445305721320277 * 2 * dx * dz
                gy1 = -1.445305721320277 * 2 * dy * dz
                gy2 = 1.445305721320277 * (dx * dx - dy * dy)
            else:
                y = -0.5900435899266435 * dx * (dx * dx - 3 * dy * dy)
                gy0 = -0.5900435899266435 * (3 * dx * dx - 3 * dy * dy)
                gy1 = -0.5900435899266435 * (-6 * dx * dy)

            d_sh_t[i, b, 0] = y * dc0
            d_sh_t[i, b, 1] = y * dc1
            d_sh_t[i, b, 2] = y * dc2
            zdot = sh_t[i, b, 0] * dc0 + sh_t[i, b, 1] * dc1 + sh_t[i, b, 2] * dc2
            ddir0 += gy0 * zdot
            ddir1 += gy1 * zdot
            ddir2 += gy2 * zdot

        # through the normalization of v = mu_w - cam_center
        vx = mu_w[i, 0] - cam_center[0]
        vy = mu_w[i, 1] - cam_center[1]
        vz = mu_w[i, 2] - cam_center[2]
        vn = math.sqrt(vx * vx + vy * vy + vz * vz)
        rad = dx * ddir0 + dy * ddir1 + dz * ddir2
        dmu0 += (ddir0 - dx * rad) / vn
        dmu1 += (ddir1 - dy * rad) / vn
        dmu2 += (ddir2 - dz * rad) / vn

        d_mu_w[i, 0] = dmu0
        d_mu_w[i, 1] = dmu1
        d_mu_w[i, 2] = dmu2
