"""Differentiable CPU Gaussian-splatting rasterizer.

Forward: perspective projection with the EWA Jacobian, global depth sort
(stable, primitive-index tiebreak), tile-based front-to-back alpha
compositing.  Backward: per-pixel compositing gradients from the numba
kernel, then a hand-derived vectorized chain back through projection,
covariance construction, quaternion rotation, and spherical harmonics.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, custom_op
from .camera import Camera
from .fields import SH_C0
from . import kernels

SH_C1 = 0.4886025119029199
NEAR_PLANE = 1e-4
COV_REG = 1e-6


def sh_to_color(f, view_dir, degree=0):
    """Per-primitive RGB from SH coefficients (coeff-major layout, 3 per band).

    Degree 0: c = 0.5 + SH_C0 * f0.  Degree 1 adds the three linear bands.
    No clamping here; the composited image is clamped only for display.
    """
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    if single:
        f = f[None, :]
    col = 0.5 + SH_C0 * f[:, 0:3]
    if degree >= 1:
        d = np.asarray(view_dir, dtype=np.float64)
        if d.ndim == 1:
            d = np.broadcast_to(d, (f.shape[0], 3))
        col = col + SH_C1 * (-d[:, 1:2] * f[:, 3:6]
                             + d[:, 2:3] * f[:, 6:9]
                             - d[:, 0:1] * f[:, 9:12])
    return col[0] if single else col


def composite_pixel(items):
    """Front-to-back alpha compositing of (color, alpha) pairs.

    `items` is a depth-sorted iterable of (rgb array-like, alpha in [0,1]).
    Returns (C, A).  Early termination when transmittance drops below 1e-4.
    """
    color = np.zeros(3)
    total_alpha = 0.0
    trans = 1.0
    for rgb, a in items:
        w = a * trans
        color += w * np.asarray(rgb, dtype=np.float64)
        total_alpha += w
        trans *= 1.0 - a
        if trans < kernels.TRANSMITTANCE_CUTOFF:
            break
    return color, total_alpha


def blend_head(c_face, a_face, c_mouth, a_mouth, mode="as-written"):
    """Alpha-blend the face and mouth branch renders into one head image.

    "as-written": face * A_face + mouth * (1 - A_mouth).
    "face-complement": face * A_face + mouth * (1 - A_face).
    """
    ts = [c_face, a_face, c_mouth, a_mouth]
    ts = [t if isinstance(t, Tensor) else Tensor(t) for t in ts]
    c_face, a_face, c_mouth, a_mouth = ts
    h, w = a_face.shape
    if c_face.shape != (h, w, 3) or c_mouth.shape != (h, w, 3) or a_mouth.shape != (h, w):
        raise ValueError("blend_head inputs must share the same image size")
    af = a_face.reshape(h, w, 1)
    if mode == "as-written":
        am = a_mouth.reshape(h, w, 1)
        return c_face * af + c_mouth * (1.0 - am)
    if mode == "face-complement":
        return c_face * af + c_mouth * (1.0 - af)
    raise ValueError(f"unknown blend mode {mode!r}")


def project_gaussians(mu, log_scales, quats, camera: Camera):
    """Project primitives to the image plane (no compositing).

    Returns (mean2d N x 2, cov2 N x 2 x 2 regularized, depth N, valid N).
    Rows for primitives behind the near plane are NaN with valid=False.
    """
    mu = np.asarray(mu, dtype=np.float64)
    log_scales = np.asarray(log_scales, dtype=np.float64)
    quats = np.asarray(quats, dtype=np.float64)
    n = mu.shape[0]
    Rc = camera.rotation
    xc = mu @ Rc.T + camera.translation
    z = xc[:, 2]
    valid = z > NEAR_PLANE

    mean2d = np.full((n, 2), np.nan)
    cov2 = np.full((n, 2, 2), np.nan)
    vi = np.flatnonzero(valid)
    if vi.size:
        xcv = xc[vi]
        zv = xcv[:, 2]
        qn = quats[vi] / np.linalg.norm(quats[vi], axis=1, keepdims=True)
        Rm = _quat_rotmats(qn)
        M = np.exp(2.0 * log_scales[vi])
        Sigma = np.einsum("nij,nj,nkj->nik", Rm, M, Rm)
        fx, fy = camera.fx, camera.fy
        J = np.zeros((vi.size, 2, 3))
        J[:, 0, 0] = fx / zv
        J[:, 0, 2] = -fx * xcv[:, 0] / zv ** 2
        J[:, 1, 1] = fy / zv
        J[:, 1, 2] = -fy * xcv[:, 1] / zv ** 2
        V = np.einsum("nij,jk->nik", J, Rc)
        c2 = np.einsum("nij,njk,nlk->nil", V, Sigma, V)
        c2[:, 0, 0] += COV_REG
        c2[:, 1, 1] += COV_REG
        cov2[vi] = c2
        mean2d[vi] = np.stack([fx * xcv[:, 0] / zv + camera.cx,
                               fy * xcv[:, 1] / zv + camera.cy], axis=1)
    return mean2d, cov2, z, valid


def _quat_rotmats(qn):
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    R = np.empty((qn.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _quat_rot_backward(qn, G):
    """d(sum G_ij R_ij)/d(qn) for unit quaternions qn; G is (N,3,3)."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g01, g02, g10 = G[:, 0, 1], G[:, 0, 2], G[:, 1, 0]
    g12, g20, g21 = G[:, 1, 2], G[:, 2, 0], G[:, 2, 1]
    g00, g11, g22 = G[:, 0, 0], G[:, 1, 1], G[:, 2, 2]
    dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2 * (y * g01 + z * g02 + y * g10 - w * g12 + z * g20 + w * g21
              - 2 * x * g11 - 2 * x * g22)
    dy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12
              - w * g20 + z * g21 - 2 * y * g22)
    dz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 + y * g12
              + x * g20 + y * g21 - 2 * z * g11)
    return np.stack([dw, dx, dy, dz], axis=1)


class RasterStats:
    """Diagnostics from one forward pass."""

    def __init__(self):
        self.culled_behind = 0
        self.skipped_singular = 0
        self.num_rendered = 0


def rasterize(mu, log_scales, quats, alpha_logit, features, camera: Camera,
              sh_degree=0):
    """Render a (possibly deformed) field view.

    Inputs may be Tensors or arrays; returns (color HxWx3, alpha HxW, stats).
    Differentiable w.r.t. every field parameter.
    """
    inputs = [mu, log_scales, quats, alpha_logit, features]
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in inputs]
    mu_t, s_t, q_t, al_t, f_t = tensors

    W, H = camera.width, camera.height
    stats = RasterStats()

    mu_d = mu_t.data
    n = mu_d.shape[0]
    Rc = camera.rotation
    xc = mu_d @ Rc.T + camera.translation
    z = xc[:, 2]
    valid = z > NEAR_PLANE
    stats.culled_behind = int(n - valid.sum())

    if not np.any(valid):
        out = custom_op(np.zeros((H, W, 4)), tensors, lambda g: None, name="rasterize")
        return out[:, :, 0:3], out[:, :, 3], stats

    vi = np.flatnonzero(valid)
    xcv = xc[vi]
    zv = xcv[:, 2]

    # 3-d covariance from quaternion rotation and log-scales
    qv = q_t.data[vi]
    qnorm = np.linalg.norm(qv, axis=1, keepdims=True)
    qn = qv / qnorm
    Rm = _quat_rotmats(qn)
    M = np.exp(2.0 * s_t.data[vi])                       # diag of S^2
    Sigma = np.einsum("nij,nj,nkj->nik", Rm, M, Rm)

    # perspective Jacobian and 2-d covariance
    fx, fy = camera.fx, camera.fy
    J = np.zeros((len(vi), 2, 3))
    J[:, 0, 0] = fx / zv
    J[:, 0, 2] = -fx * xcv[:, 0] / zv ** 2
    J[:, 1, 1] = fy / zv
    J[:, 1, 2] = -fy * xcv[:, 1] / zv ** 2
    V = np.einsum("nij,jk->nik", J, Rc)
    cov2 = np.einsum("nij,njk,nlk->nil", V, Sigma, V)
    cov2[:, 0, 0] += COV_REG
    cov2[:, 1, 1] += COV_REG

    A2, B2, C2 = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = A2 * C2 - B2 * B2
    ok = det > 0
    stats.skipped_singular = int((~ok).sum())

    mean2d = np.stack([fx * xcv[:, 0] / zv + camera.cx,
                       fy * xcv[:, 1] / zv + camera.cy], axis=1)

    eigmax = 0.5 * (A2 + C2) + np.sqrt(np.maximum(0.25 * (A2 - C2) ** 2 + B2 ** 2, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(eigmax, 0.0))

    bx0 = np.maximum(np.floor(mean2d[:, 0] - radius), 0).astype(np.int64)
    bx1 = np.minimum(np.ceil(mean2d[:, 0] + radius), W).astype(np.int64)
    by0 = np.maximum(np.floor(mean2d[:, 1] - radius), 0).astype(np.int64)
    by1 = np.minimum(np.ceil(mean2d[:, 1] + radius), H).astype(np.int64)
    onscreen = ok & (bx1 > bx0) & (by1 > by0)

    keep = np.flatnonzero(onscreen)
    if keep.size == 0:
        out = custom_op(np.zeros((H, W, 4)), tensors, lambda g: None, name="rasterize")
        return out[:, :, 0:3], out[:, :, 3], stats
    stats.num_rendered = int(keep.size)

    kv = vi[keep]                       # original primitive indices
    mean2k = mean2d[keep]
    detk = det[keep]
    conic = np.stack([C2[keep] / detk, -B2[keep] / detk, A2[keep] / detk], axis=1)
    zk = zv[keep]

    opac_logit = al_t.data[kv, 0]
    opac = 1.0 / (1.0 + np.exp(-opac_logit))

    # view-dependent color
    fk = f_t.data[kv]
    if sh_degree >= 1:
        diff = mu_d[kv] - camera.center
        dist = np.linalg.norm(diff, axis=1, keepdims=True)
        vdir = diff / dist
    else:
        vdir = None
    colors = sh_to_color(fk, vdir, degree=sh_degree)

    # depth order (stable sort: ties broken by primitive index)
    order = np.argsort(zk, kind="stable")
    rank = np.empty(keep.size, dtype=np.int64)
    rank[order] = np.arange(keep.size)

    # (tile, primitive) pair lists
    tiles_x = (W + kernels.TILE - 1) // kernels.TILE
    tiles_y = (H + kernels.TILE - 1) // kernels.TILE
    tx0 = bx0[keep] // kernels.TILE
    tx1 = (bx1[keep] - 1) // kernels.TILE
    ty0 = by0[keep] // kernels.TILE
    ty1 = (by1[keep] - 1) // kernels.TILE
    nx = tx1 - tx0 + 1
    counts = nx * (ty1 - ty0 + 1)
    total = int(counts.sum())
    pair_of = np.repeat(np.arange(keep.size), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_id = ((ty0[pair_of] + offsets // nx[pair_of]) * tiles_x
               + tx0[pair_of] + offsets % nx[pair_of])
    perm = np.lexsort((rank[pair_of], tile_id))
    pair_prim = np.ascontiguousarray(pair_of[perm], dtype=np.int64)
    tile_sorted = tile_id[perm]
    tile_count = np.bincount(tile_sorted, minlength=tiles_x * tiles_y).astype(np.int64)
    tile_start = np.concatenate([[0], np.cumsum(tile_count)[:-1]]).astype(np.int64)

    img = np.zeros((H, W, 3))
    alpha_map = np.zeros((H, W))
    final_t = np.ones((H, W))
    n_contrib = np.zeros((H, W), dtype=np.int64)
    mean2k = np.ascontiguousarray(mean2k)
    conic = np.ascontiguousarray(conic)
    colors_c = np.ascontiguousarray(colors)
    opac_c = np.ascontiguousarray(opac)
    kernels.forward_tiles(W, H, tiles_x, tiles_y, tile_start, tile_count,
                          pair_prim, mean2k, conic, opac_c, colors_c,
                          img, alpha_map, final_t, n_contrib)

    out_data = np.concatenate([img, alpha_map[:, :, None]], axis=2)

    def bwd(g):
        d_img = np.ascontiguousarray(g[:, :, 0:3])
        d_alpha = np.ascontiguousarray(g[:, :, 3])
        pair_grad = np.zeros((total, 9))
        kernels.backward_tiles(W, H, tiles_x, tiles_y, tile_start, tile_count,
                               pair_prim, mean2k, conic, opac_c, colors_c,
                               final_t, n_contrib, d_img, d_alpha, pair_grad)
        # merge pair gradients per primitive in fixed pair order
        pg = np.zeros((keep.size, 9))
        np.add.at(pg, pair_prim, pair_grad)
        d_mean2d = pg[:, 0:2]
        d_conic = pg[:, 2:5]
        d_opac = pg[:, 5]
        d_col = pg[:, 6:9]

        # opacity logit
        if al_t.requires_grad:
            g_al = np.zeros_like(al_t.data)
            g_al[kv, 0] = d_opac * opac * (1.0 - opac)
            al_t._accum(g_al)

        # color -> SH features (and view direction for degree >= 1)
        d_mu_extra = np.zeros((keep.size, 3))
        if f_t.requires_grad:
            g_f = np.zeros_like(f_t.data)
            g_f[kv, 0:3] = SH_C0 * d_col
            if sh_degree >= 1:
                g_f[kv, 3:6] = -SH_C1 * vdir[:, 1:2] * d_col
                g_f[kv, 6:9] = SH_C1 * vdir[:, 2:3] * d_col
                g_f[kv, 9:12] = -SH_C1 * vdir[:, 0:1] * d_col
            f_t._accum(g_f)
        if sh_degree >= 1 and mu_t.requires_grad:
            d_dir = SH_C1 * (-(d_col * fk[:, 3:6]).sum(1, keepdims=True) * _E(1)
                             + (d_col * fk[:, 6:9]).sum(1, keepdims=True) * _E(2)
                             - (d_col * fk[:, 9:12]).sum(1, keepdims=True) * _E(0))
            dot = (d_dir * vdir).sum(axis=1, keepdims=True)
            d_mu_extra += (d_dir - vdir * dot) / dist

        # conic -> 2-d covariance (inverse-matrix derivative)
        Wm = np.zeros((keep.size, 2, 2))
        Wm[:, 0, 0] = conic[:, 0]
        Wm[:, 0, 1] = Wm[:, 1, 0] = conic[:, 1]
        Wm[:, 1, 1] = conic[:, 2]
        Gw = np.zeros((keep.size, 2, 2))
        Gw[:, 0, 0] = d_conic[:, 0]
        Gw[:, 0, 1] = Gw[:, 1, 0] = 0.5 * d_conic[:, 1]
        Gw[:, 1, 1] = d_conic[:, 2]
        d_cov2 = -np.einsum("nij,njk,nkl->nil", Wm, Gw, Wm)

        Vk = V[keep]
        Sigk = Sigma[keep]
        sym = d_cov2 + d_cov2.transpose(0, 2, 1)
        d_V = np.einsum("nij,njk,nkl->nil", sym, Vk, Sigk)
        d_Sigma = np.einsum("nji,njk,nkl->nil", Vk, d_cov2, Vk)
        d_J = np.einsum("nij,kj->nik", d_V, Rc)

        # Sigma = R diag(M) R^T
        Rk = Rm[keep]
        Mk = M[keep]
        d_M_full = np.einsum("nji,njk,nkl->nil", Rk, d_Sigma, Rk)
        d_M = np.einsum("nii->ni", d_M_full)
        if s_t.requires_grad:
            g_s = np.zeros_like(s_t.data)
            g_s[kv] = d_M * 2.0 * Mk
            s_t._accum(g_s)
        if q_t.requires_grad:
            symS = d_Sigma + d_Sigma.transpose(0, 2, 1)
            d_R = np.einsum("nij,njk,nk->nik", symS, Rk, Mk)
            d_qn = _quat_rot_backward(qn[keep], d_R)
            qnk = qn[keep]
            dot = (d_qn * qnk).sum(axis=1, keepdims=True)
            g_q = np.zeros_like(q_t.data)
            g_q[kv] = (d_qn - qnk * dot) / qnorm[keep]
            q_t._accum(g_q)

        # camera-space position gradient from mean2d and J
        xk, yk = xcv[keep, 0], xcv[keep, 1]
        d_x = d_mean2d[:, 0] * fx / zk
        d_y = d_mean2d[:, 1] * fy / zk
        d_z = (-d_mean2d[:, 0] * fx * xk / zk ** 2
               - d_mean2d[:, 1] * fy * yk / zk ** 2)
        d_x += d_J[:, 0, 2] * (-fx / zk ** 2)
        d_y += d_J[:, 1, 2] * (-fy / zk ** 2)
        d_z += (d_J[:, 0, 0] * (-fx / zk ** 2)
                + d_J[:, 0, 2] * (2.0 * fx * xk / zk ** 3)
                + d_J[:, 1, 1] * (-fy / zk ** 2)
                + d_J[:, 1, 2] * (2.0 * fy * yk / zk ** 3))
        d_xcam = np.stack([d_x, d_y, d_z], axis=1)
        if mu_t.requires_grad:
            g_mu = np.zeros_like(mu_t.data)
            g_mu[kv] = d_xcam @ Rc + d_mu_extra
            mu_t._accum(g_mu)

    out = custom_op(out_data, tensors, bwd, name="rasterize")
    return out[:, :, 0:3], out[:, :, 3], stats


def _E(i):
    e = np.zeros((1, 3))
    e[0, i] = 1.0
    return e
