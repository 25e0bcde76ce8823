"""Tri-plane multiresolution hash encoding for primitive positions.

Three axis-aligned planes (XY, YZ, XZ), each with L geometric resolution
levels backed by a trainable feature table.  Low-resolution levels index the
table densely; finer levels fall back to a spatial hash (collisions are
tolerated and resolved by training).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, custom_op

HASH_P1 = 1
HASH_P2 = 2654435761

PLANE_AXES = ((0, 1), (1, 2), (0, 2))  # XY, YZ, XZ


def level_resolutions(n_levels, r_min, r_max):
    if n_levels == 1:
        return [int(r_min)]
    b = (r_max / r_min) ** (1.0 / (n_levels - 1))
    return [int(round(r_min * b ** l)) for l in range(n_levels)]


def hash_index(ix, iy, resolution, table_size):
    """Table index for integer grid vertex (ix, iy) at the given resolution.

    Dense row-major when the level fits in the table, spatial hash otherwise.
    """
    ix = np.asarray(ix, dtype=np.uint64)
    iy = np.asarray(iy, dtype=np.uint64)
    if (resolution + 1) ** 2 <= table_size:
        return (iy * np.uint64(resolution + 1) + ix).astype(np.int64)
    h = (ix * np.uint64(HASH_P1)) ^ (iy * np.uint64(HASH_P2))
    return (h % np.uint64(table_size)).astype(np.int64)


class TriPlaneHash:
    """Trainable tri-plane hash encoder; output width is 3 * L * F."""

    def __init__(self, rng, n_levels=8, n_features=2, table_size=2 ** 14,
                 r_min=16, r_max=256, init_scale=1e-4):
        self.n_levels = n_levels
        self.n_features = n_features
        self.table_size = table_size
        self.resolutions = level_resolutions(n_levels, r_min, r_max)
        # one table per (plane, level)
        self.tables = []
        for p in range(3):
            for l in range(self.n_levels):
                t = Tensor(rng.uniform(-init_scale, init_scale,
                                       size=(table_size, n_features)),
                           requires_grad=True)
                self.tables.append(t)

    @property
    def output_dim(self):
        return 3 * self.n_levels * self.n_features

    def parameters(self):
        out = []
        for p in range(3):
            for l in range(self.n_levels):
                out.append((f"plane{p}.level{l}", self.tables[p * self.n_levels + l]))
        return out

    def encode(self, mu):
        """Encode positions (Tensor or array, N x 3 in [-1,1]^3) to N x 48.

        Bilinear interpolation of the four corner table entries per plane and
        level; differentiable w.r.t. both the tables and the positions.
        Out-of-range positions are clamped.
        """
        is_tensor = isinstance(mu, Tensor)
        mu_data = mu.data if is_tensor else np.asarray(mu, dtype=np.float64)
        squeeze = mu_data.ndim == 1
        if squeeze:
            mu_data = mu_data[None, :]
        n = mu_data.shape[0]
        pos01 = np.clip((mu_data + 1.0) * 0.5, 0.0, 1.0)
        clamp_mask = ((mu_data > -1.0) & (mu_data < 1.0)).astype(np.float64)

        chunks = []
        infos = []  # per chunk: (table, idx00, idx10, idx01, idx11, w00.., dw/du info)
        for p, (ax, ay) in enumerate(PLANE_AXES):
            u_full = pos01[:, ax]
            v_full = pos01[:, ay]
            for l, res in enumerate(self.resolutions):
                table = self.tables[p * self.n_levels + l]
                fu = u_full * res
                fv = v_full * res
                iu = np.minimum(np.floor(fu), res - 1).astype(np.int64)
                iv = np.minimum(np.floor(fv), res - 1).astype(np.int64)
                du = fu - iu
                dv = fv - iv
                i00 = hash_index(iu, iv, res, self.table_size)
                i10 = hash_index(iu + 1, iv, res, self.table_size)
                i01 = hash_index(iu, iv + 1, res, self.table_size)
                i11 = hash_index(iu + 1, iv + 1, res, self.table_size)
                w00 = ((1 - du) * (1 - dv))[:, None]
                w10 = (du * (1 - dv))[:, None]
                w01 = ((1 - du) * dv)[:, None]
                w11 = (du * dv)[:, None]
                td = table.data
                feat = (td[i00] * w00 + td[i10] * w10 + td[i01] * w01 + td[i11] * w11)
                chunks.append(feat)
                infos.append((table, (i00, i10, i01, i11), (w00, w10, w01, w11),
                              (du, dv), res, (ax, ay)))

        out_data = np.concatenate(chunks, axis=1)
        parents = [t for t in self.tables]
        if is_tensor and mu.requires_grad:
            parents = parents + [mu]

        F = self.n_features

        def bwd(g):
            if is_tensor and mu.requires_grad:
                g_mu = np.zeros_like(mu_data)
            for k, (table, idxs, ws, (du, dv), res, (ax, ay)) in enumerate(infos):
                gk = g[:, k * F:(k + 1) * F]
                if table.requires_grad:
                    gt = np.zeros_like(table.data)
                    for idx, w in zip(idxs, ws):
                        np.add.at(gt, idx, gk * w)
                    table._accum(gt)
                if is_tensor and mu.requires_grad:
                    td = table.data
                    f00, f10, f01, f11 = (td[i] for i in idxs)
                    # d feat / d du, d feat / d dv
                    dfu = ((f10 - f00) * (1 - dv)[:, None] + (f11 - f01) * dv[:, None])
                    dfv = ((f01 - f00) * (1 - du)[:, None] + (f11 - f10) * du[:, None])
                    gu = (gk * dfu).sum(axis=1) * res * 0.5
                    gv = (gk * dfv).sum(axis=1) * res * 0.5
                    g_mu[:, ax] += gu * clamp_mask[:, ax]
                    g_mu[:, ay] += gv * clamp_mask[:, ay]
            if is_tensor and mu.requires_grad:
                mu._accum(g_mu)

        out = custom_op(out_data, parents, bwd, name="triplane_encode")
        if squeeze:
            out = out.reshape(out_data.shape[1])
        return out
