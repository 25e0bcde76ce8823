"""Numba tile kernels for the splatting rasterizer.

Tiles own disjoint pixel blocks and disjoint slices of the (tile, primitive)
pair arrays, so both kernels parallelize over tiles without races and the
result is independent of the thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

TILE = 16
ALPHA_CLAMP = 0.9999
TRANSMITTANCE_CUTOFF = 1e-4
POWER_CUTOFF = 100.0  # skip contributions below exp(-50)


@njit(cache=True, parallel=True)
def forward_tiles(width, height, tiles_x, tiles_y, tile_start, tile_count,
                  pair_prim, means2d, conics, opac, colors,
                  img, alpha, final_t, n_contrib):
    n_tiles = tiles_x * tiles_y
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        x0 = tx * TILE
        y0 = ty * TILE
        x1 = min(x0 + TILE, width)
        y1 = min(y0 + TILE, height)
        start = tile_start[t]
        count = tile_count[t]
        for py in range(y0, y1):
            for px in range(x0, x1):
                cx = px + 0.5
                cy = py + 0.5
                trans = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                aacc = 0.0
                processed = 0
                for k in range(count):
                    j = pair_prim[start + k]
                    dx = cx - means2d[j, 0]
                    dy = cy - means2d[j, 1]
                    m = (conics[j, 0] * dx * dx
                         + 2.0 * conics[j, 1] * dx * dy
                         + conics[j, 2] * dy * dy)
                    processed = k + 1
                    if m > POWER_CUTOFF or m < 0.0:
                        continue
                    ahat = opac[j] * np.exp(-0.5 * m)
                    if ahat > ALPHA_CLAMP:
                        ahat = ALPHA_CLAMP
                    w = ahat * trans
                    cr += w * colors[j, 0]
                    cg += w * colors[j, 1]
                    cb += w * colors[j, 2]
                    aacc += w
                    trans *= 1.0 - ahat
                    if trans < TRANSMITTANCE_CUTOFF:
                        break
                img[py, px, 0] = cr
                img[py, px, 1] = cg
                img[py, px, 2] = cb
                alpha[py, px] = aacc
                final_t[py, px] = trans
                n_contrib[py, px] = processed


@njit(cache=True, parallel=True)
def backward_tiles(width, height, tiles_x, tiles_y, tile_start, tile_count,
                   pair_prim, means2d, conics, opac, colors,
                   final_t, n_contrib, d_img, d_alpha, pair_grad):
    n_tiles = tiles_x * tiles_y
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        x0 = tx * TILE
        y0 = ty * TILE
        x1 = min(x0 + TILE, width)
        y1 = min(y0 + TILE, height)
        start = tile_start[t]
        for py in range(y0, y1):
            for px in range(x0, x1):
                cx = px + 0.5
                cy = py + 0.5
                gr = d_img[py, px, 0]
                gg = d_img[py, px, 1]
                gb = d_img[py, px, 2]
                ga = d_alpha[py, px]
                if gr == 0.0 and gg == 0.0 and gb == 0.0 and ga == 0.0:
                    continue
                t_behind = final_t[py, px]
                # suffix composites of everything rendered behind primitive i
                sr = 0.0
                sg = 0.0
                sb = 0.0
                sa = 0.0
                for k in range(n_contrib[py, px] - 1, -1, -1):
                    j = pair_prim[start + k]
                    dx = cx - means2d[j, 0]
                    dy = cy - means2d[j, 1]
                    a = conics[j, 0]
                    b = conics[j, 1]
                    c = conics[j, 2]
                    m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                    if m > POWER_CUTOFF or m < 0.0:
                        continue
                    g_exp = np.exp(-0.5 * m)
                    ahat_raw = opac[j] * g_exp
                    clamped = ahat_raw > ALPHA_CLAMP
                    ahat = ALPHA_CLAMP if clamped else ahat_raw
                    t_i = t_behind / (1.0 - ahat)
                    w = ahat * t_i
                    # color gradient
                    pair_grad[start + k, 6] += gr * w
                    pair_grad[start + k, 7] += gg * w
                    pair_grad[start + k, 8] += gb * w
                    # opacity-chain gradient
                    d_ahat = (gr * t_i * (colors[j, 0] - sr)
                              + gg * t_i * (colors[j, 1] - sg)
                              + gb * t_i * (colors[j, 2] - sb)
                              + ga * t_i * (1.0 - sa))
                    # update suffix composites and transmittance
                    sr = ahat * colors[j, 0] + (1.0 - ahat) * sr
                    sg = ahat * colors[j, 1] + (1.0 - ahat) * sg
                    sb = ahat * colors[j, 2] + (1.0 - ahat) * sb
                    sa = ahat + (1.0 - ahat) * sa
                    t_behind = t_i
                    if clamped:
                        continue
                    pair_grad[start + k, 5] += g_exp * d_ahat
                    d_m = -0.5 * ahat_raw * d_ahat
                    d_dx = d_m * (2.0 * a * dx + 2.0 * b * dy)
                    d_dy = d_m * (2.0 * b * dx + 2.0 * c * dy)
                    pair_grad[start + k, 0] += -d_dx
                    pair_grad[start + k, 1] += -d_dy
                    pair_grad[start + k, 2] += d_m * dx * dx
                    pair_grad[start + k, 3] += d_m * 2.0 * dx * dy
                    pair_grad[start + k, 4] += d_m * dy * dy
