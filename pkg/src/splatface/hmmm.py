"""Hybrid motion modeling: stochastic path selection, feature masking,
gated fusion, region attention, and per-primitive deformation prediction."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, custom_op
from .nn import MLP

PATHS = ("audio", "masked", "vanilla")
PATH_PROBS = (0.4, 0.4, 0.2)
MASK_RANGE = (0.1, 0.3)

ENCODING_DIM = 48
FUSED_DIM = 32
UPPER_DIM = 7


def sample_path(rng, probs=PATH_PROBS):
    """Categorical draw over (audio, masked, vanilla)."""
    u = rng.random()
    acc = 0.0
    for tag, p in zip(PATHS, probs):
        acc += p
        if u < acc:
            return tag
    return PATHS[-1]


def sample_mask_rate(rng, mask_range=MASK_RANGE):
    lo, hi = mask_range
    return lo + (hi - lo) * rng.random()


def mask_features(c_implicit, rate, rng):
    """Independently zero each entry with probability `rate` (no rescaling)."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("mask rate must lie in [0, 1]")
    is_tensor = isinstance(c_implicit, Tensor)
    data = c_implicit.data if is_tensor else np.asarray(c_implicit, dtype=np.float64)
    keep = (rng.random(data.shape) >= rate).astype(np.float64)
    if not is_tensor:
        return data * keep

    def bwd(g):
        if c_implicit.requires_grad:
            c_implicit._accum(g * keep)

    return custom_op(data * keep, (c_implicit,), bwd, name="mask_features")


def select_pair(path, features):
    """Pick the (implicit, explicit) pair the fusion path consumes.

    `features` is a dict with keys c_i_al, c_i_al_mask, c_e_al, c_e_vl.
    """
    table = {
        "audio": ("c_i_al", "c_e_al"),
        "masked": ("c_i_al_mask", "c_e_vl"),
        "vanilla": ("c_i_al", "c_e_vl"),
    }
    if path not in table:
        raise ValueError(f"unknown fusion path {path!r}")
    ki, ke = table[path]
    if features.get(ki) is None or features.get(ke) is None:
        raise ValueError(f"path {path!r} requires features {ki} and {ke}")
    return features[ki], features[ke]


class GatedFusion:
    """c_f = alpha * c_e + (1 - alpha) * c_i with a learned elementwise gate.

    gate_mode: "vector" (32-d sigmoid gate), "scalar" (single sigmoid gate),
    "fixed:<x>" (constant alpha), or "concat" (MLP fusion of the pair,
    bypassing the convex combination).
    """

    def __init__(self, rng, gate_mode="vector"):
        self.gate_mode = gate_mode
        self.gate_mlp = MLP(rng, [64, 64, FUSED_DIM], final_act="sigmoid")
        self.scalar_mlp = MLP(rng, [64, 64, 1], final_act="sigmoid")
        self.concat_mlp = MLP(rng, [64, 64, FUSED_DIM])

    def alpha(self, c_i, c_e):
        x = concat([c_i, c_e], axis=-1)
        if self.gate_mode == "vector":
            return self.gate_mlp(x)
        if self.gate_mode == "scalar":
            return self.scalar_mlp(x)
        if self.gate_mode.startswith("fixed:"):
            return Tensor(float(self.gate_mode.split(":", 1)[1]))
        raise ValueError(f"gate mode {self.gate_mode!r} has no alpha")

    def __call__(self, c_i, c_e):
        if not isinstance(c_i, Tensor):
            c_i = Tensor(c_i)
        if not isinstance(c_e, Tensor):
            c_e = Tensor(c_e)
        if self.gate_mode == "concat":
            return self.concat_mlp(concat([c_i, c_e], axis=-1))
        # degenerate constant gates reduce exactly to direct conditioning
        if self.gate_mode.startswith("fixed:"):
            a_val = float(self.gate_mode.split(":", 1)[1])
            if a_val == 1.0:
                return c_e
            if a_val == 0.0:
                return c_i
        a = self.alpha(c_i, c_e)
        return a * c_e + (1.0 - a) * c_i

    def parameters(self):
        out = [(f"gate_mlp.{n}", p) for n, p in self.gate_mlp.parameters()]
        out += [(f"scalar_mlp.{n}", p) for n, p in self.scalar_mlp.parameters()]
        out += [(f"concat_mlp.{n}", p) for n, p in self.concat_mlp.parameters()]
        return out


class MotionNet:
    """Region attention plus deformation prediction for one branch."""

    def __init__(self, rng):
        self.att_fused = MLP(rng, [ENCODING_DIM, 64, FUSED_DIM], final_act="sigmoid")
        self.att_upper = MLP(rng, [ENCODING_DIM, 32, UPPER_DIM], final_act="sigmoid")
        self.deform = MLP(rng, [ENCODING_DIM + UPPER_DIM + FUSED_DIM, 128, 128, 10],
                          zero_init_last=True)

    def region_attention(self, h, c_f, c_e_vu):
        """Per-primitive modulated controls (C_f N x 32, C_u N x 7)."""
        att_f = self.att_fused(h)
        att_u = self.att_upper(h)
        cf = c_f if isinstance(c_f, Tensor) else Tensor(c_f)
        cu = c_e_vu if isinstance(c_e_vu, Tensor) else Tensor(c_e_vu)
        return cf.reshape(1, FUSED_DIM) * att_f, cu.reshape(1, UPPER_DIM) * att_u

    def predict_deformation(self, h, c_upper, c_fused):
        """10-d output per primitive split as (d_mu 3, d_s 3, d_q 4)."""
        x = concat([h, c_upper, c_fused], axis=-1)
        out = self.deform(x)
        return out[:, 0:3], out[:, 3:6], out[:, 6:10]

    def parameters(self):
        out = [(f"att_fused.{n}", p) for n, p in self.att_fused.parameters()]
        out += [(f"att_upper.{n}", p) for n, p in self.att_upper.parameters()]
        out += [(f"deform.{n}", p) for n, p in self.deform.parameters()]
        return out
