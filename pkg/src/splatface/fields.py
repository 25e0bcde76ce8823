"""Persistent Gaussian fields and deformation application.

A field stores canonical per-primitive parameters (positions, log-scales,
quaternions, opacity logits, color coefficients) for one branch (face or
mouth).  Deformations are applied as a non-mutating view so the canonical
parameters survive every forward pass untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, custom_op


class DegenerateRotationError(ValueError):
    pass


@dataclass
class GeometrySpec:
    """Synthetic canonical geometry for one branch."""

    mu: np.ndarray        # N x 3, inside [-1, 1]^3
    scales: np.ndarray    # N x 3 linear scales (> 0)
    colors: np.ndarray    # N x 3 base RGB in [0, 1]
    opacity: np.ndarray   # N, in (0, 1)


SH_C0 = 0.2820947917738781


class GaussianField:
    """Canonical primitives for one branch; all parameters are autodiff leaves."""

    def __init__(self, mu, log_scales, quats, alpha_logit, features, branch_tag):
        self.mu = Tensor(mu, requires_grad=True)
        self.log_scales = Tensor(log_scales, requires_grad=True)
        self.quats = Tensor(quats, requires_grad=True)
        self.alpha_logit = Tensor(alpha_logit, requires_grad=True)
        self.features = Tensor(features, requires_grad=True)
        self.branch_tag = branch_tag

    @property
    def num_primitives(self):
        return self.mu.data.shape[0]

    def parameters(self):
        return [("mu", self.mu), ("log_scales", self.log_scales),
                ("quats", self.quats), ("alpha_logit", self.alpha_logit),
                ("features", self.features)]

    def renormalize_quats(self):
        q = self.quats.data
        q /= np.linalg.norm(q, axis=1, keepdims=True)


def init_static(spec: GeometrySpec, seed, branch_tag="face", sh_degree=0,
                jitter_sigma=0.01):
    """Build a field from synthetic geometry with small positional jitter."""
    n = spec.mu.shape[0]
    if n == 0:
        raise ValueError("geometry spec must contain at least one primitive")
    rng = np.random.default_rng(seed)
    mu = spec.mu + (rng.standard_normal((n, 3)) * jitter_sigma if jitter_sigma > 0 else 0.0)
    mu = np.clip(mu, -1.0, 1.0)
    log_scales = np.log(spec.scales)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    op = np.clip(spec.opacity, 1e-6, 1.0 - 1e-6)
    alpha_logit = np.log(op / (1.0 - op)).reshape(n, 1)
    n_coef = (sh_degree + 1) ** 2
    features = np.zeros((n, 3 * n_coef))
    # band 0 carries the base color: c = 0.5 + SH_C0 * f0
    features[:, 0:3] = (spec.colors - 0.5) / SH_C0
    return GaussianField(mu, log_scales, quats, alpha_logit, features, branch_tag)


def normalize_rows(t: Tensor, eps=1e-12):
    """Row-wise L2 normalization with full gradient."""
    x = t.data
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < eps):
        raise DegenerateRotationError("near-zero quaternion after deformation")
    y = x / norms

    def bwd(g):
        if t.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            t._accum((g - y * dot) / norms)

    return custom_op(y, (t,), bwd)


def apply_deformation(field: GaussianField, d_mu, d_s, d_q):
    """Deformed view {mu', s', q'}; the canonical field is untouched.

    mu' = mu + d_mu; s' = s + d_s (log-space, i.e. multiplicative in linear
    scale); q' = normalize(q + d_q).  Gradient flows into both the field and
    the deformation.
    """
    if d_mu.shape != field.mu.shape or d_s.shape != field.log_scales.shape \
            or d_q.shape != field.quats.shape:
        raise ValueError("deformation shapes do not match the field")
    mu_p = field.mu + d_mu
    s_p = field.log_scales + d_s
    q_p = normalize_rows(field.quats + d_q)
    return mu_p, s_p, q_p
