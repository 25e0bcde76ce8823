"""Canonical Gaussian fields and deformation application."""

import numpy as np
import pytest

from splatface.autodiff import Tensor
from splatface.camera import default_camera
from splatface.fields import (DegenerateRotationError, GeometrySpec,
                              apply_deformation, init_static)
from splatface.renderer import rasterize


def _spec(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return GeometrySpec(mu=rng.uniform(-0.5, 0.5, size=(n, 3)),
                        scales=np.full((n, 3), 0.1),
                        colors=rng.uniform(0, 1, size=(n, 3)),
                        opacity=np.full(n, 0.8))


def test_single_primitive_at_origin():
    spec = GeometrySpec(mu=np.zeros((1, 3)), scales=np.full((1, 3), 0.1),
                        colors=np.full((1, 3), 0.5), opacity=np.array([0.5]))
    field = init_static(spec, seed=0, jitter_sigma=0.0)
    assert np.array_equal(field.mu.data, [[0.0, 0.0, 0.0]])
    assert np.allclose(np.linalg.norm(field.quats.data, axis=1), 1.0)


def test_init_deterministic():
    a = init_static(_spec(), seed=7)
    b = init_static(_spec(), seed=7)
    for (_, pa), (_, pb) in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)


def test_empty_spec_rejected():
    with pytest.raises(ValueError):
        init_static(GeometrySpec(mu=np.zeros((0, 3)), scales=np.zeros((0, 3)),
                                 colors=np.zeros((0, 3)), opacity=np.zeros(0)),
                    seed=0)


def test_benchmark_head_positions_inside_unit_cube():
    from splatface.synth import _build_face_geometry
    spec, _ = _build_face_geometry(0, 2000)
    field = init_static(spec, seed=0)
    assert np.all(np.abs(field.mu.data) <= 1.0)


def test_opacity_and_scale_invariants():
    field = init_static(_spec(), seed=1)
    opac = 1.0 / (1.0 + np.exp(-field.alpha_logit.data))
    assert np.all((opac > 0) & (opac < 1))
    assert np.all(np.exp(field.log_scales.data) > 0)


def test_zero_deformation_is_identity():
    field = init_static(_spec(), seed=2)
    n = field.num_primitives
    mu_p, s_p, q_p = apply_deformation(field, Tensor(np.zeros((n, 3))),
                                       Tensor(np.zeros((n, 3))),
                                       Tensor(np.zeros((n, 4))))
    assert np.array_equal(mu_p.data, field.mu.data)
    assert np.array_equal(s_p.data, field.log_scales.data)
    assert np.allclose(q_p.data, field.quats.data)


def test_colinear_quaternion_renormalization():
    field = init_static(_spec(n=1), seed=3)
    n = 1
    d_q = np.array([[1.0, 0.0, 0.0, 0.0]])  # doubles (1,0,0,0)
    _, _, q_p = apply_deformation(field, Tensor(np.zeros((n, 3))),
                                  Tensor(np.zeros((n, 3))), Tensor(d_q))
    assert np.allclose(q_p.data, [[1.0, 0.0, 0.0, 0.0]])


def test_position_deformation_adds():
    spec = GeometrySpec(mu=np.array([[0.1, 0.0, 0.0]]),
                        scales=np.full((1, 3), 0.1),
                        colors=np.full((1, 3), 0.5), opacity=np.array([0.5]))
    field = init_static(spec, seed=0, jitter_sigma=0.0)
    mu_p, _, _ = apply_deformation(field, Tensor(np.array([[0.05, -0.1, 0.0]])),
                                   Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))))
    assert np.allclose(mu_p.data, [[0.15, -0.1, 0.0]])


def test_degenerate_rotation_rejected():
    field = init_static(_spec(n=1), seed=4)
    d_q = -field.quats.data  # cancels the quaternion exactly
    with pytest.raises(DegenerateRotationError):
        apply_deformation(field, Tensor(np.zeros((1, 3))),
                          Tensor(np.zeros((1, 3))), Tensor(d_q))


def test_shape_mismatch_rejected():
    field = init_static(_spec(n=3), seed=5)
    with pytest.raises(ValueError):
        apply_deformation(field, Tensor(np.zeros((2, 3))),
                          Tensor(np.zeros((3, 3))), Tensor(np.zeros((3, 4))))


def test_canonical_field_never_mutated():
    field = init_static(_spec(), seed=6)
    n = field.num_primitives
    before = {name: p.data.copy() for name, p in field.parameters()}
    rng = np.random.default_rng(0)
    apply_deformation(field, Tensor(rng.normal(size=(n, 3))),
                      Tensor(rng.normal(size=(n, 3))),
                      Tensor(rng.normal(size=(n, 4)) * 0.1))
    for name, p in field.parameters():
        assert np.array_equal(p.data, before[name])


def test_renormalization_unit_norm_for_random_deltas():
    field = init_static(_spec(n=50), seed=7)
    rng = np.random.default_rng(1)
    for _ in range(20):
        d_q = rng.normal(size=(50, 4)) * 0.5
        _, _, q_p = apply_deformation(field, Tensor(np.zeros((50, 3))),
                                      Tensor(np.zeros((50, 3))), Tensor(d_q))
        assert np.allclose(np.linalg.norm(q_p.data, axis=1), 1.0, atol=1e-9)


def test_zero_deformation_renders_bitwise_identically():
    field = init_static(_spec(n=10), seed=8)
    cam = default_camera(16, 16)
    n = field.num_primitives
    c0, a0, _ = rasterize(field.mu, field.log_scales, field.quats,
                          field.alpha_logit, field.features, cam)
    mu_p, s_p, q_p = apply_deformation(field, Tensor(np.zeros((n, 3))),
                                       Tensor(np.zeros((n, 3))),
                                       Tensor(np.zeros((n, 4))))
    c1, a1, _ = rasterize(mu_p, s_p, q_p, field.alpha_logit, field.features, cam)
    assert np.array_equal(c0.data, c1.data)
    assert np.array_equal(a0.data, a1.data)


def test_deformation_gradient_reaches_field_and_delta():
    field = init_static(_spec(n=3), seed=9)
    n = 3
    d_mu = Tensor(np.zeros((n, 3)), requires_grad=True)
    d_q = Tensor(np.full((n, 4), 0.1), requires_grad=True)
    mu_p, s_p, q_p = apply_deformation(field, d_mu, Tensor(np.zeros((n, 3))), d_q)
    (mu_p.sum() + q_p.sum()).backward()
    assert field.mu.grad is not None and np.any(field.mu.grad != 0)
    assert d_mu.grad is not None and np.any(d_mu.grad != 0)
    assert field.quats.grad is not None
    assert d_q.grad is not None
