import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onelap.grid import (boundary_flux, build_grid, clip_flux, divergence, flux_inf_norm,
                         gradient, green_defect, inner_faces, inner_nodes, pairing,
                         total_variation)
from onelap.oracle import example1_pairs, sample_pair


def test_build_grid_1d():
    g = build_grid((-1, 1), 5)
    assert g.h == (0.5,)
    assert g.node_count == 5
    assert int((~g.boundary_faces).sum()) == 4
    assert int(g.boundary_faces.sum()) == 2


def test_build_grid_2d():
    g = build_grid([(-1, 1), (-1, 1)], 3)
    assert g.node_count == 9
    assert [p.shape for p in g.split_faces(np.zeros(g.face_count))] == [(4, 3), (3, 4)]


@pytest.mark.parametrize("ext,n", [((0, 0), 5), ((1, -1), 5), ((-1, 1), 2)])
def test_build_grid_rejects(ext, n):
    with pytest.raises(ValueError):
        build_grid(ext, n)


def test_gradient_constant_and_linear():
    g = build_grid((-1, 1), 11)
    interior = ~g.boundary_faces
    assert np.all(gradient(np.full(11, 3.0), g)[interior] == 0)
    np.testing.assert_allclose(gradient(g.axis_coords(0), g)[interior], 1.0)


def test_gradient_of_step():
    g = build_grid((-1, 1), 2001)
    u2 = sample_pair(example1_pairs()[1], g)[0]
    du = gradient(u2, g)
    big = np.flatnonzero(np.abs(du) > 1e-9)
    assert big.size == 2
    np.testing.assert_allclose(du[big], [0.5 / g.h[0], -0.5 / g.h[0]])


def test_divergence_of_linear_flux():
    g = build_grid((-0.5, 0.5), 101)
    # staggered face midpoints, ghost faces included
    xf = g.axis_coords(0)[0] + (np.arange(g.face_count) - 0.5) * g.h[0]
    np.testing.assert_allclose(divergence(-2 * xf, g), -2.0, atol=1e-10)
    assert np.all(divergence(np.full(g.face_count, 0.7), g)[1:-1] == 0)


def test_total_variation_examples():
    g = build_grid((-1, 1), 2001)
    assert total_variation(np.zeros(2001), g) == 0
    u1, u2 = (sample_pair(p, g)[0] for p in example1_pairs()[:2])
    u1 = u1.copy()
    u1[[0, -1]] = 0.0  # Dirichlet nodes
    assert total_variation(u1, g) == pytest.approx(1.0, abs=5e-3)
    assert total_variation(u2, g) == pytest.approx(1.0)


fields = st.integers(min_value=3, max_value=40)


@settings(max_examples=60, deadline=None)
@given(n=fields, seed=st.integers(0, 2**32 - 1))
def test_green_identity_1d(n, seed):
    g = build_grid((-1, 2), n)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=g.shape)
    z = rng.normal(size=g.face_count)
    scale = abs(inner_nodes(divergence(z, g), u, g)) + abs(inner_faces(z, gradient(u, g), g)) + 1
    assert abs(green_defect(u, z, g)) <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(nx=st.integers(3, 12), ny=st.integers(3, 12), seed=st.integers(0, 2**32 - 1))
def test_green_identity_2d(nx, ny, seed):
    g = build_grid([(0, 1), (-1, 1)], [nx, ny])
    rng = np.random.default_rng(seed)
    u = rng.normal(size=g.shape)
    z = rng.normal(size=g.face_count)
    lhs = inner_nodes(divergence(z, g), u, g) + pairing(z, u, g, interior_only=True)
    assert lhs == pytest.approx(boundary_flux(z, u, g), rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(dim=st.sampled_from([1, 2]), seed=st.integers(0, 2**32 - 1),
       c=st.floats(-5, 5, allow_nan=False))
def test_tv_is_one_homogeneous(dim, seed, c):
    g = build_grid([(-1, 1)] * dim, 9)
    u = np.random.default_rng(seed).normal(size=g.shape)
    assert total_variation(c * u, g) == pytest.approx(abs(c) * total_variation(u, g), rel=1e-12,
                                                       abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(dim=st.sampled_from([1, 2]), seed=st.integers(0, 2**32 - 1))
def test_pairing_bound(dim, seed):
    g = build_grid([(-1, 1)] * dim, 8)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=g.shape)
    z, _ = clip_flux(rng.normal(size=g.face_count) * 3, g)
    assert flux_inf_norm(z, g) <= 1 + 1e-12
    for interior in (False, True):
        tv = total_variation(u, g, interior_only=interior)
        assert abs(pairing(z, u, g, interior_only=interior)) <= tv * (1 + 1e-12)


def test_clip_flux_reports_excess():
    g = build_grid((-1, 1), 5)
    z = np.array([0.5, -2.0, 1.0, 0.2, 1.5, 0.0])
    zc, ex = clip_flux(z, g)
    assert ex == pytest.approx(1.0)
    np.testing.assert_allclose(zc, [0.5, -1.0, 1.0, 0.2, 1.0, 0.0])
    assert clip_flux(zc, g)[1] == 0
