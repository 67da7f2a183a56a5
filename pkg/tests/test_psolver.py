import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onelap.grid import build_grid, divergence
from onelap.oracle import preset_f
from onelap.psolver import (InvalidConfig, NonConvergenceWarning, ProblemSpec, PSolveConfig,
                            bv_estimate_check, extract_flux, interior_positivity, p_energy,
                            primitive, solve_p_problem)


@pytest.fixture(scope="module")
def g257():
    return build_grid((-1, 1), 257)


def spec_for(g, name, gamma=1.0):
    return ProblemSpec(g, preset_f(name, g), gamma, f_name=name)


def test_zero_datum_gives_zero(g257):
    sol = solve_p_problem(spec_for(g257, "zero"), PSolveConfig(p=1.5))
    assert sol.converged
    assert np.all(sol.u == 0) and np.all(sol.z == 0)


def test_rejects_bad_inputs(g257):
    with pytest.raises(InvalidConfig):
        PSolveConfig(p=1.0)
    with pytest.raises(InvalidConfig):
        PSolveConfig(eps=0.0)
    with pytest.raises(InvalidConfig):
        ProblemSpec(g257, -np.ones(257), 1.0)
    with pytest.raises(InvalidConfig):
        ProblemSpec(g257, np.ones(257), 1.5)


def test_primitive_derivative():
    s = np.linspace(0, 2, 11)
    for gamma in (0.25, 1.0):
        d = (primitive(s + 1e-6, gamma, 0.1) - primitive(s - 1e-6, gamma, 0.1)) / 2e-6
        np.testing.assert_allclose(d, (s + 0.1) ** -gamma, rtol=1e-6)
        assert primitive(0.0, gamma, 0.1) == 0


@pytest.mark.parametrize("gamma", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("p", [1.2, 1.5, 2.0])
def test_converges_and_weak_form(g257, gamma, p):
    spec = spec_for(g257, "one", gamma)
    cfg = PSolveConfig(p=p)
    sol = solve_p_problem(spec, cfg)
    assert sol.converged
    assert sol.iterations <= 60
    # discrete weak form at the interior nodes
    rhs = spec.f / (sol.u + cfg.eps) ** gamma
    r = (-divergence(sol.z, g257) - rhs)[1:-1]
    assert np.sqrt(g257.cell_volume) * np.linalg.norm(r) <= 10 * cfg.tol * (1 + np.linalg.norm(rhs))
    assert np.all(sol.u >= 0)


def test_init_independence(g257):
    spec = spec_for(g257, "tent", 0.5)
    us = [solve_p_problem(spec, PSolveConfig(p=1.2, init=i)).u for i in ("auto", 0.01, 3.0)]
    for u in us[1:]:
        assert np.max(np.abs(u - us[0])) <= 10 * PSolveConfig().tol


def test_energy_decreases_at_p2(g257):
    spec = spec_for(g257, "chi_half")
    cfg = PSolveConfig(p=2.0, init=0.01)
    sol = solve_p_problem(spec, cfg)
    e = np.array(sol.energy_history)
    assert np.all(np.diff(e) <= 1e-10 * (1 + np.abs(e[:-1])))
    assert p_energy(sol.u, spec, cfg) == pytest.approx(e[-1])


def test_comparison_principle(g257):
    f1 = preset_f("chi_half", g257)
    f2 = f1 + 0.3 * preset_f("one", g257)
    u1 = solve_p_problem(ProblemSpec(g257, f1, 1.0), PSolveConfig(p=1.5)).u
    u2 = solve_p_problem(ProblemSpec(g257, f2, 1.0), PSolveConfig(p=1.5)).u
    assert np.all(u1 <= u2 + 10 * PSolveConfig().tol)


def test_interior_positivity(g257):
    sol = solve_p_problem(spec_for(g257, "chi_half"), PSolveConfig(p=1.2))
    assert interior_positivity(sol.u, g257) > 0
    with pytest.raises(ValueError):
        interior_positivity(sol.u, g257, margin_cells=0)


@pytest.mark.parametrize("name,p", [("one", 1.5), ("chi_half", 1.2), ("tent", 1.1)])
def test_bv_energy_identity(g257, name, p):
    spec = spec_for(g257, name, 1.0)
    cfg = PSolveConfig(p=p)
    lhs, rhs = bv_estimate_check(solve_p_problem(spec, cfg), spec, cfg)
    assert lhs <= rhs * (1 + 1e-6)


def test_extract_flux_linear():
    g = build_grid((-1, 1), 101)
    u = g.axis_coords(0) + 2
    z = extract_flux(u, 1.5, 0.0, g)
    np.testing.assert_allclose(z[1:-1], 1.0)
    with pytest.raises(InvalidConfig):
        extract_flux(u, 1.0, 0.0, g)


def test_nonconvergence_warns(g257):
    with pytest.warns(NonConvergenceWarning):
        sol = solve_p_problem(spec_for(g257, "one"), PSolveConfig(p=1.2, max_iter=1, init=5.0))
    assert not sol.converged


def test_2d_solve_is_symmetric():
    g = build_grid([(-1, 1), (-1, 1)], 33)
    sol = solve_p_problem(ProblemSpec(g, preset_f("one", g), 1.0), PSolveConfig(p=1.5))
    assert sol.converged
    np.testing.assert_allclose(sol.u, sol.u.T, atol=1e-9)
    np.testing.assert_allclose(sol.u, sol.u[::-1], atol=1e-9)
    assert sol.u[16, 16] == sol.u.max()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), gamma=st.sampled_from([0.25, 0.5, 1.0]),
       p=st.sampled_from([1.2, 1.5]))
def test_random_data_init_independence(seed, gamma, p):
    g = build_grid((-1, 1), 65)
    f = np.random.default_rng(seed).uniform(0, 2, size=65)
    spec = ProblemSpec(g, f, gamma)
    with warnings.catch_warnings():
        warnings.simplefilter("error", NonConvergenceWarning)
        a = solve_p_problem(spec, PSolveConfig(p=p, init=0.05)).u
        b = solve_p_problem(spec, PSolveConfig(p=p, init=2.0)).u
    assert np.max(np.abs(a - b)) <= 10 * PSolveConfig().tol


def test_trivial_diagnostics(g257):
    assert interior_positivity(np.full(257, 0.5), g257, margin_cells=7) == 0.5
    assert interior_positivity(np.zeros(257), g257) == 0
    spec, cfg = spec_for(g257, "zero"), PSolveConfig()
    assert bv_estimate_check(solve_p_problem(spec, cfg), spec, cfg) == (0.0, 0.0)
