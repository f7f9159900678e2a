import numpy as np
import pytest
import sympy as sp
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hessmatch.cg_map import (
    BondLength,
    LinearCGMap,
    RadialFromPinned,
    StackedMap,
    UserMap,
    force_projection,
    project_positions,
    xi_divergence,
    xi_t_matrix,
)
from hessmatch.errors import DimensionMismatch, NotPositiveDefinite, SingularGeometry


def symbolic_operators(kind):
    """Force projection, divergence and contraction T built symbolically.

    Returns numeric callables ``(xi_f(r), div(r), T(r, F))`` for two atoms in
    the plane.
    """
    r = sp.symbols("r0:4", real=True)
    F = sp.symbols("f0:4", real=True)
    x0, y0, x1, y1 = r
    d_bond = sp.sqrt((x0 - x1) ** 2 + (y0 - y1) ** 2)
    d_pin = sp.sqrt(x0**2 + y0**2)
    comps = {"bond": [d_bond], "radial": [d_pin], "stacked": [d_pin, d_bond]}[kind]
    J = sp.Matrix([[sp.diff(c, v) for v in r] for c in comps])
    xi = sp.simplify((J * J.T).inv()) * J
    m = len(comps)
    div = [sum(sp.diff(xi[I, j], r[j]) for j in range(4)) for I in range(m)]
    T = sp.Matrix(m, m, lambda I, K: sum(F[i] * xi[I, j] * sp.diff(xi[K, i], r[j])
                                         for i in range(4) for j in range(4)))
    return (sp.lambdify([r], xi, "numpy"), sp.lambdify([r], div, "numpy"),
            sp.lambdify([r, F], T, "numpy"))


MAPS = {
    "bond": BondLength(0, 1, 2, 2),
    "radial": RadialFromPinned(0, 2, 2),
    "stacked": StackedMap([RadialFromPinned(0, 2, 2), BondLength(0, 1, 2, 2)]),
}
ORACLES = {k: symbolic_operators(k) for k in MAPS}

positions = arrays(np.float64, 4, elements=st.floats(-2, 2))


def separated(r):
    x = r.reshape(2, 2)
    a, b = x[0], x[0] - x[1]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    # keep the two CG coordinates well conditioned
    return na > 0.3 and nb > 0.3 and abs(a[0] * b[1] - a[1] * b[0]) > 0.1 * na * nb


def test_project_positions_examples():
    sel = LinearCGMap.select([1], 4, 1)
    np.testing.assert_array_equal(project_positions(sel, np.array([1.0, 2.0, 3.0, 4.0])), [2.0])
    com = LinearCGMap([[0.5, 0.5]])
    np.testing.assert_array_equal(project_positions(com, np.array([0.0, 2.0])), [1.0])
    bond = BondLength(0, 1, 2, 2)
    np.testing.assert_array_equal(project_positions(bond, np.array([3.0, 4.0, 0.0, 0.0])), [5.0])


def test_force_projection_examples():
    sel = LinearCGMap.select([0, 2], 3, 2)
    assert np.array_equal(force_projection(sel), sel.xi_r)
    np.testing.assert_allclose(force_projection(LinearCGMap([[0.5, 0.5]])), [[1.0, 1.0]],
                               rtol=1e-15)
    rad = RadialFromPinned(0, 1, 2)
    np.testing.assert_allclose(force_projection(rad, np.array([3.0, 4.0])), [[0.6, 0.8]],
                               rtol=1e-15)
    with pytest.raises(ValueError):
        force_projection(rad)


def test_center_of_mass_weights():
    com = LinearCGMap.center_of_mass([[0, 1], [2]], 3, 1, masses=[1.0, 3.0, 2.0])
    np.testing.assert_allclose(com.xi_r, [[0.25, 0.75, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(force_projection(com) @ com.xi_r.T, np.eye(2), atol=1e-14)


def test_rank_deficient_and_shape_errors():
    with pytest.raises(NotPositiveDefinite):
        LinearCGMap([[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(DimensionMismatch):
        LinearCGMap(np.eye(3), 2, 1)
    with pytest.raises(SingularGeometry):
        BondLength(0, 1, 2, 2).value(np.array([1.0, 1.0, 1.0, 1.0]))


def test_divergence_examples():
    np.testing.assert_array_equal(xi_divergence(LinearCGMap([[0.5, 0.5]]), np.array([0.2, 0.4])),
                                  [0.0])
    rad = RadialFromPinned(0, 1, 2)
    np.testing.assert_allclose(xi_divergence(rad, np.array([0.0, 2.0])), [0.5], rtol=1e-15)
    bond = BondLength(0, 1, 2, 2)
    # each of the two atom blocks contributes (dim - 1) / (2 d)
    np.testing.assert_allclose(xi_divergence(bond, np.array([0.0, 0.0, 2.0, 0.0])), [0.5])
    np.testing.assert_allclose(xi_divergence(bond, np.array([0.0, 0.0, 1.0, 0.0])), [1.0])


@pytest.mark.parametrize("kind", sorted(MAPS))
@settings(max_examples=25, deadline=None)
@given(r=positions)
def test_operators_match_symbolic_oracle(kind, r):
    assume(separated(r))
    m = MAPS[kind]
    xi_o, div_o, T_o = ORACLES[kind]
    np.testing.assert_allclose(m.force_projection(r), np.array(xi_o(r), float), atol=1e-12)
    np.testing.assert_allclose(m.divergence(r), np.array(div_o(r), float), rtol=1e-5, atol=1e-8)
    f = np.array([0.3, -1.2, 0.7, 0.5])
    T = xi_t_matrix(m, r, f)
    np.testing.assert_allclose(T, np.array(T_o(r, f), float), rtol=1e-5, atol=1e-7)


def test_radial_t_matrix_with_parallel_force():
    # force along r: the projection does not rotate, so T vanishes
    rad = RadialFromPinned(0, 1, 2)
    r = np.array([1.2, -0.5])
    T = xi_t_matrix(rad, r, 3.0 * r)
    _, _, T_o = symbolic_operators("radial")
    expected = np.array(T_o(np.r_[r, 0.0, 0.0], np.r_[3.0 * r, 0.0, 0.0]), float)
    np.testing.assert_allclose(T, expected, atol=1e-9)
    assert abs(T[0, 0]) < 1e-9


def test_t_matrix_is_linear_in_force():
    m = MAPS["stacked"]
    r = np.array([0.9, 0.2, -0.4, 1.1])
    f = np.array([0.3, -1.2, 0.7, 0.5])
    np.testing.assert_allclose(xi_t_matrix(m, r, 2.5 * f), 2.5 * xi_t_matrix(m, r, f), rtol=1e-12)


def test_linear_maps_have_zero_nonlinear_terms():
    m = LinearCGMap.center_of_mass([[0, 1]], 2, 2)
    r = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_array_equal(xi_t_matrix(m, r, np.ones(4)), 0.0)
    np.testing.assert_array_equal(m.xi_derivative(r), 0.0)
    np.testing.assert_array_equal(m.divergence_gradient(r), 0.0)


@pytest.mark.parametrize("kind", sorted(MAPS))
def test_projection_inverts_jacobian(kind, np_rng):
    m = MAPS[kind]
    for _ in range(100):
        r = np_rng.normal(size=4)
        if not separated(r):
            continue
        J = m.jacobian(r)
        np.testing.assert_allclose(m.force_projection(r) @ J.T, np.eye(m.out_dim), atol=1e-10)


def test_linear_projection_inverts_map(np_rng):
    for _ in range(100):
        xi = np_rng.normal(size=(2, 6))
        m = LinearCGMap(xi, 3, 2)
        np.testing.assert_allclose(force_projection(m) @ xi.T, np.eye(2), atol=1e-10)


def test_analytic_divergence_gradient_matches_fd():
    for m in (MAPS["bond"], MAPS["radial"]):
        r = np.array([0.9, 0.2, -0.4, 1.1])
        g = m.divergence_gradient(r)
        h = 1e-6
        fd = np.stack([(m.divergence(r + h * e) - m.divergence(r - h * e)) / (2 * h)
                       for e in np.eye(4)])
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_user_map_falls_back_to_finite_differences():
    user = UserMap(lambda r: np.linalg.norm(r[..., :2] - r[..., 2:], axis=-1)[..., None], 1, 2, 2)
    bond = MAPS["bond"]
    r = np.array([0.9, 0.2, -0.4, 1.1])
    np.testing.assert_allclose(user.jacobian(r), bond.jacobian(r), atol=1e-9)
    np.testing.assert_allclose(user.divergence(r), bond.divergence(r), rtol=1e-4)


def test_batched_evaluation_matches_single(np_rng):
    m = MAPS["stacked"]
    R = np_rng.normal(size=(5, 4)) + np.array([1.0, 0.0, 0.0, 1.0])
    batch = m.force_projection(R)
    for t in range(5):
        np.testing.assert_allclose(batch[t], m.force_projection(R[t]), rtol=1e-14)


def test_fiber_lies_on_level_set():
    for m, R in ((MAPS["bond"], [1.3]), (MAPS["radial"], [0.8]), (MAPS["stacked"], [1.0, 1.1])):
        fib = m.fiber(np.array(R))
        z = fib.lower + (fib.upper - fib.lower) * np.linspace(0.1, 0.9, 7)[:, None]
        np.testing.assert_allclose(m.value(fib.embed(z)), np.broadcast_to(R, (7, len(R))),
                                   atol=1e-12)
