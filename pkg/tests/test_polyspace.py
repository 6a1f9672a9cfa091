import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmodg.mesh import Domain, build_rect_mesh
from kolmodg.polyspace import (DgSpace, QuadRule, SlabSpace,
                               compute_inverse_constants, legendre_table,
                               make_quadrature)


@pytest.fixture(scope="module")
def mesh():
    return build_rect_mesh(Domain(0, 1, 0, 1), 2, 2)


@pytest.mark.parametrize("p", [0, 1, 2, 3, 4])
def test_local_mass_is_identity(mesh, p):
    space = DgSpace(mesh, p)
    quad = make_quadrature(p, 0)
    for elem in mesh.elements[:2]:
        pts, w = quad.cell_points(elem)
        vals, _ = space.eval_basis(elem, pts)
        gram = np.einsum("g,gi,gj->ij", w, vals, vals)
        assert np.abs(gram - np.eye(space.n_loc)).max() < 1e-12


def test_dimension_is_total_degree(mesh):
    for p in range(5):
        assert DgSpace(mesh, p).n_loc == (p + 1) * (p + 2) // 2


def test_p0_basis_constant(mesh):
    space = DgSpace(mesh, 0)
    elem = mesh.elements[0]
    vals, grads = space.eval_basis(elem, np.array([[0.1, 0.2], [0.3, 0.4]]))
    assert np.allclose(vals, 1.0 / np.sqrt(elem.area), rtol=1e-14)
    assert np.abs(grads).max() == 0.0


def test_gradients_match_finite_differences(mesh, rng=np.random.default_rng(3)):
    space = DgSpace(mesh, 2)
    elem = mesh.elements[1]
    pts = np.column_stack([
        rng.uniform(elem.x0 + 0.05, elem.x1 - 0.05, 5),
        rng.uniform(elem.y0 + 0.05, elem.y1 - 0.05, 5),
    ])
    eps = 1e-6
    _, grads = space.eval_basis(elem, pts)
    for d, step in enumerate((np.array([eps, 0.0]), np.array([0.0, eps]))):
        vp, _ = space.eval_basis(elem, pts + step)
        vm, _ = space.eval_basis(elem, pts - step)
        fd = (vp - vm) / (2 * eps)
        assert np.abs(fd - grads[:, :, d]).max() < 1e-8


def test_second_derivatives_match_finite_differences(mesh):
    space = DgSpace(mesh, 3)
    elem = mesh.elements[0]
    pts = np.array([[0.21, 0.34], [0.4, 0.12]])
    eps = 1e-5
    _, _, hess = space.eval_basis(elem, pts, nders=2)
    v0, _ = space.eval_basis(elem, pts)
    vxp, _ = space.eval_basis(elem, pts + [eps, 0])
    vxm, _ = space.eval_basis(elem, pts - [eps, 0])
    assert np.abs((vxp - 2 * v0 + vxm) / eps**2 - hess[:, :, 0]).max() < 1e-4
    vpp, _ = space.eval_basis(elem, pts + [eps, eps])
    vpm, _ = space.eval_basis(elem, pts + [eps, -eps])
    vmp, _ = space.eval_basis(elem, pts + [-eps, eps])
    vmm, _ = space.eval_basis(elem, pts - [eps, eps])
    mixed = (vpp - vpm - vmp + vmm) / (4 * eps**2)
    assert np.abs(mixed - hess[:, :, 1]).max() < 1e-4


def test_quadrature_cell_examples(mesh):
    quad = make_quadrature(2, 0)
    elem = build_rect_mesh(Domain(0, 1, 0, 1), 1, 1).elements[0]
    pts, w = quad.cell_points(elem)
    assert w @ pts[:, 0] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("p", range(7))
def test_quadrature_monomial_exactness(p):
    rule = QuadRule.gauss(p + 1)
    g, w = rule.mapped(0.0, 1.0)
    assert w @ g ** (2 * p) == pytest.approx(1.0 / (2 * p + 1), abs=1e-14)


def test_face_rule_integrates_x_on_bottom_edge():
    quad = make_quadrature(1, 0)
    g, w = quad.face.mapped(0.0, 1.0)
    assert w @ g == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(i=st.integers(0, 5), j=st.integers(0, 5))
def test_quadrature_exact_for_mixed_monomials(i, j):
    p = max(i, j)
    quad = make_quadrature(p, 0)
    elem = build_rect_mesh(Domain(0, 1, 0, 1), 1, 1).elements[0]
    pts, w = quad.cell_points(elem)
    val = w @ (pts[:, 0] ** i * pts[:, 1] ** j)
    assert val == pytest.approx(1.0 / ((i + 1) * (j + 1)), rel=1e-13)


def test_legendre_orthonormality_table():
    rule = QuadRule.gauss(8)
    tab = legendre_table(rule.points, 6)
    gram = np.einsum("g,gi,gj->ij", rule.weights, tab[0], tab[0])
    assert np.abs(gram - np.eye(7)).max() < 1e-13


def test_temporal_mass_diagonal_and_trace_sharp():
    for q in range(4):
        slab = SlabSpace(q, 0.3, 0.55)
        rule = QuadRule.gauss(q + 1)
        ts, ws = rule.mapped(slab.t0, slab.t1)
        vals = slab.eval(ts)[0]
        gram = np.einsum("g,ga,gb->ab", ws, vals, vals)
        assert np.abs(gram - np.eye(q + 1)).max() < 1e-12
        # endpoint-trace constant attains (q+1)^2/k on the coefficient sphere
        attained = float(slab.at_end @ slab.at_end)
        assert attained == pytest.approx(slab.trace_constant_sq, rel=1e-10)


def test_temporal_derivative_bound_holds():
    for q in range(1, 5):
        slab = SlabSpace(q, 0.0, 0.2)
        lam = np.linalg.eigvalsh(slab.stiffness)[-1]
        assert lam <= slab.deriv_constant_sq * (1 + 1e-12)


def test_inverse_constants_against_dense_oracle(mesh):
    space = DgSpace(mesh, 1)
    quad = make_quadrature(1, 0)
    elem = mesh.elements[0]
    pts, w = quad.cell_points(elem)
    _, grads = space.eval_basis(elem, pts)
    stiff = np.einsum("g,gid,gjd->ij", w, grads, grads)
    lam = np.linalg.eigvalsh(stiff)[-1]
    c = compute_inverse_constants(mesh, 1)
    assert c.c_grad == pytest.approx(np.sqrt(lam) * elem.diameter, rel=1e-9)
    # a constant already forces C_trace p^2/h >= perimeter/area
    assert c.c_trace**2 / elem.diameter >= 2 * (elem.hx + elem.hy) / elem.area - 1e-12


def test_constant_function_pins_trace_constant():
    mesh1 = build_rect_mesh(Domain(0, 1, 0, 1), 1, 1)
    c = compute_inverse_constants(mesh1, 1)
    assert c.c_trace >= 2.0


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_sampled_inverse_inequalities(mesh, p):
    space = DgSpace(mesh, p)
    quad = make_quadrature(p, 0)
    c = compute_inverse_constants(mesh, p)
    elem = mesh.elements[0]
    pts, w = quad.cell_points(elem)
    _, grads = space.eval_basis(elem, pts)
    stiff = np.einsum("g,gid,gjd->ij", w, grads, grads)
    btrace = np.zeros((space.n_loc, space.n_loc))
    for lo, hi, fixed, horizontal in ((elem.x0, elem.x1, elem.y0, True),
                                      (elem.x0, elem.x1, elem.y1, True),
                                      (elem.y0, elem.y1, elem.x0, False),
                                      (elem.y0, elem.y1, elem.x1, False)):
        g, fw = quad.face.mapped(lo, hi)
        fpts = (np.column_stack([g, np.full_like(g, fixed)]) if horizontal
                else np.column_stack([np.full_like(g, fixed), g]))
        fvals, _ = space.eval_basis(elem, fpts)
        btrace += np.einsum("g,gi,gj->ij", fw, fvals, fvals)
    rng = np.random.default_rng(p)
    coefs = rng.standard_normal((10_000, space.n_loc))
    mass = np.einsum("si,si->s", coefs, coefs)
    tr = np.einsum("si,ij,sj->s", coefs, btrace, coefs)
    gr = np.einsum("si,ij,sj->s", coefs, stiff, coefs)
    assert np.all(tr <= c.c_trace**2 * p**2 / elem.diameter * mass)
    assert np.all(gr <= c.c_grad**2 * p**4 / elem.diameter**2 * mass)


def test_test_mode_constants(mesh):
    c = compute_inverse_constants(mesh, 3, test_mode=True)
    assert (c.c_trace, c.c_grad) == (1.0, 1.0)
    assert c.test_mode
