import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmodg.mesh import (GAMMA_0, GAMMA_MINUS, GAMMA_PLUS, INFLOW, OUTFLOW,
                          Domain, MeshConfigError, build_rect_mesh, classify,
                          regularity)


def test_unit_square_2x2_counts():
    mesh = build_rect_mesh(Domain(0, 1, 0, 1), 2, 2)
    assert mesh.n_elements == 4
    assert mesh.n_faces == 12
    assert len(mesh.interior_faces) == 4
    assert len(mesh.boundary_faces) == 8


def test_straddling_domain_needs_grid_line():
    mesh = build_rect_mesh(Domain(-1, 1, 0, 1), 2, 1)
    assert mesh.n_elements == 2
    assert 0.0 in mesh.xs
    with pytest.raises(MeshConfigError):
        build_rect_mesh(Domain(-0.7, 1, 0, 1), 2, 1)


def test_domain_validation():
    with pytest.raises(MeshConfigError):
        Domain(1, 0, 0, 1)
    with pytest.raises(MeshConfigError):
        build_rect_mesh(Domain(0, 1, 0, 1), 0, 2)


def test_classify_unit_square():
    mesh = build_rect_mesh(Domain(0, 1, 0, 1), 3, 2)
    fc = classify(mesh)
    for f in mesh.boundary_faces:
        if not f.horizontal:
            assert fc.tags[f.index] == GAMMA_0
        elif f.pos == 0.0:
            assert fc.tags[f.index] == GAMMA_MINUS
        else:
            assert fc.tags[f.index] == GAMMA_PLUS


def test_classify_straddling_signs():
    mesh = build_rect_mesh(Domain(-1, 1, 0, 1), 2, 1)
    fc = classify(mesh)
    for f in mesh.boundary_faces:
        if not f.horizontal:
            assert fc.tags[f.index] == GAMMA_0
            continue
        xmid = 0.5 * (f.lo + f.hi)
        bottom = f.pos == 0.0
        if bottom:
            assert fc.tags[f.index] == (GAMMA_PLUS if xmid < 0 else GAMMA_MINUS)
        else:
            assert fc.tags[f.index] == (GAMMA_MINUS if xmid < 0 else GAMMA_PLUS)


def test_sides_partition_element_boundary():
    mesh = build_rect_mesh(Domain(-1, 1, 0, 1), 4, 3)
    fc = classify(mesh)
    for elem in mesh.elements:
        total = 0.0
        for fi in mesh.elem_faces[elem.index]:
            face = mesh.faces[fi]
            assert fc.side(face, elem.index) in (INFLOW, OUTFLOW)
            total += face.length
        perim = 2 * (elem.hx + elem.hy)
        assert total == pytest.approx(perim, rel=1e-14)


def test_regularity_uniform_4x4():
    mesh = build_rect_mesh(Domain(0, 1, 0, 1), 4, 4)
    c_rho, h_min, hbar = regularity(mesh)
    assert c_rho == 1.0
    # h_T is the cell diagonal, so a quarter-width cell has h = sqrt(2)/4
    assert h_min == pytest.approx(np.hypot(0.25, 0.25), rel=1e-14)
    assert hbar == pytest.approx(h_min / 2, rel=1e-14)


def test_c_rho_at_least_one_any_mesh():
    for nx, ny in ((1, 1), (3, 5), (2, 7)):
        mesh = build_rect_mesh(Domain(0, 2, 0, 1), nx, ny)
        assert regularity(mesh)[0] >= 1.0


def test_regularity_1x1_caps_at_one():
    mesh = build_rect_mesh(Domain(0, 1, 0, 1), 1, 1)
    _, h_min, hbar = regularity(mesh)
    assert h_min == pytest.approx(np.sqrt(2), rel=1e-14)
    assert hbar == 0.5


def test_x_n2_cache():
    mesh = build_rect_mesh(Domain(0, 1, 0, 1), 2, 2)
    fc = classify(mesh)
    # every element's inflow boundary is its bottom face; sup |x| there is
    # the right edge of the cell
    for elem in mesh.elements:
        assert fc.x_n2_elem[elem.index] == pytest.approx(elem.x1, rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(
    nx=st.integers(1, 6),
    ny=st.integers(1, 6),
    w=st.floats(0.3, 5.0),
    h=st.floats(0.3, 5.0),
    x0=st.floats(-2.0, 2.0),
)
def test_boundary_face_lengths_sum_to_sides(nx, ny, w, h, x0):
    dom = Domain(x0, x0 + w, 0.0, h)
    if dom.straddles_x0:
        # force a grid line at zero by snapping the left end
        dom = Domain(-w / 2, w / 2, 0.0, h)
        nx = 2 * max(1, nx // 2)
    mesh = build_rect_mesh(dom, nx, ny)
    for pos, horizontal, length in (
        (dom.y_lo, True, w), (dom.y_hi, True, w),
        (dom.x_lo, False, h), (dom.x_hi, False, h),
    ):
        total = sum(f.length for f in mesh.boundary_faces
                    if f.horizontal == horizontal and f.pos == pos)
        assert total == pytest.approx(length, rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(nx=st.integers(1, 5), ny=st.integers(1, 5))
def test_classify_deterministic(nx, ny):
    mesh = build_rect_mesh(Domain(0, 2, -1, 1), nx, ny)
    a = classify(mesh)
    b = classify(mesh)
    assert a.tags == b.tags
    assert a.side_owner == b.side_owner
    assert np.array_equal(a.x_n2_elem, b.x_n2_elem)


def test_nonnegative_x_domain_inflow_is_bottom():
    mesh = build_rect_mesh(Domain(0, 3, 0, 1), 5, 2)
    fc = classify(mesh)
    for f in mesh.boundary_faces:
        if f.horizontal and f.pos == 0.0:
            assert fc.tags[f.index] == GAMMA_MINUS
        elif f.horizontal:
            assert fc.tags[f.index] == GAMMA_PLUS


def test_json_export_roundtrip():
    import json

    mesh = build_rect_mesh(Domain(0, 1, 0, 1), 2, 3)
    data = json.loads(mesh.to_json())
    assert len(data["elements"]) == 6
    assert len(data["faces"]) == mesh.n_faces
    assert data["faces"][0]["normal"] in ([-1.0, 0.0], [0.0, -1.0], [1.0, 0.0], [0.0, 1.0])
