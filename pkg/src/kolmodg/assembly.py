"""Sparse assembly of every bilinear form, norm Gram and coefficient map.

Conventions fixed here and relied on everywhere else:

  * interior faces are owned by the adjacent element with the higher index;
    jumps are [w] = w_owner - w_neighbour and the face normal points out of
    the owner.  Both slots of the symmetric interior-penalty terms use the
    same convention, so the assembled form is orientation independent.
  * the upwind value w^+ on an inflow face is the trace of the *downstream*
    element (the one whose outward normal n has x n2 < 0 there), and the
    upwind jump is (downstream trace) - (upstream trace).
  * all integrands are polynomials times the weight x, integrated exactly,
    so the algebraic identities of the scheme are testable at rounding level.

Weights of the coercivity-side norms.  Testing the evolution against
V = U + tau (x U_y + U_t) - div(A grad U) yields, per time slab,

    B_n(U, V) >= 1/2 (||U(t_n^-)||_A^2 - ||U(t_{n-1}^-)||_A^2)
                 + 3/8 ||[U]_{n-1}||^2 + 1/2 ||sqrt(A) grad [U]_{n-1}||^2
                 + 1/4 int_{I_n} |||U|||^2 dt,

with the upwind seminorm carrying weight 7/4 inside |||.|||^2: the U-test
supplies 1/2 ||U||_uw^2 and the V_2/V_3 flux estimates each charge 1/32, so
7/16 = (1/4) * (7/4) is what survives; likewise the time jump keeps
1/2 - 1/16 - 1/16 = 3/8 of its L2 part.  Weights 2 and 1/2 would overstate
the provable bound (constant directions already violate them).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .coeffs import CoeffSet
from .mesh import (GAMMA_MINUS, GAMMA_PLUS, INFLOW, OUTFLOW, Face, FaceClass,
                   Mesh)
from .polyspace import DgSpace, QuadSet, SlabSpace, make_quadrature

UW_WEIGHT = 7.0 / 4.0
JUMP_WEIGHT_L2 = 3.0 / 8.0
JUMP_WEIGHT_GRAD = 1.0 / 2.0


class AssemblyError(RuntimeError):
    pass


def _face_points(face: Face, rule) -> tuple[np.ndarray, np.ndarray]:
    g, w = rule.mapped(face.lo, face.hi)
    if face.horizontal:
        pts = np.column_stack([g, np.full_like(g, face.pos)])
    else:
        pts = np.column_stack([np.full_like(g, face.pos), g])
    return pts, w


class _Coo:
    """Triplet accumulator for one global sparse matrix."""

    def __init__(self, n: int):
        self.n = n
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add(self, rows: np.ndarray, cols: np.ndarray, block: np.ndarray):
        r, c = np.meshgrid(rows, cols, indexing="ij")
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(np.asarray(block).ravel())

    def build(self) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix((self.n, self.n))
        mat = sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.n, self.n),
        )
        return mat.tocsr()


class SpatialForms:
    """All spatial matrices of one (mesh, space, coefficient) triple.

    Matrices are indexed [test, trial] over the block dof layout of
    DgSpace; e.g. ``a_dg[i, j] = a_dG(phi_j, phi_i)`` so that
    ``v @ a_dg @ u`` evaluates the form on (U, V).
    """

    def __init__(self, mesh: Mesh, fc: FaceClass, space: DgSpace, coeffs: CoeffSet,
                 uw_weight: float = UW_WEIGHT, flip_orientation: bool = False):
        self.mesh = mesh
        self.fc = fc
        self.space = space
        self.coeffs = coeffs
        self.uw_weight = uw_weight
        self._flip = flip_orientation
        self.quad = make_quadrature(max(space.p, 1), 0)
        self._build_volume()
        self._build_faces()
        self._compose()

    # -- volume ------------------------------------------------------------

    def _build_volume(self):
        mesh, space, quad = self.mesh, self.space, self.quad
        n = space.n_dofs
        dx = _Coo(n)
        dy = _Coo(n)
        drift = _Coo(n)
        grad_a = _Coo(n)
        grad = _Coo(n)
        hmap = _Coo(n)
        for elem in mesh.elements:
            idx = np.arange(space.n_loc) + elem.index * space.n_loc
            pts, w = quad.cell_points(elem)
            vals, grads = space.eval_basis(elem, pts)
            wx = w * pts[:, 0]
            dx_loc = np.einsum("g,gi,gj->ij", w, vals, grads[:, :, 0])
            dy_loc = np.einsum("g,gi,gj->ij", w, vals, grads[:, :, 1])
            dx.add(idx, idx, dx_loc)
            dy.add(idx, idx, dy_loc)
            # coefficient map of the drift x d/dy (lands in the same space)
            drift.add(idx, idx, np.einsum("g,gi,gj->ij", wx, vals, grads[:, :, 1]))
            a_mat = self.coeffs.a_mats[elem.index]
            ag = np.einsum("de,gje->gjd", a_mat, grads)
            grad_a.add(idx, idx, np.einsum("g,gid,gjd->ij", w, grads, ag))
            grad.add(idx, idx, np.einsum("g,gid,gjd->ij", w, grads, grads))
            al, be, ga = (self.coeffs.alpha[elem.index], self.coeffs.beta[elem.index],
                          self.coeffs.gamma[elem.index])
            # -div(A grad .) composed from the exact derivative maps
            h_loc = -(al * dx_loc @ dx_loc + be * (dx_loc @ dy_loc + dy_loc @ dx_loc)
                      + ga * dy_loc @ dy_loc)
            hmap.add(idx, idx, h_loc)
        self.dx = dx.build()
        self.dy = dy.build()
        self.drift = drift.build()
        self.grad_a_gram = grad_a.build()
        self.grad_gram = grad.build()
        self.div_a_map = hmap.build()

    # -- faces ---------------------------------------------------------------

    def _sides(self, face: Face):
        """(first element, second element, normal) in assembly orientation."""
        if face.is_boundary or not self._flip:
            return face.owner, face.neighbour, np.array(face.normal)
        return face.neighbour, face.owner, -np.array(face.normal)

    def _build_faces(self):
        mesh, fc, space = self.mesh, self.fc, self.space
        n = space.n_dofs
        nloc = space.n_loc
        rule = self.quad.face
        cons = _Coo(n)  # <{n1 U_x}, [V]> over interior faces
        sig = _Coo(n)  # <sigma [U], [V]>
        upw = _Coo(n)  # upwind terms, with the signs they carry inside a_dG
        uw = _Coo(n)  # Gram of the upwind seminorm
        out = _Coo(n)  # sum_T || sqrt(x n2 A) grad w ||^2 on outflow parts
        bp = _Coo(n)  # jump part of the broken-Poincare form
        for face in mesh.faces:
            pts, w = _face_points(face, rule)
            xg = pts[:, 0]
            if not face.is_boundary:
                eo, en, normal = self._sides(face)
                own, nbr = mesh.elements[eo], mesh.elements[en]
                io = np.arange(nloc) + eo * nloc
                inb = np.arange(nloc) + en * nloc
                idx = np.concatenate([io, inb])
                vo, go = space.eval_basis(own, pts)
                vn, gn = space.eval_basis(nbr, pts)
                jump = np.hstack([vo, -vn])
                if fc.n1_face[face.index] != 0.0:
                    flux = 0.5 * normal[0] * np.hstack([go[:, :, 0], gn[:, :, 0]])
                    cons.add(idx, idx, np.einsum("g,ga,gb->ab", w, jump, flux))
                    sig.add(idx, idx,
                            self.coeffs.sigma_f[face.index]
                            * np.einsum("g,ga,gb->ab", w, jump, jump))
                # broken-Poincare jump with the average mesh size
                havg = 0.5 * (own.diameter + nbr.diameter)
                bp.add(idx, idx, np.einsum("g,ga,gb->ab", w / havg, jump, jump))
                if face.horizontal:
                    # one side is inflow; s = x n2 from the downstream element
                    if fc.side(face, face.owner) == INFLOW:
                        down, up = face.owner, face.neighbour
                        n2_down = face.normal[1]
                    else:
                        down, up = face.neighbour, face.owner
                        n2_down = -face.normal[1]
                    s = xg * n2_down  # < 0 on the face interior
                    idn = np.arange(nloc) + down * nloc
                    iup = np.arange(nloc) + up * nloc
                    vd, _ = space.eval_basis(mesh.elements[down], pts)
                    vu, _ = space.eval_basis(mesh.elements[up], pts)
                    # a_dG carries -<x n2 [U]_upw, V^+>
                    upw.add(idn, idn, -np.einsum("g,gi,gj->ij", w * s, vd, vd))
                    upw.add(idn, iup, np.einsum("g,gi,gj->ij", w * s, vd, vu))
                    ujump = np.hstack([vd, -vu])
                    iduj = np.concatenate([idn, iup])
                    uw.add(iduj, iduj, np.einsum("g,ga,gb->ab", w * np.abs(s), ujump, ujump))
            else:
                elem = mesh.elements[face.owner]
                idx = np.arange(nloc) + face.owner * nloc
                vals, _ = space.eval_basis(elem, pts)
                tag = fc.tags[face.index]
                if tag == GAMMA_MINUS:
                    s = xg * face.normal[1]
                    upw.add(idx, idx, -np.einsum("g,gi,gj->ij", w * s, vals, vals))
                if tag in (GAMMA_MINUS, GAMMA_PLUS):
                    s = xg * face.normal[1]
                    uw.add(idx, idx, np.einsum("g,gi,gj->ij", w * np.abs(s), vals, vals))
                    bp.add(idx, idx,
                           np.einsum("g,gi,gj->ij", w / elem.diameter, vals, vals))
            # element-wise outflow term of the enhanced norm (interior faces
            # contribute to both adjacent elements' outflow parts)
            for e in ((face.owner,) if face.is_boundary else (face.owner, face.neighbour)):
                if not face.horizontal:
                    continue  # x n2 = 0 on vertical faces
                if fc.side(face, e) != OUTFLOW:
                    continue
                n2_out = face.normal[1] if e == face.owner else -face.normal[1]
                s = xg * n2_out  # >= 0 here
                elem = mesh.elements[e]
                idx = np.arange(nloc) + e * nloc
                _, grads = space.eval_basis(elem, pts)
                ag = np.einsum("de,gje->gjd", self.coeffs.a_mats[e], grads)
                out.add(idx, idx, np.einsum("g,gid,gjd->ij", w * s, grads, ag))
        self.consistency = cons.build()
        self.sigma_gram = sig.build()
        self.upwind = upw.build()
        self.uw_gram = uw.build()
        self.outflow_gram = out.build()
        self._bp_jumps = bp.build()

    # -- composites ----------------------------------------------------------

    def _compose(self):
        n = self.space.n_dofs
        nloc = self.space.n_loc
        eye = sp.identity(n, format="csr")
        self.mass = eye
        self.stiff_x = (self.dx.T @ self.dx).tocsr()
        self.a_dg = (self.stiff_x + self.drift
                     - self.consistency - self.consistency.T + self.sigma_gram
                     + self.upwind).tocsr()
        self.g_ah = (eye + self.grad_a_gram).tocsr()
        self.g_bp = (self.grad_gram + self._bp_jumps).tocsr()
        tau = np.repeat(self.coeffs.tau, nloc)
        alpha2 = np.repeat(self.coeffs.alpha**2, nloc)
        self.tau_diag = sp.diags(tau)
        self.g_dg = (self.stiff_x + 0.5 * self.uw_gram + self.sigma_gram).tocsr()
        self.g_enh_nostream = (
            self.dx.T @ self.grad_a_gram @ self.dx
            + 0.5 * self.dy.T @ sp.diags(alpha2) @ self.dy
            + 0.5 * self.stiff_x
            + self.outflow_gram
            + self.sigma_gram
            + self.uw_weight * self.uw_gram
        ).tocsr()
        self.g_enh = (self.g_enh_nostream + 0.5 * self.drift.T @ self.tau_diag @ self.drift).tocsr()
        # stationary part of the optimal test map: U + tau x U_y - div(A grad U)
        self.test_map_u = (eye + self.tau_diag @ self.drift + self.div_a_map).tocsr()
        # LHS of the upwind integration-by-parts identity = 1/2 ||U||_uw^2
        self.upwind_identity_lhs = (self.drift + self.upwind).tocsr()

    def export_matrixmarket(self, name: str, path: str) -> None:
        scipy.io.mmwrite(path, getattr(self, name).tocoo())


# -- space-time slabs ---------------------------------------------------------


class SlabForms:
    """Coupled matrices of one slab system of size (q + 1) x spatial dofs.

    Coefficient layout: mode-major, index = a * D + i for temporal mode a and
    spatial dof i, so temporal (x) spatial Kronecker products apply directly.
    """

    def __init__(self, spatial: SpatialForms, slab: SlabSpace):
        self.spatial = spatial
        self.slab = slab
        self.n_space = spatial.space.n_dofs
        self.n_modes = slab.n_modes
        self.n = self.n_space * self.n_modes
        d_t = slab.deriv_pairing
        w0 = slab.at_start
        w1 = slab.at_end
        eye_t = sp.identity(self.n_modes, format="csr")
        eye_x = sp.identity(self.n_space, format="csr")
        # int <U_t, V> dt + <U(t+), V(t+)>; deriv_pairing[a, b] = int psi_a psi_b'
        # already has the test (value) factor on the rows
        self.time_block = sp.csr_matrix(np.outer(w0, w0) + d_t)
        self.system = (sp.kron(self.time_block, eye_x)
                       + sp.kron(eye_t, spatial.a_dg)).tocsr()
        # B_n couples the previous end state through the jump term
        self.prev_block = (-sp.kron(sp.csr_matrix(w0[:, None]), eye_x)).tocsr()
        self.extract_start = sp.kron(sp.csr_matrix(w0[None, :]), eye_x).tocsr()
        self.extract_end = sp.kron(sp.csr_matrix(w1[None, :]), eye_x).tocsr()
        # coefficient map of d/dt (temporal degree drops by one, stays in space)
        self.dt_map = sp.kron(sp.csr_matrix(d_t), eye_x).tocsr()
        self.streamline_map = (sp.kron(eye_t, spatial.drift) + self.dt_map).tocsr()
        tau_big = sp.kron(eye_t, spatial.tau_diag)
        self.test_map = (sp.kron(eye_t, eye_x + spatial.div_a_map)
                         + tau_big @ self.streamline_map).tocsr()
        self.g_ah_slab = sp.kron(eye_t, spatial.g_ah).tocsr()
        self.g_enh_slab = (sp.kron(eye_t, spatial.g_enh_nostream)
                           + 0.5 * self.streamline_map.T @ tau_big @ self.streamline_map).tocsr()

    def rhs(self, u_prev: np.ndarray, f=None, data_quad: QuadSet | None = None) -> np.ndarray:
        """Load vector <U_prev, V(t+)> + int <f, V> of the slab system."""
        b = (self.extract_start.T @ u_prev).ravel()
        if f is not None:
            b = b + self.forcing_load(f, data_quad)
        return b

    def forcing_load(self, f, data_quad: QuadSet | None = None,
                     slab: SlabSpace | None = None) -> np.ndarray:
        """Load int <f, V> dt; `slab` overrides the physical time interval
        (the matrices only depend on the slab length, f does not)."""
        slab = slab or self.slab
        space = self.spatial.space
        quad = data_quad or make_quadrature(space.p, slab.q, n_extra=8)
        tg, tw = quad.time.mapped(slab.t0, slab.t1)
        psi = slab.eval(tg)[0]  # (n_t, q+1)
        load = np.zeros(self.n)
        for elem in self.spatial.mesh.elements:
            pts, w = quad.cell_points(elem)
            vals, _ = space.eval_basis(elem, pts)
            idx = np.arange(space.n_loc) + elem.index * space.n_loc
            for g, t in enumerate(tg):
                fv = f(pts[:, 0], pts[:, 1], t)
                cell = vals.T @ (w * fv)
                for a in range(self.n_modes):
                    load[a * self.n_space + idx] += tw[g] * psi[g, a] * cell
        return load

    def norm_a_sq_of_trace(self, vec: np.ndarray) -> float:
        return float(vec @ (self.spatial.g_ah @ vec))


def slab_coercivity_rhs_gram(sf: SlabForms,
                             jump_l2: float = JUMP_WEIGHT_L2,
                             jump_grad: float = JUMP_WEIGHT_GRAD) -> np.ndarray:
    """Gram of the provable slab lower bound, over joint (slab, previous) dofs.

    Quadratic form:  1/2 ||U(t_n^-)||_A^2 - 1/2 ||U_prev||_A^2
                     + jump_l2 ||J||^2 + jump_grad ||sqrt(A) grad J||^2
                     + 1/4 int |||U|||^2 dt,   J = U(t_{n-1}^+) - U_prev.
    """
    n, d = sf.n, sf.n_space
    g_ah = sf.spatial.g_ah.toarray()
    g_grad_a = sf.spatial.grad_a_gram.toarray()
    e0 = sf.extract_start.toarray()
    e1 = sf.extract_end.toarray()
    jgram = jump_l2 * np.eye(d) + jump_grad * g_grad_a
    big = np.zeros((n + d, n + d))
    big[:n, :n] += 0.5 * e1.T @ g_ah @ e1 + 0.25 * sf.g_enh_slab.toarray()
    big[n:, n:] += -0.5 * g_ah
    jmap = np.hstack([e0, -np.eye(d)])  # J as a map on (slab, prev)
    big += jmap.T @ jgram @ jmap
    return big


def slab_bn_matrix(sf: SlabForms) -> np.ndarray:
    """B_n as a dense map from joint (slab, previous) trial dofs to test dofs."""
    return np.hstack([sf.system.toarray(), sf.prev_block.toarray()])


class SpaceTimeForms:
    """Dense space-time matrices over N uniform slabs, for inf-sup studies."""

    def __init__(self, spatial: SpatialForms, q: int, k: float, n_slabs: int,
                 jump_l2: float = JUMP_WEIGHT_L2, jump_grad: float = JUMP_WEIGHT_GRAD):
        if n_slabs < 1:
            raise ValueError("need at least one slab")
        self.spatial = spatial
        self.n_slabs = n_slabs
        slab = SlabSpace(q, 0.0, k)
        self.sf = SlabForms(spatial, slab)
        n1 = self.sf.n
        d = self.sf.n_space
        n = n1 * n_slabs
        self.n = n
        b1 = self.sf.system.toarray()
        off = -self.sf.extract_start.toarray().T @ self.sf.extract_end.toarray()
        self.b_st = np.zeros((n, n))
        self.m_test = np.zeros((n, n))
        self.g_st = np.zeros((n, n))
        g_ah = spatial.g_ah.toarray()
        g_grad_a = spatial.grad_a_gram.toarray()
        jgram = jump_l2 * np.eye(d) + jump_grad * g_grad_a
        e0 = self.sf.extract_start.toarray()
        e1 = self.sf.extract_end.toarray()
        mt1 = self.sf.test_map.toarray()
        genh = self.sf.g_enh_slab.toarray()
        for m in range(n_slabs):
            s = slice(m * n1, (m + 1) * n1)
            self.b_st[s, s] = b1
            self.m_test[s, s] = mt1
            self.g_st[s, s] += 0.25 * genh
            if m > 0:
                sp_prev = slice((m - 1) * n1, m * n1)
                self.b_st[s, sp_prev] = off
                jmap = np.zeros((d, n))
                jmap[:, s] = e0
                jmap[:, sp_prev] = -e1
                self.g_st += jmap.T @ jgram @ jmap
        first = slice(0, n1)
        last = slice((n_slabs - 1) * n1, n_slabs * n1)
        self.g_st[first, first] += e0.T @ jgram @ e0
        self.g_st[last, last] += 0.5 * e1.T @ g_ah @ e1
