"""Modal bases, quadrature and numerically certified inverse-inequality constants.

Spatial spaces are total-degree P_p on each rectangle, spanned by products of
Legendre polynomials L_i(xi) L_j(eta) with i + j <= p.  Restricted to total
degree these remain mutually orthogonal, so the scaled basis is orthonormal in
L2 of the physical cell and the local mass matrix is the identity.  Temporal
spaces are degree-q Legendre on each time slab, likewise orthonormal.

The trace and gradient inverse constants

    ||V||_{dT} <= C_trace p h_T^{-1/2} ||V||_T,
    ||grad V||_T <= C_grad p^2 h_T^{-1} ||V||_T,

are computed as generalized eigenvalues of boundary/stiffness forms against
the mass form, per cell shape, so they are certified for every cell of the
meshes this package builds.  The temporal constants (q+1) k^{-1/2} (end-point
trace) and sqrt(12) (q+1)^2 k^{-1} (derivative) are used symbolically; the
trace one is sharp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mesh import Element, Mesh

# relative padding on eigenvalue-derived constants so the certified
# inequalities hold without rounding violations
_EIG_PAD = 1.0 + 1e-12


def legendre_table(x: np.ndarray, deg: int, nders: int = 1) -> np.ndarray:
    """Values and derivatives of orthonormal Legendre polynomials on [-1, 1].

    Returns an array of shape (nders + 1, len(x), deg + 1); entry [d, :, i]
    is the d-th derivative of L_i normalized so that int_{-1}^{1} L_i^2 = 1.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros((nders + 1, x.size, deg + 1))
    p = np.zeros((nders + 1, x.size, deg + 1))
    p[0, :, 0] = 1.0
    if deg >= 1:
        p[0, :, 1] = x
        if nders >= 1:
            p[1, :, 1] = 1.0
    for n in range(1, deg):
        a = (2 * n + 1) / (n + 1)
        b = n / (n + 1)
        p[0, :, n + 1] = a * x * p[0, :, n] - b * p[0, :, n - 1]
        for d in range(1, nders + 1):
            p[d, :, n + 1] = a * (x * p[d, :, n] + d * p[d - 1, :, n]) - b * p[d, :, n - 1]
    norms = np.sqrt((2 * np.arange(deg + 1) + 1) / 2.0)
    out[:] = p * norms
    return out


@dataclass(frozen=True)
class QuadRule:
    """Gauss-Legendre rule on [-1, 1], exact for degree <= 2n - 1."""

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss(cls, n: int) -> "QuadRule":
        pts, wts = np.polynomial.legendre.leggauss(n)
        return cls(pts, wts)

    def mapped(self, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        return mid + half * self.points, half * self.weights


@dataclass(frozen=True)
class QuadSet:
    """Cell/face/time rules sized for the bilinear forms of degrees (p, q).

    The volume integrands contain the weight x times degree-2p polynomials,
    so p + 1 Gauss points per axis (exact to 2p + 1) suffice; same for faces
    and for time with q in place of p.
    """

    cell_1d: QuadRule
    face: QuadRule
    time: QuadRule

    def cell_points(self, elem: Element) -> tuple[np.ndarray, np.ndarray]:
        """Tensor rule on the physical cell: points (n, 2) and weights (n,)."""
        gx, wx = self.cell_1d.mapped(elem.x0, elem.x1)
        gy, wy = self.cell_1d.mapped(elem.y0, elem.y1)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        W = np.outer(wx, wy)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return pts, W.ravel()


def make_quadrature(p: int, q: int, n_extra: int = 0) -> QuadSet:
    n_sp = p + 1 + n_extra
    n_t = q + 1 + n_extra
    return QuadSet(QuadRule.gauss(n_sp), QuadRule.gauss(n_sp), QuadRule.gauss(n_t))


def total_degree_pairs(p: int) -> list[tuple[int, int]]:
    return [(i, d - i) for d in range(p + 1) for i in range(d + 1)]


class DgSpace:
    """Discontinuous total-degree-p space over a rectangular mesh.

    Per element the basis is phi_{ij}(x, y) = c L_i(xi(x)) L_j(eta(y)) with
    i + j <= p, orthonormalized on the physical cell; degrees of freedom are
    blocked per element in mesh order.
    """

    def __init__(self, mesh: Mesh, p: int):
        if p < 0:
            raise ValueError("polynomial degree must be non-negative")
        self.mesh = mesh
        self.p = p
        self.pairs = total_degree_pairs(p)
        self.n_loc = len(self.pairs)  # (p+1)(p+2)/2
        self.n_dofs = self.n_loc * mesh.n_elements
        self._ij = np.array(self.pairs)

    def elem_slice(self, e: int) -> slice:
        return slice(e * self.n_loc, (e + 1) * self.n_loc)

    def eval_basis(self, elem: Element, points: np.ndarray, nders: int = 1):
        """Values and derivatives of the local basis at physical points.

        Returns (vals, grads) for nders = 1 and (vals, grads, hess) for
        nders = 2, with shapes (npts, n_loc), (npts, n_loc, 2) and
        (npts, n_loc, 3) where the last axis is (dxx, dxy, dyy).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        sx = 2.0 / elem.hx
        sy = 2.0 / elem.hy
        xi = (pts[:, 0] - 0.5 * (elem.x0 + elem.x1)) * sx
        eta = (pts[:, 1] - 0.5 * (elem.y0 + elem.y1)) * sy
        tx = legendre_table(xi, self.p, nders)
        ty = legendre_table(eta, self.p, nders)
        c = 2.0 / np.sqrt(elem.hx * elem.hy)
        i, j = self._ij[:, 0], self._ij[:, 1]
        vals = c * tx[0][:, i] * ty[0][:, j]
        grads = np.empty((pts.shape[0], self.n_loc, 2))
        grads[:, :, 0] = c * sx * tx[1][:, i] * ty[0][:, j]
        grads[:, :, 1] = c * sy * tx[0][:, i] * ty[1][:, j]
        if nders == 1:
            return vals, grads
        hess = np.empty((pts.shape[0], self.n_loc, 3))
        hess[:, :, 0] = c * sx * sx * tx[2][:, i] * ty[0][:, j]
        hess[:, :, 1] = c * sx * sy * tx[1][:, i] * ty[1][:, j]
        hess[:, :, 2] = c * sy * sy * tx[0][:, i] * ty[2][:, j]
        return vals, grads, hess

    def evaluate(self, elem: Element, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
        vals, _ = self.eval_basis(elem, points)
        return vals @ coeffs


class SlabSpace:
    """Degree-q Legendre basis on the time slab (t0, t1], orthonormal in L2."""

    def __init__(self, q: int, t0: float, t1: float):
        if q < 0:
            raise ValueError("temporal degree must be non-negative")
        if not t1 > t0:
            raise ValueError("slab must have positive length")
        self.q = q
        self.t0 = t0
        self.t1 = t1
        self.k = t1 - t0
        self._build_matrices()

    def eval(self, t: np.ndarray, nders: int = 1) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = 2.0 / self.k
        xi = (t - 0.5 * (self.t0 + self.t1)) * s
        tab = legendre_table(xi, self.q, nders)
        scale = np.sqrt(s) * (s ** np.arange(nders + 1))[:, None, None]
        return tab * scale

    def _build_matrices(self):
        q, k = self.q, self.k
        rule = QuadRule.gauss(q + 1)
        ts, ws = rule.mapped(self.t0, self.t1)
        tab = self.eval(ts, nders=1)
        v, dv = tab[0], tab[1]
        # D[a, b] = int psi_a psi_b' dt;  K[a, b] = int psi_a' psi_b' dt
        self.deriv_pairing = np.einsum("g,ga,gb->ab", ws, v, dv)
        self.stiffness = np.einsum("g,ga,gb->ab", ws, dv, dv)
        end = self.eval(np.array([self.t0, self.t1]))[0]
        self.at_start = end[0]  # psi(t0^+)
        self.at_end = end[1]  # psi(t1^-)

    @property
    def n_modes(self) -> int:
        return self.q + 1

    @property
    def trace_constant_sq(self) -> float:
        """Sharp end-point trace bound: |V(t1^-)|^2 <= (q+1)^2 k^{-1} ||V||^2."""
        return (self.q + 1) ** 2 / self.k

    @property
    def deriv_constant_sq(self) -> float:
        """Derivative bound ||V'||^2 <= 12 (q+1)^4 k^{-2} ||V||^2 (not sharp)."""
        return 12.0 * (self.q + 1) ** 4 / self.k**2


@dataclass(frozen=True)
class InverseConstants:
    """Certified constants of the hp trace/gradient inverse inequalities."""

    p: int
    c_trace: float
    c_grad: float
    test_mode: bool = False

    def as_row(self) -> tuple[int, float, float]:
        return (self.p, self.c_trace, self.c_grad)


def _cell_forms(space: DgSpace, elem: Element, quad: QuadSet):
    """Boundary-mass and stiffness forms of the local basis on one cell."""
    n = space.n_loc
    btrace = np.zeros((n, n))
    for lo, hi, fixed, horizontal in (
        (elem.x0, elem.x1, elem.y0, True),
        (elem.x0, elem.x1, elem.y1, True),
        (elem.y0, elem.y1, elem.x0, False),
        (elem.y0, elem.y1, elem.x1, False),
    ):
        g, w = quad.face.mapped(lo, hi)
        pts = np.column_stack([g, np.full_like(g, fixed)]) if horizontal else np.column_stack(
            [np.full_like(g, fixed), g]
        )
        vals, _ = space.eval_basis(elem, pts)
        btrace += np.einsum("g,gi,gj->ij", w, vals, vals)
    pts, w = quad.cell_points(elem)
    _, grads = space.eval_basis(elem, pts)
    stiff = np.einsum("g,gid,gjd->ij", w, grads, grads)
    return btrace, stiff


def compute_inverse_constants(
    mesh: Mesh, p: int, test_mode: bool = False
) -> InverseConstants:
    """Largest trace/stiffness Rayleigh quotients over the mesh's cell shapes.

    The constants are scale-invariant, so one cell per distinct aspect ratio
    is enough; with `test_mode` both constants are overridden to 1 for
    deterministic coefficient tests.
    """
    if test_mode:
        return InverseConstants(p, 1.0, 1.0, test_mode=True)
    quad = make_quadrature(max(p, 1), 0)
    space = DgSpace(mesh, p)
    seen: set[tuple[float, ...]] = set()
    c_tr = 0.0
    c_gr = 0.0
    peff = max(p, 1)
    for elem in mesh.elements:
        shape = (round(elem.hx / elem.diameter, 12), round(elem.hy / elem.diameter, 12))
        if shape in seen:
            continue
        seen.add(shape)
        btrace, stiff = _cell_forms(space, elem, quad)
        # the local mass matrix is the identity (orthonormal basis)
        lam_tr = scipy.linalg.eigvalsh(btrace)[-1]
        c_tr = max(c_tr, np.sqrt(lam_tr * elem.diameter) / peff)
        if p >= 1:
            lam_gr = scipy.linalg.eigvalsh(stiff)[-1]
            c_gr = max(c_gr, np.sqrt(lam_gr) * elem.diameter / p**2)
    return InverseConstants(p, c_tr * _EIG_PAD, c_gr * _EIG_PAD)


def constants_table(mesh: Mesh, degrees, test_mode: bool = False) -> list[InverseConstants]:
    return [compute_inverse_constants(mesh, p, test_mode) for p in degrees]
