"""Penalty, stabilisation and hypocoercivity coefficients.

All scalar coefficients of the scheme live here: the interior penalty sigma
(per face and per element), the streamline weight tau (spatial and space-time
versions), the scale delta that sizes the hypocoercivity matrix

    A = [[alpha, beta], [beta, gamma]],
    alpha = 1/(8 delta), beta = 1/(48 delta^2), gamma = 10/(48^2 delta^3),

and elementary eigenvalue brackets for symmetric 2x2 matrices.

tau and delta are exact Young balances of the flux estimates used in the
stability lower bounds: every inverse-inequality charge they must absorb is
matched term by term, so the matrix-level coercivity checks hold for any
certified constants C_trace, C_grad.  Two terms are implemented slightly
stronger than their usual statement, which is calibrated to C_trace =
C_grad = 1 and drift magnitudes >= 1:

  * the first branch of delta is 4 C_trace^2 + C_grad^2 / (8 C_trace^2); the
    "4 +" variant undersizes delta once C_trace > 1;
  * drift-magnitude factors enter as max(x, x^2), since the boundary-flux
    charges are linear in the sup of |x n2| while the quadratic form is what
    a square factor would cover only for x >= 1.

Both coincide with the plain formulas in test mode (C_trace = C_grad = 1) on
unit-scale drift.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .mesh import FaceClass, Mesh, N_FACES_PER_ELEMENT
from .polyspace import InverseConstants


class CoefficientDomainError(ValueError):
    pass


def _xfac(x_n2: float) -> float:
    # covers the linear-in-x flux charges also when sup|x n2| < 1
    return max(x_n2, x_n2 * x_n2)


def sigma_face(n1_face: float, p: int, h_inv_max: float, constants: InverseConstants,
               n_faces: int = N_FACES_PER_ELEMENT) -> float:
    """Interior-penalty weight 64 N (C_trace n1 p)^2 max(1/h_T) of one face."""
    return 64.0 * n_faces * (constants.c_trace * n1_face * p) ** 2 * h_inv_max


def tau_semi(h: float, p: int, sigma_elem: float, x_n2: float,
             constants: InverseConstants) -> float:
    """Streamline weight of one element; scales like h^2 / p^4."""
    if p < 1:
        raise CoefficientDomainError("tau requires p >= 1")
    ct, cg = constants.c_trace, constants.c_grad
    denom = (
        65.0 * cg**2 / 6.0
        + 3.0 * sigma_elem**2 * h**2 / (64.0 * p**4)
        + 64.0 * ct**2 * _xfac(x_n2) * h / (3.0 * p**2)
    )
    return (h**2 / p**4) / denom


def tau_full(tau_elem: float, k: float, q: int) -> float:
    """Space-time streamline weight min{tau_T, k / (64 (q+1)^2)}."""
    if k <= 0.0:
        raise CoefficientDomainError("timestep must be positive")
    return min(tau_elem, k / (64.0 * (q + 1) ** 2))


def _r_term(h: float, p: int, tau: float, x_n2: float, n1_elem: float, c_rho: float,
            constants: InverseConstants, k: float | None, q: int | None,
            n_faces: int = N_FACES_PER_ELEMENT) -> float:
    ct, cg = constants.c_trace, constants.c_grad
    r = (
        2.0 * h**2 / (p**4 * tau)
        + 1040.0 * (n_faces * c_rho * cg) ** 2 * n1_elem**4
        + 8.0 * (cg / ct) ** 2 * _xfac(x_n2) * h / p**2
    )
    if k is not None:
        r += 2.0 * h**2 * (q + 1) ** 2 / (p**4 * k)
    return r


def delta_elem(h: float, p: int, tau: float, x_n2: float, n1_elem: float, c_rho: float,
               constants: InverseConstants, k: float | None = None,
               q: int | None = None) -> float:
    """Hypocoercivity scale of one element (>= 1, growing like p^4 / h^2).

    With a timestep k and temporal degree q the space-time variant is
    produced, whose extra term forces alpha < h sqrt(k) / (C^2 p^2 (q+1)).
    """
    if p < 1:
        raise CoefficientDomainError("delta requires p >= 1")
    ct, cg = constants.c_trace, constants.c_grad
    r = _r_term(h, p, tau, x_n2, n1_elem, c_rho, constants, k, q)
    branch = max(
        4.0 * ct**2 + cg**2 / (8.0 * ct**2),
        _xfac(x_n2) * h / p**2,
        np.sqrt(r),
    )
    return max(1.0, ct**2 * p**4 / h**2 * branch)


def abc_from_delta(delta: float):
    """(alpha, beta, gamma, A) for a given scale delta >= 1."""
    if delta < 1.0:
        raise CoefficientDomainError("delta must be >= 1")
    alpha = 1.0 / (8.0 * delta)
    beta = 1.0 / (48.0 * delta**2)
    gamma = 10.0 / (48.0**2 * delta**3)
    a_mat = np.array([[alpha, beta], [beta, gamma]])
    return alpha, beta, gamma, a_mat


@dataclass(frozen=True)
class SpectralBounds2x2:
    """Eigenvalue bracket (ac - b^2)/(a + |b|) <= lam_min <= lam_max <= a + |b|.

    Valid for symmetric positive-semidefinite [[a, b], [b, c]] with a >= c,
    in which case also a + |b| <= 2a.  The matrices A(delta) satisfy
    alpha > beta > gamma, so the bracket applies element-wise.
    """

    a: float
    b: float
    c: float

    @property
    def lower(self) -> float:
        denom = self.a + abs(self.b)
        if denom == 0.0:
            return 0.0
        return (self.a * self.c - self.b**2) / denom

    @property
    def upper(self) -> float:
        return self.a + abs(self.b)


def spectral_bounds(a: float, b: float, c: float) -> SpectralBounds2x2:
    scale = max(abs(a), abs(b), abs(c), 1.0)
    if a < 0.0 or c < 0.0 or a * c - b * b < -1e-14 * scale**2:
        raise CoefficientDomainError("matrix must be positive semidefinite with a, c >= 0")
    if a < c - 1e-14 * scale:
        raise CoefficientDomainError("bracket requires a >= c")
    return SpectralBounds2x2(a, b, c)


@dataclass
class CoeffSet:
    """Per-element (or per element-slab) coefficient bundle.

    `tau` and `delta` are the spatial values when `k` is None and the
    space-time values tau_{T,n}, delta_{T,n} otherwise.
    """

    p: int
    constants: InverseConstants
    sigma_f: np.ndarray  # per face; zero on boundary and on n1 = 0 faces
    sigma_t: np.ndarray  # per element: max over its faces
    tau: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    a_mats: np.ndarray  # (n_elements, 2, 2)
    k: float | None = None
    q: int | None = None

    @property
    def fully_discrete(self) -> bool:
        return self.k is not None

    def to_csv(self, mesh: Mesh) -> str:
        buf = io.StringIO()
        buf.write("T_index,h_T,sigma_T,tau,delta,alpha,beta,gamma\n")
        for e in mesh.elements:
            i = e.index
            row = (i, e.diameter, self.sigma_t[i], self.tau[i], self.delta[i],
                   self.alpha[i], self.beta[i], self.gamma[i])
            buf.write("%d," % row[0] + ",".join("%.17g" % v for v in row[1:]) + "\n")
        return buf.getvalue()


def build_coeffs(mesh: Mesh, fc: FaceClass, p: int, constants: InverseConstants,
                 k: float | None = None, q: int | None = None) -> CoeffSet:
    """Assemble the full coefficient set for a mesh and degree.

    p = 0 is allowed for plain evolution runs only: sigma and tau are zero
    and delta is pinned to 1, since the coefficient formulas divide by p^4.
    """
    n_el = mesh.n_elements
    c_rho = mesh.c_rho
    sigma_f = np.zeros(mesh.n_faces)
    for f in mesh.interior_faces:
        n1 = fc.n1_face[f.index]
        if n1 == 0.0:
            continue
        h_inv = max(1.0 / mesh.elements[f.owner].diameter,
                    1.0 / mesh.elements[f.neighbour].diameter)
        sigma_f[f.index] = sigma_face(n1, p, h_inv, constants)
    sigma_t = np.zeros(n_el)
    for e in range(n_el):
        interior = [i for i in mesh.elem_faces[e] if not mesh.faces[i].is_boundary]
        if interior:
            sigma_t[e] = max(sigma_f[i] for i in interior)

    tau = np.zeros(n_el)
    delta = np.ones(n_el)
    if p >= 1:
        for e in range(n_el):
            h = mesh.elements[e].diameter
            x_n2 = fc.x_n2_elem[e]
            tau[e] = tau_semi(h, p, sigma_t[e], x_n2, constants)
            if k is not None:
                tau[e] = tau_full(tau[e], k, q)
            delta[e] = delta_elem(h, p, tau[e], x_n2, fc.n1_max_elem[e], c_rho,
                                  constants, k, q)

    alpha = np.empty(n_el)
    beta = np.empty(n_el)
    gamma = np.empty(n_el)
    a_mats = np.empty((n_el, 2, 2))
    for e in range(n_el):
        alpha[e], beta[e], gamma[e], a_mats[e] = abc_from_delta(delta[e])
    return CoeffSet(p, constants, sigma_f, sigma_t, tau, delta,
                    alpha, beta, gamma, a_mats, k=k, q=q)
