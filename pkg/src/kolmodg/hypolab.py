"""Matrix-level certification of the stability theory and decay experiments.

Every inequality the scheme's long-time analysis rests on is checked here as
a statement about finite symmetric matrices: exact algebraic identities at
rounding level, coercivity lower bounds as smallest eigenvalues of difference
forms, the mesh-dependent spectral gap as a generalized eigenvalue, and the
inf-sup constant as a generalized singular value.  Decay runs then compare
the marched solution against the per-step and cumulative contraction bounds
the gap implies.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .assembly import (SlabForms, SpaceTimeForms, SpatialForms,
                       slab_bn_matrix, slab_coercivity_rhs_gram)
from .coeffs import CoeffSet, build_coeffs, spectral_bounds
from .march import DecayTrace, TimeGrid, march, project_initial
from .mesh import Domain, FaceClass, Mesh, build_rect_mesh, classify
from .polyspace import (DgSpace, InverseConstants, SlabSpace,
                        compute_inverse_constants, make_quadrature)

INFSUP_DOF_GUARD = 3000


@dataclass
class Setup:
    """One assembled discretisation instance; the lab's working unit."""

    domain: Domain
    mesh: Mesh
    fc: FaceClass
    space: DgSpace
    constants: InverseConstants
    coeffs: CoeffSet
    forms: SpatialForms

    @classmethod
    def create(cls, domain: Domain, nx: int, ny: int, p: int,
               test_mode: bool = False, k: float | None = None,
               q: int | None = None) -> "Setup":
        mesh = build_rect_mesh(domain, nx, ny)
        fc = classify(mesh)
        constants = compute_inverse_constants(mesh, p, test_mode)
        coeffs = build_coeffs(mesh, fc, p, constants, k=k, q=q)
        space = DgSpace(mesh, p)
        return cls(domain, mesh, fc, space, constants, coeffs,
                   SpatialForms(mesh, fc, space, coeffs))


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _min_eig(m: np.ndarray) -> float:
    return float(scipy.linalg.eigh(m, eigvals_only=True, subset_by_index=[0, 0])[0])


def _margin(lhs: np.ndarray, rhs: np.ndarray) -> tuple[float, float]:
    """(lambda_min of sym(lhs - rhs), Frobenius matrix scale)."""
    scale = max(np.linalg.norm(lhs, "fro"), np.linalg.norm(rhs, "fro"), 1e-300)
    return _min_eig(_sym(lhs - rhs)), scale


# -- exact identities ---------------------------------------------------------


def verify_uw_identity(forms: SpatialForms, n_samples: int = 100,
                       rng: np.random.Generator | None = None) -> float:
    """Max relative residual of the upwind integration-by-parts identity.

    sum_T (x U_y, U)_T - <x n2 [U]_upw, U^+>_inflow - <x n2 U^+, U^+>_inflow bdry
        = 1/2 ||U||_uw^2 .
    """
    rng = rng or np.random.default_rng(0)
    lhs_m = forms.upwind_identity_lhs
    rhs_m = forms.uw_gram
    worst = 0.0
    for _ in range(n_samples):
        u = rng.standard_normal(forms.space.n_dofs)
        lhs = float(u @ (lhs_m @ u))
        rhs = 0.5 * float(u @ (rhs_m @ u))
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-30))
    return worst


def verify_slab_energy_identity(q: int, k: float, n_space: int = 7,
                                n_samples: int = 100,
                                rng: np.random.Generator | None = None) -> float:
    """Max relative residual of the time-jump energy identity on one slab.

    int <U_t, U> dt + <[U]_{n-1}, U(t_{n-1}^+)> =
        1/2 (||[U]_{n-1}||^2 + ||U(t_n^-)||^2 - ||U(t_{n-1}^-)||^2).
    """
    rng = rng or np.random.default_rng(0)
    slab = SlabSpace(q, 0.0, k)
    d_t = slab.deriv_pairing
    w0, w1 = slab.at_start, slab.at_end
    worst = 0.0
    for _ in range(n_samples):
        u = rng.standard_normal((q + 1, n_space))
        u_prev = rng.standard_normal(n_space)
        start = w0 @ u
        end = w1 @ u
        jump = start - u_prev
        lhs = float(np.einsum("ai,ab,bi->", u, d_t, u)) + float(jump @ start)
        rhs = 0.5 * (jump @ jump + end @ end - u_prev @ u_prev)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), abs(lhs), 1e-30))
    return worst


# -- lemma-level coercivity certificates ---------------------------------------


def check_lemma_energy(forms: SpatialForms) -> tuple[float, float]:
    """a_dG(U, U) >= 7/8 ||U||_dG^2 + 1/16 ||U||_uw^2 as an eigen margin."""
    lhs = forms.a_dg.toarray()
    rhs = (7.0 / 8.0) * forms.g_dg.toarray() + (1.0 / 16.0) * forms.uw_gram.toarray()
    return _margin(lhs, rhs)


def _joint_streamline_gram(forms: SpatialForms) -> np.ndarray:
    """||sqrt(tau)(U_t + x U_y)||^2 over joint (u, w = U_t coefficients)."""
    d = forms.space.n_dofs
    s = forms.drift.toarray()
    dtau = forms.tau_diag.toarray()
    cmap = np.hstack([s, np.eye(d)])  # (S u + w)
    return cmap.T @ dtau @ cmap


def check_lemma_streamline(forms: SpatialForms) -> tuple[float, float]:
    """Stability against V_2 = tau (x U_y + U_t), joint in (U, U_t)."""
    d = forms.space.n_dofs
    a = forms.a_dg.toarray()
    s = forms.drift.toarray()
    dtau = forms.tau_diag.toarray()
    v2 = np.hstack([dtau @ s, dtau])  # (2d -> d) map of V_2
    lhs = np.zeros((2 * d, 2 * d))
    lhs[d:, :] += v2  # <U_t, V_2>
    lhs += v2.T @ np.hstack([a, np.zeros((d, d))])  # a_dG(U, V_2)
    rhs = 0.25 * _joint_streamline_gram(forms)
    rhs[:d, :d] -= (1.0 / 16.0) * forms.g_dg.toarray()
    return _margin(lhs, rhs)


def check_lemma_hypo(forms: SpatialForms) -> tuple[float, float]:
    """Stability against V_3 = -div(A grad U), joint in (U, U_t)."""
    d = forms.space.n_dofs
    a = forms.a_dg.toarray()
    h = forms.div_a_map.toarray()
    lhs = np.zeros((2 * d, 2 * d))
    lhs[d:, :d] += h  # <U_t, V_3>
    lhs[:d, :d] += h.T @ a  # a_dG(U, V_3)
    alpha2 = np.repeat(forms.coeffs.alpha**2, forms.space.n_loc)
    dy = forms.dy.toarray()
    rhs = np.zeros((2 * d, 2 * d))
    rhs[d:, :d] += forms.grad_a_gram.toarray()  # 1/2 d/dt ||sqrt(A) grad U||^2
    rhs[:d, :d] += 0.5 * (forms.dx.T @ forms.grad_a_gram @ forms.dx).toarray()
    rhs[:d, :d] += 0.5 * forms.outflow_gram.toarray()
    rhs[:d, :d] += (1.0 / 6.0) * dy.T @ (alpha2[:, None] * dy)
    rhs[:d, :d] -= (5.0 / 8.0) * forms.stiff_x.toarray()
    rhs[:d, :d] -= (1.0 / 16.0) * forms.g_dg.toarray()
    rhs -= (1.0 / 16.0) * _joint_streamline_gram(forms)
    return _margin(lhs, rhs)


def check_semi_positivity(forms: SpatialForms) -> tuple[float, float]:
    """Joint (U, U_t) eigen margin of the evolution positivity bound.

    <U_t, V> + a_dG(U, V) >= 1/2 d/dt ||U||_{A,h}^2 + 1/4 |||U|||^2
    with V = U + tau (x U_y + U_t) - div(A grad U); the time derivative
    enters as the A-pairing of the two coefficient slots.
    """
    d = forms.space.n_dofs
    a = forms.a_dg.toarray()
    m1 = forms.test_map_u.toarray()
    m2 = forms.tau_diag.toarray()
    lhs = np.zeros((2 * d, 2 * d))
    lhs[:d, :d] = m1.T @ a
    lhs[d:, :d] = m1 + m2.T @ a
    lhs[d:, d:] = m2
    rhs = np.zeros((2 * d, 2 * d))
    rhs[d:, :d] = forms.g_ah.toarray()
    rhs[:d, :d] += 0.25 * forms.g_enh_nostream.toarray()
    rhs += 0.125 * _joint_streamline_gram(forms)
    return _margin(lhs, rhs)


def check_fulldiscrete_coercivity(forms: SpatialForms, q: int, k: float) -> tuple[float, float]:
    """Joint (slab, previous-state) eigen margin of the slab lower bound."""
    sf = SlabForms(forms, SlabSpace(q, 0.0, k))
    n, d = sf.n, sf.n_space
    b = slab_bn_matrix(sf)
    lhs = np.zeros((n + d, n + d))
    lhs[:n, :] = sf.test_map.toarray().T @ b
    rhs = slab_coercivity_rhs_gram(sf)
    return _margin(lhs, rhs)


# -- spectral gap --------------------------------------------------------------


@dataclass
class GapEstimate:
    kappa_num: float
    kappa_formula: float
    c_bpf_num: float
    delta_max: float
    hbar_min: float
    p: int

    @property
    def gap_branch(self) -> str:
        a = 1.0 / (228.0 * self.delta_max**2)
        b = self.hbar_min**2 / (1024.0 * self.p**2)
        return "delta" if a <= b else "mesh"


def estimate_kappa(forms: SpatialForms) -> GapEstimate:
    """Numerical and formula spectral gap of |||.|||^2 against ||.||_{A,h}^2.

    kappa_num is the smallest generalized eigenvalue; the formula value uses
    the numerically sharp broken-Poincare constant of the same mesh/space.
    """
    g_enh = forms.g_enh.toarray()
    g_ah = forms.g_ah.toarray()
    kappa_num = float(scipy.linalg.eigh(g_enh, g_ah, eigvals_only=True,
                                        subset_by_index=[0, 0])[0])
    # the broken-Poincare Gram is positive definite (boundary jump terms),
    # and the mass matrix is the identity, so C_bPF = 1 / lambda_min(G_bp)
    lam_bp = _min_eig(forms.g_bp.toarray())
    c_bpf = 1.0 / lam_bp
    delta_max = float(forms.coeffs.delta.max())
    hbar = forms.mesh.hbar_min
    p = forms.space.p
    kappa_formula = (1.0 / (2.0 * c_bpf)) * min(
        1.0 / (228.0 * delta_max**2), hbar**2 / (1024.0 * p**2)
    )
    return GapEstimate(kappa_num, kappa_formula, c_bpf, delta_max, hbar, p)


def check_a_spectrum_brackets(coeffs: CoeffSet) -> float:
    """Worst bracket violation of the 2x2 eigenvalue bounds over all A(delta_T)."""
    worst = 0.0
    for a_mat in coeffs.a_mats:
        a, b, c = a_mat[0, 0], a_mat[0, 1], a_mat[1, 1]
        sb = spectral_bounds(a, b, c)
        lam = np.linalg.eigvalsh(a_mat)
        worst = max(worst, sb.lower - lam[0], lam[1] - sb.upper, sb.upper - 2 * a)
    return worst


# -- inf-sup -------------------------------------------------------------------


@dataclass
class StabilityReport:
    lambda_h: float
    max_test_ratio: float  # max |||V(U)|||_st / |||U|||_st over random U
    min_onesided: float  # min B(U, V(U)) / |||U|||_st^2 over random U
    n_dofs: int

    @property
    def certified_floor(self) -> float:
        """Lower bound on lambda_h implied by the two one-sided certificates."""
        return self.min_onesided / self.max_test_ratio


def compute_infsup(forms: SpatialForms, q: int, k: float, n_slabs: int,
                   n_samples: int = 100,
                   rng: np.random.Generator | None = None) -> StabilityReport:
    """Inf-sup constant of the space-time form in the enhanced norm geometry.

    lambda_h = sqrt of the smallest generalized eigenvalue of B^T G^{-1} B
    against G; dense, so refuse instances beyond the dof guard.
    """
    rng = rng or np.random.default_rng(0)
    st = SpaceTimeForms(forms, q, k, n_slabs)
    if st.n > INFSUP_DOF_GUARD:
        raise ValueError(f"instance has {st.n} dofs, beyond the dense guard "
                         f"{INFSUP_DOF_GUARD}")
    b, g, mt = st.b_st, st.g_st, st.m_test
    g_inv = scipy.linalg.inv(g)
    lam = scipy.linalg.eigh(b.T @ g_inv @ b, g, eigvals_only=True,
                            subset_by_index=[0, 0])[0]
    lambda_h = float(np.sqrt(max(lam, 0.0)))
    max_ratio = 0.0
    min_onesided = np.inf
    for _ in range(n_samples):
        u = rng.standard_normal(st.n)
        v = mt @ u
        gu = float(u @ g @ u)
        gv = float(v @ g @ v)
        max_ratio = max(max_ratio, np.sqrt(gv / gu))
        min_onesided = min(min_onesided, float(v @ b @ u) / gu)
    return StabilityReport(lambda_h, max_ratio, float(min_onesided), st.n)


# -- decay experiment ----------------------------------------------------------


@dataclass
class DecayCheck:
    name: str
    margin: float
    threshold: float

    @property
    def verdict(self) -> str:
        return "PASS" if self.margin >= self.threshold else "FAIL"


@dataclass
class DecayReport:
    trace: "DecayTrace"
    kappa_num: float
    checks: list[DecayCheck] = field(default_factory=list)
    step_factors_a: list[float] = field(default_factory=list)
    step_factors_l2: list[float] = field(default_factory=list)
    bound_factor: float = 1.0
    exp_limit: float = 1.0

    @property
    def all_pass(self) -> bool:
        return all(c.verdict == "PASS" for c in self.checks)


def decay_experiment(forms: SpatialForms, q: int, k: float, n_steps: int,
                     u0, tol: float = 1e-10) -> DecayReport:
    """March with f = 0 and certify every step against the contraction bound.

    Checks, each reported as a signed margin (>= 0 passes):
      * per-step ||U(t_n^-)||_A^2 <= (1 + kappa k / (2 (q+1)^2))^{-1} times
        the previous value (the sharp numerical gap feeds the factor);
      * cumulative product bound at t_f;
      * monotonicity of the A-norm trace;
      * per-step slab dissipation  ||U(t_n)||_A^2 + (kappa/2) int ||U||_A^2
        <= ||U(t_{n-1})||_A^2.
    The plain L2 trace is recorded alongside as the no-gap baseline (its
    guaranteed factor is 1).
    """
    gap = estimate_kappa(forms)
    kappa = gap.kappa_num
    u0_coeffs = project_initial(forms, u0)
    grid = TimeGrid.uniform(k, n_steps)
    result = march(forms, grid, q, u0_coeffs, f=None, kappa=kappa, keep_states=True)
    tr = result.trace
    a2 = np.asarray(tr.a_norm) ** 2
    l2 = np.asarray(tr.l2_norm) ** 2
    factor = 1.0 / (1.0 + kappa * k / (2.0 * (q + 1) ** 2))
    checks = [
        DecayCheck("per_step_contraction",
                   float(np.min(factor * a2[:-1] - a2[1:])) if n_steps else 0.0, -tol),
        DecayCheck("cumulative_product_bound",
                   float(tr.bound_product[-1] * a2[0] - a2[-1]), -tol),
        DecayCheck("a_norm_monotone", float(np.min(a2[:-1] - a2[1:])), -tol),
        DecayCheck("l2_norm_monotone", float(np.min(l2[:-1] - l2[1:])), -tol),
    ]
    # slab dissipation (dG-energy form): int ||U||_A^2 dt per slab
    sf = SlabForms(forms, SlabSpace(q, 0.0, k))
    worst = np.inf
    for n, state in enumerate(result.states, start=1):
        ia2 = float(state.coeffs @ (sf.g_ah_slab @ state.coeffs))
        worst = min(worst, a2[n - 1] - a2[n] - 0.5 * kappa * ia2)
    checks.append(DecayCheck("slab_dissipation", float(worst), -tol))
    rep = DecayReport(tr, kappa, checks)
    with np.errstate(divide="ignore", invalid="ignore"):
        rep.step_factors_a = list(np.where(a2[:-1] > 0, a2[1:] / a2[:-1], 1.0))
        rep.step_factors_l2 = list(np.where(l2[:-1] > 0, l2[1:] / l2[:-1], 1.0))
    rep.bound_factor = factor
    rep.exp_limit = float(np.exp(-kappa * grid.t_final / (4.0 * (q + 1) ** 2)))
    return rep


# -- manufactured convergence ---------------------------------------------------


def kolmogorov_residual_forcing(u, u_t, u_xx, u_y):
    """f = u_t - u_xx + x u_y from closed-form partials of a manufactured u."""

    def f(x, y, t):
        return u_t(x, y, t) - u_xx(x, y, t) + x * u_y(x, y, t)

    return f


def manufactured_solution():
    """u = e^{-t} sin^2(pi x) sin(pi y): zero inflow trace, zero n1 u_x on
    the vertical boundary of the unit square."""

    def u(x, y, t):
        return np.exp(-t) * np.sin(np.pi * x) ** 2 * np.sin(np.pi * y)

    def u_t(x, y, t):
        return -u(x, y, t)

    def u_xx(x, y, t):
        return 2 * np.pi**2 * np.exp(-t) * np.cos(2 * np.pi * x) * np.sin(np.pi * y)

    def u_y(x, y, t):
        return np.pi * np.exp(-t) * np.sin(np.pi * x) ** 2 * np.cos(np.pi * y)

    return u, kolmogorov_residual_forcing(u, u_t, u_xx, u_y)


@dataclass
class ConvergenceReport:
    nx: list[int]
    h: list[float]
    errors: list[float]
    eocs: list[float]

    @property
    def monotone(self) -> bool:
        return all(e2 < e1 for e1, e2 in zip(self.errors, self.errors[1:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("level,nx,h,L2_error,eoc\n")
        for i, (nx, h, e) in enumerate(zip(self.nx, self.h, self.errors)):
            eoc = self.eocs[i - 1] if i > 0 else float("nan")
            buf.write("%d,%d,%s\n" % (i, nx,
                                      ",".join("%.17g" % v for v in (h, e, eoc))))
        return buf.getvalue()


def l2_error_at(forms: SpatialForms, state, t: float, u_exact) -> float:
    """Quadrature L2 distance between the slab polynomial at time t and u."""
    slab = SlabSpace(state.q, state.t0, state.t1)
    psi = slab.eval(np.array([t]))[0][0]
    spat = state.coeffs.reshape(state.q + 1, -1).T @ psi
    quad = make_quadrature(forms.space.p, 0, n_extra=10)
    err2 = 0.0
    for elem in forms.mesh.elements:
        pts, w = quad.cell_points(elem)
        uh = forms.space.eval_basis(elem, pts)[0] @ spat[forms.space.elem_slice(elem.index)]
        err2 += float(w @ (uh - u_exact(pts[:, 0], pts[:, 1], t)) ** 2)
    return float(np.sqrt(err2))


def manufactured_convergence(levels=((2, 4), (4, 8), (8, 16)), p: int = 1, q: int = 1,
                             t_f: float = 0.4, test_mode: bool = False,
                             domain: Domain | None = None) -> ConvergenceReport:
    """Refinement study against the manufactured solution; (nx, n_steps) pairs."""
    domain = domain or Domain(0.0, 1.0, 0.0, 1.0)
    u_exact, f = manufactured_solution()
    nxs, hs, errs = [], [], []
    for nx, n_steps in levels:
        setup = Setup.create(domain, nx, nx, p, test_mode=test_mode,
                             k=t_f / n_steps, q=q)
        u0 = project_initial(setup.forms, lambda x, y: u_exact(x, y, 0.0))
        result = march(setup.forms, TimeGrid.to_final_time(t_f, n_steps), q, u0, f=f)
        errs.append(l2_error_at(setup.forms, result.final_state, t_f, u_exact))
        hs.append(setup.mesh.h_min)
        nxs.append(nx)
    eocs = list(np.diff(np.log(errs)) / np.diff(np.log(hs)))
    return ConvergenceReport(nxs, hs, errs, eocs)
