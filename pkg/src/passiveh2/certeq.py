"""Certainty-equivalence suboptimal design.

Reduced-order Kalman-Bucy filter exploiting noise-free measurements
(C_y L = -I structure), the KYP storage matrix of the passive channel, the
regenerative-optimal state feedback (an SDP), its projection onto the
output-strictly-passive set (a second SDP), and the reduced-order
controller assembly.  Also the certainty-equivalent unconstrained H2
design used as a reference.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from . import matkit, sdp
from .ssmodel import StateSpace, feedback, h2_norm_ct

__all__ = [
    "RankDeficiencyError",
    "IllPosedH2Error",
    "EpsilonInfeasibleError",
    "RokfResult",
    "SuboptimalDesign",
    "rokf",
    "kyp_storage",
    "solve_op2",
    "solve_op3",
    "assemble_controller",
    "unconstrained_h2",
    "suboptimal_design",
]


class RankDeficiencyError(Exception):
    """C_y B_w is rank deficient: the differentiated measurement carries no
    noise, so the filter Riccati equation is ill-posed.  Supplemental
    (fictitious) process noise restores full rank; pass `fictitious_noise`."""


class IllPosedH2Error(Exception):
    """The unconstrained H2 problem has an imaginary-axis Hamiltonian
    eigenvalue, precluding a stabilizing optimal controller."""


class EpsilonInfeasibleError(Exception):
    """No PSD storage matrix exists at the requested epsilon."""


@dataclass
class RokfResult:
    sigma: np.ndarray       # stationary error covariance, range(Cy') in its null space
    gain: np.ndarray        # filter gain L with C_y L = -I
    e_basis: np.ndarray     # annihilator rows: E (Bw Bw' + fict) Cy' = 0
    l_perp: np.ndarray      # completion with null(l_perp) = range(L)
    c_yperp: np.ndarray     # basis of null(C_y) with l_perp @ c_yperp = I
    phi_e: np.ndarray       # innovations intensity C_y Phi C_y'
    noise_intensity: np.ndarray = field(repr=False)  # Bw Bw' plus fictitious part
    regularized: bool = False


@dataclass
class SuboptimalDesign:
    w_storage: np.ndarray
    f_regen: np.ndarray
    f_projected: np.ndarray
    k0: StateSpace
    j0_star: float
    rokf: RokfResult = field(repr=False)
    op2_objective: float = 0.0
    op3_distance: float = 0.0


def _noise_intensity(plant, fictitious_noise):
    phi = plant.b_w @ plant.b_w.T
    if fictitious_noise is None:
        return phi, np.zeros_like(phi)
    bf = np.atleast_2d(np.asarray(fictitious_noise, dtype=float))
    if bf.shape == (plant.n_states, plant.n_states) and np.allclose(bf, bf.T):
        extra = bf  # interpreted as an intensity matrix
    else:
        if bf.shape[0] != plant.n_states:
            bf = bf.T
        extra = bf @ bf.T
    return phi + extra, extra


def rokf(plant, fictitious_noise=None, rank_tol=1e-8):
    """Reduced-order Kalman-Bucy filter for noise-free measurements.

    Returns the error covariance, the gain L with C_y L = -I, and the
    completion matrices used by the controller assembly.  When C_y B_w is
    rank deficient the problem is ill-posed and a RankDeficiencyError names
    the remedy (fictitious process noise).
    """
    a, c_y = plant.a, plant.c_y
    n, n_u = plant.n_states, plant.n_u
    phi_full, _ = _noise_intensity(plant, fictitious_noise)
    phi_e = c_y @ phi_full @ c_y.T
    scale = max(np.linalg.norm(phi_full), 1e-300)
    if np.linalg.eigvalsh(phi_e)[0] <= rank_tol * scale:
        raise RankDeficiencyError(
            "C_y Bw Bw' C_y' is singular; introduce supplemental (fictitious) "
            "process noise via the fictitious_noise argument"
        )
    # annihilator: rows spanning the orthogonal complement of Phi C_y'
    e_basis = la.null_space((phi_full @ c_y.T).T).T
    t = np.vstack([c_y, e_basis])
    if np.linalg.cond(t) > 1e12:
        raise RankDeficiencyError("[C_y; E] nearly singular; measurement rows dependent")
    tinv = la.inv(t)
    at = t @ a @ tinv
    pt = t @ phi_full @ t.T
    a12, a22 = at[:n_u, n_u:], at[n_u:, n_u:]
    p11, p22 = pt[:n_u, :n_u], pt[n_u:, n_u:]
    regularized = False
    try:
        s22 = matkit.solve_care(a22.T, a12.T, p22, p11)
    except matkit.NoStabilizingSolutionError:
        # imaginary-axis transmission zeros make the solution non-unique;
        # any valid covariance works (Riccati regularized by a small shift)
        shift = 1e-9 * max(np.linalg.norm(p22), 1.0)
        s22 = matkit.solve_care(a22.T, a12.T, p22 + shift * np.eye(a22.shape[0]), p11)
        regularized = True
    sigma = tinv @ la.block_diag(np.zeros((n_u, n_u)), s22) @ tinv.T
    sigma = 0.5 * (sigma + sigma.T)
    gain = -(sigma @ a.T + phi_full) @ c_y.T @ la.inv(phi_e)
    # completion pair: null(L_perp) = range(L), L_perp C_yperp = I
    c_yperp = la.null_space(c_y)
    bl = la.null_space(gain.T)
    l_perp = la.solve(bl.T @ c_yperp, bl.T)
    res = RokfResult(
        sigma=sigma,
        gain=gain,
        e_basis=e_basis,
        l_perp=l_perp,
        c_yperp=c_yperp,
        phi_e=phi_e,
        noise_intensity=phi_full,
        regularized=regularized,
    )
    _validate_rokf(plant, res)
    return res


def _validate_rokf(plant, res):
    n_u = plant.n_u
    cl = plant.c_y @ res.gain
    if np.linalg.norm(cl + np.eye(n_u), np.inf) > 1e-10 * max(1.0, np.linalg.norm(res.gain)):
        raise matkit.MatrixSolverError("filter gain violates C_y L = -I")
    if np.linalg.norm(res.sigma @ plant.c_y.T) > 1e-8 * max(np.linalg.norm(res.sigma), 1e-300):
        raise matkit.MatrixSolverError("covariance null-space structure violated")


def restricted_filter_dynamics(plant, res):
    """[I + L C_y] A restricted to its invariant complement of range(C_y')."""
    t = np.vstack([plant.c_y, res.e_basis])
    at = t @ plant.a @ la.inv(t)
    n_u = plant.n_u
    el = res.e_basis @ res.gain
    return at[n_u:, n_u:] + el @ at[:n_u, n_u:]


def kyp_storage(plant, eps):
    """PSD storage matrix W of the passive channel at shift eps.

    Solves A'W + W A + (W B_u - C_y') R^-1 (W B_u - C_y')' = 0 for the
    stabilizing branch, R = eps I + D_uy + D_uy'.  Failure means the plant
    is not compatible with this eps; the error reports a feasibility
    estimate found by bisection.
    """
    r = eps * np.eye(plant.n_u) + plant.d_uy + plant.d_uy.T
    if np.linalg.eigvalsh(r)[0] <= 0:
        raise EpsilonInfeasibleError("eps I + D_uy + D_uy' must be positive definite")
    try:
        w = matkit.solve_care(plant.a, plant.b_u, np.zeros_like(plant.a), -r, -plant.c_y.T)
    except matkit.NoStabilizingSolutionError as exc:
        raise EpsilonInfeasibleError(
            f"no storage matrix at eps={eps}; largest feasible eps is about "
            f"{_max_feasible_eps(plant, eps):.4g}"
        ) from exc
    evmin = np.linalg.eigvalsh(w)[0]
    if evmin < -1e-8 * max(np.linalg.norm(w), 1.0):
        raise EpsilonInfeasibleError(f"storage matrix indefinite (min eig {evmin:.3e})")
    return 0.5 * (w + w.T)


def _max_feasible_eps(plant, eps_hi, iters=40):
    lo, hi = 0.0, eps_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= 0:
            break
        try:
            r = mid * np.eye(plant.n_u) + plant.d_uy + plant.d_uy.T
            matkit.solve_care(plant.a, plant.b_u, np.zeros_like(plant.a), -r, -plant.c_y.T)
            lo = mid
        except (matkit.MatrixSolverError, la.LinAlgError):
            hi = mid
    return lo


def solve_op2(plant, eps, rokf_result, w, delta_scale=1e-9, tol=1e-8):
    """Regenerative-optimal certainty-equivalent feedback gain F_r.

    SDP over {S, G, Q, V}: minimize tr Q subject to the closed-loop
    Lyapunov strict inequality, two Schur-complement performance blocks,
    and the regenerative trace budget tr{R^-1 V} <= tr{Phi_e L' W L}.
    """
    a, b_u, c_z, c_y = plant.a, plant.b_u, plant.c_z, plant.c_y
    d_uz = plant.d_uz
    n, n_u, n_z = plant.n_states, plant.n_u, plant.n_z
    r = eps * np.eye(n_u) + plant.d_uy + plant.d_uy.T
    c_p = c_y - b_u.T @ w
    el = rokf_result.gain
    noise = el @ rokf_result.phi_e @ el.T
    budget = float(np.trace(rokf_result.phi_e @ el.T @ w @ el))
    delta = delta_scale * max(np.linalg.norm(a), 1.0)

    bld = sdp.SdpBuilder()
    bld.add_var("s", n, symmetric=True)
    bld.add_var("g", n_u, n)
    bld.add_var("q", n_z, symmetric=True)
    bld.add_var("v", n_u, symmetric=True)

    def lyap_block(vv):
        s, g = vv["s"], vv["g"]
        expr = a @ s + s @ a.T + b_u @ g + g.T @ b_u.T + noise
        return -expr - delta * np.eye(n)

    def perf_block(vv):
        s, g, q = vv["s"], vv["g"], vv["q"]
        czs = c_z @ s + d_uz @ g
        return np.block([[q, czs], [czs.T, s]])

    def regen_block(vv):
        s, g, v = vv["s"], vv["g"], vv["v"]
        cps = c_p @ s + r @ g
        return np.block([[v, cps], [cps.T, s]])

    def budget_block(vv):
        return np.array([[budget - np.trace(la.solve(r, vv["v"]))]])

    blocks = [bld.lmi(f) for f in (lyap_block, perf_block, regen_block, budget_block)]
    lin, const = bld.linear_objective(lambda vv: np.trace(vv["q"]))
    problem = sdp.SdpProblem(
        n_vars=bld.n_vars, obj_lin=lin, obj_const=const, lmi_blocks=blocks
    )
    sol = sdp.solve_sdp(problem, tol=tol, require_feasible=True)
    vals = bld.unpack(sol.x)
    s_mat = vals["s"]
    if np.linalg.cond(s_mat) > 1e10:
        warnings.warn("OP2 covariance surrogate nearly singular", matkit.IllConditionedWarning)
    f_r = la.solve(s_mat.T, vals["g"].T).T
    return f_r, sol


def solve_op3(plant, eps, w, rokf_result, f_r, tol=1e-8):
    """Project F_r onto the feasible set: minimize tr{(F-F_r) Y (F-F_r)'}.

    Epigraph form over {Z, G = F Y, Y}: the passivity-projection LMI, the
    subspace condition [Y W - I] L = 0, the storage-consistency block
    certifying Y^-1 >= W, and Y > 0.  Solved in storage-normalized
    coordinates (x' = W^(1/2) x with an eigenvalue floor): structurally
    unobservable storage directions otherwise wreck the conditioning.
    """
    a, b_u, c_y = plant.a, plant.b_u, plant.c_y
    n, n_u = plant.n_states, plant.n_u
    r = eps * np.eye(n_u) + plant.d_uy + plant.d_uy.T
    c_p = c_y - b_u.T @ w
    el = rokf_result.gain
    vals, vecs = np.linalg.eigh(w)
    floor = max(vals[-1], 1.0) * 1e-8
    tw = vecs @ np.diag(np.sqrt(np.maximum(vals, floor))) @ vecs.T
    twi = vecs @ np.diag(1.0 / np.sqrt(np.maximum(vals, floor))) @ vecs.T
    a_s = tw @ a @ twi
    b_s = tw @ b_u
    cp_s = c_p @ twi
    w_s = twi @ w @ twi
    el_s = tw @ el
    el_s = el_s / np.maximum(np.linalg.norm(el_s, axis=0, keepdims=True), 1e-300)
    fr_s = f_r @ twi
    w_half = _psd_half(w_s)
    delta = 1e-9 * max(np.linalg.norm(a_s), 1.0)

    bld = sdp.SdpBuilder()
    bld.add_var("y", n, symmetric=True)
    bld.add_var("g", n_u, n)
    bld.add_var("z", n_u, symmetric=True)

    def proj_block(vv):
        y, g = vv["y"], vv["g"]
        top = y @ a_s.T + a_s @ y + g.T @ b_s.T + b_s @ g
        off = y @ cp_s.T + g.T @ r
        return -np.block([[top, off], [off.T, -r]])

    def epi_block(vv):
        y, g, z = vv["y"], vv["g"], vv["z"]
        dev = g - fr_s @ y
        return np.block([[z, dev], [dev.T, y]])

    def pos_block(vv):
        return vv["y"] - delta * np.eye(n)

    def storage_block(vv):
        y = vv["y"]
        return np.block([[y, y @ w_half], [w_half @ y, np.eye(n)]])

    def subspace(vv):
        return (vv["y"] @ w_s - np.eye(n)) @ el_s

    blocks = [bld.lmi(f) for f in (proj_block, epi_block, pos_block, storage_block)]
    eq_a, eq_b = bld.equality(subspace)
    lin, const = bld.linear_objective(lambda vv: np.trace(vv["z"]))
    problem = sdp.SdpProblem(
        n_vars=bld.n_vars,
        obj_lin=lin,
        obj_const=const,
        lmi_blocks=blocks,
        eq_a=eq_a,
        eq_b=eq_b,
    )
    sol = sdp.solve_sdp(problem, tol=tol, require_feasible=True)
    vals_ = bld.unpack(sol.x)
    f_scaled = la.solve(vals_["y"].T, vals_["g"].T).T
    return f_scaled @ tw, sol


def _psd_half(m):
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def assemble_controller(plant, rokf_result, f):
    """Reduced-order controller of order n_P - n_u from (filter, gain).

    Returns the feedback object K with u = -K y; K is the transfer the
    passivity certificates apply to.
    """
    el, l_perp, c_yperp = rokf_result.gain, rokf_result.l_perp, rokf_result.c_yperp
    d_uy = plant.d_uy
    n_u = plant.n_u
    loop = np.eye(n_u) - f @ el @ d_uy
    try:
        m = la.inv(loop)
    except la.LinAlgError as exc:
        raise matkit.MatrixSolverError("I - F L D_uy singular; feedthrough ill-posed") from exc
    a_prime = plant.a + (plant.a @ el @ d_uy + plant.b_u) @ m @ f
    a_k = l_perp @ a_prime @ c_yperp
    b_k = -l_perp @ a_prime @ el
    c_k = m @ f @ c_yperp
    d_k = -m @ f @ el
    # (a_k, b_k, c_k, d_k) realizes y -> u; the controller object is its negation
    return StateSpace(a_k, b_k, -c_k, -d_k)


def unconstrained_h2(plant, fictitious_noise=None):
    """Certainty-equivalent unconstrained H2 design (LQR gain + reduced filter).

    Raises IllPosedH2Error when the LQR Hamiltonian has imaginary-axis
    eigenvalues (no stabilizing optimal controller exists).
    """
    r = plant.d_uz.T @ plant.d_uz
    if np.linalg.eigvalsh(r)[0] <= 0:
        raise IllPosedH2Error("D_uz' D_uz must be positive definite")
    try:
        x = matkit.solve_care(
            plant.a, plant.b_u, plant.c_z.T @ plant.c_z, r, plant.c_z.T @ plant.d_uz
        )
    except matkit.NoStabilizingSolutionError as exc:
        raise IllPosedH2Error(
            "unconstrained H2 problem is not well-posed: the Hamiltonian has an "
            "eigenvalue on the imaginary axis, precluding a stabilizing optimal "
            "controller"
        ) from exc
    f = -la.solve(r, (x @ plant.b_u + plant.c_z.T @ plant.d_uz).T)
    filt = rokf(plant, fictitious_noise=fictitious_noise)
    return assemble_controller(plant, filt, f)


def closed_loop_cost_sq(plant, k):
    """Squared H2 cost of the closed loop, the J of the design problem."""
    return h2_norm_ct(feedback(plant, k)) ** 2


def cost_via_filter_gramians(plant, rokf_result, f):
    """Innovations-form cost: tr{(Cz+Duz F) Sigma_xi (.)'} + tr{Cz Sigma Cz'}."""
    el = rokf_result.gain
    acl = plant.a + plant.b_u @ f
    sig_xi = matkit.solve_lyap_ct(acl, el @ rokf_result.phi_e @ el.T)
    czf = plant.c_z + plant.d_uz @ f
    return float(
        np.trace(czf @ sig_xi @ czf.T) + np.trace(plant.c_z @ rokf_result.sigma @ plant.c_z.T)
    )


def suboptimal_design(plant, eps, fictitious_noise=None, tol=1e-8):
    """Full warm-start chain: filter, storage, OP2, OP3, assembly, cost."""
    filt = rokf(plant, fictitious_noise=fictitious_noise)
    w = kyp_storage(plant, eps)
    f_r, op2_sol = solve_op2(plant, eps, filt, w, tol=tol)
    f, op3_sol = solve_op3(plant, eps, w, filt, f_r, tol=tol)
    k0 = assemble_controller(plant, filt, f)
    j0 = closed_loop_cost_sq(plant, k0)
    return SuboptimalDesign(
        w_storage=w,
        f_regen=f_r,
        f_projected=f,
        k0=k0,
        j0_star=j0,
        rokf=filt,
        op2_objective=op2_sol.objective,
        op3_distance=op3_sol.objective,
    )
