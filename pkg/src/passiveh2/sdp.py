"""Semidefinite machinery.

Two layers:

* a generic small dense LMI solver (`SdpProblem` / `solve_sdp`, backed by
  cvxpy) used for the regenerative and projection designs and the primal
  finite-dimensional synthesis;
* the specialized dual solver (`solve_op7`) for the FIR synthesis: a
  log-det barrier interior-point method over the multiplier blocks
  (Upsilon_12, Upsilon_22), with Upsilon_11 eliminated through its Stein
  relation and its gradient contribution pulled back by one adjoint Stein
  solve per iteration.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from . import matkit
from .ssmodel import DiscreteStateSpace
from .youla import MarkovSequence

__all__ = [
    "LmiBlock",
    "SdpProblem",
    "SdpSolution",
    "SdpInfeasibleError",
    "SdpUnboundedError",
    "SdpSolverError",
    "SdpBuilder",
    "solve_sdp",
    "UAffine",
    "build_constraint_U_affine",
    "solve_op6_primal",
    "DualState",
    "Op7Result",
    "solve_op7",
]


class SdpInfeasibleError(Exception):
    pass


class SdpUnboundedError(Exception):
    pass


class SdpSolverError(Exception):
    pass


@dataclass
class LmiBlock:
    """Affine constraint F0 + sum_i x_i F_i >= 0 (symmetric blocks)."""

    f0: np.ndarray
    coeffs: np.ndarray  # (n_vars, m, m)

    @property
    def size(self):
        return self.f0.shape[0]

    def value(self, x):
        return self.f0 + np.tensordot(x, self.coeffs, axes=(0, 0))


@dataclass
class SdpProblem:
    n_vars: int
    obj_lin: np.ndarray
    obj_quad: np.ndarray | None = None  # PSD; objective adds x' Q x / 2
    obj_const: float = 0.0
    lmi_blocks: list = field(default_factory=list)
    eq_a: np.ndarray | None = None
    eq_b: np.ndarray | None = None


@dataclass
class SdpSolution:
    x: np.ndarray
    objective: float
    status: str
    block_margins: list
    duals: list
    solve_time: float


def solve_sdp(problem, tol=1e-7, verbose=False, interior_hint=None, require_feasible=False):
    """Solve a small dense LMI problem; returns an SdpSolution.

    Conic solvers are tried in order (CLARABEL, then SCS at increasing
    effort); a returned point is accepted only if every LMI block and
    equality is satisfied to tolerance.  With a strictly feasible
    `interior_hint` an in-house log-det barrier method is the last resort.
    Raises SdpInfeasibleError / SdpUnboundedError with a phase-1 slack
    certificate where applicable.
    """
    t0 = time.perf_counter()
    feas_tol = 1e-6 * max(1.0, _problem_scale(problem))
    best = None
    for attempt in ({"solver": "CLARABEL"},
                    {"solver": "SCS", "eps": min(tol, 1e-9), "max_iters": 100_000}):
        sol = _solve_sdp_conic(problem, verbose=verbose, **attempt)
        if sol is None:
            continue
        if _solution_feasible(problem, sol, feas_tol):
            if sol.status == "optimal":
                return sol
            if best is None or sol.objective < best.objective:
                best = sol
    if interior_hint is not None and problem.eq_a is None:
        try:
            x, obj, margins, _ = _barrier_sdp(problem, np.asarray(interior_hint, float), tol)
            return SdpSolution(
                x=x,
                objective=obj,
                status="optimal(barrier)",
                block_margins=margins,
                duals=[None] * len(problem.lmi_blocks),
                solve_time=time.perf_counter() - t0,
            )
        except SdpSolverError:
            pass
    if best is not None:
        return best
    if require_feasible:
        raise SdpSolverError(
            "no solver produced a feasible point within tolerance "
            f"(feasibility tolerance {feas_tol:.1e})"
        )
    sol = _solve_sdp_conic(problem, verbose=verbose, solver="CLARABEL")
    if sol is None:
        raise SdpSolverError("conic solvers failed outright")
    return sol


def _problem_scale(problem):
    return max(
        (np.linalg.norm(blk.f0) for blk in problem.lmi_blocks if blk.f0.size), default=1.0
    )


def _solution_feasible(problem, sol, feas_tol):
    if any(m < -feas_tol for m in sol.block_margins):
        return False
    if problem.eq_a is not None:
        resid = problem.eq_a @ sol.x - problem.eq_b
        if np.linalg.norm(resid, np.inf) > feas_tol * (1.0 + np.linalg.norm(problem.eq_b)):
            return False
    return True


def _solve_sdp_conic(problem, verbose=False, solver="CLARABEL", **solver_opts):
    import cvxpy as cp
    from cvxpy.atoms.affine.wraps import psd_wrap

    x = cp.Variable(problem.n_vars)
    constraints = []
    for blk in problem.lmi_blocks:
        m = blk.size
        fmat = blk.coeffs.reshape(problem.n_vars, m * m).T
        expr = cp.reshape(fmat @ x, (m, m), order="F") + blk.f0
        constraints.append((expr + expr.T) / 2 >> 0)
    if problem.eq_a is not None:
        constraints.append(problem.eq_a @ x == problem.eq_b)
    obj = problem.obj_const + problem.obj_lin @ x
    if problem.obj_quad is not None and np.any(problem.obj_quad):
        obj = obj + 0.5 * cp.quad_form(x, psd_wrap(problem.obj_quad))
    prob = cp.Problem(cp.Minimize(obj), constraints)
    t0 = time.perf_counter()
    try:
        prob.solve(solver=getattr(cp, solver), verbose=verbose, **solver_opts)
    except cp.error.SolverError:
        return None
    elapsed = time.perf_counter() - t0
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        slack = _phase1_slack(problem)
        raise SdpInfeasibleError(f"LMI system infeasible (phase-1 slack {slack:.3e})")
    if prob.status in ("unbounded", "unbounded_inaccurate"):
        raise SdpUnboundedError("SDP objective unbounded below")
    if x.value is None:
        return None
    xv = np.asarray(x.value).ravel()
    margins = [float(np.linalg.eigvalsh(0.5 * (m_ := blk.value(xv)) + 0.5 * m_.T)[0])
               for blk in problem.lmi_blocks]
    duals = [c.dual_value for c in constraints]
    return SdpSolution(
        x=xv,
        objective=float(prob.value),
        status=prob.status,
        block_margins=margins,
        duals=duals,
        solve_time=elapsed,
    )


def _barrier_sdp(problem, x0, tol, mu_factor=0.2, max_newton=300):
    """Primal log-det barrier for LMI problems with a strictly feasible start.

    minimize  obj(x) - mu * sum_j logdet F_j(x),  mu -> 0 geometrically.
    """
    blocks = problem.lmi_blocks
    c = problem.obj_lin
    q = problem.obj_quad

    def obj(x):
        val = problem.obj_const + c @ x
        if q is not None:
            val += 0.5 * x @ q @ x
        return float(val)

    def grad_obj(x):
        g = c.copy()
        if q is not None:
            g = g + q @ x
        return g

    for blk in blocks:
        if np.linalg.eigvalsh(_symm(blk.value(x0)))[0] <= 0:
            raise SdpSolverError("interior hint is not strictly feasible")
    cone_dim = sum(blk.size for blk in blocks)
    x = x0.copy()
    mu = max(1.0, abs(obj(x)))
    while True:
        for _ in range(max_newton):
            grad = grad_obj(x)
            hess = q.copy() if q is not None else np.zeros((x.size, x.size))
            for blk in blocks:
                f = _symm(blk.value(x))
                cho = la.cho_factor(f)
                w = la.cho_solve(cho, np.eye(blk.size))
                grad = grad - mu * np.einsum("ij,kji->k", w, blk.coeffs, optimize=True)
                cl = la.cholesky(w, lower=True)
                gk = np.einsum("ij,kjl,lm->kim", cl.T, blk.coeffs, cl, optimize=True)
                iu = np.triu_indices(blk.size)
                pack = gk[:, iu[0], iu[1]]
                pack[:, iu[0] != iu[1]] *= np.sqrt(2.0)
                hess = hess + mu * (pack @ pack.T)
            step = -_solve_spd(hess, grad)
            decrement = float(-grad @ step)
            t = 1.0
            f0 = obj(x) - mu * sum(_logdet_chol(_symm(b.value(x))) for b in blocks)
            moved = False
            for _ in range(60):
                cand = x + t * step
                lds = [_try_logdet(_symm(b.value(cand))) for b in blocks]
                if all(ld is not None for ld in lds):
                    fc = obj(cand) - mu * sum(lds)
                    if fc <= f0 + 1e-12 * abs(f0):
                        x = cand
                        moved = True
                        break
                t *= 0.5
            if not moved or 0.5 * decrement <= max(1e-10, 1e-3 * mu):
                break
        if mu * cone_dim <= tol * (1.0 + abs(obj(x))):
            break
        mu *= mu_factor
    margins = [float(np.linalg.eigvalsh(_symm(b.value(x)))[0]) for b in blocks]
    return x, obj(x), margins, 0


def _symm(m):
    return 0.5 * (m + m.T)


def _solve_spd(h, g):
    """Solve h x = g for h symmetric positive (semi)definite up to noise.

    Cholesky when well conditioned; otherwise an eigenvalue-clipped solve,
    which keeps Newton steps sane on nearly singular barrier Hessians.
    """
    try:
        return la.cho_solve(la.cho_factor(h), g)
    except la.LinAlgError:
        vals, vecs = la.eigh(0.5 * (h + h.T))
        floor = max(vals[-1], 1e-300) * 1e-14
        vals = np.maximum(vals, floor)
        return vecs @ ((vecs.T @ g) / vals)


def _phase1_slack(problem):
    """max t s.t. F_j(x) >= t I: negative optimum certifies infeasibility."""
    import cvxpy as cp

    x = cp.Variable(problem.n_vars)
    t = cp.Variable()
    cons = []
    for blk in problem.lmi_blocks:
        m = blk.size
        fmat = blk.coeffs.reshape(problem.n_vars, m * m).T
        expr = cp.reshape(fmat @ x, (m, m), order="F") + blk.f0
        cons.append((expr + expr.T) / 2 >> t * np.eye(m))
    if problem.eq_a is not None:
        cons.append(problem.eq_a @ x == problem.eq_b)
    pr = cp.Problem(cp.Maximize(t), cons)
    try:
        pr.solve(solver=cp.CLARABEL)
        return float(t.value) if t.value is not None else float("nan")
    except Exception:
        return float("nan")


class SdpBuilder:
    """Assembles SdpProblem instances from matrix-valued affine callables.

    Matrix variables are allocated as vector slices (symmetric ones store
    the upper triangle); the affine LMI coefficients are extracted exactly
    by probing the callables at coordinate directions.
    """

    def __init__(self):
        self._vars = {}
        self.n_vars = 0

    def add_var(self, name, rows, cols=None, symmetric=False):
        if symmetric:
            size = rows * (rows + 1) // 2
        else:
            cols = rows if cols is None else cols
            size = rows * cols
        self._vars[name] = (self.n_vars, rows, cols, symmetric, size)
        self.n_vars += size
        return name

    def unpack(self, x):
        out = {}
        for name, (start, rows, cols, sym, size) in self._vars.items():
            seg = x[start : start + size]
            if sym:
                m = np.zeros((rows, rows))
                iu = np.triu_indices(rows)
                m[iu] = seg
                m = m + np.triu(m, 1).T
                out[name] = m
            else:
                out[name] = seg.reshape(rows, cols)
        return out

    def pack(self, values):
        x = np.zeros(self.n_vars)
        for name, (start, rows, cols, sym, size) in self._vars.items():
            v = np.asarray(values[name], dtype=float)
            if sym:
                iu = np.triu_indices(rows)
                x[start : start + size] = v[iu]
            else:
                x[start : start + size] = v.ravel()
        return x

    def lmi(self, func):
        """LmiBlock for the affine map x -> func(vars) (must return >= 0 form)."""
        zero = self.unpack(np.zeros(self.n_vars))
        f0 = np.asarray(func(zero), dtype=float)
        m = f0.shape[0]
        coeffs = np.zeros((self.n_vars, m, m))
        for i in range(self.n_vars):
            e = np.zeros(self.n_vars)
            e[i] = 1.0
            coeffs[i] = np.asarray(func(self.unpack(e)), dtype=float) - f0
        return LmiBlock(f0=f0, coeffs=coeffs)

    def equality(self, func):
        """(A, b) for the affine equality func(vars) = 0."""
        zero = self.unpack(np.zeros(self.n_vars))
        r0 = np.asarray(func(zero), dtype=float).ravel()
        a = np.zeros((r0.size, self.n_vars))
        for i in range(self.n_vars):
            e = np.zeros(self.n_vars)
            e[i] = 1.0
            a[:, i] = np.asarray(func(self.unpack(e)), dtype=float).ravel() - r0
        return a, -r0

    def linear_objective(self, func):
        zero = self.unpack(np.zeros(self.n_vars))
        c0 = float(func(zero))
        c = np.zeros(self.n_vars)
        for i in range(self.n_vars):
            e = np.zeros(self.n_vars)
            e[i] = 1.0
            c[i] = float(func(self.unpack(e))) - c0
        return c, c0


# ---------------------------------------------------------------------------
# the affine U-constraint data
# ---------------------------------------------------------------------------


@dataclass
class UAffine:
    """Fixed (Phi_U, Gam_U) plus the affine output data of U(x).

    vec[-Pi_U(x), -Delta_U(x)] = h + E x  (column-major vec of the
    p x (m + p) stacked block).
    """

    phi: np.ndarray
    gam: np.ndarray
    h: np.ndarray
    e_mat: np.ndarray
    n: int
    n_u: int
    ctrb_min_eig: float

    @property
    def m(self):
        return self.phi.shape[0]

    @property
    def p(self):
        return 2 * self.n_u

    def pi_delta(self, x):
        v = self.h + self.e_mat @ np.asarray(x, dtype=float)
        stack = -v.reshape(self.p, self.m + self.p, order="F")
        return stack[:, : self.m], stack[:, self.m :]

    def u_system(self, x):
        pi, delta = self.pi_delta(x)
        return DiscreteStateSpace(self.phi, self.gam, pi, delta)


def build_constraint_U_affine(v, f_factor, n, cleanup_tol=1e-10):
    """Affine description of U(x) = [[Q(x), Q(x)], [0, F]].

    Q(x) = Q0 + Q1(x) N0 realized on the shared warm-start loop states plus
    the FIR register, so only the output maps depend on x (affinely).
    """
    joint = v.coprime.system
    n_u = v.coprime.n_u
    f_sys = f_factor.system if hasattr(f_factor, "system") else f_factor
    f_sys = f_sys if f_sys.n_states == 0 else _stable_trim(f_sys, cleanup_tol)
    nj, nf, reg = joint.n_states, f_sys.n_states, n * n_u
    cj_u0, dj_u0 = joint.c[:n_u], joint.d[:n_u]
    cj_v, dj_v = joint.c[n_u:], joint.d[n_u:]
    phi_q = np.zeros((reg, reg))
    for k in range(n - 1):
        phi_q[(k + 1) * n_u : (k + 2) * n_u, k * n_u : (k + 1) * n_u] = np.eye(n_u)
    gam_q = np.zeros((reg, n_u))
    if n:
        gam_q[:n_u] = np.eye(n_u)
    a_q = np.block([[joint.a, np.zeros((nj, reg))], [gam_q @ cj_v, phi_q]])
    b_q = np.vstack([joint.b, gam_q @ dj_v])
    phi_u = la.block_diag(a_q, f_sys.a)
    gam_u = np.block(
        [[b_q, b_q], [np.zeros((nf, n_u)), f_sys.b]]
    )
    m = phi_u.shape[0]
    p = 2 * n_u

    def pidelta_vec(x):
        seq = MarkovSequence.from_x(x, n, n_u)
        c0 = seq.coeffs[0]
        taps = (
            np.hstack([seq.coeffs[k] for k in range(1, n + 1)])
            if n
            else np.zeros((n_u, 0))
        )
        c_q = np.hstack([cj_u0 + c0 @ cj_v, taps])
        d_q = dj_u0 + c0 @ dj_v
        pi = np.block(
            [[c_q, np.zeros((n_u, nf))], [np.zeros((n_u, nj + reg)), f_sys.c]]
        )
        delta = np.block([[d_q, d_q], [np.zeros((n_u, n_u)), f_sys.d]])
        return np.hstack([-pi, -delta]).ravel(order="F")

    d = (n + 1) * n_u * n_u
    h = pidelta_vec(np.zeros(d))
    e_mat = np.zeros((h.size, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        e_mat[:, i] = pidelta_vec(e) - h
    gram = matkit.solve_stein(phi_u, gam_u @ gam_u.T)
    ev = np.linalg.eigvalsh(gram)
    ctrb = float(ev[0] / max(ev[-1], 1e-300))
    return UAffine(phi=phi_u, gam=gam_u, h=h, e_mat=e_mat, n=n, n_u=n_u, ctrb_min_eig=ctrb)


def _stable_trim(sys_, tol):
    from .ssmodel import truncate_hsv

    return truncate_hsv(sys_, tol) if sys_.is_stable() else sys_


# ---------------------------------------------------------------------------
# primal finite-dimensional synthesis (generic SDP path)
# ---------------------------------------------------------------------------


def solve_op6_primal(qobj, ua, tol=1e-8):
    """Primal synthesis: min J(x) over x and the KYP certificate Sigma_U.

    Used as the duality-gap reference for the barrier solver.  The optimal
    face is typically degenerate (the constraint is active over a whole
    frequency band), so a strictly interior hint is prepared for the
    barrier fallback.
    """
    m, p = ua.m, ua.p
    bld = SdpBuilder()
    bld.add_var("x", (qobj.n + 1) * qobj.n_u**2, 1)
    bld.add_var("sigma", m, symmetric=True)

    def kyp(vars_):
        x = vars_["x"].ravel()
        s = vars_["sigma"]
        pi, delta = ua.pi_delta(x)
        top = np.hstack([ua.phi.T @ s @ ua.phi - s, ua.phi.T @ s @ ua.gam - pi.T])
        bot = np.hstack([ua.gam.T @ s @ ua.phi - pi, ua.gam.T @ s @ ua.gam - delta - delta.T])
        return -np.vstack([top, bot])

    blocks = [bld.lmi(kyp), bld.lmi(lambda vv: vv["sigma"])]
    d = (qobj.n + 1) * qobj.n_u**2
    lin = np.zeros(bld.n_vars)
    lin[:d] = qobj.g
    quad = np.zeros((bld.n_vars, bld.n_vars))
    hreg, _ = qobj.h_regularized()
    quad[:d, :d] = hreg
    problem = SdpProblem(
        n_vars=bld.n_vars,
        obj_lin=lin,
        obj_quad=quad,
        obj_const=qobj.j0,
        lmi_blocks=blocks,
    )
    try:
        sol = solve_sdp(problem, tol=tol)
        feas = all(m >= -1e3 * tol * max(1.0, _problem_scale(problem))
                   for m in sol.block_margins)
        if sol.status == "optimal" and feas:
            return sol.x[:d], qobj(sol.x[:d]), sol
    except (SdpSolverError, SdpInfeasibleError):
        pass
    # the optimal face is degenerate for boundary-riding synthesis problems
    # (no strictly feasible interior in the FIR subspace); fall back to a
    # cutting-plane solve of the equivalent semi-infinite constraint
    x, obj, margins = _op6_cutting_plane(qobj, ua, tol=max(tol, 1e-9))
    sol = SdpSolution(
        x=x,
        objective=obj,
        status="optimal(cutting-plane)",
        block_margins=margins,
        duals=[],
        solve_time=0.0,
    )
    return x, obj, sol


def _op6_cutting_plane(qobj, ua, tol=1e-9, feas_tol=1e-9, grid_size=4096, max_rounds=600):
    """Kelley cutting-plane solve of min J(x) s.t. U(x) + U(x)^H >= 0 on the
    unit circle.

    The margin is concave in x (pointwise min of min-eigenvalues of affine
    Hermitian matrices), so supporting hyperplanes at active frequencies
    give a valid outer approximation; QP relaxations yield lower bounds and
    feasible iterates upper bounds.  Active frequencies are refined off the
    sampling grid so cuts support the true boundary.
    """
    import cvxpy as cp

    d = qobj.g.size
    grid = np.linspace(-np.pi * (1 - 1e-9), np.pi * (1 - 1e-9), grid_size)
    qvals = np.exp(1j * grid)
    eye = np.eye(ua.m)
    resolv = np.array([la.solve(qv * eye - ua.phi, ua.gam) for qv in qvals])
    pi0, de0 = ua.pi_delta(np.zeros(d))
    pis, deltas = [], []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        pik, dek = ua.pi_delta(e)
        pis.append(pik - pi0)
        deltas.append(dek - de0)

    def herm(r):
        return r + np.conj(np.transpose(r, (0, 2, 1)))

    h0 = herm(np.einsum("ij,njk->nik", pi0, resolv) + de0)
    hb = np.stack(
        [herm(np.einsum("ij,njk->nik", pis[k], resolv) + deltas[k]) for k in range(d)],
        axis=0,
    )

    def exact_pieces(omega, x):
        """(lambda_min, eigvec, per-basis Hermitian responses) off-grid."""
        res = la.solve(np.exp(1j * omega) * eye - ua.phi, ua.gam)
        r0 = pi0 @ res + de0
        rk = [pis[k] @ res + deltas[k] for k in range(d)]
        hm0 = r0 + r0.conj().T
        hmk = [r + r.conj().T for r in rk]
        hm = hm0 + sum(x[k] * hmk[k] for k in range(d))
        vals, vecs = np.linalg.eigh(hm)
        return float(vals[0]), vecs[:, 0], hm0, hmk

    def refine(idx, x):
        lo = grid[max(idx - 1, 0)]
        hi = grid[min(idx + 1, grid_size - 1)]
        invphi = (np.sqrt(5.0) - 1.0) / 2.0
        a, b = lo, hi
        w1, w2 = b - invphi * (b - a), a + invphi * (b - a)
        f1 = exact_pieces(w1, x)[0]
        f2 = exact_pieces(w2, x)[0]
        for _ in range(36):
            if f1 <= f2:
                b, w2, f2 = w2, w1, f1
                w1 = b - invphi * (b - a)
                f1 = exact_pieces(w1, x)[0]
            else:
                a, w1, f1 = w1, w2, f2
                w2 = a + invphi * (b - a)
                f2 = exact_pieces(w2, x)[0]
        return 0.5 * (a + b)

    def margin_and_cuts(x, n_cuts=6):
        hmat = h0 + np.tensordot(x, hb, axes=(0, 0))
        lmin = np.linalg.eigvalsh(hmat)[:, 0]
        order = np.argsort(lmin)
        chosen = []
        for idx in order:
            if len(chosen) >= n_cuts:
                break
            if all(abs(idx - j) > grid_size // 512 for j in chosen):
                chosen.append(idx)
        cuts = []
        worst = np.inf
        for idx in chosen:
            omega = refine(int(idx), x)
            lam, v, hm0, hmk = exact_pieces(omega, x)
            worst = min(worst, lam)
            c0 = float(np.real(np.conj(v) @ hm0 @ v))
            gvec = np.array([float(np.real(np.conj(v) @ hmk[k] @ v)) for k in range(d)])
            cuts.append((c0, gvec))
        return worst, cuts

    hreg, _ = qobj.h_regularized()
    rchol = np.linalg.cholesky(hreg).T
    xvar = cp.Variable(d)
    _, cut_list = margin_and_cuts(np.zeros(d))
    best_x, best_obj = np.zeros(d), qobj(np.zeros(d))
    best_marg = margin_and_cuts(np.zeros(d))[0]
    lower = -np.inf
    for _ in range(max_rounds):
        cons = [c0 + g @ xvar >= 0 for c0, g in cut_list]
        prob = cp.Problem(
            cp.Minimize(qobj.j0 + qobj.g @ xvar + 0.5 * cp.sum_squares(rchol @ xvar)),
            cons,
        )
        prob.solve(solver=cp.CLARABEL)
        if xvar.value is None:
            break
        xc = np.asarray(xvar.value).ravel()
        lower = max(lower, float(prob.value))
        marg, cuts = margin_and_cuts(xc)
        if marg >= -feas_tol:
            jc = qobj(xc)
            if jc < best_obj or marg > best_marg:
                best_x, best_obj, best_marg = xc, jc, marg
            if best_obj - lower <= tol * (1.0 + abs(best_obj)) * 10 + 1e-10:
                break
        cut_list.extend(cuts)
        if len(cut_list) > 6000:
            cut_list = cut_list[-5000:]
    return best_x, best_obj, [best_marg]


# ---------------------------------------------------------------------------
# dual barrier solver
# ---------------------------------------------------------------------------


@dataclass
class DualState:
    psi: np.ndarray
    upsilon: np.ndarray
    mu: float


@dataclass
class Op7Result:
    x: np.ndarray
    j_star: float
    j_dual: float
    psi: np.ndarray
    upsilon_min_eig: float
    grad_norm: float
    iterations: int
    trace: list
    ridge: float


class _Op7Machine:
    """Precomputations and oracles for the dual barrier method."""

    def __init__(self, qobj, ua):
        self.ua = ua
        self.m, self.p = ua.m, ua.p
        m, p = self.m, self.p
        self.phi, self.gam = ua.phi, ua.gam
        self.hreg, self.ridge = qobj.h_regularized()
        self.h_cho = la.cho_factor(self.hreg)
        self.g = qobj.g
        self.j0 = qobj.j0
        self.qobj = qobj
        self.d = self.g.size
        # theta layout: vec(Upsilon12) C-order, then upper triangle of Upsilon22
        self.n12 = m * p
        self.iu22 = np.triu_indices(p)
        self.n22 = self.iu22[0].size
        self.dim = self.n12 + self.n22
        self.stein = matkit.SylvesterSteinSolver(self.phi, self.phi.T)
        self.stein_adj = matkit.SylvesterSteinSolver(self.phi.T, self.phi)
        self.s_psi = self._build_s_psi()
        self.a_e = ua.e_mat.T @ self.s_psi  # (d, dim)
        self.h_theta = self.s_psi.T @ ua.h
        self._b = self._build_structure()
        # constant part of the dual Hessian: -4 A_E' H^-1 A_E
        self.hess_jd = -4.0 * self.a_e.T @ la.cho_solve(self.h_cho, self.a_e)

    def _build_s_psi(self):
        m, p = self.m, self.p
        s = np.zeros((p * (m + p), self.dim))
        for a in range(m):
            for b in range(p):
                s[b + p * a, a * p + b] = 1.0  # [Upsilon12^T]_{b,a}
        for k, (a, b) in enumerate(zip(*self.iu22)):
            s[a + p * (m + b), self.n12 + k] = 1.0
            s[b + p * (m + a), self.n12 + k] = 1.0
        return s

    def _build_structure(self):
        """Dense dUpsilon/dtheta_k matrices, including the Stein response."""
        m, p = self.m, self.p
        b_all = np.zeros((self.dim, m + p, m + p))
        for a in range(m):
            for b in range(p):
                k = a * p + b
                d12 = np.zeros((m, p))
                d12[a, b] = 1.0
                rhs = self.phi @ d12 @ self.gam.T
                rhs = rhs + rhs.T
                d11 = self.stein.solve(rhs)
                b_all[k, :m, :m] = d11
                b_all[k, :m, m:] = d12
                b_all[k, m:, :m] = d12.T
        for k, (a, b) in enumerate(zip(*self.iu22)):
            d22 = np.zeros((p, p))
            d22[a, b] = 1.0
            d22[b, a] = 1.0
            rhs = self.gam @ d22 @ self.gam.T
            d11 = self.stein.solve(rhs)
            idx = self.n12 + k
            b_all[idx, :m, :m] = d11
            b_all[idx, m:, m:] = d22
        return b_all

    # -- assembly --

    def upsilon(self, theta):
        m, p = self.m, self.p
        u12 = theta[: self.n12].reshape(m, p)
        u22 = np.zeros((p, p))
        u22[self.iu22] = theta[self.n12 :]
        u22 = u22 + np.triu(u22, 1).T
        rhs = self.phi @ u12 @ self.gam.T
        rhs = rhs + rhs.T + self.gam @ u22 @ self.gam.T
        u11 = self.stein.solve(rhs)
        out = np.empty((m + p, m + p))
        out[:m, :m] = 0.5 * (u11 + u11.T)
        out[:m, m:] = u12
        out[m:, :m] = u12.T
        out[m:, m:] = u22
        return out

    def psi_of(self, theta):
        return self.s_psi @ theta

    def j_dual(self, theta):
        v = 2.0 * self.a_e @ theta + self.g
        return float(self.j0 + 2.0 * self.h_theta @ theta - 0.5 * v @ la.cho_solve(self.h_cho, v))

    def grad_j_dual(self, theta):
        v = 2.0 * self.a_e @ theta + self.g
        return 2.0 * self.h_theta - 2.0 * self.a_e.T @ la.cho_solve(self.h_cho, v)

    def grad_logdet(self, theta, w):
        """Gradient of log det Upsilon via the adjoint Stein equation."""
        m, p = self.m, self.p
        w11, w12, w22 = w[:m, :m], w[:m, m:], w[m:, m:]
        ghat = self.stein_adj.solve(0.5 * (w11 + w11.T))
        g12 = 2.0 * (w12 + self.phi.T @ ghat @ self.gam)
        g22 = w22 + self.gam.T @ ghat @ self.gam
        out = np.empty(self.dim)
        out[: self.n12] = g12.ravel()
        diag = self.iu22[0] == self.iu22[1]
        vals = 2.0 * g22[self.iu22]
        vals[diag] *= 0.5
        out[self.n12 :] = vals
        return out

    @staticmethod
    def w_factor(ups):
        """(W, C) with W = Upsilon^-1 = C C' computed from chol(Upsilon)."""
        ell = la.cholesky(ups, lower=True)
        linv = la.solve_triangular(ell, np.eye(ups.shape[0]), lower=True)
        c = linv.T
        return c @ c.T, c

    def hess_logdet(self, c):
        """-[tr(W B_k W B_l)] via a Gram product of C' B_k C slices."""
        mp = self.m + self.p
        bt = self._b.reshape(self.dim * mp, mp) @ c
        bt = bt.reshape(self.dim, mp, mp)
        g = np.einsum("ij,kjl->kil", c.T, bt, optimize=True)
        iu = np.triu_indices(mp)
        pack = g[:, iu[0], iu[1]]
        pack[:, iu[0] != iu[1]] *= np.sqrt(2.0)
        return -(pack @ pack.T)

    def x_from_theta(self, theta):
        psi = self.psi_of(theta)
        return -la.cho_solve(self.h_cho, 2.0 * self.ua.e_mat.T @ psi + self.g)


def solve_op7(qobj, ua, tol=1e-9, newton_tol=1e-8, mu_factor=0.2, max_newton=400,
              collect_trace=True):
    """Dual-domain solve of the FIR synthesis by a log-det barrier method.

    Maximizes J_d(psi) subject to Upsilon(psi) >= 0, with Upsilon_11
    eliminated through its Stein relation.  Returns the recovered primal
    coefficients x*, J* evaluated through the primal quadratic, and the
    positive-semidefiniteness/gradient certificate.
    """
    mach = _Op7Machine(qobj, ua)
    m, p = mach.m, mach.p
    # initial point: Upsilon22 = eta I, Upsilon12 = 0
    eta = 1e-2 * (1.0 + np.linalg.norm(qobj.g)) / (1.0 + np.linalg.norm(qobj.h, 2))
    theta = np.zeros(mach.dim)
    diag22 = [mach.n12 + k for k, (a, b) in enumerate(zip(*mach.iu22)) if a == b]
    theta[diag22] = eta
    ups = mach.upsilon(theta)
    try:
        la.cholesky(ups - 1e-14 * np.eye(m + p), lower=True)
    except la.LinAlgError as exc:
        raise SdpSolverError(
            "initial multiplier not positive definite; the U realization is not "
            f"controllable (relative gramian floor {ua.ctrb_min_eig:.2e})"
        ) from exc
    mu = max(1.0, abs(mach.j_dual(theta)))
    trace = []
    total_newton = 0
    restarts = 0
    while True:
        for _ in range(max_newton):
            w, wc = mach.w_factor(ups)
            grad = mach.grad_j_dual(theta) + mu * mach.grad_logdet(theta, w)
            hess = mach.hess_jd + mu * mach.hess_logdet(wc)
            step = _solve_spd(-hess, grad)
            decrement = float(grad @ step)
            if decrement < 0:  # numerical loss of concavity
                step = grad / max(np.linalg.norm(grad), 1e-300)
                decrement = float(grad @ step)
            t = 1.0
            f0 = mach.j_dual(theta) + mu * _logdet_chol(ups)
            accepted = False
            for _ in range(60):
                cand = theta + t * step
                ups_c = mach.upsilon(cand)
                ld = _try_logdet(ups_c)
                if ld is not None and mach.j_dual(cand) + mu * ld >= f0 - 1e-12 * abs(f0):
                    theta, ups = cand, ups_c
                    accepted = True
                    break
                t *= 0.5
            total_newton += 1
            if collect_trace:
                trace.append(
                    {
                        "iteration": total_newton,
                        "mu": mu,
                        "j_dual": mach.j_dual(theta),
                        "lambda_min_upsilon": float(np.linalg.eigvalsh(ups)[0]),
                        "newton_decrement": decrement,
                    }
                )
            if not accepted:
                break
            if 0.5 * decrement <= max(newton_tol, 1e-3 * mu) or decrement <= 1e-12 * (
                1.0 + abs(f0)
            ):
                break
        else:
            restarts += 1
            if restarts > 2:
                raise SdpSolverError(
                    f"barrier Newton failed to converge (mu={mu:.2e}); last iterate "
                    f"j_dual={mach.j_dual(theta):.6e}"
                )
            mu *= 25.0
            continue
        jd = mach.j_dual(theta)
        if mu * (m + p) <= tol * (1.0 + abs(jd)) and mu <= 1e-9 * (1.0 + abs(jd)):
            break
        mu *= mu_factor
    x = mach.x_from_theta(theta)
    jd = mach.j_dual(theta)
    w, _ = mach.w_factor(ups)
    grad = mach.grad_j_dual(theta) + mu * mach.grad_logdet(theta, w)
    return Op7Result(
        x=x,
        j_star=qobj(x),
        j_dual=jd,
        psi=mach.psi_of(theta),
        upsilon_min_eig=float(np.linalg.eigvalsh(ups)[0]),
        grad_norm=float(np.linalg.norm(grad)),
        iterations=total_newton,
        trace=trace,
        ridge=mach.ridge,
    )


def _logdet_chol(m):
    c = la.cholesky(m, lower=True)
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def _try_logdet(m):
    try:
        return _logdet_chol(m)
    except la.LinAlgError:
        return None


def _robust_inv(m):
    try:
        c = la.cho_factor(m)
        return la.cho_solve(c, np.eye(m.shape[0]))
    except la.LinAlgError:
        return la.inv(m + 1e-14 * np.linalg.norm(m) * np.eye(m.shape[0]))
