"""Dense matrix kernels: Schur forms, Lyapunov/Stein/Sylvester-Stein solvers,
and stabilizing Riccati solutions via ordered Schur / deflating subspaces.

All solvers verify their defining-equation residual before returning and
raise a typed error when the operator is singular or no stabilizing solution
exists.  Plant data is real throughout the pipeline; complex inputs are
accepted where the algebra allows.
"""

import warnings

import numpy as np
import scipy.linalg as la

__all__ = [
    "MatrixSolverError",
    "SpectralOverlapError",
    "UnstableSpectrumError",
    "NoStabilizingSolutionError",
    "SchurConvergenceError",
    "IllConditionedWarning",
    "symmetrize",
    "schur_decompose",
    "solve_lyap_ct",
    "solve_stein",
    "solve_sylvester_stein",
    "SylvesterSteinSolver",
    "solve_care",
    "solve_dare",
    "eig",
    "svd",
    "solve_linear",
    "inv",
    "spectral_radius",
    "is_hurwitz",
]

COND_WARN = 1e12


class MatrixSolverError(Exception):
    """Base class for solver failures in this module."""


class SpectralOverlapError(MatrixSolverError):
    """The linear matrix-equation operator is singular (spectra clash)."""


class UnstableSpectrumError(MatrixSolverError):
    """A spectral-radius or Hurwitz precondition failed."""


class NoStabilizingSolutionError(MatrixSolverError):
    """Riccati pencil has eigenvalues on the stability boundary."""


class SchurConvergenceError(MatrixSolverError):
    """QR iteration failed to converge."""


class IllConditionedWarning(UserWarning):
    """Emitted when a solve touches a matrix with condition number > 1e12."""


def symmetrize(m, rtol=1e-8, name="matrix"):
    """Return (M + M^H)/2 after checking M is Hermitian to within `rtol`."""
    m = np.asarray(m)
    scale = max(np.linalg.norm(m, np.inf), 1e-300)
    asym = np.linalg.norm(m - m.conj().T, np.inf)
    if asym > rtol * scale:
        raise MatrixSolverError(
            f"{name} is not Hermitian: relative asymmetry {asym / scale:.3e} > {rtol:.1e}"
        )
    return 0.5 * (m + m.conj().T)


def spectral_radius(m):
    return float(np.max(np.abs(np.linalg.eigvals(m)))) if m.size else 0.0


def is_hurwitz(a, margin=0.0):
    return bool(np.all(np.linalg.eigvals(a).real < -margin)) if a.size else True


def schur_decompose(a, stable_first=False, discrete=False):
    """Schur decomposition A = Q T Q^H with optional stable-first ordering.

    With `stable_first`, eigenvalues in the open left half-plane (or open
    unit disc when `discrete`) are moved to the leading block of T.
    """
    a = np.asarray(a)
    sort = None
    if stable_first:
        sort = "iuc" if discrete else "lhp"
    try:
        if sort is None:
            t, q = la.schur(a, output="complex" if np.iscomplexobj(a) else "real")
        else:
            t, q, _ = la.schur(a, output="complex" if np.iscomplexobj(a) else "real", sort=sort)
    except la.LinAlgError as exc:  # pragma: no cover - extremely rare
        raise SchurConvergenceError(f"Schur iteration did not converge: {exc}") from exc
    resid = np.linalg.norm(a - q @ t @ q.conj().T)
    scale = max(np.linalg.norm(a), 1e-300)
    if resid > 1e-10 * scale:
        raise SchurConvergenceError(
            f"Schur reconstruction residual {resid / scale:.3e} exceeds 1e-10"
        )
    return q, t


def solve_lyap_ct(a, q):
    """Solve A X + X A^H + Q = 0 for Hermitian X.

    Requires the spectra of A and -A^H to be disjoint (always true for
    Hurwitz A, which is the pipeline use case).
    """
    a = np.asarray(a, dtype=float) if not np.iscomplexobj(a) else np.asarray(a)
    q = symmetrize(q, name="Q")
    eigs = np.linalg.eigvals(a)
    sums = eigs[:, None] + eigs[None, :].conj()
    if np.min(np.abs(sums)) < 1e-12 * max(np.max(np.abs(eigs)), 1.0):
        raise SpectralOverlapError("spectra of A and -A^H overlap; Lyapunov operator singular")
    x = la.solve_continuous_lyapunov(a, -q)
    x = 0.5 * (x + x.conj().T)
    _check_residual(a @ x + x @ a.conj().T + q, (a, x, q), "continuous Lyapunov")
    return x


def solve_stein(phi, q, radius_tol=1e-12):
    """Solve the Stein equation Sigma = Phi Sigma Phi^H + Q."""
    phi = np.asarray(phi)
    q = symmetrize(q, name="Q")
    if phi.size and spectral_radius(phi) >= 1.0 - radius_tol:
        raise UnstableSpectrumError(
            f"spectral radius {spectral_radius(phi):.6f} >= 1; Stein equation has no "
            "bounded solution"
        )
    x = la.solve_discrete_lyapunov(phi, q)
    x = 0.5 * (x + x.conj().T)
    _check_residual(phi @ x @ phi.conj().T + q - x, (phi, x, q), "Stein")
    return x


class SylvesterSteinSolver:
    """Solves Lambda = A Lambda B + C for many right-hand sides C.

    The Schur forms of A and B are computed once; each solve is then a pair
    of unitary transforms plus a triangular back-substitution sweep.
    """

    def __init__(self, a, b):
        a = np.atleast_2d(np.asarray(a))
        b = np.atleast_2d(np.asarray(b))
        ra, rb = spectral_radius(a), spectral_radius(b)
        if ra * rb >= 1.0 - 1e-12:
            raise SpectralOverlapError(
                f"rho(A)*rho(B) = {ra * rb:.6f} >= 1; Sylvester-Stein operator singular"
            )
        self.ta, self.qa = la.schur(a.astype(complex), output="complex")
        self.tb, self.qb = la.schur(b.astype(complex), output="complex")
        self._real = not (np.iscomplexobj(a) or np.iscomplexobj(b))
        self._eye = np.eye(a.shape[0])

    def solve(self, c):
        c = np.atleast_2d(np.asarray(c))
        cp = self.qa.conj().T @ c @ self.qb
        n2 = self.tb.shape[0]
        lam = np.zeros_like(cp, dtype=complex)
        ta = self.ta
        # column sweep: (T_B[j,j] T_A - I) lam_j = -(cp_j + T_A lam_{<j} T_B[<j,j])
        for j in range(n2):
            rhs = cp[:, j]
            if j:
                rhs = rhs + (ta @ lam[:, :j]) @ self.tb[:j, j]
            m = self.tb[j, j] * ta - self._eye
            lam[:, j] = la.solve_triangular(m, -rhs)
        out = self.qa @ lam @ self.qb.conj().T
        return out.real if self._real else out


def solve_sylvester_stein(a, b, c):
    """Solve Lambda = A Lambda B + C (requires rho(A) * rho(B) < 1)."""
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b))
    c = np.atleast_2d(np.asarray(c))
    if a.shape[0] == 0 or b.shape[0] == 0:
        return c.copy()
    lam = SylvesterSteinSolver(a, b).solve(c)
    resid = lam - a @ lam @ b - c
    _check_residual(resid, (a, b, c, lam), "Sylvester-Stein")
    return lam


def solve_care(a, b, q, r, s=None):
    """Stabilizing solution of A^H X + X A - (X B + S) R^-1 (X B + S)^H + Q = 0.

    Solved by ordered Schur decomposition of the Hamiltonian.  R may be
    indefinite (needed for positive-real Riccati equations) but must be
    invertible.  Raises NoStabilizingSolutionError when the Hamiltonian has
    eigenvalues on the imaginary axis.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    q = symmetrize(np.atleast_2d(q), name="Q")
    r = symmetrize(np.atleast_2d(r), name="R")
    n, m = b.shape
    s = np.zeros((n, m)) if s is None else np.atleast_2d(np.asarray(s, dtype=float))
    rinv_sh = la.solve(r, s.conj().T)
    rinv_bh = la.solve(r, b.conj().T)
    abar = a - b @ rinv_sh
    qbar = q - s @ rinv_sh
    ham = np.block([[abar, -b @ rinv_bh], [-qbar, -abar.conj().T]])
    scale = max(np.linalg.norm(ham), 1.0)
    heig = np.linalg.eigvals(ham)
    if np.min(np.abs(heig.real)) < 1e-9 * scale:
        raise NoStabilizingSolutionError(
            "Hamiltonian has eigenvalues on the imaginary axis; no stabilizing CARE solution"
        )
    t, u, sdim = la.schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise NoStabilizingSolutionError(
            f"stable Hamiltonian subspace has dimension {sdim}, expected {n}"
        )
    u1, u2 = u[:n, :n], u[n:, :n]
    if np.linalg.cond(u1) > COND_WARN:
        warnings.warn("deflating-subspace basis nearly singular", IllConditionedWarning)
    x = la.solve(u1.T, u2.T).T
    x = 0.5 * (x + x.conj().T)
    resid = a.conj().T @ x + x @ a - (x @ b + s) @ la.solve(r, (x @ b + s).conj().T) + q
    _check_residual(resid, (a, b, q, r, s, x), "CARE", tol=1e-8)
    return x


def solve_dare(phi, gam, q, r, s=None):
    """Stabilizing solution of the discrete Riccati equation

        Phi^H X Phi - X - (Phi^H X Gam + S)(R + Gam^H X Gam)^-1 (...)^H + Q = 0

    via the ordered QZ decomposition of the symplectic pencil.  The closed
    loop Phi - Gam K has spectral radius < 1.  R may be indefinite.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    gam = np.atleast_2d(np.asarray(gam, dtype=float))
    q = symmetrize(np.atleast_2d(q), name="Q")
    r = symmetrize(np.atleast_2d(r), name="R")
    n, m = gam.shape
    s = np.zeros((n, m)) if s is None else np.atleast_2d(np.asarray(s, dtype=float))
    if gam.size == 0 or not np.any(gam):
        # no input: Stein equation Phi^H X Phi - X + Q = 0
        return solve_stein(phi.conj().T, q)
    rinv_sh = la.solve(r, s.conj().T)
    abar = phi - gam @ rinv_sh
    qbar = q - s @ rinv_sh
    f = np.block([[abar, np.zeros((n, n))], [-qbar, np.eye(n)]])
    g = np.block([[np.eye(n), gam @ la.solve(r, gam.conj().T)], [np.zeros((n, n)), abar.conj().T]])
    aa, bb, alpha, beta, ql, z = la.ordqz(f, g, sort="iuc")
    lam = np.abs(alpha) / np.maximum(np.abs(beta), 1e-300)
    n_inside = int(np.sum(lam < 1.0))
    on_circle = np.abs(lam - 1.0) < 1e-9
    if np.any(on_circle) or n_inside != n:
        raise NoStabilizingSolutionError(
            "symplectic pencil has eigenvalues on the unit circle; no stabilizing DARE solution"
        )
    u1, u2 = z[:n, :n], z[n:, :n]
    if np.linalg.cond(u1) > COND_WARN:
        warnings.warn("deflating-subspace basis nearly singular", IllConditionedWarning)
    x = la.solve(u1.T, u2.T).T
    x = 0.5 * (x + x.conj().T).real
    inner = r + gam.conj().T @ x @ gam
    k = la.solve(inner, (phi.conj().T @ x @ gam + s).conj().T)
    resid = phi.conj().T @ x @ phi - x - (phi.conj().T @ x @ gam + s) @ k + q
    _check_residual(resid, (phi, gam, q, r, s, x), "DARE", tol=1e-8)
    if spectral_radius(phi - gam @ k) >= 1.0:
        raise NoStabilizingSolutionError("DARE solution is not stabilizing")
    return x


def eig(a):
    """Eigenvalues and right eigenvectors."""
    return np.linalg.eig(np.asarray(a))


def svd(m):
    return np.linalg.svd(np.asarray(m))


def solve_linear(a, b):
    """Solve A X = B with a conditioning warning above 1e12."""
    a = np.asarray(a)
    if np.linalg.cond(a) > COND_WARN:
        warnings.warn(
            f"solve_linear: condition number {np.linalg.cond(a):.2e} > {COND_WARN:.0e}",
            IllConditionedWarning,
        )
    return la.solve(a, np.asarray(b))


def inv(a):
    a = np.asarray(a)
    if np.linalg.cond(a) > COND_WARN:
        warnings.warn(
            f"inv: condition number {np.linalg.cond(a):.2e} > {COND_WARN:.0e}",
            IllConditionedWarning,
        )
    return la.inv(a)


def _check_residual(resid, operands, label, tol=1e-9):
    scale = max((np.linalg.norm(op) for op in operands if np.asarray(op).size), default=1.0)
    scale = max(scale, 1e-300)
    rel = np.linalg.norm(resid) / scale
    if rel > tol:
        raise MatrixSolverError(f"{label} solve residual {rel:.3e} exceeds {tol:.1e}")
