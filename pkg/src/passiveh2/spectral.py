"""Spectral factors of the shifted passivity function of the discrete plant.

factor_S produces S with S^H S = P_uy + P_uy^H + eps I on the unit circle
(S and S^-1 stable); factor_F produces F with F + F^H equal to the inverse
of the same function.  Both certificates come from a positive-real discrete
Riccati equation rather than LMI feasibility, so the storage matrix Sigma_P
is a byproduct.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from . import matkit
from .ssmodel import DiscreteStateSpace

__all__ = ["SpectralFactorS", "SpectralFactorF", "PassivityFactorizationError",
           "factor_S", "factor_F"]


class PassivityFactorizationError(Exception):
    """The plant fails the shifted positive-real condition at this epsilon."""


@dataclass
class SpectralFactorS:
    system: DiscreteStateSpace
    sigma_p: np.ndarray
    eps: float

    @property
    def delta_inv(self):
        return la.solve_triangular(self.system.d, np.eye(self.system.d.shape[0]))

    def inverse_dynamics(self):
        s = self.system
        return s.a - s.b @ la.solve(s.d, s.c)


@dataclass
class SpectralFactorF:
    system: DiscreteStateSpace
    sigma_f: np.ndarray
    eps: float


def factor_S(dplant, eps):
    """Minimum-phase factor of P_uy(q) + P_uy^H(q) + eps I.

    Solves the KYP-type Riccati equation for the storage matrix Sigma_P, then

        Delta_S^H Delta_S = (eps I + Delta_uy + Delta_uy^H) - Gam_u^H Sigma_P Gam_u
        Pi_S = Delta_S^-H (Pi_y - Gam_u^H Sigma_P Phi)

    with Delta_S the upper-triangular Cholesky factor (positive diagonal),
    which fixes the representative among all unitary-left-equivalent factors.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    phi, gam_u = dplant.phi, dplant.gam_u
    pi_y, delta_uy = dplant.pi_y, dplant.delta_uy
    n_u = dplant.n_u
    r0 = eps * np.eye(n_u) + delta_uy + delta_uy.T
    try:
        sigma_p = matkit.solve_dare(phi, gam_u, np.zeros_like(phi), -r0, -pi_y.T)
    except matkit.MatrixSolverError as exc:
        raise PassivityFactorizationError(
            f"shifted positive-real Riccati equation unsolvable at eps={eps}: {exc}"
        ) from exc
    m = r0 - gam_u.T @ sigma_p @ gam_u
    try:
        chol_lower = la.cholesky(0.5 * (m + m.T), lower=True)
    except la.LinAlgError as exc:
        raise PassivityFactorizationError(
            "factor feedthrough block is not positive definite; plant fails the "
            f"passivity margin at eps={eps}"
        ) from exc
    delta_s = chol_lower.T
    pi_s = la.solve_triangular(chol_lower, pi_y - gam_u.T @ sigma_p @ phi, lower=True)
    sys_s = DiscreteStateSpace(phi, gam_u, pi_s, delta_s)
    factor = SpectralFactorS(system=sys_s, sigma_p=sigma_p, eps=eps)
    if matkit.spectral_radius(factor.inverse_dynamics()) >= 1.0:
        raise PassivityFactorizationError("spectral factor is not minimum phase")
    return factor


def factor_F(s_factor):
    """Companion factor with F(q) + F^H(q) = [P_uy + P_uy^H + eps I]^-1."""
    s = s_factor.system
    phi_s, gam_s, pi_s, delta_s = s.a, s.b, s.c, s.d
    # Gam_S Delta_S^-1 via a transposed triangular solve (Delta_S upper triangular)
    gd = np.asarray(la.solve_triangular(delta_s.T, gam_s.T, lower=True).T)
    phi_f = phi_s - gd @ pi_s
    sigma_f = matkit.solve_stein(phi_f, gd @ gd.T)
    pi_f = -_ut_solve(delta_s, pi_s)
    gam_f = (gd - phi_f @ sigma_f @ pi_s.T) @ _ut_inv_transpose(delta_s)
    delta_f = 0.5 * _ut_solve(delta_s, (np.eye(pi_s.shape[0]) + pi_s @ sigma_f @ pi_s.T)) @ \
        _ut_inv_transpose(delta_s)
    sys_f = DiscreteStateSpace(phi_f, gam_f, pi_f, delta_f)
    if not sys_f.is_stable():
        raise PassivityFactorizationError("inverse factor dynamics unstable")
    return SpectralFactorF(system=sys_f, sigma_f=sigma_f, eps=s_factor.eps)


def _ut_solve(u, rhs):
    """u^-1 @ rhs for upper-triangular u."""
    return la.solve_triangular(u, rhs, lower=False)


def _ut_inv_transpose(u):
    """u^-H as a dense matrix for upper-triangular u."""
    n = u.shape[0]
    return la.solve_triangular(u, np.eye(n), lower=False).T
