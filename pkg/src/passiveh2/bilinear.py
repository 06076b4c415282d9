"""Bilinear change of variables q = (1 + 2 tau s)/(1 - 2 tau s).

Maps the continuous plant to a partitioned discrete realization, builds the
auxiliary f-channel systems (the w-channels divided by 1 + q), converts
controllers between domains, and selects the transform constant tau.

The boundary frequency map is omega(Omega) = tan(Omega/2) / (2 tau): the
inverse map s = (q - 1)/((q + 1) 2 tau) evaluated on the unit circle gives
s = j tan(Omega/2)/(2 tau).
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .ssmodel import DiscreteStateSpace, StateSpace, feedback

__all__ = [
    "DiscretePlant",
    "SingularTransformError",
    "discretize_plant",
    "f_channel",
    "map_controller_c2d",
    "map_controller_d2c",
    "omega_of_angle",
    "angle_of_omega",
    "select_tau",
]


class SingularTransformError(Exception):
    """1/(2 tau) coincides with an eigenvalue of the dynamics matrix."""


def omega_of_angle(angle, tau):
    """Continuous frequency reached at q = exp(j * angle)."""
    return np.tan(np.asarray(angle) / 2.0) / (2.0 * tau)


def angle_of_omega(omega, tau):
    return 2.0 * np.arctan(2.0 * tau * np.asarray(omega))


@dataclass
class DiscretePlant:
    """Partitioned discrete plant produced by the bilinear map.

    The f-channel input matrix gam_f = tau * B_w realizes the strictly
    proper systems P_fz, P_fy = P_wz/(1+q), P_wy/(1+q).
    """

    phi: np.ndarray
    gam_w: np.ndarray
    gam_u: np.ndarray
    gam_f: np.ndarray
    pi_z: np.ndarray
    pi_y: np.ndarray
    delta_wz: np.ndarray
    delta_wy: np.ndarray
    delta_uz: np.ndarray
    delta_uy: np.ndarray
    tau: float

    @property
    def n_states(self):
        return self.phi.shape[0]

    @property
    def n_u(self):
        return self.gam_u.shape[1]

    @property
    def n_w(self):
        return self.gam_w.shape[1]

    @property
    def n_z(self):
        return self.pi_z.shape[0]

    def channel(self, inp, out):
        gam = {"w": self.gam_w, "u": self.gam_u, "f": self.gam_f}[inp]
        pi = {"z": self.pi_z, "y": self.pi_y}[out]
        if inp == "f":
            delta = np.zeros((pi.shape[0], gam.shape[1]))
        else:
            delta = getattr(self, f"delta_{inp}{out}")
        return DiscreteStateSpace(self.phi, gam, pi, delta)

    @property
    def p_uy(self):
        return self.channel("u", "y")


def _resolvent(a, tau):
    n = a.shape[0]
    m = np.eye(n) - 2.0 * tau * a
    if n and abs(la.det(m)) < 1e-14 * max(np.linalg.norm(m) ** n, 1e-30):
        raise SingularTransformError(
            f"I - 2 tau A singular at tau={tau}; pick a different transform constant"
        )
    try:
        return la.inv(m)
    except la.LinAlgError as exc:
        raise SingularTransformError(f"I - 2 tau A singular at tau={tau}") from exc


def _bilinear_blocks(a, b, c, d, tau):
    res = _resolvent(a, tau)
    phi = (np.eye(a.shape[0]) + 2.0 * tau * a) @ res
    gam = 2.0 * tau * res @ b
    pi = 2.0 * c @ res
    delta = d + 2.0 * tau * c @ res @ b
    return phi, gam, pi, delta


def discretize_plant(plant, tau):
    """Apply the bilinear map to every channel of a partitioned plant."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    res = _resolvent(plant.a, tau)
    n = plant.n_states
    phi = (np.eye(n) + 2.0 * tau * plant.a) @ res
    gam_w = 2.0 * tau * res @ plant.b_w
    gam_u = 2.0 * tau * res @ plant.b_u
    pi_z = 2.0 * plant.c_z @ res
    pi_y = 2.0 * plant.c_y @ res
    return DiscretePlant(
        phi=phi,
        gam_w=gam_w,
        gam_u=gam_u,
        gam_f=tau * plant.b_w,
        pi_z=pi_z,
        pi_y=pi_y,
        delta_wz=2.0 * tau * plant.c_z @ res @ plant.b_w,
        delta_wy=2.0 * tau * plant.c_y @ res @ plant.b_w,
        delta_uz=plant.d_uz + 2.0 * tau * plant.c_z @ res @ plant.b_u,
        delta_uy=plant.d_uy + 2.0 * tau * plant.c_y @ res @ plant.b_u,
        tau=tau,
    )


def f_channel(dplant):
    """The strictly proper pair (P_fz, P_fy) = (P_wz, P_wy)/(1+q)."""
    p_fz = DiscreteStateSpace(
        dplant.phi, dplant.gam_f, dplant.pi_z, np.zeros((dplant.n_z, dplant.n_w))
    )
    p_fy = DiscreteStateSpace(
        dplant.phi, dplant.gam_f, dplant.pi_y, np.zeros((dplant.n_u, dplant.n_w))
    )
    return p_fz, p_fy


def map_controller_c2d(k, tau):
    """K_tilde(q) = K_hat(s(q)) with s = (q-1)/((q+1) 2 tau)."""
    if not isinstance(k, StateSpace):
        raise TypeError("map_controller_c2d expects a continuous system")
    phi, gam, pi, delta = _bilinear_blocks(k.a, k.b, k.c, k.d, tau)
    return DiscreteStateSpace(phi, gam, pi, delta)


def map_controller_d2c(k, tau):
    """Inverse bilinear map; requires no pole of K_tilde at q = -1."""
    if not isinstance(k, DiscreteStateSpace):
        raise TypeError("map_controller_d2c expects a discrete system")
    n = k.n_states
    m = k.a + np.eye(n)
    if n and np.min(np.abs(np.linalg.eigvals(k.a) + 1.0)) < 1e-12:
        raise SingularTransformError("discrete pole at q = -1; inverse map singular")
    minv = la.inv(m) if n else m
    a = (k.a - np.eye(n)) @ minv / (2.0 * tau)
    b = minv @ k.b / tau
    c = k.c @ minv
    d = k.d - k.c @ minv @ k.b
    return StateSpace(a, b, c, d)


def _vmax_modulus(eigs, tau):
    num = np.abs(1.0 + 2.0 * tau * eigs)
    den = np.abs(1.0 - 2.0 * tau * eigs)
    if np.any(den < 1e-14):
        return np.inf
    return float(np.max(num / den))


def select_tau(plant, k0, tau_range=None, seed_points=200, tol=1e-4):
    """Pick tau minimizing the spectral radius of the discretized warm-start
    closed loop (the dynamics matrix of the incremental plant).

    Golden-section refinement over a log-spaced seed grid; ties broken
    toward smaller tau.  Returns (tau_star, seed_taus, seed_radii).
    """
    a_cl = feedback(plant, k0).a
    eigs = np.linalg.eigvals(a_cl)
    scale = max(np.linalg.norm(plant.a), 1e-12)
    if tau_range is None:
        tau_range = (1e-3 / scale, 1e3 / scale)
    lo, hi = tau_range
    if not (0 < lo < hi):
        raise ValueError("tau_range must be a positive increasing interval")
    taus = np.logspace(np.log10(lo), np.log10(hi), seed_points)
    radii = np.array([_vmax_modulus(eigs, t) for t in taus])
    finite = np.isfinite(radii)
    if not np.any(finite):
        raise SingularTransformError("transform singular across the whole tau range")
    order = np.argsort(radii[finite], kind="stable")
    k = np.flatnonzero(finite)[order[0]]
    # flat objective (e.g. static plant): return the range midpoint
    if np.ptp(radii[finite]) < 1e-12 * (1.0 + radii[finite].min()):
        return 0.5 * (lo + hi), taus, radii
    a = taus[max(k - 1, 0)]
    b = taus[min(k + 1, len(taus) - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = _vmax_modulus(eigs, x1), _vmax_modulus(eigs, x2)
    while b - a > tol:
        if f1 <= f2:  # prefer the left half on ties: smaller tau
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = _vmax_modulus(eigs, x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = _vmax_modulus(eigs, x2)
    return 0.5 * (a + b), taus, radii
