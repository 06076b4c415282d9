"""Youla-domain plumbing.

Maps between controllers and Youla parameters, the jointly-realized warm
start pair (Q0, N0), the incremental plant V seen by the FIR increment, the
FIR shift-register realization, and the 2x2 block system U whose
positive-realness certifies the output-strict-passivity constraint.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .ssmodel import (
    DiscreteStateSpace,
    UnstableSystemError,
    WellPosednessError,
    feedback_connect,
    truncate_hsv,
)

__all__ = [
    "MarkovSequence",
    "IncrementalPlant",
    "q_from_k",
    "k_from_q",
    "warm_start_coprime",
    "build_incremental_plant",
    "total_q",
    "fir_realization",
    "build_U",
]


@dataclass
class MarkovSequence:
    """First n+1 Markov coefficients Q1(0..n), each n_u x n_u real."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim == 1:
            self.coeffs = self.coeffs.reshape(-1, 1, 1)
        if self.coeffs.ndim != 3 or self.coeffs.shape[1] != self.coeffs.shape[2]:
            raise ValueError("coeffs must be (n+1, n_u, n_u)")

    @property
    def order(self):
        return self.coeffs.shape[0] - 1

    @property
    def n_u(self):
        return self.coeffs.shape[1]

    def to_x(self):
        """Stack as x = vec{Q1(n), ..., Q1(0)} (column-major vec per block)."""
        return np.concatenate([self.coeffs[k].ravel(order="F") for k in range(self.order, -1, -1)])

    @classmethod
    def from_x(cls, x, n, n_u):
        x = np.asarray(x, dtype=float)
        if x.size != (n + 1) * n_u * n_u:
            raise ValueError(f"x has {x.size} entries, expected {(n + 1) * n_u * n_u}")
        blocks = x.reshape(n + 1, n_u * n_u)
        coeffs = np.stack(
            [blocks[n - k].reshape(n_u, n_u, order="F") for k in range(n + 1)], axis=0
        )
        return cls(coeffs)


def _cleanup(sys_, tol):
    if tol is None or sys_.n_states == 0 or not sys_.is_stable():
        return sys_
    return truncate_hsv(sys_, tol)


def q_from_k(k, p_uy, cleanup_tol=1e-10):
    """Youla parameter Q = K (I + P_uy K)^-1 of a controller."""
    q = feedback_connect(k, p_uy, sign=-1)
    return _cleanup(q, cleanup_tol)


def k_from_q(q, p_uy, cleanup_tol=1e-10):
    """Controller K = (I - Q P_uy)^-1 Q of a Youla parameter."""
    k = feedback_connect(q, p_uy, sign=+1)
    return _cleanup(k, cleanup_tol)


@dataclass
class JointCoprime:
    """Shared-state realization of the stacked warm-start pair [Q0; N0].

    Q0 = K0 (I + P_uy K0)^-1 and N0 = (I + P_uy K0)^-1 share the same loop
    states; keeping them joint is what makes the downstream U realization
    controllable.
    """

    system: DiscreteStateSpace  # outputs stacked [u0; v], input y
    n_u: int

    @property
    def q0(self):
        s = self.system
        return DiscreteStateSpace(s.a, s.b, s.c[: self.n_u], s.d[: self.n_u])

    @property
    def n0(self):
        s = self.system
        return DiscreteStateSpace(s.a, s.b, s.c[self.n_u :], s.d[self.n_u :])


def warm_start_coprime(k0, p_uy, cleanup_tol=1e-10):
    """Jointly realize Q0 and N0 from the warm-start loop."""
    n_u = p_uy.n_inputs
    if k0.n_inputs != n_u or k0.n_outputs != n_u:
        raise ValueError("controller dimensions must match the u<->y channel")
    m = np.eye(n_u) + k0.d @ p_uy.d
    try:
        minv = la.inv(m)
    except la.LinAlgError as exc:
        raise WellPosednessError("warm-start loop I + Dk Duy singular") from exc
    nk, npl = k0.n_states, p_uy.n_states
    # loop: u0 = K0 v, v = y - P_uy u0; states (x_k, x_p)
    cu = minv @ np.hstack([k0.c, -k0.d @ p_uy.c])
    du = minv @ k0.d
    cv = np.hstack([np.zeros((n_u, nk)), -p_uy.c]) - p_uy.d @ cu
    dv = np.eye(n_u) - p_uy.d @ du
    # dynamics: x_k+ = Ak x_k + Bk v ; x_p+ = Ap x_p + Bp u0
    a = np.block(
        [
            [k0.a + k0.b @ cv[:, :nk], k0.b @ cv[:, nk:]],
            [p_uy.b @ cu[:, :nk], p_uy.a + p_uy.b @ cu[:, nk:]],
        ]
    )
    b = np.vstack([k0.b @ dv, p_uy.b @ du])
    c = np.vstack([cu, cv])
    d = np.vstack([du, dv])
    joint = DiscreteStateSpace(a, b, c, d)
    if not joint.is_stable():
        raise UnstableSystemError("warm-start controller does not stabilize the plant")
    joint = _cleanup(joint, cleanup_tol)
    return JointCoprime(system=joint, n_u=n_u)


@dataclass
class IncrementalPlant:
    """Plant seen by the incremental Youla parameter Q1.

    Closed loop: T_fz = V_fz - V_u1z Q1 V_fy1.
    """

    v_fz: DiscreteStateSpace
    v_u1z: DiscreteStateSpace
    v_fy1: DiscreteStateSpace
    v_u1y1: DiscreteStateSpace
    coprime: JointCoprime = field(repr=False)
    tau: float = 1.0

    @property
    def n_u(self):
        return self.v_u1z.n_inputs


def build_incremental_plant(dplant, k0_dt, cleanup_tol=1e-10):
    """Subsume the warm start into the plant (filters G_L = M0^-1, G_R = I).

    V_fz = P_fz - P_uz Q0 P_fy, V_u1z = P_uz, V_fy1 = N0 P_fy,
    V_u1y1 = N0 P_uy; every block is reduced to minimal order and must be
    stable (otherwise the warm start is rejected).
    """
    cop = warm_start_coprime(k0_dt, dplant.p_uy, cleanup_tol)
    p_fz = dplant.channel("f", "z")
    p_fy = dplant.channel("f", "y")
    p_uz = dplant.channel("u", "z")
    v_fz = _cleanup(p_fz - p_uz * cop.q0 * p_fy, cleanup_tol)
    v_u1z = _cleanup(p_uz, cleanup_tol)
    v_fy1 = _cleanup(cop.n0 * p_fy, cleanup_tol)
    v_u1y1 = _cleanup(cop.n0 * dplant.p_uy, cleanup_tol)
    for name, blk in (("V_fz", v_fz), ("V_u1z", v_u1z), ("V_fy1", v_fy1), ("V_u1y1", v_u1y1)):
        if not blk.is_stable():
            raise UnstableSystemError(f"incremental plant block {name} unstable; warm start rejected")
    return IncrementalPlant(
        v_fz=v_fz, v_u1z=v_u1z, v_fy1=v_fy1, v_u1y1=v_u1y1, coprime=cop, tau=dplant.tau
    )


def total_q(k0_dt, n0, q1, cleanup_tol=1e-10):
    """Total Youla parameter Q = (K0 + Q1) N0."""
    return _cleanup((k0_dt + q1) * n0, cleanup_tol)


def fir_realization(seq):
    """Shift-register realization of Q1(q) = sum_k Q1(k) q^-k.

    Exactly n * n_u states; the impulse response reproduces the coefficients.
    """
    if not isinstance(seq, MarkovSequence):
        seq = MarkovSequence(seq)
    n, n_u = seq.order, seq.n_u
    if n == 0:
        return DiscreteStateSpace(
            np.zeros((0, 0)), np.zeros((0, n_u)), np.zeros((n_u, 0)), seq.coeffs[0]
        )
    nq = n * n_u
    phi = np.zeros((nq, nq))
    for k in range(n - 1):
        phi[(k + 1) * n_u : (k + 2) * n_u, k * n_u : (k + 1) * n_u] = np.eye(n_u)
    gam = np.zeros((nq, n_u))
    gam[:n_u] = np.eye(n_u)
    pi = np.hstack([seq.coeffs[k] for k in range(1, n + 1)])
    return DiscreteStateSpace(phi, gam, pi, seq.coeffs[0])


def build_U(q_sys, f_factor):
    """Block system U = [[Q, Q], [0, F]] whose positive-realness on the unit
    circle is equivalent to the controller lying in the OSP set."""
    f_sys = f_factor.system if hasattr(f_factor, "system") else f_factor
    n_u = q_sys.n_inputs
    if f_sys.n_inputs != n_u:
        raise ValueError("Q and F must share the channel dimension")
    nq, nf = q_sys.n_states, f_sys.n_states
    phi = la.block_diag(q_sys.a, f_sys.a)
    gam = np.block(
        [[q_sys.b, q_sys.b], [np.zeros((nf, n_u)), f_sys.b]]
    )
    pi = np.block([[q_sys.c, np.zeros((n_u, nf))], [np.zeros((n_u, nq)), f_sys.c]])
    delta = np.block([[q_sys.d, q_sys.d], [np.zeros((n_u, n_u)), f_sys.d]])
    return DiscreteStateSpace(phi, gam, pi, delta)
