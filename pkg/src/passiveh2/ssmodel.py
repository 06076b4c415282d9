"""State-space system algebra.

Continuous- and discrete-time LTI realizations with interconnection
operators, frequency responses, H2 norms, passivity margins, minimality
diagnostics, and gramian-based balanced truncation.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from . import matkit

__all__ = [
    "StateSpace",
    "DiscreteStateSpace",
    "Plant",
    "WellPosednessError",
    "PoleProximityError",
    "UnstableSystemError",
    "freq_response",
    "h2_norm_dt",
    "h2_norm_ct",
    "pr_margin",
    "osp_margin",
    "hinf_norm_grid",
    "feedback",
    "balanced_truncate",
    "truncate_hsv",
    "minreal_check",
    "default_grid_ct",
    "default_grid_dt",
]


class WellPosednessError(Exception):
    """Algebraic loop in an interconnection is singular."""


class PoleProximityError(Exception):
    """A frequency-grid point coincides with a system pole."""


class UnstableSystemError(Exception):
    """Operation requires a stable system."""


def _arr(m, rows=None, cols=None):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if rows is not None and cols is not None and m.size == 0:
        m = m.reshape(rows, cols)
    return m


@dataclass
class _Realization:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.a = _arr(self.a)
        if self.a.size == 0:
            self.a = self.a.reshape(0, 0)
        n = self.a.shape[0]
        self.d = _arr(self.d)
        p, m = self.d.shape
        self.b = _arr(self.b, n, m)
        self.c = _arr(self.c, p, n)
        if self.a.shape != (n, n):
            raise ValueError("A must be square")
        if self.b.shape != (n, m) or self.c.shape != (p, n):
            raise ValueError(
                f"dimension mismatch: A{self.a.shape} B{self.b.shape} "
                f"C{self.c.shape} D{self.d.shape}"
            )

    @property
    def n_states(self):
        return self.a.shape[0]

    @property
    def n_inputs(self):
        return self.d.shape[1]

    @property
    def n_outputs(self):
        return self.d.shape[0]

    def poles(self):
        return np.linalg.eigvals(self.a)

    # -- interconnections (shared by both time domains) --

    def _like(self, a, b, c, d):
        return type(self)(a, b, c, d)

    def __neg__(self):
        return self._like(self.a, self.b, -self.c, -self.d)

    def __add__(self, other):
        other = self._coerce(other)
        a = la.block_diag(self.a, other.a)
        b = np.vstack([self.b, other.b])
        c = np.hstack([self.c, other.c])
        return self._like(a, b, c, self.d + other.d)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __mul__(self, other):
        """Transfer-function product self * other (other acts first)."""
        other = self._coerce(other)
        if other.n_outputs != self.n_inputs:
            raise ValueError("cascade dimension mismatch")
        a = np.block(
            [
                [self.a, self.b @ other.c],
                [np.zeros((other.n_states, self.n_states)), other.a],
            ]
        )
        b = np.vstack([self.b @ other.d, other.b])
        c = np.hstack([self.c, self.d @ other.c])
        return self._like(a, b, c, self.d @ other.d)

    def _coerce(self, other):
        if isinstance(other, _Realization):
            if type(other) is not type(self):
                raise TypeError("cannot mix continuous and discrete systems")
            return other
        d = np.atleast_2d(np.asarray(other, dtype=float))
        return self._like(np.zeros((0, 0)), np.zeros((0, d.shape[1])), np.zeros((d.shape[0], 0)), d)

    def inverse(self):
        """Realization of the inverse transfer function (D must be invertible)."""
        if self.n_inputs != self.n_outputs:
            raise ValueError("inverse requires a square system")
        try:
            dinv = la.inv(self.d)
        except la.LinAlgError as exc:
            raise WellPosednessError("feedthrough is singular; inverse improper") from exc
        a = self.a - self.b @ dinv @ self.c
        return self._like(a, self.b @ dinv, -dinv @ self.c, dinv)

    def transpose(self):
        return self._like(self.a.T, self.c.T, self.b.T, self.d.T)


@dataclass
class StateSpace(_Realization):
    """Continuous-time realization (A, B, C, D) of C (sI - A)^-1 B + D."""

    def is_stable(self, margin=0.0):
        return matkit.is_hurwitz(self.a, margin)


@dataclass
class DiscreteStateSpace(_Realization):
    """Discrete-time realization (Phi, Gamma, Pi, Delta) of Pi (qI - Phi)^-1 Gamma + Delta."""

    def is_stable(self, margin=0.0):
        return matkit.spectral_radius(self.a) < 1.0 - margin if self.n_states else True


def static_gain(d, discrete=False):
    d = np.atleast_2d(np.asarray(d, dtype=float))
    cls = DiscreteStateSpace if discrete else StateSpace
    return cls(np.zeros((0, 0)), np.zeros((0, d.shape[1])), np.zeros((d.shape[0], 0)), d)


def identity_like(sys_, size=None):
    size = sys_.n_inputs if size is None else size
    return static_gain(np.eye(size), discrete=isinstance(sys_, DiscreteStateSpace))


@dataclass
class Plant:
    """Partitioned continuous plant {w,u} -> {z,y} with strictly proper w-channels."""

    a: np.ndarray
    b_w: np.ndarray
    b_u: np.ndarray
    c_z: np.ndarray
    c_y: np.ndarray
    d_uz: np.ndarray
    d_uy: np.ndarray
    name: str = ""
    notes: str = field(default="", repr=False)

    def __post_init__(self):
        self.a = _arr(self.a)
        n = self.a.shape[0]
        self.b_w = _arr(self.b_w)
        self.b_u = _arr(self.b_u)
        self.c_z = _arr(self.c_z)
        self.c_y = _arr(self.c_y)
        self.d_uz = _arr(self.d_uz)
        self.d_uy = _arr(self.d_uy)
        n_w, n_u = self.b_w.shape[1], self.b_u.shape[1]
        n_z = self.c_z.shape[0]
        checks = [
            (self.b_w.shape, (n, n_w), "Bw"),
            (self.b_u.shape, (n, n_u), "Bu"),
            (self.c_z.shape, (n_z, n), "Cz"),
            (self.c_y.shape, (n_u, n), "Cy"),
            (self.d_uz.shape, (n_z, n_u), "Duz"),
            (self.d_uy.shape, (n_u, n_u), "Duy"),
        ]
        for got, want, label in checks:
            if got != want:
                raise ValueError(f"plant block {label} has shape {got}, expected {want}")

    @property
    def n_states(self):
        return self.a.shape[0]

    @property
    def n_w(self):
        return self.b_w.shape[1]

    @property
    def n_u(self):
        return self.b_u.shape[1]

    @property
    def n_z(self):
        return self.c_z.shape[0]

    def channel(self, inp, out):
        b = {"w": self.b_w, "u": self.b_u}[inp]
        c = {"z": self.c_z, "y": self.c_y}[out]
        d = {
            ("w", "z"): np.zeros((self.n_z, self.n_w)),
            ("w", "y"): np.zeros((self.n_u, self.n_w)),
            ("u", "z"): self.d_uz,
            ("u", "y"): self.d_uy,
        }[(inp, out)]
        return StateSpace(self.a, b, c, d)

    @property
    def p_uy(self):
        return self.channel("u", "y")


# ---------------------------------------------------------------------------
# frequency responses and grids
# ---------------------------------------------------------------------------


def default_grid_ct(sys_or_a, n=4096, decades_pad=2.0):
    """Hybrid log+linear frequency grid spanning the eigenfrequency range.

    Covers `decades_pad` decades beyond the slowest/fastest pole magnitude
    (4 decades of span around the eigenfrequency range by default).
    """
    a = sys_or_a.a if hasattr(sys_or_a, "a") else np.asarray(sys_or_a)
    mags = np.abs(np.linalg.eigvals(a)) if a.size else np.array([1.0])
    mags = mags[mags > 1e-12]
    if mags.size == 0:
        mags = np.array([1.0])
    lo = 10 ** (np.floor(np.log10(mags.min())) - decades_pad)
    hi = 10 ** (np.ceil(np.log10(mags.max())) + decades_pad)
    n_log = n // 2
    wlog = np.logspace(np.log10(lo), np.log10(hi), n_log)
    wlin = np.linspace(lo, hi, n - n_log)
    return np.unique(np.concatenate([wlog, wlin]))


def default_grid_dt(n=4096):
    """Symmetric grid of angles in [-pi, pi] (endpoints staggered off +-pi)."""
    half = np.linspace(0.0, np.pi * (1 - 1e-9), n // 2)
    return np.unique(np.concatenate([-half, half]))


def freq_response(sys_, points):
    """Evaluate the transfer function on a grid.

    Continuous systems: points are frequencies omega, evaluated at s = j omega.
    Discrete systems: points are angles Omega, evaluated at q = exp(j Omega).
    Raises PolePproximityError if a grid point lands on a pole.
    """
    points = np.asarray(points, dtype=float)
    discrete = isinstance(sys_, DiscreteStateSpace)
    svals = np.exp(1j * points) if discrete else 1j * points
    n = sys_.n_states
    if n:
        poles = sys_.poles()
        scale = max(np.max(np.abs(poles)), 1.0)
        dist = np.min(np.abs(svals[:, None] - poles[None, :]), axis=1)
        if np.any(dist < 1e-12 * scale):
            raise PoleProximityError("grid point within 1e-12 of a system pole")
    out = np.empty((points.size, sys_.n_outputs, sys_.n_inputs), dtype=complex)
    eye = np.eye(n)
    for k, sv in enumerate(svals):
        if n:
            out[k] = sys_.c @ la.solve(sv * eye - sys_.a, sys_.b) + sys_.d
        else:
            out[k] = sys_.d
    return out


# ---------------------------------------------------------------------------
# norms and margins
# ---------------------------------------------------------------------------


def h2_norm_dt(sys_):
    """H2 norm of a stable discrete system: sqrt(tr{G^H S G} + tr{D^H D})."""
    if not sys_.is_stable():
        raise UnstableSystemError("h2_norm_dt requires a Schur-stable system")
    if sys_.n_states:
        sig = matkit.solve_stein(sys_.a.conj().T, sys_.c.conj().T @ sys_.c)
        val = np.trace(sys_.b.conj().T @ sig @ sys_.b)
    else:
        val = 0.0
    val = float(np.real(val) + np.sum(sys_.d**2))
    return float(np.sqrt(max(val, 0.0)))


def h2_norm_ct(sys_):
    """H2 norm of a stable, strictly proper continuous system."""
    if not sys_.is_stable():
        raise UnstableSystemError("h2_norm_ct requires a Hurwitz system")
    if np.any(sys_.d):
        raise ValueError("continuous H2 norm requires zero feedthrough")
    if not sys_.n_states:
        return 0.0
    sig = matkit.solve_lyap_ct(sys_.a, sys_.b @ sys_.b.T)
    return float(np.sqrt(max(np.real(np.trace(sys_.c @ sig @ sys_.c.T)), 0.0)))


def pr_margin(sys_, grid=None):
    """min over the grid of lambda_min(G + G^H) for a square channel."""
    if sys_.n_inputs != sys_.n_outputs:
        raise ValueError("positive-real margin requires a square system")
    if grid is None:
        grid = (
            default_grid_dt() if isinstance(sys_, DiscreteStateSpace) else default_grid_ct(sys_)
        )
    resp = freq_response(sys_, grid)
    herm = resp + np.conj(np.transpose(resp, (0, 2, 1)))
    return float(np.min(np.linalg.eigvalsh(herm)))


def osp_margin(k, eps, grid=None):
    """min over the grid of lambda_min(K^H + K - eps K^H K)."""
    if k.n_inputs != k.n_outputs:
        raise ValueError("output-strict-passivity margin requires a square system")
    if grid is None:
        grid = default_grid_dt() if isinstance(k, DiscreteStateSpace) else default_grid_ct(k)
    resp = freq_response(k, grid)
    resp_h = np.conj(np.transpose(resp, (0, 2, 1)))
    form = resp + resp_h - eps * np.matmul(resp_h, resp)
    return float(np.min(np.linalg.eigvalsh(form)))


def hinf_norm_grid(sys_, grid=None):
    """Grid estimate of the H-infinity norm (max singular value)."""
    if grid is None:
        grid = (
            default_grid_dt() if isinstance(sys_, DiscreteStateSpace) else default_grid_ct(sys_)
        )
    resp = freq_response(sys_, grid)
    return float(np.max(np.linalg.norm(resp, ord=2, axis=(1, 2))))


# ---------------------------------------------------------------------------
# feedback interconnections
# ---------------------------------------------------------------------------


def feedback_connect(fwd, back, sign=-1):
    """Closed loop u = fwd(r + sign * back(u)); returns the map r -> u."""
    if type(fwd) is not type(back):
        raise TypeError("cannot mix continuous and discrete systems")
    dk, dp = fwd.d, back.d
    loop = np.eye(fwd.n_outputs) - sign * dk @ dp
    try:
        m = la.inv(loop)
    except la.LinAlgError as exc:
        raise WellPosednessError("algebraic loop singular") from exc
    nf, nb = fwd.n_states, back.n_states
    # states x_f, x_b;  v = r + sign*y_b;  u = C_f x_f + D_f v;  y_b = C_b x_b + D_b u
    c_u = np.hstack([fwd.c, sign * fwd.d @ back.c])
    u_row = m @ c_u
    u_d = m @ fwd.d
    a = np.block(
        [
            [fwd.a, sign * fwd.b @ back.c],
            [np.zeros((nb, nf)), back.a],
        ]
    )
    a = a + np.vstack([sign * fwd.b @ dp, back.b]) @ u_row
    b = np.vstack([fwd.b, np.zeros((nb, fwd.n_inputs))]) + np.vstack(
        [sign * fwd.b @ dp, back.b]
    ) @ u_d
    return type(fwd)(a, b, u_row, u_d)


def feedback(plant, k):
    """Closed loop T_wz = P_wz - P_uz K (I + P_uy K)^-1 P_wy.

    `plant` is a continuous Plant or any discrete object exposing the
    partitioned blocks (phi, gam_w, gam_u, pi_z, pi_y, delta_wz, delta_wy,
    delta_uz, delta_uy); `k` follows the sign convention u = -K y.
    """
    if isinstance(plant, Plant):
        a, b_w, b_u = plant.a, plant.b_w, plant.b_u
        c_z, c_y = plant.c_z, plant.c_y
        d_uz, d_uy = plant.d_uz, plant.d_uy
        d_wz = np.zeros((plant.n_z, plant.n_w))
        d_wy = np.zeros((plant.n_u, plant.n_w))
        cls = StateSpace
        if not isinstance(k, StateSpace):
            raise TypeError("continuous plant requires a continuous controller")
    else:
        a, b_w, b_u = plant.phi, plant.gam_w, plant.gam_u
        c_z, c_y = plant.pi_z, plant.pi_y
        d_wz, d_wy = plant.delta_wz, plant.delta_wy
        d_uz, d_uy = plant.delta_uz, plant.delta_uy
        cls = DiscreteStateSpace
        if not isinstance(k, DiscreteStateSpace):
            raise TypeError("discrete plant requires a discrete controller")
    n, nk = a.shape[0], k.n_states
    loop = np.eye(k.n_outputs) + k.d @ d_uy
    try:
        m = la.inv(loop)
    except la.LinAlgError as exc:
        raise WellPosednessError("I + Duy Dk singular; closed loop ill-posed") from exc
    # u = -(Ck xk + Dk y),  y = Cy x + Dwy w + Duy u
    u_x = -m @ k.d @ c_y
    u_k = -m @ k.c
    u_w = -m @ k.d @ d_wy
    a_cl = np.block(
        [[a + b_u @ u_x, b_u @ u_k], [k.b @ (c_y + d_uy @ u_x), k.a + k.b @ d_uy @ u_k]]
    )
    b_cl = np.vstack([b_w + b_u @ u_w, k.b @ (d_wy + d_uy @ u_w)])
    c_cl = np.hstack([c_z + d_uz @ u_x, d_uz @ u_k])
    d_cl = d_wz + d_uz @ u_w
    return cls(a_cl, b_cl, c_cl, d_cl)


# ---------------------------------------------------------------------------
# gramians, balancing, minimality
# ---------------------------------------------------------------------------


def gramians(sys_):
    discrete = isinstance(sys_, DiscreteStateSpace)
    if not sys_.is_stable():
        raise UnstableSystemError("gramians require a stable system")
    if sys_.n_states == 0:
        z = np.zeros((0, 0))
        return z, z
    if discrete:
        wc = matkit.solve_stein(sys_.a, sys_.b @ sys_.b.T)
        wo = matkit.solve_stein(sys_.a.T, sys_.c.T @ sys_.c)
    else:
        wc = matkit.solve_lyap_ct(sys_.a, sys_.b @ sys_.b.T)
        wo = matkit.solve_lyap_ct(sys_.a.T, sys_.c.T @ sys_.c)
    return wc, wo


def _psd_sqrt(m):
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


def balanced_realization(sys_):
    """Balance a stable system; returns (balanced system, Hankel singular values)."""
    if sys_.n_states == 0:
        return sys_, np.zeros(0)
    wc, wo = gramians(sys_)
    rc = _psd_sqrt(wc)
    ro = _psd_sqrt(wo)
    u, sv, vt = np.linalg.svd(ro @ rc)
    # zero-gramian directions are truncated exactly; keep a well-defined basis
    tol = max(sv[0], 1e-300) * 1e-14
    keep = sv > tol
    svk = sv[keep]
    t = rc @ vt[keep].T @ np.diag(svk**-0.5)
    tinv = np.diag(svk**-0.5) @ u[:, keep].T @ ro
    bal = type(sys_)(tinv @ sys_.a @ t, tinv @ sys_.b, sys_.c @ t, sys_.d)
    return bal, svk


def truncate_hsv(sys_, rel_tol=1e-10):
    """Drop balanced states whose Hankel singular value is below rel_tol * max."""
    if sys_.n_states == 0:
        return sys_
    bal, sv = balanced_realization(sys_)
    if sv.size == 0:
        return type(sys_)(np.zeros((0, 0)), np.zeros((0, sys_.n_inputs)),
                          np.zeros((sys_.n_outputs, 0)), sys_.d)
    keep = int(np.sum(sv > rel_tol * sv[0]))
    return _take_states(bal, keep)


def _take_states(bal, r):
    return type(bal)(bal.a[:r, :r], bal.b[:r, :], bal.c[:, :r], bal.d)


def balanced_truncate(sys_, performance_probe, digits=4):
    """Truncate balanced states one at a time until the probe moves in the
    `digits`-th significant digit.

    The probe receives the candidate reduced system and returns a scalar
    performance figure.  Stops before the first state whose removal moves the
    probe by more than 0.5 * 10^-(digits-1) relative to the full value.
    """
    bal, sv = balanced_realization(sys_)
    bal = _take_states(bal, sv.size)
    j_full = performance_probe(sys_)
    tol = 0.5 * 10.0 ** (-(digits)) * abs(j_full) if j_full != 0 else 0.5 * 10.0 ** (-(digits))
    best = bal
    for r in range(sv.size - 1, -1, -1):
        cand = _take_states(bal, r)
        if not cand.is_stable():
            break
        try:
            j_red = performance_probe(cand)
        except Exception:
            break
        if abs(j_red - j_full) > tol:
            break
        best = cand
    return best


def minreal_check(sys_, rtol=1e-8):
    """PBH rank tests at each eigenvalue of A.

    Returns a dict with `controllable`, `observable`, and per-eigenvalue
    deficiency lists.
    """
    a, b, c = sys_.a, sys_.b, sys_.c
    n = a.shape[0]
    scale = max(np.linalg.norm(a), 1.0)
    unctrb, unobsv = [], []
    for lam in np.linalg.eigvals(a):
        pbh_c = np.hstack([lam * np.eye(n) - a, b])
        pbh_o = np.vstack([lam * np.eye(n) - a, c])
        if n and np.linalg.svd(pbh_c, compute_uv=False)[-1] <= rtol * scale:
            unctrb.append(lam)
        if n and np.linalg.svd(pbh_o, compute_uv=False)[-1] <= rtol * scale:
            unobsv.append(lam)
    return {
        "controllable": not unctrb,
        "observable": not unobsv,
        "uncontrollable_eigenvalues": unctrb,
        "unobservable_eigenvalues": unobsv,
    }
