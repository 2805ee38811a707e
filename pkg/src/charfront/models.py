"""Conservation systems: flux maps, eigenstructure, and coordinate charts.

A :class:`SystemModel` bundles the flux ``f``, its Jacobian, the family index
``i`` under study (1-based, matching the eigenvalue ordering), and an
admissible state box. Built-in systems (Burgers, p-system, full Euler, ideal
MHD, constant linear) ship analytic fluxes and, except for MHD, exact
Riemann-invariant charts that put the system in the off-diagonal normal form
the two-sided solver relies on (i-th Jacobian column diagonal in the chart
coordinates). The MHD chart is the linearization at the reference state and
is flagged approximate.

State arrays are vectorized: shape ``(..., n)`` everywhere.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BadParams, NonHyperbolic, UnknownModel

TOL_EIG = 1e-9
TOL_DEGENERATE = 1e-9


@dataclass(frozen=True)
class Box:
    """Axis-aligned admissible state region."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, u, slack=0.0):
        u = np.asarray(u, dtype=float)
        width = self.hi - self.lo
        return bool(np.all(u >= self.lo - slack * width) and np.all(u <= self.hi + slack * width))

    def sample(self, m, rng):
        """m uniform samples from the box (caller supplies the Generator)."""
        return self.lo + (self.hi - self.lo) * rng.random((m, self.lo.size))


@dataclass
class EigenData:
    """Sorted eigenvalues with bi-orthonormal left/right eigenvectors.

    ``rights[:, k]`` is the unit right eigenvector r_k (largest-magnitude
    entry positive), ``lefts[k, :]`` the matching left row with
    lefts @ rights = I.
    """

    lambdas: np.ndarray
    rights: np.ndarray
    lefts: np.ndarray

    def right(self, k):
        """r_k for 1-based family k."""
        return self.rights[:, k - 1]

    def left(self, k):
        return self.lefts[k - 1, :]


@dataclass
class CoordinateChart:
    """Invertible state map u -> w with forward(u_ref) = 0.

    ``exact_structure`` marks charts in which the i-th column of the
    transformed Jacobian is exactly diagonal (Riemann-invariant charts);
    ``approximate`` marks first-order charts valid to O(|w|^2) only.
    """

    forward: callable
    inverse: callable
    u_ref: np.ndarray
    applicable_box: Box
    name: str = "chart"
    exact_structure: bool = True
    approximate: bool = False
    jacobian: callable = None  # analytic d(forward)/du, optional

    def jacobian_at(self, u):
        """Chart Jacobian, analytic if supplied else central differences."""
        if self.jacobian is not None:
            return self.jacobian(u)
        u = np.asarray(u, dtype=float)
        n = u.shape[-1]
        h = 1e-7 * (1.0 + np.abs(u))
        cols = []
        for k in range(n):
            e = np.zeros_like(u)
            e[..., k] = h[..., k]
            cols.append((self.forward(u + e) - self.forward(u - e)) / (2 * h[..., k, None]))
        return np.stack(cols, axis=-1)


@dataclass
class SystemModel:
    """A 1-D n x n conservation system under study.

    ``family`` is the 1-based index i of the genuinely nonlinear family,
    matching the ascending eigenvalue order. ``eigenvalues``, if given, is an
    analytic map u -> sorted eigenvalue array used on solver hot paths;
    otherwise spectra come from the Jacobian.
    """

    n: int
    flux: callable
    family: int
    box: Box
    name: str = "model"
    jacobian: callable = None
    eigenvalues: callable = None
    h_jac: float = 1e-6

    def __post_init__(self):
        if not (1 <= self.family <= self.n):
            raise BadParams(f"family must lie in 1..{self.n}, got {self.family}")

    def jac(self, u):
        """Flux Jacobian, analytic if supplied else central differences with
        relative step h_jac * (1 + |u|)."""
        if self.jacobian is not None:
            return self.jacobian(u)
        u = np.asarray(u, dtype=float)
        h = self.h_jac * (1.0 + np.abs(u))
        cols = []
        for k in range(self.n):
            e = np.zeros_like(u)
            e[..., k] = h[..., k]
            cols.append((self.flux(u + e) - self.flux(u - e)) / (2 * h[..., k, None]))
        return np.stack(cols, axis=-1)

    def lambdas(self, u):
        """Sorted eigenvalues at u, vectorized over leading axes."""
        if self.eigenvalues is not None:
            return self.eigenvalues(u)
        A = self.jac(u)
        ev = np.linalg.eigvals(A)
        if np.any(np.abs(ev.imag) > TOL_EIG * (1.0 + np.abs(ev.real))):
            raise NonHyperbolic(f"complex eigenvalues at u={u}")
        return np.sort(ev.real, axis=-1)


def identity_chart(n, u_ref, box, name="identity"):
    u_ref = np.asarray(u_ref, dtype=float)
    return CoordinateChart(
        forward=lambda u: np.asarray(u, dtype=float) - u_ref,
        inverse=lambda w: np.asarray(w, dtype=float) + u_ref,
        u_ref=u_ref,
        applicable_box=box,
        name=name,
        exact_structure=(n == 1),
        jacobian=lambda u: np.broadcast_to(np.eye(n), np.shape(u) + (n,)).copy(),
    )


def eigen_decompose(model, u):
    """Eigen-decomposition of the flux Jacobian at a state.

    Eigenvalues ascend strictly; right eigenvectors are unit vectors with
    their largest-magnitude entry positive (ties broken by lowest index);
    left rows satisfy lefts @ rights = I. Raises NonHyperbolic on complex or
    clustered spectra.
    """
    u = np.asarray(u, dtype=float)
    A = np.asarray(model.jac(u), dtype=float)
    lam, R = np.linalg.eig(A)
    scale = 1.0 + np.max(np.abs(lam.real))
    if np.any(np.abs(lam.imag) > TOL_EIG * scale):
        raise NonHyperbolic(f"complex eigenvalues {lam} at u={u}")
    lam = lam.real
    order = np.argsort(lam, kind="stable")
    lam = lam[order]
    R = R.real[:, order]
    if model.n > 1 and np.min(np.diff(lam)) < TOL_DEGENERATE * scale:
        raise NonHyperbolic(f"eigenvalue gap below tolerance at u={u}: {lam}")
    # normalize and fix signs: largest-magnitude entry positive, lowest index on ties
    for k in range(model.n):
        r = R[:, k]
        r = r / np.linalg.norm(r)
        idx = int(np.argmax(np.abs(np.abs(r) - np.max(np.abs(r))) < 1e-12))
        if r[idx] < 0:
            r = -r
        R[:, k] = r
    L = np.linalg.inv(R)
    return EigenData(lambdas=lam, rights=R, lefts=L)


def genuine_nonlinearity(model, u, k):
    """Directional derivative of the k-th eigenvalue along its own right
    eigenvector, by central differences with step h_gn (sign-consistent
    tracking: strict hyperbolicity pins branches by sorted index)."""
    h_gn = 1e-5
    u = np.asarray(u, dtype=float)
    ed = eigen_decompose(model, u)
    r = ed.right(k)
    lp = eigen_decompose(model, u + h_gn * r).lambdas[k - 1]
    lm = eigen_decompose(model, u - h_gn * r).lambdas[k - 1]
    return float((lp - lm) / (2 * h_gn))


def hyperbolicity_gap(model, samples):
    """Minimum adjacent eigenvalue gap over the samples.

    Scalar systems return +inf (no pairs). The value calibrates the solver's
    4/M gap constant.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    if model.n == 1:
        for u in samples:
            eigen_decompose(model, u)
        return float("inf")
    gap = float("inf")
    for u in samples:
        lam = eigen_decompose(model, u).lambdas
        gap = min(gap, float(np.min(np.diff(lam))))
    return gap


# ---------------------------------------------------------------------------
# built-in systems


def _burgers(params):
    u_ref = float(params.get("u_ref", 0.0))
    radius = float(params.get("radius", 1.0))
    box = Box(np.array([u_ref - radius]), np.array([u_ref + radius]))

    def flux(u):
        u = np.asarray(u, dtype=float)
        return 0.5 * u * u

    def jacobian(u):
        u = np.asarray(u, dtype=float)
        return u[..., :, None].copy()

    def eigenvalues(u):
        return np.asarray(u, dtype=float).copy()

    model = SystemModel(n=1, flux=flux, family=1, box=box, name="burgers",
                        jacobian=jacobian, eigenvalues=eigenvalues)
    chart = identity_chart(1, [u_ref], box, name="burgers-identity")
    return model, chart


def _cubic_scalar(params):
    """Scalar flux u^2/2 - u^3/3, giving wave speed u - u^2.

    Used for synthetic profiles whose speed has curvature at the origin
    (second state-derivative of the eigenvalue equal to -2).
    """
    u_ref = float(params.get("u_ref", 0.0))
    radius = float(params.get("radius", 0.4))
    box = Box(np.array([u_ref - radius]), np.array([u_ref + radius]))

    def flux(u):
        u = np.asarray(u, dtype=float)
        return 0.5 * u * u - u ** 3 / 3.0

    def jacobian(u):
        u = np.asarray(u, dtype=float)
        return (u - u * u)[..., :, None].copy()

    def eigenvalues(u):
        u = np.asarray(u, dtype=float)
        return u - u * u

    model = SystemModel(n=1, flux=flux, family=1, box=box, name="cubic_scalar",
                        jacobian=jacobian, eigenvalues=eigenvalues)
    chart = identity_chart(1, [u_ref], box, name="cubic-identity")
    return model, chart


def _linear_diag(params):
    speeds = np.asarray(params.get("speeds", (-1.0, 0.0, 1.0)), dtype=float)
    n = speeds.size
    if n > 1 and np.min(np.diff(np.sort(speeds))) <= 0:
        raise BadParams("linear_diag speeds must be distinct")
    u_ref = np.asarray(params.get("u_ref", np.zeros(n)), dtype=float)
    radius = float(params.get("radius", 1.0))
    box = Box(u_ref - radius, u_ref + radius)
    D = np.diag(np.sort(speeds))
    family = int(params.get("family", (n + 1) // 2))

    def flux(u):
        return np.asarray(u, dtype=float) @ D.T

    def jacobian(u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(D, u.shape + (n,)).copy()

    def eigenvalues(u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(np.sort(np.diag(D)), u.shape).copy()

    model = SystemModel(n=n, flux=flux, family=family, box=box, name="linear_diag",
                        jacobian=jacobian, eigenvalues=eigenvalues)
    chart = identity_chart(n, u_ref, box, name="linear-identity")
    chart.exact_structure = True  # constant diagonal Jacobian
    return model, chart


def _recombined_chart(raw_forward, raw_inverse, raw_jacobian, model, u_ref, box, name):
    """Center a raw Riemann-invariant chart at u_ref and recombine linearly
    so that right eigenvectors map to coordinate axes there (transformed
    Jacobian diagonal at the origin). The recombination leaves the i-column
    structure intact because the i-th column of the mixing matrix stays
    proportional to e_i."""
    u_ref = np.asarray(u_ref, dtype=float)
    w_ref = raw_forward(u_ref)
    J_raw = raw_jacobian(u_ref)
    R = eigen_decompose(model, u_ref).rights
    B = np.linalg.inv(J_raw @ R)
    B_inv = J_raw @ R

    def forward(u):
        return (raw_forward(np.asarray(u, dtype=float)) - w_ref) @ B.T

    def inverse(w):
        return raw_inverse(np.asarray(w, dtype=float) @ B_inv.T + w_ref)

    def jacobian(u):
        return B @ raw_jacobian(np.asarray(u, dtype=float))

    return CoordinateChart(forward=forward, inverse=inverse, u_ref=u_ref,
                           applicable_box=box, name=name, exact_structure=True,
                           jacobian=jacobian)


def _psystem(params):
    gamma = float(params.get("gamma", 1.4))
    v_ref = float(params.get("v", 1.0))
    vel_ref = float(params.get("u", 0.0))
    if gamma <= 1 or v_ref <= 0:
        raise BadParams("p-system requires gamma > 1 and v > 0")
    family = int(params.get("family", 2))
    v_lo = float(params.get("v_lo", 0.5 * v_ref))
    v_hi = float(params.get("v_hi", 1.8 * v_ref))
    vel_r = float(params.get("vel_radius", 2.0))
    box = Box(np.array([v_lo, vel_ref - vel_r]), np.array([v_hi, vel_ref + vel_r]))
    u_ref = np.array([v_ref, vel_ref])

    def flux(u):
        u = np.asarray(u, dtype=float)
        v, vel = u[..., 0], u[..., 1]
        return np.stack([-vel, v ** (-gamma)], axis=-1)

    def jacobian(u):
        u = np.asarray(u, dtype=float)
        v = u[..., 0]
        J = np.zeros(u.shape[:-1] + (2, 2))
        J[..., 0, 1] = -1.0
        J[..., 1, 0] = -gamma * v ** (-gamma - 1.0)
        return J

    def sound(v):
        return np.sqrt(gamma) * v ** (-(gamma + 1.0) / 2.0)

    def eigenvalues(u):
        u = np.asarray(u, dtype=float)
        c = sound(u[..., 0])
        return np.stack([-c, c], axis=-1)

    model = SystemModel(n=2, flux=flux, family=family, box=box, name="psystem",
                        jacobian=jacobian, eigenvalues=eigenvalues)

    coef = 2.0 * np.sqrt(gamma) / (gamma - 1.0)

    def h_of_v(v):
        return -coef * v ** (-(gamma - 1.0) / 2.0)

    def v_of_h(h):
        return (-h / coef) ** (-2.0 / (gamma - 1.0))

    def raw_forward(u):
        v, vel = u[..., 0], u[..., 1]
        h = h_of_v(v)
        return np.stack([vel + h, vel - h], axis=-1)

    def raw_inverse(w):
        vel = 0.5 * (w[..., 0] + w[..., 1])
        h = 0.5 * (w[..., 0] - w[..., 1])
        return np.stack([v_of_h(h), vel], axis=-1)

    def raw_jacobian(u):
        u = np.asarray(u, dtype=float)
        c = sound(u[..., 0])
        J = np.empty(u.shape[:-1] + (2, 2))
        J[..., 0, 0] = c
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -c
        J[..., 1, 1] = 1.0
        return J

    chart = _recombined_chart(raw_forward, raw_inverse, raw_jacobian, model,
                              u_ref, box, "psystem-riemann")
    return model, chart


def _euler3(params):
    gamma = float(params.get("gamma", 1.4))
    rho_ref = float(params.get("rho", 1.0))
    vel_ref = float(params.get("u", 0.0))
    p_ref = float(params.get("p", 1.0))
    if gamma <= 1 or rho_ref <= 0 or p_ref <= 0:
        raise BadParams("euler3 requires gamma > 1, rho > 0, p > 0")
    family = int(params.get("family", 3))
    if family == 2:
        raise BadParams("euler3 contact family is linearly degenerate; pick family 1 or 3")

    radius = float(params.get("radius", 0.35))
    rho_lo, rho_hi = rho_ref * (1 - radius), rho_ref * (1 + radius)
    p_lo, p_hi = p_ref * (1 - radius), p_ref * (1 + radius)
    c_ref = np.sqrt(gamma * p_ref / rho_ref)
    m_r = rho_hi * (abs(vel_ref) + c_ref)
    E_hi = p_hi / (gamma - 1) + 0.5 * rho_hi * (abs(vel_ref) + c_ref) ** 2
    E_lo = p_lo / (gamma - 1)
    box = Box(np.array([rho_lo, -m_r, 0.5 * E_lo]), np.array([rho_hi, m_r, 1.5 * E_hi]))

    def prim(u):
        u = np.asarray(u, dtype=float)
        rho, m, E = u[..., 0], u[..., 1], u[..., 2]
        vel = m / rho
        p = (gamma - 1.0) * (E - 0.5 * m * vel)
        return rho, vel, p

    def flux(u):
        rho, vel, p = prim(u)
        E = np.asarray(u, dtype=float)[..., 2]
        return np.stack([rho * vel, rho * vel * vel + p, vel * (E + p)], axis=-1)

    def jacobian(u):
        rho, vel, p = prim(u)
        E = np.asarray(u, dtype=float)[..., 2]
        H = (E + p) / rho
        J = np.empty(np.shape(vel) + (3, 3))
        J[..., 0, 0] = 0.0
        J[..., 0, 1] = 1.0
        J[..., 0, 2] = 0.0
        J[..., 1, 0] = 0.5 * (gamma - 3.0) * vel ** 2
        J[..., 1, 1] = (3.0 - gamma) * vel
        J[..., 1, 2] = gamma - 1.0
        J[..., 2, 0] = vel * (0.5 * (gamma - 1.0) * vel ** 2 - H)
        J[..., 2, 1] = H - (gamma - 1.0) * vel ** 2
        J[..., 2, 2] = gamma * vel
        return J

    def eigenvalues(u):
        rho, vel, p = prim(u)
        c = np.sqrt(gamma * p / rho)
        return np.stack([vel - c, vel, vel + c], axis=-1)

    model = SystemModel(n=3, flux=flux, family=family, box=box, name="euler3",
                        jacobian=jacobian, eigenvalues=eigenvalues)

    two_over = 2.0 / (gamma - 1.0)

    def raw_forward(u):
        rho, vel, p = prim(u)
        c = np.sqrt(gamma * p / rho)
        s = np.log(p) - gamma * np.log(rho)
        return np.stack([vel - two_over * c, s, vel + two_over * c], axis=-1)

    def raw_inverse(w):
        w = np.asarray(w, dtype=float)
        vel = 0.5 * (w[..., 0] + w[..., 2])
        c = 0.25 * (gamma - 1.0) * (w[..., 2] - w[..., 0])
        s = w[..., 1]
        rho = (c * c / (gamma * np.exp(s))) ** (1.0 / (gamma - 1.0))
        p = rho * c * c / gamma
        E = p / (gamma - 1.0) + 0.5 * rho * vel * vel
        return np.stack([rho, rho * vel, E], axis=-1)

    u_ref = np.array([rho_ref, rho_ref * vel_ref,
                      p_ref / (gamma - 1) + 0.5 * rho_ref * vel_ref ** 2])

    def raw_jacobian(u):
        # rows: grad(vel - 2c/(g-1)), grad(s), grad(vel + 2c/(g-1)) in conservative vars
        rho, vel, p = prim(u)
        c = np.sqrt(gamma * p / rho)
        # dvel/d(rho,m,E) = (-vel/rho, 1/rho, 0)
        dvel = np.stack([-vel / rho, 1.0 / rho, np.zeros_like(rho)], axis=-1)
        # dp = (g-1)*(vel^2/2, -vel, 1)
        dp = (gamma - 1.0) * np.stack([0.5 * vel ** 2, -vel, np.ones_like(rho)], axis=-1)
        drho = np.stack([np.ones_like(rho), np.zeros_like(rho), np.zeros_like(rho)], axis=-1)
        dc = (0.5 * c)[..., None] * (dp / p[..., None] - drho / rho[..., None])
        ds = dp / p[..., None] - gamma * drho / rho[..., None]
        return np.stack([dvel - two_over * dc, ds, dvel + two_over * dc], axis=-2)

    chart = _recombined_chart(raw_forward, raw_inverse, raw_jacobian, model,
                              u_ref, box, "euler3-riemann")
    return model, chart


def mhd_background_eigenvalues(rho, H, S, gamma, A, c_v):
    """Closed-form seven-wave speeds at a quiescent MHD background state:
    +/- fast, +/- Alfven, +/- slow pairs around the zero-speed entropy wave."""
    H = np.asarray(H, dtype=float)
    H2mag = float(H @ H)
    c2 = A * gamma * rho ** (gamma - 1.0) * np.exp(S / c_v)
    base = H2mag / (2 * rho) + 0.5 * c2
    disc = np.sqrt((H2mag / rho + c2) ** 2 - 4.0 * H[0] ** 2 * c2 / rho)
    lam_fast = np.sqrt(base + 0.5 * disc)
    lam_slow = np.sqrt(base - 0.5 * disc)
    lam_alf = H[0] / np.sqrt(rho)
    return np.array([-lam_fast, -lam_alf, -lam_slow, 0.0, lam_slow, lam_alf, lam_fast])


def _mhd7(params):
    rho_b = float(params.get("rho", 1.0))
    H_b = np.asarray(params.get("H", (1.0, 1.0, 1.0)), dtype=float)
    S_b = float(params.get("S", 0.0))
    gamma = float(params.get("gamma", 5.0 / 3.0))
    A = float(params.get("A", 1.0))
    c_v = float(params.get("c_v", 1.0))
    if rho_b <= 0:
        raise BadParams("mhd7 requires rho > 0")
    if H_b.size != 3 or H_b[1] * H_b[2] == 0:
        raise BadParams("mhd7 requires transverse field components H2*H3 != 0")
    if H_b[0] <= 0:
        raise BadParams("mhd7 requires axial field H1 > 0")
    if gamma <= 1 or A <= 0 or c_v <= 0:
        raise BadParams("mhd7 requires gamma > 1, A > 0, c_v > 0")
    family = int(params.get("family", 7))
    if family == 4:
        raise BadParams("mhd7 entropy family (4) is linearly degenerate; pick another")
    H1 = H_b[0]

    # conservative state: (rho, m1, m2, m3, H2, H3, rho*S)
    def split(U):
        U = np.asarray(U, dtype=float)
        rho = U[..., 0]
        u1, u2, u3 = U[..., 1] / rho, U[..., 2] / rho, U[..., 3] / rho
        H2, H3 = U[..., 4], U[..., 5]
        S = U[..., 6] / rho
        return rho, u1, u2, u3, H2, H3, S

    def pressure(rho, S):
        return A * rho ** gamma * np.exp(S / c_v)

    def flux(U):
        rho, u1, u2, u3, H2, H3, S = split(U)
        P = pressure(rho, S)
        return np.stack([
            rho * u1,
            rho * u1 * u1 + P + 0.5 * (H2 * H2 + H3 * H3),
            rho * u1 * u2 - H1 * H2,
            rho * u1 * u3 - H1 * H3,
            u1 * H2 - H1 * u2,
            u1 * H3 - H1 * u3,
            rho * u1 * S,
        ], axis=-1)

    def jacobian(U):
        rho, u1, u2, u3, H2, H3, S = split(U)
        P = pressure(rho, S)
        z = np.zeros_like(rho)
        o = np.ones_like(rho)
        J = np.zeros(np.shape(rho) + (7, 7))
        J[..., 0, 1] = o
        J[..., 1, 0] = -u1 * u1 + gamma * P / rho - P * S / (c_v * rho)
        J[..., 1, 1] = 2 * u1
        J[..., 1, 4] = H2
        J[..., 1, 5] = H3
        J[..., 1, 6] = P / (c_v * rho)
        J[..., 2, 0] = -u1 * u2
        J[..., 2, 1] = u2
        J[..., 2, 2] = u1
        J[..., 2, 4] = -H1 * o
        J[..., 3, 0] = -u1 * u3
        J[..., 3, 1] = u3
        J[..., 3, 3] = u1
        J[..., 3, 5] = -H1 * o
        J[..., 4, 0] = -(u1 * H2 - H1 * u2) / rho
        J[..., 4, 1] = H2 / rho
        J[..., 4, 2] = -H1 / rho
        J[..., 4, 4] = u1
        J[..., 5, 0] = -(u1 * H3 - H1 * u3) / rho
        J[..., 5, 1] = H3 / rho
        J[..., 5, 3] = -H1 / rho
        J[..., 5, 5] = u1
        J[..., 6, 0] = -u1 * S
        J[..., 6, 1] = S
        J[..., 6, 6] = u1
        return J

    def eigenvalues(U):
        rho, u1, u2, u3, H2, H3, S = split(U)
        c2 = gamma * pressure(rho, S) / rho
        b2 = (H1 ** 2 + H2 ** 2 + H3 ** 2) / rho
        ca2 = H1 ** 2 / rho
        half = 0.5 * (c2 + b2)
        disc = np.sqrt(np.maximum((c2 + b2) ** 2 - 4.0 * c2 * ca2, 0.0))
        cf = np.sqrt(half + 0.5 * disc)
        cs = np.sqrt(np.maximum(half - 0.5 * disc, 0.0))
        ca = np.sqrt(ca2)
        return np.stack([u1 - cf, u1 - ca, u1 - cs, u1, u1 + cs, u1 + ca, u1 + cf],
                        axis=-1)

    U_ref = np.array([rho_b, 0.0, 0.0, 0.0, H_b[1], H_b[2], rho_b * S_b])
    radius = float(params.get("radius", 0.25))
    span = np.array([rho_b, rho_b, rho_b, rho_b, 1 + abs(H_b[1]), 1 + abs(H_b[2]),
                     rho_b * (1 + abs(S_b))]) * radius
    box = Box(U_ref - span, U_ref + span)

    model = SystemModel(n=7, flux=flux, family=family, box=box, name="mhd7",
                        jacobian=jacobian, eigenvalues=eigenvalues)

    # linearized chart: exact diagonalization at the background only
    ed = eigen_decompose(model, U_ref)
    Rm, Lm = ed.rights, ed.lefts

    chart = CoordinateChart(
        forward=lambda U: (np.asarray(U, dtype=float) - U_ref) @ Lm.T,
        inverse=lambda w: U_ref + np.asarray(w, dtype=float) @ Rm.T,
        u_ref=U_ref,
        applicable_box=box,
        name="mhd7-linearized",
        exact_structure=False,
        approximate=True,
        jacobian=lambda U: np.broadcast_to(Lm, np.shape(U) + (7,)).copy(),
    )
    return model, chart


_BUILTINS = {
    "burgers": _burgers,
    "cubic_scalar": _cubic_scalar,
    "psystem": _psystem,
    "euler3": _euler3,
    "mhd7": _mhd7,
    "linear_diag": _linear_diag,
}


def builtin(name, params=None):
    """Construct a built-in (SystemModel, CoordinateChart) pair by name."""
    if name not in _BUILTINS:
        raise UnknownModel(f"unknown builtin {name!r}; choose from {sorted(_BUILTINS)}")
    return _BUILTINS[name](params or {})


# ---------------------------------------------------------------------------
# manifest loading


def _polynomial_component(terms):
    terms = [(float(t["coeff"]), np.asarray(t["powers"], dtype=int)) for t in terms]

    def evaluate(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1])
        for coeff, powers in terms:
            out = out + coeff * np.prod(u ** powers, axis=-1)
        return out

    return evaluate


def _polynomial_flux(components):
    evals = [_polynomial_component(c) for c in components]

    def flux(u):
        return np.stack([e(u) for e in evals], axis=-1)

    return flux


def _rational_flux(num, den):
    nums = [_polynomial_component(c) for c in num]
    dens = [_polynomial_component(c) for c in den]

    def flux(u):
        return np.stack([ne(u) / de(u) for ne, de in zip(nums, dens)], axis=-1)

    return flux


def load_manifest(path_or_dict):
    """Load a model manifest (JSON): builtin reference or raw flux tables.

    Returns (SystemModel, CoordinateChart). User-defined fluxes get an
    identity chart (w = u); the solver then cannot exploit the off-diagonal
    normal-form structure and a warning is issued.
    """
    if isinstance(path_or_dict, dict):
        spec = path_or_dict
    else:
        with open(path_or_dict) as fh:
            spec = json.load(fh)

    if "builtin" in spec:
        entry = spec["builtin"]
        if isinstance(entry, str):
            name, params = entry, spec.get("params", {})
        else:
            name, params = entry["name"], entry.get("params", {})
        model, chart = builtin(name, params)
        if "family" in spec:
            model.family = int(spec["family"])
        return model, chart

    n = int(spec["n"])
    family = int(spec["family"])
    box = Box(np.asarray(spec["box"]["lo"], dtype=float),
              np.asarray(spec["box"]["hi"], dtype=float))
    fspec = spec["flux"]
    if fspec["type"] == "polynomial":
        flux = _polynomial_flux(fspec["components"])
    elif fspec["type"] == "rational":
        flux = _rational_flux(fspec["num"], fspec["den"])
    else:
        raise BadParams(f"unknown flux type {fspec['type']!r}")
    model = SystemModel(n=n, flux=flux, family=family, box=box,
                        name=spec.get("name", "user"))
    u_ref = np.asarray(spec.get("u_ref", box.center), dtype=float)
    chart = identity_chart(n, u_ref, box, name="user-identity")
    if n > 1:
        warnings.warn(
            "user model runs in raw state coordinates; the off-diagonal "
            "normal-form structure is not exploited and transverse coupling "
            "through the singular component is dropped", stacklevel=2)
    return model, chart
