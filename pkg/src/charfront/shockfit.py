"""Two-sided shock construction from the blowup point.

The solver runs in the normalized blowup gauge. An approximate curve
x = phi(t) splits a neighborhood of the origin into two wedges carrying the
singular cube-root data; the inner iteration freezes wave speeds and
coupling coefficients at the previous iterate and re-integrates every
family along its own characteristics: initial-value sweeps for the
distinguished family and the outgoing transverse families, boundary-value
sweeps at the curve for the impinging ones, with the jump data supplied by
the Rankine-Hugoniot connection. The outer iteration integrates the
averaged-Jacobian speed of the boundary traces to update phi and contracts
to the entropy shock.

The distinguished component is represented as (exact pure-wave transport
field) + (smooth correction grid): interpolation only ever touches smooth
quantities, so the cube-root singularity never degrades accuracy.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from ._num import gauss_legendre_01
from .errors import (BootstrapViolation, BracketViolation, EnvelopeViolation,
                     InnerDiverged, NewtonDiverged, NonHyperbolic, NoRoot,
                     OuterDiverged)
from .models import eigen_decompose


@dataclass
class SolverControls:
    """Grid and tolerance knobs for the two-sided solver."""

    n_time: int = 96              # time intervals on [0, eps]
    z_ratio: float = 1.15         # geometric grid ratio toward the curve
    z_inner_scale: float = 1e-10  # innermost offset = scale * eps^{3/2}
    domain_factor: float = 1.6    # z_out = factor * (max |lambda| + 1) * eps
    tol_inner: float = 1e-11
    tol_outer: float = 1e-10
    tol_rh: float = 1e-11
    max_inner: int = 80
    max_outer: int = 80
    c_cfl: float = 0.5            # substep control near the curve
    q_avg: int = 8                # Gauss-Legendre order, averaged Jacobian
    m_cap: float = 1e6            # envelope guard
    bracket_slack: float = 0.10


@dataclass
class ShockCurve:
    """Sampled discontinuity locus with monotone-cubic interpolation."""

    times: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self._phi_ip = PchipInterpolator(self.times, self.phi, extrapolate=True)
        self._sigma_ip = PchipInterpolator(self.times, self.sigma, extrapolate=True)

    def phi_at(self, t):
        return self._phi_ip(t)

    def sigma_at(self, t):
        return self._sigma_ip(t)

    @property
    def eps(self):
        return float(self.times[-1])


@dataclass
class TwoSidedSolution:
    """Fields on the shock-attached graded grid, z = x - phi(t)."""

    z_grid: np.ndarray            # positive offsets, ascending
    t_grid: np.ndarray
    w_plus: np.ndarray            # (n, K+1, Q) chart components, side x > phi
    w_minus: np.ndarray
    iteration_count: int
    converged: bool
    change_history: list
    workspace: object = field(default=None, repr=False)


@dataclass
class JumpTrace:
    times: np.ndarray
    jump_i: np.ndarray
    mean_i: np.ndarray
    jump_j: np.ndarray            # (K+1, n); column i-1 equals jump_i
    sigma: np.ndarray
    lax_ok: np.ndarray
    lax_margins: np.ndarray       # (K+1, 4)


# ---------------------------------------------------------------------------
# pointwise operations


def sigma_averaged(model, u_minus, u_plus, order=8):
    """Shock speed as the i-th eigenvalue of the segment-averaged Jacobian.

    Gauss-Legendre quadrature is exact for polynomial Jacobians of degree
    below 2*order; for coinciding states this collapses to the
    characteristic speed.
    """
    u_minus = np.asarray(u_minus, dtype=float)
    u_plus = np.asarray(u_plus, dtype=float)
    if np.array_equal(u_minus, u_plus):
        return float(model.lambdas(u_minus)[model.family - 1])
    nodes, weights = gauss_legendre_01(order)
    states = u_plus[None, :] * nodes[:, None] + u_minus[None, :] * (1.0 - nodes[:, None])
    A_bar = np.einsum("q,qij->ij", weights, model.jac(states))
    ev = np.linalg.eigvals(A_bar)
    if np.any(np.abs(ev.imag) > 1e-9 * (1.0 + np.abs(ev.real))):
        raise NonHyperbolic("averaged Jacobian has complex eigenvalues; states too far apart")
    return float(np.sort(ev.real)[model.family - 1])


def _gn_along(model, u, r, k, h=1e-5):
    lp = model.lambdas(u + h * r)[..., k - 1]
    lm = model.lambdas(u - h * r)[..., k - 1]
    return float((lp - lm) / (2 * h))


def rh_connect(model, u_minus, s, tol=1e-12, max_iter=60):
    """State and speed connected to u_minus across an i-shock of amplitude s.

    Solves the n jump conditions together with the amplitude constraint
    l_i(u_minus) . (u_minus - u_plus) = s by a damped Newton iteration
    started from the weak-shock asymptotics.
    """
    u_minus = np.asarray(u_minus, dtype=float)
    n, i = model.n, model.family
    ed = eigen_decompose(model, u_minus)
    r_i = ed.right(i)
    l_i = ed.left(i)
    lam_i = ed.lambdas[i - 1]
    gn = _gn_along(model, u_minus, r_i, i)

    u_plus = u_minus - s * r_i
    sigma = lam_i - 0.5 * s * gn
    f_minus = model.flux(u_minus)

    def residual(up, sg):
        res = np.empty(n + 1)
        res[:n] = sg * (u_minus - up) - (f_minus - model.flux(up))
        res[n] = l_i @ (u_minus - up) - s
        return res

    res = residual(u_plus, sigma)
    for _ in range(max_iter):
        nrm = np.linalg.norm(res)
        if nrm < tol * (1.0 + np.linalg.norm(f_minus)):
            return u_plus, float(sigma)
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = -sigma * np.eye(n) + model.jac(u_plus)
        J[:n, n] = u_minus - u_plus
        J[n, :n] = -l_i
        try:
            step = np.linalg.solve(J, res)
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged(f"singular Newton system in rh_connect: {exc}")
        scale = 1.0
        for _ in range(30):
            up_new = u_plus - scale * step[:n]
            sg_new = sigma - scale * step[n]
            res_new = residual(up_new, sg_new)
            if np.linalg.norm(res_new) < nrm:
                break
            scale *= 0.5
        else:
            raise NewtonDiverged(
                f"rh_connect stalled at |res|={nrm:.3e} (amplitude {s:.3e} too large?)")
        u_plus, sigma, res = up_new, sg_new, res_new
    raise NewtonDiverged(f"rh_connect did not converge for amplitude {s:.3e}")


def lax_check(model, u_minus, u_plus, sigma):
    """Entropy inequalities for an i-shock; margins are signed distances.

    Margin order: (sigma - lam_{i-1}(u-), lam_i(u-) - sigma,
    sigma - lam_i(u+), lam_{i+1}(u+) - sigma); +inf for absent neighbors.
    """
    i = model.family
    lam_m = model.lambdas(np.asarray(u_minus, dtype=float))
    lam_p = model.lambdas(np.asarray(u_plus, dtype=float))
    margins = np.array([
        sigma - lam_m[i - 2] if i > 1 else np.inf,
        lam_m[i - 1] - sigma,
        sigma - lam_p[i - 1],
        lam_p[i] - sigma if i < model.n else np.inf,
    ])
    return bool(np.all(margins > 0)), margins


# ---------------------------------------------------------------------------
# stage-0 field: exact pure-wave transport on both sides of the curve


class Stage0Field:
    """Pure i-wave transported from the data, evaluated by inverting the
    characteristic map b + (1+t) G(b) = x on the outer branch of the queried
    side (+1: largest root, -1: smallest)."""

    def __init__(self, data):
        self.data = data
        lo, hi = data.profile.support
        self._b_far = max(abs(lo), abs(hi)) + 1.0
        self._turn_cache = {}

    def eta(self, b, t):
        return b + (1.0 + t) * self.data.G(np.asarray(b, dtype=float))

    def eta_b(self, b, t):
        return 1.0 + (1.0 + t) * self.data.Gp(np.asarray(b, dtype=float))

    def turning_label(self, t, side):
        """Fold boundary G'(b) = -1/(1+t) on the given side of the origin."""
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            key = (float(t), side)
            cached = self._turn_cache.get(key)
            if cached is not None:
                return cached
        target = -1.0 / (1.0 + t)
        b = side * np.sqrt(np.maximum(t, 0.0) / (3.0 * (1.0 + t)))
        for _ in range(20):
            g1 = self.data.Gp(b) - target
            g2 = self.data.Gpp(b)
            step = np.where(np.abs(g2) > 1e-14, g1 / np.where(np.abs(g2) > 1e-14, g2, 1.0), 0.0)
            b_new = b - step
            b_new = np.where(side * b_new < 0, 0.5 * b, b_new)
            if np.all(np.abs(b_new - b) < 1e-15 * (1.0 + np.abs(b_new))):
                b = b_new
                break
            b = b_new
        if t.ndim == 0:
            self._turn_cache[key] = b
        return b

    def _bisect(self, x, t, side, b_turn, iters=48):
        lo = b_turn.copy()
        hi = np.full_like(x, side * (self._b_far + 1.0)) + x * (side > 0) + x * (side < 0)
        hi = side * np.maximum(side * hi, side * x + self._b_far)
        if side > 0:
            blo, bhi = lo, hi
        else:
            blo, bhi = hi, lo
        for _ in range(iters):
            mid = 0.5 * (blo + bhi)
            below = self.eta(mid, t) < x
            blo = np.where(below, mid, blo)
            bhi = np.where(below, bhi, mid)
        return 0.5 * (blo + bhi)

    def invert(self, x, t, side, b_seed=None):
        """Outer-branch label of position x at time t; warm Newton when a
        seed is supplied, bracketed bisection plus Newton polish otherwise."""
        x_in = np.asarray(x, dtype=float)
        shape = x_in.shape
        x = np.atleast_1d(x_in).astype(float)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
        b_turn = np.broadcast_to(np.atleast_1d(self.turning_label(t, side)), x.shape)

        if b_seed is None:
            b = self._bisect(x, t, side, np.array(b_turn, dtype=float))
            newton_iters = 6
        else:
            b = np.atleast_1d(np.array(b_seed, dtype=float))
            newton_iters = 40

        for _ in range(newton_iters):
            r = self.eta(b, t) - x
            d = self.eta_b(b, t)
            step = np.where(d > 1e-300, r / np.where(d > 1e-300, d, 1.0), 0.0)
            b_new = b - step
            b_new = np.where(side * b_new <= side * b_turn, 0.5 * (b + b_turn), b_new)
            done = np.abs(b_new - b) < 1e-15 * (1.0 + np.abs(b_new))
            b = b_new
            if np.all(done):
                break
        resid = np.abs(self.eta(b, t) - x)
        bad = resid > 1e-11 * (1.0 + np.abs(x))
        if np.any(bad):
            b_fix = self._bisect(x[bad], t[bad], side, np.array(b_turn[bad], dtype=float))
            for _ in range(4):
                r = self.eta(b_fix, t[bad]) - x[bad]
                d = self.eta_b(b_fix, t[bad])
                b_fix = b_fix - np.where(d > 1e-300, r / np.where(d > 1e-300, d, 1.0), 0.0)
            b[bad] = b_fix
        return b.reshape(shape)

    def value(self, b):
        return self.data.profile(np.asarray(b, dtype=float))


def beta_pm(profile, model, phi_t, t, slack=0.10):
    """Extreme t=0 labels reaching the curve point (phi(t), t).

    Solved in the original labels; after b = y tau (+ gauge corrections) the
    equation is the rescaled cubic zeta = y^3 - y, so the Newton seeds sit
    at the tau -> 0 roots y = +-1. Returns the t=0 positions
    beta = eta(b, 0) and enforces the (4/5, 6/5) t^{3/2} bracket with slack.
    """
    del model  # the profile's normalized system is authoritative
    if t == 0:
        return 0.0, 0.0
    if t < 0:
        raise ValueError("t must be nonnegative")
    s0 = Stage0Field(profile.data)
    tau = np.sqrt(t)
    out = {}
    for side in (+1, -1):
        b_turn = float(np.atleast_1d(s0.turning_label(np.asarray(t, dtype=float), side))[0])
        h_turn = float(s0.eta(b_turn, t)) - phi_t
        if side * h_turn >= 0:
            raise NoRoot(f"no side-{side:+d} characteristic reaches the curve at t={t}")
        seed = side * tau / np.sqrt(1.0 + t)
        b = float(s0.invert(np.asarray(phi_t), t, side, b_seed=np.asarray(seed)))
        out[side] = float(s0.eta(b, 0.0))
    ratio_p = out[+1] / t ** 1.5
    ratio_m = -out[-1] / t ** 1.5
    lo, hi = 0.8 * (1 - slack), 1.2 * (1 + slack)
    for name, ratio in (("beta_plus", ratio_p), ("beta_minus", ratio_m)):
        if not (lo < ratio < hi):
            raise BracketViolation(
                f"{name}/t^(3/2) = {ratio:.4f} outside ({lo:.3f}, {hi:.3f}) at t={t}")
    return out[-1], out[+1]


# ---------------------------------------------------------------------------
# stacked per-level interpolation


class _LevelInterp:
    """One monotone-cubic interpolant per time level over stacked columns,
    blended linearly in time. A single evaluation returns every field."""

    def __init__(self, z, stack, t_grid, with_derivative=False):
        # stack: (K+1, Q, F)
        self.t = t_grid
        self.ips = [PchipInterpolator(z, stack[k], axis=0, extrapolate=True)
                    for k in range(stack.shape[0])]
        self.dips = [ip.derivative() for ip in self.ips] if with_derivative else None

    def _bracket(self, t):
        tg = self.t
        k = int(np.clip(np.searchsorted(tg, t) - 1, 0, len(tg) - 2))
        t0, t1 = tg[k], tg[k + 1]
        a = 0.0 if t1 == t0 else min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return k, a

    def at(self, z_query, t):
        k, a = self._bracket(float(t))
        v = (1.0 - a) * self.ips[k](z_query) + a * self.ips[k + 1](z_query)
        return v

    def at_with_deriv(self, z_query, t):
        k, a = self._bracket(float(t))
        v = (1.0 - a) * self.ips[k](z_query) + a * self.ips[k + 1](z_query)
        d = (1.0 - a) * self.dips[k](z_query) + a * self.dips[k + 1](z_query)
        return v, d


# ---------------------------------------------------------------------------
# inner workspace


def _geometric_grid(inner, outer, ratio):
    m = int(np.ceil(np.log(outer / inner) / np.log(ratio))) + 1
    g = inner * ratio ** np.arange(m)
    g[-1] = outer
    return g


class _Side:
    """One wedge: correction field for the singular component plus the full
    set of transverse components on the graded grid."""

    def __init__(self, z, K, n):
        self.delta = np.zeros((K + 1, z.size))
        self.w_tr = np.zeros((n, K + 1, z.size))


class InnerWorkspace:
    """Grids, stage-0 evaluators, and frozen-iterate interpolants for one
    approximate curve."""

    def __init__(self, model, chart, profile, curve, controls):
        self.model = model
        self.chart = chart
        self.profile = profile
        self.curve = curve
        self.controls = controls
        self.n = model.n
        self.i = model.family
        self.data = profile.data
        self.s0 = Stage0Field(self.data)

        eps = curve.eps
        self.t_grid = curve.times
        self.K = len(self.t_grid) - 1
        self.phi_lv = curve.phi
        self.sigma_lv = curve.sigma

        lam0 = np.asarray(model.lambdas(chart.inverse(np.zeros(self.n))), dtype=float)
        self.lam_span = float(np.max(np.abs(lam0))) + 1.0
        z_in = controls.z_inner_scale * eps ** 1.5
        z_out = controls.domain_factor * self.lam_span * eps + 2.0 * eps ** 1.5
        self.z = _geometric_grid(z_in, z_out, controls.z_ratio)
        self.Q = self.z.size

        self.sides = {+1: _Side(self.z, self.K, self.n),
                      -1: _Side(self.z, self.K, self.n)}

        # node positions and stage-0 labels/values per side (fixed per curve)
        self.x_nodes, self.b0_nodes, self.w0_nodes = {}, {}, {}
        for sgn in (+1, -1):
            x = self.phi_lv[:, None] + sgn * self.z[None, :]
            t = np.broadcast_to(self.t_grid[:, None], x.shape)
            b = self.s0.invert(x, t, sgn)
            self.x_nodes[sgn] = x
            self.b0_nodes[sgn] = b
            self.w0_nodes[sgn] = self.s0.value(b)

        # t=0 label grids for the distinguished family, densified near the
        # crossing labels of every level
        beta_out = z_out + self.lam_span * eps * 1.2
        base = _geometric_grid(z_in, beta_out, controls.z_ratio)
        extra = {+1: [], -1: []}
        for k in range(1, self.K + 1):
            t = self.t_grid[k]
            for sgn in (+1, -1):
                b_hit = self.s0.invert(np.asarray(curve.phi[k]), t, sgn)
                beta_hit = abs(float(self.s0.eta(b_hit, 0.0)))
                for bump in (3e-9, 1e-7, 3e-6, 1e-4, 3e-3):
                    extra[sgn].append(beta_hit * (1.0 + bump))
        self.beta_labels, self.b_labels, self.wdata_labels = {}, {}, {}
        for sgn in (+1, -1):
            lab = np.unique(np.concatenate([base, np.asarray(extra[sgn])]))
            beta = sgn * lab if sgn > 0 else -lab[::-1]
            b = self.s0.invert(beta, np.zeros_like(beta), sgn)
            self.beta_labels[sgn] = beta
            self.b_labels[sgn] = b
            self.wdata_labels[sgn] = self.s0.value(b)

        # stage-0 trace values (limits along the curve)
        self.w0_trace = {}
        for sgn in (+1, -1):
            tr = np.zeros(self.K + 1)
            for k in range(1, self.K + 1):
                b = self.s0.invert(np.asarray(curve.phi[k]), self.t_grid[k], sgn)
                tr[k] = float(self.s0.value(b))
            self.w0_trace[sgn] = tr

        # closure results per level
        self.closure_minus = np.zeros((self.K + 1, self.n))
        self.closure_plus = np.zeros((self.K + 1, self.n))
        self.closure_sigma = np.zeros(self.K + 1)
        self.trace_i = {+1: np.zeros(self.K + 1), -1: np.zeros(self.K + 1)}

        self._interp = {}
        self._pcols = None

    # -- frozen-iterate interpolants ------------------------------------------

    def rebuild_interp(self):
        """Stacked interpolants of the frozen iterate: correction, transverse
        components, and their time derivatives at fixed z; z-derivatives come
        from the same splines."""
        n, i0 = self.n, self.i - 1
        self._cols = {"delta": 0}
        ncol = 1
        tr_idx = [j for j in range(n) if j != i0]
        for j in tr_idx:
            self._cols[f"w{j}"] = ncol
            ncol += 1
        for j in tr_idx:
            self._cols[f"wt{j}"] = ncol
            ncol += 1
        for sgn, side in self.sides.items():
            stack = np.empty((self.K + 1, self.Q, ncol))
            stack[..., 0] = side.delta
            for j in tr_idx:
                stack[..., self._cols[f"w{j}"]] = side.w_tr[j]
            for j in tr_idx:
                stack[..., self._cols[f"wt{j}"]] = np.gradient(
                    side.w_tr[j], self.t_grid, axis=0, edge_order=2)
            self._interp[sgn] = _LevelInterp(self.z, stack, self.t_grid,
                                             with_derivative=True)
        self._build_p_grids()

    def _build_p_grids(self):
        """Coupling coefficients p_jk = l_jk / l_jj of the transformed system
        on a coarsened grid (they are smooth and multiply small quantities)."""
        if self.n == 1:
            self._p_interp = None
            return
        n, i0 = self.n, self.i - 1
        kt = np.unique(np.r_[np.arange(0, self.K + 1, 2), self.K])
        kz = np.unique(np.r_[np.arange(0, self.Q, 2), self.Q - 1])
        self._p_interp = {}
        pairs = [(l, k) for l in range(n) for k in range(n)
                 if l != k and k != i0]
        self._pcols = {pair: a for a, pair in enumerate(pairs)}
        for sgn, side in self.sides.items():
            w = np.empty((kt.size, kz.size, n))
            for j in range(n):
                w[..., j] = side.w_tr[j][np.ix_(kt, kz)]
            w[..., i0] = self.w0_nodes[sgn][np.ix_(kt, kz)] + side.delta[np.ix_(kt, kz)]
            u = self.chart.inverse(w)
            F = self.model.jac(u)
            lam, RF = np.linalg.eig(F)
            order = np.argsort(lam.real, axis=-1)
            RF = np.take_along_axis(RF.real, order[..., None, :], axis=-1)
            LF = np.linalg.inv(RF)
            Jc = self.chart.jacobian_at(u)
            LA = LF @ np.linalg.inv(Jc)
            diag = np.diagonal(LA, axis1=-2, axis2=-1)
            P = LA / diag[..., :, None]
            stack = np.empty((kt.size, kz.size, len(pairs)))
            for pair, a in self._pcols.items():
                stack[..., a] = P[..., pair[0], pair[1]]
            self._p_interp[sgn] = _LevelInterp(self.z[kz], stack, self.t_grid[kt])

    # -- frozen-state evaluation ----------------------------------------------

    def state_at(self, x, t, sgn, b_seed=None):
        """Frozen full chart state at (x, t) on side sgn, plus the stage-0
        labels for warm restarts."""
        x = np.asarray(x, dtype=float)
        b = self.s0.invert(x, t, sgn, b_seed=b_seed)
        w0 = self.s0.value(b)
        z = sgn * (x - float(self.curve.phi_at(t)))
        z = np.clip(z, self.z[0], None)
        cols = self._interp[sgn].at(z, t)
        w = np.zeros(x.shape + (self.n,))
        w[..., self.i - 1] = w0 + cols[..., 0]
        for j in range(self.n):
            if j == self.i - 1:
                continue
            w[..., j] = cols[..., self._cols[f"w{j}"]]
        return w, b, cols, z

    def lamsrc_at(self, x, t, sgn, fam, b_seed=None):
        """Frozen wave speed of the given family and the coupling source of
        its transport equation, evaluated together.

        source = -sum_{k != fam, i} p_{fam,k} (dtW_k + (lam_fam - sigma) dzW_k);
        the singular component never appears differentiated (its coupling
        column vanishes in the normal form, and is dropped for chartless
        user models).
        """
        w, b, cols, z = self.state_at(x, t, sgn, b_seed=b_seed)
        u = self.chart.inverse(w)
        lam = self.model.lambdas(u)[..., fam - 1]
        if self.n == 1:
            return lam, np.zeros_like(lam), b
        # z-derivatives from the same stacked splines; with z = sgn (x - phi)
        # the material derivative reads W_t + sgn (lam - sigma) W_z
        _, dcols = self._interp[sgn].at_with_deriv(z, t)
        sig = float(self.curve.sigma_at(t))
        src = np.zeros_like(lam)
        pcols = self._p_interp[sgn].at(z, t)
        l0 = fam - 1
        for k in range(self.n):
            if k == l0 or k == self.i - 1:
                continue
            Dk = cols[..., self._cols[f"wt{k}"]] \
                + sgn * (lam - sig) * dcols[..., self._cols[f"w{k}"]]
            src -= pcols[..., self._pcols[(l0, k)]] * Dk
        return lam, src, b


# ---------------------------------------------------------------------------
# sweeps


def _substeps(controls, t0, t1):
    tmid = max(t1, 1e-30)
    n = int(np.ceil(abs(t1 - t0) / (controls.c_cfl * tmid)))
    return int(np.clip(n, 2, 8))


def _sweep_i_family(ws):
    """Forward label sweep of the distinguished family on both sides.

    Integrates position and accumulated source along each characteristic
    with RK4, drops labels once they impinge on the curve, and regrids the
    smooth correction delta = (data + integral) - stage0 onto the z nodes.
    """
    i = ws.i
    out = {}
    slope_min, slope_max = np.inf, -np.inf
    for sgn in (+1, -1):
        beta = ws.beta_labels[sgn]
        wdat = ws.wdata_labels[sgn]
        L = beta.size
        x = beta.copy()
        acc = np.zeros(L)
        alive = np.ones(L, dtype=bool)
        seeds = ws.b_labels[sgn].copy()
        delta_new = np.zeros((ws.K + 1, ws.Q))
        trace = np.zeros(ws.K + 1)

        for k in range(ws.K):
            t0, t1 = ws.t_grid[k], ws.t_grid[k + 1]
            nsub = _substeps(ws.controls, t0, t1)
            h = (t1 - t0) / nsub
            s = t0
            for _ in range(nsub):
                if not np.any(alive):
                    break
                idx = np.where(alive)[0]
                xx, aa = x[idx], acc[idx]
                sd = seeds[idx]

                def f(xv, ss):
                    lam, src, b = ws.lamsrc_at(xv, ss, sgn, i, b_seed=sd)
                    sd[:] = b
                    return lam, src

                k1x, k1a = f(xx, s)
                k2x, k2a = f(xx + 0.5 * h * k1x, s + 0.5 * h)
                k3x, k3a = f(xx + 0.5 * h * k2x, s + 0.5 * h)
                k4x, k4a = f(xx + h * k3x, s + h)
                x[idx] = xx + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
                acc[idx] = aa + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
                seeds[idx] = sd
                s += h
                zrel = sgn * (x[idx] - float(ws.curve.phi_at(s)))
                died = zrel <= 0
                if np.any(died):
                    alive[idx[died]] = False

            if not np.any(alive):
                raise InnerDiverged("all i-characteristics impinged before the horizon")

            z_l = sgn * (x[alive] - ws.phi_lv[k + 1])
            keep = z_l > 0
            z_s = z_l[keep]
            b_here = ws.s0.invert(x[alive][keep], t1, sgn, b_seed=seeds[alive][keep])
            d_s = wdat[alive][keep] + acc[alive][keep] - ws.s0.value(b_here)
            b_sel = beta[alive][keep]
            order = np.argsort(z_s)
            z_s, d_s, b_sel = z_s[order], d_s[order], b_sel[order]
            uniq = np.concatenate([[True], np.diff(z_s) > 1e-18 * (1 + z_s[1:])])
            z_s, d_s, b_sel = z_s[uniq], d_s[uniq], b_sel[uniq]
            ipd = PchipInterpolator(z_s, d_s, extrapolate=True)
            delta_new[k + 1] = ipd(ws.z)
            trace[k + 1] = ws.w0_trace[sgn][k + 1] + float(ipd(0.0))
            if b_sel.size > 3:
                detadb = sgn * np.diff(z_s) / np.diff(b_sel)
                detadb = detadb[np.isfinite(detadb)]
                if detadb.size:
                    slope_min = min(slope_min, float(np.min(detadb)))
                    slope_max = max(slope_max, float(np.max(detadb)))
        out[sgn] = (delta_new, trace)
    return out, (slope_min, slope_max)


def _sweep_transverse(ws, fam, sgn, incoming, boundary_t=None, boundary_v=None):
    """Level-to-level semi-Lagrangian transport of one transverse family on
    one side; impinging characteristics pick their boundary value at the
    curve from the closure trace."""
    K, Q = ws.K, ws.Q
    w_new = np.zeros((K + 1, Q))
    bip = PchipInterpolator(boundary_t, boundary_v, extrapolate=True) if incoming else None
    prev_ip = None

    for k in range(K):
        t0, t1 = ws.t_grid[k], ws.t_grid[k + 1]
        nsub = _substeps(ws.controls, t0, t1)
        h = (t0 - t1) / nsub  # backward in time
        x = ws.x_nodes[sgn][k + 1].copy()
        acc = np.zeros(Q)
        crossed = np.zeros(Q, dtype=bool)
        t_cross = np.zeros(Q)
        acc_cross = np.zeros(Q)
        seeds = ws.b0_nodes[sgn][k + 1].copy()
        s = t1
        for _ in range(nsub):
            if np.all(crossed):
                break
            idx = np.where(~crossed)[0]
            xx, aa = x[idx], acc[idx]
            sd = seeds[idx]

            def f(xv, ss):
                lam, src, b = ws.lamsrc_at(xv, ss, sgn, fam, b_seed=sd)
                sd[:] = b
                return lam, src

            z_before = sgn * (xx - float(ws.curve.phi_at(s)))
            k1x, k1a = f(xx, s)
            k2x, k2a = f(xx + 0.5 * h * k1x, s + 0.5 * h)
            k3x, k3a = f(xx + 0.5 * h * k2x, s + 0.5 * h)
            k4x, k4a = f(xx + h * k3x, s + h)
            x_new = xx + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
            a_new = aa + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
            s_new = s + h
            x[idx], acc[idx] = x_new, a_new
            seeds[idx] = sd
            if incoming:
                z_after = sgn * (x_new - float(ws.curve.phi_at(s_new)))
                hit = z_after <= 0
                if np.any(hit):
                    denom = np.maximum(z_before[hit] - z_after[hit], 1e-300)
                    frac = np.clip(z_before[hit] / denom, 0.0, 1.0)
                    ii = idx[hit]
                    crossed[ii] = True
                    t_cross[ii] = s + frac * h
                    # source integral accumulated only up to the crossing
                    acc_cross[ii] = aa[hit] + frac * (a_new[hit] - aa[hit])
            s = s_new

        vals = np.empty(Q)
        inside = ~crossed
        if np.any(inside):
            z_feet = sgn * (x[inside] - ws.phi_lv[k])
            z_feet = np.clip(z_feet, ws.z[0], None)
            if prev_ip is None:
                v_feet = np.zeros(z_feet.size)
            else:
                v_feet = prev_ip(np.minimum(z_feet, ws.z[-1]))
                v_feet = np.where(z_feet > ws.z[-1], 0.0, v_feet)
            # value(node) = value(foot) + int_{t0}^{t1} source; acc holds the
            # backward integral, so it enters with a minus sign
            vals[inside] = v_feet - acc[inside]
        if np.any(crossed):
            vals[crossed] = bip(t_cross[crossed]) - acc_cross[crossed]
        w_new[k + 1] = vals
        prev_ip = PchipInterpolator(ws.z, w_new[k + 1], extrapolate=True)
    return w_new


# ---------------------------------------------------------------------------
# boundary closure


def _closure_level(ws, k, guess=None):
    """Determined Rankine-Hugoniot system at one level: the incoming
    transverse components on each side plus the speed, given the outgoing
    traces and both singular-component traces."""
    n, i = ws.n, ws.i
    tol = ws.controls.tol_rh
    i0 = i - 1
    in_minus = [j for j in range(n) if j < i0]
    in_plus = [j for j in range(n) if j > i0]
    m = len(in_minus) + len(in_plus) + 1

    w_m = np.zeros(n)
    w_p = np.zeros(n)
    w_m[i0] = ws.trace_i[-1][k]
    w_p[i0] = ws.trace_i[+1][k]
    for j in range(n):
        if j == i0:
            continue
        if j < i0:
            w_p[j] = ws.sides[+1].w_tr[j][k, 0]
        else:
            w_m[j] = ws.sides[-1].w_tr[j][k, 0]

    if n == 1:
        u_m = ws.chart.inverse(w_m)
        u_p = ws.chart.inverse(w_p)
        sig = sigma_averaged(ws.model, u_m, u_p, ws.controls.q_avg)
        return w_m, w_p, sig

    def assemble(yv):
        wm = w_m.copy()
        wp = w_p.copy()
        for a, j in enumerate(in_minus):
            wm[j] = yv[a]
        for a, j in enumerate(in_plus):
            wp[j] = yv[len(in_minus) + a]
        return wm, wp, yv[-1]

    def residual(yv):
        wm, wp, sg = assemble(yv)
        um = ws.chart.inverse(wm)
        up = ws.chart.inverse(wp)
        return sg * (um - up) - (ws.model.flux(um) - ws.model.flux(up))

    y = np.zeros(m) if guess is None else guess.copy()
    res = residual(y)
    fscale = 1.0 + float(np.linalg.norm(ws.model.flux(ws.chart.inverse(w_m))))
    for _ in range(60):
        nrm = np.linalg.norm(res)
        if nrm < tol * fscale:
            break
        J = np.empty((n, m))
        h = 1e-8
        for a in range(m):
            yp = y.copy()
            yp[a] += h
            J[:, a] = (residual(yp) - res) / h
        try:
            step = np.linalg.solve(J, res) if n == m else np.linalg.lstsq(J, res, rcond=None)[0]
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged(f"singular closure system at level {k}: {exc}")
        scale = 1.0
        for _ in range(25):
            y_new = y - scale * step
            res_new = residual(y_new)
            if np.linalg.norm(res_new) < nrm:
                break
            scale *= 0.5
        else:
            raise NewtonDiverged(f"boundary closure stalled at level {k} (|res|={nrm:.2e})")
        y, res = y_new, res_new
    else:
        raise NewtonDiverged(f"boundary closure did not converge at level {k}")

    wm, wp, sg = assemble(y)
    return wm, wp, float(sg)


# ---------------------------------------------------------------------------
# inner driver


def solve_inner(model, chart, profile, curve, controls=None, warm=None,
                collect_ratios=None):
    """Frozen-coefficient two-sided iteration for a fixed curve.

    Each stage re-integrates the singular family from its t=0 data, the
    outgoing transverse families from zero data, closes the jump relations
    at the curve, and feeds the impinging families their boundary values.
    Geometric contraction is expected; persistently stalling ratios raise
    InnerDiverged.
    """
    controls = controls or SolverControls()
    ws = InnerWorkspace(model, chart, profile, curve, controls)
    if warm is not None and warm["delta"][+1].shape == ws.sides[+1].delta.shape:
        for sgn in (+1, -1):
            ws.sides[sgn].delta[:] = warm["delta"][sgn]
            ws.sides[sgn].w_tr[:] = warm["w_tr"][sgn]
        ws.closure_minus[:] = warm["closure_minus"]
        ws.closure_plus[:] = warm["closure_plus"]
        ws.closure_sigma[:] = warm["closure_sigma"]
        for sgn in (+1, -1):
            ws.trace_i[sgn][:] = warm["trace_i"][sgn]

    i0 = ws.i - 1
    history = []
    converged = False
    stall = 0
    stage = -1
    for stage in range(controls.max_inner):
        ws.rebuild_interp()
        old = {s: (ws.sides[s].delta.copy(), ws.sides[s].w_tr.copy()) for s in (+1, -1)}

        res, slope_stats = _sweep_i_family(ws)
        for sgn in (+1, -1):
            delta_new, trace = res[sgn]
            ws.sides[sgn].delta = delta_new
            ws.trace_i[sgn] = trace
        ws.slope_stats = slope_stats

        for j in range(ws.n):
            if j == i0:
                continue
            sgn = +1 if j < i0 else -1
            ws.sides[sgn].w_tr[j] = _sweep_transverse(ws, j + 1, sgn, incoming=False)

        guess = None
        for k in range(ws.K + 1):
            if k == 0:
                wm = np.zeros(ws.n)
                wp = np.zeros(ws.n)
                sig = float(ws.model.lambdas(ws.chart.inverse(wm))[i0])
                ws.closure_minus[0], ws.closure_plus[0], ws.closure_sigma[0] = wm, wp, sig
                continue
            wm, wp, sig = _closure_level(ws, k, guess=guess)
            ws.closure_minus[k], ws.closure_plus[k], ws.closure_sigma[k] = wm, wp, sig
            if ws.n > 1:
                guess = np.concatenate([wm[:i0], wp[i0 + 1:], [sig]])

        for j in range(ws.n):
            if j == i0:
                continue
            sgn = -1 if j < i0 else +1
            bvals = (ws.closure_minus if sgn < 0 else ws.closure_plus)[:, j]
            ws.sides[sgn].w_tr[j] = _sweep_transverse(
                ws, j + 1, sgn, incoming=True,
                boundary_t=ws.t_grid, boundary_v=bvals)

        d = 0.0
        for sgn in (+1, -1):
            od, ow = old[sgn]
            d = max(d, float(np.max(np.abs(ws.sides[sgn].delta - od))))
            if ws.n > 1:
                d = max(d, float(np.max(np.abs(ws.sides[sgn].w_tr - ow))))
        history.append(d)
        if len(history) >= 2 and history[-2] > 0:
            ratio = history[-1] / history[-2]
            stall = stall + 1 if ratio > 0.95 else 0
            if stall >= 3:
                raise InnerDiverged(
                    "inner iteration stopped contracting (ratios "
                    f"{[round(history[j + 1] / history[j], 3) for j in range(max(0, len(history) - 4), len(history) - 1)]})")
        if d < controls.tol_inner:
            converged = True
            break

    if collect_ratios is not None:
        collect_ratios.extend(history)

    _check_field_envelopes(ws)

    w_plus = np.array(ws.sides[+1].w_tr)
    w_minus = np.array(ws.sides[-1].w_tr)
    w_plus[i0] = ws.w0_nodes[+1] + ws.sides[+1].delta
    w_minus[i0] = ws.w0_nodes[-1] + ws.sides[-1].delta

    return TwoSidedSolution(z_grid=ws.z, t_grid=ws.t_grid, w_plus=w_plus,
                            w_minus=w_minus, iteration_count=stage + 1,
                            converged=converged, change_history=history,
                            workspace=ws)


def _check_field_envelopes(ws):
    """Fit the iterate's bootstrap envelope constants and guard the cap."""
    t = ws.t_grid[1:, None]
    met = (t ** 3 + ws.z[None, :] ** 2) ** (1.0 / 6.0)
    fits = {}
    for sgn, side in ws.sides.items():
        fits[f"correction_over_t:{sgn:+d}"] = float(np.max(np.abs(side.delta[1:]) / t))
        for j in range(ws.n):
            if j == ws.i - 1:
                continue
            fits[f"transverse_{j + 1}:{sgn:+d}"] = float(
                np.max(np.abs(side.w_tr[j][1:]) / (t * met)))
    implied = [v ** 0.5 if k.startswith("transverse") else v for k, v in fits.items()]
    m_fit = max([1.0] + implied)
    if m_fit > ws.controls.m_cap:
        worst = max(fits, key=fits.get)
        raise EnvelopeViolation(worst, f"implied bootstrap constant {m_fit:.3e} above cap")
    ws.envelope_fits = fits


# ---------------------------------------------------------------------------
# outer fixed point


def fit_shock(model, chart, profile, eps, controls=None, initial_curve=None):
    """Outer fixed point: integrate the averaged-Jacobian speed of the
    boundary traces until the curve reproduces itself.

    Returns (ShockCurve, TwoSidedSolution, JumpTrace, report dict).
    """
    controls = controls or SolverControls()
    K = controls.n_time
    times = np.linspace(0.0, eps, K + 1)
    curve = initial_curve or ShockCurve(times, np.zeros(K + 1), np.zeros(K + 1))

    report = {"outer_changes": [], "outer_ratios": [], "inner_ratios_first": [],
              "inner_iterations": [], "fitted_M": None, "error_flags": []}

    warm = None
    sol = None
    M_frozen = None
    stall = 0
    d = np.inf
    for outer in range(controls.max_outer):
        ratios = [] if outer == 0 else None
        sol = solve_inner(model, chart, profile, curve, controls, warm=warm,
                          collect_ratios=ratios)
        ws = sol.workspace
        if outer == 0:
            report["inner_ratios_first"] = ratios
            M_frozen = _freeze_bootstrap_constant(ws, profile)
            report["fitted_M"] = M_frozen
        report["inner_iterations"].append(sol.iteration_count)

        u_m = ws.chart.inverse(ws.closure_minus)
        u_p = ws.chart.inverse(ws.closure_plus)
        sigma_new = np.empty(K + 1)
        for k in range(K + 1):
            sigma_new[k] = sigma_averaged(model, u_m[k], u_p[k], controls.q_avg)

        d = float(np.max(np.abs(sigma_new - curve.sigma)))
        report["outer_changes"].append(d)
        if len(report["outer_changes"]) >= 2 and report["outer_changes"][-2] > 0:
            r = d / report["outer_changes"][-2]
            report["outer_ratios"].append(r)
            stall = stall + 1 if r > 0.99 else 0
            if stall >= 3:
                raise OuterDiverged(
                    f"outer ratios {report['outer_ratios'][-3:]} persistently above 0.99")

        phi_new = PchipInterpolator(times, sigma_new).antiderivative()(times)
        phi_new[0] = 0.0
        curve = ShockCurve(times, phi_new, sigma_new)
        _check_bootstrap(curve, M_frozen)

        warm = {"delta": {s: ws.sides[s].delta for s in (+1, -1)},
                "w_tr": {s: ws.sides[s].w_tr for s in (+1, -1)},
                "closure_minus": ws.closure_minus, "closure_plus": ws.closure_plus,
                "closure_sigma": ws.closure_sigma,
                "trace_i": {s: ws.trace_i[s] for s in (+1, -1)}}
        if d < controls.tol_outer:
            break
    else:
        raise OuterDiverged(
            f"no convergence in {controls.max_outer} outer stages (last change {d:.3e})")

    sol = solve_inner(model, chart, profile, curve, controls, warm=warm)
    trace = _assemble_trace(sol.workspace, curve, report)
    return curve, sol, trace, report


def _freeze_bootstrap_constant(ws, profile):
    vals = [2.0]
    if np.isfinite(profile.M_env):
        vals.append(profile.M_env)
    lam0 = np.asarray(ws.model.lambdas(ws.chart.inverse(np.zeros(ws.n))), dtype=float)
    if ws.n > 1:
        gap = float(np.min(np.diff(lam0)))
        vals.append(4.0 / gap)
    for k, v in getattr(ws, "envelope_fits", {}).items():
        vals.append(v ** 0.5 if k.startswith("transverse") else v)
    return float(max(vals))


def _check_bootstrap(curve, M):
    t = curve.times[1:]
    if np.any(np.abs(curve.phi[1:]) > M ** 4 * t ** 2 + 1e-14):
        worst = float(np.max(np.abs(curve.phi[1:]) / t ** 2))
        raise BootstrapViolation(
            f"|phi| exceeds M^4 t^2 (needs constant {worst:.3e} > {M ** 4:.3e})")
    if np.any(np.abs(curve.sigma[1:]) > 2 * M ** 4 * t + 1e-12):
        raise BootstrapViolation("|sigma| exceeds 2 M^4 t")


def _assemble_trace(ws, curve, report):
    K = ws.K
    i0 = ws.i - 1
    u_m = ws.chart.inverse(ws.closure_minus)
    u_p = ws.chart.inverse(ws.closure_plus)
    jump_full = ws.closure_minus - ws.closure_plus
    jump_i = jump_full[:, i0]
    mean_i = 0.5 * (ws.closure_minus[:, i0] + ws.closure_plus[:, i0])
    lax_ok = np.ones(K + 1, dtype=bool)
    margins = np.full((K + 1, 4), np.inf)
    rh_res = np.zeros(K + 1)
    for k in range(1, K + 1):
        ok, mg = lax_check(ws.model, u_m[k], u_p[k], curve.sigma[k])
        lax_ok[k] = ok
        margins[k] = mg
        rh = curve.sigma[k] * (u_m[k] - u_p[k]) - (
            ws.model.flux(u_m[k]) - ws.model.flux(u_p[k]))
        rh_res[k] = float(np.max(np.abs(rh)))
    report["rh_residuals"] = rh_res
    report["max_rh_residual"] = float(np.max(rh_res))
    report["rh_scale"] = 1.0 + float(np.linalg.norm(ws.model.flux(u_m[K])))
    report["slope_stats"] = getattr(ws, "slope_stats", None)
    report["envelope_fits"] = getattr(ws, "envelope_fits", None)
    return JumpTrace(times=ws.t_grid, jump_i=jump_i, mean_i=mean_i,
                     jump_j=jump_full, sigma=curve.sigma.copy(),
                     lax_ok=lax_ok, lax_margins=margins)


def uniqueness_probe(model, chart, profile, eps, guesses, controls=None):
    """Run the fixed point from several admissible initial curves and report
    the maximal pairwise distance of the converged loci."""
    controls = controls or SolverControls()
    K = controls.n_time
    times = np.linspace(0.0, eps, K + 1)
    curves = []
    for g in guesses:
        phi0 = np.asarray([g(t) for t in times], dtype=float)
        sig0 = np.gradient(phi0, times, edge_order=2)
        sig0[0] = 0.0
        start = ShockCurve(times, phi0, sig0)
        curve, *_ = fit_shock(model, chart, profile, eps, controls,
                              initial_curve=start)
        curves.append(curve)
    worst = 0.0
    for a in range(len(curves)):
        for b in range(a + 1, len(curves)):
            worst = max(worst, float(np.max(np.abs(curves[a].phi - curves[b].phi))))
    return {"max_pairwise_phi_distance": worst,
            "passes": worst < 10 * controls.tol_outer * max(1.0, eps),
            "curves": curves}
