"""Simple-wave evolution, geometric blowup location, and normalization.

The wave of the distinguished family i rides characteristics
x = beta + (t+1) G(beta) with G(beta) the i-th wave speed of the pure
i-states. Focusing of these lines at the global minimum of G' produces the
blowup; an affine space-time/state change then pins the standard gauge
G(0)=0, G'(0)=-1, G''(0)=0, G'''(0)=6 and unit state-derivative of the wave
speed, which the downstream pre-shock and shock-fitting formulas assume.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import InterpolatedUnivariateSpline

from ._num import fd1, fd2, fd3, fd4, golden_minimize
from .errors import Degenerate, NoBlowup, NotInvertible
from .models import Box, CoordinateChart, SystemModel

TOL_ND = 1e-8


def _bump_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.maximum(s, 1e-300)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.maximum(1.0 - s, 1e-300)), 0.0)
    return a / (a + b)


class PolynomialBumpProfile:
    """Polynomial data times a smooth cutoff with plateau.

    w0(beta) = poly(beta) * cutoff(beta); cutoff is identically 1 on
    [-plateau, plateau] and 0 outside [-radius, radius], so derivatives of
    any order inside the plateau are exact polynomial derivatives.
    """

    def __init__(self, coeffs, plateau, radius, center=0.0):
        if not 0 < plateau < radius:
            raise ValueError("need 0 < plateau < radius")
        self.poly = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
        self._dpoly = {m: self.poly.deriv(m) for m in (1, 2, 3, 4)}
        self.plateau = float(plateau)
        self.radius = float(radius)
        self.center = float(center)
        self.support = (self.center - self.radius, self.center + self.radius)
        self.has_analytic_derivatives = True

    def _cutoff(self, beta):
        s = (self.radius - np.abs(beta - self.center)) / (self.radius - self.plateau)
        return _bump_step(s)

    def __call__(self, beta):
        beta = np.asarray(beta, dtype=float)
        return self.poly(beta) * self._cutoff(beta)

    def deriv(self, beta, order=1):
        """Exact inside the plateau, finite differences in the cutoff skirt."""
        beta = np.asarray(beta, dtype=float)
        inner = np.abs(beta - self.center) <= self.plateau * (1 - 1e-12)
        out = np.empty(beta.shape)
        out[inner] = self._dpoly[order](beta[inner])
        if np.any(~inner):
            h = 1e-3 * (self.radius - self.plateau)
            stencil = {1: fd1, 2: fd2, 3: fd3, 4: fd4}[order]
            out[~inner] = stencil(self.__call__, beta[~inner], h)
        return out


class TabulatedProfile:
    """Samples reconstructed by a quintic spline (order 5 keeps C^4)."""

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._spline = InterpolatedUnivariateSpline(x, y, k=5, ext="const")
        self.support = (float(x[0]), float(x[-1]))
        self.has_analytic_derivatives = True  # spline derivatives are exact

    def __call__(self, beta):
        beta = np.asarray(beta, dtype=float)
        return self._spline(beta)

    def deriv(self, beta, order=1):
        return self._spline.derivative(order)(np.asarray(beta, dtype=float))


class TransformedProfile:
    """w0 composed with the normalization's affine label/state change."""

    def __init__(self, base, beta_star, s_space, kappa, w_i_star):
        self.base = base
        self.beta_star = beta_star
        self.s_space = s_space
        self.kappa = kappa
        self.w_i_star = w_i_star
        lo, hi = base.support
        self.support = ((lo - beta_star) / s_space, (hi - beta_star) / s_space)
        self.has_analytic_derivatives = getattr(base, "has_analytic_derivatives", False)

    def __call__(self, beta):
        beta = np.asarray(beta, dtype=float)
        return self.kappa * (self.base(self.beta_star + self.s_space * beta) - self.w_i_star)

    def deriv(self, beta, order=1):
        beta = np.asarray(beta, dtype=float)
        return self.kappa * self.s_space ** order * self.base.deriv(
            self.beta_star + self.s_space * beta, order)


@dataclass
class SimpleWaveData:
    """Initial i-simple wave: scalar profile in chart coordinates plus the
    derived wave-speed map G."""

    model: SystemModel
    chart: CoordinateChart
    profile: object  # callable profile with .support and .deriv

    # FD steps per derivative order, balancing truncation against round-off
    _LAM_H = {1: 6e-4, 2: 2.5e-3, 3: 2.5e-3, 4: 1.5e-2}

    @property
    def family(self):
        return self.model.family

    def wave_state(self, w_i):
        """Full chart state of a pure i-wave with i-component w_i."""
        w_i = np.asarray(w_i, dtype=float)
        w = np.zeros(w_i.shape + (self.model.n,))
        w[..., self.family - 1] = w_i
        return w

    def speed_of_wi(self, w_i):
        """i-th eigenvalue along the pure i-wave locus, as a function of the
        scalar chart component."""
        u = self.chart.inverse(self.wave_state(w_i))
        return self.model.lambdas(u)[..., self.family - 1]

    def speed_deriv(self, w_i, order=1):
        h = self._LAM_H[order]
        stencil = {1: fd1, 2: fd2, 3: fd3, 4: fd4}[order]
        return stencil(self.speed_of_wi, np.asarray(w_i, dtype=float), h)

    def G(self, beta):
        return self.speed_of_wi(self.profile(beta))

    def G_far(self):
        lo, hi = self.profile.support
        return float(self.speed_of_wi(np.asarray(self.profile(hi + (hi - lo)))))

    def Gp(self, beta):
        w = self.profile(beta)
        return self.speed_deriv(w, 1) * self.profile.deriv(beta, 1)

    def Gpp(self, beta):
        w = self.profile(beta)
        w1 = self.profile.deriv(beta, 1)
        w2 = self.profile.deriv(beta, 2)
        return self.speed_deriv(w, 2) * w1 ** 2 + self.speed_deriv(w, 1) * w2

    def Gppp(self, beta):
        w = self.profile(beta)
        w1 = self.profile.deriv(beta, 1)
        w2 = self.profile.deriv(beta, 2)
        w3 = self.profile.deriv(beta, 3)
        return (self.speed_deriv(w, 3) * w1 ** 3
                + 3 * self.speed_deriv(w, 2) * w1 * w2
                + self.speed_deriv(w, 1) * w3)

    def Gpppp(self, beta):
        w = self.profile(beta)
        w1 = self.profile.deriv(beta, 1)
        w2 = self.profile.deriv(beta, 2)
        w3 = self.profile.deriv(beta, 3)
        w4 = self.profile.deriv(beta, 4)
        return (self.speed_deriv(w, 4) * w1 ** 4
                + 6 * self.speed_deriv(w, 3) * w1 ** 2 * w2
                + self.speed_deriv(w, 2) * (3 * w2 ** 2 + 4 * w1 * w3)
                + self.speed_deriv(w, 1) * w4)

    def smoothness_probe(self, n_points=41):
        """Check the profile has bounded fourth differences on its support
        (C^4 requirement). Returns the largest |w0''''| seen."""
        lo, hi = self.profile.support
        beta = np.linspace(lo + 1e-6 * (hi - lo), hi - 1e-6 * (hi - lo), n_points)
        d4 = self.profile.deriv(beta, 4)
        if not np.all(np.isfinite(d4)):
            raise ValueError("profile fourth derivative is unbounded on its support")
        return float(np.max(np.abs(d4)))


@dataclass
class BlowupReport:
    T_star: float
    x_star: float
    beta_star: float
    Gp_min: float
    Gppp: float
    nondegenerate: bool
    note: str = ""


@dataclass
class AffineMap:
    """Space-time/state change pinning the standard blowup gauge.

    New variables: t~ + 1 = alpha (t + 1), x~ = (x - beta* - (t+1) lam*)/s,
    w~ = kappa (w - w*). alpha rescales time so min G' = -1, s rescales space
    so G''' = 6, kappa rescales the state so the wave speed has unit slope.
    """

    beta_star: float
    lambda_star: float
    alpha: float
    s_space: float
    kappa: float
    w_star: np.ndarray

    def map_xt(self, x, t):
        tt = self.alpha * (np.asarray(t, dtype=float) + 1.0) - 1.0
        xx = (np.asarray(x, dtype=float) - self.beta_star
              - (np.asarray(t, dtype=float) + 1.0) * self.lambda_star) / self.s_space
        return xx, tt

    def unmap_xt(self, x_new, t_new):
        t = (np.asarray(t_new, dtype=float) + 1.0) / self.alpha - 1.0
        x = (np.asarray(x_new, dtype=float) * self.s_space + self.beta_star
             + (t + 1.0) * self.lambda_star)
        return x, t

    @property
    def is_identity(self):
        return (abs(self.beta_star) < 1e-9 and abs(self.lambda_star) < 1e-9
                and abs(self.alpha - 1) < 1e-9 and abs(self.s_space - 1) < 1e-9
                and abs(self.kappa - 1) < 1e-9)


def characteristic_map(data, beta, t):
    """Position at time t of the characteristic labeled by its t=-1 foot:
    beta + (t+1) G(beta)."""
    beta = np.asarray(beta, dtype=float)
    return beta + (np.asarray(t, dtype=float) + 1.0) * data.G(beta)


def find_blowup(data, n_scan=10000, xtol=1e-12):
    """Locate the first characteristic focusing point.

    Grid scan of G' over the support, golden-section refinement of its
    minimum, then a bisection polish on G'' (whose simple zero marks the
    minimizer far more sharply than the flat minimum of G'). Degeneracy
    (non-unique minimizer, or vanishing G''' there) is flagged, not fatal.
    """
    lo, hi = data.profile.support
    pad = 0.05 * (hi - lo)
    grid = np.linspace(lo - pad, hi + pad, n_scan)
    gp = data.Gp(grid)
    k = int(np.argmin(gp))
    gp_min_grid = gp[k]
    if gp_min_grid >= 0:
        raise NoBlowup("G' is nonnegative everywhere; characteristics never focus")

    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, n_scan - 1)]
    beta_star = golden_minimize(lambda x: data.Gp(np.asarray(x)), a, b, xtol=max(xtol, 1e-13))
    # polish: the minimizer is the zero of G'' bracketed inside [a, b]
    ga, gb = data.Gpp(a), data.Gpp(b)
    if ga < 0 < gb:
        x0, x1 = a, b
        for _ in range(200):
            mid = 0.5 * (x0 + x1)
            if data.Gpp(mid) < 0:
                x0 = mid
            else:
                x1 = mid
            if x1 - x0 < xtol:
                break
        beta_star = 0.5 * (x0 + x1)

    gp_min = float(data.Gp(np.asarray(beta_star)))
    gppp = float(data.Gppp(np.asarray(beta_star)))
    gpp = float(data.Gpp(np.asarray(beta_star)))

    note = ""
    # uniqueness: any other grid local minimum within tolerance of the global
    interior = (gp[1:-1] <= gp[:-2]) & (gp[1:-1] <= gp[2:])
    close = np.abs(grid[1:-1][interior] - beta_star) > 10 * (grid[1] - grid[0])
    competing = gp[1:-1][interior][close] < gp_min + TOL_ND * (1 + abs(gp_min))
    unique = not np.any(competing)
    if not unique:
        note = "non-unique minimizer of G'"
    # allowance above tol_nd covers finite-difference noise of chart speeds
    gpp_tol = max(TOL_ND, 2e-6 * (1 + abs(gppp)))
    if abs(gpp) > gpp_tol:
        note = note or f"G'' at minimizer not zero ({gpp:.2e})"
    nondeg = unique and gppp > TOL_ND and abs(gpp) <= gpp_tol
    if not nondeg and not note:
        note = "G''' at minimizer not positive"
    if note:
        warnings.warn(f"degenerate blowup: {note}", stacklevel=2)

    T_star = -1.0 - 1.0 / gp_min
    x_star = float(characteristic_map(data, np.asarray(beta_star), T_star))
    return BlowupReport(T_star=T_star, x_star=x_star, beta_star=float(beta_star),
                        Gp_min=gp_min, Gppp=gppp, nondegenerate=bool(nondeg), note=note)


def _scaled_model(model, lambda_star, scale):
    """Model seen in the moving, rescaled frame: flux (f - lam* u)/scale."""
    base_flux, base_jac, base_eig = model.flux, model.jacobian, model.eigenvalues

    def flux(u):
        u = np.asarray(u, dtype=float)
        return (base_flux(u) - lambda_star * u) / scale

    jacobian = None
    if base_jac is not None:
        def jacobian(u):
            u = np.asarray(u, dtype=float)
            J = base_jac(u)
            eye = np.eye(model.n)
            return (J - lambda_star * eye) / scale

    eigenvalues = None
    if base_eig is not None:
        def eigenvalues(u):
            return (base_eig(u) - lambda_star) / scale

    return SystemModel(n=model.n, flux=flux, family=model.family, box=model.box,
                       name=model.name + "+normalized", jacobian=jacobian,
                       eigenvalues=eigenvalues, h_jac=model.h_jac)


def _scaled_chart(chart, kappa, w_star):
    base_fwd, base_inv, base_jac = chart.forward, chart.inverse, chart.jacobian
    w_star = np.asarray(w_star, dtype=float)

    def forward(u):
        return kappa * (base_fwd(u) - w_star)

    def inverse(w):
        return base_inv(np.asarray(w, dtype=float) / kappa + w_star)

    jacobian = None
    if base_jac is not None:
        def jacobian(u):
            return kappa * base_jac(u)

    u_ref = base_inv(w_star)
    return CoordinateChart(forward=forward, inverse=inverse, u_ref=u_ref,
                           applicable_box=chart.applicable_box,
                           name=chart.name + "+normalized",
                           exact_structure=chart.exact_structure,
                           approximate=chart.approximate, jacobian=jacobian)


def normalize(data, report):
    """Affine gauge fix at a nondegenerate blowup.

    Returns transformed data with G(0)=0, G'(0)=-1, G''(0)=0, G'''(0)=6 and
    unit state-slope of the wave speed, plus the invertible AffineMap that
    carries results back to the original frame. Time dilation about t=-1
    normalizes min G'; the spatial scale alone then sets G''' without
    disturbing G'(0); the state scale fixes the eigenvalue slope.
    """
    if not report.nondegenerate:
        raise Degenerate(f"cannot normalize: {report.note or 'degenerate blowup'}")
    beta_star = report.beta_star
    lambda_star = float(data.G(np.asarray(beta_star)))
    alpha = -report.Gp_min
    s_space = float(np.sqrt(6.0 * alpha / report.Gppp))
    w_i_star = float(data.profile(np.asarray(beta_star)))
    dlam = float(data.speed_deriv(np.asarray(w_i_star), 1))
    kappa = dlam / (s_space * alpha)

    w_star = np.zeros(data.model.n)
    w_star[data.family - 1] = w_i_star

    amap = AffineMap(beta_star=beta_star, lambda_star=lambda_star, alpha=alpha,
                     s_space=s_space, kappa=kappa, w_star=w_star)

    profile = TransformedProfile(data.profile, beta_star, s_space, kappa, w_i_star)
    model = _scaled_model(data.model, lambda_star, alpha * s_space)
    chart = _scaled_chart(data.chart, kappa, w_star)
    return SimpleWaveData(model=model, chart=chart, profile=profile), amap


def evaluate_preblowup(data, x, t, T_star=None):
    """State at (x, t) before blowup by inverting the characteristic map.

    The map beta -> beta + (t+1) G(beta) is strictly increasing for
    t < T*; bisection with a Newton polish recovers the label, and the full
    state is the chart inverse of the pure i-wave there.
    """
    if T_star is None:
        T_star = -1.0 - 1.0 / float(np.min(data.Gp(
            np.linspace(*data.profile.support, 4001))))
    t = float(t)
    if t >= T_star:
        raise NotInvertible(f"characteristic map not invertible at t={t} >= T*={T_star}")
    x = np.asarray(x, dtype=float)
    lo, hi = data.profile.support
    span = (hi - lo) + np.max(np.abs(x)) + 1.0
    gmax = 1.0 + np.max(np.abs(data.G(np.linspace(lo, hi, 512))))
    blo = np.minimum(np.min(x) - (t + 1) * gmax, lo) - span
    bhi = np.maximum(np.max(x) + (t + 1) * gmax, hi) + span

    def eta(beta):
        return characteristic_map(data, beta, t)

    from ._num import invert_monotone

    beta = invert_monotone(eta, x, blo, bhi)
    w_i = data.profile(beta)
    return data.chart.inverse(data.wave_state(w_i))
