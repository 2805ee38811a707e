"""Fractional expansion and samplers for the singular data at blowup time.

At the blowup instant the characteristic map degenerates to
eta(beta, 0) = beta^3 + (eta4/24) beta^4 + ... ; inverting it turns the
smooth label profile into cube-root data
w(x, 0) = -x^{1/3} + a2 x^{2/3} + a3 x + O(|x|^{4/3}), whose coefficients
follow from the label-series inversion. The samplers here evaluate that
singular data and its first three derivatives by inverting eta directly,
and the envelope validator fits the smallest constant M for which the
residual bounds hold on a grid reaching the singularity.
"""

from dataclasses import dataclass, field

import numpy as np

from ._num import invert_monotone, loglog_slope
from .errors import Degenerate, EnvelopeViolation

NORM_TOL = 1e-5  # looseness when checking the blowup gauge is in effect


def _cbrt_pow(x, p):
    """Real-branch fractional power x^{p/3} (odd through the origin)."""
    return np.cbrt(np.asarray(x, dtype=float)) ** p


def invert_eta0(eta4):
    """Label-series inversion coefficients for eta(beta,0) = beta^3 + (eta4/24) beta^4.

    beta = x^{1/3} + alpha2 x^{2/3} + alpha3 x + O(|x|^{4/3}).
    """
    q = eta4 / 24.0
    alpha2 = -q / 3.0
    alpha3 = q * q / 3.0
    return alpha2, alpha3


@dataclass
class PreshockProfile:
    """Singular Cauchy data at the blowup time, with derivative samplers."""

    a2: float
    a3: float
    alpha2: float
    alpha3: float
    eta4: float
    x_max: float
    data: object  # the normalized SimpleWaveData behind the samplers
    M_env: float = field(default=np.nan)

    # -- label machinery ----------------------------------------------------

    def _eta0(self, beta):
        beta = np.asarray(beta, dtype=float)
        return beta + self.data.G(beta)

    def _eta0_prime(self, beta):
        return 1.0 + self.data.Gp(np.asarray(beta, dtype=float))

    def label(self, x):
        """Invert eta(beta, 0) = x: series seed, Newton polish, bisection
        fallback. eta is strictly increasing with a cubic tangency at 0."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        beta = np.empty_like(x)

        zero = x == 0
        beta[zero] = 0.0
        todo = ~zero
        if np.any(todo):
            xt = x[todo]
            seed = _cbrt_pow(xt, 1) + self.alpha2 * _cbrt_pow(xt, 2) + self.alpha3 * xt
            small = np.abs(xt) <= min(0.01, self.x_max)
            b = np.where(small, seed, np.sign(xt) * np.maximum(np.abs(xt), 1.0))
            converged = np.zeros_like(b, dtype=bool)
            for _ in range(50):
                r = self._eta0(b) - xt
                dp = self._eta0_prime(b)
                step = np.where(dp > 0, r / np.where(dp > 0, dp, 1.0), 0.0)
                bn = b - step
                converged = np.abs(bn - b) <= 1e-15 * (1.0 + np.abs(bn))
                b = bn
                if np.all(converged):
                    break
            resid = np.abs(self._eta0(b) - xt)
            ok = converged & (resid <= 1e-12 * (1.0 + np.abs(xt)))
            if not np.all(ok):
                lo, hi = self.data.profile.support
                span = (hi - lo) + np.max(np.abs(xt)) + 1.0
                b_bad = invert_monotone(self._eta0, xt[~ok], lo - span, hi + span)
                b[~ok] = b_bad
            beta[todo] = b
        return beta[0] if scalar else beta

    # -- samplers ------------------------------------------------------------

    def sampler(self, x):
        """w_i(x, 0)."""
        beta = self.label(x)
        return self.data.profile(np.asarray(beta))

    def dsampler(self, x):
        beta = np.asarray(self.label(x))
        return self.data.profile.deriv(beta, 1) / self._eta0_prime(beta)

    def d2sampler(self, x):
        beta = np.asarray(self.label(x))
        ep = self._eta0_prime(beta)
        epp = self.data.Gpp(beta)
        w1 = self.data.profile.deriv(beta, 1) / ep
        return (self.data.profile.deriv(beta, 2) - w1 * epp) / ep ** 2

    def d3sampler(self, x):
        beta = np.asarray(self.label(x))
        ep = self._eta0_prime(beta)
        epp = self.data.Gpp(beta)
        eppp = self.data.Gppp(beta)
        w1 = self.data.profile.deriv(beta, 1) / ep
        w2 = (self.data.profile.deriv(beta, 2) - w1 * epp) / ep ** 2
        return (self.data.profile.deriv(beta, 3) - w1 * eppp - 3 * w2 * ep * epp) / ep ** 3

    def series(self, x):
        """Leading fractional expansion -x^{1/3} + a2 x^{2/3} + a3 x."""
        x = np.asarray(x, dtype=float)
        return -_cbrt_pow(x, 1) + self.a2 * _cbrt_pow(x, 2) + self.a3 * x


def expand_preshock(data, norm_tol=NORM_TOL):
    """Coefficients and samplers of the pre-shock expansion.

    Requires the normalized gauge (wave speed 0, slope -1, zero curvature,
    third derivative 6 at the blowup label). The x^{2/3} and x coefficients
    combine the label-inversion series with the profile's own Taylor data:
    a2 = -alpha2 + w0''(0)/2, a3 = -alpha3 + alpha2 w0''(0) + w0'''(0)/6.
    """
    z = np.asarray(0.0)
    checks = {
        "G(0)": float(data.G(z)),
        "G'(0)+1": float(data.Gp(z)) + 1.0,
        "G''(0)": float(data.Gpp(z)),
        "G'''(0)-6": float(data.Gppp(z)) - 6.0,
    }
    worst = max(abs(v) for v in checks.values())
    if worst > norm_tol * 10:
        raise Degenerate(f"data not in the normalized blowup gauge: {checks}")

    eta4 = float(data.Gpppp(z))
    alpha2, alpha3 = invert_eta0(eta4)
    w2 = float(data.profile.deriv(z, 2))
    w3 = float(data.profile.deriv(z, 3))
    a2 = -alpha2 + 0.5 * w2
    a3 = -alpha3 + alpha2 * w2 + w3 / 6.0

    lo, hi = data.profile.support
    x_max = min(min(-lo, hi), 0.1)
    return PreshockProfile(a2=a2, a3=a3, alpha2=alpha2, alpha3=alpha3,
                           eta4=eta4, x_max=x_max, data=data)


_BOUNDS = ("cz0", "cz01", "cz1", "cz2", "cz3")


@dataclass
class EnvelopeReport:
    constants: dict
    M_env: float
    holder_slope: float
    holder_r2: float
    grid: np.ndarray


def validate_envelopes(profile, x_grid=None):
    """Fit the smallest envelope constant on a grid reaching the singularity.

    Bounds checked (residual <= M * weight):
      cz0:  |w|               <= M
      cz01: |w + x^{1/3} - a2 x^{2/3}| <= M |x|
      cz1:  |w' + (1/3) x^{-2/3} - (2/3) a2 x^{-1/3}| <= M
      cz2:  |w'' - (2/9) x^{-5/3}|     <= M |x|^{-4/3}
      cz3:  |w'''|            <= M |x|^{-8/3}

    Raises EnvelopeViolation when a ratio grows without saturation toward
    x -> 0 (no finite constant works).
    """
    if x_grid is None:
        mags = np.logspace(-10, np.log10(profile.x_max), 60)
        x_grid = np.concatenate([-mags[::-1], mags])
    x = np.asarray(x_grid, dtype=float)
    x = x[x != 0]

    w = profile.sampler(x)
    w1 = profile.dsampler(x)
    w2 = profile.d2sampler(x)
    w3 = profile.d3sampler(x)

    residuals = {
        "cz0": (np.abs(w), np.ones_like(x)),
        "cz01": (np.abs(w + _cbrt_pow(x, 1) - profile.a2 * _cbrt_pow(x, 2)), np.abs(x)),
        "cz1": (np.abs(w1 + _cbrt_pow(x, -2) / 3.0 - (2.0 / 3.0) * profile.a2 * _cbrt_pow(x, -1)),
                np.ones_like(x)),
        "cz2": (np.abs(w2 - (2.0 / 9.0) * _cbrt_pow(x, -5)), np.abs(x) ** (-4.0 / 3.0)),
        "cz3": (np.abs(w3), np.abs(x) ** (-8.0 / 3.0)),
    }

    constants = {}
    order = np.argsort(np.abs(x))
    for name, (res, weight) in residuals.items():
        ratio = res / weight
        constants[name] = float(np.max(ratio))
        # unbounded growth check: ratios over the innermost decade keep rising
        inner = ratio[order][:8]
        if inner.size >= 6 and np.all(np.diff(inner[::-1]) < 0) and inner[0] > 100 * np.median(ratio):
            raise EnvelopeViolation(name, f"ratio grows toward x->0 (reaches {inner[0]:.3e})")

    hx = np.abs(x[(np.abs(x) >= 1e-8) & (np.abs(x) <= 1e-3)])
    slope, r2 = loglog_slope(hx, profile.sampler(np.sign(1.0) * hx))
    M_env = max(constants.values())
    profile.M_env = M_env
    return EnvelopeReport(constants=constants, M_env=M_env,
                          holder_slope=slope, holder_r2=r2, grid=x)
