"""Small numerical kernels shared across modules.

Finite-difference stencils, a golden-section minimizer, and vectorized
bracketed root finders. Everything here is deterministic: identical inputs
produce bit-identical outputs.
"""

import numpy as np

_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def fd1(f, x, h):
    """5-point central first derivative, O(h^4)."""
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def fd2(f, x, h):
    """5-point central second derivative, O(h^4)."""
    return (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h * h)


def fd3(f, x, h):
    """5-point central third derivative, O(h^2)."""
    return (f(x + 2 * h) - 2 * f(x + h) + 2 * f(x - h) - f(x - 2 * h)) / (2 * h ** 3)


def fd4(f, x, h):
    """7-point central fourth derivative, O(h^4)."""
    return (
        -f(x + 3 * h) + 12 * f(x + 2 * h) - 39 * f(x + h) + 56 * f(x)
        - 39 * f(x - h) + 12 * f(x - 2 * h) - f(x - 3 * h)
    ) / (6 * h ** 4)


def golden_minimize(f, lo, hi, xtol=1e-12, maxiter=200):
    """Golden-section search for a minimum of ``f`` on [lo, hi].

    Returns the abscissa of the minimum. Deterministic; assumes a single
    interior minimum in the bracket.
    """
    a, b = float(lo), float(hi)
    c = b - _PHI * (b - a)
    d = a + _PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if abs(b - a) < xtol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def bracketed_newton(f, lo, hi, fprime=None, xtol=1e-14, maxiter=100):
    """Vectorized safeguarded Newton on a sign-changing bracket.

    ``f`` maps an array of abscissae to residuals; ``lo``/``hi`` are arrays
    with f(lo) and f(hi) of opposite sign (zero residual endpoints allowed).
    Falls back to bisection whenever the Newton step leaves the bracket.
    Without ``fprime`` the derivative is taken by a relative-step secant.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    flo = np.asarray(f(lo), dtype=float)
    fhi = np.asarray(f(hi), dtype=float)
    # orient so f(lo) <= 0 <= f(hi)
    swap = flo > 0
    lo_s = np.where(swap, hi, lo)
    hi_s = np.where(swap, lo, hi)
    flo_s = np.where(swap, fhi, flo)
    fhi_s = np.where(swap, flo, fhi)
    bad = (flo_s > 0) | (fhi_s < 0)
    if np.any(bad & ~np.isclose(flo_s, 0.0) & ~np.isclose(fhi_s, 0.0)):
        raise ValueError("bracket does not straddle a sign change")
    lo, hi, flo, fhi = lo_s, hi_s, flo_s, fhi_s

    x = 0.5 * (lo + hi)
    for _ in range(maxiter):
        fx = np.asarray(f(x), dtype=float)
        neg = fx < 0
        lo = np.where(neg, x, lo)
        hi = np.where(neg, hi, x)
        if fprime is not None:
            dfx = np.asarray(fprime(x), dtype=float)
        else:
            h = 1e-7 * (1.0 + np.abs(x))
            dfx = (np.asarray(f(x + h), dtype=float) - fx) / h
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dfx != 0, fx / np.where(dfx != 0, dfx, 1.0), np.inf)
        xn = x - step
        inside = (xn > np.minimum(lo, hi)) & (xn < np.maximum(lo, hi)) & np.isfinite(xn)
        xn = np.where(inside, xn, 0.5 * (lo + hi))
        done = np.abs(xn - x) < xtol * (1.0 + np.abs(xn))
        x = xn
        if np.all(done):
            break
    return x


def invert_monotone(f, target, lo, hi, xtol=1e-14, maxiter=200):
    """Solve f(x) = target for monotone increasing ``f``, vectorized.

    Pure bisection plus a final Newton-by-secant polish; robust at points
    where f' vanishes (e.g. cubic-degenerate roots).
    """
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        below = np.asarray(f(mid), dtype=float) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo < xtol * (1.0 + np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def gauss_legendre_01(order):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def loglog_slope(x, y):
    """Least-squares slope and r^2 of log|y| against log|x|.

    Entries with y == 0 or x == 0 are dropped.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x != 0) & (y != 0) & np.isfinite(x) & np.isfinite(y)
    lx = np.log(np.abs(x[keep]))
    ly = np.log(np.abs(y[keep]))
    if lx.size < 2:
        return np.nan, 0.0
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fitted = A @ np.array([slope, intercept])
    ss_res = float(np.sum((ly - fitted) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), r2
