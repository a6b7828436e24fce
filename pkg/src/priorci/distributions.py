"""Special functions and densities used by the coverage and length formulas.

The central chi-squared, normal and Student-t functions are thin wrappers over
``scipy.special`` with domain checks.  The density of ``V = sqrt(Q/s)`` with
``Q`` noncentral chi-squared is computed here from the Poisson mixture, summed
outward from the dominant term so the cost stays bounded for large
noncentrality.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

__all__ = [
    "normal_cdf",
    "normal_pdf",
    "chi2_pdf",
    "chi2_cdf",
    "chi2_inverse_cdf",
    "t_quantile",
    "density_V",
    "density_W",
    "expected_W",
    "log_expected_W",
]

_SERIES_RTOL = 1e-16
_MAX_SERIES_STEPS = 100_000
_LOG_UNDERFLOW = -760.0


def _check_df(df) -> int:
    if int(df) != df or df < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {df!r}")
    return int(df)


def _check_nonnegative(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError(f"{name} must be nonnegative")
    return arr


def _scalar_or_array(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def normal_cdf(x):
    return _scalar_or_array(special.ndtr(np.asarray(x, dtype=float)), x)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def chi2_pdf(z, df):
    """Density of the central chi-squared distribution with ``df`` degrees of freedom."""
    df = _check_df(df)
    z_arr = _check_nonnegative(z, "z")
    half = 0.5 * df
    with np.errstate(divide="ignore"):
        logpdf = special.xlogy(half - 1.0, z_arr) - 0.5 * z_arr - half * math.log(2.0) - special.gammaln(half)
    out = np.exp(logpdf)
    if df == 1:
        out = np.where(z_arr == 0.0, np.inf, out)
    return _scalar_or_array(out, z)


def chi2_cdf(z, df):
    df = _check_df(df)
    z_arr = _check_nonnegative(z, "z")
    return _scalar_or_array(special.gammainc(0.5 * df, 0.5 * z_arr), z)


def chi2_inverse_cdf(u, df):
    """Quantile function of chi-squared; ``u`` must lie in ``[0, 1)``."""
    df = _check_df(df)
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0) or np.any(u_arr >= 1) or np.any(np.isnan(u_arr)):
        raise ValueError("u must lie in [0, 1)")
    out = 2.0 * special.gammaincinv(0.5 * df, u_arr)
    return _scalar_or_array(out, u)


def t_quantile(df, alpha):
    """Return t(m) with P(-t(m) <= T <= t(m)) = 1 - alpha for T ~ t_df."""
    df = _check_df(df)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    return float(special.stdtrit(df, 1.0 - 0.5 * alpha))


def log_expected_W(m) -> float:
    m = _check_df(m)
    return 0.5 * math.log(2.0 / m) + math.lgamma(0.5 * (m + 1)) - math.lgamma(0.5 * m)


def expected_W(m) -> float:
    """E(W) for W = sqrt(chi2_m / m)."""
    return math.exp(log_expected_W(m))


def density_W(w, m):
    m = _check_df(m)
    w_arr = _check_nonnegative(w, "w")
    # 2 m w f_m(m w^2) written in log space so that m = 1 is finite at w = 0
    half = 0.5 * m
    logpdf = (
        math.log(2.0)
        + half * math.log(m)
        + special.xlogy(m - 1.0, w_arr)
        - 0.5 * m * w_arr * w_arr
        - half * math.log(2.0)
        - special.gammaln(half)
    )
    return _scalar_or_array(np.exp(logpdf), w)


def _log_chi_term(v, s, j):
    """log density of sqrt(chi2_{s+2j} / s) evaluated at v."""
    half = 0.5 * s + j
    return (
        math.log(2.0)
        + half * math.log(s)
        + special.xlogy(2.0 * half - 1.0, v)
        - 0.5 * s * v * v
        - half * math.log(2.0)
        - special.gammaln(half)
    )


def density_V(v, s, gamma):
    """Density of V = sqrt(Q/s) where Q is noncentral chi2 with s df and noncentrality gamma**2.

    The Poisson(gamma**2 / 2) mixture of scaled chi densities is summed from
    the largest term in both directions until the next term falls below
    ``1e-16`` of the running sum.
    """
    s = _check_df(s)
    gamma = float(gamma)
    if not (gamma >= 0.0 and math.isfinite(gamma)):
        raise ValueError(f"gamma must be finite and nonnegative, got {gamma!r}")
    v_arr = _check_nonnegative(v, "v")
    flat = np.ravel(v_arr)
    out = _noncentral_chi_density(flat, s, gamma).reshape(v_arr.shape)
    return _scalar_or_array(out, v)


def _noncentral_chi_density(v, s, gamma):
    if gamma == 0.0:
        return np.exp(_log_chi_term(v, s, 0))
    half_lam = 0.5 * gamma * gamma
    z = s * v * v
    # j maximizing the mixture term: (j+1)(s+2j) ~ half_lam * z
    disc = (s + 2.0) ** 2 - 8.0 * (s - half_lam * z)
    j0 = np.floor(np.maximum(0.0, (-(s + 2.0) + np.sqrt(np.maximum(disc, 0.0))) / 4.0))
    log_pois = special.xlogy(j0, half_lam) - half_lam - special.gammaln(j0 + 1.0)
    log_lead = log_pois + _log_chi_term(v, s, j0)

    total = np.ones_like(v)
    # the sum is at most a few hundred times the leading term, so these underflow
    live = log_lead > _LOG_UNDERFLOW
    # upward: ratio term_{j+1}/term_j = half_lam * z / ((j+1)(s+2j))
    idx = np.flatnonzero(live)
    term = np.ones(idx.size)
    zz, jj = z[idx], j0[idx]
    for _ in range(_MAX_SERIES_STEPS):
        if idx.size == 0:
            break
        term = term * half_lam * zz / ((jj + 1.0) * (s + 2.0 * jj))
        jj = jj + 1.0
        total[idx] += term
        keep = term > _SERIES_RTOL * total[idx]
        idx, term, zz, jj = idx[keep], term[keep], zz[keep], jj[keep]
    else:  # pragma: no cover
        raise RuntimeError("noncentral chi series did not converge (upward)")

    # downward from j0 toward 0
    idx = np.flatnonzero(live & (j0 > 0))
    term = np.ones(idx.size)
    zz, jj = z[idx], j0[idx]
    for _ in range(_MAX_SERIES_STEPS):
        if idx.size == 0:
            break
        term = term * (jj * (s + 2.0 * jj - 2.0)) / (half_lam * zz)
        jj = jj - 1.0
        total[idx] += term
        keep = (jj > 0) & (term > _SERIES_RTOL * total[idx])
        idx, term, zz, jj = idx[keep], term[keep], zz[keep], jj[keep]
    else:  # pragma: no cover
        raise RuntimeError("noncentral chi series did not converge (downward)")

    return np.where(live, np.exp(log_lead) * total, 0.0)
