"""Log-scale modified Bessel functions and matrix-Langevin normalizer approximations.

Everything here works in log space: concentrations of 10-50 already overflow a
naive ``I_nu(x)`` once it is multiplied by Gamma factors.

Small arguments (``x^2/4 < nu + 1``) and arguments where the scaled function
underflows go through the power series, whose terms are all positive so the
sum is free of cancellation.  Everything else uses the exponentially scaled
Bessel function from scipy (Amos' algorithm).
"""
from __future__ import annotations

import numpy as np
from scipy import special

from .errors import DomainError

_SERIES_MAX_TERMS = 400
_TINY = 1e-280


def _check(order, x):
    order = np.asarray(order, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(order)) and np.all(np.isfinite(x))):
        raise DomainError("Bessel arguments must be finite")
    if np.any(order < -0.5):
        raise DomainError(f"Bessel order must be >= -1/2, got {order.min()}")
    if np.any(x < 0):
        raise DomainError(f"Bessel argument must be >= 0, got {x.min()}")
    return np.broadcast_arrays(order, x)


def _series_tail(order, x):
    """Return ``sum_{k>=1} t_k`` where ``t_k = (x^2/4)^k / (k! (nu+1)_k)``.

    ``1 + tail`` is ``Gamma(nu+1) I_nu(x) / (x/2)^nu``.  Callers only use this
    where ``x < nu/2 + 5`` so the terms stay representable.
    """
    q = 0.25 * x * x
    term = np.ones_like(x)
    total = np.zeros_like(x)
    active = q > 0
    for k in range(1, _SERIES_MAX_TERMS + 1):
        term = np.where(active, term * q / (k * (order + k)), 0.0)
        total = total + term
        active = active & (term > 1e-17 * total)
        if not active.any():
            break
    return total


def _use_series(order, x):
    return 0.25 * x * x < order + 1.0


def _scaled(order, x):
    # ive(nu, x) = exp(-x) I_nu(x); entries that underflow are recomputed by
    # the series branch.
    return special.ive(order, x)


def log_bessel_i(order, x):
    """Natural log of the modified Bessel function of the first kind.

    Parameters
    ----------
    order : float or array_like
        Order ``nu >= -1/2``.
    x : float or array_like
        Argument ``x >= 0``.

    Returns
    -------
    float or ndarray
        ``log I_nu(x)``.  At ``x = 0`` this is ``0`` for ``nu = 0``, ``-inf``
        for ``nu > 0`` and ``+inf`` for ``-1/2 <= nu < 0``.
    """
    order, x = _check(order, x)
    scalar = order.ndim == 0
    order = np.atleast_1d(order).astype(float)
    x = np.atleast_1d(x).astype(float)
    out = np.empty(np.broadcast(order, x).shape)

    zero = x == 0
    out[zero & (order == 0)] = 0.0
    out[zero & (order > 0)] = -np.inf
    out[zero & (order < 0)] = np.inf

    series = ~zero & _use_series(order, x)
    rest = ~zero & ~series
    if rest.any():
        nu, xs = order[rest], x[rest]
        sc = _scaled(nu, xs)
        ok = (sc > _TINY) & np.isfinite(sc)
        vals = np.log(np.where(ok, sc, 1.0)) + xs
        out[rest] = vals
        series.flat[np.flatnonzero(rest)[~ok]] = True
    if series.any():
        nu, xs = order[series], x[series]
        out[series] = (nu * np.log(0.5 * xs) - special.gammaln(nu + 1.0)
                       + np.log1p(_series_tail(nu, xs)))

    return float(out[0]) if scalar else out


def log_bessel_norm(order, x):
    """``log{Gamma(nu+1) I_nu(x) / (x/2)^nu}``, i.e. ``log 0F1(; nu+1; x^2/4)``.

    This is the per-column factor of the sequential Stiefel proposal's
    normalizer.  It is finite and equal to ``0`` at ``x = 0`` and increasing
    in ``x``.
    """
    order, x = _check(order, x)
    scalar = order.ndim == 0
    order = np.atleast_1d(order).astype(float)
    x = np.atleast_1d(x).astype(float)
    out = np.zeros(np.broadcast(order, x).shape)

    series = (x > 0) & _use_series(order, x)
    rest = (x > 0) & ~series
    if rest.any():
        nu, xs = order[rest], x[rest]
        sc = _scaled(nu, xs)
        ok = (sc > _TINY) & np.isfinite(sc)
        out[rest] = (special.gammaln(nu + 1.0) + np.log(np.where(ok, sc, 1.0)) + xs
                     - nu * np.log(0.5 * xs))
        series.flat[np.flatnonzero(rest)[~ok]] = True
    if series.any():
        out[series] = np.log1p(_series_tail(order[series], x[series]))

    return float(out[0]) if scalar else out


_BELOW_ONE = np.nextafter(1.0, 0.0)


def bessel_ratio(order, x):
    """Return ``I_{nu+1}(x) / I_nu(x)``, a value in ``[0, 1)``.

    Equal to ``0`` at ``x = 0`` and strictly increasing in ``x``.  It is also
    the derivative of :func:`log_bessel_norm` with respect to ``x``.
    """
    order, x = _check(order, x)
    scalar = order.ndim == 0
    order = np.atleast_1d(order).astype(float)
    x = np.atleast_1d(x).astype(float)
    out = np.zeros(np.broadcast(order, x).shape)

    pos = x > 0
    if pos.any():
        nu, xs = order[pos], x[pos]
        num = _scaled(nu + 1.0, xs)
        den = _scaled(nu, xs)
        ok = (num > _TINY) & (den > _TINY) & np.isfinite(num) & np.isfinite(den)
        r = np.empty_like(xs)
        r[ok] = num[ok] / den[ok]
        bad = ~ok
        if bad.any():
            r[bad] = np.exp(log_bessel_i(nu[bad] + 1.0, xs[bad])
                            - log_bessel_i(nu[bad], xs[bad]))
        # tanh-like ratios round to 1.0 for large x; keep the value below 1
        out[pos] = np.minimum(r, _BELOW_ONE)

    return float(out[0]) if scalar else out


def log_bessel_norm_and_ratio(order, x):
    """:func:`log_bessel_norm` and :func:`bessel_ratio` from shared evaluations.

    Both need ``I_nu(x)``; this evaluates the scaled Bessel functions of order
    ``nu`` and ``nu + 1`` once.  Arguments must already be arrays of a common
    shape with ``x > 0`` (no validation, intended for inner loops).
    """
    order = np.asarray(order, dtype=float)
    x = np.asarray(x, dtype=float)
    den = _scaled(order, x)
    num = _scaled(order + 1.0, x)
    ok = (num > _TINY) & (den > _TINY) & np.isfinite(num) & np.isfinite(den)
    series = _use_series(order, x) | ~ok
    with np.errstate(divide="ignore", invalid="ignore"):
        lbn = special.gammaln(order + 1.0) + np.log(den) + x - order * np.log(0.5 * x)
        ratio = num / den
    if series.any():
        lbn[series] = log_bessel_norm(order[series], x[series])
        bad = ~ok
        if bad.any():
            ratio[bad] = bessel_ratio(order[bad], x[bad])
    return lbn, ratio


def log_z_asymptotic(kappa, d):
    """Large-concentration approximation to the matrix-Langevin log normalizer.

    Approximates ``log 0F1(d/2; kappa^2/4)`` (normalizer with respect to the
    uniform probability measure on the Stiefel manifold ``V_{p,d}``) by

    ``log{2^(-p(p+5)/4 + pd/2) pi^(-p/2)} + sum_j log Gamma((d-j+1)/2)
    + sum_i kappa_i - 1/2 sum_{i<j} log(kappa_i + kappa_j)
    - (d-p)/2 sum_i log kappa_i``.

    Parameters
    ----------
    kappa : array_like, shape (p,)
        Strictly positive concentrations.
    d : int
        Ambient dimension, ``d >= p``.
    """
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    p = kappa.size
    if p < 1 or d < p:
        raise DomainError(f"need d >= p >= 1, got d={d}, p={p}")
    if not np.all(np.isfinite(kappa)) or np.any(kappa <= 0):
        raise DomainError("log_z_asymptotic needs every kappa_i > 0")
    j = np.arange(1, p + 1)
    const = ((-0.25 * p * (p + 5) + 0.5 * p * d) * np.log(2.0)
             - 0.5 * p * np.log(np.pi)
             + special.gammaln(0.5 * (d - j + 1)).sum())
    iu, ju = np.triu_indices(p, k=1)
    pair = np.log(kappa[iu] + kappa[ju]).sum()
    return float(const + kappa.sum() - 0.5 * pair
                 - 0.5 * (d - p) * np.log(kappa).sum())
