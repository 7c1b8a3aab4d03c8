"""Dirichlet-process Gaussian mixtures truncated to a box.

The generative model draws from an (untruncated) mixture and rejects draws
falling outside the box, so ``M = 1`` and a point is accepted exactly when
it lies inside.  Rejected draws complete the data to an ordinary mixture
sample, after which the blocked stick-breaking Gibbs sampler applies as if
there were no truncation.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .core import DEFAULT_MAX_ATTEMPTS, RejectionModel, resample_rejected
from .errors import DomainError, NumericalError
from .trace import ChainTrace

log = logging.getLogger(__name__)

_JITTER = 1e-8


@dataclass(frozen=True)
class TruncationRegion:
    """Axis-aligned box ``[lower, upper]``; infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo >= hi):
            raise ValueError("need lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int) -> "TruncationRegion":
        return cls(np.zeros(d), np.ones(d))

    @classmethod
    def whole_space(cls, d: int) -> "TruncationRegion":
        return cls(np.full(d, -np.inf), np.full(d, np.inf))

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    @property
    def is_whole_space(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def center(self) -> np.ndarray:
        finite = np.isfinite(self.lower) & np.isfinite(self.upper)
        return 0.5 * (np.where(finite, self.lower, 0.0) + np.where(finite, self.upper, 0.0))


def normalize_to_unit_box(raw, lower, upper):
    """Map raw measurements in ``[lower, upper]`` affinely onto the unit cube.

    Returns the scaled data and a record ``{"lower", "upper"}`` for the run
    manifest.  Values outside the raw bounds raise :class:`ValueError`.
    """
    raw = np.asarray(raw, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), raw.shape[-1:])
    upper = np.broadcast_to(np.asarray(upper, dtype=float), raw.shape[-1:])
    if np.any(upper <= lower):
        raise ValueError("need upper > lower")
    bad = np.any((raw < lower) | (raw > upper), axis=-1)
    if np.any(bad):
        rows = np.flatnonzero(bad)[:5].tolist()
        raise ValueError(f"rows {rows} fall outside the declared bounds")
    return (raw - lower) / (upper - lower), {"lower": lower.tolist(), "upper": upper.tolist()}


@dataclass(frozen=True)
class NIWPrior:
    """Normal-inverse-Wishart base measure ``Sigma ~ IW(Psi, nu)``, ``mu ~ N(mu0, Sigma/lam0)``."""

    mu0: np.ndarray
    lam0: float
    Psi: np.ndarray
    nu: float

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        Psi = np.atleast_2d(np.asarray(self.Psi, dtype=float))
        d = mu0.size
        if Psi.shape != (d, d):
            raise ValueError(f"Psi must be {d}x{d}")
        if self.lam0 <= 0:
            raise ValueError("lam0 must be > 0")
        if self.nu <= d - 1:
            raise ValueError(f"nu must exceed d - 1 = {d - 1}")
        np.linalg.cholesky(Psi)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "Psi", Psi)

    @property
    def d(self) -> int:
        return self.mu0.size

    @classmethod
    def default_for(cls, region: TruncationRegion) -> "NIWPrior":
        d = region.d
        return cls(region.center(), 0.01, 0.1 * np.eye(d), d + 2.0)


@dataclass
class StickBreakingState:
    """Truncated stick-breaking mixture: weights, means and covariances of ``K`` components."""

    weights: np.ndarray          # (K,)
    means: np.ndarray            # (K, d)
    covs: np.ndarray             # (K, d, d)
    alpha: float = 1.0
    base: NIWPrior | None = None
    counts: np.ndarray | None = None      # allocation counts from the last sweep
    chols: np.ndarray = field(init=False, repr=False)
    inv_chols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float).reshape(
            self.means.shape[0], self.means.shape[1], self.means.shape[1])
        if self.weights.shape != (self.means.shape[0],):
            raise ValueError("weights and means disagree on K")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        self.chols = _safe_cholesky(self.covs)
        self.inv_chols = np.linalg.inv(self.chols)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def component_logpdf(self, x) -> np.ndarray:
        """``log N(x | mu_k, Sigma_k)`` for every point and component, shape (n, K)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        # whitened residuals L_k^{-1}(x - mu_k), via L_k^{-1} x - L_k^{-1} mu_k
        z = np.matmul(x, np.swapaxes(self.inv_chols, 1, 2))            # (K, n, d)
        z -= np.einsum("kij,kj->ki", self.inv_chols, self.means)[:, None, :]
        logdet = np.log(np.diagonal(self.chols, axis1=1, axis2=2)).sum(axis=1)
        return (-0.5 * np.sum(z * z, axis=-1).T - logdet
                - 0.5 * self.d * math.log(2 * math.pi))

    def log_density(self, x) -> np.ndarray:
        """Log density of the untruncated mixture."""
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights)
        return logsumexp(self.component_logpdf(x) + lw, axis=1)

    def sample(self, rng, size: int) -> np.ndarray:
        comp = rng.choice(self.K, size=size, p=self.weights)
        z = rng.standard_normal((size, self.d))
        return self.means[comp] + np.einsum("nij,nj->ni", self.chols[comp], z)


def _safe_cholesky(covs):
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        out = np.empty_like(covs)
        eye = np.eye(covs.shape[-1])
        for k, c in enumerate(covs):
            try:
                out[k] = np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                log.warning("covariance %d lost positive-definiteness; adding jitter", k)
                try:
                    out[k] = np.linalg.cholesky(c + _JITTER * eye)
                except np.linalg.LinAlgError as exc:
                    raise NumericalError(f"covariance {k} is not SPD even with jitter") from exc
        return out


class TruncatedMixtureModel(RejectionModel):
    """Mixture proposal, box indicator target, ``M = 1``.  ``theta`` is a StickBreakingState."""

    base_measure = "lebesgue"

    def __init__(self, region: TruncationRegion):
        self.region = region

    def log_q(self, x, theta):
        return theta.log_density(x)

    def log_f(self, x, theta):
        inside = self.region.contains(x)
        return np.where(inside, theta.log_density(x), -np.inf)

    def log_M(self, theta):
        return 0.0

    def log_accept(self, x, theta):
        return np.where(self.region.contains(x), 0.0, -np.inf)

    def log_reject_density(self, y, theta):
        return np.where(self.region.contains(y), -np.inf, theta.log_density(y))

    def propose(self, theta, rng, size):
        return theta.sample(rng, size)


def truncated_mixture_model(state: StickBreakingState, region: TruncationRegion):
    """The rejection model for ``state`` truncated to ``region`` (``state`` is its theta)."""
    if state.d != region.d:
        raise ValueError("state and region dimensions differ")
    return TruncatedMixtureModel(region)


# ---------------------------------------------------------------------------
# Blocked Gibbs


def stick_weights(counts, alpha, rng) -> np.ndarray:
    """Draw weights given allocation counts: ``V_k ~ Beta(1 + n_k, alpha + sum_{j>k} n_j)``."""
    counts = np.asarray(counts, dtype=float)
    tail = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0.0]])
    V = rng.beta(1.0 + counts[:-1], alpha + tail[:-1])
    V = np.append(V, 1.0)
    log_rest = np.concatenate([[0.0], np.cumsum(np.log1p(-np.minimum(V[:-1], 1.0)))])
    w = V * np.exp(log_rest)
    w[-1] = max(0.0, 1.0 - w[:-1].sum())
    return w / w.sum()


def allocate(state: StickBreakingState, data, rng) -> np.ndarray:
    """Sample component labels given weights and components."""
    with np.errstate(divide="ignore"):
        logp = state.component_logpdf(data) + np.log(state.weights)
    logp -= logp.max(axis=1, keepdims=True)
    prob = np.exp(logp)
    cdf = np.cumsum(prob, axis=1)
    u = rng.random(len(data)) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), state.K - 1)


def niw_posterior_draw(base: NIWPrior, data, rng):
    """One draw of ``(mu, Sigma)`` from the normal-inverse-Wishart posterior."""
    data = np.atleast_2d(data)
    n = data.shape[0] if data.size else 0
    if n:
        xbar = data.mean(axis=0)
        centered = data - xbar
        scatter = centered.T @ centered
        lam = base.lam0 + n
        mu_n = (base.lam0 * base.mu0 + n * xbar) / lam
        dev = (xbar - base.mu0)[:, None]
        Psi_n = base.Psi + scatter + (base.lam0 * n / lam) * (dev @ dev.T)
        nu_n = base.nu + n
    else:
        lam, mu_n, Psi_n, nu_n = base.lam0, base.mu0, base.Psi, base.nu
    Psi_n = 0.5 * (Psi_n + Psi_n.T)
    d = base.d
    Sigma = stats.invwishart.rvs(df=nu_n, scale=Psi_n, random_state=rng)
    Sigma = np.atleast_2d(Sigma).reshape(d, d)
    mu = rng.multivariate_normal(mu_n, Sigma / lam, method="cholesky")
    return mu, Sigma


def blocked_gibbs_sweep(state: StickBreakingState, data, rng) -> StickBreakingState:
    """Allocations, stick weights and component parameters, in that order.

    ``data`` is the completed sample (observations plus rejected proposals),
    which the untruncated mixture generated.
    """
    data = np.asarray(data, dtype=float).reshape(-1, state.d)
    base = state.base
    if base is None:
        raise ValueError("state needs a base measure")
    if len(data):
        z = allocate(state, data, rng)
        counts = np.bincount(z, minlength=state.K)
    else:
        z = np.zeros(0, dtype=int)
        counts = np.zeros(state.K, dtype=int)
    weights = stick_weights(counts, state.alpha, rng)
    order = np.argsort(z, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    means = np.empty_like(state.means)
    covs = np.empty_like(state.covs)
    sorted_data = data[order]
    for k in range(state.K):
        means[k], covs[k] = niw_posterior_draw(base, sorted_data[bounds[k]:bounds[k + 1]], rng)
    return StickBreakingState(weights, means, covs, state.alpha, base, counts)


def initial_state(X, K: int, alpha: float, base: NIWPrior, rng,
                  n_init_clusters: int = 10) -> StickBreakingState:
    """Random allocation of the observations to a few components, then one conjugate update."""
    X = np.asarray(X, dtype=float)
    k0 = min(K, n_init_clusters, max(len(X), 1))
    z = rng.integers(0, k0, size=len(X))
    counts = np.bincount(z, minlength=K)
    weights = stick_weights(counts, alpha, rng)
    means = np.empty((K, base.d))
    covs = np.empty((K, base.d, base.d))
    for k in range(K):
        means[k], covs[k] = niw_posterior_draw(base, X[z == k], rng)
    return StickBreakingState(weights, means, covs, alpha, base)


# ---------------------------------------------------------------------------
# Driver


@dataclass
class DpmmConfig:
    K: int = 50
    alpha: float = 1.0
    n_iter: int = 500
    burn_in: int = 100
    base: NIWPrior | None = None
    grid_size: int = 100
    grid_bounds: tuple | None = None      # ((lo_1, hi_1), (lo_2, hi_2)) for the density grid
    augment: bool = True
    record_components: bool = True
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if self.K < 1 or self.alpha <= 0:
            raise ValueError("need K >= 1 and alpha > 0")
        if self.n_iter < 1 or self.burn_in < 0:
            raise ValueError("need n_iter >= 1 and burn_in >= 0")


def _grid_axes(region: TruncationRegion, X, cfg: DpmmConfig):
    if cfg.grid_bounds is not None:
        bounds = np.asarray(cfg.grid_bounds, dtype=float)
    elif region.bounded:
        bounds = np.column_stack([region.lower, region.upper])
    else:
        lo, hi = X.min(axis=0), X.max(axis=0)
        pad = 0.25 * (hi - lo) + 1e-9
        bounds = np.column_stack([np.maximum(lo - pad, region.lower),
                                  np.minimum(hi + pad, region.upper)])
    m = cfg.grid_size
    # cell centers, so the grid is a midpoint rule over the bounds
    axes = [lo + (np.arange(m) + 0.5) * (hi - lo) / m for lo, hi in bounds]
    return axes, float(np.prod((bounds[:, 1] - bounds[:, 0]) / m))


def grid_density(state: StickBreakingState, region: TruncationRegion, points, cell_volume,
                 normalize: bool) -> np.ndarray:
    """Truncated mixture density at grid points.

    With ``normalize`` the mass inside the region is estimated by the midpoint
    rule on the same grid (valid when the grid spans the region).
    """
    dens = np.exp(state.log_density(points)) * region.contains(points)
    if normalize:
        mass = dens.sum() * cell_volume
        if mass > 0:
            dens = dens / mass
    return dens


def fit_truncated_dpmm(X, region: TruncationRegion, config: DpmmConfig, rng,
                       callback=None) -> ChainTrace:
    """Blocked Gibbs for a DP mixture truncated to ``region``, augmented with rejected draws.

    Each iteration draws from the current mixture until ``len(X)`` points land
    inside the region, keeps the outside draws as the augmentation and runs
    one blocked Gibbs sweep on observations plus augmentation.  With
    ``config.augment=False`` the truncation is ignored (standard blocked
    Gibbs).

    The trace records weights, means and covariance entries per iteration;
    for ``d <= 2`` ``trace.info`` also holds the density grid (``grid_axes``,
    ``mean_density``, ``mean_log_density``) averaged over kept iterations.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != region.d:
        raise ValueError(f"X must have shape (n, {region.d})")
    if len(X) == 0:
        raise ValueError("need at least one observation")
    outside = ~region.contains(X)
    if np.any(outside):
        raise DomainError(f"{int(outside.sum())} observations fall outside the region "
                          f"(first row {int(np.flatnonzero(outside)[0])})")
    cfg = config
    base = cfg.base or NIWPrior.default_for(region)
    n, d = X.shape
    K = cfg.K
    state = initial_state(X, K, cfg.alpha, base, rng)
    model = truncated_mixture_model(state, region)

    labels = [f"w[{k + 1}]" for k in range(K)]
    iu = np.triu_indices(d)
    if cfg.record_components:
        labels += [f"mu[{k + 1},{j + 1}]" for k in range(K) for j in range(d)]
        labels += [f"Sigma[{k + 1},{i + 1},{j + 1}]" for k in range(K) for i, j in zip(*iu)]
    draws = np.empty((cfg.n_iter, len(labels)))
    nrej = np.zeros(cfg.n_iter, dtype=int)
    secs = np.zeros(cfg.n_iter)
    occupied = np.zeros(cfg.n_iter)

    with_grid = d <= 2
    if with_grid:
        axes, cell = _grid_axes(region, X, cfg)
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.column_stack([m.ravel() for m in mesh])
        normalize = region.bounded and cfg.grid_bounds is None
        sum_dens = np.zeros(len(points))
        sum_log = np.zeros(len(points))

    for it in range(cfg.burn_in + cfg.n_iter):
        t0 = time.perf_counter()
        if cfg.augment and not region.is_whole_space:
            rej = resample_rejected(model, state, n, rng, cfg.max_attempts)
            nonempty = [r for r in rej if len(r)]
            Y = np.concatenate(nonempty) if nonempty else np.zeros((0, d))
        else:
            Y = np.zeros((0, d))
        state = blocked_gibbs_sweep(state, np.concatenate([X, Y]), rng)
        elapsed = time.perf_counter() - t0
        j = it - cfg.burn_in
        if j >= 0:
            row = [state.weights]
            if cfg.record_components:
                row += [state.means.ravel(), state.covs[:, iu[0], iu[1]].ravel()]
            draws[j] = np.concatenate(row)
            nrej[j] = len(Y)
            secs[j] = elapsed
            occupied[j] = np.count_nonzero(state.counts)
            if with_grid:
                dens = grid_density(state, region, points, cell, normalize)
                sum_dens += dens
                with np.errstate(divide="ignore"):
                    sum_log += np.log(dens)
        if callback is not None:
            callback(it, state, Y)

    info = {"sampler": "blocked-gibbs" + ("+augmentation" if cfg.augment else ""),
            "K": K, "alpha": cfg.alpha, "n": n, "d": d, "burn_in": cfg.burn_in,
            "region": {"lower": region.lower.tolist(), "upper": region.upper.tolist()},
            "base": {"mu0": base.mu0.tolist(), "lam0": base.lam0,
                     "Psi": base.Psi.tolist(), "nu": base.nu},
            "final_state": state}
    if with_grid:
        shape = tuple(len(a) for a in axes)
        info["grid_axes"] = axes
        info["mean_density"] = (sum_dens / cfg.n_iter).reshape(shape)
        info["mean_log_density"] = (sum_log / cfg.n_iter).reshape(shape)
        info["cell_volume"] = cell
    return ChainTrace(draws, labels, seconds=secs, n_rejected=nrej,
                      extra={"n_occupied": occupied}, info=info)


def grid_to_csv(trace: ChainTrace, path=None) -> str:
    """Write the averaged density grid: one row per grid point."""
    axes = trace.info["grid_axes"]
    mean = trace.info["mean_density"]
    mlog = trace.info["mean_log_density"]
    mesh = np.meshgrid(*axes, indexing="ij")
    names = ["x", "y"][: len(axes)]
    lines = [",".join(names + ["mean_density", "mean_log_density"])]
    for idx in np.ndindex(mean.shape):
        coords = [repr(float(m[idx])) for m in mesh]
        lines.append(",".join(coords + [repr(float(mean[idx])), repr(float(mlog[idx]))]))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def grid_modes(density: np.ndarray, axes, n_modes: int | None = None):
    """Strict local maxima of a 2-D grid density, highest first, as coordinates."""
    dens = np.asarray(density, dtype=float)
    if dens.ndim != 2:
        raise ValueError("grid_modes expects a 2-D grid")
    padded = np.pad(dens, 1, constant_values=-np.inf)
    core = padded[1:-1, 1:-1]
    is_max = np.ones_like(dens, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = padded[1 + di:padded.shape[0] - 1 + di, 1 + dj:padded.shape[1] - 1 + dj]
            is_max &= core > nb if (di, dj) < (0, 0) else core >= nb
    # flat zero regions (outside the support) are not modes
    is_max &= dens > 0
    idx = np.argwhere(is_max)
    heights = dens[is_max]
    order = np.argsort(-heights)
    idx = idx[order][:n_modes] if n_modes else idx[order]
    return np.column_stack([axes[0][idx[:, 0]], axes[1][idx[:, 1]]]), np.sort(heights)[::-1][: len(idx)]
