"""Gaussian process density sampler.

The density is ``p(x) ∝ g0(x) sigma(f(x))`` with ``g0`` a Gaussian base
density, ``sigma`` the logistic function and ``f ~ GP(m, k)``.  Since
``g0 sigma(f) <= g0``, draws come from rejection sampling with proposal
``g0`` and ``M = 1``; ``f`` is evaluated retrospectively, only at proposed
points, by conditioning on every value revealed so far.

Inference instantiates the rejected proposals, after which ``f`` at accepted
and rejected points has a GP-classification posterior (labels "accepted" and
"rejected"), and the base parameters are conjugate.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_triangular
from scipy.special import expit, log_expit

from .core import DEFAULT_MAX_ATTEMPTS, RejectionModel
from .errors import DomainError, MaxAttemptsError, NumericalError
from .trace import ChainTrace

log = logging.getLogger(__name__)

JITTER = 1e-8
_MAX_JITTER = 1e-4
DUPLICATE_TOL = 1e-9


# ---------------------------------------------------------------------------
# Kernel and Gaussian-process conditioning


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim <= 1 else x


def sq_dist(a, b) -> np.ndarray:
    a, b = _as_points(a), _as_points(b)
    if a.shape[1] == 1:
        return (a - b.T) ** 2
    return np.maximum((a * a).sum(1)[:, None] + (b * b).sum(1)[None] - 2.0 * a @ b.T, 0.0)


def _tri_solve(L, b):
    """``L^{-1} b`` for lower-triangular ``L``."""
    return solve_triangular(L, b, lower=True, check_finite=False)


def se_kernel(a, b, variance: float, lengthscale: float) -> np.ndarray:
    """Squared-exponential covariance ``v exp(-|a-b|^2 / (2 l^2))``."""
    return variance * np.exp(-0.5 * sq_dist(a, b) / lengthscale ** 2)


def jittered_cholesky(K, jitter: float = JITTER) -> np.ndarray:
    """Lower Cholesky factor of ``K + jitter I``, escalating the jitter tenfold on failure."""
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    eye = np.eye(n)
    j = jitter
    while j <= _MAX_JITTER:
        try:
            return np.linalg.cholesky(K + j * eye)
        except np.linalg.LinAlgError:
            log.debug("Cholesky failed with jitter %g", j)
            j *= 10.0
    raise NumericalError(f"kernel matrix of order {n} is not SPD even with jitter {_MAX_JITTER}")


class GpConditioner:
    """GP values revealed so far, with a Cholesky factor that grows by blocks.

    Parameters
    ----------
    kernel : callable ``(a, b) -> covariance matrix``
    mean : float
        Constant prior mean.
    points, values : arrays
        Locations (``(m, d)``) and function values already revealed.
    """

    def __init__(self, kernel, mean: float, points, values, jitter: float = JITTER, L=None):
        self.kernel = kernel
        self.mean = float(mean)
        self.jitter = jitter
        self.values = np.asarray(values, dtype=float).ravel()
        pts = np.asarray(points, dtype=float)
        dim = pts.shape[-1] if pts.ndim == 2 else 1
        self.points = pts.reshape(len(self.values), dim) if pts.size else np.zeros((0, dim))
        if len(self.points) != len(self.values):
            raise ValueError("points and values are misaligned")
        self.L = L if L is not None else jittered_cholesky(kernel(self.points, self.points), jitter)
        # whitened residuals L^{-1}(v - m)
        self.w = _tri_solve(self.L, self.values - self.mean) if len(self.values) else np.zeros(0)

    def __len__(self):
        return len(self.values)

    def _duplicates(self, new):
        if not len(self.points):
            return np.full(len(new), -1)
        d2 = sq_dist(new, self.points)
        j = np.argmin(d2, axis=1)
        return np.where(d2[np.arange(len(new)), j] <= DUPLICATE_TOL ** 2, j, -1)

    def conditional(self, new):
        """Posterior mean and covariance of ``f`` at ``new`` given the revealed values.

        Locations within ``1e-9`` of a revealed one get its stored value and
        zero variance.
        """
        new = _as_points(new)
        Knn = self.kernel(new, new)
        if not len(self):
            return np.full(len(new), self.mean), Knn
        A = _tri_solve(self.L, self.kernel(self.points, new))
        mu = self.mean + A.T @ self.w
        cov = Knn - A.T @ A
        dup = self._duplicates(new)
        hit = dup >= 0
        if hit.any():
            mu[hit] = self.values[dup[hit]]
            cov[hit, :] = 0.0
            cov[:, hit] = 0.0
        return mu, cov

    def sample(self, new, rng) -> np.ndarray:
        """Joint draw of ``f`` at ``new`` given the revealed values (nothing is appended)."""
        new = _as_points(new)
        mu, cov = self.conditional(new)
        dup = self._duplicates(new)
        free = dup < 0
        out = mu.copy()
        if free.any():
            Lc = jittered_cholesky(cov[np.ix_(free, free)], self.jitter)
            out[free] = mu[free] + Lc @ rng.standard_normal(int(free.sum()))
        return out

    def reveal(self, new, rng, keep=None):
        """Draw ``f`` jointly at ``new`` and add the first ``keep`` values to the revealed set.

        ``keep`` may be a callable receiving the drawn values and returning
        how many leading points to keep (default: all).  The kept prefix is
        appended using the same triangular solve and Cholesky factor as the
        draw.  Returns all drawn values.
        """
        new = _as_points(new)
        if len(self) and np.any(self._duplicates(new) >= 0):
            vals = self.sample(new, rng)
            k = len(vals) if keep is None else int(keep(vals))
            self.append(new[:k], vals[:k])
            return vals
        Knn = self.kernel(new, new)
        if len(self):
            A = _tri_solve(self.L, self.kernel(self.points, new))
            mu = self.mean + A.T @ self.w
            cov = Knn - A.T @ A
        else:
            A = np.zeros((0, len(new)))
            mu = np.full(len(new), self.mean)
            cov = Knn
        Lc = jittered_cholesky(0.5 * (cov + cov.T), self.jitter)
        z = rng.standard_normal(len(new))
        vals = mu + Lc @ z
        k = len(vals) if keep is None else int(keep(vals))
        if k:
            # leading block of a Cholesky factor factors the leading block
            m = len(self)
            L = np.zeros((m + k, m + k))
            L[:m, :m] = self.L
            L[m:, :m] = A[:, :k].T
            L[m:, m:] = Lc[:k, :k]
            self.L = L
            self.w = np.concatenate([self.w, z[:k]])
            self.points = np.concatenate([self.points, new[:k]])
            self.values = np.concatenate([self.values, vals[:k]])
        return vals

    def append(self, new, values):
        """Reveal ``values`` at ``new``, extending the factor by one block."""
        new = _as_points(new)
        values = np.asarray(values, dtype=float).ravel()
        if not len(new):
            return
        keep = self._duplicates(new) < 0
        new, values = new[keep], values[keep]
        if not len(new):
            return
        if not len(self):
            self.__init__(self.kernel, self.mean, new, values, self.jitter)
            return
        A = _tri_solve(self.L, self.kernel(self.points, new))
        S = self.kernel(new, new) - A.T @ A
        L22 = jittered_cholesky(0.5 * (S + S.T), self.jitter)
        m, b = len(self), len(new)
        L = np.zeros((m + b, m + b))
        L[:m, :m] = self.L
        L[m:, :m] = A.T
        L[m:, m:] = L22
        w22 = _tri_solve(L22, values - self.mean - A.T @ self.w)
        self.L = L
        self.w = np.concatenate([self.w, w22])
        self.points = np.concatenate([self.points, new])
        self.values = np.concatenate([self.values, values])


# ---------------------------------------------------------------------------
# State


@dataclass(frozen=True)
class NIGPrior:
    """Normal-inverse-gamma prior on the base density: ``sigma2 ~ IG(a, b)``, ``mu ~ N(m, sigma2/lam)``.

    The tuple order is (mean, precision scale, shape, scale).
    """

    m: float = 0.0
    lam: float = 0.1
    a: float = 1.0
    b: float = 10.0

    def __post_init__(self):
        if self.lam <= 0 or self.a <= 0 or self.b <= 0:
            raise ValueError("NIG needs lam, a, b > 0")


@dataclass
class GpState:
    """Base density, kernel hyperparameters and revealed function values.

    ``base_mu`` has one entry per dimension; the base covariance is
    ``base_var * I``.
    """

    base_mu: np.ndarray
    base_var: float
    kernel_var: float = 1.0
    lengthscale: float = 1.0
    mean: float = 0.0
    prior: NIGPrior = field(default_factory=NIGPrior)
    locations: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        self.base_mu = np.atleast_1d(np.asarray(self.base_mu, dtype=float))
        if self.base_var <= 0:
            raise ValueError("base_var must be > 0")
        if self.kernel_var < 0 or self.lengthscale <= 0:
            raise ValueError("need kernel_var >= 0 and lengthscale > 0")
        d = self.base_mu.size
        if self.locations is None:
            self.locations = np.zeros((0, d))
            self.values = np.zeros(0)
        self.locations = _as_points(self.locations).reshape(-1, d)
        self.values = np.asarray(self.values, dtype=float).ravel()
        if len(self.locations) != len(self.values):
            raise ValueError("locations and values are misaligned")

    @property
    def d(self) -> int:
        return self.base_mu.size

    def kernel(self, a, b):
        return se_kernel(a, b, self.kernel_var, self.lengthscale)

    def conditioner(self) -> GpConditioner:
        return GpConditioner(self.kernel, self.mean, self.locations, self.values)

    def log_base(self, x) -> np.ndarray:
        x = _as_points(x)
        r2 = ((x - self.base_mu) ** 2).sum(axis=1)
        return -0.5 * r2 / self.base_var - 0.5 * self.d * math.log(2 * math.pi * self.base_var)

    def sample_base(self, rng, size: int) -> np.ndarray:
        return self.base_mu + math.sqrt(self.base_var) * rng.standard_normal((size, self.d))


def gpds_conditional_f(state: GpState, new_points):
    """GP posterior mean and covariance of ``f`` at ``new_points`` given the state's values."""
    return state.conditioner().conditional(new_points)


class FixedFunctionGpds(RejectionModel):
    """The sampler with a fully known function ``f``: ``f(x) = g0(x) sigma(f(x))``, ``q = g0``, ``M = 1``.

    ``theta`` is ``(state, func)``, ``func`` mapping an ``(n, d)`` array to
    ``n`` values.
    """

    base_measure = "lebesgue"

    def log_q(self, x, theta):
        return theta[0].log_base(x)

    def log_f(self, x, theta):
        state, func = theta
        return state.log_base(x) + log_expit(func(_as_points(x)))

    def log_M(self, theta):
        return 0.0

    def log_accept(self, x, theta):
        return log_expit(theta[1](_as_points(x)))

    def propose(self, theta, rng, size):
        return theta[0].sample_base(rng, size)


# ---------------------------------------------------------------------------
# Generation


@dataclass
class GenerationResult:
    X: np.ndarray
    Y: np.ndarray
    f_X: np.ndarray
    f_Y: np.ndarray
    conditioner: GpConditioner = field(repr=False)

    @property
    def n_proposals(self) -> int:
        return len(self.X) + len(self.Y)


def _n_consumed(ok, need):
    """Proposals used up to and including the ``need``-th acceptance (all if fewer)."""
    cum = np.cumsum(ok)
    return int(np.searchsorted(cum, need)) + 1 if cum[-1] >= need else len(ok)


def gpds_generate(state: GpState, n: int, rng, max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                  conditioner: GpConditioner | None = None) -> GenerationResult:
    """Propose from ``g0``, reveal ``f`` there, accept with ``sigma(f)``, until ``n`` acceptances.

    Proposals are made in blocks: ``f`` is drawn jointly at a block of
    proposals given everything revealed so far and the block is consumed in
    order, which has the same law as revealing one point at a time.  Values
    past the ``n``-th acceptance are never looked at and are dropped.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    cond = conditioner if conditioner is not None else state.conditioner()
    xs, fs, acc = [], [], []
    n_acc, tried = 0, 0
    rate = 0.5
    while n_acc < n:
        if tried >= max_attempts:
            raise MaxAttemptsError(tried, n_acc, n)
        need = n - n_acc
        block = int(min(max(need / max(rate, 0.02) * 1.2 + 4, 8), 512, max_attempts - tried))
        pts = state.sample_base(rng, block)
        u = rng.random(block)

        def consumed(fv):
            return _n_consumed(u < expit(fv), need)

        fv = cond.reveal(pts, rng, keep=consumed)
        stop = consumed(fv)
        ok = (u < expit(fv))[:stop]
        pts, fv = pts[:stop], fv[:stop]
        xs.append(pts)
        fs.append(fv)
        acc.append(ok)
        n_acc += int(ok.sum())
        tried += stop
        rate = max(n_acc, 1) / tried
    xs, fs, acc = np.concatenate(xs), np.concatenate(fs), np.concatenate(acc)
    return GenerationResult(xs[acc], xs[~acc], fs[acc], fs[~acc], cond)


# ---------------------------------------------------------------------------
# Latent function updates


def _log_lik(f, n_acc):
    return float(log_expit(f[:n_acc]).sum() + log_expit(-f[n_acc:]).sum())


def elliptical_slice(f, L, mean, log_lik, rng, cur_ll=None):
    """One elliptical slice sampling transition for ``f ~ N(mean, L L^T)`` times ``exp(log_lik)``."""
    nu = L @ rng.standard_normal(len(f))
    ll = log_lik(f) if cur_ll is None else cur_ll
    threshold = ll + math.log(rng.random())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = theta - 2.0 * math.pi, theta
    f0 = f - mean
    while True:
        prop = f0 * math.cos(theta) + nu * math.sin(theta) + mean
        pll = log_lik(prop)
        if pll > threshold:
            return prop, pll
        if theta < 0:
            lo = theta
        else:
            hi = theta
        theta = rng.uniform(lo, hi)


def _hmc_whitened(f, L, mean, n_acc, rng, step_size, n_leapfrog):
    """HMC on whitened coordinates ``u = L^{-1}(f - mean)`` (standard normal prior)."""
    u = _tri_solve(L, f - mean)

    def logp_grad(u):
        g = L @ u + mean
        ll = _log_lik(g, n_acc)
        dg = np.concatenate([expit(-g[:n_acc]), -expit(g[n_acc:])])
        return ll - 0.5 * u @ u, L.T @ dg - u

    lp0, grad = logp_grad(u)
    p = rng.standard_normal(len(u))
    h0 = -lp0 + 0.5 * p @ p
    q = u.copy()
    for _ in range(n_leapfrog):
        p = p + 0.5 * step_size * grad
        q = q + step_size * p
        lp, grad = logp_grad(q)
        p = p + 0.5 * step_size * grad
    h1 = -lp + 0.5 * p @ p
    if np.isfinite(h1) and math.log(rng.random()) < h0 - h1:
        return L @ q + mean
    return f


def update_latent_f(state: GpState, X, Y, f, rng, method: str = "ess", n_steps: int = 1,
                    L=None, step_size: float = 0.1, n_leapfrog: int = 10) -> np.ndarray:
    """Update ``f`` at ``X`` then ``Y`` (concatenated in that order).

    Targets ``N(f; m, K) prod_X sigma(f) prod_Y {1 - sigma(f)}`` by elliptical
    slice sampling (default) or HMC.  ``L`` may pass a precomputed Cholesky
    factor of the kernel matrix.
    """
    X, Y = _as_points(X), _as_points(Y)
    pts = np.concatenate([X, Y]) if len(Y) else X
    f = np.asarray(f, dtype=float).copy()
    if len(pts) == 0:
        return f
    if L is None:
        L = jittered_cholesky(state.kernel(pts, pts))
    n_acc = len(X)

    def ll(g):
        return _log_lik(g, n_acc)

    cur = ll(f)
    for _ in range(n_steps):
        if method == "ess":
            f, cur = elliptical_slice(f, L, state.mean, ll, rng, cur)
        elif method == "hmc":
            f = _hmc_whitened(f, L, state.mean, n_acc, rng, step_size, n_leapfrog)
        else:
            raise ValueError(f"unknown latent update {method!r}")
    return f


# ---------------------------------------------------------------------------
# Hyperparameter updates


def update_base(state: GpState, points, rng) -> GpState:
    """Conjugate normal-inverse-gamma draw of ``(base_mu, base_var)`` from all points.

    Every accepted and rejected point is an independent ``g0`` draw in the
    augmented joint, so the usual conjugate update applies.
    """
    pts = _as_points(points)
    n, d = pts.shape
    pr = state.prior
    xbar = pts.mean(axis=0)
    ss = float(((pts - xbar) ** 2).sum())
    lam_n = pr.lam + n
    mu_n = (pr.lam * pr.m + n * xbar) / lam_n
    a_n = pr.a + 0.5 * n * d
    b_n = pr.b + 0.5 * ss + 0.5 * pr.lam * n * float(((xbar - pr.m) ** 2).sum()) / lam_n
    var = b_n / rng.gamma(a_n)
    mu = mu_n + math.sqrt(var / lam_n) * rng.standard_normal(d)
    return replace(state, base_mu=mu, base_var=var)


def _gauss_logpdf_chol(f, mean, L):
    u = _tri_solve(L, f - mean)
    return -0.5 * u @ u - np.log(np.diag(L)).sum()


def update_kernel(state: GpState, points, f, rng, proposal_sd: float = 0.2,
                  prior_loc=(0.0, 0.0), prior_sd: float = 1.0, L=None):
    """Random-walk MH on ``(log kernel_var, log lengthscale)`` with ``f`` held fixed.

    Log-normal priors with location ``prior_loc`` and scale ``prior_sd``.
    Returns ``(state, accepted, L)`` with ``L`` the Cholesky factor under the
    returned hyperparameters.
    """
    pts = _as_points(points)
    if L is None:
        L = jittered_cholesky(state.kernel(pts, pts))
    cur = np.log([state.kernel_var, state.lengthscale])
    prop = cur + proposal_sd * rng.standard_normal(2)
    v, ell = np.exp(prop)
    try:
        L_new = jittered_cholesky(se_kernel(pts, pts, v, ell))
    except NumericalError:
        return state, False, L
    loc = np.asarray(prior_loc)

    def log_prior(z):
        return -0.5 * float(((z - loc) / prior_sd) @ ((z - loc) / prior_sd))

    log_alpha = (_gauss_logpdf_chol(f, state.mean, L_new) + log_prior(prop)
                 - _gauss_logpdf_chol(f, state.mean, L) - log_prior(cur))
    if math.log(rng.random()) < log_alpha:
        return replace(state, kernel_var=float(v), lengthscale=float(ell)), True, L_new
    return state, False, L


# ---------------------------------------------------------------------------
# Inference driver


@dataclass
class GpdsConfig:
    n_iter: int = 2000
    burn_in: int = 500
    latent_method: str = "ess"
    latent_steps: int = 3
    update_base: bool = True
    update_kernel: bool = True
    kernel_proposal_sd: float = 0.2
    kernel_var: float = 1.0
    lengthscale: float = 1.0
    prior: NIGPrior = field(default_factory=NIGPrior)
    grid_points: int = 1024
    grid_halfwidth: float = 3.0        # reporting range: data range +- this many base sds
    norm_halfwidth: float = 6.0        # normalization range, wider than the reporting one
    coarse_points: int = 160
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    keep_densities: bool = True

    def __post_init__(self):
        if self.n_iter < 1 or self.burn_in < 0:
            raise ValueError("need n_iter >= 1 and burn_in >= 0")
        if self.latent_method not in ("ess", "hmc"):
            raise ValueError("latent_method must be 'ess' or 'hmc'")


def _grids(X, cfg: GpdsConfig):
    lo, hi = float(X.min()), float(X.max())
    sd = float(X.std()) if len(X) > 1 else 1.0
    report = np.linspace(lo - cfg.grid_halfwidth * sd, hi + cfg.grid_halfwidth * sd, cfg.grid_points)
    norm = np.linspace(lo - cfg.norm_halfwidth * sd, hi + cfg.norm_halfwidth * sd,
                       2 * cfg.grid_points)
    coarse = np.linspace(norm[0], norm[-1], cfg.coarse_points)
    return report, norm, coarse


def predictive_density(state: GpState, cond: GpConditioner, grids, rng):
    """One posterior draw of the normalized density on the reporting grid.

    ``f`` is drawn jointly on a coarse grid given the revealed values and
    linearly interpolated; the normalizer uses the wider grid.
    """
    report, norm, coarse = grids
    fc = cond.sample(coarse[:, None], rng)

    def dens(x):
        return np.exp(state.log_base(x[:, None])) * expit(np.interp(x, coarse, fc))

    z = trapezoid(dens(norm), norm)
    return dens(report) / z


def fit_gpds(X, config: GpdsConfig, rng, callback=None) -> ChainTrace:
    """Markov chain for the GP density sampler given 1-D data ``X``.

    Per iteration: regenerate the rejected proposals by running the sampler
    to ``len(X)`` acceptances while conditioning on ``f`` at ``X`` and the
    previous rejections; update ``f`` at ``X`` and the new rejections; update
    the base parameters (conjugate) and kernel hyperparameters (MH).  Values
    of ``f`` anywhere else are dropped at the end of each iteration.

    ``trace.info`` carries the predictive grid (``grid``, ``mean_density``
    and, with ``keep_densities``, the 10/50/90% pointwise quantiles).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 1 or len(X) == 0:
        raise ValueError("fit_gpds needs a non-empty 1-D sample")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contain non-finite values")
    cfg = config
    n = len(X)
    Xp = X[:, None]
    state = GpState(np.array([X.mean()]), float(X.var()) if n > 1 else 1.0,
                    cfg.kernel_var, cfg.lengthscale, 0.0, cfg.prior)
    f_X = state.conditioner().sample(Xp, rng)
    Y = np.zeros((0, 1))
    f_Y = np.zeros(0)
    grids = _grids(X, cfg)

    labels = ["base_mu", "base_var", "kernel_var", "lengthscale"]
    draws = np.empty((cfg.n_iter, 4))
    nrej = np.zeros(cfg.n_iter, dtype=int)
    secs = np.zeros(cfg.n_iter)
    acc_k = np.zeros(cfg.n_iter, dtype=bool)
    mean_f = np.zeros(cfg.n_iter)
    dens_sum = np.zeros(len(grids[0]))
    dens_all = np.empty((cfg.n_iter, len(grids[0]))) if cfg.keep_densities else None

    L = None               # Cholesky factor over [X; Y] under the current kernel
    for it in range(cfg.burn_in + cfg.n_iter):
        t0 = time.perf_counter()
        # 1-2: new rejected proposals, conditioning on f at X and old Y
        cond = GpConditioner(state.kernel, state.mean, np.concatenate([Xp, Y]),
                             np.concatenate([f_X, f_Y]), L=L)
        gen = gpds_generate(state, n, rng, cfg.max_attempts, conditioner=cond)
        Y, f_Y = gen.Y, gen.f_Y
        pts = np.concatenate([Xp, Y])
        # 3: latent function at X and Y
        L = jittered_cholesky(state.kernel(pts, pts))
        f = update_latent_f(state, Xp, Y, np.concatenate([f_X, f_Y]), rng,
                            cfg.latent_method, cfg.latent_steps, L=L)
        # 4: hyperparameters
        if cfg.update_base:
            state = update_base(state, pts, rng)
        ok = True       # without a kernel move every iteration counts as accepted
        if cfg.update_kernel:
            state, ok, L = update_kernel(state, pts, f, rng, cfg.kernel_proposal_sd,
                                         np.log([cfg.kernel_var, cfg.lengthscale]), L=L)
        f_X, f_Y = f[:n], f[n:]
        elapsed = time.perf_counter() - t0
        j = it - cfg.burn_in
        if j >= 0:
            draws[j] = [state.base_mu[0], state.base_var, state.kernel_var, state.lengthscale]
            nrej[j] = len(Y)
            secs[j] = elapsed
            acc_k[j] = ok
            mean_f[j] = f.mean()
            cond = GpConditioner(state.kernel, state.mean, pts, f, L=L)
            dens = predictive_density(state, cond, grids, rng)
            dens_sum += dens
            if dens_all is not None:
                dens_all[j] = dens
        if callback is not None:
            callback(it, state, Y, f)

    info = {"sampler": f"gpds-{cfg.latent_method}", "n": n, "burn_in": cfg.burn_in,
            "prior": {"m": cfg.prior.m, "lam": cfg.prior.lam, "a": cfg.prior.a, "b": cfg.prior.b,
                      "order": "mean,precision-scale,shape,scale"},
            "grid": grids[0], "mean_density": dens_sum / cfg.n_iter, "final_state": state}
    if dens_all is not None:
        q = np.quantile(dens_all, [0.1, 0.5, 0.9], axis=0)
        info["q10"], info["q50"], info["q90"] = q
    return ChainTrace(draws, labels, seconds=secs, n_rejected=nrej, accepted=acc_k,
                      extra={"mean_f": mean_f}, info=info)


def density_grid_to_csv(trace: ChainTrace, path=None) -> str:
    """Predictive density grid with pointwise quantile columns when available."""
    cols = ["x", "mean_density"] + [k for k in ("q10", "q50", "q90") if k in trace.info]
    data = np.column_stack([trace.info["grid"], trace.info["mean_density"]]
                           + [trace.info[k] for k in cols[2:]])
    lines = [",".join(cols)] + [",".join(repr(float(v)) for v in row) for row in data]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def rejected_histogram(counts, bins: int | None = None):
    """Histogram of per-iteration rejected counts: ``(edges, frequencies)``."""
    counts = np.asarray(counts, dtype=int)
    if bins is None:
        bins = max(10, min(100, int(np.sqrt(len(counts)))))
    freq, edges = np.histogram(counts, bins=bins)
    return edges, freq


def rejected_histogram_to_csv(counts, path=None, bins: int | None = None) -> str:
    edges, freq = rejected_histogram(counts, bins)
    lines = ["lower,upper,count"] + [f"{edges[i]!r},{edges[i + 1]!r},{int(freq[i])}"
                                     for i in range(len(freq))]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def density_modes(density, grid, n_modes: int | None = None) -> np.ndarray:
    """Interior local maxima of a 1-D density curve, highest first."""
    dens = np.asarray(density, dtype=float)
    idx = np.flatnonzero((dens[1:-1] > dens[:-2]) & (dens[1:-1] >= dens[2:])) + 1
    idx = idx[np.argsort(-dens[idx])]
    return np.asarray(grid, dtype=float)[idx[:n_modes] if n_modes else idx]
