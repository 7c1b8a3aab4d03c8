"""Posterior inference for matrix Langevin parameters ``(G, kappa, H)``.

``H`` and ``G`` have matrix Langevin conditionals and are drawn exactly.  The
concentrations ``kappa`` carry the intractable normalizer ``Z(kappa)``; they
are updated on the space augmented with the rejected proposals of the exact
sampler (random-walk MH or HMC), by the exchange algorithm, or by MH with an
asymptotic approximation to ``Z``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import DEFAULT_MAX_ATTEMPTS, log1mexp, resample_rejected
from .errors import DomainError
from .specfun import log_bessel_norm_and_ratio, log_z_asymptotic
from .stiefel import (LangevinParams, StiefelLangevinModel, bessel_orders, log_D_kappa,
                      log_D_points, nullspace_projections, orthonormalize,
                      sample_matrix_langevin)
from .trace import ChainTrace

SAMPLERS = ("hmc", "rw", "exchange", "approx")


@dataclass(frozen=True)
class LangevinPrior:
    """Independent priors: ``H ~ ML(F0)``, ``G ~ ML(F1)``, ``kappa_i ~ Gamma(a0, b0)``.

    ``b0`` is a rate.  The default ``Gamma(1, 0.1)`` is the exponential prior
    with mean 10 and variance 100.  ``F0 = None`` / ``F1 = None`` mean
    uniform priors.
    """

    a0: float = 1.0
    b0: float = 0.1
    F0: np.ndarray | None = None
    F1: np.ndarray | None = None

    def log_kappa(self, kappa) -> float:
        kappa = np.asarray(kappa, dtype=float)
        if np.any(kappa <= 0):
            return -math.inf
        return float(np.sum((self.a0 - 1.0) * np.log(kappa) - self.b0 * kappa))

    def grad_log_kappa(self, kappa) -> np.ndarray:
        kappa = np.asarray(kappa, dtype=float)
        return (self.a0 - 1.0) / kappa - self.b0


@dataclass
class LangevinPosteriorState:
    """Current parameters plus the data summaries the updates need.

    ``S`` is the sum of the observations rotated by the current ``H``,
    ``sum_i X_i H``, so that the rotated data follow ``ML(G, kappa, I)``.
    """

    params: LangevinParams
    prior: LangevinPrior
    X: np.ndarray                 # (n, d, p), unrotated observations
    S: np.ndarray = field(init=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.S = self.X.sum(axis=0) @ self.params.H if len(self.X) else \
            np.zeros((self.params.d, self.params.p))

    @property
    def n(self) -> int:
        return len(self.X)

    def set_params(self, params: LangevinParams):
        self.params = params
        self.S = self.X.sum(axis=0) @ params.H if self.n else np.zeros((params.d, params.p))


# ---------------------------------------------------------------------------
# Conjugate updates


def update_H(state: LangevinPosteriorState, rng) -> np.ndarray:
    """Draw ``H`` from ``ML(S^T G kappa + F0)`` on ``O(p)`` and rotate the data.

    ``S`` here is the unrotated sum of observations.
    """
    G, kappa = state.params.G, state.params.kappa
    S_raw = state.X.sum(axis=0) if state.n else np.zeros_like(G)
    A = S_raw.T @ (G * kappa)
    if state.prior.F0 is not None:
        A = A + state.prior.F0
    H = sample_matrix_langevin(LangevinParams.from_F(A), rng)
    state.set_params(replace(state.params, H=H))
    return H


def update_G(state: LangevinPosteriorState, rng) -> np.ndarray:
    """Draw ``G`` from ``ML(S kappa + F1)`` on ``V_{p,d}`` (``S`` rotated by ``H``)."""
    A = state.S * state.params.kappa
    if state.prior.F1 is not None:
        A = A + state.prior.F1
    G = sample_matrix_langevin(LangevinParams.from_F(A), rng)
    state.set_params(replace(state.params, G=G))
    return G


# ---------------------------------------------------------------------------
# Augmented likelihood for kappa


@dataclass
class AugmentedLangevinData:
    """Observations (in the ``H = I`` frame) plus rejected proposals, summarized.

    ``a`` caches the projection lengths ``||N_r^T G_r||`` of each rejected
    point; they depend on ``G`` and the point but not on ``kappa``.
    """

    G: np.ndarray
    S_obs: np.ndarray            # sum of rotated observations
    n: int
    Y: np.ndarray                # (m, d, p) rejected proposals
    a: np.ndarray = field(init=False)
    S: np.ndarray = field(init=False)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float).reshape(-1, *self.G.shape)
        self.a = nullspace_projections(self.Y, self.G) if len(self.Y) else \
            np.zeros((0, self.G.shape[1]))
        self.S = self.S_obs + self.Y.sum(axis=0)
        # kappa-independent pieces of the log joint
        self.trace_coef = np.einsum("dp,dp->p", self.G, self.S)
        self.orders = np.broadcast_to(bessel_orders(*self.G.shape),
                                      (len(self.Y) + 1, self.G.shape[1]))

    @property
    def d(self) -> int:
        return self.G.shape[0]

    @property
    def n_rejected(self) -> int:
        return len(self.Y)

    @property
    def N(self) -> int:
        return self.n + self.n_rejected

    def check_cache(self, tol: float = 1e-10) -> bool:
        if not len(self.Y):
            return True
        return bool(np.max(np.abs(nullspace_projections(self.Y, self.G) - self.a)) <= tol)


def augment(state: LangevinPosteriorState, rng,
            max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> AugmentedLangevinData:
    """Instantiate rejected proposals for every observation at the current ``(G, kappa)``."""
    params = state.params
    model = StiefelLangevinModel(params.d, params.p)
    rej = resample_rejected(model, (params.G, params.kappa), state.n, rng, max_attempts)
    nonempty = [r for r in rej if len(r)]
    Y = np.concatenate(nonempty) if nonempty else np.zeros((0, params.d, params.p))
    return AugmentedLangevinData(params.G, state.S, state.n, Y)


def _trace_term(aug, kappa):
    return float(np.sum(kappa * np.einsum("dp,dp->p", aug.G, aug.S)))


def _with_G(aug, G):
    if G is aug.G or np.array_equal(G, aug.G):
        return aug
    return AugmentedLangevinData(np.asarray(G, dtype=float), aug.S_obs, aug.n, aug.Y)


def log_joint_and_grad(aug: AugmentedLangevinData, kappa) -> tuple[float, np.ndarray]:
    """Value and kappa-gradient of the augmented log joint, sharing Bessel evaluations.

    Requires every ``kappa_k > 0``.
    """
    m = aug.n_rejected
    # row 0 holds kappa, rows 1..m the rejected points' arguments kappa * a
    args = np.empty(aug.orders.shape)
    args[0] = kappa
    args[1:] = aug.a * kappa
    lbn, rho = log_bessel_norm_and_ratio(aug.orders, args)
    ldk = float(lbn[0].sum())
    tr = aug.trace_coef
    value = float(kappa @ tr) - aug.N * ldk
    grad = tr - aug.N * rho[0]
    if m:
        ldy = lbn[1:].sum(axis=1)
        diff = ldy - ldk
        value += float(np.sum(ldk + log1mexp(diff) - ldy))
        w = np.exp(diff)[:, None]
        one_minus_w = -np.expm1(diff)[:, None]
        drho_y = aug.a * rho[1:]               # d log D~(Y) / d kappa_k
        grad = grad + np.sum((rho[0] - w * drho_y) / one_minus_w - drho_y, axis=0)
    return value, grad


def log_joint_kappa(aug: AugmentedLangevinData, G, kappa) -> float:
    """Log joint density of observations and rejected proposals as a function of kappa.

    ``L = tr(G^T kappa S) + sum_ij [log{D(kappa) - D(Y_ij)} - log D(Y_ij)]
    - N log D(kappa)`` with ``S`` and ``N`` counting observations and
    rejected proposals.  ``-inf`` if some ``D(Y) >= D(kappa)``.
    """
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0):
        return -math.inf
    aug = _with_G(aug, G)
    ldk = log_D_kappa(kappa, aug.d)
    total = _trace_term(aug, kappa) - aug.N * ldk
    if aug.n_rejected:
        ldy = log_D_points(aug.a, kappa, aug.d)
        total += float(np.sum(ldk + log1mexp(ldy - ldk) - ldy))
    return total


def grad_log_joint_kappa(aug: AugmentedLangevinData, G, kappa) -> np.ndarray:
    """Gradient of :func:`log_joint_kappa` with respect to kappa.

    Per rejected point ``Y`` and column ``k``, with ``rho(x) = I_{nu+1}(x)/I_nu(x)``
    at ``nu = (d-k-1)/2``, ``w = D(Y)/D(kappa)`` and ``a_k = ||N_k^T G_k||``:

        (rho(kappa_k) - w a_k rho(kappa_k a_k)) / (1 - w) - a_k rho(kappa_k a_k)

    plus ``G_k^T S_k - N rho(kappa_k)``.
    """
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa <= 0):
        raise DomainError("gradient needs every kappa_k > 0")
    return log_joint_and_grad(_with_G(aug, G), kappa)[1]


# ---------------------------------------------------------------------------
# kappa updates


def _reflect_propose(kappa, proposal_sd, rng):
    return np.abs(kappa + proposal_sd * rng.standard_normal(kappa.shape))


def rw_update_kappa(aug: AugmentedLangevinData, state: LangevinPosteriorState,
                    proposal_sd: float, rng) -> tuple[np.ndarray, bool]:
    """Random-walk MH on kappa in the augmented space (proposal reflected at 0)."""
    if proposal_sd <= 0:
        raise DomainError("proposal_sd must be > 0")
    kappa = state.params.kappa
    prop = _reflect_propose(kappa, proposal_sd, rng)
    cur = log_joint_kappa(aug, aug.G, kappa) + state.prior.log_kappa(kappa)
    new = log_joint_kappa(aug, aug.G, prop) + state.prior.log_kappa(prop)
    if np.isfinite(new) and math.log(rng.random()) < new - cur:
        return prop, True
    return kappa, False


def hmc_update_kappa(aug: AugmentedLangevinData, state: LangevinPosteriorState,
                     step_size: float, n_leapfrog: int, rng,
                     parametrization: str = "kappa") -> tuple[np.ndarray, bool]:
    """One HMC transition for kappa with identity mass matrix.

    ``parametrization="kappa"`` integrates directly in kappa and reflects the
    trajectory off ``kappa = 0`` (position and momentum component flipped);
    ``"log"`` integrates in ``log kappa`` with the Jacobian term added.
    Non-finite energies reject the proposal.
    """
    if step_size <= 0 or n_leapfrog < 1:
        raise DomainError("need step_size > 0 and n_leapfrog >= 1")
    prior = state.prior
    kappa0 = state.params.kappa.copy()

    def kappa_terms(k):
        v, g = log_joint_and_grad(aug, k)
        return v + prior.log_kappa(k), g + prior.grad_log_kappa(k)

    if parametrization == "kappa":
        def to_kappa(q):
            return q

        def value_grad(q):
            return kappa_terms(q)

        q = kappa0.copy()
    elif parametrization == "log":
        def to_kappa(q):
            return np.exp(q)

        def value_grad(q):
            k = np.exp(q)
            v, g = kappa_terms(k)
            return v + float(q.sum()), k * g + 1.0

        q = np.log(kappa0)
    else:
        raise ValueError(f"unknown parametrization {parametrization!r}")

    mom = rng.standard_normal(q.shape)
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            lp, g = value_grad(q)
            h0 = -lp + 0.5 * mom @ mom
            for _ in range(n_leapfrog):
                mom = mom + 0.5 * step_size * g
                q = q + step_size * mom
                if parametrization == "kappa":
                    mom = np.where(q < 0, -mom, mom)
                    q = np.abs(q)
                    if np.any(q == 0):
                        return kappa0, False
                lp, g = value_grad(q)
                mom = mom + 0.5 * step_size * g
            h1 = -lp + 0.5 * mom @ mom
    except (FloatingPointError, DomainError, OverflowError):
        return kappa0, False
    if not np.isfinite(h1) or not np.all(np.isfinite(q)):
        return kappa0, False
    if math.log(rng.random()) < h0 - h1:
        return to_kappa(q), True
    return kappa0, False


def exchange_update_kappa(state: LangevinPosteriorState, proposal_sd: float, rng,
                          max_attempts: int = DEFAULT_MAX_ATTEMPTS):
    """Exchange-algorithm update of kappa (no augmentation).

    Proposes ``kappa*`` by the reflected random walk, simulates ``n``
    pseudo-observations from ``ML(G, kappa*, I)`` with the exact sampler and
    accepts with the ratio in which ``Z`` cancels.

    Returns ``(kappa, accepted, n_rejected)`` where the last entry counts the
    rejected proposals spent on the pseudo-data.
    """
    if proposal_sd <= 0:
        raise DomainError("proposal_sd must be > 0")
    params = state.params
    kappa = params.kappa
    prop = _reflect_propose(kappa, proposal_sd, rng)
    if np.any(prop <= 0):
        return kappa, False, 0
    W, n_rej = sample_matrix_langevin(LangevinParams(params.G, prop), rng, size=state.n,
                                      max_attempts=max_attempts, return_rejections=True)
    G = params.G
    diff = prop - kappa
    t_obs = np.einsum("dp,dp->p", G, state.S)
    t_pseudo = np.einsum("dp,dp->p", G, W.sum(axis=0))
    log_alpha = (state.prior.log_kappa(prop) - state.prior.log_kappa(kappa)
                 + float(diff @ t_obs) - float(diff @ t_pseudo))
    if math.log(rng.random()) < log_alpha:
        return prop, True, n_rej
    return kappa, False, n_rej


def approx_log_posterior_kappa(state: LangevinPosteriorState, kappa) -> float:
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa <= 0):
        return -math.inf
    t = float(np.sum(kappa * np.einsum("dp,dp->p", state.params.G, state.S)))
    return t - state.n * log_z_asymptotic(kappa, state.params.d) + state.prior.log_kappa(kappa)


def approx_update_kappa(state: LangevinPosteriorState, proposal_sd: float, rng):
    """MH on kappa with the asymptotic ``log Z`` plugged in.  Approximate."""
    if proposal_sd <= 0:
        raise DomainError("proposal_sd must be > 0")
    kappa = state.params.kappa
    prop = _reflect_propose(kappa, proposal_sd, rng)
    if np.any(prop <= 0):
        return kappa, False
    log_alpha = approx_log_posterior_kappa(state, prop) - approx_log_posterior_kappa(state, kappa)
    if math.log(rng.random()) < log_alpha:
        return prop, True
    return kappa, False


# ---------------------------------------------------------------------------
# Driver


@dataclass
class LangevinFitConfig:
    sampler: str = "hmc"
    n_iter: int = 10000
    burn_in: int = 1000
    step_size: float = 0.3
    n_leapfrog: int = 5
    proposal_sd: float = 1.0
    update_H: bool = False
    update_G: bool = True
    prior: LangevinPrior = field(default_factory=LangevinPrior)
    kappa_init: np.ndarray | None = None
    G_init: np.ndarray | None = None
    parametrization: str = "kappa"
    adapt: bool = False
    target_accept: float | None = None
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.n_iter < 1 or self.burn_in < 0:
            raise ValueError("need n_iter >= 1 and burn_in >= 0")


def _initial_params(X, config: LangevinFitConfig, d, p):
    if config.G_init is not None:
        G = np.asarray(config.G_init, dtype=float)
    elif len(X):
        G = orthonormalize(X.sum(axis=0))
    else:
        G = np.eye(d)[:, :p]
    if config.kappa_init is not None:
        kappa = np.asarray(config.kappa_init, dtype=float)
    else:
        kappa = np.full(p, config.prior.a0 / config.prior.b0)
    return LangevinParams(G, kappa)


def fit_langevin(X, config: LangevinFitConfig, rng, shape: tuple | None = None,
                 callback=None) -> ChainTrace:
    """Gibbs sampler for ``(G, kappa, H)`` given observations ``X`` of shape (n, d, p).

    Each iteration: rejected proposals for every observation (augmentation
    samplers only), the kappa update, then ``H`` (optional) and ``G`` from
    their conditionals.  The trace holds ``config.n_iter`` draws after
    ``config.burn_in`` discarded iterations; recorded columns are the kappa
    entries followed by ``G`` flattened column-major.

    With ``config.adapt`` the hmc step size (or the proposal sd of the other
    samplers) is tuned during burn-in toward ``config.target_accept`` and then
    frozen; the final value is stored as ``trace.info["scale"]``.

    ``shape=(d, p)`` is needed only when ``X`` is empty (prior-only run).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 3:
        if shape is None:
            raise ValueError("X must have shape (n, d, p)")
        X = X.reshape(0, *shape)
    n, d, p = X.shape
    state = LangevinPosteriorState(_initial_params(X, config, d, p), config.prior, X)
    labels = [f"kappa[{k + 1}]" for k in range(p)]
    labels += [f"G[{i + 1},{k + 1}]" for k in range(p) for i in range(d)]
    total = config.burn_in + config.n_iter
    draws = np.empty((config.n_iter, len(labels)))
    acc = np.zeros(config.n_iter, dtype=bool)
    nrej = np.zeros(config.n_iter, dtype=int)
    secs = np.zeros(config.n_iter)
    # step size for hmc, proposal sd otherwise; only tuned during burn-in
    scale = config.step_size if config.sampler == "hmc" else config.proposal_sd
    target = config.target_accept
    if target is None:
        target = 0.7 if config.sampler == "hmc" else 0.3

    for it in range(total):
        t0 = time.perf_counter()
        n_rej = 0
        kappa = state.params.kappa
        if config.sampler in ("hmc", "rw"):
            if n:
                aug = augment(state, rng, config.max_attempts)
            else:
                aug = AugmentedLangevinData(state.params.G, state.S, 0, np.zeros((0, d, p)))
            n_rej = aug.n_rejected
            if config.sampler == "hmc":
                kappa, ok = hmc_update_kappa(aug, state, scale, config.n_leapfrog,
                                             rng, config.parametrization)
            else:
                kappa, ok = rw_update_kappa(aug, state, scale, rng)
            del aug
        elif config.sampler == "exchange":
            kappa, ok, n_rej = exchange_update_kappa(state, scale, rng, config.max_attempts)
        else:
            kappa, ok = approx_update_kappa(state, scale, rng)
        if config.adapt and it < config.burn_in:
            # Robbins-Monro on log scale toward the target acceptance rate
            scale *= math.exp((float(ok) - target) / math.sqrt(it + 1.0))
        state.set_params(state.params.with_kappa(kappa))
        if config.update_H:
            update_H(state, rng)
        if config.update_G:
            update_G(state, rng)
        elapsed = time.perf_counter() - t0
        j = it - config.burn_in
        if j >= 0:
            draws[j, :p] = state.params.kappa
            draws[j, p:] = state.params.G.ravel(order="F")
            acc[j] = ok
            nrej[j] = n_rej
            secs[j] = elapsed
        if callback is not None:
            callback(it, state)

    info = {"sampler": config.sampler, "approximate": config.sampler == "approx",
            "d": d, "p": p, "n": n, "burn_in": config.burn_in, "scale": scale}
    return ChainTrace(draws, labels, seconds=secs, n_rejected=nrej, accepted=acc, info=info)


def simulate_langevin_data(G, kappa, n: int, rng, H=None) -> np.ndarray:
    """``n`` exact draws from ``ML(G, kappa, H)``, shape (n, d, p)."""
    return sample_matrix_langevin(LangevinParams(G, kappa, H), rng, size=n)


def approx_mle(X) -> LangevinParams:
    """Rough maximum-likelihood fit from the asymptotic normalizer.

    ``G`` and ``H`` come from the SVD of the sample mean; ``kappa`` maximizes
    ``tr(kappa D) - log Z_asym(kappa)`` where ``D`` holds the singular values
    of the mean.  Only meant as a convenience starting point.
    """
    from scipy.optimize import minimize

    X = np.asarray(X, dtype=float)
    n, d, p = X.shape
    u, s, vt = np.linalg.svd(X.mean(axis=0), full_matrices=False)

    def neg(logk):
        k = np.exp(logk)
        return -(float(k @ s) - log_z_asymptotic(k, d))

    res = minimize(neg, np.zeros(p), method="Nelder-Mead")
    return LangevinParams(u, np.exp(res.x), vt.T)
