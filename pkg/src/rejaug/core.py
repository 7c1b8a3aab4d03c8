"""Data augmentation for models whose likelihood is a rejection sampler.

A model generates an observation by proposing ``y ~ q(.|theta)`` and accepting
with probability ``f(y, theta) / {M q(y|theta)}``.  Keeping the rejected
proposals ``Y`` that precede an accepted ``x`` gives the tractable joint

    p(Y, x | theta) = f(x, theta)/M * prod_j {q(y_j|theta) - f(y_j, theta)/M}

in which the intractable normalizer ``Z(theta)`` never appears.  Because the
rejected set is independent of the accepted point it precedes, fresh rejected
sets for observed data are produced simply by re-running the sampler until
``n`` acceptances and throwing the accepted points away.
"""
from __future__ import annotations

import abc
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, MaxAttemptsError

DEFAULT_MAX_ATTEMPTS = 10**6

BASE_MEASURES = ("counting", "lebesgue", "haar-stiefel")


def log1mexp(a):
    """Stable ``log(1 - exp(a))`` for ``a <= 0``; ``-inf`` where ``a >= 0``."""
    a = np.asarray(a, dtype=float)
    out = np.full(a.shape, -np.inf)
    neg = a < 0
    near = neg & (a > -math.log(2.0))
    far = neg & ~near
    out[near] = np.log(-np.expm1(a[near]))
    out[far] = np.log1p(-np.exp(a[far]))
    return out


class RejectionModel(abc.ABC):
    """Contract every application plugs into.

    Points are numpy arrays whose leading axis indexes a batch; all density
    methods are vectorized over that axis.  ``theta`` is opaque to the
    framework.  Subclasses declare their base measure so ``f`` and ``q`` are
    read as densities with respect to the same thing.
    """

    base_measure = "lebesgue"

    @abc.abstractmethod
    def log_f(self, x, theta) -> np.ndarray:
        """Unnormalized target log-density at a batch of points."""

    @abc.abstractmethod
    def log_q(self, x, theta) -> np.ndarray:
        """Normalized proposal log-density at a batch of points."""

    @abc.abstractmethod
    def log_M(self, theta) -> float:
        """Log envelope constant: ``f/M <= q`` everywhere."""

    @abc.abstractmethod
    def propose(self, theta, rng: np.random.Generator, size: int):
        """Draw ``size`` proposals from ``q(.|theta)``."""

    def log_accept(self, x, theta) -> np.ndarray:
        """Log acceptance probability ``log f - log M - log q`` (<= 0)."""
        a = self.log_f(x, theta) - self.log_M(theta) - self.log_q(x, theta)
        return np.minimum(a, 0.0)

    def log_reject_density(self, y, theta) -> np.ndarray:
        """``log{q(y) - f(y)/M}``, factoring out ``q`` to avoid cancellation."""
        a = self.log_f(y, theta) - self.log_M(theta) - self.log_q(y, theta)
        return self.log_q(y, theta) + log1mexp(a)

    def concat(self, batches: Sequence):
        """Join point batches along the leading axis."""
        return np.concatenate([np.asarray(b) for b in batches], axis=0)

    def empty(self, like):
        like = np.asarray(like)
        return like[:0]


@dataclass
class AugmentedDataset:
    """Observations paired with the rejected proposals preceding each one."""

    observations: Any
    rejected_sets: list

    def __post_init__(self):
        if len(self.rejected_sets) != len(self.observations):
            raise ValueError(
                f"{len(self.rejected_sets)} rejected sets for "
                f"{len(self.observations)} observations")

    @property
    def n(self) -> int:
        return len(self.observations)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(y) for y in self.rejected_sets], dtype=int)

    @property
    def total(self) -> int:
        """``N = n + sum_i |Y_i|``."""
        return self.n + int(self.sizes.sum())

    def all_rejected(self):
        nonempty = [np.asarray(y) for y in self.rejected_sets if len(y)]
        if not nonempty:
            obs = np.asarray(self.observations)
            return obs[:0]
        return np.concatenate(nonempty, axis=0)


def _initial_batch(n: int) -> int:
    return 2 * n + 8


def _run_sampler(model, theta, n, rng, max_attempts, batch_size=None):
    """Propose until ``n`` acceptances.

    Returns the accepted points and the list of rejected batches (one per
    acceptance, in order).  Proposals are drawn in vectorized blocks; a block
    is consumed in order and anything after the ``n``-th acceptance is
    dropped, which leaves the law of the sequential sampler unchanged.
    """
    accepted = []
    rejected = []
    pending = []
    attempts = 0
    n_acc = 0
    rate = None
    while n_acc < n:
        remaining_budget = max_attempts - attempts
        if remaining_budget <= 0:
            raise MaxAttemptsError(attempts, n_acc, n)
        if batch_size is not None:
            b = batch_size
        elif rate is None:
            b = _initial_batch(n - n_acc)
        else:
            b = int(math.ceil(1.25 * (n - n_acc) / max(rate, 1e-3))) + 8
        b = int(min(b, remaining_budget, 1 << 16))
        props = model.propose(theta, rng, b)
        log_u = np.log(rng.random(b))
        acc = log_u < model.log_accept(props, theta)
        idx = np.flatnonzero(acc)
        need = n - n_acc
        if idx.size > need:
            stop = idx[need - 1] + 1
            idx = idx[:need]
        else:
            stop = b
        attempts += stop
        start = 0
        for i in idx:
            pending.append(props[start:i])
            rejected.append(model.concat(pending) if len(pending) > 1 else pending[0])
            pending = []
            accepted.append(props[i:i + 1])
            start = i + 1
        if start < stop:
            pending.append(props[start:stop])
        n_acc += idx.size
        seen = attempts
        rate = (n_acc + 0.5) / (seen + 1.0)
    return model.concat(accepted), rejected


def sample_with_rejections(model: RejectionModel, theta, rng,
                           max_attempts: int = DEFAULT_MAX_ATTEMPTS):
    """Run the rejection sampler once.

    Returns
    -------
    x : point
        The accepted draw (leading batch axis of length one removed).
    Y : array
        The rejected proposals that preceded it (possibly empty).
    """
    acc, rej = _run_sampler(model, theta, 1, rng, max_attempts)
    return acc[0], rej[0]


def sample_many(model: RejectionModel, theta, n: int, rng,
                max_attempts: int = DEFAULT_MAX_ATTEMPTS):
    """Draw ``n`` accepted points and their rejected sets."""
    return _run_sampler(model, theta, n, rng, max_attempts)


def resample_rejected(model: RejectionModel, theta, n: int, rng,
                      max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> list:
    """Fresh rejected sets for ``n`` observations.

    Runs the sampler to ``n`` acceptances and discards the accepted points.
    Each returned batch is an exact draw from ``p(Y|theta)``, whatever the
    observation it is attached to.
    """
    if n < 1:
        raise ValueError("need at least one observation")
    _, rej = _run_sampler(model, theta, n, rng, max_attempts)
    return rej


def log_joint_augmented(model: RejectionModel, theta, data: AugmentedDataset) -> float:
    """``sum_i [log f(x_i) - log M + sum_j log{q(y_ij) - f(y_ij)/M}]``.

    ``-inf`` if some rejected point sits where ``q = f/M`` (it could never
    have been rejected).
    """
    x = np.asarray(data.observations)
    total = float(np.sum(model.log_f(x, theta))) - data.n * model.log_M(theta)
    ys = data.all_rejected()
    if len(ys):
        total += float(np.sum(model.log_reject_density(ys, theta)))
    return total


def gibbs_iteration(model: RejectionModel, X, theta, update_theta2: Callable,
                    update_theta1: Callable | None, rng,
                    meta: dict | None = None,
                    max_attempts: int = DEFAULT_MAX_ATTEMPTS):
    """One sweep of the two-block augmentation sampler.

    1. draw a rejected set for every observation,
    2. move the intractable block with ``update_theta2(theta, aug, rng)``,
       a kernel leaving ``p(theta2 | X, Y, theta1)`` invariant,
    3. drop the rejected sets,
    4. draw the tractable block exactly with ``update_theta1(theta, X, rng)``.

    ``meta`` (if given) receives the augmentation size of this sweep.
    """
    rej = resample_rejected(model, theta, len(X), rng, max_attempts)
    aug = AugmentedDataset(X, rej)
    if meta is not None:
        meta["n_rejected"] = int(aug.sizes.sum())
    theta = update_theta2(theta, aug, rng)
    del aug, rej
    if update_theta1 is not None:
        theta = update_theta1(theta, X, rng)
    return theta


def run_gibbs(model: RejectionModel, X, theta0, update_theta2, update_theta1,
              n_iter: int, rng, record: Callable | None = None,
              max_attempts: int = DEFAULT_MAX_ATTEMPTS):
    """Iterate :func:`gibbs_iteration` and collect a trace.

    ``record(theta)`` maps a parameter to a flat vector of recorded values;
    by default ``theta`` itself is recorded.
    """
    from .trace import ChainTrace
    import time

    record = record or (lambda th: np.atleast_1d(np.asarray(th, dtype=float)))
    draws, sizes, secs = [], [], []
    theta = theta0
    for _ in range(n_iter):
        t0 = time.perf_counter()
        meta = {}
        theta = gibbs_iteration(model, X, theta, update_theta2, update_theta1,
                                rng, meta, max_attempts)
        secs.append(time.perf_counter() - t0)
        draws.append(record(theta))
        sizes.append(meta["n_rejected"])
    draws = np.asarray(draws, dtype=float)
    labels = [f"theta[{i}]" for i in range(draws.shape[1])]
    return ChainTrace(draws, labels, seconds=np.asarray(secs),
                      n_rejected=np.asarray(sizes))


# ---------------------------------------------------------------------------
# Uniform-ergodicity bound


@dataclass(frozen=True)
class ErgodicityInputs:
    """Constants entering the minorization bound.

    ``b_f <= f <= B_f`` and ``b_q <= q <= B_q`` uniformly; ``r`` is the
    minimum of ``1 - f(x,theta)/{M Z(theta)}`` and ``R`` the minimum of
    ``Z(theta)/M``.  The minimization domain (over ``x`` only, or jointly over
    ``(x, theta)``) is left to the caller: the joint minimum is always the
    safe choice, and a per-``theta`` minimum gives the bound for that
    ``theta``'s row of the kernel.  ``M`` is treated as constant in
    ``theta``.
    """

    b_f: float
    B_f: float
    b_q: float
    B_q: float
    r: float
    R: float
    n: int

    def __post_init__(self):
        if not (0 < self.b_f <= self.B_f):
            raise DomainError("need 0 < b_f <= B_f")
        if not (0 < self.b_q <= self.B_q):
            raise DomainError("need 0 < b_q <= B_q")
        if not (0 < self.r <= 1) or not (0 < self.R <= 1):
            raise DomainError("r and R must lie in (0, 1]")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")


def theorem1_bound(inputs: ErgodicityInputs) -> tuple[float, float]:
    """Minorization constant and mixing-rate bound of the augmentation chain.

    ``beta = b_q r / B_q``, ``delta = {b_f / (B_f (beta + 1/R))}^n`` and the
    chain mixes at rate ``rho <= 1 - delta``.
    """
    beta = inputs.b_q * inputs.r / inputs.B_q
    log_delta = inputs.n * (math.log(inputs.b_f)
                            - math.log(inputs.B_f * (beta + 1.0 / inputs.R)))
    delta = math.exp(log_delta)
    if not (0.0 < delta <= 1.0):
        raise DomainError(f"inconsistent bounds: delta = {delta}")
    return delta, 1.0 - delta


# ---------------------------------------------------------------------------
# Finite sample spaces: toy models with exact enumeration


@dataclass(frozen=True)
class FiniteRejectionModel(RejectionModel):
    """Rejection sampler on atoms ``{0, ..., K-1}`` with counting measure.

    ``weights(theta)`` gives the unnormalized target ``f(., theta)``; the
    proposal ``q`` and envelope ``M`` may also depend on ``theta``.
    """

    weights: Callable[[Any], np.ndarray]
    proposal: Callable[[Any], np.ndarray] | np.ndarray
    M: Callable[[Any], float] | float
    base_measure = "counting"

    def _q(self, theta):
        q = self.proposal(theta) if callable(self.proposal) else self.proposal
        return np.asarray(q, dtype=float)

    def _M(self, theta):
        return float(self.M(theta) if callable(self.M) else self.M)

    def log_f(self, x, theta):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.weights(theta), dtype=float))[np.asarray(x)]

    def log_q(self, x, theta):
        with np.errstate(divide="ignore"):
            return np.log(self._q(theta))[np.asarray(x)]

    def log_M(self, theta):
        return math.log(self._M(theta))

    def propose(self, theta, rng, size):
        q = self._q(theta)
        return rng.choice(q.size, size=size, p=q / q.sum())

    def n_atoms(self, theta=None) -> int:
        return self._q(theta).size

    def Z(self, theta) -> float:
        return float(np.sum(self.weights(theta)))

    def check_envelope(self, theta, tol=1e-12) -> bool:
        return bool(np.all(np.asarray(self.weights(theta)) / self._M(theta)
                           <= self._q(theta) + tol))

    def reject_weights(self, theta) -> np.ndarray:
        """``q - f/M`` on each atom."""
        return self._q(theta) - np.asarray(self.weights(theta), dtype=float) / self._M(theta)


def _compositions(total: int, k: int):
    if k == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, k - 1):
            yield (first,) + rest


def _log_aug_posterior(model, thetas, log_prior, X, counts):
    """Unnormalized ``log p(theta | X, counts)`` over a finite theta grid.

    The rejected sets enter only through the per-atom rejection counts.
    """
    X = np.asarray(X)
    out = np.array(log_prior, dtype=float).copy()
    for t, th in enumerate(thetas):
        lf = model.log_f(X, th).sum() - len(X) * model.log_M(th)
        with np.errstate(divide="ignore"):
            lw = np.log(model.reject_weights(th).clip(min=0.0))
        c = np.asarray(counts)
        term = (c * np.where(c > 0, lw, 0.0)).sum()
        out[t] += lf + term
    return out


def exact_posterior_finite(model: FiniteRejectionModel, thetas, log_prior, X) -> np.ndarray:
    """``p(theta | X)`` on a finite parameter grid, by direct normalization."""
    X = np.asarray(X)
    lp = np.array(log_prior, dtype=float).copy()
    for t, th in enumerate(thetas):
        lp[t] += model.log_f(X, th).sum() - len(X) * math.log(model.Z(th))
    return np.exp(lp - special.logsumexp(lp))


def exact_da_kernel(model: FiniteRejectionModel, thetas, log_prior, X,
                    max_rejections: int = 400) -> np.ndarray:
    """Transition matrix of the augmentation chain on a finite parameter grid.

    ``k[i, j] = sum_Y p(theta_j | X, Y) p(Y | theta_i)``, where the total
    number of rejections over the ``n`` observations is negative binomial
    with success probability ``Z/M`` and the rejected atoms are iid with
    weights proportional to ``q - f/M``.  The sum is truncated at
    ``max_rejections`` total rejections; the neglected tail mass is returned
    implicitly as ``1 - k.sum(axis=1)``.
    """
    X = np.asarray(X)
    n = len(X)
    T = len(thetas)
    K = model.n_atoms(thetas[0])
    k = np.zeros((T, T))
    cache = {}
    for i, th in enumerate(thetas):
        acc = model.Z(th) / math.exp(model.log_M(th))
        w = model.reject_weights(th)
        wsum = w.sum()
        if acc >= 1.0 - 1e-15 or wsum <= 0:
            counts_list = [((0,) * K, 0.0)]
        else:
            counts_list = []
            w = w / wsum
            with np.errstate(divide="ignore"):
                lw = np.log(w)
            for tot in range(max_rejections + 1):
                lnb = (special.gammaln(tot + n) - special.gammaln(tot + 1)
                       - special.gammaln(n) + n * math.log(acc)
                       + tot * math.log1p(-acc))
                if lnb < -60 and tot > n / acc:
                    break
                for c in _compositions(tot, K):
                    c = np.array(c)
                    if np.any((c > 0) & ~np.isfinite(lw)):
                        continue
                    lm = (special.gammaln(tot + 1) - special.gammaln(c + 1).sum()
                          + (c * np.where(c > 0, lw, 0.0)).sum())
                    counts_list.append((tuple(c), lnb + lm))
        for c, lpc in counts_list:
            if c not in cache:
                lp = _log_aug_posterior(model, thetas, log_prior, X, c)
                cache[c] = np.exp(lp - special.logsumexp(lp))
            k[i] += math.exp(lpc) * cache[c]
    return k


def finite_theta_update(model: FiniteRejectionModel, thetas, log_prior):
    """Exact draw of ``theta`` from ``p(theta | X, Y)`` on a finite grid.

    Returns a kernel usable as ``update_theta2`` in :func:`gibbs_iteration`,
    with ``theta`` represented as an index into ``thetas``.
    """
    K = None

    def update(theta_index, aug: AugmentedDataset, rng):
        nonlocal K
        if K is None:
            K = model.n_atoms(thetas[0])
        ys = np.asarray(aug.all_rejected(), dtype=int)
        counts = np.bincount(ys, minlength=K)
        lp = _log_aug_posterior(model, thetas, log_prior, aug.observations, counts)
        p = np.exp(lp - special.logsumexp(lp))
        return int(rng.choice(len(thetas), p=p))

    return update


class IndexedFiniteModel(RejectionModel):
    """Adapter: the finite model with ``theta`` given as an index into a grid."""

    base_measure = "counting"

    def __init__(self, model: FiniteRejectionModel, thetas):
        self.model = model
        self.thetas = list(thetas)

    def log_f(self, x, theta):
        return self.model.log_f(x, self.thetas[theta])

    def log_q(self, x, theta):
        return self.model.log_q(x, self.thetas[theta])

    def log_M(self, theta):
        return self.model.log_M(self.thetas[theta])

    def propose(self, theta, rng, size):
        return self.model.propose(self.thetas[theta], rng, size)


def two_atom_model() -> FiniteRejectionModel:
    """``f = (2, 1)``, uniform proposal, ``M = 4``: the running toy example."""
    return FiniteRejectionModel(weights=lambda th: np.array([2.0, 1.0]),
                                proposal=np.array([0.5, 0.5]), M=4.0)


def swapped_two_atom_model() -> FiniteRejectionModel:
    """Two-point parameter space: theta 0 gives ``f = (2, 1)``, theta 1 gives ``(1, 2)``.

    Uniform proposal and ``M = 4`` for both, so ``Z = 3`` and the bounds are
    ``b_f = 1, B_f = 2, b_q = B_q = 1/2, r = 5/6, R = 3/4``.
    """
    tables = {0: np.array([2.0, 1.0]), 1: np.array([1.0, 2.0])}
    return FiniteRejectionModel(weights=lambda th: tables[th],
                                proposal=np.array([0.5, 0.5]), M=4.0)


def tilted_bernoulli_model() -> FiniteRejectionModel:
    """``f(0) = theta, f(1) = 1`` on two atoms, uniform proposal, ``M = 2``.

    ``Z(theta) = 1 + theta``.  Atom 1 is never rejected and a Beta prior on
    ``theta`` is conjugate for the augmented likelihood: given ``n_0``
    observed zeros and ``k_0`` rejected zeros the conditional is
    ``Beta(a + n_0, b + k_0)``.
    """
    return FiniteRejectionModel(weights=lambda th: np.array([th, 1.0]),
                                proposal=np.array([0.5, 0.5]), M=2.0)


def tilted_bernoulli_update(a: float, b: float):
    """Exact conditional draw of ``theta`` for :func:`tilted_bernoulli_model`."""

    def update(theta, aug: AugmentedDataset, rng):
        x = np.asarray(aug.observations, dtype=int)
        y = np.asarray(aug.all_rejected(), dtype=int)
        n0 = int(np.sum(x == 0))
        k0 = int(np.sum(y == 0))
        return float(rng.beta(a + n0, b + k0))

    return update
