"""Simulation on the Stiefel manifold ``V_{p,d}`` (d x p matrices with orthonormal columns).

The matrix Langevin density with respect to the uniform (Haar) probability
measure is ``etr(F^T X) / Z(F)`` with ``F = G diag(kappa) H^T``.  Exact draws
come from a rejection sampler whose proposal builds ``X`` one column at a time
from von Mises-Fisher draws on shrinking spheres.  The proposal density is

    p_seq(X | G, kappa) = etr(kappa G^T X) / D(X, kappa, G),
    log D(X, kappa, G) = sum_r log 0F1(; nu_r + 1; (kappa_r a_r)^2 / 4),

with ``nu_r = (d - r - 1)/2`` and ``a_r`` the length of column ``r`` of ``G``
projected onto the orthogonal complement of the first ``r - 1`` columns of
``X``.  Since ``a_r <= 1`` the constant ``D(kappa)`` (all ``a_r = 1``)
bounds ``D(X)``, and a proposal is accepted with probability
``D(X)/D(kappa)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_MAX_ATTEMPTS, RejectionModel, log1mexp, sample_many
from .errors import DomainError, NumericalError
from .specfun import log_bessel_norm

ORTHO_TOL = 1e-10


def orthonormalize(A) -> np.ndarray:
    """Nearest matrix with orthonormal columns (polar factor)."""
    A = np.asarray(A, dtype=float)
    u, _, vt = np.linalg.svd(A, full_matrices=False)
    return u @ vt


def is_stiefel(X, tol: float = ORTHO_TOL) -> bool:
    X = np.asarray(X, dtype=float)
    p = X.shape[-1]
    err = np.abs(np.swapaxes(X, -1, -2) @ X - np.eye(p))
    return bool(np.all(err <= tol))


def _as_stiefel(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < X.shape[1]:
        raise DomainError(f"{name} must be a d x p matrix with d >= p, got shape {X.shape}")
    if not is_stiefel(X, 1e-8):
        raise DomainError(f"{name} does not have orthonormal columns")
    return orthonormalize(X)


@dataclass(frozen=True)
class LangevinParams:
    """Matrix Langevin parameters ``F = G diag(kappa) H^T``.

    ``G`` is ``d x p`` with orthonormal columns, ``H`` is ``p x p``
    orthogonal and ``kappa`` holds nonnegative concentrations.
    """

    G: np.ndarray
    kappa: np.ndarray
    H: np.ndarray | None = None

    def __post_init__(self):
        G = _as_stiefel(self.G, "G")
        kappa = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        if kappa.shape != (G.shape[1],):
            raise DomainError(f"kappa has shape {kappa.shape}, expected ({G.shape[1]},)")
        if np.any(kappa < 0) or not np.all(np.isfinite(kappa)):
            raise DomainError("kappa entries must be finite and >= 0")
        H = np.eye(G.shape[1]) if self.H is None else _as_stiefel(self.H, "H")
        if H.shape != (G.shape[1], G.shape[1]):
            raise DomainError("H must be p x p")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "H", H)

    @property
    def d(self) -> int:
        return self.G.shape[0]

    @property
    def p(self) -> int:
        return self.G.shape[1]

    @property
    def F(self) -> np.ndarray:
        return (self.G * self.kappa) @ self.H.T

    @classmethod
    def from_F(cls, F) -> "LangevinParams":
        """SVD parametrization of an exponent matrix."""
        u, s, vt = np.linalg.svd(np.asarray(F, dtype=float), full_matrices=False)
        return cls(u, s, vt.T)

    def with_kappa(self, kappa) -> "LangevinParams":
        return LangevinParams(self.G, kappa, self.H)


@dataclass(frozen=True)
class SeqProposalCert:
    """Certificate attached to a sequential proposal ``X``."""

    log_density: float        # log p_seq(X | G, kappa)
    log_D_X: float            # log D(X, kappa, G)
    log_D_kappa: float        # log D(kappa)
    nullspace_projections: np.ndarray   # a_r = ||N_r^T G_r||

    @property
    def acceptance_probability(self) -> float:
        return math.exp(self.log_D_X - self.log_D_kappa)


def bessel_orders(d: int, p: int) -> np.ndarray:
    """``nu_r = (d - r - 1)/2`` for columns ``r = 1..p``."""
    return 0.5 * (d - np.arange(1, p + 1) - 1)


def log_D_kappa(kappa, d: int) -> float:
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    return float(np.sum(log_bessel_norm(bessel_orders(d, kappa.size), kappa)))


def log_D_points(a, kappa, d: int) -> np.ndarray:
    """``log D(X, kappa, G)`` from the projection lengths ``a`` (shape (..., p))."""
    a = np.asarray(a, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    nu = bessel_orders(d, kappa.size)
    return np.sum(log_bessel_norm(nu, a * kappa), axis=-1)


def nullspace_projections(X, G) -> np.ndarray:
    """``a_r = ||P_r G_r||`` where ``P_r`` projects off the first ``r-1`` columns of ``X``.

    Accepts a single ``d x p`` matrix or a batch ``(B, d, p)``.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    B, d, p = X.shape
    a = np.empty((B, p))
    a[:, 0] = np.linalg.norm(G[:, 0])
    for r in range(1, p):
        prev = X[:, :, :r]
        g = G[:, r]
        coef = np.einsum("bdr,d->br", prev, g)
        u = g[None, :] - np.einsum("bdr,br->bd", prev, coef)
        a[:, r] = np.linalg.norm(u, axis=1)
    a = np.minimum(a, 1.0)
    return a[0] if single else a


def nullspace_basis(prev) -> np.ndarray:
    """Orthonormal basis (d x (d-k)) of the complement of ``k`` orthonormal columns."""
    prev = np.asarray(prev, dtype=float)
    d, k = prev.shape
    q, _ = np.linalg.qr(prev, mode="complete")
    N = q[:, k:]
    if k and np.max(np.abs(prev.T @ N)) > 1e-8:
        raise NumericalError("nullspace basis is not orthogonal to the previous columns")
    if np.max(np.abs(N.T @ N - np.eye(d - k))) > 1e-8:
        raise NumericalError("nullspace basis is not orthonormal")
    return N


# ---------------------------------------------------------------------------
# von Mises-Fisher


def _wood_w(m: int, kappa, rng) -> np.ndarray:
    """Component along the mean for vMF on ``S^{m-1}`` (Wood 1994), vectorized over kappa."""
    kappa = np.asarray(kappa, dtype=float)
    out = np.empty(kappa.shape)
    todo = np.arange(kappa.size)
    k = kappa.ravel()
    b = (m - 1.0) / (2.0 * k + np.sqrt(4.0 * k * k + (m - 1.0) ** 2))
    x0 = (1.0 - b) / (1.0 + b)
    c = k * x0 + (m - 1.0) * np.log1p(-x0 * x0)
    flat = out.ravel()
    while todo.size:
        z = rng.beta(0.5 * (m - 1), 0.5 * (m - 1), size=todo.size)
        bb = b[todo]
        w = (1.0 - (1.0 + bb) * z) / (1.0 - (1.0 - bb) * z)
        log_u = np.log(rng.random(todo.size))
        ok = k[todo] * w + (m - 1.0) * np.log1p(-x0[todo] * w) - c[todo] >= log_u
        flat[todo[ok]] = w[ok]
        todo = todo[~ok]
    return flat.reshape(kappa.shape)


def _unit(v, axis=-1):
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def sample_vmf(mean_direction, concentration: float, rng, size: int | None = None):
    """Draw from the von Mises-Fisher density ``exp(kappa mu^T x)`` on ``S^{d-1}``.

    Parameters
    ----------
    mean_direction : array_like, shape (d,)
        Unit vector ``mu`` (``d >= 2``).
    concentration : float
        ``kappa >= 0``; zero gives the uniform distribution.
    size : int, optional
        Number of draws; ``None`` returns a single vector.
    """
    mu = np.asarray(mean_direction, dtype=float)
    if mu.ndim != 1 or mu.size < 2:
        raise DomainError("von Mises-Fisher sampling needs dimension d >= 2")
    if abs(np.linalg.norm(mu) - 1.0) > 1e-10:
        raise DomainError("mean direction must have unit norm")
    if concentration < 0 or not np.isfinite(concentration):
        raise DomainError("concentration must be finite and >= 0")
    d = mu.size
    n = 1 if size is None else int(size)
    w = _wood_w(d, np.full(n, float(concentration)), rng)
    v = rng.standard_normal((n, d))
    v -= np.outer(v @ mu, mu)
    v = _unit(v)
    x = w[:, None] * mu[None, :] + np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v
    return x[0] if size is None else x


def _vmf_in_subspace(mu, conc, basis_fn, m, rng):
    """Batch vMF draws on the unit sphere of an ``m``-dim subspace.

    ``mu`` (B, d) are unit mean directions inside each sample's subspace,
    ``conc`` (B,) the concentrations, and ``basis_fn(v)`` projects a batch of
    ambient vectors onto the subspaces.
    """
    B, d = mu.shape
    if m == 1:
        # S^0: the sphere is {+mu, -mu}; P(+mu) = e^c / (e^c + e^-c)
        plus = rng.random(B) < 0.5 * (1.0 + np.tanh(conc))
        return np.where(plus[:, None], mu, -mu)
    w = _wood_w(m, conc, rng)
    v = basis_fn(rng.standard_normal((B, d)))
    v -= np.einsum("bd,bd->b", v, mu)[:, None] * mu
    v = _unit(v)
    return w[:, None] * mu + np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v


# ---------------------------------------------------------------------------
# Haar


def sample_haar_uniform(d: int, p: int, rng, size: int | None = None):
    """Uniform draw(s) on ``V_{p,d}`` via sign-corrected QR of a Gaussian matrix."""
    if not (d >= p >= 1):
        raise DomainError(f"need d >= p >= 1, got d={d}, p={p}")
    n = 1 if size is None else int(size)
    Z = rng.standard_normal((n, d, p))
    q, r = np.linalg.qr(Z)
    s = np.sign(np.einsum("bii->bi", r))
    s[s == 0] = 1.0
    X = q * s[:, None, :]
    return X[0] if size is None else X


# ---------------------------------------------------------------------------
# Sequential proposal


def _check_Gk(G, kappa):
    G = np.asarray(G, dtype=float)
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    if G.ndim != 2 or G.shape[1] != kappa.size or G.shape[0] < G.shape[1]:
        raise DomainError("G must be d x p with d >= p and kappa of length p")
    if np.any(kappa < 0):
        raise DomainError("kappa must be >= 0")
    return G, kappa


def pseq_certificate(X, G, kappa) -> SeqProposalCert:
    """Certificate (log density, log D values, projections) for any ``X``."""
    G, kappa = _check_Gk(G, kappa)
    X = np.asarray(X, dtype=float)
    d = G.shape[0]
    a = nullspace_projections(X, G)
    ldx = float(log_D_points(a, kappa, d))
    ldk = log_D_kappa(kappa, d)
    lf = float(np.sum(kappa * np.einsum("dp,dp->p", G, X)))
    return SeqProposalCert(lf - ldx, ldx, ldk, a)


def propose_pseq(params, rng):
    """One draw from the sequential proposal, following the column recursion literally.

    ``params`` is ``(G, kappa)`` or a :class:`LangevinParams` (its ``H`` is
    ignored).  Column 1 is vMF with mean ``G_1`` and concentration
    ``kappa_1``; column ``r`` is ``N_r z`` with ``N_r`` an orthonormal basis
    of the complement of the earlier columns and ``z`` vMF on
    ``S^{d-r}`` with mean ``N_r^T G_r`` (normalized) and concentration
    ``kappa_r ||N_r^T G_r||``.

    Returns
    -------
    X : ndarray, shape (d, p)
    cert : SeqProposalCert
    """
    G, kappa = _unpack(params)
    d, p = G.shape
    X = np.zeros((d, p))
    a = np.empty(p)
    for r in range(p):
        N = np.eye(d) if r == 0 else nullspace_basis(X[:, :r])
        m = d - r
        mean = N.T @ G[:, r]
        a[r] = min(np.linalg.norm(mean), 1.0)
        c = kappa[r] * a[r]
        if a[r] > 1e-300:
            mu = mean / np.linalg.norm(mean)
        else:
            mu = _unit(rng.standard_normal(m))   # zero concentration: any direction
        if m == 1:
            z = mu if rng.random() < 0.5 * (1.0 + math.tanh(c)) else -mu
        else:
            z = sample_vmf(mu, c, rng)
        col = N @ z
        X[:, r] = col / np.linalg.norm(col)
    ldx = float(log_D_points(a, kappa, d))
    ldk = log_D_kappa(kappa, d)
    lf = float(np.sum(kappa * np.einsum("dp,dp->p", G, X)))
    return X, SeqProposalCert(lf - ldx, ldx, ldk, a)


def propose_pseq_batch(G, kappa, rng, size: int):
    """Vectorized sequential proposals.

    Same law as :func:`propose_pseq`; the complement of the earlier columns
    is handled through its projector instead of an explicit basis, which is
    equivalent because the vMF law is rotation equivariant.

    Returns
    -------
    X : ndarray, shape (size, d, p)
    a : ndarray, shape (size, p)
        The projection lengths ``a_r`` (certificate inputs).
    """
    G, kappa = _check_Gk(G, kappa)
    d, p = G.shape
    B = int(size)
    X = np.empty((B, d, p))
    a = np.empty((B, p))
    for r in range(p):
        prev = X[:, :, :r]

        def proj(v, prev=prev, r=r):
            if r == 0:
                return v
            return v - np.einsum("bdr,br->bd", prev, np.einsum("bdr,bd->br", prev, v))

        u = proj(np.broadcast_to(G[:, r], (B, d)).copy())
        norm = np.linalg.norm(u, axis=1)
        a[:, r] = np.minimum(norm, 1.0)
        degenerate = norm <= 1e-300
        if degenerate.any():
            u[degenerate] = proj(rng.standard_normal((B, d)))[degenerate]
            norm = np.linalg.norm(u, axis=1)
        mu = u / norm[:, None]
        col = _vmf_in_subspace(mu, kappa[r] * a[:, r], proj, d - r, rng)
        if r:
            col = proj(col)
        X[:, :, r] = _unit(col)
    return X, a


def _unpack(params):
    if isinstance(params, LangevinParams):
        return params.G, params.kappa
    G, kappa = params
    return _check_Gk(G, kappa)


# ---------------------------------------------------------------------------
# Matrix Langevin


def log_dml_unnormalized(X, params: LangevinParams):
    """``trace(F^T X) = trace(H kappa G^T X)``; vectorized over a leading batch axis."""
    X = np.asarray(X, dtype=float)
    d, p = params.G.shape
    if X.shape[-2:] != (d, p):
        raise DomainError(f"X has shape {X.shape[-2:]}, expected {(d, p)}")
    return np.einsum("dp,...dp->...", params.F, X)


class StiefelLangevinModel(RejectionModel):
    """Matrix Langevin (``H = I`` frame) as a rejection-sampled model.

    ``theta`` is ``(G, kappa)``.  Target ``f = etr(kappa G^T X)`` and
    proposal ``p_seq`` are densities with respect to the Haar probability
    measure, and ``M = D(kappa)``.
    """

    base_measure = "haar-stiefel"

    def __init__(self, d: int, p: int):
        self.d, self.p = int(d), int(p)

    @staticmethod
    def _split(theta):
        if isinstance(theta, LangevinParams):
            return theta.G, theta.kappa
        G, kappa = theta
        return np.asarray(G, dtype=float), np.asarray(kappa, dtype=float)

    def log_f(self, x, theta):
        G, kappa = self._split(theta)
        return np.einsum("dp,bdp->b", G * kappa, np.asarray(x))

    def log_D(self, x, theta):
        G, kappa = self._split(theta)
        return log_D_points(nullspace_projections(x, G), kappa, self.d)

    def log_q(self, x, theta):
        return self.log_f(x, theta) - self.log_D(x, theta)

    def log_M(self, theta):
        _, kappa = self._split(theta)
        return log_D_kappa(kappa, self.d)

    def log_accept(self, x, theta):
        return np.minimum(self.log_D(x, theta) - self.log_M(theta), 0.0)

    def log_reject_density(self, y, theta):
        ld = self.log_D(y, theta)
        return self.log_f(y, theta) - ld + log1mexp(ld - self.log_M(theta))

    def propose(self, theta, rng, size):
        G, kappa = self._split(theta)
        X, _ = propose_pseq_batch(G, kappa, rng, size)
        return X


def sample_matrix_langevin(params: LangevinParams, rng, size: int | None = None,
                           max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                           return_rejections: bool = False):
    """Exact draw(s) from ``p_ML(. | G, kappa, H)``.

    Proposals from ``p_seq(. | G, kappa)`` are accepted with probability
    ``D(X)/D(kappa)``; accepted draws are rotated to ``X H^T`` so the result
    has exponent ``F = G kappa H^T``.

    With ``return_rejections`` the number of rejected proposals is also
    returned (total over all draws).
    """
    n = 1 if size is None else int(size)
    model = StiefelLangevinModel(params.d, params.p)
    acc, rej = sample_many(model, (params.G, params.kappa), n, rng, max_attempts)
    X = acc @ params.H.T
    out = X[0] if size is None else X
    if return_rejections:
        return out, int(sum(len(r) for r in rej))
    return out


def mc_log_z(kappa, d: int, p: int | None = None, n_samples: int = 10000, rng=None,
             chunk: int = 100000):
    """Monte Carlo estimate of ``log Z(kappa)`` as a Haar average of ``etr(kappa G^T X)``.

    ``Z`` does not depend on ``G``, so the first ``p`` standard basis vectors
    are used.  Returns ``(estimate, standard_error)`` where the standard
    error comes from the delta method on the log of the sample mean.
    """
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    p = kappa.size if p is None else int(p)
    if kappa.size != p:
        raise DomainError("kappa must have length p")
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    if np.any(kappa < 0):
        raise DomainError("kappa must be >= 0")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if np.all(kappa == 0):
        return 0.0, 0.0
    vals = []
    left = int(n_samples)
    while left:
        b = min(chunk, left)
        if p == 1:
            # only the first coordinate of a uniform unit vector matters
            X = _unit(rng.standard_normal((b, d)))[:, :1]
        else:
            X = sample_haar_uniform(d, p, rng, b)[:, :p, :]
        vals.append(np.einsum("p,bpp->b", kappa, X[:, :p, :p]) if p > 1
                    else kappa[0] * X[:, 0])
        left -= b
    lv = np.concatenate(vals)
    mx = lv.max()
    w = np.exp(lv - mx)
    mean = w.mean()
    est = float(mx + math.log(mean))
    se = float(w.std(ddof=1) / (mean * math.sqrt(w.size))) if w.size > 1 else float("inf")
    return est, se
