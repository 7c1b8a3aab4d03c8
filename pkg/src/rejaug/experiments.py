"""Desk-scale studies: sampler efficiency, approximation bias and GPDS recovery.

Each study takes a ``scale`` in (0, 1] that shrinks iteration counts and a
seed from which every chain and dataset gets its own stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from .diagnostics import Comparison, compare_samplers, mcse
from .errors import DomainError
from .gpds import GpdsConfig, density_modes, fit_gpds
from .langevin import LangevinFitConfig, fit_langevin, simulate_langevin_data
from .mixture import TruncationRegion
from .rng import stream
from .stiefel import sample_haar_uniform

STUDIES = ("fig3-ess", "approx-bias", "gpds-synthetic")


def _scaled(n: int, scale: float, floor: int = 20) -> int:
    if not 0 < scale <= 1:
        raise DomainError(f"scale must lie in (0, 1], got {scale}")
    return max(floor, int(round(n * scale)))


# ---------------------------------------------------------------------------
# Matrix Langevin: sampler efficiency


ESS_KAPPA = (11.9, 5.9)
HMC_GRID = tuple((eps, L) for eps in (0.3, 0.5) for L in (3, 5))
RW_GRID = (0.6, 1.2, 2.4)


def vcg_scale_data(seed: int, n: int = 98, kappa=ESS_KAPPA) -> np.ndarray:
    """Synthetic stand-in for a 98-observation ``V_{2,3}`` dataset."""
    rng = stream(seed, 0)
    G = sample_haar_uniform(3, 2, rng)
    return simulate_langevin_data(G, np.asarray(kappa, dtype=float), n, rng)


@dataclass
class EssStudy:
    comparison: Comparison
    traces: dict
    configs: dict = field(default_factory=dict)

    def best(self, prefix: str) -> tuple[str, float]:
        """Best median ESS/sec among samplers whose name starts with ``prefix``."""
        cands = {k: v for k, v in self.comparison.median_ess_per_sec.items()
                 if k.startswith(prefix)}
        name = max(cands, key=cands.get)
        return name, cands[name]


def ess_study(scale: float = 1.0, seed: int = 0, n_iter: int = 3000, X=None,
              hmc_grid=HMC_GRID, rw_grid=RW_GRID, exchange_sd: float | None = 1.2) -> EssStudy:
    """Run hmc, rw and exchange chains on the same data and compare ESS/sec of kappa."""
    X = vcg_scale_data(seed) if X is None else X
    iters = _scaled(n_iter, scale, floor=100)
    burn = iters // 5
    configs = {}
    for eps, L in hmc_grid:
        configs[f"hmc(eps={eps},L={L})"] = LangevinFitConfig(
            sampler="hmc", n_iter=iters, burn_in=burn, step_size=eps, n_leapfrog=L)
    for sd in rw_grid:
        configs[f"rw(sd={sd})"] = LangevinFitConfig(sampler="rw", n_iter=iters, burn_in=burn,
                                                     proposal_sd=sd)
    if exchange_sd is not None:
        configs[f"exchange(sd={exchange_sd})"] = LangevinFitConfig(
            sampler="exchange", n_iter=iters, burn_in=burn, proposal_sd=exchange_sd)
    traces = {}
    for i, (name, cfg) in enumerate(configs.items()):
        traces[name] = fit_langevin(X, cfg, stream(seed, 1, i))
    kappa_labels = [l for l in next(iter(traces.values())).labels if l.startswith("kappa")]
    return EssStudy(compare_samplers(traces, kappa_labels), traces, configs)


# ---------------------------------------------------------------------------
# Matrix Langevin: bias of the asymptotic-normalizer sampler


BIAS_KAPPA = (1.0, 5.0, 10.0)
BIAS_DIMS = (3, 4, 5, 8, 10)


@dataclass
class BiasRow:
    d: int
    sampler: str
    mean: np.ndarray
    mcse: np.ndarray
    bias: np.ndarray       # mean minus the reference (exchange) mean


def bias_study(scale: float = 1.0, seed: int = 0, dims=BIAS_DIMS, n_iter: int = 20000,
               n: int = 50, samplers=("exchange", "hmc", "approx")) -> list[BiasRow]:
    """Posterior means of kappa on ``V_{3,d}`` data from several samplers.

    The exchange sampler is the reference.  All samplers tune their step or
    proposal scale during burn-in.
    """
    if samplers[0] != "exchange":
        raise ValueError("the first sampler is the reference and must be 'exchange'")
    iters = _scaled(n_iter, scale, floor=200)
    rows = []
    for d in dims:
        rng = stream(seed, 2, d)
        G = sample_haar_uniform(d, 3, rng)
        X = simulate_langevin_data(G, np.asarray(BIAS_KAPPA), n, rng)
        ref = None
        for i, s in enumerate(samplers):
            cfg = LangevinFitConfig(sampler=s, n_iter=iters, burn_in=iters // 5,
                                    proposal_sd=0.7, step_size=0.2, adapt=True)
            tr = fit_langevin(X, cfg, stream(seed, 3, d, i))
            k = tr.draws[:, :3]
            mean = k.mean(axis=0)
            if ref is None:
                ref = mean
            rows.append(BiasRow(d, s, mean, np.array([mcse(k[:, j]) for j in range(3)]),
                                mean - ref))
    return rows


def bias_table_csv(rows) -> str:
    lines = ["d,sampler,component,posterior_mean,mcse,bias_vs_exchange"]
    for r in rows:
        for j in range(3):
            lines.append(f"{r.d},{r.sampler},{j + 1},{r.mean[j]!r},{r.mcse[j]!r},{r.bias[j]!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# GPDS on a bimodal sample


BIMODAL = ((0.5, 1.5, 0.5), (0.5, 3.5, 0.5))     # (weight, mean, sd)


def bimodal_density(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return sum(w * norm.pdf(x, m, s) for w, m, s in BIMODAL)


def bimodal_sample(n: int, rng) -> np.ndarray:
    w = np.array([c[0] for c in BIMODAL])
    comp = rng.choice(len(BIMODAL), size=n, p=w / w.sum())
    mu = np.array([c[1] for c in BIMODAL])[comp]
    sd = np.array([c[2] for c in BIMODAL])[comp]
    return mu + sd * rng.standard_normal(n)


@dataclass
class GpdsStudy:
    trace: object
    grid: np.ndarray
    density: np.ndarray
    l1: float
    integral: float
    modes: np.ndarray
    n: int


def gpds_study(scale: float = 1.0, seed: int = 0, n: int = 300, n_iter: int = 300,
               burn_in: int = 100, update_kernel: bool = False) -> GpdsStudy:
    """Fit the GP density sampler to a bimodal sample and score the recovery.

    The kernel is held at unit variance and lengthscale unless
    ``update_kernel``; base parameters always get conjugate updates.
    """
    X = bimodal_sample(n, stream(seed, 4))
    cfg = GpdsConfig(n_iter=_scaled(n_iter, scale), burn_in=_scaled(burn_in, scale, floor=10),
                     update_kernel=update_kernel)
    tr = fit_gpds(X, cfg, stream(seed, 5))
    g, dens = tr.info["grid"], tr.info["mean_density"]
    l1 = float(trapezoid(np.abs(dens - bimodal_density(g)), g))
    modes = np.sort(density_modes(dens, g, n_modes=2))
    return GpdsStudy(tr, g, dens, l1, float(trapezoid(dens, g)), modes, n)


# ---------------------------------------------------------------------------
# Truncated mixture synthetic


TRUNC_WEIGHTS = np.array([0.35, 0.35, 0.30])
TRUNC_MEANS = np.array([[0.12, 0.15], [0.85, 0.20], [0.50, 0.88]])
TRUNC_SDS = np.array([[0.07, 0.06], [0.06, 0.08], [0.08, 0.06]])


def truncated_mixture_sample(n: int, rng, region: TruncationRegion | None = None) -> np.ndarray:
    """``n`` draws from a 3-component Gaussian mixture kept inside ``region`` (unit box)."""
    region = TruncationRegion.unit(2) if region is None else region
    out = []
    while sum(len(o) for o in out) < n:
        comp = rng.choice(3, size=2 * n, p=TRUNC_WEIGHTS)
        x = TRUNC_MEANS[comp] + TRUNC_SDS[comp] * rng.standard_normal((2 * n, 2))
        out.append(x[region.contains(x)])
    return np.concatenate(out)[:n]


def gaussian_mixture_sample(n: int, rng) -> np.ndarray:
    comp = rng.choice(3, size=n, p=TRUNC_WEIGHTS)
    return TRUNC_MEANS[comp] + TRUNC_SDS[comp] * rng.standard_normal((n, 2))


def l1_on_grid(a, b, cell_volume: float) -> float:
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum() * cell_volume)


def hmc_vs_rw_ratio(study: EssStudy) -> float:
    _, h = study.best("hmc")
    _, r = study.best("rw")
    return h / r if r > 0 else math.inf
