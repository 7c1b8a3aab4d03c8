"""Chain post-processing: effective sample size, ESS/sec and sampler comparisons."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .trace import ChainTrace


class DegenerateSeriesWarning(UserWarning):
    """The series has zero variance; its ESS is reported as its length."""


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation at all lags (biased estimator, via FFT)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conjugate(f), m)[:n] / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def ess_with_flag(series) -> tuple[float, bool]:
    """Effective sample size and a degeneracy flag.

    Geyer's initial monotone sequence: autocorrelations are summed in
    adjacent pairs, truncated at the first negative pair sum, and the pair
    sums are forced to be nonincreasing.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise ValueError(f"need at least 10 draws for an ESS estimate, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if np.ptp(x) == 0 or np.var(x) <= 1e-300:
        return float(n), True
    rho = autocorrelation(x)
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    neg = np.flatnonzero(pairs < 0)
    m = neg[0] if neg.size else n_pairs
    pairs = np.minimum.accumulate(pairs[:m]) if m else pairs[:1]
    tau = -1.0 + 2.0 * pairs.sum()
    if tau <= 0:
        return float(n), False
    return float(min(n / tau, n)), False


def effective_sample_size(series) -> float:
    """Effective sample size of a 1-D series, in ``(0, len(series)]``."""
    ess, degenerate = ess_with_flag(series)
    if degenerate:
        warnings.warn("constant series: ESS set to its length", DegenerateSeriesWarning,
                      stacklevel=2)
    return ess


def mcse(series) -> float:
    """Monte Carlo standard error of the mean."""
    x = np.asarray(series, dtype=float)
    ess, _ = ess_with_flag(x)
    return float(np.std(x, ddof=1) / math.sqrt(ess))


def ess_per_second(trace: ChainTrace) -> np.ndarray:
    secs = trace.total_seconds
    ess = np.array([ess_with_flag(trace.draws[:, j])[0] for j in range(trace.draws.shape[1])])
    return ess / secs if secs > 0 else np.full(ess.shape, np.inf)


def geweke_z(series, first: float = 0.1, last: float = 0.5) -> float:
    """Geweke's z-score comparing early and late segment means."""
    x = np.asarray(series, dtype=float)
    n = x.size
    a = x[: int(first * n)]
    b = x[n - int(last * n):]
    va = np.var(a, ddof=1) / ess_with_flag(a)[0]
    vb = np.var(b, ddof=1) / ess_with_flag(b)[0]
    if va + vb == 0:
        return 0.0
    return float((a.mean() - b.mean()) / math.sqrt(va + vb))


def credible_interval(series, level: float = 0.9) -> tuple[float, float]:
    lo = (1.0 - level) / 2.0
    q = np.quantile(np.asarray(series, dtype=float), [lo, 1.0 - lo])
    return float(q[0]), float(q[1])


def summarize(trace: ChainTrace, level: float = 0.9) -> list[dict]:
    """Per-parameter mean, sd, MCSE, ESS, ESS/sec and credible interval."""
    secs = trace.total_seconds
    rows = []
    for j, lab in enumerate(trace.labels):
        x = trace.draws[:, j]
        ess, degenerate = ess_with_flag(x)
        lo, hi = credible_interval(x, level)
        sd = float(np.std(x, ddof=1))
        rows.append(dict(parameter=lab, mean=float(x.mean()), sd=sd,
                         mcse=sd / math.sqrt(ess), ess=ess,
                         ess_per_sec=ess / secs if secs > 0 else float("inf"),
                         lower=lo, upper=hi, degenerate=degenerate))
    return rows


@dataclass
class Comparison:
    """Cross-sampler comparison table."""

    parameters: list
    samplers: list
    median_ess_per_sec: dict
    means: dict            # sampler -> array of posterior means
    mcses: dict            # sampler -> array of Monte Carlo standard errors
    ess_per_sec: dict      # sampler -> array
    z_scores: dict = field(default_factory=dict)   # (a, b) -> array

    def rows(self) -> list[dict]:
        out = []
        for s in self.samplers:
            row = {"sampler": s, "median_ess_per_sec": self.median_ess_per_sec[s]}
            for j, p in enumerate(self.parameters):
                row[f"mean[{p}]"] = float(self.means[s][j])
                row[f"mcse[{p}]"] = float(self.mcses[s][j])
                row[f"ess_per_sec[{p}]"] = float(self.ess_per_sec[s][j])
            out.append(row)
        return out

    def to_csv(self, path=None) -> str:
        rows = self.rows()
        header = list(rows[0])
        lines = [",".join(header)]
        for r in rows:
            lines.append(",".join(str(r[h]) for h in header))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_markdown(self) -> str:
        head = ["sampler", "median ESS/s"] + [f"mean {p} (±MCSE)" for p in self.parameters]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for s in self.samplers:
            cells = [s, f"{self.median_ess_per_sec[s]:.3g}"]
            cells += [f"{m:.4g} ± {e:.2g}" for m, e in zip(self.means[s], self.mcses[s])]
            lines.append("| " + " | ".join(cells) + " |")
        if self.z_scores:
            lines.append("")
            lines.append("| pair | " + " | ".join(f"z {p}" for p in self.parameters) + " |")
            lines.append("|" + "---|" * (len(self.parameters) + 1))
            for (a, b), z in self.z_scores.items():
                lines.append(f"| {a} vs {b} | " + " | ".join(f"{v:+.2f}" for v in z) + " |")
        return "\n".join(lines) + "\n"


def compare_samplers(traces: dict, parameters=None) -> Comparison:
    """Median ESS/sec, posterior means with MCSEs and pairwise z-scores.

    Parameters
    ----------
    traces : dict of str -> ChainTrace
        At least two traces over the same parameter labels.
    parameters : list of str, optional
        Subset of labels to compare (default: all labels of the first trace).
    """
    if len(traces) < 2:
        raise ValueError("need at least two traces to compare")
    names = list(traces)
    params = list(parameters) if parameters is not None else list(traces[names[0]].labels)
    for s in names:
        missing = [p for p in params if p not in traces[s].labels]
        if missing:
            raise ValueError(f"trace {s!r} lacks parameters {missing}")
    means, mcses, eps, med = {}, {}, {}, {}
    for s in names:
        tr = traces[s]
        cols = [tr.column(p) for p in params]
        ess = np.array([ess_with_flag(c)[0] for c in cols])
        sd = np.array([np.std(c, ddof=1) for c in cols])
        means[s] = np.array([c.mean() for c in cols])
        mcses[s] = sd / np.sqrt(ess)
        secs = tr.total_seconds
        eps[s] = ess / secs if secs > 0 else np.full(len(params), np.inf)
        med[s] = float(np.median(eps[s]))
    z = {}
    for a, b in itertools.combinations(names, 2):
        denom = np.sqrt(mcses[a] ** 2 + mcses[b] ** 2)
        z[(a, b)] = (means[a] - means[b]) / np.where(denom > 0, denom, np.inf)
    return Comparison(params, names, med, means, mcses, eps, z)
