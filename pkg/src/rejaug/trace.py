"""Chain traces: parameter draws plus per-iteration bookkeeping."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ChainTrace:
    """Iteration-ordered draws with per-iteration metadata.

    Parameters
    ----------
    draws : ndarray, shape (n_iter, n_params)
    labels : list of str
        One name per column of ``draws``.
    seconds : ndarray, shape (n_iter,)
        Wall-clock time spent on each iteration.
    n_rejected : ndarray, shape (n_iter,)
        Total augmentation size ``sum_i |Y_i|`` at each iteration.
    accepted : ndarray, shape (n_iter,)
        Acceptance flag of the Metropolis-type step, if any.
    extra : dict
        Additional per-iteration columns (name -> array) written to the trace.
    info : dict
        Run-level annotations (sampler name, ``approximate`` flag, ...).
    """

    draws: np.ndarray
    labels: list
    seconds: np.ndarray | None = None
    n_rejected: np.ndarray | None = None
    accepted: np.ndarray | None = None
    extra: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        self.draws = draws.reshape(-1, 1) if draws.ndim == 1 else draws
        self.labels = list(self.labels)
        n = self.draws.shape[0]
        if self.draws.shape[1] != len(self.labels):
            raise ValueError(f"{self.draws.shape[1]} columns but {len(self.labels)} labels")
        if self.seconds is None:
            self.seconds = np.zeros(n)
        if self.n_rejected is None:
            self.n_rejected = np.zeros(n, dtype=int)
        if self.accepted is None:
            self.accepted = np.ones(n, dtype=bool)
        self.seconds = np.asarray(self.seconds, dtype=float)
        self.n_rejected = np.asarray(self.n_rejected, dtype=int)
        self.accepted = np.asarray(self.accepted, dtype=bool)
        for name, col in (("seconds", self.seconds), ("n_rejected", self.n_rejected),
                          ("accepted", self.accepted), *self.extra.items()):
            if len(col) != n:
                raise ValueError(f"column {name!r} has length {len(col)}, expected {n}")
        if np.any(self.seconds < 0):
            raise ValueError("negative wall-clock time")

    def __len__(self):
        return self.draws.shape[0]

    def column(self, label: str) -> np.ndarray:
        return self.draws[:, self.labels.index(label)]

    def burn(self, n_burn: int) -> "ChainTrace":
        """Drop the first ``n_burn`` iterations."""
        return ChainTrace(self.draws[n_burn:], list(self.labels), self.seconds[n_burn:],
                          self.n_rejected[n_burn:], self.accepted[n_burn:],
                          {k: np.asarray(v)[n_burn:] for k, v in self.extra.items()},
                          dict(self.info))

    @property
    def total_seconds(self) -> float:
        return float(self.seconds.sum())

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if len(self) else float("nan")

    # -- CSV --------------------------------------------------------------

    def to_csv(self, path=None, with_seconds: bool = True) -> str:
        """Write the trace as CSV; returns the text.

        ``with_seconds=False`` leaves out the wall-clock column, which is the
        only non-deterministic one.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["iteration", *self.labels, "accepted", "n_rejected", *self.extra]
        if with_seconds:
            header.append("seconds")
        w.writerow(header)
        for i in range(len(self)):
            row = [i, *(repr(float(v)) for v in self.draws[i]),
                   int(self.accepted[i]), int(self.n_rejected[i]),
                   *(repr(float(self.extra[k][i])) for k in self.extra)]
            if with_seconds:
                row.append(f"{self.seconds[i]:.6g}")
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "ChainTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trace file")
        header, body = rows[0], rows[1:]
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
        reserved = {"iteration", "accepted", "n_rejected", "seconds"}
        cols = {h: data[:, j] for j, h in enumerate(header)}
        # parameter columns come before "accepted"; extras after n_rejected
        stop = header.index("accepted") if "accepted" in header else len(header)
        labels = [h for h in header[:stop] if h not in reserved]
        extra_names = [h for h in header[stop:] if h not in reserved]
        draws = np.column_stack([cols[h] for h in labels]) if labels else np.zeros((len(body), 0))
        return cls(draws, labels,
                   seconds=cols.get("seconds"),
                   n_rejected=cols["n_rejected"].astype(int) if "n_rejected" in cols else None,
                   accepted=cols["accepted"].astype(bool) if "accepted" in cols else None,
                   extra={h: cols[h] for h in extra_names})
