"""Command-line interface.

Subcommands: ``sample-prior``, ``fit``, ``reproduce``, ``diagnose`` and
``ingest-check``.  Exit status is 0 on success, 1 on a numerical failure and 2
on an input, output or configuration problem.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .core import (AugmentedDataset, resample_rejected, sample_many, tilted_bernoulli_model,
                   tilted_bernoulli_update)
from .diagnostics import compare_samplers, summarize
from .errors import ConfigError, DomainError, MaxAttemptsError, NumericalError
from .experiments import (STUDIES, bias_study, bias_table_csv, ess_study, gpds_study,
                          hmc_vs_rw_ratio)
from .gpds import (GpdsConfig, GpState, NIGPrior, density_grid_to_csv, fit_gpds, gpds_generate,
                   rejected_histogram_to_csv)
from .ingest import (matrices_from_rows, matrices_to_rows, matrix_header, read_numeric_csv,
                     write_numeric_csv)
from .langevin import LangevinFitConfig, LangevinPrior, fit_langevin
from .manifest import load_config, manifest_text
from .mixture import (DpmmConfig, NIWPrior, StickBreakingState, TruncationRegion,
                      fit_truncated_dpmm, grid_to_csv, niw_posterior_draw,
                      normalize_to_unit_box, stick_weights, truncated_mixture_model)
from .rng import chain_seed, stream
from .stiefel import LangevinParams, sample_matrix_langevin
from .trace import ChainTrace

log = logging.getLogger("rejaug")

EXIT_OK, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2


def _out_dir(path) -> str:
    if path is None:
        raise ConfigError("--out is required")
    os.makedirs(path, exist_ok=True)
    return path


def _write(out, name, text):
    with open(os.path.join(out, name), "w", newline="") as fh:
        fh.write(text)


def _resolved_data(cfg):
    data = cfg["run"]["data"]
    return os.path.abspath(data) if data else None


# ---------------------------------------------------------------------------
# data loading


def load_data(cfg) -> tuple[np.ndarray | None, dict | None]:
    """Read the configured data file in the model's layout.

    Returns the data and, for bounded mixture data, the normalization record.
    """
    path = cfg["run"]["data"]
    if not path:
        return None, None
    model = cfg["run"]["model"]
    if model == "langevin":
        d, p = cfg["model"]["d"], cfg["model"]["p"]
        X = matrices_from_rows(read_numeric_csv(path, d * p), d, p, cfg["model"]["layout"])
        return X, None
    if model == "gpds":
        return read_numeric_csv(path, 1)[:, 0], None
    if model == "toy-discrete":
        x = read_numeric_csv(path, 1)[:, 0]
        if not np.all(np.isin(x, (0, 1))):
            raise ConfigError(f"{path}: toy-discrete data must be 0/1")
        return x.astype(int), None
    raw = read_numeric_csv(path)
    lo, hi = cfg["run"]["data_lower"], cfg["run"]["data_upper"]
    if lo is None:
        return raw, None
    if len(lo) != raw.shape[1] or len(hi) != raw.shape[1]:
        raise ConfigError("[run] data_lower/data_upper length must match the data columns")
    try:
        scaled, record = normalize_to_unit_box(raw, lo, hi)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scaled, record


# ---------------------------------------------------------------------------
# sample-prior


def _sample_prior(cfg, rng):
    model, m = cfg["run"]["model"], cfg["model"]
    n = m["n_samples"]
    if model == "langevin":
        G = np.eye(m["d"])[:, :m["p"]]
        X, n_rej = sample_matrix_langevin(LangevinParams(G, m["kappa"]), rng, size=n,
                                          return_rejections=True)
        header = matrix_header(m["d"], m["p"], m["layout"])
        return write_numeric_csv(None, matrices_to_rows(X, m["layout"]), header), n_rej
    if model == "gpds":
        state = GpState(np.array([m["base_mu"]]), m["base_var"], m["kernel_var"],
                        m["lengthscale"])
        res = gpds_generate(state, n, rng)
        return write_numeric_csv(None, res.X, ["x"]), len(res.Y)
    if model == "toy-discrete":
        x, rej = sample_many(tilted_bernoulli_model(), m["theta"], n, rng)
        return write_numeric_csv(None, np.asarray(x)[:, None], ["x"]), sum(len(r) for r in rej)
    region = TruncationRegion(m["lower"], m["upper"])
    d = region.d
    base = NIWPrior.default_for(region)
    K = m["K"]
    weights = stick_weights(np.zeros(K), m["alpha"], rng)
    draws = [niw_posterior_draw(base, np.zeros((0, d)), rng) for _ in range(K)]
    state = StickBreakingState(weights, np.array([a for a, _ in draws]),
                               np.array([b for _, b in draws]), m["alpha"], base)
    X, rej = sample_many(truncated_mixture_model(state, region), state, n, rng)
    header = [f"x{j + 1}" for j in range(d)]
    return write_numeric_csv(None, X, header), sum(len(r) for r in rej)


def cmd_sample_prior(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _out_dir(args.out)
    rng = stream(cfg["run"]["seed"], 0)
    text, n_rej = _sample_prior(cfg, rng)
    n = cfg["model"]["n_samples"]
    summary = {"n_samples": n, "n_rejected": int(n_rej),
               "acceptance_rate": n / (n + n_rej)}
    _write(out, "samples.csv", text)
    _write(out, "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write(out, "manifest.json", manifest_text(cfg, {"package": __version__}))
    print(f"acceptance rate {summary['acceptance_rate']:.4f} over {n + n_rej} proposals")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def _fit_chain(cfg, X, chain: int) -> tuple[ChainTrace, dict]:
    """One chain; returns the trace and extra files (name -> text)."""
    rng = stream(cfg["run"]["seed"], chain)
    model, s, m = cfg["run"]["model"], cfg["sampler"], cfg["model"]
    files = {}
    if model == "langevin":
        lc = LangevinFitConfig(sampler=s["method"], n_iter=s["n_iter"], burn_in=s["burn_in"],
                               step_size=s["step_size"], n_leapfrog=s["n_leapfrog"],
                               proposal_sd=s["proposal_sd"], adapt=s["adapt"],
                               update_H=s["update_H"], update_G=s["update_G"],
                               parametrization=s["parametrization"],
                               prior=LangevinPrior(s["prior_a"], s["prior_b"]))
        data = X if X is not None else np.zeros((0, m["d"], m["p"]))
        trace = fit_langevin(data, lc, rng, shape=(m["d"], m["p"]))
    elif model == "trunc-mixture":
        if X is None:
            raise ConfigError("[run] data: trunc-mixture fits need a data file")
        region = TruncationRegion.unit(X.shape[1]) if cfg["run"]["data_lower"] is not None \
            else TruncationRegion(m["lower"], m["upper"])
        dc = DpmmConfig(K=s["K"], alpha=s["alpha"], n_iter=s["n_iter"], burn_in=s["burn_in"],
                        grid_size=s["grid_size"], augment=s["augment"])
        trace = fit_truncated_dpmm(X, region, dc, rng)
        if "grid_axes" in trace.info:
            files["grid.csv"] = grid_to_csv(trace)
    elif model == "gpds":
        if X is None:
            raise ConfigError("[run] data: gpds fits need a data file")
        gc = GpdsConfig(n_iter=s["n_iter"], burn_in=s["burn_in"],
                        latent_method=s["latent_method"], latent_steps=s["latent_steps"],
                        update_base=s["update_base"], update_kernel=s["update_kernel"],
                        kernel_proposal_sd=s["kernel_proposal_sd"], kernel_var=s["kernel_var"],
                        lengthscale=s["lengthscale"], prior=NIGPrior(*s["nig"]),
                        grid_points=s["grid_points"])
        trace = fit_gpds(X, gc, rng)
        files["density.csv"] = density_grid_to_csv(trace)
        files["rejected_hist.csv"] = rejected_histogram_to_csv(trace.n_rejected)
    else:
        data = X if X is not None else np.zeros(0, dtype=int)
        trace = _fit_toy(data, s, rng)
    return trace, files


def _fit_toy(X, s, rng) -> ChainTrace:
    model = tilted_bernoulli_model()
    update = tilted_bernoulli_update(s["prior_a"], s["prior_b"])
    theta = s["theta_init"]
    total = s["burn_in"] + s["n_iter"]
    draws, nrej, secs = [], [], []
    for it in range(total):
        t0 = time.perf_counter()
        rej = resample_rejected(model, theta, len(X), rng)
        aug = AugmentedDataset(X, rej)
        theta = update(theta, aug, rng)
        if it >= s["burn_in"]:
            draws.append(theta)
            nrej.append(int(aug.sizes.sum()))
            secs.append(time.perf_counter() - t0)
    return ChainTrace(np.array(draws), ["theta"], seconds=np.array(secs), n_rejected=np.array(nrej))


def cmd_fit(args) -> int:
    cfg = load_config(args.config, args.seed)
    X, record = load_data(cfg)
    out = _out_dir(args.out)
    chains = cfg["run"]["chains"]
    threads = max(1, min(args.threads, chains))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda c: _fit_chain(cfg, X, c), range(chains)))
    for c, (trace, files) in enumerate(results):
        trace.to_csv(os.path.join(out, f"chain{c}.trace.csv"), with_seconds=False)
        # wall-clock times live in a sidecar so the traces stay reproducible
        write_numeric_csv(os.path.join(out, f"chain{c}.seconds.csv"), trace.seconds[:, None],
                          ["seconds"])
        for name, text in files.items():
            _write(out, f"chain{c}.{name}", text)
    cfg["run"]["data"] = _resolved_data(cfg)
    extra = {"chain_seeds": [chain_seed(cfg["run"]["seed"], c) for c in range(chains)],
             "package": __version__}
    if record is not None:
        extra["normalization"] = {k: np.asarray(v).tolist() for k, v in record.items()}
    _write(out, "manifest.json", manifest_text(cfg, extra))
    for c, (trace, _) in enumerate(results):
        print(f"chain {c}: {len(trace)} draws, acceptance {trace.acceptance_rate:.3f}, "
              f"mean |Y| {trace.n_rejected.mean():.1f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce


def cmd_reproduce(args) -> int:
    out = _out_dir(args.out)
    seed = 0 if args.seed is None else args.seed
    meta = {"study": args.study, "scale": args.scale, "seed": seed, "package": __version__}
    try:
        if args.study == "fig3-ess":
            st = ess_study(args.scale, seed)
            _write(out, "ess_table.csv", st.comparison.to_csv())
            _write(out, "ess_table.md", st.comparison.to_markdown())
            meta["hmc_over_rw"] = hmc_vs_rw_ratio(st)
            print(st.comparison.to_markdown())
        elif args.study == "approx-bias":
            rows = bias_study(args.scale, seed)
            text = bias_table_csv(rows)
            _write(out, "bias_table.csv", text)
            print(text)
        else:
            st = gpds_study(args.scale, seed)
            _write(out, "density.csv", density_grid_to_csv(st.trace))
            _write(out, "rejected_hist.csv", rejected_histogram_to_csv(st.trace.n_rejected))
            meta.update(l1=st.l1, integral=st.integral, modes=st.modes.tolist(),
                        rejected_median=float(np.median(st.trace.n_rejected)),
                        rejected_max=int(st.trace.n_rejected.max()))
            print(f"L1 {st.l1:.4f}  integral {st.integral:.4f}  modes {st.modes}")
    except (NumericalError, MaxAttemptsError) as exc:
        raise type(exc)(f"{args.study}: {exc}") from exc
    _write(out, "manifest.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose and ingest-check


def _read_trace(path) -> ChainTrace:
    if not os.path.isfile(path):
        raise ConfigError(f"trace file not found: {path}")
    try:
        tr = ChainTrace.from_csv(path)
    except (ValueError, IndexError, KeyError) as exc:
        raise ConfigError(f"{path}: unreadable trace ({exc})") from None
    side = path.replace(".trace.csv", ".seconds.csv")
    if side != path and os.path.isfile(side):
        secs = read_numeric_csv(side, 1)[:, 0]
        if len(secs) == len(tr):
            tr.seconds = secs
    return tr


def cmd_diagnose(args) -> int:
    out = _out_dir(args.out)
    traces = {}
    for path in args.traces:
        name = os.path.basename(path).replace(".trace.csv", "").replace(".csv", "")
        traces[name] = _read_trace(path).burn(args.burn)
    lines = ["trace,parameter,mean,sd,mcse,ess,ess_per_sec,lower,upper"]
    for name, tr in traces.items():
        for row in summarize(tr):
            lines.append(",".join([name, row["parameter"]] + [repr(float(row[k])) for k in
                                   ("mean", "sd", "mcse", "ess", "ess_per_sec", "lower",
                                    "upper")]))
    _write(out, "summary.csv", "\n".join(lines) + "\n")
    if len(traces) > 1:
        try:
            comp = compare_samplers(traces, args.params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        _write(out, "comparison.csv", comp.to_csv())
        _write(out, "comparison.md", comp.to_markdown())
        print(comp.to_markdown())
    else:
        print("\n".join(lines))
    return EXIT_OK


def cmd_ingest_check(args) -> int:
    cfg = load_config(args.config)
    X, record = load_data(cfg)
    if X is None:
        raise ConfigError("[run] data: no data file configured")
    print(f"{cfg['run']['data']}: {len(X)} observations, shape {X.shape[1:]} "
          f"for model {cfg['run']['model']}")
    if record is not None:
        print("normalized to the unit box: " + json.dumps(
            {k: np.asarray(v).tolist() for k, v in record.items()}))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rejaug",
                                     description="Inference for rejection-sampled models "
                                                 "by instantiating rejected proposals.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="INI or JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for chains")
        return p

    common(sub.add_parser("sample-prior", help="simulate from a configured model"))
    common(sub.add_parser("fit", help="run MCMC chains on a data file"))
    rp = common(sub.add_parser("reproduce", help="run a built-in synthetic study"), config=False)
    rp.add_argument("study", choices=STUDIES)
    rp.add_argument("--scale", type=float, default=1.0,
                    help="shrink iteration counts by this factor in (0, 1]")
    dp = sub.add_parser("diagnose", help="ESS summaries and sampler comparison for traces")
    dp.add_argument("traces", nargs="+", help="trace CSV files")
    dp.add_argument("--out", help="output directory")
    dp.add_argument("--burn", type=int, default=0, help="drop this many leading draws")
    dp.add_argument("--params", nargs="*", default=None, help="parameters to compare")
    ip = sub.add_parser("ingest-check", help="validate a config and its data file")
    ip.add_argument("--config", required=True)
    return parser


COMMANDS = {"sample-prior": cmd_sample_prior, "fit": cmd_fit, "reproduce": cmd_reproduce,
            "diagnose": cmd_diagnose, "ingest-check": cmd_ingest_check}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_IO
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, MaxAttemptsError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
