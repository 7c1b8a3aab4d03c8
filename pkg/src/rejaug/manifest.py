"""Run configuration: parsing, validation and the manifest written with every output.

A configuration has three sections:

``run``
    ``model`` (one of :data:`MODELS`), ``seed``, ``chains``, ``data`` and,
    for bounded mixtures, the raw data box ``data_lower`` / ``data_upper``.
``sampler``
    Chain settings for ``fit``.
``model``
    Parameters used by ``sample-prior`` (and shapes for prior-only fits).

Configurations are read from INI-style text (``[section]`` then
``key = value``; lists are comma separated) or from JSON with the same
nesting.  A validated configuration plus the per-chain stream seeds forms the
manifest; feeding a manifest back as ``--config`` reproduces the run.
"""
from __future__ import annotations

import configparser
import json
import os

from .errors import ConfigError

MODELS = ("langevin", "trunc-mixture", "gpds", "toy-discrete")
MAX_SEED = 2**64 - 1


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)) and v in (0, 1):
        return bool(v)
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int(v):
    if isinstance(v, bool):
        raise ValueError(f"not an integer: {v!r}")
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError(f"not an integer: {v!r}")
        return int(v)
    return int(str(v).strip())


def _float(v):
    if isinstance(v, bool):
        raise ValueError(f"not a number: {v!r}")
    return float(v)


def _floats(v):
    if isinstance(v, (list, tuple)):
        return [_float(x) for x in v]
    text = str(v).strip().strip("[]")
    return [float(x) for x in text.split(",") if x.strip()]


def _str(v):
    return str(v).strip()


def _opt(conv):
    def f(v):
        if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none")):
            return None
        return conv(v)
    return f


# key -> (converter, default); None defaults mean "not set"
_RUN = {"model": (_str, None), "seed": (_int, 0), "chains": (_int, 1),
        "data": (_opt(_str), None), "data_lower": (_opt(_floats), None),
        "data_upper": (_opt(_floats), None)}

_SCHEMA = {
    "langevin": {
        "sampler": {"method": (_str, "hmc"), "n_iter": (_int, 2000), "burn_in": (_int, 500),
                    "step_size": (_float, 0.3), "n_leapfrog": (_int, 5),
                    "proposal_sd": (_float, 1.0), "adapt": (_bool, False),
                    "update_H": (_bool, False), "update_G": (_bool, True),
                    "parametrization": (_str, "kappa"), "prior_a": (_float, 1.0),
                    "prior_b": (_float, 0.1)},
        "model": {"d": (_int, 3), "p": (_int, 2), "kappa": (_floats, [5.0, 2.0]),
                  "layout": (_str, "column-major"), "n_samples": (_int, 1000)},
    },
    "trunc-mixture": {
        "sampler": {"n_iter": (_int, 500), "burn_in": (_int, 100), "K": (_int, 50),
                    "alpha": (_float, 1.0), "grid_size": (_int, 100),
                    "augment": (_bool, True)},
        "model": {"lower": (_floats, [0.0, 0.0]), "upper": (_floats, [1.0, 1.0]),
                  "K": (_int, 50), "alpha": (_float, 1.0), "n_samples": (_int, 1000)},
    },
    "gpds": {
        "sampler": {"n_iter": (_int, 2000), "burn_in": (_int, 500),
                    "latent_method": (_str, "ess"), "latent_steps": (_int, 3),
                    "update_base": (_bool, True), "update_kernel": (_bool, True),
                    "kernel_proposal_sd": (_float, 0.2), "kernel_var": (_float, 1.0),
                    "lengthscale": (_float, 1.0), "nig": (_floats, [0.0, 0.1, 1.0, 10.0]),
                    "grid_points": (_int, 1024)},
        "model": {"base_mu": (_float, 0.0), "base_var": (_float, 1.0),
                  "kernel_var": (_float, 1.0), "lengthscale": (_float, 1.0),
                  "n_samples": (_int, 1000)},
    },
    "toy-discrete": {
        "sampler": {"n_iter": (_int, 2000), "burn_in": (_int, 0), "prior_a": (_float, 1.0),
                    "prior_b": (_float, 1.0), "theta_init": (_float, 0.5)},
        "model": {"theta": (_float, 0.5), "n_samples": (_int, 1000)},
    },
}


def _parse_ini(text: str, source: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return {s: dict(cp.items(s)) for s in cp.sections()}


def read_config(path) -> dict:
    """Read a JSON or INI configuration file into nested dicts (not yet validated)."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json") or text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}, line {exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return raw
    return _parse_ini(text, path)


def _convert_section(raw: dict, spec: dict, section: str) -> dict:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a mapping")
    unknown = sorted(set(raw) - set(spec))
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")
    out = {}
    for key, (conv, default) in spec.items():
        if key in raw:
            try:
                out[key] = conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
        else:
            out[key] = default
    return out


def validate_config(raw: dict, seed: int | None = None) -> dict:
    """Check names and types and fill defaults; ``seed`` overrides ``run.seed``.

    Extra top-level keys written into manifests (``chain_seeds``,
    ``normalization``) are ignored, so a manifest validates as a config.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of sections")
    allowed = {"run", "sampler", "model", "chain_seeds", "normalization", "package"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    run = _convert_section(raw.get("run"), _RUN, "run")
    if seed is not None:
        run["seed"] = seed
    if run["model"] not in MODELS:
        raise ConfigError(f"[run] model: must be one of {', '.join(MODELS)}, got {run['model']!r}")
    if not 0 <= run["seed"] <= MAX_SEED:
        raise ConfigError("[run] seed: must be a 64-bit unsigned integer")
    if run["chains"] < 1:
        raise ConfigError("[run] chains: must be >= 1")
    schema = _SCHEMA[run["model"]]
    cfg = {"run": run,
           "sampler": _convert_section(raw.get("sampler"), schema["sampler"], "sampler"),
           "model": _convert_section(raw.get("model"), schema["model"], "model")}
    s = cfg["sampler"]
    if s["n_iter"] < 1 or s["burn_in"] < 0:
        raise ConfigError("[sampler] need n_iter >= 1 and burn_in >= 0")
    if cfg["model"]["n_samples"] < 1:
        raise ConfigError("[model] n_samples: must be >= 1")
    if run["model"] == "langevin":
        if s["method"] not in ("hmc", "rw", "exchange", "approx"):
            raise ConfigError(f"[sampler] method: unknown sampler {s['method']!r}")
        m = cfg["model"]
        if len(m["kappa"]) != m["p"] or not 1 <= m["p"] <= m["d"]:
            raise ConfigError("[model] need 1 <= p <= d and len(kappa) == p")
        if m["layout"] not in ("column-major", "row-major"):
            raise ConfigError("[model] layout: must be column-major or row-major")
    if run["model"] == "gpds" and len(s["nig"]) != 4:
        raise ConfigError("[sampler] nig: needs four values (mean, precision scale, shape, scale)")
    if (run["data_lower"] is None) != (run["data_upper"] is None):
        raise ConfigError("[run] data_lower and data_upper go together")
    return cfg


def load_config(path, seed: int | None = None) -> dict:
    return validate_config(read_config(path), seed)


def manifest_text(cfg: dict, extra: dict | None = None) -> str:
    """Deterministic JSON for a validated config plus run records."""
    doc = {k: cfg[k] for k in ("run", "sampler", "model")}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
