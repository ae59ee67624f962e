"""Experiment configuration: defaults per experiment, strict merging, hashing."""

import copy
import hashlib
import json

import yaml

__all__ = ["ConfigError", "DEFAULTS", "resolve", "config_hash", "parse_override"]


class ConfigError(ValueError):
    pass


_SHIFTS4 = ["shift:1,0", "shift:-1,0", "shift:0,1", "shift:0,-1"]


def _model(**over):
    m = {"height": 8, "width": 8, "n_warps": 4, "cov_kind": "smooth", "sigma0": 1.0,
         "length_scale": 2.0, "warps": "shift:1,0", "motions": None, "sigma_f": 0.0,
         "mean_scale": 1.0, "seed": 0}
    m.update(over)
    return m


_FLOWS = {"flows": [], "flows_dir": None, "width": 64, "height": 64}

DEFAULTS = {
    "gen-noise": {**_FLOWS, "subdiv": 4, "seed": 0, "beta": 1.0, "mix_seed": 1, "subsample": 1},
    "verify-gaussianity": {
        **_FLOWS,
        "flows": [{"kind": "translate", "params": [1.3, -0.7]},
                  {"kind": "rotate", "params": [0.05]},
                  {"kind": "zoom", "params": [1.08]},
                  {"kind": "zoom", "params": [0.93]}] * 2,
        "subdiv": 4, "mode": "warped", "n_seeds": 1000, "alpha": 0.01, "base_seed": 0,
    },
    "equivariance": {
        "model": _model(),
        "ts": [0.1, 1.0, 10.0],
        "modes": ["warped", "independent"],
        "n_probes": 256, "probe_seed": 0,
        "train": {"n_samples": 100_000, "ridge": 1e-6, "t_min": 0.1, "t_max": 10.0,
                  "n_levels": 3, "seed": 0},
    },
    "beta-sweep": {
        "model": _model(height=4, width=4, sigma_f=0.1, motions=_SHIFTS4),
        "betas": [0.0, 0.5, 0.9, 1.0], "n_steps": 32, "n_samples": 500, "seed": 0, "peak": 1.0,
    },
    "steps-sweep": {
        "model": _model(sigma0=0.02, mean_scale=2.0, motions=_SHIFTS4),
        "betas": [0.0, 1.0], "steps": [1, 2, 3, 5, 10, 20], "ref_steps": 256,
        "n_seeds": 100, "seed": 0, "peak": 1.0,
    },
    "distance": {
        "model": _model(),
        "betas": [0.0, 0.5, 0.9, 1.0], "n_samples": 200, "n_steps": 32, "seed": 0,
    },
    "dmd": {
        "model": _model(n_warps=2),
        "noise_mode": "warped", "beta": None,
        "lr": 0.1, "iterations": 1000, "t_min": 0.5, "t_max": 20.0, "n_t": 8,
        "t_batch": 0, "seed": 0,
    },
    "cf-psnr": {"frames_dir": None, "flows_dir": None, "mask_policy": "coverage", "peak": 1.0},
}

# keys whose value is free-form (lists or null in the defaults)
_OPEN = {"flows", "motions", "warps", "beta", "flows_dir", "frames_dir"}


def _merge(base, over, path):
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown key {where!r}")
        if isinstance(base[k], dict) and k not in _OPEN:
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def resolve(kind, user=None, overrides=()):
    """Defaults for ``kind`` updated by the user mapping and ``key.path=value`` overrides."""
    if kind not in DEFAULTS:
        raise ConfigError(f"unknown experiment {kind!r}")
    user = dict(user or {})
    declared = user.pop("experiment", kind)
    if declared != kind:
        raise ConfigError(f"config declares experiment {declared!r}, command is {kind!r}")
    cfg = _merge(DEFAULTS[kind], user, "")
    for path, value in overrides:
        node = cfg
        keys = path.split(".")
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"unknown key {path!r}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown key {path!r}")
        node[keys[-1]] = value
    return {"experiment": kind, **cfg}


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"bad override value {raw!r}: {e}") from None


def config_hash(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()
