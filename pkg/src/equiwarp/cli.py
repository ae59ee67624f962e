"""Command-line entry point: ``equiwarp <command> [--config FILE] [--set key=value] ...``.

Every run writes into its output directory the resolved config
(``config.yaml``), its SHA-256 (``config.sha256``), package versions
(``versions.json``), the CSV results and SVG plots.  Timestamps go only into
``manifest.json`` so the rest is byte-identical across reruns.

Exit codes: 0 success, 2 bad config, 3 numerical failure, 4 I/O failure.
Failures print one line ``error[<category>]: <message>`` to stderr.
"""

import argparse
import csv
import io
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .config import ConfigError, config_hash, parse_override, resolve
from .container import ContainerError, load_tensor, save_volume
from .flow import FloFormatError, load_flo, make_synthetic_flow
from .gaussianity import gaussianity_report, independent_sampler, warped_sampler
from .metrics import cf_psnr
from .mixer import MixParams, mix_noise
from .noise_warp import EmptyPixelError, generate_warped_sequence, temporal_subsample
from .plotting import plot_csv, plot_series
from .toy import (AnalyticDenoiser, DMDConfig, NumericalError, TrainConfig, beta_sweep,
                  dmd_distill, equivariance_error, fit_linear_denoiser, make_synthetic_model,
                  noise_video_distance, operator_error, resolve_beta, sampler_error_vs_steps)

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return v


def write_csv(path, rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def _dir(path):
    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"no such directory: {d}")
    return d


def _flows(cfg):
    if cfg["flows_dir"]:
        flows = [load_flo(f) for f in sorted(_dir(cfg["flows_dir"]).glob("*.flo"))]
        if flows:
            return flows, flows[0].width, flows[0].height
        return [], cfg["width"], cfg["height"]
    w, h = cfg["width"], cfg["height"]
    out = []
    for spec in cfg["flows"]:
        try:
            out.append(make_synthetic_flow(spec["kind"], spec["params"], w, h))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad flow spec {spec!r}: {e}") from None
    return out, w, h


def _model(cfg):
    try:
        return make_synthetic_model(**cfg["model"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad model: {e}") from None


def cmd_gen_noise(cfg, out, workers):
    flows, w, h = _flows(cfg)
    vol = generate_warped_sequence(flows, w, h, cfg["subdiv"], cfg["seed"])
    if cfg["beta"] != 1.0:
        try:
            vol = mix_noise(vol, MixParams(cfg["beta"], cfg["mix_seed"]))
        except ValueError as e:
            raise ConfigError(str(e)) from None
    vol = temporal_subsample(vol, cfg["subsample"])
    save_volume(out / "noise.eqvt", vol)
    rows = [{"frame": k, "mean": float(f.mean()), "std": float(f.std())}
            for k, f in enumerate(vol.frames)]
    write_csv(out / "frames.csv", rows, ["frame", "mean", "std"])


def cmd_verify_gaussianity(cfg, out, workers):
    flows, w, h = _flows(cfg)
    mode = cfg["mode"]
    if mode == "independent":
        sampler = independent_sampler(len(flows) + 1, w, h)
    elif mode in ("warped", "unscaled"):
        sampler = warped_sampler(flows, w, h, cfg["subdiv"], rescale=mode == "warped")
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    rep = gaussianity_report(sampler, cfg["n_seeds"], cfg["alpha"], cfg["base_seed"], workers=workers)
    (out / "gaussianity.csv").write_text(rep.to_csv())
    summary = [{"passed": int(rep.passed), "ks_critical": rep.ks_critical,
                "ks_pass_frac": rep.overall_ks_pass_frac,
                "min_variance": float(rep.pooled_variance.min()),
                "max_variance": float(rep.pooled_variance.max())}]
    write_csv(out / "summary.csv", summary, list(summary[0]))


def cmd_equivariance(cfg, out, workers):
    model = _model(cfg)
    tc = TrainConfig(**cfg["train"])
    rows, ops = [], []
    for mode in cfg["modes"]:
        beta = resolve_beta(mode)
        an = AnalyticDenoiser(model, beta)
        fit = fit_linear_denoiser(model, tc, mode, workers=workers)
        for t in cfg["ts"]:
            for prov, den in (("analytic", an), ("fitted", fit)):
                err = equivariance_error(den, model, t, cfg["n_probes"], cfg["probe_seed"], beta)
                for k, e in enumerate(err):
                    rows.append({"provenance": prov, "noise_mode": mode, "t": t, "frame": k, "error": e})
                rows.append({"provenance": prov, "noise_mode": mode, "t": t, "frame": "max",
                             "error": float(err.max())})
            ops.append({"noise_mode": mode, "t": t,
                        "operator_error": operator_error(fit.at(t)[0], an.matrices(t)[0])})
    write_csv(out / "equivariance.csv", rows, ["provenance", "noise_mode", "t", "frame", "error"])
    write_csv(out / "operator_error.csv", ops, ["noise_mode", "t", "operator_error"])


def cmd_beta_sweep(cfg, out, workers):
    model = _model(cfg)
    rows = beta_sweep(model, cfg["betas"], cfg["n_steps"], cfg["n_samples"], cfg["seed"],
                      cfg["peak"], workers=workers)
    cols = ["beta", "frechet", "cf_psnr", "cf_psnr_data", "cf_gap", "composite"]
    write_csv(out / "beta_sweep.csv", rows, cols)
    plot_csv(out / "beta_sweep.csv", out / "beta_sweep.svg", "beta", "composite",
             title="composite score vs beta")


def cmd_steps_sweep(cfg, out, workers):
    model = _model(cfg)
    rows = sampler_error_vs_steps(model, cfg["betas"], cfg["steps"], cfg["n_seeds"], cfg["seed"],
                                  cfg["ref_steps"], peak=cfg["peak"], workers=workers)
    write_csv(out / "steps_sweep.csv", rows, ["beta", "n_steps", "error", "straightness", "cf_psnr"])
    plot_csv(out / "steps_sweep.csv", out / "steps_error.svg", "n_steps", "error", "beta",
             title="terminal error vs steps", logy=True)
    plot_csv(out / "steps_sweep.csv", out / "steps_straightness.svg", "n_steps", "straightness",
             "beta", title="straightness vs steps")


def cmd_distance(cfg, out, workers):
    model = _model(cfg)
    rows = [{"beta": float(b), "distance": noise_video_distance(model, b, cfg["n_samples"], cfg["seed"],
                                                                cfg["n_steps"], workers)}
            for b in cfg["betas"]]
    write_csv(out / "distance.csv", rows, ["beta", "distance"])
    plot_csv(out / "distance.csv", out / "distance.svg", "beta", "distance",
             title="noise-to-video distance")


def cmd_dmd(cfg, out, workers):
    model = _model(cfg)
    dc = DMDConfig(lr=cfg["lr"], iterations=cfg["iterations"], t_min=cfg["t_min"],
                   t_max=cfg["t_max"], n_t=cfg["n_t"], t_batch=cfg["t_batch"], seed=cfg["seed"])
    try:
        res = dmd_distill(model, cfg["noise_mode"], dc, cfg["beta"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    write_csv(out / "dmd_log.csv", res.log_rows(), ["iteration", "mean_error", "cov_error"])
    scale = float(np.linalg.norm(model.cov()))
    summary = [{"iterations": len(res.cov_error) - 1, "mean_error": res.mean_error[-1],
                "cov_error": res.cov_error[-1], "cov_error_rel": res.cov_error[-1] / scale}]
    write_csv(out / "summary.csv", summary, list(summary[0]))
    it = list(range(len(res.cov_error)))
    plot_series({"covariance": (it, np.array(res.cov_error) / scale)}, out / "dmd.svg",
                "iteration", "relative covariance error", "distillation", logy=True)


def _load_frame(path):
    if path.suffix == ".eqvt":
        arr, _ = load_tensor(path)
        return arr
    from PIL import Image
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float64)
        return arr / (65535.0 if arr.max() > 255 else 255.0)


def cmd_cf_psnr(cfg, out, workers):
    if not cfg["frames_dir"] or not cfg["flows_dir"]:
        raise ConfigError("cf-psnr needs frames_dir and flows_dir")
    files = sorted(p for p in _dir(cfg["frames_dir"]).iterdir() if p.suffix in (".eqvt", ".pgm"))
    video = np.stack([_load_frame(p) for p in files])
    flows = [load_flo(f) for f in sorted(_dir(cfg["flows_dir"]).glob("*.flo"))]
    try:
        rep = cf_psnr(video, flows, cfg["mask_policy"], cfg["peak"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    (out / "cf_psnr.csv").write_text(rep.to_csv())


COMMANDS = {
    "gen-noise": cmd_gen_noise,
    "verify-gaussianity": cmd_verify_gaussianity,
    "equivariance": cmd_equivariance,
    "beta-sweep": cmd_beta_sweep,
    "steps-sweep": cmd_steps_sweep,
    "distance": cmd_distance,
    "dmd": cmd_dmd,
    "cf-psnr": cmd_cf_psnr,
}


def _parser():
    p = argparse.ArgumentParser(prog="equiwarp", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="YAML experiment config")
        s.add_argument("--out", type=Path, default=None, help="output directory")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. --set model.sigma_f=0.1")
        s.add_argument("--workers", type=int, default=1)
    pl = sub.add_parser("plot", help="plot CSV columns to SVG")
    pl.add_argument("csv", type=Path)
    pl.add_argument("--x", required=True)
    pl.add_argument("--y", required=True)
    pl.add_argument("--group")
    pl.add_argument("--logy", action="store_true")
    pl.add_argument("-o", "--output", type=Path, required=True)
    return p


def _load_config(path):
    if path is None:
        return {}
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return data


def _versions():
    return {"equiwarp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _run(args):
    if args.command == "plot":
        try:
            plot_csv(args.csv, args.output, args.x, args.y, args.group, logy=args.logy)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"cannot plot {args.csv}: {e}") from None
        return
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    overrides = [parse_override(s) for s in args.set]
    cfg = resolve(args.command, _load_config(args.config), overrides)
    out = args.out or Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    (out / "config.sha256").write_text(config_hash(cfg) + "\n")
    (out / "versions.json").write_text(json.dumps(_versions(), indent=2, sort_keys=True) + "\n")
    started = time.time()
    try:
        COMMANDS[args.command](cfg, out, args.workers)
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad config value: {e}") from None
    manifest = {"argv": sys.argv[1:], "started": started, "finished": time.time(),
                "workers": args.workers, "cwd": os.getcwd()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _run(args)
    except ConfigError as e:
        print(f"error[config]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FloFormatError, ContainerError) as e:
        print(f"error[io]: {e}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, EmptyPixelError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"error[numerical]: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"error[config]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
