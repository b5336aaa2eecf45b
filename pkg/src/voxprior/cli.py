"""Command-line entry points.

Seven subcommands: degrade, restore, inpaint, refine, train-prior,
sample-prior, metrics.  Every option can come from three places with a fixed
precedence: command-line flags override ``--config <json>`` values, which
override built-in defaults.  Unknown keys in a config file are an error so
typos do not silently fall back to defaults.

Each output-producing run writes ``<output>.run.json``, a provenance sidecar
holding the fully resolved configuration, seed, package versions, and wall
time.  A sidecar is itself a valid ``--config`` document, so

    voxprior restore --config result.nii.gz.run.json

re-runs the job bit-exactly.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import glob as globmod
import json
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy

from .errors import FormatError, NumericError
from .grid import GridMap, Rng, Volume
from .linops import Mask, SliceProfile, downsample_dims, op_align, op_blur, op_downsample, op_project
from .metrics import metric_report
from .nifti import read_nifti, write_nifti
from .prior import Denoiser, GmmPrior, sample_prior, schedule_poly7
from .solver import SolverConfig, inpaint, refine, restore
from .synth import PHANTOM_KINDS, DegradeConfig, Phantom, degrade, make_phantom
from .trainer import TrainConfig, train

__all__ = ["main", "run_cli"]

SCHEMA_VERSION = 1


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing

def _load_config_file(path: str) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise _UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise _UsageError(f"config file {path} must hold a JSON object")
    if "schema_version" in doc and "config" in doc:
        doc = doc["config"]   # provenance sidecar: unwrap the stored config
    return doc


def _resolve(defaults: dict, args: argparse.Namespace) -> dict:
    resolved = dict(defaults)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        file_cfg = _load_config_file(cfg_path)
        for key, value in file_cfg.items():
            if key not in defaults:
                raise _UsageError(f"unknown config key {key!r} in {cfg_path}")
            resolved[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    for key in ("factors", "fwhm", "hr_dims", "dims"):
        if resolved.get(key) is not None:
            resolved[key] = tuple(resolved[key])
    return resolved


def _require(cfg: dict, *keys):
    for key in keys:
        if cfg.get(key) is None:
            raise _UsageError(f"missing required option --{key.replace('_', '-')}")


def _write_sidecar(out_path: str, command: str, cfg: dict, wall_s: float, extra: dict | None = None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()},
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "voxprior": _package_version(),
        },
        "timings": {"wall_s": wall_s},
    }
    if extra:
        doc.update(extra)
    with open(out_path + ".run.json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _package_version() -> str:
    from . import __version__
    return __version__


def _read_volume(path: str) -> Volume:
    if not os.path.exists(path):
        raise _UsageError(f"input file not found: {path}")
    return read_nifti(path)


def _make_rng(seed: int, derived_key) -> Rng:
    rng = Rng(int(seed))
    if derived_key is not None:
        rng = rng.derive(int(derived_key))
    return rng


def _load_score(cfg: dict, expected_dim: int | None):
    """Exactly one of prior (GMM json) / checkpoint (denoiser binary)."""
    prior_path, ckpt_path = cfg.get("prior"), cfg.get("checkpoint")
    if (prior_path is None) == (ckpt_path is None):
        raise _UsageError("exactly one of --prior and --checkpoint is required")
    if prior_path is not None:
        if not os.path.exists(prior_path):
            raise _UsageError(f"prior file not found: {prior_path}")
        with open(prior_path) as f:
            score = GmmPrior.from_json(f.read())
        dim = score.dim
    else:
        if not os.path.exists(ckpt_path):
            raise _UsageError(f"checkpoint file not found: {ckpt_path}")
        score = Denoiser.load(ckpt_path)
        dim = score.params["b3"].size
    if expected_dim is not None and dim != expected_dim:
        raise _UsageError(f"prior dimension {dim} does not match the {expected_dim}-voxel state")
    return score


def _solver_config(cfg: dict) -> SolverConfig:
    kwargs = {}
    for key in ("annealing_steps", "sigma_max", "sigma_min", "ode_steps", "langevin_steps",
                "langevin_eta", "tau_y", "tau_t_multiplier", "bias_order", "bias_lambda",
                "bias_alpha0", "seed"):
        if cfg.get(key) is not None:
            kwargs[key] = cfg[key]
    if cfg.get("bias_updates") is not None:
        kwargs["bias_updates_per_step"] = cfg["bias_updates"]
    return SolverConfig(**kwargs)


def _batch(cfg: dict, command: str, worker) -> int:
    """--glob mode: expand the input pattern, derive one seed per file, and
    process concurrently with deterministic output names in --out-dir."""
    _require(cfg, "input", "out_dir")
    paths = sorted(globmod.glob(cfg["input"]))
    if not paths:
        raise _UsageError(f"--glob matched no files: {cfg['input']}")
    os.makedirs(cfg["out_dir"], exist_ok=True)

    def one(item):
        key, path = item
        stem = os.path.basename(path)
        for suffix in (".nii.gz", ".nii"):
            if stem.endswith(suffix):
                stem = stem[: -len(suffix)]
                break
        sub = dict(cfg)
        sub["input"] = path
        sub["output"] = os.path.join(cfg["out_dir"], f"{stem}_{command}.nii.gz")
        sub["derived_key"] = key
        sub["glob"] = None
        sub["out_dir"] = None
        worker(sub)

    with ThreadPoolExecutor(max_workers=min(4, len(paths))) as pool:
        list(pool.map(one, enumerate(paths)))
    return 0


# ---------------------------------------------------------------------------
# subcommand implementations

_DEGRADE_DEFAULTS = {
    "input": None, "output": None, "truth_out": None, "dims": (24, 24, 24),
    "factors": (1.6, 1.6, 5.0), "filter_sigma_scale": 0.5, "bias_order": 4,
    "bias_amplitude": 0.0, "noise_sigma": 0.0, "seed": 0,
    "derived_key": None, "glob": None, "out_dir": None,
}


def _cmd_degrade(cfg: dict) -> int:
    if cfg.get("glob"):
        return _batch(cfg, "degrade", _cmd_degrade)
    _require(cfg, "input", "output")
    t0 = time.perf_counter()
    spec = cfg["input"]
    if spec.startswith("phantom:"):
        kind = spec.split(":", 1)[1]
        vol = make_phantom(Phantom(kind, cfg["dims"], int(cfg["seed"])))
    else:
        vol = _read_volume(spec)
    dcfg = DegradeConfig(
        factors=cfg["factors"], filter_sigma_scale=cfg["filter_sigma_scale"],
        bias_order=int(cfg["bias_order"]), bias_amplitude=cfg["bias_amplitude"],
        noise_sigma=cfg["noise_sigma"], seed=int(cfg["seed"]))
    rng = _make_rng(dcfg.seed, cfg.get("derived_key"))
    low, c = degrade(vol, dcfg, rng)
    write_nifti(low, cfg["output"])
    if cfg.get("truth_out"):
        write_nifti(vol, cfg["truth_out"])
    _write_sidecar(cfg["output"], "degrade", cfg, time.perf_counter() - t0,
                   {"bias_coefficients": list(c)})
    return 0


_SOLVER_KEYS = {
    "annealing_steps": None, "sigma_max": None, "sigma_min": None, "ode_steps": None,
    "langevin_steps": None, "langevin_eta": None, "tau_y": None, "tau_t_multiplier": None,
    "bias_order": None, "bias_lambda": None, "bias_alpha0": None, "bias_updates": None,
    "prior": None, "checkpoint": None, "seed": 0, "derived_key": None,
    "glob": None, "out_dir": None,
}

_RESTORE_DEFAULTS = {
    "input": None, "output": None, "hr_dims": None, "factors": None,
    "fwhm": None, "no_bias": None, **_SOLVER_KEYS,
}


def _cmd_restore(cfg: dict) -> int:
    if cfg.get("glob"):
        return _batch(cfg, "restore", _cmd_restore)
    _require(cfg, "input", "output", "hr_dims", "factors")
    t0 = time.perf_counter()
    y = _read_volume(cfg["input"])
    hr_dims = tuple(int(d) for d in cfg["hr_dims"])
    factors = tuple(float(f) for f in cfg["factors"])
    if downsample_dims(hr_dims, factors) != y.dims:
        raise _UsageError(
            f"hr dims {hr_dims} at factors {factors} give a "
            f"{downsample_dims(hr_dims, factors)} grid, but the input is {y.dims}")
    hr_affine = y.affine @ np.diag([1.0 / factors[0], 1.0 / factors[1], 1.0 / factors[2], 1.0])
    hr_spacing = tuple(float(np.linalg.norm(hr_affine[:3, a])) for a in range(3))
    fwhm = tuple(cfg["fwhm"]) if cfg.get("fwhm") is not None else y.spacing
    t_op = op_align(GridMap(hr_affine, hr_affine, hr_dims)).bind(hr_dims)
    s_op = op_blur(SliceProfile(fwhm), hr_spacing)
    r_op = op_downsample(factors, hr_dims)
    a_op = op_project(t_op, s_op, r_op)
    score = _load_score(cfg, int(np.prod(hr_dims)))
    scfg = _solver_config(cfg)
    rng = _make_rng(scfg.seed, cfg.get("derived_key"))
    estimate, bias_c = restore(y, a_op, score, scfg, hr_affine=hr_affine,
                               estimate_bias=not cfg.get("no_bias"), rng=rng)
    write_nifti(estimate, cfg["output"])
    _write_sidecar(cfg["output"], "restore", cfg, time.perf_counter() - t0,
                   {"bias_coefficients": None if bias_c is None else list(bias_c)})
    return 0


_INPAINT_DEFAULTS = {"input": None, "output": None, "mask": None, **_SOLVER_KEYS}


def _cmd_inpaint(cfg: dict) -> int:
    if cfg.get("glob"):
        return _batch(cfg, "inpaint", _cmd_inpaint)
    _require(cfg, "input", "output", "mask")
    t0 = time.perf_counter()
    y = _read_volume(cfg["input"])
    mask_vol = _read_volume(cfg["mask"])
    if mask_vol.dims != y.dims:
        raise _UsageError(f"mask dims {mask_vol.dims} do not match input {y.dims}")
    mask = Mask(mask_vol.data > 0.5)
    score = _load_score(cfg, int(np.prod(y.dims)))
    scfg = _solver_config(cfg)
    rng = _make_rng(scfg.seed, cfg.get("derived_key"))
    out = inpaint(y, mask, score, scfg, rng=rng)
    write_nifti(out, cfg["output"])
    _write_sidecar(cfg["output"], "inpaint", cfg, time.perf_counter() - t0)
    return 0


_REFINE_DEFAULTS = {"input": None, "output": None, "tau_s": 0.05, **_SOLVER_KEYS}


def _cmd_refine(cfg: dict) -> int:
    if cfg.get("glob"):
        return _batch(cfg, "refine", _cmd_refine)
    _require(cfg, "input", "output")
    t0 = time.perf_counter()
    x_hat = _read_volume(cfg["input"])
    score = _load_score(cfg, int(np.prod(x_hat.dims)))
    scfg = _solver_config(cfg)
    rng = _make_rng(scfg.seed, cfg.get("derived_key"))
    out = refine(x_hat, score, scfg, tau_s=float(cfg["tau_s"]), rng=rng)
    write_nifti(out, cfg["output"])
    _write_sidecar(cfg["output"], "refine", cfg, time.perf_counter() - t0)
    return 0


_TRAIN_DEFAULTS = {
    "data": None, "phantom_kind": None, "phantom_count": 64, "dims": (12, 12, 12),
    "data_seed": 1000, "output": None, "curve": None,
    "lr": None, "batch": None, "steps": None, "warmup_steps": None, "hidden": None,
    "sigma_data": None, "p_mean": None, "p_std": None, "grad_clip": None,
    "ema_decay": None, "seed": 0,
}


def _cmd_train_prior(cfg: dict) -> int:
    _require(cfg, "output")
    t0 = time.perf_counter()
    if (cfg.get("data") is None) == (cfg.get("phantom_kind") is None):
        raise _UsageError("exactly one of --data and --phantom-kind is required")
    if cfg.get("data") is not None:
        paths = sorted(globmod.glob(cfg["data"]))
        if not paths:
            raise _UsageError(f"--data matched no files: {cfg['data']}")
        vols = [_read_volume(p) for p in paths]
        dims = vols[0].dims
        for p, v in zip(paths, vols):
            if v.dims != dims:
                raise _UsageError(f"training volume {p} has dims {v.dims}, expected {dims}")
        dataset = np.stack([v.ravel() for v in vols])
    else:
        count = int(cfg["phantom_count"])
        if count < 1:
            raise _UsageError("--phantom-count must be >= 1")
        dataset = np.stack([
            make_phantom(Phantom(cfg["phantom_kind"], cfg["dims"], int(cfg["data_seed"]) + i)).ravel()
            for i in range(count)])
    kwargs = {k: cfg[k] for k in ("lr", "batch", "steps", "warmup_steps", "hidden",
                                  "sigma_data", "p_mean", "p_std", "grad_clip", "ema_decay")
              if cfg.get(k) is not None}
    tcfg = TrainConfig(seed=int(cfg["seed"]), **kwargs)
    denoiser = train(dataset, tcfg, curve_path=cfg.get("curve"))
    denoiser.save(cfg["output"])
    _write_sidecar(cfg["output"], "train-prior", cfg, time.perf_counter() - t0,
                   {"dataset_shape": list(dataset.shape), "n_params": denoiser.n_params()})
    return 0


_SAMPLE_DEFAULTS = {
    "output": None, "dims": (12, 12, 12), "prior": None, "checkpoint": None,
    "annealing_steps": 50, "sigma_max": 100.0, "sigma_min": 0.1,
    "ode_steps": 5, "ode_sigma_min": 0.01, "seed": 0,
}


def _cmd_sample_prior(cfg: dict) -> int:
    _require(cfg, "output")
    t0 = time.perf_counter()
    dims = tuple(int(d) for d in cfg["dims"])
    score = _load_score(cfg, int(np.prod(dims)))
    schedule = schedule_poly7(int(cfg["annealing_steps"]), float(cfg["sigma_min"]),
                              float(cfg["sigma_max"]))
    sample = sample_prior(schedule, score, Rng(int(cfg["seed"])), dims,
                          ode_steps=int(cfg["ode_steps"]), sigma_stop=float(cfg["ode_sigma_min"]))
    write_nifti(Volume(sample, (1.0, 1.0, 1.0), np.eye(4)), cfg["output"])
    _write_sidecar(cfg["output"], "sample-prior", cfg, time.perf_counter() - t0)
    return 0


_METRICS_DEFAULTS = {
    "input_a": None, "input_b": None, "data_range": 2.0, "window": 7, "sidecar": None,
}


def _cmd_metrics(cfg: dict) -> int:
    _require(cfg, "input_a", "input_b")
    t0 = time.perf_counter()
    a = _read_volume(cfg["input_a"])
    b = _read_volume(cfg["input_b"])
    rep = metric_report(a, b, data_range=float(cfg["data_range"]), window=int(cfg["window"]))
    print(f"{cfg['input_a']},{cfg['input_b']},{rep.mae:.10g},{rep.psnr:.10g},"
          f"{rep.ssim:.10g},{rep.gmsd:.10g}")
    if cfg.get("sidecar"):
        _write_sidecar(cfg["sidecar"].removesuffix(".run.json"), "metrics", cfg,
                       time.perf_counter() - t0)
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(sub: argparse.ArgumentParser, batch: bool = False):
    sub.add_argument("--config", help="JSON config file (or a previous run's sidecar)")
    sub.add_argument("--seed", type=int)
    if batch:
        sub.add_argument("--glob", action="store_true", default=None,
                         help="treat INPUT as a glob pattern; outputs go to --out-dir "
                              "with per-file derived seeds")
        sub.add_argument("--out-dir", dest="out_dir")
        sub.add_argument("--derived-key", dest="derived_key", type=int, help=argparse.SUPPRESS)


def _add_solver_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--prior", help="GMM prior JSON file")
    sub.add_argument("--checkpoint", help="denoiser checkpoint file")
    sub.add_argument("--annealing-steps", dest="annealing_steps", type=int)
    sub.add_argument("--sigma-max", dest="sigma_max", type=float)
    sub.add_argument("--sigma-min", dest="sigma_min", type=float)
    sub.add_argument("--ode-steps", dest="ode_steps", type=int)
    sub.add_argument("--langevin-steps", dest="langevin_steps", type=int)
    sub.add_argument("--langevin-eta", dest="langevin_eta", type=float)
    sub.add_argument("--tau-y", dest="tau_y", type=float)
    sub.add_argument("--tau-t-multiplier", dest="tau_t_multiplier", type=float)
    sub.add_argument("--bias-order", dest="bias_order", type=int)
    sub.add_argument("--bias-lambda", dest="bias_lambda", type=float)
    sub.add_argument("--bias-alpha0", dest="bias_alpha0", type=float)
    sub.add_argument("--bias-updates", dest="bias_updates", type=int)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxprior",
                                     description="Diffusion-prior volume restoration toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("degrade", help="synthetic degradation (low-pass, resample, bias, noise)")
    p.add_argument("input", nargs="?",
                   help=f"volume path, or phantom:<kind> with kind in {PHANTOM_KINDS}")
    p.add_argument("output", nargs="?")
    p.add_argument("--truth-out", dest="truth_out", help="also write the source volume here")
    p.add_argument("--dims", nargs=3, type=int, help="phantom dims")
    p.add_argument("--factors", nargs=3, type=float)
    p.add_argument("--filter-sigma-scale", dest="filter_sigma_scale", type=float)
    p.add_argument("--bias-order", dest="bias_order", type=int)
    p.add_argument("--bias-amplitude", dest="bias_amplitude", type=float)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    _add_common(p, batch=True)

    p = subs.add_parser("restore", help="recover a high-res volume from a degraded one")
    p.add_argument("input", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--hr-dims", dest="hr_dims", nargs=3, type=int)
    p.add_argument("--factors", nargs=3, type=float)
    p.add_argument("--fwhm", nargs=3, type=float, help="slice-profile FWHM in mm (default: input spacing)")
    p.add_argument("--no-bias", dest="no_bias", action="store_true", default=None,
                   help="disable bias-field estimation")
    _add_solver_flags(p)
    _add_common(p, batch=True)

    p = subs.add_parser("inpaint", help="fill masked-out voxels from the prior")
    p.add_argument("input", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--mask", help="volume whose nonzero voxels are observed")
    _add_solver_flags(p)
    _add_common(p, batch=True)

    p = subs.add_parser("refine", help="posterior-sample around an initial estimate")
    p.add_argument("input", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--tau-s", dest="tau_s", type=float)
    _add_solver_flags(p)
    _add_common(p, batch=True)

    p = subs.add_parser("train-prior", help="train a denoiser prior")
    p.add_argument("output", nargs="?", help="checkpoint path")
    p.add_argument("--data", help="glob of training volumes")
    p.add_argument("--phantom-kind", dest="phantom_kind", choices=PHANTOM_KINDS)
    p.add_argument("--phantom-count", dest="phantom_count", type=int)
    p.add_argument("--dims", nargs=3, type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--curve", help="write a loss-curve CSV here")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--sigma-data", dest="sigma_data", type=float)
    p.add_argument("--p-mean", dest="p_mean", type=float)
    p.add_argument("--p-std", dest="p_std", type=float)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--ema-decay", dest="ema_decay", type=float)
    _add_common(p)

    p = subs.add_parser("sample-prior", help="draw an unconditional prior sample")
    p.add_argument("output", nargs="?")
    p.add_argument("--dims", nargs=3, type=int)
    p.add_argument("--prior", help="GMM prior JSON file")
    p.add_argument("--checkpoint", help="denoiser checkpoint file")
    p.add_argument("--annealing-steps", dest="annealing_steps", type=int)
    p.add_argument("--sigma-max", dest="sigma_max", type=float)
    p.add_argument("--sigma-min", dest="sigma_min", type=float)
    p.add_argument("--ode-steps", dest="ode_steps", type=int)
    p.add_argument("--ode-sigma-min", dest="ode_sigma_min", type=float)
    _add_common(p)

    p = subs.add_parser("metrics", help="print a CSV row: a,b,mae,psnr,ssim,gmsd")
    p.add_argument("input_a", nargs="?")
    p.add_argument("input_b", nargs="?")
    p.add_argument("--data-range", dest="data_range", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--sidecar", help="also write a provenance sidecar at this path")
    p.add_argument("--config", help="JSON config file")

    return parser


_COMMANDS = {
    "degrade": (_DEGRADE_DEFAULTS, _cmd_degrade),
    "restore": (_RESTORE_DEFAULTS, _cmd_restore),
    "inpaint": (_INPAINT_DEFAULTS, _cmd_inpaint),
    "refine": (_REFINE_DEFAULTS, _cmd_refine),
    "train-prior": (_TRAIN_DEFAULTS, _cmd_train_prior),
    "sample-prior": (_SAMPLE_DEFAULTS, _cmd_sample_prior),
    "metrics": (_METRICS_DEFAULTS, _cmd_metrics),
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    defaults, command = _COMMANDS[args.command]
    try:
        cfg = _resolve(defaults, args)
        return command(cfg)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename or e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
