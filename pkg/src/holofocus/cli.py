"""Command-line front end: ``holofocus <subcommand> [flags]``.

Every subcommand writes its fully resolved configuration as JSON next to its
outputs; passing that file back with ``--config`` reproduces the run.
Flags given on the command line override values from ``--config``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

CONFIG_SCHEMA = 1

_PATTERNS = {"ppp": "pseudo_periodic", "usaf": "usaf"}
_METRICS = {"lap": "laplacian", "var": "variance", "tamura": "tamura", "grad": "gradient_abs"}
_PRECISION = {"f32": "float32", "f64": "float64"}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing

def _parse_fractions(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from None


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults <- --config file <- explicit flags."""
    cfg = dict(defaults)
    if args.config:
        data = json.loads(Path(args.config).read_text())
        if data.get("schema_version") != CONFIG_SCHEMA:
            raise CliError(f"{args.config}: unsupported config schema {data.get('schema_version')}")
        if data.get("command") != args.command:
            raise CliError(f"{args.config} is a '{data.get('command')}' config, not '{args.command}'")
        unknown = set(data["params"]) - set(defaults)
        if unknown:
            raise CliError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update(data["params"])
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _write_config(out_dir: Path, command: str, params: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{command}_config.json"
    doc = {"schema_version": CONFIG_SCHEMA, "command": command, "params": params}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise CliError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _manifest(path: str):
    from .optics import DatasetManifest

    p = Path(path)
    if not p.exists():
        raise CliError(f"dataset not found: {path}")
    return DatasetManifest.load(p)


def _model(ckpt: str):
    from .models import load_model

    p = Path(ckpt)
    if not p.exists():
        raise CliError(f"checkpoint not found: {ckpt}")
    if not Path(str(p) + ".json").exists():
        raise CliError(f"model spec sidecar not found: {ckpt}.json")
    return load_model(p)


def _test_split(manifest, ckpt: str, split: str):
    """Records listed under ``split`` in the split.json written by train, if any."""
    if split == "all":
        return manifest
    sfile = Path(ckpt).parent / "split.json"
    if not sfile.exists():
        raise CliError(f"{sfile} not found; use --split all to evaluate the whole dataset")
    names = set(json.loads(sfile.read_text())[split])
    idx = [i for i, r in enumerate(manifest.records) if r.path in names]
    if not idx:
        raise CliError(f"no records of the {split} split are in this dataset")
    return manifest.subset(idx)


# ---------------------------------------------------------------------------
# subcommands

SIMULATE_DEFAULTS = {
    "pattern": "ppp", "modality": "phase", "zmin": 0.0, "zmax": 92.0, "zstep": 1.0, "sites": 1,
    "size": 1024, "seed": 0, "out": None, "noise": 0.0, "quantize": True, "wavelength": 0.67499,
    "na": 0.32, "magnification": 10.0, "sensor_pitch": 5.86, "period": 9.0, "workers": None,
}


def cmd_simulate(args) -> int:
    from .optics import OpticalConfig, PatternSpec, generate_dataset

    cfg = _resolve(args, SIMULATE_DEFAULTS)
    _require(cfg, "out")
    cfg["workers"] = cfg["workers"] or os.cpu_count() or 1
    optics = OpticalConfig(cfg["wavelength"], cfg["na"], cfg["magnification"], cfg["sensor_pitch"],
                           (cfg["size"], cfg["size"]))
    out = Path(cfg["out"])
    m = generate_dataset(_PATTERNS[cfg["pattern"]], cfg["modality"], cfg["zmin"], cfg["zmax"],
                         cfg["zstep"], cfg["sites"], optics, cfg["seed"], out, force=args.force,
                         quantize_8bit=cfg["quantize"], noise_std=cfg["noise"],
                         pattern=PatternSpec(period_um=cfg["period"]), workers=cfg["workers"])
    _write_config(out, "simulate", cfg)
    print(f"wrote {len(m)} holograms to {out}")
    return 0


AUTOFOCUS_DEFAULTS = {
    "holo": None, "data": None, "metric": "lap", "zmin": 0.0, "zmax": 92.0, "zstep": 1.0,
    "extremum": "auto", "out": None,
}


def cmd_autofocus(args) -> int:
    from .focus import autofocus_classical, write_curve_csv
    from .optics import OpticalConfig, read_hologram

    cfg = _resolve(args, AUTOFOCUS_DEFAULTS)
    _require(cfg, "holo")
    hpath = Path(cfg["holo"])
    if not hpath.exists():
        raise CliError(f"hologram not found: {hpath}")
    if cfg["data"]:
        m = _manifest(cfg["data"])
        match = [i for i, r in enumerate(m.records) if r.path == hpath.name]
        if not match:
            raise CliError(f"{hpath.name} is not listed in {cfg['data']}")
        holo = m.load_record(match[0])
    else:
        holo = read_hologram(hpath)
        holo.config = OpticalConfig(grid=holo.pixels.shape)
    z_hat, curve = autofocus_classical(holo, cfg["zmin"], cfg["zmax"], cfg["zstep"],
                                       _METRICS[cfg["metric"]], cfg["extremum"])
    out = Path(cfg["out"]) if cfg["out"] else hpath.with_suffix(".focus.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_curve_csv(out, curve)
    _write_config(out.parent, "autofocus", cfg)
    print(f"z_hat_um={z_hat:.4f}")
    return 0


TRAIN_DEFAULTS = {
    "arch": "tvit", "data": None, "epochs": 200, "lr": 1e-4, "rois": None, "val_rois": None,
    "batch": 32, "loss": "logcosh", "seed": 0, "out": None, "threads": 1, "precision": "f32",
    "depth": None, "hidden": None, "heads": None, "mlp": None, "patch": None,
}


def _arch_config(cfg: dict):
    from .models import SwinConfig, ViTConfig, VggConfig

    if cfg["arch"] == "tvit":
        base = ViTConfig()
        return ViTConfig(depth=cfg["depth"] or base.depth, heads=cfg["heads"] or base.heads,
                         patch=cfg["patch"] or base.patch, hidden=cfg["hidden"] or base.hidden,
                         mlp_dim=cfg["mlp"] or base.mlp_dim)
    if any(cfg[k] for k in ("depth", "hidden", "heads", "mlp", "patch")):
        raise CliError("--depth/--hidden/--heads/--mlp/--patch apply to tvit only")
    return SwinConfig() if cfg["arch"] == "tswint" else VggConfig()


def cmd_train(args) -> int:
    from .models import ModelSpec
    from .training import TrainConfig, train

    cfg = _resolve(args, TRAIN_DEFAULTS)
    _require(cfg, "data", "out")
    if cfg["rois"] is None:
        cfg["rois"] = 64 if cfg["arch"] == "tvit" else 32
    spec = ModelSpec(cfg["arch"], _arch_config(cfg), cfg["seed"], dtype=_PRECISION[cfg["precision"]])
    tcfg = TrainConfig(lr=cfg["lr"], epochs=cfg["epochs"], rois_per_hologram=cfg["rois"],
                       batch_size=cfg["batch"], loss=cfg["loss"], seed=cfg["seed"],
                       val_rois_per_hologram=cfg["val_rois"], threads=cfg["threads"])
    out = Path(cfg["out"])
    result = train(spec, _manifest(cfg["data"]), tcfg, out,
                   log=lambda r: print(f"epoch {r.epoch:4d}  train {r.train_loss:.5f}  "
                                       f"val {r.val_loss:.5f}", flush=True))
    _write_config(out, "train", cfg)
    print(f"best epoch {result.best_epoch}, val loss {result.best_val_loss:.5f}; "
          f"checkpoint {out / 'model.tnsr'}")
    return 0


EVAL_DEFAULTS = {"ckpt": None, "data": None, "rois": 16, "seed": 0, "out": None, "split": "test",
                 "fit": "ml"}


def cmd_eval(args) -> int:
    from .evaluation import evaluate

    cfg = _resolve(args, EVAL_DEFAULTS)
    _require(cfg, "ckpt", "data", "out")
    model = _model(cfg["ckpt"])
    test = _test_split(_manifest(cfg["data"]), cfg["ckpt"], cfg["split"])
    report = evaluate(model, test, cfg["rois"], cfg["seed"], cfg["fit"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "eval_per_z.csv")
    report.write_summary(out / "eval_summary.json")
    _write_config(out, "eval", cfg)
    s = report.summary()
    print(f"n={s['n']}  mu={s['mu_um']:.4f} um  sigma={s['sigma_um']:.4f} um  "
          f"FWHM={s['fwhm_um']:.4f} um")
    return 0


OCCLUDE_DEFAULTS = {"ckpt": None, "data": None, "fractions": [0.0, 0.05, 0.10], "rois": 16,
                    "seed": 0, "out": None, "split": "test"}


def cmd_occlude(args) -> int:
    from .evaluation import occlusion_sweep

    cfg = _resolve(args, OCCLUDE_DEFAULTS)
    _require(cfg, "ckpt", "data", "out")
    model = _model(cfg["ckpt"])
    test = _test_split(_manifest(cfg["data"]), cfg["ckpt"], cfg["split"])
    sweep = occlusion_sweep(model, test, cfg["fractions"], cfg["seed"], cfg["rois"])
    out = Path(cfg["out"])
    sweep.write(out)
    _write_config(out, "occlude", cfg)
    for row in sweep.summary_rows():
        print(f"fraction {row['fraction']:.3f}  |mean eps| {row['mean_abs_eps_um']:.4f} um  "
              f"FWHM {row['fwhm_um']:.4f} um")
    return 0


BENCH_DEFAULTS = {"ckpt": None, "arch": None, "n": 200, "threads": None, "precision": "f32",
                  "seed": 0, "out": None}


def cmd_bench(args) -> int:
    from .evaluation import REALTIME_LIMIT_MS, bench_inference, write_bench_csv
    from .models import build

    cfg = _resolve(args, BENCH_DEFAULTS)
    if bool(cfg["ckpt"]) == bool(cfg["arch"]):
        raise CliError("give exactly one of --ckpt or --arch")
    model = _model(cfg["ckpt"]) if cfg["ckpt"] else build(cfg["arch"], cfg["seed"])
    model.astype(_PRECISION[cfg["precision"]])
    res = bench_inference(model, cfg["n"], cfg["threads"], seed=cfg["seed"])
    if cfg["out"]:
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        write_bench_csv(out, [res])
        _write_config(out.parent, "bench", cfg)
    print(f"{res.model}  threads={res.threads}  {res.precision}  n={res.n}  "
          f"median {res.median_ms:.2f} ms  p10 {res.p10_ms:.2f}  p90 {res.p90_ms:.2f}  "
          f"(20 Hz line: {REALTIME_LIMIT_MS:.0f} ms)")
    return 0


def cmd_info(args) -> int:
    model = _model(args.ckpt)
    print(model.spec.to_json())
    print(f"parameters: {model.count_params()}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="holofocus", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def cmd(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        if name != "info":
            sp.add_argument("--config", help="resolved-config JSON from an earlier run")
        return sp

    s = cmd("simulate", cmd_simulate, "simulate a hologram dataset and its manifest")
    s.add_argument("--pattern", choices=sorted(_PATTERNS), help="target: pseudo-periodic grid or USAF")
    s.add_argument("--modality", choices=["phase", "amplitude"])
    s.add_argument("--zmin", type=float, help="first distance (um)")
    s.add_argument("--zmax", type=float, help="last distance (um), inclusive")
    s.add_argument("--zstep", type=float, help="distance step (um)")
    s.add_argument("--sites", type=int, help="target positions per distance")
    s.add_argument("--size", type=int, help="hologram side in pixels (power of two)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory")
    s.add_argument("--noise", type=float, help="Gaussian noise std, in units of mean intensity")
    s.add_argument("--float", dest="quantize", action="store_const", const=False,
                   help="store float32 pixels instead of 8-bit")
    s.add_argument("--wavelength", type=float, help="um")
    s.add_argument("--na", type=float)
    s.add_argument("--magnification", type=float)
    s.add_argument("--sensor-pitch", dest="sensor_pitch", type=float, help="camera pixel pitch (um)")
    s.add_argument("--period", type=float, help="pseudo-periodic grid period (um)")
    s.add_argument("--workers", type=int, help="simulation processes (default: all logical cores)")
    s.add_argument("--force", action="store_true", help="overwrite an existing dataset")

    a = cmd("autofocus", cmd_autofocus, "classical autofocus on one hologram file")
    a.add_argument("holo", nargs="?", help="hologram file (.holo)")
    a.add_argument("--data", help="manifest the hologram belongs to (supplies optics and target)")
    a.add_argument("--metric", choices=sorted(_METRICS))
    a.add_argument("--zmin", type=float)
    a.add_argument("--zmax", type=float)
    a.add_argument("--zstep", type=float)
    a.add_argument("--extremum", choices=["auto", "max", "min"])
    a.add_argument("--out", help="focus-curve CSV path")

    t = cmd("train", cmd_train, "train a regression network")
    t.add_argument("--arch", choices=["tvit", "tswint", "tvgg"])
    t.add_argument("--data", help="dataset directory or manifest")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--rois", type=int, help="ROIs per training hologram per epoch")
    t.add_argument("--val-rois", dest="val_rois", type=int, help="frozen ROIs per validation hologram")
    t.add_argument("--batch", type=int)
    t.add_argument("--loss", choices=["logcosh", "mse", "mae"])
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory")
    t.add_argument("--threads", type=int, help="BLAS threads (1 = reproducible)")
    t.add_argument("--precision", choices=sorted(_PRECISION))
    t.add_argument("--depth", type=int, help="tvit encoders")
    t.add_argument("--hidden", type=int, help="tvit hidden size")
    t.add_argument("--heads", type=int, help="tvit heads")
    t.add_argument("--mlp", type=int, help="tvit MLP width")
    t.add_argument("--patch", type=int, help="tvit patch side")

    e = cmd("eval", cmd_eval, "error statistics on the held-out split")
    o = cmd("occlude", cmd_occlude, "occlusion-robustness sweep")
    for sp in (e, o):
        sp.add_argument("--ckpt", help="model checkpoint (.tnsr with .json sidecar)")
        sp.add_argument("--data", help="dataset directory or manifest")
        sp.add_argument("--rois", type=int, help="ROIs per test hologram")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--split", choices=["train", "val", "test", "all"])
    e.add_argument("--fit", choices=["ml", "histogram"], help="Gaussian fit method")
    o.add_argument("--fractions", type=_parse_fractions, help="comma list, e.g. 0,0.05,0.10")

    b = cmd("bench", cmd_bench, "inference latency benchmark")
    b.add_argument("--ckpt")
    b.add_argument("--arch", choices=["tvit", "tswint", "tvgg"])
    b.add_argument("--n", type=int, help="timed inferences (>= 10)")
    b.add_argument("--threads", type=int)
    b.add_argument("--precision", choices=sorted(_PRECISION))
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="CSV path")

    i = cmd("info", cmd_info, "print a checkpoint's ModelSpec and parameter count")
    i.add_argument("ckpt")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, KeyError, TypeError) as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"holofocus {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
