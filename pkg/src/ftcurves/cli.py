"""Command-line surface: train, eval, curve, fool, check-data.

Every run resolves its configuration as hard defaults < JSON config file
(--config) < explicit flags, writes the resolved config to run.json beside
its outputs, and can be replayed byte-identically by passing that run.json
back as --config.

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numerical
divergence during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, attacks, curves, data, engine, metrics, model

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

DATA_DIR_ENV = "FTC_DATA_DIR"


class ConfigError(ValueError):
    pass


def _resolve_data_path(path: str) -> Path:
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    root = os.environ.get(DATA_DIR_ENV)
    if root:
        candidate = Path(root) / p
        if candidate.exists():
            return candidate
    return p


def _load_config_file(path: str) -> dict:
    with open(path) as f:
        blob = json.load(f)
    if not isinstance(blob, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    # accept a prior run.json directly
    if "config" in blob and isinstance(blob["config"], dict):
        return blob["config"]
    return blob


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    merged = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _write_run_record(out_dir: Path, subcommand: str, cfg: dict) -> None:
    record = {"tool": "ftcurves", "version": __version__, "subcommand": subcommand, "config": cfg}
    with open(out_dir / "run.json", "w", newline="\n") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_prepared(path_str: str, per_image: bool = True) -> data.Dataset:
    path = _resolve_data_path(path_str)
    print(f"data: {path}")
    raw = data.load_container(path)
    return data.prepare_dataset(raw, per_image=per_image)


def pixel_checksum(pixels: np.ndarray) -> str:
    """sha256 of the 256-bin byte histogram: identifies the pixel multiset."""
    counts = np.bincount(np.asarray(pixels, dtype=np.uint8).ravel(), minlength=256)
    return hashlib.sha256(counts.astype("<u8").tobytes()).hexdigest()


TRAIN_DEFAULTS = {
    "data": None,
    "out": ".",
    "epochs": 50,
    "learning_rate": 1e-2,
    "batch_size": 128,
    "weight_decay": 0.0,
    "sigma": 0.05,
    "seed": 0,
    "uniform_weights": False,
    "decay_biases": True,
    "per_image_std": True,
    "model_name": "model.ftm",
}


def cmd_train(args) -> int:
    try:
        cfg = _resolve(args, TRAIN_DEFAULTS)
        if not cfg["data"]:
            raise ConfigError("--data is required")
        if cfg["epochs"] < 1:
            raise ConfigError("--epochs must be >= 1")
        if cfg["learning_rate"] <= 0:
            raise ConfigError("--learning-rate must be > 0")
        if cfg["batch_size"] < 1:
            raise ConfigError("--batch-size must be >= 1")
        if cfg["weight_decay"] < 0:
            raise ConfigError("--weight-decay must be >= 0")
        if cfg["sigma"] <= 0:
            raise ConfigError("--sigma must be > 0")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    print(f"out: {out_dir.resolve()}")
    try:
        ds = _load_prepared(cfg["data"], per_image=cfg["per_image_std"])
        weights = None if cfg["uniform_weights"] else data.class_weights(ds.labels)
    except (OSError, data.ContainerError, data.MissingClassError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    net = model.build_svhn_cnn(seed=cfg["seed"], sigma=cfg["sigma"])
    sgd = engine.SgdConfig(
        learning_rate=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        class_weights=weights,
        seed=cfg["seed"],
        decay_biases=cfg["decay_biases"],
    )
    try:
        log = engine.train(net, ds.images, ds.labels, sgd)
    except engine.NumericalDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    model.save_model(net, out_dir / cfg["model_name"])
    with open(out_dir / "train_log.csv", "w", newline="\n") as f:
        f.write("epoch,loss,accuracy\n")
        for rec in log:
            f.write(f"{rec['epoch']},{rec['loss']:.6g},{rec['accuracy']:.6g}\n")
    _write_run_record(out_dir, "train", cfg)
    print(
        f"trained {cfg['epochs']} epochs: final loss {log[-1]['loss']:.4f}, "
        f"train accuracy {log[-1]['accuracy']:.4f}"
    )
    print(f"model: {(out_dir / cfg['model_name']).resolve()}")
    return EXIT_OK


EVAL_DEFAULTS = {
    "model": None,
    "data": None,
    "out": ".",
    "subset_size": 0,  # 0 = whole set
    "seed": 0,
    "per_image_std": True,
}


def cmd_eval(args) -> int:
    try:
        cfg = _resolve(args, EVAL_DEFAULTS)
        if not cfg["model"] or not cfg["data"]:
            raise ConfigError("--model and --data are required")
        if cfg["subset_size"] < 0:
            raise ConfigError("--subset-size must be >= 0")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        net = model.load_model(_resolve_data_path(cfg["model"]))
        ds = _load_prepared(cfg["data"], per_image=cfg["per_image_std"])
    except (OSError, data.ContainerError, model.ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    subset = ds
    if cfg["subset_size"] and cfg["subset_size"] < len(ds):
        subset = data.sample_subset(ds, cfg["subset_size"], cfg["seed"])
    preds, probs = model.predict(net, subset.images)
    joint = metrics.joint_counts(preds, subset.labels)
    report = {
        "n": int(joint.n),
        "accuracy": metrics.accuracy(joint),
        "mi_bits": metrics.mutual_information(joint),
        "label_entropy_bits": data.label_entropy(subset.labels),
        "full_set_label_entropy_bits": data.label_entropy(ds.labels),
        "mean_margin": float(model.margins(probs).mean()),
    }
    with open(out_dir / "eval.json", "w", newline="\n") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_run_record(out_dir, "eval", cfg)
    for key, val in report.items():
        print(f"{key}: {val:.6g}" if isinstance(val, float) else f"{key}: {val}")
    return EXIT_OK


CURVE_DEFAULTS = {
    "model": None,
    "data": None,
    "out": ".",
    "attack": "awgn",
    "objective": None,
    "snr_grid": ",".join(str(s) for s in curves.DEFAULT_SNR_GRID),
    "spatial_budgets": "0:0,10:1,20:2,30:3",
    "rot_step": 5.0,
    "steps": 40,
    "step_size": None,
    "stop_mean_margin": None,
    "subset_size": 1000,
    "seed": 0,
    "threads": 1,
    "per_image_std": True,
    "audit_counts": False,
}


def _parse_snr_grid(text: str):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_budgets(text: str):
    budgets = []
    for item in text.split(","):
        if not item.strip():
            continue
        rot, _, trans = item.partition(":")
        budgets.append((float(rot), int(trans or 0)))
    return budgets


def cmd_curve(args) -> int:
    try:
        cfg = _resolve(args, CURVE_DEFAULTS)
        if not cfg["model"] or not cfg["data"]:
            raise ConfigError("--model and --data are required")
        attack = cfg["attack"]
        if attack not in (curves.AWGN, curves.BIM_L2, curves.BIM_LINF, curves.SPATIAL):
            raise ConfigError(
                f"unknown attack {attack!r}; choose awgn, bim-l2, bim-linf, or spatial"
            )
        objective = None
        if attack in (curves.BIM_L2, curves.BIM_LINF):
            objective = attacks.parse_objective(cfg["objective"] or attacks.MISCLS_KIND)
        elif cfg["objective"] not in (None, curves.NO_OBJECTIVE):
            raise ConfigError(f"objective applies only to bim attacks, not {attack!r}")
        if cfg["threads"] < 1:
            raise ConfigError("--threads must be >= 1")
        if cfg["subset_size"] < 1:
            raise ConfigError("--subset-size must be >= 1")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        model_path = _resolve_data_path(cfg["model"])
        print(f"model: {model_path}")
        net = model.load_model(model_path)
        ds = _load_prepared(cfg["data"], per_image=cfg["per_image_std"])
    except (OSError, data.ContainerError, model.ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    subset_n = min(cfg["subset_size"], len(ds))
    subset = data.sample_subset(ds, subset_n, cfg["seed"])

    try:
        if attack == curves.SPATIAL:
            points = curves.sweep_spatial(
                net,
                subset,
                _parse_budgets(cfg["spatial_budgets"]),
                rot_step=cfg["rot_step"],
                threads=cfg["threads"],
            )
        else:
            sweep_cfg = curves.SnrSweepConfig(
                attack=attack,
                objective=objective,
                snr_grid=_parse_snr_grid(cfg["snr_grid"]),
                steps=cfg["steps"],
                step_size=cfg["step_size"],
                stop_mean_margin=cfg["stop_mean_margin"],
                seed=cfg["seed"],
                threads=cfg["threads"],
            )
            points = curves.sweep_snr(net, subset, sweep_cfg)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    objective_label = objective.label if objective is not None else curves.NO_OBJECTIVE
    model_tag = Path(cfg["model"]).stem
    stem = f"{attack}-{objective_label}-{model_tag}"
    curves.emit_csv(points, out_dir / f"{stem}.csv")
    curves.render_svg({f"{attack}/{objective_label}": points}, out_dir / f"{stem}.svg")
    if cfg["audit_counts"]:
        curves.emit_counts_json(points, out_dir / f"{stem}.counts.json")
    _write_run_record(out_dir, "curve", cfg)
    print(f"curve: {(out_dir / (stem + '.csv')).resolve()}")
    for p in points:
        print(
            f"  strength {p.strength:8.3f}  mi {p.mi_bits:.4f} bits  "
            f"accuracy {p.accuracy:.4f}  n {p.n}"
        )
    return EXIT_OK


FOOL_DEFAULTS = {
    "model": None,
    "out": ".",
    "sigma": 0.1,
    "stop_margin": model.FULL_CONFIDENCE_MARGIN,
    "max_iters": 500,
    "step_size": 0.5,
    "seed": 0,
    "eval_model": None,
}


def cmd_fool(args) -> int:
    try:
        cfg = _resolve(args, FOOL_DEFAULTS)
        if not cfg["model"]:
            raise ConfigError("--model is required")
        if cfg["sigma"] <= 0:
            raise ConfigError("--sigma must be > 0")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        net = model.load_model(_resolve_data_path(cfg["model"]))
        eval_net = None
        if cfg["eval_model"]:
            eval_net = model.load_model(_resolve_data_path(cfg["eval_model"]))
    except (OSError, model.ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    result = attacks.fooling_images(
        net,
        sigma=cfg["sigma"],
        stop_margin=cfg["stop_margin"],
        max_iters=cfg["max_iters"],
        step_size=cfg["step_size"],
        seed=cfg["seed"],
    )
    for i, target in enumerate(result.targets):
        attacks.write_pgm(result.images[i], out_dir / f"fool-{int(target)}.pgm")

    cross_margins = cross_preds = None
    if eval_net is not None:
        cross_p, cross_probs = model.predict(eval_net, result.images)
        cross_margins = model.margins(cross_probs)
        cross_preds = cross_p

    header = "target,iterations,margin,initial_snr_db,converged"
    if eval_net is not None:
        header += ",eval_pred,eval_margin"
    with open(out_dir / "fool_report.csv", "w", newline="\n") as f:
        f.write(header + "\n")
        for i, target in enumerate(result.targets):
            row = (
                f"{int(target)},{int(result.iterations[i])},{result.margins[i]:.6g},"
                f"{result.initial_snr_db[i]:.6g},{int(result.converged[i])}"
            )
            if eval_net is not None:
                row += f",{int(cross_preds[i])},{cross_margins[i]:.6g}"
            f.write(row + "\n")
    _write_run_record(out_dir, "fool", cfg)

    if not result.converged.all():
        missing = [int(t) for t, c in zip(result.targets, result.converged) if not c]
        print(
            f"warning: targets {missing} did not reach margin {cfg['stop_margin']} "
            f"within {cfg['max_iters']} iterations",
            file=sys.stderr,
        )
    print(f"fooling images: {out_dir.resolve()} (mean margin {result.margins.mean():.4f})")
    return EXIT_OK


def cmd_check_data(args) -> int:
    if not args.data:
        print("config error: --data is required", file=sys.stderr)
        return EXIT_CONFIG
    path = _resolve_data_path(args.data)
    print(f"data: {path}")
    try:
        raw = data.load_container(path)
    except (OSError, data.ContainerError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    hist = np.bincount(raw.labels, minlength=10)
    print(f"images: {len(raw)}")
    print(f"channels: {raw.images.shape[1]}")
    print(f"label histogram: {hist.tolist()}")
    print(f"label entropy: {data.label_entropy(raw.labels):.4f} bits")
    print(f"pixel checksum: {pixel_checksum(raw.images)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftcurves",
        description="Characterize a classifier's input-fault tolerance with "
        "information/accuracy curves versus attack strength.",
    )
    parser.add_argument("--version", action="version", version=f"ftcurves {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, model_flag=True, data_flag=True):
        p.add_argument("--config", help="JSON config file (or a prior run.json)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if model_flag:
            p.add_argument("--model", help=".ftm model file")
        if data_flag:
            p.add_argument("--data", help=f".ftc container (searched under ${DATA_DIR_ENV})")

    p = sub.add_parser("train", help="train the classifier on an .ftc container")
    add_common(p, model_flag=False)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--sigma", type=float, help="init std of the Gaussian weight draw")
    p.add_argument(
        "--uniform-weights",
        dest="uniform_weights",
        action="store_const",
        const=True,
        help="skip inverse-frequency class weighting",
    )
    p.add_argument(
        "--no-decay-biases",
        dest="decay_biases",
        action="store_const",
        const=False,
        help="exclude biases from weight decay",
    )
    p.add_argument(
        "--per-dataset-std",
        dest="per_image_std",
        action="store_const",
        const=False,
        help="standardize with one dataset-wide std instead of per-image",
    )
    p.add_argument("--model-name", dest="model_name")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="clean accuracy/information report")
    add_common(p)
    p.add_argument("--subset-size", dest="subset_size", type=int, help="0 = whole set")
    p.add_argument(
        "--per-dataset-std", dest="per_image_std", action="store_const", const=False
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curve", help="sweep a fault and emit CSV + SVG curves")
    add_common(p)
    p.add_argument("--attack", help="awgn | bim-l2 | bim-linf | spatial")
    p.add_argument("--objective", help="miscls | one-tgt | all-tgt (bim only)")
    p.add_argument("--snr-grid", dest="snr_grid", help="comma-separated dB values, decreasing")
    p.add_argument(
        "--spatial-budgets",
        dest="spatial_budgets",
        help="comma-separated rot_deg:trans_px pairs, non-decreasing",
    )
    p.add_argument("--rot-step", dest="rot_step", type=float)
    p.add_argument("--steps", type=int, help="attack iterations")
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--stop-mean-margin", dest="stop_mean_margin", type=float)
    p.add_argument("--subset-size", dest="subset_size", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument(
        "--per-dataset-std", dest="per_image_std", action="store_const", const=False
    )
    p.add_argument(
        "--audit-counts",
        dest="audit_counts",
        action="store_const",
        const=True,
        help="also write the per-point joint counts as <stem>.counts.json",
    )
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("fool", help="synthesize fooling images from noise")
    add_common(p, data_flag=False)
    p.add_argument("--sigma", type=float, help="initial noise std (0.1 ~ 20 dB, 0.01 ~ 40 dB)")
    p.add_argument("--stop-margin", dest="stop_margin", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--eval-model", dest="eval_model", help="report this model's margins too")
    p.set_defaults(func=cmd_fool)

    p = sub.add_parser("check-data", help="validate an .ftc container and print its summary")
    p.add_argument("--data", required=False)
    p.set_defaults(func=cmd_check_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
