"""Command line driver: ``equivcnp {gen-data,train,eval,complete,check-equivariance,plot}``.

Exit codes: 0 success, 1 failed equivariance check, 2 bad input (config,
files, arguments, architecture mismatch), 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .autodiff import no_grad
from .checks import run_suite
from .data import (digit_dataset, render_digit, sample_image_task, sample_task_1d,
                   transform_image, write_pgm, write_task)
from .errors import EquivCNPError, NumericError
from .model import (EquivCNP, ImageEquivCNP, image_log_likelihood, load_model, predict,
                    save_model)
from .plotting import plot_prediction_file, tile_directory, write_prediction
from .train import (MetricsRecord, eval_tasks_1d, evaluate_image, evaluate_oracle,
                    evaluate_regression, image_test_set, matched_extrapolation_tasks,
                    task_rngs, train_image, train_regression)

CHECKPOINT_NAME = "checkpoint.eqcnp"
METRICS_NAME = "metrics.csv"


class UsageError(Exception):
    """Bad arguments or inputs; exit code 2."""


def _load_config(args, required=True):
    if args.config is None:
        if required:
            raise UsageError("--config is required")
        return None
    if not os.path.exists(args.config):
        raise UsageError(f"config file not found: {args.config}")
    cfg = cfgmod.load(args.config)
    if getattr(args, "group", None):
        cfg = cfgmod.with_group(cfg, args.group)
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
    return cfg


def _out_dir(args, default="."):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


# -- gen-data ---------------------------------------------------------------------
def cmd_gen_data(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    seed = cfg["train"]["seed"]
    n = args.n_tasks or cfg["eval"]["n_tasks"]
    if cfg["model"]["architecture"] == "regress1d":
        task_cfg = cfgmod.task_config(cfg)
        if cfg["eval"]["extrapolation"]:
            task_cfg = task_cfg.extrapolation(cfg["eval"]["extrapolation_range"])
        tasks, _ = eval_tasks_1d(task_cfg, n, seed)
        for i, task in enumerate(tasks):
            write_task(os.path.join(out, f"task_{i:05d}.csv"), task)
        print(f"wrote {len(tasks)} tasks to {out}")
        return 0
    data = cfg["data"]
    os.makedirs(os.path.join(out, "train"), exist_ok=True)
    os.makedirs(os.path.join(out, "test"), exist_ok=True)
    for img in digit_dataset(data["labels"]):
        write_pgm(os.path.join(out, "train", f"digit_{img.label}.pgm"), img.pixels)
    images, masks = image_test_set(n, seed, data["labels"], cfg["eval"]["transform"],
                                   tuple(data["fraction_range"]))
    for i, (img, mask) in enumerate(zip(images, masks)):
        write_pgm(os.path.join(out, "test", f"image_{i:05d}.pgm"), img[0])
        write_pgm(os.path.join(out, "test", f"mask_{i:05d}.pgm"), mask)
    print(f"wrote {len(data['labels'])} training digits and {n} test images to {out}")
    return 0


# -- train ------------------------------------------------------------------------
def build_from_config(cfg):
    mcfg = cfgmod.model_config(cfg)
    if cfg["model"]["architecture"] == "regress1d":
        return EquivCNP(mcfg)
    return ImageEquivCNP(mcfg)


def cmd_train(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(cfgmod.dumps(cfg))
    model = build_from_config(cfg)
    tr = cfg["train"]
    ckpt = os.path.join(out, CHECKPOINT_NAME)
    metrics = os.path.join(out, METRICS_NAME)
    with open(metrics, "w") as fh:
        fh.write(MetricsRecord.CSV_HEADER + "\n")

    def on_epoch(rec):
        save_model(ckpt, model, {"experiment": cfg, "epoch": rec.epoch})
        with open(metrics, "a") as fh:
            fh.write(rec.csv_row() + "\n")
        print(f"epoch {rec.epoch}: mean_ll {rec.mean_ll:.4f} +- {rec.std_ll:.4f} "
              f"({rec.wall_seconds:.1f}s)", flush=True)

    if cfg["model"]["architecture"] == "regress1d":
        train_regression(model, cfgmod.task_config(cfg), tr["epochs"], tr["batches_per_epoch"],
                         tr["batch_size"], tr["lr"], tr["seed"], on_epoch=on_epoch)
    else:
        data = cfg["data"]
        train_image(model, tr["epochs"], tr["batch_size"], tr["lr"], tr["seed"],
                    labels=data["labels"], batches_per_epoch=tr["batches_per_epoch"] or None,
                    fraction_range=tuple(data["fraction_range"]), on_epoch=on_epoch)
    if tr["epochs"] == 0:
        save_model(ckpt, model, {"experiment": cfg, "epoch": 0})
    print(f"checkpoint: {ckpt}")
    return 0


# -- eval -------------------------------------------------------------------------
def _load_checkpoint(path):
    if not path or not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_model(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from None


def _check_architecture(cfg, header):
    """Every model field except the init seed must agree."""
    if header["architecture"] != cfg["model"]["architecture"]:
        raise UsageError(f"checkpoint is {header['architecture']}, config is "
                         f"{cfg['model']['architecture']}")
    want = cfgmod.model_config(cfg).to_dict()
    have = header["model"]
    diff = sorted(k for k in set(want) | set(have) if k != "seed" and want.get(k) != have.get(k))
    if diff:
        raise UsageError(f"checkpoint architecture does not match config in {diff}")


def _summary(name, lls):
    return {"name": name, "mean_ll": float(np.mean(lls)), "std_ll": float(np.std(lls)),
            "n_tasks": int(len(lls))}


def cmd_eval(args):
    model, header = _load_checkpoint(args.checkpoint)
    cfg = _load_config(args, required=False)
    if cfg is None:
        cfg = header.get("experiment")
        if cfg is None:
            raise UsageError("--config is required for checkpoints without an embedded config")
        if args.group:
            cfg = cfgmod.with_group(cfg, args.group)
    _check_architecture(cfg, header)
    n = args.n_tasks or cfg["eval"]["n_tasks"]
    seed = args.eval_seed
    results = []
    if header["architecture"] == "regress1d":
        task_cfg = cfgmod.task_config(cfg)
        tasks, _ = eval_tasks_1d(task_cfg, n, seed)
        results.append(_summary("model", evaluate_regression(model, tasks, seed)))
        if args.baseline == "oracle":
            results.append(_summary("oracle", evaluate_oracle(task_cfg.kernel, tasks)))
        if cfg["eval"]["extrapolation"]:
            inside, outside = matched_extrapolation_tasks(task_cfg, n, seed,
                                                          cfg["eval"]["extrapolation_range"])
            results.append(_summary("model-in-range", evaluate_regression(model, inside, seed)))
            results.append(_summary("model-extrapolation",
                                    evaluate_regression(model, outside, seed)))
            if args.baseline == "oracle":
                results.append(_summary("oracle-extrapolation",
                                        evaluate_oracle(task_cfg.kernel, outside)))
        if args.out:
            _dump_predictions(model, cfg, args.out, seed)
    else:
        if args.baseline == "oracle":
            raise UsageError("the oracle baseline exists only for GP regression tasks")
        data = cfg["data"]
        images, masks = image_test_set(n, seed, data["labels"], cfg["eval"]["transform"],
                                       tuple(data["fraction_range"]))
        results.append(_summary("model", evaluate_image(model, images, masks, seed=seed)))
    for r in results:
        print(f"{r['name']}: mean_ll {r['mean_ll']:.4f} +- {r['std_ll']:.4f} "
              f"over {r['n_tasks']} tasks")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.json"), "w") as fh:
            json.dump({"seed": seed, "results": results}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _dump_predictions(model, cfg, out, seed, n_dump=4):
    """Prediction CSVs on a dense target grid, ready for ``plot``."""
    os.makedirs(out, exist_ok=True)
    task_cfg = cfgmod.task_config(cfg)
    lo, hi = task_cfg.x_range
    modes = [("in", task_cfg)]
    if cfg["eval"]["extrapolation"]:
        modes.append(("ext", task_cfg.extrapolation(cfg["eval"]["extrapolation_range"])))
    for tag, tc in modes:
        for i, rng in enumerate(task_rngs(seed, 50, n_dump)):
            a, b = tc.x_range
            n_c = int(rng.integers(tc.n_context_range[0], tc.n_context_range[1] + 1))
            xc = rng.uniform(a, b, size=n_c)
            xt = np.linspace(a, b, 200)
            task = sample_task_1d(tc, rng, x_context=xc, x_target=xt)
            with no_grad():
                pred = predict(model, task, rng=rng)
            write_prediction(os.path.join(out, f"pred_{tag}_{i:02d}.csv"), task.x_context,
                             task.y_context, task.x_target, task.y_target, pred.mu.data,
                             pred.sigma.data, train_range=(lo, hi))


# -- complete ---------------------------------------------------------------------
def cmd_complete(args):
    if not 0.0 < args.fraction <= 1.0:
        raise UsageError(f"--fraction must lie in (0, 1], got {args.fraction}")
    model, header = _load_checkpoint(args.checkpoint)
    if header["architecture"] != "image2d":
        raise UsageError("complete needs an image2d checkpoint")
    if args.digit is not None and not 0 <= args.digit <= 9:
        raise UsageError("--digit must be 0-9")
    rng = np.random.default_rng(args.eval_seed)
    label = int(rng.integers(10)) if args.digit is None else args.digit
    img = render_digit(label)
    scale = args.scale if args.scale is not None else rng.uniform(0.15, 0.5)
    if not scale > 0:
        raise UsageError("--scale must be positive")
    angle = np.deg2rad(args.angle) if args.angle is not None else np.deg2rad(rng.uniform(-90, 90))
    img = transform_image(img, scale, angle)
    mask, _ = sample_image_task(img, rng, fraction=args.fraction)
    with no_grad():
        pred = model(img.pixels[None, None], mask[None], rng=rng)
    ll = float(image_log_likelihood(pred, img.pixels[None, None])[0])
    size = img.pixels.shape[0]
    mean = np.clip(pred.mu.data[0, :, 0].reshape(size, size), 0.0, 1.0)
    out = _out_dir(args)
    context = np.where(mask > 0, img.pixels, 0.5)
    write_pgm(os.path.join(out, "context.pgm"), context)
    write_pgm(os.path.join(out, "truth.pgm"), img.pixels)
    write_pgm(os.path.join(out, "mean.pgm"), mean)
    print(f"digit {label} scale {scale:.3f} angle {np.rad2deg(angle):.1f} deg "
          f"fraction {args.fraction}: log-likelihood {ll:.4f}")
    return 0


# -- check-equivariance -------------------------------------------------------------
def cmd_check_equivariance(args):
    cfg = _load_config(args, required=False)
    if args.group:
        tags = [args.group]
    elif cfg is not None and args.config_group_only:
        tags = [cfg["model"]["group"]]
    else:
        tags = None
    rows = run_suite(tags, seed=args.seed or 0)
    failed = [r for r in rows if not r[4]]
    for name, group, err, tol, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name:<12} {group:<6} max_err {err:.3e} (tol {tol:.0e})")
    if failed:
        for name, group, err, tol, _ in failed:
            print(f"equivariance failure: {name} on {group}: {err:.3e} >= {tol:.0e}",
                  file=sys.stderr)
        return 1
    return 0


# -- plot -------------------------------------------------------------------------
def cmd_plot(args):
    src = args.input
    if not os.path.exists(src):
        raise UsageError(f"input not found: {src}")
    if os.path.isdir(src):
        dst = args.out or os.path.join(src, "tiled.pgm")
        try:
            names = tile_directory(src, dst)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from None
        print(f"tiled {len(names)} images into {dst}")
        return 0
    dst = args.out or os.path.splitext(src)[0] + ".svg"
    try:
        plot_prediction_file(src, dst)
    except (ValueError, IndexError) as exc:
        raise UsageError(f"cannot read {src}: {exc}") from None
    print(f"wrote {dst}")
    return 0


# -- entry point ------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="equivcnp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, seed=True, out=True):
        if config:
            sp.add_argument("--config", metavar="PATH")
        if seed:
            sp.add_argument("--seed", type=int, default=None, metavar="N")
        if out:
            sp.add_argument("--out", metavar="DIR")

    groups = [t.lower() for t in ("T1", "T2", "SO2", "RxSO2", "SE2")]
    sp = sub.add_parser("gen-data", help="write seeded task files or digit images")
    common(sp)
    sp.add_argument("--n-tasks", type=int, metavar="N")
    sp.add_argument("--group", type=str.lower, choices=groups)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model and write checkpoint plus metrics")
    common(sp)
    sp.add_argument("--group", type=str.lower, choices=groups)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="mean +- std log-likelihood over seeded tasks")
    common(sp)
    sp.add_argument("--checkpoint", metavar="PATH", required=True)
    sp.add_argument("--n-tasks", type=int, metavar="N")
    sp.add_argument("--baseline", choices=["oracle"])
    sp.add_argument("--group", type=str.lower, choices=groups)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("complete", help="complete one transformed digit image")
    common(sp, config=False)
    sp.add_argument("--checkpoint", metavar="PATH", required=True)
    sp.add_argument("--fraction", type=float, required=True, metavar="F")
    sp.add_argument("--digit", type=int)
    sp.add_argument("--scale", type=float)
    sp.add_argument("--angle", type=float, help="degrees, counterclockwise")
    sp.set_defaults(func=cmd_complete)

    sp = sub.add_parser("check-equivariance", help="run the symmetry property suite")
    common(sp, out=False)
    sp.add_argument("--group", type=str.lower, choices=groups)
    sp.add_argument("--config-group-only", action="store_true",
                    help="check only the group named in --config")
    sp.set_defaults(func=cmd_check_equivariance)

    sp = sub.add_parser("plot", help="SVG from a prediction dump, tiled PGM from a directory")
    sp.add_argument("input", metavar="PATH")
    sp.add_argument("--out", metavar="PATH")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "n_tasks", None) is not None and args.n_tasks < 1:
        print("error: --n-tasks must be >= 1", file=sys.stderr)
        return 2
    args.eval_seed = args.seed if getattr(args, "seed", None) is not None else 0
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        path = getattr(args, "config", None)
        print(f"config error: {path}: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except EquivCNPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
