"""Command-line surface: dataset construction, training, inference,
evaluation, ablation sweeps, and diagnostics.

Exit codes are disjoint by error class: 0 ok, 2 configuration, 3 data,
4 numeric, 5 capability (unsupported factor).  Reports are TSV with a
header row; when a report goes to a file, a figure lands next to it.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

import numpy as np

from . import report
from .data import (
    Image,
    LoadedDataset,
    bicubic_resize_image,
    build_dataset,
    image_to_tensor,
    load_image,
    save_image,
    tensor_to_image,
)
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    UnsupportedFactorError,
)
from .metrics import evaluate
from .model import (
    ModelConfig,
    build,
    default_hfdb_inner,
    forward,
    load_checkpoint,
    save_checkpoint,
    self_ensemble_forward,
    super_resolve_fractional,
)
from .optim import TrainConfig, train
from .oracles import ORACLE_HEADER, run_grad_check_suite, run_oracle_suite

__all__ = [
    "main",
    "ABLATION_TABLE",
    "ablation_config",
    "load_run_config",
    "eval_rows",
    "EVAL_HEADER",
    "ABLATION_HEADER",
]

EVAL_HEADER = (
    "name", "factor", "psnr", "ssim", "rmse",
    "bicubic_psnr", "bicubic_ssim", "bicubic_rmse",
)

ABLATION_HEADER = (
    "case", "seed", "rl", "fefm", "top", "bottom", "hfdb",
    "n_blocks", "channels", "psnr",
)

# Case index -> switch vector: residual learning, feature exchange, which
# dense paths exist, hierarchical distillation, block count, channel width.
ABLATION_TABLE = {
    1: dict(residual=False, fefm=False, paths="top", hfdb=False, n_blocks=3, channels=128),
    2: dict(residual=False, fefm=False, paths="bottom", hfdb=False, n_blocks=3, channels=128),
    3: dict(residual=False, fefm=False, paths="both", hfdb=False, n_blocks=3, channels=128),
    4: dict(residual=False, fefm=True, paths="both", hfdb=False, n_blocks=3, channels=128),
    5: dict(residual=True, fefm=True, paths="both", hfdb=False, n_blocks=3, channels=128),
    6: dict(residual=True, fefm=True, paths="both", hfdb=True, n_blocks=3, channels=128),
    7: dict(residual=True, fefm=True, paths="both", hfdb=True, n_blocks=6, channels=128),
    8: dict(residual=True, fefm=True, paths="both", hfdb=True, n_blocks=6, channels=256),
}

# desk-scale keeps the between-case ratios (block counts 3:6, widths 128:256)
_DESK_BLOCKS = {3: 2, 6: 4}
_DESK_CHANNELS = {128: 16, 256: 32}


def ablation_config(case: int, desk_scale: bool = True, factors=(2,)) -> ModelConfig:
    if case not in ABLATION_TABLE:
        raise ConfigError(
            f"ablation case must be one of {sorted(ABLATION_TABLE)}, got {case}"
        )
    row = ABLATION_TABLE[case]
    n_blocks = _DESK_BLOCKS[row["n_blocks"]] if desk_scale else row["n_blocks"]
    channels = _DESK_CHANNELS[row["channels"]] if desk_scale else row["channels"]
    return ModelConfig(
        n_blocks=n_blocks,
        channels=channels,
        hfdb_inner=default_hfdb_inner(channels),
        cam_reduction=16,
        factors=tuple(factors),
        block_kind="mdcb",
        hierarchy="HFDB" if row["hfdb"] else "A",
        paths=row["paths"],
        fefm=row["fefm"],
        residual=row["residual"],
    )


def load_run_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Parse a {"model": {...}, "train": {...}} JSON file, rejecting typos."""
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(payload) - {"model", "train"})
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    for section in ("model", "train"):
        if section not in payload:
            raise ConfigError(f"missing config section: {section}")
    return ModelConfig.from_dict(payload["model"]), TrainConfig.from_dict(payload["train"])


def _open_dataset(data_dir) -> LoadedDataset:
    path = Path(data_dir)
    manifest = path if path.suffix == ".json" else path / "manifest.json"
    if not manifest.exists():
        raise DataError(f"no manifest found at {manifest}")
    return LoadedDataset.open(manifest)


def eval_rows(store, dataset: LoadedDataset, factor: int,
              self_ensemble: bool = False, split: str = "val") -> list[tuple]:
    """Per-image metric rows plus a trailing mean row, with the bicubic
    baseline evaluated on the same pairs."""
    records = dataset.split(split)
    if not records:
        raise DataError(f"dataset has no records in split {split!r}")
    missing = [r.name for r in records if factor not in r.lr]
    if missing:
        raise DataError(f"records lack LR images at factor {factor}: {missing}")
    run = self_ensemble_forward if self_ensemble else forward
    rows = []
    for rec in records:
        lr = Image(rec.lr[factor])
        hr = Image(np.ascontiguousarray(rec.hr_for(factor)))
        out = tensor_to_image(run(store, image_to_tensor(lr), factor))
        m = evaluate(out, hr, factor)
        baseline = bicubic_resize_image(lr, antialias=False,
                                        out_shape=(hr.height, hr.width))
        bm = evaluate(baseline, hr, factor)
        rows.append((rec.name, factor, m.psnr_db, m.ssim, m.rmse,
                     bm.psnr_db, bm.ssim, bm.rmse))
    count = len(rows)
    means = tuple(sum(r[i] for r in rows) / count for i in range(2, 8))
    rows.append(("mean", factor) + means)
    return rows


def _emit_table(header, rows, out_path) -> None:
    if out_path is None:
        sys.stdout.write(report.tsv_text(header, rows))
    else:
        report.write_tsv(out_path, header, rows)
        print(f"wrote {out_path}")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_make_dataset(args) -> int:
    manifest = build_dataset(args.hr_dir, args.out, args.factors, val_count=args.val)
    print(f"wrote {manifest}")
    return 0


def _cmd_train(args) -> int:
    model_cfg, train_cfg = load_run_config(args.config)
    if args.seed is not None:
        train_cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "seed": args.seed})
    dataset = _open_dataset(args.data)
    store = build(model_cfg, seed=train_cfg.seed)
    out_path = Path(args.out)
    log_path = Path(args.log) if args.log else out_path.with_suffix(".log.tsv")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    records = train(store, dataset, train_cfg, log_path=log_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(store, out_path)
    for r in records:
        print(f"epoch {r.epoch}: loss {r.mean_loss:.6f} lr {r.lr:g} ({r.seconds:.1f}s)")
    figure = report.render_loss_curve(records, report.figure_path(log_path))
    print(f"wrote {out_path}")
    print(f"wrote {log_path}")
    print(f"wrote {figure}")
    return 0


def _cmd_sr(args) -> int:
    store, _config = load_checkpoint(args.ckpt)
    image = load_image(args.input)
    if args.fractional is not None:
        if args.self_ensemble:
            raise ConfigError("--self-ensemble applies to integer factors only")
        out = super_resolve_fractional(store, image, args.fractional)
    else:
        run = self_ensemble_forward if args.self_ensemble else forward
        out = tensor_to_image(run(store, image_to_tensor(image), args.factor))
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    store, _config = load_checkpoint(args.ckpt)
    dataset = _open_dataset(args.data)
    rows = eval_rows(store, dataset, args.factor,
                     self_ensemble=args.self_ensemble, split=args.split)
    _emit_table(EVAL_HEADER, rows, args.out)
    if args.out is not None:
        body = rows[:-1]
        figure = report.render_eval_chart(
            [r[0] for r in body], [r[2] for r in body], [r[5] for r in body],
            args.factor, report.figure_path(args.out),
        )
        print(f"wrote {figure}")
    return 0


def _cmd_ablate(args) -> int:
    dataset = _open_dataset(args.data)
    factor = args.factor
    rows = []
    medians: dict[int, float] = {}
    for case in args.cases:
        cfg = ablation_config(case, desk_scale=True, factors=(factor,))
        scores = []
        for seed in args.seeds:
            store = build(cfg, seed=seed)
            train_cfg = TrainConfig(
                batch_size=args.batch_size, hr_patch=args.hr_patch,
                base_lr=args.lr, lr_halve_every=10_000,
                iters_per_epoch=args.budget, epochs=1,
                factors=(factor,), seed=seed,
            )
            train(store, dataset, train_cfg)
            val = eval_rows(store, dataset, factor, split="val")
            score = float(val[-1][2])  # mean-row PSNR
            scores.append(score)
            rows.append((case, seed, cfg.residual, cfg.fefm,
                         cfg.paths in ("both", "top"), cfg.paths in ("both", "bottom"),
                         cfg.hierarchy == "HFDB", cfg.n_blocks, cfg.channels, score))
        medians[case] = statistics.median(scores)
        rows.append((case, "median", cfg.residual, cfg.fefm,
                     cfg.paths in ("both", "top"), cfg.paths in ("both", "bottom"),
                     cfg.hierarchy == "HFDB", cfg.n_blocks, cfg.channels, medians[case]))
    _emit_table(ABLATION_HEADER, rows, args.out)
    if args.out is not None:
        figure = report.render_ablation_chart(medians, report.figure_path(args.out))
        print(f"wrote {figure}")
    return 0


def _cmd_diag(args) -> int:
    if args.what == "grad-check":
        results = run_grad_check_suite()
        report_rows = [(r.name, r.max_rel_error, r.tolerance, r.passed) for r in results]
        _emit_table(("op", "max_rel_error", "tolerance", "pass"), report_rows, args.out)
        failures = [r for r in results if not r.passed]
        if failures:
            print("gradient check FAILED for: "
                  + ", ".join(r.name for r in failures), file=sys.stderr)
            raise NumericError(
                f"gradient check failed for {failures[0].name} "
                f"(max rel error {failures[0].max_rel_error:.3e})"
            )
        return 0
    if args.what == "param-count":
        cfg = ModelConfig.from_dict(json.loads(Path(args.config).read_text())["model"]) \
            if args.config else ModelConfig()
        store = build(cfg, seed=0)
        print(f"total\t{store.param_count()}")
        for label, count in store.partition_counts().items():
            print(f"{label}\t{count}")
        return 0
    # oracle-suite
    reports = run_oracle_suite(args.selection)
    rows = [(r.case, r.production, r.oracle, r.deviation, r.tolerance, r.passed)
            for r in reports]
    _emit_table(ORACLE_HEADER, rows, args.out)
    bad = [r for r in reports if not r.passed]
    if bad:
        raise NumericError(f"oracle case failed: {bad[0].case} (deviation {bad[0].deviation:.3e})")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdcn",
        description="Multi-factor single-image super-resolution toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="degrade HR images into an HR/LR dataset")
    p.add_argument("--hr-dir", required=True, help="directory of HR images (png/ppm)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--factors", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--val", type=int, default=0, help="hold out the last N images as val split")
    p.set_defaults(func=_cmd_make_dataset)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help='JSON file: {"model": ..., "train": ...}')
    p.add_argument("--data", required=True, help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--log", default=None, help="TSV log path (default: <out>.log.tsv)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sr", help="super-resolve one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--factor", type=int)
    group.add_argument("--fractional", type=float,
                       help="fractional upscale: integer factor then bicubic adjust")
    p.add_argument("--self-ensemble", action="store_true",
                   help="average the 8 dihedral-transformed passes")
    p.set_defaults(func=_cmd_sr)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--self-ensemble", action="store_true")
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--out", default=None, help="TSV path (default: stdout)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and score ablation cases")
    p.add_argument("--cases", type=int, nargs="+", required=True,
                   help=f"case indices {sorted(ABLATION_TABLE)}")
    p.add_argument("--data", required=True)
    p.add_argument("--budget", type=int, default=500, help="training iterations per run")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--hr-patch", type=int, default=48)
    p.add_argument("--out", default=None, help="TSV path (default: stdout)")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("diag", help="diagnostics: gradient checks, parameter counts, oracles")
    p.add_argument("what", choices=("grad-check", "param-count", "oracle-suite"))
    p.add_argument("--config", default=None, help="JSON run config (param-count)")
    p.add_argument("--selection", default="all", help="oracle-suite module filter")
    p.add_argument("--out", default=None, help="TSV path (default: stdout)")
    p.set_defaults(func=_cmd_diag)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except UnsupportedFactorError as exc:
        print(f"capability error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    raise SystemExit(main())
