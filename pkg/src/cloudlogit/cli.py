"""Command-line front end.

    cloudlogit generate  --config run.ini --out data/
    cloudlogit train     --config run.ini --out runs/gcl-e --loss gcl-e
    cloudlogit eval      --checkpoint runs/gcl-e/checkpoint.ckpt
    cloudlogit report    runs/ce runs/gcl-e runs/gcl-a --out reports/
    cloudlogit gradcheck

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure,
5 I/O error. Failures print a single ``error code=.. kind=.. message=..``
line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint
from .config import RunConfig
from .datagen import exponential_profile, generate_synthetic, load_dataset, save_dataset
from .errors import CloudLogitError, ConfigurationError
from .gradcheck import DEFAULT_FAMILIES, format_table, run_suite
from .numerics import Rng
from .pipeline import (
    STREAM_DATA,
    TrainConfig,
    Trainer,
    atomic_write_text,
    build_model,
    evaluate,
    export_embeddings,
    write_loss_trace,
    write_metrics,
)
from .report import write_report

log = logging.getLogger("cloudlogit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for key in ("loss", "sampler", "schedule"):
        if getattr(args, key, None):
            overrides[key] = getattr(args, key)
    if overrides:
        cfg.train = TrainConfig(**{**cfg.train.to_dict(), **overrides})
    return cfg


def prepare_data(cfg: RunConfig):
    d = cfg.data
    if d.source == "synthetic":
        profile = exponential_profile(d.n_max, d.ratio, d.classes)
        rng = Rng(cfg.train.seed).spawn(STREAM_DATA)
        return generate_synthetic(profile, d.input_dim, d.class_spread, rng, d.test_per_class)
    if d.source == "csv":
        if not d.train_path or not d.test_path:
            raise ConfigurationError("csv source needs train_path and test_path")
        train = load_dataset(d.train_path)
        test = load_dataset(d.test_path, num_classes=train.num_classes, split="test")
        return train, test
    raise ConfigurationError(f"unknown data source {d.source!r}")


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    if cfg.data.source != "synthetic":
        raise ConfigurationError("generate only supports the synthetic source")
    out = _out_dir(args, "data")
    train, test = prepare_data(cfg)
    save_dataset(train, out / "train.csv")
    save_dataset(test, out / "test.csv")
    atomic_write_text(out / "profile.txt", train.profile.to_text() + f"seed={cfg.train.seed}\n")
    atomic_write_text(out / "config.ini", cfg.to_ini())
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, "run")
    atomic_write_text(out / "config.ini", cfg.to_ini())
    train, test = prepare_data(cfg)
    tc = cfg.train
    model = build_model(tc, train.input_dim, cfg.model.hidden, cfg.model.feature_dim, train.num_classes)
    trainer = Trainer(tc, train, model)
    meta = {"run_config": cfg.to_ini()}
    trainer.run(stop=tc.stage1_iters)
    if tc.stage2_iters:
        trainer.save(out / "stage1.ckpt", meta)
        trainer.run()
    trainer.save(out / "checkpoint.ckpt", meta)
    write_loss_trace(trainer.loss_trace, out / "loss_trace.csv")
    report = evaluate(trainer.model, test, trainer.spec, train.profile,
                      (cfg.eval.head_min, cfg.eval.mid_min), tc.to_dict(), tc.seed)
    write_metrics(report, out)
    if args.export_embeddings:
        export_embeddings(trainer.model, test, out / "embeddings_test.csv")
    print(f"overall={report.overall:.4f} " + " ".join(
        f"{g}={a:.4f}" for g, a in report.group_accuracy.items()))
    return EXIT_OK


def cmd_eval(args) -> int:
    path = Path(args.checkpoint)
    model, state = load_checkpoint(path)
    if "run_config" not in state.meta:
        raise ConfigurationError(f"{path}: checkpoint carries no run config")
    cfg = RunConfig.from_ini(state.meta["run_config"])
    if args.config:
        cfg.data = RunConfig.load(args.config).data
    train, test = prepare_data(cfg)
    out = _out_dir(args, str(path.parent / "eval"))
    tc = TrainConfig(**state.config)
    report = evaluate(model, test, tc.loss_spec(train.profile), train.profile,
                      (cfg.eval.head_min, cfg.eval.mid_min), tc.to_dict(), state.seed)
    write_metrics(report, out)
    if args.export_embeddings:
        export_embeddings(model, test, out / "embeddings_test.csv")
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.runs:
        raise ConfigurationError("report needs at least one run directory")
    out = Path(args.out or "report")
    write_report(args.runs, out)
    print((out / "comparison.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    families = args.families.split(",") if args.families else DEFAULT_FAMILIES
    results = run_suite(families, instances=args.instances, seed=args.seed or 0)
    table = format_table(results)
    if args.out:
        out = _out_dir(args, args.out)
        atomic_write_text(out / "gradcheck.tsv", table)
    print(table, end="")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run config")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--loss", help='ce | cosface:<m> | arcface-style:<m> | ldam:<m> | gcl-e | gcl-a')
    common.add_argument("--sampler", help="ibs | srs | cbs | ens:<beta> (stage 2)")
    common.add_argument("--schedule", help="log | pow:1/3 | pow:1/4 | cos")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cloudlogit", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write synthetic train/test CSVs")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="two-stage training run")
    p.add_argument("--export-embeddings", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--export-embeddings", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="compare run directories")
    p.add_argument("runs", nargs="*")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--families", help="comma-separated loss strings")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(f"error code={code} kind={kind} message={json.dumps(message)}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CloudLogitError as exc:
        return _fail(exc.exit_code, exc.kind, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
