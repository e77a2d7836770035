"""Batch command line: gen-data, make-model, calibrate, plan, compress, evaluate.

Exit codes: 0 success, 2 configuration/validation error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import artifacts, pipeline
from .allocation import plan_summary, score_table
from .config import RunConfig
from .errors import ConfigError, ContractError, FormatError, NumericalError
from .io import format_value, write_json, write_kv

log = logging.getLogger("physvd")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        kw = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
        kw["seed"] = args.seed
        cfg = RunConfig(**kw)
    return cfg


def _existing(path, flag: str) -> Path:
    if path is None:
        raise ConfigError(f"{flag}: required for this command")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag}: file not found: {p}")
    return p


def _check_model_data(cfg: RunConfig, model, data=None) -> None:
    if model.input_dim != cfg.dim or model.output_dim != cfg.dim:
        raise ConfigError(
            f"channels: model dims ({model.input_dim}, {model.output_dim}) do not match grid size {cfg.dim}"
        )
    if data is not None and data.grid != (cfg.channels, cfg.height, cfg.width):
        raise ConfigError(f"height: dataset grid {data.grid} does not match configuration")


def _check_stats(model, groups) -> None:
    for tag, layers in groups.items():
        if len(layers) != len(model.layers):
            raise ConfigError(f"stats: tag {tag} covers {len(layers)} layers, model has {len(model.layers)}")
        for i, (st, layer) in enumerate(zip(layers, model.layers)):
            if st.sigma_xx.shape != (layer.d_in, layer.d_in) or st.fisher_z.shape != (layer.d_out, layer.d_out):
                raise ConfigError(f"stats: layer {i} statistics do not match model shapes")


def cmd_gen_data(args, cfg: RunConfig) -> None:
    model = artifacts.load_model(_existing(args.model, "--model")) if args.model else None
    ds = pipeline.generate_dataset(cfg, args.split, model)
    artifacts.save_dataset(args.out, ds)
    print(f"wrote {len(ds)} samples ({args.split}) to {args.out}")


def cmd_make_model(args, cfg: RunConfig) -> None:
    data = artifacts.load_dataset(_existing(args.data, "--data")) if args.data else None
    if data is not None and data.grid != (cfg.channels, cfg.height, cfg.width):
        raise ConfigError("height: dataset grid does not match configuration")
    model = pipeline.create_model(cfg, data)
    artifacts.save_model(args.out, model)
    print(f"wrote model {cfg.widths} to {args.out}")


def cmd_calibrate(args, cfg: RunConfig) -> None:
    model = artifacts.load_model(_existing(args.model, "--model"))
    data = artifacts.load_dataset(_existing(args.data, "--data"))
    _check_model_data(cfg, model, data)
    if len(data) == 0:
        raise ConfigError("n_calib: calibration dataset is empty")
    groups, scale = pipeline.calibrate(cfg, model, data, args.deterministic)
    artifacts.save_stats(args.out, groups, scale)
    print(f"wrote statistics for tags {', '.join(groups)} (sobolev_scale = {format_value(scale)}) to {args.out}")


def cmd_plan(args, cfg: RunConfig) -> None:
    model = artifacts.load_model(_existing(args.model, "--model"))
    groups, _ = artifacts.load_stats(_existing(args.stats, "--stats"))
    _check_stats(model, groups)
    plan = pipeline.make_plan(cfg, model, groups, exact=args.exact)
    artifacts.save_plan(args.out, plan)
    if args.report:
        stats = pipeline.reduce_stats(groups, cfg.balance)
        layers = stats.layers if cfg.balance else stats
        write_json(args.report, plan_summary(plan, model, score_table(model, layers, cfg.fisher_mode)))
    print(f"ranks = {format_value(list(plan.ranks))}; spent {plan.spent} of budget {plan.budget}")


def cmd_compress(args, cfg: RunConfig) -> None:
    model = artifacts.load_model(_existing(args.model, "--model"))
    groups, scale = artifacts.load_stats(_existing(args.stats, "--stats"))
    data = artifacts.load_dataset(_existing(args.data, "--data"))
    plan = artifacts.load_plan(_existing(args.plan, "--plan"))
    _check_model_data(cfg, model, data)
    _check_stats(model, groups)
    if len(plan.ranks) != len(model.layers):
        raise ConfigError(f"plan: {len(plan.ranks)} ranks for {len(model.layers)} layers")
    for i, (k, layer) in enumerate(zip(plan.ranks, model.layers)):
        if not 0 <= k <= min(layer.d_out, layer.d_in):
            raise ConfigError(f"plan: rank {k} out of range for layer {i}")
    if cfg.balance and set(data.by_tag()) != set(groups):
        raise ConfigError("tags: dataset tags do not match statistics tags")
    compressed, report = pipeline.compress(cfg, model, groups, data, plan, scale)
    artifacts.save_model(args.out, compressed, plan)
    if args.report:
        write_json(args.report, report)
    print(f"wrote compressed model to {args.out}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    orig = artifacts.load_model(_existing(args.orig, "--orig"))
    comp = artifacts.load_model(_existing(args.compressed, "--compressed"))
    test = artifacts.load_dataset(_existing(args.data, "--data"))
    _check_model_data(cfg, orig, test)
    _check_model_data(cfg, comp)
    if len(test) == 0:
        raise ConfigError("n_test: test dataset is empty")
    metrics = pipeline.evaluate(cfg, orig, comp, test)
    if args.out:
        write_kv(args.out, metrics)
    for k, v in metrics.items():
        print(f"{k} = {format_value(v)}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "make-model": cmd_make_model,
    "calibrate": cmd_calibrate,
    "plan": cmd_plan,
    "compress": cmd_compress,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output path")
    common.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="fixed reduction order for statistics (default on)",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="physvd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a calibration or test dataset")
    p.add_argument("--split", choices=("calib", "test"), default="calib")
    p.add_argument("--model", help="label targets with this model plus noise")

    p = sub.add_parser("make-model", parents=[common], help="create a random or trained model")
    p.add_argument("--data", help="training data for model_init = trained")

    p = sub.add_parser("calibrate", parents=[common], help="accumulate layer statistics")
    p.add_argument("--model")
    p.add_argument("--data")

    p = sub.add_parser("plan", parents=[common], help="allocate per-layer ranks")
    p.add_argument("--model")
    p.add_argument("--stats")
    p.add_argument("--exact", action="store_true", help="keep every layer at full rank")
    p.add_argument("--report", help="write a per-layer plan summary (JSON)")

    p = sub.add_parser("compress", parents=[common], help="compress a model with a rank plan")
    p.add_argument("--model")
    p.add_argument("--stats")
    p.add_argument("--data")
    p.add_argument("--plan")
    p.add_argument("--report", help="write the per-layer run report (JSON)")

    p = sub.add_parser("evaluate", parents=[common], help="compare original and compressed models")
    p.add_argument("--orig")
    p.add_argument("--compressed")
    p.add_argument("--data", help="held-out test dataset")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command != "evaluate" and not args.out:
            raise ConfigError("--out: required for this command")
        COMMANDS[args.command](args, cfg)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
