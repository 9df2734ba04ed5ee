"""Command-line entry point: ``agconv <subcommand> [options]``.

Human-readable progress goes to stderr; CSV goes to stdout. Exit codes: 0 on
success, 1 on usage or configuration errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

from .bench import bench_csv, run_bench
from .checkpoint import load_checkpoint
from .config import TrainConfig, load_config_file, make_config
from .exceptions import AGConvError, ConfigError
from .gradcheck import run_suite
from .layers import CONV_INPUT_MODES, agconv_param_formula, conv_input_width, graphconv_param_formula
from .models import model_param_count
from .pointcloud import write_dataset
from .training import _executor, build_net, evaluate, resolve_dataset, robustness_csv, robustness_sweep, train

log = logging.getLogger("agconv")

EVAL_HEADER = "split,loss,oa,macc,miou,mciou"
GRADCHECK_HEADER = "target,max_rel_error,tolerance,seconds,passed"
PARAMS_HEADER = "name,kind,formula,count"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="flat 'key = value' config file; flags override it")
    p.add_argument("--out", metavar="PATH", help="output directory")
    group = p.add_argument_group("config overrides (any TrainConfig field)")
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, dest=f"cfg_{f.name}", default=argparse.SUPPRESS, metavar=f.name.upper(),
                           help=f"default: {getattr(TrainConfig(), f.name)!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agconv", description="Adaptive graph convolution toolkit for point clouds.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset and manifest to --out")
    _add_common(p)

    p = sub.add_parser("train", help="train a network; writes model.agck, metrics.csv, config.txt to --out")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and both networks")
    _add_common(p)

    p = sub.add_parser("robustness", help="dropout and noise sweep of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")

    p = sub.add_parser("params", help="parameter-count table of a model or a single layer")
    _add_common(p)
    p.add_argument("--layer", choices=("agconv", "graphconv"), help="count one layer instead of a model")
    p.add_argument("--D", type=int, default=64, help="layer input dim")
    p.add_argument("--M", type=int, default=64, help="layer output dim")
    p.add_argument("--d", type=int, default=64, help="kernel hidden dim")
    p.add_argument("--c", type=int, default=None, help="convolution input width (default from --mode)")
    p.add_argument("--mode", choices=CONV_INPUT_MODES, default="spatial")
    p.add_argument("--include-bias", action="store_true")

    p = sub.add_parser("bench", help="time k-NN and AGConv forward over cloud sizes")
    _add_common(p)
    p.add_argument("--sizes", default="256,512,1024", help="comma-separated cloud sizes")
    p.add_argument("--repeats", type=int, default=3)
    return parser


def resolve_config(args) -> TrainConfig:
    values = load_config_file(args.config) if args.config else {}
    values.update({k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")})
    return make_config(values)


def _emit(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


def cmd_gen_data(args, cfg: TrainConfig) -> int:
    if not args.out:
        raise UsageError("gen-data needs --out")
    manifest = write_dataset(resolve_dataset(cfg.replace(data="")), args.out)
    log.info("wrote %s", manifest)
    lines = ["path,split,class_label"]
    for line in manifest.read_text().splitlines():
        lines.append(",".join(line.split()))
    _emit("\n".join(lines) + "\n")
    return 0


def cmd_train(args, cfg: TrainConfig) -> int:
    t0 = time.perf_counter()
    report, _ = train(cfg, args.out)
    log.info("trained %d epochs in %.1f s; test oa %.4f", cfg.epochs, time.perf_counter() - t0, report.oa)
    if args.out:
        log.info("checkpoint written to %s", Path(args.out) / "model.agck")
    _emit(report.to_csv())
    return 0


def _load(args, cfg: TrainConfig):
    net = load_checkpoint(args.checkpoint)
    task = net.config["kind"]
    clouds = resolve_dataset(cfg).split("test")
    if not clouds:
        raise ConfigError("test split is empty")
    return net, task, clouds


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def cmd_eval(args, cfg: TrainConfig) -> int:
    net, task, clouds = _load(args, cfg)
    with _executor(cfg.threads) as mapper:
        m = evaluate(net, clouds, task, mapper)
    log.info("test oa %.4f macc %.4f", m["oa"], m["macc"])
    row = ["test"] + [_cell(m[k]) for k in EVAL_HEADER.split(",")[1:]]
    _emit(EVAL_HEADER + "\n" + ",".join(row) + "\n")
    return 0


def cmd_gradcheck(args, cfg: TrainConfig) -> int:
    t0 = time.perf_counter()
    results = run_suite(cfg.seed)
    lines = [GRADCHECK_HEADER]
    for r in results:
        lines.append(f"{r.target},{r.max_rel_error!r},{r.tolerance!r},{r.seconds:.3f},{str(r.passed).lower()}")
        log.info("%-32s max rel error %.3e (tol %.0e) %s", r.target, r.max_rel_error, r.tolerance,
                 "ok" if r.passed else "FAIL")
    _emit("\n".join(lines) + "\n")
    worst = max(r.max_rel_error for r in results)
    log.info("max relative error %.3e over %d checks in %.1f s", worst, len(results), time.perf_counter() - t0)
    return 0 if all(r.passed for r in results) else 2


def cmd_robustness(args, cfg: TrainConfig) -> int:
    net, task, clouds = _load(args, cfg)
    rows = robustness_sweep(net, clouds, task, cfg.keep_fractions, cfg.noise_levels, cfg.seed, cfg.threads)
    for r in rows:
        log.info("keep %.2f sigma %.3f oa %.4f", r["keep_fraction"], r["sigma"], r["oa"])
    text = robustness_csv(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "robustness.csv").write_text(text)
    _emit(text)
    return 0


def cmd_params(args, cfg: TrainConfig) -> int:
    lines = [PARAMS_HEADER]
    if args.layer:
        D, M, d = args.D, args.M, args.d
        if min(D, M, d) < 1:
            raise UsageError("--D, --M and --d must be positive")
        if args.layer == "agconv":
            c = args.c if args.c is not None else conv_input_width(args.mode, D)
            count = agconv_param_formula(D, M, d, c) + ((d + c * M) if args.include_bias else 0)
            lines.append(f"agconv,agconv,2dD+dcM (D={D};M={M};d={d};c={c}),{count}")
        else:
            count = graphconv_param_formula(D, M) + (M if args.include_bias else 0)
            lines.append(f"graphconv,graphconv,2DM (D={D};M={M}),{count}")
        total = count
    else:
        total, rows = model_param_count(build_net(cfg), args.include_bias)
        for r in rows:
            lines.append(f"{r.name},{r.kind},{r.formula.replace(',', ';')},{r.count}")
        lines.append(f"total,,,{total}")
    log.info("total parameters: %d", total)
    _emit("\n".join(lines) + "\n")
    return 0


def cmd_bench(args, cfg: TrainConfig) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --sizes {args.sizes!r}") from None
    if not sizes or min(sizes) < 1 or args.repeats < 1:
        raise UsageError("--sizes and --repeats must be positive")
    with _executor(1):
        rows = run_bench(sizes, cfg.k, hidden=cfg.hidden, repeats=args.repeats, seed=cfg.seed)
    _emit(bench_csv(rows))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "robustness": cmd_robustness,
    "params": cmd_params,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    log.propagate = False
    try:
        return _dispatch(argv)
    finally:
        log.removeHandler(handler)


def _dispatch(argv) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            parser.print_help(sys.stderr)
            return 1
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except ConfigError as err:
        print(f"agconv: config error: {err}", file=sys.stderr)
        return 1
    except (AGConvError, OSError, ValueError) as err:
        print(f"agconv: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
