"""Command-line entry point: ``fedpm run | eval | inspect``."""
import argparse
import logging
import os
import sys

from . import codec
from .config import ExperimentConfig, load_config
from .errors import ConfigError, FedPMError
from .metrics import emit_metrics
from .sim import evaluate, load_data, run_experiment

log = logging.getLogger("fedpm")


def _config_from_args(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "seed": args.seed,
        "rounds": args.rounds,
        "baseline": args.baseline,
        "dp_epsilon": args.dp_epsilon,
        "dp_delta": args.dp_delta,
        "dp_clip": args.dp_clip,
    }
    if args.data_dir:
        overrides.update(dataset="mnist", data_dir=args.data_dir)
    if getattr(args, "synthetic", False):
        overrides["dataset"] = "synthetic"
    if getattr(args, "no_plots", False):
        overrides["plots"] = False
    try:
        return cfg.with_overrides(**overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def cmd_run(args):
    cfg = _config_from_args(args)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    progress = None
    if not args.quiet:
        def progress(m):
            print(f"round {m.round:4d}  acc {m.accuracy:.4f}  bpp {m.bpp:.5f}  p1 {m.ones_frequency:.4f}",
                  flush=True)
    result = run_experiment(cfg, progress=progress)
    paths = emit_metrics(result.metrics, out)
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as f:
        f.write(cfg.to_text())
    if result.artifact:
        with open(os.path.join(out, "model.fpm"), "wb") as f:
            f.write(result.artifact)
    if cfg.plots:
        from .report import render
        render(result, out)
    last = result.metrics[-1]
    line = f"final accuracy {last.accuracy:.4f}  uplink bpp {last.bpp:.5f}"
    if result.artifact:
        line += f"  model bpp {codec.model_bitrate(result.artifact):.5f}"
    print(line)
    print(f"wrote {paths['metrics.jsonl']}")
    return 0


def _test_set(args):
    cfg = _config_from_args(args)
    return load_data(cfg)[1]


def cmd_eval(args):
    with open(args.model, "rb") as f:
        blob = f.read()
    acc = evaluate(blob, _test_set(args))
    print(f"accuracy {acc:.4f}")
    return 0


def cmd_inspect(args):
    with open(args.model, "rb") as f:
        blob = f.read()
    arch, seed, coded = codec.read_model(blob)
    print(f"arch {'-'.join(str(s) for s in arch.sizes)}")
    print(f"d {arch.num_params}")
    print(f"seed {seed}")
    print(f"ones_frequency {coded.frequency:.6f}")
    print(f"entropy_bpp {codec.empirical_entropy(coded.frequency):.6f}")
    print(f"mask_bpp {codec.bitrate(coded):.6f}")
    print(f"model_bpp {codec.model_bitrate(blob):.6f}")
    return 0


def _add_data_args(p):
    p.add_argument("--config", help="key = value experiment file")
    p.add_argument("--data-dir", help="directory holding the MNIST IDX files")
    p.add_argument("--synthetic", action="store_true", help="use the synthetic blob set")
    p.add_argument("--seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="fedpm", description="Federated probabilistic mask training.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    _add_data_args(run)
    run.add_argument("--out-dir", default="runs/latest")
    run.add_argument("--rounds", type=int)
    run.add_argument("--baseline", choices=("fedpm", "signsgd"))
    run.add_argument("--dp-epsilon", type=float)
    run.add_argument("--dp-delta", type=float)
    run.add_argument("--dp-clip", type=float)
    run.add_argument("--no-plots", action="store_true")
    run.add_argument("-q", "--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="test accuracy of a stored model")
    ev.add_argument("--model", required=True)
    _add_data_args(ev)
    ev.set_defaults(func=cmd_eval, rounds=None, baseline=None, dp_epsilon=None, dp_delta=None, dp_clip=None)

    ins = sub.add_parser("inspect", help="describe a stored model")
    ins.add_argument("--model", required=True)
    ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fedpm: config error: {exc}", file=sys.stderr)
        return 2
    except (FedPMError, OSError) as exc:
        print(f"fedpm: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
