"""Command line: ``cooplane {train,eval,sweep,plot}``.

Failures exit with status 2 after printing one JSON line to stderr, e.g.
``{"error": "ConfigError", "field": "road.lane_count", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ALPHA_SET, ConfigError, ScenarioConfig, _parse_value, load_config
from .experiment import cmd_eval, cmd_sweep, cmd_train, sweep_to_json, write_sweep
from .plotting import cmd_plot

DESK_LANES = (2, 3)
DESK_T_UP = (2.0, 3.0, 4.0)
FULL_LANES = (2, 3, 4, 5, 6)


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cooplane", description=__doc__.splitlines()[0])
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out")
    common.add_argument("--alpha", type=float, help="lane-change penalty (reward.alpha)")
    common.add_argument("--steps", type=int, help="simulation steps (total_steps)")
    common.add_argument("--parallel", type=int, default=1)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set spawn.t_up=3")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("train", parents=[common], help="train a policy without an incident")

    p = sub.add_parser("eval", parents=[common], help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep", parents=[common], help="alpha sweep with plane fit")
    p.add_argument("--lanes", type=_ints)
    p.add_argument("--t-up", type=_floats)
    p.add_argument("--alphas", type=_floats)
    p.add_argument("--replicates", type=int)
    p.add_argument("--train-steps", type=int)
    p.add_argument("--eval-steps", type=int)
    p.add_argument("--full-scale", action="store_true",
                   help="2-6 lanes, 10 replicates, 90000 training steps")

    p = sub.add_parser("plot", parents=[common], help="render SVG figures from CSV outputs")
    p.add_argument("--kind", required=True, choices=("time_space", "flow_density", "alpha_surface"))
    p.add_argument("inputs", nargs="+")
    return parser


def resolve_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _parse_value(value.strip())
    if args.alpha is not None:
        overrides["reward.alpha"] = args.alpha
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides).validate()


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = resolve_config(args)
    if args.command == "train":
        paths = cmd_train(cfg, args.out)
        print(json.dumps(paths, sort_keys=True))
    elif args.command == "eval":
        out = cmd_eval(args.checkpoint, cfg, args.out)
        res = out.pop("result")
        print(json.dumps({**out, "mean_speed": res.mean_speed,
                          "throughput_downstream": res.throughput,
                          "lane_changes_per_vehicle_km": res.lane_changes_per_vehicle_km},
                         sort_keys=True))
    elif args.command == "sweep":
        full = args.full_scale
        lanes = args.lanes or (FULL_LANES if full else DESK_LANES)
        t_up = args.t_up or DESK_T_UP
        alphas = args.alphas or ALPHA_SET
        reps = args.replicates or (10 if full else 3)
        train_steps = args.train_steps or (90000 if full else cfg.total_steps)
        eval_steps = args.eval_steps or (90000 if full else 20000)
        result = cmd_sweep(cfg, lanes, t_up, alphas, reps, train_steps, eval_steps,
                           parallel=args.parallel)
        paths = write_sweep(result, args.out, cfg)
        print(json.dumps({**paths, **sweep_to_json(result)}, sort_keys=True))
    elif args.command == "plot":
        print(json.dumps({"svg": cmd_plot(args.inputs, args.kind, args.out)}))
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except UsageError as exc:
        err = {"error": "UsageError", "message": str(exc)}
    except ConfigError as exc:
        err = {"error": "ConfigError", "field": exc.field, "message": str(exc)}
    except (OSError, ValueError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc).replace("\n", " ")}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
