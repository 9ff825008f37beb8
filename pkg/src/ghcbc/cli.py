"""Command-line entry point: demonstration generation, training, evaluation,
trace replay, the ablation matrix, and metric plots.

Exit codes: 0 success, 1 usage/config error, 2 runtime/divergence error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import Config, ConfigError, config_from_dict, config_to_dict, load_config
from .dataset import generate_dataset, load_dataset
from .errors import DatasetError, GhcbcError, InfeasibleSpecError
from .plots import metrics_to_svgs
from .policy import GhcbcModel
from .runtime import read_trace, write_trace
from .simworld import (ExpertAgent, PlanarArm, TaskSpec, is_success, reset,
                       step_world)
from .trainer import (ABLATION_ROWS, ablation_config, evaluate_model, train_loop)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(sub):
    sub.add_argument("--config", help="INI config file")
    sub.add_argument("--profile", choices=["desk", "paper"], help="profile defaults")
    sub.add_argument("--seed", type=int, help="seed override (train.seed)")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted config override, repeatable")


def build_parser() -> _Parser:
    parser = _Parser(prog="ghcbc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="write seeded expert demonstrations")
    _add_common(p)
    p.add_argument("--n", type=int, help="number of episodes (default train.n_demos)")

    p = sub.add_parser("train", help="train a policy on a demo dataset")
    _add_common(p)
    p.add_argument("--demos", required=True, help="dataset directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint (or the expert) online")
    _add_common(p)
    p.add_argument("--run", help="training output dir holding config.json + checkpoints")
    p.add_argument("--checkpoint", help="explicit checkpoint path (default best.ckpt)")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--expert", action="store_true",
                   help="run the scripted expert as the policy baseline")

    p = sub.add_parser("replay", help="re-execute a rollout trace in the world")
    _add_common(p)
    p.add_argument("--trace", required=True)

    p = sub.add_parser("ablate", help="run the config-switch ablation matrix")
    _add_common(p)
    p.add_argument("--demos", required=True)
    p.add_argument("--rows", default="1,4,5,6,7",
                   help="comma-separated row ids from the ablation table")
    p.add_argument("--episodes", type=int, default=50, help="final eval episodes per row")

    p = sub.add_parser("plot", help="emit one SVG per metric from a metrics log")
    _add_common(p)
    p.add_argument("--log", required=True)
    return parser


def _config_from_args(args) -> Config:
    cfg = load_config(args.config, args.profile, args.set)
    if args.seed is not None:
        cfg.train.seed = args.seed
    return cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_demos(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args, "demos")
    n = args.n if args.n is not None else cfg.train.n_demos
    generate_dataset(cfg, out, n, cfg.train.seed)
    print(f"wrote {n} episodes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    demos = Path(args.demos)
    episodes = load_dataset(demos)
    out = _out_dir(args, "run")
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
    result = train_loop(episodes, cfg, out)
    print(f"trained {cfg.train.steps} steps; best online success "
          f"{result['best_success']:.2f}; checkpoints in {out}")
    return 0


def _load_run_config(run_dir: Path) -> Config:
    path = run_dir / "config.json"
    if not path.exists():
        raise DatasetError(f"missing config: {path}")
    return config_from_dict(json.loads(path.read_text()))


def load_model(cfg: Config, checkpoint_path) -> GhcbcModel:
    model = GhcbcModel(cfg, np.random.default_rng(0))
    model.load_state(load_checkpoint(checkpoint_path))
    return model


def cmd_eval(args) -> int:
    out = _out_dir(args, "eval")
    seeds = [2_000_000 + (args.seed or 0) * 10_000 + i for i in range(args.episodes)]
    if args.expert:
        cfg = _config_from_args(args)

        def make_agent(state, obs):
            return ExpertAgent(state, cfg.world)

        from .simworld import evaluate
        spec = TaskSpec.from_world(cfg.world)
        rate, traces = evaluate(make_agent, cfg.world, spec, seeds, action_mode="joint")
    else:
        if not args.run:
            raise ConfigError("eval needs --run (or --expert)")
        run_dir = Path(args.run)
        cfg = _load_run_config(run_dir)
        ckpt = Path(args.checkpoint) if args.checkpoint else run_dir / "best.ckpt"
        if not ckpt.exists():
            raise DatasetError(f"missing checkpoint: {ckpt}")
        model = load_model(cfg, ckpt)
        rate, traces = evaluate_model(model, cfg, seeds)
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    for trace in traces:
        write_trace(trace_dir / f"ep_{trace['seed']}.trace", trace["seed"],
                    trace["steps"], trace["success"],
                    extra={"action_mode": "joint" if args.expert else cfg.policy.pose_output,
                           "profile": cfg.profile})
    (out / "eval.json").write_text(json.dumps(
        {"success_rate": rate, "episodes": len(seeds), "seeds": seeds}, indent=2) + "\n")
    print(f"success rate {rate:.3f} over {len(seeds)} episodes; traces in {trace_dir}")
    return 0


def cmd_replay(args) -> int:
    trace_path = Path(args.trace)
    if not trace_path.exists():
        raise DatasetError(f"missing trace: {trace_path}")
    header, records = read_trace(trace_path)
    cfg_path = trace_path.parent.parent / "config.json"
    if args.config:
        cfg = _config_from_args(args)
    elif cfg_path.exists():
        cfg = config_from_dict(json.loads(cfg_path.read_text()))
    else:
        cfg = load_config(None, header.get("profile", args.profile or "desk"), args.set)
    spec = TaskSpec.from_world(cfg.world)
    arm = PlanarArm(cfg.world.link_lengths)
    state = reset(cfg.world, spec, int(header["seed"]))
    transitions = 0
    for rec in records:
        step_world(state, np.array(rec["executed"]), cfg.world, arm,
                   action_mode=header.get("action_mode", "joint"))
        if rec.get("transition"):
            transitions += 1
            if rec.get("history_len", 0) != 0:
                print(f"invariant violation at t={rec['t']}: history not cleared")
                return 2
    replayed = is_success(state, spec)
    print(f"replayed {len(records)} steps, {transitions} transitions, "
          f"success={replayed}")
    if "success" in header and bool(header["success"]) != replayed:
        print(f"replay mismatch: trace recorded success={header['success']}")
        return 2
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    episodes = load_dataset(Path(args.demos))
    out = _out_dir(args, "ablate")
    rows = []
    for part in str(args.rows).split(","):
        part = part.strip()
        if part:
            if not part.isdigit() or int(part) not in ABLATION_ROWS:
                raise ConfigError(f"unknown ablation row '{part}'")
            rows.append(int(part))
    seeds = [2_000_000 + cfg.train.seed * 10_000 + i for i in range(args.episodes)]
    results = []
    for row in rows:
        row_cfg = ablation_config(cfg, row)
        row_dir = out / f"row{row}"
        res = train_loop(episodes, row_cfg, row_dir)
        model = load_model(row_cfg, res["best"])
        rate, _ = evaluate_model(model, row_cfg, seeds)
        results.append({"row": row, **ABLATION_ROWS[row], "success_rate": rate})
        print(f"row {row}: success {rate:.3f}")
    (out / "ablate.json").write_text(json.dumps(results, indent=2) + "\n")
    lines = [f"{'row':<4} {'pose input':<10} {'pose output':<12} {'trainer':<14} success"]
    for r in results:
        lines.append(f"{r['row']:<4} {r['input_pose_mode']:<10} {r['pose_output']:<12} "
                     f"{r['hc_mode']:<14} {r['success_rate']:.3f}")
    (out / "table.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_plot(args) -> int:
    out = _out_dir(args, "plots")
    log = Path(args.log)
    if not log.exists():
        raise DatasetError(f"missing metrics log: {log}")
    written = metrics_to_svgs(log, out)
    print(f"wrote {len(written)} SVGs to {out}")
    return 0


_COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "eval": cmd_eval,
    "replay": cmd_replay,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DatasetError, InfeasibleSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GhcbcError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
