"""Command-line front end: expert rollouts, cloning, training, evaluation,
transfer experiments and gain retuning.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Every run prints the
resolved master seed so it can be re-created from its log alone.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import learning, transfer
from .config import ExperimentConfig, load_config
from .learning import RewardConfig
from .logs import (TrajectoryLog, read_csv, write_reward_curve,
                   write_trajectory, write_transfer_report)
from .policy import (GaussianMlpPolicy, PolicyKind, ValueNet, load_policy,
                     load_value, save_policy, save_value)


class UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    runtime failures and use 1 for usage."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="walklab", description=__doc__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def common(sp, policy=False):
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--out", help="output directory (overrides config)")
        if policy:
            sp.add_argument("--policy", required=True, help="policy checkpoint or directory")

    sp = sub.add_parser("rollout-expert", help="run the expert controller and log the trajectory")
    common(sp)
    sp.add_argument("--rough", action="store_true", help="seeded rough terrain instead of flat")

    sp = sub.add_parser("clone", help="behavior-clone a policy from expert demonstrations")
    common(sp)
    sp.add_argument("--samples", type=int, default=50000, help="expert transitions to collect")
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--learning-rate", type=float, default=1e-2)
    sp.add_argument("--fine-epochs", type=int, default=10,
                    help="second pass at a tenth of the learning rate (0 to skip)")
    sp.add_argument("--mle-log-std", action="store_true",
                    help="also fit log_std during cloning (full MLE)")

    sp = sub.add_parser("pretrain-value", help="TD-pretrain a value net on expert demonstrations")
    common(sp)
    sp.add_argument("--samples", type=int, default=50000)
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--learning-rate", type=float, default=1e-3)

    sp = sub.add_parser("train", help="PPO training on rough terrain")
    common(sp)
    sp.add_argument("--policy", help="starting policy checkpoint (fresh if omitted)")
    sp.add_argument("--value", help="starting value checkpoint (fresh if omitted)")
    sp.add_argument("--iterations", type=int, help="overrides config [run] iterations")

    sp = sub.add_parser("eval", help="mean-action evaluation of a policy checkpoint")
    common(sp, policy=True)
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--flat", action="store_true", help="flat terrain instead of rough")
    sp.add_argument("--surrogate", action="store_true", help="evaluate on the hardware surrogate")

    sp = sub.add_parser("transfer", help="nominal-vs-surrogate report over a checkpoint directory")
    common(sp, policy=True)
    sp.add_argument("--episodes", type=int, default=10)

    sp = sub.add_parser("retune", help="change one gain of a HeuristicNN checkpoint")
    common(sp, policy=True)
    sp.add_argument("--gain", required=True, help="gain field name, e.g. k")
    sp.add_argument("--value", required=True, type=float, help="new gain value")

    sp = sub.add_parser("plot-data", help="re-emit a log file as canonical plot-ready CSV")
    common(sp)
    sp.add_argument("--input", required=True, help="any CSV written by this tool")
    return p


def _load(args) -> tuple[ExperimentConfig, int, str]:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    seed = args.seed if args.seed is not None else cfg.run.seed
    out = args.out if args.out is not None else cfg.run.out_dir
    os.makedirs(out, exist_ok=True)
    print(f"master seed: {seed}")
    return cfg, seed, out


def _reward_cfg(cfg: ExperimentConfig) -> RewardConfig:
    return cfg.reward


def _expert_dataset(cfg, seed, n):
    return learning.collect_expert_dataset(cfg.env_spec(flat=True), n, seed,
                                           reward_cfg=cfg.reward)


def _cmd_rollout_expert(args) -> int:
    cfg, seed, out = _load(args)
    spec = cfg.env_spec(flat=not args.rough)
    env = spec.make_env(seed if args.rough else None)
    log = TrajectoryLog()
    state = env.reset(seed=seed)
    n = int(round(cfg.ppo.episode_len_max_s / cfg.sim.dt))
    from .expert import expert_action
    fell = False
    for _ in range(n):
        action = expert_action(state, cfg.gains)
        state, fell = env.step(action)
        log.append(state, action, learning._step_reward(state, fell, cfg.reward), fell)
        if fell:
            break
    path = os.path.join(out, "trajectory.csv")
    write_trajectory(log, path)
    print(f"{'fell' if fell else 'walked'} after {len(log)} steps; wrote {path}")
    return 0


def _cmd_clone(args) -> int:
    cfg, seed, out = _load(args)
    rng = np.random.default_rng(seed)
    obs, acts, _, _ = _expert_dataset(cfg, seed, args.samples)
    pol = cfg.policy.make(rng, gains=cfg.gains)
    targets = learning.expert_targets_for_kind(pol, acts, cfg.gains)
    pol = learning.behavior_clone(obs, targets, pol, lr=args.learning_rate,
                                  epochs=args.epochs, rng=rng,
                                  fit_log_std=args.mle_log_std)
    if args.fine_epochs > 0:
        pol = learning.behavior_clone(obs, targets, pol,
                                      lr=args.learning_rate / 10.0,
                                      epochs=args.fine_epochs, rng=rng,
                                      fit_log_std=args.mle_log_std)
    pol.log_std[:] = cfg.policy.log_std_init
    path = os.path.join(out, "policy.json")
    save_policy(pol, path)
    print(f"wrote {path}")
    return 0


def _cmd_pretrain_value(args) -> int:
    cfg, seed, out = _load(args)
    rng = np.random.default_rng(seed)
    obs, _, rews, dones = _expert_dataset(cfg, seed, args.samples)
    val = ValueNet.create(rng)
    val = learning.value_pretrain(obs, rews, dones, val, gamma=cfg.ppo.gamma,
                                  lr=args.learning_rate, epochs=args.epochs,
                                  rng=rng)
    path = os.path.join(out, "value.json")
    save_value(val, path)
    print(f"wrote {path}")
    return 0


def _cmd_train(args) -> int:
    cfg, seed, out = _load(args)
    rng = np.random.default_rng(seed)
    pol = load_policy(args.policy) if args.policy \
        else cfg.policy.make(rng, gains=cfg.gains)
    val = load_value(args.value) if args.value else ValueNet.create(rng)
    iters = args.iterations if args.iterations is not None else cfg.run.iterations

    def progress(row, stats):
        print(f"iter {row.iteration}: reward {row.mean_reward:.1f} "
              f"steps {row.mean_episode_steps:.0f} "
              f"falls {row.fall_fraction:.2f}", flush=True)

    pol, val, curve = learning.train_loop(cfg.env_spec(), pol, val,
                                          cfg.reward, cfg.ppo, iters, seed,
                                          progress=progress)
    write_reward_curve(curve, os.path.join(out, "reward_curve.csv"))
    save_policy(pol, os.path.join(out, "policy.json"))
    save_value(val, os.path.join(out, "value.json"))
    print(f"wrote reward_curve.csv, policy.json, value.json in {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg, seed, _ = _load(args)
    pol = load_policy(args.policy)
    spec = cfg.env_spec(flat=args.flat)
    if args.surrogate:
        spec = transfer.surrogate_env_spec(spec, cfg.surrogate)
    res = transfer.evaluate_policy(spec, pol, args.episodes, seed,
                                   reward_cfg=cfg.reward)
    print(f"success {res.n_success}/{res.n_episodes} "
          f"({res.success_rate:.0%}), mean reward {res.mean_reward:.1f}, "
          f"mean steps {res.mean_steps:.0f}")
    return 0


def _policy_checkpoints(path: str) -> list[tuple[str, GaussianMlpPolicy]]:
    if os.path.isfile(path):
        return [(os.path.basename(path), load_policy(path))]
    out = []
    for name in sorted(os.listdir(path)):
        if name.endswith(".json"):
            try:
                out.append((name, load_policy(os.path.join(path, name))))
            except ValueError:
                continue  # not a policy checkpoint (e.g. a value net)
    if not out:
        raise FileNotFoundError(f"no policy checkpoints under {path}")
    return out


def _cmd_transfer(args) -> int:
    cfg, seed, out = _load(args)
    policies = _policy_checkpoints(args.policy)
    report = transfer.transfer_experiment(policies, cfg.env_spec(),
                                          cfg.surrogate, args.episodes, seed,
                                          reward_cfg=cfg.reward)
    path = os.path.join(out, "transfer_report.csv")
    write_transfer_report(report, path)
    for kind in PolicyKind:
        rate = report.aggregate_rate(kind, "surrogate")
        if rate == rate:  # skip kinds with no policies
            print(f"{kind.value} surrogate success rate: {rate:.0%}")
    print(f"wrote {path}")
    return 0


def _cmd_retune(args) -> int:
    cfg, seed, out = _load(args)
    pol = load_policy(args.policy)
    pol = transfer.retune_gain(pol, args.gain, args.value)
    path = os.path.join(out, "policy_retuned.json")
    save_policy(pol, path)
    print(f"wrote {path}")
    return 0


def _cmd_plot_data(args) -> int:
    cfg, seed, out = _load(args)
    header, rows = read_csv(args.input)
    path = os.path.join(out, os.path.basename(args.input))
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    print(f"wrote {path}")
    return 0


_COMMANDS = {
    "rollout-expert": _cmd_rollout_expert,
    "clone": _cmd_clone,
    "pretrain-value": _cmd_pretrain_value,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "transfer": _cmd_transfer,
    "retune": _cmd_retune,
    "plot-data": _cmd_plot_data,
}


def run_command(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return exc.code if isinstance(exc.code, int) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (BrokenPipeError, KeyboardInterrupt):
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
