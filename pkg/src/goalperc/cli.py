"""``goalperc`` command line: train, eval, neuromod, saliency, selftest.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
MNIST files, bad checkpoints), 3 selftest failure.
"""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, attention, config, mnist, neuromod, runio, selftest
from . import net as N
from .mnist import GoalId

log = logging.getLogger("goalperc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SELFTEST = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--seed", type=int, metavar="U64")
    common.add_argument("--data-dir", metavar="PATH")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--checkpoint", metavar="PATH",
                        help="checkpoint to read or write (default OUT/checkpoint.bin)")
    common.add_argument("--steps", type=int, metavar="N")
    common.add_argument("--batch", type=int, metavar="N")
    common.add_argument("--eval-interval", type=int, metavar="N")
    common.add_argument("--eval-size", type=int, metavar="N")
    common.add_argument("--pairs", type=int, metavar="N")
    common.add_argument("--runs", type=int, metavar="N")
    common.add_argument("--switches", type=int, metavar="N")
    common.add_argument("--validity", choices=["0.99", "0.85", "0.70", "random", "all"])
    common.add_argument("--beta", type=float, metavar="F")
    common.add_argument("--max-ach", type=float, metavar="F")
    common.add_argument("--goal", choices=["even", "odd", "low", "high", "all"])
    common.add_argument("--pair-index", type=int, metavar="N")
    common.add_argument("--digits", metavar="L,R", help="saliency pair labels, e.g. 4,5")

    parser = _Parser(prog="goalperc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("train", "train the two-head network"),
                       ("eval", "goal-directed accuracy on generated test pairs"),
                       ("neuromod", "ACh/NE goal-inference runs and summary"),
                       ("saliency", "export attention grids for one pair"),
                       ("selftest", "gradient, EB and neuromod property checks")):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def resolve_config(args):
    cfg = config.RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cfg = config.parse_config_text(path.read_text(), cfg)
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "command")}
    return config.validate(config.with_overrides(cfg, overrides))


def _echo(cfg, command):
    runio.atomic_write_text(Path(cfg.out) / f"config_{command}.txt",
                            config.echo_text(cfg, command))


def _load_split(cfg, split):
    try:
        return mnist.load_split(cfg.data_dir, split)
    except FileNotFoundError as err:
        expected = ", ".join(mnist.CANONICAL_FILES)
        raise DataError(f"{err}; expected the files {expected} (optionally .gz) "
                        f"in {cfg.data_dir}") from None
    except mnist.FormatError as err:
        raise DataError(f"malformed MNIST file: {err}") from None


def _load_net(cfg):
    path = cfg.checkpoint_path()
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        return N.load_checkpoint(path, expect_sizes=N.DEFAULT_SIZES)
    except N.CheckpointError as err:
        raise DataError(f"bad checkpoint {path}: {err}") from None


def _test_pairs(cfg, test_set, n, name):
    return mnist.make_test_batch(test_set, runio.stream(cfg.seed, name), n)


# ---------------------------------------------------------------- commands

def cmd_train(cfg):
    train_set = _load_split(cfg, "train")
    test_set = _load_split(cfg, "test")
    net = N.init_net(runio.stream(cfg.seed, "init"), seed=cfg.seed)
    eval_pairs = _test_pairs(cfg, test_set, cfg.eval_size, "eval")
    tc = N.TrainConfig(steps=cfg.steps, batch=cfg.batch, eval_interval=cfg.eval_interval,
                       eval_size=cfg.eval_size, learning_rate=cfg.learning_rate)

    def progress(row):
        log.info("step %d loss %.4f digit %.4f/%.4f parity %.4f magnitude %.4f",
                 row["step"], row["loss"], row["digit_acc_left"], row["digit_acc_right"],
                 row["parity_acc"], row["magnitude_acc"])

    _, rows = N.train(net, train_set, eval_pairs, tc, runio.stream(cfg.seed, "data"),
                      log=progress)
    if not rows or rows[-1]["step"] != net.step:
        rows.append({"step": net.step, **N.plain_accuracy(net, eval_pairs)})
    out = Path(cfg.out)
    N.save_checkpoint(net, cfg.checkpoint_path())
    runio.atomic_write_text(out / "train_eval.csv", N.eval_rows_csv(rows))
    _echo(cfg, "train")
    final = rows[-1]
    print(f"step {net.step}: digit accuracy left {final['digit_acc_left']:.4f} "
          f"right {final['digit_acc_right']:.4f}, parity {final['parity_acc']:.4f}, "
          f"magnitude {final['magnitude_acc']:.4f}")
    return EXIT_OK


GOAL_EVAL_FIELDS = ("goal", "pairs", "digit_pct", "goal_pct", "degenerate")


def goal_eval_csv(rows):
    buf = io.StringIO()
    buf.write("# goalperc goal-eval v1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GOAL_EVAL_FIELDS)
    for r in rows:
        w.writerow([r["goal"], r["pairs"], f"{r['digit_pct']:.4f}", f"{r['goal_pct']:.4f}",
                    r["degenerate"]])
    return buf.getvalue()


def cmd_eval(cfg):
    net = _load_net(cfg)
    pairs = _test_pairs(cfg, _load_split(cfg, "test"), cfg.pairs, "test")
    rows = []
    for goal in GoalId:
        res = attention.evaluate_goal_task(net, pairs, goal)
        rows.append({"goal": goal.name.lower(), "pairs": len(pairs),
                     "digit_pct": 100 * res["digit_accuracy"],
                     "goal_pct": 100 * res["goal_accuracy"], "degenerate": res["degenerate"]})
        print(f"{goal.name.lower():>5}: digit {rows[-1]['digit_pct']:6.2f}%  "
              f"goal {rows[-1]['goal_pct']:6.2f}%")
    runio.atomic_write_text(Path(cfg.out) / "goal_eval.csv", goal_eval_csv(rows))
    _echo(cfg, "eval")
    return EXIT_OK


def cmd_neuromod(cfg):
    net = _load_net(cfg)
    pool = _test_pairs(cfg, _load_split(cfg, "test"), cfg.pairs, "test")
    log.info("precomputing c-EB predictions for %d pairs", len(pool))
    predictor = neuromod.TablePredictor(neuromod.prediction_table(net, pool))
    out = Path(cfg.out)
    rows = []
    for mode in cfg.validity_modes():
        label = neuromod.validity_label(mode)
        nm_cfg = cfg.neuromod_config(mode)
        summaries = []
        for r in range(cfg.runs):
            trial_log = neuromod.run_trials(predictor, pool.labels, nm_cfg,
                                            runio.stream(cfg.seed, "neuromod", label, r))
            runio.atomic_write_text(out / "neuromod" / f"trace_{label}_run{r}.csv",
                                    neuromod.trace_csv(trial_log))
            summaries.append(neuromod.summarize(trial_log))
        rows.append((label, summaries))
        agg = neuromod.aggregate(summaries)
        print(f"{label:>6}: " + " / ".join(f"{agg[k][0]:5.1f}" for k in neuromod.SUMMARY_FIELDS))
    runio.atomic_write_text(out / "neuromod_summary.csv", neuromod.summary_csv(rows))
    _echo(cfg, "neuromod")
    return EXIT_OK


def _saliency_pair(cfg, test_set):
    rng = runio.stream(cfg.seed, "saliency")
    if not cfg.digits:
        return mnist.make_test_batch(test_set, rng, cfg.pair_index + 1)[cfg.pair_index]
    try:
        left, right = (int(v) for v in cfg.digits.split(","))
    except ValueError:
        raise UsageError(f"--digits wants two comma-separated digits, got {cfg.digits!r}")
    if not (0 <= left <= 9 and 0 <= right <= 9 and mnist.is_test_pair(left, right)):
        raise UsageError(f"({left},{right}) is not a valid test pair: digits must differ "
                         "in both parity and magnitude")
    for _ in range(100):
        batch = mnist.make_test_batch(test_set, rng, 500)
        hit = np.flatnonzero((batch.labels[:, 0] == left) & (batch.labels[:, 1] == right))
        if hit.size:
            return batch[int(hit[0])]
    raise DataError(f"no generated pair with labels ({left},{right})")


def grid_csv(grid, what):
    buf = io.StringIO()
    buf.write(f"# goalperc saliency-grid v1; {what}; 28 rows x 56 columns, "
              "left digit in columns 0-27\n")
    w = csv.writer(buf, lineterminator="\n")
    for row in grid:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def cmd_saliency(cfg):
    net = _load_net(cfg)
    pair = _saliency_pair(cfg, _load_split(cfg, "test"))
    goals = list(GoalId) if cfg.goal == config.ALL_MODES else [GoalId.parse(cfg.goal)]
    out = Path(cfg.out) / "saliency"
    runio.atomic_write_text(out / "input.csv", grid_csv(attention.to_grid(pair.input), "input"))
    meta = {"format": "goalperc saliency v1", "left_label": pair.left_label,
            "right_label": pair.right_label, "goals": {}}
    for goal in goals:
        pred = attention.predict_with_goal(net, pair, goal)
        amap = pred.attention
        masked = attention.apply_mask(pair.input, amap.probs)
        name = goal.name.lower()
        runio.atomic_write_text(out / f"{name}_attention.csv",
                                grid_csv(amap.grid(), f"c-EB attention, goal {name}"))
        runio.atomic_write_text(out / f"{name}_masked.csv",
                                grid_csv(attention.to_grid(masked), f"masked input, goal {name}"))
        meta["goals"][name] = {
            "degenerate": bool(amap.degenerate),
            "mass": float(amap.probs.sum()),
            "left_mass_fraction": amap.left_mass_fraction(),
            "predicted_digit": pred.predicted_digit,
            "predicted_side": pred.predicted_side.name.lower(),
            "predicted_subgoal": pred.predicted_subgoal.name.lower(),
        }
        print(f"{name:>5}: left mass {amap.left_mass_fraction():.3f}, predicted "
              f"{pred.predicted_digit} ({pred.predicted_side.name.lower()})"
              + (", degenerate map" if amap.degenerate else ""))
    runio.atomic_write_text(out / "saliency.json", json.dumps(meta, indent=2) + "\n")
    _echo(cfg, "saliency")
    return EXIT_OK


def cmd_selftest(cfg):
    results = selftest.run_all()
    _echo(cfg, "selftest")
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "neuromod": cmd_neuromod,
            "saliency": cmd_saliency, "selftest": cmd_selftest}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, config.ConfigError) as err:
        print(f"goalperc: usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"goalperc: data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
