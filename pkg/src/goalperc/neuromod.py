"""ACh/NE neuromodulated goal inference.

Four ACh levels (one per goal) drive a softmax choice of which goal to
attend to; one NE level tracks surprise. A rewarded trial multiplies the
chosen goal's ACh up and NE down, an unrewarded one does the reverse, and
once NE exceeds ``mean(ACh) / (0.5 + mean(ACh))`` both are reset to
baseline. Goals switch in blocks of ``trial_interval +- trial_range``
trials; within a block the rewarded ("true") goal is the block's major
goal with probability ``validity`` and its same-class complement otherwise.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .mnist import GoalId, goal_digits

VALIDITY_OPTIONS = (0.99, 0.85, 0.70)
RANDOM = "random"

CORRECT = "correct"
WRONG_GOAL = "wrong_goal"
WRONG_DIGIT = "wrong_digit"


@dataclass
class NeuromodConfig:
    beta: float = 1.0
    ne_reset: float = 0.25
    max_ach: float = 4.0
    ach_correct: float = 1.04
    ach_incorrect: float = 0.99
    ne_correct: float = 0.97
    ne_incorrect: float = 1.02
    validity_options: tuple = VALIDITY_OPTIONS
    num_switches: int = 10
    trial_interval: int = 400
    trial_range: int = 30
    validity_mode: object = RANDOM  # a float for fixed validity, or "random"

    def __post_init__(self):
        if not self.ach_correct > 1 > self.ach_incorrect > 0:
            raise ValueError("need ach_correct > 1 > ach_incorrect > 0")
        if not self.ne_incorrect > 1 > self.ne_correct > 0:
            raise ValueError("need ne_incorrect > 1 > ne_correct > 0")
        if not all(0.5 < v <= 1 for v in self.validity_options):
            raise ValueError("validity options must lie in (0.5, 1]")
        if self.validity_mode != RANDOM and not 0.5 < float(self.validity_mode) <= 1:
            raise ValueError(f"bad validity mode {self.validity_mode!r}")
        if self.max_ach < 1 or self.beta < 0:
            raise ValueError("need max_ach >= 1 and beta >= 0")


@dataclass
class NeuromodState:
    ach: np.ndarray
    ne: float

    @classmethod
    def initial(cls, config):
        return cls(np.ones(4), config.ne_reset)

    def copy(self):
        return NeuromodState(self.ach.copy(), self.ne)


@dataclass(frozen=True)
class Block:
    major: GoalId
    minor: GoalId
    validity: float
    length: int


def make_schedule(config, rng):
    blocks = []
    for _ in range(config.num_switches):
        major = GoalId(int(rng.integers(4)))
        if config.validity_mode == RANDOM:
            validity = float(config.validity_options[int(rng.integers(len(config.validity_options)))])
        else:
            validity = float(config.validity_mode)
        length = int(rng.integers(config.trial_interval - config.trial_range,
                                  config.trial_interval + config.trial_range + 1))
        blocks.append(Block(major, major.complement, validity, length))
    return blocks


def draw_true_goal(block, rng):
    return block.major if rng.random() < block.validity else block.minor


def softmax_probs(ach, beta):
    z = beta * np.asarray(ach, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_select(state, beta, rng):
    """Sample a goal by inverting the softmax CDF at one uniform draw."""
    cdf = np.cumsum(softmax_probs(state.ach, beta))
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return GoalId(min(k, 3))


def update_on_outcome(state, config, guess, correct):
    """Apply one trial's outcome in place and return the state."""
    g = int(guess)
    if correct:
        state.ach[g] = min(state.ach[g] * config.ach_correct, config.max_ach)
        state.ne = max(state.ne * config.ne_correct, config.ne_reset)
    else:
        state.ach[g] *= config.ach_incorrect
        state.ne *= config.ne_incorrect
    return state


def reset_threshold(ach):
    level = float(np.mean(ach))
    return level / (0.5 + level)


def check_reset(state, config):
    """Reset to baseline when NE exceeds the ACh-dependent threshold."""
    if state.ne > reset_threshold(state.ach):
        state.ach[:] = 1.0
        state.ne = config.ne_reset
        return state, True
    return state, False


@dataclass
class TrialRecord:
    trial: int
    block: int
    true_goal: GoalId
    major_goal: GoalId
    guess_goal: GoalId
    goal_digit: int
    predicted_digit: int
    outcome: str
    ach: tuple
    ne: float
    reset_fired: bool


@dataclass
class TrialLog:
    schedule: list
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def block_starts(self):
        starts, t = [], 0
        for b in self.schedule:
            starts.append(t)
            t += b.length
        return starts


class OraclePredictor:
    """Always predicts the guessed goal's digit; c-EB never errs."""

    def __init__(self, labels):
        self.labels = np.asarray(labels)

    def predict(self, index, goal):
        return int(goal_digits(self.labels[index:index + 1], goal)[0][0])


class TablePredictor:
    """Precomputed ``(n_pairs, 4)`` digit predictions, one column per goal."""

    def __init__(self, table):
        self.table = np.asarray(table)

    def predict(self, index, goal):
        return int(self.table[index, int(goal)])


def prediction_table(net, pairs):
    """c-EB predicted digit for every pair under every goal."""
    from .attention import predict_batch
    return np.stack([predict_batch(net, pairs.inputs, g).digit for g in GoalId], axis=1)


def run_trials(predictor, labels, config, rng):
    """One full run over a freshly drawn schedule.

    ``labels`` is the ``(n, 2)`` label array of the test-pair pool; a pair
    is drawn from it uniformly (with replacement) on every trial and handed
    to ``predictor.predict(index, guessed_goal)``.
    """
    labels = np.asarray(labels)
    schedule_rng, trial_rng, softmax_rng = rng.spawn(3)
    schedule = make_schedule(config, schedule_rng)
    log = TrialLog(schedule)
    state = NeuromodState.initial(config)
    # goal digit per (pair, goal) is fixed by the labels
    truth = np.stack([goal_digits(labels, g)[0] for g in GoalId], axis=1)
    t = 0
    for b, block in enumerate(schedule):
        for _ in range(block.length):
            idx = int(trial_rng.integers(len(labels)))
            true_goal = draw_true_goal(block, trial_rng)
            guess = softmax_select(state, config.beta, softmax_rng)
            goal_digit = int(truth[idx, true_goal])
            pred = predictor.predict(idx, guess)
            if guess != true_goal:
                outcome = WRONG_GOAL
            elif pred != goal_digit:
                outcome = WRONG_DIGIT
            else:
                outcome = CORRECT
            update_on_outcome(state, config, guess, outcome == CORRECT)
            state, fired = check_reset(state, config)
            log.records.append(TrialRecord(
                t, b, true_goal, block.major, guess, goal_digit, pred, outcome,
                tuple(float(a) for a in state.ach), float(state.ne), fired))
            t += 1
    return log


# ----------------------------------------------------------------- metrics

SUMMARY_FIELDS = ("pct_correct_major", "pct_correct_minor",
                  "pct_incorrect_softmax", "pct_incorrect_ceb")


@dataclass
class Summary:
    """Outcome counts of one or more runs, split into the four summary categories."""

    correct_major: int
    correct_minor: int
    incorrect_softmax: int
    incorrect_ceb: int

    @property
    def total(self):
        return (self.correct_major + self.correct_minor
                + self.incorrect_softmax + self.incorrect_ceb)

    def percentages(self):
        n = self.total
        counts = (self.correct_major, self.correct_minor,
                  self.incorrect_softmax, self.incorrect_ceb)
        return dict(zip(SUMMARY_FIELDS, (100.0 * c / n for c in counts)))


def summarize(log):
    if not len(log):
        raise ValueError("cannot summarize an empty trial log")
    counts = dict.fromkeys(("major", "minor", "softmax", "ceb"), 0)
    for r in log.records:
        if r.outcome == WRONG_GOAL:
            counts["softmax"] += 1
        elif r.outcome == WRONG_DIGIT:
            counts["ceb"] += 1
        elif r.true_goal == r.major_goal:
            counts["major"] += 1
        else:
            counts["minor"] += 1
    return Summary(counts["major"], counts["minor"], counts["softmax"], counts["ceb"])


def switch_reset_hits(log, window=100):
    """For each block boundary where the major goal changes: did NE reset
    within ``window`` trials? Returns a list of bools."""
    fired = np.array([r.reset_fired for r in log.records])
    starts = log.block_starts()
    hits = []
    for b in range(1, len(log.schedule)):
        if log.schedule[b].major == log.schedule[b - 1].major:
            continue
        s = starts[b]
        hits.append(bool(fired[s:s + window].any()))
    return hits


def count_bursts(log, level=0.35):
    """Number of upward crossings of ``level`` by the logged NE trace."""
    ne = np.array([r.ne for r in log.records])
    return int(np.sum((ne[1:] > level) & (ne[:-1] <= level)))


# --------------------------------------------------------------------- csv

TRACE_FIELDS = ("trial", "block", "true_goal", "major_goal", "guess_goal", "goal_digit",
                "pred_digit", "outcome", "ach_even", "ach_odd", "ach_low", "ach_high",
                "ne", "reset")


def trace_csv(log):
    buf = io.StringIO()
    buf.write("# goalperc trial-trace v1; ach_*/ne are levels after the trial's "
              "update and any reset\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for r in log.records:
        w.writerow([r.trial, r.block, r.true_goal.name.lower(), r.major_goal.name.lower(),
                    r.guess_goal.name.lower(), r.goal_digit, r.predicted_digit, r.outcome,
                    *(repr(a) for a in r.ach), repr(r.ne), int(r.reset_fired)])
    return buf.getvalue()


def aggregate(summaries):
    """Mean and (population) standard deviation of each percentage column."""
    table = np.array([[s.percentages()[k] for k in SUMMARY_FIELDS] for s in summaries])
    return {k: (float(table[:, i].mean()), float(table[:, i].std()))
            for i, k in enumerate(SUMMARY_FIELDS)}


def summary_csv(rows):
    """``rows`` is a list of ``(validity_label, [Summary, ...])``."""
    buf = io.StringIO()
    buf.write("# goalperc neuromod-summary v1\n")
    w = csv.writer(buf, lineterminator="\n")
    header = ["validity", "runs"]
    for k in SUMMARY_FIELDS:
        header += [k, k + "_std"]
    w.writerow(header)
    for label, summaries in rows:
        agg = aggregate(summaries)
        line = [label, len(summaries)]
        for k in SUMMARY_FIELDS:
            line += [f"{agg[k][0]:.4f}", f"{agg[k][1]:.4f}"]
        w.writerow(line)
    return buf.getvalue()


def validity_label(mode):
    return RANDOM if mode == RANDOM else f"{float(mode):.2f}"


def parse_validity(text):
    text = str(text).strip().lower()
    if text == RANDOM:
        return RANDOM
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"bad validity {text!r}")
    return value
