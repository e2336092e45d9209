"""Packaged property checks behind the ``selftest`` command.

Each check returns a ``CheckResult``; none of them needs MNIST. The
reference computations come from ``oracles`` (plain loops) or are spelled
out inline, so they share no code with the vectorised paths under test.
"""

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import attention, neuromod, oracles
from . import net as N
from .mnist import GoalId

MINI_SIZES = (20, 10, 8, 6)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    def run(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def _loss(net, x, labels):
    return N.total_loss(N.forward(net, x), labels)


def gradient_error(net, x, labels, h=1e-5):
    """Max |analytic - central difference| over all parameters, relative to
    the largest gradient entry of either kind."""
    tr = N.forward(net, x)
    analytic = N.backward(net, tr, N.training_loss(tr, labels)[1])
    worst_diff, scale = 0.0, 0.0
    for name in N.PARAM_NAMES:
        p = net.params[name]
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = _loss(net, x, labels)
            p[idx] = old - h
            down = _loss(net, x, labels)
            p[idx] = old
            numeric = (up - down) / (2 * h)
            a = analytic[name][idx]
            worst_diff = max(worst_diff, abs(a - numeric))
            scale = max(scale, abs(a), abs(numeric))
    return worst_diff / max(scale, 1e-12)


@_timed
def check_gradients(triples=100, seed=0, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(triples):
        net = N.init_net(rng, MINI_SIZES)
        x = rng.uniform(0, 1.7, size=(1, MINI_SIZES[0]))
        labels = rng.integers(0, 10, size=(1, 2))
        worst = max(worst, gradient_error(net, x, labels))
    return CheckResult("gradient oracle", worst < tol,
                       f"max relative error {worst:.2e} over {triples} triples (< {tol:g})")


@_timed
def check_eb(cases=1000, seed=1, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        sizes = (int(rng.integers(2, 11)), int(rng.integers(2, 11)),
                 int(rng.integers(2, 11)), int(rng.integers(2, 11)))
        net = N.init_net(rng, sizes)
        x = rng.uniform(0, 1.7, size=sizes[0])
        goal = GoalId(int(rng.integers(4)))
        tr = N.forward(net, x)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            amap = attention.ceb_attention(net, tr, goal)
        ref = np.array(oracles.ceb(net.params, x, goal))
        worst = max(worst, float(np.max(np.abs(amap.probs - ref))))
    return CheckResult("EB oracle", worst <= tol,
                       f"max abs difference {worst:.2e} over {cases} cases (<= {tol:g})")


@_timed
def check_neuromod(seed=2):
    cfg = neuromod.NeuromodConfig()
    problems = []

    # softmax sampling against closed-form probabilities, 3 sigma per goal
    state = neuromod.NeuromodState(np.array([1.3, 1.0, 2.1, 0.6]), cfg.ne_reset)
    rng = np.random.default_rng(seed)
    n = 10**5
    counts = np.bincount([neuromod.softmax_select(state, 1.5, rng) for _ in range(n)],
                         minlength=4)
    p = neuromod.softmax_probs(state.ach, 1.5)
    if np.any(np.abs(counts - n * p) > 3 * np.sqrt(n * p * (1 - p))):
        problems.append("softmax frequencies outside 3 sigma")
    worked = neuromod.softmax_probs([2.0, 1.0, 1.0, 1.0], 5.0)[0]
    if abs(worked - math.exp(10) / (math.exp(10) + 3 * math.exp(5))) > 1e-12:
        problems.append("softmax closed form")

    # bounds over 10**6 randomised updates (1000 sequences of 1000)
    for _ in range(1000):
        s = neuromod.NeuromodState.initial(cfg)
        p_ok = rng.random()
        goals = rng.integers(0, 4, 1000)
        oks = rng.random(1000) < p_ok
        for g, ok in zip(goals, oks):
            neuromod.update_on_outcome(s, cfg, GoalId(g), bool(ok))
            s, _ = neuromod.check_reset(s, cfg)
            if not (s.ach.min() > 0 and s.ach.max() <= cfg.max_ach and s.ne >= cfg.ne_reset):
                problems.append("state left its bounds")
                break

    if abs(neuromod.reset_threshold(np.ones(4)) - 2 / 3) > 1e-15:
        problems.append("threshold at baseline is not 2/3")

    s = neuromod.NeuromodState.initial(cfg)
    k = 0
    while True:
        k += 1
        s.ne *= cfg.ne_incorrect
        s, fired = neuromod.check_reset(s, cfg)
        if fired or k > 100:
            break
    if k != 50:
        problems.append(f"consecutive-failure reset at k={k}, expected 50")

    return CheckResult("neuromod unit suite", not problems,
                       "; ".join(problems) or "softmax, bounds, threshold, k=50 reset")


def partition_ok(summary):
    """Integer counts partition the trials and the percentages add to 100."""
    pct = summary.percentages()
    return (summary.total > 0
            and abs(math.fsum(pct.values()) - 100.0) <= 1e-9
            and summary.correct_major + summary.correct_minor
            + summary.incorrect_softmax + summary.incorrect_ceb == summary.total)


@_timed
def check_partition(runs=8, seed=3):
    rng = np.random.default_rng(seed)
    left = rng.integers(0, 10, 400)
    right = np.array([rng.choice([e for e in range(10)
                                  if e % 2 != d % 2 and (e >= 5) != (d >= 5)]) for d in left])
    labels = np.stack([left, right], axis=1)
    oracle = neuromod.OraclePredictor(labels)
    table = np.array([[oracle.predict(i, g) for g in GoalId] for i in range(len(labels))])
    table[rng.random(len(labels)) < 0.1] += 1   # some digit errors
    table %= 10
    bad = 0
    modes = [*neuromod.VALIDITY_OPTIONS, neuromod.RANDOM]
    for mode in modes:
        cfg = neuromod.NeuromodConfig(validity_mode=mode, num_switches=3)
        for r in range(runs):
            log = neuromod.run_trials(neuromod.TablePredictor(table), labels, cfg,
                                      np.random.default_rng([seed, r]))
            bad += not partition_ok(neuromod.summarize(log))
    total = runs * len(modes)
    return CheckResult("partition identity", bad == 0, f"{total - bad}/{total} runs sum to 100")


CHECKS = (check_gradients, check_eb, check_neuromod, check_partition)


def run_all(log=print):
    results = []
    for check in CHECKS:
        res = check()
        log(res.line())
        results.append(res)
    return results
