"""Acceptance criteria, one test (and one PASS/FAIL summary line) each.

The end-to-end criteria drive the real CLI at default settings on MNIST,
twice with the same master seed; that takes about twenty minutes on one
core. The oracle criteria need no data.
"""

import csv
import json

import numpy as np
import pytest

from goalperc import cli, neuromod, selftest

DIGIT_TARGETS = {"even": 92.03, "odd": 91.15, "low": 95.39, "high": 87.46}
DIGIT_TOL = 5.0
GOAL_FLOOR = 96.0
NEUROMOD_TARGETS = {
    "0.99": (67.0, 0.1, 26.0, 6.9),
    "0.85": (54.0, 1.3, 38.9, 5.8),
    "0.70": (37.4, 4.8, 53.3, 4.5),
    "random": (49.5, 12.4, 31.7, 6.4),
}
NEUROMOD_TOL = 10.0


def read_rows(path):
    with open(path) as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))


def pipeline(data_dir, out):
    for command in ("train", "eval", "neuromod"):
        assert cli.main([command, "--data-dir", str(data_dir), "--out", str(out)]) == 0


@pytest.fixture(scope="module")
def runs(mnist_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    a, b = root / "a", root / "b"
    pipeline(mnist_dir, a)
    pipeline(mnist_dir, b)
    return a, b


@pytest.mark.mnist
@pytest.mark.slow
class TestEndToEnd:
    def test_goal_directed_accuracy(self, runs, report):
        rows = {r["goal"]: r for r in read_rows(runs[0] / "goal_eval.csv")}
        ok, parts = True, []
        for goal, target in DIGIT_TARGETS.items():
            digit, goal_pct = float(rows[goal]["digit_pct"]), float(rows[goal]["goal_pct"])
            good = abs(digit - target) <= DIGIT_TOL and goal_pct >= GOAL_FLOOR
            ok &= good and int(rows[goal]["pairs"]) == 10000
            parts.append(f"{goal} digit {digit:.2f} (target {target}+-{DIGIT_TOL:g}) "
                         f"goal {goal_pct:.2f} (>= {GOAL_FLOOR:g})")
        report("[1] goal-directed accuracy", ok, "; ".join(parts))

    def test_neuromod_bands(self, runs, report):
        rows = {r["validity"]: r for r in read_rows(runs[0] / "neuromod_summary.csv")}
        ok, parts = True, []
        for label, target in NEUROMOD_TARGETS.items():
            got = [float(rows[label][k]) for k in neuromod.SUMMARY_FIELDS]
            misses = [f"{k}={g:.1f} vs {t}" for k, g, t in zip(neuromod.SUMMARY_FIELDS, got, target)
                      if abs(g - t) > NEUROMOD_TOL]
            ok &= not misses and int(rows[label]["runs"]) == 10
            parts.append(f"{label} " + "/".join(f"{g:.1f}" for g in got)
                         + (f" [out of band: {', '.join(misses)}]" if misses else ""))
        major = [float(rows[v]["pct_correct_major"]) for v in ("0.99", "0.85", "0.70")]
        softmax = [float(rows[v]["pct_incorrect_softmax"]) for v in ("0.99", "0.85", "0.70")]
        trend = major[0] > major[1] > major[2] and softmax[0] < softmax[1] < softmax[2]
        parts.append(f"monotone trends {'hold' if trend else 'broken'}")
        report("[2] neuromod summary bands", ok and trend, "; ".join(parts))

    def test_reset_after_switch(self, runs, report):
        fractions = []
        for path in sorted((runs[0] / "neuromod").glob("trace_0.99_run*.csv")):
            rows = read_rows(path)
            block = np.array([int(r["block"]) for r in rows])
            major = [r["major_goal"] for r in rows]
            fired = np.array([r["reset"] == "1" for r in rows])
            starts = np.flatnonzero(np.diff(block)) + 1
            changes = [s for s in starts if major[s] != major[s - 1]]
            hits = sum(fired[s:s + 100].any() for s in changes)
            fractions.append(hits / len(changes) if changes else 1.0)
        ok = len(fractions) == 10 and min(fractions) >= 0.8
        report("[3] NE reset within 100 trials of a goal switch", ok,
               f"worst run {min(fractions):.2f} of switches hit (need >= 0.80) "
               f"over {len(fractions)} runs")

    def test_determinism(self, runs, report):
        a, b = runs
        files = sorted(p.relative_to(a) for p in a.rglob("*")
                       if p.is_file() and (p.suffix == ".csv" or p.name == "checkpoint.bin"))
        differ = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
        report("[7] determinism", not differ and len(files) > 40,
               f"{len(files) - len(differ)}/{len(files)} checkpoint and CSV files identical")

    def test_partition_every_run(self, runs, report):
        traces = sorted((runs[0] / "neuromod").glob("trace_*.csv"))
        bad = []
        for path in traces:
            rows = read_rows(path)
            counts = dict.fromkeys(("major", "minor", "softmax", "ceb"), 0)
            for r in rows:
                if r["outcome"] == neuromod.WRONG_GOAL:
                    counts["softmax"] += 1
                elif r["outcome"] == neuromod.WRONG_DIGIT:
                    counts["ceb"] += 1
                elif r["true_goal"] == r["major_goal"]:
                    counts["major"] += 1
                else:
                    counts["minor"] += 1
            summary = neuromod.Summary(counts["major"], counts["minor"],
                                       counts["softmax"], counts["ceb"])
            if summary.total != len(rows) or not selftest.partition_ok(summary):
                bad.append(path.name)
        for r in read_rows(runs[0] / "neuromod_summary.csv"):
            if abs(sum(float(r[k]) for k in neuromod.SUMMARY_FIELDS) - 100) > 1e-3:
                bad.append(f"summary row {r['validity']}")
        report("[8] partition identity", not bad and len(traces) == 40,
               f"{len(traces) - len(bad)}/{len(traces)} runs sum to 100"
               + (f"; failing: {bad}" if bad else ""))


class TestOracles:
    def test_gradient_oracle(self, report):
        res = selftest.check_gradients(triples=100)
        report("[4] gradient oracle", res.passed and res.seconds < 60,
               f"{res.detail}, {res.seconds:.1f}s")

    def test_eb_oracle(self, report):
        res = selftest.check_eb(cases=1000)
        report("[5] EB oracle", res.passed and res.seconds < 60, f"{res.detail}, {res.seconds:.1f}s")

    def test_neuromod_unit_suite(self, report):
        res = selftest.check_neuromod()
        report("[6] neuromod unit suite", res.passed and res.seconds < 60,
               f"{res.detail}, {res.seconds:.1f}s")


@pytest.mark.mnist
@pytest.mark.slow
class TestTrainedSaliency:
    def test_goal_side_gets_the_mass(self, runs, mnist_dir, tmp_path):
        out = tmp_path / "sal"
        assert cli.main(["saliency", "--data-dir", str(mnist_dir), "--out", str(out),
                         "--checkpoint", str(runs[0] / "checkpoint.bin"), "--digits", "4,5"]) == 0
        meta = json.loads((out / "saliency" / "saliency.json").read_text())["goals"]
        # 4 is even and low (left), 5 is odd and high (right)
        assert meta["even"]["left_mass_fraction"] > 0.5 and meta["low"]["left_mass_fraction"] > 0.5
        assert meta["odd"]["left_mass_fraction"] < 0.5 and meta["high"]["left_mass_fraction"] < 0.5
        grids = [(out / "saliency" / f"{g}_attention.csv").read_bytes() for g in meta]
        assert len(set(grids)) == 4
