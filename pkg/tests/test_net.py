import math

import numpy as np
import pytest

from goalperc import mnist, oracles
from goalperc import net as N
from goalperc.mnist import Dataset

MINI = (20, 10, 8, 6)


def mini_net(seed=0, sizes=MINI):
    return N.init_net(np.random.default_rng(seed), sizes)


def random_case(rng, sizes=MINI, batch=1):
    x = rng.uniform(0, 1.7, size=(batch, sizes[0]))
    labels = rng.integers(0, 10, size=(batch, 2))
    return x, labels


def total_loss(net, x, labels):
    return N.training_loss(N.forward(net, x), labels)[0]


def fd_gradient(net, name, x, labels, h=1e-5):
    p = net.params[name]
    grad = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        up = total_loss(net, x, labels)
        p[idx] = old - h
        down = total_loss(net, x, labels)
        p[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return np.max(np.abs(analytic - numeric)) / scale


class TestInit:
    def test_deterministic(self):
        a, b = mini_net(4), mini_net(4)
        for k in N.PARAM_NAMES:
            assert np.array_equal(a.params[k], b.params[k])

    def test_shapes_and_fan_in(self):
        net = N.zero_net()
        assert net.W1.shape == (800, 1568)
        assert net.W2.shape == (600, 800)
        assert net.Wp.shape == net.Wm.shape == (400, 600)
        assert net.Wp_goal.shape == net.Wm_goal.shape == (4, 400)
        assert net.Wp_digit.shape == net.Wm_digit.shape == (20, 400)

    def test_uniform_variance(self):
        net = N.init_net(np.random.default_rng(0))
        for name, fan_in in (("W1", 1568), ("W2", 800), ("Wp", 600), ("Wm_digit", 400)):
            w = net.params[name]
            bound = 1 / math.sqrt(fan_in)
            assert np.abs(w).max() <= bound
            expected = (2 * bound) ** 2 / 12
            assert w.var() == pytest.approx(expected, rel=0.05)


class TestForward:
    def test_zero_net(self):
        tr = N.forward(N.zero_net(), np.ones(1568))
        for group in (tr.parity_goal, tr.parity_digit, tr.magnitude_goal,
                      tr.magnitude_digit, tr.digit):
            assert not group.any()

    def test_wrong_length(self):
        with pytest.raises(N.ShapeError):
            N.forward(mini_net(), np.ones(21))

    def test_matches_oracle(self):
        rng = np.random.default_rng(1)
        net = mini_net(1)
        x = rng.uniform(0, 1.7, size=20)
        tr = N.forward(net, x)
        ref = oracles.forward(net.params, x)
        for key in ("h1", "h2", "hp", "hm", "parity_goal", "parity_digit",
                    "magnitude_goal", "magnitude_digit", "digit"):
            np.testing.assert_allclose(getattr(tr, key), ref[key], rtol=1e-12, atol=1e-14)

    def test_averaging_identity(self):
        tr = N.forward(mini_net(2), np.random.default_rng(2).random((5, 20)))
        assert np.array_equal(tr.digit, (tr.parity_digit + tr.magnitude_digit) / 2)

    def test_hidden_nonnegative(self):
        tr = N.forward(mini_net(3), np.random.default_rng(3).random((8, 20)))
        for h in (tr.h1, tr.h2, tr.hp, tr.hm):
            assert h.min() >= 0

    def test_hidden_permutation_invariance(self):
        net = mini_net(5)
        x = np.random.default_rng(5).random(20)
        before = N.forward(net, x)
        perm = net.copy()
        i, j = 2, 7
        for key in ("W1", "b1"):
            perm.params[key][[i, j]] = perm.params[key][[j, i]]
        perm.params["W2"][:, [i, j]] = perm.params["W2"][:, [j, i]]
        after = N.forward(perm, x)
        np.testing.assert_allclose(after.digit, before.digit, rtol=1e-12)
        np.testing.assert_allclose(after.parity_goal, before.parity_goal, rtol=1e-12)

    def test_deterministic(self):
        net, x = mini_net(6), np.random.default_rng(6).random((3, 20))
        a, b = N.forward(net, x), N.forward(net, x)
        assert np.array_equal(a.digit, b.digit)


class TestLoss:
    def test_uniform_logits(self):
        net = N.zero_net(MINI)
        loss, _ = N.training_loss(N.forward(net, np.ones(20)), [[3, 8]])
        assert loss == pytest.approx(2 * math.log(10) + 4 * math.log(2), rel=1e-12)

    def test_confident_logits(self):
        net = N.zero_net(MINI)
        # biases alone encode labels (left 2, right 7): one-hot logits with margin 50
        for tag in ("p", "m"):
            b = net.params[f"b{tag}_digit"]
            b[2] = b[17] = 50.0
        net.params["bp_goal"][[0, 3]] = 50.0    # left even, right odd
        net.params["bm_goal"][[0, 3]] = 50.0    # left low, right high
        loss, _ = N.training_loss(N.forward(net, np.ones(20)), [[2, 7]])
        assert loss < 1e-18

    def test_decomposition(self):
        rng = np.random.default_rng(7)
        net = mini_net(7)
        x, labels = random_case(rng, batch=1)
        terms = N.loss_terms(N.forward(net, x), labels)
        assert len(terms) == 6
        total = N.training_loss(N.forward(net, x), labels)[0]
        assert abs(total - sum(float(t[0]) for t in terms.values())) <= 1e-12
        ref = oracles.loss(net.params, x[0], *labels[0])
        assert total == pytest.approx(ref, rel=1e-12)

    def test_batch_mean(self):
        rng = np.random.default_rng(8)
        net = mini_net(8)
        x, labels = random_case(rng, batch=4)
        per = [oracles.loss(net.params, x[i], *labels[i]) for i in range(4)]
        assert total_loss(net, x, labels) == pytest.approx(np.mean(per), rel=1e-12)


class TestBackward:
    def test_zero_seeds(self):
        net = mini_net(9)
        tr = N.forward(net, np.random.default_rng(9).random((2, 20)))
        zeros = {"parity_goal": np.zeros((2, 4)), "magnitude_goal": np.zeros((2, 4)),
                 "parity_digit": np.zeros((2, 20)), "magnitude_digit": np.zeros((2, 20))}
        for g in N.backward(net, tr, zeros).values():
            assert not g.any()

    def test_dead_unit_gets_no_gradient(self):
        net = mini_net(10)
        net.params["b1"][4] = -1e3
        x, labels = random_case(np.random.default_rng(10), batch=3)
        tr = N.forward(net, x)
        g = N.backward(net, tr, N.training_loss(tr, labels)[1])
        assert not g["W1"][4].any() and g["b1"][4] == 0

    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        net = mini_net(100 + seed)
        x, labels = random_case(rng, batch=2)
        tr = N.forward(net, x)
        grads = N.backward(net, tr, N.training_loss(tr, labels)[1])
        for name in N.PARAM_NAMES:
            err = relative_error(grads[name], fd_gradient(net, name, x, labels))
            assert err < 1e-4, (name, err)

    def test_digit_gradient_split(self):
        net = mini_net(11)
        x, labels = random_case(np.random.default_rng(11), batch=2)
        _, seeds = N.training_loss(N.forward(net, x), labels)
        assert np.array_equal(seeds["parity_digit"], seeds["magnitude_digit"])


class TestTrain:
    def toy(self, n=200, seed=0):
        rng = np.random.default_rng(seed)
        labels = np.arange(n) % 10
        return Dataset(rng.random((n, 784)) * 0.3 + labels[:, None] / 10, labels)

    def test_zero_steps(self):
        net = N.init_net(np.random.default_rng(0), (1568, 16, 12, 8))
        before = net.copy()
        N.train(net, self.toy(), None, N.TrainConfig(steps=0), np.random.default_rng(1))
        for k in N.PARAM_NAMES:
            assert np.array_equal(net.params[k], before.params[k])
        assert net.step == 0

    def test_loss_improves(self):
        data = self.toy()
        held_out = mnist.make_test_batch(data, np.random.default_rng(5), 200)
        net = N.init_net(np.random.default_rng(0), (1568, 32, 24, 16))
        cfg = N.TrainConfig(steps=200, batch=32, eval_interval=200)
        _, rows = N.train(net, data, held_out, cfg, np.random.default_rng(1))
        assert [r["step"] for r in rows] == [0, 200]
        assert rows[-1]["loss"] < rows[0]["loss"]
        assert net.step == 200

    def test_eval_csv(self):
        rows = [{"step": 0, "digit_acc_left": 0.1, "digit_acc_right": 0.2,
                 "parity_acc": 0.5, "magnitude_acc": 0.5, "loss": 7.0}]
        text = N.eval_rows_csv(rows)
        lines = text.splitlines()
        assert lines[0].startswith("#")
        assert lines[1] == ",".join(N.EVAL_FIELDS)
        assert lines[2].startswith("0,0.100000")


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = mini_net(12)
        net.step, net.seed = 77, 2**63 + 5
        path = tmp_path / "ck.bin"
        N.save_checkpoint(net, path)
        back = N.load_checkpoint(path)
        assert back.sizes == MINI and back.step == 77 and back.seed == 2**63 + 5
        x = np.random.default_rng(12).random((4, 20))
        assert np.array_equal(N.forward(back, x).digit, N.forward(net, x).digit)
        assert N.checkpoint_bytes(back) == path.read_bytes()

    def test_layout(self):
        raw = N.checkpoint_bytes(mini_net(13))
        assert raw[:5] == b"CEBNM"
        assert int.from_bytes(raw[5:7], "little") == N.FORMAT_VERSION
        n_params = sum(int(np.prod(s)) for s in N.param_shapes(MINI).values())
        assert len(raw) == 5 + 2 + 4 + 6 * 4 + 8 * n_params + 16

    @pytest.mark.parametrize("cut", [3, 9, 40, -1])
    def test_truncated(self, tmp_path, cut):
        raw = N.checkpoint_bytes(mini_net(14))
        path = tmp_path / "bad.bin"
        path.write_bytes(raw[:cut])
        with pytest.raises(N.CheckpointError):
            N.load_checkpoint(path)

    def test_version_mismatch(self):
        raw = bytearray(N.checkpoint_bytes(mini_net(15)))
        raw[5] = 99
        with pytest.raises(N.CheckpointError) as err:
            N.parse_checkpoint(bytes(raw))
        assert err.value.field == "version"

    def test_architecture_mismatch(self):
        raw = N.checkpoint_bytes(mini_net(16))
        with pytest.raises(N.CheckpointError) as err:
            N.parse_checkpoint(raw, expect_sizes=N.DEFAULT_SIZES)
        assert err.value.field == "architecture"

    def test_trailing_garbage(self):
        with pytest.raises(N.CheckpointError, match="trailing"):
            N.parse_checkpoint(N.checkpoint_bytes(mini_net(17)) + b"x")
