"""Two-head dense classifier for noisy digit pairs.

Topology (default sizes)::

    x[1568] -> h1[800] -> h2[600] -+-> hp[400] -> parity goal[4], parity digit[20]
                                   +-> hm[400] -> magnitude goal[4], magnitude digit[20]

Goal neuron ``k`` of either head belongs to side ``k // 2`` (0 = left) and
subgoal ``k % 2``: (even, odd) on the parity head, (low, high) on the
magnitude head. This is the same bit as ``GoalId % 2``. Digit neuron ``k``
is digit ``k % 10`` on side ``k // 10``. The digit prediction used for
training is the mean of both heads' digit logits.
"""

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mnist
from .tensor import Adam, ShapeError, log_softmax, matmul, relu

GOAL_UNITS = 4
DIGIT_UNITS = 20
DEFAULT_SIZES = (mnist.PAIR_SIZE, 800, 600, 400)

# Declaration order; fixes checkpoint layout.
PARAM_NAMES = (
    "W1", "b1", "W2", "b2",
    "Wp", "bp", "Wm", "bm",
    "Wp_goal", "bp_goal", "Wp_digit", "bp_digit",
    "Wm_goal", "bm_goal", "Wm_digit", "bm_digit",
)


def param_shapes(sizes):
    n_in, n1, n2, nb = sizes
    return {
        "W1": (n1, n_in), "b1": (n1,),
        "W2": (n2, n1), "b2": (n2,),
        "Wp": (nb, n2), "bp": (nb,),
        "Wm": (nb, n2), "bm": (nb,),
        "Wp_goal": (GOAL_UNITS, nb), "bp_goal": (GOAL_UNITS,),
        "Wp_digit": (DIGIT_UNITS, nb), "bp_digit": (DIGIT_UNITS,),
        "Wm_goal": (GOAL_UNITS, nb), "bm_goal": (GOAL_UNITS,),
        "Wm_digit": (DIGIT_UNITS, nb), "bm_digit": (DIGIT_UNITS,),
    }


def _fan_in(name, sizes):
    shapes = param_shapes(sizes)
    weight = "W" + name[1:] if name.startswith("b") else name
    return shapes[weight][1]


@dataclass
class DenseNet:
    sizes: tuple
    params: dict
    step: int = 0
    seed: int = 0

    def __getattr__(self, name):
        params = self.__dict__.get("params")
        if params is not None and name in params:
            return params[name]
        raise AttributeError(name)

    def copy(self):
        return DenseNet(self.sizes, {k: v.copy() for k, v in self.params.items()},
                        self.step, self.seed)

    def head(self, goal_class):
        """``(W_hidden, b_hidden, W_goal, b_goal, W_digit, b_digit)`` for a goal class."""
        tag = "p" if goal_class == mnist.GoalClass.PARITY else "m"
        p = self.params
        return (p[f"W{tag}"], p[f"b{tag}"], p[f"W{tag}_goal"], p[f"b{tag}_goal"],
                p[f"W{tag}_digit"], p[f"b{tag}_digit"])


def init_net(rng, sizes=DEFAULT_SIZES, seed=0):
    """Every weight and bias ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    sizes = tuple(int(s) for s in sizes)
    params = {}
    for name, shape in param_shapes(sizes).items():
        bound = 1.0 / np.sqrt(_fan_in(name, sizes))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return DenseNet(sizes, params, step=0, seed=seed)


def zero_net(sizes=DEFAULT_SIZES):
    return DenseNet(tuple(sizes), {k: np.zeros(s) for k, s in param_shapes(sizes).items()})


@dataclass
class ForwardTrace:
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    zp: np.ndarray
    hp: np.ndarray
    zm: np.ndarray
    hm: np.ndarray
    parity_goal: np.ndarray
    parity_digit: np.ndarray
    magnitude_goal: np.ndarray
    magnitude_digit: np.ndarray
    digit: np.ndarray  # averaged digit logits

    def hidden(self, goal_class):
        return self.hp if goal_class == mnist.GoalClass.PARITY else self.hm

    def goal_logits(self, goal_class):
        return self.parity_goal if goal_class == mnist.GoalClass.PARITY else self.magnitude_goal

    def digit_logits(self, goal_class):
        return self.parity_digit if goal_class == mnist.GoalClass.PARITY else self.magnitude_digit


def _affine(x, w, b):
    return matmul(x, w.T) + b


def forward(net, x):
    """Forward pass on one input vector or a ``(batch, n_in)`` stack."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.sizes[0]:
        raise ShapeError(f"input has {x.shape[-1]} features, net expects {net.sizes[0]}")
    p = net.params
    z1 = _affine(x, p["W1"], p["b1"])
    h1 = relu(z1)
    z2 = _affine(h1, p["W2"], p["b2"])
    h2 = relu(z2)
    zp = _affine(h2, p["Wp"], p["bp"])
    hp = relu(zp)
    zm = _affine(h2, p["Wm"], p["bm"])
    hm = relu(zm)
    pd = _affine(hp, p["Wp_digit"], p["bp_digit"])
    md = _affine(hm, p["Wm_digit"], p["bm_digit"])
    return ForwardTrace(
        x=x, z1=z1, h1=h1, z2=z2, h2=h2, zp=zp, hp=hp, zm=zm, hm=hm,
        parity_goal=_affine(hp, p["Wp_goal"], p["bp_goal"]),
        parity_digit=pd,
        magnitude_goal=_affine(hm, p["Wm_goal"], p["bm_goal"]),
        magnitude_digit=md,
        digit=(pd + md) / 2.0,
    )


# -------------------------------------------------------------------- loss

def goal_targets(labels):
    """Per-side binary targets: parity bit and magnitude bit, each ``(n, 2)``."""
    labels = np.asarray(labels).reshape(-1, 2)
    return labels % 2, (labels >= 5).astype(np.int64)


def _side_log_probs(trace):
    """Log-softmax per side: digits ``(n, 2, 10)`` and goal pairs ``(n, 2, 2)`` each."""
    n = np.atleast_2d(trace.digit).shape[0]
    digit = log_softmax(np.reshape(trace.digit, (n, 2, 10)))
    par = log_softmax(np.reshape(trace.parity_goal, (n, 2, 2)))
    mag = log_softmax(np.reshape(trace.magnitude_goal, (n, 2, 2)))
    return digit, par, mag


def _pick(log_probs, target):
    return -np.take_along_axis(log_probs, target[..., None], axis=-1)[..., 0]


def loss_terms(trace, labels):
    """The six per-sample NLL terms, each an ``(n,)`` array.

    Keys: ``digit_left``, ``digit_right``, ``parity_left``, ``parity_right``,
    ``magnitude_left``, ``magnitude_right``.
    """
    labels = np.asarray(labels).reshape(-1, 2)
    if labels.min() < 0 or labels.max() > 9:
        raise IndexError("digit labels must lie in 0-9")
    par, mag = goal_targets(labels)
    lp_digit, lp_par, lp_mag = _side_log_probs(trace)
    per = {"digit": _pick(lp_digit, labels), "parity": _pick(lp_par, par),
           "magnitude": _pick(lp_mag, mag)}
    return {f"{k}_{side}": v[:, s] for k, v in per.items()
            for s, side in enumerate(("left", "right"))}


def total_loss(trace, labels):
    """Batch-mean of the summed six NLL terms (no gradients)."""
    return float(np.mean(sum(loss_terms(trace, labels).values())))


def training_loss(trace, labels):
    """Batch-mean of the summed six NLL terms, plus its logit gradients.

    Returns ``(loss, seeds)`` where ``seeds`` maps each output group
    (``parity_goal``, ``parity_digit``, ``magnitude_goal``,
    ``magnitude_digit``) to d(loss)/d(logits).
    """
    labels = np.asarray(labels).reshape(-1, 2)
    n = len(labels)
    loss = total_loss(trace, labels)
    par, mag = goal_targets(labels)
    grads = []
    for lp, target in zip(_side_log_probs(trace), (labels, par, mag)):
        g = np.exp(lp)
        np.put_along_axis(g, target[..., None],
                          np.take_along_axis(g, target[..., None], axis=-1) - 1.0, axis=-1)
        grads.append(g.reshape(n, -1) / n)
    d_digit, d_pg, d_mg = grads
    seeds = {
        "parity_goal": d_pg,
        "magnitude_goal": d_mg,
        # averaged logits: half of the gradient lands on each head
        "parity_digit": 0.5 * d_digit,
        "magnitude_digit": 0.5 * d_digit,
    }
    return loss, seeds


def backward(net, trace, seeds):
    """Parameter gradients given logit gradients from ``training_loss``."""
    p = net.params
    x = np.atleast_2d(trace.x)
    h1, h2 = np.atleast_2d(trace.h1), np.atleast_2d(trace.h2)
    hp, hm = np.atleast_2d(trace.hp), np.atleast_2d(trace.hm)
    z1, z2 = np.atleast_2d(trace.z1), np.atleast_2d(trace.z2)
    zp, zm = np.atleast_2d(trace.zp), np.atleast_2d(trace.zm)
    g = {}

    def head(tag, h, z, d_goal, d_digit):
        d_goal = np.atleast_2d(d_goal)
        d_digit = np.atleast_2d(d_digit)
        g[f"W{tag}_goal"] = d_goal.T @ h
        g[f"b{tag}_goal"] = d_goal.sum(axis=0)
        g[f"W{tag}_digit"] = d_digit.T @ h
        g[f"b{tag}_digit"] = d_digit.sum(axis=0)
        dh = d_goal @ p[f"W{tag}_goal"] + d_digit @ p[f"W{tag}_digit"]
        dz = dh * (z > 0)
        g[f"W{tag}"] = dz.T @ h2
        g[f"b{tag}"] = dz.sum(axis=0)
        return dz @ p[f"W{tag}"]

    dh2 = (head("p", hp, zp, seeds["parity_goal"], seeds["parity_digit"])
           + head("m", hm, zm, seeds["magnitude_goal"], seeds["magnitude_digit"]))
    dz2 = dh2 * (z2 > 0)
    g["W2"] = dz2.T @ h1
    g["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ p["W2"]) * (z1 > 0)
    g["W1"] = dz1.T @ x
    g["b1"] = dz1.sum(axis=0)
    return {name: g[name] for name in PARAM_NAMES}


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    steps: int = 4400
    batch: int = 256
    eval_interval: int = 200
    eval_size: int = 2000
    learning_rate: float = 1e-3


EVAL_FIELDS = ("step", "digit_acc_left", "digit_acc_right", "parity_acc",
               "magnitude_acc", "loss")


def plain_accuracy(net, batch, chunk=1000):
    """Accuracies without attention: digits from the averaged logits, goals per side."""
    digit_hits = np.zeros(2)
    par_hits = mag_hits = 0.0
    loss_sum = 0.0
    for lo in range(0, len(batch), chunk):
        inputs, labels = batch.inputs[lo:lo + chunk], batch.labels[lo:lo + chunk]
        tr = forward(net, inputs)
        loss_sum += float(np.sum(sum(loss_terms(tr, labels).values())))
        par, mag = goal_targets(labels)
        for s in (0, 1):
            digit_hits[s] += np.sum(np.argmax(tr.digit[:, 10 * s:10 * s + 10], axis=1)
                                    == labels[:, s])
            par_hits += np.sum(np.argmax(tr.parity_goal[:, 2 * s:2 * s + 2], axis=1)
                               == par[:, s])
            mag_hits += np.sum(np.argmax(tr.magnitude_goal[:, 2 * s:2 * s + 2], axis=1)
                               == mag[:, s])
    n = len(batch)
    return {
        "digit_acc_left": digit_hits[0] / n,
        "digit_acc_right": digit_hits[1] / n,
        "parity_acc": par_hits / (2 * n),
        "magnitude_acc": mag_hits / (2 * n),
        "loss": loss_sum / n,
    }


def train(net, train_set, eval_pairs, config, rng, log=None):
    """Adam on fresh noisy training batches; returns ``(net, eval_rows)``.

    ``eval_pairs`` is evaluated before the first step and then every
    ``config.eval_interval`` steps. ``net`` is updated in place.
    """
    opt = Adam(learning_rate=config.learning_rate)
    rows = []

    def evaluate():
        row = {"step": net.step, **plain_accuracy(net, eval_pairs)}
        rows.append(row)
        if log is not None:
            log(row)

    if eval_pairs is not None:
        evaluate()
    for _ in range(config.steps):
        batch = mnist.make_training_batch(train_set, rng, config.batch)
        trace = forward(net, batch.inputs)
        _, seeds = training_loss(trace, batch.labels)
        opt.step(net.params, backward(net, trace, seeds))
        net.step += 1
        if (eval_pairs is not None and config.eval_interval
                and net.step % config.eval_interval == 0):
            evaluate()
    return net, rows


def eval_rows_csv(rows):
    buf = io.StringIO()
    buf.write("# goalperc train-eval v1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_FIELDS)
    for r in rows:
        w.writerow([r["step"]] + [f"{r[k]:.6f}" for k in EVAL_FIELDS[1:]])
    return buf.getvalue()


# -------------------------------------------------------------- checkpoint

MAGIC = b"CEBNM"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"checkpoint {field_name}: {message}")
        self.field = field_name


def checkpoint_bytes(net):
    arch = list(net.sizes) + [GOAL_UNITS, DIGIT_UNITS]
    out = [MAGIC, struct.pack("<H", FORMAT_VERSION),
           struct.pack("<I", len(arch)), struct.pack(f"<{len(arch)}I", *arch)]
    shapes = param_shapes(net.sizes)
    for name in PARAM_NAMES:
        arr = net.params[name]
        if arr.shape != shapes[name]:
            raise CheckpointError(name, f"shape {arr.shape} != {shapes[name]}")
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    out.append(struct.pack("<QQ", net.step, net.seed))
    return b"".join(out)


def save_checkpoint(net, path):
    from .runio import atomic_write_bytes
    atomic_write_bytes(path, checkpoint_bytes(net))


def parse_checkpoint(buf, expect_sizes=None):
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(what, f"truncated at byte {pos} (need {n} more)")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("magic", "not a CEBNM checkpoint")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != FORMAT_VERSION:
        raise CheckpointError("version", f"unsupported version {version}")
    (n_arch,) = struct.unpack("<I", take(4, "architecture"))
    if n_arch != 6:
        raise CheckpointError("architecture", f"expected 6 layer sizes, got {n_arch}")
    arch = struct.unpack(f"<{n_arch}I", take(4 * n_arch, "architecture"))
    if tuple(arch[4:]) != (GOAL_UNITS, DIGIT_UNITS) or min(arch) == 0:
        raise CheckpointError("architecture", f"invalid head sizes in {arch}")
    sizes = tuple(arch[:4])
    if expect_sizes is not None and sizes != tuple(expect_sizes):
        raise CheckpointError("architecture", f"sizes {sizes} != expected {tuple(expect_sizes)}")
    params = {}
    for name, shape in param_shapes(sizes).items():
        n = int(np.prod(shape))
        params[name] = np.frombuffer(take(8 * n, name), dtype="<f8").astype(np.float64).reshape(shape)
    step, seed = struct.unpack("<QQ", take(16, "trailer"))
    if pos != len(buf):
        raise CheckpointError("trailer", f"{len(buf) - pos} unexpected trailing bytes")
    return DenseNet(sizes, {k: params[k] for k in PARAM_NAMES}, step=step, seed=seed)


def load_checkpoint(path, expect_sizes=None):
    return parse_checkpoint(Path(path).read_bytes(), expect_sizes)
