"""Excitation backprop (EB) and its contrastive variant over a ``DenseNet``.

Winning probabilities flow top-down through positive weights only, split
in proportion to ``child_activation * max(w, 0)``. For a goal, the
excitatory signal starts with mass 1/2 on each of the goal's two side
neurons in its head, and the inhibitory signal starts the same way on the
contrast subgoal's neurons. Both are pushed one layer down to the head's
hidden layer and subtracted. The signed difference then travels through
the remaining layers by the same (linear) EB rule, so features shared by
goal and contrast cancel before reaching the pixels; only the positive
part of the pixel-level signal is kept. Biases carry no probability.

All functions accept a single sample or a leading batch axis.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import mnist
from .mnist import GoalId
from .net import forward


def eb_layer(parent_probs, weights, child_acts):
    """Redistribute parent winning probabilities onto the child layer.

    ``weights`` is ``(n_parent, n_child)``. Parents whose normaliser
    ``sum_j child_acts[j] * max(w_ij, 0)`` is zero pass nothing on. The
    rule is linear in ``parent_probs``, which may therefore be a signed
    contrastive signal.
    """
    child_acts = np.asarray(child_acts, dtype=np.float64)
    parent_probs = np.asarray(parent_probs, dtype=np.float64)
    if np.any(child_acts < 0):
        raise ValueError("EB needs nonnegative child activations")
    w_pos = np.maximum(weights, 0.0)
    z = child_acts @ w_pos.T
    ratio = np.divide(parent_probs, z, out=np.zeros(np.broadcast(parent_probs, z).shape),
                      where=z > 0)
    return child_acts * (ratio @ w_pos)


def goal_seed(goal, batch_shape=()):
    """Mass 1/2 on the goal's left and right neurons of its head."""
    goal = GoalId(goal)
    seed = np.zeros(batch_shape + (4,))
    seed[..., goal % 2] = 0.5
    seed[..., 2 + goal % 2] = 0.5
    return seed


@dataclass
class TopSignal:
    excitatory: np.ndarray
    inhibitory: np.ndarray
    combined: np.ndarray  # signed, excitatory - inhibitory
    degenerate: np.ndarray  # bool, True where nothing positive survives


def contrastive_top(net, trace, goal):
    goal = GoalId(goal)
    _, _, w_goal, _, _, _ = net.head(goal.goal_class)
    acts = trace.hidden(goal.goal_class)
    batch = acts.shape[:-1]
    exc = eb_layer(goal_seed(goal, batch), w_goal, acts)
    inh = eb_layer(goal_seed(goal.complement, batch), w_goal, acts)
    combined = exc - inh
    return TopSignal(exc, inh, combined, ~np.any(combined > 0, axis=-1))


@dataclass
class AttentionMap:
    probs: np.ndarray
    goal: GoalId
    degenerate: bool = False

    def grid(self):
        return to_grid(self.probs)

    def left_mass_fraction(self):
        total = self.probs.sum()
        return float(self.probs[:mnist.PIXELS].sum() / total) if total > 0 else 0.5


def propagate(net, signal, trace, goal_class):
    """EB from the head's hidden layer down to the input pixels."""
    p = eb_layer(signal, net.head(goal_class)[0], trace.h2)
    p = eb_layer(p, net.params["W2"], trace.h1)
    return eb_layer(p, net.params["W1"], trace.x)


def eb_probs(net, trace, goal):
    """Plain (non-contrastive) EB from the goal's two neurons to the pixels."""
    goal = GoalId(goal)
    w_goal = net.head(goal.goal_class)[2]
    acts = trace.hidden(goal.goal_class)
    top = eb_layer(goal_seed(goal, acts.shape[:-1]), w_goal, acts)
    return propagate(net, top, trace, goal.goal_class)


def ceb_probs(net, trace, goal):
    """Attention over input pixels as a raw array, plus the degenerate flags."""
    goal = GoalId(goal)
    top = contrastive_top(net, trace, goal)
    p = np.maximum(propagate(net, top.combined, trace, goal.goal_class), 0.0)
    return p, top.degenerate | ~np.any(p > 0, axis=-1)


def ceb_attention(net, trace, goal):
    """c-EB attention map for a single forward trace."""
    probs, degenerate = ceb_probs(net, trace, goal)
    if probs.ndim != 1:
        raise ValueError("ceb_attention takes a single-sample trace; use ceb_probs for batches")
    degenerate = bool(degenerate)
    if degenerate:
        warnings.warn(f"degenerate attention for goal {GoalId(goal).name}", stacklevel=2)
    return AttentionMap(probs, GoalId(goal), degenerate)


def apply_mask(inputs, probs):
    """Scale each pixel by its attention relative to the map maximum."""
    inputs = np.asarray(inputs, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    peak = probs.max(axis=-1, keepdims=True)
    scale = np.divide(probs, peak, out=np.zeros_like(probs), where=peak > 0)
    return inputs * scale


@dataclass
class GoalPrediction:
    predicted_digit: int
    predicted_side: mnist.Side
    predicted_subgoal: GoalId
    attention: AttentionMap


@dataclass
class BatchPrediction:
    digit: np.ndarray
    side: np.ndarray
    subgoal: np.ndarray
    degenerate: np.ndarray


def predict_batch(net, inputs, goal, chunk=500):
    """Goal-directed prediction for a stack of pair inputs (one goal for all)."""
    goal = GoalId(goal)
    inputs = np.atleast_2d(inputs)
    out = [[], [], [], []]
    for lo in range(0, len(inputs), chunk):
        x = inputs[lo:lo + chunk]
        probs, degenerate = ceb_probs(net, forward(net, x), goal)
        digit, side, subgoal = _readout(forward(net, apply_mask(x, probs)), goal.goal_class)
        for acc, v in zip(out, (digit, side, subgoal, degenerate)):
            acc.append(v)
    return BatchPrediction(*(np.concatenate(v) for v in out))


def _readout(trace, goal_class):
    digit_logits = np.atleast_2d(trace.digit_logits(goal_class))
    goal_logits = np.atleast_2d(trace.goal_logits(goal_class))
    best = np.argmax(digit_logits, axis=-1)
    side = best // 10
    rows = np.arange(len(side))
    bit = (goal_logits[rows, 2 * side + 1] > goal_logits[rows, 2 * side]).astype(np.int64)
    return best % 10, side, 2 * int(goal_class) + bit


def predict_with_goal(net, pair, goal):
    goal = GoalId(goal)
    x = np.atleast_2d(pair.input)
    probs, degenerate = ceb_probs(net, forward(net, x), goal)
    attention = AttentionMap(probs[0], goal, bool(degenerate[0]))
    if attention.degenerate:
        warnings.warn(f"degenerate attention for goal {goal.name}", stacklevel=2)
    trace = forward(net, apply_mask(x, probs))
    digit, side, subgoal = _readout(trace, goal.goal_class)
    return GoalPrediction(int(digit[0]), mnist.Side(int(side[0])), GoalId(int(subgoal[0])),
                          attention)


def evaluate_goal_task(net, pairs, goal, prediction=None):
    """Digit and subgoal accuracy of goal-directed prediction on test pairs."""
    goal = GoalId(goal)
    if prediction is None:
        prediction = predict_batch(net, pairs.inputs, goal)
    target, _ = mnist.goal_digits(pairs.labels, goal)
    return {
        "digit_accuracy": float(np.mean(prediction.digit == target)),
        "goal_accuracy": float(np.mean(prediction.subgoal == int(goal))),
        "degenerate": int(np.sum(prediction.degenerate)),
    }


def to_grid(vec):
    """1568 pair values -> 28x56 image, left digit in columns 0-27."""
    vec = np.asarray(vec).reshape(2, mnist.ROWS, mnist.COLS)
    return np.concatenate([vec[0], vec[1]], axis=1)
