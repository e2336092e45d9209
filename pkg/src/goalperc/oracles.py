"""Slow reference implementations used to cross-check the vectorised code.

Everything here is written with explicit Python loops over scalars and
shares no code with ``net`` or ``attention``. Only use it on tiny nets.
"""

import math

from .mnist import GoalId


def _matvec(w, x):
    return [sum(w[i][j] * x[j] for j in range(len(x))) for i in range(len(w))]


def _affine(w, b, x):
    return [v + b[i] for i, v in enumerate(_matvec(w, x))]


def _relu(v):
    return [a if a > 0 else 0.0 for a in v]


def forward(params, x):
    """Dict of plain lists: h1, h2, hp, hm and the four logit groups."""
    p = {k: v.tolist() for k, v in params.items()}
    x = list(map(float, x))
    h1 = _relu(_affine(p["W1"], p["b1"], x))
    h2 = _relu(_affine(p["W2"], p["b2"], h1))
    hp = _relu(_affine(p["Wp"], p["bp"], h2))
    hm = _relu(_affine(p["Wm"], p["bm"], h2))
    out = {"x": x, "h1": h1, "h2": h2, "hp": hp, "hm": hm,
           "parity_goal": _affine(p["Wp_goal"], p["bp_goal"], hp),
           "parity_digit": _affine(p["Wp_digit"], p["bp_digit"], hp),
           "magnitude_goal": _affine(p["Wm_goal"], p["bm_goal"], hm),
           "magnitude_digit": _affine(p["Wm_digit"], p["bm_digit"], hm)}
    out["digit"] = [(a + b) / 2 for a, b in zip(out["parity_digit"], out["magnitude_digit"])]
    return out


def _nll(logits, target):
    m = max(logits)
    lse = m + math.log(sum(math.exp(v - m) for v in logits))
    return lse - logits[target]


def loss(params, x, left, right):
    """Sum of the six NLL terms for one pair."""
    f = forward(params, x)
    total = 0.0
    for s, d in enumerate((left, right)):
        total += _nll(f["digit"][10 * s:10 * s + 10], d)
        total += _nll(f["parity_goal"][2 * s:2 * s + 2], d % 2)
        total += _nll(f["magnitude_goal"][2 * s:2 * s + 2], int(d >= 5))
    return total


def eb_step(parent, w, acts):
    """One EB layer, parent by parent."""
    child = [0.0] * len(acts)
    for i, p in enumerate(parent):
        contrib = [acts[j] * max(w[i][j], 0.0) for j in range(len(acts))]
        z = sum(contrib)
        if z > 0:
            for j in range(len(acts)):
                child[j] += p * contrib[j] / z
    return child


def ceb(params, x, goal):
    """Contrastive EB map for one input, straight from the definitions."""
    goal = GoalId(goal)
    f = forward(params, x)
    tag = "p" if goal in (GoalId.EVEN, GoalId.ODD) else "m"
    hidden = f["hp"] if tag == "p" else f["hm"]
    w_goal = params[f"W{tag}_goal"].tolist()
    bit = int(goal) % 2
    seed_goal = [0.5 if k % 2 == bit else 0.0 for k in range(4)]
    seed_contrast = [0.5 if k % 2 != bit else 0.0 for k in range(4)]
    exc = eb_step(seed_goal, w_goal, hidden)
    inh = eb_step(seed_contrast, w_goal, hidden)
    signal = [e - i for e, i in zip(exc, inh)]
    signal = eb_step(signal, params[f"W{tag}"].tolist(), f["h2"])
    signal = eb_step(signal, params["W2"].tolist(), f["h1"])
    signal = eb_step(signal, params["W1"].tolist(), f["x"])
    return [max(v, 0.0) for v in signal]


def adam_scalar(grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, theta=0.0):
    """Trajectory of a scalar parameter under Adam for a gradient sequence."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta -= lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out


def matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))]
            for i in range(len(a))]
