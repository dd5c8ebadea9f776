"""
Reverse-mode tape in action
===========================

Builds a small attention-shaped graph on the Tape, runs backward, and
verifies the gradients against central finite differences. The same
machinery differentiates the full grounding model.
"""

import numpy as np

from vglab.autodiff import Tape, finite_diff_check

rng = np.random.default_rng(0)
x0 = rng.standard_normal((5, 8))
wq0 = rng.standard_normal((8, 8)) * 0.5
wv0 = rng.standard_normal((8, 8)) * 0.5


def build(tape, x, wq, wv):
    h = tape.layer_norm(x)
    q = tape.matmul(h, wq)
    scores = tape.scale(tape.matmul(q, tape.transpose(q)), 1 / np.sqrt(8))
    attn = tape.softmax_rows(scores)
    return tape.add(x, tape.matmul(attn, tape.matmul(h, wv)))


tape = Tape()
out = build(tape, tape.param("x", x0), tape.param("wq", wq0), tape.param("wv", wv0))
seed = np.ones_like(out.value)  # d(sum of outputs)/d(out)
grads = tape.backward(out, seed)
print("gradient shapes:", {k: v.shape for k, v in grads.items()})


def loss_at(vec):
    arrays = {
        "x": vec[: x0.size].reshape(x0.shape),
        "wq": vec[x0.size : x0.size + wq0.size].reshape(wq0.shape),
        "wv": vec[x0.size + wq0.size :].reshape(wv0.shape),
    }
    t = Tape()
    o = build(t, t.param("x", arrays["x"]), t.param("wq", arrays["wq"]),
              t.param("wv", arrays["wv"]))
    return float(o.value.sum())


point = np.concatenate([x0.ravel(), wq0.ravel(), wv0.ravel()])
analytic = np.concatenate([grads["x"].ravel(), grads["wq"].ravel(), grads["wv"].ravel()])
err = finite_diff_check(loss_at, point, analytic, eps=1e-6)
print(f"max relative error vs central differences: {err:.2e}")

# Double backward on one tape is rejected: a tape is single-use.
try:
    tape.backward(out, seed)
except RuntimeError as e:
    print("second backward:", e)
