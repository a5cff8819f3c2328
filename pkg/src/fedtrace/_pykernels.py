"""Pure-numpy kernels: reference implementation of the hot loops.

The compiled extension (fedtrace._kernels) mirrors these signatures. Within
one backend every function is deterministic. `weighted_sum_inplace` performs
the exact per-element float64 operation sequence (convert, multiply, add in
caller-supplied order) on both backends, which is what makes recorded global
models re-derivable bit-for-bit.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def forward_batch(X, weights, biases, capture_hidden=False):
    """Dense forward pass. Hidden layers are ReLU, the last layer is linear.

    Returns (logits, hiddens) where hiddens is a list of post-ReLU hidden
    activation matrices (one per hidden layer) or None.
    """
    A = X
    hiddens = [] if capture_hidden else None
    last = len(weights) - 1
    for l in range(last):
        A = np.maximum(A @ weights[l].T + biases[l], np.float32(0.0))
        if capture_hidden:
            hiddens.append(A)
    logits = A @ weights[last].T + biases[last]
    return logits, hiddens


def train_step(weights, biases, X, y, lr, weight_decay):
    """One minibatch SGD step on softmax cross-entropy; updates in place.

    Gradient of the mean batch loss, plus weight_decay * W on weight
    matrices (biases are not decayed). Returns the summed cross-entropy
    of the batch, measured before the update.
    """
    last = len(weights) - 1
    acts = [X]
    A = X
    for l in range(last):
        A = np.maximum(A @ weights[l].T + biases[l], np.float32(0.0))
        acts.append(A)
    logits = A @ weights[last].T + biases[last]

    m = logits.max(axis=1, keepdims=True)
    ex = np.exp((logits - m).astype(np.float64))
    denom = ex.sum(axis=1, keepdims=True)
    rows = np.arange(X.shape[0])
    logprob = (logits[rows, y] - m[:, 0]).astype(np.float64) - np.log(denom[:, 0])
    loss_sum = float(-logprob.sum())

    batch = np.float32(X.shape[0])
    G = (ex / denom).astype(np.float32)
    G[rows, y] -= np.float32(1.0)
    G /= batch

    lr32 = np.float32(lr)
    wd32 = np.float32(weight_decay)
    for l in range(last, -1, -1):
        A_prev = acts[l]
        dW = G.T @ A_prev
        if weight_decay != 0.0:
            dW += wd32 * weights[l]
        db = G.sum(axis=0)
        if l > 0:
            G = (G @ weights[l]) * (A_prev > 0)
        weights[l] -= lr32 * dW
        biases[l] -= lr32 * db
    return loss_sum


def weighted_sum_inplace(accumulators, params, w):
    """acc[j] += w * params[j] elementwise, float64 accumulation."""
    w64 = np.float64(w)
    for acc, p in zip(accumulators, params):
        acc += p.astype(np.float64) * w64
