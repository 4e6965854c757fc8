"""Numeric primitives with hand-written backward passes.

Everything runs in float64 so finite-difference checks against the
analytic gradients are meaningful. Each forward returns (output, cache);
the matching backward consumes the cache and the upstream gradient.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
LN_EPS = 1e-5


def linear_forward(x, w, b):
    """x (..., Din) @ w (Din, Dout) + b; cache keeps x for the backward."""
    return x @ w + b, x


def linear_backward(dy, cache, w):
    x = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def gelu_forward(x):
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * phi, (x, phi)


def gelu_backward(dy, cache):
    x, phi = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (phi + x * pdf)


def layer_norm_forward(x, gamma, beta, eps=LN_EPS):
    """Normalize over the last axis, then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def layer_norm_backward(dy, cache):
    xhat, inv, gamma = cache
    e = xhat.shape[-1]
    dxhat = dy * gamma
    # dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    return dx, dgamma, dbeta


def softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy, probs, axis=-1):
    inner = (dy * probs).sum(axis=axis, keepdims=True)
    return probs * (dy - inner)


def attention_forward(x, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Multi-head self-attention over x (B, L, E). Rows of the softmax
    attention matrix sum to 1 by construction."""
    b, l, e = x.shape
    dh = e // heads
    scale = 1.0 / np.sqrt(dh)

    def split(m):  # (B, L, E) -> (B, H, L, dh)
        return m.reshape(b, l, heads, dh).transpose(0, 2, 1, 3)

    q = split(x @ wq + bq)
    k = split(x @ wk + bk)
    v = split(x @ wv + bv)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    probs = softmax(scores, axis=-1)
    ctx = probs @ v  # (B, H, L, dh)
    merged = ctx.transpose(0, 2, 1, 3).reshape(b, l, e)
    out = merged @ wo + bo
    cache = (x, q, k, v, probs, merged, scale, heads)
    return out, probs, cache


def attention_backward(dy, cache, wq, wk, wv, wo):
    x, q, k, v, probs, merged, scale, heads = cache
    b, l, e = x.shape
    dh = e // heads

    merged2 = merged.reshape(-1, e)
    dy2 = dy.reshape(-1, e)
    dwo = merged2.T @ dy2
    dbo = dy2.sum(axis=0)
    dmerged = dy @ wo.T

    dctx = dmerged.reshape(b, l, heads, dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_backward(dprobs, probs) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    def merge(m):  # (B, H, L, dh) -> (B*L, E)
        return m.transpose(0, 2, 1, 3).reshape(-1, e)

    x2 = x.reshape(-1, e)
    dq2, dk2, dv2 = merge(dq), merge(dk), merge(dv)
    dwq, dbq = x2.T @ dq2, dq2.sum(axis=0)
    dwk, dbk = x2.T @ dk2, dk2.sum(axis=0)
    dwv, dbv = x2.T @ dv2, dv2.sum(axis=0)
    dx = (
        dq2.reshape(b, l, e) @ wq.T
        + dk2.reshape(b, l, e) @ wk.T
        + dv2.reshape(b, l, e) @ wv.T
    )
    grads = dict(
        wq=dwq, bq=dbq, wk=dwk, bk=dbk, wv=dwv, bv=dbv, wo=dwo, bo=dbo
    )
    return dx, grads


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def weighted_ce_loss_and_grad(logits, labels, class_weights=None):
    """Mean weighted cross-entropy over a batch, via log-sum-exp.

    loss_i = -w[y_i] * log softmax(logits_i)[y_i]; absent weights mean
    w = 1 for every class. Returns (loss, dloss/dlogits).
    """
    n = logits.shape[0]
    logp = log_softmax(logits)
    if class_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(class_weights, dtype=np.float64)[labels]
    per_sample = -w * logp[np.arange(n), labels]
    loss = per_sample.mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad *= (w / n)[:, None]
    return loss, grad
