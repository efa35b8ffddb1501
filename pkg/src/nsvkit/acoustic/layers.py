"""Differentiable building blocks with hand-written backward passes.

Everything operates on float64 arrays shaped (frames, channels). Each
forward returns (output, cache); the matching backward consumes the cache
and the upstream gradient and returns input/parameter gradients. Gradients
are exact, which tests verify against central finite differences.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

LN_EPS = 1e-5


# -- linear ----------------------------------------------------------------

def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(dy, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


# -- dilated 1-D convolution (same padding, odd kernel) ----------------------

def conv1d_forward(x, w, b, dilation: int):
    """x: (T, C_in); w: (k*C_in, C_out) laid out tap-major; zero padding."""
    t, c_in = x.shape
    k = w.shape[0] // c_in
    pad = dilation * (k - 1) // 2
    xp = np.pad(x, ((pad, pad), (0, 0)))
    cols = np.concatenate([xp[j * dilation:j * dilation + t] for j in range(k)], axis=1)
    return cols @ w + b, (cols, w, x.shape, dilation, k)


def conv1d_backward(dy, cache):
    cols, w, x_shape, dilation, k = cache
    t, c_in = x_shape
    pad = dilation * (k - 1) // 2
    dcols = dy @ w.T
    dxp = np.zeros((t + 2 * pad, c_in))
    for j in range(k):
        dxp[j * dilation:j * dilation + t] += dcols[:, j * c_in:(j + 1) * c_in]
    dw = cols.T @ dy
    return dxp[pad:pad + t], dw, dy.sum(axis=0)


# -- layer normalization over channels ---------------------------------------

def layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    c = xhat.shape[-1]
    dxhat = dy * gain
    dx = (inv / c) * (c * dxhat
                      - dxhat.sum(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


# -- activations --------------------------------------------------------------

def gelu_forward(x):
    phi = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return x * phi, (x, phi)


def gelu_backward(dy, cache):
    x, phi = cache
    pdf = np.exp(-0.5 * x ** 2) / np.sqrt(2.0 * np.pi)
    return dy * (phi + x * pdf)


def sigmoid_forward(x):
    y = expit(x)
    return y, y


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


# -- dropout (inverted scaling; identity when rng is None or rate 0) -----------

def dropout_forward(x, rate: float, rng):
    if rng is None or rate <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# -- embedding lookup ----------------------------------------------------------

def embedding_forward(table, idx):
    return table[idx], (table.shape, idx)


def embedding_backward(dy, cache):
    shape, idx = cache
    dtable = np.zeros(shape)
    np.add.at(dtable, idx, dy)
    return dtable


# -- length regulation (row repetition) ----------------------------------------

def repeat_forward(x, durations):
    return np.repeat(x, durations, axis=0), durations


def repeat_backward(dy, durations):
    if len(durations) == 0:
        return dy[:0]
    offsets = np.concatenate([[0], np.cumsum(durations)[:-1]])
    return np.add.reduceat(dy, offsets, axis=0)
