"""Reference numpy implementation of the fused recurrent-cell kernels.

Gate layout along the 4H axis is (input, forget, output, candidate).
"""

import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(W, b, z, c_prev):
    """One LSTM cell step on the concatenated input ``z = [x; h_prev]``.

    Returns ``hc`` (the new hidden and cell state stacked into one vector of
    length 2H) plus the cache consumed by :func:`lstm_backward`.
    """
    H = c_prev.shape[0]
    pre = W @ z + b
    i = _sigmoid(pre[:H])
    f = _sigmoid(pre[H:2 * H])
    o = _sigmoid(pre[2 * H:3 * H])
    g = np.tanh(pre[3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    hc = np.concatenate([h, c])
    return hc, (i, f, o, g, tc, z, c_prev)


def lstm_infer(W, b, z, c_prev):
    """Forward pass without a cache, for inference loops."""
    hc, _ = lstm_forward(W, b, z, c_prev)
    return hc


def lstm_backward(W, cache, d_hc):
    """Gradients of an LSTM cell step.

    ``d_hc`` stacks the incoming gradients for h and c.  Returns
    ``(dW, db, dz, dc_prev)``.
    """
    i, f, o, g, tc, z, c_prev = cache
    H = c_prev.shape[0]
    dh = d_hc[:H]
    dc = d_hc[H:].copy()
    do = dh * tc
    dc += dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dpre = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        do * o * (1.0 - o),
        dg * (1.0 - g * g),
    ])
    dW = np.outer(dpre, z)
    dz = W.T @ dpre
    return dW, dpre, dz, dc_prev
