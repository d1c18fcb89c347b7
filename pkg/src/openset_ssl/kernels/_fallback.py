"""Pure-Python/numpy versions of the compiled kernels.

Same operation order as ``_fast.pyx`` for the alias routines, so both
backends produce identical tables and draws.
"""

import numpy as np

LOG_2PI = 1.8378770664093453


def alias_build(probs):
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    n = probs.shape[0]
    prob = np.ones(n, dtype=np.float64)
    alias = np.arange(n, dtype=np.intp)
    scaled = [float(p) * n for p in probs]
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        l = small.pop()
        g = large.pop()
        prob[l] = scaled[l]
        alias[l] = g
        scaled[g] = (scaled[g] + scaled[l]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    return prob, alias


def alias_draw(prob, alias, u_slot, u_coin):
    n = prob.shape[0]
    k = np.minimum((np.asarray(u_slot) * n).astype(np.intp), n - 1)
    return np.where(np.asarray(u_coin) < prob[k], k, alias[k]).astype(np.intp)


def diag_log_prob(X, means, variances, log_weights, chunk=4096):
    n, d = X.shape
    inv = 1.0 / variances
    const = log_weights - 0.5 * (d * LOG_2PI + np.log(variances).sum(axis=1))
    out = np.empty((n, means.shape[0]))
    for start in range(0, n, chunk):
        diff = X[start:start + chunk, None, :] - means[None, :, :]
        out[start:start + chunk] = const - 0.5 * np.einsum("nkd,kd->nk", diff * diff, inv)
    return out
