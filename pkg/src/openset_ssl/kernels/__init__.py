"""Hot-loop kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built; set
``OPENSET_SSL_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("OPENSET_SSL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _fast as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"


def alias_build(probs):
    """Return ``(prob, alias)`` Vose tables for normalized ``probs``."""
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("alias_build needs a non-empty 1-D probability vector")
    return _impl.alias_build(probs)


def alias_draw(prob, alias, u_slot, u_coin):
    """Map pairs of uniforms in [0, 1) to alias-table draws."""
    return _impl.alias_draw(
        np.ascontiguousarray(prob, dtype=np.float64),
        np.ascontiguousarray(alias, dtype=np.intp),
        np.ascontiguousarray(u_slot, dtype=np.float64),
        np.ascontiguousarray(u_coin, dtype=np.float64),
    )


def diag_log_prob(X, means, variances, log_weights=None):
    """Matrix of ``log_weights[k] + log N(X[i]; means[k], diag(variances[k]))``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    means = np.ascontiguousarray(means, dtype=np.float64)
    variances = np.ascontiguousarray(variances, dtype=np.float64)
    if log_weights is None:
        log_weights = np.zeros(means.shape[0])
    log_weights = np.ascontiguousarray(log_weights, dtype=np.float64)
    return _impl.diag_log_prob(X, means, variances, log_weights)
