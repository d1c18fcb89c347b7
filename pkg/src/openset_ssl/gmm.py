"""Gaussian mixture fitting by EM, in the log domain.

Covariances are stored per component either as a diagonal (``cov_type="diag"``,
shape (K, D)) or as full matrices (``cov_type="full"``, shape (K, D, D)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import kernels
from .errors import NumericError, OpenSetError, ValidationError

LOG_2PI = np.log(2.0 * np.pi)
EMPTY_COMPONENT_MASS = 1e-8


class DegenerateInputError(OpenSetError, ArithmeticError):
    pass


@dataclass
class GmmModel:
    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    cov_type: str = "diag"
    log_likelihood_trace: list = field(default_factory=list)
    converged: bool = False
    config: dict = field(default_factory=dict)

    @property
    def n_components(self):
        return self.means.shape[0]

    def to_dict(self):
        return {
            "n_components": int(self.n_components),
            "cov_type": self.cov_type,
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "log_likelihood_trace": [float(x) for x in self.log_likelihood_trace],
            "converged": bool(self.converged),
            "config": dict(self.config),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            priors=np.array(d["priors"], dtype=np.float64),
            means=np.array(d["means"], dtype=np.float64),
            covariances=np.array(d["covariances"], dtype=np.float64),
            cov_type=d["cov_type"],
            log_likelihood_trace=list(d.get("log_likelihood_trace", [])),
            converged=bool(d.get("converged", False)),
            config=dict(d.get("config", {})),
        )


def _cholesky(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericError("covariance is not positive definite") from None


def log_gaussian_pdf(z, mean, cov) -> float:
    """Log density of N(mean, cov) at z; 1-D ``cov`` is read as a diagonal."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.asarray(cov, dtype=np.float64)
    d = z.shape[0]
    diff = z - mean
    if cov.ndim <= 1:
        var = np.broadcast_to(cov, (d,))
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise NumericError("diagonal covariance must be positive and finite")
        return float(-0.5 * (d * LOG_2PI + np.sum(np.log(var)) + np.sum(diff * diff / var)))
    L = _cholesky(cov)
    sol = solve_triangular(L, diff, lower=True)
    return float(-0.5 * (d * LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + sol @ sol))


def component_log_prob(model: GmmModel, X) -> np.ndarray:
    """(n, K) matrix of ``log pi_k + log N(x_i; mu_k, Sigma_k)``."""
    X = np.asarray(X, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.priors)
    if model.cov_type == "diag":
        if np.any(model.covariances <= 0):
            raise NumericError("diagonal covariance must be positive")
        return kernels.diag_log_prob(X, model.means, model.covariances, log_pi)
    n, d = X.shape
    out = np.empty((n, model.n_components))
    for k in range(model.n_components):
        L = _cholesky(model.covariances[k])
        sol = solve_triangular(L, (X - model.means[k]).T, lower=True)
        out[:, k] = log_pi[k] - 0.5 * (d * LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + np.sum(sol * sol, axis=0))
    return out


def _e_step(model, X):
    logp = component_log_prob(model, X)
    sample_ll = logsumexp(logp, axis=1)
    bad = ~np.isfinite(sample_ll)
    if np.any(bad):
        raise DegenerateInputError(f"{int(bad.sum())} sample(s) have zero density under every component")
    resp = np.exp(logp - sample_ll[:, None])
    return resp, sample_ll


def e_step(model: GmmModel, X) -> np.ndarray:
    """Responsibilities (posterior component memberships), rows sum to 1."""
    return _e_step(model, X)[0]


def m_step(X, resp, cov_type="diag", reg_covar=1e-6, sample_loglik=None):
    """Weighted MLE of (priors, means, covariances) plus a covariance floor.

    Components whose total responsibility is below 1e-8 are re-seeded at the
    samples with the lowest log-likelihood (or, without ``sample_loglik``,
    the samples farthest from the data mean), one distinct sample each.
    """
    X = np.asarray(X, dtype=np.float64)
    resp = np.asarray(resp, dtype=np.float64)
    n, d = X.shape
    K = resp.shape[1]
    nk = resp.sum(axis=0)
    empty = np.flatnonzero(nk < EMPTY_COMPONENT_MASS)
    means = np.zeros((K, d))
    full_k = nk >= EMPTY_COMPONENT_MASS
    means[full_k] = (resp[:, full_k].T @ X) / nk[full_k, None]
    if cov_type == "diag":
        covs = np.empty((K, d))
    elif cov_type == "full":
        covs = np.empty((K, d, d))
    else:
        raise ValidationError(f"unknown cov_type {cov_type!r}")
    for k in np.flatnonzero(full_k):
        diff = X - means[k]
        w = resp[:, k]
        if cov_type == "diag":
            covs[k] = (w @ (diff * diff)) / nk[k] + reg_covar
        else:
            covs[k] = (diff.T * w) @ diff / nk[k] + reg_covar * np.eye(d)
    priors = nk / n
    if empty.size:
        if sample_loglik is not None:
            order = np.argsort(np.asarray(sample_loglik), kind="stable")
        else:
            order = np.argsort(-np.sum((X - X.mean(axis=0)) ** 2, axis=1), kind="stable")
        global_var = X.var(axis=0) + reg_covar
        for k, i in zip(empty, order):
            means[k] = X[i]
            covs[k] = global_var if cov_type == "diag" else np.diag(global_var)
            priors[k] = 1.0 / n
    priors = priors / priors.sum()
    return priors, means, covs


def kmeans_pp_seeds(X, k, rng) -> np.ndarray:
    """Indices of k seeds by D^2 sampling (first seed uniform)."""
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every point coincides with a seed; take unused indices in order
            nxt = next(i for i in range(n) if i not in idx)
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return np.array(idx)


def _fit_once(X, K, rng, max_iter, tol, cov_type, reg_covar):
    seeds = X[kmeans_pp_seeds(X, K, rng)]
    # initial hard assignment to the nearest seed, then one M-step
    d2 = np.sum((X[:, None, :] - seeds[None, :, :]) ** 2, axis=2)
    resp = np.zeros((X.shape[0], K))
    resp[np.arange(X.shape[0]), np.argmin(d2, axis=1)] = 1.0
    priors, means, covs = m_step(X, resp, cov_type, reg_covar)
    model = GmmModel(priors, means, covs, cov_type)
    trace = []
    for _ in range(max_iter):
        resp, sample_ll = _e_step(model, X)
        ll = float(sample_ll.sum())
        trace.append(ll)
        if len(trace) > 1 and abs(ll - trace[-2]) < tol * abs(ll):
            model.converged = True
            break
        model.priors, model.means, model.covariances = m_step(X, resp, cov_type, reg_covar, sample_ll)
    else:
        # the last M-step has not been scored yet
        _, sample_ll = _e_step(model, X)
        trace.append(float(sample_ll.sum()))
    model.log_likelihood_trace = trace
    return model


def fit_em(
    X,
    n_components,
    max_iter=500,
    tol=1e-6,
    n_restarts=5,
    seed=0,
    cov_type="diag",
    reg_covar=1e-6,
) -> GmmModel:
    """Fit a GMM by EM; keep the restart with the highest final log-likelihood."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("X must be a 2-D array")
    if n_components < 1:
        raise ValidationError("n_components must be >= 1")
    if X.shape[0] < n_components:
        raise ValidationError(f"{X.shape[0]} samples cannot support {n_components} components")
    if n_restarts < 1:
        raise ValidationError("n_restarts must be >= 1")
    best = None
    for rng in np.random.default_rng(seed).spawn(n_restarts):
        model = _fit_once(X, n_components, rng, max_iter, tol, cov_type, reg_covar)
        if best is None or model.log_likelihood_trace[-1] > best.log_likelihood_trace[-1]:
            best = model
    best.config = {
        "n_components": int(n_components),
        "max_iter": int(max_iter),
        "tol": float(tol),
        "n_restarts": int(n_restarts),
        "seed": int(seed),
        "cov_type": cov_type,
        "reg_covar": float(reg_covar),
    }
    return best


def log_likelihood(model: GmmModel, X) -> float:
    return float(_e_step(model, X)[1].sum())
