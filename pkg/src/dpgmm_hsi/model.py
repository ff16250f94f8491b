"""Diagonal-covariance Dirichlet-process Gaussian mixture: parameters and losses.

The training objective is the mixture negative log-likelihood of the pixels
plus negative log-priors on every parameter block::

    pi      ~ Dirichlet(alpha / K)
    alpha_j ~ InverseGamma(1, 1)
    mu_jd   ~ Normal(0, 1)
    var_jd  ~ InverseGamma(1, 1)

Optimization happens in an unconstrained space (softmax logits for the
weights, logs of variances and concentrations) so that every iterate is a
valid model.  Gradients are analytic.

Pixel loops are evaluated in fixed-size chunks whose partial sums are
reduced in chunk order, so results do not depend on the worker count.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from .hsi_io import BandStats

__all__ = [
    "ModelParams",
    "UnconstrainedParams",
    "constrain",
    "unconstrain",
    "component_log_densities",
    "log_mixture_likelihood",
    "data_nll",
    "prior_nll",
    "total_loss",
    "loss_gradient",
    "loss_and_gradient",
    "responsibilities",
    "predict",
    "save_model",
    "load_model",
    "PRIOR_FLOOR",
    "SCHEMA_VERSION",
]

LOG_2PI = math.log(2.0 * math.pi)
# smallest normal double: only guards log(0) at the simplex boundary
PRIOR_FLOOR = float(np.finfo(np.float64).tiny)
SCHEMA_VERSION = 1
CHUNK = 2048


@dataclass(frozen=True)
class ModelParams:
    """Constrained mixture parameters (weights, means, variances, concentrations)."""

    pi: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=np.float64)
        mu = np.array(self.mu, dtype=np.float64)
        sigma2 = np.array(self.sigma2, dtype=np.float64)
        alpha = np.array(self.alpha, dtype=np.float64)
        if mu.ndim != 2:
            raise ValueError(f"mu must be K x D, got shape {mu.shape}")
        k = mu.shape[0]
        if pi.shape != (k,) or alpha.shape != (k,) or sigma2.shape != mu.shape:
            raise ValueError(
                f"inconsistent shapes: pi {pi.shape}, mu {mu.shape}, "
                f"sigma2 {sigma2.shape}, alpha {alpha.shape}")
        for name, arr in (("pi", pi), ("mu", mu), ("sigma2", sigma2), ("alpha", alpha)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError(f"pi is not a simplex: {pi}")
        if np.any(sigma2 <= 0):
            raise ValueError("sigma2 must be strictly positive")
        if np.any(alpha <= 0):
            raise ValueError("alpha must be strictly positive")
        for name, arr in (("pi", pi), ("mu", mu), ("sigma2", sigma2), ("alpha", alpha)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return self.mu.shape[0]

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    def permuted(self, order) -> "ModelParams":
        order = np.asarray(order)
        return ModelParams(self.pi[order], self.mu[order], self.sigma2[order], self.alpha[order])

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "pi": self.pi.tolist(),
            "mu": self.mu.tolist(),
            "sigma2": self.sigma2.tolist(),
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        theta = cls(doc["pi"], doc["mu"], doc["sigma2"], doc["alpha"])
        if theta.k != doc["k"] or theta.d != doc["d"]:
            raise ValueError("k/d fields disagree with parameter shapes")
        return theta


@dataclass(frozen=True)
class UnconstrainedParams:
    pi_logits: np.ndarray
    mu: np.ndarray
    log_sigma2: np.ndarray
    log_alpha: np.ndarray

    @property
    def k(self) -> int:
        return self.mu.shape[0]

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.pi_logits.ravel(), self.mu.ravel(),
                               self.log_sigma2.ravel(), self.log_alpha.ravel()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, k: int, d: int) -> "UnconstrainedParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (2 * k + 2 * k * d,):
            raise ValueError(f"vector of length {vec.size} does not fit k={k}, d={d}")
        kd = k * d
        return cls(vec[:k].copy(), vec[k:k + kd].reshape(k, d).copy(),
                   vec[k + kd:k + 2 * kd].reshape(k, d).copy(), vec[k + 2 * kd:].copy())

    def block_names(self) -> list[tuple[str, slice]]:
        k, kd = self.k, self.k * self.d
        return [("pi_logits", slice(0, k)), ("mu", slice(k, k + kd)),
                ("log_sigma2", slice(k + kd, k + 2 * kd)),
                ("log_alpha", slice(k + 2 * kd, 2 * k + 2 * kd))]


def constrain(u: UnconstrainedParams) -> ModelParams:
    vec = u.to_vector()
    if not np.all(np.isfinite(vec)):
        raise ValueError("unconstrained parameters contain non-finite values")
    logits = np.asarray(u.pi_logits, dtype=np.float64)
    pi = np.exp(logits - logsumexp(logits))
    pi = pi / pi.sum()
    return ModelParams(pi, u.mu, np.exp(u.log_sigma2), np.exp(u.log_alpha))


def unconstrain(theta: ModelParams) -> UnconstrainedParams:
    with np.errstate(divide="ignore"):
        logits = np.log(np.maximum(theta.pi, np.finfo(float).tiny))
    return UnconstrainedParams(logits, theta.mu.copy(), np.log(theta.sigma2),
                               np.log(theta.alpha))


# ---------------------------------------------------------------------------
# densities

def _as_pixels(theta: ModelParams, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != theta.d:
        raise ValueError(f"pixel dimension {arr.shape[-1]} does not match model d={theta.d}")
    return arr, single


def _comp_logdens(mu, sigma2, x):
    # (n, K) log Normal(x | mu_j, diag sigma2_j) and the (n, K, D) residuals
    diff = x[:, None, :] - mu[None, :, :]
    maha = np.einsum("nkd,kd->nk", diff * diff, 1.0 / sigma2)
    lognorm = -0.5 * (mu.shape[1] * LOG_2PI + np.log(sigma2).sum(axis=1))
    return lognorm[None, :] - 0.5 * maha, diff


def _chunked(fn, x: np.ndarray, threads: int = 1) -> list:
    starts = range(0, x.shape[0], CHUNK)
    pieces = [x[s:s + CHUNK] for s in starts]
    if threads > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, pieces))
    return [fn(p) for p in pieces]


def component_log_densities(theta: ModelParams, x) -> np.ndarray:
    """Per-component log densities, ``(N, K)`` (or ``(K,)`` for one pixel)."""
    arr, single = _as_pixels(theta, x)
    out = _comp_logdens(theta.mu, theta.sigma2, arr)[0]
    return out[0] if single else out


def log_mixture_likelihood(theta: ModelParams, x):
    """``log sum_j pi_j Normal(x | mu_j, sigma2_j)`` via log-sum-exp."""
    arr, single = _as_pixels(theta, x)
    with np.errstate(divide="ignore"):
        logpi = np.log(theta.pi)
    out = logsumexp(_comp_logdens(theta.mu, theta.sigma2, arr)[0] + logpi, axis=1)
    return float(out[0]) if single else out


def data_nll(theta: ModelParams, x, threads: int = 1) -> float:
    arr, _ = _as_pixels(theta, x)
    if arr.shape[0] == 0:
        raise ValueError("data_nll of an empty pixel set")
    parts = _chunked(lambda p: -np.sum(log_mixture_likelihood(theta, p)), arr, threads)
    return float(math.fsum(parts))


def prior_nll(theta: ModelParams) -> float:
    """Negative log prior density of all parameter blocks.

    pi and sigma2 are floored at ``PRIOR_FLOOR`` so an exactly empty component
    stays finite.
    """
    k = theta.k
    conc = theta.alpha / k
    if np.any(conc <= 0):
        raise ValueError("Dirichlet concentrations must be positive")
    pi_f = np.maximum(theta.pi, PRIOR_FLOOR)
    s2_f = np.maximum(theta.sigma2, PRIOR_FLOOR)
    log_dir = gammaln(conc.sum()) - gammaln(conc).sum() + np.sum((conc - 1.0) * np.log(pi_f))
    nlp_alpha = np.sum(2.0 * np.log(theta.alpha) + 1.0 / theta.alpha)
    nlp_mu = np.sum(0.5 * theta.mu ** 2) + 0.5 * LOG_2PI * theta.mu.size
    nlp_s2 = np.sum(2.0 * np.log(s2_f) + 1.0 / s2_f)
    return float(-log_dir + nlp_alpha + nlp_mu + nlp_s2)


def _prior_gradient(theta: ModelParams) -> UnconstrainedParams:
    k = theta.k
    conc = theta.alpha / k
    floored = theta.pi < PRIOR_FLOOR
    # d(-log Dir)/d pi_j * pi_j, zero where the floor is active
    pg = np.where(floored, 0.0, -(conc - 1.0))
    g_logits = pg - theta.pi * pg.sum()
    log_pi_f = np.log(np.maximum(theta.pi, PRIOR_FLOOR))
    g_conc = -digamma(conc.sum()) + digamma(conc) - log_pi_f
    g_log_alpha = conc * g_conc + 2.0 - 1.0 / theta.alpha
    s2_floored = theta.sigma2 < PRIOR_FLOOR
    g_log_s2 = np.where(s2_floored, 0.0, 2.0 - 1.0 / theta.sigma2)
    return UnconstrainedParams(g_logits, theta.mu.copy(), g_log_s2, g_log_alpha)


def _data_stats(theta: ModelParams, x: np.ndarray, threads: int = 1):
    with np.errstate(divide="ignore"):
        logpi = np.log(theta.pi)
    inv_s2 = 1.0 / theta.sigma2

    def chunk(p):
        logdens, diff = _comp_logdens(theta.mu, theta.sigma2, p)
        logp = logdens + logpi
        lse = logsumexp(logp, axis=1)
        r = np.exp(logp - lse[:, None])
        mass = r.sum(axis=0)
        g_mu = -np.einsum("nk,nkd->kd", r, diff) * inv_s2
        g_ls2 = -0.5 * (np.einsum("nk,nkd->kd", r, diff * diff) * inv_s2 - mass[:, None])
        return -lse.sum(), mass, g_mu, g_ls2

    parts = _chunked(chunk, x, threads)
    nll = math.fsum(p[0] for p in parts)
    mass = np.sum([p[1] for p in parts], axis=0)
    g_mu = np.sum([p[2] for p in parts], axis=0)
    g_ls2 = np.sum([p[3] for p in parts], axis=0)
    return nll, mass, g_mu, g_ls2


def loss_and_gradient(u: UnconstrainedParams, x, data_weight: float = 1.0,
                      include_prior: bool = True, threads: int = 1):
    """Return ``(loss, gradient, responsibility_mass)`` of the training objective.

    ``data_weight`` multiplies the data term (``N / batch`` for minibatches,
    0 for prior-only runs).  ``responsibility_mass[j]`` is the unweighted sum
    of pixel responsibilities for component ``j``.
    """
    theta = constrain(u)
    arr, _ = _as_pixels(theta, x)
    k, d = theta.k, theta.d
    loss = 0.0
    grad = np.zeros(2 * k + 2 * k * d)
    mass = np.zeros(k)
    if data_weight != 0.0:
        if arr.shape[0] == 0:
            raise ValueError("loss over an empty pixel set")
        nll, mass, g_mu, g_ls2 = _data_stats(theta, arr, threads)
        g_logits = -(mass - arr.shape[0] * theta.pi)
        g_data = UnconstrainedParams(g_logits, g_mu, g_ls2, np.zeros(k))
        loss += data_weight * nll
        grad += data_weight * g_data.to_vector()
    if include_prior:
        loss += prior_nll(theta)
        grad += _prior_gradient(theta).to_vector()
    return float(loss), UnconstrainedParams.from_vector(grad, k, d), mass


def total_loss(u: UnconstrainedParams, x, data_weight: float = 1.0,
               include_prior: bool = True, threads: int = 1) -> float:
    theta = constrain(u)
    loss = 0.0
    if data_weight != 0.0:
        loss += data_weight * data_nll(theta, x, threads)
    if include_prior:
        loss += prior_nll(theta)
    return float(loss)


def loss_gradient(u: UnconstrainedParams, x, data_weight: float = 1.0,
                  include_prior: bool = True, threads: int = 1) -> UnconstrainedParams:
    return loss_and_gradient(u, x, data_weight, include_prior, threads)[1]


# ---------------------------------------------------------------------------
# inference

def responsibilities(theta: ModelParams, x) -> np.ndarray:
    """Posterior component probabilities for one pixel (``(K,)``) or many (``(N, K)``)."""
    arr, single = _as_pixels(theta, x)
    with np.errstate(divide="ignore"):
        logp = _comp_logdens(theta.mu, theta.sigma2, arr)[0] + np.log(theta.pi)
    r = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    r /= r.sum(axis=1, keepdims=True)
    return r[0] if single else r


def predict(theta: ModelParams, x, weighted: bool = False, threads: int = 1):
    """Hard cluster ids in ``1..K``.

    By default the argmax is over the component densities alone, ignoring
    the mixture weights; ``weighted=True`` uses the posterior mode instead.
    Ties resolve to the lowest index.
    """
    arr, single = _as_pixels(theta, x)
    with np.errstate(divide="ignore"):
        logpi = np.log(theta.pi)

    def chunk(p):
        logdens = _comp_logdens(theta.mu, theta.sigma2, p)[0]
        if weighted:
            logdens = logdens + logpi
        return np.argmax(logdens, axis=1) + 1

    if arr.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    out = np.concatenate(_chunked(chunk, arr, threads)).astype(np.int64)
    return int(out[0]) if single else out


# ---------------------------------------------------------------------------
# persistence

def save_model(path: str, theta: ModelParams, band_stats: BandStats | None = None) -> None:
    doc = {"schema_version": SCHEMA_VERSION, **theta.to_dict(),
           "band_stats": band_stats.to_dict() if band_stats is not None else None}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path: str) -> tuple[ModelParams, BandStats | None]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    stats = doc.get("band_stats")
    return ModelParams.from_dict(doc), (BandStats.from_dict(stats) if stats else None)
