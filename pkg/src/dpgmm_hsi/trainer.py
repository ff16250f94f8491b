"""Gradient-descent MAP fitting of the mixture with effective-K pruning.

A fit runs in stages.  The first stage descends from D^2-seeded means.  When
``prune_search`` is enabled, each further stage tries to collapse one active
component (weight pushed to zero, mean and variance reset to their prior
modes) and re-descends; the collapse is kept only if the training loss ends
lower than before.  Plain descent tends to park redundant components on
sub-blobs of a real cluster, a local optimum it cannot leave by itself.
"""
from __future__ import annotations

import math
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import ModelParams, UnconstrainedParams, constrain, loss_and_gradient, total_loss
from .seeding import DEFAULT_SEED, dsquared_indices, make_rng

__all__ = [
    "FitConfig",
    "FitReport",
    "FitDivergedError",
    "init_params",
    "fit",
    "effective_components",
    "prune_model",
    "collapse_component",
]

MAX_DIVERGENCE_RETRIES = 5
# components explaining fewer pixels than this get damped variance updates
SMALL_COMPONENT_MASS = 10.0
SMALL_COMPONENT_DAMPING = 0.1


class FitDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_k: int = 5
    max_epochs: int = 500
    batch_size: int = 0
    learning_rate: float = 0.05
    lr_decay: float = 0.5
    rel_tol: float = 1e-6
    patience: int = 10
    prune_threshold: float = 1e-2
    seed: int = DEFAULT_SEED
    prune_search: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.max_k < 1:
            raise ValueError("max_k must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.prune_threshold < 1.0 / self.max_k:
            raise ValueError(
                f"prune_threshold must lie in (0, 1/max_k = {1.0 / self.max_k:g})")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 0:
            raise ValueError("max_epochs and patience must be >= 1, batch_size >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")


@dataclass
class FitReport:
    """Outcome of :func:`fit`.

    ``final_params`` keeps only the active components (weights renormalized);
    ``raw_params`` is the full ``max_k``-component optimum.  ``loss_trace``
    concatenates the accepted stages, which start at ``stage_starts``.
    """

    final_params: ModelParams
    effective_k: int
    loss_trace: list[float]
    epochs_run: int
    wall_time: float
    converged: bool
    raw_params: ModelParams | None = None
    active_components: list[int] = field(default_factory=list)
    stage_starts: list[int] = field(default_factory=lambda: [0])
    config: FitConfig | None = None

    def to_dict(self, include_wall_time: bool = True) -> dict:
        doc = {
            "effective_k": self.effective_k,
            "active_components": list(self.active_components),
            "epochs_run": self.epochs_run,
            "converged": self.converged,
            "final_loss": self.loss_trace[-1],
            "loss_trace": list(self.loss_trace),
            "stage_starts": list(self.stage_starts),
            "final_params": self.final_params.to_dict(),
            "raw_params": self.raw_params.to_dict() if self.raw_params is not None else None,
            "config": asdict(self.config) if self.config is not None else None,
        }
        if include_wall_time:
            doc["wall_time"] = self.wall_time
        return doc


def init_params(x: np.ndarray, k: int, seed=DEFAULT_SEED) -> UnconstrainedParams:
    """Means from D^2-sampled pixels, unit variances, uniform weights, alpha = 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < k:
        raise ValueError(f"cannot initialise {k} components from {x.shape[0]} pixels")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    idx = dsquared_indices(x, k, rng)
    d = x.shape[1]
    return UnconstrainedParams(np.zeros(k), x[idx].copy(), np.zeros((k, d)), np.zeros(k))


def effective_components(theta: ModelParams, threshold: float) -> list[int]:
    """1-based ids of components with weight >= threshold, heaviest first."""
    pi = theta.pi
    ids = [j for j in range(theta.k) if pi[j] >= threshold]
    return [j + 1 for j in sorted(ids, key=lambda j: (-pi[j], j))]


def prune_model(theta: ModelParams, threshold: float) -> ModelParams:
    """Drop components below ``threshold`` (original order kept, weights renormalized)."""
    keep = sorted(j - 1 for j in effective_components(theta, threshold))
    pi = theta.pi[keep]
    return ModelParams(pi / pi.sum(), theta.mu[keep], theta.sigma2[keep], theta.alpha[keep])


def collapse_component(u: UnconstrainedParams, j: int) -> UnconstrainedParams:
    """Zero component ``j``'s weight and reset its mean/variance to the prior modes."""
    logits = u.pi_logits.copy()
    others = np.delete(logits, j)
    # far enough below the rest that softmax underflows to exactly zero
    logits[j] = logsumexp(others) - 800.0
    mu = u.mu.copy()
    mu[j] = 0.0
    log_s2 = u.log_sigma2.copy()
    log_s2[j] = math.log(0.5)
    return UnconstrainedParams(logits, mu, log_s2, u.log_alpha.copy())


@dataclass
class _Stage:
    vec: np.ndarray
    trace: list[float]
    converged: bool


def _bad_block(u_vec: np.ndarray, grad: np.ndarray | None, k: int, d: int,
               attempted: np.ndarray | None = None) -> str:
    max_log = math.log(np.finfo(float).max)
    for name, sl in UnconstrainedParams.from_vector(u_vec * 0, k, d).block_names():
        if not np.all(np.isfinite(u_vec[sl])) or (
                grad is not None and not np.all(np.isfinite(grad[sl]))):
            return name
        if attempted is not None and (not np.all(np.isfinite(attempted[sl])) or (
                name.startswith("log_") and np.any(np.abs(attempted[sl]) > max_log))):
            return name
    return "loss"


def _descend(x, u0: UnconstrainedParams, config: FitConfig, rng, threads, verbose,
             prior_only) -> _Stage:
    n, d = x.shape
    k = u0.k
    vec = u0.to_vector()
    m1 = np.zeros_like(vec)
    m2 = np.zeros_like(vec)
    step = 0
    lr = config.learning_rate
    batch = config.batch_size if 0 < config.batch_size < n else n
    weight = 0.0 if prior_only else n / batch
    ls2 = u0.block_names()[2][1]

    def adam(vec, grad, mass, m1, m2, step):
        grad = grad.copy()
        small = mass * (n / batch) < SMALL_COMPONENT_MASS
        if np.any(small) and not prior_only:
            g = grad[ls2].reshape(k, d)
            g[small] *= SMALL_COMPONENT_DAMPING
            grad[ls2] = g.ravel()
        step += 1
        m1 = config.beta1 * m1 + (1 - config.beta1) * grad
        m2 = config.beta2 * m2 + (1 - config.beta2) * grad * grad
        mhat = m1 / (1 - config.beta1 ** step)
        vhat = m2 / (1 - config.beta2 ** step)
        return vec - lr * mhat / (np.sqrt(vhat) + config.eps), m1, m2, step

    def params(v):
        return UnconstrainedParams.from_vector(v, k, d)

    trace: list[float] = []
    checkpoint = (vec.copy(), m1.copy(), m2.copy(), step)
    retries = 0
    best = math.inf
    since_best = stall = epoch = 0
    converged = False
    while epoch < config.max_epochs:
        grad = attempted = None
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                if batch == n:
                    loss, g, mass = loss_and_gradient(params(vec), x, weight, True, threads)
                    grad = g.to_vector()
                    if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                        raise FloatingPointError
                    new = adam(vec, grad, mass, m1, m2, step)
                else:
                    new = (vec, m1, m2, step)
                    order = rng.permutation(n)
                    for s in range(0, n - batch + 1, batch):
                        xb = x[np.sort(order[s:s + batch])]
                        _, g, mass = loss_and_gradient(params(new[0]), xb, weight, True, threads)
                        grad = g.to_vector()
                        if not np.all(np.isfinite(grad)):
                            raise FloatingPointError
                        new = adam(new[0], grad, mass, *new[1:])
                    loss = total_loss(params(new[0]), x, 0.0 if prior_only else 1.0,
                                      True, threads)
                    if not math.isfinite(loss):
                        raise FloatingPointError
                attempted = new[0]
                if not np.all(np.isfinite(new[0])):
                    raise FloatingPointError
                constrain(params(new[0]))  # raises if exp() of a block overflows
        except (FloatingPointError, ValueError):
            block = _bad_block(vec, grad, k, d, attempted)
            retries += 1
            if retries > MAX_DIVERGENCE_RETRIES:
                raise FitDivergedError(
                    f"loss diverged at epoch {epoch + 1} (non-finite {block}) after "
                    f"{MAX_DIVERGENCE_RETRIES} step-size halvings") from None
            lr *= 0.5
            vec, m1, m2, step = (checkpoint[0].copy(), checkpoint[1].copy(),
                                 checkpoint[2].copy(), checkpoint[3])
            if verbose:
                print(f"epoch={epoch + 1} diverged block={block} lr={lr:g}", file=sys.stderr)
            continue

        checkpoint = (vec.copy(), m1.copy(), m2.copy(), step)
        vec, m1, m2, step = new
        epoch += 1
        if trace:
            rel = abs(trace[-1] - loss) / max(abs(trace[-1]), np.finfo(float).tiny)
            stall = stall + 1 if rel < config.rel_tol else 0
        trace.append(float(loss))
        if loss < best:
            best, since_best = loss, 0
        else:
            since_best += 1
            if since_best >= config.patience:
                lr *= config.lr_decay
                since_best = 0
        if verbose:
            ek = len(effective_components(constrain(params(vec)), config.prune_threshold))
            print(f"epoch={epoch} loss={loss:.10g} effective_k={ek}", file=sys.stderr)
        if stall >= config.patience:
            converged = True
            break
    return _Stage(vec, trace, converged)


def fit(x: np.ndarray, config: FitConfig = FitConfig(), *, threads: int = 1,
        verbose: bool = False, prior_only: bool = False,
        init: UnconstrainedParams | None = None) -> FitReport:
    """Fit the mixture to standardized pixels ``x`` of shape ``(N, D)``.

    Each stage uses bias-corrected adaptive moment steps and stops once the
    relative loss change stays below ``rel_tol`` for ``patience`` epochs (or
    at ``max_epochs``).  The step size is multiplied by ``lr_decay`` whenever
    the best loss has not improved for ``patience`` epochs.  ``prior_only``
    drops the data term (testing aid); ``init`` replaces the D^2 seeding.
    """
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    k = config.max_k
    if n < k:
        raise ValueError(f"need at least max_k={k} pixels, got {n}")
    rng = make_rng(config.seed)
    u = init_params(x, k, rng) if init is None else init
    if u.k != k or u.d != d:
        raise ValueError(f"initial parameters are {u.k}x{u.d}, expected {k}x{d}")

    stage = _descend(x, u, config, rng, threads, verbose, prior_only)
    trace = list(stage.trace)
    starts = [0]
    epochs = len(stage.trace)
    while config.prune_search and not prior_only:
        theta = constrain(UnconstrainedParams.from_vector(stage.vec, k, d))
        active = effective_components(theta, config.prune_threshold)
        if len(active) <= 1:
            break
        accepted = None
        for j in reversed(active):  # lightest first
            trial_u = collapse_component(UnconstrainedParams.from_vector(stage.vec, k, d), j - 1)
            trial = _descend(x, trial_u, config, rng, threads, verbose, prior_only)
            epochs += len(trial.trace)
            if verbose:
                print(f"collapse component={j} loss={trial.trace[-1]:.10g} "
                      f"previous={stage.trace[-1]:.10g}", file=sys.stderr)
            if trial.trace[-1] < stage.trace[-1]:
                accepted = trial
                break
        if accepted is None:
            break
        starts.append(len(trace))
        trace.extend(accepted.trace)
        stage = accepted

    raw = constrain(UnconstrainedParams.from_vector(stage.vec, k, d))
    active = effective_components(raw, config.prune_threshold)
    return FitReport(prune_model(raw, config.prune_threshold), len(active), trace, epochs,
                     time.perf_counter() - t0, stage.converged, raw, active, starts, config)
