"""Policy-gradient estimators: PGPE, importance-weighted PGPE and REINFORCE.

All three use the variance-minimising scalar baseline

    b = sum_n R_n * c_n * ||g_n||^2 / sum_n c_n * ||g_n||^2

where ``g_n`` is the per-sample score (gradient of a log density) and ``c_n``
is 1, or the squared importance weight for IW-PGPE.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Optional, Sequence

import numpy as np

from .policy import GaussianPolicy, PriorHyper, gaussian_policy_logp_grad, prior_logpdf, prior_score

logger = logging.getLogger(__name__)

LOG_WEIGHT_MAX = 700.0


@dataclass(frozen=True)
class PgpeSample:
    theta: np.ndarray
    ret: float
    behavior_rho: PriorHyper


@dataclass
class PgpeBatch:
    """Stacked PGPE samples: parameters, returns and the behaviour prior of each."""

    thetas: np.ndarray  # (N, B)
    returns: np.ndarray  # (N,)
    behavior_eta: np.ndarray  # (N, B)
    behavior_tau: np.ndarray  # (N, B)

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.returns = np.asarray(self.returns, dtype=float).reshape(-1)
        n = len(self.thetas)
        self.behavior_eta = np.broadcast_to(self.behavior_eta, self.thetas.shape).astype(float)
        self.behavior_tau = np.broadcast_to(self.behavior_tau, self.thetas.shape).astype(float)
        if len(self.returns) != n:
            raise ValueError("thetas and returns differ in length")
        if not np.all(np.isfinite(self.returns)):
            raise ValueError("returns must be finite")

    def __len__(self) -> int:
        return len(self.returns)

    @classmethod
    def on_policy(cls, thetas: np.ndarray, returns: np.ndarray, rho: PriorHyper) -> "PgpeBatch":
        return cls(thetas, returns, rho.eta, rho.tau)

    @classmethod
    def from_samples(cls, samples: Sequence[PgpeSample]) -> "PgpeBatch":
        if len(samples) == 0:
            raise ValueError("no samples")
        return cls(
            np.array([s.theta for s in samples]),
            np.array([s.ret for s in samples]),
            np.array([s.behavior_rho.eta for s in samples]),
            np.array([s.behavior_rho.tau for s in samples]),
        )

    def extend(self, other: "PgpeBatch") -> "PgpeBatch":
        return PgpeBatch(
            np.vstack([self.thetas, other.thetas]),
            np.concatenate([self.returns, other.returns]),
            np.vstack([self.behavior_eta, other.behavior_eta]),
            np.vstack([self.behavior_tau, other.behavior_tau]),
        )

    def subset(self, idx) -> "PgpeBatch":
        return PgpeBatch(self.thetas[idx], self.returns[idx], self.behavior_eta[idx], self.behavior_tau[idx])


def _as_batch(samples, rho: PriorHyper) -> PgpeBatch:
    if isinstance(samples, PgpeBatch):
        return samples
    return PgpeBatch.from_samples(samples)


@dataclass
class GradientReport:
    grad_eta: np.ndarray
    grad_tau: np.ndarray
    baseline: float
    n_used: int
    n_dropped: int = 0
    baseline_fallback: bool = False
    per_sample: Optional[np.ndarray] = None  # (N, 2B) summands, for standard errors
    same_sample_baseline: bool = False  # b was estimated from the gradient's own samples

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.grad_eta, self.grad_tau])

    def standard_error(self) -> np.ndarray:
        if self.per_sample is None or len(self.per_sample) < 2:
            raise ValueError("per-sample terms unavailable")
        return self.per_sample.std(axis=0, ddof=1) / np.sqrt(len(self.per_sample))


def weighted_baseline(returns: np.ndarray, scores: np.ndarray, weights: Optional[np.ndarray] = None):
    """Optimal scalar baseline; returns ``(b, fell_back)``.

    Falls back to the mean return when every score norm is zero.
    """
    sq = np.sum(scores**2, axis=-1)
    if weights is not None:
        sq = sq * weights
    den = sq.sum()
    if not den > 0:
        return float(np.mean(returns)), True
    return float(returns @ sq / den), False


def pgpe_baseline(samples, rho: PriorHyper) -> float:
    batch = _as_batch(samples, rho)
    if len(batch) == 0:
        raise ValueError("no samples")
    return weighted_baseline(batch.returns, prior_score(batch.thetas, rho))[0]


def pgpe_gradient(samples, rho: PriorHyper, b: Optional[float] = None) -> GradientReport:
    """``mean_n (R_n - b) grad_rho log p(theta_n | rho)``.

    With ``b=None`` the optimal baseline is estimated from the same samples.
    """
    batch = _as_batch(samples, rho)
    if len(batch) == 0:
        raise ValueError("no samples")
    scores = prior_score(batch.thetas, rho)
    fallback = False
    own = b is None
    if own:
        b, fallback = weighted_baseline(batch.returns, scores)
    terms = (batch.returns - b)[:, None] * scores
    g = terms.mean(0)
    B = rho.size
    return GradientReport(g[:B], g[B:], float(b), len(batch), 0, fallback, terms, same_sample_baseline=own)


def log_importance_weights(thetas: np.ndarray, rho: PriorHyper, behavior_eta, behavior_tau) -> np.ndarray:
    """``log p(theta|rho) - log p(theta|rho')`` per sample."""
    return prior_logpdf(thetas, rho.eta, rho.tau) - prior_logpdf(thetas, behavior_eta, behavior_tau)


def iw_pgpe_gradient(samples, rho: PriorHyper) -> GradientReport:
    """Importance-weighted PGPE gradient with the ``w^2``-weighted baseline.

    Samples whose log-weight exceeds 700 are dropped and counted.
    """
    batch = _as_batch(samples, rho)
    if len(batch) == 0:
        raise ValueError("no samples")
    logw = log_importance_weights(batch.thetas, rho, batch.behavior_eta, batch.behavior_tau)
    keep = logw <= LOG_WEIGHT_MAX
    n_drop = int((~keep).sum())
    if n_drop:
        logger.info("dropped %d sample(s) with overflowing importance weight", n_drop)
    B = rho.size
    if not keep.any():
        return GradientReport(np.zeros(B), np.zeros(B), 0.0, 0, n_drop, True, np.zeros((0, 2 * B)))
    w = np.exp(logw[keep])
    R = batch.returns[keep]
    scores = prior_score(batch.thetas[keep], rho)
    b, fallback = weighted_baseline(R, scores, w**2)
    terms = (w * (R - b))[:, None] * scores
    g = terms.mean(0)
    return GradientReport(g[:B], g[B:], b, int(keep.sum()), n_drop, fallback, terms, same_sample_baseline=True)


def estimator_variance(returns: np.ndarray, scores: np.ndarray, b: float) -> float:
    """Empirical variance of the baseline-subtracted estimator summands.

    Measured about the baseline-free mean, which does not depend on ``b``,
    so the optimal baseline minimises it exactly.
    """
    terms = (returns - b)[:, None] * scores
    ref = (returns[:, None] * scores).mean(0)
    return float(np.mean(np.sum(terms**2, axis=1)) - ref @ ref)


# ---------------------------------------------------------------------------
# REINFORCE


def reinforce_scores(policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-trajectory ``sum_t grad_(mu, sigma) log pi(a_t|s_t)``.

    ``states`` is ``(N, T+1, d_s)`` or ``(N, T, d_s)``; ``actions`` ``(N, T, 1)``.
    """
    N, T = actions.shape[:2]
    s = states[:, :T].reshape(N * T, -1)
    gm, gs = gaussian_policy_logp_grad(policy, s, actions.reshape(N * T))
    gm = gm.reshape(N, T, -1).sum(1)
    gs = gs.reshape(N, T).sum(1)
    return np.hstack([gm, gs[:, None]])


def reinforce_gradient(trajs, policy: GaussianPolicy, gamma: float = 1.0, b: Optional[float] = None) -> GradientReport:
    """Baseline-subtracted REINFORCE gradient over ``(mu, sigma)``.

    ``trajs`` is a list of :class:`~mpgpe.env.Trajectory` or a
    :class:`~mpgpe.env.RolloutBatch`.  ``grad_tau`` carries the single sigma
    component.
    """
    from .env import RolloutBatch, discounted_returns

    if isinstance(trajs, RolloutBatch):
        states, actions, rewards = trajs.states, trajs.actions, trajs.rewards
    else:
        if len(trajs) == 0:
            raise ValueError("no trajectories")
        states = np.stack([t.states for t in trajs])
        actions = np.stack([t.actions for t in trajs])
        rewards = np.stack([t.rewards for t in trajs])
    if len(rewards) == 0:
        raise ValueError("no trajectories")
    R = discounted_returns(rewards, gamma)
    scores = reinforce_scores(policy, states, actions)
    fallback = False
    own = b is None
    if own:
        b, fallback = weighted_baseline(R, scores)
    terms = (R - b)[:, None] * scores
    g = terms.mean(0)
    return GradientReport(g[:-1], g[-1:], float(b), len(R), 0, fallback, terms)
