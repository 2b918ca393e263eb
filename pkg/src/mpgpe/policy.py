"""Linear policies, the Gaussian exploration policy and the Gaussian prior.

Parameter vectors for multi-dimensional actions are stored flattened,
row-major over ``(action_dim, n_features)``: one row of weights per action
element, each with its own independent prior entries.
"""

from __future__ import annotations

from dataclasses import dataclass
import io
import logging

import numpy as np

from .env import ContractError, EnvConfig

logger = logging.getLogger(__name__)

TAU_FLOOR = 1e-6


@dataclass(frozen=True)
class RBFBasis:
    centers: np.ndarray
    width: float = 1.0

    @property
    def n_features(self) -> int:
        return len(self.centers)

    @property
    def state_dim(self) -> int:
        return 1

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.exp(-((s[..., :1] - self.centers) ** 2) / (2.0 * self.width**2))


@dataclass(frozen=True)
class IdentityBasis:
    dim: int

    @property
    def n_features(self) -> int:
        return self.dim

    @property
    def state_dim(self) -> int:
        return self.dim

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape[-1] != self.dim:
            raise ContractError(f"state has dimension {s.shape[-1]}, expected {self.dim}")
        return s


def chain_basis() -> RBFBasis:
    return RBFBasis(np.array([0.0, 2.0, 4.0, 6.0, 8.0, 10.0]), 1.0)


def default_basis(env: EnvConfig):
    return chain_basis() if env.is_chain else IdentityBasis(env.state_dim)


def _check_theta(theta: np.ndarray, basis, action_dim: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.size != action_dim * basis.n_features:
        raise ContractError(
            f"theta has {theta.size} entries, expected {action_dim} x {basis.n_features}"
        )
    return theta.reshape(action_dim, basis.n_features)


@dataclass(frozen=True)
class LinearPolicy:
    """Deterministic policy ``a = theta^T phi(s)``."""

    theta: np.ndarray
    basis: object
    action_dim: int = 1

    def __post_init__(self):
        _check_theta(self.theta, self.basis, self.action_dim)
        if not np.all(np.isfinite(self.theta)):
            raise ContractError("theta must be finite")

    @property
    def weights(self) -> np.ndarray:
        return _check_theta(self.theta, self.basis, self.action_dim)

    def act(self, s) -> np.ndarray:
        return self.act_batch(np.atleast_2d(np.asarray(s, dtype=float)))[0]

    def act_batch(self, states: np.ndarray) -> np.ndarray:
        return self.basis(states) @ self.weights.T


def policy_act(policy: LinearPolicy, s) -> np.ndarray:
    return policy.act(s)


def batch_act(thetas: np.ndarray, basis, action_dim: int, states: np.ndarray) -> np.ndarray:
    """Actions of ``n`` different linear policies at ``n`` states (one each)."""
    n = len(thetas)
    W = np.asarray(thetas).reshape(n, action_dim, basis.n_features)
    return np.einsum("nij,nj->ni", W, basis(states))


@dataclass(frozen=True)
class GaussianPolicy:
    """Stochastic policy ``a ~ N(mu^T phi(s), sigma^2)`` (scalar actions)."""

    mu: np.ndarray
    sigma: float
    basis: object

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        _check_theta(self.mu, self.basis, 1)

    @property
    def action_dim(self) -> int:
        return 1

    def mean_action(self, states: np.ndarray) -> np.ndarray:
        return self.basis(states) @ np.asarray(self.mu, dtype=float).reshape(-1, 1)

    def sample(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        m = self.mean_action(states)
        return m + self.sigma * rng.standard_normal(m.shape)


def gaussian_policy_logp_grad(policy: GaussianPolicy, s, a):
    """Gradient of ``log pi(a|s)`` w.r.t. ``(mu, sigma)``.

    Works on single inputs or batches; for a batch, ``grad_mu`` has shape
    ``(n, B)`` and ``grad_sigma`` shape ``(n,)``.
    """
    phi = policy.basis(np.atleast_2d(np.asarray(s, dtype=float)))
    a = np.asarray(a, dtype=float).reshape(len(phi))
    resid = a - phi @ np.asarray(policy.mu, dtype=float).ravel()
    sig = policy.sigma
    grad_mu = (resid / sig**2)[:, None] * phi
    grad_sigma = (resid**2 - sig**2) / sig**3
    if np.ndim(s) <= 1:
        return grad_mu[0], float(grad_sigma[0])
    return grad_mu, grad_sigma


def gaussian_policy_logp(policy: GaussianPolicy, s, a) -> np.ndarray:
    phi = policy.basis(np.atleast_2d(np.asarray(s, dtype=float)))
    a = np.asarray(a, dtype=float).reshape(len(phi))
    resid = a - phi @ np.asarray(policy.mu, dtype=float).ravel()
    return -0.5 * np.log(2 * np.pi * policy.sigma**2) - resid**2 / (2 * policy.sigma**2)


@dataclass(frozen=True)
class PriorHyper:
    """Gaussian prior ``theta_i ~ N(eta_i, tau_i^2)``."""

    eta: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        tau = np.asarray(self.tau, dtype=float)
        if eta.shape != tau.shape or eta.ndim != 1:
            raise ValueError("eta and tau must be 1-D vectors of equal length")
        if np.any(tau <= 0):
            raise ValueError("tau must be positive element-wise")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "tau", tau)

    @property
    def size(self) -> int:
        return len(self.eta)

    @classmethod
    def initial(cls, size: int, eta: float = 0.0, tau: float = 1.0) -> "PriorHyper":
        return cls(np.full(size, eta, dtype=float), np.full(size, tau, dtype=float))

    def updated(self, grad_eta: np.ndarray, grad_tau: np.ndarray, step: float) -> "PriorHyper":
        """Gradient-ascent step with the tau floor applied."""
        tau = self.tau + step * grad_tau
        low = tau < TAU_FLOOR
        if np.any(low):
            logger.info("tau floored at %g for %d element(s)", TAU_FLOOR, int(low.sum()))
            tau = np.where(low, TAU_FLOOR, tau)
        return PriorHyper(self.eta + step * grad_eta, tau)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.eta, self.tau])


def prior_draw(rho: PriorHyper, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw one parameter vector (or ``n`` stacked ones) from the prior."""
    shape = rho.eta.shape if n is None else (n, rho.size)
    return rho.eta + rho.tau * rng.standard_normal(shape)


def prior_logpdf(theta: np.ndarray, eta: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Log density summed over the last axis; broadcasts over leading axes."""
    z = (theta - eta) / tau
    return np.sum(-0.5 * z**2 - np.log(tau) - 0.5 * np.log(2 * np.pi), axis=-1)


def prior_logp_grad(theta: np.ndarray, rho: PriorHyper):
    """Element-wise ``(d/d eta, d/d tau) log p(theta | rho)``.

    ``theta`` may be a single vector or a stack ``(n, B)``.
    """
    diff = np.asarray(theta, dtype=float) - rho.eta
    tau2 = rho.tau**2
    return diff / tau2, (diff**2 - tau2) / (tau2 * rho.tau)


def prior_score(theta: np.ndarray, rho: PriorHyper) -> np.ndarray:
    """Concatenated gradient ``grad_rho log p(theta|rho)``, shape ``(..., 2B)``."""
    ge, gt = prior_logp_grad(theta, rho)
    return np.concatenate([ge, gt], axis=-1)


def save_prior(rho: PriorHyper, fh) -> None:
    """Header row + size, then one ``eta,tau`` row per parameter."""
    fh.write("B\n")
    fh.write(f"{rho.size}\n")
    fh.write("eta,tau\n")
    for e, t in zip(rho.eta, rho.tau):
        fh.write(f"{e:.17g},{t:.17g}\n")


def load_prior(fh) -> PriorHyper:
    lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 3 or lines[0] != "B" or lines[2] != "eta,tau":
        raise ValueError("not a policy hyper-parameter file")
    B = int(lines[1])
    rows = np.loadtxt(io.StringIO("\n".join(lines[3:])), delimiter=",", ndmin=2)
    if rows.shape != (B, 2):
        raise ValueError(f"expected {B} rows of eta,tau, got shape {rows.shape}")
    return PriorHyper(rows[:, 0], rows[:, 1])
