"""Episodic benchmark environments and data collection.

Two families are provided:

- the continuous chain walk on ``S = [0, 10]`` with actions in ``[-5, 5]``,
  either with Gaussian dynamics ``s' = s + a + eps`` or bimodal dynamics
  ``s' = s +/- a + eps`` (sign drawn uniformly);
- ``arm2``, a planar two-link kinematic arm whose actions are target joint
  angles (degrees), perturbed by bimodal Gaussian actuator noise.

Every stepping function is vectorized over a leading batch axis and draws all
randomness from an explicit :class:`numpy.random.Generator`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable, Iterator, NamedTuple, Optional, Sequence

import numpy as np

ENV_KINDS = ("chainwalk_gaussian", "chainwalk_bimodal", "arm2")

CHAIN_STATE_BOUNDS = (0.0, 10.0)
CHAIN_ACTION_BOUNDS = (-5.0, 5.0)

# arm2 geometry (metres / degrees)
ARM_LINKS = (0.3, 0.3)
ARM_GAIN = 0.2
ARM_ANGLE_BOUNDS = (-180.0, 180.0)
ARM_INIT_ANGLES = (-40.0, 20.0)
ARM_TARGET_ANGLES = (50.0, 60.0)
ARM_UNIFORM_ANGLES = (-90.0, 135.0)
ARM_UNIFORM_VEL = (-10.0, 10.0)
ARM_NOISE_MIX = ((0.6, 0.0, 3.0), (0.4, -5.0, 3.0))  # (weight, mean, std)
ARM_COST_COEF = 0.000005
ARM_COST_CAP = 1e6


class ContractError(ValueError):
    """Raised when array shapes do not match the environment."""


@dataclass(frozen=True)
class EnvConfig:
    env_kind: str = "chainwalk_gaussian"
    T: int = 10
    gamma: float = 0.99
    noise_std: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.env_kind not in ENV_KINDS:
            raise ValueError(f"unknown env_kind {self.env_kind!r}; expected one of {ENV_KINDS}")
        if self.T < 1:
            raise ValueError("T must be a positive integer")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def state_dim(self) -> int:
        return 4 if self.env_kind == "arm2" else 1

    @property
    def action_dim(self) -> int:
        return 2 if self.env_kind == "arm2" else 1

    @property
    def is_chain(self) -> bool:
        return self.env_kind.startswith("chainwalk")

    @property
    def scale(self) -> float:
        """Typical length scale of the state/action units (for model grids)."""
        return 10.0 if self.env_kind == "arm2" else 1.0


def make_env(kind: str, **overrides) -> EnvConfig:
    """Build an :class:`EnvConfig` with per-environment defaults.

    ``kind`` accepts either underscores or dashes (``chainwalk-bimodal``).
    """
    kind = kind.replace("-", "_")
    if kind == "arm2":
        base = EnvConfig(env_kind="arm2", T=20, gamma=0.9, noise_std=3.0)
    else:
        base = EnvConfig(env_kind=kind)
    return replace(base, **overrides) if overrides else base


class TransitionSample(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray


@dataclass(frozen=True)
class TransitionSet:
    """A batch of ``(s, a, s')`` triples stored as stacked arrays."""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray

    def __post_init__(self):
        n = len(self.s)
        if self.s.ndim != 2 or self.a.ndim != 2 or self.s_next.ndim != 2:
            raise ContractError("transition arrays must be 2-D (n, dim)")
        if len(self.a) != n or len(self.s_next) != n:
            raise ContractError("transition arrays differ in length")
        if self.s.shape[1] != self.s_next.shape[1]:
            raise ContractError("state and next-state dimensions differ")

    def __len__(self) -> int:
        return len(self.s)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return TransitionSample(self.s[idx], self.a[idx], self.s_next[idx])
        return TransitionSet(self.s[idx], self.a[idx], self.s_next[idx])

    def __iter__(self) -> Iterator[TransitionSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def d_s(self) -> int:
        return self.s.shape[1]

    @property
    def d_a(self) -> int:
        return self.a.shape[1]

    @property
    def inputs(self) -> np.ndarray:
        return np.hstack([self.s, self.a])

    @classmethod
    def from_samples(cls, samples: Sequence[TransitionSample]) -> "TransitionSet":
        if len(samples) == 0:
            raise ValueError("no samples given")
        s = np.array([np.atleast_1d(x.s) for x in samples], dtype=float)
        a = np.array([np.atleast_1d(x.a) for x in samples], dtype=float)
        sn = np.array([np.atleast_1d(x.s_next) for x in samples], dtype=float)
        return cls(s, a, sn)


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, d_s)
    actions: np.ndarray  # (T, d_a)
    rewards: np.ndarray  # (T,)

    def __post_init__(self):
        T = len(self.rewards)
        if len(self.actions) != T or len(self.states) != T + 1:
            raise ContractError(
                f"inconsistent lengths: {len(self.states)} states, "
                f"{len(self.actions)} actions, {T} rewards"
            )
        if not np.all(np.isfinite(self.rewards)):
            raise ContractError("rewards must be finite")

    @property
    def T(self) -> int:
        return len(self.rewards)


def discounted_return(traj: Trajectory, gamma: float) -> float:
    """Return ``sum_t gamma**(t-1) * r_t`` for one trajectory."""
    return float(discounted_returns(traj.rewards[None, :], gamma)[0])


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted returns of a ``(n, T)`` reward array."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    rewards = np.asarray(rewards, dtype=float)
    disc = gamma ** np.arange(rewards.shape[-1])
    return np.sum(rewards * disc, axis=-1)  # not BLAS: identical rows must give identical sums


# ---------------------------------------------------------------------------
# dynamics


def _as_batch(x: np.ndarray, dim: int, name: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    if single:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[-1] != dim:
        raise ContractError(f"{name} has dimension {x.shape[-1]}, expected {dim}")
    return x, single


def clip_state(env: EnvConfig, s: np.ndarray) -> np.ndarray:
    if env.is_chain:
        return np.clip(s, *CHAIN_STATE_BOUNDS)
    s = np.array(s, dtype=float, copy=True)
    s[..., :2] = np.clip(s[..., :2], *ARM_ANGLE_BOUNDS)
    return s


def clip_action(env: EnvConfig, a: np.ndarray) -> np.ndarray:
    if env.is_chain:
        return np.clip(a, *CHAIN_ACTION_BOUNDS)
    return np.clip(a, *ARM_ANGLE_BOUNDS)


def arm_end_effector(angles: np.ndarray) -> np.ndarray:
    """Planar forward kinematics; ``angles`` in degrees, shape ``(..., 2)``."""
    q = np.deg2rad(angles)
    l1, l2 = ARM_LINKS
    x = l1 * np.sin(q[..., 0]) + l2 * np.sin(q[..., 0] + q[..., 1])
    y = -l1 * np.cos(q[..., 0]) - l2 * np.cos(q[..., 0] + q[..., 1])
    return np.stack([x, y], axis=-1)


ARM_TARGET = arm_end_effector(np.array(ARM_TARGET_ANGLES))


def reward(env: EnvConfig, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> np.ndarray:
    """Known immediate reward for a batch of transitions, shape ``(n,)``."""
    if env.is_chain:
        sn = np.asarray(s_next)[..., 0]
        return ((sn > 4.0) & (sn < 6.0)).astype(float)
    d = np.linalg.norm(arm_end_effector(np.asarray(s_next)[..., :2]) - ARM_TARGET, axis=-1)
    cost = np.sum(np.asarray(a) ** 2, axis=-1)
    return np.exp(-10.0 * d) - ARM_COST_COEF * np.minimum(cost, ARM_COST_CAP)


def _arm_noise(env: EnvConfig, shape, rng: np.random.Generator) -> np.ndarray:
    (w0, m0, s0), (_, m1, s1) = ARM_NOISE_MIX
    first = rng.random(shape) < w0
    z = rng.standard_normal(shape)
    scale = env.noise_std / 3.0  # noise_std rescales both modes together
    return np.where(first, m0 + s0 * z, m1 + s1 * z) * scale


def transition(env: EnvConfig, s: np.ndarray, a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample next states for batches ``s`` (n, d_s) and ``a`` (n, d_a)."""
    n = len(s)
    a = clip_action(env, a)
    if env.is_chain:
        eps = env.noise_std * rng.standard_normal((n, 1))
        if env.env_kind == "chainwalk_bimodal":
            sign = np.where(rng.random((n, 1)) < 0.5, 1.0, -1.0)
            a = sign * a
        return clip_state(env, s + a + eps)
    q, v = s[:, :2], s[:, 2:]
    target = a + _arm_noise(env, (n, 2), rng)
    q_new = np.clip(q + ARM_GAIN * (target - q), *ARM_ANGLE_BOUNDS)
    return np.hstack([q_new, q_new - q])


def step(env: EnvConfig, s, a, rng: np.random.Generator):
    """Advance one step.

    Accepts a single state/action (returns ``(s', float reward)``) or stacked
    batches (returns ``(s' (n, d_s), rewards (n,))``).
    """
    s2, single_s = _as_batch(s, env.state_dim, "state")
    a2, single_a = _as_batch(a, env.action_dim, "action")
    if len(s2) != len(a2):
        raise ContractError("state and action batches differ in length")
    sn = transition(env, s2, a2, rng)
    r = reward(env, s2, clip_action(env, a2), sn)
    if single_s and single_a:
        return sn[0], float(r[0])
    return sn, r


# ---------------------------------------------------------------------------
# data collection and rollouts


def initial_states(env: EnvConfig, n: int, rng: np.random.Generator, uniform: bool = False) -> np.ndarray:
    """Draw ``n`` initial states.

    The chain walk always starts uniformly on ``S``.  The arm starts from a
    fixed posture unless ``uniform`` is set (used for exploration data).
    """
    if env.is_chain:
        return rng.uniform(*CHAIN_STATE_BOUNDS, size=(n, 1))
    if uniform:
        q = rng.uniform(*ARM_UNIFORM_ANGLES, size=(n, 2))
        v = rng.uniform(*ARM_UNIFORM_VEL, size=(n, 2))
        return np.hstack([q, v])
    return np.tile(np.array([*ARM_INIT_ANGLES, 0.0, 0.0]), (n, 1))


def _uniform_actions(env: EnvConfig, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if env.is_chain:
        return rng.uniform(*CHAIN_ACTION_BOUNDS, size=(len(s), 1))
    q = s[:, :2]
    return rng.uniform(q - 5.0, q + 5.0)


def collect_uniform_dataset(env: EnvConfig, n_episodes: int, rng: np.random.Generator) -> TransitionSet:
    """Roll out ``n_episodes`` uniformly random episodes; returns ``n_episodes * T`` transitions."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    s = initial_states(env, n_episodes, rng, uniform=True)
    S, A, SN = [], [], []
    for _ in range(env.T):
        a = _uniform_actions(env, s, rng)
        sn = transition(env, s, a, rng)
        S.append(s)
        A.append(a)
        SN.append(sn)
        s = sn
    # episode-major ordering: all steps of episode 0 first
    stack = lambda xs: np.stack(xs, axis=1).reshape(n_episodes * env.T, -1)
    return TransitionSet(stack(S), stack(A), stack(SN))


TransitionFn = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]


@dataclass
class RolloutBatch:
    states: np.ndarray  # (n, T+1, d_s)
    actions: np.ndarray  # (n, T, d_a)
    rewards: np.ndarray  # (n, T)
    valid: np.ndarray  # (n,) False where the transition sampler failed

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i], self.rewards[i])

    def returns(self, gamma: float) -> np.ndarray:
        return discounted_returns(self.rewards, gamma)


def simulate(
    env: EnvConfig,
    act: Callable[[np.ndarray], np.ndarray],
    n: int,
    rng: np.random.Generator,
    sampler: Optional[Callable] = None,
    s0: Optional[np.ndarray] = None,
) -> RolloutBatch:
    """Run ``n`` episodes in lock-step.

    ``act`` maps a state batch (n, d_s) to actions (n, d_a).  ``sampler``
    replaces the true dynamics; it must return ``(s_next, ok_mask)``.
    Rewards always come from the known reward function.
    """
    s = initial_states(env, n, rng) if s0 is None else np.array(s0, dtype=float).reshape(n, env.state_dim)
    states = np.empty((n, env.T + 1, env.state_dim))
    actions = np.empty((n, env.T, env.action_dim))
    rewards = np.empty((n, env.T))
    valid = np.ones(n, dtype=bool)
    states[:, 0] = s
    for t in range(env.T):
        a = clip_action(env, act(s))
        if sampler is None:
            sn = transition(env, s, a, rng)
        else:
            sn, ok = sampler(s, a, rng)
            valid &= ok
            sn = clip_state(env, sn)
        rewards[:, t] = reward(env, s, a, sn)
        actions[:, t] = a
        states[:, t + 1] = sn
        s = sn
    return RolloutBatch(states, actions, rewards, valid)


def rollout(env: EnvConfig, policy, rng: np.random.Generator, s0=None) -> Trajectory:
    """One real-environment episode under a deterministic policy."""
    if policy.action_dim != env.action_dim:
        raise ContractError("policy action dimension does not match the environment")
    s0 = None if s0 is None else np.atleast_2d(np.asarray(s0, dtype=float))
    batch = simulate(env, policy.act_batch, 1, rng, s0=s0)
    return batch.trajectory(0)


# ---------------------------------------------------------------------------
# CSV


def dataset_header(d_s: int, d_a: int) -> list[str]:
    return [f"s{i}" for i in range(d_s)] + [f"a{i}" for i in range(d_a)] + [f"s_next{i}" for i in range(d_s)]


def write_dataset_csv(data: TransitionSet, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(dataset_header(data.d_s, data.d_a))
    for row in np.hstack([data.s, data.a, data.s_next]):
        w.writerow([f"{x:.17g}" for x in row])


def read_dataset_csv(fh) -> TransitionSet:
    """Parse a transition CSV; raises ``ValueError`` naming the bad row."""
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty dataset file") from None
    d_s = sum(1 for h in header if h.startswith("s") and not h.startswith("s_next"))
    d_a = sum(1 for h in header if h.startswith("a"))
    if d_s == 0 or d_a == 0 or header != dataset_header(d_s, d_a):
        raise ValueError(f"row 1: malformed header {header!r}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(x) for x in row]
        except ValueError:
            raise ValueError(f"row {lineno}: non-numeric field in {row!r}") from None
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"row {lineno}: non-finite value")
        rows.append(vals)
    if not rows:
        raise ValueError("dataset has no rows")
    arr = np.array(rows)
    return TransitionSet(arr[:, :d_s], arr[:, d_s : d_s + d_a], arr[:, d_s + d_a :])
