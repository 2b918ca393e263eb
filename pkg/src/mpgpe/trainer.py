"""Training loops: model-based PGPE, IW-PGPE under a sampling schedule, REINFORCE.

Randomness: every run owns one :class:`numpy.random.Generator`, which is
split with ``Generator.spawn`` into independent streams in a fixed order
(data, model fit, prior draws, model sampling / real rollouts, evaluation),
so changing how many draws one component makes never shifts another.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
import logging
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import gp, lscde
from .env import EnvConfig, collect_uniform_dataset, simulate
from .estimators import PgpeBatch, iw_pgpe_gradient, pgpe_gradient, reinforce_gradient, weighted_baseline
from .policy import GaussianPolicy, LinearPolicy, PriorHyper, batch_act, default_basis, prior_draw, prior_score

logger = logging.getLogger(__name__)

ALGOS = ("mpgpe_lscde", "mpgpe_gp", "iwpgpe", "reinforce")
STANDARD_SCHEDULES = ((1, 20), (2, 10), (4, 5), (5, 4), (10, 2), (20, 1))
MAX_RESAMPLE_ROUNDS = 20
ARM_INPUT_KAPPAS = (5.0, 10.0, 20.0, 40.0)
ARM_OUTPUT_KAPPAS = (0.5, 1.0, 2.0, 4.0)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "mpgpe_lscde"
    budget_episodes: int = 20
    iterations: int = 20
    synthetic_per_update: int = 2000
    learning_rate: float = 0.1
    normalize_step: Optional[bool] = None  # None: raw step on chain walk, normalized on arm2
    schedule: Optional[tuple] = None  # (batch size k, repeats N/k)
    updates_per_batch: int = 100
    eval_episodes: int = 100
    seed: int = 0
    eta_init: float = 0.0
    tau_init: Optional[float] = None  # None: 1 on chain walk, 0.1 on arm2
    random_init: bool = True  # eta ~ N(eta_init, tau_init^2) instead of eta = eta_init
    max_centers: Optional[int] = 1000
    max_step: Optional[float] = 0.3  # cap on the norm of one update
    stop_tol: Optional[float] = None

    def validate(self) -> list[str]:
        """All violated constraints (empty when the config is usable)."""
        errs = []
        if self.algo not in ALGOS:
            errs.append(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.budget_episodes < 1:
            errs.append("budget_episodes must be >= 1")
        if self.iterations < 0:
            errs.append("iterations must be >= 0")
        if self.synthetic_per_update < 2 or self.synthetic_per_update % 2:
            errs.append("synthetic_per_update must be a positive even number")
        if self.learning_rate < 0:
            errs.append("learning_rate must be >= 0")
        if self.updates_per_batch < 0:
            errs.append("updates_per_batch must be >= 0")
        if self.eval_episodes < 1:
            errs.append("eval_episodes must be >= 1")
        if self.tau_init is not None and self.tau_init <= 0:
            errs.append("tau_init must be > 0")
        if self.schedule is not None:
            k, reps = self.schedule
            if k < 1 or reps < 1 or k * reps != self.budget_episodes:
                errs.append(f"schedule {k}x{reps} does not exhaust the budget {self.budget_episodes}")
        return errs

    def check(self) -> "TrainConfig":
        errs = self.validate()
        if errs:
            raise ValueError("; ".join(errs))
        return self

    @property
    def resolved_schedule(self) -> tuple:
        return tuple(self.schedule) if self.schedule is not None else (self.budget_episodes, 1)


class CurveRow(NamedTuple):
    iteration: int
    cumulative_real_samples: int
    mean_return: float
    std_error: float


@dataclass
class LearningCurve:
    rows: list = field(default_factory=list)

    def append(self, iteration: int, real: int, mean: float, se: float) -> None:
        if self.rows and iteration <= self.rows[-1].iteration:
            raise ValueError("curve iterations must be strictly increasing")
        self.rows.append(CurveRow(iteration, real, float(mean), float(se)))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.mean_return for r in self.rows])

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CurveRow._fields)
        for r in self.rows:
            w.writerow([r.iteration, r.cumulative_real_samples, f"{r.mean_return:.17g}", f"{r.std_error:.17g}"])


class TrainResult(NamedTuple):
    rho: PriorHyper
    curve: LearningCurve
    info: dict


def _rng(rng, cfg: TrainConfig) -> np.random.Generator:
    if rng is None:
        return np.random.default_rng(cfg.seed)
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def initial_tau(env: EnvConfig, cfg: TrainConfig) -> float:
    if cfg.tau_init is not None:
        return cfg.tau_init
    return 1.0 if env.is_chain else 0.1


def initial_rho(env: EnvConfig, cfg: TrainConfig, rng: Optional[np.random.Generator] = None) -> PriorHyper:
    """Starting hyper-parameter.

    With ``random_init`` the mean is one draw from ``N(eta0, tau_init^2)``.
    Under sign-symmetric dynamics (the bimodal chain walk) ``eta = 0`` is a
    stationary point of the expected return, so a fixed zero start stalls.
    ``eta0`` is ``eta_init`` everywhere on the chain walk; on the arm it is
    the hold-posture policy (target angles = current angles) plus ``eta_init``.
    """
    size = default_basis(env).n_features * env.action_dim
    rho = PriorHyper.initial(size, cfg.eta_init, initial_tau(env, cfg))
    if not env.is_chain:
        hold = np.eye(env.action_dim, env.state_dim).ravel()
        rho = PriorHyper(rho.eta + hold, rho.tau)
    if cfg.random_init and rng is not None:
        rho = PriorHyper(prior_draw(rho, rng), rho.tau)
    return rho


def evaluate_policy(env: EnvConfig, rho: PriorHyper, n_episodes: int, rng) -> tuple[float, float]:
    """Mean and standard error of real returns of the prior-mean policy ``theta = eta``."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    policy = LinearPolicy(rho.eta, default_basis(env), env.action_dim)
    R = simulate(env, policy.act_batch, n_episodes, rng).returns(env.gamma)
    # identical returns: report an exact zero rather than rounding residue
    se = R.std(ddof=1) / np.sqrt(n_episodes) if np.ptp(R) > 0 else 0.0
    return float(R.mean()), float(se)


def _normalized(env: EnvConfig, cfg: TrainConfig) -> bool:
    return (not env.is_chain) if cfg.normalize_step is None else bool(cfg.normalize_step)


def _step_size(cfg: TrainConfig, grad: np.ndarray, normalized: bool = False) -> float:
    norm = np.linalg.norm(grad)
    if normalized:
        return cfg.learning_rate / norm if norm > 0 else 0.0
    if cfg.max_step is not None and cfg.learning_rate * norm > cfg.max_step:
        return cfg.max_step / norm
    return cfg.learning_rate


# ---------------------------------------------------------------------------
# model-based PGPE


def fit_model(env: EnvConfig, model_kind: str, data, cfg: TrainConfig, rng: np.random.Generator):
    """Fit a transition model; returns ``(model, sampler, report)``."""
    if model_kind == "lscde":
        if env.is_chain:
            grid = lscde.CvGrid().scaled(env.scale)
        else:
            # arm next-velocities are a deterministic function of (s, s'), so the
            # conditional density is nearly singular; widths are chosen per block
            grid = lscde.CvGrid.per_block(ARM_INPUT_KAPPAS, ARM_OUTPUT_KAPPAS)
        model, cv = lscde.fit_cv(data, grid, cfg.max_centers, rng)
        return model, model_sampler(model), {
            "kappa": cv.kappa,
            "lambda": cv.lam,
            "cv_score": cv.best_score,
            "cv_scores": dict(cv.scores),
        }
    if model_kind == "gp":
        grid = gp.HyperGrid().scaled(env.scale, env.scale**2)
        model = gp.gp_fit(data, grid)
        return model, model_sampler(model), {
            "amplitude": model.amplitude,
            "lengthscale": float(model.lengthscale[0]),
            "noise_var": model.noise_var,
            "log_evidence": model.evidence,
        }
    raise ValueError(f"unknown model kind {model_kind!r}")


def synthetic_rollouts(env, sampler, rho: PriorHyper, n: int, prior_rng, model_rng):
    """Draw ``n`` parameter vectors and roll each out against the learned model.

    Rollouts that hit a degenerate model density are redrawn with fresh
    parameters.  Returns ``(thetas, returns, n_redrawn)``.
    """
    basis = default_basis(env)
    thetas = prior_draw(rho, prior_rng, n)
    returns = np.empty(n)
    todo = np.arange(n)
    redrawn = 0
    for _ in range(MAX_RESAMPLE_ROUNDS):
        th = thetas[todo]
        batch = simulate(env, lambda s: batch_act(th, basis, env.action_dim, s), len(todo), model_rng, sampler)
        returns[todo] = batch.returns(env.gamma)
        bad = todo[~batch.valid]
        if len(bad) == 0:
            return thetas, returns, redrawn
        if len(bad) > len(todo) / 2:
            raise TrainingError(
                f"{len(bad)} of {len(todo)} synthetic rollouts left the model's support; "
                "the transition model does not cover the policy's state distribution"
            )
        redrawn += len(bad)
        thetas[bad] = prior_draw(rho, prior_rng, len(bad))
        todo = bad
    raise TrainingError("degenerate rollouts persisted after repeated redraws")


def half_split(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the baseline half and the gradient half of ``n`` rollouts."""
    idx = np.arange(n)
    return idx[: n // 2], idx[n // 2 :]


def model_sampler(model):
    """Batch sampler ``(s, a, rng) -> (s_next, ok)`` for a fitted model."""
    if isinstance(model, lscde.LscdeModel):
        return lambda s, a, r: lscde.sample_batch(model, s, a, r)
    if isinstance(model, gp.GpModel):
        return lambda s, a, r: gp.gp_sample_batch(model, s, a, r)
    raise TypeError(f"not a transition model: {type(model).__name__}")


def train_mpgpe(env: EnvConfig, model_kind: str, cfg: TrainConfig, rng=None, data=None, model=None) -> TrainResult:
    """Fit a transition model once from ``budget_episodes`` uniform episodes,
    then run ``iterations`` PGPE updates on synthetic rollouts.

    Each update splits the synthetic batch in two: the first half estimates
    the baseline, the second half the gradient.  A pre-collected ``data`` set
    replaces the collection step; a pre-fitted ``model`` replaces both.
    """
    cfg.check()
    rng = _rng(rng, cfg)
    data_rng, fit_rng, prior_rng, model_rng, eval_rng, init_rng = rng.spawn(6)
    N = cfg.budget_episodes
    if model is not None:
        sampler, report = model_sampler(model), {}
    else:
        if data is None:
            data = collect_uniform_dataset(env, N, data_rng)
        else:
            N = len(data) // env.T
        model, sampler, report = fit_model(env, model_kind, data, cfg, fit_rng)
    norm_step = _normalized(env, cfg)
    rho = initial_rho(env, cfg, init_rng)
    curve = LearningCurve()
    base_idx, grad_idx = half_split(cfg.synthetic_per_update)
    redrawn = 0
    for it in range(1, cfg.iterations + 1):
        thetas, R, nbad = synthetic_rollouts(env, sampler, rho, cfg.synthetic_per_update, prior_rng, model_rng)
        redrawn += nbad
        b, _ = weighted_baseline(R[base_idx], prior_score(thetas[base_idx], rho))
        rep = pgpe_gradient(PgpeBatch.on_policy(thetas[grad_idx], R[grad_idx], rho), rho, b)
        new = rho.updated(rep.grad_eta, rep.grad_tau, _step_size(cfg, rep.vector, norm_step))
        delta = np.linalg.norm(new.as_vector() - rho.as_vector())
        rho = new
        curve.append(it, N, *evaluate_policy(env, rho, cfg.eval_episodes, eval_rng))
        if cfg.stop_tol is not None and delta < cfg.stop_tol:
            logger.info("converged after %d iterations (|drho| = %g)", it, delta)
            break
    info = {"model": model, "fit": report, "real_episodes": N, "redrawn": redrawn, "dataset": data}
    return TrainResult(rho, curve, info)


# ---------------------------------------------------------------------------
# model-free baselines


def train_iwpgpe(env: EnvConfig, cfg: TrainConfig, rng=None) -> TrainResult:
    """IW-PGPE with sample reuse: ``N/k`` batches of ``k`` real episodes,
    ``updates_per_batch`` updates on the whole buffer after each batch."""
    cfg.check()
    rng = _rng(rng, cfg)
    _, _, prior_rng, env_rng, eval_rng, init_rng = rng.spawn(6)
    k, reps = cfg.resolved_schedule
    basis = default_basis(env)
    norm_step = _normalized(env, cfg)
    rho = initial_rho(env, cfg, init_rng)
    curve = LearningCurve()
    buffer: Optional[PgpeBatch] = None
    dropped = 0
    for i in range(reps):
        thetas = prior_draw(rho, prior_rng, k)
        R = simulate(env, lambda s: batch_act(thetas, basis, env.action_dim, s), k, env_rng).returns(env.gamma)
        fresh = PgpeBatch.on_policy(thetas, R, rho)
        buffer = fresh if buffer is None else buffer.extend(fresh)
        for _ in range(cfg.updates_per_batch):
            rep = iw_pgpe_gradient(buffer, rho)
            dropped += rep.n_dropped
            rho = rho.updated(rep.grad_eta, rep.grad_tau, _step_size(cfg, rep.vector, norm_step))
        curve.append(i + 1, (i + 1) * k, *evaluate_policy(env, rho, cfg.eval_episodes, eval_rng))
    return TrainResult(rho, curve, {"real_episodes": len(buffer), "dropped": dropped})


def train_reinforce(env: EnvConfig, cfg: TrainConfig, rng=None) -> TrainResult:
    """On-policy REINFORCE with a Gaussian policy, one update per batch.

    The returned hyper-parameter stores the policy mean as ``eta`` and its
    exploration std (broadcast) as ``tau``.
    """
    cfg.check()
    if env.action_dim != 1:
        raise ValueError("REINFORCE here supports scalar actions only")
    rng = _rng(rng, cfg)
    _, _, _, env_rng, eval_rng, init_rng = rng.spawn(6)
    k, reps = cfg.resolved_schedule
    basis = default_basis(env)
    norm_step = _normalized(env, cfg)
    mu, sigma = initial_rho(env, cfg, init_rng).eta, initial_tau(env, cfg)
    curve = LearningCurve()
    for i in range(reps):
        pol = GaussianPolicy(mu, sigma, basis)
        batch = simulate(env, lambda s: pol.sample(s, env_rng), k, env_rng)
        rep = reinforce_gradient(batch, pol, env.gamma)
        step = _step_size(cfg, rep.vector, norm_step)
        mu = mu + step * rep.grad_eta
        sigma = max(sigma + step * float(rep.grad_tau[0]), 1e-6)
        rho = PriorHyper(mu, np.full_like(mu, sigma))
        curve.append(i + 1, (i + 1) * k, *evaluate_policy(env, rho, cfg.eval_episodes, eval_rng))
    return TrainResult(PriorHyper(mu, np.full_like(mu, sigma)), curve, {"real_episodes": k * reps})


def train(env: EnvConfig, cfg: TrainConfig, rng=None, **model_inputs) -> TrainResult:
    """Dispatch on ``cfg.algo``; ``model_inputs`` (``data``/``model``) go to M-PGPE."""
    if cfg.algo == "mpgpe_lscde":
        return train_mpgpe(env, "lscde", cfg, rng, **model_inputs)
    if cfg.algo == "mpgpe_gp":
        return train_mpgpe(env, "gp", cfg, rng, **model_inputs)
    if cfg.algo == "iwpgpe":
        return train_iwpgpe(env, cfg, rng)
    if cfg.algo == "reinforce":
        return train_reinforce(env, cfg, rng)
    raise ValueError(f"unknown algo {cfg.algo!r}")


# ---------------------------------------------------------------------------
# schedule sweep


class SweepRow(NamedTuple):
    schedule: tuple
    mean_return: float
    std_error: float
    finals: np.ndarray


def run_generators(seed: int, n_runs: int) -> list[np.random.Generator]:
    """Independent per-run generators; run ``r`` is identical across schedules."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_runs)]


def parse_schedule(text: str) -> tuple:
    k, _, reps = text.lower().partition("x")
    try:
        return int(k), int(reps)
    except ValueError:
        raise ValueError(f"bad schedule {text!r}; expected KxR such as 5x4") from None


def schedule_sweep(env: EnvConfig, cfg: TrainConfig, schedules: Sequence, n_runs: int, seed: Optional[int] = None) -> list:
    """Final real returns of IW-PGPE for each schedule over ``n_runs`` seeds."""
    seed = cfg.seed if seed is None else seed
    bad = [s for s in schedules if s[0] * s[1] != cfg.budget_episodes]
    if bad:
        raise ValueError(f"schedules {bad} do not exhaust the budget {cfg.budget_episodes}")
    rows = []
    for sched in schedules:
        c = replace(cfg, algo="iwpgpe", schedule=tuple(sched))
        finals = np.array([train_iwpgpe(env, c, g).curve.rows[-1].mean_return for g in run_generators(seed, n_runs)])
        se = finals.std(ddof=1) / np.sqrt(n_runs) if n_runs > 1 else 0.0
        rows.append(SweepRow(tuple(sched), float(finals.mean()), float(se), finals))
    return rows


def write_sweep_csv(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["schedule", "mean_return", "std_error", "n_runs"])
    for r in rows:
        w.writerow([f"{r.schedule[0]}x{r.schedule[1]}", f"{r.mean_return:.17g}", f"{r.std_error:.17g}", len(r.finals)])
