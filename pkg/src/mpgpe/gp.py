"""Gaussian-process regression as a (unimodal) transition model.

Each output dimension gets its own GP; all share the squared-exponential
covariance ``amp * exp(-sum_j (x_j - x'_j)^2 / l_j^2)`` over the joint input
``[s, a]`` and a homoscedastic noise variance.  Targets are centred by their
sample mean before fitting.  Hyper-parameters are chosen by exhaustive search
over a fixed grid, maximising the log marginal likelihood summed over
output dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
import io
import itertools
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .env import ContractError, TransitionSet

LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class HyperGrid:
    amplitudes: Sequence[float] = (0.1, 1.0, 10.0)
    lengthscales: Sequence = (0.25, 0.5, 1.0, 2.0, 4.0)  # scalars, or per-input vectors (ARD)
    noise_vars: Sequence[float] = (1e-4, 1e-2, 1e-1, 1.0)

    def scaled(self, length: float, amplitude: float = 1.0) -> "HyperGrid":
        return HyperGrid(
            tuple(a * amplitude for a in self.amplitudes),
            tuple(np.asarray(l) * length for l in self.lengthscales),
            tuple(v * amplitude for v in self.noise_vars),
        )

    def __iter__(self):
        return itertools.product(self.amplitudes, self.lengthscales, self.noise_vars)


def se_kernel(X1: np.ndarray, X2: np.ndarray, amplitude: float, lengthscale: np.ndarray) -> np.ndarray:
    A = X1 / lengthscale
    B = X2 / lengthscale
    d2 = np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2 * A @ B.T
    return amplitude * np.exp(-np.maximum(d2, 0.0))


class GpFitError(np.linalg.LinAlgError):
    pass


def _factor(K: np.ndarray, noise_var: float):
    try:
        return linalg.cho_factor(K + noise_var * np.eye(len(K)), lower=True, check_finite=False)
    except linalg.LinAlgError as err:
        raise GpFitError(
            f"Cholesky of K + {noise_var:g} I failed (min diag {K.diagonal().min():g})"
        ) from err


def log_evidence(X: np.ndarray, Y: np.ndarray, amplitude: float, lengthscale, noise_var: float) -> float:
    """Sum over output columns of the Gaussian log marginal likelihood (Cholesky path)."""
    ls = np.broadcast_to(np.asarray(lengthscale, dtype=float), (X.shape[1],))
    Yc = Y - Y.mean(0)
    c = _factor(se_kernel(X, X, amplitude, ls), noise_var)
    A = linalg.cho_solve(c, Yc, check_finite=False)
    n, d = Yc.shape
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return float(-0.5 * np.sum(Yc * A) - 0.5 * d * logdet - 0.5 * n * d * LOG_2PI)


@dataclass(frozen=True)
class GpModel:
    X: np.ndarray  # (M, d_s + d_a)
    Y: np.ndarray  # (M, d_out)
    d_s: int
    amplitude: float
    lengthscale: np.ndarray
    noise_var: float
    evidence: Optional[float] = None

    def __post_init__(self):
        if self.amplitude <= 0 or self.noise_var <= 0:
            raise ValueError("amplitude and noise_var must be positive")
        ls = np.broadcast_to(np.asarray(self.lengthscale, dtype=float), (self.X.shape[1],)).copy()
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        object.__setattr__(self, "lengthscale", ls)
        object.__setattr__(self, "y_mean", self.Y.mean(0))
        c = _factor(se_kernel(self.X, self.X, self.amplitude, ls), self.noise_var)
        object.__setattr__(self, "chol", c)
        object.__setattr__(self, "weights", linalg.cho_solve(c, self.Y - self.y_mean, check_finite=False))

    @property
    def M(self) -> int:
        return len(self.X)

    @property
    def d_a(self) -> int:
        return self.X.shape[1] - self.d_s

    @property
    def d_out(self) -> int:
        return self.Y.shape[1]


def gp_fit(samples, hyper_grid: HyperGrid = HyperGrid()) -> GpModel:
    """Fit by maximising log evidence over ``hyper_grid``."""
    data = samples if isinstance(samples, TransitionSet) else TransitionSet.from_samples(samples)
    X, Y = data.inputs, data.s_next
    best, best_ev = None, -np.inf
    for amp, ls, nv in hyper_grid:
        ev = log_evidence(X, Y, amp, ls, nv)
        if ev > best_ev:
            best, best_ev = (amp, ls, nv), ev
    amp, ls, nv = best
    return GpModel(X, Y, data.d_s, float(amp), ls, float(nv), evidence=best_ev)


def _inputs(model: GpModel, s, a) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    s = s.reshape(1, -1) if s.ndim <= 1 else s
    a = a.reshape(1, -1) if a.ndim <= 1 else a
    if s.shape[1] != model.d_s or a.shape[1] != model.d_a:
        raise ContractError("query dimensions do not match the fitted model")
    return np.hstack([s, a])


def gp_predict(model: GpModel, s, a):
    """Posterior mean and variance of the latent function, per output dimension."""
    Xq = _inputs(model, s, a)
    k = se_kernel(Xq, model.X, model.amplitude, model.lengthscale)
    mean = k @ model.weights + model.y_mean
    v = linalg.solve_triangular(model.chol[0], k.T, lower=True, check_finite=False)
    var = np.maximum(model.amplitude - np.sum(v**2, 0), 0.0)
    var = np.repeat(var[:, None], model.d_out, axis=1)
    if np.ndim(s) <= 1:
        return mean[0], var[0]
    return mean, var


def gp_sample_batch(model: GpModel, s, a, rng: np.random.Generator):
    """Draw ``s' ~ N(mean, var + noise_var)`` per row; returns ``(s_next, ok)``."""
    mean, var = gp_predict(model, np.atleast_2d(s), np.atleast_2d(a))
    out = mean + np.sqrt(var + model.noise_var) * rng.standard_normal(mean.shape)
    return out, np.ones(len(out), dtype=bool)


def gp_sample(model: GpModel, s, a, rng: np.random.Generator) -> np.ndarray:
    mean, var = gp_predict(model, s, a)
    return mean + np.sqrt(var + model.noise_var) * rng.standard_normal(np.shape(mean))


def gp_density(model: GpModel, s, a, s_next) -> np.ndarray:
    """Predictive density of ``s_next`` (product over output dimensions)."""
    mean, var = gp_predict(model, s, a)
    tot = var + model.noise_var
    s_next = np.asarray(s_next, dtype=float).reshape(-1, model.d_out)
    z = (s_next - mean) ** 2 / tot
    return np.exp(-0.5 * np.sum(z + np.log(2 * np.pi * tot), axis=-1))


# ---------------------------------------------------------------------------
# persistence


def save(model: GpModel, fh) -> None:
    f = lambda x: f"{x:.17g}"
    fh.write("M,d_s,d_a,d_out,amplitude,noise_var,lengthscale\n")
    ls = ";".join(f(x) for x in model.lengthscale)
    fh.write(f"{model.M},{model.d_s},{model.d_a},{model.d_out},{f(model.amplitude)},{f(model.noise_var)},{ls}\n")
    cols = [f"x{i}" for i in range(model.X.shape[1])] + [f"y{i}" for i in range(model.d_out)]
    fh.write(",".join(cols) + "\n")
    for row in np.hstack([model.X, model.Y]):
        fh.write(",".join(f(x) for x in row) + "\n")


def load(fh) -> GpModel:
    lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 3 or lines[0] != "M,d_s,d_a,d_out,amplitude,noise_var,lengthscale":
        raise ValueError("not a GP model file")
    M, d_s, d_a, d_out, amp, nv, ls = lines[1].split(",")
    M, d_s, d_a, d_out = int(M), int(d_s), int(d_a), int(d_out)
    rows = np.loadtxt(io.StringIO("\n".join(lines[3:])), delimiter=",", ndmin=2)
    if rows.shape != (M, d_s + d_a + d_out):
        raise ValueError(f"expected {M} rows of width {d_s + d_a + d_out}, got {rows.shape}")
    lengthscale = np.array([float(x) for x in ls.split(";")])
    return GpModel(rows[:, : d_s + d_a], rows[:, d_s + d_a :], d_s, float(amp), lengthscale, float(nv))
