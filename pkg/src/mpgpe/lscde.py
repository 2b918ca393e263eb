"""Least-squares conditional density estimation of ``p(s' | s, a)``.

The model is a non-negative mixture of separable Gaussian bumps centred on
training transitions::

    q(s'|s,a) = sum_m alpha_m k_s(s, s_m) k_a(a, a_m) k_o(s', s'_m)

Weights minimise the squared error to the true conditional density, which
reduces to the ridge system ``(H + lam I) alpha = h`` with

    H = mean_i Phibar(s_i, a_i),   h = mean_i phi(s_i, a_i, s'_i),

where ``Phibar(s, a) = int phi phi^T ds'`` has a closed form for Gaussian
bumps.  The solution is clipped at zero and renormalised over ``s'`` at query
time, which makes exact sampling a two-stage draw (pick a centre, then add
isotropic Gaussian noise).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import io
import logging
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .env import ContractError, TransitionSet

logger = logging.getLogger(__name__)

UNDERFLOW = 1e-300

DEFAULT_KAPPAS = (0.1, 0.25, 0.5, 1.0, 2.0, 4.0)
DEFAULT_LAMBDAS = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


class DegenerateDensity(ArithmeticError):
    """The normaliser vanished: the query lies far from every centre."""


def _widths(kappa) -> np.ndarray:
    """Normalise a shared or per-block bandwidth to ``(k_s, k_a, k_out)``."""
    w = np.broadcast_to(np.asarray(kappa, dtype=float), (3,)).copy()
    if np.any(w <= 0):
        raise ValueError("bandwidths must be positive")
    return w


def _sqdist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # (n, d) x (M, d) -> (n, M); clipped to kill tiny negative round-off
    d2 = np.sum(x**2, 1)[:, None] + np.sum(c**2, 1)[None, :] - 2.0 * x @ c.T
    return np.maximum(d2, 0.0)


@dataclass(frozen=True)
class LscdeModel:
    centers: TransitionSet
    kappa: np.ndarray  # (k_s, k_a, k_out); equal entries when shared
    lam: float
    alpha: np.ndarray  # clipped weights
    alpha_raw: Optional[np.ndarray] = None  # ridge solution before clipping

    def __post_init__(self):
        object.__setattr__(self, "kappa", _widths(self.kappa))
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.shape != (len(self.centers),):
            raise ContractError("alpha length must equal the number of centres")
        if np.any(alpha < 0):
            raise ValueError("alpha must be non-negative")
        object.__setattr__(self, "alpha", alpha)

    @property
    def M(self) -> int:
        return len(self.centers)

    @property
    def d_s(self) -> int:
        return self.centers.d_s

    @property
    def d_a(self) -> int:
        return self.centers.d_a

    @property
    def d_out(self) -> int:
        return self.centers.d_s

    @property
    def shared_kappa(self) -> bool:
        return bool(np.all(self.kappa == self.kappa[0]))

    # -- kernels -----------------------------------------------------------

    def input_kernel(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """``k_s(s, s_m) k_a(a, a_m)`` for a batch, shape ``(n, M)``."""
        s = _batch(s, self.d_s, "state")
        a = _batch(a, self.d_a, "action")
        ks, ka, _ = self.kappa
        x = np.hstack([s / ks, a / ka])
        c = np.hstack([self.centers.s / ks, self.centers.a / ka])
        return np.exp(-0.5 * _sqdist(x, c))

    def output_kernel(self, s_next: np.ndarray) -> np.ndarray:
        s_next = _batch(s_next, self.d_out, "next state")
        return np.exp(-_sqdist(s_next, self.centers.s_next) / (2 * self.kappa[2] ** 2))


def _batch(x, dim: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.reshape(1, -1)
    if x.shape[1] != dim:
        raise ContractError(f"{name} has dimension {x.shape[1]}, expected {dim}")
    return x


def basis_eval(model: LscdeModel, s, a, s_next) -> np.ndarray:
    """Basis vector ``phi(s, a, s')`` (length M), or ``(n, M)`` for batches."""
    out = model.input_kernel(s, a) * model.output_kernel(s_next)
    return out[0] if np.ndim(s) <= 1 and np.ndim(s_next) <= 1 else out


def phi_bar_element(model: LscdeModel, m: int, m2: int, s, a) -> float:
    """Closed-form ``int phi_m(s,a,s') phi_m2(s,a,s') ds'``."""
    M = model.M
    if not (0 <= m < M and 0 <= m2 < M):
        raise IndexError(f"centre index out of range for M={M}")
    kin = model.input_kernel(s, a)[0]
    ko = model.kappa[2]
    d2 = np.sum((model.centers.s_next[m] - model.centers.s_next[m2]) ** 2)
    return float((np.sqrt(np.pi) * ko) ** model.d_out * (kin[m] * kin[m2]) * np.exp(-d2 / (4 * ko**2)))


def design_matrices(data: TransitionSet, centers: TransitionSet, kappa) -> tuple[np.ndarray, np.ndarray]:
    """Sample averages ``(H, h)`` of ``Phibar`` and ``phi`` over ``data``.

    ``centers`` fixes the basis; ``data`` supplies the expectation.
    """
    probe = LscdeModel(centers, kappa, 0.0, np.zeros(len(centers)))
    kin = probe.input_kernel(data.s, data.a)
    kout = probe.output_kernel(data.s_next)
    ko = probe.kappa[2]
    n = len(data)
    G = np.exp(-_sqdist(centers.s_next, centers.s_next) / (4 * ko**2))
    H = (np.sqrt(np.pi) * ko) ** centers.d_s * (kin.T @ kin / n) * G
    h = np.mean(kin * kout, axis=0)
    return H, h


def solve_ridge(H: np.ndarray, h: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(H + lam I) x = h`` by Cholesky, falling back to lstsq."""
    A = H + lam * np.eye(len(h))
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=False)
        x = linalg.cho_solve(c, h, check_finite=False)
        if np.all(np.isfinite(x)):
            return x
    except linalg.LinAlgError:
        pass
    logger.warning("Cholesky failed for lam=%g; using least-squares path", lam)
    x, *_ = linalg.lstsq(A, h, check_finite=False)
    return x


def _pick_centers(data: TransitionSet, max_centers: Optional[int], rng) -> TransitionSet:
    if max_centers is None or len(data) <= max_centers:
        return data
    if rng is None:
        raise ValueError("an rng is required to subsample centres")
    idx = np.sort(rng.choice(len(data), size=max_centers, replace=False))
    return data[idx]


def fit(
    samples,
    kappa,
    lam: float,
    max_centers: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> LscdeModel:
    """Fit LSCDE weights on ``samples`` (a :class:`TransitionSet` or list of triples)."""
    data = samples if isinstance(samples, TransitionSet) else TransitionSet.from_samples(samples)
    if len(data) == 0:
        raise ValueError("no samples to fit")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    centers = _pick_centers(data, max_centers, rng)
    H, h = design_matrices(data, centers, kappa)
    alpha_raw = solve_ridge(H, h, lam)
    return LscdeModel(centers, kappa, float(lam), np.maximum(alpha_raw, 0.0), alpha_raw)


def normalizer(model: LscdeModel, s, a) -> np.ndarray | float:
    """``int alpha^T phi(s, a, s') ds'``; scalar for single queries."""
    kin = model.input_kernel(s, a)
    z = (np.sqrt(2 * np.pi) * model.kappa[2]) ** model.d_out * (kin @ model.alpha)
    return float(z[0]) if np.ndim(s) <= 1 else z


def density(model: LscdeModel, s, a, s_next) -> np.ndarray | float:
    """Renormalised conditional density ``p(s'|s,a)``.

    A single ``(s, a)`` may be paired with many ``s_next`` rows.
    """
    kin = model.input_kernel(s, a)
    kout = model.output_kernel(s_next)
    z = (np.sqrt(2 * np.pi) * model.kappa[2]) ** model.d_out * (kin @ model.alpha)
    if np.any(z <= UNDERFLOW):
        raise DegenerateDensity("normalizer underflow: query is far from all training data")
    if len(kin) == 1:
        p = kout @ (kin[0] * model.alpha) / z[0]
    elif len(kin) == len(kout):
        p = np.sum(kin * kout * model.alpha, axis=1) / z
    else:
        raise ContractError("query batches differ in length")
    return float(p[0]) if np.ndim(s_next) <= 1 and np.ndim(s) <= 1 else p


def sample_batch(model: LscdeModel, s: np.ndarray, a: np.ndarray, rng: np.random.Generator):
    """Draw one ``s'`` per row of ``(s, a)``.

    Returns ``(s_next, ok)``; rows with a vanishing normaliser get ``ok=False``
    and a copy of ``s`` as a placeholder.
    """
    s = _batch(s, model.d_s, "state")
    w = model.input_kernel(s, a) * model.alpha
    tot = w.sum(1)
    ok = tot * (np.sqrt(2 * np.pi) * model.kappa[2]) ** model.d_out > UNDERFLOW
    cdf = np.cumsum(w, axis=1)
    u = rng.random(len(s)) * np.where(ok, tot, 1.0)
    idx = np.minimum((cdf < u[:, None]).sum(1), model.M - 1)
    z = rng.standard_normal((len(s), model.d_out))
    out = model.centers.s_next[idx] + model.kappa[2] * z
    return np.where(ok[:, None], out, s), ok


def sample(model: LscdeModel, s, a, rng: np.random.Generator) -> np.ndarray:
    """Exact draw from the renormalised mixture at a single ``(s, a)``."""
    sn, ok = sample_batch(model, s, a, rng)
    if not ok[0]:
        raise DegenerateDensity("normalizer underflow: query is far from all training data")
    return sn[0]


def mean_prediction(model: LscdeModel, s, a) -> np.ndarray:
    """Conditional mean ``E[s' | s, a]`` of the renormalised mixture."""
    w = model.input_kernel(s, a) * model.alpha
    tot = w.sum(1, keepdims=True)
    if np.any(tot <= 0):
        raise DegenerateDensity("normalizer underflow: query is far from all training data")
    return (w / tot) @ model.centers.s_next


# ---------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class CvGrid:
    kappas: Sequence[float] = DEFAULT_KAPPAS
    lambdas: Sequence[float] = DEFAULT_LAMBDAS
    folds: int = 5

    def __post_init__(self):
        if len(self.kappas) == 0 or len(self.lambdas) == 0:
            raise ValueError("empty cross-validation grid")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")

    def scaled(self, factor: float) -> "CvGrid":
        return CvGrid(tuple(_kappa_key(np.asarray(k) * factor) for k in self.kappas), self.lambdas, self.folds)

    @classmethod
    def per_block(cls, input_kappas, output_kappas, lambdas=DEFAULT_LAMBDAS, folds: int = 5) -> "CvGrid":
        """Grid over ``(k_in, k_in, k_out)``: one width for ``(s, a)``, one for ``s'``."""
        kappas = tuple((float(ki), float(ki), float(ko)) for ki in input_kappas for ko in output_kappas)
        return cls(kappas, tuple(lambdas), folds)


def _kappa_key(k):
    """Hashable grid key: a float for a shared width, else a 3-tuple."""
    k = np.asarray(k, dtype=float)
    return float(k) if k.ndim == 0 else tuple(float(x) for x in k)


@dataclass
class CvResult:
    kappa: float | tuple
    lam: float
    scores: dict  # (kappa, lam) -> mean held-out objective

    @property
    def best_score(self) -> float:
        return self.scores.get((self.kappa, self.lam), float("nan"))


def heldout_objective(alpha: np.ndarray, H: np.ndarray, h: np.ndarray) -> float:
    """``1/2 alpha^T H alpha - h^T alpha`` (squared error up to a constant)."""
    return float(0.5 * alpha @ H @ alpha - h @ alpha)


def cross_validate(
    samples,
    grid: CvGrid = CvGrid(),
    max_centers: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> CvResult:
    """K-fold selection of ``(kappa, lambda)`` by held-out squared error.

    Ties go to the larger lambda, then the larger kappa.
    """
    data = samples if isinstance(samples, TransitionSet) else TransitionSet.from_samples(samples)
    n = len(data)
    if grid.folds > n:
        raise ValueError(f"{grid.folds} folds requested for {n} samples")
    rng = np.random.default_rng(0) if rng is None else rng
    fold_of = rng.permutation(n) % grid.folds
    totals = {(_kappa_key(k), float(l)): 0.0 for k in grid.kappas for l in grid.lambdas}
    for f in range(grid.folds):
        train, test = data[fold_of != f], data[fold_of == f]
        centers = _pick_centers(train, max_centers, rng)
        for k in grid.kappas:
            H, h = design_matrices(train, centers, k)
            Ht, ht = design_matrices(test, centers, k)
            for l in grid.lambdas:
                alpha = np.maximum(solve_ridge(H, h, l), 0.0)
                totals[(_kappa_key(k), float(l))] += heldout_objective(alpha, Ht, ht) / grid.folds
    best = min(totals, key=lambda kl: (totals[kl], -kl[1], tuple(-np.atleast_1d(kl[0]))))
    return CvResult(best[0], best[1], totals)


def fit_cv(
    samples,
    grid: CvGrid = CvGrid(),
    max_centers: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[LscdeModel, CvResult]:
    """Cross-validate then refit on all samples with the selected pair.

    Fewer samples than folds drops to leave-one-out; a single sample cannot
    be cross-validated and gets the tie-break choice (largest lambda, then
    largest kappa) with no scores.
    """
    n = len(samples)
    if n == 1:
        k = max(grid.kappas, key=lambda k: tuple(np.atleast_1d(k)))
        cv = CvResult(_kappa_key(k), float(max(grid.lambdas)), {})
    else:
        if grid.folds > n:
            grid = replace(grid, folds=n)
        cv = cross_validate(samples, grid, max_centers, rng)
    return fit(samples, cv.kappa, cv.lam, max_centers, rng), cv


# ---------------------------------------------------------------------------
# persistence


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def save(model: LscdeModel, fh) -> None:
    """Plain-text, CSV-compatible: header row + values, then one row per centre."""
    kap = _fmt(model.kappa[0]) if model.shared_kappa else ";".join(_fmt(k) for k in model.kappa)
    fh.write("M,d_s,d_a,kappa,lambda\n")
    fh.write(f"{model.M},{model.d_s},{model.d_a},{kap},{_fmt(model.lam)}\n")
    cols = (
        [f"s{i}" for i in range(model.d_s)]
        + [f"a{i}" for i in range(model.d_a)]
        + [f"s_next{i}" for i in range(model.d_s)]
        + ["alpha"]
    )
    fh.write(",".join(cols) + "\n")
    c = model.centers
    for row in np.hstack([c.s, c.a, c.s_next, model.alpha[:, None]]):
        fh.write(",".join(_fmt(x) for x in row) + "\n")


def load(fh) -> LscdeModel:
    lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 3 or lines[0] != "M,d_s,d_a,kappa,lambda":
        raise ValueError("not an LSCDE model file")
    M, d_s, d_a, kap, lam = lines[1].split(",")
    M, d_s, d_a = int(M), int(d_s), int(d_a)
    kappa = np.array([float(k) for k in kap.split(";")])
    rows = np.loadtxt(io.StringIO("\n".join(lines[3:])), delimiter=",", ndmin=2)
    if rows.shape != (M, 2 * d_s + d_a + 1):
        raise ValueError(f"expected {M} centre rows of width {2 * d_s + d_a + 1}, got {rows.shape}")
    centers = TransitionSet(rows[:, :d_s], rows[:, d_s : d_s + d_a], rows[:, d_s + d_a : -1])
    return LscdeModel(centers, kappa if len(kappa) == 3 else kappa[0], float(lam), rows[:, -1])
