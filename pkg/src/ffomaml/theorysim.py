"""Monte-Carlo check of the excess-risk behaviour of threshold-weighted task pooling.

Each task ``t`` has a feature ``v_t`` in ``[0, 1]^r`` and a base learner
``h_t(u) = <w_base + C * M v_t, phi(u)>`` with ``phi(u) = (1, u)``. ``M`` is
rescaled so that ``sup_u |h_t1(u) - h_t2(u)| <= C * ||v_t1 - v_t2||`` holds
with equality attainable. Observations are ``y = h_t(x) + eps`` for
``x ~ U[0, 1]`` (the meta-feature map is the identity).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

FEATURE_DIM = 2  # phi(u) = (1, u)


def phi(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.stack([np.ones_like(u), u], axis=-1)


@dataclass(frozen=True)
class GenerativeConfig:
    T: int = 500
    n: int = 20
    r: int = 2
    sigma: float = 0.5
    lipschitz: float = 1.0
    h: float = 0.1
    seed: int = 0
    n_test: int = 10_000

    def __post_init__(self):
        if self.T < 1 or self.n < 1 or self.r < 1:
            raise ValueError(f"T, n and r must be positive: {self}")
        if self.sigma < 0 or self.lipschitz < 0 or self.h < 0:
            raise ValueError(f"sigma, lipschitz and h must be non-negative: {self}")


@dataclass(frozen=True)
class LinearLearner:
    """``u -> <coef, phi(u)>``."""

    coef: np.ndarray

    def __call__(self, u) -> np.ndarray:
        return phi(u) @ self.coef


@dataclass
class TheoryTask:
    v: np.ndarray
    coef: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def truth(self) -> LinearLearner:
        return LinearLearner(self.coef)


@dataclass
class TheoryUniverse:
    tasks: list
    test_task: TheoryTask
    w_base: np.ndarray
    M: np.ndarray
    config: GenerativeConfig

    def coef_for(self, v) -> np.ndarray:
        return self.w_base + self.config.lipschitz * self.M @ np.asarray(v, dtype=float)


def _lipschitz_matrix(rng, r):
    M = rng.normal(size=(FEATURE_DIM, r))
    # ||M^T phi(u)|| is convex in u, so its sup over [0, 1] sits at an endpoint
    worst = max(np.linalg.norm(M.T @ phi(0.0)), np.linalg.norm(M.T @ phi(1.0)))
    return M / worst


def _sample_task(rng, universe_coef, v, n, sigma):
    coef = universe_coef(v)
    x = rng.uniform(size=n)
    y = phi(x) @ coef
    if sigma > 0:
        y = y + sigma * rng.normal(size=n)
    return TheoryTask(v, coef, x, y)


def sample_theory_universe(config: GenerativeConfig) -> TheoryUniverse:
    rng = np.random.default_rng(config.seed)
    w_base = rng.normal(size=FEATURE_DIM)
    M = _lipschitz_matrix(rng, config.r)
    uni = TheoryUniverse([], None, w_base, M, config)
    V = rng.uniform(size=(config.T, config.r))
    uni.tasks = [_sample_task(rng, uni.coef_for, v, config.n, config.sigma) for v in V]
    v_test = rng.uniform(size=config.r)
    uni.test_task = _sample_task(rng, uni.coef_for, v_test, config.n, config.sigma)
    return uni


def fit_task_learner(task: TheoryTask, ridge: float = 1e-8) -> LinearLearner:
    """Least squares on ``phi(x)``; falls back to a tiny ridge when rank-deficient."""
    A = phi(task.x)
    if len(task.x) < FEATURE_DIM:
        raise ValueError(f"need at least {FEATURE_DIM} samples, got {len(task.x)}")
    if np.linalg.matrix_rank(A) < FEATURE_DIM:
        coef = np.linalg.solve(A.T @ A + ridge * np.eye(FEATURE_DIM), A.T @ task.y)
    else:
        coef, *_ = np.linalg.lstsq(A, task.y, rcond=None)
    return LinearLearner(coef)


def neighbor_mask(v_test, V: np.ndarray, h: float) -> np.ndarray:
    return np.linalg.norm(np.asarray(V) - np.asarray(v_test), axis=1) <= h


def weighted_estimator(v_test, task_vs: np.ndarray, learners: Sequence[LinearLearner],
                       h: float) -> LinearLearner:
    """Uniform average of the learners whose task lies within ``h`` of ``v_test``.

    The zero function when no task is that close.
    """
    if h < 0:
        raise ValueError("h must be non-negative")
    mask = neighbor_mask(v_test, task_vs, h)
    if not mask.any():
        return LinearLearner(np.zeros(FEATURE_DIM))
    coefs = np.stack([learners[i].coef for i in np.flatnonzero(mask)])
    return LinearLearner(coefs.mean(axis=0))


def excess_risk(estimate: LinearLearner, truth: LinearLearner, sigma: float,
                n_samples: int = 10_000, rng: Optional[np.random.Generator] = None,
                loss: str = "absolute") -> tuple[float, float]:
    """Monte-Carlo excess absolute loss on fresh samples; returns (mean, std error).

    Both losses are evaluated on the same draws.
    """
    if loss != "absolute":
        raise ValueError(f"unsupported loss {loss!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    u = rng.uniform(size=n_samples)
    g = truth(u)
    y = g + (sigma * rng.normal(size=n_samples) if sigma > 0 else 0.0)
    diff = np.abs(estimate(u) - y) - np.abs(g - y)
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n_samples))


def risks_over_h(config: GenerativeConfig, h_grid: Sequence[float]) -> np.ndarray:
    """Excess risk of the test task for every threshold, on one universe."""
    uni = sample_theory_universe(config)
    learners = [fit_task_learner(t) for t in uni.tasks]
    V = np.stack([t.v for t in uni.tasks])
    out = []
    for i, h in enumerate(h_grid):
        est = weighted_estimator(uni.test_task.v, V, learners, h)
        rng = np.random.default_rng([config.seed, 7919, i])
        out.append(excess_risk(est, uni.test_task.truth, config.sigma, config.n_test, rng)[0])
    return np.array(out)


@dataclass
class RiskCurve:
    axis: str
    values: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    seeds: tuple
    tuned_h: Optional[np.ndarray] = None

    def to_text(self) -> str:
        lines = [f"# axis={self.axis} seeds={','.join(map(str, self.seeds))}"]
        for i in range(len(self.values)):
            row = [self.values[i], self.mean[i], self.lo[i], self.hi[i]]
            if self.tuned_h is not None:
                row.append(self.tuned_h[i])
            lines.append(" ".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RiskCurve":
        lines = text.strip().splitlines()
        head = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split())
        rows = np.array([[float(x) for x in ln.split()] for ln in lines[1:]]).reshape(len(lines) - 1, -1)
        seeds = tuple(int(s) for s in head["seeds"].split(",") if s)
        tuned = rows[:, 4] if rows.shape[1] > 4 else None
        return cls(head["axis"], rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3], seeds, tuned)

    def log_log_slope(self) -> float:
        return float(np.polyfit(np.log(self.values), np.log(self.mean), 1)[0])


def bootstrap_interval(samples: np.ndarray, n_resamples: int = 1000, level: float = 0.95,
                       seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean."""
    samples = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(len(samples), size=(n_resamples, len(samples)))
    means = samples[idx].mean(axis=1)
    a = (1 - level) / 2
    return float(np.quantile(means, a)), float(np.quantile(means, 1 - a))


def default_h_grid() -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(0.02, 1.5, 24), [np.inf]])


def sweep(axis: str, grid: Sequence[float], config: GenerativeConfig, seeds: Sequence[int],
          h_grid: Optional[Sequence[float]] = None) -> RiskCurve:
    """Excess-risk curve over thresholds (``axis="h"``) or task counts (``axis="T"``).

    For the task-count axis the threshold is tuned per grid point: the ``h_grid``
    entry with the lowest mean risk across seeds is kept.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if len(seeds) < 10:
        raise ValueError("a sweep needs at least 10 seeds")
    seeds = tuple(int(s) for s in seeds)

    if axis == "h":
        per_seed = np.stack([risks_over_h(replace(config, seed=s), grid) for s in seeds])
        tuned = None
    elif axis == "T":
        hg = np.asarray(default_h_grid() if h_grid is None else h_grid, dtype=float)
        cols, tuned = [], []
        for T in grid:
            R = np.stack([risks_over_h(replace(config, T=int(T), seed=s), hg) for s in seeds])
            best = int(np.argmin(R.mean(axis=0)))
            cols.append(R[:, best])
            tuned.append(hg[best])
        per_seed = np.stack(cols, axis=1)
        tuned = np.array(tuned)
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")

    mean = per_seed.mean(axis=0)
    bounds = [bootstrap_interval(per_seed[:, j], seed=j) for j in range(len(grid))]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return RiskCurve(axis, grid, mean, lo, hi, seeds, tuned)
