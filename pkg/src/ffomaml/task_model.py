"""Tasks, support/query splits and the seeded synthetic task family.

A task is one (product, environment) pair. Each observation carries the
feature tuple ``(s, v, hist_price, hist_demand, query_price)`` flattened in
that order, and a demand target.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, InsufficientSamples


@dataclass(frozen=True, order=True)
class TaskId:
    product_index: int
    environment_index: int

    def __post_init__(self):
        if self.product_index < 0 or self.environment_index < 0:
            raise DataError(f"negative task index {self}")

    def __str__(self):
        return f"{self.product_index}:{self.environment_index}"


@dataclass(frozen=True)
class FeatureTuple:
    s: np.ndarray
    v: np.ndarray
    hist_price: float
    hist_demand: float
    query_price: float

    def __post_init__(self):
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float).reshape(-1))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(-1))
        flat = self.flatten()
        if not np.all(np.isfinite(flat)):
            raise DataError("non-finite feature value")
        if self.hist_demand < 0:
            raise DataError(f"negative historical demand {self.hist_demand}")

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.s, self.v, [self.hist_price, self.hist_demand, self.query_price]]
        )

    @property
    def dim(self) -> int:
        return self.s.size + self.v.size + 3


@dataclass(frozen=True)
class Observation:
    x: FeatureTuple
    y: float

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise DataError(f"non-finite target {self.y}")


def as_arrays(observations: Sequence[Observation]) -> tuple[np.ndarray, np.ndarray]:
    """Stack observations into a design matrix and target vector."""
    if len(observations) == 0:
        return np.zeros((0, 0)), np.zeros(0)
    X = np.stack([o.x.flatten() for o in observations])
    y = np.array([o.y for o in observations], dtype=float)
    return X, y


@dataclass
class TaskDataset:
    id: TaskId
    support: list
    query: list
    hierarchy_label: str = ""
    # generating coefficients (weights then bias) for synthetic tasks
    true_coef: Optional[np.ndarray] = field(default=None, repr=False)

    @cached_property
    def support_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return as_arrays(self.support)

    @cached_property
    def query_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return as_arrays(self.query)

    @property
    def samples(self) -> list:
        return list(self.support) + list(self.query)


@dataclass(frozen=True)
class ProductHistory:
    """Per-product side information consumed by the graph forecaster."""

    brand: str
    static: np.ndarray
    sales: np.ndarray
    prices: np.ndarray
    cluster: int = -1


@dataclass
class TaskUniverse:
    tasks: list
    feature_dim: int
    rng_seed: int = 0
    products: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate TaskId in universe")

    def task(self, task_id: TaskId) -> TaskDataset:
        return self._index[task_id]

    @cached_property
    def _index(self) -> dict:
        return {t.id: t for t in self.tasks}

    def __len__(self):
        return len(self.tasks)

    def subset(self, ids) -> "TaskUniverse":
        keep = set(ids)
        return TaskUniverse(
            [t for t in self.tasks if t.id in keep],
            self.feature_dim,
            self.rng_seed,
            self.products,
        )


@dataclass
class SynthConfig:
    n_products: int = 10
    envs_per_product: int = 5
    samples_per_task: int = 20
    k_shot: int = 5
    product_dim: int = 2
    env_dim: int = 2
    noise_std: float = 0.1
    n_clusters: int = 2
    cluster_scale: float = 0.5
    task_perturbation: float = 0.1
    feature_jitter: float = 0.3
    price_low: float = 0.5
    price_high: float = 2.0
    demand_level: float = 8.0
    brands_per_cluster: int = 2
    history_days: int = 40
    clip_demand: bool = False

    @property
    def feature_dim(self) -> int:
        return self.product_dim + self.env_dim + 3

    def validate(self):
        for name in ("n_products", "envs_per_product", "samples_per_task", "k_shot",
                     "n_clusters", "brands_per_cluster", "history_days"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("product_dim", "env_dim"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("noise_std", "cluster_scale", "task_perturbation", "feature_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.k_shot >= self.samples_per_task:
            raise ConfigError(
                f"k_shot={self.k_shot} needs samples_per_task > k_shot, "
                f"got {self.samples_per_task}"
            )
        if not self.price_low < self.price_high:
            raise ConfigError("price_low must be below price_high")


def split_support_query(
    task_samples: Sequence[Observation],
    k: int,
    seed: int,
    task_id: TaskId = TaskId(0, 0),
    hierarchy_label: str = "",
) -> TaskDataset:
    if len(task_samples) <= k:
        raise InsufficientSamples(
            f"need more than k={k} samples for a non-empty query, got {len(task_samples)}"
        )
    if k < 1:
        raise InsufficientSamples(f"k must be at least 1, got {k}")
    order = np.random.default_rng(seed).permutation(len(task_samples))
    support = [task_samples[i] for i in order[:k]]
    query = [task_samples[i] for i in order[k:]]
    return TaskDataset(task_id, support, query, hierarchy_label)


def resplit(task: TaskDataset, k: int, seed: int) -> TaskDataset:
    """Re-draw the support/query partition of a task with a new shot count."""
    out = split_support_query(task.samples, k, seed, task.id, task.hierarchy_label)
    out.true_coef = task.true_coef
    return out


def _history(rng, n_days, base_price, level, elasticity, amplitude, phase, noise):
    promo = rng.random(n_days) < 0.2
    discount = rng.uniform(0.1, 0.4, n_days)
    prices = base_price * (1.0 - promo * discount)
    days = np.arange(n_days)
    sales = (
        level
        + elasticity * prices
        + amplitude * np.sin(2 * np.pi * days / 7.0 + phase)
        + noise * rng.normal(size=n_days)
    )
    return np.maximum(sales, 0.0), prices


def generate_synthetic_universe(config: SynthConfig, seed: int) -> TaskUniverse:
    """Draw a clustered family of linear demand tasks.

    Tasks whose products share a latent cluster share base coefficients up to
    a Gaussian perturbation of scale ``task_perturbation``.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    m = config.feature_dim
    K = config.n_clusters

    cluster_w = rng.normal(scale=config.cluster_scale, size=(K, m))
    cluster_b = config.demand_level + 0.5 * rng.normal(size=K)
    hist_level = rng.uniform(2.0, 6.0, K)
    hist_elast = rng.uniform(-2.0, -0.5, K)
    hist_amp = rng.uniform(0.2, 1.0, K)
    hist_phase = rng.uniform(0.0, 2 * np.pi, K)

    products = {}
    tasks = []
    n_brands = K * config.brands_per_cluster
    for i in range(config.n_products):
        c = i % K
        brand = c * config.brands_per_cluster + int(rng.integers(config.brands_per_cluster))
        s_i = rng.normal(size=config.product_dim)
        base_price = rng.uniform(config.price_low, config.price_high)
        sales, prices = _history(
            rng, config.history_days, base_price,
            hist_level[c], hist_elast[c], hist_amp[c], hist_phase[c], 0.2,
        )
        static = np.concatenate([s_i, np.eye(n_brands)[brand]])
        products[i] = ProductHistory(f"B{brand}", static, sales, prices, c)

        for j in range(config.envs_per_product):
            v_ij = rng.normal(size=config.env_dim)
            w = cluster_w[c] + config.task_perturbation * rng.normal(size=m)
            b = cluster_b[c] + config.task_perturbation * rng.normal()
            level = rng.uniform(1.0, 3.0)
            samples = []
            jit = config.feature_jitter
            for _ in range(config.samples_per_task):
                ft = FeatureTuple(
                    s=s_i + jit * rng.normal(size=config.product_dim),
                    v=v_ij + jit * rng.normal(size=config.env_dim),
                    hist_price=rng.uniform(config.price_low, config.price_high),
                    hist_demand=max(0.0, level + 0.25 * rng.normal()),
                    query_price=rng.uniform(config.price_low, config.price_high),
                )
                y = float(w @ ft.flatten() + b)
                if config.noise_std > 0:
                    y += config.noise_std * rng.normal()
                if config.clip_demand:
                    y = max(y, 0.0)
                samples.append(Observation(ft, y))
            split_seed = int(rng.integers(2**63 - 1))
            task = split_support_query(
                samples, config.k_shot, split_seed, TaskId(i, j), f"B{brand}"
            )
            task.true_coef = np.append(w, b)
            tasks.append(task)
    return TaskUniverse(tasks, m, seed, products)


def split_universe(universe: TaskUniverse, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Partition tasks into meta-train, validation and test universes."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"fractions must be three non-negative values summing to 1: {fractions}")
    ids = sorted(t.id for t in universe.tasks)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(fractions[0] * len(ids)))
    n_val = int(round(fractions[1] * len(ids)))
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(universe.subset([ids[i] for i in p]) for p in parts)


# -- serialization -----------------------------------------------------------

def _obs_to_dict(o: Observation) -> dict:
    return {
        "s": o.x.s.tolist(),
        "v": o.x.v.tolist(),
        "hist_price": o.x.hist_price,
        "hist_demand": o.x.hist_demand,
        "query_price": o.x.query_price,
        "y": o.y,
    }


def _obs_from_dict(d: dict) -> Observation:
    return Observation(
        FeatureTuple(d["s"], d["v"], d["hist_price"], d["hist_demand"], d["query_price"]),
        d["y"],
    )


def universe_to_json(universe: TaskUniverse) -> str:
    tasks = []
    for t in universe.tasks:
        tasks.append({
            "id": [t.id.product_index, t.id.environment_index],
            "hierarchy_label": t.hierarchy_label,
            "support": [_obs_to_dict(o) for o in t.support],
            "query": [_obs_to_dict(o) for o in t.query],
            "true_coef": None if t.true_coef is None else t.true_coef.tolist(),
        })
    products = {
        str(i): {
            "brand": p.brand,
            "static": p.static.tolist(),
            "sales": p.sales.tolist(),
            "prices": p.prices.tolist(),
            "cluster": p.cluster,
        }
        for i, p in universe.products.items()
    }
    doc = {
        "feature_dim": universe.feature_dim,
        "rng_seed": universe.rng_seed,
        "tasks": tasks,
        "products": products,
    }
    return json.dumps(doc, sort_keys=True)


def universe_from_json(text: str) -> TaskUniverse:
    doc = json.loads(text)
    tasks = []
    for d in doc["tasks"]:
        t = TaskDataset(
            TaskId(*d["id"]),
            [_obs_from_dict(o) for o in d["support"]],
            [_obs_from_dict(o) for o in d["query"]],
            d["hierarchy_label"],
        )
        if d.get("true_coef") is not None:
            t.true_coef = np.array(d["true_coef"])
        tasks.append(t)
    products = {
        int(i): ProductHistory(
            p["brand"], np.array(p["static"]), np.array(p["sales"]),
            np.array(p["prices"]), p["cluster"],
        )
        for i, p in doc.get("products", {}).items()
    }
    return TaskUniverse(tasks, doc["feature_dim"], doc["rng_seed"], products)
