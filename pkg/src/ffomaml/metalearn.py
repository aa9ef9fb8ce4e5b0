"""First-order meta-learning with proxy-conditioned feature modulation.

The meta-model is adapted to a task with one gradient step on its FiLM-modulated
support set; the query loss at the adapted parameters drives the meta-update of
both the shared initialization and the FiLM generator.
"""

from __future__ import annotations

import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import diffmodel as dm
from .errors import EmptyBatch, NonFiniteGradient
from .harness.metrics import compute_metrics
from .optim import Adam, warmup_linear
from .relgraph import EmbeddingTable, encode_proxy, proxy_encoding_dim, select_proxy
from .task_model import TaskDataset, TaskUniverse

log = logging.getLogger(__name__)

FFOMAML = "ffomaml"
FOMAML = "fomaml"
REPTILE = "reptile"
PER_TASK_LINEAR = "linear"
PER_TASK_MLP = "mlp"


@dataclass
class TrainConfig:
    inner_lr: float = 1e-3
    meta_lr: float = 1e-3
    k_shot: int = 5
    episodes: int = 1000
    warmup_ratio: float = 0.1
    dropout_rate: float = 0.5
    hidden_size: int = 32
    seed: int = 0
    model: str = dm.MLP
    task_batch: int = 4
    inner_steps: int = 1
    optimizer: str = "adam"  # or "sgd"
    schedule: str = "warmup_linear"  # or "constant"
    val_interval: int = 50
    proxy_delta: float = 0.5
    include_self: bool = True
    reptile_steps: int = 5
    reptile_outer_lr: float = 0.1
    baseline_steps: int = 200
    baseline_lr: float = 1e-2

    def __post_init__(self):
        if self.inner_lr <= 0 or self.meta_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1)")
        if self.episodes < 0 or self.task_batch < 1 or self.inner_steps < 1:
            raise ValueError("episodes >= 0, task_batch >= 1 and inner_steps >= 1 required")
        if self.optimizer not in ("adam", "sgd") or self.schedule not in ("warmup_linear", "constant"):
            raise ValueError(f"bad optimizer/schedule {self.optimizer}/{self.schedule}")

    def model_spec(self, m: int) -> dm.ModelSpec:
        if self.model == dm.LINEAR:
            return dm.ModelSpec.linear(m)
        return dm.ModelSpec.mlp(m, self.hidden_size, self.dropout_rate)

    def lr_multiplier(self, step: int) -> float:
        if self.schedule == "constant":
            return 1.0
        return warmup_linear(step, self.episodes, self.warmup_ratio)


@dataclass
class FilmGenerator:
    """One hidden layer mapping a proxy encoding to ``(scale - 1, shift)``.

    The output layer is bias-free and zero-initialized, and hidden biases start
    at zero, so a zero encoding yields the identity modulation and receives no
    gradient.
    """

    spec: dm.ModelSpec
    params: np.ndarray
    feature_dim: int

    @classmethod
    def create(cls, z_dim: int, m: int, hidden: int, seed: int) -> "FilmGenerator":
        spec = dm.ModelSpec(dm.MLP, (z_dim, hidden, 2 * m))
        params = np.zeros(spec.n_params)
        rng = np.random.default_rng(seed)
        (W1, _), _ = dm.unpack(spec, params)
        W1[...] = rng.uniform(-1, 1, size=W1.shape) / np.sqrt(z_dim)
        return cls(spec, params, m)

    @property
    def trainable(self) -> np.ndarray:
        """Mask of parameters that are updated (the output bias stays zero)."""
        mask = np.ones(self.spec.n_params, dtype=bool)
        mask[-2 * self.feature_dim:] = False
        return mask

    def coefficients(self, z: np.ndarray, params=None) -> dm.FilmCoefficients:
        p = self.params if params is None else params
        out = dm.predict_raw(self.spec, p, np.asarray(z, dtype=float)[None, :])[0]
        m = self.feature_dim
        return dm.FilmCoefficients(1.0 + out[:m], out[m:])

    def backward(self, z: np.ndarray, d_scale: np.ndarray, d_shift: np.ndarray) -> np.ndarray:
        """Parameter gradient given the loss gradient w.r.t. (scale, shift)."""
        d_out = np.concatenate([d_scale, d_shift])[None, :]
        g = dm.vector_jacobian(self.spec, self.params, np.asarray(z, dtype=float)[None, :], d_out)
        return np.where(self.trainable, g, 0.0)


@dataclass
class MetaState:
    spec: dm.ModelSpec
    meta_params: np.ndarray
    film_gen: FilmGenerator
    episode: int = 0
    meta_opt: Adam = None
    film_opt: Adam = None
    use_film: bool = True
    best_val_mse: float = float("inf")
    val_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.meta_opt is None:
            self.meta_opt = Adam(self.meta_params.size)
        if self.film_opt is None:
            self.film_opt = Adam(self.film_gen.params.size)

    def copy(self) -> "MetaState":
        gen = FilmGenerator(self.film_gen.spec, self.film_gen.params.copy(), self.film_gen.feature_dim)
        return MetaState(self.spec, self.meta_params.copy(), gen, self.episode,
                         self.meta_opt.copy(), self.film_opt.copy(), self.use_film,
                         self.best_val_mse, list(self.val_history))

    def coefficients(self, z) -> Optional[dm.FilmCoefficients]:
        if not self.use_film:
            return None
        return self.film_gen.coefficients(z)

    def evaluate(self, task: TaskDataset, z, config: "TrainConfig"):
        return adapt_and_evaluate(self, task, z, config)


def init_state(m: int, z_dim: int, config: TrainConfig, use_film: bool = True) -> MetaState:
    spec = config.model_spec(m)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    params = dm.init_params(spec, int(seeds[0].generate_state(1)[0]))
    gen = FilmGenerator.create(z_dim, m, config.hidden_size, int(seeds[1].generate_state(1)[0]))
    return MetaState(spec, params, gen, use_film=use_film)


def _check(g, what):
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient(f"non-finite {what} gradient")


def inner_update(state: MetaState, task: TaskDataset, z, config: TrainConfig,
                 rng: Optional[np.random.Generator] = None, coeffs=None) -> np.ndarray:
    """Adapted parameters after ``config.inner_steps`` gradient steps on the support set.

    Dropout masks are drawn from ``rng`` when given (training mode).
    """
    X, y = task.support_arrays
    if len(y) == 0:
        raise EmptyBatch(f"task {task.id} has an empty support set")
    if coeffs is None:
        coeffs = state.coefficients(z)
    params = state.meta_params
    for _ in range(config.inner_steps):
        masks = dm.dropout_masks(state.spec, len(y), rng) if rng is not None else None
        _, g, _, _ = dm.value_and_grad(state.spec, params, X, y, coeffs, masks)
        _check(g, "inner")
        params = params - config.inner_lr * g
    return params


def query_gradients(state: MetaState, task: TaskDataset, z, config: TrainConfig,
                    rng: Optional[np.random.Generator] = None):
    """First-order outer gradients for one task: (meta-param grad, generator grad, loss)."""
    Xq, yq = task.query_arrays
    if len(yq) == 0:
        raise EmptyBatch(f"task {task.id} has an empty query set")
    coeffs = state.coefficients(z)
    adapted = inner_update(state, task, z, config, rng, coeffs)
    masks = dm.dropout_masks(state.spec, len(yq), rng) if rng is not None else None
    loss, g, d_scale, d_shift = dm.value_and_grad(state.spec, adapted, Xq, yq, coeffs, masks)
    _check(g, "outer")
    g_film = None
    if state.use_film:
        g_film = state.film_gen.backward(z, d_scale, d_shift)
        _check(g_film, "FiLM generator")
    return g, g_film, loss


def apply_meta_gradient(state: MetaState, grad: np.ndarray, film_grad: Optional[np.ndarray],
                        config: TrainConfig) -> MetaState:
    new = state.copy()
    step = state.episode + 1
    lr = config.meta_lr * config.lr_multiplier(step)
    if config.optimizer == "sgd":
        new.meta_params = state.meta_params - lr * grad
        if film_grad is not None:
            new.film_gen.params = state.film_gen.params - lr * film_grad
    else:
        new.meta_params = new.meta_opt.step(state.meta_params, grad, lr)
        if film_grad is not None:
            new.film_gen.params = new.film_opt.step(state.film_gen.params, film_grad, lr)
    new.episode = step
    return new


def meta_update(state: MetaState, task_batch, config: TrainConfig,
                rng: Optional[np.random.Generator] = None) -> MetaState:
    """One outer step from a batch of ``(TaskDataset, encoding)`` pairs.

    Per-task gradients are summed in ascending TaskId order.
    """
    if not task_batch:
        raise EmptyBatch("empty task batch")
    grad = np.zeros_like(state.meta_params)
    film_grad = np.zeros_like(state.film_gen.params) if state.use_film else None
    for task, z in sorted(task_batch, key=lambda tz: tz[0].id):
        g, g_film, _ = query_gradients(state, task, z, config, rng)
        grad += g
        if film_grad is not None:
            film_grad += g_film
    return apply_meta_gradient(state, grad, film_grad, config)


@dataclass
class TaskEvaluation:
    mse: float
    mae: float
    mape: Optional[float]
    predictions: np.ndarray


def adapt_and_evaluate(state: MetaState, task: TaskDataset, z, config: TrainConfig) -> TaskEvaluation:
    Xq, yq = task.query_arrays
    if len(task.support) == 0:
        raise EmptyBatch(f"task {task.id} has an empty support set")
    if len(yq) == 0:
        raise EmptyBatch(f"task {task.id} has an empty query set")
    coeffs = state.coefficients(z)
    adapted = inner_update(state, task, z, config, None, coeffs)
    pred = dm.predict(state.spec, adapted, Xq, coeffs)
    rec = compute_metrics(pred, yq)
    return TaskEvaluation(rec.mse, rec.mae, rec.mape, pred)


def proxy_encodings(targets: TaskUniverse, pool: TaskUniverse,
                    embeddings: Optional[EmbeddingTable], config: TrainConfig,
                    z_dim: Optional[int] = None) -> dict:
    """Encoding of each target task's proxy set drawn from ``pool``.

    Without embeddings every encoding is the zero vector of length ``z_dim``.
    """
    if embeddings is None:
        dim = z_dim if z_dim is not None else 2
        return {t.id: np.zeros(dim) for t in targets.tasks}
    out = {}
    for t in targets.tasks:
        proxy = select_proxy(t.id, pool, embeddings, config.proxy_delta, config.include_self)
        out[t.id] = encode_proxy(proxy, pool, embeddings)
    return out


def evaluate_tasks(state, universe: TaskUniverse, encodings: dict, config: TrainConfig):
    """Metrics pooled over every query prediction of the given tasks."""
    preds, targets = [], []
    for task in sorted(universe.tasks, key=lambda t: t.id):
        ev = state.evaluate(task, encodings.get(task.id), config)
        preds.append(ev.predictions)
        targets.append(task.query_arrays[1])
    return compute_metrics(np.concatenate(preds), np.concatenate(targets),
                           task_count=len(universe.tasks))


def _episode_rng(config: TrainConfig, episode: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, episode])


def train_ffomaml(
    universe: TaskUniverse,
    embeddings: Optional[EmbeddingTable],
    config: TrainConfig,
    val: Optional[TaskUniverse] = None,
    encodings: Optional[dict] = None,
    use_film: bool = True,
    on_episode: Optional[Callable[[MetaState], None]] = None,
) -> MetaState:
    """Meta-train on ``universe``; returns the best-validation state.

    ``encodings`` maps TaskId to a proxy encoding and overrides the encodings
    derived from ``embeddings`` (validation tasks included).
    """
    if encodings is None:
        encodings = proxy_encodings(universe, universe, embeddings, config)
        if val is not None:
            encodings.update(proxy_encodings(val, universe, embeddings, config))
    z_dim = len(next(iter(encodings.values()))) if encodings else 2
    state = init_state(universe.feature_dim, z_dim, config, use_film)
    ids = sorted(t.id for t in universe.tasks)
    best = state.copy()

    def validate(s):
        nonlocal best
        if val is None or len(val) == 0:
            return
        mse = evaluate_tasks(s, val, encodings, config).mse
        s.val_history.append((s.episode, mse))
        if mse < best.best_val_mse:
            s.best_val_mse = mse
            best = s.copy()

    validate(state)
    for ep in range(config.episodes):
        rng = _episode_rng(config, ep)
        pick = rng.choice(len(ids), size=min(config.task_batch, len(ids)), replace=False)
        batch = [(universe.task(ids[i]), encodings[ids[i]]) for i in pick]
        state = meta_update(state, batch, config, rng)
        if not np.all(np.isfinite(state.meta_params)):
            raise NonFiniteGradient(f"meta-parameters diverged at episode {state.episode}")
        if on_episode is not None:
            on_episode(state)
        if config.val_interval > 0 and (state.episode % config.val_interval == 0
                                        or state.episode == config.episodes):
            validate(state)
    if val is None or len(val) == 0:
        return state
    best.val_history = state.val_history
    return best


# -- baselines -----------------------------------------------------------------

@dataclass
class PerTaskLearner:
    """Fits a fresh model on each task's support set only."""

    kind: str
    seed: int = 0

    def evaluate(self, task: TaskDataset, z, config: TrainConfig) -> TaskEvaluation:
        X, y = task.support_arrays
        Xq, yq = task.query_arrays
        if self.kind == PER_TASK_LINEAR:
            design = np.hstack([X, np.ones((len(y), 1))])
            coef, *_ = np.linalg.lstsq(design, y, rcond=None)
            pred = np.hstack([Xq, np.ones((len(yq), 1))]) @ coef
        else:
            spec = dm.ModelSpec.mlp(X.shape[1], config.hidden_size)
            params = dm.init_params(spec, self.seed)
            opt = Adam(params.size)
            for _ in range(config.baseline_steps):
                _, g, _, _ = dm.value_and_grad(spec, params, X, y)
                params = opt.step(params, g, config.baseline_lr)
            pred = dm.predict(spec, params, Xq)
        rec = compute_metrics(pred, yq)
        return TaskEvaluation(rec.mse, rec.mae, rec.mape, pred)


def train_reptile(universe: TaskUniverse, config: TrainConfig,
                  on_episode: Optional[Callable[[MetaState], None]] = None) -> MetaState:
    """Interpolate toward the parameters reached after ``reptile_steps`` SGD steps."""
    state = init_state(universe.feature_dim, 2, config, use_film=False)
    ids = sorted(t.id for t in universe.tasks)
    inner_cfg = TrainConfig(**{**asdict(config), "inner_steps": config.reptile_steps})
    for ep in range(config.episodes):
        rng = _episode_rng(config, ep)
        pick = rng.choice(len(ids), size=min(config.task_batch, len(ids)), replace=False)
        state = reptile_step(state, [universe.task(ids[i]) for i in sorted(pick)], inner_cfg, rng)
        if on_episode is not None:
            on_episode(state)
    return state


def reptile_step(state: MetaState, tasks, config: TrainConfig,
                 rng: Optional[np.random.Generator] = None) -> MetaState:
    direction = np.zeros_like(state.meta_params)
    for task in sorted(tasks, key=lambda t: t.id):
        adapted = inner_update(state, task, None, config, rng)
        direction += adapted - state.meta_params
    direction /= len(tasks)
    new = state.copy()
    new.episode = state.episode + 1
    lr = config.reptile_outer_lr * config.lr_multiplier(new.episode)
    new.meta_params = state.meta_params + lr * direction
    return new


def train_baseline(kind: str, universe: TaskUniverse, config: TrainConfig,
                   val: Optional[TaskUniverse] = None):
    """Baseline learner exposing ``evaluate(task, z, config)``."""
    if kind == FOMAML:
        return train_ffomaml(universe, None, config, val=val, use_film=False)
    if kind == REPTILE:
        return train_reptile(universe, config)
    if kind in (PER_TASK_LINEAR, PER_TASK_MLP):
        return PerTaskLearner(kind, config.seed)
    raise ValueError(f"unknown baseline {kind!r}")


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(state: MetaState, path) -> None:
    np.savez(
        path,
        model_kind=np.array(state.spec.kind),
        meta_params=np.frombuffer(dm.params_to_bytes(state.spec, state.meta_params), np.uint8),
        dropout_rate=np.array(state.spec.dropout_rate),
        film_params=np.frombuffer(dm.params_to_bytes(state.film_gen.spec, state.film_gen.params), np.uint8),
        feature_dim=np.array(state.film_gen.feature_dim),
        episode=np.array(state.episode),
        use_film=np.array(state.use_film),
        best_val_mse=np.array(state.best_val_mse),
        meta_opt=np.concatenate([[state.meta_opt.t], state.meta_opt.m, state.meta_opt.v]),
        film_opt=np.concatenate([[state.film_opt.t], state.film_opt.m, state.film_opt.v]),
    )


def load_checkpoint(path) -> MetaState:
    with np.load(path) as f:
        sizes, params = dm.params_from_bytes(f["meta_params"].tobytes())
        spec = dm.ModelSpec(str(f["model_kind"]), sizes, dropout_rate=float(f["dropout_rate"]))
        gsizes, gparams = dm.params_from_bytes(f["film_params"].tobytes())
        gen = FilmGenerator(dm.ModelSpec(dm.MLP, gsizes), gparams, int(f["feature_dim"]))

        def adam(arr, n):
            return Adam(n, t=int(arr[0]), m=arr[1:1 + n].copy(), v=arr[1 + n:].copy())

        return MetaState(spec, params, gen, int(f["episode"]),
                         adam(f["meta_opt"], params.size), adam(f["film_opt"], gparams.size),
                         bool(f["use_film"]), float(f["best_val_mse"]))


def checkpoint_bytes(state: MetaState) -> bytes:
    buf = io.BytesIO()
    save_checkpoint(state, buf)
    return buf.getvalue()
