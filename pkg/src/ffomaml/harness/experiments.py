"""Seeded experiment pipelines shared by the CLI and the scripts."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..errors import InsufficientSamples
from ..metalearn import (
    FFOMAML, FOMAML, PER_TASK_LINEAR, PER_TASK_MLP, REPTILE, TrainConfig,
    evaluate_tasks, proxy_encodings, train_baseline, train_ffomaml,
)
from ..relgraph import EmbeddingTable, delta_for_quantile, embed_universe
from ..task_model import TaskUniverse, generate_synthetic_universe, resplit, split_universe
from ..theorysim import bootstrap_interval
from .config import RunConfig
from .metrics import MetricsRecord

METHODS = (FFOMAML, FOMAML, REPTILE, PER_TASK_LINEAR, PER_TASK_MLP)


@dataclass
class Prepared:
    universe: TaskUniverse
    embeddings: EmbeddingTable
    train: TaskUniverse
    val: TaskUniverse
    test: TaskUniverse
    train_config: TrainConfig


def prepare(cfg: RunConfig, seed: int, universe: Optional[TaskUniverse] = None,
            embeddings: Optional[EmbeddingTable] = None) -> Prepared:
    """Universe (synthetic unless given), embeddings, split and the seeded TrainConfig."""
    if universe is None:
        universe = generate_synthetic_universe(cfg.synth, seed)
    if embeddings is None:
        embeddings = embed_universe(universe, cfg.gcn, seed)
    train, val, test = split_universe(universe, tuple(cfg.experiment.split), seed)
    tcfg = replace(cfg.train, seed=seed)
    if cfg.experiment.proxy_quantile > 0:
        tcfg = replace(tcfg, proxy_delta=delta_for_quantile(embeddings, cfg.experiment.proxy_quantile))
    return Prepared(universe, embeddings, train, val, test, tcfg)


def fit(method: str, prep: Prepared, tcfg: Optional[TrainConfig] = None):
    """Trained learner exposing ``evaluate(task, z, config)``."""
    tcfg = tcfg or prep.train_config
    if method == FFOMAML:
        return train_ffomaml(prep.train, prep.embeddings, tcfg, val=prep.val)
    if method in (FOMAML, REPTILE, PER_TASK_LINEAR, PER_TASK_MLP):
        return train_baseline(method, prep.train, tcfg, val=prep.val)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def target_encodings(prep: Prepared, tcfg: Optional[TrainConfig] = None, tasks=None) -> dict:
    tcfg = tcfg or prep.train_config
    tasks = tasks if tasks is not None else prep.test
    return proxy_encodings(tasks, prep.train, prep.embeddings, tcfg)


def permuted(encodings: dict, seed: int) -> dict:
    """Same encodings reassigned to tasks by a seeded random permutation."""
    ids = sorted(encodings)
    perm = np.random.default_rng(seed).permutation(len(ids))
    return {ids[i]: encodings[ids[perm[i]]] for i in range(len(ids))}


def evaluate(learner, method: str, prep: Prepared, seed: int, encodings: Optional[dict] = None,
             tasks: Optional[TaskUniverse] = None, tcfg: Optional[TrainConfig] = None) -> MetricsRecord:
    tcfg = tcfg or prep.train_config
    tasks = tasks if tasks is not None else prep.test
    if encodings is None:
        encodings = target_encodings(prep, tcfg, tasks) if method == FFOMAML else {}
    rec = evaluate_tasks(learner, tasks, encodings, tcfg)
    return replace(rec, method=method, seed=seed)


def run_method(method: str, cfg: RunConfig, seed: int, universe=None, embeddings=None):
    prep = prepare(cfg, seed, universe, embeddings)
    learner = fit(method, prep)
    return learner, evaluate(learner, method, prep, seed)


# -- k-shot ablation ---------------------------------------------------------------

@dataclass(frozen=True)
class KShotPoint:
    k: int
    mean_mae: float
    lo: float
    hi: float
    maes: tuple


def _resplit_all(universe: TaskUniverse, k: int, seed: int) -> TaskUniverse:
    tasks = [t if len(t.support) == k else resplit(t, k, seed) for t in universe.tasks]
    return TaskUniverse(tasks, universe.feature_dim, universe.rng_seed, universe.products)


def ablate_kshot(universe: TaskUniverse, embeddings: EmbeddingTable, config: RunConfig,
                 k_grid: Sequence[int], seeds: Sequence[int]):
    """Train and evaluate F-FOMAML for every (k, seed); returns per-k points and records.

    Every task is re-split so that its support set holds exactly ``k`` samples;
    tasks already at ``k`` keep their split, so a one-point grid at the universe's
    own k is a standard run.
    """
    k_grid = [int(k) for k in k_grid]
    if not k_grid or any(b <= a for a, b in zip(k_grid, k_grid[1:])):
        raise ValueError("k_grid must be non-empty and strictly increasing")
    smallest = min(len(t.samples) for t in universe.tasks)
    if k_grid[-1] >= smallest:
        raise InsufficientSamples(f"k={k_grid[-1]} needs more than {smallest} samples per task")
    if not seeds:
        raise ValueError("need at least one seed")

    points, records = [], []
    for k in k_grid:
        maes = []
        for seed in seeds:
            uni = _resplit_all(universe, k, seed)
            prep = prepare(config, seed, uni, embeddings)
            tcfg = replace(prep.train_config, k_shot=k)
            learner = fit(FFOMAML, prep, tcfg)
            rec = evaluate(learner, f"{FFOMAML}-k{k}", prep, seed, tcfg=tcfg,
                           encodings=target_encodings(prep, tcfg))
            records.append(rec)
            maes.append(rec.mae)
        maes = np.array(maes)
        lo, hi = bootstrap_interval(maes, seed=k) if len(maes) > 1 else (maes[0], maes[0])
        points.append(KShotPoint(k, float(maes.mean()), float(lo), float(hi), tuple(maes.tolist())))
    return points, records


def kshot_table(points: Sequence[KShotPoint]) -> str:
    lines = ["# k mean_mae lo hi"]
    lines += [f"{p.k} {p.mean_mae!r} {p.lo!r} {p.hi!r}" for p in points]
    return "\n".join(lines) + "\n"


# -- plots ---------------------------------------------------------------------------

def save_curve_svg(path, x, mean, lo, hi, xlabel: str, ylabel: str, logx=False, logy=False):
    """Static line plot with an interval band, written as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.asarray(x, dtype=float)
    finite = np.isfinite(x)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x[finite], np.asarray(mean)[finite], marker="o")
    ax.fill_between(x[finite], np.asarray(lo)[finite], np.asarray(hi)[finite], alpha=0.25)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logx:
        ax.set_xscale("symlog", linthresh=0.01) if np.any(x[finite] <= 0) else ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    fig.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": "ffomaml"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)



# -- paired comparisons ----------------------------------------------------------------

def proxy_relevance_trial(cfg: RunConfig, seed: int):
    """One trained F-FOMAML model scored with its own proxy encodings and with shuffled ones."""
    prep = prepare(cfg, seed)
    learner = fit(FFOMAML, prep)
    enc = target_encodings(prep)
    relevant = evaluate(learner, FFOMAML, prep, seed, encodings=enc)
    shuffled = evaluate(learner, f"{FFOMAML}-permuted", prep, seed, encodings=permuted(enc, seed))
    return relevant, shuffled


def meta_benefit_trial(cfg: RunConfig, seed: int):
    """F-FOMAML against the support-only per-task MLP on the same test tasks."""
    prep = prepare(cfg, seed)
    meta = evaluate(fit(FFOMAML, prep), FFOMAML, prep, seed)
    alone = evaluate(fit(PER_TASK_MLP, prep), PER_TASK_MLP, prep, seed)
    return meta, alone
