import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffomaml.errors import ConfigError, DataError, InsufficientSamples
from ffomaml.task_model import (
    FeatureTuple, Observation, SynthConfig, TaskId, as_arrays, generate_synthetic_universe,
    resplit, split_support_query, split_universe, universe_from_json, universe_to_json,
)


def _samples(n, rng=None):
    rng = rng or np.random.default_rng(0)
    return [Observation(FeatureTuple(rng.normal(size=2), rng.normal(size=1), 1.0, 2.0, 0.5), float(i))
            for i in range(n)]


def test_feature_flatten_order():
    ft = FeatureTuple([1, 2], [3], 4.0, 5.0, 6.0)
    assert ft.flatten().tolist() == [1, 2, 3, 4, 5, 6]
    assert ft.dim == 6


def test_feature_rejects_negative_demand_and_nan():
    with pytest.raises(DataError):
        FeatureTuple([1], [1], 1.0, -0.5, 1.0)
    with pytest.raises(DataError):
        FeatureTuple([np.nan], [1], 1.0, 0.5, 1.0)
    with pytest.raises(DataError):
        Observation(FeatureTuple([1], [1], 1.0, 0.5, 1.0), float("inf"))


def test_task_id_ordering():
    ids = [TaskId(1, 0), TaskId(0, 2), TaskId(0, 1)]
    assert sorted(ids) == [TaskId(0, 1), TaskId(0, 2), TaskId(1, 0)]
    with pytest.raises(DataError):
        TaskId(-1, 0)


@pytest.mark.parametrize("n, k, n_query", [(20, 5, 15), (6, 5, 1)])
def test_split_sizes(n, k, n_query):
    task = split_support_query(_samples(n), k, seed=1)
    assert len(task.support) == k
    assert len(task.query) == n_query


@pytest.mark.parametrize("n, k", [(5, 5), (3, 5), (10, 0)])
def test_split_insufficient(n, k):
    with pytest.raises(InsufficientSamples):
        split_support_query(_samples(n), k, seed=1)


@given(n=st.integers(2, 40), data=st.data(), seed=st.integers(0, 2**32))
def test_split_partitions_samples(n, data, seed):
    k = data.draw(st.integers(1, n - 1))
    samples = _samples(n)
    task = split_support_query(samples, k, seed)
    sup = {id(o) for o in task.support}
    qry = {id(o) for o in task.query}
    assert not sup & qry
    assert sup | qry == {id(o) for o in samples}
    again = split_support_query(samples, k, seed)
    assert [id(o) for o in again.support] == [id(o) for o in task.support]


def test_resplit_keeps_samples():
    task = split_support_query(_samples(12), 5, seed=1)
    other = resplit(task, 3, seed=9)
    assert len(other.support) == 3
    assert sorted(o.y for o in other.samples) == sorted(o.y for o in task.samples)


def test_universe_counts():
    uni = generate_synthetic_universe(SynthConfig(n_products=10, envs_per_product=5), seed=0)
    assert len(uni) == 50
    assert len({t.id for t in uni.tasks}) == 50
    assert all(len(t.support) == 5 and len(t.query) == 15 for t in uni.tasks)
    assert uni.feature_dim == 7
    assert all(o.x.flatten().size == uni.feature_dim for t in uni.tasks for o in t.samples)


def test_universe_deterministic():
    cfg = SynthConfig(n_products=4, envs_per_product=2)
    a = universe_to_json(generate_synthetic_universe(cfg, seed=7))
    b = universe_to_json(generate_synthetic_universe(cfg, seed=7))
    c = universe_to_json(generate_synthetic_universe(cfg, seed=8))
    assert a == b
    assert a != c


def test_universe_json_round_trip():
    uni = generate_synthetic_universe(SynthConfig(n_products=3, envs_per_product=2), seed=1)
    text = universe_to_json(uni)
    back = universe_from_json(text)
    assert universe_to_json(back) == text
    assert np.array_equal(back.tasks[0].true_coef, uni.tasks[0].true_coef)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_zero_noise_is_exact(seed):
    uni = generate_synthetic_universe(SynthConfig(n_products=3, envs_per_product=2, noise_std=0.0), seed)
    for task in uni.tasks:
        X, y = as_arrays(task.samples)
        w, b = task.true_coef[:-1], task.true_coef[-1]
        assert np.allclose(X @ w + b, y, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_zero_noise_least_squares_recovers_coefficients(seed):
    # oracle: the generating coefficients recorded independently of the samples
    uni = generate_synthetic_universe(SynthConfig(n_products=3, envs_per_product=2, noise_std=0.0), seed)
    for task in uni.tasks:
        X, y = as_arrays(task.samples)
        design = np.hstack([X, np.ones((len(y), 1))])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        assert np.max(np.abs(coef - task.true_coef)) < 1e-8


def test_tasks_in_one_cluster_are_closer():
    uni = generate_synthetic_universe(SynthConfig(n_products=8, envs_per_product=3), seed=4)
    cluster = {t.id: uni.products[t.id.product_index].cluster for t in uni.tasks}
    same, diff = [], []
    for a in uni.tasks:
        for b in uni.tasks:
            if a.id < b.id:
                d = np.linalg.norm(a.true_coef - b.true_coef)
                (same if cluster[a.id] == cluster[b.id] else diff).append(d)
    assert np.median(same) < np.median(diff)


def test_clip_demand_flag():
    cfg = SynthConfig(n_products=4, envs_per_product=2, demand_level=-5.0, clip_demand=True)
    uni = generate_synthetic_universe(cfg, seed=0)
    assert min(o.y for t in uni.tasks for o in t.samples) >= 0.0


@pytest.mark.parametrize("override", [
    dict(n_products=0), dict(noise_std=-0.1), dict(k_shot=20, samples_per_task=20),
    dict(price_low=2.0, price_high=1.0),
])
def test_config_rejected(override):
    with pytest.raises(ConfigError):
        generate_synthetic_universe(SynthConfig(**override), seed=0)


def test_split_universe_partitions():
    uni = generate_synthetic_universe(SynthConfig(n_products=5, envs_per_product=4), seed=0)
    parts = split_universe(uni, seed=3)
    ids = [t.id for p in parts for t in p.tasks]
    assert sorted(ids) == sorted(t.id for t in uni.tasks)
    assert [len(p) for p in parts] == [12, 4, 4]
    with pytest.raises(ConfigError):
        split_universe(uni, (0.5, 0.5, 0.5))


def test_duplicate_ids_rejected(small_universe):
    from ffomaml.task_model import TaskUniverse
    with pytest.raises(DataError):
        TaskUniverse([small_universe.tasks[0]] * 2, small_universe.feature_dim)
