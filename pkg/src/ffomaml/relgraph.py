"""Product graph, graph-convolutional forecaster embeddings and proxy selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, MissingEmbedding, NonFiniteLoss, SeriesTooShort
from .optim import Adam
from .task_model import TaskId, TaskUniverse

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RelationGraph:
    node_count: int
    edges: frozenset
    node_labels: tuple = ()

    def __post_init__(self):
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ValueError(f"edge ({i}, {j}) out of range")

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.node_count, self.node_count))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def normalized_adjacency(self) -> np.ndarray:
        """``D^-1/2 (A + I) D^-1/2``."""
        A = self.adjacency() + np.eye(self.node_count)
        d = 1.0 / np.sqrt(A.sum(axis=1))
        return A * d[:, None] * d[None, :]


def build_brand_graph(labels: Sequence) -> RelationGraph:
    labels = tuple(labels)
    by_label = {}
    for i, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(i)
    edges = set()
    for members in by_label.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                edges.add((members[a], members[b]))
    return RelationGraph(len(labels), frozenset(edges), labels)


def _relu(x):
    return np.maximum(x, 0.0)


def gcn_forward(graph: RelationGraph, node_inputs: np.ndarray, weights, activation: str = "relu"):
    """Two graph-convolution layers ``h' = act(A_hat h W)``."""
    H = np.asarray(node_inputs, dtype=float)
    if H.ndim != 2 or H.shape[0] != graph.node_count:
        raise DimensionMismatch(f"inputs {H.shape} for {graph.node_count} nodes")
    act = _relu if activation == "relu" else (lambda x: x)
    A = graph.normalized_adjacency()
    for W in weights:
        if W.shape[0] != H.shape[1]:
            raise DimensionMismatch(f"weight {W.shape} for hidden width {H.shape[1]}")
        H = act(A @ H @ W)
    return H


# -- graph forecaster ----------------------------------------------------------

@dataclass
class GcnConfig:
    history_len: int = 16
    static_dim: int = 50
    dynamic_dim: int = 8
    graph_dim: int = 32
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 0  # time windows per Adam step; 0 = all windows (full batch)


@dataclass
class EmbeddingTable:
    node_ids: list
    vectors: np.ndarray
    split: tuple = ()
    losses: list = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.shape[0] != len(self.node_ids):
            raise DimensionMismatch("one embedding per node required")
        if not np.all(np.isfinite(self.vectors)):
            raise NonFiniteLoss("non-finite embedding")
        self._row = {n: i for i, n in enumerate(self.node_ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, node) -> bool:
        return node in self._row

    def get(self, node) -> np.ndarray:
        try:
            return self.vectors[self._row[node]]
        except KeyError:
            raise MissingEmbedding(f"no embedding for node {node}") from None

    def to_text(self) -> str:
        return "".join(
            f"{n} " + " ".join(repr(float(x)) for x in vec) + "\n"
            for n, vec in zip(self.node_ids, self.vectors)
        )

    @classmethod
    def from_text(cls, text: str) -> "EmbeddingTable":
        ids, rows = [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            head, *vals = line.split()
            ids.append(int(head))
            rows.append([float(v) for v in vals])
        return cls(ids, np.array(rows))


def _windows(sales: np.ndarray, prices: np.ndarray, C: int):
    """Sliding ``C``-day inputs and next-day targets, shapes (W, N, 2C) and (W, N)."""
    L = sales.shape[1]
    feats = np.stack([sales, prices], axis=-1)  # N, L, 2
    X = np.stack([feats[:, t - C:t].reshape(len(sales), -1) for t in range(C, L)])
    Y = np.stack([sales[:, t] for t in range(C, L)])
    last = feats[:, L - C:L].reshape(len(sales), -1)
    return X, Y, last


class _Forecaster:
    """Static head, dynamic head and two GCN layers feeding a linear readout."""

    def __init__(self, n_static, n_dyn, cfg: GcnConfig, rng):
        def init(fan_in, fan_out):
            b = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-b, b, size=(fan_in, fan_out))

        cat = cfg.static_dim + cfg.dynamic_dim
        emb = cat + cfg.graph_dim
        self.p = {
            "Ws": init(n_static, cfg.static_dim), "bs": np.zeros(cfg.static_dim),
            "Wd": init(n_dyn, cfg.dynamic_dim), "bd": np.zeros(cfg.dynamic_dim),
            "W1": init(cat, cfg.graph_dim), "b1": np.zeros(cfg.graph_dim),
            "W2": init(cfg.graph_dim, cfg.graph_dim), "b2": np.zeros(cfg.graph_dim),
            "Wo": init(emb, 1), "bo": np.zeros(1),
        }

    def forward(self, A, S, D):
        p = self.p
        B = D.shape[0]
        zs = S @ p["Ws"] + p["bs"]
        hs = np.broadcast_to(_relu(zs), (B,) + zs.shape)
        zd = D @ p["Wd"] + p["bd"]
        hd = _relu(zd)
        h0 = np.concatenate([hs, hd], axis=-1)
        a1 = np.einsum("ij,bjk->bik", A, h0)
        z1 = a1 @ p["W1"] + p["b1"]
        g1 = _relu(z1)
        a2 = np.einsum("ij,bjk->bik", A, g1)
        z2 = a2 @ p["W2"] + p["b2"]
        g2 = _relu(z2)
        e = np.concatenate([hs, hd, g2], axis=-1)
        out = (e @ p["Wo"])[..., 0] + p["bo"][0]
        cache = (S, D, zs, zd, a1, z1, a2, z2, e)
        return out, e, cache

    def backward(self, A, d_out, cache):
        p = self.p
        S, D, zs, zd, a1, z1, a2, z2, e = cache
        ns, nd = p["Ws"].shape[1], p["Wd"].shape[1]
        g = {}
        g["Wo"] = np.einsum("bnk,bn->k", e, d_out)[:, None]
        g["bo"] = np.array([d_out.sum()])
        de = d_out[..., None] * p["Wo"][:, 0]
        de_hs, de_hd, dg2 = de[..., :ns], de[..., ns:ns + nd], de[..., ns + nd:]
        dz2 = dg2 * (z2 > 0)
        g["W2"] = np.einsum("bnk,bnj->kj", a2, dz2)
        g["b2"] = dz2.sum(axis=(0, 1))
        dg1 = np.einsum("ij,bik->bjk", A, dz2 @ p["W2"].T)
        dz1 = dg1 * (z1 > 0)
        g["W1"] = np.einsum("bnk,bnj->kj", a1, dz1)
        g["b1"] = dz1.sum(axis=(0, 1))
        dh0 = np.einsum("ij,bik->bjk", A, dz1 @ p["W1"].T)
        dhs = (dh0[..., :ns] + de_hs).sum(axis=0)
        dhd = dh0[..., ns:] + de_hd
        dzs = dhs * (zs > 0)
        g["Ws"] = S.T @ dzs
        g["bs"] = dzs.sum(axis=0)
        dzd = dhd * (zd > 0)
        g["Wd"] = np.einsum("bnk,bnj->kj", D, dzd)
        g["bd"] = dzd.sum(axis=(0, 1))
        return g

    def loss_and_grad(self, A, S, D, Y):
        out, _, cache = self.forward(A, S, D)
        resid = out - Y
        loss = float(np.mean(np.abs(resid)))
        d_out = np.sign(resid) / resid.size
        return loss, self.backward(A, d_out, cache)


def train_gcn_forecaster(
    graph: RelationGraph,
    static: np.ndarray,
    sales: np.ndarray,
    prices: np.ndarray,
    config: Optional[GcnConfig] = None,
    seed: int = 0,
    node_ids: Optional[list] = None,
) -> EmbeddingTable:
    """Train the one-day-ahead forecaster with MAE loss and extract embeddings.

    ``static`` is (N, m_s); ``sales`` and ``prices`` are (N, days). The
    embedding of a node is its (static, dynamic, graph) encoding of the most
    recent ``history_len`` days.
    """
    cfg = config or GcnConfig()
    static = np.asarray(static, dtype=float)
    sales = np.asarray(sales, dtype=float)
    prices = np.asarray(prices, dtype=float)
    N = graph.node_count
    if static.shape[0] != N or sales.shape[0] != N or prices.shape != sales.shape:
        raise DimensionMismatch("static, sales and prices need one row per node")
    C = cfg.history_len
    if sales.shape[1] <= C:
        raise SeriesTooShort(f"series of length {sales.shape[1]} needs more than {C} days")

    sales_scale = float(np.mean(np.abs(sales))) or 1.0
    price_scale = float(np.mean(np.abs(prices))) or 1.0
    X, Y, last = _windows(sales / sales_scale, prices / price_scale, C)

    rng = np.random.default_rng(seed)
    model = _Forecaster(static.shape[1], X.shape[-1], cfg, rng)
    A = graph.normalized_adjacency()
    opts = {k: Adam(v.shape) for k, v in model.p.items()}
    losses = []
    n_win = X.shape[0]
    bs = n_win if cfg.batch_size <= 0 else min(cfg.batch_size, n_win)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_win)
        total = 0.0
        for start in range(0, n_win, bs):
            idx = order[start:start + bs]
            loss, grads = model.loss_and_grad(A, static, X[idx], Y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"forecaster diverged at epoch {epoch}")
            total += loss * len(idx)
            for k, opt in opts.items():
                model.p[k] = opt.step(model.p[k], grads[k], cfg.lr)
        losses.append(total / n_win)
        log.debug("gcn epoch %d mae %.5f", epoch, losses[-1])

    _, e, _ = model.forward(A, static, last[None])
    ids = list(range(N)) if node_ids is None else list(node_ids)
    return EmbeddingTable(ids, e[0], (cfg.static_dim, cfg.dynamic_dim, cfg.graph_dim), losses)


def embed_universe(universe: TaskUniverse, config: Optional[GcnConfig] = None,
                   seed: int = 0) -> EmbeddingTable:
    """Brand graph over the universe's products, then forecaster embeddings."""
    ids = sorted(universe.products)
    if not ids:
        raise MissingEmbedding("universe carries no product histories")
    prods = [universe.products[i] for i in ids]
    graph = build_brand_graph([p.brand for p in prods])
    return train_gcn_forecaster(
        graph,
        np.stack([p.static for p in prods]),
        np.stack([p.sales for p in prods]),
        np.stack([p.prices for p in prods]),
        config, seed, ids,
    )


# -- task relations ----------------------------------------------------------

def edge_decision(emb_i, emb_j, h_i, h_j, theta: float) -> bool:
    emb_i = np.asarray(emb_i, dtype=float)
    emb_j = np.asarray(emb_j, dtype=float)
    if emb_i.shape != emb_j.shape:
        raise DimensionMismatch(f"{emb_i.shape} vs {emb_j.shape}")
    if theta <= 0:
        raise ValueError("theta must be positive")
    return bool(np.linalg.norm(emb_i - emb_j) < theta or h_i == h_j)


def task_graph(universe: TaskUniverse, embeddings: EmbeddingTable, theta: float) -> RelationGraph:
    """Task-level graph: nodes are tasks in ascending TaskId order."""
    tasks = sorted(universe.tasks, key=lambda t: t.id)
    embs = [embeddings.get(t.id.product_index) for t in tasks]
    edges = set()
    for a in range(len(tasks)):
        for b in range(a + 1, len(tasks)):
            if edge_decision(embs[a], embs[b], tasks[a].hierarchy_label,
                             tasks[b].hierarchy_label, theta):
                edges.add((a, b))
    return RelationGraph(len(tasks), frozenset(edges), tuple(str(t.id) for t in tasks))


def similarity(emb_a, emb_b) -> float:
    return 1.0 / (1.0 + float(np.linalg.norm(np.asarray(emb_a) - np.asarray(emb_b))))


@dataclass(frozen=True)
class ProxySet:
    target: TaskId
    members: tuple  # ((TaskId, score), ...) by descending score then TaskId

    @property
    def ids(self) -> list:
        return [t for t, _ in self.members]

    def __len__(self):
        return len(self.members)


def select_proxy(target: TaskId, universe: TaskUniverse, embeddings: EmbeddingTable,
                 delta: float, include_self: bool = True) -> ProxySet:
    """All tasks of ``universe`` whose embedding similarity to ``target`` exceeds ``delta``."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    e_t = embeddings.get(target.product_index)
    scored = []
    for task in universe.tasks:
        if not include_self and task.id == target:
            continue
        score = similarity(e_t, embeddings.get(task.id.product_index))
        if score > delta:
            scored.append((task.id, score))
    scored.sort(key=lambda ts: (-ts[1], ts[0]))
    return ProxySet(target, tuple(scored))


def proxy_encoding_dim(embeddings: EmbeddingTable) -> int:
    return embeddings.dim + 2


def encode_proxy(proxy: ProxySet, universe: TaskUniverse, embeddings: EmbeddingTable) -> np.ndarray:
    """Mean member embedding, mean member support demand, normalized member count."""
    if len(proxy) == 0:
        return np.zeros(proxy_encoding_dim(embeddings))
    embs = np.stack([embeddings.get(t.product_index) for t in proxy.ids])
    ybar = np.mean([universe.task(t).support_arrays[1].mean() for t in proxy.ids])
    return np.concatenate([embs.mean(axis=0), [ybar, len(proxy) / max(1, len(universe))]])


def delta_for_quantile(embeddings: EmbeddingTable, q: float) -> float:
    """Similarity threshold admitting roughly the closest ``q`` fraction of node pairs."""
    V = embeddings.vectors
    d = np.linalg.norm(V[:, None, :] - V[None, :, :], axis=-1)
    iu = np.triu_indices(len(V), k=1)
    if len(iu[0]) == 0:
        return 0.5
    cut = float(np.quantile(d[iu], q))
    return float(np.clip(1.0 / (1.0 + cut), 1e-6, 1 - 1e-6))
