"""Optimization: Adam with step decay, masked spectral pretraining, supervised
training, and adaptive synthetic oversampling of minority classes.

Training is strictly sequential and seeded; identical (dataset, config, seed)
inputs reproduce checkpoints and histories bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import SkillGraphError
from .gnn import (
    GnnModel,
    forward_backward,
    init_model,
    parameters,
    positional_features,
    ssl_target,
    with_parameters,
)
from .gnn import _forward_backward
from .graph import SurgicalGraph
from .util import get_logger

log = get_logger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.0025
    decay_epochs: tuple[int, ...] = (200, 400)
    decay_factor: float = 0.1
    batch_size: int = 32
    epochs: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    mask_fraction: float = 0.15
    mask_mode: str = "nodes"  # or "edges"
    seed: int = 0
    spectral_k: int = 4
    use_positional: bool = True
    ssl_loss_weight: float = 0.0  # joint SSL term during supervised training

    def __post_init__(self):
        if self.lr0 <= 0:
            raise SkillGraphError("lr0 must be positive")
        if not 0 <= self.mask_fraction < 1:
            raise SkillGraphError("mask_fraction must be in [0, 1)")
        if self.batch_size < 1:
            raise SkillGraphError("batch_size must be >= 1")


def config_to_dict(cfg: TrainConfig) -> dict:
    d = cfg.__dict__.copy()
    d["decay_epochs"] = list(cfg.decay_epochs)
    return d


def config_from_dict(obj: dict) -> TrainConfig:
    obj = dict(obj)
    if "decay_epochs" in obj:
        obj["decay_epochs"] = tuple(int(e) for e in obj["decay_epochs"])
    return TrainConfig(**obj)


def load_config(path: Path | str) -> TrainConfig:
    return config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """lr0 * decay_factor^(number of decay epochs <= epoch)."""
    if epoch < 0:
        raise SkillGraphError("epoch must be >= 0")
    n_decays = sum(1 for d in config.decay_epochs if d <= epoch)
    return config.lr0 * config.decay_factor**n_decays


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    update_keys: tuple[str, ...] | None = None,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh (params, state).

    ``update_keys`` restricts which blocks move (used by the frozen-encoder
    linear probe); moments still accumulate only for updated blocks.
    """
    t = state.step + 1
    new_params = {}
    new_m = {}
    new_v = {}
    for k, p in params.items():
        g = grads[k]
        if not np.all(np.isfinite(g)):
            raise SkillGraphError(f"non-finite gradient in parameter block '{k}'")
        if update_keys is not None and k not in update_keys:
            new_params[k] = p
            new_m[k] = state.m[k]
            new_v[k] = state.v[k]
            continue
        m = beta1 * state.m[k] + (1 - beta1) * g
        v = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class MaskSpec:
    masked_node_indices: tuple[int, ...] = ()
    masked_edge_pairs: tuple[tuple[int, int], ...] = ()


def mask_graph(
    graph: SurgicalGraph,
    mask_fraction: float,
    rng: np.random.Generator,
    mode: str = "nodes",
) -> tuple[SurgicalGraph, MaskSpec]:
    """Zero ceil(fraction * n) node feature rows (or hide edges in edge mode).

    The adjacency stays untouched in node mode so the reconstruction target
    is well defined; at least one node always stays unmasked.
    """
    n = graph.n
    if n < 2:
        raise SkillGraphError("masking needs at least 2 nodes")
    if mask_fraction == 0:
        return graph, MaskSpec()
    if mode == "nodes":
        count = min(int(np.ceil(mask_fraction * n)), n - 1)
        idx = np.sort(rng.choice(n, size=count, replace=False))
        X = graph.X.copy()
        X[idx] = 0.0
        masked = SurgicalGraph(graph.clip_id, graph.node_ids, X, graph.A, graph.labels)
        return masked, MaskSpec(masked_node_indices=tuple(int(i) for i in idx))
    if mode == "edges":
        ii, jj = np.nonzero(np.triu(graph.A, 1))
        n_edges = len(ii)
        if n_edges == 0:
            return graph, MaskSpec()
        count = min(int(np.ceil(mask_fraction * n_edges)), n_edges)
        pick = np.sort(rng.choice(n_edges, size=count, replace=False))
        A = graph.A.copy()
        pairs = []
        for k in pick:
            i, j = int(ii[k]), int(jj[k])
            A[i, j] = A[j, i] = 0.0
            pairs.append((i, j))
        masked = SurgicalGraph(graph.clip_id, graph.node_ids, graph.X, A, graph.labels)
        return masked, MaskSpec(masked_edge_pairs=tuple(pairs))
    raise SkillGraphError(f"unknown mask mode {mode!r}")


# -- training loops -----------------------------------------------------------


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    loss: float
    accuracy: float | None = None


def write_history(rows: list[HistoryRow], path: Path | str) -> None:
    """History CSV: epoch, lr, loss, accuracy (blank where not applicable)."""
    lines = ["epoch,lr,loss,accuracy"]
    for r in rows:
        acc = "" if r.accuracy is None else repr(float(r.accuracy))
        lines.append(f"{r.epoch},{repr(float(r.lr))},{repr(float(r.loss))},{acc}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _batches(order: np.ndarray, size: int):
    for k in range(0, len(order), size):
        yield order[k : k + size]


def _prep(graphs: list[SurgicalGraph], config: TrainConfig):
    """Positional features and reconstruction targets, computed once."""
    positional = [
        positional_features(g.A, config.spectral_k) if config.use_positional else None
        for g in graphs
    ]
    targets = [ssl_target(g) for g in graphs]
    return positional, targets


def train_ssl(
    graphs: list[SurgicalGraph],
    config: TrainConfig,
    feature_schema_id: str = "",
    dataset_build_id: str = "",
) -> tuple[GnnModel, list[HistoryRow]]:
    """Masked spectral pretraining of the encoder.

    Per epoch and graph: mask, encode the masked graph (positional features
    from the untouched adjacency), decode a Laplacian, score against the
    unmasked graph's Laplacian, and apply batch-averaged Adam updates.
    """
    if not graphs:
        raise SkillGraphError("no training graphs")
    feature_dim = graphs[0].X.shape[1]
    model = init_model(
        feature_dim,
        k_classes=1,  # head unused during pretraining
        seed=config.seed,
        spectral_k=config.spectral_k,
        use_positional=config.use_positional,
        feature_schema_id=feature_schema_id,
        dataset_build_id=dataset_build_id,
    )
    positional, targets = _prep(graphs, config)
    params = parameters(model)
    state = adam_init(params)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        order = rng.permutation(len(graphs))
        total = 0.0
        for batch in _batches(order, config.batch_size):
            acc = {k: np.zeros_like(p) for k, p in params.items()}
            cur = with_parameters(model, params)
            for gi in batch:
                g = graphs[gi]
                if config.mask_fraction > 0 and g.n >= 2:
                    masked, _ = mask_graph(g, config.mask_fraction, rng, config.mask_mode)
                else:
                    masked = g
                pos = positional[gi]
                if config.mask_mode == "edges" and masked is not g:
                    pos = positional_features(masked.A, config.spectral_k) \
                        if config.use_positional else None
                try:
                    loss, grads = forward_backward(cur, masked, targets[gi], pos)
                except SkillGraphError as e:
                    raise SkillGraphError(
                        f"SSL failure at epoch {epoch}, graph {g.clip_id!r}: {e}"
                    ) from None
                total += loss
                for k in acc:
                    acc[k] += grads[k]
            for k in acc:
                acc[k] /= len(batch)
            params, state = adam_step(
                params, acc, state, lr, config.adam_beta1, config.adam_beta2,
                config.adam_eps,
            )
        history.append(HistoryRow(epoch, lr, total / len(graphs)))
    return with_parameters(model, params), history


HEAD_KEYS = ("head.W", "head.b")


def train_supervised(
    graphs: list[SurgicalGraph],
    config: TrainConfig,
    category: str,
    ordinal_scale: tuple[int, int] = (1, 5),
    init: GnnModel | None = None,
    freeze_encoder: bool = False,
    feature_schema_id: str = "",
    dataset_build_id: str = "",
) -> tuple[GnnModel, list[HistoryRow]]:
    """Cross-entropy training of one model for one scoring category.

    ``init`` warm-starts the encoder from a pretraining checkpoint; with
    ``freeze_encoder`` only the linear head moves (a linear probe).
    """
    if not graphs:
        raise SkillGraphError("no training graphs")
    for g in graphs:
        if g.labels is None or category not in g.labels:
            raise SkillGraphError(
                f"graph {g.clip_id!r} has no label for category {category!r}"
            )
    k_classes = ordinal_scale[1] - ordinal_scale[0] + 1
    labels = [int(g.labels[category]) - ordinal_scale[0] for g in graphs]
    for g, y in zip(graphs, labels):
        if not 0 <= y < k_classes:
            raise SkillGraphError(f"graph {g.clip_id!r}: label outside ordinal scale")

    feature_dim = graphs[0].X.shape[1]
    model = init_model(
        feature_dim,
        k_classes,
        seed=config.seed,
        spectral_k=config.spectral_k,
        use_positional=config.use_positional,
        category=category,
        feature_schema_id=feature_schema_id,
        ordinal_min=ordinal_scale[0],
        dataset_build_id=dataset_build_id,
    )
    if init is not None:
        if init.feature_dim != feature_dim or init.use_positional != config.use_positional:
            raise SkillGraphError(
                "init checkpoint is incompatible with the training configuration"
            )
        model = replace(model, layer1=init.layer1, layer2=init.layer2)

    positional, targets = _prep(graphs, config)
    params = parameters(model)
    state = adam_init(params)
    rng = np.random.default_rng(config.seed)
    update_keys = HEAD_KEYS if freeze_encoder else None
    history = []
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        order = rng.permutation(len(graphs))
        total = 0.0
        correct = 0
        for batch in _batches(order, config.batch_size):
            acc = {k: np.zeros_like(p) for k, p in params.items()}
            cur = with_parameters(model, params)
            for gi in batch:
                g = graphs[gi]
                loss, grads, logits = _forward_backward(cur, g, labels[gi], positional[gi])
                if config.ssl_loss_weight > 0:
                    ssl_loss, ssl_grads = forward_backward(
                        cur, g, targets[gi], positional[gi]
                    )
                    loss += config.ssl_loss_weight * ssl_loss
                    for k in grads:
                        grads[k] += config.ssl_loss_weight * ssl_grads[k]
                total += loss
                if int(np.argmax(logits)) == labels[gi]:
                    correct += 1
                for k in acc:
                    acc[k] += grads[k]
            for k in acc:
                acc[k] /= len(batch)
            params, state = adam_step(
                params, acc, state, lr, config.adam_beta1, config.adam_beta2,
                config.adam_eps, update_keys=update_keys,
            )
        history.append(
            HistoryRow(epoch, lr, total / len(graphs), correct / len(graphs))
        )
    return with_parameters(model, params), history


# -- adaptive synthetic oversampling -------------------------------------------


@dataclass(frozen=True)
class SyntheticSample:
    label: object
    source: int  # index of x_i in the input list
    donor: int  # index of x_z in the input list
    lam: float


def _standardize(X: np.ndarray) -> np.ndarray:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    safe = np.where(std > 1e-12, std, 1.0)
    return (X - mean) / safe


def _knn(dist_row: np.ndarray, exclude: int, k: int) -> np.ndarray:
    """Indices of the k nearest points; ties broken by index (stable sort)."""
    d = dist_row.copy()
    d[exclude] = np.inf
    order = np.argsort(d, kind="stable")
    return order[:k]


def adasyn_plan(
    X: np.ndarray, y: list, k: int, rng: np.random.Generator
) -> list[SyntheticSample]:
    """Where to place synthetic samples to balance every class exactly.

    Classes are processed smallest first. Each minority sample i receives
    g_i = round(r_hat_i * G) synthetics, where r_i is the fraction of its k
    nearest neighbors (over all classes, standardized Euclidean metric) that
    belong to other classes; rounding drift is repaired in descending r_hat
    order (ascending index on ties) so post-balance counts equal the majority
    count exactly. Synthetics interpolate toward a random one of the sample's
    k nearest same-class neighbors with lambda ~ U(0, 1).
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    y = list(y)
    counts: dict = {}
    for label in y:
        counts[label] = counts.get(label, 0) + 1
    majority = max(counts.values())
    Z = _standardize(X)
    D = np.linalg.norm(Z[:, None, :] - Z[None, :, :], axis=2)

    plan: list[SyntheticSample] = []
    for label in sorted(counts, key=lambda c: (counts[c], repr(c))):
        m_c = counts[label]
        G = majority - m_c
        if G <= 0:
            continue
        k_c = k
        if m_c < k + 1:
            k_c = m_c - 1
            if k_c < 1:
                log.warning(
                    "adasyn: class %r has %d sample(s); skipping", label, m_c
                )
                continue
            log.warning(
                "adasyn: class %r smaller than k+1=%d; falling back to k=%d",
                label, k + 1, k_c,
            )
        members = [i for i in range(n) if y[i] == label]
        r = np.empty(len(members))
        for mi, i in enumerate(members):
            nbrs = _knn(D[i], i, k_c)
            r[mi] = np.mean([y[j] != label for j in nbrs])
        total_r = r.sum()
        r_hat = r / total_r if total_r > 0 else np.full(len(members), 1.0 / len(members))
        g = np.rint(r_hat * G).astype(int)
        # repair rounding drift: top up (or trim) in descending r_hat,
        # ascending index, cycling until the class balances exactly
        rank = sorted(range(len(members)), key=lambda mi: (-r_hat[mi], mi))
        pos = 0
        while g.sum() < G:
            g[rank[pos % len(rank)]] += 1
            pos += 1
        pos = 0
        while g.sum() > G:
            mi = rank[len(rank) - 1 - pos % len(rank)]
            if g[mi] > 0:
                g[mi] -= 1
            pos += 1
        for mi, i in enumerate(members):
            if g[mi] == 0:
                continue
            same = [j for j in members if j != i]
            order = sorted(same, key=lambda j: (D[i][j], j))
            donors = order[:k_c]
            for _ in range(g[mi]):
                z = donors[int(rng.integers(0, len(donors)))]
                lam = float(rng.uniform(0.0, 1.0))
                plan.append(SyntheticSample(label, i, z, lam))
    return plan


def adasyn_balance(
    vectors: np.ndarray, labels: list, k: int = 7, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, list]:
    """Balanced (vectors, labels): originals first and verbatim, synthetics after."""
    if rng is None:
        rng = np.random.default_rng(0)
    X = np.asarray(vectors, dtype=np.float64)
    plan = adasyn_plan(X, labels, k, rng)
    if not plan:
        return X.copy(), list(labels)
    synth = np.stack(
        [(1 - s.lam) * X[s.source] + s.lam * X[s.donor] for s in plan]
    )
    return np.vstack([X, synth]), list(labels) + [s.label for s in plan]


def balance_graphs(
    graphs: list[SurgicalGraph],
    category: str,
    k: int = 7,
    rng: np.random.Generator | None = None,
) -> tuple[list[SurgicalGraph], list[SurgicalGraph]]:
    """Lift oversampling from vectors to graphs.

    The balancing metric runs on graph-level mean node features. Each
    synthetic graph copies the source graph's topology and interpolates node
    features toward the donor graph node-by-node where (instrument, phase)
    ids match; unmatched nodes keep the source features. Synthetic graphs
    carry only the balanced category's label.

    Returns (originals, synthetics).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for g in graphs:
        if g.labels is None or category not in g.labels:
            raise SkillGraphError(
                f"graph {g.clip_id!r} has no label for category {category!r}"
            )
    pooled = np.stack([g.X.mean(axis=0) for g in graphs])
    y = [int(g.labels[category]) for g in graphs]
    plan = adasyn_plan(pooled, y, k, rng)
    synthetics = []
    for idx, s in enumerate(plan):
        src = graphs[s.source]
        donor = graphs[s.donor]
        donor_rows = {nid: r for r, nid in enumerate(donor.node_ids)}
        X = src.X.copy()
        for r, nid in enumerate(src.node_ids):
            if nid in donor_rows:
                X[r] = (1 - s.lam) * src.X[r] + s.lam * donor.X[donor_rows[nid]]
        synthetics.append(
            SurgicalGraph(
                f"{src.clip_id}~syn{idx:04d}",
                list(src.node_ids),
                X,
                src.A.copy(),
                {category: int(s.label)},
            )
        )
    return list(graphs), synthetics
