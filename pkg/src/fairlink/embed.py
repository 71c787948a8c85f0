"""Node embeddings: biased random walks, skip-gram with negative sampling, PCA."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .graph import EDGE_EPS, Graph

__all__ = [
    "WalkCorpus",
    "EmbeddingMatrix",
    "PCAResult",
    "random_walks",
    "transition_probs",
    "skipgram_train",
    "skipgram_pair_loss",
    "pca_project",
    "edge_features",
    "save_embedding_text",
    "load_embedding_text",
    "save_embedding",
    "load_embedding",
]

_WALK_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class WalkCorpus:
    """Random-walk node sequences plus the parameters that produced them."""

    walks: tuple[np.ndarray, ...]
    num_walks: int
    walk_length: int
    p: float
    q: float
    seed: int

    @property
    def n_tokens(self) -> int:
        return sum(len(w) for w in self.walks)


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """One learned vector per node."""

    vectors: np.ndarray
    dim: int
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vectors = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float64))
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ValueError("vectors must be an (n_nodes, dim) matrix")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding entries must be finite")
        object.__setattr__(self, "vectors", vectors)

    @property
    def n_nodes(self) -> int:
        return self.vectors.shape[0]


def _row_cdf_flat(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row inverse-CDF table flattened with row offsets for one searchsorted call."""
    n = weights.shape[0]
    totals = weights.sum(axis=1)
    active = totals > EDGE_EPS
    cdf = np.cumsum(weights, axis=1)
    ends = np.where(active, cdf[:, -1], 1.0)
    cdf = cdf / ends[:, None]
    cdf[~active] = 0.0
    flat = (cdf + np.arange(n)[:, None]).ravel()
    return flat, active


def _sample_rows(flat_cdf: np.ndarray, current: np.ndarray, draws: np.ndarray, n: int) -> np.ndarray:
    # Row r occupies [r, r+1] in the flattened table, so r + u lands in row r.
    return np.searchsorted(flat_cdf, current + draws, side="right") - current * n


def _second_order_weights(
    adjacency: np.ndarray, prev: np.ndarray, current: np.ndarray, p: float, q: float
) -> np.ndarray:
    """Unnormalized next-step weights for walks at ``current`` coming from ``prev``."""
    rows = adjacency[current]
    factor = np.where(adjacency[prev] > EDGE_EPS, 1.0, 1.0 / q)
    factor[np.arange(len(prev)), prev] = 1.0 / p
    return rows * factor


def transition_probs(
    g: Graph, prev: int | None, current: int, p: float = 1.0, q: float = 1.0
) -> np.ndarray:
    """Next-step distribution from ``current`` (second-order when ``prev`` is given)."""
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    if prev is None:
        w = np.array(g.adjacency[current])
    else:
        w = _second_order_weights(
            g.adjacency, np.array([prev]), np.array([current]), p, q
        )[0]
    total = w.sum()
    return w / total if total > EDGE_EPS else np.zeros_like(w)


def random_walks(
    g: Graph,
    num_walks: int = 10,
    walk_length: int = 80,
    p: float = 1.0,
    q: float = 1.0,
    seed: int = 0,
) -> WalkCorpus:
    """Generate ``num_walks`` biased second-order walks from every node.

    Transition weights follow the usual return/in-out biasing: an edge back to
    the previous node is scaled by 1/p, edges to its neighbors by 1, all
    others by 1/q, all on top of the (possibly fractional) edge weights. Walks
    stop early at nodes whose outgoing weight mass is numerically zero, so
    isolated nodes yield single-node walks. Deterministic per seed.
    """
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    if num_walks < 1 or walk_length < 1:
        raise ValueError("num_walks and walk_length must be at least 1")
    n = g.n_nodes
    rng = np.random.default_rng(seed)
    starts = np.tile(np.arange(n, dtype=np.int64), num_walks)
    walks = np.full((len(starts), walk_length), -1, dtype=np.int64)
    walks[:, 0] = starts

    if walk_length > 1 and n > 0:
        flat_cdf, active = _row_cdf_flat(g.adjacency)
        first_order = p == 1.0 and q == 1.0
        current = starts.copy()
        previous = np.full_like(starts, -1)
        alive = active[current]
        for step in range(1, walk_length):
            idx = np.nonzero(alive)[0]
            if len(idx) == 0:
                break
            cur = current[idx]
            if step == 1 or first_order:
                nxt = _sample_rows(flat_cdf, cur, rng.random(len(idx)), n)
            else:
                nxt = np.empty(len(idx), dtype=np.int64)
                for lo in range(0, len(idx), _WALK_CHUNK):
                    sel = slice(lo, lo + _WALK_CHUNK)
                    block = idx[sel]
                    w = _second_order_weights(
                        g.adjacency, previous[block], current[block], p, q
                    )
                    totals = w.sum(axis=1)
                    ok = totals > EDGE_EPS
                    cdf = np.cumsum(w, axis=1)
                    cdf /= np.where(ok, cdf[:, -1], 1.0)[:, None]
                    cdf[~ok] = 0.0
                    rows = np.arange(len(block))
                    flat = (cdf + rows[:, None]).ravel()
                    pick = np.searchsorted(flat, rows + rng.random(len(block)), side="right")
                    nxt[sel] = pick - rows * n
                    alive[block[~ok]] = False
                nxt = nxt[alive[idx]]
                idx = idx[alive[idx]]
            walks[idx, step] = nxt
            previous[idx] = current[idx]
            current[idx] = nxt
            alive[idx] &= active[nxt]

    sequences = tuple(row[row >= 0] for row in walks)
    for seq in sequences:
        seq.setflags(write=False)
    return WalkCorpus(
        walks=sequences,
        num_walks=num_walks,
        walk_length=walk_length,
        p=p,
        q=q,
        seed=seed,
    )


def skipgram_pair_loss(
    center: np.ndarray, context: np.ndarray, negatives: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Negative-sampling loss and gradients for one (center, context, negatives) triple.

    Returns (loss, grad_center, grad_context, grad_negatives). The training
    loop applies exactly this gradient batch-wise.
    """
    loss, gv, gc, gn = _sgns_batch(
        center[None, :], context[None, :], negatives[None, :, :]
    )
    return float(loss), gv[0], gc[0], gn[0]


def _sgns_batch(centers, contexts, negatives):
    pos_score = np.einsum("bd,bd->b", centers, contexts)
    neg_score = np.einsum("bkd,bd->bk", negatives, centers)
    loss = np.logaddexp(0.0, -pos_score).sum() + np.logaddexp(0.0, neg_score).sum()
    g_pos = expit(pos_score) - 1.0
    g_neg = expit(neg_score)
    grad_center = g_pos[:, None] * contexts + np.einsum("bk,bkd->bd", g_neg, negatives)
    grad_context = g_pos[:, None] * centers
    grad_negatives = g_neg[:, :, None] * centers[:, None, :]
    return loss, grad_center, grad_context, grad_negatives


def _scatter_mean_step(matrix, buffer, rows, grads, rate):
    """Move each touched row by ``rate`` times its mean gradient over the batch.

    Averaging (rather than summing) repeated-row gradients keeps the step size
    bounded on small vocabularies, where one batch can hit a node hundreds of
    times.
    """
    buffer.fill(0.0)
    np.add.at(buffer, rows, grads)
    counts = np.bincount(rows, minlength=len(matrix))
    touched = counts > 0
    matrix[touched] -= rate * buffer[touched] / counts[touched, None]


def _pair_template(length: int, window: int) -> tuple[list[int], list[int]]:
    ci, cj = [], []
    for i in range(length):
        for j in range(max(0, i - window), min(length, i + window + 1)):
            if j != i:
                ci.append(i)
                cj.append(j)
    return ci, cj


def _walk_pairs(walks, window, block_walks=512):
    """Yield (centers, contexts) index blocks without materializing all pairs."""
    by_len: dict[int, list[np.ndarray]] = defaultdict(list)
    for walk in walks:
        if len(walk) >= 2:
            by_len[len(walk)].append(walk)
    for length in sorted(by_len):
        group = by_len[length]
        ci, cj = _pair_template(length, window)
        for lo in range(0, len(group), block_walks):
            mat = np.vstack(group[lo : lo + block_walks])
            yield mat[:, ci].ravel(), mat[:, cj].ravel()


def _count_pairs(walks, window) -> int:
    total = 0
    for walk in walks:
        length = len(walk)
        if length >= 2:
            i = np.arange(length)
            total += int(
                (np.minimum(length, i + window + 1) - np.maximum(0, i - window) - 1).sum()
            )
    return total


def skipgram_train(
    corpus: WalkCorpus,
    dim: int = 128,
    window: int = 10,
    negatives: int = 5,
    epochs: int = 1,
    lr: float = 0.025,
    seed: int = 0,
    batch_size: int | None = None,
) -> EmbeddingMatrix:
    """Train skip-gram with negative sampling over a walk corpus.

    Context pairs come from a fixed symmetric window; negatives are drawn from
    the unigram distribution raised to 0.75. Updates are applied per minibatch
    (row-mean gradients, linearly decaying learning rate); the default batch
    size scales with the vocabulary so repeated-row averaging does not stall
    learning on small graphs. Sequential and deterministic per seed;
    ``epochs=0`` returns the seeded initialization.
    """
    if dim <= 0:
        raise ValueError("dim must be positive")
    if window <= 0:
        raise ValueError("window must be positive")
    if negatives < 1:
        raise ValueError("need at least one negative sample")
    if not corpus.walks:
        raise ValueError("empty walk corpus")

    n_nodes = 1 + max(int(w.max()) for w in corpus.walks if len(w))
    if batch_size is None:
        batch_size = int(min(8192, max(128, 4 * n_nodes)))
    rng = np.random.default_rng(seed)
    w_in = (rng.random((n_nodes, dim)) - 0.5) / dim
    w_out = np.zeros((n_nodes, dim))
    meta = {
        "dim": dim,
        "window": window,
        "negatives": negatives,
        "epochs": epochs,
        "lr": lr,
        "seed": seed,
    }
    if epochs == 0:
        return EmbeddingMatrix(vectors=w_in, dim=dim, training_meta=meta)

    counts = np.zeros(n_nodes)
    for walk in corpus.walks:
        counts += np.bincount(walk, minlength=n_nodes)
    table = counts**0.75
    total_mass = table.sum()
    if total_mass == 0:
        raise ValueError("empty walk corpus")
    neg_cdf = np.cumsum(table / total_mass)
    neg_cdf[-1] = 1.0

    total_pairs = _count_pairs(corpus.walks, window)
    if total_pairs == 0:
        return EmbeddingMatrix(vectors=w_in, dim=dim, training_meta=meta)

    step = 0
    total_steps = epochs * total_pairs
    buffer = np.zeros_like(w_in)
    for _ in range(epochs):
        for centers_all, contexts_all in _walk_pairs(corpus.walks, window):
            order = rng.permutation(len(centers_all))
            for lo in range(0, len(order), batch_size):
                sel = order[lo : lo + batch_size]
                centers = centers_all[sel]
                contexts = contexts_all[sel]
                negs = np.searchsorted(
                    neg_cdf, rng.random((len(sel), negatives)), side="right"
                )
                _, g_c, g_ctx, g_neg = _sgns_batch(
                    w_in[centers], w_out[contexts], w_out[negs]
                )
                rate = lr * max(1.0 - step / total_steps, 0.01)
                _scatter_mean_step(w_in, buffer, centers, g_c, rate)
                out_rows = np.concatenate([contexts, negs.ravel()])
                out_grads = np.vstack([g_ctx, g_neg.reshape(-1, dim)])
                _scatter_mean_step(w_out, buffer, out_rows, out_grads, rate)
                step += len(sel)
    return EmbeddingMatrix(vectors=w_in, dim=dim, training_meta=meta)


@dataclass(frozen=True, eq=False)
class PCAResult:
    """Centered projection onto the leading principal directions."""

    projected: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray


def pca_project(data, k: int) -> PCAResult:
    """Project rows onto the top-k principal components (by decreasing variance).

    Components are orthonormal with a deterministic sign convention (largest
    loading positive). ``explained_variance_ratio`` is relative to the total
    variance.
    """
    x = data.vectors if isinstance(data, EmbeddingMatrix) else np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("data must be a 2-D matrix")
    n, d = x.shape
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}]")
    mean = x.mean(axis=0)
    centered = x - mean
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    for i in range(len(s)):
        j = np.argmax(np.abs(vt[i]))
        if vt[i, j] < 0:
            vt[i] = -vt[i]
            u[:, i] = -u[:, i]
    projected = u[:, :k] * s[:k]
    variance = s**2
    total = variance.sum()
    ratio = variance[:k] / total if total > 0 else np.zeros(k)
    return PCAResult(
        projected=projected,
        components=vt[:k],
        explained_variance_ratio=ratio,
        mean=mean,
    )


def edge_features(data, pairs: np.ndarray, combiner: str = "hadamard") -> np.ndarray:
    """Combine endpoint embeddings into per-pair features.

    ``hadamard`` multiplies elementwise; ``concat`` stacks the two vectors with
    the lower node index first so undirected pairs are canonical.
    """
    vectors = data.vectors if isinstance(data, EmbeddingMatrix) else np.asarray(data, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= len(vectors)):
        raise ValueError("pair contains a node index out of range")
    if combiner == "hadamard":
        return vectors[pairs[:, 0]] * vectors[pairs[:, 1]]
    if combiner == "concat":
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        return np.hstack([vectors[lo], vectors[hi]])
    raise ValueError(f"unknown combiner {combiner!r}; expected 'hadamard' or 'concat'")


def save_embedding_text(path: str | Path, emb: EmbeddingMatrix, node_ids) -> None:
    """Write ``node_id v_1 ... v_dim`` lines using a round-trip-exact float format."""
    node_ids = list(node_ids)
    if len(node_ids) != emb.n_nodes:
        raise ValueError("one node id per embedding row is required")
    with open(path, "w", encoding="utf-8") as fh:
        for node_id, row in zip(node_ids, emb.vectors):
            fh.write(node_id + " " + " ".join(f"{v:.17g}" for v in row) + "\n")


def load_embedding_text(path: str | Path) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            tokens = line.split()
            if not tokens:
                continue
            ids.append(tokens[0])
            rows.append([float(t) for t in tokens[1:]])
    return ids, np.asarray(rows, dtype=np.float64)


def save_embedding(path: str | Path, emb: EmbeddingMatrix) -> None:
    """Binary embedding format: vectors plus a self-describing JSON header."""
    header = {"dim": emb.dim, "n_nodes": emb.n_nodes, "dtype": str(emb.vectors.dtype)}
    header.update(emb.training_meta)
    np.savez(
        path,
        vectors=emb.vectors,
        header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
    )


def load_embedding(path: str | Path) -> EmbeddingMatrix:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        vectors = data["vectors"]
    meta = {k: v for k, v in header.items() if k not in ("dim", "n_nodes", "dtype")}
    return EmbeddingMatrix(vectors=vectors, dim=int(header["dim"]), training_meta=meta)
