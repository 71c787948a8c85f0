"""Fairness and utility metrics for link prediction on attributed graphs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .embed import EmbeddingMatrix, edge_features
from .graph import EdgeSplit, Graph, sample_non_edges

__all__ = [
    "DyadicSample",
    "ClassifierConfig",
    "LinearClassifier",
    "MetricsReport",
    "AssumptionDiagnostics",
    "ddi",
    "dber",
    "min_dber_bruteforce",
    "xor_conditional_joints",
    "min_dber_bound",
    "assortativity",
    "logistic_loss_and_grad",
    "train_classifier",
    "representation_bias",
    "dyadic_rb",
    "link_prediction_eval",
    "assumption_diagnostics",
]


@dataclass(frozen=True, eq=False)
class DyadicSample:
    """Per-pair predictions annotated with the cross-group indicator.

    ``xor_label`` is 1 where the two endpoints carry different sensitive
    values; ``link_label`` is the ground-truth edge indicator; ``prediction``
    and ``score`` come from the link predictor.
    """

    pairs: np.ndarray
    xor_label: np.ndarray
    link_label: np.ndarray
    prediction: np.ndarray
    score: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        m = len(pairs)
        for name in ("xor_label", "link_label", "prediction"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            if arr.shape != (m,):
                raise ValueError(f"{name} must have one entry per pair")
            if m and not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{name} entries must be 0 or 1")
            object.__setattr__(self, name, arr)
        score = np.asarray(self.score, dtype=np.float64).reshape(-1)
        if score.shape != (m,):
            raise ValueError("score must have one entry per pair")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "score", score)

    def __len__(self) -> int:
        return len(self.pairs)


def ddi(sample: DyadicSample) -> float:
    """Ratio of cross-group to same-group positive-prediction rates (1 = fair)."""
    inter = sample.xor_label == 1
    intra = ~inter
    if not inter.any() or not intra.any():
        raise ValueError("DDI undefined: both dyad groups must be non-empty")
    inter_rate = sample.prediction[inter].mean()
    intra_rate = sample.prediction[intra].mean()
    if intra_rate == 0:
        raise ValueError("DDI undefined: same-group positive rate is zero")
    return float(inter_rate / intra_rate)


def dber(sample: DyadicSample) -> float:
    """Balanced error of the predictor read as a cross-group classifier.

    Mean of P(predict 0 | cross-group) and P(predict 1 | same-group); 0.5 means
    the prediction carries no group signal.
    """
    inter = sample.xor_label == 1
    intra = ~inter
    if not inter.any() or not intra.any():
        raise ValueError("DBER undefined: both dyad groups must be non-empty")
    miss_inter = (sample.prediction[inter] == 0).mean()
    false_intra = (sample.prediction[intra] == 1).mean()
    return float(0.5 * (miss_inter + false_intra))


def min_dber_bruteforce(gamma0, gamma1) -> float:
    """Smallest achievable balanced error over all deterministic labelings.

    Enumerates every 0/1 labeling of the shared support (feasible up to 20
    points); serves as the independent oracle for the total-variation identity
    min-DBER = (1 - TV) / 2.
    """
    g0 = np.asarray(gamma0, dtype=np.float64).reshape(-1)
    g1 = np.asarray(gamma1, dtype=np.float64).reshape(-1)
    if g0.shape != g1.shape:
        raise ValueError("support mismatch: distributions differ in length")
    k = len(g0)
    if k == 0 or k > 20:
        raise ValueError("support size must lie in [1, 20] for enumeration")
    for name, g in (("gamma0", g0), ("gamma1", g1)):
        if g.min() < 0 or abs(g.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} must be a probability vector")
    labelings = (np.arange(2**k)[:, None] >> np.arange(k)[None, :]) & 1
    errors = 0.5 * (labelings @ g0 + (1 - labelings) @ g1)
    return float(errors.min())


def xor_conditional_joints(
    dists, priors=None
) -> tuple[np.ndarray, np.ndarray]:
    """Joint distributions of an independent pair, conditioned on group (dis)agreement.

    Given per-group value distributions and group priors, a pair (u, v) is
    drawn with independent group memberships and values. Returns the joint
    value distribution given the two groups match, and given they differ.
    """
    d = np.asarray(dists, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] < 2:
        raise ValueError("need per-group distributions for at least 2 groups")
    k, r = d.shape
    pri = np.full(k, 1.0 / k) if priors is None else np.asarray(priors, dtype=np.float64)
    if pri.shape != (k,) or pri.min() < 0 or abs(pri.sum() - 1.0) > 1e-9:
        raise ValueError("priors must be one probability per group")
    same = np.zeros((r, r))
    for s in range(k):
        same += pri[s] ** 2 * np.outer(d[s], d[s])
    mix = pri @ d
    full = np.outer(mix, mix)
    diff = full - same
    z_same = float((pri**2).sum())
    z_diff = 1.0 - z_same
    if z_diff <= 0:
        raise ValueError("degenerate priors: no cross-group pairs possible")
    return same / z_same, diff / z_diff


_BOUND_MAX_DISTINCT_ROWS = 5000


def min_dber_bound(g: Graph) -> float:
    """Fairness ceiling of a graph: (1 - TV) / 2 over its dyad distributions.

    Nodes are identified by the exact value of their [attributes | adjacency]
    row; the two dyad distributions condition an independent node pair on
    whether the sensitive values match. 0.5 means no predictor can separate
    the dyads; 0 means some predictor separates them perfectly.
    """
    groups = np.unique(g.sensitive)
    if len(groups) < 2:
        raise ValueError("fairness undefined for one group")
    rows = np.hstack([g.attributes, g.adjacency])
    _, row_ids = np.unique(rows, axis=0, return_inverse=True)
    row_ids = row_ids.reshape(-1)
    n_distinct = int(row_ids.max()) + 1
    if n_distinct > _BOUND_MAX_DISTINCT_ROWS:
        raise ValueError(
            f"too many distinct rows ({n_distinct}) for the dyad-distribution bound"
        )
    dists = np.zeros((len(groups), n_distinct))
    priors = np.zeros(len(groups))
    for i, k in enumerate(groups):
        members = row_ids[g.sensitive == k]
        dists[i] = np.bincount(members, minlength=n_distinct) / len(members)
        priors[i] = len(members) / g.n_nodes
    joint_same, joint_diff = xor_conditional_joints(dists, priors)
    tv = 0.5 * np.abs(joint_same - joint_diff).sum()
    return float(0.5 * (1.0 - tv))


def assortativity(g: Graph) -> float:
    """Newman assortativity of the sensitive attribute over the (weighted) edges."""
    edges = g.edge_list()
    if len(edges) == 0:
        raise ValueError("assortativity undefined without edges")
    k = int(g.sensitive.max()) + 1
    onehot = np.zeros((g.n_nodes, k))
    onehot[np.arange(g.n_nodes), g.sensitive] = 1.0
    mixing = onehot.T @ g.adjacency @ onehot
    mixing /= mixing.sum()
    a = mixing.sum(axis=1)
    b = mixing.sum(axis=0)
    denom = 1.0 - float(a @ b)
    if abs(denom) < 1e-12:
        warnings.warn(
            "assortativity denominator degenerate (single-group edges); returning 1.0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 1.0
    return float((np.trace(mixing) - a @ b) / denom)


@dataclass(frozen=True)
class ClassifierConfig:
    """Gradient-descent settings for the linear (logistic) classifier."""

    lr: float | None = None      # None: 1 / smoothness estimate
    epochs: int = 500
    reg: float = 1e-3
    standardize: bool = True
    seed: int = 0


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    """One-vs-rest logistic model with frozen feature standardization."""

    weights: np.ndarray          # (n_classes_or_1, d)
    bias: np.ndarray             # (n_classes_or_1,)
    classes: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("classifier parameters must be finite")

    def _scores(self, features: np.ndarray) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.feature_mean) / self.feature_scale
        return x @ self.weights.T + self.bias

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return expit(self._scores(features))

    def positive_score(self, features: np.ndarray) -> np.ndarray:
        """P(second class) for binary problems."""
        if len(self.classes) != 2:
            raise ValueError("positive_score applies to binary classifiers only")
        return expit(self._scores(features)[:, 0])

    def predict(self, features: np.ndarray) -> np.ndarray:
        scores = self._scores(features)
        if len(self.classes) == 2:
            return self.classes[(scores[:, 0] >= 0).astype(int)]
        return self.classes[np.argmax(scores, axis=1)]


def logistic_loss_and_grad(
    w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, reg: float
) -> tuple[float, np.ndarray, float]:
    """L2-regularized mean logistic loss and its exact gradient."""
    z = x @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * reg * (w @ w))
    residual = expit(z) - y
    grad_w = x.T @ residual / len(y) + reg * w
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


def _fit_binary(x: np.ndarray, y: np.ndarray, cfg: ClassifierConfig) -> tuple[np.ndarray, float]:
    w = np.zeros(x.shape[1])
    b = 0.0
    if cfg.lr is None:
        smoothness = 0.25 * np.linalg.norm(x, ord=2) ** 2 / len(y) + cfg.reg
        lr = 1.0 / max(smoothness, 1e-12)
    else:
        lr = cfg.lr
    for _ in range(cfg.epochs):
        _, grad_w, grad_b = logistic_loss_and_grad(w, b, x, y, cfg.reg)
        w -= lr * grad_w
        b -= lr * grad_b
    return w, b


def train_classifier(
    features: np.ndarray, labels: np.ndarray, cfg: ClassifierConfig | None = None
) -> LinearClassifier:
    """Deterministic logistic regression (one-vs-rest beyond two classes)."""
    cfg = cfg or ClassifierConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be one row per label")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to train a classifier")

    if cfg.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
    else:
        mean = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
    xs = (x - mean) / scale

    if len(classes) == 2:
        targets = [(y == classes[1]).astype(np.float64)]
    else:
        targets = [(y == c).astype(np.float64) for c in classes]
    fitted = [_fit_binary(xs, t, cfg) for t in targets]
    weights = np.vstack([w for w, _ in fitted])
    bias = np.array([b for _, b in fitted])
    meta = {"epochs": cfg.epochs, "lr": cfg.lr, "reg": cfg.reg, "seed": cfg.seed}
    return LinearClassifier(
        weights=weights,
        bias=bias,
        classes=classes,
        feature_mean=mean,
        feature_scale=scale,
        training_meta=meta,
    )


def _stratified_split(
    labels: np.ndarray, test_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    train_parts, test_parts = [], []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        if len(idx) < 2:
            raise ValueError(f"class {c!r} has fewer than 2 members")
        idx = rng.permutation(idx)
        n_test = int(round(test_fraction * len(idx)))
        n_test = min(max(n_test, 1), len(idx) - 1)
        test_parts.append(idx[:n_test])
        train_parts.append(idx[n_test:])
    return np.concatenate(train_parts), np.concatenate(test_parts)


def representation_bias(
    emb: EmbeddingMatrix,
    sensitive: np.ndarray,
    split_fraction: float = 0.3,
    seed: int = 0,
    cfg: ClassifierConfig | None = None,
) -> float:
    """Held-out accuracy of recovering the sensitive value from node embeddings.

    Lower is better obfuscation; chance level is the majority share.
    """
    sensitive = np.asarray(sensitive).reshape(-1)
    if len(np.unique(sensitive)) < 2:
        raise ValueError("representation bias needs at least 2 sensitive classes")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = _stratified_split(sensitive, split_fraction, rng)
    clf = train_classifier(emb.vectors[train_idx], sensitive[train_idx], cfg)
    predicted = clf.predict(emb.vectors[test_idx])
    return float((predicted == sensitive[test_idx]).mean())


def dyadic_rb(
    emb: EmbeddingMatrix,
    edges: np.ndarray,
    sensitive: np.ndarray,
    seed: int = 0,
    cfg: ClassifierConfig | None = None,
    split_fraction: float = 0.3,
    pair_features: np.ndarray | None = None,
) -> float:
    """Edge-group-weighted accuracy of predicting group disagreement from pair embeddings.

    Pair features are the canonical concatenation of the endpoint embeddings
    (or ``pair_features`` when supplied directly); accuracy is measured per
    dyad group on a held-out stratified split and weighted by each group's
    share of the edge set.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    sensitive = np.asarray(sensitive).reshape(-1)
    xor = (sensitive[edges[:, 0]] != sensitive[edges[:, 1]]).astype(np.int64)
    if xor.sum() in (0, len(xor)):
        raise ValueError("both same-group and cross-group edges are required")
    if pair_features is not None:
        features = np.asarray(pair_features, dtype=np.float64)
        if len(features) != len(edges):
            raise ValueError("one pair feature row per edge is required")
    else:
        features = edge_features(emb, edges, combiner="concat")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = _stratified_split(xor, split_fraction, rng)
    clf = train_classifier(features[train_idx], xor[train_idx], cfg)
    predicted = clf.predict(features[test_idx])
    score = 0.0
    for s in (0, 1):
        share = float((xor == s).mean())
        mask = xor[test_idx] == s
        accuracy = float((predicted[mask] == s).mean())
        score += share * accuracy
    return score


def link_prediction_eval(
    emb: EmbeddingMatrix,
    g: Graph,
    split: EdgeSplit,
    combiner: str = "hadamard",
    seed: int = 0,
    cfg: ClassifierConfig | None = None,
) -> tuple[float, DyadicSample]:
    """Train a link classifier on the split's training edges and score the test pairs.

    Training negatives are freshly sampled non-edges (never overlapping the
    held-out negatives); the returned sample carries per-pair predictions for
    the fairness metrics.
    """
    if len(split.train_edges) == 0:
        raise ValueError("empty train set")
    if len(split.test_pos) == 0 or len(split.test_neg) == 0:
        raise ValueError("empty test sets")
    rng = np.random.default_rng(seed)
    train_neg = sample_non_edges(g, len(split.train_edges), rng, exclude=split.test_neg)
    train_pairs = np.vstack([split.train_edges, train_neg])
    train_labels = np.concatenate(
        [np.ones(len(split.train_edges), dtype=np.int64), np.zeros(len(train_neg), dtype=np.int64)]
    )
    clf = train_classifier(edge_features(emb, train_pairs, combiner), train_labels, cfg)

    test_pairs = np.vstack([split.test_pos, split.test_neg])
    link_label = np.concatenate(
        [np.ones(len(split.test_pos), dtype=np.int64), np.zeros(len(split.test_neg), dtype=np.int64)]
    )
    score = clf.positive_score(edge_features(emb, test_pairs, combiner))
    prediction = (score >= 0.5).astype(np.int64)
    accuracy = float((prediction == link_label).mean())
    xor = (g.sensitive[test_pairs[:, 0]] != g.sensitive[test_pairs[:, 1]]).astype(np.int64)
    sample = DyadicSample(
        pairs=test_pairs,
        xor_label=xor,
        link_label=link_label,
        prediction=prediction,
        score=score,
    )
    return accuracy, sample


def _wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    if total == 0:
        return (0.0, 1.0)
    phat = successes / total
    denom = 1.0 + z**2 / total
    center = (phat + z**2 / (2 * total)) / denom
    half = z * np.sqrt(phat * (1 - phat) / total + z**2 / (4 * total**2)) / denom
    return (float(center - half), float(center + half))


@dataclass(frozen=True)
class AssumptionDiagnostics:
    """Empirical checks of the sampling-balance and homophily-propensity assumptions."""

    xor_rate: float
    equivalence_interval: tuple[float, float]
    equivalence_holds: bool
    intra_positive_rate: float
    inter_positive_rate: float
    propensity_holds: bool


def assumption_diagnostics(sample: DyadicSample) -> AssumptionDiagnostics:
    """Report (never raise) whether the two modeling assumptions hold on a sample.

    Balance: the cross-group share of pairs should be compatible with 1/2
    (Wilson 95% interval). Propensity: the predictor should favor same-group
    pairs at least as much as cross-group pairs.
    """
    if len(sample) == 0:
        return AssumptionDiagnostics(
            xor_rate=float("nan"),
            equivalence_interval=(0.0, 1.0),
            equivalence_holds=False,
            intra_positive_rate=float("nan"),
            inter_positive_rate=float("nan"),
            propensity_holds=False,
        )
    inter = sample.xor_label == 1
    xor_rate = float(inter.mean())
    low, high = _wilson_interval(int(inter.sum()), len(sample))
    intra_rate = float(sample.prediction[~inter].mean()) if (~inter).any() else float("nan")
    inter_rate = float(sample.prediction[inter].mean()) if inter.any() else float("nan")
    propensity = bool(
        np.isfinite(intra_rate) and np.isfinite(inter_rate) and intra_rate >= inter_rate
    )
    return AssumptionDiagnostics(
        xor_rate=xor_rate,
        equivalence_interval=(low, high),
        equivalence_holds=low <= 0.5 <= high,
        intra_positive_rate=intra_rate,
        inter_positive_rate=inter_rate,
        propensity_holds=propensity,
    )


@dataclass(frozen=True)
class MetricsReport:
    """All fairness/utility scores for one pipeline run (one seed, one graph)."""

    acc: float
    ddi: float
    dber: float
    rb: float
    dyadic_rb: float
    assortativity: float
    min_dber_bound: float
    config: dict = field(default_factory=dict)
    seeds: tuple[int, ...] = ()

    def __post_init__(self):
        if self.ddi < 0:
            raise ValueError("ddi must be non-negative")
        if not 0.0 <= self.dber <= 1.0:
            raise ValueError("dber must lie in [0, 1]")
        if not -1.0 - 1e-9 <= self.assortativity <= 1.0 + 1e-9:
            raise ValueError("assortativity must lie in [-1, 1]")
        for name in ("acc", "rb", "dyadic_rb"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    SCORE_FIELDS = ("acc", "ddi", "dber", "rb", "dyadic_rb", "assortativity", "min_dber_bound")

    def to_dict(self) -> dict:
        out = {name: float(getattr(self, name)) for name in self.SCORE_FIELDS}
        out["config"] = self.config
        out["seeds"] = list(self.seeds)
        return out

    def to_csv_row(self) -> str:
        return ",".join(f"{float(getattr(self, name)):.10g}" for name in self.SCORE_FIELDS)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.SCORE_FIELDS)
