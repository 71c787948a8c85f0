import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairlink import (
    ClassifierConfig,
    DyadicSample,
    EmbeddingMatrix,
    Graph,
    assortativity,
    assumption_diagnostics,
    cost_hamming,
    dber,
    ddi,
    dyadic_rb,
    link_prediction_eval,
    min_dber_bound,
    min_dber_bruteforce,
    representation_bias,
    split_edges,
    train_classifier,
    wasserstein,
    xor_conditional_joints,
)
from fairlink.metrics import logistic_loss_and_grad
from synth import make_attributed_graph
from test_embed import finite_difference, max_rel_error


def sample_from(xor, prediction, link=None, score=None):
    xor = np.asarray(xor)
    m = len(xor)
    pairs = np.column_stack([np.arange(m), np.arange(m) + m])
    return DyadicSample(
        pairs=pairs,
        xor_label=xor,
        link_label=np.zeros(m, dtype=int) if link is None else link,
        prediction=np.asarray(prediction),
        score=np.zeros(m) if score is None else score,
    )


class TestDDI:
    def test_equal_rates_give_one(self):
        s = sample_from([1, 1, 0, 0], [1, 0, 1, 0])
        assert ddi(s) == pytest.approx(1.0)

    def test_hand_ratio(self):
        # inter rate 0.2 (1/5), intra rate 0.4 (2/5)
        xor = [1] * 5 + [0] * 5
        pred = [1, 0, 0, 0, 0] + [1, 1, 0, 0, 0]
        assert ddi(sample_from(xor, pred)) == pytest.approx(0.5)

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError, match="DDI undefined"):
            ddi(sample_from([1, 1], [1, 0]))

    def test_zero_denominator_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            ddi(sample_from([1, 0], [1, 0]))

    def test_one_iff_rates_equal(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            xor = rng.integers(0, 2, 40)
            pred = rng.integers(0, 2, 40)
            if not (xor.any() and (1 - xor).any()) or pred[xor == 0].mean() == 0:
                continue
            value = ddi(sample_from(xor, pred))
            equal_rates = pred[xor == 1].mean() == pred[xor == 0].mean()
            assert (value == 1.0) == equal_rates


class TestDBER:
    def test_prediction_equals_indicator_gives_zero(self):
        xor = np.array([1, 1, 0, 0, 1])
        assert dber(sample_from(xor, xor)) == pytest.approx(0.0)

    def test_constant_predictor_gives_half(self):
        xor = np.array([1, 0, 1, 0])
        assert dber(sample_from(xor, np.ones(4, dtype=int))) == pytest.approx(0.5)
        assert dber(sample_from(xor, np.zeros(4, dtype=int))) == pytest.approx(0.5)

    def test_hand_counts(self):
        # xor=1: 6 predicted 0, 4 predicted 1; xor=0: 3 predicted 1, 7 predicted 0
        xor = [1] * 10 + [0] * 10
        pred = [0] * 6 + [1] * 4 + [1] * 3 + [0] * 7
        assert dber(sample_from(xor, pred)) == pytest.approx(0.45)

    def test_range(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            xor = np.r_[1, 0, rng.integers(0, 2, 20)]
            pred = rng.integers(0, 2, 22)
            assert 0.0 <= dber(sample_from(xor, pred)) <= 1.0


class TestMinDberOracle:
    def test_identical_distributions(self):
        assert min_dber_bruteforce([0.5, 0.5], [0.5, 0.5]) == pytest.approx(0.5)

    def test_disjoint_supports(self):
        assert min_dber_bruteforce([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)

    def test_hand_enumeration(self):
        assert min_dber_bruteforce([0.7, 0.3], [0.4, 0.6]) == pytest.approx(0.35)

    def test_support_mismatch(self):
        with pytest.raises(ValueError, match="support"):
            min_dber_bruteforce([1.0], [0.5, 0.5])

    def test_never_exceeds_half(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            k = rng.integers(1, 7)
            g0 = rng.dirichlet(np.ones(k))
            g1 = rng.dirichlet(np.ones(k))
            assert min_dber_bruteforce(g0, g1) <= 0.5 + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 10_000))
    def test_total_variation_identity(self, k, seed):
        rng = np.random.default_rng(seed)
        g0 = rng.dirichlet(np.ones(k))
        g1 = rng.dirichlet(np.ones(k))
        w = wasserstein(cost_hamming(np.arange(k), np.arange(k)), g0, g1)
        assert min_dber_bruteforce(g0, g1) == pytest.approx(0.5 * (1 - w), abs=1e-12)


class TestXorJoints:
    def test_aligned_marginals_identical_joints(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            k = rng.integers(2, 6)
            p = rng.dirichlet(np.ones(k))
            same, diff = xor_conditional_joints([p, p])
            assert np.abs(same - diff).max() <= 1e-12

    def test_misaligned_marginals_differ(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            k = rng.integers(2, 6)
            p0 = rng.dirichlet(np.ones(k))
            p1 = rng.dirichlet(np.ones(k))
            if 0.5 * np.abs(p0 - p1).sum() < 0.05:
                continue
            same, diff = xor_conditional_joints([p0, p1])
            assert np.abs(same - diff).max() > 1e-12

    def test_three_groups_supported(self):
        p = np.eye(3)
        same, diff = xor_conditional_joints(p, priors=[0.5, 0.25, 0.25])
        assert same.shape == (3, 3)
        assert same.sum() == pytest.approx(1.0)
        assert diff.sum() == pytest.approx(1.0)


class TestMinDberBound:
    def test_identical_group_rows_reach_half(self):
        attrs = np.array([[1.0], [2.0], [1.0], [2.0]])
        g = Graph(
            attributes=attrs, adjacency=np.zeros((4, 4)), sensitive=[0, 0, 1, 1]
        )
        assert min_dber_bound(g) == pytest.approx(0.5, abs=1e-12)

    def test_fully_distinct_rows_give_zero(self):
        attrs = np.arange(4, dtype=float).reshape(4, 1)
        g = Graph(
            attributes=attrs, adjacency=np.zeros((4, 4)), sensitive=[0, 0, 1, 1]
        )
        assert min_dber_bound(g) == pytest.approx(0.0, abs=1e-12)


class TestAssortativity:
    def test_all_intra_one(self):
        adj = np.zeros((4, 4))
        adj[0, 1] = adj[1, 0] = 1.0
        adj[2, 3] = adj[3, 2] = 1.0
        g = Graph(attributes=np.zeros((4, 1)), adjacency=adj, sensitive=[0, 0, 1, 1])
        assert assortativity(g) == pytest.approx(1.0)

    def test_uniform_mixing_zero(self):
        adj = np.zeros((4, 4))
        for u, v in ((0, 1), (2, 3), (0, 2), (1, 3)):
            adj[u, v] = adj[v, u] = 1.0
        g = Graph(attributes=np.zeros((4, 1)), adjacency=adj, sensitive=[0, 0, 1, 1])
        assert assortativity(g) == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_single_group_edges(self):
        adj = np.zeros((3, 3))
        adj[0, 1] = adj[1, 0] = 1.0
        g = Graph(attributes=np.zeros((3, 1)), adjacency=adj, sensitive=[0, 0, 1])
        with pytest.warns(RuntimeWarning, match="degenerate"):
            assert assortativity(g) == 1.0

    def test_no_edges_rejected(self):
        g = Graph(attributes=np.zeros((2, 1)), adjacency=np.zeros((2, 2)), sensitive=[0, 1])
        with pytest.raises(ValueError, match="edges"):
            assortativity(g)

    def test_relabeling_invariance(self):
        g = make_attributed_graph(30, groups=3, seed=5)
        base = assortativity(g)
        perm = np.array([2, 0, 1])
        relabeled = Graph(
            attributes=g.attributes,
            adjacency=g.adjacency,
            sensitive=perm[g.sensitive],
        )
        assert assortativity(relabeled) == pytest.approx(base, abs=1e-12)

    def test_weighted_edges_contribute(self):
        # mixing: e00 = 1.8/2, e01 = e10 = 0.1/2 -> trace 0.9, a@b 0.905,
        # r = (0.9 - 0.905)/(1 - 0.905) = -1/19
        adj = np.zeros((4, 4))
        adj[0, 1] = adj[1, 0] = 0.9   # intra
        adj[0, 2] = adj[2, 0] = 0.1   # inter
        g = Graph(attributes=np.zeros((4, 1)), adjacency=adj, sensitive=[0, 0, 1, 1])
        assert assortativity(g) == pytest.approx(-1 / 19)
        binarized = g.with_adjacency((adj > 0).astype(float))
        assert assortativity(binarized) != pytest.approx(assortativity(g))


class TestClassifier:
    def test_separable_blobs_perfect_training_accuracy(self):
        rng = np.random.default_rng(0)
        x = np.vstack([rng.normal(-3, 0.3, (40, 2)), rng.normal(3, 0.3, (40, 2))])
        y = np.r_[np.zeros(40), np.ones(40)]
        clf = train_classifier(x, y)
        assert (clf.predict(x) == y).mean() == 1.0

    def test_logistic_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n, d = int(rng.integers(3, 12)), int(rng.integers(1, 6))
            x = rng.uniform(-1, 1, (n, d))
            y = rng.integers(0, 2, n).astype(float)
            w = rng.uniform(-1, 1, d)
            b = float(rng.uniform(-1, 1))
            reg = float(rng.uniform(0, 0.5))
            _, grad_w, grad_b = logistic_loss_and_grad(w, b, x, y, reg)
            fd_w = finite_difference(lambda v: logistic_loss_and_grad(v, b, x, y, reg)[0], w)
            fd_b = finite_difference(
                lambda v: logistic_loss_and_grad(w, float(v[0]), x, y, reg)[0],
                np.array([b]),
            )
            assert max_rel_error(grad_w, fd_w) < 1e-4
            assert max_rel_error(np.array([grad_b]), fd_b) < 1e-4

    def test_identical_features_majority_rate(self):
        x = np.ones((10, 3))
        y = np.r_[np.ones(7), np.zeros(3)]
        clf = train_classifier(x, y)
        assert (clf.predict(x) == y).mean() == pytest.approx(0.7)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="2 classes"):
            train_classifier(np.zeros((4, 2)), np.zeros(4))

    def test_multiclass_one_vs_rest(self):
        rng = np.random.default_rng(2)
        centers = np.array([[-4.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        y = np.repeat([0, 1, 2], 30)
        x = centers[y] + rng.normal(0, 0.4, (90, 2))
        clf = train_classifier(x, y)
        assert (clf.predict(x) == y).mean() > 0.95

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.random((30, 4))
        y = rng.integers(0, 2, 30)
        c1 = train_classifier(x, y)
        c2 = train_classifier(x, y)
        assert np.array_equal(c1.weights, c2.weights)
        assert np.array_equal(c1.bias, c2.bias)


class TestRepresentationBias:
    def test_one_hot_sensitive_near_perfect(self):
        rng = np.random.default_rng(4)
        sens = rng.integers(0, 2, 200)
        vectors = np.column_stack([sens == 0, sens == 1]).astype(float)
        vectors += rng.normal(0, 0.01, vectors.shape)
        emb = EmbeddingMatrix(vectors=vectors, dim=2)
        assert representation_bias(emb, sens, seed=0) > 0.97

    def test_independent_embedding_chance_level(self):
        rng = np.random.default_rng(5)
        sens = np.tile([0, 1], 500)
        emb = EmbeddingMatrix(vectors=rng.normal(0, 1, (1000, 16)), dim=16)
        assert abs(representation_bias(emb, sens, seed=0) - 0.5) < 0.05

    def test_multiclass_sensitive(self):
        rng = np.random.default_rng(6)
        sens = np.tile([0, 1, 2], 100)
        vectors = np.eye(3)[sens] + rng.normal(0, 0.05, (300, 3))
        emb = EmbeddingMatrix(vectors=vectors, dim=3)
        assert representation_bias(emb, sens, seed=1) > 0.95

    def test_tiny_class_rejected(self):
        emb = EmbeddingMatrix(vectors=np.zeros((3, 2)), dim=2)
        with pytest.raises(ValueError, match="fewer than 2"):
            representation_bias(emb, np.array([0, 0, 1]), seed=0)

    def test_rotation_invariance_without_standardization(self):
        rng = np.random.default_rng(7)
        sens = np.tile([0, 1], 150)
        vectors = rng.normal(0, 1, (300, 8)) + 0.8 * np.outer(sens, np.ones(8))
        emb = EmbeddingMatrix(vectors=vectors, dim=8)
        q, _ = np.linalg.qr(rng.normal(0, 1, (8, 8)))
        rotated = EmbeddingMatrix(vectors=vectors @ q, dim=8)
        cfg = ClassifierConfig(standardize=False)
        a = representation_bias(emb, sens, seed=3, cfg=cfg)
        b = representation_bias(rotated, sens, seed=3, cfg=cfg)
        assert abs(a - b) <= 0.02


class TestDyadicRB:
    def _graph_edges(self, n=200, seed=8):
        g = make_attributed_graph(n, groups=2, seed=seed)
        return g, g.edge_list()

    def test_indicator_features_give_one(self):
        g, edges = self._graph_edges()
        xor = (g.sensitive[edges[:, 0]] != g.sensitive[edges[:, 1]]).astype(float)
        value = dyadic_rb(
            None, edges, g.sensitive, seed=0, pair_features=xor[:, None]
        )
        assert value == pytest.approx(1.0)

    def test_uninformative_pairs_near_chance(self):
        rng = np.random.default_rng(9)
        g, edges = self._graph_edges(seed=10)
        # need balanced-ish dyad groups for a 0.5 baseline
        xor = g.sensitive[edges[:, 0]] != g.sensitive[edges[:, 1]]
        take = min(xor.sum(), (~xor).sum())
        edges = np.vstack([edges[xor][:take], edges[~xor][:take]])
        emb = EmbeddingMatrix(vectors=rng.normal(0, 1, (g.n_nodes, 12)), dim=12)
        value = dyadic_rb(emb, edges, g.sensitive, seed=1)
        assert abs(value - 0.5) < 0.12

    def test_single_kind_rejected(self):
        g = make_attributed_graph(20, groups=2, seed=11)
        edges = g.edge_list()
        intra = edges[g.sensitive[edges[:, 0]] == g.sensitive[edges[:, 1]]]
        emb = EmbeddingMatrix(vectors=np.zeros((20, 2)), dim=2)
        with pytest.raises(ValueError, match="required"):
            dyadic_rb(emb, intra, g.sensitive, seed=0)


class TestLinkPredictionEval:
    def test_perfect_structure_high_accuracy(self):
        g = make_attributed_graph(80, groups=2, homophily=0.9, avg_degree=10, seed=12)
        split = split_edges(g, 0.2, seed=0)
        # eigenvector embedding: hadamard features span A exactly, so the
        # linear link classifier can label every pair correctly
        _, vecs = np.linalg.eigh(np.asarray(g.adjacency))
        emb = EmbeddingMatrix(vectors=vecs, dim=g.n_nodes)
        acc, sample = link_prediction_eval(emb, g, split, seed=0)
        assert acc == pytest.approx(1.0)
        assert len(sample) == 2 * len(split.test_pos)

    def test_random_features_chance(self):
        rng = np.random.default_rng(13)
        g = make_attributed_graph(80, groups=2, avg_degree=10, seed=13)
        split = split_edges(g, 0.3, seed=1)
        emb = EmbeddingMatrix(vectors=rng.normal(0, 1, (g.n_nodes, 16)), dim=16)
        acc, _ = link_prediction_eval(emb, g, split, seed=1)
        assert abs(acc - 0.5) < 0.15

    def test_empty_test_rejected(self):
        g = make_attributed_graph(30, groups=2, avg_degree=5, seed=14)
        split = split_edges(g, 0.0, seed=0)
        emb = EmbeddingMatrix(vectors=np.zeros((30, 4)), dim=4)
        with pytest.raises(ValueError, match="test"):
            link_prediction_eval(emb, g, split, seed=0)


class TestAssumptionDiagnostics:
    def test_balanced_interval_contains_half(self):
        xor = np.tile([0, 1], 100)
        diag = assumption_diagnostics(sample_from(xor, np.ones_like(xor)))
        assert diag.equivalence_holds
        low, high = diag.equivalence_interval
        assert low <= 0.5 <= high

    def test_propensity_holds_for_homophilous_predictions(self):
        xor = np.r_[np.ones(50, int), np.zeros(50, int)]
        pred = np.r_[(np.arange(50) < 10).astype(int), (np.arange(50) < 20).astype(int)]
        diag = assumption_diagnostics(sample_from(xor, pred))
        assert diag.intra_positive_rate == pytest.approx(0.4)
        assert diag.inter_positive_rate == pytest.approx(0.2)
        assert diag.propensity_holds

    def test_propensity_flagged_false_when_inverted(self):
        xor = np.r_[np.ones(50, int), np.zeros(50, int)]
        pred = np.r_[(np.arange(50) < 20).astype(int), (np.arange(50) < 10).astype(int)]
        assert not assumption_diagnostics(sample_from(xor, pred)).propensity_holds

    def test_never_raises_on_degenerate_samples(self):
        diag = assumption_diagnostics(sample_from(np.ones(5, int), np.ones(5, int)))
        assert not diag.propensity_holds
        empty = sample_from(np.empty(0, int), np.empty(0, int))
        assert not assumption_diagnostics(empty).equivalence_holds
