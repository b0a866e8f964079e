"""Model-layer oracles and the finite-difference gradient contract.

Worked values:
* uniform logits, K=3 -> cross entropy ln 3
* logits (1,2,3), label 2 -> ln(1 + e^-1 + e^-2) = 0.40760596...
* K2 Laplacian vs zero matrix -> spectral loss (1+1+1+1)/2 = 2
"""

import math

import numpy as np
import pytest

from skillgraph.errors import SkillGraphError
from skillgraph.gnn import (
    GatLayerParams,
    classify,
    cross_entropy_loss,
    decode_laplacian,
    forward_backward,
    gat_layer_forward,
    global_mean_pool,
    init_model,
    load_checkpoint,
    model_to_checkpoint,
    node_embeddings,
    parameters,
    pooled_embedding,
    positional_features,
    save_checkpoint,
    spectral_loss,
    ssl_target,
)
from skillgraph.graph import SurgicalGraph, normalized_laplacian
from conftest import gradcheck, random_graph


def layer(W, a_src=None, a_dst=None, slope=0.2):
    W = np.asarray(W, dtype=float)
    if a_src is None:
        a_src = np.zeros(W.shape[0])
    if a_dst is None:
        a_dst = np.zeros(W.shape[0])
    return GatLayerParams(W, np.asarray(a_src, float), np.asarray(a_dst, float), slope)


def elu(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x, np.expm1(x))


class TestGatLayer:
    def test_single_node_self_loop_only(self):
        W = np.array([[2.0, 0.0], [0.0, -1.0]])
        x = np.array([[0.5, 1.5]])
        out = gat_layer_forward(x, np.zeros((1, 1)), layer(W))
        assert np.allclose(out, elu(x @ W.T))

    def test_k2_uniform_attention_mean(self):
        X = np.array([[1.0, 2.0], [3.0, -4.0]])
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = gat_layer_forward(X, A, layer(np.eye(2)))
        expected = elu((X + X[::-1]) / 2.0)
        assert np.allclose(out, expected, atol=1e-12)

    def test_attention_rows_sum_to_one(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 8))
            g = random_graph(rng, n, f=3)
            p = layer(rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=4))
            _, alpha = gat_layer_forward(g.X, g.A, p, return_attention=True)
            assert np.allclose(alpha.sum(axis=1), 1.0, atol=1e-12)
            # support is exactly the closed neighborhood
            closed = (g.A > 0) | np.eye(n, dtype=bool)
            assert np.all((alpha > 0) == closed)

    def test_three_node_path_softmax_oracle(self):
        # hand-rolled softmax with crafted attention vectors
        X = np.array([[1.0], [2.0], [-1.0]])
        A = np.array([[0.0, 1, 0], [1, 0, 1], [0, 1, 0.0]])
        W = np.array([[1.0]])
        a_src, a_dst, slope = np.array([0.3]), np.array([-0.7]), 0.2

        def leaky(v):
            return v if v > 0 else slope * v

        p = X.ravel()  # W x = x
        _, alpha = gat_layer_forward(X, A, layer(W, a_src, a_dst), return_attention=True)
        for i in range(3):
            nbrs = [j for j in range(3) if A[i, j] > 0 or i == j]
            logits = {j: leaky(0.3 * p[i] + -0.7 * p[j]) for j in nbrs}
            mx = max(logits.values())
            exps = {j: math.exp(v - mx) for j, v in logits.items()}
            z = sum(exps.values())
            for j in range(3):
                want = exps[j] / z if j in nbrs else 0.0
                assert alpha[i, j] == pytest.approx(want, abs=1e-12)

    def test_edge_weights_shift_logits(self):
        # with zero attention vectors, alpha is proportional to edge weight
        X = np.zeros((3, 1))
        A = np.array([[0.0, 2, 1], [2, 0, 0], [1, 0, 0.0]])
        _, alpha = gat_layer_forward(X, A, layer(np.eye(1)), return_attention=True)
        # node 0: neighbors {0 (w=1 self), 1 (w=2), 2 (w=1)} -> 1/4, 2/4, 1/4
        assert np.allclose(alpha[0], [0.25, 0.5, 0.25], atol=1e-12)

    def test_non_finite_input_rejected(self):
        with pytest.raises(SkillGraphError):
            gat_layer_forward(np.array([[np.nan]]), np.zeros((1, 1)), layer(np.eye(1)))


class TestPoolAndHead:
    def test_equal_rows(self):
        z = np.arange(32.0)
        assert np.array_equal(global_mean_pool(np.stack([z, z, z])), z)

    def test_opposite_rows_cancel(self):
        z = np.linspace(-1, 1, 32)
        assert np.allclose(global_mean_pool(np.stack([z, -z])), 0.0)

    def test_hand_mean(self):
        H = np.zeros((3, 32))
        H[0, 0] = H[1, 1] = H[2, 2] = 1.0
        out = global_mean_pool(H)
        assert np.allclose(out[:3], 1 / 3)
        assert np.allclose(out[3:], 0.0)

    def test_empty_pool_rejected(self):
        with pytest.raises(SkillGraphError):
            global_mean_pool(np.empty((0, 32)))

    def test_classify_zero_weights_gives_bias(self):
        b = np.array([0.1, -0.2, 0.3])
        assert np.array_equal(classify(np.ones(32), np.zeros((3, 32)), b), b)

    def test_classify_matches_naive_matmul(self, rng):
        W = rng.normal(size=(5, 32))
        b = rng.normal(size=5)
        x = rng.normal(size=32)
        naive = np.array([sum(W[i, j] * x[j] for j in range(32)) + b[i] for i in range(5)])
        assert np.allclose(classify(x, W, b), naive, atol=1e-12)


class TestDecoder:
    def test_single_node_isolated_convention(self):
        assert np.array_equal(decode_laplacian(np.ones((1, 4))), [[0.0]])

    def test_orthogonal_embeddings_give_half(self):
        Z = np.array([[1.0, 0.0], [0.0, 1.0]])
        for scale in (0.5, 1.0, 7.0):
            L = decode_laplacian(Z, scale)
            # A_hat = logistic(0) = 0.5 off-diagonal; K2 normalization gives
            # L = [[1,-1],[-1,1]] regardless
            assert np.allclose(L, [[1, -1], [-1, 1]])

    def test_two_node_normalization_cancels(self, rng):
        for _ in range(5):
            Z = rng.normal(size=(2, 8))
            L = decode_laplacian(Z, 1.3)
            assert np.allclose(L, [[1, -1], [-1, 1]], atol=1e-12)

    def test_output_is_valid_normalized_laplacian(self, rng):
        from skillgraph.graph import symmetric_eigendecomposition

        for _ in range(10):
            Z = rng.normal(size=(int(rng.integers(2, 7)), 5))
            L = decode_laplacian(Z, 1.0)
            assert np.allclose(L, L.T)
            w, V = symmetric_eigendecomposition(L)
            assert np.all(w >= -1e-9) and np.all(w <= 2 + 1e-9)
            assert np.allclose(V.T @ V, np.eye(len(w)), atol=1e-9)


class TestLosses:
    def test_spectral_loss_zero_at_identity(self, rng):
        L = normalized_laplacian(np.array([[0.0, 1], [1, 0.0]]))
        assert spectral_loss(L, L) == 0.0

    def test_spectral_loss_hand_value(self):
        L = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert spectral_loss(L, np.zeros((2, 2))) == pytest.approx(2.0)

    def test_spectral_loss_quadratic_homogeneity(self, rng):
        A = rng.normal(size=(4, 4))
        base = spectral_loss(A, np.zeros((4, 4)))
        assert spectral_loss(3.0 * A, np.zeros((4, 4))) == pytest.approx(9 * base)

    def test_spectral_loss_shape_mismatch(self):
        with pytest.raises(SkillGraphError):
            spectral_loss(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_cross_entropy_uniform(self):
        assert cross_entropy_loss(np.zeros(3), 0) == pytest.approx(math.log(3))

    def test_cross_entropy_hand_value(self):
        want = math.log(1 + math.exp(-1) + math.exp(-2))
        assert cross_entropy_loss(np.array([1.0, 2.0, 3.0]), 2) == pytest.approx(want)
        assert cross_entropy_loss(np.array([1.0, 2.0, 3.0]), 2) == pytest.approx(
            0.40760596444438, abs=1e-10
        )

    def test_cross_entropy_margin_monotone(self):
        losses = [cross_entropy_loss(np.array([0.0, gap]), 1) for gap in (0, 1, 5, 20)]
        assert losses == sorted(losses, reverse=True)
        assert losses[-1] < 1e-8

    def test_cross_entropy_label_range(self):
        with pytest.raises(SkillGraphError):
            cross_entropy_loss(np.zeros(3), 3)

    def test_cross_entropy_overflow_safe(self):
        assert np.isfinite(cross_entropy_loss(np.array([1e4, -1e4]), 0))


class TestForwardBackward:
    def test_head_gradient_closed_form_single_node(self, rng):
        g = random_graph(rng, 1, f=3, p=0.0)
        model = init_model(3, 4, seed=0, use_positional=False)
        label = 2
        loss, grads = forward_backward(model, g, label)
        pooled = pooled_embedding(model, g)
        logits = classify(pooled, model.head_w, model.head_b)
        sm = np.exp(logits - logits.max())
        sm /= sm.sum()
        onehot = np.eye(4)[label]
        assert np.allclose(grads["head.b"], sm - onehot, atol=1e-12)
        assert np.allclose(grads["head.W"], np.outer(sm - onehot, pooled), atol=1e-12)

    def test_unused_blocks_zero_for_ssl(self, rng):
        g = random_graph(rng, 4, f=3)
        model = init_model(3, 4, seed=0, use_positional=False)
        _, grads = forward_backward(model, g, ssl_target(g))
        assert np.allclose(grads["head.W"], 0.0)
        assert np.allclose(grads["head.b"], 0.0)
        assert not np.allclose(grads["layer1.W"], 0.0)

    def test_gradcheck_supervised(self, rng):
        g = random_graph(rng, 5, f=3)
        model = init_model(3, 3, seed=7, use_positional=True)
        checked, failed, _ = gradcheck(model, g, 1)
        assert checked > 0
        assert failed == 0

    def test_gradcheck_ssl(self, rng):
        g = random_graph(rng, 5, f=3)
        model = init_model(3, 3, seed=9, use_positional=True)
        checked, failed, _ = gradcheck(model, g, ssl_target(g))
        assert failed == 0

    def test_deterministic_loss(self, rng):
        g = random_graph(rng, 4, f=3)
        model = init_model(3, 3, seed=1, use_positional=False)
        l1, _ = forward_backward(model, g, 0)
        l2, _ = forward_backward(model, g, 0)
        assert l1 == l2


class TestPermutationInvariance:
    def _permute(self, g, perm):
        P = np.eye(g.n)[perm]
        return SurgicalGraph(
            g.clip_id,
            [g.node_ids[i] for i in perm],
            g.X[perm],
            P @ g.A @ P.T,
            g.labels,
        )

    def test_pooled_and_losses_invariant(self, rng):
        # generic weighted graphs (simple spectra); includes the positional
        # feature path
        for trial in range(20):
            n = int(rng.integers(3, 8))
            g = random_graph(rng, n, f=4, p=0.7, labels={"Overall": 2})
            model = init_model(4, 3, seed=trial, use_positional=True)
            perm = rng.permutation(n)
            gp = self._permute(g, perm)
            assert np.allclose(
                pooled_embedding(model, g), pooled_embedding(model, gp), atol=1e-9
            )
            l1, _ = forward_backward(model, g, 1)
            l2, _ = forward_backward(model, gp, 1)
            assert abs(l1 - l2) <= 1e-9
            s1, _ = forward_backward(model, g, ssl_target(g))
            s2, _ = forward_backward(model, gp, ssl_target(gp))
            assert abs(s1 - s2) <= 1e-9

    def test_symmetric_topology_without_positional(self, rng):
        # exactly degenerate spectra (4-cycle): invariance holds with the
        # positional channel off
        A = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], float)
        X = rng.normal(size=(4, 3))
        g = SurgicalGraph("t", [(f"i{k}", "p") for k in range(4)], X, A, None)
        model = init_model(3, 3, seed=0, use_positional=False)
        for _ in range(10):
            gp = self._permute(g, rng.permutation(4))
            assert np.allclose(
                pooled_embedding(model, g), pooled_embedding(model, gp), atol=1e-9
            )


class TestPositionalFeatures:
    def test_padded_to_fixed_width(self, rng):
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        H = positional_features(A, 4)
        assert H.shape == (2, 4)
        assert np.allclose(H[:, 2:], 0.0)

    def test_model_input_width_constant_across_graph_sizes(self, rng):
        model = init_model(3, 2, seed=0, use_positional=True, spectral_k=4)
        for n in (2, 3, 4, 6):
            g = random_graph(rng, n, f=3, p=1.0)
            Z = node_embeddings(model, g)
            assert Z.shape == (n, 32)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        model = init_model(14, 5, seed=3, category="Overall",
                           feature_schema_id="kin14-v1-2d", ordinal_min=1)
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        for k, v in parameters(model).items():
            assert np.array_equal(parameters(back)[k], v)
        assert back.category == "Overall"
        assert back.k_classes == 5
        assert back.feature_schema_id == "kin14-v1-2d"
        assert back.input_dim == model.input_dim

    def test_checkpoint_contains_documented_keys(self):
        ckpt = model_to_checkpoint(init_model(4, 3, seed=0))
        for key in ("schema_version", "shapes", "params", "feature_schema_id",
                    "K", "category"):
            assert key in ckpt

    def test_embedding_width_is_32(self):
        model = init_model(6, 3, seed=0)
        assert model.layer2.W.shape == (32, 64)
        assert model.head_w.shape == (3, 32)
