import numpy as np
import pytest

from graphdx.exceptions import EmptyEvidenceError, ShapeError
from graphdx.forward import (
    batch_trees,
    disease_profiles,
    forward_dsd_batch,
    forward_usu_batch,
    param_tensors,
    rank_diseases,
    user_profile,
)
from graphdx.gcn import (
    FULL,
    LOCAL,
    EmbeddingTable,
    LayerWeights,
    ModelParams,
    aggregate_user,
    canonicalize_tree,
    eval_tree,
    forward_dsd,
    forward_usu,
    init_params,
    message,
    propagate_layer,
    score,
)
from graphdx.graph import NodeKind, disease, user
from graphdx.sampling import DSD, USU, SampledTree, sample_tree

from conftest import graph_from_lines


def w(w1, w2):
    return LayerWeights(np.asarray(w1, dtype=float), np.asarray(w2, dtype=float))


I2 = np.eye(2)
Z2 = np.zeros((2, 2))


class TestMessage:
    def test_identity_w1_passes_neighbor(self):
        assert np.allclose(message(np.array([1.0, 2.0]), np.array([3.0, 4.0]), w(I2, Z2)), [3, 4])

    def test_identity_w2_gives_product(self):
        out = message(np.array([1.0, 2.0]), np.array([3.0, 4.0]), w(Z2, I2))
        assert np.allclose(out, [3, 8])

    def test_hand_matrix_arithmetic(self):
        # W1 = I, W2 swaps coordinates: (3,4) + swap(3,8) = (3,4)+(8,3) = (11,7)
        out = message(np.array([1.0, 2.0]), np.array([3.0, 4.0]), w(I2, [[0, 1], [1, 0]]))
        assert np.allclose(out, [11, 7])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            message(np.ones(3), np.ones(2), w(I2, Z2))


class TestPropagateLayer:
    def test_one_neighbor_identity(self):
        qv = np.array([0.1, 0.2])
        qn = np.array([0.3, 0.4])
        out = propagate_layer(qv, [qn], w(I2, Z2))
        assert np.allclose(out, np.tanh(qv + qn))

    def test_zero_neighbors_self_message_only(self):
        qv = np.array([0.5, -0.5])
        w1 = np.array([[2.0, 0.0], [1.0, 1.0]])
        out = propagate_layer(qv, [], w(w1, Z2))
        assert np.allclose(out, np.tanh(w1 @ qv))

    def test_two_neighbors_matches_straight_line_oracle(self):
        rng = np.random.default_rng(0)
        qv = rng.normal(size=2)
        n1, n2 = rng.normal(size=2), rng.normal(size=2)
        ones = np.ones((2, 2))
        out = propagate_layer(qv, [n1, n2], w(ones, ones))
        # independent straight-line evaluation
        m1 = ones @ n1 + ones @ (qv * n1)
        m2 = ones @ n2 + ones @ (qv * n2)
        expect = np.tanh(ones @ qv + (m1 + m2) * 0.5)
        assert np.allclose(out, expect)


class TestAggregateUser:
    def test_single_symptom_identity(self):
        q = np.array([0.3, 0.7])
        assert np.allclose(aggregate_user([q], w(I2, Z2)), q)

    def test_mean_of_two(self):
        out = aggregate_user([np.array([1.0, 0.0]), np.array([0.0, 1.0])], w(I2, Z2))
        assert np.allclose(out, [0.5, 0.5])

    def test_linearity(self):
        rng = np.random.default_rng(1)
        w1 = rng.normal(size=(3, 3))
        embs = [rng.normal(size=3) for _ in range(3)]
        out = aggregate_user(embs, w(w1, np.zeros((3, 3))))
        assert np.allclose(out, w1 @ (sum(embs) * (1.0 / 3.0)))

    def test_empty_raises(self):
        with pytest.raises(EmptyEvidenceError):
            aggregate_user([], w(I2, Z2))


def toy_params(g, dim=2, seed=0, usu_depth=3, dsd_depth=2):
    return init_params(
        g.count(NodeKind.DISEASE),
        g.count(NodeKind.SYMPTOM),
        dim=dim,
        seed=seed,
        usu_depth=usu_depth,
        dsd_depth=dsd_depth,
    )


class TestForwardUsu:
    def test_empty_deep_hops_collapse_to_local_aggregation(self, fig1_graph):
        g = fig1_graph
        params = toy_params(g)
        for st in params.usu_weights:
            st.w1 = np.eye(2)
            st.w2 = np.zeros((2, 2))
        tree = SampledTree(
            user(0),
            USU,
            [[np.array([0, 1])], [np.array([], dtype=np.int64)] * 2, []],
            seed=0,
        )
        out = forward_usu(params, tree)
        expect = np.tanh(params.embeddings.symptoms[[0, 1]]).mean(axis=0)
        assert np.allclose(out, expect)

    def test_fig1_tree_matches_straight_line_oracle(self, fig1_graph):
        g = fig1_graph
        params = toy_params(g, seed=3)
        tree = sample_tree(g, user(0), USU, seed=5)
        out = forward_usu(params, tree)

        # hand-rolled three-layer evaluation of the same tree
        emb = params.embeddings
        w1, w2, w3 = params.usu_weights

        def agg(vals, step):
            return sum(step.w1 @ v for v in vals) * (1.0 / len(vals))

        def prop(qv, vals, step):
            if not vals:
                return np.tanh(step.w1 @ qv)
            msgs = [step.w1 @ v + step.w2 @ (qv * v) for v in vals]
            return np.tanh(step.w1 @ qv + sum(msgs) * (1.0 / len(msgs)))

        hop3 = {(i, j): [emb.symptoms[s] for s in kids] for (i, j), kids in
                zip([(0, 0), (1, 0)], tree.layers[2])}
        hop2_users = tree.flat(2)
        hop2_vals = []
        pos = 0
        for i, kids in enumerate(tree.layers[1]):
            for j, u2 in enumerate(kids):
                vals = [emb.symptoms[int(s)] for s in tree.layers[2][pos]]
                hop2_vals.append(agg(vals, w3) if vals else np.zeros(2))
                pos += 1
        hop1_vals = []
        pos = 0
        for i, s in enumerate(tree.flat(1)):
            k = len(tree.layers[1][i])
            vals = hop2_vals[pos : pos + k]
            pos += k
            hop1_vals.append(prop(emb.symptoms[s], vals, w2))
        expect = agg(hop1_vals, w1)
        assert np.allclose(out, expect, atol=1e-12)

    def test_permutation_invariance_bitwise(self, fig1_graph):
        g = fig1_graph
        params = toy_params(g, seed=4)
        tree = sample_tree(g, user(0), USU, seed=6)
        out = forward_usu(params, tree)
        # permute hop-1 children along with their attached subtrees
        perm = SampledTree(
            tree.root,
            tree.path,
            [
                [tree.layers[0][0][::-1].copy()],
                tree.layers[1][::-1],
                tree.layers[2][::-1],
            ],
            tree.seed,
        )
        out2 = forward_usu(params, perm)
        assert out.tobytes() == out2.tobytes()


class TestForwardDsd:
    def test_isolated_disease_fallback_is_self_message_only(self):
        # self-messages always read the base embedding, so a disease with
        # no symptom links collapses to a single activation of W1 q_d
        g = graph_from_lines(["u1\td1\ts1", "u2\td2\ts2"])
        params = toy_params(g, seed=1)
        tree = SampledTree(disease(1), DSD, [[np.array([], dtype=np.int64)], []], seed=0)
        out = forward_dsd(params, tree)
        w1, _ = params.dsd_weights
        qd = params.embeddings.diseases[1]
        assert np.allclose(out, np.tanh(w1.w1 @ qd))

    def test_fig1b_tree_matches_oracle(self, fig1_graph):
        g = fig1_graph
        params = toy_params(g, seed=9)
        tree = sample_tree(g, disease(0), DSD, seed=2)
        assert tree.flat(1) == [0, 1] and tree.flat(2) == [1, 2]
        out = forward_dsd(params, tree)
        emb = params.embeddings
        w1, w2 = params.dsd_weights

        def prop(qv, vals, step):
            if not vals:
                return np.tanh(step.w1 @ qv)
            msgs = [step.w1 @ v + step.w2 @ (qv * v) for v in vals]
            return np.tanh(step.w1 @ qv + sum(msgs) * (1.0 / len(msgs)))

        s_vals = []
        for s, kids in zip(tree.flat(1), tree.layers[1]):
            s_vals.append(prop(emb.symptoms[s], [emb.diseases[int(d)] for d in kids], w2))
        expect = prop(emb.diseases[0], s_vals, w1)
        assert np.allclose(out, expect, atol=1e-12)

    def test_equal_embeddings_give_symmetric_profiles(self):
        g = graph_from_lines(["u1\td1\ts1", "u2\td2\ts2"])
        params = toy_params(g, seed=2)
        params.embeddings.diseases[:] = 0.25
        params.embeddings.symptoms[:] = 0.5
        for st in params.dsd_weights:
            st.w2 = np.zeros((2, 2))
        t1 = sample_tree(g, disease(0), DSD, seed=1)
        t2 = sample_tree(g, disease(1), DSD, seed=1)
        assert np.allclose(forward_dsd(params, t1), forward_dsd(params, t2))


class TestScore:
    def test_orthogonal_unit_vectors(self):
        assert score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_identical_unit_vectors(self):
        assert score(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 1.0

    def test_hand_arithmetic(self):
        assert score(np.array([1.0, 2.0]), np.array([3.0, -1.0])) == 1.0

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            score(np.ones(2), np.ones(3))


class TestTanhRangeInvariant:
    def test_propagate_outputs_in_open_interval(self, toy_graph):
        params = toy_params(toy_graph, seed=5)
        for d in range(toy_graph.count(NodeKind.DISEASE)):
            tree = sample_tree(toy_graph, disease(d), DSD, seed=3)
            out = forward_dsd(params, tree)
            assert np.all(np.abs(out) < 1.0)


class TestRankDiseases:
    def test_dominant_disease_ranks_first(self):
        g = graph_from_lines(["u1\td1\ts1", "u2\td2\ts1"])
        params = toy_params(g, usu_depth=1, dsd_depth=0)
        params.embeddings.symptoms[0] = [1.0, 0.0]
        params.embeddings.diseases[0] = [1.0, 0.0]
        params.embeddings.diseases[1] = [0.0, 1.0]
        params.usu_weights[0].w1 = np.eye(2)
        from graphdx.gcn import GcnVariant
        from graphdx.sampling import USU

        variant = GcnVariant("x", USU.truncated(1), None)
        ranked = rank_diseases(params, g, [0], seed=0, variant=variant)
        assert ranked[0][0] == 0 and ranked[0][1] > ranked[1][1]

    def test_all_equal_embeddings_rank_by_index(self, fig1_graph):
        params = toy_params(fig1_graph)
        params.embeddings.diseases[:] = 0.3
        params.embeddings.symptoms[:] = 0.3
        ranked = rank_diseases(params, fig1_graph, [0, 1], seed=1)
        assert [d for d, _ in ranked] == [0, 1, 2]
        assert ranked[0][1] == ranked[1][1] == ranked[2][1]

    def test_matches_per_disease_brute_force(self, toy_graph):
        g = toy_graph
        params = toy_params(g, seed=11)
        evidence = [0, 2]
        seed = 7
        ranked = rank_diseases(params, g, evidence, seed=seed)
        # brute force: score each disease with the reference per-tree forwards
        view = g.user_free_view()
        from graphdx.forward import serving_path, user_evidence_tree

        qu = forward_usu(params, user_evidence_tree(g, evidence, USU, seed))
        path = serving_path(DSD, view)
        scores = {}
        for d in range(g.count(NodeKind.DISEASE)):
            qd = forward_dsd(params, sample_tree(view, disease(d), path, seed))
            scores[d] = score(qu, qd)
        expect = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        assert [d for d, _ in ranked] == [d for d, _ in expect]
        for (d1, s1), (d2, s2) in zip(ranked, expect):
            assert abs(s1 - s2) < 1e-9

    def test_cold_start_identical_after_user_deletion(self, toy_graph):
        g = toy_graph
        params = toy_params(g, seed=13)
        ranked_full = rank_diseases(params, g, [1, 3], seed=5)
        ranked_stripped = rank_diseases(params, g.without_users(), [1, 3], seed=5)
        assert ranked_full == ranked_stripped

    def test_empty_evidence_raises(self, toy_graph):
        with pytest.raises(EmptyEvidenceError):
            rank_diseases(toy_params(toy_graph), toy_graph, [], seed=0)


class TestBatchedMatchesReference:
    def test_usu_batch_vs_per_tree(self, fig1_graph):
        g = fig1_graph
        params = toy_params(g, seed=21)
        trees = [sample_tree(g, user(u), USU, seed=31) for u in range(3)]
        pt = param_tensors(params)
        batch_out = forward_usu_batch(pt, params, batch_trees(trees)).data
        for i, t in enumerate(trees):
            assert np.allclose(batch_out[i], forward_usu(params, t), atol=1e-12)

    def test_dsd_batch_vs_per_tree(self, toy_graph):
        g = toy_graph
        params = toy_params(g, seed=22)
        trees = [
            sample_tree(g, disease(d), DSD, seed=17)
            for d in range(g.count(NodeKind.DISEASE))
        ]
        pt = param_tensors(params)
        batch_out = forward_dsd_batch(pt, params, batch_trees(trees)).data
        for i, t in enumerate(trees):
            assert np.allclose(batch_out[i], forward_dsd(params, t), atol=1e-12)


def test_model_params_copy_and_count(toy_graph):
    params = toy_params(toy_graph, dim=4)
    n_d = toy_graph.count(NodeKind.DISEASE)
    n_s = toy_graph.count(NodeKind.SYMPTOM)
    assert params.scalar_count() == (n_d + n_s) * 4 + (3 + 2) * 2 * 16
    cp = params.copy()
    cp.embeddings.diseases[0, 0] += 1.0
    assert params.embeddings.diseases[0, 0] != cp.embeddings.diseases[0, 0]
