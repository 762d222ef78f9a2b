import math

import numpy as np
import pytest

from graphdx.exceptions import NoNegativeError
from graphdx.gcn import FULL, init_params
from graphdx.graph import NodeKind, user
from graphdx.harness import split_users, training_graph
from graphdx.trainer import (
    Adam,
    GcnModel,
    MfModel,
    TrainConfig,
    Triplet,
    bpr_loss,
    gradient_check,
    hard_fraction,
    message_dropout,
    mine_hard_negative,
    train,
)

from conftest import graph_from_lines


def toy_params(g, dim=4, seed=0, **kw):
    return init_params(
        g.count(NodeKind.DISEASE), g.count(NodeKind.SYMPTOM), dim=dim, seed=seed, **kw
    )


@pytest.fixture
def three_disease_graph():
    return graph_from_lines(
        [
            "u0\td0\ts0,s1",
            "u1\td1\ts1,s2",
            "u2\td2\ts3",
            "u3\td0\ts0,s4",
            "u4\td1\ts2",
            "u5\td2\ts3,s4",
        ]
    )


class TestBprLoss:
    def test_equal_scores_give_ln2(self):
        # two diseases with identical adjacency and equal embeddings score
        # identically, so each triplet contributes -log(sigmoid(0)) = ln 2
        g = graph_from_lines(["u0\td0\ts0", "u1\td1\ts0"])
        params = toy_params(g, dim=2)
        params.embeddings.diseases[:] = 0.4
        loss, _ = bpr_loss(params, [Triplet(0, 0, 1)], g, seed=3, lam=0.0)
        assert abs(loss - math.log(2)) < 1e-12

    def test_saturation_limit_leaves_penalty(self):
        g = graph_from_lines(["u0\td0\ts0", "u1\td1\ts1"])
        params = toy_params(g, dim=2, usu_depth=1, dsd_depth=0)
        params.embeddings.symptoms[0] = [60.0, 0.0]
        params.embeddings.diseases[0] = [60.0, 0.0]
        params.embeddings.diseases[1] = [-60.0, 0.0]
        params.usu_weights[0].w1 = np.eye(2)
        lam = 0.01
        model = GcnModel(FULL)
        from graphdx.gcn import GcnVariant
        from graphdx.sampling import USU

        model = GcnModel(GcnVariant("x", USU.truncated(1), None))
        loss, _ = bpr_loss(params, [Triplet(0, 0, 1)], g, seed=0, model=model, lam=lam)
        penalty = lam * sum((a * a).sum() for _, a in params.items())
        assert abs(loss - penalty) < 1e-9

    def test_matches_straight_line_oracle_with_penalty(self, three_disease_graph):
        g = three_disease_graph
        params = toy_params(g, dim=2, seed=5)
        lam = 0.01
        triplets = [Triplet(0, 0, 1), Triplet(1, 1, 2)]
        seed = 9
        loss, _ = bpr_loss(params, triplets, g, seed=seed, lam=lam)

        # independent scalar evaluation through the reference forwards
        from graphdx.forward import serving_path, user_evidence_tree
        from graphdx.gcn import forward_dsd, forward_usu
        from graphdx.sampling import DSD, USU, sample_tree
        from graphdx.graph import disease

        view = g.user_free_view()
        total = 0.0
        for t in triplets:
            ev = [int(s) for s in g.neighbors(user(t.user), NodeKind.SYMPTOM)]
            qu = forward_usu(params, user_evidence_tree(g, ev, USU, seed))
            yp = qu @ forward_dsd(params, sample_tree(view, disease(t.pos), DSD, seed))
            yn = qu @ forward_dsd(params, sample_tree(view, disease(t.neg), DSD, seed))
            total += -math.log(1.0 / (1.0 + math.exp(-(yp - yn))))
        total += lam * sum((a * a).sum() for _, a in params.items())
        assert abs(loss - total) < 1e-9

    def test_empty_triplets_rejected(self, three_disease_graph):
        with pytest.raises(ValueError):
            bpr_loss(toy_params(three_disease_graph), [], three_disease_graph, 0)

    def test_loss_at_least_penalty(self, three_disease_graph):
        g = three_disease_graph
        params = toy_params(g, dim=4, seed=1)
        lam = 0.001
        loss, _ = bpr_loss(params, [Triplet(0, 0, 2)], g, seed=2, lam=lam)
        penalty = lam * sum((a * a).sum() for _, a in params.items())
        assert loss >= penalty > 0.0


class TestMessageDropout:
    def test_p_zero_identity(self):
        v = np.arange(8.0)
        assert np.array_equal(message_dropout(v, 0.0, "train", seed=1), v)

    def test_infer_identity(self):
        v = np.arange(8.0)
        assert np.array_equal(message_dropout(v, 0.9, "infer", seed=1), v)

    def test_unbiasedness_monte_carlo(self):
        n = 100_000
        rng_seeds = range(n)
        acc = np.zeros(8)
        for s in rng_seeds:
            acc += message_dropout(np.ones(8), 0.5, "train", seed=s)
        mean = acc / n
        assert np.all(np.abs(mean - 1.0) < 0.02), mean

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            message_dropout(np.ones(2), 1.0)


class TestMineHardNegative:
    def test_two_diseases_forced(self):
        g = graph_from_lines(["u0\td0\ts0", "u1\td1\ts1"])
        params = toy_params(g, dim=2)
        assert mine_hard_negative(params, 0, 0, g) == 1

    def test_identical_embeddings_tie_lowest_index(self, three_disease_graph):
        g = three_disease_graph
        params = toy_params(g, dim=2)
        params.embeddings.diseases[:] = 0.7
        assert mine_hard_negative(params, 0, 0, g) == 1

    def test_matches_brute_force_cosine(self):
        g = graph_from_lines(
            ["u0\td0\ts0", "u1\td1\ts0", "u2\td2\ts1", "u3\td3\ts1"]
        )
        params = toy_params(g, dim=3, seed=2)
        params.embeddings.diseases[:] = np.array(
            [[1.0, 0.0, 0.0], [0.9, 0.1, 0.0], [0.0, 1.0, 0.0], [0.5, 0.5, 0.0]]
        )
        got = mine_hard_negative(params, 0, 0, g)
        q = params.embeddings.diseases
        observed = {0}
        best, best_sim = None, -np.inf
        for d in range(4):
            if d in observed:
                continue
            sim = q[d] @ q[0] / (np.linalg.norm(q[d]) * np.linalg.norm(q[0]))
            if sim > best_sim:
                best, best_sim = d, sim
        assert got == best == 1

    def test_all_observed_raises(self):
        g = graph_from_lines(["u0\td0,d1\ts0"])
        params = toy_params(g, dim=2)
        with pytest.raises(NoNegativeError):
            mine_hard_negative(params, 0, 0, g)


class TestGradientCheck:
    def test_saturated_zero_loss_region(self):
        g = graph_from_lines(["u0\td0\ts0", "u1\td1\ts1"])
        from graphdx.gcn import GcnVariant
        from graphdx.sampling import USU

        model = GcnModel(GcnVariant("x", USU.truncated(1), None))
        params = toy_params(g, dim=2, usu_depth=1, dsd_depth=0)
        params.embeddings.symptoms[0] = [60.0, 0.0]
        params.embeddings.diseases[0] = [60.0, 0.0]
        params.embeddings.diseases[1] = [-60.0, 0.0]
        params.usu_weights[0].w1 = np.eye(2)
        _, grads = bpr_loss(params, [Triplet(0, 0, 1)], g, seed=0, model=model, lam=0.0)
        for name in grads:
            assert np.allclose(grads[name], 0.0, atol=1e-20)

    def test_penalty_only_gradient_exact(self, three_disease_graph):
        # in the saturated regime the only surviving gradient is 2*lam*theta
        g = graph_from_lines(["u0\td0\ts0", "u1\td1\ts1"])
        from graphdx.gcn import GcnVariant
        from graphdx.sampling import USU

        model = GcnModel(GcnVariant("x", USU.truncated(1), None))
        params = toy_params(g, dim=2, usu_depth=1, dsd_depth=0)
        params.embeddings.symptoms[0] = [60.0, 0.0]
        params.embeddings.diseases[0] = [60.0, 0.0]
        params.embeddings.diseases[1] = [-60.0, 0.0]
        params.usu_weights[0].w1 = np.eye(2)
        lam = 0.05
        _, grads = bpr_loss(params, [Triplet(0, 0, 1)], g, seed=0, model=model, lam=lam)
        for name, arr in params.items():
            assert np.allclose(grads[name], 2 * lam * arr, atol=1e-12)

    def test_dim4_toy_under_1e4(self, three_disease_graph):
        g = three_disease_graph
        params = toy_params(g, dim=4, seed=3)
        triplets = [Triplet(0, 0, 1), Triplet(1, 1, 0), Triplet(5, 2, 0)]
        err = gradient_check(params, triplets, g, epsilon=1e-5, lam=0.01, seed=7)
        assert err < 1e-4, err


class TestHardFractionSchedule:
    def test_ramp_shape(self):
        cfg = TrainConfig(max_epochs=40, hard_fraction_peak=0.5)
        assert hard_fraction(0, cfg) == 0.0
        assert abs(hard_fraction(10, cfg) - 0.25) < 1e-12
        assert abs(hard_fraction(20, cfg) - 0.5) < 1e-12
        assert hard_fraction(39, cfg) == 0.5


class TestTrain:
    def _setup(self, g, seed=0):
        split = split_users(g, seed=seed)
        return split

    def test_lr_zero_leaves_params_and_metric_constant(self):
        lines = [f"u{i}\td{i % 2}\ts{i % 4},s{(i + 1) % 4}" for i in range(20)]
        g_full = graph_from_lines(lines)
        split = split_users(g_full, seed=1)
        g = training_graph(g_full, split)
        cfg = TrainConfig(lr=0.0, dim=4, max_epochs=3, patience=99, batch_size=8, seed=0)
        model = GcnModel(FULL)
        params = model.init(g, cfg)
        before = {k: v.copy() for k, v in params.items()}
        trained, hist = train(params, g, split, cfg, model=model)
        for k, v in trained.items():
            assert np.array_equal(before[k], v)
        vals = {h["val_ndcg5"] for h in hist}
        assert len(vals) == 1

    def test_separable_toy_reaches_perfect_p1(self):
        # 3 users per disease, 2 diseases, disjoint symptoms
        lines = []
        for i in range(12):
            d = i % 2
            s = [f"s{d}a", f"s{d}b"]
            lines.append(f"u{i}\td{d}\t" + ",".join(s))
        g_full = graph_from_lines(lines)
        split = split_users(g_full, seed=0)
        g = training_graph(g_full, split)
        cfg = TrainConfig(
            lr=0.05, dim=8, max_epochs=200, patience=200, batch_size=8, seed=1, dropout=0.0
        )
        model = GcnModel(FULL)
        params = model.init(g, cfg)
        trained, hist = train(params, g, split, cfg, model=model)
        from graphdx.harness import evaluate_ranking

        met = evaluate_ranking(model, trained, g, split.resolve_test_queries(g), seed=0)
        assert met["precision_at_1"] == 1.0
        assert len(hist) <= 200

    def test_mf_also_solves_separable_toy(self):
        lines = []
        for i in range(12):
            d = i % 2
            lines.append(f"u{i}\td{d}\ts{d}a,s{d}b")
        g_full = graph_from_lines(lines)
        split = split_users(g_full, seed=0)
        g = training_graph(g_full, split)
        cfg = TrainConfig(lr=0.05, dim=8, max_epochs=200, patience=200, batch_size=8, seed=1)
        mf = MfModel()
        trained, _ = train(mf.init(g, cfg), g, split, cfg, model=mf)
        from graphdx.harness import evaluate_ranking

        met = evaluate_ranking(mf, trained, g, split.resolve_test_queries(g), seed=0)
        assert met["precision_at_1"] == 1.0

    def test_fixed_seed_bitwise_identical_history(self):
        lines = [f"u{i}\td{i % 3}\ts{i % 5},s{(i + 2) % 5}" for i in range(30)]
        g_full = graph_from_lines(lines)
        split = split_users(g_full, seed=2)
        g = training_graph(g_full, split)
        cfg = TrainConfig(dim=4, max_epochs=4, patience=99, batch_size=16, seed=5)
        model = GcnModel(FULL)
        h1 = train(model.init(g, cfg), g, split, cfg, model=model)[1]
        h2 = train(model.init(g, cfg), g, split, cfg, model=model)[1]
        import json

        assert json.dumps(h1) == json.dumps(h2)

    def test_mined_negatives_never_observed(self):
        lines = [f"u{i}\td{i % 3}\ts{i % 5},s{(i + 2) % 5}" for i in range(30)]
        g_full = graph_from_lines(lines)
        split = split_users(g_full, seed=2)
        g = training_graph(g_full, split)
        observed = {
            u: set(int(d) for d in g.neighbors(user(u), NodeKind.DISEASE))
            for u in range(g.count(NodeKind.USER))
        }
        from graphdx.trainer import _draw_negatives, cosine_matrix

        params = toy_params(g, dim=4, seed=0)
        sim = cosine_matrix(params.embeddings.diseases)
        pairs = [(u, d) for u, ds in observed.items() for d in ds]
        rng = np.random.default_rng(0)
        for frac in (0.0, 0.5, 1.0):
            for t in _draw_negatives(rng, pairs, observed, 3, frac, sim):
                assert t.neg not in observed[t.user]
                assert t.neg != t.pos


class TestAdam:
    def test_single_step_matches_reference(self):
        g = graph_from_lines(["u0\td0\ts0", "u1\td1\ts1"])
        params = toy_params(g, dim=2, seed=0)
        grads = {name: np.ones_like(arr) for name, arr in params.items()}
        before = {name: arr.copy() for name, arr in params.items()}
        opt = Adam(params, lr=0.1)
        opt.step(params, grads)
        # bias-corrected first step moves every scalar by ~lr
        for name, arr in params.items():
            step = before[name] - arr
            assert np.allclose(step, 0.1 * 1.0 / (1.0 + 1e-8), atol=1e-9)


class TestMfModel:
    def test_parameter_count_is_embeddings_only(self):
        g = graph_from_lines(["u0\td0\ts0,s1", "u1\td1\ts2"])
        cfg = TrainConfig(dim=8)
        params = MfModel().init(g, cfg)
        n_s = g.count(NodeKind.SYMPTOM)
        n_d = g.count(NodeKind.DISEASE)
        assert params.scalar_count() == (n_s + n_d) * 8

    def test_gradient_check_mf(self, three_disease_graph):
        g = three_disease_graph
        mf = MfModel()
        params = toy_params(g, dim=4, seed=4, usu_depth=0, dsd_depth=0)
        err = gradient_check(
            params, [Triplet(0, 0, 2), Triplet(2, 2, 1)], g, 1e-5, model=mf, lam=0.001
        )
        assert err < 1e-4
