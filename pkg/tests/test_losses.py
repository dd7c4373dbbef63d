import math

import numpy as np
import pytest
import torch

from gradcheck import assert_gradients_match
from relcon.losses import (
    BatchView,
    ClasswiseBias,
    ProxyBank,
    UndefinedLossError,
    cosine_matrix,
    cosine_sim,
    loss_atl,
    loss_ce,
    loss_mccl,
    loss_mccl_multilabel,
    loss_mlm,
    loss_pretrain,
    loss_rel,
    loss_self,
    loss_supcon,
    mccl_scores,
    mccl_weights,
)


def t(data):
    return torch.tensor(data, dtype=torch.float64)


def rand_embeddings(rng, n, d, requires_grad=False):
    z = torch.tensor(rng.normal(size=(n, d)))
    if requires_grad:
        z.requires_grad_(True)
    return z


class TestCosine:
    def test_self_similarity_is_one(self):
        v = t([1.0, 2.0, -0.5])
        assert cosine_sim(v, v).item() == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert cosine_sim(t([1.0, 0.0]), t([0.0, 1.0])).item() == pytest.approx(0.0, abs=1e-12)

    def test_scalar_recomputation(self):
        assert cosine_sim(t([1.0, 1.0]), t([1.0, 0.0])).item() == pytest.approx(0.70711, abs=5e-6)

    def test_gradients_flow_to_both_sides(self):
        rng = np.random.default_rng(0)
        z1 = rand_embeddings(rng, 1, 4, requires_grad=True)
        z2 = rand_embeddings(rng, 1, 4, requires_grad=True)
        assert_gradients_match(lambda: cosine_sim(z1[0], z2[0]), {"z1": z1, "z2": z2})


class TestLossRel:
    def test_single_positive_no_negatives_is_zero(self):
        rng = np.random.default_rng(1)
        batch = BatchView(embeddings=rand_embeddings(rng, 2, 6))
        out = loss_rel(batch, [(0, 1)], {}, tau=0.05)
        assert out.item() == pytest.approx(0.0, abs=1e-12)

    def test_scalar_recomputation_with_one_negative(self):
        # anchor identical to positive (sim 1), orthogonal negative (sim 0)
        z = t([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        batch = BatchView(embeddings=z)
        out = loss_rel(batch, [(0, 1)], {0: [2]}, tau=0.05)
        assert out.item() == pytest.approx(math.log(1 + math.exp(-20)), rel=1e-9)
        assert out.item() == pytest.approx(2.06e-9, rel=5e-3)

    def test_empty_positive_set_is_undefined(self):
        rng = np.random.default_rng(2)
        batch = BatchView(embeddings=rand_embeddings(rng, 2, 4))
        with pytest.raises(UndefinedLossError):
            loss_rel(batch, [], {}, tau=0.05)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            z = rand_embeddings(rng, 5, 6, requires_grad=True)
            positives = [(0, 1), (1, 0), (2, 3)]
            negatives = {0: [2, 4], 1: [4], 2: [0]}
            assert_gradients_match(
                lambda: loss_rel(BatchView(embeddings=z), positives, negatives, tau=0.2),
                {"z": z}, rng=rng,
            )


class TestLossSelf:
    def test_two_instances_equal_similarities(self):
        # second pass identical to the first and all cross sims equal
        z = t([[1.0, 0.0], [1.0, 0.0]])
        batch = BatchView(embeddings=z, second_pass=z.clone())
        out = loss_self(batch, tau=1.0)
        assert out.item() == pytest.approx(math.log(2.0), rel=1e-12)

    def test_single_anchor_no_others_is_zero(self):
        z = t([[0.3, 0.4]])
        batch = BatchView(embeddings=z, second_pass=z * 2.0)
        assert loss_self(batch, tau=0.05).item() == pytest.approx(0.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            z1 = rand_embeddings(rng, 4, 5, requires_grad=True)
            z2 = rand_embeddings(rng, 4, 5, requires_grad=True)
            assert_gradients_match(
                lambda: loss_self(BatchView(embeddings=z1, second_pass=z2), tau=0.3),
                {"z1": z1, "z2": z2}, rng=rng,
            )


class TestLossMlm:
    def test_uniform_logits_give_log_vocab(self):
        logits = torch.zeros((3, 7), dtype=torch.float64)
        targets = torch.tensor([0, 3, 6])
        assert loss_mlm(logits, targets).item() == pytest.approx(math.log(7.0), rel=1e-12)

    def test_confident_correct_logits_near_zero(self):
        logits = torch.full((2, 5), -50.0, dtype=torch.float64)
        logits[0, 1] = 50.0
        logits[1, 2] = 50.0
        assert loss_mlm(logits, torch.tensor([1, 2])).item() == pytest.approx(0.0, abs=1e-12)

    def test_no_masked_positions_is_zero(self):
        out = loss_mlm(torch.zeros((0, 5), dtype=torch.float64), torch.zeros((0,), dtype=torch.long))
        assert out.item() == 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        logits = rand_embeddings(rng, 4, 6, requires_grad=True)
        targets = torch.tensor([0, 5, 2, 2])
        assert_gradients_match(lambda: loss_mlm(logits, targets), {"logits": logits}, rng=rng)


class TestLossPretrain:
    def test_zero_terms(self):
        z = torch.zeros((), dtype=torch.float64)
        assert loss_pretrain(z, z, z).item() == 0.0

    def test_is_plain_sum(self):
        a, b, c = t(1.5), t(-0.25), t(3.0)
        assert loss_pretrain(a, b, c).item() == pytest.approx(4.25, abs=1e-15)

    def test_sum_gradient_is_sum_of_gradients(self):
        rng = np.random.default_rng(6)
        z = rand_embeddings(rng, 3, 4, requires_grad=True)
        positives = [(0, 1)]
        negatives = {0: [2]}

        def combined():
            batch = BatchView(embeddings=z, second_pass=z * 1.0)
            return loss_pretrain(
                loss_rel(batch, positives, negatives, 0.5),
                loss_self(batch, 0.5),
                torch.zeros((), dtype=torch.float64),
            )

        assert_gradients_match(combined, {"z": z}, rng=rng)


class TestLossCe:
    def test_equal_logits_give_log_n_classes(self):
        z = torch.zeros((4, 3), dtype=torch.float64)
        weight = torch.zeros((5, 3), dtype=torch.float64)
        bias = torch.zeros(5, dtype=torch.float64)
        assert loss_ce(z, [0, 1, 2, 3], weight, bias).item() == pytest.approx(math.log(5.0), rel=1e-12)

    def test_confident_correct_is_near_zero(self):
        z = torch.eye(3, dtype=torch.float64)
        weight = 100.0 * torch.eye(3, dtype=torch.float64)
        bias = torch.zeros(3, dtype=torch.float64)
        assert loss_ce(z, [0, 1, 2], weight, bias).item() == pytest.approx(0.0, abs=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        z = rand_embeddings(rng, 4, 5, requires_grad=True)
        weight = rand_embeddings(rng, 3, 5, requires_grad=True)
        bias = torch.tensor(rng.normal(size=3), requires_grad=True)
        assert_gradients_match(
            lambda: loss_ce(z, [0, 2, 1, 0], weight, bias),
            {"z": z, "weight": weight, "bias": bias}, rng=rng,
        )


class TestLossSupcon:
    def test_two_same_label_instances_no_negatives(self):
        z = t([[1.0, 0.0], [0.0, 1.0]])
        batch = BatchView.from_single_labels(z, [0, 0], n_relations=2)
        assert loss_supcon(batch, tau=0.1).item() == pytest.approx(0.0, abs=1e-12)

    def test_matches_hand_formula_two_by_two(self):
        # two relations, two instances each; instances of one relation are
        # identical, the relations are orthogonal
        z = t([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        tau = 0.5
        batch = BatchView.from_single_labels(z, [0, 0, 1, 1], n_relations=2)
        # each anchor: positive sim 1, two negatives sim 0
        expected = -(1 / tau - math.log(math.exp(1 / tau) + 2 * math.exp(0.0)))
        assert loss_supcon(batch, tau).item() == pytest.approx(expected, rel=1e-12)

    def test_no_anchor_with_peer_is_undefined(self):
        rng = np.random.default_rng(8)
        z = rand_embeddings(rng, 3, 4)
        batch = BatchView.from_single_labels(z, [0, 1, 2], n_relations=3)
        with pytest.raises(UndefinedLossError):
            loss_supcon(batch, tau=0.2)

    def test_anchor_without_peer_skipped(self):
        z = t([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]])
        batch = BatchView.from_single_labels(z, [0, 0, 1], n_relations=2)
        out = loss_supcon(batch, tau=0.2)
        assert math.isfinite(out.item())

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            z = rand_embeddings(rng, 6, 5, requires_grad=True)
            labels = [0, 0, 1, 1, 2, 2]
            batch_fn = lambda: loss_supcon(BatchView.from_single_labels(z, labels, 3), tau=0.4)
            assert_gradients_match(batch_fn, {"z": z}, rng=rng)


class TestMcclWeights:
    def test_equal_similarities_give_uniform(self):
        w = mccl_weights(t([0.3, 0.3]), tau1=0.2)
        assert torch.allclose(w, t([0.5, 0.5]))

    def test_scalar_recomputation(self):
        w = mccl_weights(t([1.0, 0.0]), tau1=0.2)
        assert w[0].item() == pytest.approx(0.99331, abs=5e-6)
        assert w[1].item() == pytest.approx(0.00669, abs=5e-6)

    def test_huge_temperature_is_uniform(self):
        w = mccl_weights(t([0.9, -0.3, 0.1]), tau1=1e6)
        assert torch.allclose(w, torch.full((3,), 1 / 3, dtype=torch.float64), atol=1e-6)

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            w = mccl_weights(torch.tensor(rng.normal(size=5)), tau1=0.1)
            assert w.sum().item() == pytest.approx(1.0, abs=1e-12)
            assert bool((w >= 0).all())


class TestMcclScores:
    def test_proxy_only_candidate(self):
        rng = np.random.default_rng(11)
        z = rand_embeddings(rng, 1, 4)
        proxies = ProxyBank(2, 4, seed=0)
        batch = BatchView.from_single_labels(z, [0], n_relations=2)
        scores = mccl_scores(batch, proxies, tau1=0.2)
        # relation 1 has no in-batch members, so its score is sim(z, proxy_1)
        expected = cosine_sim(z[0], proxies.vectors[1]).item()
        assert scores[0, 1].item() == pytest.approx(expected, rel=1e-12)

    def test_all_candidates_identical_to_anchor(self):
        z = t([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        proxies = ProxyBank(1, 2, seed=0)
        with torch.no_grad():
            proxies.vectors[0] = t([1.0, 0.0])
        batch = BatchView.from_single_labels(z, [0, 0, 0], n_relations=1)
        scores = mccl_scores(batch, proxies, tau1=0.2)
        assert torch.allclose(scores, torch.ones_like(scores))

    def test_matches_bruteforce_two_step_oracle(self):
        rng = np.random.default_rng(12)
        n, d, n_rel = 6, 5, 3
        z = rand_embeddings(rng, n, d)
        labels = [0, 0, 1, 1, 2, 2]
        proxies = ProxyBank(n_rel, d, seed=3)
        batch = BatchView.from_single_labels(z, labels, n_rel)
        scores = mccl_scores(batch, proxies, tau1=0.3)

        def cos(a, b):
            a = a / np.linalg.norm(a)
            b = b / np.linalg.norm(b)
            return float(a @ b)

        zn = z.numpy()
        pn = proxies.vectors.detach().numpy()
        for i in range(n):
            for r in range(n_rel):
                sims = [cos(zn[i], zn[j]) for j in range(n) if labels[j] == r and j != i]
                sims.append(cos(zn[i], pn[r]))
                sims = np.array(sims)
                w = np.exp(sims / 0.3 - (sims / 0.3).max())
                w = w / w.sum()
                assert scores[i, r].item() == pytest.approx(float((w * sims).sum()), rel=1e-10)

    def test_anchor_excluded_from_own_candidates(self):
        # with the anchor excluded, a lone group member scores against the
        # proxy alone rather than itself (which would force 1.0)
        z = t([[1.0, 0.0], [0.0, 1.0]])
        proxies = ProxyBank(2, 2, seed=1)
        batch = BatchView.from_single_labels(z, [0, 1], n_relations=2)
        scores = mccl_scores(batch, proxies, tau1=0.2)
        assert scores[0, 0].item() != pytest.approx(1.0, abs=1e-6)


class TestLossMccl:
    def test_equal_scores_give_log_n_relations(self):
        scores = torch.zeros((3, 4), dtype=torch.float64)
        biases = torch.zeros(4, dtype=torch.float64)
        out = loss_mccl(scores, biases, tau2=0.2, labels=[0, 1, 2])
        assert out.item() == pytest.approx(math.log(4.0), rel=1e-12)

    def test_scalar_recomputation_two_relations(self):
        scores = t([[1.0, 0.0]])
        biases = torch.zeros(2, dtype=torch.float64)
        out = loss_mccl(scores, biases, tau2=0.2, labels=[0])
        assert out.item() == pytest.approx(math.log(1 + math.exp(-5.0)), rel=1e-10)
        assert out.item() == pytest.approx(0.00672, abs=5e-5)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(13)
        z = rand_embeddings(rng, 6, 4)
        labels = [0, 1, 0, 2, 1, 2]
        proxies = ProxyBank(3, 4, seed=5)
        biases = torch.tensor(rng.normal(size=3))

        def value(order):
            zz = z[list(order)]
            yy = [labels[i] for i in order]
            batch = BatchView.from_single_labels(zz, yy, 3)
            return loss_mccl(mccl_scores(batch, proxies, 0.3), biases, 0.2, yy).item()

        base = value(range(6))
        for perm in ([5, 4, 3, 2, 1, 0], [2, 0, 1, 5, 3, 4]):
            assert value(perm) == pytest.approx(base, rel=1e-12)

    def test_gradient_reaches_embeddings_proxies_and_biases(self):
        rng = np.random.default_rng(14)
        z = rand_embeddings(rng, 5, 4, requires_grad=True)
        labels = [0, 1, 2, 0, 1]
        proxies = ProxyBank(3, 4, seed=6)
        biases = ClasswiseBias(3)

        def f():
            batch = BatchView.from_single_labels(z, labels, 3)
            return loss_mccl(mccl_scores(batch, proxies, 0.3), biases.values, 0.25, labels)

        assert_gradients_match(
            f, {"z": z, "proxies": proxies.vectors, "biases": biases.values}, rng=rng,
        )


class TestLossAtl:
    def test_empty_positive_and_negative_sets(self):
        logits = t([0.7, 0.0])  # one non-NA relation, in the positive set
        out = loss_atl(logits, positive=[0], na_index=1)
        # P = {0}, N empty: second term is -log(e^0 / e^0) = 0
        expected = math.log(math.exp(0.7) + 1.0) - 0.7
        assert out.item() == pytest.approx(expected, rel=1e-12)
        # fully degenerate: single relation inventory (NA only)
        assert loss_atl(t([0.0]), positive=[], na_index=0).item() == pytest.approx(0.0, abs=1e-12)

    def test_scalar_recomputation(self):
        logits = t([2.0, 0.0])
        out = loss_atl(logits, positive=[0], na_index=1)
        assert out.item() == pytest.approx(0.12693, abs=5e-6)

    def test_negatives_only_term(self):
        logits = t([2.0, -1.0, 0.0])
        out = loss_atl(logits, positive=[], na_index=2)
        expected = math.log(math.exp(2.0) + math.exp(-1.0) + 1.0)
        assert out.item() == pytest.approx(expected, rel=1e-12)

    def test_positive_set_with_na_rejected(self):
        with pytest.raises(ValueError):
            loss_atl(t([0.0, 0.0]), positive=[1], na_index=1)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        for _ in range(5):
            logits = torch.tensor(rng.normal(size=6), requires_grad=True)
            assert_gradients_match(
                lambda: loss_atl(logits, positive=[0, 2], na_index=5),
                {"logits": logits}, rng=rng,
            )


class TestLossMcclMultilabel:
    def test_na_instance_reduces_to_threshold_term(self):
        rng = np.random.default_rng(16)
        z = rand_embeddings(rng, 1, 4)
        proxies = ProxyBank(3, 4, seed=7)
        biases = torch.zeros(3, dtype=torch.float64)
        batch = BatchView.from_label_sets(z, [frozenset()], 3, na_index=2)
        out = loss_mccl_multilabel(batch, proxies, biases, 0.3, 0.2, na_index=2)
        scores = mccl_scores(batch, proxies, 0.3)
        logits = scores[0] / 0.2
        expected = loss_atl(logits, [], 2)
        assert out.item() == pytest.approx(expected.item(), rel=1e-12)

    def test_single_label_instance_equals_atl_composition(self):
        rng = np.random.default_rng(17)
        z = rand_embeddings(rng, 2, 4)
        proxies = ProxyBank(3, 4, seed=8)
        biases = torch.tensor(rng.normal(size=3))
        batch = BatchView.from_label_sets(z, [frozenset({0}), frozenset({1})], 3, na_index=2)
        out = loss_mccl_multilabel(batch, proxies, biases, 0.3, 0.2, na_index=2)
        scores = mccl_scores(batch, proxies, 0.3)
        expected = (
            loss_atl((scores[0] + biases) / 0.2, [0], 2)
            + loss_atl((scores[1] + biases) / 0.2, [1], 2)
        ) / 2
        assert out.item() == pytest.approx(expected.item(), rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(18)
        z = rand_embeddings(rng, 4, 5, requires_grad=True)
        proxies = ProxyBank(4, 5, seed=9)
        biases = ClasswiseBias(4)
        sets = [frozenset({0}), frozenset({1, 2}), frozenset(), frozenset({0, 2})]

        def f():
            batch = BatchView.from_label_sets(z, sets, 4, na_index=3)
            return loss_mccl_multilabel(batch, proxies, biases.values, 0.3, 0.2, na_index=3)

        assert_gradients_match(
            f, {"z": z, "proxies": proxies.vectors, "biases": biases.values}, rng=rng,
        )


class TestScaleInvariance:
    def test_losses_invariant_to_positive_rescaling_of_one_embedding(self):
        rng = np.random.default_rng(19)
        z = rand_embeddings(rng, 4, 5)
        labels = [0, 1, 0, 1]
        proxies = ProxyBank(2, 5, seed=10)
        biases = torch.zeros(2, dtype=torch.float64)

        def all_values(zz):
            batch = BatchView.from_single_labels(zz, labels, 2)
            batch.second_pass = zz * 1.0
            return [
                loss_rel(batch, [(0, 1)], {0: [2]}, 0.2).item(),
                loss_self(batch, 0.2).item(),
                loss_supcon(batch, 0.2).item(),
                loss_mccl(mccl_scores(batch, proxies, 0.3), biases, 0.2, labels).item(),
            ]

        base = all_values(z)
        scaled = z.clone()
        scaled[1] = scaled[1] * 3.0
        for a, b in zip(base, all_values(scaled)):
            assert abs(a - b) <= 1e-9

    def test_mean_similarity_collapse_at_huge_tau1(self):
        rng = np.random.default_rng(20)
        z = rand_embeddings(rng, 5, 4)
        labels = [0, 0, 0, 1, 1]
        proxies = ProxyBank(2, 4, seed=11)
        batch = BatchView.from_single_labels(z, labels, 2)
        scores = mccl_scores(batch, proxies, tau1=1e6)
        sims = cosine_matrix(z, z).numpy()
        psims = cosine_matrix(z, proxies.vectors.detach()).numpy()
        for i in range(5):
            for r in range(2):
                cand = [sims[i, j] for j in range(5) if labels[j] == r and j != i] + [psims[i, r]]
                assert scores[i, r].item() == pytest.approx(float(np.mean(cand)), abs=1e-6)
