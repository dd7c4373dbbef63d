import itertools

import numpy as np
import pytest

from relcon.corpus import (
    Document,
    Entity,
    Mention,
    PairInstance,
    RelationInventory,
    SyntheticWorldConfig,
    documents_by_id,
    generate_synthetic_world,
)
from relcon.evaluation import (
    Fact,
    K_GRID,
    PredictionRecord,
    facts_from_pairs,
    micro_f1,
    micro_f1_ign,
    probe_embeddings,
    select_k,
)

INV = RelationInventory(relations=("r0", "r1", "na"), na="na", mode="single")


def rec(pred, gold, doc="d0", subject=0, obj=1):
    return PredictionRecord(
        document_id=doc, subject=subject, object=obj,
        predicted=frozenset(pred), gold=frozenset(gold),
    )


def two_entity_doc(doc_id, s_gid, o_gid):
    return Document(
        id=doc_id,
        tokens=["a", "b"],
        entities=[Entity(0, s_gid, "t0"), Entity(1, o_gid, "t1")],
        mentions=[Mention(0, 0, 1), Mention(1, 1, 2)],
    )


class TestMicroF1:
    def test_perfect_predictions(self):
        records = [rec({"r0"}, {"r0"}), rec({"r1"}, {"r1"})]
        assert micro_f1(records, "na") == (1.0, 1.0, 1.0)

    def test_fixture_arithmetic(self):
        # TP=2, FP=1, FN=1
        records = [
            rec({"r0"}, {"r0"}),
            rec({"r1"}, {"r1"}),
            rec({"r0"}, {"na"}),
            rec({"na"}, {"r1"}),
        ]
        p, r, f1 = micro_f1(records, "na")
        assert p == pytest.approx(2 / 3)
        assert r == pytest.approx(2 / 3)
        assert f1 == pytest.approx(2 / 3)

    def test_na_never_counts(self):
        records = [rec({"na"}, {"na"}), rec(set(), set())]
        assert micro_f1(records, "na") == (0.0, 0.0, 0.0)

    def test_permutation_invariant_and_bounded(self):
        rng = np.random.default_rng(0)
        records = []
        for i in range(500):
            pred = set(rng.choice(INV.relations, size=rng.integers(0, 2)))
            gold = {str(rng.choice(INV.relations))}
            records.append(rec(pred, gold, doc=f"d{i}"))
        base = micro_f1(records, "na")
        shuffled = list(records)
        rng.shuffle(shuffled)
        assert micro_f1(shuffled, "na") == base
        assert all(0.0 <= v <= 1.0 for v in base)

    def test_matches_independent_counting_oracle(self):
        rng = np.random.default_rng(1)
        records = []
        for i in range(500):
            pred = {str(rng.choice(INV.relations))}
            gold = {str(rng.choice(INV.relations))}
            records.append(rec(pred, gold, doc=f"d{i}"))
        tp = sum(1 for r in records if r.predicted == r.gold and r.gold != {"na"})
        fp = sum(1 for r in records if r.predicted != {"na"} and r.predicted != r.gold)
        fn = sum(1 for r in records if r.gold != {"na"} and r.predicted != r.gold)
        p = tp / (tp + fp) if tp + fp else 0.0
        rr = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * rr / (p + rr) if p + rr else 0.0
        assert micro_f1(records, "na") == (pytest.approx(p), pytest.approx(rr), pytest.approx(f1))


class TestMicroF1Ign:
    def docs(self):
        return documents_by_id([
            two_entity_doc("d0", "A", "B"),
            two_entity_doc("d1", "C", "D"),
            two_entity_doc("d2", "E", "F"),
        ])

    def test_no_overlap_equals_micro_f1(self):
        docs = self.docs()
        records = [rec({"r0"}, {"r0"}, doc="d0"), rec({"r1"}, {"na"}, doc="d1")]
        plain = micro_f1(records, "na")[2]
        assert micro_f1_ign(records, set(), docs, "na") == pytest.approx(plain)

    def test_every_gold_fact_in_training_gives_zero(self):
        docs = self.docs()
        records = [rec({"r0"}, {"r0"}, doc="d0"), rec({"na"}, {"r1"}, doc="d1")]
        train_facts = {Fact("A", "r0", "B"), Fact("C", "r1", "D")}
        assert micro_f1_ign(records, train_facts, docs, "na") == 0.0

    def test_false_positives_still_count(self):
        docs = self.docs()
        records = [
            rec({"r0"}, {"r0"}, doc="d0"),   # correct, fact known from training
            rec({"r0"}, {"na"}, doc="d1"),   # false positive
            rec({"r1"}, {"r1"}, doc="d2"),   # correct, novel fact
        ]
        train_facts = {Fact("A", "r0", "B")}
        f1 = micro_f1_ign(records, train_facts, docs, "na")
        # TP=1 (d2), FP=1 (d1), FN=0
        assert f1 == pytest.approx(2 * 0.5 * 1.0 / 1.5)

    def test_matches_filter_then_recount_oracle(self):
        rng = np.random.default_rng(2)
        docs = {}
        records = []
        all_facts = []
        for i in range(200):
            doc = two_entity_doc(f"d{i}", f"s{i % 17}", f"o{i % 13}")
            docs[doc.id] = doc
            gold = {str(rng.choice(INV.relations))}
            pred = {str(rng.choice(INV.relations))}
            records.append(rec(pred, gold, doc=doc.id))
            for g in gold - {"na"}:
                all_facts.append(Fact(f"s{i % 17}", g, f"o{i % 13}"))
        train_facts = set(rng.choice(len(all_facts), size=30, replace=False).tolist())
        train_facts = {all_facts[i] for i in train_facts}

        tp = fp = fn = 0
        for r in records:
            doc = docs[r.document_id]
            s, o = doc.entities[0].global_id, doc.entities[1].global_id
            gold = {g for g in r.gold if g != "na"}
            pred = {g for g in r.predicted if g != "na"}
            fresh = {g for g in gold if Fact(s, g, o) not in train_facts}
            tp += len(pred & fresh)
            fp += len(pred - gold)
            fn += len(fresh - pred)
        p = tp / (tp + fp) if tp + fp else 0.0
        rr = tp / (tp + fn) if tp + fn else 0.0
        expected = 2 * p * rr / (p + rr) if p + rr else 0.0
        assert micro_f1_ign(records, train_facts, docs, "na") == pytest.approx(expected)

    def test_facts_deduplicated_per_triple(self):
        docs = documents_by_id([two_entity_doc("d0", "A", "B"), two_entity_doc("d1", "A", "B")])
        pairs = [
            PairInstance("d0", 0, 1, frozenset({"r0"})),
            PairInstance("d1", 0, 1, frozenset({"r0"})),
        ]
        facts = facts_from_pairs(pairs, docs, "na")
        assert facts == {Fact("A", "r0", "B")}


class TestSelectK:
    def test_single_candidate(self):
        records = {3: [rec({"r0"}, {"r0"})]}
        assert select_k(records, "na") == 3

    def test_peak_in_middle(self):
        def records_with_quality(n_correct, n_total=10):
            out = []
            for i in range(n_total):
                gold = {"r0"}
                pred = {"r0"} if i < n_correct else {"r1"}
                out.append(rec(pred, gold, doc=f"d{i}"))
            return out

        by_k = {1: records_with_quality(5), 3: records_with_quality(7),
                5: records_with_quality(9), 10: records_with_quality(6),
                20: records_with_quality(2)}
        assert select_k(by_k, "na") == 5

    def test_tie_prefers_smallest_k(self):
        same = [rec({"r0"}, {"r0"})]
        assert select_k({10: same, 3: same, 5: same}, "na") == 3

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(3)
        by_k = {}
        for k in K_GRID:
            recs = []
            for i in range(40):
                gold = {str(rng.choice(INV.relations))}
                pred = {str(rng.choice(INV.relations))}
                recs.append(rec(pred, gold, doc=f"d{i}"))
            by_k[k] = recs
        best = select_k(by_k, "na")
        scores = {k: micro_f1(v, "na")[2] for k, v in by_k.items()}
        assert scores[best] == max(scores.values())
        assert all(scores[k] < scores[best] for k in by_k if k < best)


def subcluster_embeddings(rng, n_per_cluster, noise=0.03):
    """Two sub-clusters per relation whose centroid directions collide.

    Every relation's two clusters sit symmetrically around the shared +x
    axis, so class centroids are nearly identical while the clusters
    themselves are well separated.
    """
    directions = {
        "r0": [np.array([1.0, 1.0, 0.0, 0.0]), np.array([1.0, -1.0, 0.0, 0.0])],
        "r1": [np.array([1.0, 0.0, 1.0, 0.0]), np.array([1.0, 0.0, -1.0, 0.0])],
        "na": [np.array([1.0, 0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0, -1.0])],
    }
    xs, ys = [], []
    for rel, dirs in directions.items():
        for d in dirs:
            base = d / np.linalg.norm(d)
            for _ in range(n_per_cluster):
                xs.append(base + rng.normal(scale=noise, size=4))
                ys.append(rel)
    return np.array(xs), ys


class TestProbeReport:
    def test_one_cluster_per_relation_all_probes_perfect(self):
        rng = np.random.default_rng(4)
        centers = {"r0": [4.0, 0.0, 0.0], "r1": [0.0, 4.0, 0.0], "na": [0.0, 0.0, 4.0]}
        xs, ys = [], []
        for rel, c in centers.items():
            for _ in range(20):
                xs.append(np.array(c) + rng.normal(scale=0.05, size=3))
                ys.append(rel)
        x = np.array(xs)
        report = probe_embeddings(x, ys, x, ys, INV, k=3)
        assert report["softmax"] == 1.0
        assert report["nearest_centroid"] == 1.0
        assert report["classwise_knn"] == 1.0

    def test_report_has_three_rows(self):
        rng = np.random.default_rng(5)
        x, y = subcluster_embeddings(rng, 5)
        report = probe_embeddings(x, y, x, y, INV, k=3)
        assert set(report) == {"softmax", "nearest_centroid", "classwise_knn"}

    def test_colliding_centroids_favor_knn(self):
        rng = np.random.default_rng(6)
        train_x, train_y = subcluster_embeddings(rng, 15)
        test_x, test_y = subcluster_embeddings(rng, 10)
        report = probe_embeddings(train_x, train_y, test_x, test_y, INV, k=3)
        assert report["classwise_knn"] >= report["nearest_centroid"] + 0.10
