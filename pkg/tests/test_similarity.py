import math

import numpy as np
import pytest

from zest.corpus import SplitSpec
from zest.errors import ValidationError
from zest.similarity import (
    ClusterAssignment,
    SimilarityConfig,
    augment,
    cluster_bow,
    cluster_purity,
    dbscan,
    hdbscan_lite,
    similarity_gate,
)
from zest.sparse import SparseVec


def reference_dbscan(points, eps, min_pts):
    """Independent O(n^2) DBSCAN: explicit neighbor scan, BFS expansion over
    cores in index order, then borders to the lowest adjacent cluster id."""
    n = len(points)

    def cos_dist(a, b):
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        if na == 0 or nb == 0:
            return 1.0
        return 1.0 - sum(x * y for x, y in zip(a, b)) / (na * nb)

    neighbors = [
        [j for j in range(n) if cos_dist(points[i], points[j]) <= eps] for i in range(n)
    ]
    core = [len(neighbors[i]) >= min_pts for i in range(n)]
    labels = [-1] * n
    cluster = 0
    for start in range(n):
        if not core[start] or labels[start] != -1:
            continue
        queue = [start]
        labels[start] = cluster
        while queue:
            p = queue.pop(0)
            for q in neighbors[p]:
                if core[q] and labels[q] == -1:
                    labels[q] = cluster
                    queue.append(q)
        cluster += 1
    for p in range(n):
        if core[p] or labels[p] != -1:
            continue
        adjacent = [labels[q] for q in neighbors[p] if core[q]]
        if adjacent:
            labels[p] = min(adjacent)
    return labels


def canonical(labels):
    """Relabel clusters by first appearance; noise stays -1."""
    mapping = {}
    out = []
    for lab in labels:
        if lab == -1:
            out.append(-1)
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out.append(mapping[lab])
    return out


def to_sparse(rows):
    return [SparseVec.from_dense(r) for r in rows]


def on_circle(angles_deg):
    """Unit vectors in the first quadrant (SparseVec weights must be >= 0)."""
    return to_sparse(
        [[math.cos(math.radians(a)), math.sin(math.radians(a))] for a in angles_deg]
    )


class TestDbscan:
    def test_two_tight_groups(self):
        vecs = to_sparse([[1, 0]] * 3 + [[0, 1]] * 3)
        out = dbscan(vecs, eps=0.1, min_pts=2)
        assert out.num_clusters == 2
        assert out.labels.tolist() == [0, 0, 0, 1, 1, 1]

    def test_isolated_vector_is_noise(self):
        vecs = on_circle([0, 1, 2, 90])
        out = dbscan(vecs, eps=0.01, min_pts=2)
        assert out.labels.tolist()[-1] == -1

    def test_empty_input(self):
        out = dbscan([], eps=0.5, min_pts=2)
        assert out.labels.size == 0 and out.num_clusters == 0

    def test_matches_reference_on_random_instances(self):
        rng = np.random.default_rng(42)
        for trial in range(30):
            pts = rng.random(size=(20, 2))
            eps = float(rng.uniform(0.01, 0.3))
            min_pts = int(rng.integers(2, 5))
            vecs = to_sparse(pts)
            ours = dbscan(vecs, eps, min_pts)
            ref = reference_dbscan(pts.tolist(), eps, min_pts)
            assert canonical(ours.labels.tolist()) == canonical(ref), f"trial {trial}"

    def test_permutation_invariant_up_to_relabeling(self):
        rng = np.random.default_rng(9)
        pts = rng.random(size=(15, 3))
        vecs = to_sparse(pts)
        base = dbscan(vecs, 0.3, 2).labels
        for _ in range(5):
            perm = rng.permutation(15)
            shuffled = [vecs[i] for i in perm]
            lab = dbscan(shuffled, 0.3, 2).labels
            unshuffled = np.empty(15, dtype=int)
            unshuffled[perm] = lab
            # same partition: equal co-membership matrices
            ours = base[:, None] == base[None, :]
            theirs = unshuffled[:, None] == unshuffled[None, :]
            noise_ok = (base == -1) == (unshuffled == -1)
            assert noise_ok.all()
            mask = base != -1
            assert (ours[mask][:, mask] == theirs[mask][:, mask]).all()

    def test_cluster_size_at_least_min_pts(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            pts = rng.random(size=(20, 2))
            min_pts = int(rng.integers(2, 5))
            out = dbscan(to_sparse(pts), 0.1, min_pts)
            for lab in range(out.num_clusters):
                assert (out.labels == lab).sum() >= min_pts


class TestHdbscanLite:
    def test_all_identical_one_cluster_no_noise(self):
        vecs = to_sparse([[1, 1]] * 5)
        out = hdbscan_lite(vecs, min_cluster=2)
        assert out.num_clusters == 1
        assert (out.labels == 0).all()

    def test_fewer_points_than_min_cluster(self):
        out = hdbscan_lite(to_sparse([[1, 0]]), min_cluster=2)
        assert out.labels.tolist() == [-1]

    @staticmethod
    def _two_scale_fixture():
        """Tight pair A, a bridge point near A, loose pair B orthogonal to A.

        A sits on axis 0 (angles 0 and 2 degrees in the 0-"up" plane); the
        bridge tilts 37 degrees from A toward B's plane; B lives in the
        axis-1/axis-2 plane with ~0.36 internal distance. The bridge keeps
        any single eps from recovering {A, B} exactly: small eps misses B,
        B-sized eps glues the bridge to A, larger eps merges everything.
        """
        def tilted(alpha_deg, yz_deg):
            a, b = math.radians(alpha_deg), math.radians(yz_deg)
            return [math.cos(a), math.sin(a) * math.cos(b), math.sin(a) * math.sin(b)]

        rows = [
            tilted(0, 0),      # a1
            tilted(2, 45),     # a2
            tilted(37, 45),    # bridge
            [0.0, math.cos(math.radians(20)), math.sin(math.radians(20))],  # b1
            [0.0, math.sin(math.radians(20)), math.cos(math.radians(20))],  # b2
        ]
        return to_sparse(rows)

    def test_two_scales_recovered_where_no_single_eps_works(self):
        vecs = self._two_scale_fixture()
        out = hdbscan_lite(vecs, min_cluster=2)
        labels = out.labels.tolist()
        assert labels[2] == -1, "bridge point must stay noise"
        assert labels[0] == labels[1] != -1
        assert labels[3] == labels[4] != -1
        assert labels[0] != labels[3]

        # confirm the fixture: no single-eps DBSCAN run yields this labeling
        from zest.sparse import pairwise_cosine_distance

        target = canonical(labels)
        dist = pairwise_cosine_distance(vecs)
        for eps in sorted(set(dist[np.triu_indices(5, k=1)])):
            flat = dbscan(vecs, float(eps), 2)
            assert canonical(flat.labels.tolist()) != target

    def test_min_cluster_size_respected(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            pts = rng.random(size=(15, 2))
            out = hdbscan_lite(to_sparse(pts), min_cluster=2)
            for lab in range(out.num_clusters):
                assert (out.labels == lab).sum() >= 2

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        pts = rng.random(size=(12, 3))
        a = hdbscan_lite(to_sparse(pts), 2)
        b = hdbscan_lite(to_sparse(pts), 2)
        assert a.labels.tolist() == b.labels.tolist()


class TestClusterBow:
    def _assignments(self):
        db = ClusterAssignment(np.array([2, 0, -1]), 4, "DBSCAN")
        hd = ClusterAssignment(np.array([-1, 1, -1]), 3, "HDBSCAN")
        return [db, hd]

    def test_one_hot_block_with_noise_second_block(self):
        vec = cluster_bow(self._assignments(), 0)
        assert vec.dim == 7
        np.testing.assert_array_equal(vec.to_dense(), [0, 0, 1, 0, 0, 0, 0])

    def test_double_noise_gives_zero_vector(self):
        vec = cluster_bow(self._assignments(), 2)
        assert vec.nnz == 0 and vec.dim == 7

    def test_same_clusters_same_vector(self):
        db = ClusterAssignment(np.array([1, 1]), 2, "DBSCAN")
        hd = ClusterAssignment(np.array([0, 0]), 1, "HDBSCAN")
        assert cluster_bow([db, hd], 0) == cluster_bow([db, hd], 1)

    def test_out_of_range_index(self):
        with pytest.raises(ValidationError):
            cluster_bow(self._assignments(), 5)


class TestSimilarityGate:
    def _split(self, seen, unseen):
        return SplitSpec(frozenset(seen), frozenset(unseen), "explicit")

    def test_no_cross_split_clusters(self):
        labels = ClusterAssignment(np.array([0, 0, 1, 1]), 2, "DBSCAN")
        split = self._split({0, 1}, {2, 3})
        assert similarity_gate([labels], split, 0.15, [0, 1, 2, 3]) is False

    def test_full_co_clustering(self):
        labels = ClusterAssignment(np.array([0, 1, 0, 1]), 2, "DBSCAN")
        split = self._split({0, 1}, {2, 3})
        assert similarity_gate([labels], split, 0.15, [0, 1, 2, 3]) is True

    def test_boundary_is_inclusive(self):
        # 20 unseen docs, exactly 3 co-clustered with seen -> fraction 0.15
        doc_ids = list(range(21))
        labels = np.full(21, -1)
        labels[0] = 0          # the seen doc
        labels[1:4] = 0        # three unseen docs share its cluster
        assignment = ClusterAssignment(labels, 1, "DBSCAN")
        split = self._split({0}, set(range(1, 21)))
        assert similarity_gate([assignment], split, 0.15, doc_ids) is True
        assert similarity_gate([assignment], split, 0.1500001, doc_ids) is False

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        labels = ClusterAssignment(rng.integers(-1, 3, size=10), 3, "DBSCAN")
        split = self._split(set(range(5)), set(range(5, 10)))
        results = [
            similarity_gate([labels], split, t, list(range(10)))
            for t in np.linspace(0.01, 0.99, 25)
        ]
        assert all(a >= b for a, b in zip(results, results[1:]))

    def test_either_clusterer_passes(self):
        linking = ClusterAssignment(np.array([0, 0]), 1, "DBSCAN")
        isolating = ClusterAssignment(np.array([-1, -1]), 0, "HDBSCAN")
        split = self._split({0}, {1})
        assert similarity_gate([isolating, linking], split, 0.5, [0, 1]) is True
        assert similarity_gate([isolating], split, 0.5, [0, 1]) is False


class TestAugment:
    def test_disabled_is_identity(self):
        doc = SparseVec.from_dense([0.6, 0.8])
        assert augment(doc, SparseVec.from_dense([1.0]), enabled=False) is doc

    def test_zero_block_keeps_unit_doc(self):
        doc = SparseVec.from_dense([0.6, 0.8])
        out = augment(doc, SparseVec.zeros(3), enabled=True)
        np.testing.assert_allclose(out.to_dense(), [0.6, 0.8, 0, 0, 0], atol=1e-12)

    def test_result_has_unit_norm(self):
        doc = SparseVec.from_dense([0.6, 0.8])
        out = augment(doc, SparseVec.from_dense([1.0, 1.0]), enabled=True)
        assert out.norm() == pytest.approx(1.0)
        assert out.dim == 4


class TestConfigAndPurity:
    def test_config_bounds(self):
        with pytest.raises(ValidationError):
            SimilarityConfig(min_cluster=1)
        with pytest.raises(ValidationError):
            SimilarityConfig(activation_threshold=1.0)
        with pytest.raises(ValidationError):
            SimilarityConfig(max_distance=0.0)

    def test_purity_on_known_labels(self):
        assignment = ClusterAssignment(np.array([0, 0, 0, 1, 1, -1]), 2, "DBSCAN")
        cats = ["a", "a", "b", "c", "c", "a"]
        # cluster 0: majority a (2 of 3); cluster 1: all c -> (2+2)/5
        assert cluster_purity(assignment, cats) == pytest.approx(4 / 5)
