"""Document clustering and the cluster-similarity feature block.

All class documents (seen and unseen alike) are clustered twice, with
DBSCAN and with a stability-selection variant of hierarchical DBSCAN, over
cosine distance on TF-IDF vectors. Each document's cluster indexes become a
one-hot bag-of-words block that is concatenated to its feature vector, but
only when enough unseen-class documents co-cluster with seen-class ones
(the similarity gate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .sparse import SparseVec, concat, pairwise_cosine_distance

_TINY = 1e-12


@dataclass(frozen=True)
class ClusterAssignment:
    """Per-document labels; -1 marks noise."""

    labels: np.ndarray
    num_clusters: int
    method: str

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.size and (labels.min() < -1 or labels.max() >= self.num_clusters):
            raise ValidationError("cluster labels out of range")


@dataclass(frozen=True)
class SimilarityConfig:
    min_cluster: int = 2
    max_distance: float = 0.5
    activation_threshold: float = 0.15

    def __post_init__(self):
        if self.min_cluster < 2:
            raise ValidationError("min_cluster must be >= 2")
        if self.max_distance <= 0:
            raise ValidationError("max_distance must be positive")
        if not 0.0 < self.activation_threshold < 1.0:
            raise ValidationError("activation_threshold must be in (0, 1)")


def _core_components(dist, eps, min_pts):
    """Connected components of core points under the eps-neighborhood graph.

    A point is core when its neighborhood (itself included) holds at least
    min_pts points. Components are numbered by their lowest core index.
    Returns (core_mask, component_label per point with -1 for non-core).
    """
    n = dist.shape[0]
    adj = dist <= eps
    core = adj.sum(axis=1) >= min_pts
    comp = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for start in range(n):
        if not core[start] or comp[start] != -1:
            continue
        # breadth-first expansion over core points only
        comp[start] = next_label
        frontier = [start]
        while frontier:
            reach = np.zeros(n, dtype=bool)
            for p in frontier:
                reach |= adj[p]
            reach &= core & (comp == -1)
            idx = np.nonzero(reach)[0]
            comp[idx] = next_label
            frontier = list(idx)
        next_label += 1
    return core, comp


def _attach_borders(dist, eps, core, comp):
    """Assign each non-core point within eps of a core to the lowest adjacent cluster id."""
    labels = comp.copy()
    n = dist.shape[0]
    core_idx = np.nonzero(core)[0]
    for p in range(n):
        if core[p]:
            continue
        near = core_idx[dist[p, core_idx] <= eps]
        if near.size:
            labels[p] = comp[near].min()
    return labels


def dbscan(vectors, eps: float, min_pts: int) -> ClusterAssignment:
    """Density clustering over cosine distance with deterministic borders.

    Core points have >= min_pts neighbors (incl. themselves) within eps;
    clusters are maximal density-connected core sets; border points join
    the lowest-numbered adjacent cluster; the rest are noise (-1).
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    if min_pts < 1:
        raise ValidationError("min_pts must be >= 1")
    vectors = list(vectors)
    if not vectors:
        return ClusterAssignment(np.empty(0, dtype=np.int64), 0, "DBSCAN")
    dist = pairwise_cosine_distance(vectors)
    core, comp = _core_components(dist, eps, min_pts)
    labels = _attach_borders(dist, eps, core, comp)
    num = int(comp.max()) + 1 if core.any() else 0
    return ClusterAssignment(labels, num, "DBSCAN")


class _Node:
    """A cluster's lifetime in the eps hierarchy (larger eps = earlier).

    The eps graph only changes at observed pairwise distances, so a cluster
    present at level eps_i persists for every eps in [eps_i, previous
    level). Its birth boundary is therefore its parent's last alive level,
    and it dies just below its own last alive level.
    """

    __slots__ = ("cores", "birth_eps", "last_eps", "children")

    def __init__(self, cores, birth_eps):
        self.cores = cores              # frozenset of core indices, updated as it shrinks
        self.birth_eps = birth_eps      # boundary level: parent's last alive eps
        self.last_eps = birth_eps       # smallest level at which it still existed
        self.children = []

    def stability(self):
        return 1.0 / max(self.last_eps, _TINY) - 1.0 / max(self.birth_eps, _TINY)


def hdbscan_lite(vectors, min_cluster: int = 2) -> ClusterAssignment:
    """Scale-free density clustering by stability selection.

    Sweeps eps downward over the sorted set of pairwise cosine distances,
    tracking how core components are born, shrink, split, and evaporate.
    Each node's stability is 1/eps_fall - 1/eps_birth; a bottom-up pass
    keeps a node only when it is strictly more stable than its selected
    descendants together (ties prefer the smaller-eps descendants). A
    selected cluster's members are its final core set plus border points
    within its last-alive eps; everything else is noise.
    """
    if min_cluster < 2:
        raise ValidationError("min_cluster must be >= 2")
    vectors = list(vectors)
    n = len(vectors)
    if n == 0:
        return ClusterAssignment(np.empty(0, dtype=np.int64), 0, "HDBSCAN")
    if n < min_cluster:
        return ClusterAssignment(np.full(n, -1, dtype=np.int64), 0, "HDBSCAN")

    dist = pairwise_cosine_distance(vectors)
    iu = np.triu_indices(n, k=1)
    levels = np.unique(dist[iu])[::-1]  # descending

    nodes: list[_Node] = []
    active: list[_Node] = []
    for eps in levels:
        _, comp = _core_components(dist, eps, min_cluster)
        comps = {}
        for label in range(int(comp.max()) + 1 if comp.max() >= 0 else 0):
            comps[label] = frozenset(np.nonzero(comp == label)[0].tolist())
        current = list(comps.values())

        if not active:
            for cores in current:
                node = _Node(cores, eps)
                nodes.append(node)
                active.append(node)
            continue

        still_active = []
        for node in active:
            children = [c for c in current if c <= node.cores]
            if len(children) == 1:
                node.cores = children[0]
                node.last_eps = eps
                still_active.append(node)
            else:
                # parent ceased just below its last alive level; children
                # already existed from that boundary downward
                for cores in children:
                    child = _Node(cores, node.last_eps)
                    child.last_eps = eps
                    node.children.append(child)
                    nodes.append(child)
                    still_active.append(child)
        # components never appear outside an existing node as eps shrinks
        active = still_active

    selected = _select_stable(nodes)

    labels = np.full(n, -1, dtype=np.int64)
    ordered = sorted(selected, key=lambda nd: min(nd.cores))
    for cid, node in enumerate(ordered):
        labels[sorted(node.cores)] = cid
    # borders: non-members within a selected cluster's last-alive eps of its cores
    for cid, node in enumerate(ordered):
        cores = np.array(sorted(node.cores))
        for p in range(n):
            if labels[p] != -1:
                continue
            if np.any(dist[p, cores] <= node.last_eps):
                labels[p] = cid
    return ClusterAssignment(labels, len(ordered), "HDBSCAN")


def _select_stable(nodes):
    """Bottom-up excess-of-mass selection over the node forest."""
    child_ids = {id(c) for nd in nodes for c in nd.children}
    roots = [nd for nd in nodes if id(nd) not in child_ids]

    def visit(node):
        if not node.children:
            return [node], node.stability()
        picked, total = [], 0.0
        for child in node.children:
            sub_picked, sub_score = visit(child)
            picked.extend(sub_picked)
            total += sub_score
        own = node.stability()
        if own > total:
            return [node], own
        return picked, total

    selected = []
    for root in roots:
        picked, _ = visit(root)
        selected.extend(picked)
    return selected


def cluster_bow(assignments, doc_index: int) -> SparseVec:
    """One-hot block per clusterer, concatenated; noise contributes zeros."""
    blocks = []
    for assignment in assignments:
        if not 0 <= doc_index < assignment.labels.shape[0]:
            raise ValidationError(f"doc_index {doc_index} out of range")
        label = int(assignment.labels[doc_index])
        if label >= 0:
            block = SparseVec(assignment.num_clusters, np.array([label]), np.array([1.0]))
        else:
            block = SparseVec.zeros(assignment.num_clusters)
        blocks.append(block)
    out = blocks[0]
    for block in blocks[1:]:
        out = concat(out, block)
    return out


def similarity_gate(assignments, split, threshold: float, doc_class_ids) -> bool:
    """True when enough unseen-class documents co-cluster with seen ones.

    The fraction of unseen documents sharing a non-noise cluster with at
    least one seen document is compared (>=) against the threshold; the
    gate passes if either clusterer clears it.
    """
    unseen = [i for i, cid in enumerate(doc_class_ids) if cid in split.unseen_class_ids]
    if not unseen:
        return False
    seen = [i for i, cid in enumerate(doc_class_ids) if cid in split.seen_class_ids]
    for assignment in assignments:
        labels = assignment.labels
        seen_labels = {int(labels[i]) for i in seen if labels[i] >= 0}
        linked = sum(1 for i in unseen if labels[i] >= 0 and int(labels[i]) in seen_labels)
        if linked / len(unseen) >= threshold:
            return True
    return False


def augment(doc_vec: SparseVec, cluster_vec: SparseVec, enabled: bool) -> SparseVec:
    """Concatenate the cluster block and L2-renormalize; identity when disabled."""
    if not enabled:
        return doc_vec
    return concat(doc_vec, cluster_vec).normalized()


def cluster_purity(assignment: ClusterAssignment, categories) -> float:
    """Majority-category accuracy over clustered (non-noise) documents."""
    categories = list(categories)
    clustered = [i for i in range(len(categories)) if assignment.labels[i] >= 0]
    if not clustered:
        return 0.0
    correct = 0
    for label in range(assignment.num_clusters):
        members = [i for i in clustered if assignment.labels[i] == label]
        if not members:
            continue
        counts: dict = {}
        for i in members:
            counts[categories[i]] = counts.get(categories[i], 0) + 1
        correct += max(counts.values())
    return correct / len(clustered)


def write_clusters_tsv(path, doc_ids, dbscan_assignment, hdbscan_assignment) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, doc_id in enumerate(doc_ids):
            fh.write(
                f"{doc_id}\t{int(dbscan_assignment.labels[i])}\t{int(hdbscan_assignment.labels[i])}\n"
            )
