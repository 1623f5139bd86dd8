"""Nearest-neighbor similarity baseline.

Classifies an unseen image through a three-hop chain: nearest seen image by
cosine, that image's class document, then the nearest unseen document by
cosine. Each hop breaks ties toward the lowest id. Works in the same TF-IDF
document space as the bilinear model.
"""

from __future__ import annotations

import numpy as np

from .errors import UndefinedCosineError, ValidationError
from .sparse import SparseVec


def _cosine_dense(x, y) -> float:
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise UndefinedCosineError("zero-norm vector in cosine similarity")
    return float(np.dot(x, y) / (nx * ny))


def _cosine_sparse(a: SparseVec, b: SparseVec) -> float:
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        raise UndefinedCosineError("zero-norm document in cosine similarity")
    return a.dot(b) / (na * nb)


def nns_predict(
    x_u,
    seen_images,
    seen_docs: dict,
    unseen_docs: dict,
    use_centroids: bool = False,
) -> int:
    """Predict the unseen class id for one image.

    seen_docs / unseen_docs map class_id -> document vector. With
    use_centroids the image hop compares against per-class mean images
    instead of individual training images (ablation mode).
    """
    if not seen_images:
        raise ValidationError("no seen images")
    if not unseen_docs:
        raise ValidationError("no unseen documents")
    x_u = np.asarray(x_u, dtype=np.float64)
    if np.linalg.norm(x_u) == 0.0:
        raise UndefinedCosineError("query image has zero norm")

    if use_centroids:
        sums: dict = {}
        counts: dict = {}
        for im in seen_images:
            sums[im.class_id] = sums.get(im.class_id, 0.0) + im.features
            counts[im.class_id] = counts.get(im.class_id, 0) + 1
        best_class, best_sim = None, -np.inf
        for cid in sorted(sums):
            sim = _cosine_dense(x_u, sums[cid] / counts[cid])
            if sim > best_sim:
                best_class, best_sim = cid, sim
        hop_class = best_class
    else:
        best_image, best_sim = None, -np.inf
        for im in sorted(seen_images, key=lambda im: im.image_id):
            sim = _cosine_dense(x_u, im.features)
            if sim > best_sim:
                best_image, best_sim = im, sim
        hop_class = best_image.class_id

    if hop_class not in seen_docs:
        raise ValidationError(f"seen class {hop_class} has no document vector")
    anchor_doc = seen_docs[hop_class]

    best_class, best_sim = None, -np.inf
    for cid in sorted(unseen_docs):
        sim = _cosine_sparse(anchor_doc, unseen_docs[cid])
        if sim > best_sim:
            best_class, best_sim = cid, sim
    return best_class
