"""Evaluation metrics: top-1 accuracy and the generalized seen-unseen curve.

The generalized setting scores every test image against the union of seen
and unseen classes. Sweeping a bias that is subtracted from every
seen-class score trades seen accuracy against unseen accuracy; the area
under the resulting curve (its Pareto staircase, integrated by trapezoid)
summarizes the model independent of any single operating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class EvalReport:
    top1: float
    per_class_accuracy: dict
    suc_points: tuple = ()
    auc: float | None = None

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "per_class_accuracy": {str(k): v for k, v in sorted(self.per_class_accuracy.items())},
            "suc_points": [list(p) for p in self.suc_points],
            "auc": self.auc,
        }


def top1_accuracy(predictions, gold) -> float:
    predictions = list(predictions)
    gold = list(gold)
    if len(predictions) != len(gold) or not gold:
        raise ValidationError("predictions and gold labels must have equal nonzero length")
    return sum(p == g for p, g in zip(predictions, gold)) / len(gold)


def per_class_accuracy(predictions, gold) -> dict:
    totals: dict = {}
    hits: dict = {}
    for p, g in zip(predictions, gold):
        totals[g] = totals.get(g, 0) + 1
        hits[g] = hits.get(g, 0) + (p == g)
    return {g: hits[g] / totals[g] for g in totals}


def _accuracy_pair(pred_ids, gold_ids, origin_seen):
    seen_idx = [i for i, s in enumerate(origin_seen) if s]
    unseen_idx = [i for i, s in enumerate(origin_seen) if not s]
    a_s = (
        sum(pred_ids[i] == gold_ids[i] for i in seen_idx) / len(seen_idx)
        if seen_idx
        else 0.0
    )
    a_u = (
        sum(pred_ids[i] == gold_ids[i] for i in unseen_idx) / len(unseen_idx)
        if unseen_idx
        else 0.0
    )
    return a_s, a_u


def _pareto_staircase(points):
    """Monotone upper envelope of the curve points.

    Points beaten strictly in both coordinates are dropped, then each seen
    accuracy keeps only its best unseen accuracy; the result is sorted by
    seen accuracy so a trapezoid over it integrates the staircase exactly
    (the (x_max, 0) anchor only closes a zero-area vertical drop).
    """
    points = set(points)
    kept = [
        p
        for p in points
        if not any(q[0] > p[0] and q[1] > p[1] for q in points)
    ]
    best_by_x: dict = {}
    for x, y in kept:
        if x not in best_by_x or y > best_by_x[x]:
            best_by_x[x] = y
    return sorted(best_by_x.items())


def suc_curve(
    score_matrix,
    gold_class_ids,
    class_ids,
    seen_class_ids,
    bias_grid=None,
    grid_size: int = 201,
) -> EvalReport:
    """Seen-unseen curve with area, via calibrated stacking.

    score_matrix is (N, C) over the class_ids column order; gold_class_ids
    gives each image's true class. For every bias in the grid the seen
    columns are penalized before the argmax; the +/- infinity endpoints
    (seen classes never / always preferred) are always included.
    """
    scores = np.asarray(score_matrix, dtype=np.float64)
    gold = list(gold_class_ids)
    class_ids = list(class_ids)
    if scores.ndim != 2 or scores.shape[1] != len(class_ids):
        raise ValidationError("score matrix shape disagrees with class id list")
    if scores.shape[0] != len(gold):
        raise ValidationError("score matrix rows disagree with gold labels")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores contain NaN/Inf")
    seen_set = set(seen_class_ids)
    seen_mask = np.array([cid in seen_set for cid in class_ids])
    if not seen_mask.any() or seen_mask.all():
        raise ValidationError("need both seen and unseen candidate classes")
    origin_seen = [g in seen_set for g in gold]

    if bias_grid is None:
        # predictions only flip where the bias crosses an image's
        # best-seen minus best-unseen margin; spanning those margins keeps
        # the default grid invariant to global score shifts
        diffs = scores[:, seen_mask].max(axis=1) - scores[:, ~seen_mask].max(axis=1)
        s = float(np.abs(diffs).max())
        s = s if s > 0 else 1.0
        bias_grid = np.linspace(-s, s, grid_size)

    ids = np.array(class_ids)
    points = []
    for gamma in bias_grid:
        adjusted = scores - gamma * seen_mask[None, :]
        pred = ids[np.argmax(adjusted, axis=1)]
        points.append(_accuracy_pair(pred, gold, origin_seen))

    # gamma -> +inf: only unseen classes are ever predicted
    unseen_cols = np.nonzero(~seen_mask)[0]
    pred_u = ids[unseen_cols[np.argmax(scores[:, unseen_cols], axis=1)]]
    _, a_u_max = _accuracy_pair(pred_u, gold, origin_seen)
    points.append((0.0, a_u_max))
    # gamma -> -inf: only seen classes are ever predicted
    seen_cols = np.nonzero(seen_mask)[0]
    pred_s = ids[seen_cols[np.argmax(scores[:, seen_cols], axis=1)]]
    a_s_max, _ = _accuracy_pair(pred_s, gold, origin_seen)
    points.append((a_s_max, 0.0))

    staircase = _pareto_staircase(points)
    auc = _trapezoid(staircase)

    # headline accuracy at zero bias over the union label space
    pred0 = ids[np.argmax(scores, axis=1)]
    top1 = sum(p == g for p, g in zip(pred0, gold)) / len(gold)
    return EvalReport(
        top1=top1,
        per_class_accuracy=per_class_accuracy(list(pred0), gold),
        suc_points=tuple(staircase),
        auc=auc,
    )


def _trapezoid(points) -> float:
    if len(points) < 2:
        return 0.0
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    return float(np.sum(np.diff(xs) * (ys[:-1] + ys[1:]) / 2.0))


def zsl_report(predictions, gold) -> EvalReport:
    """Plain zero-shot report: per-image top-1 plus per-class accuracies."""
    return EvalReport(
        top1=top1_accuracy(predictions, gold),
        per_class_accuracy=per_class_accuracy(predictions, gold),
    )
