"""Detection average precision and retrieval top-K accuracy.

detection_ap follows the 101-point interpolated convention: predictions
are greedily matched per image and category to the unmatched ground-truth
box of highest IoU at or above the threshold, the precision envelope is
sampled at recall levels 0.00, 0.01, ..., 1.00, and AP is the mean over
IoU thresholds 0.50:0.05:0.95 (AP50/AP75 read at single thresholds).

acc_at_k counts a query as a hit at K when any of its ground-truth gallery
items appears within the first K ranked entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Collection, Mapping, Sequence

import numpy as np

from .boxes import BoundingBox, ScoredBox, iou
from .errors import DataError
from .search import RankingList

# image_id -> [(box, category_id), ...]
GroundTruthDet = Mapping[str, Sequence[tuple[BoundingBox, int]]]
# query item_id -> set of matching gallery item_ids
GroundTruthRet = Mapping[str, Collection[str]]

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

_RECALL_LEVELS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class DetectionReport:
    """AP breakdown plus match counts (counts taken at the loosest threshold)."""

    ap: float
    ap50: float | None
    ap75: float | None
    per_category: dict[int, float]
    tp: int
    fp: int
    fn: int
    thresholds: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "per_category": {str(c): v for c, v in sorted(self.per_category.items())},
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "thresholds": list(self.thresholds),
        }


@dataclass(frozen=True)
class RetrievalReport:
    """Acc@K per requested K plus per-query first-hit ranks."""

    acc: dict[int, float]
    num_queries: int
    num_excluded: int
    impossible_query_ids: tuple[str, ...] = ()
    first_hit_rank: dict[str, int | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "acc": {str(k): v for k, v in sorted(self.acc.items())},
            "num_queries": self.num_queries,
            "num_excluded": self.num_excluded,
        }


def _interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """101-point interpolation: sample the right-to-left precision envelope
    at fixed recall levels; levels beyond the achieved recall score 0."""
    if recall.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, _RECALL_LEVELS, side="left")
    sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def _match_category(
    preds: list[ScoredBox],
    gt_by_image: dict[str, list[BoundingBox]],
    threshold: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy TP/FP flags for canonically sorted predictions of one category."""
    tp = np.zeros(len(preds), dtype=bool)
    taken: dict[str, list[bool]] = {img: [False] * len(b) for img, b in gt_by_image.items()}
    for i, p in enumerate(preds):
        candidates = gt_by_image.get(p.image_id)
        if not candidates:
            continue
        used = taken[p.image_id]
        best, best_iou = -1, threshold
        for j, g in enumerate(candidates):
            if used[j]:
                continue
            v = iou(p.box, g)
            if v > best_iou or (v == best_iou and v >= threshold and best == -1):
                best, best_iou = j, v
        if best >= 0:
            used[best] = True
            tp[i] = True
    return tp, ~tp


def _canonical_order(preds: Sequence[ScoredBox]) -> list[ScoredBox]:
    # a total order independent of input order, so reported numbers are
    # invariant under permutation of the predictions
    return sorted(
        preds,
        key=lambda p: (
            -p.score, p.image_id, p.box.x1, p.box.y1, p.box.x2, p.box.y2, p.model_id,
        ),
    )


def detection_ap(
    preds: Sequence[ScoredBox],
    gt: GroundTruthDet,
    iou_thresholds: Sequence[float] | None = None,
) -> DetectionReport:
    """Score detections against ground truth at the given IoU thresholds.

    Categories appearing only in predictions score 0 and still enter the
    category mean; categories appearing only in ground truth count their
    boxes as misses.
    """
    thresholds = tuple(iou_thresholds) if iou_thresholds is not None else COCO_THRESHOLDS
    if not thresholds or any(not (0.0 < t <= 1.0) for t in thresholds):
        raise DataError(f"IoU thresholds must lie in (0, 1], got {thresholds!r}")

    gt_cats = {c for boxes in gt.values() for _, c in boxes}
    pred_cats = {p.category_id for p in preds}
    categories = sorted(gt_cats | pred_cats)

    preds_by_cat: dict[int, list[ScoredBox]] = {c: [] for c in categories}
    for p in preds:
        preds_by_cat[p.category_id].append(p)
    gt_by_cat: dict[int, dict[str, list[BoundingBox]]] = {c: {} for c in categories}
    total_gt: dict[int, int] = {c: 0 for c in categories}
    for img, boxes in gt.items():
        for box, c in boxes:
            gt_by_cat[c].setdefault(img, []).append(box)
            total_gt[c] += 1

    loosest = min(range(len(thresholds)), key=lambda i: thresholds[i])
    per_category: dict[int, float] = {}
    by_threshold: dict[float, list[float]] = {t: [] for t in thresholds}
    tp_total = fp_total = fn_total = 0

    for c in categories:
        ordered = _canonical_order(preds_by_cat[c])
        n_gt = total_gt[c]
        aps = []
        for ti, t in enumerate(thresholds):
            tp, fp = _match_category(ordered, gt_by_cat[c], t)
            if n_gt == 0:
                ap_t = 0.0
            else:
                cum_tp = np.cumsum(tp)
                cum_fp = np.cumsum(fp)
                recall = cum_tp / n_gt
                precision = cum_tp / np.maximum(cum_tp + cum_fp, 1)
                ap_t = _interpolated_ap(recall, precision)
            aps.append(ap_t)
            by_threshold[t].append(ap_t)
            if ti == loosest:
                n_tp = int(tp.sum())
                tp_total += n_tp
                fp_total += int(fp.sum())
                fn_total += n_gt - n_tp
        per_category[c] = float(np.mean(aps))

    mean_ap = float(np.mean(list(per_category.values()))) if categories else 0.0

    def at(threshold: float) -> float | None:
        if threshold not in by_threshold:
            return None
        vals = by_threshold[threshold]
        return float(np.mean(vals)) if vals else 0.0

    return DetectionReport(
        ap=mean_ap,
        ap50=at(0.5),
        ap75=at(0.75),
        per_category=per_category,
        tp=tp_total,
        fp=fp_total,
        fn=fn_total,
        thresholds=thresholds,
    )


def acc_at_k(
    rankings: Sequence[RankingList],
    gt: GroundTruthRet,
    ks: Sequence[int],
    gallery_ids: Collection[str] | None = None,
) -> RetrievalReport:
    """Top-K accuracy over the evaluated queries.

    Queries whose ground-truth match set is empty are excluded from the
    denominator and counted separately.  When gallery_ids is given, queries
    whose match set is disjoint from the gallery are flagged as impossible
    (they still count as misses).
    """
    if not ks or any(k < 1 for k in ks):
        raise DataError(f"ks must be positive integers, got {ks!r}")
    seen: set[str] = set()
    for r in rankings:
        if r.query_id in seen:
            raise DataError(f"duplicate query_id {r.query_id!r} in rankings")
        seen.add(r.query_id)
    missing = sorted(q for q in seen if q not in gt)
    if missing:
        raise DataError(f"query {missing[0]!r} has no ground-truth entry")

    gallery_set = set(gallery_ids) if gallery_ids is not None else None
    first_hit: dict[str, int | None] = {}
    impossible: list[str] = []
    evaluated = 0
    excluded = 0
    hits = {k: 0 for k in ks}
    for r in rankings:
        matches = set(gt[r.query_id])
        if not matches:
            excluded += 1
            continue
        evaluated += 1
        if gallery_set is not None and matches.isdisjoint(gallery_set):
            impossible.append(r.query_id)
        rank = next((i + 1 for i, g in enumerate(r.item_ids) if g in matches), None)
        first_hit[r.query_id] = rank
        for k in ks:
            if rank is not None and rank <= k:
                hits[k] += 1
    acc = {k: (hits[k] / evaluated if evaluated else 0.0) for k in ks}
    return RetrievalReport(
        acc=acc,
        num_queries=evaluated,
        num_excluded=excluded,
        impossible_query_ids=tuple(impossible),
        first_hit_rank=first_hit,
    )


def format_detection_report(report: DetectionReport) -> str:
    lines = [
        f"AP      {report.ap:.4f}",
        f"AP50    {report.ap50:.4f}" if report.ap50 is not None else "AP50    n/a",
        f"AP75    {report.ap75:.4f}" if report.ap75 is not None else "AP75    n/a",
        f"TP/FP/FN  {report.tp}/{report.fp}/{report.fn}",
    ]
    for c, v in sorted(report.per_category.items()):
        lines.append(f"  category {c:<4d} AP {v:.4f}")
    return "\n".join(lines)


def format_retrieval_report(report: RetrievalReport) -> str:
    lines = [f"Acc@{k:<4d} {v:.4f}" for k, v in sorted(report.acc.items())]
    lines.append(f"queries evaluated {report.num_queries}, excluded {report.num_excluded}")
    if report.impossible_query_ids:
        lines.append(f"impossible queries: {', '.join(report.impossible_query_ids)}")
    return "\n".join(lines)
