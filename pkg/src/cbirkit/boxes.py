"""Axis-aligned box geometry, greedy NMS, and weighted fusion of detector ensembles.

Fusion merges overlapping boxes emitted by several detectors into a single
confidence-weighted box per cluster instead of suppressing all but one, so
the ensemble keeps localization evidence from every model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, DataError

SCORE_MODES = ("rescale", "mean")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle in absolute pixel coordinates, x2 > x1, y2 > y1."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise DataError(f"box coordinate {name}={v!r} is not a finite number")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DataError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "zero or negative area"
            )

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class ScoredBox:
    """One detector output: a box with confidence, category and provenance."""

    box: BoundingBox
    score: float
    category_id: int
    image_id: str
    model_id: str

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise DataError(f"score {self.score!r} outside [0, 1]")
        if not isinstance(self.category_id, int) or self.category_id < 1:
            raise DataError(f"category_id {self.category_id!r} must be an integer >= 1")


@dataclass(frozen=True)
class FusedBox:
    """Result of fusing one cluster of overlapping detections."""

    box: BoundingBox
    score: float
    category_id: int
    image_id: str
    cluster_size: int
    model_ids: frozenset[str]

    def to_scored(self, model_id: str = "wbf") -> ScoredBox:
        """View as a plain detection, e.g. for AP evaluation."""
        return ScoredBox(
            box=self.box,
            score=self.score,
            category_id=self.category_id,
            image_id=self.image_id,
            model_id=model_id,
        )


@dataclass(frozen=True)
class WbfParams:
    """Fusion parameters.

    model_weights maps model_id to a positive trust weight; None means every
    model weighs 1.  num_models (N) defaults to the number of distinct model
    ids observed in the input; when given explicitly it must cover at least
    the observed count.  With score_mode "rescale" a cluster fused from T of
    N models has its score multiplied by min(T, N)/N, so boxes confirmed by
    few models are demoted; "mean" keeps the plain average.
    """

    iou_threshold: float = 0.55
    model_weights: Mapping[str, float] | None = None
    num_models: int | None = None
    score_mode: str = "rescale"

    def __post_init__(self):
        if not (0.0 <= self.iou_threshold <= 1.0):
            raise ConfigError(f"iou_threshold {self.iou_threshold!r} outside [0, 1]")
        if self.num_models is not None and self.num_models < 1:
            raise ConfigError("num_models must be a positive integer")
        if self.score_mode not in SCORE_MODES:
            raise ConfigError(f"score_mode must be one of {SCORE_MODES}")
        if self.model_weights is not None:
            for mid, w in self.model_weights.items():
                if not (w > 0 and math.isfinite(w)):
                    raise ConfigError(f"weight for model '{mid}' must be positive, got {w!r}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two valid boxes, in [0, 1]."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    if ix2 <= ix1 or iy2 <= iy1:
        return 0.0
    inter = (ix2 - ix1) * (iy2 - iy1)
    return inter / (a.area + b.area - inter)


def _check_single_image(boxes: Sequence[ScoredBox]) -> None:
    image_ids = {b.image_id for b in boxes}
    if len(image_ids) > 1:
        raise DataError(f"boxes span multiple images: {sorted(image_ids)!r}")


def nms(
    boxes: Iterable[ScoredBox],
    iou_threshold: float,
    per_category: bool = True,
) -> list[ScoredBox]:
    """Greedy non-maximum suppression.

    Boxes are visited in descending score order; a box is kept only if its
    IoU with every previously kept box (of the same category when
    per_category) stays below iou_threshold.  Ties on score break by
    (model_id, input order) so the result is deterministic.
    """
    boxes = list(boxes)
    if not boxes:
        return []
    _check_single_image(boxes)
    order = sorted(
        range(len(boxes)),
        key=lambda i: (-boxes[i].score, boxes[i].model_id, i),
    )
    kept: list[int] = []
    for i in order:
        b = boxes[i]
        suppressed = False
        for j in kept:
            k = boxes[j]
            if per_category and k.category_id != b.category_id:
                continue
            if iou(b.box, k.box) >= iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return [boxes[i] for i in kept]


class _Cluster:
    """Running state of one fusion cluster.

    Keeps weighted coordinate sums so the fused box is O(1) to update per
    insertion; the plain sums back the fallback when every member weight
    is zero.
    """

    __slots__ = ("members", "wsum", "wcoords", "coords", "model_ids")

    def __init__(self):
        self.members: list[tuple[ScoredBox, float]] = []
        self.wsum = 0.0
        self.wcoords = [0.0, 0.0, 0.0, 0.0]
        self.coords = [0.0, 0.0, 0.0, 0.0]
        self.model_ids: set[str] = set()

    def add(self, sb: ScoredBox, weighted_score: float) -> None:
        self.members.append((sb, weighted_score))
        self.wsum += weighted_score
        for k, c in enumerate(sb.box.as_tuple()):
            self.wcoords[k] += weighted_score * c
            self.coords[k] += c
        self.model_ids.add(sb.model_id)

    def fused_coords(self) -> tuple[float, float, float, float]:
        if self.wsum > 0.0:
            return tuple(c / self.wsum for c in self.wcoords)  # type: ignore[return-value]
        # all member scores zero: fall back to the unweighted average
        n = len(self.members)
        return tuple(c / n for c in self.coords)  # type: ignore[return-value]

    def fused_score(self) -> float:
        return sum(w for _, w in self.members) / len(self.members)


def wbf_fuse(boxes: Iterable[ScoredBox], params: WbfParams) -> list[FusedBox]:
    """Fuse one image's detections from multiple models into weighted boxes.

    Per category: boxes are visited in descending weighted-score order
    (score times model weight, clamped to [0, 1]); each box joins the first
    cluster whose current fused box overlaps it with IoU > iou_threshold,
    or starts a new cluster.  A cluster's fused box is the weighted-score
    average of its members' coordinates and its score is the mean member
    weighted score; after placement, "rescale" multiplies each score by
    min(T, N)/N where T is the cluster size.  Output is sorted by
    descending fused score.
    """
    boxes = list(boxes)
    if not boxes:
        return []
    _check_single_image(boxes)
    image_id = boxes[0].image_id

    observed = {b.model_id for b in boxes}
    if params.model_weights is not None:
        missing = sorted(observed - set(params.model_weights))
        if missing:
            raise ConfigError(f"no weight configured for model '{missing[0]}'")
        weights = params.model_weights
    else:
        weights = {m: 1.0 for m in observed}

    if params.num_models is not None:
        if params.num_models < len(observed):
            raise ConfigError(
                f"num_models={params.num_models} is less than the "
                f"{len(observed)} distinct models observed"
            )
        n_models = params.num_models
    else:
        n_models = len(observed)

    weighted = [min(1.0, max(0.0, b.score * weights[b.model_id])) for b in boxes]

    fused: list[FusedBox] = []
    for cat in sorted({b.category_id for b in boxes}):
        idx = [i for i, b in enumerate(boxes) if b.category_id == cat]
        idx.sort(key=lambda i: (-weighted[i], boxes[i].model_id, i))
        clusters: list[_Cluster] = []
        for i in idx:
            b = boxes[i]
            target = None
            for cl in clusters:
                ref = BoundingBox(*cl.fused_coords())
                if iou(ref, b.box) > params.iou_threshold:
                    target = cl
                    break
            if target is None:
                target = _Cluster()
                clusters.append(target)
            target.add(b, weighted[i])
        for cl in clusters:
            t = len(cl.members)
            score = cl.fused_score()
            if params.score_mode == "rescale":
                score *= min(t, n_models) / n_models
            score = min(1.0, max(0.0, score))
            fused.append(
                FusedBox(
                    box=BoundingBox(*cl.fused_coords()),
                    score=score,
                    category_id=cat,
                    image_id=image_id,
                    cluster_size=t,
                    model_ids=frozenset(cl.model_ids),
                )
            )
    fused.sort(key=lambda f: -f.score)
    return fused
