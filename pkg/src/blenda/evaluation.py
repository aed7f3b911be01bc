"""Per-class average precision on the held-out target annotations.

Every (image, cell) pair is a candidate detection; the score for class c is
the softmax probability of c at that cell. AP is the area under the
precision-recall curve with the precision envelope (all-points
interpolation). Tied scores are processed as one group, with precision taken
after the whole group, so the result is independent of tie ordering.
"""

from __future__ import annotations

from typing import Dict, List, Sequence

import numpy as np

from .dataset import Annotation
from .losses import one_hot_targets
from .model import ModelConfig, detector_forward_np, image_to_patches


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """AP of a ranking given per-candidate scores and 0/1 relevance."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise ValueError("scores and positives must be 1-D arrays of equal length")
    total_pos = int(positives.sum())
    if total_pos == 0:
        return 0.0

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positives[order]

    # tie groups: cut where the sorted score changes
    boundaries = np.nonzero(np.diff(sorted_scores))[0] + 1
    group_ends = np.append(boundaries, len(sorted_scores))

    cum_tp = np.cumsum(sorted_pos)
    tp_at_end = cum_tp[group_ends - 1]
    recall = tp_at_end / total_pos
    precision = tp_at_end / group_ends

    # precision envelope, then area over the recall increments
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * envelope))


def evaluate(
    params: Dict[str, np.ndarray],
    images: Sequence[np.ndarray],
    annotations: Sequence[Sequence[Annotation]],
    cfg: ModelConfig,
) -> Dict[str, object]:
    """Per-class AP and mAP of a detector over an annotated evaluation set."""
    if len(images) == 0:
        raise ValueError("evaluation set is empty")
    if len(images) != len(annotations):
        raise ValueError("images and annotations must align")

    all_probs: List[np.ndarray] = []
    all_truth: List[np.ndarray] = []
    for img, annos in zip(images, annotations):
        logits = detector_forward_np(params, image_to_patches(img, cfg))
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        all_probs.append(e / e.sum(axis=1, keepdims=True))
        all_truth.append(one_hot_targets(annos, cfg))
    probs = np.concatenate(all_probs, axis=0)
    truth = np.concatenate(all_truth, axis=0)

    per_class = [
        average_precision(probs[:, c], truth[:, c] > 0.5)
        for c in range(cfg.num_classes)
    ]
    return {"ap": per_class, "map": float(np.mean(per_class))}
