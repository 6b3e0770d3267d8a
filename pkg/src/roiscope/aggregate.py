"""Slide-level scoring from tile predictions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

N_SCORES = 4
MAX_POINTS = 15.0


def default_penalty_matrix() -> np.ndarray:
    """15 points on the diagonal, 5 fewer per step of score distance."""
    idx = np.arange(N_SCORES)
    return np.maximum(MAX_POINTS - 5.0 * np.abs(idx[:, None] - idx[None, :]), 0.0)


@dataclass
class ScoringConfig:
    penalty: list = field(default_factory=lambda: default_penalty_matrix().tolist())
    bonus: float = 5.0
    pcms_tolerance: float = 0.1

    def matrix(self) -> np.ndarray:
        m = np.asarray(self.penalty, dtype=float)
        validate_matrix(m)
        return m


@dataclass
class SlidePrediction:
    tile_scores: list  # (tile id, score, confidence)
    slide_score: int
    pcms: float
    area_ratios: list

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ContestScore:
    points: float
    bonus: float
    weighted_confidence: float
    combined: float

    def to_dict(self) -> dict:
        return asdict(self)


def validate_matrix(m: np.ndarray) -> None:
    if m.shape != (N_SCORES, N_SCORES):
        raise ValueError(f"penalty matrix must be {N_SCORES}x{N_SCORES}, got {m.shape}")
    if not np.all(np.isfinite(m)) or m.min() < 0 or m.max() > MAX_POINTS:
        raise ValueError(f"penalty entries must lie in [0, {MAX_POINTS:g}]")
    if not np.all(np.diag(m) == MAX_POINTS):
        raise ValueError(f"penalty diagonal must be {MAX_POINTS:g}")


def dominant_class(tile_scores) -> int:
    """Most frequent score; ties resolve to the lower score."""
    scores = np.asarray(list(tile_scores), dtype=int)
    if scores.size == 0:
        raise ValueError("no tile scores")
    if scores.min() < 0 or scores.max() >= N_SCORES:
        raise ValueError(f"scores must lie in 0..{N_SCORES - 1}")
    return int(np.argmax(np.bincount(scores, minlength=N_SCORES)))


def pcms(tile_scores, tissue_areas) -> np.ndarray:
    """Share of tissue area carried by tiles of each predicted score."""
    scores = np.asarray(list(tile_scores), dtype=int)
    areas = np.asarray(list(tissue_areas), dtype=float)
    if scores.shape != areas.shape:
        raise ValueError("one tissue area per tile score is required")
    if np.any(areas < 0):
        raise ValueError("tissue areas must be nonnegative")
    total = areas.sum()
    if not total > 0:
        raise ValueError("total tissue area is zero")
    return np.bincount(scores, weights=areas, minlength=N_SCORES)[:N_SCORES] / total


def tissue_area(mask) -> float:
    return float(np.count_nonzero(mask))


def weighted_confidence(tile_scores, confidences, slide_score: int) -> float:
    scores = np.asarray(list(tile_scores), dtype=int)
    conf = np.asarray(list(confidences), dtype=float)
    if scores.shape != conf.shape or scores.size == 0:
        raise ValueError("one confidence per tile score is required")
    if conf.min() < 0 or conf.max() > 1:
        raise ValueError("confidences must lie in [0, 1]")
    return float(np.where(scores == slide_score, conf, 1.0 - conf).mean())


def contest_score(pred: int, gt: int, pcms_pred, pcms_gt, tile_scores, confidences,
                  scoring: ScoringConfig | None = None) -> ContestScore:
    scoring = scoring or ScoringConfig()
    m = scoring.matrix()
    if not (0 <= pred < N_SCORES and 0 <= gt < N_SCORES):
        raise ValueError("scores must lie in 0..3")
    points = float(m[gt, pred])
    gap = np.max(np.abs(np.asarray(pcms_pred, dtype=float) - np.asarray(pcms_gt, dtype=float)))
    bonus = float(scoring.bonus) if gap <= scoring.pcms_tolerance else 0.0
    wc = weighted_confidence(tile_scores, confidences, pred)
    return ContestScore(points=points, bonus=bonus, weighted_confidence=wc, combined=(points + bonus) * wc)


def score_slide(tile_ids, tile_scores, confidences, tissue_areas) -> SlidePrediction:
    scores = [int(s) for s in tile_scores]
    slide = dominant_class(scores)
    ratios = pcms(scores, tissue_areas)
    return SlidePrediction(
        tile_scores=[(str(i), s, float(c)) for i, s, c in zip(tile_ids, scores, confidences)],
        slide_score=slide,
        pcms=float(ratios[slide]),
        area_ratios=[float(r) for r in ratios],
    )
