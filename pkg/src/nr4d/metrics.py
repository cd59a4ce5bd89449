"""Chamfer distance and thresholded precision / recall / F-score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


class EmptyCloudError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    chamfer_m: float
    precision: float
    recall: float
    f_score: float
    match_radius_m: float
    counts: tuple[int, int]  # (|gt|, |pred|)


def _as_points(x, name: str) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    pts = pts.reshape(-1, pts.shape[-1]) if pts.size else pts.reshape(0, 3)
    if len(pts) == 0:
        raise EmptyCloudError(f"{name} point set is empty")
    return pts


def nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact distance from every ``src`` point to its nearest ``dst`` point."""
    d, _ = cKDTree(dst).query(src, k=1)
    return np.asarray(d, dtype=float)


def nearest_distances_bruteforce(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    diff = src[:, None, :] - dst[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1)).min(axis=1)


def chamfer(gt, pred) -> float:
    """Mean nearest-neighbour distance gt->pred plus pred->gt (unsquared)."""
    gt, pred = _as_points(gt, "ground-truth"), _as_points(pred, "predicted")
    return float(nearest_distances(gt, pred).mean() + nearest_distances(pred, gt).mean())


def f_score(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def precision_recall_f(gt, pred, match_radius: float) -> MetricReport:
    """A point counts as matched when its nearest counterpart lies within ``match_radius``."""
    if not match_radius > 0:
        raise ValueError(f"match_radius must be > 0, got {match_radius}")
    gt, pred = _as_points(gt, "ground-truth"), _as_points(pred, "predicted")
    d_gp = nearest_distances(gt, pred)
    d_pg = nearest_distances(pred, gt)
    p = float(np.mean(d_pg <= match_radius))
    r = float(np.mean(d_gp <= match_radius))
    return MetricReport(
        chamfer_m=float(d_gp.mean() + d_pg.mean()),
        precision=p,
        recall=r,
        f_score=f_score(p, r),
        match_radius_m=float(match_radius),
        counts=(len(gt), len(pred)),
    )
