"""Evaluation and analysis metrics. All functions are pure numpy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInput, InvalidParameter, ShapeError


@dataclass(frozen=True)
class RegressionReport:
    rmse: float
    pearson: float
    spearman: float
    n: int


@dataclass(frozen=True)
class ClassificationReport:
    auroc: float
    auprc: float
    n_pos: int
    n_neg: int


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) != len(b):
        raise ShapeError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ShapeError("empty input")
    return a, b


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if sa == 0 or sb == 0:
        raise DegenerateInput("correlation of a constant vector")
    return float(np.clip((da * db).sum() / (sa * sb), -1.0, 1.0))


def correlations(pred, truth) -> tuple[float, float]:
    """Pearson and Spearman (Pearson on average ranks)."""
    pred, truth = _pair(pred, truth)
    if len(pred) < 2:
        raise DegenerateInput("need at least two samples")
    return _pearson(pred, truth), _pearson(rankdata(pred), rankdata(truth))


def regression_report(pred, truth) -> RegressionReport:
    r_p, r_s = correlations(pred, truth)
    return RegressionReport(rmse(pred, truth), r_p, r_s, len(np.ravel(pred)))


def ranking_metrics(scores, labels) -> tuple[float, float]:
    """AUROC (ties count half) and step-wise AUPRC (average precision)."""
    scores, labels = _pair(scores, labels)
    pos = labels > 0.5
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInput("both classes must be present")
    ranks = rankdata(scores)
    auroc = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
    # average precision over distinct thresholds, ties grouped together
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], pos[order].astype(np.float64)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall_gain = np.diff(np.r_[0.0, tp]) / n_pos
    auprc = float((precision * recall_gain).sum())
    return float(auroc), auprc


def classification_report(scores, labels) -> ClassificationReport:
    auroc, auprc = ranking_metrics(scores, labels)
    labels = np.asarray(labels).ravel() > 0.5
    return ClassificationReport(auroc, auprc, int(labels.sum()), int((~labels).sum()))


def davies_bouldin(points, labels) -> float:
    """Mean over clusters of the worst (s_i + s_j) / d_ij ratio."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    labels = np.asarray(labels).ravel()
    if len(labels) != len(points):
        raise ShapeError("labels and points differ in length")
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise DegenerateInput("need at least two clusters")
    centroids = np.array([points[labels == c].mean(axis=0) for c in clusters])
    scatter = np.array([np.linalg.norm(points[labels == c] - centroids[k], axis=1).mean()
                        for k, c in enumerate(clusters)])
    worst = []
    for i in range(len(clusters)):
        ratios = [(scatter[i] + scatter[j]) / np.linalg.norm(centroids[i] - centroids[j])
                  for j in range(len(clusters)) if j != i]
        worst.append(max(ratios))
    return float(np.mean(worst))


def space_shift(x_in, x_out, n_ligand: int | None = None, n_receptor: int | None = None) -> float:
    """Squared norm of the predicted displacement divided by the atom count."""
    x_in = np.asarray(x_in, dtype=np.float64)
    x_out = np.asarray(x_out, dtype=np.float64)
    if x_in.shape != x_out.shape or x_in.ndim != 2 or x_in.shape[1] != 3:
        raise ShapeError(f"coordinate shapes differ or are not (n, 3): {x_in.shape}, {x_out.shape}")
    n_atoms = x_in.shape[0]
    if n_ligand is not None and n_receptor is not None and n_ligand + n_receptor != n_atoms:
        raise ShapeError(f"N + M = {n_ligand + n_receptor} but {n_atoms} atoms given")
    return float(((x_out - x_in) ** 2).sum() / n_atoms)


def least_squares_fit(x, y) -> tuple[float, float, float]:
    """Ordinary least squares line with in-sample R^2."""
    x, y = _pair(x, y)
    if len(x) < 2:
        raise DegenerateInput("need at least two points")
    dx = x - x.mean()
    sxx = (dx * dx).sum()
    if sxx == 0:
        raise DegenerateInput("x is constant")
    slope = float((dx * (y - y.mean())).sum() / sxx)
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = ((y - y.mean()) ** 2).sum()
    ss_res = ((y - slope * x - intercept) ** 2).sum()
    r2 = 0.0 if ss_tot == 0 else float(1 - ss_res / ss_tot)
    return slope, intercept, r2


def pca_project(points, dims: int = 2, return_variance: bool = False):
    """Project centred points onto the leading covariance eigenvectors.

    Each component is signed so that its largest-magnitude loading is positive.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) < 2:
        raise InvalidParameter("need at least two points in a 2-D array")
    if not 1 <= dims <= points.shape[1]:
        raise InvalidParameter(f"dims must lie in 1..{points.shape[1]}, got {dims}")
    centred = points - points.mean(axis=0)
    cov = centred.T @ centred / (len(points) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:dims]
    comps = evecs[:, order]
    flip = np.sign(comps[np.argmax(np.abs(comps), axis=0), np.arange(dims)])
    comps = comps * np.where(flip == 0, 1.0, flip)
    projected = centred @ comps
    if return_variance:
        total = evals.sum()
        ratio = evals[order] / total if total > 0 else np.zeros(dims)
        return projected, ratio
    return projected
