"""Instance-level mIoU / mDice with optimal truth–prediction pairing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatch, EmptyPairing


@dataclass
class Pairing:
    pairs: list[tuple[int, int]]
    iou: np.ndarray  # full (n_truth, n_pred) IoU matrix
    inter: np.ndarray
    sizes_truth: np.ndarray
    sizes_pred: np.ndarray

    @property
    def n_truth(self) -> int:
        return self.iou.shape[0]

    @property
    def n_pred(self) -> int:
        return self.iou.shape[1]


@dataclass
class PairedScores:
    pairs: list[tuple[int, int, float, float]]  # (truth idx, pred idx, iou, dice)
    miou: float
    mdice: float
    unmatched_truth: int
    unmatched_pred: int

    def to_json(self) -> dict:
        return {
            "miou": self.miou,
            "mdice": self.mdice,
            "unmatched_truth": self.unmatched_truth,
            "unmatched_pred": self.unmatched_pred,
            "pairs": [{"truth": t, "pred": p, "iou": i, "dice": d} for t, p, i, d in self.pairs],
        }


def iou_matrix(truth: list[np.ndarray], pred: list[np.ndarray]):
    """Return ``(iou, intersections, |truth|, |pred|)`` for two lists of masks."""
    shapes = {np.shape(m) for m in list(truth) + list(pred)}
    if len(shapes) > 1:
        raise DimensionMismatch(f"masks have differing shapes {sorted(shapes)}")
    npix = int(np.prod(next(iter(shapes)))) if shapes else 0
    t = np.array([np.asarray(m, dtype=bool).ravel() for m in truth], dtype=np.float64).reshape(len(truth), npix)
    p = np.array([np.asarray(m, dtype=bool).ravel() for m in pred], dtype=np.float64).reshape(len(pred), npix)
    inter = t @ p.T
    st, sp = t.sum(axis=1), p.sum(axis=1)
    union = st[:, None] + sp[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)
    return iou, inter, st, sp


def assign_max(score: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one assignment maximising the total score (rectangular allowed)."""
    score = np.asarray(score, dtype=float)
    if score.size == 0:
        return []
    r, c = linear_sum_assignment(score, maximize=True)
    return [(int(i), int(j)) for i, j in zip(r, c)]


def pair_optimal(truth: list[np.ndarray], pred: list[np.ndarray]) -> Pairing:
    """Optimal IoU pairing; pairs with zero IoU are discarded."""
    iou, inter, st, sp = iou_matrix(truth, pred)
    pairs = [(i, j) for i, j in assign_max(iou) if iou[i, j] > 0]
    return Pairing(pairs=pairs, iou=iou, inter=inter, sizes_truth=st, sizes_pred=sp)


def miou_mdice(pairing: Pairing) -> PairedScores:
    if not pairing.pairs:
        raise EmptyPairing("no prediction overlaps any ground-truth instance")
    rows = []
    for i, j in pairing.pairs:
        inter = pairing.inter[i, j]
        iou = float(pairing.iou[i, j])
        dice = float(2.0 * inter / (pairing.sizes_truth[i] + pairing.sizes_pred[j]))
        rows.append((i, j, iou, dice))
    n = len(rows)
    return PairedScores(
        pairs=rows,
        miou=float(sum(r[2] for r in rows) / n),
        mdice=float(sum(r[3] for r in rows) / n),
        unmatched_truth=pairing.n_truth - n,
        unmatched_pred=pairing.n_pred - n,
    )


def evaluate(truth: list[np.ndarray], pred: list[np.ndarray]) -> PairedScores:
    return miou_mdice(pair_optimal(truth, pred))


__all__ = ["PairedScores", "Pairing", "assign_max", "evaluate", "iou_matrix", "miou_mdice", "pair_optimal"]
