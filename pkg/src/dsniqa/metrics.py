"""SRCC / PLCC evaluation criteria."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInput, LengthMismatch

# recorded in every report: PLCC is plain Pearson, no logistic remapping
PLCC_MAPPING = "none"


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.shape != gt.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {gt.size} targets")
    if pred.size < 3:
        raise LengthMismatch(f"need at least 3 samples, got {pred.size}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise DegenerateInput("non-finite entries")
    return pred, gt


def _pearson(x, y) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise DegenerateInput("constant input has zero variance")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def plcc(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    return _pearson(pred, gt)


def srcc(pred, gt) -> float:
    """Pearson correlation of average-tie ranks."""
    pred, gt = _check(pred, gt)
    return _pearson(rankdata(pred), rankdata(gt))


@dataclass
class EvalReport:
    srcc: float
    plcc: float
    n: int
    seed: int = 0
    split_id: str = ""
    repeat_index: int = 0
    plcc_mapping: str = PLCC_MAPPING

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(pred, gt, seed: int = 0, split_id: str = "", repeat_index: int = 0) -> EvalReport:
    return EvalReport(srcc(pred, gt), plcc(pred, gt), len(np.ravel(pred)), seed, split_id,
                      repeat_index)
