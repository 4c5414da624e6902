"""Pose accuracy metrics: ADD, ADD-S and separate n-degree / n-cm accuracies."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import Pose, rotation_error_deg, translation_error


@dataclass(frozen=True)
class PoseErrorRecord:
    add: float
    adds: float
    rot_err: float  # degrees
    trans_err: float  # meters

    def to_dict(self):
        return asdict(self)


def add_error(P_pred: Pose, P_gt: Pose, points):
    a = P_pred.transform(points)
    b = P_gt.transform(points)
    return float(np.linalg.norm(a - b, axis=1).mean())


def adds_error(P_pred: Pose, P_gt: Pose, points):
    """Mean distance from each predicted point to its nearest ground-truth point (brute force)."""
    a = P_pred.transform(points)
    b = P_gt.transform(points)
    return float(cdist(a, b).min(axis=1).mean())


def pose_errors(P_pred: Pose, P_gt: Pose, points) -> PoseErrorRecord:
    return PoseErrorRecord(
        add_error(P_pred, P_gt, points),
        adds_error(P_pred, P_gt, points),
        rotation_error_deg(P_pred.R, P_gt.R),
        translation_error(P_pred.t, P_gt.t),
    )


def _percent(hits, n):
    return 100.0 * hits / n if n else 0.0


def accuracy_add(records, diameter, frac=0.1, symmetric=False):
    """Percentage of records whose ADD (or ADD-S) is strictly below ``frac * diameter``."""
    if not diameter > 0:
        raise ValueError(f"diameter must be positive, got {diameter}")
    errs = [r.adds if symmetric else r.add for r in records]
    return _percent(sum(e < frac * diameter for e in errs), len(errs))


def accuracy_deg_cm(records, n_deg=5.0, n_cm=5.0):
    """Rotation and translation accuracies, each evaluated on its own threshold."""
    if not (n_deg > 0 and n_cm > 0):
        raise ValueError("thresholds must be positive")
    n = len(records)
    deg = _percent(sum(r.rot_err < n_deg for r in records), n)
    cm = _percent(sum(r.trans_err < n_cm / 100.0 for r in records), n)
    return deg, cm


def summary_table(records, diameter, symmetric=True):
    """Columns for 0.05d, 0.1d, 5 deg, 5 cm and their arithmetic mean."""
    name = "ADD-S" if symmetric else "ADD"
    cols = {
        f"{name} 0.05d": accuracy_add(records, diameter, 0.05, symmetric),
        f"{name} 0.1d": accuracy_add(records, diameter, 0.1, symmetric),
    }
    cols["5deg"], cols["5cm"] = accuracy_deg_cm(records, 5.0, 5.0)
    cols["MEAN"] = float(np.mean(list(cols.values())))
    return cols


def format_table(cols):
    keys = list(cols)
    widths = [max(len(k), 7) for k in keys]
    head = " | ".join(k.rjust(w) for k, w in zip(keys, widths))
    row = " | ".join(f"{cols[k]:.2f}".rjust(w) for k, w in zip(keys, widths))
    return f"{head}\n{row}"
