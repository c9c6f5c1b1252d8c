"""Pixel assignment at inference time and region metrics.

A prediction set is collapsed to one binary mask by a per-pixel argmax
over confidence-weighted mask values: each query's score at a pixel is
its top class probability times its mask value, and the pixel takes the
winning query's class. Ties go to the lowest query index. Scoring uses
the Jaccard overlap and the beta-weighted F-measure, averaged over all
frames of a split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data
from .heads import SOUNDING

DEFAULT_BETA_SQ = 0.3


def fuse_predictions(masks_np: np.ndarray, probs_np: np.ndarray) -> np.ndarray:
    """(N, H, W) mask probabilities + (N, K) class probabilities -> bool (H, W)."""
    n = masks_np.shape[0]
    top_class = probs_np.argmax(axis=1)
    top_prob = probs_np[np.arange(n), top_class]
    scores = top_prob[:, None, None] * masks_np
    winner = scores.argmax(axis=0)  # argmax keeps the lowest index on ties
    return top_class[winner] == SOUNDING


def jaccard(m: np.ndarray, y: np.ndarray) -> float:
    """Intersection over union; 1 when both masks are empty."""
    m = np.asarray(m, dtype=bool)
    y = np.asarray(y, dtype=bool)
    if m.shape != y.shape:
        raise ValueError(f"jaccard: shapes {m.shape} and {y.shape} differ")
    union = np.count_nonzero(m | y)
    if union == 0:
        return 1.0
    return np.count_nonzero(m & y) / union


def fscore(m: np.ndarray, y: np.ndarray, beta_sq: float = DEFAULT_BETA_SQ) -> float:
    """(1+b)PR / (bP + R) with b = beta squared; 1 when both empty, 0 when TP=0."""
    m = np.asarray(m, dtype=bool)
    y = np.asarray(y, dtype=bool)
    if m.shape != y.shape:
        raise ValueError(f"fscore: shapes {m.shape} and {y.shape} differ")
    tp = np.count_nonzero(m & y)
    if not m.any() and not y.any():
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / np.count_nonzero(m)
    recall = tp / np.count_nonzero(y)
    return (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall)


@dataclass
class EvalRecord:
    rows: list[tuple[str, int, float, float]]  # (clip id, frame, J, F)
    mean_j: float
    mean_f: float


def evaluate_split(predict_clip, manifest_path, split: str,
                   out_dir=None, beta_sq: float = DEFAULT_BETA_SQ,
                   save_masks: bool = False) -> EvalRecord:
    """Score every frame of a split with a clip-level predictor.

    ``predict_clip(frames, spectrogram)`` must return one boolean mask per
    frame. With ``out_dir`` set, writes metrics.csv and summary.txt there
    (and the predicted masks as PGM when ``save_masks``).
    """
    records = [r for r in data.read_manifest(manifest_path) if r["split"] == split]
    if not records:
        raise ValueError(f"manifest {manifest_path} has no clips in split {split!r}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rows = []
    for rec in records:
        clip_dir = data.manifest_clip_dir(manifest_path, rec)
        frames, spec, gt = data.load_clip(clip_dir)
        preds = predict_clip(frames, spec)
        for t in range(gt.shape[0]):
            rows.append((rec["id"], t, jaccard(preds[t], gt[t]),
                         fscore(preds[t], gt[t], beta_sq)))
            if out is not None and save_masks:
                mask_dir = out / "masks" / rec["id"]
                mask_dir.mkdir(parents=True, exist_ok=True)
                from . import netpbm
                netpbm.write_mask(mask_dir / f"pred_{t}.pgm", preds[t])

    mean_j = float(np.mean([r[2] for r in rows]))
    mean_f = float(np.mean([r[3] for r in rows]))
    record = EvalRecord(rows, mean_j, mean_f)
    if out is not None:
        write_metrics(record, out)
    return record


def write_metrics(record: EvalRecord, out_dir) -> tuple[str, str]:
    out = Path(out_dir)
    csv_path = out / "metrics.csv"
    summary_path = out / "summary.txt"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip", "frame", "J", "F"])
        for clip, frame, j, f in record.rows:
            w.writerow([clip, frame, repr(j), repr(f)])
    with open(summary_path, "w") as fh:
        fh.write(f"MJ={record.mean_j!r}\nMF={record.mean_f!r}\n")
    return str(csv_path), str(summary_path)
