"""Tracking-quality metrics: center location error, overlap, success rate.

A frame is counted as a success when the predicted box overlaps the
ground truth with IoU above 0.5. Ground-truth files are CSVs with a
mandatory ``frame,x,y,w,h`` header using the top-left box convention.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .features import BoundingBox
from .metric import vor_overlap

SUCCESS_VOR = 0.5


@dataclass
class SequenceReport:
    """Per-frame CLE/VOR rows plus sequence-level aggregates."""

    per_frame: list[tuple[int, float, float]]
    mean_cle: float
    mean_vor: float
    success_rate: float
    coverage: float

    def to_dict(self) -> dict:
        return {
            "mean_cle": self.mean_cle,
            "mean_vor": self.mean_vor,
            "success_rate": self.success_rate,
            "coverage": self.coverage,
            "frames": len(self.per_frame),
        }


def cle(pred: BoundingBox, gt: BoundingBox) -> float:
    """Euclidean distance between box centers."""
    return math.hypot(pred.cx - gt.cx, pred.cy - gt.cy)


def summarize(
    preds: dict[int, BoundingBox], gt: dict[int, BoundingBox]
) -> SequenceReport:
    """Score predictions against ground truth, frame-index matched.

    Predicted frames missing from the ground truth are skipped and only
    reflected in the coverage ratio.
    """
    if not preds:
        raise ValueError("no predictions to evaluate")
    rows = []
    for frame in sorted(preds):
        if frame not in gt:
            continue
        rows.append(
            (frame, cle(preds[frame], gt[frame]), vor_overlap(preds[frame], gt[frame]))
        )
    if not rows:
        raise ValueError("predictions and ground truth share no frames")
    n = len(rows)
    return SequenceReport(
        per_frame=rows,
        mean_cle=sum(r[1] for r in rows) / n,
        mean_vor=sum(r[2] for r in rows) / n,
        success_rate=sum(1 for r in rows if r[2] > SUCCESS_VOR) / n,
        coverage=n / len(preds),
    )


def load_boxes_csv(path) -> dict[int, BoundingBox]:
    """Read a ``frame,x,y,w,h`` CSV with strictly increasing frame indices."""
    boxes: dict[int, BoundingBox] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != [
            "frame",
            "x",
            "y",
            "w",
            "h",
        ]:
            raise ValueError(f"{path}: expected header 'frame,x,y,w,h'")
        last = None
        for row in reader:
            if not row:
                continue
            frame = int(row[0])
            if last is not None and frame <= last:
                raise ValueError(f"{path}: frame indices must strictly increase")
            last = frame
            x, y, w, h = (float(v) for v in row[1:5])
            boxes[frame] = BoundingBox(x, y, w, h)
    if not boxes:
        raise ValueError(f"{path}: no box rows")
    return boxes


def save_boxes_csv(path, boxes: dict[int, BoundingBox]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "x", "y", "w", "h"])
        for frame in sorted(boxes):
            b = boxes[frame]
            writer.writerow([frame, f"{b.x:.4f}", f"{b.y:.4f}", f"{b.w:.4f}", f"{b.h:.4f}"])


def save_per_frame_csv(path, report: SequenceReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "cle", "vor"])
        for frame, c, v in report.per_frame:
            writer.writerow([frame, f"{c:.6f}", f"{v:.6f}"])
