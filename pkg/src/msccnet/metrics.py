"""Pixel-level F1 / mIoU and image-level ACC / AUC, pooled over an evaluation set."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .exceptions import ContractError, DataIOError, UndefinedMetricError


@dataclass
class EvalAccumulator:
    """Set-pooled confusion counts plus image-level (label, score, predicted label) triples.

    ``confusion[g, p]`` counts pixels with ground truth ``g`` predicted as ``p``.
    """

    k: int = 2
    confusion: np.ndarray = field(default=None)
    labels: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    predicted: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.confusion is None:
            self.confusion = np.zeros((self.k, self.k), dtype=np.int64)

    def add_masks(self, pred, gt) -> None:
        pred = np.asarray(pred).astype(np.int64).ravel()
        gt = np.asarray(gt).astype(np.int64).ravel()
        if pred.shape != gt.shape:
            raise ContractError(f"prediction size {pred.size} != ground truth size {gt.size}")
        for arr, name in ((pred, "prediction"), (gt, "ground truth")):
            if arr.size and (arr.min() < 0 or arr.max() >= self.k):
                raise ContractError(f"{name} values outside [0, {self.k})")
        self.confusion += np.bincount(gt * self.k + pred, minlength=self.k * self.k).reshape(self.k, self.k)

    def add_images(self, labels, scores, predicted=None) -> None:
        labels = np.asarray(labels).astype(int).ravel()
        scores = np.asarray(scores, dtype=float).ravel()
        if labels.shape != scores.shape:
            raise ContractError("labels and scores differ in length")
        if predicted is None:
            predicted = (scores > 0.5).astype(int)
        predicted = np.asarray(predicted).astype(int).ravel()
        self.labels.extend(labels.tolist())
        self.scores.extend(scores.tolist())
        self.predicted.extend(predicted.tolist())

    def merge(self, other: "EvalAccumulator") -> "EvalAccumulator":
        if other.k != self.k:
            raise ContractError("cannot merge accumulators with different class counts")
        return EvalAccumulator(
            self.k,
            self.confusion + other.confusion,
            self.labels + other.labels,
            self.scores + other.scores,
            self.predicted + other.predicted,
        )

    @property
    def n_pixels(self) -> int:
        return int(self.confusion.sum())

    def counts(self, cls: int = 1) -> tuple[int, int, int, int]:
        """(TP, FP, FN, TN) for one class."""
        c = self.confusion
        tp = int(c[cls, cls])
        fp = int(c[:, cls].sum() - tp)
        fn = int(c[cls, :].sum() - tp)
        return tp, fp, fn, self.n_pixels - tp - fp - fn


def f1_pixel(acc: EvalAccumulator, cls: int = 1) -> float:
    if acc.n_pixels == 0:
        raise UndefinedMetricError("F1 of an empty accumulator")
    tp, fp, fn, _ = acc.counts(cls)
    denom = 2 * tp + fp + fn
    if denom == 0:
        raise UndefinedMetricError("F1 undefined: no positive prediction or ground-truth pixel")
    return 2 * tp / denom


def class_iou(acc: EvalAccumulator) -> list[float | None]:
    """Per-class IoU; ``None`` for a class absent from both prediction and ground truth."""
    out: list[float | None] = []
    for c in range(acc.k):
        tp, fp, fn, _ = acc.counts(c)
        denom = tp + fp + fn
        out.append(tp / denom if denom else None)
    return out


def miou_pixel(acc: EvalAccumulator) -> float:
    """Mean IoU over the classes present in prediction or ground truth."""
    if acc.n_pixels == 0:
        raise UndefinedMetricError("mIoU of an empty accumulator")
    present = [v for v in class_iou(acc) if v is not None]
    return float(np.mean(present))


def acc_image(acc: EvalAccumulator) -> float:
    if not acc.labels:
        raise UndefinedMetricError("accuracy of an empty image set")
    return float(np.mean(np.asarray(acc.labels) == np.asarray(acc.predicted)))


def auc_score(labels, scores) -> float:
    """Mann-Whitney AUC with mid-ranks for ties."""
    labels = np.asarray(labels).astype(int).ravel()
    scores = np.asarray(scores, dtype=float).ravel()
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc_image(acc: EvalAccumulator) -> float:
    if not acc.labels:
        raise UndefinedMetricError("AUC of an empty image set")
    return auc_score(acc.labels, acc.scores)


def summarize(acc: EvalAccumulator) -> dict[str, float | None]:
    """All four metrics; any undefined one is reported as ``None``."""
    out: dict[str, float | None] = {}
    for name, fn in (("acc", acc_image), ("auc", auc_image), ("f1", f1_pixel), ("miou", miou_pixel)):
        try:
            out[name] = fn(acc)
        except UndefinedMetricError:
            out[name] = None
    out["n_images"] = len(acc.labels)
    out["n_pixels"] = acc.n_pixels
    return out


def format_report(report: dict) -> str:
    """Flat ``key=value`` lines, sorted, with fixed float formatting."""
    lines = []
    for key in sorted(report):
        v = report[key]
        if isinstance(v, float):
            v = f"{v:.6f}"
        elif v is None:
            v = "nan"
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, prefix: str | os.PathLike) -> tuple[str, str]:
    """Write ``<prefix>.txt`` (key=value) and ``<prefix>.json``; return both paths."""
    txt, js = f"{os.fspath(prefix)}.txt", f"{os.fspath(prefix)}.json"
    try:
        os.makedirs(os.path.dirname(txt) or ".", exist_ok=True)
        with open(txt, "w", encoding="utf-8") as fh:
            fh.write(format_report(report))
        with open(js, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise DataIOError(f"cannot write metrics report {txt!r}: {exc.strerror}") from exc
    return txt, js
