"""Soft overlap losses and hard-mask segmentation metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autonn import Tensor
from .errors import BadHyperparameters, EmptyClassSet, ShapeMismatch

SMOOTH = 1e-6


def one_hot(labels, num_classes, dtype=np.float32):
    """``(N, *spatial)`` labels -> ``(N, K, *spatial)`` indicator array."""
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes) + labels.shape[1:], dtype=dtype)
    for c in range(num_classes):
        out[:, c] = labels == c
    return out


def _prepare(pred: Tensor, target, class_set):
    k = pred.shape[1]
    target = np.asarray(target)
    if target.shape == pred.shape:
        onehot = target.astype(pred.dtype)
    elif target.shape == pred.shape[:1] + pred.shape[2:]:
        onehot = one_hot(target, k, pred.dtype)
    else:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} disagree")
    classes = list(range(1, k)) if class_set is None else list(class_set)
    if not classes:
        raise EmptyClassSet("class_set is empty")
    if any(not 0 <= c < k for c in classes):
        raise ShapeMismatch(f"class_set {classes} outside 0..{k - 1}")
    return onehot, classes


def _class_sums(pred, onehot, c):
    p = pred[:, c]
    g = onehot[:, c]
    return (p * g).sum(), p.sum(), float(g.sum())


def dice_loss(pred: Tensor, target, class_set=None, eps: float = SMOOTH) -> Tensor:
    """Mean over ``class_set`` of ``1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)``.

    ``target`` is either integer labels ``(N, *spatial)`` or a one-hot array
    shaped like ``pred``. The default class set is every foreground class.
    """
    onehot, classes = _prepare(pred, target, class_set)
    total = None
    for c in classes:
        inter, psum, gsum = _class_sums(pred, onehot, c)
        term = 1.0 - (inter * 2.0 + eps) / (psum + (gsum + eps))
        total = term if total is None else total + term
    return total * (1.0 / len(classes))


def tversky_loss(pred: Tensor, target, alpha=0.3, beta=0.7, class_set=None,
                 eps: float = SMOOTH) -> Tensor:
    """Mean over ``class_set`` of ``1 - TP / (TP + alpha*FP + beta*FN)`` (soft counts).

    The smoothing term is ``eps/2`` on both sides so that
    ``alpha = beta = 0.5`` reproduces :func:`dice_loss` exactly.
    """
    if alpha < 0 or beta < 0 or abs(alpha + beta - 1.0) > 1e-9:
        raise BadHyperparameters(f"need alpha, beta >= 0 with alpha + beta = 1, got {alpha}, {beta}")
    onehot, classes = _prepare(pred, target, class_set)
    half = eps / 2.0
    total = None
    for c in classes:
        tp, psum, gsum = _class_sums(pred, onehot, c)
        fp = psum - tp
        fn = gsum - tp
        term = 1.0 - (tp + half) / (tp + fp * alpha + fn * beta + half)
        total = term if total is None else total + term
    return total * (1.0 / len(classes))


LOSSES = {"dice": dice_loss, "tversky": tversky_loss}


# ---------------------------------------------------------------------------
# hard-mask metrics


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


def confusion_counts(pred_hard, target, cls: int) -> ConfusionCounts:
    """One-vs-rest counts of ``cls`` between two label arrays."""
    pred_hard, target = np.asarray(pred_hard), np.asarray(target)
    if pred_hard.shape != target.shape:
        raise ShapeMismatch(f"masks differ in shape: {pred_hard.shape} vs {target.shape}")
    p = pred_hard == cls
    g = target == cls
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, int(p.size) - tp - fp - fn, fn)


def confusion_table(pred_hard, target, num_classes) -> dict:
    """Per-class counts for every class ``0..num_classes-1``."""
    return {c: confusion_counts(pred_hard, target, c) for c in range(num_classes)}


def _ratio(num, den, counts):
    # Empty denominator: 1 if this class has no errors at all, else 0.
    if den == 0:
        return 1.0 if counts.fp == 0 and counts.fn == 0 else 0.0
    return num / den


@dataclass
class ClassScores:
    precision_std: float
    recall_std: float
    specificity: float
    paper_precision: float
    paper_recall: float
    dsc: float

    @classmethod
    def from_counts(cls, c: ConfusionCounts):
        return cls(
            precision_std=_ratio(c.tp, c.tp + c.fp, c),
            recall_std=_ratio(c.tp, c.tp + c.fn, c),
            specificity=_ratio(c.tn, c.tn + c.fp, c),
            paper_precision=_ratio(c.tp, c.tp + c.fn, c),
            paper_recall=_ratio(c.tn, c.tn + c.fp, c),
            dsc=_ratio(2 * c.tp, 2 * c.tp + c.fn + c.fp, c),
        )


@dataclass
class MetricReport:
    """Per-class scores plus their macro average.

    ``paper_precision`` is TP/(TP+FN) and ``paper_recall`` is TN/(TN+FP),
    reported next to the conventional ``precision_std``/``recall_std``.
    """

    per_class: dict = field(default_factory=dict)
    macro: ClassScores | None = None
    pooled: ClassScores | None = None
    counts: dict = field(default_factory=dict)

    @property
    def dsc(self):
        return self.macro.dsc

    def to_dict(self):
        return {
            "per_class": {str(k): asdict(v) for k, v in self.per_class.items()},
            "macro": asdict(self.macro),
            "pooled": asdict(self.pooled),
            "counts": {str(k): asdict(v) for k, v in self.counts.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(
            per_class={int(k): ClassScores(**v) for k, v in d["per_class"].items()},
            macro=ClassScores(**d["macro"]),
            pooled=ClassScores(**d["pooled"]),
            counts={int(k): ConfusionCounts(**v) for k, v in d["counts"].items()},
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def csv_header(self) -> str:
        return "recall,precision,dsc"

    def to_csv_row(self) -> str:
        """Recall, precision, DSC: the results-table column order."""
        m = self.macro
        return f"{m.paper_recall:.6f},{m.paper_precision:.6f},{m.dsc:.6f}"


def metrics(counts) -> MetricReport:
    """Scores from a :class:`ConfusionCounts` or a ``{class: counts}`` mapping.

    For a mapping, the macro average runs over the foreground classes (all
    keys except 0 when more than one class is present) and ``pooled`` scores
    the summed foreground counts.
    """
    if isinstance(counts, ConfusionCounts):
        counts = {1: counts}
    counts = dict(counts)
    per_class = {c: ClassScores.from_counts(v) for c, v in counts.items()}
    fg = [c for c in counts if c != 0] or list(counts)
    names = ClassScores.__dataclass_fields__
    macro = ClassScores(**{n: float(np.mean([getattr(per_class[c], n) for c in fg])) for n in names})
    pooled_counts = ConfusionCounts()
    for c in fg:
        pooled_counts = pooled_counts + counts[c]
    return MetricReport(per_class, macro, ClassScores.from_counts(pooled_counts), counts)
