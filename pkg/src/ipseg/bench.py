"""Wall-clock and peak-memory measurement of the training pipelines."""
from __future__ import annotations

import csv
import gc
import io
import json
import resource
import time
from dataclasses import asdict, dataclass, field

from .autonn import TRACKER
from .errors import DuplicatePipeline, UsageError
from .segloss import MetricReport
from .trainer import HyperParams, train

CSV_COLUMNS = ("pipeline", "epochs", "total_s", "per_epoch_s", "peak_tracked_bytes",
               "peak_rss_bytes", "recall", "precision", "dsc")


@dataclass
class BenchRecord:
    pipeline: str
    epochs: int
    repeats: int
    total_seconds: float
    per_epoch_seconds: list
    peak_tracked_bytes: int
    largest_allocation: int
    peaks_per_repeat: list
    peak_rss_bytes: int | None = None
    config: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def per_epoch_mean(self):
        return self.total_seconds / max(self.epochs, 1)

    def to_dict(self):
        return asdict(self)


def _rss_bytes():
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def run_pipeline_bench(pipeline, cfg, data, hp: HyperParams, repeats: int = 3, keep=None):
    """Train ``pipeline`` ``repeats`` times under the allocation tracker.

    Time is averaged over repeats; the tracked peak is the high-water mark of
    engine-owned bytes above what was live before the run. Pass a list as
    ``keep`` to receive the last ``(checkpoint, history)``.
    """
    if repeats < 1:
        raise UsageError("repeats must be >= 1")
    totals, epochs_acc, peaks, largest = [], None, [], 0
    result = None
    for _ in range(repeats):
        result = None
        gc.collect()
        with TRACKER.session() as session:
            t0 = time.perf_counter()
            result = train(pipeline, cfg, data, hp)
            totals.append(time.perf_counter() - t0)
        peaks.append(session.peak)
        largest = max(largest, session.largest)
        per_epoch = [h[2] for h in result[1]]
        epochs_acc = per_epoch if epochs_acc is None else [a + b for a, b in zip(epochs_acc, per_epoch)]
    if keep is not None:
        keep.append(result)
    ckpt = result[0]
    return BenchRecord(
        pipeline=pipeline,
        epochs=hp.epochs,
        repeats=repeats,
        total_seconds=sum(totals) / repeats,
        per_epoch_seconds=[s / repeats for s in epochs_acc],
        peak_tracked_bytes=max(peaks),
        largest_allocation=largest,
        peaks_per_repeat=peaks,
        peak_rss_bytes=_rss_bytes(),
        config={"net": ckpt.net_config.to_dict(), "hyperparams": hp.to_dict()},
        seed=hp.seed,
    )


def reduction(subject: float, reference: float) -> float:
    """``1 - subject/reference``: the fraction saved by ``subject``."""
    if reference == 0:
        return 0.0 if subject == 0 else float("-inf")
    return 1.0 - subject / reference


@dataclass
class ComparisonReport:
    subject: str
    reference: str
    time_reduction: dict
    memory_reduction: dict
    records: list
    scores: dict = field(default_factory=dict)

    @property
    def headline(self):
        key = f"{self.subject}/{self.reference}"
        return {"time_reduction": self.time_reduction[key], "memory_reduction": self.memory_reduction[key]}

    def to_dict(self):
        return {
            "subject": self.subject,
            "reference": self.reference,
            "time_reduction": self.time_reduction,
            "memory_reduction": self.memory_reduction,
            "records": [r.to_dict() for r in self.records],
            "scores": {k: v.to_dict() for k, v in self.scores.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            subject=d["subject"],
            reference=d["reference"],
            time_reduction=d["time_reduction"],
            memory_reduction=d["memory_reduction"],
            records=[BenchRecord(**r) for r in d["records"]],
            scores={k: MetricReport.from_dict(v) for k, v in d["scores"].items()},
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            s = self.scores.get(r.pipeline)
            m = s.macro if s is not None else None
            w.writerow([
                r.pipeline, r.epochs, f"{r.total_seconds:.6f}", f"{r.per_epoch_mean:.6f}",
                r.peak_tracked_bytes, "" if r.peak_rss_bytes is None else r.peak_rss_bytes,
                "" if m is None else f"{m.paper_recall:.6f}",
                "" if m is None else f"{m.paper_precision:.6f}",
                "" if m is None else f"{m.dsc:.6f}",
            ])
        return buf.getvalue()


def compare(records, metric_reports=None, subject="ip", reference="vol3d") -> ComparisonReport:
    """Pairwise time and memory reductions between benchmark records.

    Keys are ``"a/b"`` meaning ``1 - value(a)/value(b)``.
    """
    records = list(records)
    if len(records) < 2:
        raise UsageError("compare needs at least two records")
    names = [r.pipeline for r in records]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DuplicatePipeline(f"duplicate pipelines: {dupes}")
    if subject not in names:
        subject = names[0]
    if reference not in names or reference == subject:
        reference = next(n for n in names if n != subject)
    by = {r.pipeline: r for r in records}
    time_red, mem_red = {}, {}
    for a in names:
        for b in names:
            if a != b:
                time_red[f"{a}/{b}"] = reduction(by[a].total_seconds, by[b].total_seconds)
                mem_red[f"{a}/{b}"] = reduction(by[a].peak_tracked_bytes, by[b].peak_tracked_bytes)
    return ComparisonReport(subject, reference, time_red, mem_red, records, dict(metric_reports or {}))
