"""Trial loop: child evaluation, full vs partial training, budget ledger, final reports."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controllers import SearchReport, Strategy, TrialRecord, make_strategy, run_search, top_n_summary
from .engine import TrainConfig, accuracy, init_params, predict, to_input, train
from .engine.checkpoint import load_checkpoint, save_checkpoint
from .engine.model import ModelInstance
from .graph import count_params, serialize
from .ingest.dataset import Dataset, stratified_indices
from .metrics import TABLE_COLUMNS, confusion, scores, table_row
from .space import SpaceConfig, decode

log = logging.getLogger(__name__)

FULL_EPOCHS = 40
PARTIAL_EPOCHS = 10
CONTINUATION_EPOCHS = 30

# Reference numbers from the original private-dataset study; shown for context only.
REFERENCE_FOOTER = (
    "Reference (original study, private dataset, not reproduced here):\n"
    "  partial training, 10-epoch children: child accuracy 77.61%, after 30-epoch continuation"
    " 79.72%, 263,368 params\n"
    "  full training, 40-epoch children: 82.86%, 111,560 params\n"
)


@dataclass
class SearchJob:
    space: SpaceConfig = field(default_factory=SpaceConfig)
    strategy: str = "rs"
    trials: int = 100
    child_epochs: int | None = None  # None -> 40 full / 10 partial
    partial: bool = False
    continuation_epochs: int = CONTINUATION_EPOCHS
    validation_fraction: float = 0.2
    seed: int = 0
    batch_size: int = 128
    initial_lr: float = 0.001
    lr_halving_period: int = 10
    workers: int = 1
    output_dir: str | None = None
    dtype: str = "float64"  # "float32" trades precision for speed and memory

    def __post_init__(self):
        if self.child_epochs is None:
            self.child_epochs = PARTIAL_EPOCHS if self.partial else FULL_EPOCHS
        if self.partial and self.continuation_epochs <= 0:
            raise ValueError("partial training needs continuation_epochs > 0")
        if self.trials < 1 or self.child_epochs < 1:
            raise ValueError("trials and child_epochs must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.initial_lr, self.lr_halving_period, self.batch_size,
                           self.child_epochs, self.seed)


@dataclass
class BudgetLedger:
    trial_epochs: int = 0
    continuation_epochs: int = 0

    @property
    def total(self) -> int:
        return self.trial_epochs + self.continuation_epochs

    def fraction_of(self, other: "BudgetLedger") -> float:
        return self.total / other.total


def planned_budget(trials: int, child_epochs: int, continuation_epochs: int = 0) -> BudgetLedger:
    return BudgetLedger(trials * child_epochs, continuation_epochs)


@dataclass
class SearchOutcome:
    report: SearchReport
    best: TrialRecord
    model: ModelInstance
    ledger: BudgetLedger
    top_n: dict[int, float]
    partial_estimate: float | None = None  # best child's validation accuracy after short training
    continued_accuracy: float | None = None  # same child after the continuation epochs
    test_scores: dict[str, float] | None = None
    checkpoint_path: str | None = None

    @property
    def params(self):
        return count_params(self.model.graph)


def validation_split(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified (search-train, search-validation) carve of the training split."""
    val_idx, train_idx = stratified_indices(data.labels, fraction, seed)
    return data.subset(train_idx), data.subset(val_idx)


@dataclass
class ChildEvaluator:
    """Picklable sequence -> TrialRecord callable used by the search loop and worker pools."""

    space: SpaceConfig
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    config: TrainConfig
    keep_model: bool = False
    dtype: str = "float64"

    @classmethod
    def from_datasets(cls, space, train_ds: Dataset, val_ds: Dataset, config: TrainConfig, keep_model=False,
                      dtype: str = "float64"):
        return cls(space, to_input(train_ds.features), train_ds.labels, to_input(val_ds.features),
                   val_ds.labels, config, keep_model, dtype)

    def __call__(self, sequence) -> TrialRecord:
        return evaluate_child(sequence, self, self.config.epochs)


def train_child(sequence, ev: ChildEvaluator, epochs: int) -> ModelInstance:
    graph = decode(sequence, ev.space)
    model = init_params(graph, ev.config.rng_seed, np.dtype(ev.dtype))
    model, _ = train(model, ev.x_train, ev.y_train, ev.config, epochs=epochs)
    return model


def evaluate_child(sequence, ev: ChildEvaluator, child_epochs: int) -> TrialRecord:
    """Train from scratch and score on the search-validation split; failures score 0."""
    started = time.perf_counter()
    try:
        model = train_child(sequence, ev, child_epochs)
        reward = accuracy(model, ev.x_val, ev.y_val)
    except Exception as exc:  # noqa: BLE001 - a broken child must not stop the search
        log.warning("child %s failed: %s", list(sequence), exc)
        return TrialRecord(0, tuple(sequence), 0.0, None, time.perf_counter() - started,
                           child_epochs, f"{type(exc).__name__}: {exc}")
    return TrialRecord(0, tuple(sequence), reward, count_params(model.graph),
                       time.perf_counter() - started, child_epochs,
                       artifact=model if ev.keep_model else None)


class _KeepBest(Strategy):
    """Delegating wrapper that holds on to the best child's trained model."""

    def __init__(self, inner: Strategy):
        self.inner = inner
        self.name = inner.name
        self.asynchronous = inner.asynchronous
        self.best: TrialRecord | None = None
        self.model: ModelInstance | None = None

    def propose(self):
        return self.inner.propose()

    def observe(self, record: TrialRecord) -> None:
        if self.best is None or record.reward > self.best.reward:
            self.best = record
            self.model = record.artifact
        record.artifact = None
        self.inner.observe(record)


def _outdir(job: SearchJob) -> Path | None:
    if job.output_dir is None:
        return None
    path = Path(job.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_job(job: SearchJob, data: Dataset, test: Dataset | None = None, evaluator=None) -> SearchOutcome:
    """Run the search, then finalize the best child (continuing it in partial mode)."""
    out = _outdir(job)
    train_ds, val_ds = validation_split(data, job.validation_fraction, job.seed)
    cfg = job.train_config()
    child_eval = ChildEvaluator.from_datasets(job.space, train_ds, val_ds, cfg, keep_model=True, dtype=job.dtype)
    strategy = _KeepBest(make_strategy(job.strategy, job.space, job.seed))
    report = run_search(
        strategy, evaluator or child_eval, job.trials, job.space.to_dict(), job.seed,
        report_path=out / "report.jsonl" if out else None, workers=job.workers,
    )
    best = report.best()
    ledger = BudgetLedger(sum(r.epochs for r in report.records))
    model = strategy.model if strategy.best is not None and strategy.best.trial_index == best.trial_index else None
    if model is None:
        # resumed run (or external evaluator): training is deterministic, so rebuild the child
        model = train_child(best.sequence, child_eval, job.child_epochs)
    outcome = SearchOutcome(report, best, model, ledger, top_n_summary(report))
    if job.partial:
        outcome.partial_estimate = best.reward
        ckpt = (out / "best_partial.ckpt") if out else None
        if ckpt is not None:
            save_checkpoint(model, ckpt)
            model = load_checkpoint(ckpt)
        model, _ = train(model, child_eval.x_train, child_eval.y_train, cfg, epochs=job.continuation_epochs)
        ledger.continuation_epochs = job.continuation_epochs
        outcome.model = model
        outcome.continued_accuracy = accuracy(model, child_eval.x_val, child_eval.y_val)
    if test is not None and len(test):
        y_pred = predict(model, to_input(test.features))
        outcome.test_scores = scores(confusion(test.labels, y_pred, job.space.num_classes))
    if out is not None:
        outcome.checkpoint_path = str(out / "best.ckpt")
        save_checkpoint(outcome.model, outcome.checkpoint_path)
        (out / "best_graph.json").write_text(serialize(outcome.model.graph))
        (out / "summary.txt").write_text(render_summary(job, outcome))
        (out / "top_n.csv").write_text(top_n_csv({job.strategy: outcome.top_n}))
        if outcome.test_scores is not None:
            (out / "metrics.csv").write_text(metrics_csv(outcome.test_scores, outcome.params))
    return outcome


def metrics_csv(test_scores: dict[str, float], params) -> str:
    row = table_row(test_scores, params.total, params.trainable)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(TABLE_COLUMNS), lineterminator="\n")
    writer.writeheader()
    writer.writerow(row)
    return buf.getvalue()


def top_n_csv(summaries: dict[str, dict[int, float]]) -> str:
    grid = sorted({n for s in summaries.values() for n in s})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", *[f"top{n}" for n in grid]])
    for name, summary in summaries.items():
        writer.writerow([name, *[f"{summary[n]:.6f}" if n in summary else "" for n in grid]])
    return buf.getvalue()


def render_summary(job: SearchJob, outcome: SearchOutcome) -> str:
    pc = outcome.params
    mode = "partial" if job.partial else "full"
    lines = [
        f"strategy {job.strategy}, {job.trials} trials, {mode} training ({job.child_epochs} epochs per child)",
        f"best trial {outcome.best.trial_index}: validation accuracy {outcome.best.reward * 100:.2f}%",
        f"best sequence {list(outcome.best.sequence)}",
        f"parameters: {pc.total:,} total, {pc.trainable:,} trainable",
        f"training budget: {outcome.ledger.trial_epochs} child epochs + "
        f"{outcome.ledger.continuation_epochs} continuation epochs = {outcome.ledger.total}",
    ]
    if outcome.continued_accuracy is not None:
        lines.append(f"child model accuracy {outcome.partial_estimate * 100:.2f}% -> full train accuracy "
                     f"{outcome.continued_accuracy * 100:.2f}%")
    for n, v in outcome.top_n.items():
        lines.append(f"top-{n} mean validation accuracy {v * 100:.2f}%")
    if outcome.test_scores is not None:
        s = outcome.test_scores
        lines.append(f"test: accuracy {s['accuracy']:.2f}%, weighted F1 {s['weighted_f1']:.2f}%, "
                     f"recall {s['weighted_recall']:.2f}%, precision {s['weighted_precision']:.2f}%")
    return "\n".join(lines) + "\n\n" + REFERENCE_FOOTER


@dataclass
class SweepRow:
    epochs: int
    top: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.top))

    def quartiles(self) -> list[float]:
        return [float(q) for q in np.quantile(self.top, [0.0, 0.25, 0.5, 0.75, 1.0])]


def sweep_row(report: SearchReport, epochs: int, n: int = 10) -> SweepRow:
    ranked = sorted(report.records, key=lambda r: (-r.reward, r.trial_index))
    return SweepRow(epochs, [r.reward for r in ranked[:min(n, len(ranked))]])


def epoch_sweep(job: SearchJob, data: Dataset, epoch_grid, evaluator_factory=None) -> list[SweepRow]:
    """One search per epoch budget; each row holds the top-10 validation rewards."""
    grid = list(epoch_grid)
    if not grid:
        raise ValueError("epoch grid must be non-empty")
    rows = []
    for epochs in grid:
        sub = replace(job, child_epochs=epochs, partial=False,
                      output_dir=str(Path(job.output_dir) / f"epochs_{epochs}") if job.output_dir else None)
        evaluator = evaluator_factory(epochs) if evaluator_factory else None
        outcome = run_job(sub, data, evaluator=evaluator)
        rows.append(sweep_row(outcome.report, epochs))
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epochs", "min", "q1", "median", "q3", "max", "mean", "n"])
    for row in rows:
        writer.writerow([row.epochs, *[f"{v:.6f}" for v in row.quartiles()], f"{row.mean:.6f}", len(row.top)])
    return buf.getvalue()


def make_separable_dataset(n: int = 2000, length: int = 32, num_classes: int = 2, seed: int = 0,
                           width: int = 160) -> Dataset:
    """Balanced synthetic bytes; class c draws uniformly from a band whose start rises with c.

    Per-byte bands overlap, but the per-sample mean separates the classes with a wide margin,
    so the set is linearly separable (and learnable by global average pooling).
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    step = (255 - width) / max(num_classes - 1, 1)
    low = np.round(labels * step).astype(np.int64)
    features = low[:, None] + rng.integers(0, width + 1, size=(n, length))
    return Dataset(features.astype(np.uint8), labels, [f"class{c}" for c in range(num_classes)])
