"""Trial records, search reports, the propose/observe loop and top-N summaries."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ..errors import NOutOfRange, SearchError
from ..graph import ParamCount

log = logging.getLogger(__name__)

REPORT_FORMAT = "etcnas.report/1"
TOP_N_GRID = (1, 5, 10, 20, 30)


@dataclass
class TrialRecord:
    trial_index: int
    sequence: tuple[int, ...]
    reward: float
    param_count: ParamCount | None = None
    wall_time: float = 0.0
    epochs: int = 0
    error: str | None = None
    # in-memory only (e.g. the trained child); never persisted
    artifact: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.sequence = tuple(int(v) for v in self.sequence)
        if not 0.0 <= self.reward <= 1.0:
            raise SearchError(f"reward {self.reward} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps({
            "type": "trial", "trial_index": self.trial_index, "sequence": list(self.sequence),
            "reward": self.reward,
            "param_count": asdict(self.param_count) if self.param_count else None,
            "wall_time": self.wall_time, "epochs": self.epochs, "error": self.error,
        })

    @classmethod
    def from_dict(cls, data: dict) -> "TrialRecord":
        data = {k: v for k, v in data.items() if k != "type"}
        pc = data.get("param_count")
        data["param_count"] = ParamCount(**pc) if pc else None
        return cls(**data)


@dataclass
class SearchReport:
    strategy: str
    space: dict
    budget: int
    records: list[TrialRecord] = field(default_factory=list)
    seed: int | None = None

    def __post_init__(self):
        for i, rec in enumerate(self.records):
            if rec.trial_index != i:
                raise SearchError(f"trial indices must be contiguous from 0; found {rec.trial_index} at {i}")

    def rewards(self) -> list[float]:
        return [r.reward for r in self.records]

    def best(self) -> TrialRecord:
        if not self.records:
            raise SearchError("empty report")
        return min(self.records, key=lambda r: (-r.reward, r.trial_index))

    def header_json(self) -> str:
        return json.dumps({
            "type": "header", "format": REPORT_FORMAT, "strategy": self.strategy,
            "space": self.space, "budget": self.budget, "seed": self.seed,
        })

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(self.header_json() + "\n")
            for rec in self.records:
                fh.write(rec.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SearchReport":
        header = None
        records = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError:
                    # a torn final line from an interrupted write is dropped
                    log.warning("%s:%d: skipping unreadable report line", path, lineno)
                    continue
                if data.get("type") == "header":
                    header = data
                elif data.get("type") == "trial":
                    records.append(TrialRecord.from_dict(data))
        if header is None:
            raise SearchError(f"{path}: report has no header line")
        if header.get("format") != REPORT_FORMAT:
            raise SearchError(f"{path}: unknown report format {header.get('format')!r}")
        return cls(header["strategy"], header["space"], header["budget"], records, header.get("seed"))


def top_n(report: SearchReport | Iterable[float], n: int) -> float:
    """Mean reward of the ``n`` best trials (descending, ties to the earlier trial)."""
    rewards = report.rewards() if isinstance(report, SearchReport) else list(report)
    if not 1 <= n <= len(rewards):
        raise NOutOfRange(f"n={n} outside [1, {len(rewards)}]")
    ranked = sorted(range(len(rewards)), key=lambda i: (-rewards[i], i))
    return float(np.mean([rewards[i] for i in ranked[:n]]))


def top_n_summary(report: SearchReport, grid=TOP_N_GRID) -> dict[int, float]:
    return {n: top_n(report, n) for n in grid if n <= len(report.records)}


class Strategy:
    """Search strategy: proposes decision sequences and learns from their rewards."""

    name = "base"
    # order-insensitive strategies may evaluate several proposals concurrently
    asynchronous = False

    def propose(self) -> list[int]:
        raise NotImplementedError

    def observe(self, record: TrialRecord) -> None:
        raise NotImplementedError


Evaluator = Callable[[list[int]], "float | TrialRecord"]


def _as_record(result, index: int, seq, elapsed: float) -> TrialRecord:
    if isinstance(result, TrialRecord):
        result.trial_index = index
        return result
    return TrialRecord(index, tuple(seq), float(result), wall_time=elapsed)


def _timed_call(evaluator, seq):
    started = time.perf_counter()
    result = evaluator(seq)
    return result, time.perf_counter() - started


def run_search(
    strategy: Strategy,
    evaluator: Evaluator,
    trials: int,
    space: dict | None = None,
    seed: int | None = None,
    report_path: str | Path | None = None,
    workers: int = 1,
) -> SearchReport:
    """propose -> evaluate -> observe for ``trials`` iterations.

    With ``report_path`` every finished trial is appended as one line; an existing file is
    replayed first (proposals are regenerated and must match the stored sequences), so an
    interrupted search resumes where it stopped.
    """
    report = SearchReport(strategy.name, space or {}, trials, seed=seed)
    done: list[TrialRecord] = []
    if report_path is not None and Path(report_path).exists():
        previous = SearchReport.load(report_path)
        if previous.strategy != strategy.name or previous.space != report.space:
            raise SearchError(f"{report_path}: existing report was produced by a different search")
        done = previous.records
    fh = None
    if report_path is not None:
        fh = open(report_path, "w")
        fh.write(report.header_json() + "\n")
        for rec in done[:trials]:
            fh.write(rec.to_json() + "\n")
        fh.flush()
    batch = max(1, workers) if strategy.asynchronous else 1
    pool = ProcessPoolExecutor(max_workers=workers) if batch > 1 else None
    try:
        i = 0
        while i < trials:
            seqs = [strategy.propose() for _ in range(min(batch, trials - i))]
            records: list[TrialRecord | None] = [None] * len(seqs)
            pending = []
            for j, seq in enumerate(seqs):
                idx = i + j
                if idx < len(done):
                    if list(done[idx].sequence) != list(seq):
                        raise SearchError(f"resume diverged at trial {idx}: stored sequence differs")
                    records[j] = done[idx]
                else:
                    pending.append(j)
            if pool is not None and len(pending) > 1:
                futures = {j: pool.submit(_timed_call, evaluator, seqs[j]) for j in pending}
                for j, fut in futures.items():
                    result, elapsed = fut.result()
                    records[j] = _as_record(result, i + j, seqs[j], elapsed)
            else:
                for j in pending:
                    result, elapsed = _timed_call(evaluator, seqs[j])
                    records[j] = _as_record(result, i + j, seqs[j], elapsed)
            for j, rec in enumerate(records):
                report.records.append(rec)
                if fh is not None and i + j >= len(done):
                    fh.write(rec.to_json() + "\n")
                    fh.flush()
                strategy.observe(rec)
                log.info("trial %d/%d reward %.4f", rec.trial_index + 1, trials, rec.reward)
            i += len(seqs)
    finally:
        if fh is not None:
            fh.close()
        if pool is not None:
            pool.shutdown()
    return report
