"""Sequential evaluation protocol, metrics, learner split, and grid search.

Every event's engagement is predicted from the learner's earlier events only,
then the label is revealed and the model state moves on. Per-learner confusion
counts start at each learner's second event (the first has no history for any
model), and aggregate metrics weight each learner by their share of evaluated
events.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import EngagementEvent
from .errors import DataError, OrderingError, SchemaVersionError
from .models import LearnerState, ModelConfig, build_model

REPORT_SCHEMA_VERSION = 1

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def record(self, predicted: int, actual: int) -> None:
        if actual == 1:
            if predicted == 1:
                self.tp += 1
            else:
                self.fn += 1
        else:
            if predicted == 1:
                self.fp += 1
            else:
                self.tn += 1


def compute_metrics(counts: ConfusionCounts) -> dict[str, float]:
    """Accuracy, precision, recall, F1 with zero-denominator cases mapped to 0."""
    if counts.total == 0:
        raise DataError("cannot compute metrics over empty confusion counts")
    accuracy = (counts.tp + counts.tn) / counts.total
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1}


@dataclass
class LearnerResult:
    learner_id: str
    counts: ConfusionCounts
    events: int
    evaluated: int
    unique_kcs: int

    @property
    def topic_sparsity(self) -> float:
        # unique KCs per event; higher means the learner's topics rarely repeat
        return self.unique_kcs / self.events if self.events else 0.0

    def metrics(self) -> dict[str, float]:
        if self.evaluated == 0:
            return {name: 0.0 for name in METRIC_NAMES}
        return compute_metrics(self.counts)


@dataclass
class EvalReport:
    model: str
    config: dict
    dataset: dict
    weighted: dict[str, float]
    per_learner: list[dict]
    seed: int | None = None
    split: str | None = None
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "model": self.model,
            "config": self.config,
            "seed": self.seed,
            "split": self.split,
            "dataset": self.dataset,
            "weighted": self.weighted,
            "per_learner": self.per_learner,
        }

    def to_json_bytes(self) -> bytes:
        return (json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n").encode("utf-8")

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalReport":
        if raw.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"unsupported report schema {raw.get('schema_version')!r}")
        return cls(model=raw["model"], config=raw["config"], dataset=raw["dataset"],
                   weighted=raw["weighted"], per_learner=raw["per_learner"],
                   seed=raw.get("seed"), split=raw.get("split"))

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"unreadable report {path}: {exc}") from exc
        return cls.from_dict(raw)

    def text_table(self) -> str:
        lines = [
            f"model: {self.model}",
            f"dataset: {self.dataset}",
            "",
            f"{'metric':<12}{'weighted':>10}",
        ]
        for name in METRIC_NAMES:
            lines.append(f"{name:<12}{self.weighted[name]:>10.3f}")
        return "\n".join(lines) + "\n"


def _group_by_learner(events: Sequence[EngagementEvent]) -> dict[str, list[EngagementEvent]]:
    grouped: dict[str, list[EngagementEvent]] = {}
    for event in events:
        grouped.setdefault(event.learner_id, []).append(event)
    return grouped


def _check_ordering(grouped: dict[str, list[EngagementEvent]]) -> None:
    for learner_id, stream in grouped.items():
        for position, event in enumerate(stream):
            if event.order != position:
                raise OrderingError(
                    f"learner {learner_id!r}: event at position {position} "
                    f"carries order {event.order}; orders must be gap-free from 0")


def _result_to_dict(result: LearnerResult) -> dict:
    counts = result.counts
    row = {
        "learner_id": result.learner_id,
        "events": result.events,
        "evaluated": result.evaluated,
        "unique_kcs": result.unique_kcs,
        "topic_sparsity": result.topic_sparsity,
        "tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn,
    }
    row.update(result.metrics())
    return row


def _evaluate_learner_stream(cfg: ModelConfig, stream: Sequence[EngagementEvent],
                             model=None, state: LearnerState | None = None) -> LearnerResult:
    if model is None:
        model = build_model(cfg)
    if state is None:
        state = LearnerState()
    counts = ConfusionCounts()
    kcs: set[int] = set()
    evaluated = 0
    for position, event in enumerate(stream):
        try:
            _, predicted = model.predict_and_update(state, event)
        except DataError as exc:
            raise type(exc)(
                f"{exc} [learner {event.learner_id!r}, order {event.order}]") from exc
        if position >= 1:  # cold-start prediction is emitted but not scored
            counts.record(predicted, event.label)
            evaluated += 1
        kcs.update(kc for kc, _ in event.topics)
    return LearnerResult(learner_id=stream[0].learner_id, counts=counts,
                         events=len(stream), evaluated=evaluated,
                         unique_kcs=len(kcs))


def _evaluate_chunk(cfg: ModelConfig, streams: list[list[EngagementEvent]]) -> list[LearnerResult]:
    return [_evaluate_learner_stream(cfg, stream) for stream in streams]


def weighted_metrics(results: Iterable[LearnerResult]) -> dict[str, float]:
    """Activity-weighted aggregate: weight = evaluated events / total evaluated."""
    results = list(results)
    total = sum(r.evaluated for r in results)
    out = {name: 0.0 for name in METRIC_NAMES}
    if total == 0:
        return out
    for result in results:
        if result.evaluated == 0:
            continue
        metrics = result.metrics()
        weight = result.evaluated / total
        for name in METRIC_NAMES:
            out[name] += weight * metrics[name]
    return out


def evaluate_sequential(cfg: ModelConfig, events: Sequence[EngagementEvent],
                        jobs: int = 1, seed: int | None = None) -> EvalReport:
    """Run the sequential protocol over an ordered event stream.

    Per-learner models process learners independently (parallelized across
    ``jobs`` workers); global models consume the stream as one ordered pass.
    """
    cfg = cfg.validate()
    if not events:
        raise DataError("cannot evaluate an empty event stream")
    grouped = _group_by_learner(events)
    _check_ordering(grouped)
    model = build_model(cfg)

    if model.is_global:
        states: dict[str, LearnerState] = {}
        counts: dict[str, ConfusionCounts] = {}
        kcs: dict[str, set[int]] = {}
        evaluated: dict[str, int] = {}
        positions: dict[str, int] = {}
        for event in events:
            learner = event.learner_id
            state = states.setdefault(learner, LearnerState())
            _, predicted = model.predict_and_update(state, event)
            position = positions.get(learner, 0)
            if position >= 1:
                counts.setdefault(learner, ConfusionCounts()).record(predicted, event.label)
                evaluated[learner] = evaluated.get(learner, 0) + 1
            positions[learner] = position + 1
            kcs.setdefault(learner, set()).update(kc for kc, _ in event.topics)
        results = [
            LearnerResult(learner_id=learner,
                          counts=counts.get(learner, ConfusionCounts()),
                          events=positions[learner],
                          evaluated=evaluated.get(learner, 0),
                          unique_kcs=len(kcs[learner]))
            for learner in sorted(grouped)
        ]
    else:
        streams = [grouped[learner] for learner in sorted(grouped)]
        if jobs > 1 and len(streams) > 1:
            chunks = [streams[i::jobs] for i in range(jobs)]
            chunks = [c for c in chunks if c]
            with concurrent.futures.ProcessPoolExecutor(max_workers=len(chunks)) as pool:
                parts = list(pool.map(_evaluate_chunk, itertools.repeat(cfg), chunks))
            results = sorted((r for part in parts for r in part),
                             key=lambda r: r.learner_id)
        else:
            results = [_evaluate_learner_stream(cfg, stream) for stream in streams]

    dataset = {
        "learners": len(grouped),
        "events": len(events),
        "evaluated_events": sum(r.evaluated for r in results),
        "unique_kcs": len({kc for e in events for kc, _ in e.topics}),
    }
    return EvalReport(
        model=cfg.kind,
        config=cfg.to_dict(),
        dataset=dataset,
        weighted=weighted_metrics(results),
        per_learner=[_result_to_dict(r) for r in results],
        seed=seed,
    )


def split_learners(learner_ids: Iterable[str], train_fraction: float,
                   seed: int) -> tuple[list[str], list[str]]:
    """Deterministic disjoint train/test split of learner ids."""
    ids = sorted(set(learner_ids))
    if len(ids) < 2:
        raise DataError(f"need at least 2 learners to split, got {len(ids)}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    shuffled = ids[:]
    random.Random(seed).shuffle(shuffled)
    n_train = min(max(int(len(ids) * train_fraction), 1), len(ids) - 1)
    return sorted(shuffled[:n_train]), sorted(shuffled[n_train:])


GRID_PARAMS = ("init_var", "tau", "kt_noise", "beta_sq", "top_k",
               "default_rate", "init_mean")

# Search ranges used when no explicit grid is supplied: initial variance over
# [0.1, 2] in 0.1 steps, KT noise over [0, 0.3] in 0.05 steps, and the drift
# candidates; beta stays fixed at 0.5 for the reformulated models.
DEFAULT_GRIDS = {
    "gaussian": {
        "init_var": [round(0.1 * i, 10) for i in range(1, 21)],
        "tau": [0.0, 0.01, 0.05, 0.1],
    },
    "kt": {
        "kt_noise": [round(0.05 * i, 10) for i in range(0, 7)],
        "tau": [0.0, 0.01, 0.05, 0.1],
    },
}


def default_grid(kind: str) -> dict[str, list]:
    if kind == "multiskill-kt":
        return {k: list(v) for k, v in DEFAULT_GRIDS["kt"].items()}
    if kind in ("persistence", "majority"):
        return {"default_rate": [0.75]}
    return {k: list(v) for k, v in DEFAULT_GRIDS["gaussian"].items()}


def _grid_points(grid: dict[str, list]) -> list[dict]:
    if not grid:
        raise DataError("grid spec is empty")
    for name, values in grid.items():
        if name not in GRID_PARAMS:
            raise DataError(
                f"unknown grid parameter {name!r}; allowed: {', '.join(GRID_PARAMS)}")
        if not values:
            raise DataError(f"grid parameter {name!r} has no values")
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*grid.values())]


def _evaluate_grid_point(args) -> dict:
    base_cfg, point, events = args
    row = dict(point)
    try:
        cfg = dataclasses.replace(base_cfg, **point).validate()
        report = evaluate_sequential(cfg, events)
        row.update({name: report.weighted[name] for name in METRIC_NAMES})
        row["error"] = ""
    except Exception as exc:  # a failing point is recorded, not fatal
        for name in METRIC_NAMES:
            row[name] = None
        row["error"] = str(exc)
    return row


def grid_search(base_cfg: ModelConfig, grid: dict[str, list],
                train_events: Sequence[EngagementEvent],
                objective: str = "f1", jobs: int = 1,
                ) -> tuple[ModelConfig, list[dict]]:
    """Evaluate every grid point on the training learners; pick the best.

    Selection is by the objective metric, ties broken by smaller init_var,
    then smaller kt_noise, then smaller tau. Failing points are recorded in
    the sweep table and skipped.
    """
    if objective not in METRIC_NAMES:
        raise ValueError(f"objective must be one of {METRIC_NAMES}, got {objective!r}")
    points = _grid_points(grid)
    tasks = [(base_cfg, point, list(train_events)) for point in points]
    if jobs > 1 and len(points) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_evaluate_grid_point, tasks))
    else:
        rows = [_evaluate_grid_point(task) for task in tasks]

    valid = [row for row in rows if not row["error"]]
    if not valid:
        raise DataError("every grid point failed; see the sweep table for errors")

    def sort_key(row: dict):
        cfg = dataclasses.replace(base_cfg, **{k: row[k] for k in grid})
        return (-row[objective], cfg.init_var, cfg.kt_noise, cfg.tau)

    best_row = min(valid, key=sort_key)
    best_cfg = dataclasses.replace(base_cfg, **{k: best_row[k] for k in grid}).validate()
    return best_cfg, rows


def write_sweep_csv(path: str | Path, rows: list[dict], grid: dict[str, list]) -> None:
    import csv

    fieldnames = list(grid) + list(METRIC_NAMES) + ["error"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


def comparison_table(reports: Sequence[EvalReport]) -> str:
    """Model-by-metric table across several reports."""
    width = max(len(r.model) for r in reports) + 2
    header = f"{'model':<{width}}" + "".join(f"{name:>11}" for name in METRIC_NAMES)
    lines = [header]
    for report in reports:
        lines.append(f"{report.model:<{width}}"
                     + "".join(f"{report.weighted[name]:>11.3f}" for name in METRIC_NAMES))
    return "\n".join(lines) + "\n"


def per_learner_csv_rows(report: EvalReport) -> list[dict]:
    """Rows for the learner-level scatter data: activity, sparsity, F1."""
    return [
        {"learner_id": row["learner_id"], "events": row["events"],
         "topic_sparsity": row["topic_sparsity"], "f1": row["f1"]}
        for row in report.per_learner
    ]
