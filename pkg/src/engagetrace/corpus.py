"""Join view logs with fragment annotations into ordered engagement events.

A view log row is one play interval of one lecture. Video time maps to
character position at a uniform 5,000 chars per 5 minutes, the interval's
coverage of each ~5,000-char fragment becomes a watch ratio, and the 75%
rule turns that into a binary engagement label. Events are ordered per
learner and written as line-delimited JSON.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping

from .content import FragmentAnnotation
from .errors import DataError, DuplicateLogError, MissingAnnotationError

ENGAGEMENT_THRESHOLD = 0.75
CHARS_PER_SECOND = 5000.0 / 300.0  # ~5,000 chars of transcript per 5 minutes

VIEW_LOG_FIELDS = ("learner_id", "lecture_id", "timestamp",
                   "start_seconds", "end_seconds")


@dataclass(frozen=True)
class EngagementEvent:
    learner_id: str
    lecture_id: str
    fragment_index: int
    order: int
    topics: tuple[tuple[int, float], ...]  # (kc_id, cosine), ranked
    label: int

    def __post_init__(self) -> None:
        if self.label not in (1, -1):
            raise DataError(f"label must be +1 or -1, got {self.label}")
        if not self.topics:
            raise DataError("event topics must be non-empty")
        kc_ids = [kc for kc, _ in self.topics]
        if len(set(kc_ids)) != len(kc_ids):
            raise DataError(f"duplicate kc_ids within event: {kc_ids}")


@dataclass(frozen=True)
class ViewLogRecord:
    learner_id: str
    lecture_id: str
    timestamp: float
    start_seconds: float
    end_seconds: float


def label_engagement(watch_ratio: float) -> int:
    """+1 iff at least 75% of the fragment was watched, else -1."""
    if not (isinstance(watch_ratio, (int, float)) and math.isfinite(watch_ratio)
            and 0.0 <= watch_ratio <= 1.0):
        raise ValueError(f"watch ratio must be finite in [0, 1], got {watch_ratio!r}")
    return 1 if watch_ratio >= ENGAGEMENT_THRESHOLD else -1


def _parse_timestamp(raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(raw).timestamp()
    except ValueError as exc:
        raise DataError(f"unparseable timestamp {raw!r}") from exc


def read_view_logs(path: str | Path) -> list[ViewLogRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != VIEW_LOG_FIELDS:
            raise DataError(
                f"view log header must be {','.join(VIEW_LOG_FIELDS)}, "
                f"got {reader.fieldnames}")
        for row in reader:
            records.append(ViewLogRecord(
                learner_id=row["learner_id"],
                lecture_id=row["lecture_id"],
                timestamp=_parse_timestamp(row["timestamp"]),
                start_seconds=float(row["start_seconds"]),
                end_seconds=float(row["end_seconds"]),
            ))
    return records


def _union_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


def _coverage(intervals: list[tuple[float, float]], lo: float, hi: float) -> float:
    covered = 0.0
    for s, e in intervals:
        covered += max(0.0, min(e, hi) - max(s, lo))
    return covered


def build_events(view_logs: Iterable[ViewLogRecord],
                 annotations: Iterable[FragmentAnnotation] | Mapping[tuple[str, int], FragmentAnnotation],
                 k: int,
                 lecture_allowlist: set[str] | None = None,
                 ) -> tuple[list[EngagementEvent], dict]:
    """Ordered engagement events plus a dataset summary.

    Rows sharing (learner, lecture, timestamp) form one view whose intervals
    are unioned before measuring per-fragment coverage; distinct timestamps
    stay distinct events even for the same fragment. Per-learner order is by
    timestamp with ties broken by (lecture_id, fragment_index); the returned
    global order interleaves learners by the same key.
    """
    if isinstance(annotations, Mapping):
        by_key = dict(annotations)
    else:
        by_key = {(a.lecture_id, a.fragment_index): a for a in annotations}
    fragment_counts: dict[str, int] = {}
    for lecture_id, index in by_key:
        fragment_counts[lecture_id] = max(fragment_counts.get(lecture_id, -1), index)
    for lecture_id, last_index in fragment_counts.items():
        for index in range(last_index + 1):
            if (lecture_id, index) not in by_key:
                raise DataError(
                    f"annotations for lecture {lecture_id!r} skip fragment {index}")

    seen_rows: set[tuple] = set()
    views: dict[tuple[str, str, float], list[tuple[float, float]]] = {}
    for row in view_logs:
        if lecture_allowlist is not None and row.lecture_id not in lecture_allowlist:
            continue
        fingerprint = (row.learner_id, row.lecture_id, row.timestamp,
                       row.start_seconds, row.end_seconds)
        if fingerprint in seen_rows:
            raise DuplicateLogError(f"duplicate view log record: {fingerprint}")
        seen_rows.add(fingerprint)
        if row.end_seconds < row.start_seconds:
            raise DataError(f"view interval ends before it starts: {fingerprint}")
        views.setdefault((row.learner_id, row.lecture_id, row.timestamp), []).append(
            (row.start_seconds * CHARS_PER_SECOND, row.end_seconds * CHARS_PER_SECOND))

    # (timestamp, learner, lecture, fragment) -> label, expanded per view
    raw_events: list[tuple[float, str, str, int, int]] = []
    for (learner_id, lecture_id, timestamp), intervals in views.items():
        merged = _union_intervals(intervals)
        last_index = fragment_counts.get(lecture_id, -1)
        if last_index < 0:
            raise MissingAnnotationError(
                f"no annotations for lecture {lecture_id!r} (fragment 0)")
        lecture_end = by_key[(lecture_id, last_index)].char_span[1]
        for lo, hi in merged:
            if lo >= lecture_end and not (lo == hi == lecture_end):
                raise MissingAnnotationError(
                    f"view log for lecture {lecture_id!r} reaches fragment "
                    f"{int(lo // by_key[(lecture_id, 0)].char_span[1])} beyond "
                    f"the last annotated fragment {last_index}")
            if hi > lecture_end:
                raise MissingAnnotationError(
                    f"view log for lecture {lecture_id!r} reaches beyond the "
                    f"last annotated fragment {last_index}")
        touched: set[int] = set()
        for lo, hi in merged:
            for index in range(last_index + 1):
                span = by_key[(lecture_id, index)].char_span
                if lo < span[1] and hi > span[0]:
                    touched.add(index)
            if lo == hi:  # opened the player but watched nothing measurable
                index = min(int(lo // max(by_key[(lecture_id, 0)].char_span[1], 1)),
                            last_index)
                touched.add(index)
        for index in sorted(touched):
            span = by_key[(lecture_id, index)].char_span
            ratio = _coverage(merged, span[0], span[1]) / (span[1] - span[0])
            raw_events.append((timestamp, learner_id, lecture_id, index,
                               label_engagement(min(ratio, 1.0))))

    raw_events.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    per_learner_order: dict[str, int] = {}
    events: list[EngagementEvent] = []
    kcs: set[int] = set()
    lectures: set[str] = set()
    for timestamp, learner_id, lecture_id, index, label in raw_events:
        annotation = by_key[(lecture_id, index)]
        if not annotation.topics:
            raise MissingAnnotationError(
                f"annotation for ({lecture_id!r}, {index}) has no topics")
        topics = tuple((t.kc.kc_id, t.cosine) for t in annotation.topics[:k])
        order = per_learner_order.get(learner_id, 0)
        per_learner_order[learner_id] = order + 1
        events.append(EngagementEvent(
            learner_id=learner_id, lecture_id=lecture_id, fragment_index=index,
            order=order, topics=topics, label=label))
        kcs.update(kc for kc, _ in topics)
        lectures.add(lecture_id)

    summary = {
        "learners": len(per_learner_order),
        "events": len(events),
        "unique_kcs": len(kcs),
        "lectures": len(lectures),
    }
    return events, summary


def select_cohort(events: Iterable[EngagementEvent], top_n_learners: int) -> list[EngagementEvent]:
    """Keep only events of the n most active learners (ties by learner_id)."""
    if top_n_learners < 1:
        raise ValueError(f"top_n_learners must be >= 1, got {top_n_learners}")
    events = list(events)
    counts: dict[str, int] = {}
    for event in events:
        counts[event.learner_id] = counts.get(event.learner_id, 0) + 1
    ranked = sorted(counts, key=lambda lid: (-counts[lid], lid))
    keep = set(ranked[:top_n_learners])
    return [e for e in events if e.learner_id in keep]


def event_to_json(event: EngagementEvent) -> str:
    return json.dumps({
        "learner_id": event.learner_id,
        "lecture_id": event.lecture_id,
        "fragment_index": event.fragment_index,
        "order": event.order,
        "topics": [[kc, cos] for kc, cos in event.topics],
        "label": event.label,
    }, ensure_ascii=False)


def event_from_json(line: str) -> EngagementEvent:
    try:
        raw = json.loads(line)
        return EngagementEvent(
            learner_id=raw["learner_id"],
            lecture_id=raw["lecture_id"],
            fragment_index=int(raw["fragment_index"]),
            order=int(raw["order"]),
            topics=tuple((int(kc), float(cos)) for kc, cos in raw["topics"]),
            label=int(raw["label"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad event line: {line[:120]!r} ({exc})") from exc


def write_events(path: str | Path, events: Iterable[EngagementEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event_to_json(event) + "\n")


def read_events(path: str | Path) -> list[EngagementEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                events.append(event_from_json(line))
    return events


def summarize_events(events: Iterable[EngagementEvent]) -> dict:
    learners, kcs, lectures = set(), set(), set()
    count = 0
    for event in events:
        count += 1
        learners.add(event.learner_id)
        lectures.add(event.lecture_id)
        kcs.update(kc for kc, _ in event.topics)
    return {"learners": len(learners), "events": count,
            "unique_kcs": len(kcs), "lectures": len(lectures)}
