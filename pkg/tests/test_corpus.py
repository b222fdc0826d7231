import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engagetrace.content import FragmentAnnotation, KnowledgeComponent, TopicScore
from engagetrace.corpus import (
    CHARS_PER_SECOND,
    EngagementEvent,
    ViewLogRecord,
    build_events,
    event_from_json,
    event_to_json,
    label_engagement,
    read_events,
    read_view_logs,
    select_cohort,
    summarize_events,
    write_events,
)
from engagetrace.errors import (
    DataError,
    DuplicateLogError,
    MissingAnnotationError,
)


def make_annotation(lecture_id, index, length=5000, titles=("A", "B")):
    start = index * 5000
    topics = tuple(
        TopicScore(KnowledgeComponent(i, t), 0.5, 0.4 + 0.1 * i)
        for i, t in enumerate(titles)
    )
    return FragmentAnnotation(lecture_id, index, (start, start + length), topics)


def seconds_for_chars(chars):
    return chars / CHARS_PER_SECOND


class TestLabelEngagement:
    def test_above_threshold(self):
        assert label_engagement(0.80) == 1

    def test_boundary_inclusive(self):
        assert label_engagement(0.75) == 1

    def test_below_threshold(self):
        assert label_engagement(0.50) == -1

    @pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan"), float("inf")])
    def test_out_of_range(self, bad):
        with pytest.raises(ValueError):
            label_engagement(bad)


class TestEngagementEvent:
    def test_validates_label(self):
        with pytest.raises(DataError):
            EngagementEvent("u", "l", 0, 0, ((1, 0.5),), 0)

    def test_validates_topics_non_empty(self):
        with pytest.raises(DataError):
            EngagementEvent("u", "l", 0, 0, (), 1)

    def test_validates_unique_kcs(self):
        with pytest.raises(DataError):
            EngagementEvent("u", "l", 0, 0, ((1, 0.5), (1, 0.6)), 1)

    def test_json_roundtrip(self):
        event = EngagementEvent("u1", "lec", 2, 7, ((3, 0.25), (9, 0.8)), -1)
        assert event_from_json(event_to_json(event)) == event


class TestBuildEvents:
    def test_full_watch_is_engaged(self):
        annotations = [make_annotation("L", 0)]
        logs = [ViewLogRecord("u", "L", 100.0, 0.0, seconds_for_chars(5000))]
        events, summary = build_events(logs, annotations, k=2)
        assert len(events) == 1
        assert events[0].label == 1
        assert events[0].order == 0
        assert events[0].topics == ((0, 0.4), (1, 0.5))
        assert summary == {"learners": 1, "events": 1, "unique_kcs": 2, "lectures": 1}

    def test_partial_watch_below_threshold(self):
        annotations = [make_annotation("L", 0)]
        logs = [ViewLogRecord("u", "L", 100.0, 0.0, seconds_for_chars(2000))]
        events, _ = build_events(logs, annotations, k=2)
        assert events[0].label == -1

    def test_threshold_boundary(self):
        annotations = [make_annotation("L", 0)]
        logs = [ViewLogRecord("u", "L", 100.0, 0.0, seconds_for_chars(3750))]
        events, _ = build_events(logs, annotations, k=2)
        assert events[0].label == 1

    def test_interval_spanning_fragments(self):
        annotations = [make_annotation("L", 0), make_annotation("L", 1),
                       make_annotation("L", 2, length=2345)]
        # watch chars [0, 9000): all of fragment 0, 80% of fragment 1
        logs = [ViewLogRecord("u", "L", 100.0, 0.0, seconds_for_chars(9000))]
        events, _ = build_events(logs, annotations, k=2)
        assert [(e.fragment_index, e.label) for e in events] == [(0, 1), (1, 1)]

    def test_out_of_order_timestamps_reordered(self):
        annotations = [make_annotation("L", 0), make_annotation("L", 1)]
        logs = [
            ViewLogRecord("u", "L", 200.0, seconds_for_chars(5000), seconds_for_chars(10_000)),
            ViewLogRecord("u", "L", 100.0, 0.0, seconds_for_chars(5000)),
        ]
        events, _ = build_events(logs, annotations, k=2)
        assert [(e.fragment_index, e.order) for e in events] == [(0, 0), (1, 1)]

    def test_same_timestamp_ties_by_lecture_and_fragment(self):
        annotations = [make_annotation("A", 0), make_annotation("B", 0)]
        logs = [
            ViewLogRecord("u", "B", 100.0, 0.0, 10.0),
            ViewLogRecord("u", "A", 100.0, 0.0, 10.0),
        ]
        events, _ = build_events(logs, annotations, k=1)
        assert [e.lecture_id for e in events] == ["A", "B"]

    def test_repeat_views_are_separate_events(self):
        annotations = [make_annotation("L", 0)]
        logs = [
            ViewLogRecord("u", "L", 100.0, 0.0, seconds_for_chars(5000)),
            ViewLogRecord("u", "L", 200.0, 0.0, seconds_for_chars(1000)),
        ]
        events, _ = build_events(logs, annotations, k=1)
        assert [(e.order, e.label) for e in events] == [(0, 1), (1, -1)]

    def test_same_timestamp_intervals_unioned(self):
        annotations = [make_annotation("L", 0)]
        # two overlapping intervals in the same view: union covers 80%
        logs = [
            ViewLogRecord("u", "L", 100.0, 0.0, seconds_for_chars(2500)),
            ViewLogRecord("u", "L", 100.0, seconds_for_chars(1000), seconds_for_chars(4000)),
        ]
        events, _ = build_events(logs, annotations, k=1)
        assert len(events) == 1
        assert events[0].label == 1

    def test_duplicate_log_record(self):
        annotations = [make_annotation("L", 0)]
        logs = [ViewLogRecord("u", "L", 100.0, 0.0, 10.0)] * 2
        with pytest.raises(DuplicateLogError):
            build_events(logs, annotations, k=1)

    def test_missing_annotation_names_fragment(self):
        annotations = [make_annotation("L", 0)]
        logs = [ViewLogRecord("u", "L", 100.0, 0.0, seconds_for_chars(7000))]
        with pytest.raises(MissingAnnotationError, match="L"):
            build_events(logs, annotations, k=1)

    def test_unknown_lecture(self):
        annotations = [make_annotation("L", 0)]
        logs = [ViewLogRecord("u", "M", 100.0, 0.0, 10.0)]
        with pytest.raises(MissingAnnotationError, match="M"):
            build_events(logs, annotations, k=1)

    def test_gapped_annotations_rejected(self):
        annotations = [make_annotation("L", 0), make_annotation("L", 2)]
        logs = [ViewLogRecord("u", "L", 100.0, 0.0, 10.0)]
        with pytest.raises(DataError, match="skip"):
            build_events(logs, annotations, k=1)

    def test_allowlist_filters_lectures(self):
        annotations = [make_annotation("A", 0), make_annotation("B", 0)]
        logs = [
            ViewLogRecord("u", "A", 100.0, 0.0, 10.0),
            ViewLogRecord("u", "B", 200.0, 0.0, 10.0),
        ]
        events, _ = build_events(logs, annotations, k=1, lecture_allowlist={"A"})
        assert [e.lecture_id for e in events] == ["A"]

    def test_top_k_truncates_topics(self):
        annotations = [make_annotation("L", 0, titles=("A", "B", "C", "D"))]
        logs = [ViewLogRecord("u", "L", 100.0, 0.0, 10.0)]
        events, _ = build_events(logs, annotations, k=2)
        assert len(events[0].topics) == 2

    def test_determinism(self):
        annotations = [make_annotation("L", 0), make_annotation("L", 1)]
        logs = [
            ViewLogRecord("u2", "L", 100.0, 0.0, seconds_for_chars(5000)),
            ViewLogRecord("u1", "L", 100.0, 0.0, seconds_for_chars(800)),
            ViewLogRecord("u1", "L", 150.0, seconds_for_chars(5000), seconds_for_chars(10_000)),
        ]
        first, _ = build_events(list(logs), annotations, k=2)
        second, _ = build_events(list(reversed(logs)), annotations, k=2)
        assert first == second


class TestSelectCohort:
    def _events(self, spec):
        events = []
        for learner, count in spec.items():
            for order in range(count):
                events.append(EngagementEvent(learner, "L", 0, order, ((1, 0.5),), 1))
        return events

    def test_keeps_most_active_with_tie_rule(self):
        events = self._events({"a": 3, "b": 5, "c": 3})
        kept = select_cohort(events, 2)
        assert {e.learner_id for e in kept} == {"b", "a"}

    def test_n_larger_than_learners_is_identity(self):
        events = self._events({"a": 2, "b": 1})
        assert select_cohort(events, 10) == events

    def test_equal_counts_picks_smallest_id(self):
        events = self._events({"b": 2, "a": 2})
        kept = select_cohort(events, 1)
        assert {e.learner_id for e in kept} == {"a"}

    def test_precondition(self):
        with pytest.raises(ValueError):
            select_cohort([], 0)


class TestEventFiles:
    def test_file_roundtrip_identity(self, tmp_path):
        events = [
            EngagementEvent("u1", "L", 0, 0, ((1, 0.5), (2, 0.25)), 1),
            EngagementEvent("u1", "L", 1, 1, ((3, 0.75),), -1),
            EngagementEvent("u2", "M", 0, 0, ((1, 0.1),), 1),
        ]
        path = tmp_path / "events.jsonl"
        write_events(path, events)
        assert read_events(path) == events
        # byte-identical on rewrite
        second = tmp_path / "events2.jsonl"
        write_events(second, read_events(path))
        assert path.read_bytes() == second.read_bytes()

    def test_bad_line_reported(self, tmp_path):
        path = tmp_path / "events.jsonl"
        path.write_text('{"learner_id": "u"}\n', encoding="utf-8")
        with pytest.raises(DataError):
            read_events(path)

    def test_summarize(self):
        events = [
            EngagementEvent("u1", "L", 0, 0, ((1, 0.5),), 1),
            EngagementEvent("u2", "M", 0, 0, ((2, 0.5), (3, 0.5)), -1),
        ]
        assert summarize_events(events) == {
            "learners": 2, "events": 2, "unique_kcs": 3, "lectures": 2}


class TestReadViewLogs:
    def test_csv_parsing_and_iso_timestamps(self, tmp_path):
        path = tmp_path / "logs.csv"
        path.write_text(
            "learner_id,lecture_id,timestamp,start_seconds,end_seconds\n"
            "u1,L,2017-05-01T10:00:00,0,60\n"
            "u1,L,1493632800.5,60,90\n",
            encoding="utf-8")
        logs = read_view_logs(path)
        assert len(logs) == 2
        assert logs[0].start_seconds == 0.0
        assert logs[1].timestamp == 1493632800.5

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "logs.csv"
        path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_view_logs(path)


@given(st.floats(min_value=0.0, max_value=1.0))
@settings(max_examples=200)
def test_label_sign_matches_threshold(ratio):
    assert label_engagement(ratio) == (1 if ratio >= 0.75 else -1)
