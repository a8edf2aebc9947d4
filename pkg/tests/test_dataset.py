import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spanqa.dataset import (
    QARecord,
    QuestionDraft,
    ReviewCheckers,
    TemplateWriter,
    build_dataset,
    build_record,
    dataset_stats,
    dedup_and_balance,
    dump_records,
    read_records,
    record_from_dict,
    record_to_dict,
    review_record,
    schema_problems,
    split_by_video,
    write_records,
)
from spanqa.events import EventNode
from spanqa.spans import SpanSet

DESCS = ["A man opens the door", "A dog sleeps on the rug", "A woman pours coffee", "A child kicks a ball", "A cat jumps on the table"]


def node(eid, *pairs, desc=None, vid="v1"):
    return EventNode(eid, SpanSet.from_pairs(pairs), desc or eid, (), vid)


def pool(vid="v1"):
    return [node(f"e{i}", (10 * i, 10 * i + 8), desc=d, vid=vid) for i, d in enumerate(DESCS)]


def record(vid="v1", eid="e0", question="Which event is shown from 1.00s to 5.00s?", answer="A", spans=((1, 5),)):
    return QARecord(
        video_id=vid,
        event_id=eid,
        time_spans=SpanSet.from_pairs(spans),
        event_description="a thing",
        grounding_query="Find when the man opens the door.",
        question=question,
        options={"A": "opens the door", "B": "pours coffee", "C": "kicks a ball", "D": "jumps high"},
        correct_answer=answer,
    )


class DeicticWriter(TemplateWriter):
    def __init__(self, attempts_deictic):
        self.attempts_deictic = attempts_deictic

    def grounding_query(self, node, attempt):
        if attempt < self.attempts_deictic:
            return "Find this clip where it happens."
        return super().grounding_query(node, attempt)


class TestBuildRecord:
    def test_inherits_spans(self):
        p = pool()
        n = node("x", (61.0, 75.5), desc="A bird lands")
        assert build_record(n, p + [n]).time_spans.to_pairs() == [(61.0, 75.5)]

    def test_merges_overlap(self):
        n = node("x", (10, 20), desc="A bird lands")
        again = node("y", (18, 25), desc="A bird lands")
        assert build_record(n, pool() + [again]).time_spans.to_pairs() == [(10.0, 25.0)]

    def test_distractors(self):
        p = pool()[:4]
        r = build_record(p[0], p, seed=5)
        texts = list(r.options.values())
        assert len(set(texts)) == 4
        assert r.options[r.correct_answer] == DESCS[0]
        assert sorted(t for t in texts if t != DESCS[0]) == sorted(DESCS[1:4])
        assert not schema_problems(r)

    def test_repeated_event_is_multi_span(self):
        p = pool() + [node("e9", (80, 85), desc=DESCS[0])]
        r = build_record(p[0], p)
        assert r.time_spans.to_pairs() == [(0.0, 8.0), (80.0, 85.0)]

    def test_pool_too_small(self):
        p = pool()[:3]
        with pytest.raises(ValueError):
            build_record(p[0], p)

    def test_deictic_rebuilt_once_then_error(self):
        p = pool()
        assert "this clip" not in build_record(p[0], p, DeicticWriter(1)).grounding_query
        with pytest.raises(ValueError, match="deictic"):
            build_record(p[0], p, DeicticWriter(2))

    def test_seeded(self):
        p = pool()
        assert build_record(p[1], p, seed=3) == build_record(p[1], p, seed=3)


class TestReview:
    def test_passes(self):
        assert review_record(record()).accepted

    def test_schema(self):
        rep = review_record(record(answer=None))
        assert rep.failed_gate == "schema"
        assert list(rep.verdicts) == ["schema"]

    def test_language(self):
        rep = review_record(record(question="What happens in this clip from 1.00s to 5.00s?"))
        assert rep.failed_gate == "language"

    def test_locality(self):
        rep = review_record(record(question="What happens from 30.00s to 40.00s?"))
        assert rep.failed_gate == "temporal_locality"

    def test_guesser_is_order_free(self):
        r = record(question="Which event shows the door?")
        assert review_record(r).failed_gate == "text_only"
        swapped = QARecord(**{**r.__dict__, "options": {"A": r.options["B"], "B": r.options["A"], "C": r.options["C"], "D": r.options["D"]}, "correct_answer": "B"})
        assert review_record(swapped).failed_gate == "text_only"

    def test_text_only(self):
        class Oracle:
            def answer_without_video(self, r):
                return r.correct_answer

        rep = review_record(record(), ReviewCheckers(text_only=Oracle()))
        assert rep.failed_gate == "text_only"


class TestDedupBalance:
    def test_duplicates_within_video(self):
        out = dedup_and_balance([record(eid="e0"), record(eid="e1")])
        assert [r.event_id for r in out] == ["e0"]

    def test_duplicates_across_videos_kept(self):
        assert len(dedup_and_balance([record(vid="v1"), record(vid="v2")])) == 2

    def test_round_robin(self):
        recs = [record(vid=f"v{i}", answer="A") for i in range(8)]
        out = dedup_and_balance(recs, seed=1)
        assert Counter(r.correct_answer for r in out) == {"A": 2, "B": 2, "C": 2, "D": 2}
        for before, after in zip(sorted(recs, key=lambda r: r.video_id), sorted(out, key=lambda r: r.video_id)):
            assert after.options[after.correct_answer] == before.options[before.correct_answer]
            assert sorted(after.options.values()) == sorted(before.options.values())

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.sampled_from("ABCD"), st.integers(0, 5)), max_size=30), st.integers(0, 99))
    def test_balance_and_idempotence(self, rows, seed):
        qs = ["Which event is shown from 1.00s to 5.00s?", "What does the dog do near the rug?", "Who pours the coffee first?",
              "Where does the ball go after the kick?", "How does the cat reach the table?", "When is the door opened?"]
        recs = [record(vid=f"v{v}", eid=f"e{i}", answer=a, question=qs[q]) for i, (v, a, q) in enumerate(rows)]
        once = dedup_and_balance(recs, seed=seed)
        counts = Counter(r.correct_answer for r in once)
        if once:
            assert max(counts.get(o, 0) for o in "ABCD") - min(counts.get(o, 0) for o in "ABCD") <= 1
        assert {r.item_id for r in dedup_and_balance(once, seed=seed)} == {r.item_id for r in once}


class TestSplit:
    def test_single_video(self):
        m = split_by_video([record()], (1.0, 0.0, 0.0))
        assert m.splits["train"] == ["v1"] and not m.splits["val"] and not m.splits["test"]

    def test_too_few_videos(self):
        with pytest.raises(ValueError):
            split_by_video([record()], (0.9, 0.05, 0.05))

    def test_ratios_validated(self):
        with pytest.raises(ValueError):
            split_by_video([record()], (0.5, 0.2, 0.2))

    def test_deterministic_and_disjoint(self):
        recs = [record(vid=f"v{i:03d}") for i in range(100)]
        a = split_by_video(recs, (0.9, 0.05, 0.05), seed=9)
        b = split_by_video(list(reversed(recs)), (0.9, 0.05, 0.05), seed=9)
        assert a == b
        assert [len(a.splits[k]) for k in ("train", "val", "test")] == [90, 5, 5]
        sets = [set(v) for v in a.splits.values()]
        assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
        assert split_by_video(recs, (0.9, 0.05, 0.05), seed=10) != a

    def test_small_nonzero_splits_get_a_video(self):
        recs = [record(vid=f"v{i}") for i in range(3)]
        m = split_by_video(recs, (0.9, 0.05, 0.05), seed=0)
        assert all(len(v) == 1 for v in m.splits.values())


class TestStats:
    def test_order_statistics(self):
        recs = [record(vid=f"v{i}", spans=((0, n),)) for i, n in enumerate((10, 20, 30))]
        s = dataset_stats(recs)
        assert s.span_length_mean == 20 and s.span_length_median == 20
        assert s.multi_span_proportion == 0

    def test_histogram(self):
        recs = dedup_and_balance([record(vid=f"v{i}") for i in range(8)], seed=0)
        s = dataset_stats(recs)
        assert s.label_histogram == {"A": 2, "B": 2, "C": 2, "D": 2}
        assert sum(s.label_histogram.values()) == s.count

    def test_empty(self):
        with pytest.raises(ValueError):
            dataset_stats([])


class TestSerialization:
    def test_field_names(self):
        d = record_to_dict(record(spans=((1, 2.5), (4, 5))))
        assert list(d) == [
            "video_id", "event_id", "time_spans", "event_description", "grounding_query",
            "question", "options", "correct_answer", "stage1_reason", "stage2_reason",
        ]
        assert d["time_spans"] == [[1.0, 2.5], [4.0, 5.0]]
        assert record_from_dict(json.loads(json.dumps(d))) == record(spans=((1, 2.5), (4, 5)))

    def test_file_round_trip(self, tmp_path):
        recs = [record(vid=f"v{i}") for i in range(3)]
        write_records(recs, tmp_path / "r.ndjson")
        assert read_records(tmp_path / "r.ndjson") == recs

    def test_rejects_empty_gold(self, tmp_path):
        d = record_to_dict(record())
        d["time_spans"] = []
        (tmp_path / "bad.ndjson").write_text(json.dumps(d) + "\n")
        with pytest.raises(ValueError):
            read_records(tmp_path / "bad.ndjson")


class TestCorpus:
    def test_every_record_valid(self, corpus):
        recs = corpus["records"]
        assert len(recs) > 200
        for r in recs:
            assert not schema_problems(r)
            assert review_record(r).accepted

    def test_ordered_by_video_event(self, corpus):
        keys = [(r.video_id, r.event_id) for r in corpus["records"]]
        assert keys == sorted(keys)

    def test_contains_multi_span(self, corpus):
        assert dataset_stats(corpus["records"]).multi_span_proportion > 0

    def test_byte_identical(self, small_corpus):
        again = build_dataset(small_corpus["graphs"], seed=3).records
        assert dump_records(again) == dump_records(small_corpus["records"])
