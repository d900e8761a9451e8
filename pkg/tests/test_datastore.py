"""Run-store durability, dedupe, locking, review overlay, and export tests."""

import json

import pytest

from curriqa.datastore import RunStore, canonical_json, effective_review, export_dataset
from curriqa.errors import SchemaViolation, StoreError

CLOCK = lambda: 1_700_000_000.0  # noqa: E731


def make_store(path) -> RunStore:
    store = RunStore(path, clock=CLOCK)
    store.init_run("r-1", {"source_language": "ko"}, "digest-1")
    return store


def outcome_record(oid: str, objective: str = "목표") -> dict:
    return {"id": oid, "objective": objective, "criterion": "기준", "subject": "사회",
            "grade_band": "3-4", "source_ref": "t"}


def query_record(qid: str, text: str = "질문?", state: str = "Pending", **extra) -> dict:
    record = {
        "id": qid,
        "outcome_id": qid.split(":")[0],
        "paraphrase_index": 0,
        "marking": "Implicit",
        "language": "ko",
        "text": text,
        "review_state": state,
        "lineage": None,
        "trace": {"iterations": 1, "halted_by": "Accepted",
                  "steps": [[text, {"accepted": True, "feedback": "", "criteria": {}}]]},
    }
    record.update(extra)
    return record


def response_record(rid: str, query_id: str, text: str = "답변.") -> dict:
    return {"id": rid, "query_id": query_id, "level": "Basic", "model_id": "m1", "text": text}


def decision_record(qid: str, action: str, version: int, new_text=None) -> dict:
    return {"id": f"{qid}@{version}", "query_id": qid, "action": action,
            "new_text": new_text, "reason": None, "reviewer_id": "rev", "version": version}


# --- basic persistence ---


def test_round_trip_preserves_unicode(tmp_path):
    store = make_store(tmp_path / "run")
    record = query_record("o-1:q", text="한국의 명절은 왜 중요한가? Ça va? 「質問」")
    assert store.append("query", record)
    assert store.get("query", "o-1:q") == record
    raw = (tmp_path / "run" / "queries.jsonl").read_text(encoding="utf-8")
    # stored verbatim, not as \u escapes
    assert "한국의 명절은" in raw


def test_append_is_idempotent_by_id(tmp_path):
    store = make_store(tmp_path / "run")
    assert store.append("query", query_record("q-1"))
    assert not store.append("query", query_record("q-1", text="다른 텍스트"))
    assert store.count("query") == 1
    assert store.get("query", "q-1")["text"] == "질문?"


def test_append_batch_skips_duplicates_inside_batch(tmp_path):
    store = make_store(tmp_path / "run")
    added = store.append_batch(
        "query", [query_record("q-1"), query_record("q-1"), query_record("q-2")]
    )
    assert added == 2
    assert store.count("query") == 2


def test_load_preserves_append_order(tmp_path):
    store = make_store(tmp_path / "run")
    ids = [f"q-{i}" for i in range(10)]
    store.append_batch("query", [query_record(q) for q in ids])
    assert [r["id"] for r in store.load("query")] == ids


def test_schema_violations_are_rejected(tmp_path):
    store = make_store(tmp_path / "run")
    with pytest.raises(SchemaViolation):
        store.append("query", {"id": "q-1", "text": "missing required keys"})
    with pytest.raises(SchemaViolation):
        store.append("outcome", {"id": "", "objective": "o", "criterion": "c"})
    with pytest.raises(StoreError):
        store.append("nonsense", {"id": "x"})


def test_get_unknown_id_raises(tmp_path):
    store = make_store(tmp_path / "run")
    with pytest.raises(StoreError):
        store.get("query", "missing")


# --- crash recovery ---


def test_torn_tail_is_truncated_on_open(tmp_path):
    store = make_store(tmp_path / "run")
    store.append_batch("query", [query_record("q-1"), query_record("q-2")])
    store.close()
    path = tmp_path / "run" / "queries.jsonl"
    intact = path.read_bytes()
    torn = canonical_json(query_record("q-3"))[: 25]  # cut mid-record, no newline
    path.write_bytes(intact + torn.encode("utf-8"))

    reopened = RunStore(tmp_path / "run", clock=CLOCK)
    assert reopened.count("query") == 2
    assert path.read_bytes() == intact
    # the truncated id was never indexed, so it can be written again
    assert reopened.append("query", query_record("q-3"))
    assert reopened.count("query") == 3


def test_corrupt_line_truncates_from_corruption_point(tmp_path):
    store = make_store(tmp_path / "run")
    store.append_batch("query", [query_record("q-1"), query_record("q-2")])
    store.close()
    path = tmp_path / "run" / "queries.jsonl"
    good = path.read_bytes()
    path.write_bytes(good + b'{"id": broken json\n' + (canonical_json(query_record("q-4")) + "\n").encode())

    reopened = RunStore(tmp_path / "run", clock=CLOCK)
    assert reopened.count("query") == 2
    assert path.read_bytes() == good


def test_resume_after_partial_batch_converges(tmp_path):
    store = make_store(tmp_path / "run")
    batch = [query_record(f"q-{i}") for i in range(5)]
    store.append_batch("query", batch)
    store.close()
    path = tmp_path / "run" / "queries.jsonl"
    lines = path.read_bytes().splitlines(keepends=True)
    # simulate a crash that persisted only 2.5 records of the batch
    path.write_bytes(b"".join(lines[:2]) + lines[2][:10])

    reopened = RunStore(tmp_path / "run", clock=CLOCK)
    assert reopened.count("query") == 2
    reopened.append_batch("query", batch)
    assert [r["id"] for r in reopened.load("query")] == [f"q-{i}" for i in range(5)]
    assert path.read_bytes() == b"".join(lines)


# --- locking ---


def test_second_writer_is_locked_out(tmp_path):
    store = make_store(tmp_path / "run")
    store.append("query", query_record("q-1"))
    other = RunStore(tmp_path / "run", clock=CLOCK)
    with pytest.raises(StoreError, match="locked"):
        other.append("query", query_record("q-2"))
    store.close()
    assert other.append("query", query_record("q-2"))
    other.close()


def test_writer_context_releases_lock(tmp_path):
    store = make_store(tmp_path / "run")
    with store.writer():
        with store.writer():  # reentrant
            store.append("query", query_record("q-1"))
        assert (tmp_path / "run" / "run.lock").exists()
    assert not (tmp_path / "run" / "run.lock").exists()
    other = RunStore(tmp_path / "run", clock=CLOCK)
    assert other.append("query", query_record("q-2"))
    other.close()


def test_reading_needs_no_lock(tmp_path):
    store = make_store(tmp_path / "run")
    store.append("query", query_record("q-1"))
    reader = RunStore(tmp_path / "run", clock=CLOCK)
    assert reader.load("query")[0]["id"] == "q-1"
    store.close()


# --- run identity, checkpoints, manifest ---


def test_init_run_is_idempotent_for_same_config(tmp_path):
    store = make_store(tmp_path / "run")
    again = store.init_run("r-1", {"source_language": "ko"}, "digest-1")
    assert again["run_id"] == "r-1"
    with pytest.raises(StoreError, match="different config"):
        store.init_run("r-1", {"source_language": "en"}, "digest-2")


def test_checkpoint_round_trip_and_no_temp_residue(tmp_path):
    store = make_store(tmp_path / "run")
    assert store.get_checkpoint("queries") is None
    store.checkpoint("queries", {"complete": True, "dropped": [], "failed": []})
    assert store.get_checkpoint("queries") == {"complete": True, "dropped": [], "failed": []}
    residue = list((tmp_path / "run" / "checkpoints").glob("*.tmp"))
    assert residue == []


def test_manifest_is_deterministic_across_stores(tmp_path):
    manifests = []
    for name in ("a", "b"):
        store = make_store(tmp_path / name)
        store.append("outcome", outcome_record("o-1"))
        store.append_batch("query", [query_record("o-1:q1"), query_record("o-1:q2")])
        store.write_manifest(status="complete", extra_counts={"retained": 1}, failed=[], dropped=[])
        manifests.append((tmp_path / name / "manifest.json").read_bytes())
        store.close()
    assert manifests[0] == manifests[1]
    parsed = json.loads(manifests[0])
    assert parsed["stage_counts"]["query"] == 2
    assert parsed["stage_counts"]["retained"] == 1
    assert parsed["index"]["query"] == ["o-1:q1", "o-1:q2"]
    assert parsed["status"] == "complete"


def test_manifest_requires_initialized_run(tmp_path):
    store = RunStore(tmp_path / "bare", clock=CLOCK)
    with pytest.raises(StoreError, match="run.json"):
        store.write_manifest(status="complete")


# --- review overlay ---


def test_effective_review_replays_decision_log(tmp_path):
    store = make_store(tmp_path / "run")
    store.append_batch(
        "query", [query_record("q-1"), query_record("q-2"), query_record("q-3"), query_record("q-4")]
    )
    store.append("decision", decision_record("q-1", "accept", 1))
    store.append("decision", decision_record("q-2", "edit", 1, new_text="수정된 질문?"))
    store.append("decision", decision_record("q-3", "reject", 1))
    # a later decision overrides an earlier one
    store.append("decision", decision_record("q-3", "accept", 2))

    overlay = effective_review(store)
    assert overlay["q-1"] == {"state": "Accepted", "text": "질문?", "version": 1}
    assert overlay["q-2"] == {"state": "Edited", "text": "수정된 질문?", "version": 1}
    assert overlay["q-3"] == {"state": "Accepted", "text": "질문?", "version": 2}
    assert overlay["q-4"] == {"state": "Pending", "text": "질문?", "version": 0}


def test_decisions_for_unknown_queries_are_ignored(tmp_path):
    store = make_store(tmp_path / "run")
    store.append("query", query_record("q-1"))
    store.append("decision", decision_record("ghost", "accept", 1))
    overlay = effective_review(store)
    assert set(overlay) == {"q-1"}


# --- export ---


def populate(store: RunStore) -> None:
    store.append("outcome", outcome_record("o-1"))
    store.append_batch(
        "query",
        [
            query_record("o-1:a", text="원래 질문?"),
            query_record("o-1:b", text="다른 질문?"),
        ],
    )
    store.append("decision", decision_record("o-1:a", "edit", 1, new_text="고친 질문?"))
    store.append("decision", decision_record("o-1:b", "accept", 1))
    store.append_batch(
        "response",
        [
            response_record("o-1:a:r1", "o-1:a"),
            response_record("o-1:a:r2", "o-1:a"),
            response_record("o-1:b:r1", "o-1:b"),
        ],
    )


def test_export_paired_joins_effective_query_text(tmp_path):
    store = make_store(tmp_path / "run")
    populate(store)
    out = tmp_path / "dataset.jsonl"
    assert export_dataset(store, "paired-jsonl", out) == 3
    rows = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert {r["pair_id"] for r in rows} == {"o-1:a:r1", "o-1:a:r2", "o-1:b:r1"}
    for row in rows:
        if row["query_id"] == "o-1:a":
            assert row["query"] == "고친 질문?"
            assert row["review_state"] == "Edited"
        else:
            assert row["query"] == "다른 질문?"
            assert row["review_state"] == "Accepted"
        assert row["level"] == "Basic"
        assert row["response"] == "답변."


def test_export_full_dump_tags_kinds(tmp_path):
    store = make_store(tmp_path / "run")
    populate(store)
    out = tmp_path / "all.jsonl"
    # 1 outcome + 2 queries + 3 responses + 0 scores + 2 decisions
    assert export_dataset(store, "jsonl", out) == 8
    kinds = [json.loads(line)["kind"] for line in out.read_text(encoding="utf-8").splitlines()]
    assert kinds.count("query") == 2
    assert kinds.count("response") == 3
    assert kinds.count("decision") == 2


def test_export_rejects_unknown_format(tmp_path):
    store = make_store(tmp_path / "run")
    with pytest.raises(StoreError, match="format"):
        export_dataset(store, "parquet", tmp_path / "x")
