"""Append-only JSONL run store with crash-safe resume.

One directory per run. Each artifact kind lives in its own JSONL file;
records are deduplicated by id, flushed and fsynced before the append is
acknowledged, and a torn trailing line (no final newline) is truncated away
on open. A lock file keeps a second writer out. Manifests are canonical
JSON so that identical run states serialize byte-identically.
"""

from __future__ import annotations

import json
import os
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from threading import RLock
from typing import Callable, Iterator, Optional

from .errors import SchemaViolation, StoreError

FILES = {
    "outcome": "outcomes.jsonl",
    "query": "queries.jsonl",
    "response": "responses.jsonl",
    "score": "scores.jsonl",
    "decision": "decisions.jsonl",
}

REQUIRED_KEYS = {
    "outcome": ("id", "objective", "criterion"),
    "query": ("id", "outcome_id", "paraphrase_index", "marking", "language", "text", "review_state"),
    "response": ("id", "query_id", "level", "model_id", "text"),
    "score": ("id", "pair_id", "language_selection", "cultural_appropriateness", "language_use"),
    "decision": ("id", "query_id", "action", "version", "reviewer_id"),
}


def canonical_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class RunStore:
    """Filesystem-backed artifact store for one pipeline run."""

    def __init__(self, run_dir, clock: Callable[[], float] = time.time) -> None:
        self.run_dir = Path(run_dir)
        self.clock = clock
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "checkpoints").mkdir(exist_ok=True)
        self._lock = RLock()
        self._lock_fd: Optional[int] = None
        self._lock_depth = 0
        self._handles: dict[str, object] = {}
        self._index: dict[str, dict[str, int]] = {kind: {} for kind in FILES}
        for kind in FILES:
            self._scan(kind)

    # --- lifecycle ---

    def init_run(self, run_id: str, config_record: dict, config_digest: str) -> dict:
        """Create run.json; idempotent for the same config digest."""
        path = self.run_dir / "run.json"
        if path.exists():
            existing = json.loads(path.read_text(encoding="utf-8"))
            if existing["config_digest"] != config_digest:
                raise StoreError(
                    f"run directory {self.run_dir} was initialized with a different config"
                )
            return existing
        record = {
            "run_id": run_id,
            "created_at": self._iso(self.clock()),
            "config_digest": config_digest,
            "config": config_record,
        }
        self._atomic_write(path, json.dumps(record, sort_keys=True, ensure_ascii=False, indent=2) + "\n")
        return record

    def run_info(self) -> dict:
        path = self.run_dir / "run.json"
        if not path.exists():
            raise StoreError(f"{self.run_dir} has no run.json; initialize the run first")
        return json.loads(path.read_text(encoding="utf-8"))

    def timestamp(self) -> str:
        return self._iso(self.clock())

    @staticmethod
    def _iso(epoch: float) -> str:
        return datetime.fromtimestamp(epoch, tz=timezone.utc).isoformat().replace("+00:00", "Z")

    # --- single-writer lock ---

    def _acquire_lock(self) -> None:
        if self._lock_fd is not None:
            return
        path = self.run_dir / "run.lock"
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = path.read_text(encoding="utf-8", errors="replace").strip()
            raise StoreError(
                f"run directory {self.run_dir} is locked by another writer (pid {holder})"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        self._lock_fd = fd

    def release_lock(self) -> None:
        if self._lock_fd is not None:
            os.close(self._lock_fd)
            self._lock_fd = None
            (self.run_dir / "run.lock").unlink(missing_ok=True)

    @contextmanager
    def writer(self) -> Iterator["RunStore"]:
        """Hold the advisory writer lock for a block of mutating operations."""
        with self._lock:
            self._acquire_lock()
            self._lock_depth += 1
        try:
            yield self
        finally:
            with self._lock:
                self._lock_depth -= 1
                if self._lock_depth == 0:
                    self.release_lock()

    def close(self) -> None:
        with self._lock:
            for handle in self._handles.values():
                handle.close()
            self._handles.clear()
            self.release_lock()

    # --- append-only files ---

    def _path(self, kind: str) -> Path:
        if kind not in FILES:
            raise StoreError(f"unknown artifact kind {kind!r}")
        return self.run_dir / FILES[kind]

    def _scan(self, kind: str) -> None:
        """Build the id index; truncate a torn trailing line left by a crash."""
        path = self._path(kind)
        if not path.exists():
            return
        index = self._index[kind]
        keep = 0
        with open(path, "rb") as fh:
            offset = 0
            for line in fh:
                if not line.endswith(b"\n"):
                    break
                try:
                    record = json.loads(line)
                    record_id = record["id"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    break
                if record_id not in index:
                    index[record_id] = offset
                offset += len(line)
                keep = offset
        if keep < path.stat().st_size:
            with open(path, "r+b") as fh:
                fh.truncate(keep)

    def _handle(self, kind: str):
        handle = self._handles.get(kind)
        if handle is None:
            handle = open(self._path(kind), "ab")
            self._handles[kind] = handle
        return handle

    def _validate(self, kind: str, record: dict) -> None:
        if kind not in REQUIRED_KEYS:
            raise StoreError(f"unknown artifact kind {kind!r}")
        missing = [key for key in REQUIRED_KEYS[kind] if key not in record]
        if missing:
            raise SchemaViolation(f"{kind} record missing {missing}")
        if not isinstance(record["id"], str) or not record["id"]:
            raise SchemaViolation(f"{kind} record id must be a non-empty string")

    def append(self, kind: str, record: dict) -> bool:
        """Append one record; returns False (no-op) when the id already exists."""
        return self.append_batch(kind, [record]) == 1

    def append_batch(self, kind: str, records) -> int:
        """Append many records with one fsync; returns how many were new."""
        with self._lock:
            if self._lock_fd is None:
                self._acquire_lock()
            fresh = []
            for record in records:
                self._validate(kind, record)
                if record["id"] in self._index[kind]:
                    continue
                if any(record["id"] == staged["id"] for staged in fresh):
                    continue
                fresh.append(record)
            if not fresh:
                return 0
            handle = self._handle(kind)
            offset = handle.tell()
            for record in fresh:
                line = (canonical_json(record) + "\n").encode("utf-8")
                handle.write(line)
                self._index[kind][record["id"]] = offset
                offset += len(line)
            handle.flush()
            os.fsync(handle.fileno())
            return len(fresh)

    def has(self, kind: str, record_id: str) -> bool:
        return record_id in self._index[kind]

    def count(self, kind: str) -> int:
        return len(self._index[kind])

    def get(self, kind: str, record_id: str) -> dict:
        with self._lock:
            offset = self._index[kind].get(record_id)
            if offset is None:
                raise StoreError(f"no {kind} record with id {record_id!r}")
            self._flush_handle(kind)
            with open(self._path(kind), "rb") as fh:
                fh.seek(offset)
                return json.loads(fh.readline())

    def load(self, kind: str) -> list[dict]:
        """All records of a kind, in append order, duplicates skipped."""
        with self._lock:
            self._flush_handle(kind)
            path = self._path(kind)
            if not path.exists():
                return []
            out = []
            seen = set()
            with open(path, "rb") as fh:
                for line in fh:
                    if not line.endswith(b"\n"):
                        break
                    record = json.loads(line)
                    if record["id"] in seen:
                        continue
                    seen.add(record["id"])
                    out.append(record)
            return out

    def _flush_handle(self, kind: str) -> None:
        handle = self._handles.get(kind)
        if handle is not None:
            handle.flush()

    # --- checkpoints and manifest ---

    def checkpoint(self, stage: str, payload: dict) -> None:
        path = self.run_dir / "checkpoints" / f"{stage}.json"
        self._atomic_write(path, json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n")

    def get_checkpoint(self, stage: str) -> Optional[dict]:
        path = self.run_dir / "checkpoints" / f"{stage}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _atomic_write(self, path: Path, text: str) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def write_manifest(
        self,
        status: str,
        extra_counts: Optional[dict] = None,
        failed: Optional[list] = None,
        dropped: Optional[list] = None,
    ) -> dict:
        info = self.run_info()
        manifest = {
            "run_id": info["run_id"],
            "config_digest": info["config_digest"],
            "created_at": info["created_at"],
            "status": status,
            "stage_counts": {
                **{kind: self.count(kind) for kind in FILES},
                **(extra_counts or {}),
            },
            "index": {kind: sorted(self._index[kind]) for kind in FILES},
            "failed": sorted([list(f) for f in (failed or [])]),
            "dropped": sorted([list(d) for d in (dropped or [])]),
        }
        self._atomic_write(
            self.run_dir / "manifest.json",
            json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        )
        return manifest

    def read_manifest(self) -> Optional[dict]:
        path = self.run_dir / "manifest.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))


# --- derived views ---


def effective_review(store: RunStore) -> dict[str, dict]:
    """Current review state per query: base Pending/stored state overlaid with
    the last decision in log order. Versions count applied decisions."""
    states: dict[str, dict] = {}
    for record in store.load("query"):
        states[record["id"]] = {
            "state": record["review_state"],
            "text": record["text"],
            "version": 0,
        }
    for decision in store.load("decision"):
        current = states.get(decision["query_id"])
        if current is None:
            continue
        action = decision["action"]
        if action == "accept":
            current["state"] = "Accepted"
        elif action == "reject":
            current["state"] = "Rejected"
        elif action == "edit":
            current["state"] = "Edited"
            current["text"] = decision["new_text"]
        current["version"] = decision["version"]
    return states


def export_dataset(store: RunStore, format: str, out_path) -> int:
    """Write the released dataset; returns the number of lines written.

    paired-jsonl: one line per response joined with its effective query.
    jsonl: every stored artifact tagged with its kind.
    """
    out_path = Path(out_path)
    if format == "jsonl":
        lines = []
        for kind in FILES:
            for record in store.load(kind):
                lines.append(canonical_json({"kind": kind, **record}))
    elif format == "paired-jsonl":
        overlay = effective_review(store)
        queries = {record["id"]: record for record in store.load("query")}
        lines = []
        for response in store.load("response"):
            query = queries[response["query_id"]]
            state = overlay[query["id"]]
            lines.append(
                canonical_json(
                    {
                        "pair_id": response["id"],
                        "outcome_id": query["outcome_id"],
                        "query_id": query["id"],
                        "query": state["text"],
                        "language": query["language"],
                        "marking": query["marking"],
                        "paraphrase_index": query["paraphrase_index"],
                        "review_state": state["state"],
                        "level": response["level"],
                        "model_id": response["model_id"],
                        "response": response["text"],
                        "lineage": query.get("lineage"),
                    }
                )
            )
    else:
        raise StoreError(f"unknown export format {format!r}")
    tmp = out_path.with_suffix(out_path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, out_path)
    return len(lines)
