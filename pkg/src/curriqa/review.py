"""HTTP service for the human review gate.

Serves source-language query groups for inspection, records accept, edit,
and reject decisions with optimistic versioning, reports progress, and
releases the gate once nothing is pending. Decisions are append-only; the
effective state of a query is the last decision applied to it.
"""

from __future__ import annotations

import threading
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .datastore import RunStore, effective_review

ACTIONS = ("accept", "edit", "reject")


class DecisionBody(BaseModel):
    query_id: str
    action: str
    expected_version: int = Field(ge=0)
    reviewer_id: str = "reviewer"
    new_text: Optional[str] = None
    reason: Optional[str] = None


def create_app(store: RunStore, token: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="curriqa review")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    lock = threading.Lock()
    config = store.run_info()["config"]
    source_language = config["source_language"]

    def authorize(authorization: Optional[str] = Header(default=None)) -> None:
        if token is None:
            return
        if authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    def source_queries() -> list[dict]:
        # Translations carry a target language; the gate reviews only the
        # source-language variants they descend from.
        return [
            record
            for record in store.load("query")
            if record["language"] == source_language
        ]

    def outcome_context() -> dict[str, dict]:
        return {
            record["id"]: {"objective": record["objective"], "criterion": record["criterion"]}
            for record in store.load("outcome")
        }

    @app.get("/api/context")
    def context(_: None = Depends(authorize)) -> dict:
        # Everything a client needs to mark up query text: which language is
        # under review and the per-language phrases the pipeline used for
        # explicit and implicit cultural marking.
        country = config.get("country", {})
        return {
            "run_id": store.run_info()["run_id"],
            "source_language": source_language,
            "country_name": country.get("name", {}),
            "implicit_phrase": country.get("implicit", {}),
        }

    @app.get("/api/queue")
    def queue(limit: int = 20, offset: int = 0, _: None = Depends(authorize)) -> dict:
        overlay = effective_review(store)
        outcomes = outcome_context()
        groups: dict[tuple, list[dict]] = {}
        for record in source_queries():
            key = (record["outcome_id"], record["paraphrase_index"])
            groups.setdefault(key, []).append(record)
        rows = []
        for key in sorted(groups):
            members = groups[key]
            states = [overlay[m["id"]] for m in members]
            if not any(s["state"] == "Pending" for s in states):
                continue
            outcome_id, paraphrase_index = key
            rows.append(
                {
                    "outcome_id": outcome_id,
                    "paraphrase_index": paraphrase_index,
                    "outcome": outcomes.get(outcome_id, {}),
                    "members": [
                        {
                            "query_id": m["id"],
                            "marking": m["marking"],
                            "language": m["language"],
                            "original_text": m["text"],
                            "text": s["text"],
                            "state": s["state"],
                            "version": s["version"],
                        }
                        for m, s in zip(members, states)
                    ],
                }
            )
        total = len(rows)
        return {"groups": rows[offset : offset + limit], "total_pending_groups": total}

    @app.post("/api/decision")
    def decide(body: DecisionBody, _: None = Depends(authorize)) -> dict:
        if body.action not in ACTIONS:
            raise HTTPException(status_code=422, detail=f"action must be one of {ACTIONS}")
        new_text = (body.new_text or "").strip()
        if body.action == "edit" and not new_text:
            raise HTTPException(status_code=422, detail="edit requires non-empty new_text")
        with lock:
            if not store.has("query", body.query_id):
                raise HTTPException(status_code=404, detail=f"unknown query {body.query_id}")
            overlay = effective_review(store)
            current = overlay[body.query_id]
            if body.expected_version != current["version"]:
                raise HTTPException(
                    status_code=409,
                    detail={
                        "message": "version conflict",
                        "current_version": current["version"],
                        "current_state": current["state"],
                    },
                )
            version = current["version"] + 1
            store.append(
                "decision",
                {
                    "id": f"{body.query_id}@{version}",
                    "query_id": body.query_id,
                    "action": body.action,
                    "new_text": new_text if body.action == "edit" else None,
                    "reason": body.reason,
                    "reviewer_id": body.reviewer_id,
                    "version": version,
                    "decided_at": store.timestamp(),
                },
            )
        return {"query_id": body.query_id, "new_version": version, "state_after": _state_after(body.action)}

    @app.get("/api/progress")
    def progress(_: None = Depends(authorize)) -> dict:
        overlay = effective_review(store)
        counts = {"Pending": 0, "Accepted": 0, "Edited": 0, "Rejected": 0}
        total = 0
        for record in source_queries():
            counts[overlay[record["id"]]["state"]] += 1
            total += 1
        return {
            "pending": counts["Pending"],
            "accepted": counts["Accepted"],
            "edited": counts["Edited"],
            "rejected": counts["Rejected"],
            "total": total,
        }

    @app.post("/api/release")
    def release(_: None = Depends(authorize)) -> dict:
        with lock:
            overlay = effective_review(store)
            pending = sum(
                1
                for record in source_queries()
                if overlay[record["id"]]["state"] == "Pending"
            )
            if pending:
                raise HTTPException(
                    status_code=409,
                    detail={"message": "queries still pending review", "pending": pending},
                )
            store.checkpoint("review", {"released": True, "released_at": store.timestamp()})
        return {"released": True}

    return app


def _state_after(action: str) -> str:
    return {"accept": "Accepted", "edit": "Edited", "reject": "Rejected"}[action]
