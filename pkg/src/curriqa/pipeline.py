"""Staged synthesis of culture-specific QA data from curriculum outcomes.

Stage order per outcome: initial query (bounded refine loop), culture filter,
paraphrasing, cultural-marking variants, human review gate, translation of the
explicitly marked variants, then leveled response generation. Every generated
text carries the refine trace that produced it.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

from . import prompts
from .config import ROLE_TEMPERATURES, RunConfig
from .curriculum import LearningOutcome
from .errors import CurriqaError, EmptyDraft, ReviewGateError
from .gateway import AgentRequest, Decoding, Gateway

log = logging.getLogger(__name__)


class Marking(str, Enum):
    NO_COUNTRY = "NoCountry"
    IMPLICIT = "Implicit"
    EXPLICIT = "Explicit"


class ReviewState(str, Enum):
    PENDING = "Pending"
    ACCEPTED = "Accepted"
    EDITED = "Edited"
    REJECTED = "Rejected"


class HaltReason(str, Enum):
    ACCEPTED = "Accepted"
    ITERATION_CAP = "IterationCap"


@dataclass(frozen=True)
class EvalVerdict:
    accepted: bool
    feedback: str = ""
    criteria: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"accepted": self.accepted, "feedback": self.feedback, "criteria": dict(self.criteria)}

    @classmethod
    def from_record(cls, record: dict) -> "EvalVerdict":
        return cls(
            accepted=record["accepted"],
            feedback=record.get("feedback", ""),
            criteria=dict(record.get("criteria", {})),
        )


@dataclass(frozen=True)
class RefineTrace:
    iterations: int
    steps: tuple[tuple[str, EvalVerdict], ...]
    halted_by: HaltReason

    def __post_init__(self) -> None:
        if self.iterations != len(self.steps) or self.iterations < 1:
            raise ValueError("iterations must equal the number of recorded steps (>= 1)")
        last_accepted = self.steps[-1][1].accepted
        if (self.halted_by is HaltReason.ACCEPTED) != last_accepted:
            raise ValueError("halt reason inconsistent with final verdict")

    def to_record(self) -> dict:
        return {
            "iterations": self.iterations,
            "halted_by": self.halted_by.value,
            "steps": [[draft, verdict.to_record()] for draft, verdict in self.steps],
        }

    @classmethod
    def from_record(cls, record: dict) -> "RefineTrace":
        return cls(
            iterations=record["iterations"],
            steps=tuple(
                (draft, EvalVerdict.from_record(verdict)) for draft, verdict in record["steps"]
            ),
            halted_by=HaltReason(record["halted_by"]),
        )


@dataclass(frozen=True)
class Query:
    id: str
    outcome_id: str
    paraphrase_index: int
    marking: Marking
    language: str
    text: str
    trace: RefineTrace
    lineage: Optional[str] = None
    review_state: ReviewState = ReviewState.PENDING

    def __post_init__(self) -> None:
        if self.paraphrase_index not in (0, 1, 2):
            raise ValueError("paraphrase_index must be 0, 1, or 2")
        if self.review_state is not ReviewState.REJECTED and not self.text.strip():
            raise ValueError("query text must be non-empty unless rejected")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "outcome_id": self.outcome_id,
            "paraphrase_index": self.paraphrase_index,
            "marking": self.marking.value,
            "language": self.language,
            "text": self.text,
            "lineage": self.lineage,
            "review_state": self.review_state.value,
            "trace": self.trace.to_record(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Query":
        return cls(
            id=record["id"],
            outcome_id=record["outcome_id"],
            paraphrase_index=record["paraphrase_index"],
            marking=Marking(record["marking"]),
            language=record["language"],
            text=record["text"],
            trace=RefineTrace.from_record(record["trace"]),
            lineage=record.get("lineage"),
            review_state=ReviewState(record["review_state"]),
        )


@dataclass(frozen=True)
class Response:
    id: str
    query_id: str
    level: str
    model_id: str
    text: str
    trace: RefineTrace

    @property
    def final_eval(self) -> EvalVerdict:
        return self.trace.steps[-1][1]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "query_id": self.query_id,
            "level": self.level,
            "model_id": self.model_id,
            "text": self.text,
            "trace": self.trace.to_record(),
            "final_eval": self.final_eval.to_record(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Response":
        return cls(
            id=record["id"],
            query_id=record["query_id"],
            level=record["level"],
            model_id=record["model_id"],
            text=record["text"],
            trace=RefineTrace.from_record(record["trace"]),
        )


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str
    polished_text: str


def refine_loop(
    make_draft: Callable[[], str],
    evaluate: Callable[[str, int], EvalVerdict],
    revise: Callable[[str, str], str],
    max_iters: int,
) -> tuple[str, RefineTrace]:
    """Bounded generate-evaluate-revise loop.

    Each iteration evaluates the current draft; on rejection the draft is
    revised against the feedback, up to ``max_iters`` evaluations. Returns the
    last draft with the full trace regardless of acceptance.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    draft = (make_draft() or "").strip()
    if not draft:
        raise EmptyDraft("initial draft")
    steps: list[tuple[str, EvalVerdict]] = []
    for iteration in range(1, max_iters + 1):
        verdict = evaluate(draft, iteration)
        steps.append((draft, verdict))
        if verdict.accepted:
            return draft, RefineTrace(iteration, tuple(steps), HaltReason.ACCEPTED)
        if iteration < max_iters:
            draft = (revise(draft, verdict.feedback) or "").strip()
            if not draft:
                raise EmptyDraft(f"revision at iteration {iteration}")
    return draft, RefineTrace(max_iters, tuple(steps), HaltReason.ITERATION_CAP)


MARKING_ORDER = (Marking.NO_COUNTRY, Marking.IMPLICIT, Marking.EXPLICIT)


def canonical_query_id(outcome_id: str, index: int) -> str:
    return f"{outcome_id}:p{index}:canonical"


def variant_query_id(outcome_id: str, index: int, marking: Marking, language: str) -> str:
    return f"{outcome_id}:p{index}:{marking.value}:{language}"


def response_id(query_id: str, level: str, model_id: str) -> str:
    return f"{query_id}:{level}:{model_id}"


def outcome_query_ids(outcome_id: str, config: RunConfig) -> list[str]:
    """The source-language query ids one retained outcome must produce."""
    return [
        variant_query_id(outcome_id, index, marking, config.source_language)
        for index in (0, 1, 2)
        for marking in MARKING_ORDER
    ]


class Synthesizer:
    """Binds the gateway and run config to the per-item synthesis operations."""

    def __init__(self, gateway: Gateway, config: RunConfig) -> None:
        self.gateway = gateway
        self.config = config

    # --- request plumbing ---

    def _request(self, role: str, messages, model_id: Optional[str] = None) -> AgentRequest:
        binding = self.config.roles[role]
        role_tag = "generator" if role == "responder" else role
        return AgentRequest(
            provider_id=binding.provider_id,
            model_id=model_id or binding.model_id,
            role_tag=role_tag,
            messages=tuple(messages),
            decoding=Decoding(temperature=ROLE_TEMPERATURES[role], seed=self.config.seed),
        )

    def _text(self, role: str, messages, model_id: Optional[str] = None) -> str:
        return self.gateway.complete(self._request(role, messages, model_id)).text

    def _structured(self, role: str, messages, schema) -> dict:
        return self.gateway.complete_structured(self._request(role, messages), schema)

    # --- refine loops ---

    def _query_loop(
        self, make_draft: Callable[[], str], outcome: LearningOutcome
    ) -> tuple[str, RefineTrace]:
        def evaluate(draft: str, iteration: int) -> EvalVerdict:
            parsed = self._structured(
                "evaluator", prompts.evaluate_query(draft, outcome, iteration), prompts.QUERY_EVAL_SCHEMA
            )
            return EvalVerdict(
                accepted=parsed["reflects_outcome"],
                feedback=parsed.get("feedback", ""),
                criteria={"reflects_outcome": parsed["reflects_outcome"]},
            )

        def revise(draft: str, feedback: str) -> str:
            return self._text("reviser", prompts.revise_text(draft, feedback))

        return refine_loop(make_draft, evaluate, revise, self.config.max_iters)

    # --- stage operations ---

    def generate_initial_query(self, outcome: LearningOutcome) -> Query:
        """Stage 1: one canonical open-ended query per outcome, refine-looped."""
        language = self.config.source_language
        implicit = self.config.implicit_phrase[language]

        def make_draft() -> str:
            return self._text("generator", prompts.initial_query(outcome, language, implicit))

        text, trace = self._query_loop(make_draft, outcome)
        return Query(
            id=canonical_query_id(outcome.id, 0),
            outcome_id=outcome.id,
            paraphrase_index=0,
            marking=Marking.IMPLICIT,
            language=language,
            text=text,
            trace=trace,
        )

    def culture_filter(self, query: Query, outcome: LearningOutcome) -> FilterDecision:
        """Stage 2: keep culture-specific queries (polished), drop the rest.

        Runs as a single classification pass, not a refine loop.
        """
        if query.language != self.config.source_language:
            raise ValueError("culture filter applies to source-language queries")
        parsed = self._structured(
            "evaluator", prompts.culture_filter(query.text, outcome, query.language), prompts.FILTER_SCHEMA
        )
        keep = parsed["culture_specific"]
        polished = (parsed.get("polished") or "").strip() or query.text
        return FilterDecision(keep=keep, reason=parsed.get("reason", ""), polished_text=polished)

    def paraphrase(self, query: Query, outcome: LearningOutcome) -> tuple[Query, Query]:
        """Stage 3a: two meaning-preserving paraphrases of the canonical query."""
        out = []
        for index in (1, 2):
            def make_draft(index=index) -> str:
                return self._text("generator", prompts.paraphrase_query(query.text, index))

            text, trace = self._query_loop(make_draft, outcome)
            out.append(
                replace(
                    query,
                    id=canonical_query_id(outcome.id, index),
                    paraphrase_index=index,
                    text=text,
                    trace=trace,
                    lineage=query.id,
                )
            )
        return out[0], out[1]

    def augment_variants(self, query: Query, outcome: LearningOutcome) -> list[Query]:
        """Stage 3b: restate one canonical query under all three cultural markings.

        The input query is consumed: its text seeds the Implicit variant and it
        is not itself part of the dataset.
        """
        language = query.language
        country = self.config.country_name[language]
        implicit = self.config.implicit_phrase[language]
        variants = []
        for marking in MARKING_ORDER:
            def make_draft(marking=marking) -> str:
                return self._text(
                    "generator",
                    prompts.restate_marking(query.text, marking.value, language, country, implicit),
                )

            text, trace = self._query_loop(make_draft, outcome)
            variants.append(
                Query(
                    id=variant_query_id(outcome.id, query.paraphrase_index, marking, language),
                    outcome_id=outcome.id,
                    paraphrase_index=query.paraphrase_index,
                    marking=marking,
                    language=language,
                    text=text,
                    trace=trace,
                    lineage=query.id,
                )
            )
        return variants

    def translate_explicit(
        self,
        query: Query,
        outcome: LearningOutcome,
        targets: Sequence[str],
        text_override: Optional[str] = None,
    ) -> list[Query]:
        """Stage 5: carry the explicitly marked query into each target language."""
        if query.marking is not Marking.EXPLICIT:
            raise ValueError("only explicitly marked queries are translated")
        if query.language != self.config.source_language:
            raise ValueError("translation starts from the source language")
        source_text = text_override if text_override is not None else query.text
        translations = []
        for target in targets:
            def make_draft(target=target) -> str:
                return self._text(
                    "translator",
                    prompts.translate_query(
                        source_text, query.language, target, self.config.country_name[target]
                    ),
                )

            text, trace = self._query_loop(make_draft, outcome)
            translations.append(
                Query(
                    id=variant_query_id(outcome.id, query.paraphrase_index, Marking.EXPLICIT, target),
                    outcome_id=outcome.id,
                    paraphrase_index=query.paraphrase_index,
                    marking=Marking.EXPLICIT,
                    language=target,
                    text=text,
                    trace=trace,
                    lineage=query.id,
                    review_state=ReviewState.ACCEPTED,
                )
            )
        return translations

    def generate_response(
        self,
        query: Query,
        level: str,
        model_id: str,
        text_override: Optional[str] = None,
    ) -> Response:
        """Response stage: one leveled answer, refine-looped on three criteria."""
        if query.review_state not in (ReviewState.ACCEPTED, ReviewState.EDITED):
            raise ReviewGateError(
                f"query {query.id} is {query.review_state.value}; responses require review clearance"
            )
        query_text = text_override if text_override is not None else query.text

        def make_draft() -> str:
            return self._text(
                "responder", prompts.respond(query_text, query.language, level), model_id=model_id
            )

        def evaluate(draft: str, iteration: int) -> EvalVerdict:
            parsed = self._structured(
                "evaluator",
                prompts.evaluate_response(query_text, draft, level, query.outcome_id, iteration),
                prompts.RESPONSE_EVAL_SCHEMA,
            )
            criteria = {
                "language_consistency": parsed["language_consistency"],
                "difficulty_fit": parsed["difficulty_fit"],
                "outcome_alignment": parsed["outcome_alignment"],
            }
            return EvalVerdict(
                accepted=all(criteria.values()),
                feedback=parsed.get("feedback", ""),
                criteria=criteria,
            )

        def revise(draft: str, feedback: str) -> str:
            return self._text("reviser", prompts.revise_text(draft, feedback))

        text, trace = refine_loop(make_draft, evaluate, revise, self.config.max_iters)
        return Response(
            id=response_id(query.id, level, model_id),
            query_id=query.id,
            level=level,
            model_id=model_id,
            text=text,
            trace=trace,
        )

    def outcome_queries(self, outcome: LearningOutcome):
        """Stages 1-3 for one outcome: returns the 9 source-language variant
        queries, or a FilterDecision drop."""
        initial = self.generate_initial_query(outcome)
        decision = self.culture_filter(initial, outcome)
        if not decision.keep:
            return decision
        canonical = replace(initial, text=decision.polished_text)
        first, second = self.paraphrase(canonical, outcome)
        queries: list[Query] = []
        for group in (canonical, first, second):
            queries.extend(self.augment_variants(group, outcome))
        return queries


# --- full-run orchestration ---


def run_pipeline(
    config: RunConfig,
    gateway: Gateway,
    store,
    outcomes: Optional[Sequence[LearningOutcome]] = None,
    on_event: Optional[Callable[[str], None]] = None,
    phases: Sequence[str] = ("queries", "translations", "responses"),
) -> dict:
    """Execute the staged run against a run directory; resumable.

    Work units (an outcome in the query stage, a query in the translation and
    response stages) are skipped when every artifact id they would produce is
    already stored, so re-running after a crash regenerates only the missing
    tail. Per-item failures are quarantined into the manifest instead of
    aborting. Returns the manifest written at the stopping point: status
    "awaiting_review" at the review gate, otherwise "complete".
    """
    emit = on_event or (lambda event: None)
    synth = Synthesizer(gateway, config)
    outcome_ids_with_artifacts: set[str] = set()

    with store.writer():
        if outcomes is not None:
            store.append_batch("outcome", [o.to_record() for o in outcomes])
        loaded = [_outcome_from_record(r) for r in store.load("outcome")]
        by_id = {o.id: o for o in loaded}

        dropped: list[list] = []
        failed: list[list] = []

        if "queries" in phases:
            dropped, failed = _stage_queries(config, synth, store, loaded, emit)
        else:
            ck = store.get_checkpoint("queries") or {}
            dropped = ck.get("dropped", [])
            failed = [list(f) for f in ck.get("failed", [])]

        pending = _apply_gate(config, store)
        counts = {
            "retained": len(loaded) - len(dropped) - sum(1 for f in failed if f[1] == "queries"),
            "dropped": len(dropped),
        }
        if pending:
            return store.write_manifest(
                status="awaiting_review", extra_counts=counts, failed=failed, dropped=dropped
            )

        if "translations" in phases:
            failed += _stage_translations(config, synth, store, by_id, emit)
        else:
            failed += (store.get_checkpoint("translations") or {}).get("failed", [])
        if "responses" in phases:
            failed += _stage_responses(config, synth, store, emit)
        else:
            failed += (store.get_checkpoint("responses") or {}).get("failed", [])

        responses_done = (store.get_checkpoint("responses") or {}).get("complete", False)
        return store.write_manifest(
            status="complete" if responses_done else "in_progress",
            extra_counts=counts,
            failed=failed,
            dropped=dropped,
        )


def _outcome_from_record(record: dict) -> LearningOutcome:
    return LearningOutcome(
        id=record["id"],
        objective_text=record["objective"],
        criterion_text=record["criterion"],
        subject=record.get("subject", ""),
        grade_band=record.get("grade_band", ""),
        source_ref=record.get("source_ref", ""),
    )


def _run_units(config: RunConfig, units, worker, consume) -> None:
    # Worker results are consumed in submission order so append order (and
    # with it every file offset) is independent of thread scheduling.
    if config.workers > 1 and len(units) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for result in pool.map(worker, units):
                consume(result)
    else:
        for unit in units:
            consume(worker(unit))


def _stage_queries(config, synth, store, outcomes, emit):
    checkpoint = store.get_checkpoint("queries")
    if checkpoint and checkpoint.get("complete"):
        return checkpoint["dropped"], [list(f) for f in checkpoint["failed"]]

    dropped: list[list] = []
    failed: list[list] = []

    def build(outcome: LearningOutcome):
        expected = outcome_query_ids(outcome.id, config)
        if all(store.has("query", qid) for qid in expected):
            return ("done", outcome, None)
        try:
            result = synth.outcome_queries(outcome)
        except CurriqaError as exc:
            return ("failed", outcome, f"{type(exc).__name__}: {exc}")
        if isinstance(result, FilterDecision):
            return ("dropped", outcome, result.reason)
        return ("ok", outcome, result)

    def consume(result) -> None:
        status, outcome, payload = result
        if status == "ok":
            store.append_batch("query", [q.to_record() for q in payload])
        elif status == "dropped":
            dropped.append([outcome.id, payload])
        elif status == "failed":
            log.warning("queries stage failed for %s: %s", outcome.id, payload)
            failed.append([outcome.id, "queries", payload])
        emit(f"queries:{outcome.id}")

    _run_units(config, outcomes, build, consume)
    store.checkpoint("queries", {"complete": True, "dropped": dropped, "failed": failed})
    return dropped, failed


def _apply_gate(config: RunConfig, store) -> int:
    """Auto-accept if configured; returns the number of still-pending queries."""
    from .datastore import effective_review

    overlay = effective_review(store)
    if config.auto_accept:
        for record in store.load("query"):
            state = overlay[record["id"]]
            if state["state"] == ReviewState.PENDING.value:
                store.append(
                    "decision",
                    {
                        "id": f"{record['id']}@{state['version'] + 1}",
                        "query_id": record["id"],
                        "action": "accept",
                        "new_text": None,
                        "reason": None,
                        "reviewer_id": "auto",
                        "version": state["version"] + 1,
                        "decided_at": store.timestamp(),
                    },
                )
        overlay = effective_review(store)
    return sum(1 for s in overlay.values() if s["state"] == ReviewState.PENDING.value)


def _stage_translations(config, synth, store, outcomes_by_id, emit):
    checkpoint = store.get_checkpoint("translations")
    if checkpoint and checkpoint.get("complete"):
        return [list(f) for f in checkpoint["failed"]]
    from .datastore import effective_review

    overlay = effective_review(store)
    failed: list[list] = []
    units = []
    for record in store.load("query"):
        state = overlay[record["id"]]
        if (
            record["marking"] == Marking.EXPLICIT.value
            and record["language"] == config.source_language
            and state["state"] in (ReviewState.ACCEPTED.value, ReviewState.EDITED.value)
        ):
            units.append((record, state["text"]))

    def build(unit):
        record, effective_text = unit
        expected = [
            variant_query_id(record["outcome_id"], record["paraphrase_index"], Marking.EXPLICIT, t)
            for t in config.targets
        ]
        if all(store.has("query", qid) for qid in expected):
            return ("done", record["id"], None)
        outcome = outcomes_by_id.get(record["outcome_id"])
        if outcome is None:
            return ("failed", record["id"], "unknown outcome")
        query = Query.from_record(record)
        try:
            translations = synth.translate_explicit(
                query, outcome, config.targets, text_override=effective_text
            )
        except CurriqaError as exc:
            return ("failed", record["id"], f"{type(exc).__name__}: {exc}")
        return ("ok", record["id"], translations)

    def consume(result) -> None:
        status, query_id, payload = result
        if status == "ok":
            store.append_batch("query", [q.to_record() for q in payload])
        elif status == "failed":
            log.warning("translation failed for %s: %s", query_id, payload)
            failed.append([query_id, "translations", payload])
        emit(f"translate:{query_id}")

    _run_units(config, units, build, consume)
    store.checkpoint("translations", {"complete": True, "failed": failed})
    return failed


def _stage_responses(config, synth, store, emit):
    checkpoint = store.get_checkpoint("responses")
    if checkpoint and checkpoint.get("complete"):
        return [list(f) for f in checkpoint["failed"]]
    from .datastore import effective_review

    overlay = effective_review(store)
    failed: list[list] = []
    units = []
    for record in store.load("query"):
        state = overlay[record["id"]]
        if state["state"] in (ReviewState.ACCEPTED.value, ReviewState.EDITED.value):
            units.append((record, state))

    def build(unit):
        record, state = unit
        expected = [
            response_id(record["id"], level, model)
            for level in config.levels
            for model in config.responder_models
        ]
        if all(store.has("response", rid) for rid in expected):
            return ("done", record["id"], None)
        query = replace(
            Query.from_record(record), review_state=ReviewState(state["state"])
        )
        responses = []
        try:
            for level in config.levels:
                for model in config.responder_models:
                    responses.append(
                        synth.generate_response(query, level, model, text_override=state["text"])
                    )
        except CurriqaError as exc:
            return ("failed", record["id"], f"{type(exc).__name__}: {exc}")
        return ("ok", record["id"], responses)

    def consume(result) -> None:
        status, query_id, payload = result
        if status == "ok":
            store.append_batch("response", [r.to_record() for r in payload])
        elif status == "failed":
            log.warning("response generation failed for %s: %s", query_id, payload)
            failed.append([query_id, "responses", payload])
        emit(f"respond:{query_id}")

    _run_units(config, units, build, consume)
    store.checkpoint("responses", {"complete": True, "failed": failed})
    return failed
