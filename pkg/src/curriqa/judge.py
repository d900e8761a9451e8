"""Rubric scoring of query-response pairs and inter-rater agreement.

A judge model returns three fields per pair: whether the response language
matches the query language (0/1), cultural appropriateness (1-10), and
language use (1-10). Agreement between raters is summarized with Cohen's
kappa (two raters) or Fleiss' kappa (many raters).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from . import prompts
from .config import ROLE_TEMPERATURES
from .errors import UnparseableReply
from .gateway import AgentRequest, Decoding, Gateway


@dataclass(frozen=True)
class JudgeScore:
    pair_id: str
    language_selection: int
    cultural_appropriateness: int
    language_use: int
    judge_model: str
    rationale: str = ""

    def __post_init__(self) -> None:
        if self.language_selection not in (0, 1):
            raise ValueError("language_selection must be 0 or 1")
        if not 1 <= self.cultural_appropriateness <= 10:
            raise ValueError("cultural_appropriateness must be in 1..10")
        if not 1 <= self.language_use <= 10:
            raise ValueError("language_use must be in 1..10")

    def to_record(self) -> dict:
        return {
            "id": self.pair_id,
            "pair_id": self.pair_id,
            "language_selection": self.language_selection,
            "cultural_appropriateness": self.cultural_appropriateness,
            "language_use": self.language_use,
            "judge_model": self.judge_model,
            "rationale": self.rationale,
        }

    @classmethod
    def from_record(cls, record: dict) -> "JudgeScore":
        return cls(
            pair_id=record["pair_id"],
            language_selection=record["language_selection"],
            cultural_appropriateness=record["cultural_appropriateness"],
            language_use=record["language_use"],
            judge_model=record.get("judge_model", ""),
            rationale=record.get("rationale", ""),
        )


class Judge:
    """Scores pairs through the gateway with structured-output repair."""

    def __init__(self, gateway: Gateway, provider_id: str, model_id: str, seed: Optional[int] = None) -> None:
        self.gateway = gateway
        self.provider_id = provider_id
        self.model_id = model_id
        self.seed = seed

    def judge_pair(self, pair_id: str, query_text: str, response_text: str, language: str) -> JudgeScore:
        # A blank side cannot be scored; floor the pair without a model call.
        if not query_text.strip() or not response_text.strip():
            return JudgeScore(
                pair_id=pair_id,
                language_selection=0,
                cultural_appropriateness=1,
                language_use=1,
                judge_model=self.model_id,
                rationale="empty query or response",
            )
        request = AgentRequest(
            provider_id=self.provider_id,
            model_id=self.model_id,
            role_tag="judge",
            messages=prompts.judge_pair(query_text, response_text, language),
            decoding=Decoding(temperature=ROLE_TEMPERATURES["judge"], seed=self.seed),
        )
        try:
            parsed = self.gateway.complete_structured(request, prompts.JUDGE_SCHEMA)
        except UnparseableReply as exc:
            raise exc.with_item(pair_id)
        return JudgeScore(
            pair_id=pair_id,
            language_selection=parsed["language_selection"],
            cultural_appropriateness=parsed["cultural_appropriateness"],
            language_use=parsed["language_use"],
            judge_model=self.model_id,
            rationale=parsed.get("rationale", ""),
        )


@dataclass(frozen=True)
class ScoredPair:
    score: JudgeScore
    language: str
    marking: str
    level: str


GROUP_FIELDS = ("language", "marking", "level")


def aggregate_scores(scored_pairs: Sequence[ScoredPair], group_by: Sequence[str]) -> list[dict]:
    """Per-group score summary rows, sorted by the group key tuple.

    ls_accuracy is the mean of the 0/1 language-selection field; the two
    rubric scores are plain means.
    """
    for field in group_by:
        if field not in GROUP_FIELDS:
            raise ValueError(f"cannot group by {field!r}; choose from {GROUP_FIELDS}")
    groups: dict[tuple, list[JudgeScore]] = {}
    for pair in scored_pairs:
        key = tuple(getattr(pair, field) for field in group_by)
        groups.setdefault(key, []).append(pair.score)
    rows = []
    for key in sorted(groups):
        scores = groups[key]
        n = len(scores)
        rows.append(
            {
                **dict(zip(group_by, key)),
                "n": n,
                "ls_accuracy": sum(s.language_selection for s in scores) / n,
                "ca_mean": sum(s.cultural_appropriateness for s in scores) / n,
                "lu_mean": sum(s.language_use for s in scores) / n,
            }
        )
    return rows


# --- agreement statistics ---


def cohens_kappa(rater_a: Sequence, rater_b: Sequence) -> float:
    """Chance-corrected agreement between two raters over the same items.

    Labels are compared by equality; the label alphabet is whatever appears
    in the data. Degenerate case: when chance agreement is 1 (both raters
    constant), returns 1.0 for perfect observed agreement, else 0.0.
    """
    if len(rater_a) != len(rater_b):
        raise ValueError("raters must score the same items")
    n = len(rater_a)
    if n == 0:
        raise ValueError("no items to compare")
    p_o = sum(1 for a, b in zip(rater_a, rater_b) if a == b) / n
    counts_a = Counter(rater_a)
    counts_b = Counter(rater_b)
    p_e = sum(counts_a[label] * counts_b.get(label, 0) for label in counts_a) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class RatingsMatrix:
    """Items x categories counts: rows[i][j] = raters assigning category j to item i."""

    rows: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if len(self.rows) < 2:
            raise ValueError("need at least 2 items")
        widths = {len(row) for row in self.rows}
        if len(widths) != 1:
            raise ValueError("all rows must cover the same categories")
        sums = {sum(row) for row in self.rows}
        if len(sums) != 1:
            raise ValueError("every item must be rated by the same number of raters")
        raters = sums.pop()
        if raters < 2:
            raise ValueError("need at least 2 raters")
        if any(cell < 0 for row in self.rows for cell in row):
            raise ValueError("counts must be non-negative")

    @property
    def n_raters(self) -> int:
        return sum(self.rows[0])

    @classmethod
    def from_labels(cls, labels_by_rater: Sequence[Sequence]) -> "RatingsMatrix":
        """Build the counts matrix from per-rater label sequences."""
        lengths = {len(labels) for labels in labels_by_rater}
        if len(lengths) != 1:
            raise ValueError("raters must score the same items")
        n_items = lengths.pop()
        categories = sorted({label for labels in labels_by_rater for label in labels}, key=repr)
        position = {label: j for j, label in enumerate(categories)}
        rows = []
        for i in range(n_items):
            row = [0] * len(categories)
            for labels in labels_by_rater:
                row[position[labels[i]]] += 1
            rows.append(tuple(row))
        return cls(tuple(rows))


def fleiss_kappa(matrix: RatingsMatrix) -> float:
    """Chance-corrected agreement for a fixed rater count per item.

    Degenerate case: when every rating lands in one category, chance
    agreement is 1 and the data show perfect consensus, so returns 1.0.
    """
    n_raters = matrix.n_raters
    n_items = len(matrix.rows)
    totals = [0] * len(matrix.rows[0])
    p_i_sum = 0.0
    for row in matrix.rows:
        p_i_sum += (sum(c * c for c in row) - n_raters) / (n_raters * (n_raters - 1))
        for j, cell in enumerate(row):
            totals[j] += cell
    p_bar = p_i_sum / n_items
    grand = n_items * n_raters
    p_e = sum((t / grand) ** 2 for t in totals)
    if p_e == 1.0:
        return 1.0
    return (p_bar - p_e) / (1.0 - p_e)


def score_run(store, judge: Judge) -> dict:
    """Score every stored response not scored yet; returns counts.

    Unparseable judge replies are recorded as failures, never as scores.
    """
    queries = {record["id"]: record for record in store.load("query")}
    scored = 0
    skipped = 0
    failed: list[list] = []
    with store.writer():
        for response in store.load("response"):
            if store.has("score", response["id"]):
                skipped += 1
                continue
            query = queries[response["query_id"]]
            try:
                score = judge.judge_pair(
                    pair_id=response["id"],
                    query_text=query["text"],
                    response_text=response["text"],
                    language=query["language"],
                )
            except UnparseableReply as exc:
                failed.append([response["id"], "judge", exc.detail])
                continue
            store.append("score", score.to_record())
            scored += 1
    return {"scored": scored, "skipped": skipped, "failed": failed}


def scored_pairs_from_store(store) -> list[ScoredPair]:
    queries = {record["id"]: record for record in store.load("query")}
    responses = {record["id"]: record for record in store.load("response")}
    pairs = []
    for record in store.load("score"):
        response = responses[record["pair_id"]]
        query = queries[response["query_id"]]
        pairs.append(
            ScoredPair(
                score=JudgeScore.from_record(record),
                language=query["language"],
                marking=query["marking"],
                level=response["level"],
            )
        )
    return pairs
