"""Curriculum ingestion: learning outcomes and adaptability-label bookkeeping.

A learning outcome is one atomic curriculum unit: a learning objective paired
with its achievement criterion. Input files are JSONL (one object per line,
fields ``id, objective, criterion, subject, grade_band, source_ref``) or CSV
with identical headers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, TextIO, Union

from .errors import DuplicateId, EmptyField, MalformedRecord

log = logging.getLogger(__name__)

RECORD_FIELDS = ("id", "objective", "criterion", "subject", "grade_band", "source_ref")
REQUIRED_FIELDS = ("id", "objective", "criterion")

#: Default curriculum-code pattern. Permissive on purpose: code shapes differ
#: across countries, so validation warns (flags) instead of failing.
DEFAULT_CODE_PATTERN = r".+"


@dataclass(frozen=True)
class LearningOutcome:
    """One curriculum unit: objective + achievement criterion."""

    id: str
    objective_text: str
    criterion_text: str
    subject: str = ""
    grade_band: str = ""
    source_ref: str = ""
    #: True when the id did not match the configured curriculum-code pattern.
    code_flagged: bool = False

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "objective": self.objective_text,
            "criterion": self.criterion_text,
            "subject": self.subject,
            "grade_band": self.grade_band,
            "source_ref": self.source_ref,
        }


class Adaptability(str, Enum):
    """How a learning outcome ports to another culture."""

    SIMPLY_TRANSFERRED = "simply_transferred"
    TARGET_MODIFIED = "target_modified"
    SAMPLE_REMOVED = "sample_removed"


#: Sentinel returned when raters produce no strict majority. Ties are flagged
#: for human resolution, never auto-picked.
TIE = "tie"


@dataclass(frozen=True)
class AdaptabilityLabel:
    outcome_id: str
    label: Adaptability
    rater_id: str


def _validate_record(record: dict, line_no: int) -> dict:
    for key in REQUIRED_FIELDS:
        if key not in record:
            raise MalformedRecord(line_no, f"missing field {key!r}")
    values = {}
    for key in RECORD_FIELDS:
        value = record.get(key, "")
        if value is None:
            value = ""
        if not isinstance(value, str):
            raise MalformedRecord(line_no, f"field {key!r} is not a string")
        values[key] = value
    for key in REQUIRED_FIELDS:
        if not values[key].strip():
            raise EmptyField(key, values["id"])
    return values


def _outcome_from_values(values: dict, pattern: re.Pattern) -> LearningOutcome:
    flagged = pattern.fullmatch(values["id"]) is None
    if flagged:
        log.warning("outcome id %r does not match curriculum-code pattern", values["id"])
    return LearningOutcome(
        id=values["id"],
        objective_text=values["objective"],
        criterion_text=values["criterion"],
        subject=values["subject"],
        grade_band=values["grade_band"],
        source_ref=values["source_ref"],
        code_flagged=flagged,
    )


def parse_curriculum(
    source: Union[str, TextIO],
    format: str = "jsonl",
    code_pattern: Union[str, re.Pattern, None] = None,
) -> list[LearningOutcome]:
    """Parse a curriculum stream into learning outcomes.

    Record order is preserved. Duplicate ids are rejected; ids that do not
    match ``code_pattern`` are flagged but kept.

    Raises:
        MalformedRecord: a line does not decode or misses required fields.
        DuplicateId: the same id appears twice.
        EmptyField: id, objective, or criterion is blank.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    pattern = re.compile(code_pattern or DEFAULT_CODE_PATTERN)

    outcomes: list[LearningOutcome] = []
    seen: set[str] = set()

    if format == "jsonl":
        for line_no, line in enumerate(source, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, str(exc)) from exc
            if not isinstance(record, dict):
                raise MalformedRecord(line_no, "record is not an object")
            values = _validate_record(record, line_no)
            if values["id"] in seen:
                raise DuplicateId(values["id"])
            seen.add(values["id"])
            outcomes.append(_outcome_from_values(values, pattern))
    elif format == "csv":
        reader = csv.DictReader(source)
        if reader.fieldnames is None:
            return []
        missing = [k for k in REQUIRED_FIELDS if k not in reader.fieldnames]
        if missing:
            raise MalformedRecord(1, f"missing header(s): {', '.join(missing)}")
        for record in reader:
            line_no = reader.line_num
            if None in record:
                raise MalformedRecord(line_no, "row has more columns than the header")
            values = _validate_record({k: v for k, v in record.items() if k is not None}, line_no)
            if values["id"] in seen:
                raise DuplicateId(values["id"])
            seen.add(values["id"])
            outcomes.append(_outcome_from_values(values, pattern))
    else:
        raise ValueError(f"unknown curriculum format: {format!r}")

    return outcomes


def serialize_outcomes(outcomes: Iterable[LearningOutcome]) -> str:
    """Serialize outcomes to JSONL. ``parse_curriculum`` of the result is identity."""
    lines = [json.dumps(o.to_record(), ensure_ascii=False, sort_keys=True) for o in outcomes]
    return "".join(line + "\n" for line in lines)


def resolve_adaptability(labels: Iterable[AdaptabilityLabel]) -> dict[str, str]:
    """Resolve rater labels per outcome by strict majority vote.

    Returns a map outcome_id -> label value, or ``TIE`` when no label holds a
    strict majority. Every outcome must carry at least one label.
    """
    by_outcome: dict[str, list[Adaptability]] = {}
    for item in labels:
        by_outcome.setdefault(item.outcome_id, []).append(Adaptability(item.label))

    resolved: dict[str, str] = {}
    for outcome_id, votes in by_outcome.items():
        counts = Counter(votes)
        top_label, top_count = counts.most_common(1)[0]
        if top_count * 2 > len(votes):
            resolved[outcome_id] = top_label.value
        else:
            resolved[outcome_id] = TIE
    return resolved
