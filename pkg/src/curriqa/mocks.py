"""Ready-made mock provider scripts.

These rule sets drive full offline pipeline runs against the scriptable mock
provider. Rules are matched first to last against the concatenated request
messages; reply templates substitute regex named groups plus $last_user,
$model_id, and $role_tag. Every script ends with a catch-all.
"""

from __future__ import annotations

import json
import re

CATCH_ALL = {"pattern": "", "reply": "ok"}

ACCEPT_QUERY = {
    "role": "evaluator",
    "pattern": r"Task: evaluate-query",
    "reply": '{"reflects_outcome": true, "feedback": "ok"}',
}
REJECT_QUERY = {
    "role": "evaluator",
    "pattern": r"Task: evaluate-query",
    "reply": '{"reflects_outcome": false, "feedback": "cover the outcome fully"}',
}
ACCEPT_RESPONSE = {
    "role": "evaluator",
    "pattern": r"Task: evaluate-response",
    "reply": '{"language_consistency": true, "difficulty_fit": true, '
    '"outcome_alignment": true, "feedback": "ok"}',
}
REJECT_RESPONSE = {
    "role": "evaluator",
    "pattern": r"Task: evaluate-response",
    "reply": '{"language_consistency": false, "difficulty_fit": false, '
    '"outcome_alignment": false, "feedback": "adjust level and language"}',
}
KEEP_FILTER = {
    "role": "evaluator",
    "pattern": r"Task: culture-filter.*Query: (?P<q>[^\n]+)",
    "reply": '{"culture_specific": true, "reason": "depends on local context", '
    '"polished": "$q"}',
}
DROP_FILTER = {
    "role": "evaluator",
    "pattern": r"Task: culture-filter",
    "reply": '{"culture_specific": false, "reason": "general knowledge"}',
}

INITIAL_QUERY = {
    "role": "generator",
    "pattern": r"Task: initial-query.*Implicit phrase: (?P<imp>[^\n]+).*Objective: (?P<obj>[^\n]+)",
    "reply": "In $imp, how does this matter: $obj?",
}
PARAPHRASE = {
    "role": "generator",
    "pattern": r"Task: paraphrase-query.*Variant index: (?P<idx>\d+).*Query: (?P<q>[^\n]+)",
    "reply": "(alt $idx) $q",
}
RESTATE_NO_COUNTRY = {
    "role": "generator",
    "pattern": r"Task: restate-marking.*Marking: NoCountry.*Query: (?P<q>[^\n]+)",
    "reply": "[general] $q",
}
RESTATE_IMPLICIT = {
    "role": "generator",
    "pattern": r"Task: restate-marking.*Marking: Implicit.*Query: (?P<q>[^\n]+)",
    "reply": "$q",
}
RESTATE_EXPLICIT = {
    "role": "generator",
    "pattern": r"Task: restate-marking.*Marking: Explicit.*Country name: (?P<c>[^\n]+).*Query: (?P<q>[^\n]+)",
    "reply": "In $c: $q",
}
TRANSLATE = {
    "role": "translator",
    "pattern": r"Task: translate-query.*Target language: (?P<lang>[^\n]+).*Source text: (?P<src>[^\n]+)",
    "reply": "[$lang] $src",
}
RESPOND = {
    "role": "generator",
    "pattern": r"Task: respond.*Level: (?P<lvl>[^\n]+).*Length guideline: (?P<len>[^\n]+).*Query: (?P<q>[^\n]+)",
    "reply": "A $lvl answer from $model_id at $len. It addresses: $q. That is the gist.",
}
REVISE = {
    "role": "reviser",
    "pattern": r"Task: revise-text.*Draft: (?P<d>[^\n]+)",
    "reply": "$d (revised)",
}
JUDGE = {
    "role": "judge",
    "pattern": r"Task: judge-pair",
    "reply": '{"language_selection": 1, "cultural_appropriateness": 9, '
    '"language_use": 8, "rationale": "well grounded"}',
}


def default_script() -> list[dict]:
    """Happy path: evaluators accept on the first draft, filter keeps everything."""
    # Hot-path rules first: full runs are dominated by response traffic.
    return [
        ACCEPT_RESPONSE,
        RESPOND,
        ACCEPT_QUERY,
        TRANSLATE,
        RESTATE_NO_COUNTRY,
        RESTATE_IMPLICIT,
        RESTATE_EXPLICIT,
        PARAPHRASE,
        KEEP_FILTER,
        INITIAL_QUERY,
        REVISE,
        JUDGE,
        CATCH_ALL,
    ]


def never_accept_script() -> list[dict]:
    """Evaluators reject every draft; refine loops run to the iteration cap."""
    return [REJECT_QUERY, REJECT_RESPONSE] + default_script()


def accept_on_script(k: int) -> list[dict]:
    """Evaluators accept exactly at iteration k of every refine loop."""
    accept_query_k = dict(ACCEPT_QUERY, pattern=rf"Task: evaluate-query.*Iteration: {k}\n")
    accept_response_k = dict(ACCEPT_RESPONSE, pattern=rf"Task: evaluate-response.*Iteration: {k}\n")
    return [accept_query_k, accept_response_k, REJECT_QUERY, REJECT_RESPONSE] + default_script()


def keep_prefix_script(prefix: str = "keep-") -> list[dict]:
    """Culture filter keeps only outcomes whose id starts with ``prefix``."""
    keep_rule = dict(
        KEEP_FILTER,
        pattern=rf"Task: culture-filter.*Outcome: {re.escape(prefix)}.*Query: (?P<q>[^\n]+)",
    )
    return [keep_rule, DROP_FILTER] + default_script()


def write_script(path, rules: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rule in rules:
            f.write(json.dumps(rule, ensure_ascii=False) + "\n")
