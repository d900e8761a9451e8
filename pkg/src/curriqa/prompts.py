"""Prompt builders for every agent role in the pipeline.

Prompts are plain "Key: value" lines under a fixed "Task:" header, with any
potentially multi-line payload placed last. The fixed layout is what makes
scripted mock providers able to address individual stages and capture fields
with ordinary regular expressions.
"""

from __future__ import annotations

from .curriculum import LearningOutcome
from .gateway import MessagePair

#: Response difficulty bands: prompt dimensions injected into generation.
LEVEL_DIMENSIONS: dict[str, dict[str, str]] = {
    "Basic": {
        "audience": "young children and elementary school students",
        "wording": "very simple words, short sentences, concrete ideas",
        "style": "everyday examples and simple comparisons, one idea per sentence",
        "content": "only the most basic and essential meaning of the topic",
        "length": "around 2-3 short sentences",
    },
    "Intermediate": {
        "audience": "high school students and young adults",
        "wording": "clear, structured explanations in a textbook-like register",
        "style": "balanced reasoning that links personal experience to the wider social context",
        "content": "work in the learning objective and its achievement criterion where relevant",
        "length": "around 4-6 sentences",
    },
    "Advanced": {
        "audience": "adults, university students, and professionals",
        "wording": "analytical, evidence-based, and conceptually deep",
        "style": "culturally grounded perspectives expected of well-educated adults",
        "content": (
            "contextual analysis, balanced arguments, and practical implications; "
            "mention history, institutions, data, or research where relevant"
        ),
        "length": "around 6-12 sentences, possibly in two short paragraphs",
    },
}

#: Structured reply schemas per evaluator kind.
QUERY_EVAL_SCHEMA = {
    "reflects_outcome": {"type": "bool"},
    "feedback": {"type": "str", "required": False},
}
RESPONSE_EVAL_SCHEMA = {
    "language_consistency": {"type": "bool"},
    "difficulty_fit": {"type": "bool"},
    "outcome_alignment": {"type": "bool"},
    "feedback": {"type": "str", "required": False},
}
FILTER_SCHEMA = {
    "culture_specific": {"type": "bool"},
    "reason": {"type": "str", "required": False},
    "polished": {"type": "str", "required": False},
}
JUDGE_SCHEMA = {
    "language_selection": {"type": "int", "min": 0, "max": 1},
    "cultural_appropriateness": {"type": "int", "min": 1, "max": 10},
    "language_use": {"type": "int", "min": 1, "max": 10},
    "rationale": {"type": "str", "required": False},
}


def _user(*lines: str) -> str:
    return "\n".join(lines)


def initial_query(outcome: LearningOutcome, language: str, implicit_phrase: str) -> tuple[MessagePair, ...]:
    return (
        (
            "system",
            "You turn one curriculum learning outcome into a single open-ended "
            "question a curious person might ask in everyday life. Output only "
            "the question.",
        ),
        (
            "user",
            _user(
                "Task: initial-query",
                f"Language: {language}",
                f"Implicit phrase: {implicit_phrase}",
                "Frame the question around the learner's own society using the "
                "implicit phrase; do not name any country.",
                f"Outcome: {outcome.id}",
                f"Objective: {outcome.objective_text}",
                f"Criterion: {outcome.criterion_text}",
            ),
        ),
    )


def evaluate_query(draft: str, outcome: LearningOutcome, iteration: int) -> tuple[MessagePair, ...]:
    return (
        (
            "system",
            "You check whether a draft question fully reflects a learning "
            "outcome. Reply with JSON only: "
            '{"reflects_outcome": true|false, "feedback": "..."}.',
        ),
        (
            "user",
            _user(
                "Task: evaluate-query",
                f"Iteration: {iteration}",
                f"Outcome: {outcome.id}",
                f"Objective: {outcome.objective_text}",
                f"Criterion: {outcome.criterion_text}",
                f"Draft: {draft}",
            ),
        ),
    )


def revise_text(draft: str, feedback: str) -> tuple[MessagePair, ...]:
    return (
        (
            "system",
            "You revise a draft according to reviewer feedback. Output only the "
            "revised text.",
        ),
        (
            "user",
            _user(
                "Task: revise-text",
                f"Feedback: {feedback}",
                f"Draft: {draft}",
            ),
        ),
    )


def culture_filter(query_text: str, outcome: LearningOutcome, language: str) -> tuple[MessagePair, ...]:
    return (
        (
            "system",
            "You decide whether a question depends on culture-specific "
            "knowledge (local norms, institutions, shared experience) or only "
            "on general culture-agnostic knowledge. If culture-specific, also "
            "return the question lightly polished for naturalness. Reply with "
            'JSON only: {"culture_specific": true|false, "reason": "...", '
            '"polished": "..."}.',
        ),
        (
            "user",
            _user(
                "Task: culture-filter",
                f"Language: {language}",
                f"Outcome: {outcome.id}",
                f"Objective: {outcome.objective_text}",
                f"Criterion: {outcome.criterion_text}",
                f"Query: {query_text}",
            ),
        ),
    )


def paraphrase_query(query_text: str, index: int) -> tuple[MessagePair, ...]:
    return (
        (
            "system",
            "You paraphrase a question so it keeps the exact meaning but reads "
            "differently. Output only the paraphrase.",
        ),
        (
            "user",
            _user(
                "Task: paraphrase-query",
                f"Variant index: {index}",
                f"Query: {query_text}",
            ),
        ),
    )


def restate_marking(
    query_text: str,
    marking: str,
    language: str,
    country_name: str,
    implicit_phrase: str,
) -> tuple[MessagePair, ...]:
    instructions = {
        "NoCountry": "Remove every reference to a particular country or society; "
        "keep the question otherwise unchanged.",
        "Implicit": f'Refer to the society only implicitly, as "{implicit_phrase}"; '
        "never name the country.",
        "Explicit": f'Name the country "{country_name}" explicitly in the question.',
    }
    lines = [
        "Task: restate-marking",
        f"Marking: {marking}",
        f"Language: {language}",
    ]
    if marking == "Explicit":
        lines.append(f"Country name: {country_name}")
    if marking == "Implicit":
        lines.append(f"Implicit phrase: {implicit_phrase}")
    lines.append(instructions[marking])
    lines.append(f"Query: {query_text}")
    return (
        (
            "system",
            "You restate a question with a different cultural marking. Output "
            "only the restated question.",
        ),
        ("user", _user(*lines)),
    )


def translate_query(
    text: str, source_language: str, target_language: str, country_name: str
) -> tuple[MessagePair, ...]:
    return (
        (
            "system",
            "You translate a question faithfully and naturally. Output only the "
            "translation.",
        ),
        (
            "user",
            _user(
                "Task: translate-query",
                f"Source language: {source_language}",
                f"Target language: {target_language}",
                f"Country name: {country_name}",
                f"Source text: {text}",
            ),
        ),
    )


def respond(query_text: str, language: str, level: str) -> tuple[MessagePair, ...]:
    dims = LEVEL_DIMENSIONS[level]
    return (
        (
            "system",
            "You answer an open-ended question for a specific audience band. "
            "Output only the answer.",
        ),
        (
            "user",
            _user(
                "Task: respond",
                f"Language: {language}",
                f"Level: {level}",
                f"Audience: {dims['audience']}",
                f"Wording: {dims['wording']}",
                f"Style: {dims['style']}",
                f"Content: {dims['content']}",
                f"Length guideline: {dims['length']}",
                f"Query: {query_text}",
            ),
        ),
    )


def evaluate_response(
    query_text: str, draft: str, level: str, outcome_id: str, iteration: int
) -> tuple[MessagePair, ...]:
    return (
        (
            "system",
            "You evaluate a draft answer on three criteria: (1) written in the "
            "same language as the query, (2) difficulty fits the stated level, "
            "(3) content aligns with the learning outcome. Reply with JSON "
            'only: {"language_consistency": true|false, "difficulty_fit": '
            'true|false, "outcome_alignment": true|false, "feedback": "..."}.',
        ),
        (
            "user",
            _user(
                "Task: evaluate-response",
                f"Iteration: {iteration}",
                f"Level: {level}",
                f"Outcome: {outcome_id}",
                f"Query: {query_text}",
                f"Draft: {draft}",
            ),
        ),
    )


def judge_pair(query_text: str, response_text: str, language: str) -> tuple[MessagePair, ...]:
    return (
        (
            "system",
            "You grade one question-answer pair for a culture-specific QA "
            "dataset on three dimensions. language_selection (0 or 1): 1 only "
            "if the response is written in the language the query calls for, "
            "with no unrequested code-mixing. cultural_appropriateness (1-10): "
            "how well the response fits the target culture's context, norms, "
            "and facts, without stereotyping. language_use (1-10): fluency, "
            "naturalness, and register of the response. Reply with JSON only: "
            '{"language_selection": 0|1, "cultural_appropriateness": 1-10, '
            '"language_use": 1-10, "rationale": "..."}.',
        ),
        (
            "user",
            _user(
                "Task: judge-pair",
                f"Language: {language}",
                f"Query: {query_text}",
                f"Response: {response_text}",
            ),
        ),
    )
