"""Exception types shared across the pipeline."""

from __future__ import annotations


class CurriqaError(Exception):
    """Base class for all errors raised by this package."""


# --- curriculum ingestion ---------------------------------------------------

class MalformedRecord(CurriqaError):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        self.detail = detail
        super().__init__(f"malformed record at line {line_no}" + (f": {detail}" if detail else ""))


class DuplicateId(CurriqaError):
    def __init__(self, outcome_id: str):
        self.outcome_id = outcome_id
        super().__init__(f"duplicate outcome id: {outcome_id}")


class EmptyField(CurriqaError):
    def __init__(self, field: str, outcome_id: str):
        self.field = field
        self.outcome_id = outcome_id
        super().__init__(f"empty field {field!r} in record {outcome_id!r}")


# --- agent gateway ----------------------------------------------------------

class GatewayError(CurriqaError):
    """Base class for provider-facing failures."""


class ProviderUnavailable(GatewayError):
    def __init__(self, provider_id: str, attempts: int, cause: str = ""):
        self.provider_id = provider_id
        self.attempts = attempts
        super().__init__(
            f"provider {provider_id!r} unavailable after {attempts} attempts"
            + (f" ({cause})" if cause else "")
        )


class AuthFailure(GatewayError):
    def __init__(self, provider_id: str, detail: str = ""):
        self.provider_id = provider_id
        super().__init__(f"authentication failed for provider {provider_id!r}" + (f": {detail}" if detail else ""))


class BudgetExceeded(GatewayError):
    def __init__(self, provider_id: str, used: int, limit: int):
        self.provider_id = provider_id
        self.used = used
        self.limit = limit
        super().__init__(f"request budget exceeded for provider {provider_id!r}: {used}/{limit}")


class UnparseableReply(GatewayError):
    def __init__(self, raw_text: str, detail: str = "", item_id: str | None = None):
        self.raw_text = raw_text
        self.detail = detail
        self.item_id = item_id
        tag = f" [{item_id}]" if item_id else ""
        super().__init__(f"reply could not be parsed against schema{tag}: {detail}")

    def with_item(self, item_id: str) -> "UnparseableReply":
        return UnparseableReply(self.raw_text, self.detail, item_id)


class NoCatchAll(CurriqaError):
    def __init__(self) -> None:
        super().__init__("mock script has no catch-all rule (unconstrained rule required)")


# --- synthesis pipeline -----------------------------------------------------

class EmptyDraft(CurriqaError):
    def __init__(self, context: str = ""):
        super().__init__("draft is blank after trimming" + (f" ({context})" if context else ""))


class ReviewGateError(CurriqaError):
    """A query that has not cleared the review gate reached a gated stage."""


# --- analytics ---------------------------------------------------------------

class EmptyCorpus(CurriqaError):
    def __init__(self, detail: str = "") -> None:
        message = "cannot compute statistics over an empty document set"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


# --- datastore ----------------------------------------------------------------

class StoreError(CurriqaError):
    """I/O or locking failure in the run directory."""


class SchemaViolation(CurriqaError):
    def __init__(self, detail: str):
        super().__init__(f"record violates artifact schema: {detail}")
