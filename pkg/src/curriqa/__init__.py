"""curriqa: turn curriculum learning outcomes into culture-specific QA datasets.

The package is organized around the pipeline stages:

- ``curriculum``: ingest learning outcomes, adaptability label bookkeeping
- ``gateway``: uniform chat-LLM client (retries, rate limit, cache, mock)
- ``pipeline``: the staged generate/evaluate/revise synthesis graph
- ``judge``: rubric scoring of QA pairs plus rater-agreement statistics
- ``analytics``: readability, lexical rarity, and topic-divergence metrics
- ``datastore``: run directories, append-only artifacts, checkpoints
- ``review``: HTTP service backing the human query-review gate
- ``cli``: the ``curriqa`` command
"""

__version__ = "0.1.0"
