"""Run and provider configuration: loading, defaults, stable digests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Union

from .gateway import ProviderConfig

ROLE_NAMES = ("generator", "evaluator", "reviser", "translator", "judge", "responder")

#: Sampling temperature per role; evaluation-like roles decode greedily.
ROLE_TEMPERATURES = {
    "generator": 0.7,
    "reviser": 0.7,
    "responder": 0.7,
    "evaluator": 0.0,
    "translator": 0.0,
    "judge": 0.0,
}

DEFAULT_LEVELS = ("Basic", "Intermediate", "Advanced")


@dataclass(frozen=True)
class RoleBinding:
    provider_id: str
    model_id: str


def _default_roles() -> dict[str, RoleBinding]:
    return {
        "generator": RoleBinding("default", "gen-1"),
        "reviser": RoleBinding("default", "gen-1"),
        "translator": RoleBinding("default", "gen-1"),
        "evaluator": RoleBinding("default", "eval-1"),
        "judge": RoleBinding("default", "judge-1"),
        "responder": RoleBinding("default", ""),  # model comes from responder_models
    }


@dataclass
class RunConfig:
    """Everything a synthesis run depends on besides the curriculum itself."""

    source_language: str = "ko"
    country_name: dict[str, str] = field(
        default_factory=lambda: {
            "ko": "한국",
            "en": "Korea",
            "zh": "韩国",
            "ja": "韓国",
        }
    )
    implicit_phrase: dict[str, str] = field(
        default_factory=lambda: {
            "ko": "우리 사회",
            "en": "our society",
            "zh": "我们的社会",
            "ja": "私たちの社会",
        }
    )
    targets: tuple[str, ...] = ("en", "zh", "ja")
    levels: tuple[str, ...] = DEFAULT_LEVELS
    responder_models: tuple[str, ...] = ("resp-a", "resp-b", "resp-c", "resp-d")
    max_iters: int = 5
    seed: int = 0
    auto_accept: bool = False
    workers: int = 4
    roles: dict[str, RoleBinding] = field(default_factory=_default_roles)

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.source_language in self.targets:
            raise ValueError("targets must not include the source language")
        for level in self.levels:
            if level not in DEFAULT_LEVELS:
                raise ValueError(f"unknown level {level!r}")
        for language in (self.source_language, *self.targets):
            if language not in self.country_name:
                raise ValueError(f"country name missing for language {language!r}")
            if language not in self.implicit_phrase:
                raise ValueError(f"implicit phrase missing for language {language!r}")
        for role in ROLE_NAMES:
            if role not in self.roles:
                raise ValueError(f"role binding missing for {role!r}")

    def to_record(self) -> dict:
        return {
            "source_language": self.source_language,
            "country": {"name": dict(self.country_name), "implicit": dict(self.implicit_phrase)},
            "targets": list(self.targets),
            "levels": list(self.levels),
            "responder_models": list(self.responder_models),
            "max_iters": self.max_iters,
            "seed": self.seed,
            "auto_accept": self.auto_accept,
            "workers": self.workers,
            "roles": {
                role: {"provider_id": b.provider_id, "model_id": b.model_id}
                for role, b in self.roles.items()
            },
        }

    @classmethod
    def from_record(cls, record: dict) -> "RunConfig":
        kwargs: dict = {}
        if "source_language" in record:
            kwargs["source_language"] = record["source_language"]
        country = record.get("country", {})
        if "name" in country:
            kwargs["country_name"] = dict(country["name"])
        if "implicit" in country:
            kwargs["implicit_phrase"] = dict(country["implicit"])
        for key in ("max_iters", "seed", "auto_accept", "workers"):
            if key in record:
                kwargs[key] = record[key]
        for key in ("targets", "levels", "responder_models"):
            if key in record:
                kwargs[key] = tuple(record[key])
        if "roles" in record:
            roles = _default_roles()
            for role, binding in record["roles"].items():
                roles[role] = RoleBinding(binding["provider_id"], binding["model_id"])
            kwargs["roles"] = roles
        return cls(**kwargs)

    def digest(self) -> str:
        """Content hash of the config; invariant under JSON key reordering."""
        blob = json.dumps(self.to_record(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return RunConfig.from_record(json.load(f))


def load_provider_configs(path) -> list[ProviderConfig]:
    """Provider config file: either a list or {"providers": [...]}."""
    with open(path, encoding="utf-8") as f:
        loaded = json.load(f)
    records = loaded["providers"] if isinstance(loaded, dict) else loaded
    return [ProviderConfig.from_record(r) for r in records]
