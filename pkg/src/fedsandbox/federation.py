"""Scenario selector and federation settings shared by both experiments."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import ConfigurationError


class Scenario(str, enum.Enum):
    """Where data is processed and where DP noise is injected.

    central: all rows pooled at one server, noise added to the final result.
    local:   nodes share noised partial results in plaintext, noise calibrated
             to each node's own shard.
    secure:  nodes share exact partials through secure aggregation, noise
             calibrated to the whole federation and added once.
    """

    CENTRAL = "central"
    LOCAL = "local"
    SECURE = "secure"

    @property
    def number(self) -> int:
        return {"central": 1, "local": 2, "secure": 3}[self.value]

    @classmethod
    def parse(cls, value: str | int | Scenario) -> Scenario:
        if isinstance(value, Scenario):
            return value
        aliases = {"1": cls.CENTRAL, "2": cls.LOCAL, "3": cls.SECURE}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown scenario {value!r}") from None


KS_DEFAULT = (1, 2, 4, 8, 16, 32, 64)


@dataclass(frozen=True)
class FederationConfig:
    k: int = 1
    scenario: Scenario = Scenario.CENTRAL
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if self.k < 1:
            raise ConfigurationError("federation needs at least one node")
        if self.scenario is Scenario.CENTRAL and self.k != 1:
            raise ConfigurationError("the central scenario has a single node")
