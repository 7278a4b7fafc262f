from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum


class Method(str, Enum):
    CLOSED_FORM = "closed_form"
    INTEGRATION = "integration"
    MONTE_CARLO = "monte_carlo"
    CLASSICAL_EXACT = "classical_exact"
    CLASSICAL_MC = "classical_mc"


@dataclass
class Diagnostics:
    B_used: int = 0
    acceptance_count: int = 0
    fallback_reason: str | None = None
    integration_converged: bool | None = None
    vertex_count: int | None = None
    simplex_count: int | None = None
    smoothing: str | None = None


@dataclass
class PValueResult:
    p: float
    method: Method
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p-value {self.p!r} outside [0, 1]")
        self.method = Method(self.method)

    def to_dict(self) -> dict:
        return {"p": self.p, "method": self.method.value, "diagnostics": asdict(self.diagnostics)}
