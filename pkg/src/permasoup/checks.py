"""Pass/fail records shared by the verification routines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class StatCheck:
    name: str
    target: float
    estimate: float
    se: float
    sigmas: float = 4.0

    @property
    def passed(self) -> bool:
        return bool(abs(self.estimate - self.target) < self.sigmas * self.se)

    @property
    def z(self) -> float:
        return (self.estimate - self.target) / self.se if self.se > 0 else math.inf

    def to_dict(self) -> dict:
        return {"name": self.name, "target": float(self.target), "estimate": float(self.estimate),
                "se": float(self.se), "pass": self.passed}


@dataclass
class VerificationReport:
    checks: list
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "meta": self.meta,
                "checks": [c.to_dict() for c in self.checks]}


def mean_check(name: str, samples: np.ndarray, target: float, sigmas: float = 4.0) -> StatCheck:
    n = samples.shape[0]
    return StatCheck(name, float(target), float(samples.mean()),
                     float(samples.std(ddof=1) / math.sqrt(n)), sigmas)


@dataclass
class ExactCheck:
    name: str
    margin: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "margin": float(self.margin), "pass": bool(self.passed),
                "detail": self.detail}
