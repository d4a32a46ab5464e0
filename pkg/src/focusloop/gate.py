"""Length-normalized token confidence and the refinement trigger."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .evidence import GenerationResult, PipelineConfig


class GateError(ValueError):
    pass


@dataclass(frozen=True)
class GateDecision:
    confidence: float
    threshold: float
    triggered: bool

    def __post_init__(self):
        if self.triggered != (self.confidence < self.threshold):
            raise GateError("triggered must equal confidence < threshold")


def normalized_confidence(result: GenerationResult) -> float:
    """Mean token log-probability, correctly rounded.

    The mean is taken in exact rational arithmetic so that L identical
    logprobs average back to exactly that logprob; threshold equality
    cases then compare exactly.
    """
    lps = result.token_logprobs
    if not lps:
        raise GateError("empty token list")
    total = sum((Fraction(x) for x in lps), Fraction(0))
    return float(total / len(lps))


def threshold_at_length(length: int, gamma0: float, beta: float) -> float:
    if length < 1:
        raise GateError(f"length must be >= 1, got {length}")
    if beta < 0:
        raise GateError("beta must be >= 0")
    if beta == 0.0:
        return gamma0
    return gamma0 - beta * math.log(length)


def should_refine(result: GenerationResult, config: PipelineConfig) -> GateDecision:
    c = normalized_confidence(result)
    th = threshold_at_length(result.length, config.gamma0, config.beta)
    return GateDecision(confidence=c, threshold=th, triggered=c < th)
