"""Pick the refinement target: a cited timestamp if the answer has one,
otherwise the evidence frame with the most aggregated attention."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .evidence import EvidenceSet, FrameRef, GenerationResult

# [m:ss], [mm:ss] or [h:mm:ss]; seconds (and minutes when hours are present) 00-59
TIMESTAMP_RE = re.compile(
    r"\[(?:(?P<h>\d{1,2}):(?P<hm>[0-5]\d)|(?P<m>\d{1,2})):(?P<s>[0-5]\d)\]"
)


class GroundingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GroundingOutcome:
    target_sec: float
    source: str
    raw_match: Optional[str] = None

    def to_dict(self) -> dict:
        return {"target_sec": self.target_sec, "source": self.source, "raw_match": self.raw_match}


def _clamp(t: float, duration_sec: float) -> float:
    return min(max(t, 0.0), duration_sec)


def extract_timestamp(text: str, duration_sec: float) -> Optional[tuple[float, str]]:
    """Last bracketed timestamp in ``text`` as clamped seconds, or None."""
    if not duration_sec > 0:
        raise ValueError("duration must be > 0")
    last = None
    for last in TIMESTAMP_RE.finditer(text):
        pass
    if last is None:
        return None
    if last.group("h") is not None:
        secs = int(last.group("h")) * 3600 + int(last.group("hm")) * 60
    else:
        secs = int(last.group("m")) * 60
    secs += int(last.group("s"))
    return _clamp(float(secs), duration_sec), last.group(0)


def attention_argmax(frame_attention: Sequence[float], frames: Sequence[FrameRef]) -> FrameRef:
    if not frames or len(frame_attention) != len(frames):
        raise GroundingError(
            f"attention/frames length mismatch: {len(frame_attention)} vs {len(frames)}")
    best = None
    for a, f in zip(frame_attention, frames):
        if a < 0:
            raise GroundingError("attention values must be >= 0")
        if best is None or a > best[0] or (a == best[0] and f.sort_key < best[1].sort_key):
            best = (a, f)
    return best[1]


def ground(answer: GenerationResult, evidence: EvidenceSet, duration_sec: float) -> GroundingOutcome:
    if len(evidence) == 0:
        raise GroundingError("empty evidence set")
    hit = extract_timestamp(answer.text, duration_sec)
    if hit is not None:
        return GroundingOutcome(hit[0], "regex", hit[1])
    if answer.frame_attention is None:
        raise GroundingError("no cited timestamp and no frame attention")
    frame = attention_argmax(answer.frame_attention, evidence.frames)
    return GroundingOutcome(_clamp(frame.timestamp_sec, duration_sec), "attention")
