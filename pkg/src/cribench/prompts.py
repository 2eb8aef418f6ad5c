"""Prompts as word-token sequences, instruction segments, and survival under truncation.

A prompt is an ordered sequence of whitespace-delimited word-tokens.
Instruction segments are contiguous 1-based inclusive index ranges [a, b]
with importance weights summing to one. Survival of a segment under
truncation to the first ``retained_count(n, r)`` tokens is either binary
(strict mode) or proportional-with-threshold (fractional mode).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import (
    EmptyPromptError,
    InvalidAnnotationError,
    InvalidRatioError,
    ProfileIncompleteError,
    SpanOutOfRangeError,
)

STRICT = "strict"
FRACTIONAL = "fractional"
DEFAULT_THETA = 0.75

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class Prompt:
    """Tokenized prompt. ``tokens`` are non-empty and whitespace-free."""

    tokens: tuple[str, ...]
    source_benchmark: str | None = None

    def __post_init__(self):
        if not self.tokens:
            raise EmptyPromptError("prompt must contain at least one token")
        for tok in self.tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"token {tok!r} is empty or contains whitespace")

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class SegmentSpan:
    """Contiguous token range [a, b], 1-based inclusive, with importance weight."""

    a: int
    b: int
    weight: float
    label: str = ""

    def __post_init__(self):
        if self.a < 1 or self.b < self.a:
            raise ValueError(f"span requires 1 <= a <= b, got [{self.a}, {self.b}]")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"span weight must be in [0, 1], got {self.weight}")

    @property
    def length(self) -> int:
        return self.b - self.a + 1


@dataclass(frozen=True)
class SegmentAnnotation:
    """Weighted instruction segments for a prompt of ``prompt_length`` tokens.

    Spans are stored sorted by start index; they may overlap. Weights must
    sum to one within 1e-9.
    """

    spans: tuple[SegmentSpan, ...]
    prompt_length: int

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(sorted(self.spans, key=lambda s: (s.a, s.b))))
        if not self.spans:
            raise InvalidAnnotationError("annotation requires at least one span")
        if self.prompt_length < 1:
            raise ValueError("prompt_length must be >= 1")
        total = math.fsum(s.weight for s in self.spans)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise InvalidAnnotationError(f"segment weights sum to {total}, expected 1.0")
        for span in self.spans:
            if span.b > self.prompt_length:
                raise SpanOutOfRangeError(
                    f"span [{span.a}, {span.b}] exceeds prompt length {self.prompt_length}"
                )


@dataclass(frozen=True)
class SurvivalResult:
    """Per-segment survival values and their importance-weighted sum."""

    per_segment: tuple[tuple[str, float], ...]
    weighted: float


@dataclass(frozen=True)
class BenchmarkProfile:
    """Structural description of a benchmark's prompts.

    Survival can come from a canonical segment template evaluated at the
    benchmark's mean prompt length, from a direct ratio -> survival lookup
    table, or both (the table wins when it has the requested ratio).
    """

    name: str
    mean_tokens: float
    template_spans: tuple[SegmentSpan, ...] | None = None
    psi_table: dict[float, float] | None = None
    survival_mode: str = STRICT
    theta: float = DEFAULT_THETA

    def __post_init__(self):
        if not self.template_spans and not self.psi_table:
            raise ProfileIncompleteError(
                f"profile {self.name!r} needs template spans or a survival table"
            )
        if self.survival_mode not in (STRICT, FRACTIONAL):
            raise ValueError(f"unknown survival mode {self.survival_mode!r}")
        if self.mean_tokens < 1:
            raise ValueError("mean_tokens must be >= 1")
        if self.psi_table:
            for ratio, value in self.psi_table.items():
                if not 0.0 <= value <= 1.0:
                    raise ValueError(f"survival table value {value} at r={ratio} outside [0, 1]")

    @property
    def template_length(self) -> int:
        """Mean prompt length rounded to whole tokens."""
        return max(1, round(self.mean_tokens))

    def annotation(self) -> SegmentAnnotation:
        if not self.template_spans:
            raise ProfileIncompleteError(f"profile {self.name!r} has no template spans")
        return SegmentAnnotation(self.template_spans, self.template_length)


def tokenize(text: str, source_benchmark: str | None = None) -> Prompt:
    """Split text into maximal runs of non-whitespace, preserving order."""
    tokens = text.split()
    if not tokens:
        raise EmptyPromptError("text is empty or whitespace-only")
    return Prompt(tuple(tokens), source_benchmark)


def validate_ratio(r: float) -> float:
    if not 0.0 < r <= 1.0:
        raise InvalidRatioError(f"compression ratio must be in (0, 1], got {r}")
    return float(r)


def retained_count(n: int | float, r: float, rounding: str = "floor") -> int:
    """Number of tokens kept at ratio ``r``: max(1, floor(r*n)).

    ``rounding="nearest"`` rounds half up instead of flooring; truncation to
    zero tokens is never allowed.
    """
    validate_ratio(r)
    if n < 1:
        raise ValueError(f"token count must be >= 1, got {n}")
    if rounding == "floor":
        kept = math.floor(r * n)
    elif rounding == "nearest":
        kept = math.floor(r * n + 0.5)
    else:
        raise ValueError(f"unknown rounding {rounding!r}")
    return max(1, kept)


def segment_survival(
    span: SegmentSpan,
    n: int,
    r: float,
    mode: str = STRICT,
    theta: float = DEFAULT_THETA,
    rounding: str = "floor",
) -> float:
    """Survival of one segment when the first ``retained_count(n, r)`` tokens are kept.

    Strict mode: 1 if the whole span fits inside the retained prefix, else 0.
    Fractional mode: the covered fraction of the span, snapped to 1 when it
    reaches ``theta``.
    """
    if span.b > n:
        raise SpanOutOfRangeError(f"span [{span.a}, {span.b}] exceeds prompt length {n}")
    kept = retained_count(n, r, rounding)
    if mode == STRICT:
        return 1.0 if span.b <= kept else 0.0
    if mode == FRACTIONAL:
        if not 0.0 < theta <= 1.0:
            raise ValueError(f"theta must be in (0, 1], got {theta}")
        covered = max(0, min(span.b, kept) - span.a + 1)
        coverage = covered / span.length
        return 1.0 if coverage >= theta else coverage
    raise ValueError(f"unknown survival mode {mode!r}")


def weighted_survival(
    annotation: SegmentAnnotation,
    r: float,
    mode: str = STRICT,
    theta: float = DEFAULT_THETA,
    rounding: str = "floor",
) -> SurvivalResult:
    """Importance-weighted survival over all segments of an annotation."""
    per_segment = []
    parts = []
    for span in annotation.spans:
        psi = segment_survival(span, annotation.prompt_length, r, mode, theta, rounding)
        per_segment.append((span.label, psi))
        parts.append(span.weight * psi)
    return SurvivalResult(tuple(per_segment), math.fsum(parts))


def profile_survival(profile: BenchmarkProfile, r: float, rounding: str = "floor") -> float:
    """Survival for a benchmark profile: table lookup first, template second."""
    validate_ratio(r)
    if profile.psi_table:
        for ratio, value in profile.psi_table.items():
            if math.isclose(ratio, r, rel_tol=0.0, abs_tol=1e-9):
                return value
    if profile.template_spans:
        return weighted_survival(
            profile.annotation(), r, profile.survival_mode, profile.theta, rounding
        ).weighted
    raise ProfileIncompleteError(
        f"profile {profile.name!r} has no survival value for r={r} and no template spans"
    )


def _profile_from_dict(doc: dict, origin: str) -> BenchmarkProfile:
    try:
        spans = None
        if doc.get("spans"):
            spans = tuple(
                SegmentSpan(s["a"], s["b"], s["weight"], s.get("label", ""))
                for s in doc["spans"]
            )
        table = None
        if doc.get("psi_table"):
            table = {float(k): float(v) for k, v in doc["psi_table"].items()}
        return BenchmarkProfile(
            name=doc["name"],
            mean_tokens=float(doc["mean_tokens"]),
            template_spans=spans,
            psi_table=table,
            survival_mode=doc.get("survival_mode", STRICT),
            theta=float(doc.get("theta", DEFAULT_THETA)),
        )
    except KeyError as exc:
        raise ProfileIncompleteError(f"profile {origin}: missing field {exc}") from exc


def load_profile(name_or_path: str | Path) -> BenchmarkProfile:
    """Load a profile by bundled name (``mbpp``, ``humaneval``, ``gsm8k``) or file path."""
    name = str(name_or_path)
    if "/" not in name and "\\" not in name and not name.endswith(".json"):
        ref = resources.files("cribench").joinpath(f"data/profiles/{name}.json")
        if ref.is_file():
            return _profile_from_dict(json.loads(ref.read_text(encoding="utf-8")), name)
    path = Path(name_or_path)
    if not path.is_file():
        raise ProfileIncompleteError(f"no bundled profile or file named {name!r}")
    return _profile_from_dict(json.loads(path.read_text(encoding="utf-8")), str(path))


def bundled_profile_names() -> list[str]:
    root = resources.files("cribench").joinpath("data/profiles")
    return sorted(p.name.removesuffix(".json") for p in root.iterdir() if p.name.endswith(".json"))
