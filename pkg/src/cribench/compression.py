"""Deterministic first-N-words truncation and ratio sweeps."""

from __future__ import annotations

from dataclasses import dataclass

from .prompts import Prompt, retained_count, validate_ratio

DEFAULT_RATIOS = (1.0, 0.7, 0.5, 0.3)


@dataclass(frozen=True)
class RatioSweep:
    """Strictly decreasing ratios starting from the 1.0 baseline."""

    ratios: tuple[float, ...] = DEFAULT_RATIOS

    def __post_init__(self):
        for r in self.ratios:
            validate_ratio(r)
        if not self.ratios or self.ratios[0] != 1.0:
            raise ValueError("sweep must start at the 1.0 baseline")
        if any(hi <= lo for hi, lo in zip(self.ratios, self.ratios[1:])):
            raise ValueError(f"ratios must be strictly decreasing, got {self.ratios}")


def compress_first_n(prompt: Prompt, r: float, rounding: str = "floor") -> Prompt:
    """Keep the first ``retained_count(n, r)`` word-tokens of the prompt."""
    kept = retained_count(prompt.n, r, rounding)
    if kept == prompt.n:
        return prompt
    return Prompt(prompt.tokens[:kept], prompt.source_benchmark)


def sweep(prompt: Prompt, ratio_sweep: RatioSweep, rounding: str = "floor") -> list[tuple[float, Prompt]]:
    """Compress the prompt at every ratio of the sweep, preserving order."""
    return [(r, compress_first_n(prompt, r, rounding)) for r in ratio_sweep.ratios]
