"""Deployment metrics: per-query energy, explosion ratio, weighted mixtures,
and the Compression Robustness Index (CRI)."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidWeightsError

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class EnergyModel:
    """Per-token energy costs in millijoules; output generation is ~3x input."""

    eps_in: float = 0.15
    eps_out: float = 0.45

    def __post_init__(self):
        if self.eps_in <= 0 or self.eps_out <= 0:
            raise ValueError("energy coefficients must be positive")


def energy(t_in: float, t_out: float, model: EnergyModel = EnergyModel()) -> float:
    """Per-query energy in mJ: eps_in * T_in + eps_out * T_out."""
    if t_in < 0 or t_out < 0:
        raise ValueError("token counts must be >= 0")
    return model.eps_in * t_in + model.eps_out * t_out


def explosion_ratio(baseline_mean: float, compressed_mean: float) -> float:
    """Compressed-condition mean output length over the baseline mean."""
    if baseline_mean == 0:
        raise ZeroDivisionError("baseline mean output length is zero")
    return compressed_mean / baseline_mean


def weighted_mixture(values, weights) -> float:
    """Weighted aggregate of per-benchmark values; weights must sum to one."""
    values = list(values)
    weights = list(weights)
    if len(values) != len(weights):
        raise InvalidWeightsError(f"{len(values)} values but {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise InvalidWeightsError("weights must be >= 0")
    total = math.fsum(weights)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise InvalidWeightsError(f"weights sum to {total}, expected 1.0")
    return math.fsum(w * v for w, v in zip(weights, values))


@dataclass(frozen=True)
class BenchmarkOutcome:
    """Quality and output-length pairs for one benchmark at one ratio."""

    benchmark: str
    q0: float
    qr: float
    t0: float
    tr: float
    t_max: int = 1024

    def __post_init__(self):
        if not 0.0 <= self.q0 <= 1.0 or not 0.0 <= self.qr <= 1.0:
            raise ValueError("pass@1 scores must be in [0, 1]")
        if self.t0 < 0 or self.tr < 0:
            raise ValueError("mean output lengths must be >= 0")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")


@dataclass(frozen=True)
class CriTerm:
    benchmark: str
    quality_ratio: float | None
    length_factor: float
    term: float | None
    excluded: bool = False


@dataclass(frozen=True)
class CriReport:
    """Per-benchmark robustness terms and their (weighted) mean.

    ``flags`` records excluded benchmarks (undefined quality ratio at Q0=0)
    and terms above 1 (compressed quality beat baseline); such terms are
    reported unclamped.
    """

    cri: float
    per_benchmark: tuple[CriTerm, ...]
    model: str | None = None
    ratio: float | None = None
    flags: tuple[str, ...] = ()


def cri(outcomes, weights=None, model: str | None = None,
        ratio: float | None = None) -> CriReport:
    """Compression Robustness Index over a benchmark set.

    Each benchmark contributes (Qr/Q0) * (1 - max(0, Tr - T0)/Tmax): quality
    retention discounted by output growth relative to the generation budget.
    Benchmarks are weighted uniformly unless ``weights`` maps benchmark name
    to a workload share; weights renormalize over included benchmarks when a
    Q0=0 benchmark is excluded.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("need at least one benchmark outcome")
    t_maxes = {o.t_max for o in outcomes}
    if len(t_maxes) > 1:
        raise ValueError(f"outcomes disagree on t_max: {sorted(t_maxes)}")

    if weights is not None:
        missing = {o.benchmark for o in outcomes} - set(weights)
        if missing:
            raise InvalidWeightsError(f"no weight for benchmarks {sorted(missing)}")
        if any(weights[o.benchmark] < 0 for o in outcomes):
            raise InvalidWeightsError("weights must be >= 0")

    terms = []
    flags = []
    for outcome in outcomes:
        growth = max(0.0, outcome.tr - outcome.t0)
        length_factor = 1.0 - growth / outcome.t_max
        if outcome.q0 == 0.0:
            terms.append(CriTerm(outcome.benchmark, None, length_factor, None, excluded=True))
            flags.append(f"{outcome.benchmark}: undefined quality ratio (Q0=0), excluded")
            continue
        quality_ratio = outcome.qr / outcome.q0
        term = quality_ratio * length_factor
        if term > 1.0:
            flags.append(f"{outcome.benchmark}: term {term:.3f} exceeds 1 (Qr > Q0)")
        terms.append(CriTerm(outcome.benchmark, quality_ratio, length_factor, term))

    included = [t for t in terms if not t.excluded]
    if not included:
        raise ValueError("every benchmark was excluded; CRI undefined")
    if weights is None:
        value = math.fsum(t.term for t in included) / len(included)
    else:
        mass = math.fsum(weights[t.benchmark] for t in included)
        if mass <= 0:
            raise InvalidWeightsError("included benchmarks carry zero total weight")
        value = math.fsum(weights[t.benchmark] * t.term for t in included) / mass
    return CriReport(value, tuple(terms), model, ratio, tuple(flags))
