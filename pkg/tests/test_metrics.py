"""Energy model, explosion ratios, mixtures, and CRI."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cribench.errors import InvalidWeightsError
from cribench.metrics import (
    BenchmarkOutcome,
    EnergyModel,
    cri,
    energy,
    explosion_ratio,
    weighted_mixture,
)

# (q0, qr, t0, tr) per benchmark from the bundled reference dataset at r=0.3
REFERENCE = {
    "gpt-4o-mini": {"mbpp": (0.85, 0.75, 22.4, 38.8),
                    "humaneval": (0.87, 0.75, 28.6, 48.2),
                    "gsm8k": (0.80, 0.69, 33.3, 70.2)},
    "mistral-large": {"mbpp": (0.62, 0.30, 35.8, 168.4),
                      "humaneval": (0.68, 0.39, 38.4, 162.2),
                      "gsm8k": (0.64, 0.28, 49.4, 265.5)},
    "deepseek-chat": {"mbpp": (0.56, 0.02, 18.1, 1020.4),
                      "humaneval": (0.65, 0.12, 25.0, 131.0),
                      "gsm8k": (0.72, 0.19, 59.9, 684.4)},
}


def outcomes_for(model):
    return [BenchmarkOutcome(b, *REFERENCE[model][b]) for b in REFERENCE[model]]


class TestEnergy:
    def test_baseline_cell(self):
        assert energy(30.1, 18.1) == pytest.approx(12.66)
        assert round(energy(30.1, 18.1), 1) == 12.7

    def test_zero(self):
        assert energy(0, 0) == 0.0

    def test_compressed_cell(self):
        assert energy(9.03, 1020.4) == pytest.approx(460.53, abs=0.01)

    def test_linearity(self):
        assert energy(3, 5) + energy(4, 6) == pytest.approx(energy(7, 11))

    def test_custom_coefficients(self):
        assert energy(10, 10, EnergyModel(1.0, 2.0)) == pytest.approx(30.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            energy(-1, 0)
        with pytest.raises(ValueError):
            EnergyModel(0.0, 0.45)


class TestExplosionRatio:
    def test_severe_expansion(self):
        assert explosion_ratio(18.1, 1020.4) == pytest.approx(56.4, abs=0.05)

    def test_mild_expansion(self):
        assert explosion_ratio(25.0, 131.0) == pytest.approx(5.24, abs=0.01)

    def test_identity(self):
        assert explosion_ratio(42.0, 42.0) == 1.0

    def test_zero_baseline(self):
        with pytest.raises(ZeroDivisionError):
            explosion_ratio(0.0, 10.0)


class TestWeightedMixture:
    def test_balanced(self):
        third = 1.0 / 3.0
        value = weighted_mixture((1020.4, 131.0, 684.4), (third, third, third))
        assert value == pytest.approx(611.93, abs=0.01)

    def test_two_way_mix(self):
        assert weighted_mixture((1020.4, 131.0), (0.73, 0.27)) == pytest.approx(780.26, abs=0.01)

    def test_identity(self):
        assert weighted_mixture((5.5,), (1.0,)) == 5.5

    def test_bad_weights(self):
        with pytest.raises(InvalidWeightsError):
            weighted_mixture((1.0, 2.0), (0.6, 0.6))
        with pytest.raises(InvalidWeightsError):
            weighted_mixture((1.0, 2.0), (1.5, -0.5))
        with pytest.raises(InvalidWeightsError):
            weighted_mixture((1.0, 2.0), (1.0,))


class TestCri:
    def test_reference_models(self):
        assert cri(outcomes_for("gpt-4o-mini")).cri == pytest.approx(0.848, abs=0.001)
        assert cri(outcomes_for("mistral-large")).cri == pytest.approx(0.424, abs=0.001)
        assert cri(outcomes_for("deepseek-chat")).cri == pytest.approx(0.090, abs=0.001)

    def test_perfect_robustness(self):
        report = cri([BenchmarkOutcome("b", 0.8, 0.8, 30.0, 30.0)])
        assert report.cri == 1.0
        assert report.per_benchmark[0].term == 1.0

    def test_shrinkage_not_rewarded(self):
        report = cri([BenchmarkOutcome("b", 0.8, 0.8, 30.0, 10.0)])
        assert report.per_benchmark[0].length_factor == 1.0
        assert report.cri == 1.0

    def test_quality_gain_flagged_unclamped(self):
        report = cri([BenchmarkOutcome("b", 0.5, 0.75, 30.0, 30.0)])
        assert report.cri == pytest.approx(1.5)
        assert any("exceeds 1" in flag for flag in report.flags)

    def test_undefined_quality_excluded_with_flag(self):
        report = cri([
            BenchmarkOutcome("dead", 0.0, 0.0, 30.0, 40.0),
            BenchmarkOutcome("live", 0.8, 0.4, 30.0, 30.0),
        ])
        assert report.cri == pytest.approx(0.5)
        assert report.per_benchmark[0].excluded
        assert any("undefined quality ratio" in flag for flag in report.flags)

    def test_workload_weights(self):
        outcomes = [
            BenchmarkOutcome("a", 0.8, 0.8, 30.0, 30.0),   # term 1.0
            BenchmarkOutcome("b", 0.8, 0.4, 30.0, 30.0),   # term 0.5
        ]
        report = cri(outcomes, weights={"a": 0.75, "b": 0.25})
        assert report.cri == pytest.approx(0.875)
        with pytest.raises(InvalidWeightsError):
            cri(outcomes, weights={"a": 1.0})

    def test_mismatched_ceilings_rejected(self):
        with pytest.raises(ValueError):
            cri([BenchmarkOutcome("a", 0.5, 0.5, 10, 10, t_max=1024),
                 BenchmarkOutcome("b", 0.5, 0.5, 10, 10, t_max=2048)])

    @given(st.floats(0.0, 2000.0), st.floats(0.0, 2000.0))
    def test_monotone_in_output_growth(self, tr1, tr2):
        lo, hi = sorted((tr1, tr2))
        top = cri([BenchmarkOutcome("b", 0.8, 0.6, 100.0, lo, t_max=4096)]).cri
        bottom = cri([BenchmarkOutcome("b", 0.8, 0.6, 100.0, hi, t_max=4096)]).cri
        assert bottom <= top + 1e-12

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_monotone_in_quality(self, qr1, qr2):
        lo, hi = sorted((qr1, qr2))
        low = cri([BenchmarkOutcome("b", 0.8, lo, 100.0, 200.0)]).cri
        high = cri([BenchmarkOutcome("b", 0.8, hi, 100.0, 200.0)]).cri
        assert low <= high + 1e-12
