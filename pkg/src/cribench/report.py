"""Report tables: cell summaries, explosion reconciliation, provider
comparison, and CRI scoring, rendered as aligned text, CSV, or markdown.

Cell rows come either from trial-record JSONL files (summarized here) or
from a cell-summary CSV such as the bundled reference dataset, so every
table can be produced offline.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import CribenchError
from .metrics import BenchmarkOutcome, CriReport, EnergyModel, cri, energy, explosion_ratio, weighted_mixture
from .stats import BootstrapCI, CellSummary, bootstrap_bca, summarize_cell
from .trials import TrialRecord, group_by_cell

CEILING_MARK_AT = 0.5


@dataclass(frozen=True)
class ReportTable:
    title: str
    headers: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    footnotes: tuple[str, ...] = ()

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.headers):
                raise ValueError(f"row {row} does not match headers {self.headers}")


@dataclass
class CellRow:
    """One cell's summary, from records or from a reference CSV."""

    model: str
    benchmark: str
    ratio: float | None
    mean_tout: float
    sd: float
    ceiling_fraction: float
    pass1: float | None = None
    energy_mj: float | None = None
    mean_tin: float | None = None
    n_obs: int | None = None
    ci: BootstrapCI | None = None


def _fmt(value: float | None, places: int = 1) -> str:
    return "" if value is None else f"{value:.{places}f}"


def _fmt_pct(fraction: float) -> str:
    return f"{round(fraction * 100):d}%"


def render_text(table: ReportTable) -> str:
    widths = [len(h) for h in table.headers]
    for row in table.rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]

    def line(cells):
        out = []
        for i, (cell, w) in enumerate(zip(cells, widths)):
            out.append(cell.ljust(w) if i < 2 else cell.rjust(w))
        return "  ".join(out).rstrip()

    parts = [table.title, line(table.headers), "-" * (sum(widths) + 2 * (len(widths) - 1))]
    parts.extend(line(row) for row in table.rows)
    parts.extend(table.footnotes)
    return "\n".join(parts) + "\n"


def render_csv(table: ReportTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.headers)
    writer.writerows(table.rows)
    return buf.getvalue()


def render_markdown(table: ReportTable) -> str:
    parts = [f"### {table.title}", ""]
    parts.append("| " + " | ".join(table.headers) + " |")
    parts.append("|" + "|".join([" --- "] * len(table.headers)) + "|")
    for row in table.rows:
        parts.append("| " + " | ".join(row) + " |")
    for note in table.footnotes:
        parts.append("")
        parts.append(f"*{note}*")
    return "\n".join(parts) + "\n"


RENDERERS = {"table": render_text, "csv": render_csv, "markdown": render_markdown}


def load_reference_cells(path: str | Path | None = None) -> list[CellRow]:
    """Load a cell-summary CSV; defaults to the bundled reference dataset."""
    if path is None:
        text = resources.files("cribench").joinpath("data/reference_cells.csv").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = []
    for lineno, doc in enumerate(csv.DictReader(io.StringIO(text)), start=2):
        try:
            rows.append(CellRow(
                model=doc["model"],
                benchmark=doc["benchmark"],
                ratio=float(doc["ratio"]),
                mean_tout=float(doc["mean_tout"]),
                sd=float(doc["sd"]),
                ceiling_fraction=float(doc["ceiling_pct"]) / 100.0,
                pass1=float(doc["pass1"]) if doc.get("pass1") not in (None, "") else None,
                energy_mj=float(doc["energy_mj"]) if doc.get("energy_mj") not in (None, "") else None,
            ))
        except (KeyError, ValueError) as exc:
            raise CribenchError(f"cell CSV line {lineno}: {exc}") from exc
    if not rows:
        raise CribenchError("cell CSV contains no rows")
    return rows


def rows_from_records(records: list[TrialRecord], energy_model: EnergyModel = EnergyModel(),
                      ci_over: str | None = None, resamples: int = 10_000,
                      seed: int = 0) -> list[CellRow]:
    """Summarize trial records into cell rows, with optional bootstrap CIs.

    ``ci_over="prompts"`` bootstraps the per-prompt replicate means (the
    effective independent sample); ``"observations"`` treats every record as
    independent.
    """
    rows = []
    for cell, recs in group_by_cell(records).items():
        summary = summarize_cell(recs)
        ci = None
        if ci_over is not None:
            sample = _ci_sample(recs, ci_over)
            if len(sample) >= 2:
                ci = bootstrap_bca(sample, resamples=resamples, seed=seed)
        rows.append(_row_from_summary(summary, energy_model, ci))
    return rows


def _ci_sample(recs: list[TrialRecord], ci_over: str) -> list[float]:
    if ci_over == "observations":
        return [float(r.output_tokens) for r in recs]
    if ci_over == "prompts":
        by_prompt: dict[str, list[int]] = {}
        for r in recs:
            by_prompt.setdefault(r.prompt_id, []).append(r.output_tokens)
        return [sum(v) / len(v) for v in by_prompt.values()]
    raise ValueError(f"unknown ci_over {ci_over!r}")


def _row_from_summary(summary: CellSummary, energy_model: EnergyModel,
                      ci: BootstrapCI | None = None) -> CellRow:
    return CellRow(
        model=summary.cell.model,
        benchmark=summary.cell.benchmark,
        ratio=summary.cell.ratio,
        mean_tout=summary.mean_tout,
        sd=summary.sd,
        ceiling_fraction=summary.ceiling_fraction,
        pass1=summary.pass1_rate,
        energy_mj=energy(summary.mean_tin, summary.mean_tout, energy_model),
        mean_tin=summary.mean_tin,
        n_obs=summary.n_obs,
        ci=ci,
    )


def _ordered(rows: list[CellRow]) -> list[CellRow]:
    models = list(dict.fromkeys(r.model for r in rows))
    benches = list(dict.fromkeys(r.benchmark for r in rows))
    return sorted(rows, key=lambda r: (models.index(r.model), benches.index(r.benchmark),
                                       -(r.ratio if r.ratio is not None else 0.0)))


def cell_table(rows: list[CellRow]) -> ReportTable:
    out = []
    for row in _ordered(rows):
        out.append((
            row.model, row.benchmark, "" if row.ratio is None else f"{row.ratio:g}",
            _fmt(row.mean_tout), _fmt(row.sd),
            _fmt_pct(row.ceiling_fraction), _fmt(row.pass1, 2), _fmt(row.energy_mj),
        ))
    return ReportTable(
        title="Cell summaries",
        headers=("model", "benchmark", "ratio", "mean_tout", "sd", "ceiling", "pass1", "energy_mj"),
        rows=tuple(out),
    )


def _pick(rows: list[CellRow], model: str, benchmark: str, ratio: float) -> CellRow | None:
    for row in rows:
        if (row.model == model and row.benchmark == benchmark
                and row.ratio is not None and math.isclose(row.ratio, ratio)):
            return row
    return None


def reconciliation_table(rows: list[CellRow], model: str, compressed_ratio: float = 0.3,
                         weights: dict[str, float] | None = None) -> ReportTable:
    """Per-benchmark baseline vs compressed output lengths plus weighted rows."""
    benches = list(dict.fromkeys(r.benchmark for r in rows if r.model == model))
    out = []
    marked = False
    base_means, comp_means = [], []
    for bench in benches:
        base = _pick(rows, model, bench, 1.0)
        comp = _pick(rows, model, bench, compressed_ratio)
        if base is None or comp is None:
            continue
        mark = "*" if comp.ceiling_fraction >= CEILING_MARK_AT else ""
        marked = marked or bool(mark)
        ci = f"[{comp.ci.lower:.1f}, {comp.ci.upper:.1f}]" if comp.ci else ""
        out.append((bench, _fmt(base.mean_tout), _fmt(comp.mean_tout) + mark,
                    f"{explosion_ratio(base.mean_tout, comp.mean_tout):.1f}x", ci))
        base_means.append(base.mean_tout)
        comp_means.append(comp.mean_tout)
    if not out:
        raise CribenchError(f"no baseline/compressed cell pairs for model {model!r}")

    uniform = [1.0 / len(base_means)] * len(base_means)
    base_b = weighted_mixture(base_means, uniform)
    comp_b = weighted_mixture(comp_means, uniform)
    out.append(("balanced weighted", _fmt(base_b), _fmt(comp_b),
                f"{explosion_ratio(base_b, comp_b):.1f}x", ""))
    if weights:
        w = [weights[b] for b in benches]
        base_w = weighted_mixture(base_means, w)
        comp_w = weighted_mixture(comp_means, w)
        out.append(("custom weighted", _fmt(base_w), _fmt(comp_w),
                    f"{explosion_ratio(base_w, comp_w):.1f}x", ""))

    notes = []
    if marked:
        notes.append("*: half or more of the trials hit the generation ceiling; the observed mean is a lower bound.")
    return ReportTable(
        title=f"Output tokens at r={compressed_ratio:g} by benchmark ({model})",
        headers=("benchmark", "baseline", f"r={compressed_ratio:g}", "ratio", "95% CI"),
        rows=tuple(out),
        footnotes=tuple(notes),
    )


def provider_table(rows: list[CellRow], compressed_ratio: float = 0.3) -> ReportTable:
    """Balanced cross-benchmark comparison of every model at one ratio."""
    models = list(dict.fromkeys(r.model for r in rows))
    out = []
    for model in models:
        benches = list(dict.fromkeys(r.benchmark for r in rows if r.model == model))
        pairs = [(_pick(rows, model, b, 1.0), _pick(rows, model, b, compressed_ratio))
                 for b in benches]
        pairs = [(b, c) for b, c in pairs if b is not None and c is not None]
        if not pairs:
            continue
        base = sum(p[0].mean_tout for p in pairs) / len(pairs)
        comp = sum(p[1].mean_tout for p in pairs) / len(pairs)
        # pooled across benchmarks assuming equal trials per cell
        second_moment = sum(p[1].sd ** 2 + p[1].mean_tout ** 2 for p in pairs) / len(pairs)
        pooled_var = max(0.0, second_moment - comp**2)
        cv = math.sqrt(pooled_var) / comp if comp > 0 else 0.0
        energies = [p[1].energy_mj for p in pairs]
        mean_energy = sum(energies) / len(energies) if None not in energies else None
        out.append((model, _fmt(base), _fmt(comp), f"{explosion_ratio(base, comp):.1f}x",
                    f"{cv:.2f}", _fmt(mean_energy)))
    return ReportTable(
        title=f"Provider comparison at r={compressed_ratio:g} (balanced benchmark mix)",
        headers=("model", "baseline", f"r={compressed_ratio:g}", "ratio", "CV", "energy_mj"),
        rows=tuple(out),
        footnotes=("CV pools across benchmarks assuming equal trials per cell.",),
    )


def cri_from_rows(rows: list[CellRow], model: str, compressed_ratio: float = 0.3,
                  t_max: int = 1024, weights: dict[str, float] | None = None) -> CriReport:
    """Build per-benchmark outcomes for one model from cell rows and score them."""
    benches = list(dict.fromkeys(r.benchmark for r in rows if r.model == model))
    outcomes = []
    for bench in benches:
        base = _pick(rows, model, bench, 1.0)
        comp = _pick(rows, model, bench, compressed_ratio)
        if base is None or comp is None or base.pass1 is None or comp.pass1 is None:
            continue
        outcomes.append(BenchmarkOutcome(bench, base.pass1, comp.pass1,
                                         base.mean_tout, comp.mean_tout, t_max))
    if not outcomes:
        raise CribenchError(
            f"model {model!r} has no benchmark with pass@1 at both r=1.0 and r={compressed_ratio:g}"
        )
    return cri(outcomes, weights=weights, model=model, ratio=compressed_ratio)


def cri_table(reports: list[CriReport]) -> ReportTable:
    out = []
    for rep in reports:
        per_bench = " ".join(
            f"{t.benchmark}={t.term:.3f}" for t in rep.per_benchmark if not t.excluded
        )
        out.append((rep.model or "", f"{rep.ratio:g}" if rep.ratio is not None else "",
                    f"{rep.cri:.3f}", per_bench, "; ".join(rep.flags)))
    return ReportTable(
        title="Compression Robustness Index",
        headers=("model", "ratio", "cri", "per-benchmark terms", "flags"),
        rows=tuple(out),
    )
