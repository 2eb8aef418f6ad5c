"""Command-line entry point.

Verbs: psi, compress, run, simulate, report, cri, stats. All commands exit 0
on success and print one ``error: <Type>: <message>`` line to stderr on
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backends import VerboseCompensationParams, synthesize_length
from .compression import compress_first_n
from .errors import CribenchError, InvalidParamsError
from .metrics import EnergyModel
from .prompts import (
    DEFAULT_THETA,
    SegmentAnnotation,
    SegmentSpan,
    load_profile,
    profile_survival,
    tokenize,
    weighted_survival,
)
from .report import (
    RENDERERS,
    ReportTable,
    cell_table,
    cri_from_rows,
    cri_table,
    load_reference_cells,
    provider_table,
    reconciliation_table,
    rows_from_records,
)
from .stats import bootstrap_bca, fit_threshold_model, tobit_fit, truncated_mean, welch_t
from .trials import (
    build_plan,
    group_by_cell,
    load_record_file,
    run as run_plan,
    verify_determinism,
)


def _parse_floats(text: str) -> list[float]:
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        grid = np.arange(start, stop + step / 2, step)
        return [round(float(v), 10) for v in grid]
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_weights(text: str | None) -> dict[str, float] | None:
    if not text:
        return None
    weights = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        weights[name.strip()] = float(value)
    return weights


def _emit(tables: list[ReportTable], args) -> None:
    render = RENDERERS[args.format]
    if getattr(args, "out", None):
        out = Path(args.out)
        ext = {"table": "txt", "csv": "csv", "markdown": "md"}[args.format]
        if len(tables) > 1 or out.is_dir():
            out.mkdir(parents=True, exist_ok=True)
            for table in tables:
                name = "".join(c if c.isalnum() else "_" for c in table.title.lower()).strip("_")
                (out / f"{name}.{ext}").write_text(render(table), encoding="utf-8")
                print(f"wrote {out / f'{name}.{ext}'}")
        else:
            out.write_text(render(tables[0]), encoding="utf-8")
            print(f"wrote {out}")
        return
    for table in tables:
        print(render(table))


def _load_cell_rows(paths: list[str], args) -> list:
    rows = []
    records = []
    for path in paths:
        if path.endswith(".csv"):
            rows.extend(load_reference_cells(path))
        else:
            loaded = load_record_file(path, skip_malformed=True)
            for lineno, message in loaded.malformed:
                print(f"warning: {path}:{lineno}: skipped malformed line ({message})",
                      file=sys.stderr)
            records.extend(loaded.trials)
    if records:
        ci_over = None if args.ci == "none" else args.ci
        rows.extend(rows_from_records(records, EnergyModel(), ci_over=ci_over,
                                      resamples=args.resamples, seed=args.seed))
    return rows


def cmd_psi(args) -> int:
    ratios = _parse_floats(args.ratios)
    rows = []
    for source in args.inputs:
        if source.endswith(".jsonl"):
            for line in Path(source).read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                doc = json.loads(line)
                prompt = tokenize(doc["text"])
                spans = tuple(SegmentSpan(s["a"], s["b"], s["weight"], s.get("label", ""))
                              for s in doc["spans"])
                annotation = SegmentAnnotation(spans, prompt.n)
                for r in ratios:
                    result = weighted_survival(annotation, r, args.mode, args.theta, args.rounding)
                    segs = " ".join(f"{label or 'segment'}={psi:.2f}"
                                    for label, psi in result.per_segment)
                    rows.append((doc["prompt_id"], f"{r:g}", f"{result.weighted:.2f}", segs))
        else:
            profile = load_profile(source)
            for r in ratios:
                psi = profile_survival(profile, r, args.rounding)
                if profile.psi_table and any(abs(k - r) <= 1e-9 for k in profile.psi_table):
                    segs = "(table lookup)"
                else:
                    result = weighted_survival(profile.annotation(), r, profile.survival_mode,
                                               profile.theta, args.rounding)
                    segs = " ".join(f"{label or 'segment'}={v:.2f}"
                                    for label, v in result.per_segment)
                rows.append((profile.name, f"{r:g}", f"{psi:.2f}", segs))
    _emit([ReportTable("Instruction survival", ("input", "ratio", "psi", "segments"),
                       tuple(rows))], args)
    return 0


def cmd_compress(args) -> int:
    if args.text is None and args.file is None:
        raise CribenchError("provide --text or --file")
    if args.text is not None:
        print(compress_first_n(tokenize(args.text), args.ratio, args.rounding).text)
    if args.file is not None:
        for line in Path(args.file).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            compressed = compress_first_n(tokenize(doc["text"]), args.ratio, args.rounding)
            print(json.dumps({"prompt_id": doc.get("prompt_id"), "text": compressed.text}))
    return 0


def cmd_run(args) -> int:
    plan = build_plan(args.config)
    planned = plan.total_calls
    completed = errors = 0
    for doc in run_plan(plan, args.out):
        if doc["kind"] == "error":
            errors += 1
            print(f"warning: trial failed: {doc['model']}/{doc['benchmark']}"
                  f"/r={doc['ratio']}/{doc['prompt_id']}#{doc['replicate_index']}:"
                  f" {doc['error']}", file=sys.stderr)
        else:
            completed += 1
        if (completed + errors) % 200 == 0:
            print(f"... {completed + errors} trials done", file=sys.stderr)
    skipped = planned - completed - errors
    print(f"planned={planned} skipped={skipped} completed={completed} "
          f"errors={errors} out={args.out}")
    return 0


def cmd_simulate(args) -> int:
    params = VerboseCompensationParams.from_dict(
        json.loads(Path(args.params).read_text(encoding="utf-8")))
    grid = _parse_floats(args.psi_grid)
    if not grid:
        raise InvalidParamsError("empty psi grid")
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    from .trials import _now  # shared timestamp format

    with out.open("w", encoding="utf-8") as sink:
        for psi in grid:
            for trial in range(args.trials):
                tokens = synthesize_length(params, psi, rng)
                doc = {
                    "kind": "trial",
                    "model": "synthetic",
                    "benchmark": "grid",
                    "ratio": None,
                    "prompt_id": f"psi={psi:g}/{trial}",
                    "replicate_index": 0,
                    "input_tokens": 1,
                    "output_tokens": tokens,
                    "hit_ceiling": tokens >= params.t_max,
                    "pass1": None,
                    "psi": psi,
                    "timestamp": _now(),
                }
                sink.write(json.dumps(doc, separators=(",", ":")) + "\n")
    print(f"wrote {len(grid) * args.trials} synthetic trials to {out}")
    return 0


def cmd_report(args) -> int:
    rows = _load_cell_rows(args.records, args)
    if not rows:
        print("warning: no usable records; nothing to report", file=sys.stderr)
        return 0
    tables = [cell_table(rows)]
    models = list(dict.fromkeys(r.model for r in rows))
    for model in models:
        try:
            tables.append(reconciliation_table(rows, model, args.ratio))
        except CribenchError as exc:
            print(f"note: no reconciliation for {model}: {exc}", file=sys.stderr)
    tables.append(provider_table(rows, args.ratio))
    reports = []
    for model in models:
        try:
            reports.append(cri_from_rows(rows, model, args.ratio))
        except CribenchError as exc:
            print(f"note: no CRI for {model}: {exc}", file=sys.stderr)
    if reports:
        tables.append(cri_table(reports))
    _emit(tables, args)
    return 0


def cmd_cri(args) -> int:
    args.ci = "none"
    rows = _load_cell_rows(args.inputs or [], args) if args.inputs else load_reference_cells()
    weights = _parse_weights(args.weights)
    reports = []
    for model in dict.fromkeys(r.model for r in rows):
        reports.append(cri_from_rows(rows, model, args.ratio, args.t_max, weights))
    _emit([cri_table(reports)], args)
    return 0


def _parse_cell(text: str) -> tuple[str, str, float]:
    try:
        model, benchmark, ratio = text.rsplit(":", 2)
        return model, benchmark, float(ratio)
    except ValueError as exc:
        raise CribenchError(f"cell must look like model:benchmark:ratio, got {text!r}") from exc


def _cell_records(records, spec: str):
    model, benchmark, ratio = _parse_cell(spec)
    recs = [r for r in records
            if r.model == model and r.benchmark == benchmark
            and r.ratio is not None and abs(r.ratio - ratio) <= 1e-9]
    if not recs:
        raise CribenchError(f"no records for cell {spec!r}")
    return recs


def cmd_stats(args) -> int:
    loaded = load_record_file(args.records, skip_malformed=True)
    for lineno, message in loaded.malformed:
        print(f"warning: {args.records}:{lineno}: skipped malformed line ({message})",
              file=sys.stderr)
    records = loaded.trials
    tables = []

    if args.tobit:
        rows = []
        for cell, recs in group_by_cell(records).items():
            outputs = [float(r.output_tokens) for r in recs]
            if not any(r.hit_ceiling for r in recs):
                continue
            try:
                fit = tobit_fit(outputs, float(args.ceiling))
            except CribenchError as exc:
                print(f"note: skipping cell {cell}: {exc}", file=sys.stderr)
                continue
            rows.append((
                str(cell.model), f"{cell.benchmark}:{'' if cell.ratio is None else f'{cell.ratio:g}'}",
                str(len(recs)), f"{fit.censored_fraction * 100:.0f}%",
                f"{np.mean(outputs):.1f}", f"{fit.mu:.1f}", f"{fit.sigma:.1f}",
                f"{truncated_mean(fit.mu, fit.sigma, fit.ceiling):.1f}",
            ))
        if not rows:
            raise CribenchError("no cell has ceiling-censored records")
        tables.append(ReportTable(
            "Censoring-adjusted cell estimates",
            ("model", "benchmark:ratio", "n", "censored", "observed_mean",
             "latent_mu", "latent_sigma", "mean_below_ceiling"),
            tuple(rows),
            ("latent_mu/latent_sigma are censored-normal MLEs; observed means are lower bounds.",),
        ))

    if args.threshold:
        by_psi: dict[float, list[int]] = {}
        for rec in records:
            by_psi.setdefault(rec.psi, []).append(rec.output_tokens)
        points = [(psi, sum(v) / len(v)) for psi, v in sorted(by_psi.items())]
        fit = fit_threshold_model(points)
        tables.append(ReportTable(
            "Survival threshold fit",
            ("tau_hat", "intercept", "slope_low", "slope_high", "rss", "degenerate"),
            ((f"{fit.tau_hat:.3f}", f"{fit.intercept:.2f}", f"{fit.slope_low:.2f}",
              f"{fit.slope_high:.2f}", f"{fit.rss:.4g}", str(fit.degenerate).lower()),),
        ))
        if args.points_out:
            lines = ["psi,mean_tout"] + [f"{p:.6g},{m:.6g}" for p, m in points]
            Path(args.points_out).write_text("\n".join(lines) + "\n", encoding="utf-8")
            print(f"wrote {len(points)} (psi, mean) points to {args.points_out}")

    if args.welch:
        sample_a = [float(r.output_tokens) for r in _cell_records(records, args.welch[0])]
        sample_b = [float(r.output_tokens) for r in _cell_records(records, args.welch[1])]
        res = welch_t(sample_a, sample_b)
        tables.append(ReportTable(
            "Welch's t-test (unequal variances)",
            ("cell_a", "cell_b", "t", "df", "p"),
            ((args.welch[0], args.welch[1], f"{res.t_statistic:.4f}",
              f"{res.degrees_of_freedom:.2f}", f"{res.p_value:.4g}"),),
        ))

    if args.bootstrap:
        recs = _cell_records(records, args.bootstrap)
        sample = _cell_sample(recs, args.ci)
        ci = bootstrap_bca(sample, resamples=args.resamples, level=args.level, seed=args.seed)
        tables.append(ReportTable(
            f"BCa bootstrap CI of the mean ({args.ci})",
            ("cell", "n", "mean", "lower", "upper", "level", "resamples", "seed"),
            ((args.bootstrap, str(len(sample)), f"{ci.statistic:.2f}", f"{ci.lower:.2f}",
              f"{ci.upper:.2f}", f"{ci.level:g}", str(ci.resamples), str(ci.seed)),),
        ))

    if args.determinism:
        mismatches = verify_determinism(records)
        rows = tuple((m.model, m.benchmark, "" if m.ratio is None else f"{m.ratio:g}",
                      m.prompt_id, " ".join(str(v) for v in m.output_tokens))
                     for m in mismatches)
        tables.append(ReportTable(
            f"Replicate determinism check ({len(mismatches)} mismatched groups)",
            ("model", "benchmark", "ratio", "prompt_id", "output_tokens"),
            rows,
        ))

    if not tables:
        raise CribenchError("pick at least one of --tobit/--threshold/--welch/--bootstrap/--determinism")
    _emit(tables, args)
    return 0


def _cell_sample(recs, ci_over: str) -> list[float]:
    if ci_over == "observations":
        return [float(r.output_tokens) for r in recs]
    by_prompt: dict[str, list[int]] = {}
    for r in recs:
        by_prompt.setdefault(r.prompt_id, []).append(r.output_tokens)
    return [sum(v) / len(v) for v in by_prompt.values()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cribench",
        description="Measure how prompt compression changes model output behavior.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, fmt=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output file or directory")
        if fmt:
            p.add_argument("--format", choices=sorted(RENDERERS), default="table")

    p = sub.add_parser("psi", help="instruction survival for profiles or annotated prompts")
    p.add_argument("inputs", nargs="+",
                   help="profile name/path (.json) or annotated prompt file (.jsonl)")
    p.add_argument("--ratios", default="1.0,0.7,0.5,0.3")
    p.add_argument("--mode", choices=("strict", "fractional"), default="strict",
                   help="survival mode for annotated prompt files")
    p.add_argument("--theta", type=float, default=DEFAULT_THETA)
    p.add_argument("--rounding", choices=("floor", "nearest"), default="floor")
    add_common(p)
    p.set_defaults(func=cmd_psi)

    p = sub.add_parser("compress", help="first-N-words truncation of a prompt")
    p.add_argument("--text", default=None)
    p.add_argument("--file", default=None, help="prompt JSONL file")
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--rounding", choices=("floor", "nearest"), default="floor")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("run", help="execute an experiment plan against its backends")
    p.add_argument("--config", required=True, help="plan config JSON")
    p.add_argument("--out", required=True, help="record JSONL (append; resumable)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="draw synthetic trials over a survival grid")
    p.add_argument("--params", required=True, help="verbose-compensation params JSON")
    p.add_argument("--psi-grid", default="0.05:0.95:0.05",
                   help="comma list or start:stop:step")
    p.add_argument("--trials", type=int, default=100, help="trials per grid point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="render summary tables from records or a cell CSV")
    p.add_argument("records", nargs="+", help="record JSONL file(s) or cell-summary CSV")
    p.add_argument("--ratio", type=float, default=0.3, help="compressed ratio to compare")
    p.add_argument("--ci", choices=("none", "prompts", "observations"), default="prompts",
                   help="bootstrap CI sample for record inputs")
    p.add_argument("--resamples", type=int, default=10_000)
    add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("cri", help="Compression Robustness Index per model")
    p.add_argument("inputs", nargs="*",
                   help="record JSONL or cell CSV (default: bundled reference dataset)")
    p.add_argument("--ratio", type=float, default=0.3)
    p.add_argument("--t-max", type=int, default=1024)
    p.add_argument("--weights", default=None, help="workload weights, e.g. mbpp=0.5,gsm8k=0.5")
    p.add_argument("--resamples", type=int, default=10_000)
    add_common(p)
    p.set_defaults(func=cmd_cri)

    p = sub.add_parser("stats", help="statistical analyses over a record file")
    p.add_argument("records", help="record JSONL file")
    p.add_argument("--tobit", action="store_true",
                   help="censored-normal fits for ceiling-hitting cells")
    p.add_argument("--ceiling", type=float, default=1024.0)
    p.add_argument("--threshold", action="store_true",
                   help="two-piece linear fit of mean length vs survival")
    p.add_argument("--points-out", default=None, help="write (psi, mean) points CSV")
    p.add_argument("--welch", nargs=2, metavar="CELL", default=None,
                   help="two cells: model:benchmark:ratio")
    p.add_argument("--bootstrap", metavar="CELL", default=None)
    p.add_argument("--determinism", action="store_true",
                   help="flag replicate groups with diverging output lengths")
    p.add_argument("--ci", choices=("prompts", "observations"), default="prompts")
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("--level", type=float, default=0.95)
    add_common(p)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CribenchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
