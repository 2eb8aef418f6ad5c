"""Experiment plans, trial execution, persistence, and determinism checks.

A plan enumerates model x benchmark x ratio x prompt x replicate trials.
Execution appends one JSON object per completed trial (or per recorded error)
to a UTF-8 JSONL file; the writer is the single thread draining worker
futures, so lines never interleave. Restarting a run skips every
(model, benchmark, ratio, prompt, replicate) key already present in the
output file, making runs resumable.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

import numpy as np

from .backends import CompletionRequest, make_backend
from .compression import RatioSweep, compress_first_n
from .errors import ConfigError, CribenchError, InsufficientPromptsError
from .prompts import BenchmarkProfile, load_profile, profile_survival, tokenize


@dataclass(frozen=True)
class CellKey:
    """One (model, benchmark, ratio) experimental combination."""

    model: str
    benchmark: str
    ratio: float | None


@dataclass(frozen=True)
class TrialRecord:
    model: str
    benchmark: str
    ratio: float | None
    prompt_id: str
    replicate_index: int
    input_tokens: int
    output_tokens: int
    hit_ceiling: bool
    pass1: bool | None
    psi: float
    timestamp: str

    def to_json(self) -> dict:
        return {"kind": "trial", **self.__dict__}

    @classmethod
    def from_json(cls, doc: dict) -> "TrialRecord":
        fields = {k: doc[k] for k in (
            "model", "benchmark", "ratio", "prompt_id", "replicate_index",
            "input_tokens", "output_tokens", "hit_ceiling", "pass1", "psi", "timestamp",
        )}
        return cls(**fields)


@dataclass(frozen=True)
class PromptEntry:
    prompt_id: str
    text: str
    pass1_baseline: bool | None = None


@dataclass(frozen=True)
class BenchmarkDataset:
    profile: BenchmarkProfile
    prompts: tuple[PromptEntry, ...]


@dataclass(frozen=True)
class ExperimentPlan:
    models: tuple[str, ...]
    benchmarks: tuple[BenchmarkDataset, ...]
    ratios: tuple[float, ...]
    prompts_per_cell: int
    replicates: int
    seed: int
    backend_configs: dict = field(default_factory=dict)
    system_prompt: str = ""
    max_tokens: int = 1024
    temperature: float = 0.0
    max_parallel: int = 1

    @property
    def total_calls(self) -> int:
        return (len(self.models) * len(self.benchmarks) * len(self.ratios)
                * self.prompts_per_cell * self.replicates)


def load_prompt_file(path: Path) -> list[PromptEntry]:
    """Read a prompt dataset: JSONL of {prompt_id, text, pass1_baseline?}."""
    entries = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read prompt file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            entries.append(PromptEntry(str(doc["prompt_id"]), doc["text"],
                                       doc.get("pass1_baseline")))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad prompt entry: {exc}") from exc
    if not entries:
        raise ConfigError(f"prompt file {path} is empty")
    return entries


def build_plan(config: dict | str | Path) -> ExperimentPlan:
    """Assemble a plan from a config document (path or parsed dict).

    Prompt sampling per benchmark is without replacement and deterministic
    given the plan seed. Relative paths resolve against the config file's
    directory.
    """
    base = Path.cwd()
    if not isinstance(config, dict):
        path = Path(config)
        try:
            config = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        base = path.parent

    for key in ("models", "benchmarks", "backends"):
        if key not in config:
            raise ConfigError(f"config is missing required key {key!r}")

    models = tuple(config["models"])
    if not models:
        raise ConfigError("config lists no models")
    backend_configs = dict(config["backends"])
    for model in models:
        if model not in backend_configs:
            raise ConfigError(f"no backend config for model {model!r}")

    ratios = tuple(float(r) for r in config.get("ratios", RatioSweep().ratios))
    RatioSweep(ratios)
    n_prompts = int(config.get("prompts_per_cell", 50))
    replicates = int(config.get("replicates", 3))
    if n_prompts < 1 or replicates < 1:
        raise ConfigError("prompts_per_cell and replicates must be >= 1")
    seed = int(config.get("seed", 0))

    datasets = []
    for index, bench in enumerate(config["benchmarks"]):
        try:
            profile_ref, prompts_ref = bench["profile"], bench["prompts"]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"benchmark entry {index} needs 'profile' and 'prompts'") from exc
        profile = load_profile(_resolve(profile_ref, base))
        entries = load_prompt_file(Path(_resolve(prompts_ref, base)))
        if n_prompts > len(entries):
            raise InsufficientPromptsError(
                f"benchmark {profile.name!r} has {len(entries)} prompts, plan needs {n_prompts}"
            )
        rng = np.random.default_rng([seed, index])
        picked = rng.permutation(len(entries))[:n_prompts]
        datasets.append(BenchmarkDataset(profile, tuple(entries[i] for i in picked)))

    return ExperimentPlan(
        models=models,
        benchmarks=tuple(datasets),
        ratios=ratios,
        prompts_per_cell=n_prompts,
        replicates=replicates,
        seed=seed,
        backend_configs=backend_configs,
        system_prompt=config.get("system_prompt", ""),
        max_tokens=int(config.get("max_tokens", 1024)),
        temperature=float(config.get("temperature", 0.0)),
        max_parallel=int(config.get("max_parallel", 1)),
    )


def _resolve(ref: str, base: Path) -> str:
    # bundled profile names pass through untouched
    if "/" not in ref and "\\" not in ref and not ref.endswith((".json", ".jsonl")):
        return ref
    candidate = Path(ref)
    return str(candidate if candidate.is_absolute() else base / candidate)


def _trial_key(doc: dict) -> tuple:
    return (doc["model"], doc["benchmark"], doc["ratio"], doc["prompt_id"],
            doc["replicate_index"])


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _execute_trial(plan: ExperimentPlan, backend, model: str,
                   dataset: BenchmarkDataset, ratio: float, entry: PromptEntry,
                   replicate: int) -> dict:
    try:
        prompt = tokenize(entry.text, dataset.profile.name)
        compressed = compress_first_n(prompt, ratio)
        psi = profile_survival(dataset.profile, ratio)
        request = CompletionRequest(
            model_name=model,
            prompt_text=compressed.text,
            system_prompt=plan.system_prompt or None,
            temperature=plan.temperature,
            max_tokens=plan.max_tokens,
            psi=psi,
        )
        response = backend.complete(request)
        return TrialRecord(
            model=model,
            benchmark=dataset.profile.name,
            ratio=ratio,
            prompt_id=entry.prompt_id,
            replicate_index=replicate,
            input_tokens=compressed.n,
            output_tokens=response.output_tokens,
            hit_ceiling=response.hit_ceiling,
            pass1=entry.pass1_baseline if ratio == 1.0 else None,
            psi=psi,
            timestamp=_now(),
        ).to_json()
    except Exception as exc:  # per-trial failures are recorded, never fatal
        return {
            "kind": "error",
            "model": model,
            "benchmark": dataset.profile.name,
            "ratio": ratio,
            "prompt_id": entry.prompt_id,
            "replicate_index": replicate,
            "error": f"{type(exc).__name__}: {exc}",
            "timestamp": _now(),
        }


def run(plan: ExperimentPlan, out_path: str | Path, backends: dict | None = None) -> Iterator[dict]:
    """Execute the plan, appending each outcome to ``out_path`` and yielding it.

    Already-persisted trial keys (including recorded errors) are skipped, so
    an interrupted run can simply be restarted against the same output file.
    """
    out_path = Path(out_path)
    done: set[tuple] = set()
    if out_path.exists():
        for doc in load_record_file(out_path, skip_malformed=True).raw:
            done.add(_trial_key(doc))

    if backends is None:
        backends = {m: make_backend(plan.backend_configs[m]) for m in plan.models}

    work = [
        (model, dataset, ratio, entry, replicate)
        for model in plan.models
        for dataset in plan.benchmarks
        for ratio in plan.ratios
        for entry in dataset.prompts
        for replicate in range(plan.replicates)
        if (model, dataset.profile.name, ratio, entry.prompt_id, replicate) not in done
    ]

    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("a", encoding="utf-8") as sink:

        def emit(doc: dict) -> dict:
            sink.write(json.dumps(doc, separators=(",", ":")) + "\n")
            sink.flush()
            return doc

        if plan.max_parallel > 1:
            with ThreadPoolExecutor(max_workers=plan.max_parallel) as pool:
                futures = [
                    pool.submit(_execute_trial, plan, backends[m], m, ds, r, e, rep)
                    for m, ds, r, e, rep in work
                ]
                for future in as_completed(futures):
                    yield emit(future.result())
        else:
            for m, ds, r, e, rep in work:
                yield emit(_execute_trial(plan, backends[m], m, ds, r, e, rep))


@dataclass
class RecordFile:
    trials: list[TrialRecord]
    errors: list[dict]
    malformed: list[tuple[int, str]]
    raw: list[dict]


def load_record_file(path: str | Path, skip_malformed: bool = False) -> RecordFile:
    """Parse a JSONL record stream into trials, error entries, and bad lines."""
    trials: list[TrialRecord] = []
    errors: list[dict] = []
    malformed: list[tuple[int, str]] = []
    raw: list[dict] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            if doc.get("kind") == "error":
                errors.append(doc)
            else:
                trials.append(TrialRecord.from_json(doc))
            raw.append(doc)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            if not skip_malformed:
                raise CribenchError(f"{path}:{lineno}: malformed record: {exc}") from exc
            malformed.append((lineno, str(exc)))
    return RecordFile(trials, errors, malformed, raw)


def group_by_cell(records: list[TrialRecord]) -> dict[CellKey, list[TrialRecord]]:
    cells: dict[CellKey, list[TrialRecord]] = {}
    for rec in records:
        cells.setdefault(CellKey(rec.model, rec.benchmark, rec.ratio), []).append(rec)
    return cells


@dataclass(frozen=True)
class ReplicateMismatch:
    model: str
    benchmark: str
    ratio: float | None
    prompt_id: str
    output_tokens: tuple[int, ...]


def verify_determinism(records: list[TrialRecord]) -> list[ReplicateMismatch]:
    """Flag (cell, prompt) groups whose replicates disagree on output length.

    An empty report means the run was fully deterministic.
    """
    groups: dict[tuple, list[TrialRecord]] = {}
    for rec in records:
        groups.setdefault((rec.model, rec.benchmark, rec.ratio, rec.prompt_id), []).append(rec)
    mismatches = []
    for (model, benchmark, ratio, prompt_id), group in groups.items():
        group = sorted(group, key=lambda r: r.replicate_index)
        outputs = tuple(r.output_tokens for r in group)
        if len(set(outputs)) > 1:
            mismatches.append(ReplicateMismatch(model, benchmark, ratio, prompt_id, outputs))
    return mismatches
