"""The progressive generation loop.

Each iteration generates a slice of examples (optionally steered by the
current helpful set via in-context demonstrations), retrains the task model
on everything generated so far, scores a stratified subset with the
noise-robust influence function, and keeps the top-scoring examples as the
next iteration's helpful set. Feedback is applied on alternating iterations
only; with feedback disabled throughout, the loop degenerates to the plain
zero-shot baseline.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .backends import (
    BackendSpec,
    GeneratorBackend,
    MockBackend,
    SamplingConfig,
    build_backend,
    generate,
    overlap_filter,
)
from .data import Example, example_from_dict, example_to_dict, example_to_json
from .errors import (
    CheckpointError,
    ConfigError,
    EmptyCompletionError,
    ResampleCapError,
)
from .influence import InfluenceConfig, InfluenceReport, influence_scores, select_helpful
from .model import ModelHyper, ModelParams, evaluate, train
from .prompts import (
    BASE,
    InContextConfig,
    PromptTemplate,
    render_condition_prompt,
    render_in_context,
    render_zero_shot,
    sample_label,
)
from .rng import derive_seed

DATASET_FILE = "dataset.jsonl"
AUDIT_FILE = "audit.jsonl"
MODEL_FILE = "model.json"
REPORT_FILE = "report.json"
CHECKPOINT_FILE = "checkpoint.json"


@dataclass(frozen=True)
class ProgenConfig:
    """All loop hyperparameters in one place."""

    feedback_interval: int = 200       # examples generated per iteration
    iterations: int = 10               # loop length
    top_m: int = 50                    # helpful-set size
    score_subset_size: int = 2000      # examples scored per iteration
    val_size: int = 1000
    master_seed: int = 0
    resample_cap: int = 25             # per-slot retry budget
    incontext: InContextConfig = field(default_factory=InContextConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    template: PromptTemplate = None  # type: ignore[assignment]
    backend: BackendSpec = field(default_factory=BackendSpec)
    model_hyper: ModelHyper = field(default_factory=ModelHyper)
    influence: InfluenceConfig = field(default_factory=InfluenceConfig)

    def validate(self) -> None:
        if self.feedback_interval < 1:
            raise ConfigError("feedback_interval must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.top_m < 1:
            raise ConfigError("top_m must be >= 1")
        if self.score_subset_size < self.top_m:
            raise ConfigError("score_subset_size must be >= top_m")
        num_classes = self.model_hyper.num_classes
        if self.val_size < max(2, num_classes):
            raise ConfigError(
                f"val_size must be >= {max(2, num_classes)} so every class appears"
            )
        if self.resample_cap < 1:
            raise ConfigError("resample_cap must be >= 1")
        if self.template is None:
            raise ConfigError("template must be set")
        self.template.validate()
        if len(self.template.label_words) < num_classes:
            raise ConfigError(
                f"template provides {len(self.template.label_words)} label words "
                f"for {num_classes} classes"
            )
        self.incontext.validate()
        self.sampling.validate()
        self.backend.validate()
        self.model_hyper.validate()
        self.influence.validate()

    def fingerprint(self) -> str:
        from .config import config_fingerprint

        return config_fingerprint(self)


@dataclass
class RunState:
    """Mutable loop state, checkpointable between iterations."""

    d_train: list[Example]
    d_val: list[Example]
    d_helpful: list[Example]
    iteration: int
    next_id: int
    backend_counter: int | None
    audit: list[dict]


@dataclass
class RunResult:
    dataset: list[Example]
    params: ModelParams
    audit: list[dict]
    report: InfluenceReport
    d_val: list[Example]


def feedback_schedule(t: int, has_helpful: bool = True) -> bool:
    """Feedback on alternating iterations (even t), never without a helpful set."""
    if t < 1:
        raise ConfigError("iterations are 1-based")
    return t % 2 == 0 and has_helpful


def _generate_one(backend: GeneratorBackend, prompt: str, sampling, cap: int,
                  reject=None) -> str:
    """Sample a completion, resampling empty or rejected texts up to ``cap``."""
    for _ in range(cap):
        try:
            text = generate(backend, prompt, sampling)
        except EmptyCompletionError:
            continue
        if reject is not None and reject(text):
            continue
        return text
    raise ResampleCapError(f"no acceptable completion after {cap} attempts")


def _condition_for(template: PromptTemplate, backend, sampling, cap: int) -> str | None:
    if not template.needs_condition:
        return None
    return _generate_one(backend, render_condition_prompt(template), sampling, cap)


def build_validation(config: ProgenConfig, backend: GeneratorBackend, id_start: int = 0) -> list[Example]:
    """Zero-shot validation set with balanced labels, marked iteration 0."""
    config.validate()
    out = []
    for j in range(config.val_size):
        label = sample_label(config.model_hyper.num_classes, 0, j)
        condition = _condition_for(config.template, backend, config.sampling, config.resample_cap)
        prompt = render_zero_shot(config.template, label, condition)
        text = _generate_one(backend, prompt, config.sampling, config.resample_cap)
        out.append(Example(id=id_start + j, text=text, label=label, iteration=0))
    return out


def generate_slice(
    config: ProgenConfig,
    backend: GeneratorBackend,
    helpful: Sequence[Example],
    t: int,
    id_start: int,
    use_feedback: bool,
) -> list[Example]:
    """Exactly ``feedback_interval`` accepted examples for iteration ``t``.

    Feedback slots draw fresh demonstrations per slot; ``k`` is clamped to
    what the helpful set can supply, falling back to zero-shot when it cannot
    supply any. Overlapping or empty completions are resampled.
    """
    if use_feedback and not helpful:
        raise ConfigError("use_feedback requires a non-empty helpful set")
    out = []
    num_classes = config.model_hyper.num_classes
    for j in range(config.feedback_interval):
        label = sample_label(num_classes, t, j)
        condition = _condition_for(config.template, backend, config.sampling, config.resample_cap)
        ctx_texts: list[str] = []
        slot_feedback = use_feedback and config.incontext.format != BASE
        if slot_feedback:
            if config.incontext.format in ("F4", "F5"):
                available = sum(1 for ex in helpful if ex.label == label)
            else:
                available = len(helpful)
            k = min(config.incontext.k, available)
            if k == 0:
                slot_feedback = False
        if slot_feedback:
            ctx_cfg = replace(
                config.incontext,
                k=k,
                seed=derive_seed(config.master_seed, "ctx", t, j),
            )
            from .prompts import select_in_context

            demos = select_in_context(helpful, ctx_cfg, label)
            ctx_texts = [ex.text for ex in demos]
            prompt = render_in_context(config.template, helpful, ctx_cfg, label, condition)
        else:
            prompt = render_zero_shot(config.template, label, condition)
        reject = (lambda text: not overlap_filter(text, ctx_texts)) if ctx_texts else None
        text = _generate_one(backend, prompt, config.sampling, config.resample_cap, reject)
        out.append(
            Example(
                id=id_start + j,
                text=text,
                label=label,
                iteration=t,
                used_feedback=slot_feedback,
            )
        )
    return out


def stratified_sample(examples: Sequence[Example], n: int, seed: int) -> list[Example]:
    """Per-class proportional sample of size min(n, len(examples)), id-sorted."""
    if n >= len(examples):
        return sorted(examples, key=lambda ex: ex.id)
    by_class: dict[int, list[Example]] = {}
    for ex in sorted(examples, key=lambda ex: ex.id):
        by_class.setdefault(ex.label, []).append(ex)
    classes = sorted(by_class)
    total = len(examples)
    quotas = {c: (n * len(by_class[c])) // total for c in classes}
    remainders = sorted(
        classes,
        key=lambda c: ((n * len(by_class[c])) % total, -c),
        reverse=True,
    )
    short = n - sum(quotas.values())
    for c in remainders:
        if short == 0:
            break
        if quotas[c] < len(by_class[c]):
            quotas[c] += 1
            short -= 1
    rng = random.Random(seed)
    picked: list[Example] = []
    for c in classes:
        quota = min(quotas[c], len(by_class[c]))
        picked.extend(rng.sample(by_class[c], quota))
    return sorted(picked, key=lambda ex: ex.id)


# --- checkpointing --------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    config: ProgenConfig,
    state: RunState,
    dataset_offset: int,
    audit_offset: int,
) -> None:
    doc = {
        "config_fingerprint": config.fingerprint(),
        "iteration": state.iteration,
        "next_id": state.next_id,
        "backend_counter": state.backend_counter,
        "dataset_file": DATASET_FILE,
        "dataset_offset": dataset_offset,
        "audit_file": AUDIT_FILE,
        "audit_offset": audit_offset,
        "d_val": [example_to_dict(ex) for ex in state.d_val],
        "d_helpful": [example_to_dict(ex) for ex in state.d_helpful],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path: str | Path, config: ProgenConfig) -> tuple[RunState, int, int]:
    """Rebuild RunState from a checkpoint plus the dataset/audit files beside it."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    required = {
        "config_fingerprint", "iteration", "next_id", "backend_counter",
        "dataset_file", "dataset_offset", "audit_file", "audit_offset",
        "d_val", "d_helpful",
    }
    missing = required - set(doc)
    if missing:
        raise CheckpointError(f"checkpoint missing keys: {sorted(missing)}")
    if doc["config_fingerprint"] != config.fingerprint():
        raise CheckpointError("checkpoint was produced by a different configuration")

    base = path.parent
    dataset_offset = int(doc["dataset_offset"])
    audit_offset = int(doc["audit_offset"])
    dataset_path = base / doc["dataset_file"]
    audit_path = base / doc["audit_file"]
    try:
        with dataset_path.open("rb") as fh:
            dataset_bytes = fh.read(dataset_offset)
        if len(dataset_bytes) != dataset_offset:
            raise CheckpointError(f"{dataset_path} is shorter than the checkpoint offset")
        with audit_path.open("rb") as fh:
            audit_bytes = fh.read(audit_offset)
        if len(audit_bytes) != audit_offset:
            raise CheckpointError(f"{audit_path} is shorter than the checkpoint offset")
        d_train = [
            example_from_dict(json.loads(line), line=i + 1)
            for i, line in enumerate(dataset_bytes.decode("utf-8").splitlines())
            if line.strip()
        ]
        audit = [json.loads(line) for line in audit_bytes.decode("utf-8").splitlines() if line.strip()]
    except OSError as exc:
        raise CheckpointError(f"cannot read run files next to {path}: {exc}") from exc

    state = RunState(
        d_train=d_train,
        d_val=[example_from_dict(row) for row in doc["d_val"]],
        d_helpful=[example_from_dict(row) for row in doc["d_helpful"]],
        iteration=int(doc["iteration"]),
        next_id=int(doc["next_id"]),
        backend_counter=doc["backend_counter"],
        audit=audit,
    )
    return state, dataset_offset, audit_offset


# --- the loop -------------------------------------------------------------------


class _RunFiles:
    def __init__(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        self.dataset = out_dir / DATASET_FILE
        self.audit = out_dir / AUDIT_FILE
        self.model = out_dir / MODEL_FILE
        self.report = out_dir / REPORT_FILE
        self.checkpoint = out_dir / CHECKPOINT_FILE

    def truncate(self, dataset_offset: int, audit_offset: int) -> None:
        with self.dataset.open("r+b") as fh:
            fh.truncate(dataset_offset)
        with self.audit.open("r+b") as fh:
            fh.truncate(audit_offset)

    def reset(self) -> None:
        self.dataset.write_text("")
        self.audit.write_text("")


def _append_lines(path: Path, lines: list[str]) -> int:
    with path.open("a", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    return path.stat().st_size


def run_progen(
    config: ProgenConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> RunResult:
    """Execute the full loop and return the grown dataset, the final model,
    the per-iteration audit log, and the final influence report.

    With ``out_dir`` set, dataset and audit rows are streamed to disk and a
    checkpoint is written after every iteration; ``resume`` restarts from such
    a checkpoint and reproduces the uninterrupted run byte for byte (mock
    backend). At the end the dataset file is rewritten with the final
    iteration's influence scores attached.
    """
    config.validate()
    files = _RunFiles(Path(out_dir)) if out_dir is not None else None
    if resume is not None and files is None:
        raise ConfigError("resume requires out_dir")

    backend = build_backend(config.backend)

    if resume is not None:
        state, dataset_offset, audit_offset = load_checkpoint(resume, config)
        files.truncate(dataset_offset, audit_offset)
        if isinstance(backend, MockBackend):
            if state.backend_counter is None:
                raise CheckpointError("checkpoint carries no backend counter for a mock run")
            backend.counter = int(state.backend_counter)
    else:
        d_val = build_validation(config, backend, id_start=0)
        state = RunState(
            d_train=[],
            d_val=d_val,
            d_helpful=[],
            iteration=0,
            next_id=len(d_val),
            backend_counter=backend.counter if isinstance(backend, MockBackend) else None,
            audit=[],
        )
        if files is not None:
            files.reset()
            save_checkpoint(files.checkpoint, config, state, 0, 0)

    params: ModelParams | None = None
    report: InfluenceReport | None = None
    index_by_id = {ex.id: i for i, ex in enumerate(state.d_train)}

    for t in range(state.iteration + 1, config.iterations + 1):
        use_feedback = feedback_schedule(t, has_helpful=bool(state.d_helpful))
        d_new = generate_slice(
            config, backend, state.d_helpful, t, state.next_id, use_feedback
        )
        state.next_id += len(d_new)
        for ex in d_new:
            index_by_id[ex.id] = len(state.d_train)
            state.d_train.append(ex)

        params = train(state.d_train, config.model_hyper)
        subset = stratified_sample(
            state.d_train,
            config.score_subset_size,
            derive_seed(config.master_seed, "subset", t),
        )
        report = influence_scores(
            params, subset, state.d_train, state.d_val, config.influence
        )
        state.d_helpful = select_helpful(report, subset, config.top_m)

        val_stats = evaluate(params, state.d_val)
        record = {
            "iteration": t,
            "used_feedback": use_feedback,
            "train_size": len(state.d_train),
            "val_accuracy": val_stats["accuracy"],
            "val_ce_loss": val_stats["mean_ce_loss"],
            "val_rce_loss": val_stats["mean_rce_loss"],
            "scored": len(subset),
            "helpful_ids": [ex.id for ex in state.d_helpful],
        }
        state.audit.append(record)
        state.iteration = t
        state.backend_counter = backend.counter if isinstance(backend, MockBackend) else None

        if files is not None:
            dataset_offset = _append_lines(files.dataset, [example_to_json(ex) for ex in d_new])
            audit_offset = _append_lines(files.audit, [json.dumps(record)])
            save_checkpoint(files.checkpoint, config, state, dataset_offset, audit_offset)

    # Attach the final iteration's scores to the dataset.
    assert report is not None and params is not None
    final_dataset = [
        ex.with_score(report.scores.get(ex.id)) for ex in state.d_train
    ]
    if files is not None:
        tmp = files.dataset.with_suffix(".jsonl.tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for ex in final_dataset:
                fh.write(example_to_json(ex) + "\n")
        tmp.replace(files.dataset)
        from .model import save_model

        save_model(files.model, params)
        report.save(files.report)

    return RunResult(
        dataset=final_dataset,
        params=params,
        audit=state.audit,
        report=report,
        d_val=state.d_val,
    )
