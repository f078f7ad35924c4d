"""Prompt templates and in-context example rendering.

A template turns a class label (and optionally a generated condition text)
into a label-descriptive prompt ending in an opening quote; the backend
completes the quoted span. In-context rendering prepends demonstrations drawn
from the helpful set, in one of several formats:

    BASE  no demonstrations (the plain zero-shot prompt)
    F1    classes mixed, order random
    F2    positive-class demonstrations first
    F3    positive-class demonstrations last
    F4    only target-class demonstrations
    F5    only target-class demonstrations, label words masked everywhere
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .data import Example
from .errors import ConfigError, InsufficientExamplesError

TASK_SLOT = "<TASK>"
LABEL_SLOT = "<Y>"
CONDITION_SLOT = "<C>"

BASE = "BASE"
FORMATS = (BASE, "F1", "F2", "F3", "F4", "F5")
SEGMENT_SEPARATOR = "\n\n"


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    pattern: str
    label_words: tuple[str, ...]
    task_word: str = "movie"
    masked_pattern: str | None = None       # label-free target pattern (F5)
    demo_pattern: str | None = None         # labeled in-context segments
    masked_demo_pattern: str | None = None  # label-free in-context segments (F5)
    condition_pattern: str | None = None    # first-stage prompt filling <C>

    @property
    def needs_condition(self) -> bool:
        return CONDITION_SLOT in self.pattern

    def validate(self) -> None:
        if self.pattern.count(LABEL_SLOT) != 1:
            raise ConfigError(f"template {self.id}: pattern must contain {LABEL_SLOT} exactly once")
        if len(self.label_words) < 2:
            raise ConfigError(f"template {self.id}: need at least two label words")
        if self.needs_condition and not self.condition_pattern:
            raise ConfigError(f"template {self.id}: {CONDITION_SLOT} requires a condition_pattern")
        for name in ("masked_pattern", "masked_demo_pattern"):
            value = getattr(self, name)
            if value is not None and LABEL_SLOT in value:
                raise ConfigError(f"template {self.id}: {name} must not contain {LABEL_SLOT}")


def default_template(template_id: str, task_word: str = "movie") -> PromptTemplate:
    """The stock template catalog (P1, P2, P3) for a given task noun."""
    if template_id == "P1":
        return PromptTemplate(
            id="P1",
            pattern='<Y> <TASK> Review: "',
            label_words=("Negative", "Positive"),
            task_word=task_word.title(),
            masked_pattern='<TASK> Review: "',
        )
    if template_id == "P2":
        return PromptTemplate(
            id="P2",
            pattern='The <TASK> review in <Y> sentiment is: "',
            label_words=("negative", "positive"),
            task_word=task_word,
            masked_pattern='The <TASK> review is: "',
        )
    if template_id == "P3":
        return PromptTemplate(
            id="P3",
            pattern='The <TASK> review in <Y> sentiment for <TASK> "<C>" is: "',
            label_words=("negative", "positive"),
            task_word=task_word,
            masked_pattern='The <TASK> review for <TASK> "<C>" is: "',
            demo_pattern='The <TASK> review in <Y> sentiment is: "',
            masked_demo_pattern='The <TASK> review is: "',
            condition_pattern=f'{task_word.title()}: "',
        )
    raise ConfigError(f"unknown template id {template_id!r}")


def sample_label(num_classes: int, t: int, j: int) -> int:
    """Balanced round-robin label assignment within an iteration.

    Has the same uniform marginal as independent sampling but gives exact
    class balance over any window divisible by the class count.
    """
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    return j % num_classes


def _fill(pattern: str, template: PromptTemplate, label: int | None, condition: str | None) -> str:
    out = pattern.replace(TASK_SLOT, template.task_word)
    if LABEL_SLOT in out:
        if label is None:
            raise ConfigError("pattern expects a label but none was given")
        if not 0 <= label < len(template.label_words):
            raise ConfigError(f"no label word for class {label} in template {template.id}")
        out = out.replace(LABEL_SLOT, template.label_words[label])
    if CONDITION_SLOT in out:
        if condition is None:
            raise ConfigError(f"template {template.id} requires a condition text for {CONDITION_SLOT}")
        out = out.replace(CONDITION_SLOT, condition)
    return out


def render_condition_prompt(template: PromptTemplate) -> str | None:
    """The first-stage prompt whose completion fills <C>, if the template has one."""
    if template.condition_pattern is None:
        return None
    return template.condition_pattern.replace(TASK_SLOT, template.task_word)


def render_zero_shot(template: PromptTemplate, label: int, condition: str | None = None) -> str:
    """Label-descriptive prompt with no demonstrations."""
    template.validate()
    return _fill(template.pattern, template, label, condition)


@dataclass(frozen=True)
class InContextConfig:
    format: str = "F5"
    k: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.format not in FORMATS:
            raise ConfigError(f"unknown in-context format {self.format!r}")
        if self.format == BASE and self.k != 0:
            raise ConfigError("BASE format requires k == 0")
        if self.format != BASE and self.k < 1:
            raise ConfigError(f"format {self.format} requires k >= 1")


def select_in_context(
    helpful: Sequence[Example], cfg: InContextConfig, target_label: int
) -> list[Example]:
    """Draw and order the demonstrations for one prompt (without replacement)."""
    cfg.validate()
    if cfg.format == BASE:
        return []
    rng = random.Random(cfg.seed)
    if cfg.format in ("F4", "F5"):
        pool = [ex for ex in helpful if ex.label == target_label]
        if len(pool) < cfg.k:
            raise InsufficientExamplesError(
                f"format {cfg.format} needs {cfg.k} examples of class {target_label}, "
                f"have {len(pool)}"
            )
        return rng.sample(pool, cfg.k)
    if len(helpful) < cfg.k:
        raise InsufficientExamplesError(
            f"format {cfg.format} needs {cfg.k} examples, have {len(helpful)}"
        )
    drawn = rng.sample(list(helpful), cfg.k)
    if cfg.format == "F2":  # positive class first
        drawn.sort(key=lambda ex: -ex.label)
    elif cfg.format == "F3":  # positive class last
        drawn.sort(key=lambda ex: ex.label)
    return drawn


def _demo_segment(template: PromptTemplate, example: Example, masked: bool) -> str:
    if masked:
        pattern = template.masked_demo_pattern or template.masked_pattern
        if pattern is None:
            raise ConfigError(f"template {template.id} has no masked pattern for F5")
        return _fill(pattern, template, None, None) + example.text + '"'
    pattern = template.demo_pattern or template.pattern
    if CONDITION_SLOT in pattern:
        raise ConfigError(
            f"template {template.id} needs a condition-free demo_pattern for in-context use"
        )
    return _fill(pattern, template, example.label, None) + example.text + '"'


def render_in_context(
    template: PromptTemplate,
    helpful: Sequence[Example],
    cfg: InContextConfig,
    target_label: int,
    condition: str | None = None,
) -> str:
    """Full prompt: demonstration segments, blank-line separated, then the
    target pattern. Under F5 every segment (target included) is label-free."""
    template.validate()
    cfg.validate()
    if cfg.format == BASE:
        return render_zero_shot(template, target_label, condition)
    masked = cfg.format == "F5"
    examples = select_in_context(helpful, cfg, target_label)
    segments = [_demo_segment(template, ex, masked) for ex in examples]
    if masked:
        if template.masked_pattern is None:
            raise ConfigError(f"template {template.id} has no masked_pattern for F5")
        final = _fill(template.masked_pattern, template, None, condition)
    else:
        final = _fill(template.pattern, template, target_label, condition)
    return SEGMENT_SEPARATOR.join(segments + [final])
