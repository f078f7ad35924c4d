"""Labeled examples with provenance, and their JSONL persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

from .errors import DatasetError

# JSONL schema, one example per line.
_REQUIRED_KEYS = ("id", "text", "label", "iteration", "used_feedback")
_ALL_KEYS = _REQUIRED_KEYS + ("influence_score",)


@dataclass(frozen=True)
class Example:
    """One labeled text with provenance.

    ``iteration`` 0 marks validation/seed examples; ``used_feedback`` records
    whether the generating prompt carried in-context examples.
    """

    id: int
    text: str
    label: int
    iteration: int = 0
    used_feedback: bool = False
    influence_score: float | None = None

    def with_score(self, score: float | None) -> "Example":
        return replace(self, influence_score=score)


def validate_dataset(examples: Iterable[Example], num_classes: int | None = None) -> None:
    """Check id uniqueness, label range, and non-empty text."""
    seen: set[int] = set()
    for ex in examples:
        if ex.id in seen:
            raise DatasetError(f"duplicate example id {ex.id}")
        seen.add(ex.id)
        if not ex.text:
            raise DatasetError(f"example {ex.id} has empty text")
        if ex.label < 0:
            raise DatasetError(f"example {ex.id} has negative label")
        if num_classes is not None and ex.label >= num_classes:
            raise DatasetError(
                f"example {ex.id} label {ex.label} out of range for {num_classes} classes"
            )
        if ex.iteration < 0:
            raise DatasetError(f"example {ex.id} has negative iteration")


def classes_present(examples: Iterable[Example], num_classes: int) -> bool:
    labels = {ex.label for ex in examples}
    return all(c in labels for c in range(num_classes))


def example_to_dict(ex: Example) -> dict:
    return {
        "id": ex.id,
        "text": ex.text,
        "label": ex.label,
        "iteration": ex.iteration,
        "used_feedback": ex.used_feedback,
        "influence_score": ex.influence_score,
    }


def example_from_dict(row: dict, line: int | None = None) -> Example:
    for key in _REQUIRED_KEYS:
        if key not in row:
            raise DatasetError(f"missing key {key!r}", line=line)
    extra = set(row) - set(_ALL_KEYS)
    if extra:
        raise DatasetError(f"unknown keys {sorted(extra)}", line=line)
    try:
        score = row.get("influence_score")
        return Example(
            id=int(row["id"]),
            text=str(row["text"]),
            label=int(row["label"]),
            iteration=int(row["iteration"]),
            used_feedback=bool(row["used_feedback"]),
            influence_score=None if score is None else float(score),
        )
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"bad field value: {exc}", line=line) from exc


def example_to_json(ex: Example) -> str:
    return json.dumps(example_to_dict(ex), ensure_ascii=False)


def read_dataset(path: str | Path) -> list[Example]:
    """Read a JSONL dataset; errors carry the offending 1-based line number."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    examples: list[Example] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(row, dict):
                raise DatasetError("row is not an object", line=lineno)
            examples.append(example_from_dict(row, line=lineno))
    validate_dataset(examples)
    return examples


def write_dataset(path: str | Path, examples: Iterable[Example]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(example_to_json(ex) + "\n")
