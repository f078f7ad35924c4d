"""Hashed bag-of-words featurization.

Texts are lowercased and whitespace-tokenized; word n-grams are hashed into a
fixed number of buckets with a keyed (seeded) hash, counted, and L2-normalized.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError


@dataclass(frozen=True)
class FeatureConfig:
    dims: int = 2**16
    ngram_min: int = 1
    ngram_max: int = 2
    hash_seed: int = 0

    def validate(self) -> None:
        if self.dims < 1:
            raise ConfigError("feature dims must be >= 1")
        if not (1 <= self.ngram_min <= self.ngram_max):
            raise ConfigError("require 1 <= ngram_min <= ngram_max")


@dataclass(frozen=True)
class FeatureVector:
    dims: int
    values: dict[int, float]


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@lru_cache(maxsize=1 << 20)
def _bucket(gram: str, hash_seed: int, dims: int) -> int:
    key = (hash_seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(gram.encode("utf-8"), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little") % dims


def ngram_counts(text: str, config: FeatureConfig) -> dict[int, int]:
    """Raw hashed n-gram counts, before normalization."""
    tokens = tokenize(text)
    counts: Counter[int] = Counter()
    for n in range(config.ngram_min, config.ngram_max + 1):
        for i in range(len(tokens) - n + 1):
            counts[_bucket(" ".join(tokens[i : i + n]), config.hash_seed, config.dims)] += 1
    return dict(counts)


@lru_cache(maxsize=1 << 18)
def _featurize_cached(text: str, config: FeatureConfig) -> FeatureVector:
    counts = ngram_counts(text, config)
    norm = math.sqrt(sum(c * c for c in counts.values()))
    if norm == 0.0:
        return FeatureVector(dims=config.dims, values={})
    return FeatureVector(
        dims=config.dims, values={i: c / norm for i, c in counts.items()}
    )


def featurize(text: str, config: FeatureConfig) -> FeatureVector:
    """Deterministic L2-normalized hashed n-gram vector (empty text -> zero)."""
    config.validate()
    return _featurize_cached(text, config)


def featurize_matrix(texts: Sequence[str] | Iterable[str], config: FeatureConfig) -> sp.csr_matrix:
    """Stack featurize() results into a CSR matrix of shape (n, dims)."""
    data: list[float] = []
    indices: list[int] = []
    indptr: list[int] = [0]
    n = 0
    for text in texts:
        fv = featurize(text, config)
        for idx in sorted(fv.values):
            indices.append(idx)
            data.append(fv.values[idx])
        indptr.append(len(indices))
        n += 1
    return sp.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(n, config.dims),
    )
