"""Shared fixtures and independent oracles used across the suite."""

from __future__ import annotations

import random

import numpy as np
import pytest

from progen.data import Example
from progen.features import FeatureConfig
from progen.model import LossSpec, ModelHyper, ModelParams

VOCAB = [
    "good", "bad", "fine", "awful", "great", "dull", "sharp", "flat",
    "warm", "cold", "bright", "dark", "crisp", "soggy", "fast", "slow",
]


def random_text(rng: random.Random, min_len: int = 3, max_len: int = 8) -> str:
    return " ".join(rng.choices(VOCAB, k=rng.randint(min_len, max_len)))


def random_instance(
    seed: int,
    n: int = 12,
    dims: int = 16,
    num_classes: int = 2,
    l2_lambda: float = 0.01,
    weight_scale: float = 0.5,
) -> tuple[ModelParams, list[Example]]:
    """A small dense-ish model plus a labeled dataset, for oracle checks."""
    rng = random.Random(seed)
    np_rng = np.random.default_rng(seed)
    config = FeatureConfig(dims=dims, ngram_min=1, ngram_max=2, hash_seed=seed % 7)
    size = dims * num_classes + num_classes
    params = ModelParams(
        weight_scale * np_rng.standard_normal(size), num_classes, l2_lambda, config
    )
    examples = [
        Example(id=i, text=random_text(rng), label=rng.randrange(num_classes))
        for i in range(n)
    ]
    # Guarantee every class shows up so the instance is trainable.
    for c in range(min(num_classes, n)):
        examples[c] = Example(id=c, text=examples[c].text, label=c)
    return params, examples


POS_WORDS = ["good", "great", "fine", "warm", "bright", "crisp", "sharp", "fast"]
NEG_WORDS = ["bad", "awful", "dull", "cold", "dark", "soggy", "flat", "slow"]
FILLER_WORDS = ["movie", "film", "story", "plot", "it", "was", "very", "the"]


def sentiment_set(
    rng: random.Random,
    n: int,
    noise: float = 0.0,
    id_start: int = 0,
) -> list[Example]:
    """Balanced binary set of polarity-worded texts; ``noise`` flips labels."""
    out = []
    for i in range(n):
        polarity = i % 2
        words = rng.choices(POS_WORDS if polarity == 1 else NEG_WORDS, k=rng.randint(1, 3))
        words += rng.choices(FILLER_WORDS, k=rng.randint(2, 4))
        rng.shuffle(words)
        label = 1 - polarity if rng.random() < noise else polarity
        out.append(Example(id=id_start + i, text=" ".join(words), label=label))
    return out


def fd_gradient(func, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        step = h * max(1.0, abs(theta[i]))
        up = theta.copy()
        up[i] += step
        down = theta.copy()
        down[i] -= step
        grad[i] = (func(up) - func(down)) / (2 * step)
    return grad


def rel_err(actual: np.ndarray, expected: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(expected)), 1e-12)
    return float(np.linalg.norm(np.asarray(actual) - np.asarray(expected))) / denom


def dense_hessian_oracle(params: ModelParams, examples, damping: float = 0.0) -> np.ndarray:
    """Explicit damped Hessian, assembled entry by entry from the analytic
    softmax curvature. Independent of the vectorized hvp code path."""
    from progen.features import featurize
    from progen.model import predict

    d = params.feature_config.dims
    c = params.num_classes
    size = d * c + c
    H = np.zeros((size, size))

    def coord(feature_idx: int | None, cls: int) -> int:
        if feature_idx is None:  # bias slot
            return d * c + cls
        return feature_idx * c + cls

    for ex in examples:
        fv = featurize(ex.text, params.feature_config)
        p = predict(params, fv)
        slots = list(fv.values.items()) + [(None, 1.0)]
        for i_idx, i_val in slots:
            for j_idx, j_val in slots:
                for a in range(c):
                    for b in range(c):
                        curv = p[a] * (1.0 if a == b else 0.0) - p[a] * p[b]
                        H[coord(i_idx, a), coord(j_idx, b)] += i_val * j_val * curv / len(examples)
    H += (params.l2_lambda + damping) * np.eye(size)
    return H


def spearman(a, b) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(a, b).statistic)


@pytest.fixture
def small_instance():
    return random_instance(seed=0)


def make_hyper(dims: int = 16, num_classes: int = 2, l2_lambda: float = 0.01, seed: int = 0) -> ModelHyper:
    return ModelHyper(
        num_classes=num_classes,
        l2_lambda=l2_lambda,
        max_iters=2000,
        tol=1e-9,
        seed=seed,
        feature=FeatureConfig(dims=dims, ngram_min=1, ngram_max=1, hash_seed=1),
    )


CE_SPEC = LossSpec(kind="ce")
RCE_SPEC = LossSpec(kind="rce", rce_constant_a=-4.0)
