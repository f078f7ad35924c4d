"""Small convex task model: softmax linear classifier over hashed features.

Provides the differentiable substrate the influence machinery needs: losses
(cross-entropy and reverse cross-entropy), exact analytic gradients, and
Hessian-vector products. For a linear softmax model the Gauss-Newton matrix
equals the true Hessian of the cross-entropy objective, so everything here is
exact rather than approximate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import logsumexp

from .data import Example, classes_present
from .errors import ConfigError, DatasetError, DimensionMismatch
from .features import FeatureConfig, FeatureVector, featurize, featurize_matrix

CE = "ce"
RCE = "rce"


@dataclass(frozen=True)
class LossSpec:
    """Per-example loss: plain cross-entropy or the noise-tolerant reverse
    cross-entropy, whose log(0) is replaced by the negative constant
    ``rce_constant_a``."""

    kind: str = CE
    rce_constant_a: float = -4.0

    def validate(self) -> None:
        if self.kind not in (CE, RCE):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.kind == RCE and not self.rce_constant_a < 0:
            raise ConfigError("rce_constant_a must be strictly negative")


@dataclass(frozen=True)
class ModelHyper:
    num_classes: int = 2
    l2_lambda: float = 1e-3
    max_iters: int = 1000
    tol: float = 1e-7
    seed: int = 0
    feature: FeatureConfig = field(default_factory=FeatureConfig)

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if self.max_iters < 1 or self.tol <= 0:
            raise ConfigError("max_iters >= 1 and tol > 0 required")
        self.feature.validate()


@dataclass
class ModelParams:
    """Flat parameter vector: dims*C weights followed by C biases."""

    weights: np.ndarray
    num_classes: int
    l2_lambda: float
    feature_config: FeatureConfig

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        expected = self.feature_config.dims * self.num_classes + self.num_classes
        if self.weights.shape != (expected,):
            raise DimensionMismatch(
                f"weights shape {self.weights.shape} != ({expected},)"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ConfigError("weights must be finite")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def weight_matrix(self) -> np.ndarray:
        d = self.feature_config.dims
        return self.weights[: d * self.num_classes].reshape(d, self.num_classes)

    def bias(self) -> np.ndarray:
        return self.weights[self.feature_config.dims * self.num_classes :]

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.weights.tobytes())
        h.update(
            f"{self.num_classes}:{self.l2_lambda}:{self.feature_config}".encode()
        )
        return h.hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and self.num_classes == other.num_classes
            and self.l2_lambda == other.l2_lambda
            and self.feature_config == other.feature_config
        )


def zero_params(num_classes: int, l2_lambda: float, feature_config: FeatureConfig) -> ModelParams:
    size = feature_config.dims * num_classes + num_classes
    return ModelParams(np.zeros(size), num_classes, l2_lambda, feature_config)


# --- batched internals -------------------------------------------------------

def design_matrix(examples: Sequence[Example], config: FeatureConfig) -> tuple[sp.csr_matrix, np.ndarray]:
    X = featurize_matrix((ex.text for ex in examples), config)
    y = np.asarray([ex.label for ex in examples], dtype=np.int64)
    return X, y


def _logits(params: ModelParams, X: sp.csr_matrix) -> np.ndarray:
    return X @ params.weight_matrix() + params.bias()


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _split(params: ModelParams, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d, c = params.feature_config.dims, params.num_classes
    if v.shape != (d * c + c,):
        raise DimensionMismatch(f"vector shape {v.shape} != ({d * c + c},)")
    return v[: d * c].reshape(d, c), v[d * c :]


def _grad_rows(params: ModelParams, P: np.ndarray, y: np.ndarray, spec: LossSpec) -> np.ndarray:
    """Per-example loss gradient w.r.t. logits, one row per example.

    CE:  p - onehot(y)
    RCE: a * p_y * (onehot(y) - p), the exact gradient of -a*(1 - p_y).
    """
    n = P.shape[0]
    onehot = np.zeros_like(P)
    onehot[np.arange(n), y] = 1.0
    if spec.kind == CE:
        return P - onehot
    p_label = P[np.arange(n), y]
    return spec.rce_constant_a * p_label[:, None] * (onehot - P)


def _assemble_grad(params: ModelParams, X: sp.csr_matrix, rows: np.ndarray) -> np.ndarray:
    gw = X.T @ rows
    gb = rows.sum(axis=0)
    return np.concatenate([np.asarray(gw).ravel(), gb])


def batch_grad_sum(params: ModelParams, examples: Sequence[Example], spec: LossSpec) -> np.ndarray:
    """Sum of per-example loss gradients (no L2 term)."""
    spec.validate()
    X, y = design_matrix(examples, params.feature_config)
    P = _softmax(_logits(params, X))
    return _assemble_grad(params, X, _grad_rows(params, P, y, spec))


# --- public operations --------------------------------------------------------

def predict(params: ModelParams, fv: FeatureVector) -> np.ndarray:
    """Class probability vector (softmax over linear logits)."""
    if fv.dims != params.feature_config.dims:
        raise DimensionMismatch(
            f"feature dims {fv.dims} != model dims {params.feature_config.dims}"
        )
    logits = params.bias().copy()
    W = params.weight_matrix()
    for idx, val in fv.values.items():
        logits += val * W[idx]
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def predict_text(params: ModelParams, text: str) -> np.ndarray:
    return predict(params, featurize(text, params.feature_config))


def loss(params: ModelParams, example: Example, spec: LossSpec) -> float:
    """Per-example loss under ``spec`` (excludes any L2 term).

    CE is -log p(label). RCE with a one-hot label collapses to
    -a * (1 - p(label)), which is its exact closed form.
    """
    spec.validate()
    fv = featurize(example.text, params.feature_config)
    logits = params.bias().copy()
    W = params.weight_matrix()
    for idx, val in fv.values.items():
        logits += val * W[idx]
    if spec.kind == CE:
        return float(logsumexp(logits) - logits[example.label])
    p = np.exp(logits - logsumexp(logits))
    return float(-spec.rce_constant_a * (1.0 - p[example.label]))


def grad_loss(params: ModelParams, example: Example, spec: LossSpec) -> np.ndarray:
    """Exact gradient of ``loss`` w.r.t. the flat parameter vector."""
    return batch_grad_sum(params, [example], spec)


def hvp(
    params: ModelParams,
    examples: Sequence[Example],
    v: np.ndarray,
    damping: float = 0.0,
) -> np.ndarray:
    """(H + damping*I) @ v with H = mean per-example CE Hessian + l2_lambda*I.

    Uses the analytic softmax curvature (diag(p) - p p^T), which equals the
    true CE Hessian for a linear model, so no finite differencing is involved.
    """
    if len(examples) == 0:
        raise DatasetError("hvp requires a non-empty dataset")
    v = np.asarray(v, dtype=np.float64)
    Vw, vb = _split(params, v)
    X, _ = design_matrix(examples, params.feature_config)
    P = _softmax(_logits(params, X))
    S = X @ Vw + vb
    T = P * S - P * (P * S).sum(axis=1, keepdims=True)
    n = len(examples)
    hw = (X.T @ T) / n
    hb = T.sum(axis=0) / n
    out = np.concatenate([np.asarray(hw).ravel(), hb])
    return out + (params.l2_lambda + damping) * v


def hvp_operator(params: ModelParams, examples: Sequence[Example], damping: float = 0.0):
    """Closure form of hvp with the design matrix and probabilities cached."""
    if len(examples) == 0:
        raise DatasetError("hvp requires a non-empty dataset")
    X, _ = design_matrix(examples, params.feature_config)
    P = _softmax(_logits(params, X))
    n = X.shape[0]
    lam = params.l2_lambda + damping

    def apply(v: np.ndarray) -> np.ndarray:
        Vw, vb = _split(params, np.asarray(v, dtype=np.float64))
        S = X @ Vw + vb
        T = P * S - P * (P * S).sum(axis=1, keepdims=True)
        hw = (X.T @ T) / n
        hb = T.sum(axis=0) / n
        return np.concatenate([np.asarray(hw).ravel(), hb]) + lam * v

    return apply


def train(examples: Sequence[Example], hyper: ModelHyper) -> ModelParams:
    """Deterministic full-batch fit of mean CE + (l2_lambda/2)||theta||^2.

    The objective is strictly convex for l2_lambda > 0, so the optimizer
    choice only affects how fast we reach the unique optimum; L-BFGS with a
    zero start keeps results reproducible bit-for-bit.
    """
    hyper.validate()
    if len(examples) == 0:
        raise DatasetError("cannot train on an empty dataset")
    if not classes_present(examples, hyper.num_classes):
        raise DatasetError(
            f"training set must contain every class in [0, {hyper.num_classes})"
        )
    for ex in examples:
        if not 0 <= ex.label < hyper.num_classes:
            raise DatasetError(f"example {ex.id} label {ex.label} out of range")

    X, y = design_matrix(examples, hyper.feature)
    n = X.shape[0]
    d, c = hyper.feature.dims, hyper.num_classes
    rows = np.arange(n)

    def objective(w: np.ndarray) -> tuple[float, np.ndarray]:
        W = w[: d * c].reshape(d, c)
        b = w[d * c :]
        logits = X @ W + b
        lse = logsumexp(logits, axis=1)
        f = float(np.mean(lse - logits[rows, y])) + 0.5 * hyper.l2_lambda * float(w @ w)
        P = np.exp(logits - lse[:, None])
        R = P.copy()
        R[rows, y] -= 1.0
        gw = (X.T @ R) / n
        gb = R.sum(axis=0) / n
        g = np.concatenate([np.asarray(gw).ravel(), gb]) + hyper.l2_lambda * w
        return f, g

    result = minimize(
        objective,
        x0=np.zeros(d * c + c),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": hyper.max_iters, "ftol": 0.0, "gtol": hyper.tol, "maxcor": 20},
    )
    return ModelParams(result.x, hyper.num_classes, hyper.l2_lambda, hyper.feature)


def save_model(path, params: ModelParams) -> None:
    import json
    from pathlib import Path

    doc = {
        "weights": params.weights.tolist(),
        "num_classes": params.num_classes,
        "l2_lambda": params.l2_lambda,
        "feature_config": {
            "dims": params.feature_config.dims,
            "ngram_min": params.feature_config.ngram_min,
            "ngram_max": params.feature_config.ngram_max,
            "hash_seed": params.feature_config.hash_seed,
        },
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path) -> ModelParams:
    import json
    from pathlib import Path

    try:
        doc = json.loads(Path(path).read_text())
        fc = doc["feature_config"]
        return ModelParams(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            num_classes=int(doc["num_classes"]),
            l2_lambda=float(doc["l2_lambda"]),
            feature_config=FeatureConfig(
                dims=int(fc["dims"]),
                ngram_min=int(fc["ngram_min"]),
                ngram_max=int(fc["ngram_max"]),
                hash_seed=int(fc["hash_seed"]),
            ),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DatasetError(f"invalid model file {path}: {exc}") from exc


def evaluate(
    params: ModelParams, examples: Sequence[Example], rce_constant_a: float = -4.0
) -> dict[str, float]:
    """Accuracy (argmax, lowest index wins ties) plus mean CE and RCE losses."""
    if len(examples) == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    X, y = design_matrix(examples, params.feature_config)
    logits = _logits(params, X)
    lse = logsumexp(logits, axis=1)
    rows = np.arange(len(examples))
    ce = float(np.mean(lse - logits[rows, y]))
    P = np.exp(logits - lse[:, None])
    rce = float(np.mean(-rce_constant_a * (1.0 - P[rows, y])))
    accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
    return {"accuracy": accuracy, "mean_ce_loss": ce, "mean_rce_loss": rce}
