"""Noise-robust validation-set influence scoring.

The influence of a training point z on the validation set is

    score(z) = - g_val^T (H + damping*I)^{-1} grad_ce(z)

where H is the damped training Hessian, g_val is the gradient of the
validation objective (reverse cross-entropy by default, which tolerates label
noise in the validation set), and grad_ce(z) is the plain CE gradient of the
candidate. More negative scores mark more valuable points. The inverse-HVP is
applied once to g_val and dotted with every candidate gradient; by symmetry
of H this equals solving per candidate, at a fraction of the cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Example, classes_present
from .errors import (
    ConfigError,
    ConvergenceError,
    DatasetError,
    ScaleTooLargeError,
)
from .model import (
    CE,
    LossSpec,
    ModelHyper,
    ModelParams,
    batch_grad_sum,
    design_matrix,
    _grad_rows,
    _logits,
    _softmax,
    _split,
    hvp_operator,
    loss,
    train,
)

EXACT = "exact"
STOCHASTIC = "stochastic"

_CG_MAX_ITERS = 5000
_CG_RTOL = 1e-8
_DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class StochasticConfig:
    recursion_depth: int = 5000
    num_repeats: int = 10
    scale: float = 0.1
    batch_size: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.recursion_depth < 1:
            raise ConfigError("recursion_depth must be >= 1")
        if self.num_repeats < 1:
            raise ConfigError("num_repeats must be >= 1")
        if self.scale <= 0:
            raise ConfigError("scale must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass(frozen=True)
class InfluenceConfig:
    method: str = EXACT
    damping: float = 0.01
    val_loss: LossSpec = field(default_factory=lambda: LossSpec(kind="rce"))
    stochastic: StochasticConfig = field(default_factory=StochasticConfig)

    def validate(self) -> None:
        if self.method not in (EXACT, STOCHASTIC):
            raise ConfigError(f"unknown influence method {self.method!r}")
        if self.damping < 0:
            raise ConfigError("damping must be >= 0")
        self.val_loss.validate()
        self.stochastic.validate()


@dataclass
class InfluenceReport:
    """Per-candidate influence scores plus the method and seed behind them."""

    scores: dict[int, float]
    config: InfluenceConfig
    model_fingerprint: str

    def to_json_dict(self) -> dict:
        return {
            "model_fingerprint": self.model_fingerprint,
            "method": self.config.method,
            "seed": self.config.stochastic.seed,
            "scores": [
                {"id": i, "score": self.scores[i]} for i in sorted(self.scores)
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


def load_report(path: str | Path) -> InfluenceReport:
    """Read a serialized report; the embedded config keeps only method/seed."""
    try:
        doc = json.loads(Path(path).read_text())
        scores = {int(row["id"]): float(row["score"]) for row in doc["scores"]}
        config = InfluenceConfig(
            method=str(doc["method"]),
            stochastic=StochasticConfig(seed=int(doc["seed"])),
        )
        return InfluenceReport(scores, config, str(doc["model_fingerprint"]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DatasetError(f"invalid influence report {path}: {exc}") from exc


def val_grad(params: ModelParams, val_set: Sequence[Example], spec: LossSpec) -> np.ndarray:
    """Gradient of the summed validation loss under ``spec``."""
    if len(val_set) == 0:
        raise DatasetError("validation set must be non-empty")
    return batch_grad_sum(params, val_set, spec)


def ihvp_exact(
    params: ModelParams,
    train_set: Sequence[Example],
    v: np.ndarray,
    damping: float,
) -> np.ndarray:
    """Solve (H + damping*I) u = v by conjugate gradient on hvp.

    Requires damping + l2_lambda > 0 so the system is positive definite.
    """
    if damping + params.l2_lambda <= 0:
        raise ConfigError("need damping + l2_lambda > 0 for an invertible Hessian")
    v = np.asarray(v, dtype=np.float64)
    apply_h = hvp_operator(params, train_set, damping)
    return _conjugate_gradient(apply_h, v)


def _conjugate_gradient(
    apply_h: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    rtol: float = _CG_RTOL,
    max_iters: int = _CG_MAX_ITERS,
) -> np.ndarray:
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b)
    tol = rtol * b_norm
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for _ in range(max_iters):
        if np.sqrt(rs) <= tol:
            return x
        hp = apply_h(p)
        alpha = rs / float(p @ hp)
        x += alpha * p
        r -= alpha * hp
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= tol:
        return x
    raise ConvergenceError("conjugate gradient did not converge", residual=float(np.sqrt(rs)))


def ihvp_stochastic(
    params: ModelParams,
    train_set: Sequence[Example],
    v: np.ndarray,
    cfg: InfluenceConfig,
) -> np.ndarray:
    """Truncated Neumann-series estimate of (H + damping*I)^{-1} v.

    Runs u_{j+1} = v + (I - scale*(H_batch + damping*I)) u_j on freshly
    sampled mini-batches; u_depth estimates (scale*(H + damping*I))^{-1} v, so
    the returned average is rescaled by ``scale``. The caller must pick
    ``scale`` small enough that scale*||H + damping*I|| < 1; divergence is
    detected and reported instead of returning garbage.
    """
    cfg.validate()
    if len(train_set) == 0:
        raise DatasetError("train set must be non-empty")
    v = np.asarray(v, dtype=np.float64)
    st = cfg.stochastic
    rng = np.random.default_rng(st.seed)

    X, _ = design_matrix(train_set, params.feature_config)
    P = _softmax(_logits(params, X))
    n = X.shape[0]
    batch = min(st.batch_size, n)
    lam = params.l2_lambda + cfg.damping
    v_norm = float(np.linalg.norm(v))
    limit = _DIVERGENCE_FACTOR * max(v_norm, 1e-30)

    def batch_hvp(idx: np.ndarray, u: np.ndarray) -> np.ndarray:
        Uw, ub = _split(params, u)
        Xb = X[idx]
        Pb = P[idx]
        S = Xb @ Uw + ub
        T = Pb * S - Pb * (Pb * S).sum(axis=1, keepdims=True)
        hw = (Xb.T @ T) / len(idx)
        hb = T.sum(axis=0) / len(idx)
        return np.concatenate([np.asarray(hw).ravel(), hb]) + lam * u

    acc = np.zeros_like(v)
    for _ in range(st.num_repeats):
        u = v.copy()
        for _ in range(st.recursion_depth):
            idx = rng.choice(n, size=batch, replace=False)
            u = v + u - st.scale * batch_hvp(idx, u)
            if float(np.linalg.norm(u)) > limit:
                raise ScaleTooLargeError(
                    f"recursion diverged (||u|| > {_DIVERGENCE_FACTOR:.0e} ||v||); "
                    f"reduce scale below {st.scale}"
                )
        acc += u
    return st.scale * acc / st.num_repeats


def _candidate_grad_dots(
    params: ModelParams, candidates: Sequence[Example], s: np.ndarray
) -> np.ndarray:
    """g_z^T s for every candidate z under CE loss, without materializing g_z."""
    Sw, sb = _split(params, s)
    X, y = design_matrix(candidates, params.feature_config)
    P = _softmax(_logits(params, X))
    R = _grad_rows(params, P, y, LossSpec(kind=CE))
    return np.asarray((X @ Sw + sb) * R).sum(axis=1)


def influence_scores(
    params: ModelParams,
    candidates: Sequence[Example],
    train_set: Sequence[Example],
    val_set: Sequence[Example],
    cfg: InfluenceConfig,
) -> InfluenceReport:
    """Score every candidate against the validation objective (see module doc)."""
    cfg.validate()
    if len(candidates) == 0:
        raise DatasetError("no candidates to score")
    train_ids = {ex.id for ex in train_set}
    for ex in candidates:
        if ex.id not in train_ids:
            raise DatasetError(f"candidate {ex.id} is not part of the training set")

    g_val = val_grad(params, val_set, cfg.val_loss)
    if cfg.method == EXACT:
        s = ihvp_exact(params, train_set, g_val, cfg.damping)
    else:
        s = ihvp_stochastic(params, train_set, g_val, cfg)
    scores = -_candidate_grad_dots(params, candidates, s)
    if not np.all(np.isfinite(scores)):
        raise ConvergenceError("non-finite influence scores", residual=float("nan"))
    return InfluenceReport(
        scores={ex.id: float(sc) for ex, sc in zip(candidates, scores)},
        config=cfg,
        model_fingerprint=params.fingerprint(),
    )


def select_helpful(
    report: InfluenceReport, examples: Sequence[Example], top_m: int
) -> list[Example]:
    """The top_m most valuable examples: smallest scores first, ids break ties.

    Only scored examples participate; if fewer than top_m were scored, all of
    them are returned (still sorted ascending).
    """
    if top_m < 1:
        raise ConfigError("top_m must be >= 1")
    scored = [ex for ex in examples if ex.id in report.scores]
    scored.sort(key=lambda ex: (report.scores[ex.id], ex.id))
    return scored[:top_m]


def _val_loss_sum(params: ModelParams, val_set: Sequence[Example], spec: LossSpec) -> float:
    return float(sum(loss(params, ex, spec) for ex in val_set))


def loo_oracle(
    train_set: Sequence[Example],
    held_out_id: int,
    val_set: Sequence[Example],
    spec: LossSpec,
    hyper: ModelHyper,
) -> float:
    """Ground-truth leave-one-out effect: retrain without the point and return
    the change in summed validation loss (positive means the point helped)."""
    remaining = [ex for ex in train_set if ex.id != held_out_id]
    if len(remaining) == len(train_set):
        raise DatasetError(f"id {held_out_id} not found in the training set")
    if not classes_present(remaining, hyper.num_classes):
        raise DatasetError(
            f"removing {held_out_id} would eliminate a class from the training set"
        )
    full = train(train_set, hyper)
    without = train(remaining, hyper)
    return _val_loss_sum(without, val_set, spec) - _val_loss_sum(full, val_set, spec)
