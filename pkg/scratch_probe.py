"""Scratch: tune instance parameters for influence tests (not part of the package)."""
import random
import sys
import time

import numpy as np
sys.path.insert(0, "tests")

from progen.data import Example
from progen.features import FeatureConfig
from progen.model import LossSpec, ModelHyper, train
from progen.influence import (
    InfluenceConfig, StochasticConfig, influence_scores, ihvp_exact,
    ihvp_stochastic, loo_oracle, val_grad,
)
from scipy.stats import spearmanr

VOCAB_POS = ["good", "great", "fine", "warm", "bright", "crisp", "sharp", "fast"]
VOCAB_NEG = ["bad", "awful", "dull", "cold", "dark", "soggy", "flat", "slow"]
FILLER = ["movie", "film", "story", "plot", "it", "was", "very", "the"]


def make_set(rng, n, noise, id_start=0):
    out = []
    for i in range(n):
        label = i % 2
        words = rng.choices(VOCAB_POS if label == 1 else VOCAB_NEG, k=rng.randint(1, 3))
        words += rng.choices(FILLER, k=rng.randint(2, 4))
        rng.shuffle(words)
        lbl = label
        if rng.random() < noise:
            lbl = 1 - label
        out.append(Example(id=id_start + i, text=" ".join(words), label=lbl))
    return out


def loo_probe(seed, l2, n_train=32, n_val=12, noise=0.25, dims=32):
    rng = random.Random(seed)
    train_set = make_set(rng, n_train, noise)
    val_set = make_set(rng, n_val, 0.0, id_start=1000)
    hyper = ModelHyper(num_classes=2, l2_lambda=l2, max_iters=3000, tol=1e-10,
                       feature=FeatureConfig(dims=dims, ngram_min=1, ngram_max=1, hash_seed=1))
    params = train(train_set, hyper)
    cfg = InfluenceConfig(method="exact", damping=0.0)
    report = influence_scores(params, train_set, train_set, val_set, cfg)
    scores = np.array([report.scores[ex.id] for ex in train_set])
    spec = LossSpec(kind="rce")
    deltas = np.array([loo_oracle(train_set, ex.id, val_set, spec, hyper) for ex in train_set])
    return spearmanr(-scores, deltas).statistic


def stoch_probe(seed, l2, damping, depth=5000, repeats=10, scale=0.1, batch=8):
    rng = random.Random(seed)
    train_set = make_set(rng, 32, 0.25)
    val_set = make_set(rng, 12, 0.0, id_start=1000)
    hyper = ModelHyper(num_classes=2, l2_lambda=l2, max_iters=3000, tol=1e-10,
                       feature=FeatureConfig(dims=9, ngram_min=1, ngram_max=1, hash_seed=1))
    params = train(train_set, hyper)
    g = val_grad(params, val_set, LossSpec(kind="rce"))
    cfg = InfluenceConfig(method="stochastic", damping=damping,
                          stochastic=StochasticConfig(recursion_depth=depth, num_repeats=repeats,
                                                      scale=scale, batch_size=batch, seed=seed))
    t0 = time.time()
    u_s = ihvp_stochastic(params, train_set, g, cfg)
    dt = time.time() - t0
    u_e = ihvp_exact(params, train_set, g, damping)
    rel = np.linalg.norm(u_s - u_e) / np.linalg.norm(u_e)
    # ranking agreement between methods
    r_exact = influence_scores(params, train_set, train_set, val_set,
                               InfluenceConfig(method="exact", damping=damping))
    r_stoch = influence_scores(params, train_set, train_set, val_set, cfg)
    se = [r_exact.scores[ex.id] for ex in train_set]
    ss = [r_stoch.scores[ex.id] for ex in train_set]
    rho = spearmanr(se, ss).statistic
    return rel, rho, dt


if __name__ == "__main__":
    mode = sys.argv[1] if len(sys.argv) > 1 else "all"
    if mode in ("loo", "all"):
        for l2 in (0.01, 0.03, 0.05, 0.1):
            rhos = [loo_probe(s, l2) for s in range(6)]
            print(f"LOO l2={l2}: spearman min={min(rhos):.3f} vals={[round(r,3) for r in rhos]}")
    if mode in ("stoch", "all"):
        for l2, damp in [(0.01, 0.01), (0.05, 0.01), (0.05, 0.05), (0.1, 0.01)]:
            rels, rhos = [], []
            for s in range(4):
                rel, rho, dt = stoch_probe(s, l2, damp)
                rels.append(rel); rhos.append(rho)
            print(f"STOCH l2={l2} damp={damp}: rel max={max(rels):.4f} rho min={min(rhos):.4f} ({dt:.1f}s/run)")
