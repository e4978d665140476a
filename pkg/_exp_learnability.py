"""Scratch: criterion-5 query selection — RM score delta across 5 seeds."""
import time

import numpy as np

from cpseq.domain import make_dataset, make_queries, fingerprints
from cpseq.boosting import BoostedTreeClassifier, ClassifierConfig
from cpseq.conformal import build_acp
from cpseq.policy import build_pretrain_corpus, pretrain_prior
from cpseq.rl import RLConfig, SequenceScorer, run_rl

ds = make_dataset(5000, seed=11)
tr_s, tr_y = ds.subset("train")
X = fingerprints(tr_s)
clf = BoostedTreeClassifier(ClassifierConfig()).fit(X, tr_y)
acp = build_acp(X, tr_y, k=10, seed=5)
corpus = build_pretrain_corpus(tr_s[:1500], seed=4)
prior = pretrain_prior(corpus, epochs=10, learning_rate=1e-3, seed=0).policy

queries = make_queries(10, seed=33)
for qi in (3, 6, 0):  # ?DM???K (m=4), ?SRITG?AM? (m=3), KINTWGG??G (m=2)
    q = queries[qi]
    deltas = []
    for seed in range(5):
        scorer = SequenceScorer("rm_p1", clf, acp)
        t0 = time.time()
        rec = run_rl(q, RLConfig(scoring="rm_p1", steps=350, seed=seed), prior, scorer)
        first = np.mean([m.avg_score for m in rec.steps[:20]])
        last = np.mean([m.avg_score for m in rec.steps[-20:]])
        deltas.append(last - first)
        print(f"{q.to_text()} seed={seed}: {first:.3f}->{last:.3f} d={last-first:+.3f} ({time.time()-t0:.0f}s)", flush=True)
    wins = sum(1 for d in deltas if d >= 0.2)
    print(f"== {q.to_text()}: {wins}/5 seeds with delta >= 0.2", flush=True)
