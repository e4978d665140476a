"""Scratch experiment: criterion-6 directional check at acceptance scale."""
import json
import time

import numpy as np

from cpseq.domain import make_dataset, make_queries, fingerprints
from cpseq.boosting import BoostedTreeClassifier, ClassifierConfig
from cpseq.conformal import build_acp
from cpseq.policy import build_pretrain_corpus, pretrain_prior
from cpseq.rl import RLConfig, SequenceScorer, run_rl
from cpseq.harness import steps_to_threshold, run_seed_for

t0 = time.time()
ds = make_dataset(5000, seed=11)
tr_s, tr_y = ds.subset("train")
X = fingerprints(tr_s)
clf = BoostedTreeClassifier(ClassifierConfig()).fit(X, tr_y)
acp = build_acp(X, tr_y, k=10, seed=5)
corpus = build_pretrain_corpus(tr_s[:1500], seed=4)
prior = pretrain_prior(corpus, epochs=10, learning_rate=1e-3, seed=0).policy
print(f"artifacts built in {time.time()-t0:.0f}s", flush=True)

queries = make_queries(10, seed=33)
kinds = ("rm_p1", "cp_harsh", "cp_soft")
scorers = {k: SequenceScorer(k, clf, acp) for k in kinds}
out = {}
for qi, q in enumerate(queries):
    for kind in kinds:
        cfg = RLConfig(scoring=kind, steps=350, seed=run_seed_for(0, qi, kind))
        t1 = time.time()
        rec = run_rl(q, cfg, prior, scorers[kind])
        sth = steps_to_threshold(rec)
        out[f"{qi}:{kind}"] = {
            "query": q.to_text(), "m": q.masked_count,
            "hits": len(rec.conf_eff_unique), "unique": len(rec.unique_valid),
            "sth": sth,
        }
        print(f"{q.to_text():>14} m={q.masked_count} {kind:>8}: hits={len(rec.conf_eff_unique):>5} "
              f"unique={len(rec.unique_valid):>5} sth={sth} ({time.time()-t1:.0f}s)", flush=True)

import statistics
sent = 351
for metric in ("hits", "sth"):
    vals = {k: [out[f"{qi}:{k}"][metric] if metric != "sth" else (out[f"{qi}:{k}"]["sth"] or sent)
                for qi in range(len(queries))] for k in kinds}
    med = {k: statistics.median(v) for k, v in vals.items()}
    print(metric, med, flush=True)
json.dump(out, open("/tmp/direction.json", "w"))
print(f"total {time.time()-t0:.0f}s")
