"""Reward-shaped policy fine-tuning over masked-fill queries.

Each learning step samples a batch from the trainable agent, assembles and
scores the proposals, regresses the agent log-likelihood onto the augmented
(prior + sigma * score) log-likelihood with a squared loss, and applies one
SGD update. Invalid assemblies earn score 0 but stay in the loss batch; the
conformal p-values and hit flags are tracked for every valid sample no matter
which scoring kind drives the run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .boosting import BoostedTreeClassifier
from .conformal import Acp, DEFAULT_SIGNIFICANCE, PValuePair, is_confident_positive
from .domain import DEFAULT_VOCABULARY, QueryTemplate, Vocabulary, assemble, fingerprints
from .policy import Policy
from .scoring import SCORING_KINDS, score

METRICS_CSV_HEADER = (
    "step,scoring_fn,avg_score,avg_p0,avg_p1,frac_conf_eff,"
    "n_sampled,n_valid,n_unique_valid,loss"
)


@dataclass(frozen=True)
class RLConfig:
    scoring: str = "rm_p1"
    sigma: float = 50.0
    batch_size: int = 32
    steps: int = 350
    significance: float = DEFAULT_SIGNIFICANCE
    learning_rate: float = 3e-4
    seed: int = 0

    def __post_init__(self):
        if self.scoring not in SCORING_KINDS:
            raise ValueError(f"scoring must be one of {SCORING_KINDS}")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError("batch_size and steps must be >= 1")
        if not 0 < self.significance < 1:
            raise ValueError("significance must be in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


def augmented_log_likelihood(log_p_prior: float, score_value: float, sigma: float) -> float:
    """Prior log-likelihood shifted by sigma times the reward."""
    if not 0.0 <= score_value <= 1.0:
        raise ValueError("score must lie in [0, 1]")
    return log_p_prior + sigma * score_value


def squared_loss(log_p_aug: float, log_p_agent: float) -> float:
    return (log_p_aug - log_p_agent) ** 2


@dataclass(frozen=True)
class SequenceEval:
    """Score and tracking quantities for one assembled sequence."""

    sequence: str
    p0: float
    p1: float
    p1_raw: float
    score: float
    hit: bool


class SequenceScorer:
    """Scores assembled sequences for one (kind, classifier, ACP, eps) binding.

    Results are memoized per sequence: a sequence's score depends only on the
    binding, never on step index or batch context.
    """

    def __init__(
        self,
        kind: str,
        classifier: BoostedTreeClassifier,
        acp: Acp,
        significance: float = DEFAULT_SIGNIFICANCE,
        vocab: Vocabulary = DEFAULT_VOCABULARY,
        score_fn: Callable[[PValuePair, float], float] | None = None,
    ):
        if kind not in SCORING_KINDS:
            raise ValueError(f"scoring kind must be one of {SCORING_KINDS}")
        self.kind = kind
        self.classifier = classifier
        self.acp = acp
        self.significance = significance
        self.vocab = vocab
        self._score_fn = score_fn
        self._cache: dict[str, SequenceEval] = {}

    def evaluate(self, sequences: list[str]) -> dict[str, SequenceEval]:
        fresh = sorted(set(s for s in sequences if s not in self._cache))
        if fresh:
            X = fingerprints(fresh, self.vocab)
            p0s, p1s = self.acp.p_values_batch(X)
            raws = self.classifier.predict_proba(X)
            for seq, p0, p1, raw in zip(fresh, p0s, p1s, raws):
                pv = PValuePair(float(p0), float(p1))
                if self._score_fn is not None:
                    s = self._score_fn(pv, float(raw))
                else:
                    s = score(self.kind, pv, float(raw), self.significance)
                self._cache[seq] = SequenceEval(
                    sequence=seq,
                    p0=pv.p0,
                    p1=pv.p1,
                    p1_raw=float(raw),
                    score=s,
                    hit=is_confident_positive(pv, self.significance),
                )
        return {s: self._cache[s] for s in sequences}


@dataclass
class StepMetrics:
    step: int
    avg_score: float
    avg_p0: float
    avg_p1: float
    frac_conf_eff: float
    n_sampled: int
    n_valid: int
    n_unique_valid: int
    loss: float


@dataclass
class RunRecord:
    """Full trajectory of one reinforcement run."""

    config: RLConfig
    query: QueryTemplate
    steps: list[StepMetrics] = field(default_factory=list)
    unique_valid: set[str] = field(default_factory=set)
    conf_eff_unique: set[str] = field(default_factory=set)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            f.write(METRICS_CSV_HEADER + "\n")
            writer = csv.writer(f)
            for m in self.steps:
                writer.writerow(
                    [
                        m.step,
                        self.config.scoring,
                        repr(m.avg_score),
                        repr(m.avg_p0),
                        repr(m.avg_p1),
                        repr(m.frac_conf_eff),
                        m.n_sampled,
                        m.n_valid,
                        m.n_unique_valid,
                        repr(m.loss),
                    ]
                )


def rl_step(
    agent: Policy,
    prior: Policy,
    query: QueryTemplate,
    scorer: SequenceScorer,
    config: RLConfig,
    rng: np.random.Generator,
    step_index: int,
) -> tuple[StepMetrics, list[str]]:
    """One sample-score-update cycle; returns metrics plus the step's valid sequences."""
    proposals = [agent.sample(query, rng) for _ in range(config.batch_size)]
    assembled = [assemble(query, p.fills, scorer.vocab) for p in proposals]
    valid_seqs = [s for s in assembled if s is not None]
    evals = scorer.evaluate(valid_seqs) if valid_seqs else {}

    total_grads = {name: np.zeros_like(arr) for name, arr in agent.p.items()}
    loss_total = 0.0
    for proposal, seq in zip(proposals, assembled):
        score_value = evals[seq].score if seq is not None else 0.0
        log_p_prior = -prior.nll(query, proposal.fills)
        nll_agent, grads = agent.nll_and_grad(query, proposal.fills)
        log_p_agent = -nll_agent
        log_p_aug = augmented_log_likelihood(log_p_prior, score_value, config.sigma)
        delta = log_p_aug - log_p_agent
        loss_total += delta * delta
        # d(mean squared loss)/dtheta = mean of 2*delta * d(NLL)/dtheta
        weight = 2.0 * delta / config.batch_size
        for name, g in grads.items():
            total_grads[name] += weight * g
    agent.sgd_step(total_grads, config.learning_rate)

    unique = list(dict.fromkeys(valid_seqs))
    if unique:
        rows = [evals[s] for s in unique]
        metrics = StepMetrics(
            step=step_index,
            avg_score=sum(r.score for r in rows) / len(rows),
            avg_p0=sum(r.p0 for r in rows) / len(rows),
            avg_p1=sum(r.p1 for r in rows) / len(rows),
            frac_conf_eff=sum(1 for r in rows if r.hit) / len(rows),
            n_sampled=config.batch_size,
            n_valid=len(valid_seqs),
            n_unique_valid=len(unique),
            loss=loss_total / config.batch_size,
        )
    else:
        metrics = StepMetrics(
            step=step_index,
            avg_score=0.0,
            avg_p0=0.0,
            avg_p1=0.0,
            frac_conf_eff=0.0,
            n_sampled=config.batch_size,
            n_valid=0,
            n_unique_valid=0,
            loss=loss_total / config.batch_size,
        )
    return metrics, valid_seqs


def run_rl(
    query: QueryTemplate,
    config: RLConfig,
    prior: Policy,
    scorer: SequenceScorer,
) -> RunRecord:
    """Run the full learning loop for one query; the prior stays frozen."""
    agent = prior.copy()
    rng = np.random.default_rng(config.seed)
    record = RunRecord(config=config, query=query)
    for step_index in range(1, config.steps + 1):
        metrics, valid_seqs = rl_step(agent, prior, query, scorer, config, rng, step_index)
        record.steps.append(metrics)
        for seq in valid_seqs:
            record.unique_valid.add(seq)
            if scorer.evaluate([seq])[seq].hit:
                record.conf_eff_unique.add(seq)
    return record
