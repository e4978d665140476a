"""Campaign orchestration: multi-query runs across scoring kinds, hit
counting, signed-rank comparisons against the raw-model baseline, convergence
detection, and length-stratified summaries.

Outputs are plain CSV files. Every run writes a per-step metrics CSV plus a
small JSON sidecar carrying the cumulative unique counts, so the report
command can rebuild every summary from the run outputs alone.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .boosting import BoostedTreeClassifier, ClassifierConfig
from .conformal import Acp, build_acp, load_acp
from .domain import (
    DEFAULT_VOCABULARY,
    Vocabulary,
    fingerprints,
    read_dataset_csv,
    read_queries_csv,
)
from .policy import Policy, build_pretrain_corpus, pretrain_prior
from .rl import RLConfig, RunRecord, SequenceScorer, StepMetrics, run_rl
from .scoring import SCORING_KINDS

SUMMARY_CSV_HEADER = "query_id,length,scoring_fn,n_unique_valid,n_conf_eff,steps_to_half,status"
WILCOXON_CSV_HEADER = "metric,scoring_fn,n_pairs,statistic,p_value,status"
LENGTH_CSV_HEADER = (
    "length,scoring_fn,n_runs,n_ok,median_unique_valid,median_conf_eff,"
    "n_reached_half,median_steps_to_half"
)
BASELINE_KIND = "rm_p1"
_KIND_CODE = {kind: i for i, kind in enumerate(SCORING_KINDS)}


# -- signed-rank test ---------------------------------------------------------


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _count_sums_at_most(double_ranks: Iterable[int], limit: int) -> int:
    """Number of sign assignments whose positive-rank sum (doubled) is <= limit."""
    double_ranks = [int(r) for r in double_ranks]
    total = sum(double_ranks)
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in double_ranks:
        counts[r:] = counts[r:] + counts[: total - r + 1]
    return int(counts[: limit + 1].sum())


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired signed-rank test; returns (W, p).

    Zero differences are dropped and ties mid-ranked. For n <= 20 the p-value
    is exact over all 2^n sign assignments of the observed ranks; beyond that
    a normal approximation with tie correction is used. W is min(W+, W-).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("samples must be paired with equal length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("all paired differences are zero")
    if n < 5:
        raise ValueError("need at least 5 nonzero paired differences")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= 20:
        double_ranks = np.rint(2.0 * ranks).astype(np.int64)
        limit = int(round(2.0 * w))
        p = min(1.0, 2.0 * _count_sums_at_most(double_ranks, limit) / 2.0**n)
    else:
        mu = n * (n + 1) / 4.0
        sigma2 = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        sigma2 -= float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        z = (w_plus - mu) / math.sqrt(sigma2)
        p = math.erfc(abs(z) / math.sqrt(2.0))
    return w, p


# -- convergence and stratification -------------------------------------------


def steps_to_threshold(
    record: RunRecord | Sequence[StepMetrics], threshold: float = 0.5
) -> int | None:
    """First step whose confident-hit fraction reaches the threshold, if any.

    Only steps with at least one valid sample count, so a zero threshold finds
    the first valid batch rather than trivially returning the first step.
    """
    steps = record.steps if isinstance(record, RunRecord) else record
    for m in steps:
        if m.n_valid > 0 and m.frac_conf_eff >= threshold:
            return m.step
    return None


@dataclass(frozen=True)
class RunSummary:
    query_id: int
    length: int
    scoring_fn: str
    n_unique_valid: int | None
    n_conf_eff: int | None
    steps_to_half: int | None
    status: str  # "ok" | "error"


@dataclass(frozen=True)
class LengthSummary:
    length: int
    scoring_fn: str
    n_runs: int
    n_ok: int
    median_unique_valid: float | None
    median_conf_eff: float | None
    n_reached_half: int
    median_steps_to_half: float | None


def stratify_by_length(rows: Sequence[RunSummary]) -> list[LengthSummary]:
    """Group run summaries by query length (and kind), medians over ok runs."""
    groups: dict[tuple[int, str], list[RunSummary]] = {}
    for row in rows:
        groups.setdefault((row.length, row.scoring_fn), []).append(row)
    out = []
    for (length, kind), members in sorted(groups.items()):
        ok = [r for r in members if r.status == "ok"]
        reached = [r.steps_to_half for r in ok if r.steps_to_half is not None]
        out.append(
            LengthSummary(
                length=length,
                scoring_fn=kind,
                n_runs=len(members),
                n_ok=len(ok),
                median_unique_valid=statistics.median(r.n_unique_valid for r in ok) if ok else None,
                median_conf_eff=statistics.median(r.n_conf_eff for r in ok) if ok else None,
                n_reached_half=len(reached),
                median_steps_to_half=statistics.median(reached) if reached else None,
            )
        )
    return out


@dataclass(frozen=True)
class WilcoxonRow:
    metric: str
    scoring_fn: str
    n_pairs: int
    statistic: float | None
    p_value: float | None
    status: str  # "ok" | "degenerate" | "no_baseline"


def wilcoxon_vs_baseline(rows: Sequence[RunSummary]) -> list[WilcoxonRow]:
    """Pair each CP scoring kind against the raw-model baseline per query."""
    by_kind: dict[str, dict[int, RunSummary]] = {}
    for row in rows:
        if row.status == "ok":
            by_kind.setdefault(row.scoring_fn, {})[row.query_id] = row
    kinds = sorted(set(r.scoring_fn for r in rows) - {BASELINE_KIND}, key=_KIND_CODE.get)
    baseline = by_kind.get(BASELINE_KIND, {})
    out = []
    for metric in ("n_unique_valid", "n_conf_eff"):
        for kind in kinds:
            paired_ids = sorted(set(baseline) & set(by_kind.get(kind, {})))
            a = [getattr(by_kind[kind][qid], metric) for qid in paired_ids]
            b = [getattr(baseline[qid], metric) for qid in paired_ids]
            if not baseline:
                out.append(WilcoxonRow(metric, kind, 0, None, None, "no_baseline"))
                continue
            try:
                stat, p = wilcoxon_signed_rank(a, b)
                out.append(WilcoxonRow(metric, kind, len(paired_ids), stat, p, "ok"))
            except ValueError:
                out.append(WilcoxonRow(metric, kind, len(paired_ids), None, None, "degenerate"))
    return out


# -- campaign configuration ----------------------------------------------------


@dataclass(frozen=True)
class CampaignConfig:
    dataset: Path
    queries: Path
    scoring: tuple[str, ...] = SCORING_KINDS
    steps: int = 350
    batch_size: int = 32
    sigma: float = 50.0
    significance: float = 0.2
    rl_learning_rate: float = 3e-4
    seed: int = 0
    prior: Path | None = None
    classifier: Path | None = None
    acp: Path | None = None
    acp_k: int = 10
    clf_rounds: int = 200
    clf_learning_rate: float = 0.3
    clf_depth: int = 2
    clf_subsample: float = 1.0
    pretrain_epochs: int = 20
    pretrain_learning_rate: float = 1e-3
    pretrain_corpus_size: int = 1500

    def __post_init__(self):
        if not self.scoring:
            raise ValueError("need at least one scoring kind")
        for kind in self.scoring:
            if kind not in SCORING_KINDS:
                raise ValueError(f"unknown scoring kind {kind!r}")


_INT_KEYS = {
    "steps", "batch_size", "seed", "acp_k", "clf_rounds", "clf_depth",
    "pretrain_epochs", "pretrain_corpus_size",
}
_FLOAT_KEYS = {
    "sigma", "significance", "rl_learning_rate", "clf_learning_rate",
    "clf_subsample", "pretrain_learning_rate",
}
_PATH_KEYS = {"dataset", "queries", "prior", "classifier", "acp"}


def parse_campaign_config(path: str | Path) -> CampaignConfig:
    """Parse the flat ``key = value`` campaign config file.

    Blank lines and ``#`` comments are ignored; relative paths resolve against
    the config file's directory.
    """
    path = Path(path)
    base = path.parent
    values: dict[str, object] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _PATH_KEYS:
            values[key] = base / value
        elif key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key == "scoring":
            values[key] = tuple(k.strip() for k in value.split(",") if k.strip())
        else:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    for required in ("dataset", "queries"):
        if required not in values:
            raise ValueError(f"config {path} is missing required key {required!r}")
    return CampaignConfig(**values)  # type: ignore[arg-type]


# -- campaign execution ----------------------------------------------------------


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def run_seed_for(base_seed: int, query_id: int, kind: str) -> int:
    return _derived_seed(base_seed, query_id, _KIND_CODE[kind])


@dataclass
class CampaignArtifacts:
    prior: Policy
    classifier: BoostedTreeClassifier
    acp: Acp


def build_campaign_artifacts(
    config: CampaignConfig, vocab: Vocabulary = DEFAULT_VOCABULARY
) -> CampaignArtifacts:
    """Load the prior/classifier/ACP artifacts, building any that lack a path."""
    dataset = read_dataset_csv(config.dataset, vocab)
    queries = read_queries_csv(config.queries, vocab)
    train_seqs, train_labels = dataset.subset("train")
    X_train = None

    if config.classifier is not None:
        classifier = BoostedTreeClassifier.load(config.classifier)
    else:
        X_train = fingerprints(train_seqs, vocab)
        clf_config = ClassifierConfig(
            n_rounds=config.clf_rounds,
            learning_rate=config.clf_learning_rate,
            max_depth=config.clf_depth,
            subsample=config.clf_subsample,
            seed=_derived_seed(config.seed, 9001),
        )
        classifier = BoostedTreeClassifier(clf_config).fit(X_train, train_labels)

    if config.acp is not None:
        acp = load_acp(config.acp)
    else:
        if X_train is None:
            X_train = fingerprints(train_seqs, vocab)
        clf_config = ClassifierConfig(
            n_rounds=config.clf_rounds,
            learning_rate=config.clf_learning_rate,
            max_depth=config.clf_depth,
            subsample=config.clf_subsample,
        )
        acp = build_acp(
            X_train, train_labels, k=config.acp_k, config=clf_config,
            seed=_derived_seed(config.seed, 9002),
        )

    if config.prior is not None:
        prior = Policy.load(config.prior)
    else:
        corpus_seqs = train_seqs[: config.pretrain_corpus_size]
        corpus = build_pretrain_corpus(corpus_seqs, seed=_derived_seed(config.seed, 9003), vocab=vocab)
        result = pretrain_prior(
            corpus,
            epochs=config.pretrain_epochs,
            learning_rate=config.pretrain_learning_rate,
            seed=_derived_seed(config.seed, 9004),
            vocab=vocab,
            gate_queries=queries,
            gate_samples=300,
        )
        prior = result.policy
    return CampaignArtifacts(prior=prior, classifier=classifier, acp=acp)


@dataclass
class CampaignResult:
    rows: list[RunSummary]
    wilcoxon: list[WilcoxonRow]
    out_dir: Path


def _run_name(query_id: int, kind: str) -> str:
    return f"q{query_id:03d}_{kind}"


def run_campaign(
    config: CampaignConfig,
    out_dir: str | Path,
    vocab: Vocabulary = DEFAULT_VOCABULARY,
    artifacts: CampaignArtifacts | None = None,
) -> CampaignResult:
    """Execute every (query x scoring kind) run and write all output files.

    A failing run is recorded with status ``error`` and excluded from the
    aggregates; it never aborts the campaign.
    """
    out = Path(out_dir)
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    queries = read_queries_csv(config.queries, vocab)
    if not queries:
        raise ValueError("query file contains no templates")
    if artifacts is None:
        artifacts = build_campaign_artifacts(config, vocab)

    scorers = {
        kind: SequenceScorer(
            kind, artifacts.classifier, artifacts.acp, config.significance, vocab
        )
        for kind in config.scoring
    }
    rows: list[RunSummary] = []
    for query_id, query in enumerate(queries):
        for kind in config.scoring:
            name = _run_name(query_id, kind)
            rl_config = RLConfig(
                scoring=kind,
                sigma=config.sigma,
                batch_size=config.batch_size,
                steps=config.steps,
                significance=config.significance,
                learning_rate=config.rl_learning_rate,
                seed=run_seed_for(config.seed, query_id, kind),
            )
            sidecar: dict[str, object] = {
                "query_id": query_id,
                "length": query.length,
                "scoring_fn": kind,
            }
            try:
                record = run_rl(query, rl_config, artifacts.prior, scorers[kind])
                record.write_csv(runs_dir / f"{name}.csv")
                row = RunSummary(
                    query_id=query_id,
                    length=query.length,
                    scoring_fn=kind,
                    n_unique_valid=len(record.unique_valid),
                    n_conf_eff=len(record.conf_eff_unique),
                    steps_to_half=steps_to_threshold(record),
                    status="ok",
                )
                sidecar.update(
                    status="ok",
                    n_unique_valid=row.n_unique_valid,
                    n_conf_eff=row.n_conf_eff,
                )
            except Exception as err:  # per-run isolation
                row = RunSummary(query_id, query.length, kind, None, None, None, "error")
                sidecar.update(status="error", error=f"{type(err).__name__}: {err}")
            (runs_dir / f"{name}.json").write_text(json.dumps(sidecar))
            rows.append(row)

    wilcoxon_rows = wilcoxon_vs_baseline(rows)
    write_summary_csv(rows, out / "summary.csv")
    write_wilcoxon_csv(wilcoxon_rows, out / "wilcoxon.csv")
    write_length_summary_csv(stratify_by_length(rows), out / "summary_by_length.csv")
    return CampaignResult(rows=rows, wilcoxon=wilcoxon_rows, out_dir=out)


# -- file output and report -----------------------------------------------------


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_summary_csv(rows: Sequence[RunSummary], path: str | Path) -> None:
    lines = [SUMMARY_CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [
                    str(r.query_id),
                    str(r.length),
                    r.scoring_fn,
                    _cell(r.n_unique_valid),
                    _cell(r.n_conf_eff),
                    _cell(r.steps_to_half),
                    r.status,
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_wilcoxon_csv(rows: Sequence[WilcoxonRow], path: str | Path) -> None:
    lines = [WILCOXON_CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [r.metric, r.scoring_fn, str(r.n_pairs), _cell(r.statistic), _cell(r.p_value), r.status]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_length_summary_csv(rows: Sequence[LengthSummary], path: str | Path) -> None:
    lines = [LENGTH_CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [
                    str(r.length),
                    r.scoring_fn,
                    str(r.n_runs),
                    str(r.n_ok),
                    _cell(r.median_unique_valid),
                    _cell(r.median_conf_eff),
                    str(r.n_reached_half),
                    _cell(r.median_steps_to_half),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _read_run_steps(path: Path) -> list[StepMetrics]:
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        for line in f:
            parts = line.rstrip("\n").split(",")
            rows.append(
                StepMetrics(
                    step=int(parts[0]),
                    avg_score=float(parts[2]),
                    avg_p0=float(parts[3]),
                    avg_p1=float(parts[4]),
                    frac_conf_eff=float(parts[5]),
                    n_sampled=int(parts[6]),
                    n_valid=int(parts[7]),
                    n_unique_valid=int(parts[8]),
                    loss=float(parts[9]),
                )
            )
    return rows


def regenerate_report(runs_dir: str | Path, out_dir: str | Path) -> CampaignResult:
    """Rebuild summary/wilcoxon/length CSVs purely from per-run outputs.

    Convergence steps are recomputed from the per-step CSVs; the cumulative
    unique counts come from each run's JSON sidecar.
    """
    runs = Path(runs_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sidecars = sorted(runs.glob("q*_*.json"))
    if not sidecars:
        raise FileNotFoundError(f"no run sidecars found under {runs}")
    rows = []
    for sidecar_path in sidecars:
        meta = json.loads(sidecar_path.read_text())
        if meta["status"] == "ok":
            steps = _read_run_steps(sidecar_path.with_suffix(".csv"))
            row = RunSummary(
                query_id=int(meta["query_id"]),
                length=int(meta["length"]),
                scoring_fn=meta["scoring_fn"],
                n_unique_valid=int(meta["n_unique_valid"]),
                n_conf_eff=int(meta["n_conf_eff"]),
                steps_to_half=steps_to_threshold(steps),
                status="ok",
            )
        else:
            row = RunSummary(
                int(meta["query_id"]), int(meta["length"]), meta["scoring_fn"],
                None, None, None, "error",
            )
        rows.append(row)
    rows.sort(key=lambda r: (r.query_id, _KIND_CODE[r.scoring_fn]))
    wilcoxon_rows = wilcoxon_vs_baseline(rows)
    write_summary_csv(rows, out / "summary.csv")
    write_wilcoxon_csv(wilcoxon_rows, out / "wilcoxon.csv")
    write_length_summary_csv(stratify_by_length(rows), out / "summary_by_length.csv")
    return CampaignResult(rows=rows, wilcoxon=wilcoxon_rows, out_dir=out)
