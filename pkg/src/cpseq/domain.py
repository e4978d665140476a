"""Surrogate sequence domain: vocabulary, masked-fill templates, assembly,
ground-truth labels, hashed bigram fingerprints, and dataset/query generation.

Sequences are plain strings of single-character residue tokens. A query
template is a sequence with some positions replaced by the mask marker ``?``;
a proposal fills each masked slot with a short run of residue tokens
terminated by the slot-end symbol.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MASK = "?"
MAX_MASKED = 4
MAX_FILL_TOKENS = 4
FINGERPRINT_BUCKETS = 2048
TRAIN_FRACTION = 0.9

# lengths 6/7/10 weighted 40/30/30
DEFAULT_LENGTH_WEIGHTS = {6: 0.4, 7: 0.3, 10: 0.3}

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_UINT64_MASK = 0xFFFFFFFFFFFFFFFF


def _fnv1a_pair(i: int, j: int) -> int:
    """FNV-1a 64-bit hash of two small token ordinals, one byte each."""
    h = _FNV_OFFSET
    for b in (i, j):
        h ^= b
        h = (h * _FNV_PRIME) & _UINT64_MASK
    return h


@dataclass(frozen=True)
class Vocabulary:
    """Fixed symbol set for a run.

    ``residue_tokens`` are the emittable sequence symbols; ``slot_end_token``
    terminates a slot fill during generation and ``begin_token`` marks the
    start of the emission stream. The hydrophobic subset drives the
    ground-truth label rule.
    """

    residue_tokens: tuple[str, ...] = tuple("ACDEFGHIKLMNPQRSTVWY")
    hydrophobic_tokens: frozenset[str] = frozenset("AVILMFWC")
    slot_end_token: str = "$"
    begin_token: str = "^"

    def __post_init__(self):
        symbols = (*self.residue_tokens, self.slot_end_token, self.begin_token)
        if not self.residue_tokens:
            raise ValueError("residue_tokens must be nonempty")
        if any(len(s) != 1 for s in symbols):
            raise ValueError("all vocabulary symbols must be single characters")
        if len(set(symbols)) != len(symbols):
            raise ValueError("vocabulary symbols must be distinct")
        if MASK in symbols:
            raise ValueError(f"{MASK!r} is reserved for masked template positions")
        if not self.hydrophobic_tokens <= set(self.residue_tokens):
            raise ValueError("hydrophobic subset must be drawn from residue_tokens")

    @property
    def size(self) -> int:
        """Total emission alphabet size (residues + slot end + begin)."""
        return len(self.residue_tokens) + 2

    def emission_tokens(self) -> tuple[str, ...]:
        return (*self.residue_tokens, self.slot_end_token, self.begin_token)

    @cached_property
    def _residue_set(self) -> frozenset[str]:
        return frozenset(self.residue_tokens)

    @cached_property
    def _residue_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.residue_tokens)}

    @cached_property
    def _bucket_table(self) -> np.ndarray:
        """Precomputed fingerprint bucket for every ordered residue pair."""
        n = len(self.residue_tokens)
        table = np.empty((n, n), dtype=np.int64)
        for i in range(n):
            for j in range(n):
                table[i, j] = _fnv1a_pair(i, j) % FINGERPRINT_BUCKETS
        return table

    def is_sequence(self, seq: str) -> bool:
        return len(seq) >= 1 and all(t in self._residue_set for t in seq)

    def ordinals(self, seq: str) -> np.ndarray:
        idx = self._residue_index
        return np.array([idx[t] for t in seq], dtype=np.int64)


DEFAULT_VOCABULARY = Vocabulary()


@dataclass(frozen=True)
class QueryTemplate:
    """A token sequence with 1..4 positions masked out for generation."""

    positions: tuple[str, ...]

    def __post_init__(self):
        if any(len(p) != 1 for p in self.positions):
            raise ValueError("template entries must be single characters")
        m = self.masked_count
        if not 1 <= m <= MAX_MASKED:
            raise ValueError(f"masked_count must be in [1, {MAX_MASKED}], got {m}")
        if m >= len(self.positions):
            raise ValueError("masked_count must be smaller than template length")

    @property
    def length(self) -> int:
        return len(self.positions)

    @property
    def masked_count(self) -> int:
        return sum(1 for p in self.positions if p == MASK)

    @property
    def masked_positions(self) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.positions) if p == MASK)

    def to_text(self) -> str:
        return "".join(self.positions)

    @classmethod
    def from_text(cls, text: str) -> "QueryTemplate":
        return cls(tuple(text))


def validate_template(query: QueryTemplate, vocab: Vocabulary = DEFAULT_VOCABULARY) -> None:
    """Raise if any fixed template entry is not a residue token."""
    for p in query.positions:
        if p != MASK and p not in vocab._residue_set:
            raise ValueError(f"template entry {p!r} is not a residue token")


def assemble(
    query: QueryTemplate,
    fills: Sequence[str],
    vocab: Vocabulary = DEFAULT_VOCABULARY,
    max_fill_tokens: int = MAX_FILL_TOKENS,
) -> str | None:
    """Substitute slot fills into the template; ``None`` marks an invalid proposal.

    A fill is the raw emitted slot string: residue tokens optionally ending in
    the slot-end symbol (absent when generation hit the per-slot cap). Invalid
    outcomes: wrong fill count, empty content, content longer than
    ``max_fill_tokens``, or any non-residue symbol in the content.
    """
    if len(fills) != query.masked_count:
        return None
    residues = vocab._residue_set
    out: list[str] = []
    fill_iter = iter(fills)
    for entry in query.positions:
        if entry != MASK:
            out.append(entry)
            continue
        fill = next(fill_iter)
        content = fill[:-1] if fill.endswith(vocab.slot_end_token) else fill
        if not 1 <= len(content) <= max_fill_tokens:
            return None
        if any(t not in residues for t in content):
            return None
        out.append(content)
    return "".join(out)


def mask_out(
    seq: str, positions: Iterable[int], vocab: Vocabulary = DEFAULT_VOCABULARY
) -> tuple[QueryTemplate, tuple[str, ...]]:
    """Turn a full sequence into (template, ground-truth fills) by masking positions."""
    pos = sorted(set(positions))
    entries = list(seq)
    fills = []
    for p in pos:
        fills.append(seq[p] + vocab.slot_end_token)
        entries[p] = MASK
    return QueryTemplate(tuple(entries)), tuple(fills)


def oracle_label(seq: str, vocab: Vocabulary = DEFAULT_VOCABULARY) -> int:
    """Deterministic ground-truth label.

    Label 1 iff the hydrophobic fraction h lies in [0.4, 0.7] and the sequence
    is at most 10 tokens long. The window test uses exact integer arithmetic
    (0.4 <= h <=> 5*count >= 2*len, h <= 0.7 <=> 10*count <= 7*len).
    """
    n = len(seq)
    count = sum(1 for t in seq if t in vocab.hydrophobic_tokens)
    in_window = 5 * count >= 2 * n and 10 * count <= 7 * n
    return int(in_window and n <= 10)


def fingerprint(seq: str, vocab: Vocabulary = DEFAULT_VOCABULARY) -> np.ndarray:
    """Hashed bigram count fingerprint with 2048 buckets.

    Each adjacent token pair is hashed with 64-bit FNV-1a over the two residue
    ordinals and counted modulo the bucket count; a length-1 sequence maps to
    the all-zero vector.
    """
    fp = np.zeros(FINGERPRINT_BUCKETS, dtype=np.int64)
    if len(seq) >= 2:
        ords = vocab.ordinals(seq)
        buckets = vocab._bucket_table[ords[:-1], ords[1:]]
        np.add.at(fp, buckets, 1)
    return fp


def fingerprints(seqs: Sequence[str], vocab: Vocabulary = DEFAULT_VOCABULARY) -> np.ndarray:
    """Stack fingerprints for a batch of sequences into an (n, 2048) matrix."""
    out = np.zeros((len(seqs), FINGERPRINT_BUCKETS), dtype=np.int64)
    table = vocab._bucket_table
    for i, seq in enumerate(seqs):
        if len(seq) >= 2:
            ords = vocab.ordinals(seq)
            np.add.at(out[i], table[ords[:-1], ords[1:]], 1)
    return out


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Labeled sequences with train/test split tags."""

    sequences: tuple[str, ...]
    labels: np.ndarray  # int8, values in {0, 1}
    splits: tuple[str, ...]  # "train" | "test"

    def __post_init__(self):
        n = len(self.sequences)
        if len(self.labels) != n or len(self.splits) != n:
            raise ValueError("sequences, labels and splits must have equal length")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if any(s not in ("train", "test") for s in self.splits):
            raise ValueError("split tags must be 'train' or 'test'")
        seen: dict[str, int] = {}
        for seq, label in zip(self.sequences, self.labels):
            if seen.setdefault(seq, int(label)) != int(label):
                raise ValueError(f"conflicting labels for duplicate sequence {seq!r}")

    def __len__(self) -> int:
        return len(self.sequences)

    def subset(self, split: str) -> tuple[list[str], np.ndarray]:
        keep = [i for i, s in enumerate(self.splits) if s == split]
        seqs = [self.sequences[i] for i in keep]
        return seqs, self.labels[np.array(keep, dtype=np.intp)]


def make_dataset(
    n: int,
    length_weights: dict[int, float] | None = None,
    noise_rate: float = 0.05,
    seed: int = 0,
    vocab: Vocabulary = DEFAULT_VOCABULARY,
) -> LabeledDataset:
    """Generate n unique random sequences with noisy oracle labels and a 90/10 split.

    Label-flip noise applies only here, at dataset-generation time; the oracle
    itself stays clean for property checks.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= noise_rate < 1:
        raise ValueError("noise_rate must be in [0, 1)")
    weights = dict(length_weights or DEFAULT_LENGTH_WEIGHTS)
    lengths = sorted(weights)
    if any(weights[L] < 0 for L in lengths) or sum(weights.values()) <= 0:
        raise ValueError("length weights must be nonnegative with positive sum")
    capacity = sum(len(vocab.residue_tokens) ** L for L in lengths)
    if n > capacity:
        raise ValueError(f"n={n} exceeds the {capacity} distinct sequences available")

    rng = np.random.default_rng(seed)
    probs = np.array([weights[L] for L in lengths], dtype=float)
    probs /= probs.sum()
    residues = vocab.residue_tokens

    seqs: list[str] = []
    seen: set[str] = set()
    attempts = 0
    max_attempts = 1000 * n + 10_000
    while len(seqs) < n:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError("exhausted attempts drawing unique sequences")
        L = lengths[rng.choice(len(lengths), p=probs)]
        seq = "".join(residues[i] for i in rng.integers(0, len(residues), L))
        if seq not in seen:
            seen.add(seq)
            seqs.append(seq)

    labels = np.array([oracle_label(s, vocab) for s in seqs], dtype=np.int8)
    flips = rng.random(n) < noise_rate
    labels = np.where(flips, 1 - labels, labels).astype(np.int8)

    n_train = int(TRAIN_FRACTION * n)
    order = rng.permutation(n)
    split_tags = np.empty(n, dtype=object)
    split_tags[order[:n_train]] = "train"
    split_tags[order[n_train:]] = "test"
    return LabeledDataset(tuple(seqs), labels, tuple(split_tags))


def make_queries(
    n: int,
    lengths: Sequence[int] = (6, 7, 10),
    max_masked: int = MAX_MASKED,
    seed: int = 0,
    vocab: Vocabulary = DEFAULT_VOCABULARY,
) -> list[QueryTemplate]:
    """Draw n random templates with 1..max_masked masked positions each."""
    lengths = sorted(set(lengths))
    if not lengths or any(L < 6 or L > 12 for L in lengths):
        raise ValueError("query lengths must lie in [6, 12]")
    if not 1 <= max_masked <= MAX_MASKED:
        raise ValueError(f"max_masked must be in [1, {MAX_MASKED}]")
    rng = np.random.default_rng(seed)
    residues = vocab.residue_tokens
    queries = []
    for _ in range(n):
        L = lengths[rng.integers(0, len(lengths))]
        seq = "".join(residues[i] for i in rng.integers(0, len(residues), L))
        m = int(rng.integers(1, max_masked + 1))
        positions = rng.choice(L, size=m, replace=False)
        template, _ = mask_out(seq, positions.tolist(), vocab)
        queries.append(template)
    return queries


def write_dataset_csv(dataset: LabeledDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sequence", "label", "split"])
        for seq, label, split in zip(dataset.sequences, dataset.labels, dataset.splits):
            writer.writerow([seq, int(label), split])


def read_dataset_csv(path: str | Path, vocab: Vocabulary = DEFAULT_VOCABULARY) -> LabeledDataset:
    seqs: list[str] = []
    labels: list[int] = []
    splits: list[str] = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["sequence", "label", "split"]:
            raise ValueError(f"unexpected dataset header in {path}")
        for row in reader:
            seq = row["sequence"]
            if not vocab.is_sequence(seq):
                raise ValueError(f"non-residue symbol in sequence {seq!r}")
            seqs.append(seq)
            labels.append(int(row["label"]))
            splits.append(row["split"])
    return LabeledDataset(tuple(seqs), np.array(labels, dtype=np.int8), tuple(splits))


def write_queries_csv(queries: Sequence[QueryTemplate], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["template"])
        for q in queries:
            writer.writerow([q.to_text()])


def read_queries_csv(path: str | Path, vocab: Vocabulary = DEFAULT_VOCABULARY) -> list[QueryTemplate]:
    queries = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["template"]:
            raise ValueError(f"unexpected query header in {path}")
        for row in reader:
            template = QueryTemplate.from_text(row["template"])
            validate_template(template, vocab)
            queries.append(template)
    return queries
