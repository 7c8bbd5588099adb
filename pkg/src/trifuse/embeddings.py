"""Vector providers for the detector.

The detector consumes two kinds of vectors per record: one
``InternalStateSet`` (the query, direct-answer, and reverse-question state
vectors) and one ``EmbeddingSequence`` (one vector per reasoning unit).
They can come from files written by an external hidden-state extraction
script, from the deterministic hash-seeded stub below, or from the synthetic
benchmark generator. The detector never knows which.

File contracts (UTF-8, one JSON object per line):
  states file:  {"id", "layer_index", "d", "e_q": [...], "e_a_dir": [...], "e_q_rev": [...]}
  units file:   {"id", "d", "units": [[...], [...]]}
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, MissingId, NonFiniteVector
from .ioutil import iter_jsonl, write_jsonl
from .records import Record


@dataclass
class InternalStateSet:
    """The three sub-symbolic signal vectors for one record."""

    e_q: np.ndarray
    e_a_dir: np.ndarray
    e_q_rev: np.ndarray
    layer_index: int = 24

    def check(self, record_id: str = "?") -> "InternalStateSet":
        d = len(self.e_q)
        for name, vec in (("e_q", self.e_q), ("e_a_dir", self.e_a_dir), ("e_q_rev", self.e_q_rev)):
            if len(vec) != d:
                raise DimensionMismatch(d, len(vec), f"{name} for id {record_id!r}")
            if not np.isfinite(vec).all():
                raise NonFiniteVector(record_id)
        return self

    @property
    def dim(self) -> int:
        return int(self.e_q.shape[0])

    def stacked(self) -> np.ndarray:
        """Rows [E_Q; E_A_dir; E_Q_rev], shape (3, d)."""
        return np.stack([self.e_q, self.e_a_dir, self.e_q_rev])


@dataclass
class EmbeddingSequence:
    """Per-unit embeddings aligned 1:1 with the trajectory units."""

    vectors: np.ndarray  # (m, d)

    def check(self, record_id: str = "?") -> "EmbeddingSequence":
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise DimensionMismatch(1, 0, f"unit embeddings for id {record_id!r}")
        if not np.isfinite(self.vectors).all():
            raise NonFiniteVector(record_id)
        return self

    @property
    def length(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


# --- deterministic stub embedder -----------------------------------------------

def stub_embed(text: str, d: int, seed: int) -> np.ndarray:
    """Reproducible unit-norm vector for a text. No semantic structure.

    Seeds a counter-based Philox generator with a 64-bit hash of
    (seed, text), draws d standard normals, and normalises to unit L2 norm.
    """
    if d < 1:
        raise DimensionMismatch(1, d, "embedding dim")
    digest = hashlib.blake2b(
        seed.to_bytes(8, "little", signed=False) + text.encode("utf-8"),
        digest_size=8,
    ).digest()
    key = int.from_bytes(digest, "little")
    rng = np.random.Generator(np.random.Philox(key=key))
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def stub_states(record: Record, d: int, seed: int, layer_index: int = 24) -> InternalStateSet:
    return InternalStateSet(
        e_q=stub_embed(record.question, d, seed),
        e_a_dir=stub_embed(record.answer_direct, d, seed),
        e_q_rev=stub_embed(record.question_reverse, d, seed),
        layer_index=layer_index,
    )


def stub_unit_embeddings(units: Sequence[str], d: int, seed: int) -> EmbeddingSequence:
    return EmbeddingSequence(np.stack([stub_embed(u, d, seed) for u in units]))


# --- file providers --------------------------------------------------------------

def save_states(states: Mapping[str, InternalStateSet], path: str | Path) -> None:
    write_jsonl(
        path,
        (
            {
                "id": record_id,
                "layer_index": s.layer_index,
                "d": s.dim,
                "e_q": s.e_q.tolist(),
                "e_a_dir": s.e_a_dir.tolist(),
                "e_q_rev": s.e_q_rev.tolist(),
            }
            for record_id, s in states.items()
        ),
    )


def load_states(
    path: str | Path, ids: Iterable[str], expected_dim: int | None = None
) -> dict[str, InternalStateSet]:
    """Load the requested ids; every id must resolve and validate."""
    available: dict[str, InternalStateSet] = {}
    for _, obj in iter_jsonl(path):
        declared = int(obj["d"])
        if expected_dim is not None and declared != expected_dim:
            raise DimensionMismatch(expected_dim, declared, f"states for id {obj['id']!r}")
        states = InternalStateSet(
            e_q=np.asarray(obj["e_q"], dtype=np.float64),
            e_a_dir=np.asarray(obj["e_a_dir"], dtype=np.float64),
            e_q_rev=np.asarray(obj["e_q_rev"], dtype=np.float64),
            layer_index=int(obj.get("layer_index", 0)),
        ).check(obj["id"])
        if states.dim != declared:
            raise DimensionMismatch(declared, states.dim, f"states for id {obj['id']!r}")
        available[obj["id"]] = states
    out = {}
    for record_id in ids:
        if record_id not in available:
            raise MissingId(record_id)
        out[record_id] = available[record_id]
    return out


def save_unit_embeddings(units: Mapping[str, EmbeddingSequence], path: str | Path) -> None:
    write_jsonl(
        path,
        (
            {"id": record_id, "d": seq.dim, "units": seq.vectors.tolist()}
            for record_id, seq in units.items()
        ),
    )


def load_unit_embeddings(
    path: str | Path, ids: Iterable[str], expected_dim: int | None = None
) -> dict[str, EmbeddingSequence]:
    available: dict[str, EmbeddingSequence] = {}
    for _, obj in iter_jsonl(path):
        declared = int(obj["d"])
        if expected_dim is not None and declared != expected_dim:
            raise DimensionMismatch(expected_dim, declared, f"units for id {obj['id']!r}")
        seq = EmbeddingSequence(np.asarray(obj["units"], dtype=np.float64)).check(obj["id"])
        if seq.dim != declared:
            raise DimensionMismatch(declared, seq.dim, f"units for id {obj['id']!r}")
        available[obj["id"]] = seq
    out = {}
    for record_id in ids:
        if record_id not in available:
            raise MissingId(record_id)
        out[record_id] = available[record_id]
    return out


# --- synthetic benchmark ----------------------------------------------------------

SYNTH_UNITS_PER_RECORD = 5
SYNTH_PLANTED_UNIT = 2  # 0-based index of the contradiction unit (the third unit)


def _unit_vector(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def synth_dataset(
    n: int, d: int, seed: int, separation: float
) -> tuple[list[Record], dict[str, InternalStateSet], dict[str, EmbeddingSequence]]:
    """Labelled-by-construction benchmark corpus.

    Positive (label 1) instances differ from negatives in two ways, both
    controlled by ``separation`` so that separation 0 leaves the classes
    statistically indistinguishable:

    * the direct-answer state is displaced by ``separation`` along one fixed
      random direction, and
    * the third reasoning-unit embedding is blended toward the negated
      direct-answer direction (a planted contradiction) with weight
      min(2 * separation, 1): the replacement is complete from
      separation 0.5 upward and fades to nothing at 0.

    Splits are stratified per class: 60% train, 20% val, 20% test.
    """
    if n < 2 or n % 2 != 0:
        raise ValueError(f"n must be even and >= 2, got {n}")
    if separation < 0:
        raise ValueError(f"separation must be >= 0, got {separation}")

    rng = np.random.default_rng(seed)
    displacement_dir = _unit_vector(rng, d)

    per_class = n // 2
    n_train = max(int(round(per_class * 0.6)), 1)
    n_val = max(int(round(per_class * 0.2)), 0)

    records: list[Record] = []
    states: dict[str, InternalStateSet] = {}
    unit_seqs: dict[str, EmbeddingSequence] = {}
    class_counts = [0, 0]
    m = SYNTH_UNITS_PER_RECORD

    for i in range(n):
        label = i % 2
        rank = class_counts[label]
        class_counts[label] += 1
        if rank < n_train:
            split = "train"
        elif rank < n_train + n_val:
            split = "val"
        else:
            split = "test"

        record_id = f"synth-{i:04d}"
        e_q = _unit_vector(rng, d)
        e_a_dir = _unit_vector(rng, d)
        e_q_rev = _unit_vector(rng, d)
        units = np.stack([_unit_vector(rng, d) for _ in range(m)])
        if label == 1:
            e_a_dir = e_a_dir + separation * displacement_dir
            weight = min(2.0 * separation, 1.0)
            contradiction = (1.0 - weight) * units[SYNTH_PLANTED_UNIT] - weight * (
                e_a_dir / np.linalg.norm(e_a_dir)
            )
            units[SYNTH_PLANTED_UNIT] = contradiction / np.linalg.norm(contradiction)

        cot = " ".join(f"Step {j + 1} reviews claim {i} of the synthetic corpus." for j in range(m))
        records.append(
            Record(
                id=record_id,
                question=f"What is the value of synthetic fact {i}?",
                answer_direct=f"The value of synthetic fact {i} is {i * 7}.",
                answer_cot=cot,
                question_reverse=f"Which synthetic fact has the value {i * 7}?",
                label=label,
                label_status="confirmed",
                split=split,
            ).check()
        )
        states[record_id] = InternalStateSet(e_q=e_q, e_a_dir=e_a_dir, e_q_rev=e_q_rev).check(record_id)
        unit_seqs[record_id] = EmbeddingSequence(units).check(record_id)

    return records, states, unit_seqs
