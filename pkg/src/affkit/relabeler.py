"""Nearest-exemplar relabeling.

A human labels a handful of characteristic objects; every detection is then
reassigned the label of its most cosine-similar exemplar.  Only labels and
confidences change, boxes never do.  The new confidence is the winning
similarity clamped into [0, 1] so downstream planning can rank objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .detection import (
    DETECTIONS_FORMAT_VERSION,
    BoundingBox,
    DetectedObject,
    DetectionSet,
)
from .errors import (
    DimensionMismatch,
    EmptyStore,
    SchemaError,
    UnknownObjectId,
    ZeroNormVector,
)
from .jsonio import dump_json, dump_jsonl, iter_jsonl, load_json

_CLAMP_TOL = 1e-9


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """(a.b) / (|a||b|), clamped into [-1, 1] only to absorb round-off."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"vector shapes {a.shape} and {b.shape} differ")
    norm_a = math.sqrt(float(np.dot(a, a)))
    norm_b = math.sqrt(float(np.dot(b, b)))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroNormVector("cosine similarity of a zero-norm vector is undefined")
    value = float(np.dot(a, b)) / (norm_a * norm_b)
    if value > 1.0:
        if value > 1.0 + _CLAMP_TOL:
            raise SchemaError(f"cosine similarity {value} outside tolerance")
        value = 1.0
    elif value < -1.0:
        if value < -1.0 - _CLAMP_TOL:
            raise SchemaError(f"cosine similarity {value} outside tolerance")
        value = -1.0
    return value


@dataclass
class Exemplar:
    """One human-labeled (embedding, label) pair; the embedding is taken
    from the detection the human clicked, referenced by source_object_id."""

    embedding: np.ndarray
    label: str
    source_object_id: str

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise SchemaError("exemplar embedding must be a vector")
        if not np.any(emb):
            raise ZeroNormVector(
                f"exemplar {self.source_object_id!r} has a zero-norm embedding"
            )
        emb.flags.writeable = False
        self.embedding = emb

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Exemplar):
            return NotImplemented
        return (
            self.label == other.label
            and self.source_object_id == other.source_object_id
            and np.array_equal(self.embedding, other.embedding)
        )


@dataclass
class ExemplarStore:
    dimension: int
    exemplars: list[Exemplar]

    def __post_init__(self):
        for ex in self.exemplars:
            if ex.embedding.shape[0] != self.dimension:
                raise DimensionMismatch(
                    f"exemplar {ex.source_object_id!r} has dimension "
                    f"{ex.embedding.shape[0]}, store declares {self.dimension}"
                )
        self._matrix: np.ndarray | None = None

    def __len__(self):
        return len(self.exemplars)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExemplarStore):
            return NotImplemented
        return self.dimension == other.dimension and self.exemplars == other.exemplars

    def unit_matrix(self) -> np.ndarray:
        """Exemplar embeddings stacked and L2-normalized, cached."""
        if self._matrix is None:
            m = np.stack([ex.embedding for ex in self.exemplars])
            self._matrix = m / np.linalg.norm(m, axis=1, keepdims=True)
        return self._matrix


@dataclass
class RelabeledObject:
    """A detection after relabeling: identical box and id, new label and
    confidence.  raw_similarity keeps the unclamped winning cosine."""

    object_id: str
    frame_id: str
    box: BoundingBox
    original_label: str
    new_label: str
    new_confidence: float
    raw_similarity: float
    embedding: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        emb.flags.writeable = False
        self.embedding = emb

    # Downstream stages (spatial verification, evaluation) read detections
    # and relabeled objects through the same two attributes.
    @property
    def label(self) -> str:
        return self.new_label

    @property
    def confidence(self) -> float:
        return self.new_confidence

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RelabeledObject):
            return NotImplemented
        return (
            self.object_id == other.object_id
            and self.frame_id == other.frame_id
            and self.box == other.box
            and self.original_label == other.original_label
            and self.new_label == other.new_label
            and self.new_confidence == other.new_confidence
            and self.raw_similarity == other.raw_similarity
            and np.array_equal(self.embedding, other.embedding)
        )


def build_store(detections: DetectionSet, assignments: Mapping[str, str]) -> ExemplarStore:
    """Turn human label assignments into an exemplar store.

    Exemplars are ordered by ascending object id; each carries the assigned
    label and the referenced detection's embedding.
    """
    exemplars = []
    for object_id in sorted(assignments):
        obj = detections.get(object_id)
        if obj is None:
            raise UnknownObjectId(f"assignment references unknown object {object_id!r}")
        exemplars.append(
            Exemplar(
                embedding=obj.embedding,
                label=assignments[object_id],
                source_object_id=object_id,
            )
        )
    return ExemplarStore(dimension=detections.dimension, exemplars=exemplars)


def relabel(obj: DetectedObject, store: ExemplarStore) -> RelabeledObject:
    """Assign the label of the most similar exemplar (ties: lowest index)."""
    if len(store) == 0:
        raise EmptyStore("cannot relabel with an empty exemplar store")
    if obj.embedding.shape[0] != store.dimension:
        raise DimensionMismatch(
            f"object {obj.object_id!r} has dimension {obj.embedding.shape[0]}, "
            f"store has {store.dimension}"
        )
    norm = math.sqrt(float(np.dot(obj.embedding, obj.embedding)))
    if norm == 0.0:
        raise ZeroNormVector(f"object {obj.object_id!r} has a zero-norm embedding")
    sims = store.unit_matrix() @ (obj.embedding / norm)
    best = int(np.argmax(sims))  # argmax returns the first maximum
    raw = float(min(max(sims[best], -1.0), 1.0))
    return RelabeledObject(
        object_id=obj.object_id,
        frame_id=obj.frame_id,
        box=obj.box,
        original_label=obj.label,
        new_label=store.exemplars[best].label,
        new_confidence=min(max(raw, 0.0), 1.0),
        raw_similarity=raw,
        embedding=obj.embedding,
    )


def relabel_set(detections: DetectionSet, store: ExemplarStore) -> list[RelabeledObject]:
    """Order-preserving relabel of every detection."""
    if len(store) == 0:
        raise EmptyStore("cannot relabel with an empty exemplar store")
    return [relabel(obj, store) for obj in detections.objects]


# --- labels file (human assignments) ---

def load_assignments(path: str | Path) -> dict[str, str]:
    """Read a labels file {session_id, assignments: [{object_id, label}]}.

    Repeated object ids are folded last-write-wins, mirroring how repeated
    clicks on the canvas behave.
    """
    doc = load_json(path)
    if not isinstance(doc, dict) or not isinstance(doc.get("assignments"), list):
        raise SchemaError(f"{path}: labels file needs an 'assignments' array")
    return fold_assignments(doc["assignments"], context=str(path))


def fold_assignments(raw: Iterable[Any], context: str = "assignments") -> dict[str, str]:
    out: dict[str, str] = {}
    for entry in raw:
        try:
            object_id = str(entry["object_id"])
            label = str(entry["label"])
        except (KeyError, TypeError) as e:
            raise SchemaError(f"{context}: bad assignment entry: {e}") from e
        if not label:
            raise SchemaError(f"{context}: empty label for object {object_id!r}")
        out[object_id] = label
    return out


def save_assignments(assignments: Mapping[str, str], path: str | Path,
                     session_id: str = "") -> None:
    dump_json(
        {
            "session_id": session_id,
            "assignments": [
                {"object_id": k, "label": assignments[k]} for k in sorted(assignments)
            ],
        },
        path,
    )


# --- relabel output file (detections schema + original_label + raw_similarity) ---

def write_relabeled(
    relabeled: Sequence[RelabeledObject], dimension: int, path: str | Path
) -> None:
    labels: list[str] = []
    seen_lower: set[str] = set()
    for r in relabeled:
        for candidate in (r.new_label, r.original_label):
            if candidate.lower() not in seen_lower:
                seen_lower.add(candidate.lower())
                labels.append(candidate)
    header = {
        "format_version": DETECTIONS_FORMAT_VERSION,
        "dimension": dimension,
        "label_set": sorted(labels),
    }
    records: list[Any] = [header]
    for r in relabeled:
        records.append(
            {
                "object_id": r.object_id,
                "frame_id": r.frame_id,
                "box": r.box.as_list(),
                "label": r.new_label,
                "confidence": r.new_confidence,
                "embedding": [float(v) for v in r.embedding],
                "original_label": r.original_label,
                "raw_similarity": r.raw_similarity,
            }
        )
    dump_jsonl(records, path)


def read_relabeled(path: str | Path) -> list[RelabeledObject]:
    rows = iter_jsonl(path)
    try:
        header = next(rows)
    except StopIteration:
        raise SchemaError(f"{path}: missing header line") from None
    if not isinstance(header, dict) or header.get("format_version") != DETECTIONS_FORMAT_VERSION:
        raise SchemaError(f"{path}: bad or unsupported header")
    out = []
    for record in rows:
        try:
            out.append(
                RelabeledObject(
                    object_id=str(record["object_id"]),
                    frame_id=str(record["frame_id"]),
                    box=BoundingBox.from_list(record["box"]),
                    original_label=str(record["original_label"]),
                    new_label=str(record["label"]),
                    new_confidence=float(record["confidence"]),
                    raw_similarity=float(record["raw_similarity"]),
                    embedding=np.asarray(record["embedding"], dtype=np.float64),
                )
            )
        except KeyError as e:
            raise SchemaError(f"{path}: record missing {e}") from e
    return out
