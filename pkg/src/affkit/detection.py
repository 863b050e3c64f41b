"""Detections, frames, prompt strings, file formats, and synthetic data.

The detector itself is out of scope: detections enter the pipeline either
from a line-delimited JSON dump (one header line, then one record per
object) or from the deterministic synthetic generator, which fabricates a
door-scene dataset with controllable embedding noise, label corruption, and
injected off-door false positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyLabelSet,
    InvalidSpec,
    IoError,
    MalformedPrompt,
    SchemaError,
    ZeroNormEmbedding,
)
from .jsonio import dump_json, dump_jsonl, iter_jsonl, load_json

DETECTIONS_FORMAT_VERSION = 1
PROMPT_SEPARATOR = ". "


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in image pixels, origin at the top-left corner."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise SchemaError(f"box coordinate {v} is not finite")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise SchemaError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center_x(self) -> float:
        return (self.x_min + self.x_max) / 2.0

    @property
    def center_y(self) -> float:
        return (self.y_min + self.y_max) / 2.0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @staticmethod
    def from_list(values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise SchemaError(f"box must have 4 coordinates, got {len(values)}")
        return BoundingBox(*(float(v) for v in values))


@dataclass(frozen=True)
class LabelSet:
    """Ordered, duplicate-free object labels used to prompt the detector.

    Labels may not contain the prompt separator ``". "`` so that a prompt
    string always parses back to the labels it was built from.
    """

    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels:
            raise EmptyLabelSet("label set is empty")
        seen = set()
        for label in self.labels:
            if not label:
                raise SchemaError("label set contains an empty label")
            if PROMPT_SEPARATOR in label:
                raise SchemaError(f"label {label!r} contains the prompt separator")
            key = label.lower()
            if key in seen:
                raise SchemaError(f"duplicate label {label!r}")
            seen.add(key)

    def __iter__(self):
        return iter(self.labels)

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.labels


def build_prompt(labels: LabelSet | Sequence[str]) -> str:
    """Join labels into the detector prompt string ``<l0>. <l1>. ... <ln>``."""
    if not isinstance(labels, LabelSet):
        labels = LabelSet(tuple(labels))
    return PROMPT_SEPARATOR.join(labels.labels)


def parse_prompt(text: str) -> LabelSet:
    """Inverse of build_prompt; rejects empty input."""
    if not text:
        raise MalformedPrompt("empty prompt")
    parts = text.split(PROMPT_SEPARATOR)
    if any(not p for p in parts):
        raise MalformedPrompt(f"prompt {text!r} contains an empty label")
    try:
        return LabelSet(tuple(parts))
    except (SchemaError, EmptyLabelSet) as e:
        raise MalformedPrompt(str(e)) from e


@dataclass
class DetectedObject:
    """One detection: a box, a label, a confidence, and the visual-encoder
    embedding used for relabeling.  Flows unchanged through the pipeline
    except for the label/confidence rewrite."""

    object_id: str
    frame_id: str
    box: BoundingBox
    label: str
    confidence: float
    embedding: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise SchemaError(
                f"object {self.object_id!r}: confidence {self.confidence} outside [0, 1]"
            )
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise SchemaError(f"object {self.object_id!r}: embedding must be a vector")
        if not np.all(np.isfinite(emb)):
            raise SchemaError(f"object {self.object_id!r}: embedding has non-finite values")
        if not np.any(emb):
            raise ZeroNormEmbedding(f"object {self.object_id!r} has a zero-norm embedding")
        emb.flags.writeable = False
        self.embedding = emb

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DetectedObject):
            return NotImplemented
        return (
            self.object_id == other.object_id
            and self.frame_id == other.frame_id
            and self.box == other.box
            and self.label == other.label
            and self.confidence == other.confidence
            and np.array_equal(self.embedding, other.embedding)
        )


@dataclass
class DetectionSet:
    """All detections of one session plus the label set they were prompted
    with.  Immutable after construction; labels outside the label set are
    rejected at ingest (relabeled outputs extend the set as needed)."""

    dimension: int
    objects: list[DetectedObject]
    label_set: LabelSet

    def __post_init__(self):
        seen: set[str] = set()
        for obj in self.objects:
            if obj.object_id in seen:
                raise SchemaError(f"duplicate object_id {obj.object_id!r}")
            seen.add(obj.object_id)
            if obj.embedding.shape[0] != self.dimension:
                raise DimensionMismatch(
                    f"object {obj.object_id!r} has dimension {obj.embedding.shape[0]}, "
                    f"expected {self.dimension}"
                )
        self._by_id = {obj.object_id: obj for obj in self.objects}

    def __len__(self):
        return len(self.objects)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DetectionSet):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.label_set == other.label_set
            and self.objects == other.objects
        )

    def get(self, object_id: str) -> DetectedObject | None:
        return self._by_id.get(object_id)

    def embedding_matrix(self) -> np.ndarray:
        return np.stack([obj.embedding for obj in self.objects]) if self.objects else \
            np.zeros((0, self.dimension))

    def object_ids(self) -> list[str]:
        return [obj.object_id for obj in self.objects]


@dataclass(frozen=True)
class GroundTruthObject:
    frame_id: str
    box: BoundingBox
    label: str


# --- detections file (line-delimited JSON) ---

def _object_record(obj: DetectedObject) -> dict[str, Any]:
    return {
        "object_id": obj.object_id,
        "frame_id": obj.frame_id,
        "box": obj.box.as_list(),
        "label": obj.label,
        "confidence": obj.confidence,
        "embedding": [float(v) for v in obj.embedding],
    }


def write_detections(detections: DetectionSet, path: str | Path) -> None:
    header = {
        "format_version": DETECTIONS_FORMAT_VERSION,
        "dimension": detections.dimension,
        "label_set": list(detections.label_set),
    }
    dump_jsonl([header] + [_object_record(o) for o in detections.objects], path)


def ingest_detections(path: str | Path) -> DetectionSet:
    """Materialize a detections dump, enforcing the header dimension and the
    header label set on every record."""
    rows = iter_jsonl(path)
    try:
        header = next(rows)
    except StopIteration:
        raise SchemaError(f"{path}: missing header line") from None

    if not isinstance(header, dict) or "format_version" not in header:
        raise SchemaError(f"{path}: first line must be the header")
    if header["format_version"] != DETECTIONS_FORMAT_VERSION:
        raise SchemaError(
            f"{path}: unsupported format_version {header['format_version']!r}"
        )
    try:
        dimension = int(header["dimension"])
        label_set = LabelSet(tuple(str(v) for v in header["label_set"]))
    except (KeyError, TypeError) as e:
        raise SchemaError(f"{path}: bad header: {e}") from e

    objects = []
    allowed = {label for label in label_set}
    for record in rows:
        if not isinstance(record, dict):
            raise SchemaError(f"{path}: record is not an object")
        try:
            obj = DetectedObject(
                object_id=str(record["object_id"]),
                frame_id=str(record["frame_id"]),
                box=BoundingBox.from_list(record["box"]),
                label=str(record["label"]),
                confidence=float(record["confidence"]),
                embedding=np.asarray(record["embedding"], dtype=np.float64),
            )
        except KeyError as e:
            raise SchemaError(f"{path}: record missing {e}") from e
        if obj.embedding.shape[0] != dimension:
            raise DimensionMismatch(
                f"{path}: object {obj.object_id!r} has dimension "
                f"{obj.embedding.shape[0]}, header declares {dimension}"
            )
        if obj.label not in allowed:
            raise SchemaError(
                f"{path}: object {obj.object_id!r} labeled {obj.label!r}, "
                f"not in the header label set"
            )
        objects.append(obj)
    return DetectionSet(dimension=dimension, objects=objects, label_set=label_set)


# --- ground-truth file ---

def write_ground_truth(ground_truth: Sequence[GroundTruthObject], path: str | Path) -> None:
    dump_json(
        [
            {"frame_id": g.frame_id, "box": g.box.as_list(), "label": g.label}
            for g in ground_truth
        ],
        path,
    )


def load_ground_truth(path: str | Path) -> list[GroundTruthObject]:
    doc = load_json(path)
    if not isinstance(doc, list):
        raise SchemaError(f"{path}: ground truth must be a JSON array")
    out = []
    for raw in doc:
        try:
            out.append(
                GroundTruthObject(
                    frame_id=str(raw["frame_id"]),
                    box=BoundingBox.from_list(raw["box"]),
                    label=str(raw["label"]),
                )
            )
        except KeyError as e:
            raise SchemaError(f"{path}: ground-truth record missing {e}") from e
    return out


# --- synthetic generator ---

FRAME_WIDTH = 640.0
FRAME_HEIGHT = 480.0
DOOR_BOX = BoundingBox(220.0, 60.0, 420.0, 420.0)
OPENER_HALF_W = 15.0
OPENER_HALF_H = 10.0


@dataclass(frozen=True)
class ClassSpec:
    """One object class: its name, how many true instances to generate, and
    optionally a fixed unit-vector cluster center (random when omitted).
    A count of zero keeps the class in the label vocabulary (so corruption
    can produce it) without emitting any ground truth for it."""

    name: str
    count: int
    center: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic door-scene dataset.

    Every frame contains exactly one door-class object at a canonical box;
    opener objects are placed centered on the door's side edges at its
    vertical middle, so they satisfy the spatial rule by construction.
    ``false_positive_count`` adds opener-labeled detections whose centers sit
    a full door-width away from the nearest door side (horizontal range
    score exactly 0) and which have no ground-truth counterpart.
    """

    classes: tuple[ClassSpec, ...]
    dimension: int = 16
    noise_scale: float = 0.05
    corruption_rate: float = 0.0
    door_class: str = "door"
    false_positive_count: int = 0
    false_positive_noise: float = 0.3
    confidence_range: tuple[float, float] = (0.5, 0.95)

    def validate(self) -> None:
        if not self.classes:
            raise InvalidSpec("no classes declared")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise InvalidSpec("duplicate class names")
        if self.dimension < 2:
            raise InvalidSpec("dimension must be at least 2")
        for c in self.classes:
            if c.count < 0:
                raise InvalidSpec(f"class {c.name!r} has negative count")
            if c.center is not None and len(c.center) != self.dimension:
                raise InvalidSpec(f"class {c.name!r} center has the wrong dimension")
        if self.noise_scale < 0 or self.false_positive_noise < 0:
            raise InvalidSpec("noise scales must be non-negative")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise InvalidSpec("corruption_rate must be in [0, 1]")
        if self.door_class not in names:
            raise InvalidSpec(f"door_class {self.door_class!r} not among the classes")
        if self.false_positive_count < 0:
            raise InvalidSpec("false_positive_count must be non-negative")
        door_count = next(c.count for c in self.classes if c.name == self.door_class)
        opener_count = sum(c.count for c in self.classes if c.name != self.door_class)
        if door_count == 0 and (opener_count > 0 or self.false_positive_count > 0):
            raise InvalidSpec("opener objects require at least one door frame")
        lo, hi = self.confidence_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise InvalidSpec("confidence_range must be ordered within [0, 1]")


def _unit(v: np.ndarray) -> np.ndarray:
    norm = math.sqrt(float(np.sum(v * v)))
    if norm == 0.0:
        raise InvalidSpec("zero-norm class center")
    return v / norm


def _resolve_centers(spec: SyntheticSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    centers = {}
    for c in spec.classes:
        if c.center is not None:
            centers[c.name] = _unit(np.asarray(c.center, dtype=np.float64))
        else:
            centers[c.name] = _unit(rng.normal(size=spec.dimension))
    return centers


def _noisy_embedding(
    center: np.ndarray, scale: float, rng: np.random.Generator
) -> np.ndarray:
    return _unit(center + scale * rng.normal(size=center.shape[0]))


def _opener_box(slot: int) -> BoundingBox:
    # Slot 0 sits on the right edge at mid-height, slot 1 on the left edge;
    # further slots shift downward in 22 px steps, staying near the middle.
    side_x = DOOR_BOX.x_max if slot % 2 == 0 else DOOR_BOX.x_min
    cy = DOOR_BOX.center_y + (slot // 2) * 22.0
    return BoundingBox(side_x - OPENER_HALF_W, cy - OPENER_HALF_H,
                       side_x + OPENER_HALF_W, cy + OPENER_HALF_H)


def _false_positive_box(index: int) -> BoundingBox:
    # Center exactly one door-width left of the door's left edge: the
    # horizontal range score is exactly zero regardless of height.
    cx = DOOR_BOX.x_min - DOOR_BOX.width
    cy = 30.0 + (index * 37.0) % 400.0
    return BoundingBox(cx - OPENER_HALF_W, cy - OPENER_HALF_H,
                       cx + OPENER_HALF_W, cy + OPENER_HALF_H)


def generate_synthetic(
    spec: SyntheticSpec, seed: int
) -> tuple[DetectionSet, list[GroundTruthObject]]:
    """Deterministic synthetic dataset: detections plus their ground truth.

    True objects get ids ``obj-NNNN`` and an identical ground-truth box;
    injected false positives get ids ``fp-NNNN`` and no ground truth.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    centers = _resolve_centers(spec, rng)
    lo, hi = spec.confidence_range

    true_labels: list[str] = []
    for c in spec.classes:
        if c.name == spec.door_class:
            true_labels.extend([c.name] * c.count)
    door_count = len(true_labels)
    for c in spec.classes:
        if c.name != spec.door_class:
            true_labels.extend([c.name] * c.count)

    n_true = len(true_labels)
    vocabulary = [c.name for c in spec.classes]

    # Exact corruption count for threshold stability.
    n_corrupt = int(round(spec.corruption_rate * n_true))
    corrupt_idx = set(
        rng.choice(n_true, size=n_corrupt, replace=False).tolist() if n_corrupt else []
    )

    objects: list[DetectedObject] = []
    ground_truth: list[GroundTruthObject] = []
    opener_seq = 0
    for i, true_label in enumerate(true_labels):
        if i < door_count:
            frame = f"frame-{i:04d}"
            box = DOOR_BOX
        else:
            frame_idx = opener_seq % door_count
            frame = f"frame-{frame_idx:04d}"
            box = _opener_box(opener_seq // door_count)
            opener_seq += 1

        detected_label = true_label
        if i in corrupt_idx:
            others = [v for v in vocabulary if v != true_label]
            detected_label = others[int(rng.integers(len(others)))]

        embedding = _noisy_embedding(centers[true_label], spec.noise_scale, rng)
        confidence = float(lo + (hi - lo) * rng.random())
        objects.append(
            DetectedObject(
                object_id=f"obj-{i:04d}",
                frame_id=frame,
                box=box,
                label=detected_label,
                confidence=confidence,
                embedding=embedding,
            )
        )
        ground_truth.append(GroundTruthObject(frame_id=frame, box=box, label=true_label))

    opener_vocab = [v for v in vocabulary if v != spec.door_class]
    for j in range(spec.false_positive_count):
        label = opener_vocab[j % len(opener_vocab)]
        embedding = _noisy_embedding(centers[label], spec.false_positive_noise, rng)
        confidence = float(lo + (hi - lo) * rng.random())
        objects.append(
            DetectedObject(
                object_id=f"fp-{j:04d}",
                frame_id=f"frame-{j % door_count:04d}",
                box=_false_positive_box(j),
                label=label,
                confidence=confidence,
                embedding=embedding,
            )
        )

    label_set = LabelSet(tuple(vocabulary))
    return DetectionSet(spec.dimension, objects, label_set), ground_truth


def door_scene_spec(
    noise_scale: float = 0.05,
    corruption_rate: float = 0.4,
    false_positive_count: int = 40,
    dimension: int = 16,
) -> SyntheticSpec:
    """Default demo dataset: 300 true objects across door-opener classes.

    The knob class stays in the vocabulary with zero true instances; it only
    appears through label corruption, the way a detector confuses handles
    for knobs without any knob being present.
    """
    return SyntheticSpec(
        classes=(
            ClassSpec("door", 120),
            ClassSpec("handle", 90),
            ClassSpec("knob", 0),
            ClassSpec("push bar", 50),
            ClassSpec("button", 40),
        ),
        dimension=dimension,
        noise_scale=noise_scale,
        corruption_rate=corruption_rate,
        false_positive_count=false_positive_count,
    )


def spec_from_json_dict(doc: Any) -> SyntheticSpec:
    if not isinstance(doc, dict) or not isinstance(doc.get("classes"), list):
        raise SchemaError("synthetic spec must be an object with a 'classes' array")
    try:
        classes = tuple(
            ClassSpec(
                name=str(c["name"]),
                count=int(c["count"]),
                center=tuple(float(v) for v in c["center"]) if "center" in c else None,
            )
            for c in doc["classes"]
        )
        kwargs: dict[str, Any] = {}
        for key in ("dimension", "false_positive_count"):
            if key in doc:
                kwargs[key] = int(doc[key])
        for key in ("noise_scale", "corruption_rate", "false_positive_noise"):
            if key in doc:
                kwargs[key] = float(doc[key])
        if "door_class" in doc:
            kwargs["door_class"] = str(doc["door_class"])
        if "confidence_range" in doc:
            lo, hi = doc["confidence_range"]
            kwargs["confidence_range"] = (float(lo), float(hi))
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"bad synthetic spec: {e}") from e
    return SyntheticSpec(classes=classes, **kwargs)


def load_synthetic_spec(path: str | Path) -> SyntheticSpec:
    return spec_from_json_dict(load_json(path))


def pick_exemplars(
    detections: DetectionSet,
    ground_truth: Sequence[GroundTruthObject],
    counts: Mapping[str, int],
) -> dict[str, str]:
    """Choose exemplar assignments the way a human would from the canvas:
    for each requested class, the first ``counts[class]`` objects (in
    detection order) whose frame and box appear in the ground truth with
    that class, assigned their true label.  Injected false positives have
    no ground truth and are never picked.
    """
    gt_labels: dict[tuple[str, tuple[float, ...]], list[str]] = {}
    for g in ground_truth:
        gt_labels.setdefault((g.frame_id, tuple(g.box.as_list())), []).append(g.label)

    remaining = dict(counts)
    assignments: dict[str, str] = {}
    for obj in detections.objects:
        queue = gt_labels.get((obj.frame_id, tuple(obj.box.as_list())))
        if not queue:
            continue
        true_label = queue.pop(0)
        if remaining.get(true_label, 0) <= 0:
            continue
        assignments[obj.object_id] = true_label
        remaining[true_label] -= 1
    short = {k: v for k, v in remaining.items() if v > 0}
    if short:
        raise InvalidSpec(f"not enough objects to pick exemplars for {short}")
    return assignments
