"""Fuzzy spatial verification of door openers.

A detected opener is plausible only if some door in the same frame is
nearby in the right way: the opener's center close to one of the door's
vertical sides, and close to the door's vertical middle.  Both closeness
terms are clamped linear scores in [0, 1]; they are combined with the two
detection confidences by product, and openers falling below a threshold
are suppressed as false positives.  Door-labeled objects are always kept,
and objects that are neither doors nor openers pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol, Sequence

from .detection import BoundingBox
from .errors import SchemaError
from .jsonio import dump_json, load_json


class Detection(Protocol):
    object_id: str
    frame_id: str
    box: BoundingBox

    @property
    def label(self) -> str: ...

    @property
    def confidence(self) -> float: ...


@dataclass(frozen=True)
class SpatialRule:
    door_label: str
    opener_labels: frozenset[str]
    keep_threshold: float = 0.25

    def __post_init__(self):
        if not self.opener_labels:
            raise SchemaError("spatial rule needs at least one opener label")
        lowered = {l.lower() for l in self.opener_labels}
        if self.door_label.lower() in lowered:
            raise SchemaError("door label cannot also be an opener label")
        if not 0.0 <= self.keep_threshold <= 1.0:
            raise SchemaError("keep_threshold must lie in [0, 1]")
        object.__setattr__(self, "opener_labels", frozenset(lowered))

    def is_door(self, label: str) -> bool:
        return label.lower() == self.door_label.lower()

    def is_opener(self, label: str) -> bool:
        return label.lower() in self.opener_labels


@dataclass(frozen=True)
class SpatialVerdict:
    opener_id: str
    best_door_id: str | None
    hor_score: float
    vert_score: float
    combined_score: float
    kept: bool

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "opener_id": self.opener_id,
            "best_door_id": self.best_door_id,
            "hor_score": self.hor_score,
            "vert_score": self.vert_score,
            "combined_score": self.combined_score,
            "kept": self.kept,
        }

    @staticmethod
    def from_json_dict(doc: dict[str, Any]) -> "SpatialVerdict":
        try:
            return SpatialVerdict(
                opener_id=str(doc["opener_id"]),
                best_door_id=doc["best_door_id"],
                hor_score=float(doc["hor_score"]),
                vert_score=float(doc["vert_score"]),
                combined_score=float(doc["combined_score"]),
                kept=bool(doc["kept"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"bad verdict record: {e}") from e


def hor_range_score(opener: BoundingBox, door: BoundingBox) -> float:
    """How close the opener's center is to the nearest vertical side of the
    door, in door widths: 1 on the side, falling linearly to 0 one width
    away."""
    dist = min(abs(opener.center_x - door.x_min), abs(opener.center_x - door.x_max))
    return max(1.0 - dist / door.width, 0.0)


def vert_range_score(opener: BoundingBox, door: BoundingBox) -> float:
    """How close the opener's center is to the door's vertical middle, in
    door heights: 1 at the middle, falling linearly to 0 one height away."""
    dist = abs(opener.center_y - door.center_y)
    return max(1.0 - dist / door.height, 0.0)


def verify(objects: Sequence[Detection], rule: SpatialRule) -> list[SpatialVerdict]:
    """One verdict per opener-labeled object.

    The combined score is the maximum over doors in the same frame of
    door-confidence * opener-confidence * horizontal score * vertical
    score; the opener is kept iff that maximum reaches the threshold.  With
    no door in the frame the opener cannot be verified and is dropped.
    """
    doors_by_frame: dict[str, list[Detection]] = {}
    for obj in objects:
        if rule.is_door(obj.label):
            doors_by_frame.setdefault(obj.frame_id, []).append(obj)

    verdicts = []
    for obj in objects:
        if not rule.is_opener(obj.label):
            continue
        best_door: Detection | None = None
        best = (0.0, 0.0, 0.0)
        for door in sorted(
            doors_by_frame.get(obj.frame_id, ()), key=lambda d: d.object_id
        ):
            hor = hor_range_score(obj.box, door.box)
            vert = vert_range_score(obj.box, door.box)
            combined = door.confidence * obj.confidence * hor * vert
            if best_door is None or combined > best[2]:
                best_door = door
                best = (hor, vert, combined)
        verdicts.append(
            SpatialVerdict(
                opener_id=obj.object_id,
                best_door_id=best_door.object_id if best_door is not None else None,
                hor_score=best[0],
                vert_score=best[1],
                combined_score=best[2],
                kept=best_door is not None and best[2] >= rule.keep_threshold,
            )
        )
    return verdicts


def filter_kept(
    objects: Sequence[Detection], verdicts: Sequence[SpatialVerdict], rule: SpatialRule
) -> list[Detection]:
    """Objects surviving verification: every non-opener, plus openers whose
    verdict says kept."""
    kept_ids = {v.opener_id for v in verdicts if v.kept}
    out = []
    for obj in objects:
        if rule.is_opener(obj.label) and obj.object_id not in kept_ids:
            continue
        out.append(obj)
    return out


def save_rule(rule: SpatialRule, path: str | Path) -> None:
    dump_json(
        {
            "door_label": rule.door_label,
            "opener_labels": sorted(rule.opener_labels),
            "keep_threshold": rule.keep_threshold,
        },
        path,
    )


def load_rule(path: str | Path) -> SpatialRule:
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: rule file must be a JSON object")
    try:
        return SpatialRule(
            door_label=str(doc["door_label"]),
            opener_labels=frozenset(str(v) for v in doc["opener_labels"]),
            keep_threshold=float(doc.get("keep_threshold", 0.25)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{path}: bad rule file: {e}") from e


def save_verdicts(verdicts: Sequence[SpatialVerdict], path: str | Path) -> None:
    dump_json([v.to_json_dict() for v in verdicts], path)


def load_verdicts(path: str | Path) -> list[SpatialVerdict]:
    doc = load_json(path)
    if not isinstance(doc, list):
        raise SchemaError(f"{path}: verdicts file must be a JSON array")
    return [SpatialVerdict.from_json_dict(d) for d in doc]
