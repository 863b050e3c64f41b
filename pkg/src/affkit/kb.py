"""Affordance knowledge graph.

Entities (objects, properties, agents) are connected by effect relations
(acting on an object yields a property or a verb outcome) and affordance
relations (an action chain produces one or more effects, each with a
probability).  The graph answers two questions the rest of the pipeline
needs: which object labels are worth detecting for a goal, and which action
chain manipulates a given object to produce the goal effect.

The graph is built in memory, validated, and serialized to a single JSON
document with top-level ``entities`` / ``effects`` / ``affordances`` arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .detection import LabelSet
from .errors import (
    DanglingReference,
    DuplicateId,
    InvalidProbability,
    SchemaError,
    UnknownEntity,
)
from .jsonio import dump_json, load_json

_PROB_SLACK = 1e-9


class EntityKind(str, enum.Enum):
    OBJECT = "object"
    PROPERTY = "property"
    AGENT = "agent"


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    kind: EntityKind


@dataclass(frozen=True)
class EffectRelation:
    """Outcome of acting on an object: it gains a property, or an agent/verb
    statement becomes true (e.g. the agent "holds" the object).

    At least one of ``property`` / ``verb`` must be present.  All entity
    fields are entity ids.
    """

    id: str
    object: str
    property: str | None = None
    verb: str | None = None
    agent: str | None = None


@dataclass(frozen=True)
class ActionSpec:
    verb: str
    direct_object: str
    indirect_object: str | None = None
    agent: str | None = None


@dataclass(frozen=True)
class ActionChain:
    """Ordered steps executed in sequence; a single-step chain is the common
    case and is interchangeable with a bare ActionSpec at the file level."""

    steps: tuple[ActionSpec, ...]

    def __post_init__(self):
        if not self.steps:
            raise SchemaError("action chain must have at least one step")

    @property
    def last_direct_object(self) -> str:
        return self.steps[-1].direct_object

    def describe(self) -> str:
        return ", then ".join(s.verb for s in self.steps)


class EffectMode(str, enum.Enum):
    JOINT = "joint"
    ALTERNATIVE = "alternative"


@dataclass(frozen=True)
class AffordanceRelation:
    """Action chain paired with the effects it can produce.

    ``effects`` holds (effect id, probability) pairs.  ``joint`` mode means
    all effects occur together; ``alternative`` means exactly one of them
    occurs, so the probabilities may sum to at most 1.
    """

    id: str
    action: ActionChain
    effects: tuple[tuple[str, float], ...]
    effect_mode: EffectMode = EffectMode.JOINT


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


@dataclass
class AffordanceGraph:
    entities: dict[str, Entity] = field(default_factory=dict)
    effects: dict[str, EffectRelation] = field(default_factory=dict)
    affordances: dict[str, AffordanceRelation] = field(default_factory=dict)

    # --- construction ---

    def add_entity(self, entity: Entity) -> None:
        if entity.id in self.entities:
            raise DuplicateId(f"entity id {entity.id!r} already present")
        if not entity.name:
            raise SchemaError(f"entity {entity.id!r} has an empty name")
        self.entities[entity.id] = entity

    def add_effect(self, effect: EffectRelation) -> None:
        if effect.id in self.effects:
            raise DuplicateId(f"effect id {effect.id!r} already present")
        if effect.property is None and effect.verb is None:
            raise SchemaError(f"effect {effect.id!r} needs a property or a verb")
        self._require_entity(effect.object, EntityKind.OBJECT, effect.id)
        if effect.property is not None:
            self._require_entity(effect.property, EntityKind.PROPERTY, effect.id)
        if effect.agent is not None:
            self._require_entity(effect.agent, EntityKind.AGENT, effect.id)
        self.effects[effect.id] = effect

    def add_affordance(self, affordance: AffordanceRelation) -> None:
        if affordance.id in self.affordances:
            raise DuplicateId(f"affordance id {affordance.id!r} already present")
        if not affordance.effects:
            raise SchemaError(f"affordance {affordance.id!r} has no effects")
        for step in affordance.action.steps:
            if not step.verb:
                raise SchemaError(f"affordance {affordance.id!r} has a step with no verb")
            if step.direct_object not in self.entities:
                raise DanglingReference(
                    f"affordance {affordance.id!r} step references unknown entity "
                    f"{step.direct_object!r}"
                )
            for ref in (step.indirect_object, step.agent):
                if ref is not None and ref not in self.entities:
                    raise DanglingReference(
                        f"affordance {affordance.id!r} step references unknown entity {ref!r}"
                    )
        total = 0.0
        for effect_id, prob in affordance.effects:
            if effect_id not in self.effects:
                raise DanglingReference(
                    f"affordance {affordance.id!r} references unknown effect {effect_id!r}"
                )
            if not 0.0 <= prob <= 1.0:
                raise InvalidProbability(
                    f"affordance {affordance.id!r}: probability {prob} outside [0, 1]"
                )
            total += prob
        if affordance.effect_mode is EffectMode.ALTERNATIVE and total > 1.0 + _PROB_SLACK:
            raise InvalidProbability(
                f"affordance {affordance.id!r}: alternative effects sum to {total} > 1"
            )
        self.affordances[affordance.id] = affordance

    def _require_entity(self, entity_id: str, kind: EntityKind, owner: str) -> None:
        ent = self.entities.get(entity_id)
        if ent is None:
            raise DanglingReference(f"{owner!r} references unknown entity {entity_id!r}")
        if ent.kind is not kind:
            raise SchemaError(
                f"{owner!r} expects entity {entity_id!r} of kind {kind.value}, "
                f"found {ent.kind.value}"
            )

    # --- queries ---

    def _matching_affordances(
        self, object_id: str, property_or_verb: str
    ) -> list[tuple[AffordanceRelation, float]]:
        """Affordances with at least one effect on ``object_id`` whose property
        name or verb equals ``property_or_verb`` (case-insensitive).  A joint
        or alternative multi-effect matches if any member effect matches."""
        if object_id not in self.entities:
            raise UnknownEntity(f"unknown entity {object_id!r}")
        needle = property_or_verb.lower()
        out = []
        for aff_id in sorted(self.affordances):
            aff = self.affordances[aff_id]
            best: float | None = None
            for effect_id, prob in aff.effects:
                eff = self.effects[effect_id]
                if eff.object != object_id:
                    continue
                names = []
                if eff.property is not None:
                    names.append(self.entities[eff.property].name.lower())
                if eff.verb is not None:
                    names.append(eff.verb.lower())
                if needle in names:
                    best = prob if best is None else max(best, prob)
            if best is not None:
                out.append((aff, best))
        return out

    def query_actions_for_effect(
        self, object_id: str, property_or_verb: str
    ) -> list[tuple[ActionChain, str, float]]:
        """Action chains that can produce the requested effect on the object.

        Returns (chain, direct object id of the final step, probability)
        triples, sorted by probability descending, ties broken by affordance
        id ascending.
        """
        matches = self._matching_affordances(object_id, property_or_verb)
        matches.sort(key=lambda pair: (-pair[1], pair[0].id))
        return [(aff.action, aff.action.last_direct_object, prob) for aff, prob in matches]

    def label_set_for_goal(self, object_id: str, property_or_verb: str) -> LabelSet:
        """Object labels worth detecting when pursuing the goal effect: the
        names of every direct object manipulated by a matching affordance,
        plus the goal object itself, deduplicated and sorted."""
        matches = self._matching_affordances(object_id, property_or_verb)
        names = {self.entities[object_id].name}
        for aff, _ in matches:
            for step in aff.action.steps:
                names.add(self.entities[step.direct_object].name)
        return LabelSet(tuple(sorted(names)))

    def actions_for_object_label(self, label: str) -> list[tuple[ActionChain, float]]:
        """Chains whose final step manipulates an object named ``label``
        (case-insensitive), with the maximum effect probability of each
        affordance; used to attach an action plan to relabeled detections."""
        needle = label.lower()
        out = []
        for aff_id in sorted(self.affordances):
            aff = self.affordances[aff_id]
            target = self.entities.get(aff.action.last_direct_object)
            if target is not None and target.name.lower() == needle:
                out.append((aff.action, max(p for _, p in aff.effects)))
        out.sort(key=lambda pair: -pair[1])
        return out

    # --- validation ---

    def validate(self) -> list[Violation]:
        """Every type invariant, reported as data.  Empty list iff valid."""
        violations: list[Violation] = []

        def add(code: str, subject: str, message: str) -> None:
            violations.append(Violation(code, subject, message))

        for ent in self.entities.values():
            if not ent.name:
                add("EmptyName", ent.id, "entity has an empty name")

        for eff in self.effects.values():
            if eff.property is None and eff.verb is None:
                add("EffectWithoutOutcome", eff.id, "effect has neither property nor verb")
            refs = [(eff.object, EntityKind.OBJECT), (eff.property, EntityKind.PROPERTY),
                    (eff.agent, EntityKind.AGENT)]
            for ref, kind in refs:
                if ref is None:
                    continue
                ent = self.entities.get(ref)
                if ent is None:
                    add("DanglingReference", eff.id, f"unknown entity {ref!r}")
                elif ent.kind is not kind:
                    add("KindMismatch", eff.id,
                        f"entity {ref!r} is {ent.kind.value}, expected {kind.value}")

        for aff in self.affordances.values():
            if not aff.effects:
                add("EmptyEffects", aff.id, "affordance lists no effects")
            if not aff.action.steps:
                add("EmptyChain", aff.id, "action chain has no steps")
            for step in aff.action.steps:
                if not step.verb:
                    add("EmptyVerb", aff.id, "action step has an empty verb")
                for ref in (step.direct_object, step.indirect_object, step.agent):
                    if ref is not None and ref not in self.entities:
                        add("DanglingReference", aff.id, f"unknown entity {ref!r}")
            total = 0.0
            for effect_id, prob in aff.effects:
                if effect_id not in self.effects:
                    add("DanglingReference", aff.id, f"unknown effect {effect_id!r}")
                if not 0.0 <= prob <= 1.0:
                    add("InvalidProbability", aff.id, f"probability {prob} outside [0, 1]")
                total += prob
            if aff.effect_mode is EffectMode.ALTERNATIVE and total > 1.0 + _PROB_SLACK:
                add("ProbabilityMassExceeded", aff.id,
                    f"alternative effect probabilities sum to {total}")

        return violations

    # --- serialization ---

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "entities": [
                {"id": e.id, "name": e.name, "kind": e.kind.value}
                for e in sorted(self.entities.values(), key=lambda e: e.id)
            ],
            "effects": [
                _effect_to_dict(e)
                for e in sorted(self.effects.values(), key=lambda e: e.id)
            ],
            "affordances": [
                _affordance_to_dict(a)
                for a in sorted(self.affordances.values(), key=lambda a: a.id)
            ],
        }


def _effect_to_dict(eff: EffectRelation) -> dict[str, Any]:
    d: dict[str, Any] = {"id": eff.id, "object": eff.object}
    if eff.property is not None:
        d["property"] = eff.property
    if eff.verb is not None:
        d["verb"] = eff.verb
    if eff.agent is not None:
        d["agent"] = eff.agent
    return d


def _step_to_dict(step: ActionSpec) -> dict[str, Any]:
    d: dict[str, Any] = {"verb": step.verb, "direct_object": step.direct_object}
    if step.indirect_object is not None:
        d["indirect_object"] = step.indirect_object
    if step.agent is not None:
        d["agent"] = step.agent
    return d


def chain_to_json_dict(chain: ActionChain) -> dict[str, Any]:
    return {"steps": [_step_to_dict(s) for s in chain.steps]}


def _affordance_to_dict(aff: AffordanceRelation) -> dict[str, Any]:
    return {
        "id": aff.id,
        "action": {"steps": [_step_to_dict(s) for s in aff.action.steps]},
        "effects": [
            {"effect": effect_id, "probability": prob} for effect_id, prob in aff.effects
        ],
        "effect_mode": aff.effect_mode.value,
    }


def _step_from_dict(d: dict[str, Any], owner: str) -> ActionSpec:
    try:
        return ActionSpec(
            verb=str(d["verb"]),
            direct_object=str(d["direct_object"]),
            indirect_object=d.get("indirect_object"),
            agent=d.get("agent"),
        )
    except KeyError as e:
        raise SchemaError(f"affordance {owner!r}: action step missing {e}") from e


def _chain_from_dict(d: Any, owner: str) -> ActionChain:
    # Accept either {"steps": [...]} or a bare single action spec.
    if isinstance(d, dict) and "steps" in d:
        steps = d["steps"]
        if not isinstance(steps, list) or not steps:
            raise SchemaError(f"affordance {owner!r}: action.steps must be a non-empty list")
        return ActionChain(tuple(_step_from_dict(s, owner) for s in steps))
    if isinstance(d, dict):
        return ActionChain((_step_from_dict(d, owner),))
    raise SchemaError(f"affordance {owner!r}: action must be an object")


def graph_from_json_dict(doc: Any) -> AffordanceGraph:
    if not isinstance(doc, dict):
        raise SchemaError("knowledge graph document must be a JSON object")
    for key in ("entities", "effects", "affordances"):
        if not isinstance(doc.get(key), list):
            raise SchemaError(f"knowledge graph document needs a {key!r} array")

    graph = AffordanceGraph()
    for raw in doc["entities"]:
        try:
            kind = EntityKind(raw["kind"])
        except (KeyError, ValueError) as e:
            raise SchemaError(f"entity {raw.get('id')!r}: bad kind: {e}") from e
        try:
            ent = Entity(id=str(raw["id"]), name=str(raw["name"]), kind=kind)
        except KeyError as e:
            raise SchemaError(f"entity record missing {e}") from e
        if ent.id in graph.entities:
            raise SchemaError(f"duplicate entity id {ent.id!r}")
        graph.entities[ent.id] = ent

    for raw in doc["effects"]:
        try:
            eff = EffectRelation(
                id=str(raw["id"]),
                object=str(raw["object"]),
                property=raw.get("property"),
                verb=raw.get("verb"),
                agent=raw.get("agent"),
            )
        except KeyError as e:
            raise SchemaError(f"effect record missing {e}") from e
        if eff.id in graph.effects:
            raise SchemaError(f"duplicate effect id {eff.id!r}")
        graph.effects[eff.id] = eff

    for raw in doc["affordances"]:
        try:
            aff_id = str(raw["id"])
            chain = _chain_from_dict(raw["action"], aff_id)
            effects = []
            for pair in raw["effects"]:
                prob = pair.get("probability", 1.0)
                if not isinstance(prob, (int, float)):
                    raise SchemaError(f"affordance {aff_id!r}: non-numeric probability")
                effects.append((str(pair["effect"]), float(prob)))
            mode = EffectMode(raw.get("effect_mode", "joint"))
        except KeyError as e:
            raise SchemaError(f"affordance record missing {e}") from e
        except ValueError as e:
            raise SchemaError(f"affordance {raw.get('id')!r}: {e}") from e
        if aff_id in graph.affordances:
            raise SchemaError(f"duplicate affordance id {aff_id!r}")
        graph.affordances[aff_id] = AffordanceRelation(
            id=aff_id, action=chain, effects=tuple(effects), effect_mode=mode
        )

    violations = graph.validate()
    if violations:
        summary = "; ".join(f"{v.code}({v.subject})" for v in violations[:5])
        raise SchemaError(f"knowledge graph fails validation: {summary}")
    return graph


def save_graph(graph: AffordanceGraph, path: str | Path) -> None:
    dump_json(graph.to_json_dict(), path)


def load_graph(path: str | Path) -> AffordanceGraph:
    return graph_from_json_dict(load_json(path))


def build_graph(
    entities: Iterable[Entity],
    effects: Iterable[EffectRelation],
    affordances: Iterable[AffordanceRelation],
) -> AffordanceGraph:
    """Convenience constructor running the full add_* validation chain."""
    graph = AffordanceGraph()
    for e in entities:
        graph.add_entity(e)
    for eff in effects:
        graph.add_effect(eff)
    for aff in affordances:
        graph.add_affordance(aff)
    return graph
