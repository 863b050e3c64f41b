"""Shared fixtures and the acceptance-summary hook."""

from __future__ import annotations

import numpy as np
import pytest

from affkit.detection import BoundingBox, DetectedObject, DetectionSet, LabelSet
from affkit.kb import (
    ActionChain,
    ActionSpec,
    AffordanceGraph,
    AffordanceRelation,
    EffectRelation,
    Entity,
    EntityKind,
)

# --- acceptance reporting: one pass/fail line per criterion ---

_acceptance_results: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _acceptance_results.append((report.nodeid.split("::")[-1], outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name, outcome in _acceptance_results:
        terminalreporter.write_line(f"  [{outcome}] {name}")


# --- knowledge-graph fixtures ---

def make_door_graph() -> AffordanceGraph:
    """Door-opening graph: four opener affordances for one effect
    (door gains accessibility), with distinct probabilities."""
    g = AffordanceGraph()
    for eid, kind in [
        ("door", EntityKind.OBJECT),
        ("handle", EntityKind.OBJECT),
        ("knob", EntityKind.OBJECT),
        ("push_bar", EntityKind.OBJECT),
        ("button", EntityKind.OBJECT),
        ("accessibility", EntityKind.PROPERTY),
    ]:
        name = "push bar" if eid == "push_bar" else eid
        g.add_entity(Entity(id=eid, name=name, kind=kind))
    g.add_effect(EffectRelation(id="e-open", object="door", property="accessibility"))
    g.add_affordance(
        AffordanceRelation(
            id="aff-button",
            action=ActionChain((ActionSpec("press", "button"),)),
            effects=(("e-open", 0.6),),
        )
    )
    g.add_affordance(
        AffordanceRelation(
            id="aff-handle",
            action=ActionChain((ActionSpec("push down", "handle"),)),
            effects=(("e-open", 0.9),),
        )
    )
    g.add_affordance(
        AffordanceRelation(
            id="aff-knob",
            action=ActionChain(
                (ActionSpec("grasp", "knob"), ActionSpec("twist", "knob"))
            ),
            effects=(("e-open", 0.7),),
        )
    )
    g.add_affordance(
        AffordanceRelation(
            id="aff-pushbar",
            action=ActionChain((ActionSpec("push", "push_bar"),)),
            effects=(("e-open", 0.95),),
        )
    )
    return g


def make_give_cup_graph() -> AffordanceGraph:
    """Agentive graph: a robot gives a cup to a person, whose effect is the
    verb statement that the person holds the cup."""
    g = AffordanceGraph()
    g.add_entity(Entity(id="cup", name="cup", kind=EntityKind.OBJECT))
    g.add_entity(Entity(id="spot", name="SPOT", kind=EntityKind.AGENT))
    g.add_entity(Entity(id="person", name="person A", kind=EntityKind.AGENT))
    g.add_effect(
        EffectRelation(id="e-holds", object="cup", verb="holds", agent="person")
    )
    g.add_affordance(
        AffordanceRelation(
            id="aff-give",
            action=ActionChain(
                (ActionSpec("give", "cup", indirect_object="person", agent="spot"),)
            ),
            effects=(("e-holds", 1.0),),
        )
    )
    return g


@pytest.fixture
def door_graph() -> AffordanceGraph:
    return make_door_graph()


@pytest.fixture
def give_cup_graph() -> AffordanceGraph:
    return make_give_cup_graph()


# --- detection helpers ---

def make_object(
    object_id: str,
    embedding,
    label: str = "door",
    frame_id: str = "frame-0000",
    box: BoundingBox | None = None,
    confidence: float = 0.8,
) -> DetectedObject:
    return DetectedObject(
        object_id=object_id,
        frame_id=frame_id,
        box=box or BoundingBox(0.0, 0.0, 10.0, 10.0),
        label=label,
        confidence=confidence,
        embedding=np.asarray(embedding, dtype=np.float64),
    )


def make_detection_set(objects, labels=("door", "handle", "knob")) -> DetectionSet:
    dimension = objects[0].embedding.shape[0] if objects else 2
    return DetectionSet(
        dimension=dimension, objects=list(objects), label_set=LabelSet(tuple(labels))
    )


# --- pipeline workspace ---

def make_workspace(root, seed: int = 11, output_name: str = "out"):
    """Small synthetic dataset plus every file the pipeline consumes,
    written under ``root``; returns the loaded PipelineConfig."""
    from affkit.detection import ClassSpec, SyntheticSpec, generate_synthetic, \
        pick_exemplars, write_detections, write_ground_truth
    from affkit.jsonio import dump_json
    from affkit.kb import save_graph
    from affkit.pipeline import load_config
    from affkit.relabeler import save_assignments
    from affkit.spatial import SpatialRule, save_rule

    spec = SyntheticSpec(
        classes=(
            ClassSpec("door", 8),
            ClassSpec("handle", 6),
            ClassSpec("knob", 0),
            ClassSpec("button", 4),
        ),
        dimension=8,
        noise_scale=0.05,
        corruption_rate=0.3,
        false_positive_count=4,
    )
    detections, ground_truth = generate_synthetic(spec, seed)
    write_detections(detections, root / "detections.jsonl")
    write_ground_truth(ground_truth, root / "ground_truth.json")
    assignments = pick_exemplars(
        detections, ground_truth, {"door": 2, "handle": 2, "button": 1}
    )
    save_assignments(assignments, root / "labels.json", session_id="fixture")
    save_rule(
        SpatialRule("door", frozenset({"handle", "knob", "button"}), 0.25),
        root / "rule.json",
    )
    save_graph(make_door_graph(), root / "kb.json")
    dump_json(
        {
            "detections_path": "detections.jsonl",
            "ground_truth_path": "ground_truth.json",
            "labels_path": "labels.json",
            "spatial_rule_path": "rule.json",
            "knowledge_graph_path": "kb.json",
            "goal": {"object": "door", "property_or_verb": "accessibility"},
            "tsne": {
                "perplexity": 5.0,
                "iterations": 60,
                "early_exaggeration_iters": 20,
                "momentum_switch_iter": 20,
                "seed": seed,
            },
            "iou_threshold": 0.5,
            "output_dir": output_name,
        },
        root / "config.json",
    )
    return load_config(root / "config.json")
