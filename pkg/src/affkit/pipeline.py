"""End-to-end orchestration: ingest -> project -> label -> relabel -> verify
-> evaluate, with every intermediate artifact written to the session
directory as JSON or line-JSON so runs are inspectable and reproducible.

Batch mode reads the human labels from a file; service mode (see
``service``) receives them over HTTP.  Both drive the same PipelineSession,
so identical inputs produce byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Mapping

from . import kb as kb_mod
from .detection import DetectionSet, build_prompt, ingest_detections, write_detections
from .errors import AffkitError, IoError, SchemaError, SchemaVersionMismatch, StageError
from .evaluation import EvalReport, evaluate, load_report, save_report, write_report_csv
from .jsonio import dump_json, load_json
from .projection import ProjectionLayout, TsneParams, load_layout, save_layout, tsne_project
from .relabeler import (
    ExemplarStore,
    RelabeledObject,
    build_store,
    load_assignments,
    read_relabeled,
    relabel_set,
    save_assignments,
    write_relabeled,
)
from .spatial import (
    SpatialRule,
    SpatialVerdict,
    filter_kept,
    load_rule,
    load_verdicts,
    save_verdicts,
    verify,
)
from .detection import load_ground_truth

SESSION_FORMAT_VERSION = 1

STAGES = ("ingested", "projected", "labeled", "relabeled", "verified", "evaluated")

ARTIFACTS = {
    "detections": "detections.jsonl",
    "label_set": "label_set.json",
    "layout": "layout.json",
    "assignments": "assignments.json",
    "relabeled": "relabeled.jsonl",
    "verdicts": "verdicts.json",
    "kept": "kept.jsonl",
    "report": "report.json",
    "report_csv": "report_per_class.csv",
    "actions": "actions.json",
    "manifest": "session.json",
}


def stage_index(stage: str) -> int:
    try:
        return STAGES.index(stage)
    except ValueError:
        raise SchemaError(f"unknown stage {stage!r}") from None


@dataclass(frozen=True)
class GoalQuery:
    object: str
    property_or_verb: str

    def to_json_dict(self) -> dict[str, Any]:
        return {"object": self.object, "property_or_verb": self.property_or_verb}


@dataclass(frozen=True)
class ServiceConfig:
    bind_address: str = "127.0.0.1"
    port: int = 8763


@dataclass(frozen=True)
class PipelineConfig:
    detections_path: Path
    output_dir: Path
    labels_path: Path | None = None
    ground_truth_path: Path | None = None
    knowledge_graph_path: Path | None = None
    spatial_rule_path: Path | None = None
    images_dir: Path | None = None
    goal: GoalQuery | None = None
    tsne: TsneParams = field(default_factory=TsneParams)
    iou_threshold: float = 0.5
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise SchemaError(f"iou_threshold {self.iou_threshold} outside (0, 1]")


def load_config(path: str | Path) -> PipelineConfig:
    """Read a config file; relative paths resolve against its directory."""
    path = Path(path)
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    base = path.parent

    def resolve(key: str) -> Path | None:
        value = doc.get(key)
        if value is None:
            return None
        p = Path(str(value))
        return p if p.is_absolute() else base / p

    detections = resolve("detections_path")
    output_dir = resolve("output_dir")
    if detections is None or output_dir is None:
        raise SchemaError(f"{path}: config needs detections_path and output_dir")

    goal = None
    if doc.get("goal") is not None:
        try:
            goal = GoalQuery(
                object=str(doc["goal"]["object"]),
                property_or_verb=str(doc["goal"]["property_or_verb"]),
            )
        except (KeyError, TypeError) as e:
            raise SchemaError(f"{path}: bad goal: {e}") from e

    service = ServiceConfig()
    if doc.get("service") is not None:
        raw = doc["service"]
        service = ServiceConfig(
            bind_address=str(raw.get("bind_address", service.bind_address)),
            port=int(raw.get("port", service.port)),
        )

    tsne = TsneParams.from_json_dict(doc.get("tsne", {}) or {})

    known = {
        "detections_path", "output_dir", "labels_path", "ground_truth_path",
        "knowledge_graph_path", "spatial_rule_path", "images_dir", "goal",
        "tsne", "iou_threshold", "service",
    }
    unknown = set(doc) - known
    if unknown:
        raise SchemaError(f"{path}: unknown config key(s): {sorted(unknown)}")

    return PipelineConfig(
        detections_path=detections,
        output_dir=output_dir,
        labels_path=resolve("labels_path"),
        ground_truth_path=resolve("ground_truth_path"),
        knowledge_graph_path=resolve("knowledge_graph_path"),
        spatial_rule_path=resolve("spatial_rule_path"),
        images_dir=resolve("images_dir"),
        goal=goal,
        tsne=tsne,
        iou_threshold=float(doc.get("iou_threshold", 0.5)),
        service=service,
    )


@dataclass
class SessionState:
    """Everything a labeling session has produced so far.

    The stage only advances (a label resubmission re-runs the tail stages
    but never drops below 'labeled'); artifacts of later stages stay None
    until their stage runs.
    """

    session_id: str
    detection_set: DetectionSet
    layout: ProjectionLayout | None = None
    assignments: dict[str, str] = field(default_factory=dict)
    store: ExemplarStore | None = None
    relabeled: list[RelabeledObject] | None = None
    verdicts: list[SpatialVerdict] | None = None
    report: EvalReport | None = None
    stage: str = "ingested"


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except AffkitError as e:
        raise StageError(name, str(e)) from e
    except OSError as e:
        raise StageError(name, str(e)) from e


def _session_id_for(detections_path: Path, seed: int) -> str:
    digest = hashlib.sha256()
    try:
        digest.update(Path(detections_path).read_bytes())
    except OSError as e:
        raise IoError(f"cannot read {detections_path}: {e}") from e
    digest.update(str(seed).encode())
    return digest.hexdigest()[:12]


class PipelineSession:
    """Drives the stages over one output directory.

    All mutation goes through run_* methods; each writes its artifacts and
    refreshes the manifest, so the directory always reflects the state.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.state: SessionState | None = None
        self.graph: kb_mod.AffordanceGraph | None = None
        self.rule: SpatialRule | None = None

    # --- stages ---

    def run_ingest(self) -> SessionState:
        with _stage("ingested"):
            self.out.mkdir(parents=True, exist_ok=True)
            session_id = _session_id_for(self.config.detections_path, self.config.tsne.seed)
            detections = ingest_detections(self.config.detections_path)
            if self.config.knowledge_graph_path is not None:
                self.graph = kb_mod.load_graph(self.config.knowledge_graph_path)
            if self.config.spatial_rule_path is not None:
                self.rule = load_rule(self.config.spatial_rule_path)
            self.state = SessionState(session_id=session_id, detection_set=detections)
            write_detections(detections, self.out / ARTIFACTS["detections"])
            if self.graph is not None and self.config.goal is not None:
                goal = self.config.goal
                labels = self.graph.label_set_for_goal(goal.object, goal.property_or_verb)
                dump_json(
                    {
                        "goal": goal.to_json_dict(),
                        "labels": list(labels),
                        "prompt": build_prompt(labels),
                    },
                    self.out / ARTIFACTS["label_set"],
                )
            self._write_manifest()
        return self.state

    def run_project(self) -> ProjectionLayout:
        state = self._require_stage("ingested", "projected")
        with _stage("projected"):
            layout = tsne_project(
                state.detection_set.embedding_matrix(),
                self.config.tsne,
                object_ids=state.detection_set.object_ids(),
            )
            state.layout = layout
            state.stage = "projected"
            save_layout(layout, self.out / ARTIFACTS["layout"])
            self._write_manifest()
        return layout

    def apply_labels(self, new_assignments: Mapping[str, str]) -> SessionState:
        """Merge assignments (last write wins) and run the tail stages."""
        state = self._require_stage("projected", "labeled")
        with _stage("labeled"):
            merged = dict(state.assignments)
            merged.update(new_assignments)
            store = build_store(state.detection_set, merged)
            state.assignments = merged
            state.store = store
            state.stage = "labeled"
            save_assignments(merged, self.out / ARTIFACTS["assignments"],
                             session_id=state.session_id)
            self._write_manifest()

        with _stage("relabeled"):
            state.relabeled = relabel_set(state.detection_set, state.store)
            state.stage = "relabeled"
            write_relabeled(state.relabeled, state.detection_set.dimension,
                            self.out / ARTIFACTS["relabeled"])
            self._write_manifest()

        with _stage("verified"):
            if self.rule is not None:
                state.verdicts = verify(state.relabeled, self.rule)
                kept = filter_kept(state.relabeled, state.verdicts, self.rule)
            else:
                state.verdicts = []
                kept = list(state.relabeled)
            state.stage = "verified"
            save_verdicts(state.verdicts, self.out / ARTIFACTS["verdicts"])
            write_relabeled(kept, state.detection_set.dimension,
                            self.out / ARTIFACTS["kept"])
            self._write_manifest()

        with _stage("evaluated"):
            if self.config.ground_truth_path is not None:
                ground_truth = load_ground_truth(self.config.ground_truth_path)
                state.report = evaluate(kept, ground_truth, self.config.iou_threshold)
                save_report(state.report, self.out / ARTIFACTS["report"])
                write_report_csv(state.report, self.out / ARTIFACTS["report_csv"])
            state.stage = "evaluated"
            if self.graph is not None:
                self._write_action_plan(kept)
            self._write_manifest()
        return state

    # --- helpers ---

    def _require_stage(self, minimum: str, attempted: str) -> SessionState:
        if self.state is None or stage_index(self.state.stage) < stage_index(minimum):
            have = self.state.stage if self.state is not None else "empty"
            raise StageError(
                attempted, f"session is at stage {have!r}, needs {minimum!r}"
            )
        return self.state

    def _write_manifest(self) -> None:
        assert self.state is not None
        dump_json(
            {
                "format_version": SESSION_FORMAT_VERSION,
                "session_id": self.state.session_id,
                "stage": self.state.stage,
            },
            self.out / ARTIFACTS["manifest"],
        )

    def _write_action_plan(self, kept: list[RelabeledObject]) -> None:
        assert self.graph is not None
        ranked = sorted(kept, key=lambda r: (-r.confidence, r.object_id))
        entries = []
        for r in ranked:
            chains = self.graph.actions_for_object_label(r.label)
            entries.append(
                {
                    "object_id": r.object_id,
                    "label": r.label,
                    "confidence": r.confidence,
                    "actions": [
                        {
                            "chain": kb_mod.chain_to_json_dict(chain),
                            "probability": prob,
                            "summary": chain.describe(),
                        }
                        for chain, prob in chains
                    ],
                }
            )
        doc: dict[str, Any] = {"ranked_objects": entries}
        if self.config.goal is not None:
            doc = {"goal": self.config.goal.to_json_dict(), "ranked_objects": entries}
        dump_json(doc, self.out / ARTIFACTS["actions"])


def run_batch(config: PipelineConfig) -> EvalReport:
    """Execute every stage; requires labels and ground-truth files."""
    if config.labels_path is None:
        raise StageError("labeled", "batch mode needs labels_path in the config")
    if config.ground_truth_path is None:
        raise StageError("evaluated", "batch mode needs ground_truth_path in the config")
    session = PipelineSession(config)
    session.run_ingest()
    session.run_project()
    with _stage("labeled"):
        assignments = load_assignments(config.labels_path)
    state = session.apply_labels(assignments)
    assert state.report is not None
    return state.report


def save_session(state: SessionState, directory: str | Path) -> None:
    """Persist a session state as the standard artifact directory."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_detections(state.detection_set, out / ARTIFACTS["detections"])
    if state.layout is not None:
        save_layout(state.layout, out / ARTIFACTS["layout"])
    if stage_index(state.stage) >= stage_index("labeled"):
        save_assignments(state.assignments, out / ARTIFACTS["assignments"],
                         session_id=state.session_id)
    if state.relabeled is not None:
        write_relabeled(state.relabeled, state.detection_set.dimension,
                        out / ARTIFACTS["relabeled"])
    if state.verdicts is not None:
        save_verdicts(state.verdicts, out / ARTIFACTS["verdicts"])
    if state.report is not None:
        save_report(state.report, out / ARTIFACTS["report"])
    dump_json(
        {
            "format_version": SESSION_FORMAT_VERSION,
            "session_id": state.session_id,
            "stage": state.stage,
        },
        out / ARTIFACTS["manifest"],
    )


def load_session(directory: str | Path) -> SessionState:
    """Load a session saved by save_session; inverse up to structural equality."""
    out = Path(directory)
    manifest = load_json(out / ARTIFACTS["manifest"])
    if not isinstance(manifest, dict):
        raise SchemaError(f"{out}: bad session manifest")
    version = manifest.get("format_version")
    if version != SESSION_FORMAT_VERSION:
        raise SchemaVersionMismatch(
            f"{out}: session format {version!r}, supported {SESSION_FORMAT_VERSION}"
        )
    stage = str(manifest.get("stage", "ingested"))
    stage_index(stage)  # validates
    state = SessionState(
        session_id=str(manifest.get("session_id", "")),
        detection_set=ingest_detections(out / ARTIFACTS["detections"]),
        stage=stage,
    )
    layout_path = out / ARTIFACTS["layout"]
    if layout_path.exists():
        state.layout = load_layout(layout_path)
    if stage_index(stage) >= stage_index("labeled"):
        state.assignments = load_assignments(out / ARTIFACTS["assignments"])
        state.store = build_store(state.detection_set, state.assignments)
    if stage_index(stage) >= stage_index("relabeled"):
        state.relabeled = read_relabeled(out / ARTIFACTS["relabeled"])
    if stage_index(stage) >= stage_index("verified"):
        state.verdicts = load_verdicts(out / ARTIFACTS["verdicts"])
    report_path = out / ARTIFACTS["report"]
    if stage_index(stage) >= stage_index("evaluated") and report_path.exists():
        state.report = load_report(report_path)
    return state
