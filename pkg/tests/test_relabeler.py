"""Relabeler unit tests.

The relabel operation is checked against an exhaustive pure-python scan
oracle that shares no code with the vectorized path.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affkit.detection import DetectionSet, LabelSet
from affkit.errors import (
    DimensionMismatch,
    EmptyStore,
    UnknownObjectId,
    ZeroNormVector,
)
from affkit.relabeler import (
    Exemplar,
    ExemplarStore,
    build_store,
    cosine_similarity,
    fold_assignments,
    load_assignments,
    read_relabeled,
    relabel,
    relabel_set,
    save_assignments,
    write_relabeled,
)

from conftest import make_detection_set, make_object


def oracle_relabel(embedding, store):
    """Exhaustive argmax over exemplars using plain python arithmetic."""
    def cos(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(y * y for y in b))
        return dot / (na * nb)

    best_index, best_value = 0, -2.0
    values = [cos(list(embedding), list(ex.embedding)) for ex in store.exemplars]
    for i, v in enumerate(values):
        if v > best_value:
            best_index, best_value = i, v
    return store.exemplars[best_index].label, best_value


class TestCosineSimilarity:
    def test_self_similarity(self):
        assert cosine_similarity(np.array([3.0, 4.0]), np.array([3.0, 4.0])) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_arithmetic_fixture(self):
        # 32 / (sqrt(14) * sqrt(77)), computed directly.
        expected = 32.0 / (math.sqrt(14.0) * math.sqrt(77.0))
        value = cosine_similarity(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
        assert abs(value - expected) < 1e-12
        assert abs(value - 0.974632) < 1e-6

    def test_zero_norm_rejected(self):
        with pytest.raises(ZeroNormVector):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_similarity(np.ones(3), np.ones(4))

    @given(
        st.lists(st.floats(-100, 100), min_size=2, max_size=8),
        st.lists(st.floats(-100, 100), min_size=2, max_size=8),
    )
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        n = min(len(a), len(b))
        va, vb = np.array(a[:n]), np.array(b[:n])
        # squared norms can underflow for subnormal inputs; such vectors are
        # rejected by the implementation, which is not what this checks
        if float(va @ va) == 0.0 or float(vb @ vb) == 0.0:
            return
        ab = cosine_similarity(va, vb)
        ba = cosine_similarity(vb, va)
        assert ab == ba
        assert -1.0 <= ab <= 1.0


def store_from_vectors(vectors, labels):
    dim = len(vectors[0])
    exemplars = [
        Exemplar(np.asarray(v, dtype=np.float64), label, f"src-{i}")
        for i, (v, label) in enumerate(zip(vectors, labels))
    ]
    return ExemplarStore(dimension=dim, exemplars=exemplars)


class TestRelabel:
    def test_exact_match_wins_with_full_confidence(self):
        store = store_from_vectors(
            [[1.0, 0.0], [0.6, 0.8]], ["handle", "knob"]
        )
        obj = make_object("o1", [0.6, 0.8], label="door")
        result = relabel(obj, store)
        assert result.new_label == "knob"
        assert result.new_confidence == 1.0
        assert result.raw_similarity == 1.0

    def test_arithmetic_fixture(self):
        store = store_from_vectors([[1.0, 0.0], [0.0, 1.0]], ["handle", "knob"])
        obj = make_object("o1", [0.9, 0.1], label="door")
        result = relabel(obj, store)
        expected = 0.9 / math.hypot(0.9, 0.1)
        assert result.new_label == "handle"
        assert abs(result.new_confidence - expected) < 1e-12
        assert abs(result.new_confidence - 0.9939) < 1e-4

    def test_box_object_id_and_original_label_unchanged(self):
        store = store_from_vectors([[1.0, 0.0]], ["handle"])
        obj = make_object("o7", [0.5, 0.5], label="knob")
        result = relabel(obj, store)
        assert result.box == obj.box
        assert result.object_id == "o7"
        assert result.original_label == "knob"

    def test_negative_similarity_clamped_to_zero_confidence(self):
        store = store_from_vectors([[1.0, 0.0]], ["handle"])
        obj = make_object("o1", [-1.0, 0.0], label="door")
        result = relabel(obj, store)
        assert result.raw_similarity == -1.0
        assert result.new_confidence == 0.0

    def test_tie_breaks_to_lowest_exemplar_index(self):
        store = store_from_vectors(
            [[2.0, 0.0], [1.0, 0.0]], ["first", "second"]
        )
        obj = make_object("o1", [3.0, 0.0], label="door")
        assert relabel(obj, store).new_label == "first"

    def test_empty_store(self):
        store = ExemplarStore(dimension=2, exemplars=[])
        with pytest.raises(EmptyStore):
            relabel(make_object("o1", [1.0, 0.0]), store)

    def test_dimension_mismatch(self):
        store = store_from_vectors([[1.0, 0.0, 0.0]], ["handle"])
        with pytest.raises(DimensionMismatch):
            relabel(make_object("o1", [1.0, 0.0]), store)

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            k = int(rng.integers(1, 12))
            d = int(rng.integers(2, 10))
            store = store_from_vectors(
                rng.normal(size=(k, d)), [f"label-{i % 4}" for i in range(k)]
            )
            obj = make_object("o1", rng.normal(size=d))
            result = relabel(obj, store)
            oracle_label, oracle_value = oracle_relabel(obj.embedding, store)
            assert result.new_label == oracle_label
            assert abs(result.raw_similarity - oracle_value) < 1e-9

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=60, deadline=None)
    def test_scale_invariance_of_argmax(self, seed):
        rng = np.random.default_rng(seed)
        store_vectors = rng.normal(size=(5, 6))
        labels = [f"l{i}" for i in range(5)]
        query = rng.normal(size=6)
        scale = float(rng.uniform(0.01, 100.0))
        base = relabel(make_object("o1", query), store_from_vectors(store_vectors, labels))
        scaled = relabel(
            make_object("o1", query * scale),
            store_from_vectors(store_vectors * scale, labels),
        )
        assert base.new_label == scaled.new_label


class TestRelabelSet:
    def test_empty_detection_set(self):
        detections = DetectionSet(2, [], LabelSet(("door",)))
        store = store_from_vectors([[1.0, 0.0]], ["door"])
        assert relabel_set(detections, store) == []

    def test_count_order_and_boxes_preserved(self):
        rng = np.random.default_rng(22)
        objs = [make_object(f"o{i}", rng.normal(size=4)) for i in range(20)]
        detections = make_detection_set(objs)
        store = store_from_vectors(rng.normal(size=(3, 4)), ["a", "b", "c"])
        out = relabel_set(detections, store)
        assert len(out) == 20
        assert [r.object_id for r in out] == [o.object_id for o in objs]
        for r, o in zip(out, objs):
            assert r.box == o.box

    def test_zero_norm_embedding_names_offender(self):
        objs = [make_object("good", [1.0, 0.0]), make_object("broken", [1.0, 1.0])]
        objs[1].embedding = np.zeros(2)  # corrupt after construction
        detections = make_detection_set(objs)
        store = store_from_vectors([[1.0, 0.0]], ["door"])
        with pytest.raises(ZeroNormVector, match="broken"):
            relabel_set(detections, store)

    def test_exemplar_permutation_changes_only_ties(self):
        rng = np.random.default_rng(23)
        vectors = rng.normal(size=(6, 5))
        labels = [f"l{i}" for i in range(6)]
        objs = [make_object(f"o{i}", rng.normal(size=5)) for i in range(40)]
        detections = make_detection_set(objs)
        forward = relabel_set(detections, store_from_vectors(vectors, labels))
        backward = relabel_set(
            detections, store_from_vectors(vectors[::-1], labels[::-1])
        )
        for f, b in zip(forward, backward):
            if f.new_label != b.new_label:
                assert abs(f.raw_similarity - b.raw_similarity) < 1e-12


class TestBuildStore:
    def test_store_size(self):
        rng = np.random.default_rng(24)
        objs = [make_object(f"o{i}", rng.normal(size=3)) for i in range(10)]
        detections = make_detection_set(objs)
        store = build_store(detections, {"o3": "handle", "o7": "knob"})
        assert len(store) == 2

    def test_unknown_object_id(self):
        detections = make_detection_set([make_object("o1", [1.0, 0.0])])
        with pytest.raises(UnknownObjectId):
            build_store(detections, {"z9": "handle"})

    def test_duplicate_assignment_last_wins(self):
        detections = make_detection_set([make_object("o1", [1.0, 0.0])])
        assignments = fold_assignments(
            [
                {"object_id": "o1", "label": "handle"},
                {"object_id": "o1", "label": "knob"},
            ]
        )
        store = build_store(detections, assignments)
        assert len(store) == 1
        assert store.exemplars[0].label == "knob"

    def test_exemplars_sorted_by_object_id(self):
        rng = np.random.default_rng(25)
        objs = [make_object(f"o{i}", rng.normal(size=3)) for i in range(5)]
        detections = make_detection_set(objs)
        store = build_store(detections, {"o4": "a", "o0": "b", "o2": "c"})
        assert [ex.source_object_id for ex in store.exemplars] == ["o0", "o2", "o4"]

    def test_embeddings_come_from_referenced_objects(self):
        objs = [make_object("o1", [1.0, 2.0]), make_object("o2", [3.0, 4.0])]
        detections = make_detection_set(objs)
        store = build_store(detections, {"o2": "handle"})
        assert np.array_equal(store.exemplars[0].embedding, [3.0, 4.0])


class TestFiles:
    def test_assignments_round_trip(self, tmp_path):
        path = tmp_path / "labels.json"
        save_assignments({"o2": "knob", "o1": "handle"}, path, session_id="s1")
        assert load_assignments(path) == {"o1": "handle", "o2": "knob"}

    def test_relabeled_round_trip(self, tmp_path):
        rng = np.random.default_rng(26)
        objs = [make_object(f"o{i}", rng.normal(size=4)) for i in range(6)]
        detections = make_detection_set(objs)
        store = build_store(detections, {"o0": "handle", "o1": "knob"})
        relabeled = relabel_set(detections, store)
        path = tmp_path / "relabeled.jsonl"
        write_relabeled(relabeled, detections.dimension, path)
        assert read_relabeled(path) == relabeled
