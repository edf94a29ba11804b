from collections import Counter

import numpy as np
import pytest

from amricl.retrieval import (BadMagic, IndexError_, TruncatedPayload, VectorRecord, VersionMismatch, build_index,
                              knn, load_vectors, read_header, save_vectors, stratified_random)
from oracles import brute_force_knn


def records(matrix, labels=None):
    labels = labels or [None] * len(matrix)
    return [VectorRecord(f"r{i}", np.asarray(v, dtype=float), lab) for i, (v, lab) in enumerate(zip(matrix, labels))]


def test_build_small_index():
    idx = build_index(records([[1, 0], [0, 1], [1, 1]]))
    assert len(idx) == 3 and idx.dim == 2
    assert np.allclose(np.linalg.norm(idx.matrix, axis=1), 1.0)


def test_build_errors_name_offender():
    with pytest.raises(IndexError_, match="'r1'"):
        build_index(records([[1, 0], [1, 0, 0]]))
    with pytest.raises(IndexError_):
        build_index([])
    with pytest.raises(IndexError_, match="duplicate"):
        build_index([VectorRecord("a", np.ones(2)), VectorRecord("a", np.ones(2))])
    with pytest.raises(IndexError_):
        build_index(records([[np.nan, 0]]))
    with pytest.raises(IndexError_):
        build_index(records([[1, 0]]), metric="manhattan")


def test_zero_vector_rejected_under_cosine_only():
    idx = build_index(records([[0, 0], [1, 0]]))
    assert idx.rejected == ("r0",) and idx.ids == ("r1",)
    assert build_index(records([[0, 0], [1, 0]]), "dot").rejected == ()


def test_build_does_not_mutate_records():
    recs = records([[3.0, 4.0]])
    build_index(recs)
    assert np.array_equal(recs[0].vector, [3.0, 4.0])
    with pytest.raises(ValueError):
        build_index(recs).matrix[0, 0] = 1.0


def test_knn_examples():
    idx = build_index(records([[1, 0], [0, 1]]))
    assert knn(idx, [1, 0.1], k=1).ids == ("r0",)
    res = knn(idx, [0.2, 1], k=2)
    assert res.ids == ("r1", "r0") and res.scores[0] >= res.scores[1]
    assert knn(idx, [1, 0], k=50).ids == ("r0", "r1")
    with pytest.raises(IndexError_):
        knn(idx, [1, 0, 0])
    with pytest.raises(IndexError_):
        knn(idx, [1, 0], k=0)


def test_knn_ties_keep_insertion_order_and_exclude():
    idx = build_index(records([[1, 0], [0, 1], [1, 0], [2, 0]]))
    assert knn(idx, [1, 0], k=3).ids == ("r0", "r2", "r3")
    assert knn(idx, [1, 0], k=2, exclude={"r0"}).ids == ("r2", "r3")


@pytest.mark.parametrize("metric", ["cosine", "dot", "euclidean"])
def test_knn_matches_brute_force(metric):
    rng = np.random.default_rng(0)
    for _ in range(300):
        n, d = int(rng.integers(1, 40)), int(rng.integers(1, 8))
        m = rng.integers(-3, 4, size=(n, d)).astype(float)  # small integers make ties common
        m[np.all(m == 0, axis=1)] = 1.0
        q = rng.integers(-3, 4, size=d).astype(float) + 0.5
        k = int(rng.integers(1, n + 3))
        ids = knn(build_index(records(m), metric), q, k).ids
        assert ids == tuple(f"r{i}" for i in brute_force_knn(m, q, k, metric))


def test_cosine_order_invariant_to_query_scale():
    rng = np.random.default_rng(1)
    idx = build_index(records(rng.normal(size=(100, 6))))
    for _ in range(50):
        q = rng.normal(size=6)
        base = knn(idx, q, k=100).ids
        assert knn(idx, q * float(rng.uniform(1e-3, 1e3)), k=100).ids == base


def test_stratified_two_per_label():
    recs = records(np.ones((10, 2)), ["A"] * 5 + ["B"] * 5)
    ids = stratified_random(recs, 4, rng_seed=0)
    label = {r.id: r.label for r in recs}
    assert Counter(label[i] for i in ids) == {"A": 2, "B": 2}
    assert [label[i] for i in ids] == ["A", "B", "A", "B"]


def test_stratified_full_permutation_and_exhaustion():
    recs = records(np.ones((7, 2)), ["A"] * 5 + ["B"] * 2)
    ids = stratified_random(recs, 7, rng_seed=3)
    assert sorted(ids) == sorted(r.id for r in recs)
    assert stratified_random(recs, 7, rng_seed=3) == ids
    assert len(stratified_random(recs, 100, rng_seed=3)) == 7
    with pytest.raises(IndexError_):
        stratified_random([], 3)


def test_stratified_balance_property():
    labels = ["A"] * 30 + ["B"] * 30 + ["C"] * 30 + [None] * 30
    recs = records(np.ones((120, 1)), labels)
    label = {r.id: r.label for r in recs}
    for seed in range(10_000):
        k = 1 + seed % 40
        c = Counter(label[i] for i in stratified_random(recs, k, rng_seed=seed))
        counts = [c.get(lab, 0) for lab in ("A", "B", "C", None)]
        assert max(counts) - min(counts) <= 1


def test_vector_file_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    recs = [VectorRecord(f"id-{i}-é", rng.normal(size=5).astype(np.float32), None if i % 3 else "L")
            for i in range(100)]
    path = tmp_path / "v.arev"
    save_vectors(path, recs)
    back = load_vectors(path)
    assert [r.id for r in back] == [r.id for r in recs]
    assert [r.label for r in back] == [r.label for r in recs]
    assert all(np.array_equal(a.vector, b.vector) for a, b in zip(recs, back))
    assert read_header(path) == (1, 100, 5)


def test_vector_file_errors(tmp_path):
    path = tmp_path / "v.arev"
    save_vectors(path, records([[1, 2, 3]]))
    raw = path.read_bytes()
    cases = [(raw[:-2], TruncatedPayload, "truncated payload"), (b"NOPE" + raw[4:], BadMagic, "bad magic"),
             (raw[:4] + (2).to_bytes(2, "little") + raw[6:], VersionMismatch, "version")]
    for data, err, message in cases:
        path.write_bytes(data)
        with pytest.raises(err, match=message):
            load_vectors(path)
