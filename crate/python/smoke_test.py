"""Smoke test for the pyrankforge extension.

Build and install with `maturin develop --release -m crates/py/Cargo.toml`
(or `pip install --no-build-isolation ./crates/py`), then run
`python python/smoke_test.py` or `pytest python/`.
"""

import math
import random
import tempfile
from pathlib import Path

import pyrankforge as rf


def test_metrics():
    assert math.isclose(rf.ndcg_at_k([3, 2, 1], [0.1, 0.5, 0.9], 3), 0.680607, abs_tol=1e-6)
    assert rf.ndcg_at_k([0, 0], [1.0, 2.0], 2) == 1.0
    assert rf.rank_descending([0.2, 0.9, 0.2]) == [2, 1, 3]
    assert abs(rf.mcnemar(10, 2) - 0.0433) < 1e-3
    assert rf.mcnemar(3, 7) == rf.mcnemar(7, 3)


def _split_users(n_users, n_items, rng):
    users = [[rng.uniform(-1, 1), rng.uniform(-1, 1)] for _ in range(n_users)]
    items = [[rng.uniform(-1, 1), rng.uniform(-1, 1)] for _ in range(n_items)]
    ratings = []
    for u, cu in enumerate(users):
        for j, dj in enumerate(items):
            s = cu[0] * dj[0] + cu[1] * dj[1]
            ratings.append((u, j, float(min(5, max(1, round(3 + 2 * s))))))
    return users, items, ratings


def _subset(users, ratings, ids):
    index = {u: i for i, u in enumerate(ids)}
    return [users[u] for u in ids], [(index[u], j, y) for u, j, y in ratings if u in index]


def test_train_score_roundtrip():
    rng = random.Random(7)
    users, items, ratings = _split_users(60, 12, rng)
    train_users, train_ratings = _subset(users, ratings, list(range(0, 40)))
    valid_users, valid_ratings = _subset(users, ratings, list(range(40, 50)))
    test_users, _ = _subset(users, ratings, list(range(50, 60)))

    for method in ("lm", "lm-mf"):
        model = rf.train(
            method, train_ratings, train_users, items, valid_ratings, valid_users,
            max_trees=60, rank=2, max_leaves=8, min_leaf_fraction=0.05, seed=3,
        )
        assert model.model_type == method
        scores = model.score(test_users, items)
        assert len(scores) == len(test_users) and len(scores[0]) == len(items)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "model.json"
            model.save(str(path))
            again = rf.Model.load(str(path))
            assert again.n_trees == model.n_trees
            assert again.score(test_users, items) == scores


def test_bad_input():
    try:
        rf.ndcg_at_k([1.0], [1.0, 2.0], 1)
    except ValueError:
        pass
    else:
        raise AssertionError("length mismatch accepted")
    try:
        rf.Model.load("/nonexistent/model.json")
    except OSError:
        pass
    else:
        raise AssertionError("missing file accepted")


if __name__ == "__main__":
    test_metrics()
    test_train_score_roundtrip()
    test_bad_input()
    print("ok")
