"""Batch plans and in-batch selection rules."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pt4al import learner
from pt4al.data import Image, Sample
from pt4al.learner import LearnerConfig
from pt4al.pretext import LossRecord
from pt4al.sampler import (
    ORDER_HIGH_FIRST,
    ORDER_LOW_FIRST,
    BatchPlan,
    QueryResult,
    build_batch_plan,
    build_random_plan,
    entropy_sample,
    random_sample,
    uncertainty_sample,
    uniform_first_sample,
    write_batch_plan,
    write_query_results,
)


def records_from(losses):
    return [LossRecord(i, float(l)) for i, l in enumerate(losses)]


def check_plan_invariants(plan: BatchPlan, records):
    ids = [sid for batch in plan.batches for sid in batch]
    assert sorted(ids) == sorted(r.sample_id for r in records)
    sizes = [len(b) for b in plan.batches]
    assert max(sizes) - min(sizes) <= 1
    assert sizes == sorted(sizes, reverse=True)  # remainder goes to earliest
    loss_by_id = {r.sample_id: r.loss for r in records}
    if plan.order == ORDER_HIGH_FIRST:
        for a, b in zip(plan.batches, plan.batches[1:]):
            assert min(loss_by_id[i] for i in a) >= max(loss_by_id[i] for i in b)
    elif plan.order == ORDER_LOW_FIRST:
        for a, b in zip(plan.batches, plan.batches[1:]):
            assert max(loss_by_id[i] for i in a) <= min(loss_by_id[i] for i in b)


# ---------------------------------------------------------------------------
# batch plans
# ---------------------------------------------------------------------------

def test_plan_ten_records_two_batches():
    records = records_from([10, 9, 8, 7, 6, 5, 4, 3, 2, 1])
    plan = build_batch_plan(records, 2)
    assert plan.batches[0] == [0, 1, 2, 3, 4]
    assert plan.batches[1] == [5, 6, 7, 8, 9]


def test_plan_low_loss_first_reverses():
    records = records_from([10, 9, 8, 7, 6, 5, 4, 3, 2, 1])
    plan = build_batch_plan(records, 2, ORDER_LOW_FIRST)
    assert plan.batches[0] == [9, 8, 7, 6, 5]
    assert plan.batches[1] == [4, 3, 2, 1, 0]


def test_plan_all_equal_losses_orders_by_id():
    records = [LossRecord(i, 1.0) for i in (5, 3, 9, 1, 7, 0)]
    plan = build_batch_plan(records, 3)
    assert plan.batches == [[0, 1], [3, 5], [7, 9]]
    check_plan_invariants(plan, records)


def test_plan_full_scale_shape_equal_batches():
    rng = np.random.default_rng(0)
    records = records_from(rng.random(50_000))
    plan = build_batch_plan(records, 10)
    assert [len(b) for b in plan.batches] == [5000] * 10
    check_plan_invariants(plan, records)


def test_plan_remainder_to_earliest_batches():
    records = records_from(np.arange(10, 0, -1))
    plan = build_batch_plan(records, 3)
    assert [len(b) for b in plan.batches] == [4, 3, 3]
    check_plan_invariants(plan, records)


def test_plan_rejects_bad_batch_counts():
    records = records_from([1.0, 2.0])
    with pytest.raises(ValueError):
        build_batch_plan(records, 0)
    with pytest.raises(ValueError):
        build_batch_plan(records, 3)
    with pytest.raises(ValueError):
        build_batch_plan(records, 1, "sideways")


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0, 2.0, 2.0, 3.5]) | st.floats(0, 100),
             min_size=1, max_size=60),
    st.integers(min_value=1, max_value=12),
    st.sampled_from([ORDER_HIGH_FIRST, ORDER_LOW_FIRST]),
)
def test_plan_invariants_property(losses, n_batches, order):
    if n_batches > len(losses):
        n_batches = len(losses)
    records = records_from(losses)
    plan = build_batch_plan(records, n_batches, order)
    check_plan_invariants(plan, records)


def test_random_plan_is_partition_and_deterministic():
    ids = list(range(40, 90))
    a = build_random_plan(ids, 7, seed=3)
    b = build_random_plan(ids, 7, seed=3)
    assert a.batches == b.batches
    sizes = [len(x) for x in a.batches]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(sid for batch in a.batches for sid in batch) == ids


def test_plan_csv_export(tmp_path):
    plan = build_batch_plan(records_from([3.0, 2.0, 1.0]), 2)
    path = tmp_path / "plan.csv"
    write_batch_plan(path, plan)
    lines = path.read_text().splitlines()
    assert lines[0] == "sample_id,batch_index,rank_in_batch"
    assert lines[1] == "0,0,0"
    assert lines[-1] == "2,1,0"


# ---------------------------------------------------------------------------
# uniform first-iteration sampling
# ---------------------------------------------------------------------------

def test_uniform_even_positions():
    batch = list(range(100, 110))
    q = uniform_first_sample(batch, 5)
    assert q.selected == [100, 102, 104, 106, 108]
    assert q.scores == [0.0, 2.0, 4.0, 6.0, 8.0]


def test_uniform_whole_batch():
    batch = [4, 9, 2]
    q = uniform_first_sample(batch, 3)
    assert q.selected == batch


def test_uniform_k_one_takes_first():
    q = uniform_first_sample([7, 5, 3], 1)
    assert q.selected == [7]


def test_uniform_rejects_bad_k():
    with pytest.raises(ValueError):
        uniform_first_sample([1, 2], 3)
    with pytest.raises(ValueError):
        uniform_first_sample([1, 2], 0)


# ---------------------------------------------------------------------------
# confidence / entropy / random selection
# ---------------------------------------------------------------------------

def proba_state(scale=10.0, classes=3):
    """Linear model over a (1, classes, 1) image: logits = scale * pixel row."""
    cfg = LearnerConfig(input_shape=(1, classes, 1), n_classes=classes, hidden=(), init_scale=0.0)
    state = learner.init_learner(cfg)
    state.weights[0] = np.eye(classes) * scale
    return state


def sample_with_row(sid, row):
    arr = np.asarray(row, dtype=np.float64).reshape(1, len(row), 1)
    return Sample(sid, Image(arr), None)


def test_uncertainty_picks_lowest_max_prob():
    state = proba_state(scale=8.0, classes=2)
    # max-probs roughly [0.9, 0.4(ish), 0.7(ish), 0.5]: craft logit gaps
    rows = {1: [1.0, 0.0], 2: [0.52, 0.48], 3: [0.62, 0.38], 4: [0.5, 0.5]}
    batch = [sample_with_row(sid, row) for sid, row in rows.items()]
    q = uncertainty_sample(batch, state, 2)
    assert q.selected == [4, 2]  # conf 0.5 then ~0.58


def test_uncertainty_tie_break_by_id_with_zero_model():
    cfg = LearnerConfig(input_shape=(1, 3, 1), n_classes=3, hidden=(), init_scale=0.0)
    state = learner.init_learner(cfg)
    rng = np.random.default_rng(0)
    batch = [sample_with_row(sid, rng.random(3)) for sid in (9, 3, 7, 1)]
    q = uncertainty_sample(batch, state, 2)
    assert q.selected == [1, 3]
    assert q.scores == [pytest.approx(1 / 3), pytest.approx(1 / 3)]


def brute_force_uncertainty(batch, state, k):
    probs = learner.predict_proba_batch(state, np.stack([s.image.pixels for s in batch]))
    ranked = sorted(((float(p.max()), s.id) for p, s in zip(probs, batch)))
    return [sid for _, sid in ranked[:k]]


def test_uncertainty_matches_brute_force_on_200_samples():
    rng = np.random.default_rng(5)
    state = proba_state(scale=4.0, classes=4)
    batch = [sample_with_row(sid, rng.random(4)) for sid in rng.permutation(500)[:200]]
    for k in (1, 7, 50, 200):
        q = uncertainty_sample(batch, state, k)
        assert q.selected == brute_force_uncertainty(batch, state, k)


def test_uncertainty_exhaustive_small_batches_with_ties():
    rng = np.random.default_rng(11)
    state = proba_state(scale=6.0, classes=3)
    for n in range(1, 9):
        for k in range(1, n + 1):
            for trial in range(40):
                # Half the trials quantize pixels so equal confidences occur.
                if trial % 2 == 0:
                    rows = rng.integers(0, 3, size=(n, 3)) / 2.0
                else:
                    rows = rng.random((n, 3))
                ids = [int(i) for i in rng.permutation(50)[:n]]
                batch = [sample_with_row(sid, row) for sid, row in zip(ids, rows)]
                q = uncertainty_sample(batch, state, k)
                assert q.selected == brute_force_uncertainty(batch, state, k)


def test_entropy_prefers_uniform_posterior():
    state = proba_state(scale=10.0, classes=2)
    batch = [sample_with_row(1, [1.0, 0.5]), sample_with_row(2, [0.5, 0.5])]
    q = entropy_sample(batch, state, 1)
    assert q.selected == [2]
    assert q.scores[0] == pytest.approx(math.log(2.0))


def test_entropy_uniform_posterior_equals_ln_c():
    for classes in (2, 4, 5):
        cfg = LearnerConfig(input_shape=(1, classes, 1), n_classes=classes, hidden=(), init_scale=0.0)
        state = learner.init_learner(cfg)
        batch = [sample_with_row(3, np.zeros(classes))]
        q = entropy_sample(batch, state, 1)
        assert q.scores[0] == pytest.approx(math.log(classes), abs=1e-12)


def test_random_sample_deterministic_and_without_replacement():
    ids = list(range(30))
    a = random_sample(ids, 10, seed=42)
    b = random_sample(ids, 10, seed=42)
    assert a.selected == b.selected
    assert len(set(a.selected)) == 10
    c = random_sample(ids, 10, seed=43)
    assert c.selected != a.selected


def test_selection_rejects_bad_k():
    state = proba_state()
    batch = [sample_with_row(0, [0.1, 0.2, 0.3])]
    for fn in (lambda: uncertainty_sample(batch, state, 2),
               lambda: entropy_sample(batch, state, 0),
               lambda: random_sample([1], 2, 0)):
        with pytest.raises(ValueError):
            fn()


def test_query_result_validates():
    with pytest.raises(ValueError):
        QueryResult(1, [3, 3])
    with pytest.raises(ValueError):
        QueryResult(1, [1, 2], [0.5])


def test_query_csv_export(tmp_path):
    path = tmp_path / "queries.csv"
    write_query_results(path, [QueryResult(1, [5, 2], [0.25, 0.5]), QueryResult(2, [9], [0.125])])
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,sample_id,score"
    assert lines[1] == "1,5,0.25"
    assert lines[3] == "2,9,0.125"
