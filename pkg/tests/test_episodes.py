import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bankshot import (SamplingConfig, SamplingError, all_class_episode,
                      all_class_split, build_labeled_pool, sample_episode)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_standard_episode_shapes(tiny_bank):
    cfg = SamplingConfig(mode="meta_train_base", n_way=5, k_shot=1, queries_per_class=15)
    ep = sample_episode(tiny_bank, cfg, rng())
    assert len(ep.support) == 5
    assert len(ep.query) == 75
    assert not set(ep.support.tolist()) & set(ep.query.tolist())


def test_self_support_query_equals_support(tiny_bank):
    cfg = SamplingConfig(mode="self_support", n_way=4, k_shot=2, queries_per_class=1)
    ep = sample_episode(tiny_bank, cfg, rng(3))
    assert len(ep.support) == 8
    assert sorted(ep.query.tolist()) == sorted(ep.support.tolist())


def test_determinism(tiny_bank):
    cfg = SamplingConfig(mode="meta_test_novel", n_way=3, k_shot=2, queries_per_class=4)
    e1 = sample_episode(tiny_bank, cfg, rng(42))
    e2 = sample_episode(tiny_bank, cfg, rng(42))
    assert e1.class_ids == e2.class_ids
    assert np.array_equal(e1.support, e2.support)
    assert np.array_equal(e1.query, e2.query)


def test_insufficient_classes(tiny_bank):
    cfg = SamplingConfig(mode="meta_test_novel", n_way=50, k_shot=1, queries_per_class=1)
    with pytest.raises(SamplingError, match="50"):
        sample_episode(tiny_bank, cfg, rng())


def test_insufficient_samples(tiny_bank):
    cfg = SamplingConfig(mode="meta_train_base", n_way=2, k_shot=10, queries_per_class=15)
    with pytest.raises(SamplingError, match="needs"):
        sample_episode(tiny_bank, cfg, rng())


def test_class_balance_and_shot_order(tiny_bank):
    cfg = SamplingConfig(mode="meta_train_base", n_way=4, k_shot=3, queries_per_class=5)
    ep = sample_episode(tiny_bank, cfg, rng(7))
    sup_classes = tiny_bank.sample_classes[ep.support]
    for local, cid in enumerate(ep.class_ids):
        assert np.all(sup_classes[local * 3:(local + 1) * 3] == cid)
        assert int((tiny_bank.sample_classes[ep.query] == cid).sum()) == 5
    assert ep.shot_indices.tolist() == [0, 1, 2] * 4


def test_coverage_over_many_episodes(tiny_bank):
    cfg = SamplingConfig(mode="meta_train_base", n_way=2, k_shot=1, queries_per_class=2)
    seen = set()
    g = rng(0)
    for _ in range(200):
        seen.update(sample_episode(tiny_bank, cfg, g).class_ids)
    assert seen == set(tiny_bank.classes_in_split("base"))


def test_split_respected(tiny_bank):
    cfg = SamplingConfig(mode="meta_test_novel", n_way=3, k_shot=1, queries_per_class=2)
    novel = set(tiny_bank.classes_in_split("novel_test"))
    for seed in range(10):
        ep = sample_episode(tiny_bank, cfg, rng(seed))
        assert set(ep.class_ids) <= novel


def test_all_class_split_counts(tiny_bank):
    support, test_rows = all_class_split(tiny_bank, shots=16, seed=1)
    assert len(support) == 16 * tiny_bank.n_classes
    roles = [tiny_bank.sample_roles[int(r)] for r in support]
    assert set(roles) == {"train"}
    assert np.array_equal(test_rows, tiny_bank.sample_indices_with_role("test"))


def test_all_class_split_deterministic(tiny_bank):
    s1, _ = all_class_split(tiny_bank, shots=4, seed=9)
    s2, _ = all_class_split(tiny_bank, shots=4, seed=9)
    assert np.array_equal(s1, s2)


def test_all_class_split_too_many_shots(tiny_bank):
    with pytest.raises(SamplingError, match="train samples"):
        all_class_split(tiny_bank, shots=1000, seed=0)


def test_all_class_episode_modes(tiny_bank):
    support, test_rows = all_class_split(tiny_bank, shots=2, seed=0)
    train_ep = all_class_episode(tiny_bank, support)
    assert np.array_equal(train_ep.query, train_ep.support)
    eval_ep = all_class_episode(tiny_bank, support, query=test_rows)
    assert len(eval_ep.query) == len(test_rows)
    assert not set(eval_ep.support.tolist()) & set(eval_ep.query.tolist())


def test_labeled_pool_episodes(tiny_bank):
    pool = build_labeled_pool(tiny_bank, k_shot=2, seed=4)
    cfg = SamplingConfig(mode="meta_test_novel", n_way=3, k_shot=2,
                         queries_per_class=4, labeled_pool=pool)
    ep = sample_episode(tiny_bank, cfg, rng(1))
    pool_rows = {r for rows in pool.values() for r in rows}
    assert set(ep.support.tolist()) <= pool_rows
    assert not set(ep.query.tolist()) & pool_rows
    self_cfg = SamplingConfig(mode="self_support", n_way=3, k_shot=2,
                              queries_per_class=1, labeled_pool=pool)
    sep = sample_episode(tiny_bank, self_cfg, rng(1))
    assert set(sep.query.tolist()) <= pool_rows


@settings(max_examples=25, deadline=None)
@given(n_way=st.integers(2, 5), k_shot=st.integers(1, 3),
       qpc=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_episode_invariants_property(tiny_bank, n_way, k_shot, qpc, seed):
    cfg = SamplingConfig(mode="meta_train_base", n_way=n_way, k_shot=k_shot,
                         queries_per_class=qpc)
    ep = sample_episode(tiny_bank, cfg, rng(seed))
    assert len(set(ep.class_ids)) == n_way
    assert len(ep.support) == n_way * k_shot
    assert len(ep.query) == n_way * qpc
    assert not set(ep.support.tolist()) & set(ep.query.tolist())
    for row, label in zip(ep.query, ep.query_labels):
        assert tiny_bank.sample_classes[row] == ep.class_ids[label]
