import math

import numpy as np
import pytest
import torch

from bankshot import (ContractError, DegenerateFeatureError,
                      cross_modal_contrastive, direct_distillation,
                      episode_losses, implicit_distillation, init_adapter,
                      init_prompts, soft_cross_entropy, total_loss,
                      vision_contrastive, SamplingConfig, sample_episode)


# -- independent oracles, straight-line numpy ---------------------------------

def oracle_softmax(logits):
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def oracle_ce(sims, positive, temperature):
    p = oracle_softmax(np.asarray(sims) / temperature)
    return -math.log(p[positive])


def oracle_soft_ce(tea_logits, stu_logits, t):
    tea = oracle_softmax(np.asarray(tea_logits) / t)
    stu = oracle_softmax(np.asarray(stu_logits) / t)
    return -(tea * np.log(stu)).sum()


def oracle_kl(tea_logits, stu_logits, t):
    tea = oracle_softmax(np.asarray(tea_logits) / t)
    stu = oracle_softmax(np.asarray(stu_logits) / t)
    return (tea * (np.log(tea) - np.log(stu))).sum()


def vectors_with_sims(sims, dim=None):
    """Unit query + unit prototypes with prescribed query-prototype dots."""
    sims = np.asarray(sims, dtype=np.float64)
    n = len(sims)
    dim = dim or n + 1
    q = np.zeros(dim)
    q[0] = 1.0
    protos = np.zeros((n, dim))
    for j, s in enumerate(sims):
        protos[j, 0] = s
        protos[j, j + 1] = math.sqrt(1.0 - s * s)
    return torch.from_numpy(q), torch.from_numpy(protos)


# -- contrastive losses ---------------------------------------------------------


def test_uniform_similarities_give_log_n():
    for n in (2, 5, 9):
        q, protos = vectors_with_sims([0.4] * n)
        loss = cross_modal_contrastive(q, protos, [0], temperature=0.07)
        assert abs(float(loss) - math.log(n)) < 1e-12


def test_sharper_positive_lowers_loss():
    q1, p1 = vectors_with_sims([0.9, 0.0, 0.0])
    q2, p2 = vectors_with_sims([0.2, 0.0, 0.0])
    l1 = float(cross_modal_contrastive(q1, p1, [0], temperature=0.07))
    l2 = float(cross_modal_contrastive(q2, p2, [0], temperature=0.07))
    assert l1 < l2


def test_cross_modal_matches_oracle():
    sims = [0.9, 0.1, -0.2]
    q, protos = vectors_with_sims(sims)
    loss = float(cross_modal_contrastive(q, protos, [0], temperature=0.07))
    assert abs(loss - oracle_ce(sims, 0, 0.07)) < 1e-12


def test_vision_loss_renormalizes_query():
    sims = [0.5, -0.3, 0.1]
    q, protos = vectors_with_sims(sims)
    scaled = 3.7 * q  # cosine must ignore the query magnitude
    a = float(vision_contrastive(q, protos, [1], temperature=0.07))
    b = float(vision_contrastive(scaled, protos, [1], temperature=0.07))
    assert abs(a - b) < 1e-12
    assert abs(a - oracle_ce(sims, 1, 0.07)) < 1e-12


def test_vision_loss_zero_norm_rejected():
    _, protos = vectors_with_sims([0.1, 0.2])
    with pytest.raises(DegenerateFeatureError):
        vision_contrastive(torch.zeros(3, dtype=torch.float64), protos, [0], 0.07)


def test_non_unit_prototypes_rejected():
    q, protos = vectors_with_sims([0.3, 0.4])
    with pytest.raises(ContractError):
        cross_modal_contrastive(q, 1.1 * protos, [0], 0.07)


def test_loss_finite_at_extreme_logits():
    q, protos = vectors_with_sims([0.99, -0.99, 0.5])
    loss = float(cross_modal_contrastive(q, protos, [1], temperature=1e-4))
    assert math.isfinite(loss)  # logits near 1e4 must survive log-sum-exp


# -- distillation ---------------------------------------------------------------


def test_soft_ce_equals_teacher_entropy_at_match():
    rng = np.random.default_rng(0)
    logits = torch.from_numpy(rng.standard_normal(6))
    stu = logits.clone().requires_grad_(True)
    loss = soft_cross_entropy(logits, stu, kd_temperature=5.0)
    tea = oracle_softmax(logits.numpy() / 5.0)
    entropy = -(tea * np.log(tea)).sum()
    assert abs(float(loss.detach()) - entropy) < 1e-9
    loss.backward()
    assert float(stu.grad.abs().max()) < 1e-12


def test_soft_ce_matches_oracle():
    rng = np.random.default_rng(1)
    tea = rng.standard_normal(4)
    stu = rng.standard_normal(4)
    got = float(soft_cross_entropy(torch.from_numpy(tea), torch.from_numpy(stu), 5.0))
    assert abs(got - oracle_soft_ce(tea, stu, 5.0)) < 1e-12


def test_high_temperature_limit_is_log_n():
    rng = np.random.default_rng(2)
    tea = torch.from_numpy(rng.standard_normal(5))
    stu = torch.from_numpy(rng.standard_normal(5))
    loss = float(soft_cross_entropy(tea, stu, kd_temperature=1e12))
    assert abs(loss - math.log(5)) < 1e-9


def test_soft_ce_lower_bound_is_teacher_entropy():
    rng = np.random.default_rng(3)
    for _ in range(20):
        tea = rng.standard_normal(7)
        stu = rng.standard_normal(7)
        ce = oracle_soft_ce(tea, stu, 5.0)
        p = oracle_softmax(tea / 5.0)
        assert ce >= -(p * np.log(p)).sum() - 1e-12


def test_implicit_distillation_matches_oracle():
    rng = np.random.default_rng(4)
    dim, n = 8, 4
    cv = rng.standard_normal(dim)
    cv /= np.linalg.norm(cv)
    px = rng.standard_normal(dim)
    px /= np.linalg.norm(px)
    protos = rng.standard_normal((n, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    got = float(implicit_distillation(torch.from_numpy(cv), torch.from_numpy(px),
                                      torch.from_numpy(protos), 0.07, 5.0))
    want = oracle_soft_ce((protos @ cv) / 0.07, (protos @ px) / 0.07, 5.0)
    assert abs(got - want) < 1e-12


def test_direct_distillation_properties():
    rng = np.random.default_rng(5)
    dim, n = 6, 5
    cv = rng.standard_normal(dim)
    cv /= np.linalg.norm(cv)
    tp = rng.standard_normal((n, dim))
    tp /= np.linalg.norm(tp, axis=1, keepdims=True)
    # matched distributions: student prototypes arranged to reproduce the
    # teacher similarities in vision space
    adapted = torch.from_numpy(cv.copy())
    loss0 = float(direct_distillation(torch.from_numpy(cv), adapted,
                                      torch.from_numpy(tp), torch.from_numpy(tp),
                                      0.07, 5.0))
    assert abs(loss0) < 1e-12
    # generic case: nonnegative and equal to the straight-line KL oracle
    vp = rng.standard_normal((n, dim))
    vp /= np.linalg.norm(vp, axis=1, keepdims=True)
    av = rng.standard_normal(dim)
    loss = float(direct_distillation(torch.from_numpy(cv), torch.from_numpy(av),
                                     torch.from_numpy(tp), torch.from_numpy(vp),
                                     0.07, 5.0))
    want = oracle_kl((tp @ cv) / 0.07, (vp @ (av / np.linalg.norm(av))) / 0.07, 5.0)
    assert loss >= 0
    assert abs(loss - want) < 1e-12


# -- totals and batch behavior ----------------------------------------------------


def test_total_is_sum_of_enabled_terms(tiny_bank):
    cfg = SamplingConfig(mode="meta_train_base", n_way=3, k_shot=2, queries_per_class=4)
    ep = sample_episode(tiny_bank, cfg, np.random.default_rng(0))
    adapter = init_adapter(tiny_bank.visual_dim, 8, seed=1)
    prompts = init_prompts(2, 4, tiny_bank.embed_dim, seed=2)
    comps = episode_losses(tiny_bank, ep, adapter, prompts)
    a, b, c = (float(comps[k].detach()) for k in ("cross_modal", "vision", "distillation"))
    assert abs(float(total_loss(comps).detach()) - (a + b + c)) < 1e-12
    partial = episode_losses(tiny_bank, ep, adapter, prompts, enable_distillation=False)
    assert set(partial) == {"cross_modal", "vision"}
    assert abs(float(total_loss(partial).detach()) - (a + b)) < 1e-12
    only_cm = episode_losses(tiny_bank, ep, adapter, prompts,
                             enable_vision=False, enable_distillation=False)
    assert set(only_cm) == {"cross_modal"}
    assert abs(float(total_loss(only_cm).detach()) - a) < 1e-12


def test_query_order_invariance(tiny_bank):
    import dataclasses
    cfg = SamplingConfig(mode="meta_train_base", n_way=3, k_shot=1, queries_per_class=5)
    ep = sample_episode(tiny_bank, cfg, np.random.default_rng(1))
    adapter = init_adapter(tiny_bank.visual_dim, 8, seed=3)
    prompts = init_prompts(1, 4, tiny_bank.embed_dim, seed=4)
    perm = np.random.default_rng(2).permutation(len(ep.query))
    shuffled = dataclasses.replace(ep, query=ep.query[perm],
                                   query_labels=ep.query_labels[perm])
    a = episode_losses(tiny_bank, ep, adapter, prompts)
    b = episode_losses(tiny_bank, shuffled, adapter, prompts)
    for key in a:
        assert abs(float(a[key].detach()) - float(b[key].detach())) < 1e-12


def test_identity_adapter_vision_loss_equals_raw_feature_loss(tiny_bank):
    cfg = SamplingConfig(mode="meta_train_base", n_way=3, k_shot=2, queries_per_class=4)
    ep = sample_episode(tiny_bank, cfg, np.random.default_rng(5))
    adapter = init_adapter(tiny_bank.visual_dim, 8, seed=6, mix_init=(0.0, 1.0))
    prompts = init_prompts(2, 4, tiny_bank.embed_dim, seed=7)
    got = float(episode_losses(tiny_bank, ep, adapter, prompts,
                               enable_cross_modal=False,
                               enable_distillation=False)["vision"].detach())
    # straight-line oracle on the raw frozen features
    feats = tiny_bank.features
    protos = []
    for local in range(ep.n_way):
        rows = ep.support[local * ep.k_shot:(local + 1) * ep.k_shot]
        mean = feats[rows].mean(axis=0)
        protos.append(mean / np.linalg.norm(mean))
    protos = np.stack(protos)
    losses = []
    for row, label in zip(ep.query, ep.query_labels):
        x = feats[row] / np.linalg.norm(feats[row])
        losses.append(oracle_ce(protos @ x, int(label), tiny_bank.temperature))
    assert abs(got - float(np.mean(losses))) < 1e-12
