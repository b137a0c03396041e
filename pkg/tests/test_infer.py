import dataclasses

import numpy as np
import pytest
import torch

from bankshot import (ConfigError, SamplingConfig, adapt, build_prototypes,
                      classify_episode, init_adapter, init_prompts, predict,
                      predict_scores, sample_episode, similarity_vector)
from bankshot.ops import to_t


def episode_and_model(bank, n_way=3, k_shot=2, qpc=4, seed=0, mix=(0.2, 0.8)):
    cfg = SamplingConfig(mode="meta_train_base", n_way=n_way, k_shot=k_shot,
                         queries_per_class=qpc)
    ep = sample_episode(bank, cfg, np.random.default_rng(seed))
    adapter = init_adapter(bank.visual_dim, 8, seed=seed + 1, mix_init=mix)
    prompts = init_prompts(k_shot, 4, bank.embed_dim, seed=seed + 2)
    return ep, adapter, prompts


def test_single_shot_prototype_is_the_support_embedding(tiny_bank):
    ep, adapter, prompts = episode_and_model(tiny_bank, k_shot=1)
    protos = build_prototypes(ep, tiny_bank, adapter, prompts)
    sup = adapt(to_t(tiny_bank.features[ep.support]), adapter)
    expected = sup / torch.linalg.vector_norm(sup, dim=-1, keepdim=True)
    assert torch.allclose(protos.vision, expected.detach(), atol=1e-12, rtol=0)


def test_prototypes_invariant_to_shot_order(tiny_bank):
    ep, adapter, prompts = episode_and_model(tiny_bank, k_shot=3)
    # reverse the shots within each class; class-major grouping is preserved
    reordered = np.concatenate([ep.support[c * 3:(c + 1) * 3][::-1]
                                for c in range(ep.n_way)])
    flipped = dataclasses.replace(ep, support=reordered)
    a = build_prototypes(ep, tiny_bank, adapter, prompts)
    b = build_prototypes(flipped, tiny_bank, adapter, prompts)
    assert torch.allclose(a.vision, b.vision, atol=1e-12, rtol=0)
    # text prototypes average over the same shot blocks regardless of sample order
    assert torch.allclose(a.text, b.text, atol=1e-12, rtol=0)


def test_two_shot_prototype_hand_computed(tiny_bank):
    ep, adapter, prompts = episode_and_model(tiny_bank, k_shot=2)
    protos = build_prototypes(ep, tiny_bank, adapter, prompts)
    with torch.no_grad():
        u = adapt(to_t(tiny_bank.features[ep.support[0]]), adapter).numpy()
        v = adapt(to_t(tiny_bank.features[ep.support[1]]), adapter).numpy()
    mean = (u + v) / 2.0
    expected = mean / np.linalg.norm(mean)
    assert np.abs(protos.vision[0].detach().numpy() - expected).max() < 1e-12


def test_similarity_vector_matches_cosine_oracle(tiny_bank):
    ep, adapter, prompts = episode_and_model(tiny_bank, seed=5)
    protos = build_prototypes(ep, tiny_bank, adapter, prompts)
    row = int(ep.query[0])
    d = similarity_vector(row, protos, tiny_bank, adapter)
    assert d.shape == (2 * ep.n_way,)
    assert np.all(d <= 1.0 + 1e-12) and np.all(d >= -1.0 - 1e-12)
    # straight-line cosine oracle
    with torch.no_grad():
        xa = adapt(to_t(tiny_bank.features[row]), adapter).numpy()
    xcv = tiny_bank.features[row] @ tiny_bank.visual_proj
    xcv /= np.linalg.norm(xcv)
    pv = protos.vision.detach().numpy()
    pt = protos.text.detach().numpy()
    want_vis = pv @ (xa / np.linalg.norm(xa))
    want_cross = pt @ xcv
    assert np.abs(d[:ep.n_way] - want_vis).max() < 1e-12
    assert np.abs(d[ep.n_way:] - want_cross).max() < 1e-12


def test_query_equal_to_lone_support(tiny_bank):
    ep, adapter, prompts = episode_and_model(tiny_bank, k_shot=1, mix=(0.0, 1.0))
    protos = build_prototypes(ep, tiny_bank, adapter, prompts)
    d = similarity_vector(int(ep.support[2]), protos, tiny_bank, adapter)
    assert d[2] == pytest.approx(1.0, abs=1e-12)


def test_predict_modes():
    d = np.array([0.1, 0.9, 0.2, 0.5, 0.1, 0.4])  # 3-way, vision half first
    p = predict(d, "vision_only")
    assert p.predicted == 1
    assert np.array_equal(p.vision_sims, d[:3])
    assert np.array_equal(p.cross_sims, d[3:])
    assert predict(d, "cross_modal_only").predicted == 0
    # uniform vision half: fused_logsum must agree with the cross-modal argmax
    flat = np.array([0.3, 0.3, 0.3, 0.5, 0.1, 0.4])
    assert predict(flat, "fused_logsum", temperature=0.07).predicted == 0
    shifted = flat + np.array([0.2] * 3 + [-0.4] * 3)
    assert predict(shifted, "fused_logsum", temperature=0.07).predicted == 0


def test_predict_argmax_shift_invariance():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.uniform(-1, 1, size=8)  # 4-way
        base_v = predict(d, "vision_only").predicted
        base_c = predict(d, "cross_modal_only").predicted
        base_f = predict(d, "fused_logsum", temperature=0.07).predicted
        shifted = d + np.concatenate([np.full(4, 0.37), np.full(4, -0.21)])
        assert predict(shifted, "vision_only").predicted == base_v
        assert predict(shifted, "cross_modal_only").predicted == base_c
        assert predict(shifted, "fused_logsum", temperature=0.07).predicted == base_f


def test_fused_nb_single_shot_exact_match():
    rng = np.random.default_rng(1)
    support_d = rng.uniform(-1, 1, size=(3, 6))
    labels = np.array([0, 1, 2])
    for k in range(3):
        p = predict(support_d[k], "fused_nb", support_d=support_d, support_labels=labels)
        assert p.predicted == k  # zero distance to its own class mean


def test_fused_nb_matches_gaussian_oracle_with_pooled_variance():
    rng = np.random.default_rng(2)
    n_way, per_class, dims = 3, 4, 6
    labels = np.repeat(np.arange(n_way), per_class)
    support_d = rng.normal(size=(n_way * per_class, dims))
    query = rng.normal(size=(2, dims))
    scores = predict_scores(query, "fused_nb", support_d=support_d,
                            support_labels=labels)
    # independent naive Bayes oracle
    means = np.stack([support_d[labels == k].mean(axis=0) for k in range(n_way)])
    resid = support_d - means[labels]
    var = np.maximum((resid ** 2).sum(axis=0) / (len(labels) - n_way), 1e-4)
    for q in range(2):
        for k in range(n_way):
            want = -0.5 * (((query[q] - means[k]) ** 2) / var
                           + np.log(2 * np.pi * var)).sum()
            assert scores[q, k] == pytest.approx(want, abs=1e-12)


def test_variance_floor_applies():
    labels = np.array([0, 0, 1, 1])
    support_d = np.array([[1.0, 0.5, 0.2, 0.9],
                          [1.0, 0.7, 0.2, 0.8],
                          [0.0, 0.1, 0.2, 0.4],
                          [0.0, 0.3, 0.2, 0.5]])
    # dims 0 and 2 have zero within-class spread: floored, not divided by zero
    scores = predict_scores(np.array([[0.5, 0.4, 0.2, 0.6]]), "fused_nb",
                            support_d=support_d, support_labels=labels)
    assert np.all(np.isfinite(scores))


def test_mode_errors():
    d = np.zeros(6)
    with pytest.raises(ConfigError, match="unknown inference mode"):
        predict(d, "mystery")
    with pytest.raises(ConfigError, match="support"):
        predict(d, "fused_nb")
    with pytest.raises(ConfigError, match="temperature"):
        predict(d, "fused_logsum")


def test_classify_episode_perfect_bank():
    import bankshot
    spec = bankshot.SyntheticBankSpec(
        n_classes=6, samples_per_class=10, visual_dim=16, text_dim=32, cross_dim=12,
        embed_dim=16, semantic_dim=4, vision_only_dim=4, noise_sigma=0.0,
        cross_modal_coupling=1.0, seed=3)
    bank = bankshot.generate_synthetic_bank(spec)
    cfg = SamplingConfig(mode="meta_test_novel", n_way=2, k_shot=1, queries_per_class=3)
    ep = sample_episode(bank, cfg, np.random.default_rng(4))
    adapter = init_adapter(bank.visual_dim, 8, seed=5, mix_init=(0.0, 1.0))
    prompts = init_prompts(1, 4, bank.embed_dim, seed=6)
    result = classify_episode(ep, bank, adapter, prompts)
    for mode, acc in result["accuracy"].items():
        assert acc == 1.0, mode
