import numpy as np
import pytest
import torch

from bankshot import (EmbeddingBank, FrozenTextEncoder, SyntheticBankSpec,
                      generate_synthetic_bank, save_bank)

torch.set_num_threads(1)

TINY_SPEC = SyntheticBankSpec(
    n_classes=10, samples_per_class=20, visual_dim=16, text_dim=32, cross_dim=12,
    embed_dim=16, semantic_dim=4, vision_only_dim=4, noise_sigma=0.8,
    cross_modal_coupling=0.9, seed=5)

# Operating point for the directional acceptance checks; noise calibrated so
# both single-space accuracies land inside the required band after training.
ACCEPT_SPEC = SyntheticBankSpec(
    n_classes=20, samples_per_class=50, visual_dim=32, text_dim=64, cross_dim=24,
    embed_dim=32, semantic_dim=8, vision_only_dim=8, noise_sigma=1.1,
    cross_modal_coupling=0.9, seed=100)


@pytest.fixture(scope="session")
def tiny_bank():
    return generate_synthetic_bank(TINY_SPEC)


@pytest.fixture(scope="session")
def tiny_bank_path(tiny_bank, tmp_path_factory):
    path = tmp_path_factory.mktemp("banks") / "tiny.sgvb"
    save_bank(tiny_bank, path)
    return path


@pytest.fixture(scope="session")
def accept_bank():
    return generate_synthetic_bank(ACCEPT_SPEC)


@pytest.fixture(scope="session")
def accept_bank_path(accept_bank, tmp_path_factory):
    path = tmp_path_factory.mktemp("banks") / "accept.sgvb"
    save_bank(accept_bank, path)
    return path


def make_manual_bank(visual_dim=6, cross_dim=6, n_classes=3, per_class=4,
                     seed=9, identity_proj=False, precomputed_text=False,
                     embed_dim=8, text_dim=10, prompt_len=2):
    """Hand-built bank for tests that need full control over the tensors."""
    rng = np.random.default_rng(seed)
    n = n_classes * per_class
    features = rng.standard_normal((n, visual_dim))
    class_ids = list(range(n_classes))
    class_emb = rng.standard_normal((n_classes, embed_dim))
    if identity_proj:
        assert visual_dim == cross_dim
        proj = np.eye(visual_dim)
    else:
        proj = rng.standard_normal((visual_dim, cross_dim)) / np.sqrt(visual_dim)
    encoder = None
    class_text = None
    if precomputed_text:
        class_text = rng.standard_normal((n_classes, cross_dim))
    else:
        encoder = FrozenTextEncoder.from_seed(
            seed=seed + 1, prompt_len=prompt_len, embed_dim=embed_dim,
            text_dim=text_dim,
            text_proj=rng.standard_normal((text_dim, cross_dim)) / np.sqrt(text_dim))
    bank = EmbeddingBank(
        visual_dim=visual_dim, text_dim=text_dim, cross_dim=cross_dim,
        embed_dim=embed_dim,
        sample_ids=[f"s{i}" for i in range(n)],
        sample_classes=np.repeat(np.arange(n_classes, dtype=np.int64), per_class),
        features=features, class_ids=class_ids,
        class_names={c: f"c{c}" for c in class_ids},
        class_embeddings=class_emb, visual_proj=proj,
        text_encoder=encoder, class_text_embeddings=class_text)
    bank.validate()
    return bank
