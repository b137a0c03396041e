"""Embedding banks: the frozen, file-backed stand-in for a pre-trained model.

A bank carries everything the training pipeline consumes from upstream:
per-sample visual features (pre-projection), the frozen visual projection
into the joint cross-modal space, per-class name embeddings, a frozen text
pathway (either a small deterministic encoder stub or precomputed per-class
cross-modal text embeddings), and the pre-trained logit temperature.

Banks are immutable after load and safe to share across workers. See
FORMAT.md for the exact byte layout of the ``SGVB`` container.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tensorio import read_container, require_finite, write_container

BANK_MAGIC = b"SGVB"
BANK_VERSION = 1

SPLIT_NAMES = ("base", "novel_val", "novel_test")
ROLE_NAMES = ("train", "test")

DEFAULT_TEMPERATURE = 0.07


@dataclass(frozen=True)
class FrozenTextEncoder:
    """Deterministic two-layer tanh map from prompt tokens to text features.

    Input is the flattened concatenation of ``prompt_len`` prompt vectors and
    one class-name embedding (each ``embed_dim`` wide). Weights are fixed at
    construction; the same seed always yields the same weights. ``text_proj``
    maps text features into the cross-modal space.
    """

    seed: int
    prompt_len: int
    w1: np.ndarray  # [(prompt_len + 1) * embed_dim, hidden]
    b1: np.ndarray  # [hidden]
    w2: np.ndarray  # [hidden, text_dim]
    b2: np.ndarray  # [text_dim]
    text_proj: np.ndarray  # [text_dim, cross_dim]

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def text_dim(self) -> int:
        return self.w2.shape[1]

    @staticmethod
    def from_seed(seed: int, prompt_len: int, embed_dim: int, text_dim: int,
                  hidden_dim: int | None = None,
                  text_proj: np.ndarray | None = None) -> "FrozenTextEncoder":
        """Build encoder weights deterministically from ``seed``."""
        hidden_dim = hidden_dim or 2 * text_dim
        rng = np.random.default_rng(seed)
        in_dim = (prompt_len + 1) * embed_dim
        w1 = rng.standard_normal((in_dim, hidden_dim)) / np.sqrt(in_dim)
        b1 = 0.1 * rng.standard_normal(hidden_dim)
        w2 = rng.standard_normal((hidden_dim, text_dim)) / np.sqrt(hidden_dim)
        b2 = 0.1 * rng.standard_normal(text_dim)
        if text_proj is None:
            cross_dim = text_dim
            text_proj = rng.standard_normal((text_dim, cross_dim)) / np.sqrt(text_dim)
        return FrozenTextEncoder(seed=seed, prompt_len=prompt_len, w1=w1, b1=b1,
                                 w2=w2, b2=b2, text_proj=np.asarray(text_proj, dtype=np.float64))

    def text_features(self, flat_inputs: np.ndarray) -> np.ndarray:
        """Numpy forward pass (no projection). ``flat_inputs``: [n, input_dim]."""
        hidden = np.tanh(flat_inputs @ self.w1 + self.b1)
        return hidden @ self.w2 + self.b2


@dataclass
class EmbeddingBank:
    """Frozen features, projections, class embeddings, and temperature."""

    visual_dim: int
    text_dim: int
    cross_dim: int
    embed_dim: int
    sample_ids: list[str]
    sample_classes: np.ndarray          # [n] int64 class ids
    features: np.ndarray                # [n, visual_dim] f64
    class_ids: list[int]                # ascending
    class_names: dict[int, str]
    class_embeddings: np.ndarray        # [n_classes, embed_dim], row i <-> class_ids[i]
    visual_proj: np.ndarray             # [visual_dim, cross_dim]
    temperature: float = DEFAULT_TEMPERATURE
    text_encoder: FrozenTextEncoder | None = None
    class_text_embeddings: np.ndarray | None = None  # [n_classes, cross_dim], precomputed mode
    class_split: dict[int, str] | None = None
    sample_roles: list[str] | None = None
    _class_row: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._class_row = {cid: i for i, cid in enumerate(self.class_ids)}

    # -- structure ---------------------------------------------------------

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    @property
    def text_mode(self) -> str:
        return "stub" if self.text_encoder is not None else "precomputed"

    def class_row(self, class_id: int) -> int:
        try:
            return self._class_row[class_id]
        except KeyError:
            raise KeyError(f"unknown class id {class_id!r}") from None

    def samples_of_class(self, class_id: int) -> np.ndarray:
        return np.nonzero(self.sample_classes == class_id)[0]

    def classes_in_split(self, split: str | None) -> list[int]:
        """Class ids in the given split; all classes when split is None."""
        if split is None:
            return list(self.class_ids)
        if self.class_split is None:
            raise ValidationError("bank declares no class split")
        return [cid for cid in self.class_ids if self.class_split.get(cid) == split]

    def sample_indices_with_role(self, role: str) -> np.ndarray:
        if self.sample_roles is None:
            raise ValidationError("bank declares no per-sample train/test partition")
        mask = np.array([r == role for r in self.sample_roles])
        return np.nonzero(mask)[0]

    # -- invariants ----------------------------------------------------------

    def validate(self) -> None:
        for name in ("visual_dim", "text_dim", "cross_dim", "embed_dim"):
            if int(getattr(self, name)) <= 0:
                raise ValidationError(f"{name}: must be positive")
        n = len(self.sample_ids)
        if len(set(self.sample_ids)) != n:
            raise ValidationError("sample_ids: duplicates present")
        if self.sample_classes.shape != (n,):
            raise ValidationError(f"sample_classes: expected shape ({n},), got {self.sample_classes.shape}")
        if self.features.shape != (n, self.visual_dim):
            raise ValidationError(
                f"features: expected shape ({n}, {self.visual_dim}), got {self.features.shape}")
        require_finite("features", self.features)
        known = set(self.class_ids)
        missing = set(int(c) for c in self.sample_classes) - known
        if missing:
            raise ValidationError(f"sample_classes: ids {sorted(missing)} not in class table")
        if sorted(self.class_ids) != list(self.class_ids):
            raise ValidationError("class_ids: must be ascending")
        if self.class_embeddings.shape != (len(self.class_ids), self.embed_dim):
            raise ValidationError(
                f"class_embeddings: expected shape ({len(self.class_ids)}, {self.embed_dim}), "
                f"got {self.class_embeddings.shape}")
        require_finite("class_embeddings", self.class_embeddings)
        if self.visual_proj.shape != (self.visual_dim, self.cross_dim):
            raise ValidationError(
                f"visual_proj: expected shape ({self.visual_dim}, {self.cross_dim}), "
                f"got {self.visual_proj.shape}")
        require_finite("visual_proj", self.visual_proj)
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValidationError(f"temperature: must be positive, got {self.temperature}")
        if (self.text_encoder is None) == (self.class_text_embeddings is None):
            raise ValidationError("exactly one of text_encoder / class_text_embeddings must be set")
        if self.text_encoder is not None:
            enc = self.text_encoder
            if enc.input_dim != (enc.prompt_len + 1) * self.embed_dim:
                raise ValidationError(
                    f"text_encoder.w1: input dim {enc.input_dim} != (prompt_len+1)*embed_dim")
            if enc.b1.shape != (enc.hidden_dim,):
                raise ValidationError("text_encoder.b1: shape mismatch")
            if enc.w2.shape[0] != enc.hidden_dim or enc.b2.shape != (enc.text_dim,):
                raise ValidationError("text_encoder.w2/b2: shape mismatch")
            if enc.text_dim != self.text_dim:
                raise ValidationError(
                    f"text_encoder: text dim {enc.text_dim} != declared text_dim {self.text_dim}")
            if enc.text_proj.shape != (self.text_dim, self.cross_dim):
                raise ValidationError(
                    f"text_proj: expected shape ({self.text_dim}, {self.cross_dim}), "
                    f"got {enc.text_proj.shape}")
            for nm, arr in (("w1", enc.w1), ("b1", enc.b1), ("w2", enc.w2),
                            ("b2", enc.b2), ("text_proj", enc.text_proj)):
                require_finite(f"text_encoder.{nm}", arr)
        else:
            cte = self.class_text_embeddings
            if cte.shape != (len(self.class_ids), self.cross_dim):
                raise ValidationError(
                    f"class_text_embeddings: expected shape ({len(self.class_ids)}, {self.cross_dim}), "
                    f"got {cte.shape}")
            require_finite("class_text_embeddings", cte)
        if self.class_split is not None:
            for cid, sp in self.class_split.items():
                if cid not in known:
                    raise ValidationError(f"class_split: unknown class id {cid}")
                if sp not in SPLIT_NAMES:
                    raise ValidationError(f"class_split: bad split name {sp!r} for class {cid}")
        if self.sample_roles is not None:
            if len(self.sample_roles) != n:
                raise ValidationError("sample_roles: length mismatch with samples")
            bad = set(self.sample_roles) - set(ROLE_NAMES)
            if bad:
                raise ValidationError(f"sample_roles: bad role names {sorted(bad)}")

    # -- integrity ---------------------------------------------------------

    def frozen_hash(self) -> str:
        """SHA-256 over every frozen tensor, in a fixed documented order."""
        h = hashlib.sha256()
        parts: list[tuple[str, np.ndarray]] = [
            ("features", self.features),
            ("class_embeddings", self.class_embeddings),
            ("visual_proj", self.visual_proj),
        ]
        if self.text_encoder is not None:
            enc = self.text_encoder
            parts += [("stub_w1", enc.w1), ("stub_b1", enc.b1),
                      ("stub_w2", enc.w2), ("stub_b2", enc.b2),
                      ("text_proj", enc.text_proj)]
        if self.class_text_embeddings is not None:
            parts.append(("class_text_embeddings", self.class_text_embeddings))
        for name, arr in parts:
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


# -- serialization -----------------------------------------------------------


def save_bank(bank: EmbeddingBank, path) -> None:
    """Serialize a validated bank; two saves of the same bank are byte-identical."""
    bank.validate()
    meta = {
        "dims": {"visual": bank.visual_dim, "text": bank.text_dim,
                 "cross": bank.cross_dim, "class_emb": bank.embed_dim},
        "temperature": bank.temperature,
        "classes": [{"id": cid, "name": bank.class_names[cid],
                     "split": bank.class_split.get(cid) if bank.class_split else None}
                    for cid in bank.class_ids],
        "sample_ids": bank.sample_ids,
        "sample_classes": [int(c) for c in bank.sample_classes],
        "sample_roles": bank.sample_roles,
        "text_mode": bank.text_mode,
        "stub": None,
    }
    tensors = {
        "class_embeddings": bank.class_embeddings,
        "samples": bank.features,
        "visual_proj": bank.visual_proj,
    }
    if bank.text_encoder is not None:
        enc = bank.text_encoder
        meta["stub"] = {"seed": enc.seed, "prompt_len": enc.prompt_len, "hidden": enc.hidden_dim}
        tensors["stub_w1"] = enc.w1
        tensors["stub_b1"] = enc.b1
        tensors["stub_w2"] = enc.w2
        tensors["stub_b2"] = enc.b2
        tensors["text_proj"] = enc.text_proj
    else:
        tensors["class_text_embeddings"] = bank.class_text_embeddings
    write_container(path, BANK_MAGIC, BANK_VERSION, meta, tensors)


def load_bank(path) -> EmbeddingBank:
    """Load and fully validate a bank file."""
    version, meta, tensors = read_container(path, BANK_MAGIC)
    if version != BANK_VERSION:
        raise ValidationError(f"unsupported bank format version {version}")

    def need(key):
        if key not in meta:
            raise ValidationError(f"metadata: missing field '{key}'")
        return meta[key]

    dims = need("dims")
    for k in ("visual", "text", "cross", "class_emb"):
        if k not in dims:
            raise ValidationError(f"metadata: dims missing '{k}'")
    classes = need("classes")
    class_ids = [int(c["id"]) for c in classes]
    class_names = {int(c["id"]): str(c["name"]) for c in classes}
    split_entries = {int(c["id"]): c.get("split") for c in classes}
    class_split = ({cid: sp for cid, sp in split_entries.items() if sp is not None}
                   if any(sp is not None for sp in split_entries.values()) else None)

    def tensor(name):
        if name not in tensors:
            raise ValidationError(f"tensor '{name}' missing from container")
        return tensors[name]

    text_mode = need("text_mode")
    encoder = None
    class_text = None
    if text_mode == "stub":
        stub_meta = need("stub") or {}
        encoder = FrozenTextEncoder(
            seed=int(stub_meta.get("seed", 0)),
            prompt_len=int(stub_meta.get("prompt_len", 0)),
            w1=tensor("stub_w1"), b1=tensor("stub_b1"),
            w2=tensor("stub_w2"), b2=tensor("stub_b2"),
            text_proj=tensor("text_proj"),
        )
    elif text_mode == "precomputed":
        class_text = tensor("class_text_embeddings")
    else:
        raise ValidationError(f"metadata: unknown text_mode {text_mode!r}")

    bank = EmbeddingBank(
        visual_dim=int(dims["visual"]),
        text_dim=int(dims["text"]),
        cross_dim=int(dims["cross"]),
        embed_dim=int(dims["class_emb"]),
        sample_ids=[str(s) for s in need("sample_ids")],
        sample_classes=np.asarray(need("sample_classes"), dtype=np.int64),
        features=tensor("samples"),
        class_ids=class_ids,
        class_names=class_names,
        class_embeddings=tensor("class_embeddings"),
        visual_proj=tensor("visual_proj"),
        temperature=float(meta.get("temperature", DEFAULT_TEMPERATURE)),
        text_encoder=encoder,
        class_text_embeddings=class_text,
        class_split=class_split,
        sample_roles=list(meta["sample_roles"]) if meta.get("sample_roles") else None,
    )
    bank.validate()
    return bank


# -- synthetic banks ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticBankSpec:
    """Recipe for a desk-scale bank with controllable cross-modal structure.

    Each class gets a latent semantic vector; the visual mean combines a
    projection of that vector with an independent component living in a
    dedicated block of coordinates that the cross-modal projection cannot
    see. ``cross_modal_coupling`` controls how faithfully class-name
    embeddings reflect the semantic vector (1.0 = perfectly, 0.0 = noise).
    """

    n_classes: int = 20
    samples_per_class: int = 50
    visual_dim: int = 32
    text_dim: int = 64
    cross_dim: int = 24
    embed_dim: int = 32
    semantic_dim: int = 8
    vision_only_dim: int = 8
    noise_sigma: float = 0.5
    cross_modal_coupling: float = 0.9
    seed: int = 0
    prompt_len: int = 4

    def validate(self) -> None:
        for name in ("n_classes", "samples_per_class", "visual_dim", "text_dim",
                     "cross_dim", "embed_dim", "semantic_dim", "prompt_len"):
            if int(getattr(self, name)) <= 0:
                raise ValidationError(f"{name}: must be positive")
        if self.vision_only_dim < 0:
            raise ValidationError("vision_only_dim: must be >= 0")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma: must be >= 0")
        if not 0.0 <= self.cross_modal_coupling <= 1.0:
            raise ValidationError("cross_modal_coupling: must be in [0, 1]")
        if self.semantic_dim + self.vision_only_dim > self.visual_dim:
            raise ValidationError("semantic_dim + vision_only_dim exceeds visual_dim")
        if self.semantic_dim > min(self.embed_dim, self.cross_dim):
            raise ValidationError("semantic_dim exceeds embed_dim or cross_dim")


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q[:, :cols]


# Relative strength of the two visual signal blocks. The vision-only block is
# weighted up and the shared semantic injection down so that vision-space
# errors stay partly independent of cross-modal ones (the per-sample noise
# that reaches the cross space is the same noise that corrupts the semantic
# block, while the vision-only block draws fresh noise coordinates).
VISION_ONLY_SCALE = 1.5
VISION_SEMANTIC_SCALE = 0.75


def generate_synthetic_bank(spec: SyntheticBankSpec) -> EmbeddingBank:
    """Pure function of ``spec``: the same spec always yields the same bank."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C, spc = spec.n_classes, spec.samples_per_class
    sem, vo = spec.semantic_dim, spec.vision_only_dim

    latent = rng.standard_normal((C, sem))
    vis_basis = _orthonormal_columns(rng, spec.visual_dim - vo, sem)
    emb_basis = _orthonormal_columns(rng, spec.embed_dim, sem)
    vision_only = rng.standard_normal((C, vo)) if vo else np.zeros((C, 0))

    class_means = np.zeros((C, spec.visual_dim))
    class_means[:, :vo] = VISION_ONLY_SCALE * vision_only
    class_means[:, vo:] = VISION_SEMANTIC_SCALE * (latent @ vis_basis.T)

    # embedding noise scaled so both terms carry comparable energy
    emb_noise = rng.standard_normal((C, spec.embed_dim)) * np.sqrt(sem / spec.embed_dim)
    coupling = spec.cross_modal_coupling
    class_embeddings = coupling * (latent @ emb_basis.T) + (1.0 - coupling) * emb_noise

    noise = rng.standard_normal((C, spc, spec.visual_dim)) * spec.noise_sigma
    features = (class_means[:, None, :] + noise).reshape(C * spc, spec.visual_dim)

    visual_proj = np.zeros((spec.visual_dim, spec.cross_dim))
    visual_proj[vo:, :sem] = vis_basis
    if spec.cross_dim > sem:
        visual_proj[:, sem:] = 0.05 * rng.standard_normal((spec.visual_dim, spec.cross_dim - sem))

    stub_seed = int(rng.integers(0, 2**31 - 1))
    encoder = FrozenTextEncoder.from_seed(
        seed=stub_seed, prompt_len=spec.prompt_len, embed_dim=spec.embed_dim,
        text_dim=spec.text_dim, text_proj=np.zeros((spec.text_dim, spec.cross_dim)))

    # Solve the frozen text projection so that, at zero prompts, each class's
    # text pathway lands on the semantic content of its class embedding. This
    # plants cross-modal separability in the bank by construction.
    zero_prompt = np.zeros((C, encoder.input_dim))
    zero_prompt[:, spec.prompt_len * spec.embed_dim:] = class_embeddings
    stub_out = encoder.text_features(zero_prompt)                     # [C, text_dim]
    targets = np.zeros((C, spec.cross_dim))
    targets[:, :sem] = class_embeddings @ emb_basis                   # [C, sem]
    text_proj, *_ = np.linalg.lstsq(stub_out, targets, rcond=None)
    encoder = FrozenTextEncoder(seed=stub_seed, prompt_len=spec.prompt_len,
                                w1=encoder.w1, b1=encoder.b1, w2=encoder.w2,
                                b2=encoder.b2, text_proj=text_proj)

    n_base = C // 2
    n_val = (C - n_base) // 3
    class_split = {}
    for i in range(C):
        class_split[i] = ("base" if i < n_base
                          else "novel_val" if i < n_base + n_val
                          else "novel_test")

    n_test = max(1, spc // 5) if spc >= 2 else 0
    roles = []
    sample_ids = []
    sample_classes = np.repeat(np.arange(C, dtype=np.int64), spc)
    for c in range(C):
        for s in range(spc):
            sample_ids.append(f"c{c:03d}_s{s:03d}")
            roles.append("test" if s >= spc - n_test else "train")

    bank = EmbeddingBank(
        visual_dim=spec.visual_dim, text_dim=spec.text_dim,
        cross_dim=spec.cross_dim, embed_dim=spec.embed_dim,
        sample_ids=sample_ids, sample_classes=sample_classes, features=features,
        class_ids=list(range(C)),
        class_names={i: f"class_{i:02d}" for i in range(C)},
        class_embeddings=class_embeddings, visual_proj=visual_proj,
        temperature=DEFAULT_TEMPERATURE, text_encoder=encoder,
        class_split=class_split, sample_roles=roles,
    )
    bank.validate()
    return bank
