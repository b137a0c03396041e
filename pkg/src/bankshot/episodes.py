"""Task construction: N-way K-shot episodes and the all-class shot protocol.

Sampling is a pure function of (bank, config, generator state). Randomness
comes from numpy's PCG64 ``Generator``; callers that want parallel episode
streams should spawn child generators from one ``SeedSequence`` so results
stay reproducible regardless of scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bank import EmbeddingBank
from .errors import SamplingError, ValidationError

MODES = ("meta_train_base", "meta_test_novel", "self_support", "all_class")

_SPLIT_FOR_MODE = {
    "meta_train_base": "base",
    "meta_test_novel": "novel_test",
}


@dataclass(frozen=True)
class Episode:
    """One N-way K-shot task over bank row indices.

    ``support`` is grouped by class: entry ``c * k_shot + j`` is the j-th
    shot of class ``class_ids[c]``, so shot indices are positional. Query
    labels are episode-local (0..n_way-1).
    """

    n_way: int
    k_shot: int
    class_ids: tuple[int, ...]
    support: np.ndarray        # [n_way * k_shot] int64 bank rows
    query: np.ndarray          # [n_queries] int64 bank rows
    query_labels: np.ndarray   # [n_queries] int64 in [0, n_way)

    @property
    def support_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_way, dtype=np.int64), self.k_shot)

    @property
    def shot_indices(self) -> np.ndarray:
        return np.tile(np.arange(self.k_shot, dtype=np.int64), self.n_way)

    def check(self, bank: EmbeddingBank, self_support: bool) -> None:
        if len(self.class_ids) != self.n_way or len(set(self.class_ids)) != self.n_way:
            raise ValidationError("episode: class roster must hold n_way distinct classes")
        if self.support.shape != (self.n_way * self.k_shot,):
            raise ValidationError("episode: support size != n_way * k_shot")
        roster = {cid: i for i, cid in enumerate(self.class_ids)}
        sup_classes = bank.sample_classes[self.support]
        if not np.array_equal(sup_classes, [self.class_ids[i] for i in self.support_labels]):
            raise ValidationError("episode: support rows not grouped by class")
        qry_classes = bank.sample_classes[self.query]
        for row, lbl, cls in zip(self.query, self.query_labels, qry_classes):
            if cls not in roster or roster[cls] != lbl:
                raise ValidationError(f"episode: query row {row} has label/class mismatch")
        overlap = set(self.support.tolist()) & set(self.query.tolist())
        if self_support:
            if not set(self.query.tolist()) <= set(self.support.tolist()):
                raise ValidationError("episode: self-support queries must come from the support set")
        elif overlap:
            raise ValidationError(f"episode: support/query overlap on rows {sorted(overlap)}")


@dataclass(frozen=True)
class SamplingConfig:
    mode: str
    n_way: int = 5
    k_shot: int = 1
    queries_per_class: int = 15
    episode_count: int = 600
    seed: int = 0
    # fixed labeled pool for the no-base-classes scenario: class id -> bank rows
    labeled_pool: dict[int, tuple[int, ...]] | None = field(default=None)
    # explicit class split, overriding the one implied by the mode
    split: str | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"mode: unknown sampling mode {self.mode!r}")
        if self.n_way < 1 or self.k_shot < 1:
            raise ValidationError("n_way and k_shot must be >= 1")
        if self.episode_count < 1:
            raise ValidationError("episode_count must be >= 1")
        if self.mode != "self_support" and self.queries_per_class < 1:
            raise ValidationError("queries_per_class must be >= 1 outside self_support mode")


def _candidate_classes(bank: EmbeddingBank, cfg: SamplingConfig) -> list[int]:
    if cfg.labeled_pool is not None:
        return sorted(cfg.labeled_pool)
    if cfg.split is not None:
        split = cfg.split
    else:
        split = _SPLIT_FOR_MODE.get(cfg.mode)
        if cfg.mode == "self_support" and bank.class_split is not None:
            split = "novel_test"
    if split is not None and bank.class_split is None:
        raise SamplingError(f"mode {cfg.mode}: bank declares no class split")
    return bank.classes_in_split(split)


def sample_episode(bank: EmbeddingBank, cfg: SamplingConfig,
                   rng: np.random.Generator) -> Episode:
    """Draw one episode. Classes are drawn without replacement from the
    split implied by the mode; in self-support mode the query set is the
    support set itself."""
    cfg.validate()
    pool = _candidate_classes(bank, cfg)
    if len(pool) < cfg.n_way:
        raise SamplingError(
            f"need {cfg.n_way} classes, split offers {len(pool)}")
    chosen = [pool[i] for i in rng.choice(len(pool), size=cfg.n_way, replace=False)]

    self_support = cfg.mode == "self_support"
    per_class_need = cfg.k_shot if self_support else cfg.k_shot + cfg.queries_per_class

    support: list[int] = []
    query: list[int] = []
    labels: list[int] = []
    for local, cid in enumerate(chosen):
        if cfg.labeled_pool is not None:
            pool_rows = list(cfg.labeled_pool[cid])
            if len(pool_rows) < cfg.k_shot:
                raise SamplingError(
                    f"class {cid}: labeled pool has {len(pool_rows)} rows, need {cfg.k_shot}")
            sup_rows = pool_rows[:cfg.k_shot]
            if self_support:
                qry_rows = list(sup_rows)
            else:
                rest = np.setdiff1d(bank.samples_of_class(cid), pool_rows, assume_unique=False)
                if len(rest) < cfg.queries_per_class:
                    raise SamplingError(
                        f"class {cid}: {len(rest)} unlabeled samples, "
                        f"need {cfg.queries_per_class} queries")
                qry_rows = list(rest[rng.choice(len(rest), size=cfg.queries_per_class,
                                                replace=False)])
        else:
            rows = bank.samples_of_class(cid)
            if len(rows) < per_class_need:
                raise SamplingError(
                    f"class {cid}: has {len(rows)} samples, needs {per_class_need} "
                    f"({cfg.k_shot} shots + {0 if self_support else cfg.queries_per_class} queries)")
            picked = rows[rng.choice(len(rows), size=per_class_need, replace=False)]
            sup_rows = list(picked[:cfg.k_shot])
            qry_rows = list(sup_rows) if self_support else list(picked[cfg.k_shot:])
        support.extend(int(r) for r in sup_rows)
        query.extend(int(r) for r in qry_rows)
        labels.extend([local] * len(qry_rows))

    ep = Episode(n_way=cfg.n_way, k_shot=cfg.k_shot, class_ids=tuple(chosen),
                 support=np.asarray(support, dtype=np.int64),
                 query=np.asarray(query, dtype=np.int64),
                 query_labels=np.asarray(labels, dtype=np.int64))
    ep.check(bank, self_support=self_support)
    return ep


def build_labeled_pool(bank: EmbeddingBank, k_shot: int, seed: int,
                       split: str | None = "novel_test") -> dict[int, tuple[int, ...]]:
    """Fix K labeled samples per class: the only supervision available in the
    no-base-classes scenario. Training and evaluation both consume this pool."""
    classes = bank.classes_in_split(split if bank.class_split is not None else None)
    rng = np.random.default_rng(seed)
    pool: dict[int, tuple[int, ...]] = {}
    for cid in classes:
        rows = bank.samples_of_class(cid)
        if len(rows) < k_shot:
            raise SamplingError(f"class {cid}: has {len(rows)} samples, needs {k_shot} labeled")
        picked = rows[rng.choice(len(rows), size=k_shot, replace=False)]
        pool[cid] = tuple(int(r) for r in picked)
    return pool


def all_class_split(bank: EmbeddingBank, shots: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Pick ``shots`` training rows per class over all classes; return them
    together with the bank's full test partition (which sampling never touches)."""
    if shots < 1:
        raise SamplingError("shots must be >= 1")
    if bank.sample_roles is None:
        raise SamplingError("all-class protocol needs a per-sample train/test partition")
    rng = np.random.default_rng(seed)
    support: list[int] = []
    for cid in bank.class_ids:
        rows = bank.samples_of_class(cid)
        train_rows = rows[[bank.sample_roles[r] == "train" for r in rows]]
        if len(train_rows) < shots:
            raise SamplingError(
                f"class {cid}: has {len(train_rows)} train samples, needs {shots}")
        picked = train_rows[rng.choice(len(train_rows), size=shots, replace=False)]
        support.extend(int(r) for r in picked)
    test_rows = bank.sample_indices_with_role("test")
    return np.asarray(support, dtype=np.int64), test_rows


def all_class_episode(bank: EmbeddingBank, support: np.ndarray,
                      query: np.ndarray | None = None) -> Episode:
    """Build the C-way task used by the all-class protocol. With ``query``
    omitted the episode is self-supporting (query = support)."""
    class_ids = list(bank.class_ids)
    n_way = len(class_ids)
    if len(support) % n_way != 0:
        raise SamplingError("support size must be a multiple of the class count")
    k_shot = len(support) // n_way
    order = {cid: i for i, cid in enumerate(class_ids)}
    # regroup class-major in roster order, preserving per-class shot order
    grouped: list[list[int]] = [[] for _ in class_ids]
    for row in support:
        grouped[order[int(bank.sample_classes[row])]].append(int(row))
    if any(len(g) != k_shot for g in grouped):
        raise SamplingError("support is not class-balanced")
    sup = np.asarray([r for g in grouped for r in g], dtype=np.int64)
    if query is None:
        qry = sup.copy()
    else:
        qry = np.asarray(query, dtype=np.int64)
    labels = np.asarray([order[int(bank.sample_classes[r])] for r in qry], dtype=np.int64)
    ep = Episode(n_way=n_way, k_shot=k_shot, class_ids=tuple(class_ids),
                 support=sup, query=qry, query_labels=labels)
    ep.check(bank, self_support=query is None)
    return ep
