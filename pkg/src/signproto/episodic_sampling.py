"""N-way / K-shot / Q-query episode construction and the training episode stream."""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .errors import DataError
from .model import collate
from .pose_data import (
    DEFAULT_TAU,
    SPEED_FACTORS,
    DatasetManifest,
    NormalizedSample,
    load_normalized,
    resample_to_length,
    speed_augment,
)

log = logging.getLogger(__name__)

DEFAULT_FRAMES = 64


@dataclass(frozen=True)
class SampleRef:
    video_id: str
    gloss: str
    path: Path
    label: int  # local class index within the episode


@dataclass(frozen=True)
class Episode:
    n_way: int
    k_shot: int
    q_query: int
    support: tuple[SampleRef, ...]
    query: tuple[SampleRef, ...]
    class_map: tuple[str, ...]  # local index -> gloss


class SplitIndex:
    """Samples of one manifest split grouped by gloss (glosses in sorted order)."""

    def __init__(self, manifest: DatasetManifest, split: str | None = "train"):
        groups: dict[str, list[tuple[str, Path]]] = {}
        for e in manifest.split(split):
            groups.setdefault(e.gloss, []).append((e.video_id, manifest.resolve(e)))
        self.by_class = {g: groups[g] for g in sorted(groups)}

    @classmethod
    def from_groups(cls, groups: dict[str, list[tuple[str, Path]]]) -> "SplitIndex":
        obj = cls.__new__(cls)
        obj.by_class = {g: list(groups[g]) for g in sorted(groups)}
        return obj

    def eligible(self, min_count: int) -> list[str]:
        return [g for g, items in self.by_class.items() if len(items) >= min_count]


def sample_episode(index: SplitIndex, n_way: int, k_shot: int, q_query: int,
                   rng: np.random.Generator) -> Episode:
    """Uniform classes without replacement; per class K+Q samples, the first K to support."""
    if n_way < 2 or k_shot < 1 or q_query < 1:
        raise DataError(f"invalid episode shape N={n_way}, K={k_shot}, Q={q_query}")
    eligible = index.eligible(k_shot + q_query)
    if len(eligible) < n_way:
        raise DataError(
            f"insufficient eligible classes: need {n_way} with >= {k_shot + q_query} samples, "
            f"have {len(eligible)} (short by {n_way - len(eligible)})"
        )
    chosen = rng.choice(len(eligible), size=n_way, replace=False)
    support, query, class_map = [], [], []
    for label, ci in enumerate(chosen):
        gloss = eligible[ci]
        items = index.by_class[gloss]
        picks = rng.choice(len(items), size=k_shot + q_query, replace=False)
        refs = [SampleRef(items[p][0], gloss, items[p][1], label) for p in picks]
        support += refs[:k_shot]
        query += refs[k_shot:]
        class_map.append(gloss)
    return Episode(n_way, k_shot, q_query, tuple(support), tuple(query), tuple(class_map))


def episode_rng(seed: int, episode_index: int) -> np.random.Generator:
    """Independent generator per episode so a stream can start anywhere."""
    return np.random.default_rng([int(seed), int(episode_index)])


class SampleCache:
    """Small LRU cache of normalized samples keyed by path."""

    def __init__(self, tau: float = DEFAULT_TAU, capacity: int = 4096):
        self.tau, self.capacity = tau, capacity
        self._items: OrderedDict[Path, NormalizedSample] = OrderedDict()

    def get(self, path: Path) -> NormalizedSample:
        path = Path(path)
        if path in self._items:
            self._items.move_to_end(path)
            return self._items[path]
        sample = load_normalized(path, self.tau)
        self._items[path] = sample
        if len(self._items) > self.capacity:
            self._items.popitem(last=False)
        return sample


def prepare_sample(sample: NormalizedSample, frames: int, factor: float | None = None) -> NormalizedSample:
    if factor is not None and factor != 1.0:
        sample = speed_augment(sample, factor)
    return resample_to_length(sample, frames)


@dataclass
class LoadedEpisode:
    index: int
    episode: Episode
    support: dict  # collated tensors
    query: dict
    support_labels: torch.Tensor
    query_labels: torch.Tensor
    speed_factors: tuple[float, ...] = ()


def load_episode(episode: Episode, index: int, cache: SampleCache, frames: int, rng: np.random.Generator | None,
                 speed_factors: Sequence[float] = SPEED_FACTORS, dtype=torch.float32) -> LoadedEpisode:
    refs = episode.support + episode.query
    if rng is not None:
        factors = tuple(float(speed_factors[i]) for i in rng.integers(0, len(speed_factors), len(refs)))
    else:
        factors = (1.0,) * len(refs)
    prepared = []
    for ref, f in zip(refs, factors):
        try:
            prepared.append(prepare_sample(cache.get(ref.path), frames, f))
        except DataError as exc:
            raise DataError(f"episode {index}: {exc}") from exc
    n_s = len(episode.support)
    return LoadedEpisode(
        index,
        episode,
        collate(prepared[:n_s], dtype),
        collate(prepared[n_s:], dtype),
        torch.tensor([r.label for r in episode.support]),
        torch.tensor([r.label for r in episode.query]),
        factors,
    )


def make_episode_stream(manifest: DatasetManifest, n_way: int, k_shot: int, q_query: int, num_episodes: int,
                        seed: int, augment: bool = True, split: str = "train", frames: int = DEFAULT_FRAMES,
                        speed_factors: Sequence[float] = SPEED_FACTORS, tau: float = DEFAULT_TAU,
                        start: int = 0, dtype=torch.float32, cache: SampleCache | None = None,
                        ) -> Iterator[LoadedEpisode]:
    """Yield episodes ``start .. num_episodes-1``, each loaded, augmented and resampled to ``frames``.

    Episode ``i`` depends only on ``(seed, i)``.
    """
    index = SplitIndex(manifest, split)
    excluded = len(index.by_class) - len(index.eligible(k_shot + q_query))
    if excluded:
        log.info("%d class(es) in split %r have fewer than %d samples and are excluded from episodes",
                 excluded, split, k_shot + q_query)
    cache = cache or SampleCache(tau)

    def gen():
        for i in range(start, num_episodes):
            rng = episode_rng(seed, i)
            try:
                episode = sample_episode(index, n_way, k_shot, q_query, rng)
            except DataError as exc:
                raise DataError(f"episode {i}: {exc}") from exc
            yield load_episode(episode, i, cache, frames, rng if augment else None, speed_factors, dtype)

    if num_episodes > start:
        # fail on an unsatisfiable configuration before the first yield
        if len(index.eligible(k_shot + q_query)) < n_way:
            sample_episode(index, n_way, k_shot, q_query, episode_rng(seed, start))
    return gen()

