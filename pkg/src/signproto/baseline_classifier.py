"""Standard-classification baseline on the shared backbone."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .episodic_sampling import DEFAULT_FRAMES, SampleCache, prepare_sample
from .errors import DataError, NumericError
from .evaluation import DEFAULT_K, EvalReport, build_report, embed_entries
from .graph_encoder import init_params
from .model import collate
from .pose_data import DEFAULT_TAU, SPEED_FACTORS, DatasetManifest

log = logging.getLogger(__name__)


@dataclass
class BaselineConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    augment: bool = True
    frames: int = DEFAULT_FRAMES
    tau: float = DEFAULT_TAU
    speed_factors: tuple[float, ...] = SPEED_FACTORS


def make_head(d_model: int, n_classes: int, seed: int, dtype=torch.float32) -> nn.Linear:
    head = nn.Linear(d_model, n_classes)
    # separate stream from the backbone so the backbone init matches the prototypical path
    init_params(head, seed + 1)
    return head.to(dtype)


def train_baseline(model, head: nn.Linear, manifest: DatasetManifest, vocabulary: Sequence[str],
                   config: BaselineConfig = BaselineConfig(), seed: int = 0, split: str = "train",
                   epoch_log=None) -> list[float]:
    """Minimize mean cross-entropy of ``softmax(z W + b)``; returns per-epoch mean training loss."""
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"training split {split!r} is empty")
    col = {g: i for i, g in enumerate(vocabulary)}
    unknown = {e.gloss for e in entries} - set(col)
    if unknown:
        raise DataError(f"training glosses outside the head vocabulary: {sorted(unknown)[:5]}")
    if head.out_features != len(vocabulary):
        raise DataError(f"head has {head.out_features} outputs for {len(vocabulary)} glosses")

    dtype = next(model.parameters()).dtype
    params = list(model.parameters()) + list(head.parameters())
    optimizer = torch.optim.Adam(params, lr=config.lr, betas=tuple(config.betas), weight_decay=0.0)
    cache = SampleCache(config.tau)
    labels = np.array([col[e.gloss] for e in entries])
    history = []
    model.train()
    for epoch in range(config.epochs):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(entries))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if config.augment:
                factors = [config.speed_factors[i] for i in rng.integers(0, len(config.speed_factors), len(idx))]
            else:
                factors = [1.0] * len(idx)
            batch = [prepare_sample(cache.get(manifest.resolve(entries[i])), config.frames, f)
                     for i, f in zip(idx, factors)]
            optimizer.zero_grad(set_to_none=True)
            logits = head(model(collate(batch, dtype)))
            loss = F.cross_entropy(logits, torch.as_tensor(labels[idx]))
            if not torch.isfinite(loss):
                grads = [p.grad.abs().max() for p in params if p.grad is not None]
                raise NumericError(f"non-finite baseline loss at epoch {epoch}, batch {start // config.batch_size}"
                                   f" (max |grad| {float(torch.stack(grads).max()) if grads else 0.0})")
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
        mean = total / max(seen, 1)
        history.append(mean)
        if epoch_log is not None:
            epoch_log(epoch, mean)
        log.debug("baseline epoch %d loss %.5f", epoch, mean)
    return history


@torch.no_grad()
def head_probabilities(head: nn.Linear, embeddings) -> np.ndarray:
    logits = head(torch.as_tensor(np.asarray(embeddings), dtype=head.weight.dtype))
    return torch.softmax(logits, dim=1).double().numpy()


def rank_by_logits(head: nn.Linear, embeddings, columns: Sequence[int]) -> np.ndarray:
    """Positions within ``columns`` ordered by descending logit."""
    with torch.no_grad():
        logits = head(torch.as_tensor(np.asarray(embeddings), dtype=head.weight.dtype)).double().numpy()
    return np.argsort(-logits[:, list(columns)], axis=1, kind="stable")


def baseline_predict(model, head: nn.Linear, vocabulary: Sequence[str], manifest: DatasetManifest,
                     split: str | None = "test", k_list=DEFAULT_K, restrict_to: Sequence[str] | None = None,
                     frames: int = DEFAULT_FRAMES, tau: float = DEFAULT_TAU,
                     case_insensitive: bool = False) -> EvalReport:
    """Rank the head's classes by logit for every usable query.

    Queries whose gloss is outside the (optionally restricted) vocabulary are
    dropped and counted; a fixed head cannot score unseen classes.
    """
    key = (lambda g: g.lower()) if case_insensitive else (lambda g: g)
    allowed = list(vocabulary) if restrict_to is None else [g for g in vocabulary if key(g) in {key(r) for r in restrict_to}]
    by_key = {key(g): g for g in allowed}
    entries = manifest.split(split)
    usable = [e for e in entries if key(e.gloss) in by_key]
    dropped = len(entries) - len(usable)
    if not usable:
        raise DataError(f"empty usable evaluation set ({dropped} query(ies) outside the vocabulary)")
    emb, kept = embed_entries(model, manifest, usable, frames, tau)
    col = {g: i for i, g in enumerate(vocabulary)}
    order = rank_by_logits(head, emb, [col[g] for g in allowed])
    rankings = [tuple(allowed[j] for j in row) for row in order]
    return build_report([e.video_id for e in kept], [by_key[key(e.gloss)] for e in kept], rankings, k_list,
                        {"num_classes": len(allowed), "dropped_queries": dropped})
