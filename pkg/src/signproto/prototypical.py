"""Prototype computation, distance softmax, episode loss and the training step."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError, NumericError

DISTANCES = ("squared", "unsquared")


@dataclass
class PrototypeDictionary:
    class_ids: list  # local indices or gloss strings
    prototypes: torch.Tensor  # (N, D)
    counts: list[int]

    def __post_init__(self):
        if len(self.class_ids) != self.prototypes.shape[0] or len(self.counts) != len(self.class_ids):
            raise DataError("class_ids, prototypes and counts disagree in length")
        if min(self.counts, default=1) < 1:
            raise DataError("every prototype needs at least one support sample")

    def __len__(self):
        return len(self.class_ids)

    def subset(self, class_ids: Sequence) -> "PrototypeDictionary":
        pos = {c: i for i, c in enumerate(self.class_ids)}
        rows = [pos[c] for c in class_ids]
        return PrototypeDictionary(list(class_ids), self.prototypes[rows], [self.counts[r] for r in rows])


def compute_prototypes(embeddings: torch.Tensor, labels: torch.Tensor, n_classes: int) -> PrototypeDictionary:
    """Mean support embedding per class; stays differentiable w.r.t. ``embeddings``."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    counts = torch.bincount(labels, minlength=n_classes)
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels must lie in [0, {n_classes})")
    empty = (counts[:n_classes] == 0).nonzero().flatten().tolist()
    if empty:
        raise DataError(f"class(es) {empty} have no support embedding")
    sums = torch.zeros(n_classes, embeddings.shape[1], dtype=embeddings.dtype).index_add(0, labels, embeddings)
    protos = sums / counts[:, None].to(embeddings.dtype)
    return PrototypeDictionary(list(range(n_classes)), protos, counts.tolist())


def squared_distances(queries: torch.Tensor, prototypes: torch.Tensor) -> torch.Tensor:
    diff = queries[:, None, :] - prototypes[None, :, :]
    return (diff * diff).sum(-1)


def proto_log_probs(queries: torch.Tensor, protos: PrototypeDictionary | torch.Tensor,
                    distance: str = "squared") -> torch.Tensor:
    """``log softmax(-d(q, p_c))`` over classes, shape (Q, N)."""
    p = protos.prototypes if isinstance(protos, PrototypeDictionary) else protos
    if queries.shape[-1] != p.shape[-1]:
        raise DataError(f"embedding widths differ: queries {queries.shape[-1]}, prototypes {p.shape[-1]}")
    d = squared_distances(queries, p)
    if distance == "unsquared":
        d = torch.sqrt(d.clamp_min(1e-12))
    elif distance != "squared":
        raise DataError(f"unknown distance {distance!r}, expected one of {DISTANCES}")
    return F.log_softmax(-d, dim=1)


def episode_loss(log_probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-probability of the true class."""
    return F.nll_loss(log_probs, torch.as_tensor(labels, dtype=torch.long))


def episode_forward(model, loaded, distance: str = "squared") -> torch.Tensor:
    """Encode support and query, build prototypes, return the episode loss."""
    z_s = model(loaded.support)
    z_q = model(loaded.query)
    protos = compute_prototypes(z_s, loaded.support_labels, loaded.episode.n_way)
    return episode_loss(proto_log_probs(z_q, protos, distance), loaded.query_labels)


def make_optimizer(model, lr: float = 1e-3, betas=(0.9, 0.999)) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr, betas=tuple(betas), weight_decay=0.0)


def train_episode(model, loaded, optimizer: torch.optim.Optimizer, distance: str = "squared") -> float:
    """One training episode; returns the loss before the parameter update."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    loss = episode_forward(model, loaded, distance)
    loss.backward()
    grads = [p.grad.abs().max() for p in model.parameters() if p.grad is not None]
    max_grad = float(torch.stack(grads).max()) if grads else 0.0
    if not torch.isfinite(loss) or not np.isfinite(max_grad):
        raise NumericError(f"non-finite loss at episode {loaded.index}: loss={loss.detach().item()}, max |grad|={max_grad}")
    optimizer.step()
    return float(loss.detach())


class MetricsLog:
    """Append-only tab-separated log: ``episode  loss  wall_time``."""

    header = "episode\tloss\twall_time"

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        if not append or not self.path.exists():
            self.path.write_text(self.header + "\n")
        self._t0 = time.perf_counter()

    def write(self, index: int, loss: float) -> None:
        with self.path.open("a") as fh:
            fh.write(f"{index}\t{loss!r}\t{time.perf_counter() - self._t0:.4f}\n")

    @staticmethod
    def read(path) -> list[tuple[int, float, float]]:
        rows = []
        for line in Path(path).read_text().splitlines()[1:]:
            i, loss, t = line.split("\t")
            rows.append((int(i), float(loss), float(t)))
        return rows


def train_prototypical(model, stream, optimizer, distance: str = "squared", log: MetricsLog | None = None,
                       callback=None) -> list[float]:
    """Run :func:`train_episode` over a stream. ``callback(episode_index)`` fires after each update."""
    losses = []
    for loaded in stream:
        loss = train_episode(model, loaded, optimizer, distance)
        losses.append(loss)
        if log is not None:
            log.write(loaded.index, loss)
        if callback is not None:
            callback(loaded.index)
    return losses
