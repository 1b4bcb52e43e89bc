"""Per-partition ST-GCN encoder fused into frame-level embeddings ``Z (B, T, D)``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch
from torch import nn

from .errors import DataError
from .pose_data import PARTITION_NAMES

INIT_STD = 0.02


@dataclass(frozen=True)
class SkeletonGraph:
    name: str
    num_joints: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for a, b in self.edges:
            if not (0 <= a < self.num_joints and 0 <= b < self.num_joints) or a == b:
                raise DataError(f"{self.name}: bad edge ({a}, {b})")

    @property
    def adjacency(self) -> np.ndarray:
        """Symmetrically normalized adjacency with self loops."""
        return normalized_adjacency(self.num_joints, self.edges)

    def is_connected(self) -> bool:
        seen, stack = {0}, [0]
        nbrs = {i: set() for i in range(self.num_joints)}
        for a, b in self.edges:
            nbrs[a].add(b)
            nbrs[b].add(a)
        while stack:
            for n in nbrs[stack.pop()] - seen:
                seen.add(n)
                stack.append(n)
        return len(seen) == self.num_joints

    def permuted(self, perm) -> "SkeletonGraph":
        """Graph with node ``i`` renamed ``inv[i]`` so that new node ``k`` is old ``perm[k]``."""
        inv = np.argsort(perm)
        return SkeletonGraph(self.name, self.num_joints, tuple((int(inv[a]), int(inv[b])) for a, b in self.edges))


def normalized_adjacency(num_joints: int, edges) -> np.ndarray:
    A = np.eye(num_joints)
    for a, b in edges:
        A[a, b] = A[b, a] = 1.0
    d = 1.0 / np.sqrt(A.sum(axis=1))
    return d[:, None] * A * d[None, :]


def _chain(idx) -> list[tuple[int, int]]:
    idx = list(idx)
    return list(zip(idx[:-1], idx[1:]))


def _ring(idx) -> list[tuple[int, int]]:
    idx = list(idx)
    return _chain(idx) + [(idx[-1], idx[0])]


# body rows: nose, l_sh, r_sh, l_el, r_el, l_wr, r_wr, neck, mid-hip
_BODY_EDGES = [(0, 7), (7, 1), (7, 2), (1, 3), (3, 5), (2, 4), (4, 6), (7, 8)]
_HAND_EDGES = [e for f in range(5) for e in _chain([0] + list(range(1 + 4 * f, 5 + 4 * f)))]
_FACE_EDGES = (
    _chain(range(0, 17))
    + _chain(range(17, 22))
    + _chain(range(22, 27))
    + _chain(range(27, 31))
    + _chain(range(31, 36))
    + _ring(range(36, 42))
    + _ring(range(42, 48))
    + _ring(range(48, 60))
    + _ring(range(60, 68))
    # connectors between the landmark groups
    + [(30, 33), (21, 27), (22, 27), (39, 27), (42, 27), (33, 51), (48, 60), (54, 64), (0, 17), (16, 26), (8, 57)]
)

_GRAPH_TABLE = {
    "body": (9, _BODY_EDGES),
    "left_hand": (21, _HAND_EDGES),
    "right_hand": (21, _HAND_EDGES),
    "face": (68, _FACE_EDGES),
}


def build_partition_graph(spec) -> SkeletonGraph:
    """Natural-connection graph for a canonical partition (a PartitionSpec or its name)."""
    name = getattr(spec, "name", spec)
    if name not in _GRAPH_TABLE:
        raise DataError(f"unknown partition {name!r}")
    n, edges = _GRAPH_TABLE[name]
    if hasattr(spec, "num_joints") and spec.num_joints != n:
        raise DataError(f"{name}: spec has {spec.num_joints} joints, graph expects {n}")
    return SkeletonGraph(name, n, tuple(edges))


def default_graphs() -> dict[str, SkeletonGraph]:
    return {name: build_partition_graph(name) for name in PARTITION_NAMES}


@dataclass(frozen=True)
class BlockPlan:
    """Output channels of each ST-GCN block, per partition."""

    channels: Mapping[str, tuple[int, ...]] = field(
        default_factory=lambda: {
            "body": (64, 64, 128, 256),
            "left_hand": (64, 64, 128, 256),
            "right_hand": (64, 64, 128, 256),
            "face": (32, 32, 64, 128),
        }
    )
    temporal_kernel: int = 9
    in_channels: int = 2

    def __post_init__(self):
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise DataError("temporal kernel must be a positive odd number")
        for name, chans in self.channels.items():
            if not chans or min(chans) < 1:
                raise DataError(f"{name}: empty or non-positive channel plan")

    @classmethod
    def uniform(cls, channels, face_channels=None, temporal_kernel: int = 9) -> "BlockPlan":
        channels = tuple(channels)
        face = tuple(face_channels) if face_channels is not None else channels
        plan = {n: channels for n in PARTITION_NAMES}
        plan["face"] = face
        return cls(plan, temporal_kernel)

    def out_channels(self, name: str) -> int:
        return self.channels[name][-1]

    def to_dict(self) -> dict:
        return {"channels": {k: list(v) for k, v in self.channels.items()}, "temporal_kernel": self.temporal_kernel,
                "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d) -> "BlockPlan":
        return cls({k: tuple(v) for k, v in d["channels"].items()}, d["temporal_kernel"], d.get("in_channels", 2))


class STGCNBlock(nn.Module):
    """``X -> tconv(relu(norm(A X W))) + residual(X)`` on tensors shaped (B, C, T, J)."""

    def __init__(self, adjacency: np.ndarray, c_in: int, c_out: int, kernel: int):
        super().__init__()
        self.register_buffer("adjacency", torch.as_tensor(adjacency, dtype=torch.float32))
        self.spatial = nn.Parameter(torch.empty(c_in, c_out))
        self.norm = nn.BatchNorm2d(c_out)
        self.temporal = nn.Conv2d(c_out, c_out, (kernel, 1), padding=(kernel // 2, 0))
        self.residual = nn.Identity() if c_in == c_out else nn.Conv2d(c_in, c_out, 1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = x * mask[:, None]
        y = torch.einsum("ij,bctj,co->boti", self.adjacency, x, self.spatial)
        y = self.temporal(torch.relu(self.norm(y)))
        return y + self.residual(x)


class PartitionEncoder(nn.Module):
    def __init__(self, graph: SkeletonGraph, channels, kernel: int, in_channels: int = 2):
        super().__init__()
        self.num_joints = graph.num_joints
        adj = graph.adjacency
        dims = [in_channels] + list(channels)
        self.blocks = nn.ModuleList(STGCNBlock(adj, a, b, kernel) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, coords: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, T, J, C_in), (B, T, J) -> (B, T, C_out), joints mean-pooled over valid ones."""
        if coords.shape[2] != self.num_joints or mask.shape != coords.shape[:3]:
            raise DataError(
                f"input has {coords.shape[2]} joints (mask {tuple(mask.shape)}), graph expects {self.num_joints}"
            )
        x = coords.permute(0, 3, 1, 2)
        for block in self.blocks:
            x = block(x, mask)
        x = x * mask[:, None]
        count = mask.sum(dim=2).clamp(min=1.0)  # all-invalid frames pool to zero
        return (x.sum(dim=3) / count[:, None]).transpose(1, 2)


class GraphEncoder(nn.Module):
    """f_theta: ST-GCN stacks per partition plus the fusing linear projection."""

    def __init__(self, graphs: Mapping[str, SkeletonGraph] | None = None, plan: BlockPlan | None = None,
                 d_model: int = 768):
        super().__init__()
        self.graphs = dict(graphs or default_graphs())
        self.plan = plan or BlockPlan()
        self.d_model = d_model
        self.partition_names = [n for n in PARTITION_NAMES if n in self.graphs]
        self.encoders = nn.ModuleDict(
            {
                n: PartitionEncoder(self.graphs[n], self.plan.channels[n], self.plan.temporal_kernel,
                                    self.plan.in_channels)
                for n in self.partition_names
            }
        )
        fused = sum(self.plan.out_channels(n) for n in self.partition_names)
        self.fuse = nn.Linear(fused, d_model)

    def partition_features(self, inputs) -> dict[str, torch.Tensor]:
        missing = [n for n in self.partition_names if n not in inputs]
        if missing:
            raise DataError(f"missing partition(s): {missing}")
        T = {inputs[n][0].shape[1] for n in self.partition_names}
        if len(T) != 1:
            raise DataError(f"partitions disagree on frame count: {sorted(T)}")
        return {n: self.encoders[n](*inputs[n]) for n in self.partition_names}

    def fuse_partitions(self, features: Mapping[str, torch.Tensor]) -> torch.Tensor:
        missing = [n for n in self.partition_names if n not in features]
        if missing:
            raise DataError(f"missing partition(s): {missing}")
        return self.fuse(torch.cat([features[n] for n in self.partition_names], dim=-1))

    def forward(self, inputs) -> torch.Tensor:
        return self.fuse_partitions(self.partition_features(inputs))


@torch.no_grad()
def init_params(module: nn.Module, seed: int, std: float = INIT_STD) -> nn.Module:
    """Truncated-normal weights (cut at +-2 std), zero biases, unit norm scales.

    Deterministic in ``seed`` and independent of the global torch RNG.
    """
    gen = torch.Generator().manual_seed(int(seed))
    norm_params = set()
    for m in module.modules():
        if isinstance(m, nn.modules.batchnorm._BatchNorm):
            m.weight.fill_(1.0)
            m.bias.zero_()
            m.reset_running_stats()
            norm_params.update({id(m.weight), id(m.bias)})
    for name, p in module.named_parameters():
        if id(p) in norm_params:
            continue
        if name.endswith("bias"):
            p.zero_()
        else:
            nn.init.trunc_normal_(p, mean=0.0, std=std, a=-2 * std, b=2 * std, generator=gen)
    return module
