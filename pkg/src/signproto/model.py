"""The shared backbone (encoder + aggregator), batching, and the checkpoint container."""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import DataError
from .graph_encoder import BlockPlan, GraphEncoder, SkeletonGraph, default_graphs, init_params
from .pose_data import PARTITION_NAMES, NormalizedSample
from .temporal_aggregation import TemporalAggregator

CHECKPOINT_FORMAT = "signproto-checkpoint"
CHECKPOINT_VERSION = 1


class SignEncoder(nn.Module):
    """Maps a pose batch to one embedding per clip: ``A_phi(f_theta(x))``."""

    def __init__(self, graphs=None, plan: BlockPlan | None = None, d_model: int = 768):
        super().__init__()
        if d_model % 4:
            raise DataError(f"d_model must be divisible by 4, got {d_model}")
        self.encoder = GraphEncoder(graphs, plan, d_model)
        self.aggregator = TemporalAggregator(d_model)

    @property
    def d_model(self) -> int:
        return self.encoder.d_model

    @property
    def graphs(self) -> dict[str, SkeletonGraph]:
        return self.encoder.graphs

    @property
    def plan(self) -> BlockPlan:
        return self.encoder.plan

    def frame_embeddings(self, inputs) -> torch.Tensor:
        return self.encoder(inputs)

    def forward(self, inputs) -> torch.Tensor:
        return self.aggregator(self.encoder(inputs))

    def spec_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "plan": self.plan.to_dict(),
            "graphs": {n: {"num_joints": g.num_joints, "edges": [list(e) for e in g.edges]}
                       for n, g in self.graphs.items()},
        }

    @classmethod
    def from_spec_dict(cls, d) -> "SignEncoder":
        graphs = {n: SkeletonGraph(n, g["num_joints"], tuple(tuple(e) for e in g["edges"]))
                  for n, g in d["graphs"].items()}
        return cls(graphs, BlockPlan.from_dict(d["plan"]), d["d_model"])


def build_model(plan: BlockPlan | None = None, d_model: int = 768, seed: int = 0, graphs=None,
                dtype=torch.float32) -> SignEncoder:
    model = SignEncoder(graphs or default_graphs(), plan, d_model)
    init_params(model, seed)
    return model.to(dtype)


def collate(samples: Sequence[NormalizedSample], dtype=torch.float32, partitions=PARTITION_NAMES):
    """Stack equal-length samples into ``{name: (coords (B,T,J,2), masks (B,T,J))}`` tensors."""
    if not samples:
        raise DataError("cannot collate an empty batch")
    lengths = {s.num_frames for s in samples}
    if len(lengths) != 1:
        raise DataError(f"samples must share a frame count, got {sorted(lengths)}")
    out = {}
    for name in partitions:
        xy = np.stack([s.coords[name] for s in samples])
        m = np.stack([s.masks[name] for s in samples])
        out[name] = (torch.as_tensor(xy, dtype=dtype), torch.as_tensor(m, dtype=dtype))
    return out


# ---------------------------------------------------------------------------
# checkpoints: one .npz holding every array plus a JSON manifest


@dataclass
class Checkpoint:
    model: SignEncoder
    kind: str = "proto"
    head: nn.Linear | None = None
    vocabulary: list[str] = field(default_factory=list)
    optimizer_state: dict | None = None
    state: dict = field(default_factory=dict)


def _optim_arrays(opt_state: dict):
    arrays, groups = {}, opt_state["param_groups"]
    for idx, st in opt_state["state"].items():
        for key, val in st.items():
            arrays[f"optim/{idx}/{key}"] = torch.as_tensor(val).detach().cpu().numpy()
    return arrays, groups


def save_checkpoint(path, model: SignEncoder, *, kind: str = "proto", head: nn.Linear | None = None,
                    vocabulary=None, optimizer: torch.optim.Optimizer | None = None, state: dict | None = None):
    arrays = {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    if head is not None:
        arrays.update({f"head/{k}": v.detach().cpu().numpy() for k, v in head.state_dict().items()})
    groups = None
    if optimizer is not None:
        opt_arrays, groups = _optim_arrays(optimizer.state_dict())
        arrays.update(opt_arrays)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "model": model.spec_dict(),
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
        "vocabulary": list(vocabulary or []),
        "optimizer_param_groups": groups,
        "state": state or {},
        "arrays": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in arrays.items()},
    }
    arrays["__manifest__"] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            if "__manifest__" not in data.files:
                raise DataError(f"{path}: not a {CHECKPOINT_FORMAT} file")
            manifest = json.loads(bytes(data["__manifest__"]).decode("utf-8"))
            arrays = {k: data[k] for k in data.files if k != "__manifest__"}
    except DataError:
        raise
    except (ValueError, OSError, zipfile.BadZipFile) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: checkpoint version {manifest.get('version')} unsupported")

    dtype = getattr(torch, manifest["dtype"])
    model = SignEncoder.from_spec_dict(manifest["model"]).to(dtype)
    model.load_state_dict({k[6:]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("model/")})

    head = None
    head_arrays = {k[5:]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("head/")}
    if head_arrays:
        out_f, in_f = head_arrays["weight"].shape
        head = nn.Linear(in_f, out_f).to(dtype)
        head.load_state_dict(head_arrays)

    opt_state = None
    if manifest.get("optimizer_param_groups") is not None:
        per_param: dict[int, dict] = {}
        for k, v in arrays.items():
            if k.startswith("optim/"):
                _, idx, key = k.split("/", 2)
                per_param.setdefault(int(idx), {})[key] = torch.from_numpy(v.copy())
        opt_state = {"state": per_param, "param_groups": manifest["optimizer_param_groups"]}

    return Checkpoint(model, manifest["kind"], head, manifest["vocabulary"], opt_state, manifest["state"])
