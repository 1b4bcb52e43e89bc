"""Global-prototype evaluation, zero-shot transfer, confusion pairs and PCA projection."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .episodic_sampling import DEFAULT_FRAMES, SampleCache, prepare_sample
from .errors import DataError
from .model import collate
from .pose_data import DEFAULT_TAU, DatasetManifest, ManifestEntry
from .prototypical import PrototypeDictionary, squared_distances

log = logging.getLogger(__name__)

DEFAULT_K = (1, 5, 10)
PREDICTION_COLUMNS = 10


@dataclass
class PredictionRecord:
    video_id: str
    true_gloss: str
    ranked: tuple[str, ...]


@dataclass
class EvalReport:
    num_queries: int
    top_k: dict[int, float]
    per_class: dict[str, float]
    records: list[PredictionRecord]
    notes: dict = field(default_factory=dict)

    def summary(self) -> str:
        parts = [f"queries: {self.num_queries}"]
        parts += [f"top-{k}: {acc:.4f}" for k, acc in sorted(self.top_k.items())]
        parts += [f"{k}: {v}" for k, v in self.notes.items()]
        return "\n".join(parts) + "\n"


@dataclass(frozen=True)
class ConfusionPair:
    gloss_a: str
    gloss_b: str
    count: int


# ---------------------------------------------------------------------------
# embedding


@torch.no_grad()
def embed_entries(model, manifest: DatasetManifest, entries: Sequence[ManifestEntry], frames: int = DEFAULT_FRAMES,
                  tau: float = DEFAULT_TAU, batch_size: int = 64, cache: SampleCache | None = None,
                  skip_unreadable: bool = False):
    """Embed entries in eval mode without augmentation. Returns ``(embeddings, kept_entries)``."""
    cache = cache or SampleCache(tau)
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    out, kept, batch, batch_entries = [], [], [], []

    def flush():
        if batch:
            out.append(model(collate(batch, dtype)).double().numpy())
            kept.extend(batch_entries)
            batch.clear()
            batch_entries.clear()

    try:
        for e in entries:
            try:
                sample = prepare_sample(cache.get(manifest.resolve(e)), frames)
            except (DataError, OSError) as exc:
                if not skip_unreadable:
                    raise
                log.warning("skipping %s: %s", e.video_id, exc)
                continue
            batch.append(sample)
            batch_entries.append(e)
            if len(batch) >= batch_size:
                flush()
        flush()
    finally:
        model.train(was_training)
    d = model.d_model
    return (np.concatenate(out) if out else np.zeros((0, d))), kept


def prototypes_from_embeddings(embeddings: np.ndarray, glosses: Sequence[str],
                               class_order: Sequence[str] | None = None) -> PrototypeDictionary:
    """Mean embedding per gloss over every given sample."""
    glosses = list(glosses)
    order = list(class_order) if class_order is not None else sorted(set(glosses))
    pos = {g: i for i, g in enumerate(order)}
    sums = np.zeros((len(order), embeddings.shape[1]))
    counts = np.zeros(len(order), dtype=np.int64)
    for emb, g in zip(embeddings, glosses):
        if g in pos:
            sums[pos[g]] += emb
            counts[pos[g]] += 1
    empty = [order[i] for i in np.flatnonzero(counts == 0)]
    if empty:
        raise DataError(f"class(es) with no readable sample: {empty[:5]}")
    return PrototypeDictionary(order, torch.from_numpy(sums / counts[:, None]), counts.tolist())


def build_global_prototypes(model, manifest: DatasetManifest, split: str = "train", frames: int = DEFAULT_FRAMES,
                            tau: float = DEFAULT_TAU, cache: SampleCache | None = None,
                            entries: Sequence[ManifestEntry] | None = None) -> PrototypeDictionary:
    """Prototype per gloss from ALL samples of ``split`` (unreadable samples skipped with a warning)."""
    entries = manifest.split(split) if entries is None else list(entries)
    if not entries:
        raise DataError(f"split {split!r} is empty")
    order = list(dict.fromkeys(g for g in manifest.gloss_vocabulary if g in {e.gloss for e in entries}))
    emb, kept = embed_entries(model, manifest, entries, frames, tau, cache=cache, skip_unreadable=True)
    return prototypes_from_embeddings(emb, [e.gloss for e in kept], order)


# ---------------------------------------------------------------------------
# ranking and reports


def rank_classes(embeddings: np.ndarray, protos: PrototypeDictionary) -> np.ndarray:
    """Class indices per query, nearest prototype first (ties keep dictionary order)."""
    d = squared_distances(torch.as_tensor(embeddings, dtype=torch.float64),
                          protos.prototypes.to(torch.float64)).numpy()
    return np.argsort(d, axis=1, kind="stable")


def build_report(video_ids: Sequence[str], true_glosses: Sequence[str], rankings: Sequence[Sequence[str]],
                 k_list=DEFAULT_K, notes: dict | None = None) -> EvalReport:
    n = len(true_glosses)
    if n == 0:
        raise DataError("empty evaluation set")
    top_k = {}
    for k in sorted(k_list):
        hits = sum(t in r[:k] for t, r in zip(true_glosses, rankings))
        top_k[k] = hits / n
    per_class_hits: dict[str, list[int]] = {}
    for t, r in zip(true_glosses, rankings):
        per_class_hits.setdefault(t, []).append(int(r[0] == t))
    per_class = {g: float(np.mean(v)) for g, v in sorted(per_class_hits.items())}
    keep = max(PREDICTION_COLUMNS, max(k_list))
    records = [PredictionRecord(v, t, tuple(r[:keep])) for v, t, r in zip(video_ids, true_glosses, rankings)]
    return EvalReport(n, top_k, per_class, records, dict(notes or {}))


def rank_report(embeddings, entries: Sequence[ManifestEntry], protos: PrototypeDictionary, k_list=DEFAULT_K,
                notes=None) -> EvalReport:
    order = rank_classes(embeddings, protos)
    names = np.array(protos.class_ids, dtype=object)
    rankings = [tuple(names[row]) for row in order]
    return build_report([e.video_id for e in entries], [e.gloss for e in entries], rankings, k_list, notes)


def evaluate_global(model, protos: PrototypeDictionary, manifest: DatasetManifest, split: str | None = "val",
                    k_list=DEFAULT_K, frames: int = DEFAULT_FRAMES, tau: float = DEFAULT_TAU,
                    cache: SampleCache | None = None) -> EvalReport:
    """Rank every prototype for each query of ``split`` by ascending distance."""
    known = set(protos.class_ids)
    entries = manifest.split(split)
    usable = [e for e in entries if e.gloss in known]
    dropped = len(entries) - len(usable)
    if not usable:
        raise DataError(f"empty evaluation set (split {split!r}, {dropped} query(ies) with unknown glosses)")
    emb, kept = embed_entries(model, manifest, usable, frames, tau, cache=cache)
    return rank_report(emb, kept, protos, k_list,
                       {"num_classes": len(protos), "dropped_queries": dropped})


def gloss_intersection(source: Sequence[str], target: Sequence[str]) -> dict[str, str]:
    """Case-insensitive exact matches: lowercased gloss -> source spelling."""
    src = {}
    for g in source:
        src.setdefault(g.lower(), g)
    tgt = {g.lower() for g in target}
    return {k: v for k, v in src.items() if k in tgt}


def cross_dataset_eval(model, source: DatasetManifest, target: DatasetManifest, k_list=DEFAULT_K,
                       source_split: str | None = "train", target_split: str | None = None,
                       frames: int = DEFAULT_FRAMES, tau: float = DEFAULT_TAU) -> EvalReport:
    """Prototypes from ``source`` only; queries from ``target`` restricted to the shared glosses."""
    src_entries = source.split(source_split)
    tgt_entries = target.split(target_split)
    shared = gloss_intersection([e.gloss for e in src_entries], [e.gloss for e in tgt_entries])
    if not shared:
        raise DataError("empty intersection between source and target glosses")
    keep_src = set(shared.values())
    protos = build_global_prototypes(model, source, source_split, frames, tau,
                                     entries=[e for e in src_entries if e.gloss in keep_src])
    queries = [e for e in tgt_entries if e.gloss.lower() in shared]
    dropped = len(tgt_entries) - len(queries)
    emb, kept = embed_entries(model, target, queries, frames, tau)
    renamed = [ManifestEntry(e.video_id, shared[e.gloss.lower()], e.split, e.file_path) for e in kept]
    return rank_report(emb, renamed, protos, k_list,
                       {"intersection_size": len(shared), "dropped_queries": dropped})


def extract_confused_pairs(report: EvalReport, top_m: int | None = 15) -> list[ConfusionPair]:
    """Rank-1 errors counted per unordered gloss pair, most frequent first."""
    counts = Counter()
    for r in report.records:
        if r.ranked and r.ranked[0] != r.true_gloss:
            counts[tuple(sorted((r.true_gloss, r.ranked[0])))] += 1
    pairs = [ConfusionPair(a, b, c) for (a, b), c in counts.items()]
    pairs.sort(key=lambda p: (-p.count, p.gloss_a, p.gloss_b))
    return pairs if top_m is None else pairs[:top_m]


def pca_project(embeddings: np.ndarray, out_dims: int = 2, rtol: float = 1e-10):
    """Project centred data onto its leading principal axes.

    Returns ``(coords (M, out_dims), explained_variance_ratio (out_dims,))``.
    Each axis is signed so its largest-magnitude loading is positive; null
    directions of rank-deficient data get zero coordinates and zero ratio.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    M = X.shape[0]
    if M < out_dims + 1:
        raise DataError(f"need at least {out_dims + 1} points for a {out_dims}-d projection, got {M}")
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s**2
    total = var.sum()
    k = min(out_dims, vt.shape[0])
    axes = np.zeros((out_dims, X.shape[1]))
    ratios = np.zeros(out_dims)
    for i in range(k):
        if total > 0 and var[i] > rtol * total:
            v = vt[i]
            axes[i] = v if v[np.argmax(np.abs(v))] > 0 else -v
            ratios[i] = var[i] / total
    return Xc @ axes.T, ratios


# ---------------------------------------------------------------------------
# report files


def write_metrics_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "accuracy"])
        for k, acc in sorted(report.top_k.items()):
            w.writerow([k, repr(acc)])


def write_predictions_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "true_gloss"] + [f"pred_{i}" for i in range(1, PREDICTION_COLUMNS + 1)])
        for r in report.records:
            preds = list(r.ranked[:PREDICTION_COLUMNS])
            w.writerow([r.video_id, r.true_gloss] + preds + [""] * (PREDICTION_COLUMNS - len(preds)))


def read_predictions_csv(path, k_list=DEFAULT_K) -> EvalReport:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"predictions table not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = [r["video_id"] for r in rows]
    truth = [r["true_gloss"] for r in rows]
    ranked = [tuple(r[f"pred_{i}"] for i in range(1, PREDICTION_COLUMNS + 1) if r.get(f"pred_{i}")) for r in rows]
    if not rows:
        return EvalReport(0, {k: 0.0 for k in k_list}, {}, [])
    return build_report(ids, truth, ranked, k_list)


def write_confusions_csv(pairs: Sequence[ConfusionPair], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gloss_a", "gloss_b", "count"])
        for p in pairs:
            w.writerow([p.gloss_a, p.gloss_b, p.count])


def write_pca_csv(video_ids, glosses, coords, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "gloss", "x", "y"])
        for v, g, (x, y) in zip(video_ids, glosses, np.asarray(coords)[:, :2]):
            w.writerow([v, g, repr(float(x)), repr(float(y))])
