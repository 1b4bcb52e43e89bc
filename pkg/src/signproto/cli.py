"""Command-line surface. Each ``cmd_*`` function is also usable directly from Python."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .baseline_classifier import BaselineConfig, baseline_predict, make_head, train_baseline
from .config import RunConfig, dump_config, load_config
from .episodic_sampling import SampleCache, SplitIndex, make_episode_stream
from .errors import ConfigError, DataError, SignProtoError
from .evaluation import (
    build_global_prototypes,
    cross_dataset_eval,
    embed_entries,
    evaluate_global,
    extract_confused_pairs,
    gloss_intersection,
    pca_project,
    read_predictions_csv,
    write_confusions_csv,
    write_metrics_csv,
    write_pca_csv,
    write_predictions_csv,
)
from .graph_encoder import BlockPlan
from .model import build_model, load_checkpoint, save_checkpoint
from .pose_data import generate_synthetic_dataset, geometric_counts, read_manifest
from .prototypical import MetricsLog, make_optimizer, train_prototypical

log = logging.getLogger("signproto")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _dtype(cfg: RunConfig):
    return getattr(torch, cfg.model.dtype)


def _plan(cfg: RunConfig) -> BlockPlan:
    return BlockPlan.uniform(cfg.model.channels, cfg.model.face_channels, cfg.model.temporal_kernel)


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_provenance(cfg: RunConfig, command: str, out: Path, extra: dict | None = None) -> None:
    (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    record = {"command": command, "seed": cfg.seed, "version": __version__, "config": dump_config(cfg)}
    record.update(extra or {})
    (out / f"provenance_{command}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _load_manifest(path):
    manifest = read_manifest(path)
    manifest.check_files()
    return manifest


# ---------------------------------------------------------------------------
# training


def cmd_train_proto(cfg: RunConfig, resume: str | None = None) -> dict:
    """Episodic training with periodic global-prototype validation.

    Writes ``checkpoint_final.npz``, ``checkpoint_best.npz``, ``train_log.tsv``
    and ``val_log.tsv`` into ``paths.output_dir``.
    """
    cfg.require_paths("manifest")
    manifest = _load_manifest(cfg.paths.manifest)
    e, m = cfg.episodes, cfg.model
    eligible = SplitIndex(manifest, e.split).eligible(e.k_shot + e.q_query)
    if e.num_episodes > 0 and len(eligible) < e.n_way:
        raise DataError(f"split {e.split!r} has {len(eligible)} classes with >= {e.k_shot + e.q_query} samples,"
                        f" N={e.n_way} requested")
    out = _output_dir(cfg)
    torch.manual_seed(cfg.seed)

    state = {"next_episode": 0, "best_val_top1": None, "best_episode": None}
    if resume:
        ckpt = load_checkpoint(resume)
        if ckpt.kind != "proto":
            raise ConfigError(f"cannot resume prototypical training from a {ckpt.kind!r} checkpoint")
        model = ckpt.model
        optimizer = make_optimizer(model, cfg.optim.lr, (cfg.optim.beta1, cfg.optim.beta2))
        if ckpt.optimizer_state is not None:
            optimizer.load_state_dict(ckpt.optimizer_state)
        state.update(ckpt.state)
    else:
        model = build_model(_plan(cfg), m.d_model, cfg.seed, dtype=_dtype(cfg))
        optimizer = make_optimizer(model, cfg.optim.lr, (cfg.optim.beta1, cfg.optim.beta2))

    start = int(state["next_episode"])
    train_log = MetricsLog(out / "train_log.tsv", append=bool(resume))
    val_path = out / "val_log.tsv"
    if not resume or not val_path.exists():
        val_path.write_text("episode\t" + "\t".join(f"top{k}" for k in cfg.eval.k_list) + "\n")
    cache = SampleCache(m.tau)
    has_val = bool(manifest.split(cfg.eval.val_split))

    def save(path):
        save_checkpoint(path, model, kind="proto", optimizer=optimizer, state=state)

    def validate(episode_index: int):
        state["next_episode"] = episode_index + 1
        if not has_val:
            return
        protos = build_global_prototypes(model, manifest, cfg.eval.prototype_split, m.frames, m.tau, cache)
        report = evaluate_global(model, protos, manifest, cfg.eval.val_split, cfg.eval.k_list, m.frames, m.tau,
                                 cache)
        with val_path.open("a") as fh:
            fh.write(f"{episode_index}\t" + "\t".join(repr(report.top_k[k]) for k in cfg.eval.k_list) + "\n")
        top1 = report.top_k[min(cfg.eval.k_list)]
        best = state["best_val_top1"]
        if best is None or top1 > best:
            state["best_val_top1"], state["best_episode"] = top1, episode_index
            save(out / "checkpoint_best.npz")
        save(out / "checkpoint_last.npz")

    last_validated = None

    def on_episode(i: int):
        nonlocal last_validated
        state["next_episode"] = i + 1
        if (i + 1) % cfg.eval.val_interval == 0:
            validate(i)
            last_validated = i

    stream = make_episode_stream(manifest, e.n_way, e.k_shot, e.q_query, e.num_episodes, cfg.seed, e.augment,
                                 e.split, m.frames, e.speed_factors, m.tau, start=start, dtype=_dtype(cfg),
                                 cache=cache)
    losses = train_prototypical(model, stream, optimizer, m.distance, train_log, on_episode)
    ran = len(losses)
    if ran and last_validated != e.num_episodes - 1:
        validate(e.num_episodes - 1)
    state["next_episode"] = max(start, e.num_episodes)
    save(out / "checkpoint_final.npz")
    if not (out / "checkpoint_best.npz").exists():
        save(out / "checkpoint_best.npz")
    write_provenance(cfg, "train-proto", out, {"resumed_from": resume, "episodes_run": ran})
    return {"episodes_run": ran, "losses": losses, "state": dict(state), "output_dir": str(out)}


def _baseline_vocabulary(manifest, split: str) -> list[str]:
    present = {e.gloss for e in manifest.split(split)}
    return [g for g in manifest.gloss_vocabulary if g in present]


def cmd_train_baseline(cfg: RunConfig) -> dict:
    cfg.require_paths("manifest")
    manifest = _load_manifest(cfg.paths.manifest)
    out = _output_dir(cfg)
    torch.manual_seed(cfg.seed)
    m = cfg.model
    vocab = _baseline_vocabulary(manifest, cfg.episodes.split)
    if not vocab:
        raise DataError(f"training split {cfg.episodes.split!r} is empty")
    model = build_model(_plan(cfg), m.d_model, cfg.seed, dtype=_dtype(cfg))
    head = make_head(m.d_model, len(vocab), cfg.seed, _dtype(cfg))
    bcfg = BaselineConfig(cfg.baseline.epochs, cfg.baseline.batch_size, cfg.baseline.lr,
                          (cfg.optim.beta1, cfg.optim.beta2), cfg.episodes.augment, m.frames, m.tau,
                          cfg.episodes.speed_factors)
    log_path = out / "baseline_log.tsv"
    log_path.write_text("epoch\tloss\n")

    def epoch_log(epoch, loss):
        with log_path.open("a") as fh:
            fh.write(f"{epoch}\t{loss!r}\n")

    history = train_baseline(model, head, manifest, vocab, bcfg, cfg.seed, cfg.episodes.split, epoch_log)
    save_checkpoint(out / "baseline_final.npz", model, kind="baseline", head=head, vocabulary=vocab,
                    state={"epochs": cfg.baseline.epochs})
    write_provenance(cfg, "train-baseline", out)
    return {"history": history, "vocabulary": vocab, "output_dir": str(out)}


# ---------------------------------------------------------------------------
# evaluation


def _write_report(report, out: Path, stem: str) -> None:
    write_metrics_csv(report, out / f"{stem}_metrics.csv")
    write_predictions_csv(report, out / f"{stem}_predictions.csv")
    (out / f"{stem}_summary.txt").write_text(report.summary())


def cmd_eval(cfg: RunConfig):
    cfg.require_paths("manifest", "checkpoint")
    manifest = _load_manifest(cfg.paths.manifest)
    ckpt = load_checkpoint(cfg.paths.checkpoint)
    m, ev = cfg.model, cfg.eval
    if ckpt.kind == "baseline":
        report = baseline_predict(ckpt.model, ckpt.head, ckpt.vocabulary, manifest, ev.split, ev.k_list,
                                  frames=m.frames, tau=m.tau)
    else:
        protos = build_global_prototypes(ckpt.model, manifest, ev.prototype_split, m.frames, m.tau)
        report = evaluate_global(ckpt.model, protos, manifest, ev.split, ev.k_list, m.frames, m.tau)
    out = _output_dir(cfg)
    _write_report(report, out, "eval")
    write_provenance(cfg, "eval", out)
    return report


def cmd_eval_cross(cfg: RunConfig):
    cfg.require_paths("manifest", "target_manifest", "checkpoint")
    source = _load_manifest(cfg.paths.manifest)
    target = _load_manifest(cfg.paths.target_manifest)
    ckpt = load_checkpoint(cfg.paths.checkpoint)
    m, ev = cfg.model, cfg.eval
    target_split = ev.target_split or None
    if ckpt.kind == "baseline":
        shared = gloss_intersection(ckpt.vocabulary, [e.gloss for e in target.split(target_split)])
        if not shared:
            raise DataError("empty intersection between source and target glosses")
        report = baseline_predict(ckpt.model, ckpt.head, ckpt.vocabulary, target, target_split, ev.k_list,
                                  restrict_to=list(shared.values()), frames=m.frames, tau=m.tau,
                                  case_insensitive=True)
        report.notes["intersection_size"] = len(shared)
    else:
        report = cross_dataset_eval(ckpt.model, source, target, ev.k_list, ev.prototype_split, target_split,
                                    m.frames, m.tau)
    out = _output_dir(cfg)
    _write_report(report, out, "cross")
    write_provenance(cfg, "eval-cross", out)
    return report


def cmd_confusions(cfg: RunConfig):
    cfg.require_paths("predictions")
    report = read_predictions_csv(cfg.paths.predictions, cfg.eval.k_list)
    pairs = extract_confused_pairs(report, cfg.eval.top_m)
    out = _output_dir(cfg)
    write_confusions_csv(pairs, out / "confusions.csv")
    write_provenance(cfg, "confusions", out)
    return pairs


def cmd_project(cfg: RunConfig):
    cfg.require_paths("manifest", "checkpoint")
    manifest = _load_manifest(cfg.paths.manifest)
    ckpt = load_checkpoint(cfg.paths.checkpoint)
    entries = manifest.split(cfg.eval.split or None)
    emb, kept = embed_entries(ckpt.model, manifest, entries, cfg.model.frames, cfg.model.tau)
    coords, ratios = pca_project(emb, 2)
    out = _output_dir(cfg)
    write_pca_csv([e.video_id for e in kept], [e.gloss for e in kept], coords, out / "pca.csv")
    if cfg.eval.render:
        _render_scatter(coords, [e.gloss for e in kept], ratios, out / "pca.png")
    write_provenance(cfg, "project", out, {"explained_variance_ratio": ratios.tolist()})
    return coords, ratios


def _render_scatter(coords, glosses, ratios, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 6))
    for g in sorted(set(glosses)):
        sel = np.array([x == g for x in glosses])
        ax.scatter(coords[sel, 0], coords[sel, 1], s=14, label=g)
    ax.set_xlabel(f"PC1 ({ratios[0]:.1%})")
    ax.set_ylabel(f"PC2 ({ratios[1]:.1%})")
    if len(set(glosses)) <= 20:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_gen_synthetic(cfg: RunConfig):
    s = cfg.synthetic
    if s.tail_min > 0:
        counts = geometric_counts(s.n_classes, s.samples_per_class[0], s.tail_min)
    elif len(s.samples_per_class) == 1:
        counts = [s.samples_per_class[0]] * s.n_classes
    else:
        counts = list(s.samples_per_class)
    if len(s.split_fractions) != 3:
        raise ConfigError("synthetic.split_fractions needs three values (train, val, test)")
    out = _output_dir(cfg)
    manifest = generate_synthetic_dataset(
        out, s.n_classes, counts, (s.t_min, s.t_max), s.noise_scale, cfg.seed,
        None if s.template_seed < 0 else s.template_seed, (s.offset_x, s.offset_y), s.screen_scale,
        tuple(s.split_fractions), s.dropout_rate, s.gloss_prefix,
    )
    write_provenance(cfg, "gen-synthetic", out)
    return manifest


COMMANDS = {
    "train-proto": cmd_train_proto,
    "train-baseline": cmd_train_baseline,
    "eval": cmd_eval,
    "eval-cross": cmd_eval_cross,
    "confusions": cmd_confusions,
    "project": cmd_project,
    "gen-synthetic": cmd_gen_synthetic,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="signproto", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="e.g. episodes.n_way=50 (repeatable)")
        p.add_argument("--resume", default=None, metavar="PATH", help="checkpoint to resume from (train-proto)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed)
        if args.command == "train-proto":
            cmd_train_proto(cfg, resume=args.resume)
        else:
            if args.resume:
                raise ConfigError("--resume only applies to train-proto")
            result = COMMANDS[args.command](cfg)
            if hasattr(result, "summary"):
                print(result.summary(), end="")
    except SignProtoError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
