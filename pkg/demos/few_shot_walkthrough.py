"""
Few-shot training and evaluation on synthetic signs
===================================================

Trains a small prototypical model episode by episode, classifies held-out
clips against one prototype per training gloss, lists the most confused
pairs, and projects the embeddings to 2-D.  Runs in a couple of minutes on
one CPU core.
"""

import tempfile
from pathlib import Path

import torch

from signproto.episodic_sampling import make_episode_stream
from signproto.evaluation import (
    build_global_prototypes,
    embed_entries,
    evaluate_global,
    extract_confused_pairs,
    pca_project,
)
from signproto.graph_encoder import BlockPlan
from signproto.model import build_model
from signproto.pose_data import generate_synthetic_dataset
from signproto.prototypical import make_optimizer, train_prototypical

torch.manual_seed(0)
work = Path(tempfile.mkdtemp(prefix="signproto_fewshot_"))

# 12 glosses, 10 clips each; enough noise that the task is not trivial
manifest = generate_synthetic_dataset(work, n_classes=12, samples_per_class=10, noise_scale=0.1, seed=3)

# a small backbone; the reference plan is (64, 64, 128, 256) at width 768
plan = BlockPlan.uniform((8, 16), (4, 8), temporal_kernel=5)
model = build_model(plan, d_model=32, seed=0)
frames = 32

protos = build_global_prototypes(model, manifest, "train", frames)
before = evaluate_global(model, protos, manifest, "test", (1, 5), frames)
print("untrained:", before.top_k)

# 5-way 2-shot episodes, 2 queries per class
stream = make_episode_stream(manifest, n_way=5, k_shot=2, q_query=2, num_episodes=300, seed=0, frames=frames)
optimizer = make_optimizer(model, lr=1e-3)


def progress(i):
    if (i + 1) % 100 == 0:
        print(f"episode {i + 1}")


losses = train_prototypical(model, stream, optimizer, callback=progress)
print(f"loss: first 20 episodes {sum(losses[:20]) / 20:.3f}, last 20 {sum(losses[-20:]) / 20:.3f}")

protos = build_global_prototypes(model, manifest, "train", frames)
report = evaluate_global(model, protos, manifest, "test", (1, 5), frames)
print("trained:  ", report.top_k)

for pair in extract_confused_pairs(report, top_m=5):
    print(f"  {pair.gloss_a} <-> {pair.gloss_b}: {pair.count}")

entries = manifest.split("test")
emb, kept = embed_entries(model, manifest, entries, frames)
# a small model after a short run tends to spread classes along one dominant axis
coords, ratios = pca_project(emb)
print(f"PCA explained variance: {ratios[0]:.3f}, {ratios[1]:.3f}")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    fig, ax = plt.subplots(figsize=(6, 5))
    glosses = [e.gloss for e in kept]
    for g in sorted(set(glosses)):
        sel = [i for i, x in enumerate(glosses) if x == g]
        ax.scatter(coords[sel, 0], coords[sel, 1], s=18, label=g)
    ax.legend(fontsize=6, ncol=2)
    fig.savefig(work / "pca.png", dpi=110)
    print("scatter saved to", work / "pca.png")
