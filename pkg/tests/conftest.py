import numpy as np
import pytest
import torch

from signproto.graph_encoder import BlockPlan, SkeletonGraph
from signproto.pose_data import NUM_JOINTS, KeypointSequence

torch.set_num_threads(1)

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_sequence(rng, T=12, video_id="v", gloss="g", low_conf_rate=0.1) -> KeypointSequence:
    xy = rng.uniform(50, 600, (T, NUM_JOINTS, 2))
    conf = rng.uniform(0.3, 1.0, (T, NUM_JOINTS))
    conf[rng.random((T, NUM_JOINTS)) < low_conf_rate] = rng.uniform(0, 0.3)
    return KeypointSequence(video_id, gloss, np.concatenate([xy, conf[..., None]], -1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_graphs(joints=3):
    """Small path graphs standing in for the four partitions."""
    edges = tuple((i, i + 1) for i in range(joints - 1))
    return {n: SkeletonGraph(n, joints, edges) for n in ("body", "left_hand", "right_hand", "face")}


def tiny_plan(channels=(4, 6), kernel=3):
    return BlockPlan.uniform(channels, channels, kernel)


def random_inputs(graphs, B=2, T=8, dtype=torch.float64, seed=0, mask_rate=0.2):
    g = torch.Generator().manual_seed(seed)
    out = {}
    for name, graph in graphs.items():
        xy = torch.randn(B, T, graph.num_joints, 2, generator=g, dtype=dtype)
        mask = (torch.rand(B, T, graph.num_joints, generator=g) > mask_rate).to(dtype)
        out[name] = (xy * mask[..., None], mask)
    return out


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    from signproto.pose_data import generate_synthetic_dataset

    out = tmp_path_factory.mktemp("tiny_data")
    return generate_synthetic_dataset(out, 4, 8, T_range=(16, 24), noise_scale=0.02, seed=7)


DESK_FRAMES = 16


def desk_model(seed=0, d_model=16, dtype=torch.float32):
    from signproto.model import build_model

    return build_model(BlockPlan.uniform((4, 8), (4, 4), 3), d_model, seed, dtype=dtype)
