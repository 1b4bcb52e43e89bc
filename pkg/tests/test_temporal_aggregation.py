import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fd_util import fd_check
from signproto.errors import DataError
from signproto.graph_encoder import init_params
from signproto.temporal_aggregation import (
    AttentionPool,
    MultiScaleTemporal,
    TemporalAggregator,
    softmax_weights,
    weighted_pool,
)


def msta_loop_oracle(msta: MultiScaleTemporal, z: np.ndarray) -> np.ndarray:
    """Explicit sliding-window convolution, concatenation, projection and residual."""
    B, T, D = z.shape
    outs = []
    for conv in msta.branches:
        W = conv.weight.detach().numpy()  # (D_out, D_in, k)
        b = conv.bias.detach().numpy()
        k = W.shape[2]
        y = np.zeros((B, T, D))
        for bi in range(B):
            for t in range(T):
                acc = b.copy()
                for r in range(k):
                    tt = t + r - k // 2
                    if 0 <= tt < T:
                        acc = acc + W[:, :, r] @ z[bi, tt]
                y[bi, t] = acc
        outs.append(y)
    cat = np.concatenate(outs, axis=-1)
    P = msta.merge.weight.detach().numpy()
    return z + cat @ P.T + msta.merge.bias.detach().numpy()


def random_msta(seed, d):
    torch.manual_seed(seed)
    m = MultiScaleTemporal(d).double()
    for p in m.parameters():
        torch.nn.init.normal_(p, std=0.3)
    return m


def test_kernel_sizes():
    assert MultiScaleTemporal(8).kernels == (3, 5, 7)


def test_zero_branches_are_identity():
    m = MultiScaleTemporal(8).double()
    for p in m.parameters():
        torch.nn.init.zeros_(p)
    z = torch.randn(2, 9, 8, dtype=torch.float64)
    torch.testing.assert_close(m(z), z, rtol=0, atol=0)


def test_constant_input_gives_constant_interior():
    m = random_msta(0, 6)
    T = 30
    z = torch.randn(1, 1, 6, dtype=torch.float64).expand(1, T, 6)
    h = m(z)[0]
    interior = h[3 : T - 3]
    torch.testing.assert_close(interior, interior[:1].expand_as(interior), rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_msta_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    d, T = int(rng.integers(1, 6)), int(rng.integers(1, 12))
    m = random_msta(seed, d)
    z = rng.normal(size=(2, T, d))
    out = m(torch.from_numpy(z)).detach().numpy()
    np.testing.assert_allclose(out, msta_loop_oracle(m, z), rtol=1e-10, atol=1e-10)


def test_msta_rejects_bad_rank():
    with pytest.raises(DataError):
        MultiScaleTemporal(4)(torch.zeros(3, 4))


def random_pool(seed, d=8):
    torch.manual_seed(seed)
    pool = AttentionPool(d).double()
    for p in pool.parameters():
        torch.nn.init.normal_(p, std=0.5)
    return pool


def test_single_frame_returns_that_frame():
    pool = random_pool(0)
    h = torch.randn(3, 1, 8, dtype=torch.float64)
    torch.testing.assert_close(pool(h), h[:, 0])


def test_equal_scores_give_mean():
    h = torch.randn(2, 7, 4, dtype=torch.float64)
    torch.testing.assert_close(weighted_pool(h, torch.full((2, 7), 3.3, dtype=torch.float64)), h.mean(1))


def test_score_shift_invariance():
    h = torch.randn(2, 7, 4, dtype=torch.float64)
    a = torch.randn(2, 7, dtype=torch.float64)
    torch.testing.assert_close(weighted_pool(h, a + 123.0), weighted_pool(h, a), rtol=0, atol=1e-12)


def test_softmax_is_stable_for_huge_scores():
    w = softmax_weights(torch.tensor([[1e4, 1e4 - 1.0, -1e4]], dtype=torch.float64))
    assert torch.isfinite(w).all() and abs(w.sum().item() - 1) < 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), T=st.integers(1, 20))
def test_pool_properties(seed, T):
    pool = random_pool(seed % 7)
    g = torch.Generator().manual_seed(seed)
    h = torch.randn(2, T, 8, generator=g, dtype=torch.float64) * 3
    z, w = pool(h, return_weights=True)
    assert torch.all(w > 0)
    torch.testing.assert_close(w.sum(1), torch.ones(2, dtype=torch.float64), rtol=0, atol=1e-6)
    assert torch.all(z >= h.min(1).values - 1e-12) and torch.all(z <= h.max(1).values + 1e-12)
    perm = torch.randperm(T, generator=g)
    torch.testing.assert_close(pool(h[:, perm]), z, rtol=0, atol=1e-12)


def test_pool_rejects_width_not_divisible_by_four():
    with pytest.raises(DataError):
        AttentionPool(6)


def test_pool_gradients_match_finite_differences():
    pool = random_pool(3)
    h = torch.randn(2, 6, 8, dtype=torch.float64, requires_grad=True)
    target = torch.randn(2, 8, dtype=torch.float64)
    params = dict(pool.named_parameters())
    params["input"] = h
    errors = fd_check(lambda: ((pool(h) - target) ** 2).sum(), params)
    assert max(errors.values()) < 1e-3, errors


def test_aggregator_gradients_match_finite_differences():
    agg = init_params(TemporalAggregator(8), seed=2, std=0.3).double()
    z = torch.randn(2, 9, 8, dtype=torch.float64)
    target = torch.randn(2, 8, dtype=torch.float64)
    errors = fd_check(lambda: ((agg(z) - target) ** 2).sum(), dict(agg.named_parameters()))
    assert max(errors.values()) < 1e-3, errors
