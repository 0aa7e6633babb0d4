import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

import importlib
from conftest import fd_gradients, random_mlp, rel_err
from mlpfusion.compress import (
    FusedMlp,
    clustering_ablation,
    compress,
    compressed_gradients,
    equal_budget_prune_ratio,
    fuse_mlp,
    fuse_mlp_sgd_variant,
    median_bandwidth,
    mmd_grad_support,
    mmd_mlp,
    mmd_squared,
    mmd_support,
    prune_mlp,
    sketch_mlp,
    svd_mlp,
)
from mlpfusion.errors import InvalidArgument, NumericFailure, UnsupportedActivation
from mlpfusion.fixtures import make_fixture
from mlpfusion.linalg import make_rng, seeded_gaussian
from mlpfusion.mlp import MlpWeights
from mlpfusion.ntk import output_error


@pytest.fixture(scope="module")
def lossless():
    return make_fixture(noise=0.0, m=6)


@pytest.fixture(scope="module")
def default_fx():
    return make_fixture(m=6)


def test_fuse_full_width_is_lossless(default_fx):
    t = default_fx.teacher
    comp = fuse_mlp(t, t.p_I, seed=0)
    assert_array_equal(comp.sizes, np.ones(t.p_I))
    assert output_error(t, comp, default_fx.inputs) < 1e-8


def test_fuse_planted_fixture_is_lossless(lossless):
    comp = fuse_mlp(lossless.teacher, 16, seed=0)
    assert output_error(lossless.teacher, comp, lossless.inputs) < 1e-9
    assert comp.sizes.sum() == lossless.teacher.p_I


def test_strategies_share_forward_and_differ_by_p_in_w2_gradient(default_fx):
    a = fuse_mlp(default_fx.teacher, 16, seed=0, strategy="standalone_p")
    b = a.with_strategy("p_into_w2")
    X = default_fx.inputs[0]
    G = make_rng(0).standard_normal(X.shape)
    assert_allclose(a.forward(X), b.forward(X), atol=1e-12)
    ga, gb = compressed_gradients(a, X, G), compressed_gradients(b, X, G)
    assert_allclose(ga.dW2, a.sizes[:, None] * gb.dW2, rtol=1e-12, atol=1e-14)
    assert_allclose(ga.dW1, gb.dW1, rtol=1e-12, atol=1e-14)


def test_p_into_w2_trainable_round_trip(default_fx):
    b = fuse_mlp(default_fx.teacher, 16, seed=0, strategy="p_into_w2")
    c = b.with_trainable(b.trainable())
    assert_allclose(c.W2, b.W2, rtol=1e-15)


@pytest.mark.parametrize("strategy", ["standalone_p", "p_into_w2"])
def test_fused_gradients_match_finite_differences(strategy, default_fx):
    rng = make_rng(8)
    small = random_mlp(rng, p=3, p_I=8)
    comp = fuse_mlp(small, 3, seed=1, strategy=strategy)
    X = rng.standard_normal((4, 3))
    G = rng.standard_normal((4, 3))
    an = compressed_gradients(comp, X, G).as_dict()
    fd = fd_gradients(comp, X, G)
    for name in an:
        assert rel_err(an[name], fd[name]) < 1e-6, name


def test_compressed_gradients_rejects_non_fused(default_fx):
    with pytest.raises(InvalidArgument):
        compressed_gradients(sketch_mlp(default_fx.teacher, 4), default_fx.inputs[0], np.zeros((8, 16)))


def test_fused_rejects_bad_strategy_and_sizes(default_fx):
    with pytest.raises(InvalidArgument):
        fuse_mlp(default_fx.teacher, 4, strategy="merge")
    f = fuse_mlp(default_fx.teacher, 4)
    with pytest.raises(InvalidArgument):
        FusedMlp(f.W1, f.b1, f.W2, f.b2, np.zeros(4), f.act)


def test_sgd_variant_equals_fusion_for_relu():
    fx = make_fixture(noise=0.05, activation="relu", m=4)
    fused = fuse_mlp(fx.teacher, 16, seed=0)
    sq = fuse_mlp_sgd_variant(fx.teacher, 16, seed=0)
    for X in fx.inputs:
        assert_allclose(sq.forward(X), fused.forward(X), atol=1e-12)


def test_sgd_variant_needs_homogeneous_activation(default_fx):
    with pytest.raises(UnsupportedActivation):
        fuse_mlp_sgd_variant(default_fx.teacher, 16)


def test_ablation_differs_from_fusion_for_gelu(default_fx):
    fused = fuse_mlp(default_fx.teacher, 16, seed=0)
    abl = clustering_ablation(default_fx.teacher, 16, seed=0)
    X = default_fx.inputs[0]
    assert np.max(np.abs(abl.forward(X) - fused.forward(X))) > 1e-3


def test_ablation_gradients_match_finite_differences():
    rng = make_rng(9)
    comp = clustering_ablation(random_mlp(rng, p=3, p_I=8), 3, seed=0)
    X, G = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    an = comp.gradients(X, G).as_dict()
    fd = fd_gradients(comp, X, G)
    for name in an:
        assert rel_err(an[name], fd[name]) < 1e-6


def test_sketch_projection_is_unbiased():
    # oracle: Monte Carlo average of S S^T over seeds
    acc = np.zeros((16, 16))
    for seed in range(200):
        S = seeded_gaussian(16, 64, seed, 1 / 8)
        acc += S @ S.T
    assert np.max(np.abs(acc / 200 - np.eye(16))) < 0.05


def test_sketch_mean_recovers_linear_block():
    rng = make_rng(10)
    t = random_mlp(rng, p=3, p_I=10, act="identity")
    X = rng.standard_normal((4, 3))
    mean = np.mean([sketch_mlp(t, 5, seed=s).forward(X) for s in range(500)], axis=0)
    ref = t.forward(X)
    assert np.max(np.abs(mean - ref)) / np.max(np.abs(ref)) < 0.05


def test_sketch_shapes_and_determinism(default_fx):
    a = sketch_mlp(default_fx.teacher, 16, seed=3)
    b = sketch_mlp(default_fx.teacher, 16, seed=3)
    assert a.W1.shape == (16, 16) and a.W2.shape == (16, 16)
    assert_array_equal(a.W1, b.W1)
    assert_array_equal(a.b2, default_fx.teacher.b2)


def test_svd_full_rank_lossless_and_rank_bounds(default_fx):
    t = default_fx.teacher
    assert output_error(t, svd_mlp(t, 16), default_fx.inputs) < 1e-8
    assert output_error(t, svd_mlp(t, 4), default_fx.inputs) > 1e-2
    with pytest.raises(InvalidArgument):
        svd_mlp(t, 17)


def test_factored_gradients_are_effective_weight_gradients():
    rng = make_rng(11)
    t = random_mlp(rng, p=4, p_I=6)
    comp = svd_mlp(t, 2)
    X, G = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    an = comp.gradients(X, G).as_dict()
    fd = fd_gradients(comp.dense(), X, G)
    for name in an:
        assert rel_err(an[name], fd[name]) < 1e-6
    assert_allclose(comp.forward(X), comp.dense().forward(X), atol=1e-12)


def sort_threshold_mask(mlp, ratio):
    # oracle: global magnitude order, smallest first, ties by position
    mags = np.concatenate([np.abs(mlp.W1).ravel(), np.abs(mlp.W2).ravel()])
    count = int(np.floor(ratio * mags.size + 1e-9))
    order = sorted(range(mags.size), key=lambda i: (mags[i], i))
    keep = np.ones(mags.size, bool)
    keep[order[:count]] = False
    return keep


@pytest.mark.parametrize("ratio", [0.0, 0.1, 0.5, 0.75, 1.0])
def test_prune_matches_sort_oracle(ratio):
    t = random_mlp(make_rng(12), p=5, p_I=9)
    comp = prune_mlp(t, ratio)
    keep = sort_threshold_mask(t, ratio)
    got = np.concatenate([comp.M1.ravel(), comp.M2.ravel()]).astype(bool)
    assert_array_equal(got, keep)
    zeros = np.count_nonzero(comp.W1 == 0) + np.count_nonzero(comp.W2 == 0)
    assert zeros == int(np.floor(ratio * 90 + 1e-9))


def test_prune_ties_break_by_position():
    t = MlpWeights(np.ones((2, 2)), np.zeros(2), np.ones((2, 2)), np.zeros(2), "relu")
    comp = prune_mlp(t, 0.5)
    assert_array_equal(comp.M1, np.zeros((2, 2)))
    assert_array_equal(comp.M2, np.ones((2, 2)))


def test_prune_ratio_zero_lossless_and_bounds(default_fx):
    t = default_fx.teacher
    assert output_error(t, prune_mlp(t, 0.0), default_fx.inputs) == 0.0
    for bad in (-0.1, 1.1):
        with pytest.raises(InvalidArgument):
            prune_mlp(t, bad)


def test_equal_budget_ratio(default_fx):
    t = default_fx.teacher
    r = equal_budget_prune_ratio(t, 16)
    assert r == 0.75
    kept = t.W1.size + t.W2.size - int(np.floor(r * (t.W1.size + t.W2.size)))
    assert kept == 2 * 16 * 16


def test_masked_gradients_vanish_on_pruned_entries():
    rng = make_rng(13)
    comp = prune_mlp(random_mlp(rng, p=3, p_I=5), 0.5)
    X, G = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    g = comp.gradients(X, G)
    assert np.all(g.dW1[comp.M1 == 0] == 0)
    assert np.all(g.dW2[comp.M2 == 0] == 0)


def mmd_double_loop(P, Q, h):
    # oracle: literal V-statistic
    k = lambda a, b: np.exp(-np.sum((a - b) ** 2) / (2 * h * h))
    pp = sum(k(a, b) for a in P for b in P) / len(P) ** 2
    qq = sum(k(a, b) for a in Q for b in Q) / len(Q) ** 2
    pq = sum(k(a, b) for a in P for b in Q) / (len(P) * len(Q))
    return pp + qq - 2 * pq


def test_mmd_matches_double_loop():
    rng = make_rng(14)
    P, Q = rng.standard_normal((7, 3)), rng.standard_normal((4, 3)) + 0.5
    assert mmd_squared(P, Q, 1.3) == pytest.approx(mmd_double_loop(P, Q, 1.3), rel=1e-12)
    assert mmd_squared(P, P, 1.3) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.1, 5.0), st.integers(0, 1000))
def test_mmd_symmetric_and_nonnegative(n, m, h, seed):
    rng = make_rng(seed)
    P, Q = rng.standard_normal((n, 2)), rng.standard_normal((m, 2))
    a, b = mmd_squared(P, Q, h), mmd_squared(Q, P, h)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)
    assert a >= -1e-12


def test_mmd_support_gradient_matches_finite_differences():
    rng = make_rng(15)
    P, Q = rng.standard_normal((6, 3)), rng.standard_normal((3, 3))
    an = mmd_grad_support(P, Q, 0.9)
    fd = np.zeros_like(Q)
    h = 1e-6
    for idx in np.ndindex(Q.shape):
        Qp, Qm = Q.copy(), Q.copy()
        Qp[idx] += h
        Qm[idx] -= h
        fd[idx] = (mmd_squared(P, Qp, 0.9) - mmd_squared(P, Qm, 0.9)) / (2 * h)
    assert rel_err(an, fd) < 1e-7


def test_mmd_zero_steps_equals_fusion_centroids(default_fx):
    t = default_fx.teacher
    fused = fuse_mlp(t, 16, seed=2)
    m = mmd_mlp(t, 16, seed=2, steps=0)
    assert_allclose(m.W1, fused.W1)
    assert_allclose(m.b1, fused.b1)
    assert_allclose(m.W2, fused.W2)
    assert m.out_scale == 4.0


def test_mmd_support_never_worse_than_init(default_fx):
    from mlpfusion.mlp import sub_mlp_embeddings

    E = sub_mlp_embeddings(default_fx.teacher)
    _, trace = mmd_support(E, 16, seed=0, steps=30, lr=5.0)
    assert min(trace.losses) == trace.losses[trace.best_step]
    assert trace.losses[trace.best_step] <= trace.losses[0]
    assert trace.bandwidth == pytest.approx(median_bandwidth(E))


def test_mmd_nonfinite_loss_reports_step(default_fx, monkeypatch):
    monkeypatch.setattr(importlib.import_module("mlpfusion.compress"), "mmd_grad_support", lambda P, Q, h: np.full_like(Q, np.inf))
    with pytest.raises(NumericFailure) as info:
        mmd_mlp(default_fx.teacher, 4, steps=5)
    assert info.value.step == 1


def test_mmd_argument_checks(default_fx):
    with pytest.raises(InvalidArgument):
        mmd_mlp(default_fx.teacher, 4, lr=0.0)
    with pytest.raises(InvalidArgument):
        mmd_squared(np.ones((2, 2)), np.ones((2, 2)), 0.0)


def test_dispatcher(default_fx):
    t = default_fx.teacher
    with pytest.raises(InvalidArgument):
        compress(t, "quantize", k=4)
    assert compress(t, "svd", t=3).rank == 3
    assert compress(t, "prune").param_count() == 2 * 16 * 16 + t.p_I + t.p
    assert compress(t, "mmd", k=4, steps=0).width == 4
