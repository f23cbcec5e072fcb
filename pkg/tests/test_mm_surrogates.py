import numpy as np
import pytest
from hypothesis import given, strategies as st

from starmm.channel_model import (NetworkInstance, RisConfig, ScenarioConfig, effective_channels,
                                  generate_network, ms_partition)
from starmm.fbl_rates import RS, FblParams
from starmm.mm_surrogates import (DegenerateContextError, build_context, build_ris_context,
                                  surrogate_all, surrogate_common, surrogate_curvature,
                                  surrogate_in_ris, surrogate_private, true_rates)
from oracles import rates_loop
from conftest import crandn


def bf_case(seed, K, Nt=3, scale=1.0):
    rng = np.random.default_rng(seed)
    H = crandn(rng, K, Nt)
    W = crandn(rng, Nt, K + 1) * scale
    return rng, H, W, build_context(H, W, FblParams.uniform(K), 1.0, RS)


def ris_case(seed, K=4, M=6):
    rng = np.random.default_rng(seed)
    Nt = 2
    inst = NetworkInstance(crandn(rng, M, Nt), crandn(rng, K, M), crandn(rng, K, Nt), 1.0,
                           np.arange(K) < K // 2)
    ris = RisConfig.from_in_mode(np.exp(2j * np.pi * rng.random(M)), ms_partition(M))
    W = crandn(rng, Nt, K + 1)
    return rng, inst, ris, W, build_ris_context(inst, W, ris, FblParams.uniform(K))


def fd_grad(f, z, h=1e-6):
    g = np.zeros(z.shape, complex)
    for i in range(z.size):
        e = np.zeros(z.size, complex)
        e[i] = h
        e = e.reshape(z.shape)
        g.flat[i] = (f(z + e) - f(z - e)) / (2 * h) + 1j * (f(z + 1j * e) - f(z - 1j * e)) / (2 * h)
    return g


@given(st.sampled_from([2, 4, 6]), st.integers(0, 2 ** 32 - 1), st.floats(0.05, 5.0))
def test_touching(K, seed, scale):
    _, H, W, ctx = bf_case(seed, K, scale=scale)
    vc, vp, _, _ = surrogate_all(ctx, W)
    rc, rp = rates_loop(H, W, 1.0, 1e-5, 256)
    np.testing.assert_allclose(vc, rc, atol=1e-10)
    np.testing.assert_allclose(vp, rp, atol=1e-10)


@given(st.sampled_from([2, 4]), st.integers(0, 2 ** 32 - 1))
def test_gradient_matches_rate_at_expansion_point(K, seed):
    # a first-order minorizer shares the gradient of the rate where it touches
    _, H, W, ctx = bf_case(seed, K)
    for k in range(K):
        for stream, fn, idx in (("c", surrogate_common, 0), ("p", surrogate_private, 1)):
            _, g = fn(k, W, ctx)
            rate = lambda V: rates_loop(H, V, 1.0, 1e-5, 256)[idx][k]
            np.testing.assert_allclose(g, fd_grad(rate, W), atol=1e-5)


def test_surrogate_gradient_away_from_expansion_point():
    rng, H, W, ctx = bf_case(3, 4)
    V = W + 0.3 * crandn(rng, *W.shape)
    for k in range(4):
        _, g = surrogate_private(k, V, ctx)
        f = lambda X: surrogate_private(k, X, ctx)[0]
        np.testing.assert_allclose(g, fd_grad(f, V), atol=1e-6)


@given(st.sampled_from([2, 4, 6]), st.integers(0, 2 ** 32 - 1))
def test_domination(K, seed):
    rng, H, W, ctx = bf_case(seed, K)
    for _ in range(50):
        V = W + rng.choice([0.01, 0.3, 3.0]) * crandn(rng, *W.shape)
        vc, vp, _, _ = surrogate_all(ctx, V)
        rc, rp = rates_loop(H, V, 1.0, 1e-5, 256)
        assert np.all(vc <= rc + 1e-9)
        assert np.all(vp <= rp + 1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_concavity_and_curvature(seed):
    rng, H, W, ctx = bf_case(seed, 4)
    Qc, Qp = surrogate_curvature(ctx)
    for Q in (Qc, Qp):
        for k in range(4):
            assert np.allclose(Q[k], Q[k].conj().T)
            assert np.linalg.eigvalsh(Q[k]).min() >= -1e-12
    z = ctx.flat(W + crandn(rng, *W.shape))
    d = crandn(rng, z.size)
    t = 0.7
    f = lambda x: np.concatenate(surrogate_all(ctx, x)[:2])
    second = f(z + t * d) + f(z - t * d) - 2 * f(z)
    quad = np.concatenate([np.real(np.einsum("m,kmn,n->k", d.conj(), Q, d)) for Q in (Qc, Qp)])
    np.testing.assert_allclose(second, -2 * t ** 2 * quad, rtol=1e-8, atol=1e-9)


def test_zero_snr_expansion_is_finite():
    rng, H, W, _ = bf_case(1, 2)
    W[:, 0] = 0
    ctx = build_context(H, W, FblParams.uniform(2), 1.0, RS)
    assert np.all(np.isfinite(ctx.common.C0))
    vc, _, gc, _ = surrogate_all(ctx, W + 0.1)
    assert np.all(np.isfinite(vc)) and np.all(np.isfinite(gc))


def test_degenerate_contexts():
    _, H, W, _ = bf_case(0, 2)
    with pytest.raises(DegenerateContextError):
        build_context(H, W, FblParams.uniform(2), 0.0)
    with pytest.raises(ValueError):
        build_context(H, W, FblParams.uniform(3), 1.0)


def test_ris_model_reproduces_effective_channels():
    rng, inst, ris, W, ctx = ris_case(2)
    z = np.exp(2j * np.pi * rng.random(inst.M))
    X = ctx.gains(z)
    np.testing.assert_allclose(X, effective_channels(inst, ris.with_in_mode(z)) @ W, atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1))
def test_ris_surrogate_touch_and_bound(seed):
    rng, inst, ris, W, ctx = ris_case(seed)
    H = effective_channels(inst, ris)
    rc, rp = rates_loop(H, W, 1.0, 1e-5, 256)
    for k in range(inst.K):
        assert surrogate_in_ris(k, "common", ris, ctx)[0] == pytest.approx(rc[k], abs=1e-10)
        assert surrogate_in_ris(k, "private", ris, ctx)[0] == pytest.approx(rp[k], abs=1e-10)
    for _ in range(20):
        z = rng.random(inst.M) * np.exp(2j * np.pi * rng.random(inst.M))
        vc, vp, _, _ = surrogate_all(ctx, z)
        tc, tp = true_rates(ctx, z)
        assert np.all(vc <= tc + 1e-9) and np.all(vp <= tp + 1e-9)


def test_ris_gradient_fd():
    rng, inst, ris, W, ctx = ris_case(4)
    z = 0.5 * np.exp(2j * np.pi * rng.random(inst.M))
    for k in range(inst.K):
        for stream in ("common", "private"):
            _, g = surrogate_in_ris(k, stream, z, ctx)
            f = lambda x: surrogate_in_ris(k, stream, x, ctx)[0]
            np.testing.assert_allclose(g, fd_grad(f, z), atol=1e-6)


def test_ris_context_errors():
    _, inst, ris, W, ctx = ris_case(5)
    with pytest.raises(ValueError):
        surrogate_in_ris(0, "common", np.ones(3), ctx)
    with pytest.raises(ValueError):
        surrogate_in_ris(0, "both", ris, ctx)
    with pytest.raises(ValueError):
        build_ris_context(inst, W, RisConfig.zeros(4), FblParams.uniform(inst.K))


def test_physical_scale_context():
    inst = generate_network(ScenarioConfig(), 0).normalized()
    ris = RisConfig.from_in_mode(np.ones(inst.M), ms_partition(inst.M))
    W = np.full((inst.Nt, inst.K + 1), 0.01, complex)
    ctx = build_ris_context(inst, W, ris, FblParams.uniform(inst.K))
    tc, tp = true_rates(ctx, ris.in_mode())
    vc, vp, _, _ = surrogate_all(ctx, ris.in_mode())
    np.testing.assert_allclose(vc, tc, atol=1e-9)
    np.testing.assert_allclose(vp, tp, atol=1e-9)


def test_batch_evaluation_matches_pointwise():
    from starmm.mm_surrogates import surrogate_batch
    rng, H, W, ctx = bf_case(8, 3)
    Z = ctx.flat(W)[None] + crandn(rng, 5, W.size)
    vc, vp = surrogate_batch(ctx, Z)
    tc, tp = true_rates(ctx, Z, batch=True)
    for b in range(5):
        c, p, _, _ = surrogate_all(ctx, Z[b])
        np.testing.assert_allclose(vc[b], c)
        np.testing.assert_allclose(vp[b], p)
        r = true_rates(ctx, Z[b])
        np.testing.assert_allclose(tc[b], r[0])
        np.testing.assert_allclose(tp[b], r[1])
