import numpy as np
import pytest
from hypothesis import given, strategies as st

from starmm.fbl_rates import (LN2, RS, TIN, BeamformerSet, ContractError, DomainError, FblParams,
                              dispersion, fbl_rate, maxmin_objective, q_inv, rate_report,
                              snr_common, snr_private, stream_snrs)
from oracles import fbl_rate_ref, q_inv_mp, rates_loop
from conftest import crandn


def test_dispersion_fixed_points():
    assert dispersion(0.0) == 0.0
    assert dispersion(1.0) == pytest.approx(1.0, abs=1e-15)
    assert dispersion(1e12) == pytest.approx(2.0, rel=1e-9)


@pytest.mark.parametrize("eps", [1e-9, 1e-5, 1e-3, 0.1, 0.49])
def test_q_inv_matches_high_precision_root(eps):
    assert q_inv(eps) == pytest.approx(q_inv_mp(eps), rel=1e-10)


def test_q_inv_reference_value():
    assert abs(q_inv(1e-5) - 4.26489) < 1e-4


@pytest.mark.parametrize("bad", [0.0, 0.5, 0.7, -1e-3])
def test_q_inv_domain(bad):
    with pytest.raises(DomainError):
        q_inv(bad)


def test_fbl_rate_reference_value():
    assert abs(fbl_rate(1.0, 1e-5, 256) - 0.42664) < 1e-4
    assert fbl_rate(1.0, 1e-5, 256) == pytest.approx(fbl_rate_ref(1.0, 1e-5, 256), rel=1e-10)


@given(st.floats(0, 1e6), st.floats(1e-8, 0.4), st.integers(1, 10000))
def test_fbl_rate_matches_oracle(snr, eps, n):
    assert fbl_rate(snr, eps, n) == pytest.approx(fbl_rate_ref(snr, eps, n), rel=1e-9, abs=1e-12)


def test_fbl_rate_below_shannon_and_vectorized():
    s = np.logspace(-3, 6, 50)
    r = fbl_rate(s, 1e-5, 256)
    assert r.shape == s.shape
    assert np.all(r < np.log1p(s))
    # the dispersion penalty has infinite slope at 0, so the rate dips first
    assert np.all(np.diff(r[s >= 1]) > 0)
    assert fbl_rate(1e-3, 1e-5, 256) < 0


def test_fbl_rate_rejects_short_blocks():
    with pytest.raises(DomainError):
        fbl_rate(1.0, 1e-5, 0.5)


def test_params_validation():
    with pytest.raises(DomainError):
        FblParams.uniform(3, eps=0.6)
    with pytest.raises(DomainError):
        FblParams.uniform(3, n=0)
    p = FblParams.uniform(4).select_users([0, 2])
    assert p.K == 2


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
def test_rates_match_loop_oracle(K, Nt, seed):
    rng = np.random.default_rng(seed)
    H = crandn(rng, K, Nt)
    W = crandn(rng, Nt, K + 1)
    rep = rate_report(H, W, FblParams.uniform(K), 0.7, RS)
    rc, rp = rates_loop(H, W, 0.7, 1e-5, 256)
    np.testing.assert_allclose(rep.r_ck, rc, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(rep.r_pk, rp, rtol=1e-10, atol=1e-12)
    assert rep.r_c == pytest.approx(max(0.0, rc.min()))
    assert rep.objective == pytest.approx((rep.r_c + rp).min())
    snr_c, snr_p = stream_snrs(H @ W, 0.7)
    for k in range(K):
        assert snr_common(k, H, W, 0.7) == pytest.approx(snr_c[k])
        assert snr_private(k, H, W, 0.7) == pytest.approx(snr_p[k])


def test_common_rate_clamped_at_zero(rng):
    H = crandn(rng, 3, 2)
    W = crandn(rng, 2, 4)
    W[:, 0] *= 1e-6                       # common stream far below noise
    rep = rate_report(H, W, FblParams.uniform(3), 1.0, RS)
    assert np.all(rep.r_ck < 0)
    assert rep.r_c == 0.0
    np.testing.assert_allclose(rep.R_k, rep.r_pk)


def test_tin_contract(rng):
    H = crandn(rng, 2, 2)
    W = crandn(rng, 2, 3)
    with pytest.raises(ContractError):
        rate_report(H, W, FblParams.uniform(2), 1.0, TIN)
    W[:, 0] = 0
    rep = rate_report(H, W, FblParams.uniform(2), 1.0, TIN)
    assert rep.r_c == 0.0
    assert maxmin_objective(H, W, FblParams.uniform(2), 1.0, RS) == pytest.approx(rep.objective)


def test_units(rng):
    H = crandn(rng, 2, 2)
    W = crandn(rng, 2, 3)
    rep = rate_report(H, W, FblParams.uniform(2), 1.0)
    bits = rep.in_bits()
    assert bits.unit == "bits"
    assert bits.objective == pytest.approx(rep.objective / LN2)
    assert bits.in_bits() is bits


def test_beamformer_set_feasibility():
    W = np.ones((2, 3), complex)
    bf = BeamformerSet(W, 6.0)
    assert bf.total_power == pytest.approx(6.0)
    assert bf.is_feasible()
    assert not BeamformerSet(W, 5.0).is_feasible()
    np.testing.assert_array_equal(bf.w_c, W[:, 0])
    assert bf.private.shape == (2, 2)
