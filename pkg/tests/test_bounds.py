import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from misopos.bounds import (COND_LIMIT, ChannelParamVector, compute_bounds, crlb_channel,
                            equilibrate, fim_channel, fim_position, fim_singularity_check,
                            invert_fim, is_rank_deficient, jacobian_T, mean_gradients,
                            noise_free_mean, peb)
from misopos.errors import DomainError, SingularFIMError
from misopos.model import SPEED_OF_LIGHT, PilotBook, SystemConfig, generate_pilots

from oracles import fd_jacobian, fim_from_gradients, mean_loop

CFG = SystemConfig(n_subcarriers=8, n_transmissions=3, n_bs_antennas=4)
GAMMA = ChannelParamVector(0.7, 0.4, 1.2e-7, 0.5)


@pytest.fixture
def pilots():
    return generate_pilots(CFG, 21)


def equilibrated_det(J):
    return float(np.linalg.det(equilibrate(J)[0]))


def random_book(rng, G, N, nbs, parallel=False):
    s = np.exp(2j * np.pi * rng.random((G, N, nbs)))
    if parallel:
        # every subcarrier carries a scaled copy of the first pilot
        s = s[:, :1, :] * np.exp(2j * np.pi * rng.random((G, N, 1)))
    return PilotBook(s / np.linalg.norm(s, axis=-1, keepdims=True))


# --------------------------------------------------------------------------
# Mean and gradients


def test_noise_free_mean_matches_loop(pilots):
    assert_allclose(noise_free_mean(CFG, pilots, GAMMA),
                    mean_loop(CFG, pilots, GAMMA.gain, GAMMA.tau, GAMMA.theta), atol=1e-14)


@pytest.mark.parametrize("gamma", [GAMMA, ChannelParamVector(1.3, -2.0, 3.5e-8, -1.1),
                                   ChannelParamVector(0.2, 3.0, 1.9e-7, 0.0)])
def test_gradients_match_finite_differences(pilots, gamma):
    # delay in nanoseconds keeps the finite-difference step well scaled
    def mean(x):
        return noise_free_mean(CFG, pilots, ChannelParamVector(x[0], x[1], x[2] * 1e-9, x[3]))

    fd = fd_jacobian(mean, [gamma.r, gamma.phi, gamma.tau * 1e9, gamma.theta])
    fd[2] *= 1e9
    an = mean_gradients(CFG, pilots, gamma)
    for k in range(4):
        assert np.linalg.norm(fd[k] - an[k]) / np.linalg.norm(an[k]) < 1e-5


def test_fim_matches_gradient_oracle(pilots):
    J = fim_channel(CFG, pilots, GAMMA, 0.3)
    grads = mean_gradients(CFG, pilots, GAMMA)
    assert_allclose(J, fim_from_gradients(grads, 0.3), rtol=1e-12)


def test_fim_symmetric_psd(pilots):
    J = fim_channel(CFG, pilots, GAMMA, 0.1)
    assert_allclose(J, J.T, rtol=0, atol=0)
    assert np.linalg.eigvalsh(equilibrate(J)[0])[0] > 0


def test_fim_scales_inversely_with_noise(pilots):
    J1 = fim_channel(CFG, pilots, GAMMA, 0.2)
    J2 = fim_channel(CFG, pilots, GAMMA, 0.4)
    assert_allclose(J2, J1 / 2, rtol=1e-13)


def test_fim_rejects_nonpositive_noise(pilots):
    with pytest.raises(DomainError):
        fim_channel(CFG, pilots, GAMMA, 0.0)


def test_negative_gain_modulus_rejected():
    with pytest.raises(DomainError):
        ChannelParamVector(-1.0, 0.0, 0.0, 0.0)


def test_param_vector_gain_roundtrip():
    alpha = 0.3 * np.exp(-2.1j)
    g = ChannelParamVector.from_gain(alpha, 1e-7, 0.2)
    assert g.gain == pytest.approx(alpha, rel=1e-14)
    assert_allclose(g.as_array(), [0.3, -2.1, 1e-7, 0.2], rtol=1e-14)


# --------------------------------------------------------------------------
# Singularity


def test_single_subcarrier_single_transmission_is_singular():
    cfg = SystemConfig(n_subcarriers=1, n_transmissions=1, n_bs_antennas=4)
    book = generate_pilots(cfg, 3)
    gamma = ChannelParamVector(1.0, 0.0, 1e-8, 0.3)
    J = fim_channel(cfg, book, gamma, 1.0)
    assert abs(equilibrated_det(J)) < 1e-12
    check = fim_singularity_check(book, 0.3, cfg)
    assert check.singular and "single subcarrier" in check.diagnosis


def test_two_parallel_subcarriers_singular():
    cfg = SystemConfig(n_subcarriers=2, n_transmissions=1, n_bs_antennas=4)
    book = random_book(np.random.default_rng(0), 1, 2, 4, parallel=True)
    J = fim_channel(cfg, book, ChannelParamVector(1.0, 0.0, 1e-8, 0.3), 1.0)
    assert abs(equilibrated_det(J)) < 1e-12
    assert fim_singularity_check(book, 0.3, cfg)


def test_two_random_subcarriers_nonsingular():
    cfg = SystemConfig(n_subcarriers=2, n_transmissions=1, n_bs_antennas=4)
    book = generate_pilots(cfg, 4)
    J = fim_channel(cfg, book, ChannelParamVector(1.0, 0.0, 1e-8, 0.3), 1.0)
    assert equilibrated_det(J) > 1e-6
    assert not fim_singularity_check(book, 0.3, cfg)


def test_singularity_check_agrees_with_rank_test():
    rng = np.random.default_rng(99)
    verdicts = []
    for k in range(1000):
        N = (1, 2, 4)[k % 3]
        cfg = SystemConfig(n_subcarriers=N, n_transmissions=1, n_bs_antennas=4)
        book = random_book(rng, 1, N, 4, parallel=bool(rng.integers(2)))
        theta = rng.uniform(-1.3, 1.3)
        J = fim_channel(cfg, book, ChannelParamVector(1.0, 0.0, 1e-8, theta), 1.0)
        check = bool(fim_singularity_check(book, theta, cfg))
        assert check == is_rank_deficient(J)
        verdicts.append(check)
    # both outcomes are exercised
    assert 0 < sum(verdicts) < len(verdicts)


def test_multi_transmission_check_uses_rank_test():
    cfg = SystemConfig(n_subcarriers=1, n_transmissions=3, n_bs_antennas=4)
    book = generate_pilots(cfg, 8)
    check = fim_singularity_check(book, 0.2, cfg)
    # one subcarrier carries no delay information whatever G is
    assert check.singular and "eigenvalue" in check.diagnosis


# --------------------------------------------------------------------------
# Position domain


def test_jacobian_matches_finite_differences():
    p = np.array([30.0, 20.0])

    def gamma_of(eta):
        return np.array([eta[0], eta[1], math.hypot(eta[2], eta[3]) / SPEED_OF_LIGHT,
                         math.atan2(eta[3], eta[2])])

    fd = fd_jacobian(gamma_of, [0.5, 0.1, *p])
    assert_allclose(jacobian_T(p), fd, rtol=1e-7, atol=1e-20)


def test_jacobian_on_axis():
    T = jacobian_T((40.0, 0.0))
    expected = np.zeros((4, 4))
    expected[0, 0] = expected[1, 1] = 1.0
    expected[2, 2] = 1 / SPEED_OF_LIGHT
    expected[3, 3] = 1 / 40.0
    assert_allclose(T, expected, rtol=1e-15, atol=0)


def test_jacobian_at_origin_rejected():
    with pytest.raises(DomainError):
        jacobian_T((0.0, 0.0))


def test_position_fim_matches_direct_oracle(pilots):
    p = (24.0, 13.0)
    d = math.hypot(*p)
    gamma = ChannelParamVector(0.7, 0.4, d / SPEED_OF_LIGHT, math.atan2(p[1], p[0]))

    def mean(eta):
        g = ChannelParamVector(eta[0], eta[1], math.hypot(eta[2], eta[3]) / SPEED_OF_LIGHT,
                               math.atan2(eta[3], eta[2]))
        return noise_free_mean(CFG, pilots, g)

    grads = fd_jacobian(mean, [gamma.r, gamma.phi, *p])
    oracle = fim_from_gradients(grads, 0.5)
    J_eta = fim_position(fim_channel(CFG, pilots, gamma, 0.5), jacobian_T(p))
    scale = 1 / np.sqrt(np.outer(np.diag(oracle), np.diag(oracle)))
    assert_allclose(J_eta * scale, oracle * scale, atol=1e-6)


def test_fim_position_shape_check():
    with pytest.raises(DomainError):
        fim_position(np.eye(3), np.eye(4))


# --------------------------------------------------------------------------
# Inversion and bounds


def test_crlb_of_diagonal_fim():
    c = crlb_channel(np.diag([4.0, 25.0, 1e16, 100.0]))
    assert_allclose([c.r, c.phi, c.tau, c.theta], [0.5, 0.2, 1e-8, 0.1], rtol=1e-14)


def test_equilibrated_inverse_matches_dense(pilots):
    J = fim_channel(CFG, pilots, GAMMA, 0.1)
    K, s = equilibrate(J)
    assert_allclose(np.diag(K), 1.0, rtol=1e-14)
    dense = np.linalg.inv(K) * np.outer(s, s)
    assert_allclose(invert_fim(J), dense, rtol=1e-10)
    assert_allclose((invert_fim(J) / np.outer(s, s)) @ K, np.eye(4), atol=1e-10)


def test_invert_singular_raises_with_diagnosis():
    J = np.diag([1.0, 1.0, 1.0, 0.0])
    with pytest.raises(SingularFIMError) as info:
        invert_fim(J, "why")
    assert info.value.diagnosis == "why"
    J = np.diag([1.0, 1.0, 1.0, 1.0])
    J[0, 1] = J[1, 0] = 1 - 1e-14
    with pytest.raises(SingularFIMError):
        invert_fim(J)
    assert COND_LIMIT == 1e12


def test_schur_complement_gives_delay_bound(pilots):
    J = fim_channel(CFG, pilots, GAMMA, 0.1)
    rest = [0, 1, 3]
    K, s = equilibrate(J)
    Kr = K[np.ix_(rest, rest)]
    schur = K[2, 2] - K[2, rest] @ np.linalg.solve(Kr, K[rest, 2])
    assert crlb_channel(J).tau == pytest.approx(s[2] / math.sqrt(schur), rel=1e-10)
    # nuisance parameters only add uncertainty
    assert crlb_channel(J).tau >= 1 / math.sqrt(J[2, 2])


def test_more_information_never_increases_bounds(pilots):
    rng = np.random.default_rng(2)
    J = fim_channel(CFG, pilots, GAMMA, 0.1)
    base = crlb_channel(J)
    for _ in range(20):
        v = rng.standard_normal(4) * np.sqrt(np.diag(J))
        more = crlb_channel(J + np.outer(v, v))
        for name in ("r", "phi", "tau", "theta"):
            assert getattr(more, name) <= getattr(base, name) * (1 + 1e-12)


def test_peb_halves_when_fim_scaled_by_four(pilots):
    J_eta = fim_position(fim_channel(CFG, pilots, GAMMA, 0.1), jacobian_T((30.0, 20.0)))
    assert peb(4 * J_eta) == pytest.approx(peb(J_eta) / 2, rel=1e-12)


@settings(derandomize=True, max_examples=50, deadline=None)
@given(k=st.floats(1e-3, 1e3))
def test_peb_scales_with_inverse_root_of_information(k):
    book = generate_pilots(CFG, 5)
    J_eta = fim_position(fim_channel(CFG, book, GAMMA, 0.1), jacobian_T((30.0, 20.0)))
    assert peb(k * J_eta) == pytest.approx(peb(J_eta) / math.sqrt(k), rel=1e-10)


def test_peb_non_increasing_in_transmissions():
    cfg20 = SystemConfig(n_transmissions=20)
    book = generate_pilots(cfg20, 13)
    p = (30.0, 20.0)
    gamma = ChannelParamVector(1e-5, 0.3, math.hypot(*p) / SPEED_OF_LIGHT, math.atan2(p[1], p[0]))
    values = []
    for G in (1, 5, 10, 20):
        cfg = SystemConfig(n_transmissions=G)
        # nested books: each G reuses the first G transmissions
        rec = compute_bounds(cfg, PilotBook(book.pilots[:G]), gamma, 1e-12)
        values.append(rec.peb_m)
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_distance_bound_is_c_times_delay_bound(pilots):
    rec = compute_bounds(CFG, pilots, GAMMA, 0.1)
    assert rec.crlb_d == SPEED_OF_LIGHT * rec.crlb_tau
    assert crlb_channel(rec.fim_channel).d == SPEED_OF_LIGHT * crlb_channel(rec.fim_channel).tau


def test_compute_bounds_record(pilots):
    rec = compute_bounds(CFG, pilots, GAMMA, 0.1)
    assert not rec.singular and rec.diagnosis is None
    c = crlb_channel(rec.fim_channel)
    assert (rec.crlb_r, rec.crlb_phi, rec.crlb_tau, rec.crlb_theta) == (c.r, c.phi, c.tau, c.theta)
    assert rec.peb_m == peb(rec.fim_position)
    # PEB is at least as large as the range and cross-range contributions
    d = SPEED_OF_LIGHT * GAMMA.tau
    assert rec.peb_m >= rec.crlb_d * (1 - 1e-9)
    assert rec.peb_m >= d * rec.crlb_theta * (1 - 1e-9)


def test_compute_bounds_singular_returns_inf():
    cfg = SystemConfig(n_subcarriers=1, n_transmissions=1, n_bs_antennas=4)
    rec = compute_bounds(cfg, generate_pilots(cfg, 1), ChannelParamVector(1.0, 0.0, 1e-8, 0.2), 1.0)
    assert rec.singular
    assert math.isinf(rec.peb_m) and math.isinf(rec.crlb_tau) and math.isinf(rec.crlb_d)
    assert "subcarrier" in rec.diagnosis
