import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misopos.errors import ConfigError, DomainError
from misopos.model import (BOLTZMANN, DEFAULT_REFLECTION_LOSS_DB, DEFAULT_REFLECTION_SPREAD_DB,
                           DEFAULT_REFLECTOR_DENSITY, SPEED_OF_LIGHT, ChannelRealization,
                           ObservationSet, PathParams, SystemConfig, channel_lmr, channel_matrix,
                           channel_row, delay_phasor, delay_phasors, generate_pilots, lmr, lmr_db,
                           los_path, los_pathloss, nlos_path, nlos_pathloss, noiseless_samples,
                           sample_scatterers, scale_to_lmr, snr_db, steering_vector, synthesize)

from oracles import mean_loop, steering

# --------------------------------------------------------------------------
# SystemConfig


def test_defaults_match_reference_scenario(default_config):
    cfg = default_config
    assert (cfg.n_subcarriers, cfg.n_transmissions, cfg.n_bs_antennas, cfg.n_beams) == (20, 10, 10, 1)
    assert cfg.sampling_period_s == pytest.approx(25e-9)
    assert cfg.wavelength_m == SPEED_OF_LIGHT / 60e9
    assert cfg.element_spacing_m == pytest.approx(cfg.wavelength_m / 2)
    assert cfg.delay_support_s == pytest.approx(500e-9)
    assert cfg.range_support_m == pytest.approx(149.896229)


def test_thermal_noise():
    cfg = SystemConfig()
    assert cfg.thermal_noise_watts == pytest.approx(BOLTZMANN * 290 * 40e6)
    assert 10 * math.log10(cfg.thermal_noise_watts) == pytest.approx(-127.955, abs=1e-3)


@pytest.mark.parametrize("kwargs", [
    {"carrier_frequency_hz": 0},
    {"bandwidth_hz": -1},
    {"n_subcarriers": 0},
    {"n_transmissions": 2.5},
    {"n_beams": 11},
    {"tx_power_watts": float("nan")},
    {"atmospheric_attenuation_db_per_km": -1},
    {"element_spacing_m": 0.0},
])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ConfigError):
        SystemConfig(**kwargs)


def test_with_transmissions_keeps_other_fields(default_config):
    cfg = default_config.with_transmissions(3)
    assert cfg.n_transmissions == 3
    assert cfg.n_bs_antennas == default_config.n_bs_antennas


# --------------------------------------------------------------------------
# Steering vector and delay phasors


def test_steering_broadside():
    npt.assert_allclose(steering_vector(0.0, SystemConfig(n_bs_antennas=4)), 0.5 * np.ones(4))


def test_steering_endfire_alternates():
    a = steering_vector(np.pi / 2, SystemConfig(n_bs_antennas=4))
    npt.assert_allclose(a, 0.5 * np.array([1, -1, 1, -1]), atol=1e-15)


def test_steering_thirty_degrees():
    a = steering_vector(np.pi / 6, SystemConfig(n_bs_antennas=2))
    npt.assert_allclose(a, np.array([1, 1j]) / np.sqrt(2), atol=1e-15)


def test_steering_matches_loop_oracle():
    cfg = SystemConfig(n_bs_antennas=7)
    for theta in np.linspace(-1.5, 1.5, 13):
        npt.assert_allclose(steering_vector(theta, cfg), steering(theta, 7), atol=1e-14)


def test_steering_vectorized_shape():
    cfg = SystemConfig(n_bs_antennas=5)
    assert steering_vector(np.zeros((3, 4)), cfg).shape == (3, 4, 5)


@settings(derandomize=True, max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=200), st.integers(1, 32))
def test_steering_unit_norm(thetas, nbs):
    norms = np.linalg.norm(steering_vector(np.array(thetas), SystemConfig(n_bs_antennas=nbs)), axis=-1)
    npt.assert_allclose(norms, 1.0, atol=1e-12)


def test_steering_unit_norm_bulk():
    theta = np.random.default_rng(0).uniform(-np.pi, np.pi, 10_000)
    norms = np.linalg.norm(steering_vector(theta, SystemConfig()), axis=-1)
    assert np.max(np.abs(norms - 1)) < 1e-12


def test_delay_phasor_examples(default_config):
    cfg = default_config
    assert delay_phasor(0.0, 7, cfg) == 1
    assert delay_phasor(cfg.delay_support_s, 13, cfg) == pytest.approx(1.0)
    assert delay_phasor(cfg.sampling_period_s, 10, cfg) == pytest.approx(-1.0)


@settings(derandomize=True, max_examples=100)
@given(st.floats(0, 1e-6), st.integers(0, 19))
def test_delay_phasor_periodic(tau, n):
    cfg = SystemConfig()
    assert abs(delay_phasor(tau + cfg.delay_support_s, n, cfg) - delay_phasor(tau, n, cfg)) < 1e-12
    assert abs(delay_phasor(tau, n, cfg)) == pytest.approx(1.0)


def test_delay_phasors_table(default_config):
    taus = np.array([0.0, 3e-9, 40e-9])
    table = delay_phasors(taus, default_config)
    assert table.shape == (3, 20)
    for i, tau in enumerate(taus):
        for n in range(20):
            assert table[i, n] == pytest.approx(delay_phasor(tau, n, default_config))


# --------------------------------------------------------------------------
# Channel


def _path(gain, tau, theta):
    return PathParams(complex(gain), tau, theta)


def test_channel_row_broadside_unit_gain():
    cfg = SystemConfig(n_bs_antennas=4)
    ch = ChannelRealization(_path(1.0, 0.0, 0.0))
    npt.assert_allclose(channel_row(0, ch, cfg), np.ones(4))


def test_channel_row_zero_gain():
    cfg = SystemConfig(n_bs_antennas=4)
    ch = ChannelRealization(_path(0.0, 1e-8, 0.2), (_path(0.0, 2e-8, -0.3),))
    npt.assert_array_equal(channel_row(3, ch, cfg), np.zeros(4))


def test_channel_row_additive():
    cfg = SystemConfig()
    a = _path(0.7 - 0.2j, 1.2e-7, 0.4)
    b = _path(0.1 + 0.3j, 2.0e-7, -0.9)
    both = ChannelRealization(a, (b,))
    for n in (0, 5, 19):
        npt.assert_allclose(channel_row(n, both, cfg),
                            channel_row(n, ChannelRealization(a), cfg)
                            + channel_row(n, ChannelRealization(b), cfg), rtol=1e-14, atol=1e-15)


def test_channel_matrix_stacks_rows():
    cfg = SystemConfig()
    ch = ChannelRealization(_path(0.5j, 1e-7, 0.1), (_path(0.1, 1.5e-7, 0.8),))
    H = channel_matrix(ch, cfg)
    for n in range(cfg.n_subcarriers):
        npt.assert_allclose(H[n], channel_row(n, ch, cfg), atol=1e-14)


def test_channel_row_rejects_bad_index(default_config):
    with pytest.raises(DomainError):
        channel_row(20, ChannelRealization(_path(1, 0, 0)), default_config)


def test_nlos_must_be_later_than_los():
    with pytest.raises(DomainError):
        ChannelRealization(_path(1, 1e-7, 0), (_path(1, 1e-7, 0.2),))


@pytest.mark.parametrize("delay, aod", [(-1e-9, 0.0), (0.0, np.pi / 2), (0.0, -2.0)])
def test_path_params_domain(delay, aod):
    with pytest.raises(DomainError):
        PathParams(1.0, delay, aod)


def test_los_path_geometry(default_config):
    path = los_path(default_config, (30.0, 20.0), phase=0.5)
    assert path.delay_s == pytest.approx(math.hypot(30, 20) / SPEED_OF_LIGHT)
    assert path.aod_rad == pytest.approx(math.atan2(20, 30))
    assert np.angle(path.gain) == pytest.approx(0.5)
    assert abs(path.gain) ** 2 == pytest.approx(1.0 / los_pathloss(math.hypot(30, 20), default_config))


def test_los_path_rejects_out_of_range(default_config):
    with pytest.raises(ConfigError):
        los_path(default_config, (160.0, 0.0))


# --------------------------------------------------------------------------
# Pilots


def test_pilots_deterministic(default_config):
    assert generate_pilots(default_config, 5) == generate_pilots(default_config, 5)


def test_pilots_seed_sensitivity(default_config):
    assert generate_pilots(default_config, 5) != generate_pilots(default_config, 6)


def test_pilot_entries_unit_modulus_before_scaling(default_config):
    book = generate_pilots(default_config, 3)
    assert book.pilots.shape == (10, 20, 10)
    scale = default_config.pilot_norm / np.sqrt(default_config.n_bs_antennas)
    npt.assert_allclose(np.abs(book.pilots) / scale, 1.0, rtol=1e-14)
    npt.assert_allclose(np.linalg.norm(book.pilots, axis=-1), default_config.pilot_norm, rtol=1e-14)


def test_pilot_norm_configurable():
    cfg = SystemConfig(pilot_norm=2.5)
    npt.assert_allclose(np.linalg.norm(generate_pilots(cfg, 0).pilots, axis=-1), 2.5)


def test_pilot_phases_cover_circle(default_config):
    phases = np.angle(generate_pilots(default_config, 9).pilots).ravel()
    hist, _ = np.histogram(phases, bins=8, range=(-np.pi, np.pi))
    # 2000 draws, 250 expected per bin
    assert hist.min() > 180 and hist.max() < 320


def test_pilot_per_subcarrier_layout(small_pilots):
    X = small_pilots.per_subcarrier()
    assert X.shape == (8, 4, 4)
    npt.assert_array_equal(X[3][:, 2], small_pilots.pilots[2, 3])


def test_pilot_check(small_pilots, default_config):
    with pytest.raises(ConfigError):
        small_pilots.check(default_config)


# --------------------------------------------------------------------------
# Path loss, SNR, LMR


def test_los_pathloss_unity_distance():
    cfg = SystemConfig(atmospheric_attenuation_db_per_km=0)
    assert los_pathloss(cfg.wavelength_m / (4 * np.pi), cfg) == pytest.approx(1.0)


def test_los_pathloss_inverse_square():
    cfg = SystemConfig(atmospheric_attenuation_db_per_km=0)
    ratio_db = 10 * np.log10(los_pathloss(80.0, cfg) / los_pathloss(40.0, cfg))
    assert ratio_db == pytest.approx(6.0206, abs=1e-4)


def test_los_pathloss_reference_value(default_config):
    # free space: 20 log10(4.99654e-3 / (4 pi 50)) = -101.99 dB, plus 0.8 dB of air
    inv_rho_db = -10 * np.log10(los_pathloss(50.0, default_config))
    assert inv_rho_db == pytest.approx(-102.79, abs=0.01)


def test_los_pathloss_domain(default_config):
    with pytest.raises(DomainError):
        los_pathloss(0.0, default_config)


@settings(derandomize=True, max_examples=100)
@given(st.floats(0.1, 500), st.floats(0.1, 500), st.floats(0, 100))
def test_los_pathloss_monotone(d1, d2, atten):
    cfg = SystemConfig(atmospheric_attenuation_db_per_km=atten)
    lo, hi = sorted((d1, d2))
    assert 1 / los_pathloss(hi, cfg) <= 1 / los_pathloss(lo, cfg)


def test_reflector_defaults():
    assert DEFAULT_REFLECTOR_DENSITY == pytest.approx(1 / 7)
    assert DEFAULT_REFLECTION_LOSS_DB == -10
    assert DEFAULT_REFLECTION_SPREAD_DB == 4


def test_nlos_pathloss_poisson_factor(default_config):
    lam = default_config.wavelength_m
    inv_rho = 1 / nlos_pathloss(7.0, 1 / 7, 0.1, default_config)
    assert inv_rho == pytest.approx(0.1 * math.exp(-1) * (lam / (4 * np.pi * 7)) ** 2)


def test_nlos_pathloss_small_distance_limit(default_config):
    lam = default_config.wavelength_m
    limit = 0.1 * (1 / 7) ** 2 * (lam / (4 * np.pi)) ** 2
    assert 1 / nlos_pathloss(1e-9, 1 / 7, 0.1, default_config) == pytest.approx(limit, rel=1e-6)


@pytest.mark.parametrize("args", [(0.0, 1 / 7, 0.1), (5.0, 0.0, 0.1), (5.0, 1 / 7, 0.0)])
def test_nlos_pathloss_domain(args, default_config):
    with pytest.raises(DomainError):
        nlos_pathloss(*args, default_config)


def test_snr_scaling(default_config):
    rho = 1e10
    base = snr_db(default_config, rho)
    doubled_power = snr_db(SystemConfig(tx_power_watts=2.0), rho)
    doubled_band = snr_db(SystemConfig(bandwidth_hz=80e6), rho)
    assert doubled_power - base == pytest.approx(3.0103, abs=1e-4)
    assert doubled_band - base == pytest.approx(-3.0103, abs=1e-4)


def test_snr_reference_value(default_config):
    # -102.79 dB path gain against k_B T_0 B = -127.955 dBW
    assert snr_db(default_config, los_pathloss(50.0, default_config)) == pytest.approx(25.16, abs=0.01)


def test_lmr_examples():
    assert lmr(2.0, [2.0, 2.0]) == pytest.approx(0.5)
    assert lmr_db(2.0, [2.0, 2.0]) == pytest.approx(-3.0103, abs=1e-4)
    assert lmr(1.0, []) == math.inf
    assert lmr_db(1.0, []) == math.inf


def test_lmr_from_sampled_geometry(default_config):
    p = (30.0, 20.0)
    rng = np.random.default_rng(4)
    scat = sample_scatterers(default_config, p, 2, 100.0, rng)
    dks = [np.linalg.norm(s) + np.linalg.norm(s - p) for s in scat]
    rhos = [nlos_pathloss(d, 1 / 7, 0.1, default_config) for d in dks]
    rho0 = los_pathloss(math.hypot(*p), default_config)
    expected = (1 / rho0) / (1 / rhos[0] + 1 / rhos[1])
    ch = ChannelRealization(los_path(default_config, p),
                            tuple(nlos_path(default_config, p, s) for s in scat), p)
    assert channel_lmr(ch) == pytest.approx(expected)
    assert lmr(rho0, rhos) == pytest.approx(expected)


def test_sample_scatterers_support(default_config):
    p = np.array([30.0, 20.0])
    scat = sample_scatterers(default_config, p, 50, 100.0, np.random.default_rng(1))
    assert scat.shape == (50, 2)
    assert np.all(np.linalg.norm(scat, axis=1) <= 100.0)
    assert np.all(scat[:, 0] > 0)
    dk = np.linalg.norm(scat, axis=1) + np.linalg.norm(scat - p, axis=1)
    assert np.all(dk > np.linalg.norm(p))


@pytest.mark.parametrize("target", [0.0, 7.5, 20.0])
def test_scale_to_lmr_hits_target(default_config, target):
    p = (30.0, 20.0)
    ch = ChannelRealization(los_path(default_config, p),
                            (nlos_path(default_config, p, (40.0, -10.0)),
                             nlos_path(default_config, p, (10.0, 35.0))), p)
    scaled = scale_to_lmr(ch, target)
    assert 10 * np.log10(channel_lmr(scaled)) == pytest.approx(target, abs=1e-9)
    # relative NLOS powers and geometry are preserved
    r_before = abs(ch.nlos[0].gain) / abs(ch.nlos[1].gain)
    r_after = abs(scaled.nlos[0].gain) / abs(scaled.nlos[1].gain)
    assert r_after == pytest.approx(r_before)
    assert [q.delay_s for q in scaled.nlos] == [q.delay_s for q in ch.nlos]


# --------------------------------------------------------------------------
# Synthesis


def test_noiseless_synthesis_matches_loop_oracle(small_config, small_pilots):
    ch = ChannelRealization(los_path(small_config, (20.0, -5.0), 1.1))
    obs = synthesize(small_config, small_pilots, ch, 0.0, seed=0)
    los = ch.los
    npt.assert_allclose(obs.samples, mean_loop(small_config, small_pilots, los.gain, los.delay_s,
                                               los.aod_rad), rtol=1e-12)
    assert obs.noise_variance == 0.0


def test_synthesis_deterministic(small_config, small_pilots):
    ch = ChannelRealization(los_path(small_config, (20.0, 5.0)))
    a = synthesize(small_config, small_pilots, ch, 1e-9, seed=42)
    b = synthesize(small_config, small_pilots, ch, 1e-9, seed=42)
    npt.assert_array_equal(a.samples, b.samples)


def test_pure_noise_variance():
    cfg = SystemConfig(n_subcarriers=100, n_transmissions=100, n_bs_antennas=2)
    pilots = generate_pilots(cfg, 0)
    ch = ChannelRealization(_path(0.0, 0.0, 0.0))
    obs = synthesize(cfg, pilots, ch, 2.5, seed=1)
    assert np.mean(np.abs(obs.samples) ** 2) == pytest.approx(2.5, rel=0.05)
    assert np.var(obs.samples.real) == pytest.approx(1.25, rel=0.05)
    assert np.var(obs.samples.imag) == pytest.approx(1.25, rel=0.05)


def test_noisy_mean_converges_to_noiseless(small_config, small_pilots):
    ch = ChannelRealization(los_path(small_config, (15.0, 3.0), 0.2))
    mean = noiseless_samples(small_config, small_pilots, ch)
    sigma2 = float(np.mean(np.abs(mean) ** 2))
    K = 10_000
    acc = np.zeros_like(mean)
    for k in range(K):
        acc += synthesize(small_config, small_pilots, ch, sigma2, seed=k).samples
    err = np.abs(acc / K - mean)
    assert np.all(err < 3 * np.sqrt(sigma2) / np.sqrt(K))


def test_synthesis_dimension_mismatch(small_config, small_pilots, default_config):
    ch = ChannelRealization(_path(1.0, 0.0, 0.0))
    with pytest.raises(ConfigError):
        synthesize(default_config, small_pilots, ch, 1.0, seed=0)


def test_synthesis_rejects_delay_beyond_support(small_config, small_pilots):
    ch = ChannelRealization(_path(1.0, small_config.delay_support_s * 1.01, 0.0))
    with pytest.raises(ConfigError):
        synthesize(small_config, small_pilots, ch, 1.0, seed=0)


def test_observation_set_checks(small_config):
    obs = ObservationSet(np.zeros((8, 4)), 0.1)
    obs.check(small_config)
    with pytest.raises(ConfigError):
        ObservationSet(np.zeros((8, 3))).check(small_config)
    with pytest.raises(DomainError):
        ObservationSet(np.zeros((8, 4)), -1.0)
    scaled = obs.scaled(2j)
    assert scaled.noise_variance == pytest.approx(0.4)
