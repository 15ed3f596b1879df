"""System model: configuration, array and channel responses, pilots, path loss
and observation synthesis for a downlink MISO OFDM link.

Conventions
-----------
* Observations are post-FFT samples ``Y[n, g]`` (subcarrier ``n``,
  transmission ``g``), stored as an ``(N, G)`` complex array.
* Pilot books hold the effective transmit vectors ``s^g[n]`` as a
  ``(G, N, N_BS)`` array.
* Noise is circular complex Gaussian with total variance ``sigma2``
  (``sigma2 / 2`` per real dimension); the likelihood exponent is
  ``||y - m||^2 / sigma2`` everywhere in the package.
* The steering vector uses the narrowband approximation: every subcarrier
  shares the carrier wavelength.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23

# Reflector model defaults for first-order NLOS links.
DEFAULT_REFLECTOR_DENSITY = 1.0 / 7.0
DEFAULT_REFLECTION_LOSS_DB = -10.0
DEFAULT_REFLECTION_SPREAD_DB = 4.0


@dataclass(frozen=True)
class SystemConfig:
    """Immutable radio configuration of one experiment.

    ``element_spacing_m=None`` resolves to half a carrier wavelength.
    ``pilot_norm`` is the Euclidean norm every effective pilot vector is
    rescaled to after generation (the Frobenius power constraint on the
    hybrid precoder).
    """

    carrier_frequency_hz: float = 60e9
    bandwidth_hz: float = 40e6
    n_subcarriers: int = 20
    n_transmissions: int = 10
    n_bs_antennas: int = 10
    n_beams: int = 1
    tx_power_watts: float = 1.0
    element_spacing_m: float | None = None
    noise_temperature_k: float = 290.0
    atmospheric_attenuation_db_per_km: float = 16.0
    pilot_norm: float = 1.0

    def __post_init__(self):
        for name in ("carrier_frequency_hz", "bandwidth_hz", "tx_power_watts",
                     "noise_temperature_k", "pilot_norm"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive real, got {value!r}")
        for name in ("n_subcarriers", "n_transmissions", "n_bs_antennas", "n_beams"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.n_beams > self.n_bs_antennas:
            raise ConfigError(
                f"n_beams ({self.n_beams}) must not exceed n_bs_antennas ({self.n_bs_antennas})")
        if self.atmospheric_attenuation_db_per_km < 0:
            raise ConfigError("atmospheric_attenuation_db_per_km must be nonnegative")
        if self.element_spacing_m is None:
            object.__setattr__(self, "element_spacing_m", self.wavelength_m / 2)
        elif not self.element_spacing_m > 0:
            raise ConfigError("element_spacing_m must be positive")

    @property
    def sampling_period_s(self) -> float:
        return 1.0 / self.bandwidth_hz

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    @property
    def delay_support_s(self) -> float:
        """Unambiguous delay span ``N * T_s``; delay phasors wrap beyond it."""
        return self.n_subcarriers * self.sampling_period_s

    @property
    def range_support_m(self) -> float:
        return SPEED_OF_LIGHT * self.delay_support_s

    @property
    def thermal_noise_watts(self) -> float:
        """``k_B T_0 B``."""
        return BOLTZMANN * self.noise_temperature_k * self.bandwidth_hz

    def with_transmissions(self, n_transmissions: int) -> "SystemConfig":
        return replace(self, n_transmissions=n_transmissions)


# --------------------------------------------------------------------------
# Domain records


@dataclass(frozen=True)
class PilotBook:
    """Effective pilots ``s^g[n]``, shape ``(G, N, N_BS)``."""

    pilots: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        pilots = np.asarray(self.pilots, dtype=complex)
        if pilots.ndim != 3:
            raise ConfigError(f"pilot array must be (G, N, N_BS), got shape {pilots.shape}")
        object.__setattr__(self, "pilots", pilots)

    @property
    def n_transmissions(self) -> int:
        return self.pilots.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.pilots.shape[1]

    @property
    def n_antennas(self) -> int:
        return self.pilots.shape[2]

    def per_subcarrier(self) -> np.ndarray:
        """Matrices ``X[i]`` with pilots as columns, shape ``(N, N_BS, G)``."""
        return np.transpose(self.pilots, (1, 2, 0))

    def check(self, config: SystemConfig) -> None:
        expected = (config.n_transmissions, config.n_subcarriers, config.n_bs_antennas)
        if self.pilots.shape != expected:
            raise ConfigError(
                f"pilot book shape {self.pilots.shape} does not match config (G, N, N_BS) = {expected}")

    def __eq__(self, other):
        if not isinstance(other, PilotBook):
            return NotImplemented
        return self.pilots.shape == other.pilots.shape and np.array_equal(self.pilots, other.pilots)

    __hash__ = None


@dataclass(frozen=True)
class PathParams:
    gain: complex
    delay_s: float
    aod_rad: float

    def __post_init__(self):
        if not self.delay_s >= 0:
            raise DomainError(f"path delay must be nonnegative, got {self.delay_s}")
        if not -math.pi / 2 < self.aod_rad < math.pi / 2:
            raise DomainError(f"AOD must lie in (-pi/2, pi/2), got {self.aod_rad}")


@dataclass(frozen=True)
class ChannelRealization:
    """LOS path, optional NLOS paths and the MS position they were built from."""

    los: PathParams
    nlos: tuple[PathParams, ...] = ()
    ms_position_m: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "nlos", tuple(self.nlos))
        for path in self.nlos:
            if not path.delay_s > self.los.delay_s:
                raise DomainError("NLOS delays must exceed the LOS delay")

    @property
    def paths(self) -> tuple[PathParams, ...]:
        return (self.los, *self.nlos)

    def check(self, config: SystemConfig) -> None:
        for path in self.paths:
            if path.delay_s >= config.delay_support_s:
                raise ConfigError(
                    f"path delay {path.delay_s:.3e} s exceeds the unambiguous support "
                    f"{config.delay_support_s:.3e} s")


@dataclass(frozen=True)
class ObservationSet:
    """Received samples ``Y`` (``(N, G)``) and the noise variance behind them."""

    samples: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex)
        if samples.ndim != 2:
            raise ConfigError(f"observations must be an (N, G) matrix, got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)
        if self.noise_variance < 0:
            raise DomainError("noise variance must be nonnegative")

    def check(self, config: SystemConfig) -> None:
        expected = (config.n_subcarriers, config.n_transmissions)
        if self.samples.shape != expected:
            raise ConfigError(
                f"observation shape {self.samples.shape} does not match config (N, G) = {expected}")

    def scaled(self, factor: complex) -> "ObservationSet":
        return ObservationSet(self.samples * factor, self.noise_variance * abs(factor) ** 2)


# --------------------------------------------------------------------------
# Array and channel responses


def steering_vector(theta, config: SystemConfig) -> np.ndarray:
    """ULA response ``a(theta)``, unit norm.

    Accepts a scalar or an array of angles; the antenna axis is last, so an
    input of shape ``(P,)`` yields ``(P, N_BS)``.
    """
    theta = np.asarray(theta, dtype=float)
    k = np.arange(config.n_bs_antennas)
    phase = (2 * np.pi / config.wavelength_m) * config.element_spacing_m * np.sin(theta)
    return np.exp(1j * np.multiply.outer(phase, k)) / np.sqrt(config.n_bs_antennas)


def delay_phasor(tau, n, config: SystemConfig) -> np.ndarray | complex:
    """``exp(-j 2 pi n tau / (N T_s))``; broadcasts over ``tau`` and ``n``."""
    value = np.exp(-2j * np.pi * np.multiply(n, tau) / config.delay_support_s)
    return value if np.ndim(value) else complex(value)


def delay_phasors(tau_axis, config: SystemConfig) -> np.ndarray:
    """Phasor table of shape ``(len(tau_axis), N)``."""
    n = np.arange(config.n_subcarriers)
    return np.exp(-2j * np.pi * np.multiply.outer(np.asarray(tau_axis, float), n)
                  / config.delay_support_s)


def channel_matrix(channel: ChannelRealization, config: SystemConfig) -> np.ndarray:
    """All channel rows ``h^T[n]`` stacked, shape ``(N, N_BS)``."""
    paths = channel.paths
    gains = np.array([p.gain for p in paths], dtype=complex)
    delays = np.array([p.delay_s for p in paths])
    angles = np.array([p.aod_rad for p in paths])
    phasors = delay_phasors(delays, config)              # (P, N)
    a_conj = steering_vector(angles, config).conj()     # (P, N_BS)
    return np.sqrt(config.n_bs_antennas) * np.einsum("p,pn,pk->nk", gains, phasors, a_conj)


def channel_row(n: int, channel: ChannelRealization, config: SystemConfig) -> np.ndarray:
    """Channel row ``h^T[n] = sqrt(N_BS) sum_p alpha_p e^{-j2pi n tau_p/(N T_s)} a^H(theta_p)``."""
    if not 0 <= n < config.n_subcarriers:
        raise DomainError(f"subcarrier index {n} outside [0, {config.n_subcarriers})")
    row = np.zeros(config.n_bs_antennas, dtype=complex)
    for path in channel.paths:
        row += path.gain * delay_phasor(path.delay_s, n, config) * \
            steering_vector(path.aod_rad, config).conj()
    return np.sqrt(config.n_bs_antennas) * row


# --------------------------------------------------------------------------
# Pilots


def generate_pilots(config: SystemConfig, seed: int | np.random.SeedSequence) -> PilotBook:
    """Random-phase effective pilots.

    Every element is ``exp(j phi)`` with ``phi ~ U[0, 2 pi)`` drawn i.i.d.
    over transmissions, subcarriers and antennas; each vector is then scaled
    to ``config.pilot_norm``.
    """
    rng = np.random.default_rng(seed)
    shape = (config.n_transmissions, config.n_subcarriers, config.n_bs_antennas)
    phases = rng.uniform(0.0, 2 * np.pi, size=shape)
    scale = config.pilot_norm / np.sqrt(config.n_bs_antennas)
    stored_seed = seed if isinstance(seed, (int, np.integer)) else None
    return PilotBook(scale * np.exp(1j * phases), seed=stored_seed)


# --------------------------------------------------------------------------
# Path loss, SNR and LMR


def los_pathloss(d0: float, config: SystemConfig) -> float:
    """LOS path loss ``rho`` (linear, >= 0 dB for realistic ranges).

    ``1/rho = mu^2(d0) (lambda / (4 pi d0))^2`` with the atmospheric term
    ``mu^2`` in dB equal to ``-attenuation_db_per_km * d0 / 1000``.
    """
    if not d0 > 0:
        raise DomainError(f"LOS distance must be positive, got {d0}")
    atten_db = -config.atmospheric_attenuation_db_per_km * d0 / 1000.0
    inv_rho = 10 ** (atten_db / 10) * (config.wavelength_m / (4 * np.pi * d0)) ** 2
    return 1.0 / inv_rho


def nlos_pathloss(dk: float, reflector_density: float, reflection_loss: float,
                  config: SystemConfig) -> float:
    """Single-bounce NLOS path loss over total path length ``dk``.

    ``reflection_loss`` is the linear power factor ``sigma_0^2``; the
    geometry term is the Poisson weight ``(gamma_r dk)^2 exp(-gamma_r dk)``.
    """
    if not (dk > 0 and reflector_density > 0 and reflection_loss > 0):
        raise DomainError("NLOS path length, reflector density and reflection loss must be positive")
    poisson = (reflector_density * dk) ** 2 * np.exp(-reflector_density * dk)
    inv_rho = reflection_loss * poisson * (config.wavelength_m / (4 * np.pi * dk)) ** 2
    return 1.0 / inv_rho


def snr_db(config: SystemConfig, rho: float) -> float:
    """Received SNR ``10 log10(P_t / (rho k_B T_0 B))``."""
    if not rho > 0:
        raise DomainError("path loss must be positive")
    return 10 * np.log10(config.tx_power_watts / (rho * config.thermal_noise_watts))


def lmr(rho_los: float, rho_nlos: Sequence[float]) -> float:
    """LOS-to-multipath power ratio (linear); ``inf`` when there is no NLOS path."""
    if rho_los <= 0 or any(r <= 0 for r in rho_nlos):
        raise DomainError("path losses must be positive")
    if len(rho_nlos) == 0:
        return math.inf
    return (1.0 / rho_los) / sum(1.0 / r for r in rho_nlos)


def lmr_db(rho_los: float, rho_nlos: Sequence[float]) -> float:
    value = lmr(rho_los, rho_nlos)
    return math.inf if math.isinf(value) else 10 * math.log10(value)


def channel_lmr(channel: ChannelRealization) -> float:
    """Realized LMR (linear) from path gains."""
    if not channel.nlos:
        return math.inf
    return abs(channel.los.gain) ** 2 / sum(abs(p.gain) ** 2 for p in channel.nlos)


def noise_variance_for_snr(gain: complex, snr: float) -> float:
    """Noise variance that gives per-sample SNR ``|gain|^2 / sigma2`` of ``snr`` dB."""
    # negative exponent underflows to 0 (noiseless) instead of overflowing
    return abs(gain) ** 2 * 10.0 ** (-snr / 10)


# --------------------------------------------------------------------------
# Geometry


def los_path(config: SystemConfig, ms_position, phase: float = 0.0) -> PathParams:
    """LOS path for an MS at ``ms_position`` with gain ``sqrt(P_t / rho) e^{j phase}``."""
    px, py = map(float, ms_position)
    d0 = math.hypot(px, py)
    if d0 == 0:
        raise DomainError("MS position coincides with the BS")
    if d0 >= config.range_support_m:
        raise ConfigError(
            f"MS distance {d0:.1f} m exceeds the unambiguous range {config.range_support_m:.1f} m")
    rho = los_pathloss(d0, config)
    gain = np.sqrt(config.tx_power_watts / rho) * np.exp(1j * phase)
    return PathParams(complex(gain), d0 / SPEED_OF_LIGHT, math.atan2(py, px))


def nlos_path(config: SystemConfig, ms_position, scatterer, phase: float = 0.0,
              reflector_density: float = DEFAULT_REFLECTOR_DENSITY,
              reflection_loss_db: float = DEFAULT_REFLECTION_LOSS_DB) -> PathParams:
    """Single-bounce path BS -> scatterer -> MS."""
    s = np.asarray(scatterer, dtype=float)
    p = np.asarray(ms_position, dtype=float)
    dk = float(np.linalg.norm(s) + np.linalg.norm(s - p))
    if dk >= config.range_support_m:
        raise ConfigError(
            f"NLOS path length {dk:.1f} m exceeds the unambiguous range {config.range_support_m:.1f} m")
    rho = nlos_pathloss(dk, reflector_density, 10 ** (reflection_loss_db / 10), config)
    gain = np.sqrt(config.tx_power_watts / rho) * np.exp(1j * phase)
    return PathParams(complex(gain), dk / SPEED_OF_LIGHT, math.atan2(s[1], s[0]))


def sample_scatterers(config: SystemConfig, ms_position, count: int, radius_m: float,
                      rng: np.random.Generator, max_draws: int = 10_000) -> np.ndarray:
    """Scatterers uniform in the front half of the service disc.

    Draws are rejected when the bounce path would leave the unambiguous
    delay range or the departure angle would fall outside ``(-pi/2, pi/2)``.
    """
    p = np.asarray(ms_position, dtype=float)
    d0 = np.linalg.norm(p)
    out = []
    for _ in range(max_draws):
        if len(out) == count:
            break
        r = radius_m * np.sqrt(rng.uniform())
        ang = rng.uniform(-np.pi / 2, np.pi / 2)
        s = r * np.array([np.cos(ang), np.sin(ang)])
        dk = np.linalg.norm(s) + np.linalg.norm(s - p)
        # min gap keeps the path distinguishable from LOS
        if r > 1.0 and d0 + 1e-3 < dk < config.range_support_m and abs(ang) < np.pi / 2 - 1e-3:
            out.append(s)
    if len(out) < count:
        raise ConfigError("could not place scatterers inside the delay support")
    return np.array(out).reshape(count, 2)


def scale_to_lmr(channel: ChannelRealization, target_lmr_db: float) -> ChannelRealization:
    """Rescale NLOS gains by one common factor so the realized LMR equals the target.

    Relative NLOS powers, delays and angles are kept.
    """
    if not channel.nlos:
        return channel
    current = channel_lmr(channel)
    factor = np.sqrt(current / 10 ** (target_lmr_db / 10))
    nlos = tuple(replace(p, gain=complex(p.gain * factor)) for p in channel.nlos)
    return replace(channel, nlos=nlos)


# --------------------------------------------------------------------------
# Observations


def noiseless_samples(config: SystemConfig, pilots: PilotBook,
                      channel: ChannelRealization) -> np.ndarray:
    """``h^T[n] s^g[n]`` for every ``(n, g)``."""
    H = channel_matrix(channel, config)
    return np.einsum("nk,gnk->ng", H, pilots.pilots)


def synthesize(config: SystemConfig, pilots: PilotBook, channel: ChannelRealization,
               sigma2: float, seed: int | np.random.SeedSequence | None) -> ObservationSet:
    """Draw one observation matrix ``Y = [h^T[n] s^g[n] + noise]``."""
    pilots.check(config)
    channel.check(config)
    if sigma2 < 0:
        raise DomainError("noise variance must be nonnegative")
    mean = noiseless_samples(config, pilots, channel)
    if sigma2 == 0:
        return ObservationSet(mean, 0.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(mean.shape) + 1j * rng.standard_normal(mean.shape)
    return ObservationSet(mean + np.sqrt(sigma2 / 2) * noise, float(sigma2))
