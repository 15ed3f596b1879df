"""Fisher information, Cramer-Rao bounds and the position error bound.

Channel parameters are ordered ``gamma = [r, phi, tau, theta]`` with
``alpha = r e^{j phi}``; position parameters are ``eta = [r, phi, p_x, p_y]``.
The noise-free sample is

    m^g[n] = sqrt(N_BS) alpha e^{-j 2 pi n tau / (N T_s)} a^H(theta) s^g[n].

The FIM entries mix units (seconds, radians, gain amplitude), so raw
condition numbers are meaningless. Every inversion and rank test here
works on the diagonally equilibrated matrix ``D^{-1/2} J D^{-1/2}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularFIMError
from .model import SPEED_OF_LIGHT, PilotBook, SystemConfig, delay_phasors, steering_vector

COND_LIMIT = 1e12
RANK_TOL = 1e-10


@dataclass(frozen=True)
class ChannelParamVector:
    r: float
    phi: float
    tau: float
    theta: float

    def __post_init__(self):
        if self.r < 0:
            raise DomainError("gain modulus r must be nonnegative")

    @classmethod
    def from_gain(cls, alpha: complex, tau: float, theta: float) -> "ChannelParamVector":
        return cls(abs(alpha), float(np.angle(alpha)), tau, theta)

    @property
    def gain(self) -> complex:
        return self.r * complex(math.cos(self.phi), math.sin(self.phi))

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.phi, self.tau, self.theta])


@dataclass(frozen=True)
class ChannelCRLB:
    """Square-root CRLBs of the channel parameters."""

    r: float
    phi: float
    tau: float
    theta: float

    @property
    def d(self) -> float:
        return SPEED_OF_LIGHT * self.tau


@dataclass(frozen=True)
class BoundRecord:
    fim_channel: np.ndarray
    fim_position: np.ndarray
    crlb_r: float
    crlb_phi: float
    crlb_tau: float
    crlb_theta: float
    peb_m: float
    singular: bool
    diagnosis: str | None = None

    @property
    def crlb_d(self) -> float:
        return SPEED_OF_LIGHT * self.crlb_tau


# --------------------------------------------------------------------------
# Mean and gradients


def noise_free_mean(config: SystemConfig, pilots: PilotBook, gamma: ChannelParamVector) -> np.ndarray:
    """``m^g[n]`` as an ``(N, G)`` array."""
    a_conj = steering_vector(gamma.theta, config).conj()
    proj = np.einsum("k,gnk->ng", a_conj, pilots.pilots)
    ph = delay_phasors([gamma.tau], config)[0][:, None]
    return np.sqrt(config.n_bs_antennas) * gamma.gain * ph * proj


def mean_gradients(config: SystemConfig, pilots: PilotBook, gamma: ChannelParamVector) -> np.ndarray:
    """Analytic ``d m^g[n] / d gamma``, shape ``(4, N, G)``."""
    nbs = config.n_bs_antennas
    a_conj = steering_vector(gamma.theta, config).conj()
    zeta = np.einsum("k,gnk->ng", a_conj, pilots.pilots)
    xi = np.einsum("k,gnk->ng", a_conj * np.arange(nbs), pilots.pilots)
    n = np.arange(config.n_subcarriers)[:, None]
    ph = delay_phasors([gamma.tau], config)[0][:, None]
    alpha = gamma.gain
    base = np.sqrt(nbs) * ph
    kappa = 2 * np.pi * config.element_spacing_m / config.wavelength_m
    return np.stack([
        base * np.exp(1j * gamma.phi) * zeta,
        1j * base * alpha * zeta,
        (-2j * np.pi * n / config.delay_support_s) * base * alpha * zeta,
        -1j * kappa * math.cos(gamma.theta) * base * alpha * xi,
    ])


def fim_channel(config: SystemConfig, pilots: PilotBook, gamma: ChannelParamVector,
                sigma2: float) -> np.ndarray:
    """``J_gamma = (2 / sigma2) sum_{g,n} Re{grad m grad^H m}``."""
    if not sigma2 > 0:
        raise DomainError("noise variance must be positive")
    pilots.check(config)
    grad = mean_gradients(config, pilots, gamma).reshape(4, -1)
    J = (2.0 / sigma2) * np.real(grad @ grad.conj().T)
    return 0.5 * (J + J.T)


# --------------------------------------------------------------------------
# Position domain


def jacobian_T(p) -> np.ndarray:
    """``T = d gamma^T / d eta``: rows ``(r, phi, p_x, p_y)``, columns ``(r, phi, tau, theta)``.

    Uses ``tau = ||p|| / c`` and ``theta = atan2(p_y, p_x)`` exactly.
    """
    px, py = map(float, p)
    rr = px * px + py * py
    if rr == 0:
        raise DomainError("Jacobian undefined with the MS at the BS position")
    dist = math.sqrt(rr)
    T = np.zeros((4, 4))
    T[0, 0] = T[1, 1] = 1.0
    T[2, 2] = px / (SPEED_OF_LIGHT * dist)
    T[3, 2] = py / (SPEED_OF_LIGHT * dist)
    T[2, 3] = -py / rr
    T[3, 3] = px / rr
    return T


def fim_position(fim: np.ndarray, T: np.ndarray) -> np.ndarray:
    fim, T = np.asarray(fim, float), np.asarray(T, float)
    if fim.shape != (4, 4) or T.shape != (4, 4):
        raise DomainError("FIM and Jacobian must both be 4x4")
    J = T @ fim @ T.T
    return 0.5 * (J + J.T)


# --------------------------------------------------------------------------
# Inversion


def equilibrate(J: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(K, scale)`` with ``K = diag(scale) J diag(scale)`` and unit diagonal.

    Zero diagonal entries keep scale 1 so they surface as zero rows.
    """
    d = np.diag(J).copy()
    scale = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 1.0)
    return J * np.outer(scale, scale), scale


def is_rank_deficient(J: np.ndarray, tol: float = RANK_TOL) -> bool:
    """Smallest eigenvalue of the equilibrated FIM below ``tol * trace``."""
    K, _ = equilibrate(J)
    if np.any(np.diag(K) <= 0):
        return True
    eig = np.linalg.eigvalsh(K)
    return bool(eig[0] < tol * np.trace(K))


def invert_fim(J: np.ndarray, diagnosis: str | None = None) -> np.ndarray:
    """Equilibrated inverse; refuses matrices with condition number above ``COND_LIMIT``."""
    K, scale = equilibrate(np.asarray(J, float))
    eig = np.linalg.eigvalsh(K)
    if eig[0] <= 0 or eig[-1] / eig[0] > COND_LIMIT:
        cond = math.inf if eig[0] <= 0 else eig[-1] / eig[0]
        raise SingularFIMError(f"FIM is singular or ill-conditioned (cond={cond:.2e})", diagnosis)
    K_inv = np.linalg.inv(K)
    return K_inv * np.outer(scale, scale)


def crlb_channel(fim: np.ndarray) -> ChannelCRLB:
    """Square roots of the diagonal of ``J_gamma^{-1}``."""
    var = np.diag(invert_fim(fim))
    return ChannelCRLB(*np.sqrt(np.maximum(var, 0.0)))


def peb(fim_pos: np.ndarray, diagnosis: str | None = None) -> float:
    """``sqrt([J_eta^{-1}]_{3,3} + [J_eta^{-1}]_{4,4})`` (1-based, entries ``p_x``, ``p_y``)."""
    inv = invert_fim(fim_pos, diagnosis)
    return float(math.sqrt(max(inv[2, 2] + inv[3, 3], 0.0)))


# --------------------------------------------------------------------------
# Non-singularity conditions


@dataclass(frozen=True)
class SingularityCheck:
    singular: bool
    diagnosis: str

    def __bool__(self):
        return self.singular


def fim_singularity_check(pilots: PilotBook, theta: float, config: SystemConfig,
                          rtol: float = 1e-10) -> SingularityCheck:
    """Decide whether the FIM is singular for a pilot book.

    For a single transmission the (r, phi, theta) FIM is singular iff
    ``zeta = S^T a*(theta)`` and ``xi = S^T B a*(theta)`` are parallel, i.e.
    Cauchy-Schwarz holds with equality. With ``G > 1`` the check falls back to
    an eigenvalue rank test of the full 4x4 FIM at unit gain and noise.
    """
    pilots.check(config)
    if config.n_transmissions == 1:
        S = pilots.pilots[0].T                                      # (N_BS, N)
        a_conj = steering_vector(theta, config).conj()
        zeta = S.T @ a_conj
        xi = S.T @ (np.arange(config.n_bs_antennas) * a_conj)
        lhs = float(np.linalg.norm(zeta) ** 2 * np.linalg.norm(xi) ** 2)
        rhs = float(abs(np.vdot(xi, zeta)) ** 2)
        if lhs == 0:
            return SingularityCheck(True, "pilots are orthogonal to the steering vector (zeta = 0)")
        if lhs - rhs <= rtol * lhs:
            if config.n_subcarriers == 1:
                why = "a single subcarrier and a single transmission give scalar zeta and xi, which are always parallel"
            else:
                why = "zeta and xi are parallel: the pilot vectors on the subcarriers are parallel to each other"
            return SingularityCheck(True, why)
        return SingularityCheck(False, "zeta and xi are not parallel; FIM is non-singular")
    gamma = ChannelParamVector(1.0, 0.0, 0.0, theta)
    J = fim_channel(config, pilots, gamma, 1.0)
    if is_rank_deficient(J):
        return SingularityCheck(True, "FIM eigenvalue test: pilots do not excite all four channel parameters")
    return SingularityCheck(False, "FIM eigenvalue test: full rank")


def compute_bounds(config: SystemConfig, pilots: PilotBook, gamma: ChannelParamVector,
                   sigma2: float) -> BoundRecord:
    """All bounds for one pilot book; singular designs give ``inf`` bounds and a diagnosis."""
    J = fim_channel(config, pilots, gamma, sigma2)
    d = gamma.tau * SPEED_OF_LIGHT
    p = (d * math.cos(gamma.theta), d * math.sin(gamma.theta))
    J_eta = fim_position(J, jacobian_T(p))
    try:
        crlb = crlb_channel(J)
        bound = peb(J_eta)
    except SingularFIMError as exc:
        diag = fim_singularity_check(pilots, gamma.theta, config).diagnosis
        inf = math.inf
        return BoundRecord(J, J_eta, inf, inf, inf, inf, inf, True, diag or exc.diagnosis)
    return BoundRecord(J, J_eta, crlb.r, crlb.phi, crlb.tau, crlb.theta, bound, False)
