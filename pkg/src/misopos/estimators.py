"""TOF/AOD estimators and the position mapping.

Three pipelines are provided:

``ml2d``
    exhaustive grid search of the compressed negative log-likelihood over
    ``(theta, tau)``;
``uml``
    one-dimensional TOF search of the unstructured likelihood (free vector
    ``b`` in place of the steering vector), followed by a one-dimensional
    AOD search of the compressed likelihood at the estimated TOF;
``mm``
    closed-form method-of-moments TOF from lagged autocorrelations of the
    pilot-equalized observations, followed by the same AOD search.

Estimators see only observations, pilots, the configuration and search
grids. Argmin ties resolve to the lowest flat index, i.e. smaller ``tau``
first and then smaller ``theta``.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.linalg import lapack
from scipy.optimize import minimize_scalar

from .errors import (DegenerateInputError, DomainError, InapplicableEstimatorError,
                     RankDeficiencyError)
from .model import (SPEED_OF_LIGHT, ObservationSet, PilotBook, SystemConfig,
                    delay_phasors, steering_vector)

RCOND_LIMIT = 1e-12
# Share of the delay support ahead of the MM branch cut when no cap is given.
DEFAULT_TAU_MAX_FRACTION = 0.98
# Bound on the (theta, tau, n, g) elements materialised per ML2D block.
_ML_BLOCK_ELEMENTS = 2_000_000


class Method(str, enum.Enum):
    ML2D = "ML2D"
    UML = "UML"
    MM = "MM"


@dataclass(frozen=True)
class SearchGrid:
    tau_axis: np.ndarray
    theta_axis: np.ndarray

    def __post_init__(self):
        for name in ("tau_axis", "theta_axis"):
            axis = np.asarray(getattr(self, name), dtype=float)
            if axis.ndim != 1 or axis.size < 2:
                raise DomainError(f"{name} needs at least two points")
            if np.any(np.diff(axis) <= 0):
                raise DomainError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, axis)

    @classmethod
    def default(cls, n_points: int = 150, d_max_m: float = 100.0,
                n_theta: int | None = None) -> "SearchGrid":
        """``tau`` over ``[0, d_max/c]`` with end points; ``theta`` at cell
        midpoints of ``(-pi/2, pi/2)`` so endfire is never evaluated."""
        n_theta = n_points if n_theta is None else n_theta
        tau = np.linspace(0.0, d_max_m / SPEED_OF_LIGHT, n_points)
        step = np.pi / n_theta
        theta = -np.pi / 2 + step * (np.arange(n_theta) + 0.5)
        return cls(tau, theta)

    @property
    def tau_step(self) -> float:
        return float(np.max(np.diff(self.tau_axis)))

    @property
    def theta_step(self) -> float:
        return float(np.max(np.diff(self.theta_axis)))


@dataclass(frozen=True)
class EstimateRecord:
    tau_hat: float
    theta_hat: float
    alpha_hat: complex
    method: Method
    lags_L: int | None = None
    wall_time: float = 0.0

    @property
    def d_hat(self) -> float:
        return SPEED_OF_LIGHT * self.tau_hat

    @property
    def p_hat(self) -> np.ndarray:
        return position_from(self.d_hat, self.theta_hat)


# --------------------------------------------------------------------------
# Shared pieces


def _samples(Y) -> np.ndarray:
    return Y.samples if isinstance(Y, ObservationSet) else np.asarray(Y, dtype=complex)


def _check_dims(Y: np.ndarray, pilots: PilotBook, config: SystemConfig) -> None:
    pilots.check(config)
    if Y.shape != (config.n_subcarriers, config.n_transmissions):
        raise DomainError(
            f"observation shape {Y.shape} does not match (N, G) = "
            f"{(config.n_subcarriers, config.n_transmissions)}")


def pilot_projections(pilots: PilotBook, theta, config: SystemConfig) -> np.ndarray:
    """``a^H(theta) s^g[n]`` for each angle, shape ``(..., N, G)``."""
    a_conj = steering_vector(theta, config).conj()
    G, N, nbs = pilots.pilots.shape
    flat = a_conj.reshape(-1, nbs) @ pilots.pilots.reshape(G * N, nbs).T
    out = np.swapaxes(flat.reshape(-1, G, N), 1, 2)
    return out.reshape(a_conj.shape[:-1] + (N, G))


def _rcond_upper(R: np.ndarray) -> float:
    """1-norm reciprocal condition number of an upper triangular matrix."""
    trcon = lapack.ztrcon if np.iscomplexobj(R) else lapack.dtrcon
    rcond, info = trcon(R, norm="1", uplo="U", diag="N")
    return float(rcond) if info == 0 else 0.0


def _triangular_inverse(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverses and exact 1-norm reciprocal condition numbers of stacked triangular matrices.

    Singular members get ``rcond = 0`` and an all-NaN inverse.
    """
    with np.errstate(all="ignore"):
        diag_ok = np.all(np.abs(np.diagonal(R, axis1=-2, axis2=-1)) > 0, axis=-1)
        inv = np.full_like(R, np.nan)
        if diag_ok.all():
            inv = np.linalg.inv(R)
        elif diag_ok.any():
            inv[diag_ok] = np.linalg.inv(R[diag_ok])
        norm = np.abs(R).sum(axis=-2).max(axis=-1)
        norm_inv = np.abs(inv).sum(axis=-2).max(axis=-1)
        rcond = np.nan_to_num(1.0 / (norm * norm_inv), nan=0.0, posinf=0.0)
    return inv, rcond


def _argmin(values: np.ndarray) -> tuple[int, ...]:
    # np.argmin returns the first occurrence, which is the documented tie rule.
    return np.unravel_index(int(np.argmin(values)), values.shape)


def _golden_refine(fun, axis: np.ndarray, idx: int) -> float:
    lo = axis[max(idx - 1, 0)]
    hi = axis[min(idx + 1, axis.size - 1)]
    res = minimize_scalar(fun, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-6 * (hi - lo)})
    return float(res.x) if res.fun <= fun(axis[idx]) else float(axis[idx])


# --------------------------------------------------------------------------
# Joint maximum likelihood


def _w_vectors(pilots: PilotBook, theta: float, tau: float, config: SystemConfig) -> np.ndarray:
    """``w^g[n] = e^{-j2pi n tau/(N T_s)} a^H(theta) s^g[n]``, shape ``(N, G)``."""
    zeta = pilot_projections(pilots, theta, config)
    return delay_phasors([tau], config)[0][:, None] * zeta


def alpha_hat(Y, pilots: PilotBook, theta: float, tau: float, config: SystemConfig) -> complex:
    """Closed-form LS gain ``(1/sqrt(N_BS)) sum_g w^H y / sum_g ||w||^2``."""
    Y = _samples(Y)
    _check_dims(Y, pilots, config)
    w = _w_vectors(pilots, theta, tau, config)
    energy = float(np.sum(np.abs(w) ** 2))
    if energy == 0.0:
        raise DegenerateInputError("pilots project to zero along the candidate direction")
    return complex(np.vdot(w, Y) / energy / np.sqrt(config.n_bs_antennas))


def compressed_nll(Y, pilots: PilotBook, theta: float, tau: float, config: SystemConfig) -> float:
    """``sum_g ||y^g - sqrt(N_BS) alpha_hat w^g||^2`` at ``(theta, tau)``."""
    Y = _samples(Y)
    a = alpha_hat(Y, pilots, theta, tau, config)
    w = _w_vectors(pilots, theta, tau, config)
    return float(np.sum(np.abs(Y - np.sqrt(config.n_bs_antennas) * a * w) ** 2))


def _nll_surface(Y: np.ndarray, zeta: np.ndarray, phasors: np.ndarray) -> np.ndarray:
    """Compressed NLL on every ``(theta, tau)`` node.

    ``zeta`` is ``(P_theta, N, G)``, ``phasors`` is ``(P_tau, N)``. Each node
    builds its own ``w`` and residual, mirroring the per-node cost of a 2-D
    grid search; blocks over ``theta`` bound the memory footprint.
    """
    n_theta, n_tau = zeta.shape[0], phasors.shape[0]
    per_theta = n_tau * zeta.shape[1] * zeta.shape[2]
    block = max(1, _ML_BLOCK_ELEMENTS // per_theta)
    out = np.empty((n_theta, n_tau))
    for start in range(0, n_theta, block):
        z = zeta[start:start + block]
        w = phasors[None, :, :, None] * z[:, None, :, :]           # (b, P_tau, N, G)
        energy = np.sum((w.real ** 2 + w.imag ** 2), axis=(2, 3))
        with np.errstate(invalid="ignore", divide="ignore"):
            gain = np.sum(w.conj() * Y, axis=(2, 3)) / energy
        gain = np.where(energy > 0, gain, 0.0)
        resid = Y - gain[:, :, None, None] * w
        out[start:start + block] = np.sum(resid.real ** 2 + resid.imag ** 2, axis=(2, 3))
    return out


def ml2d(Y, pilots: PilotBook, grid: SearchGrid, config: SystemConfig,
         refine: bool = False) -> EstimateRecord:
    """Joint ML of ``(theta, tau)`` by 2-D grid search of the compressed NLL."""
    t0 = time.perf_counter()
    Y = _samples(Y)
    _check_dims(Y, pilots, config)
    zeta = pilot_projections(pilots, grid.theta_axis, config)
    if not np.any(zeta):
        raise DegenerateInputError("all pilot projections are zero")
    surface = _nll_surface(Y, zeta, delay_phasors(grid.tau_axis, config))
    # transpose so the flat index orders tau first
    i_tau, i_theta = _argmin(surface.T)
    tau, theta = float(grid.tau_axis[i_tau]), float(grid.theta_axis[i_theta])
    if refine:
        for _ in range(2):
            tau = _golden_refine(lambda t: compressed_nll(Y, pilots, theta, t, config),
                                 grid.tau_axis, i_tau)
            theta = _golden_refine(lambda a: compressed_nll(Y, pilots, a, tau, config),
                                   grid.theta_axis, i_theta)
    alpha = alpha_hat(Y, pilots, theta, tau, config)
    return EstimateRecord(tau, theta, alpha, Method.ML2D, wall_time=time.perf_counter() - t0)


def aod_given_tof(Y, pilots: PilotBook, tau_fixed: float, theta_axis, config: SystemConfig,
                  refine: bool = False) -> float:
    """Minimize the compressed NLL over ``theta_axis`` at a fixed TOF."""
    Y = _samples(Y)
    _check_dims(Y, pilots, config)
    theta_axis = np.asarray(theta_axis, dtype=float)
    G, N, nbs = pilots.pilots.shape
    S = pilots.pilots.reshape(G * N, nbs)                           # rows s^g[n]^T, (g, n) order
    v = (delay_phasors([tau_fixed], config)[0].conj()[None, :] * Y.T).ravel()
    # With zeta = a^H s: sum |zeta|^2 = a^H (S^T conj S) a and sum conj(zeta) v = a^T (S^H v),
    # so the P x GN projection table is never formed.
    a = steering_vector(theta_axis, config)                         # (P, N_BS)
    gram = S.T @ S.conj()
    energy = np.real(np.sum((a.conj() @ gram) * a, axis=1))
    if not np.any(energy > 1e-300):
        raise DegenerateInputError("all pilot projections are zero")
    num = a @ (S.conj().T @ v)
    with np.errstate(invalid="ignore", divide="ignore"):
        explained = np.where(energy > 1e-300, (num.real ** 2 + num.imag ** 2) / energy, 0.0)
    # LS residual ||y||^2 - |w^H y|^2 / ||w||^2 per angle
    nll = np.sum(np.abs(Y) ** 2) - explained
    (idx,) = _argmin(nll)
    if refine:
        return _golden_refine(lambda a: compressed_nll(Y, pilots, a, tau_fixed, config),
                              theta_axis, idx)
    return float(theta_axis[idx])


# --------------------------------------------------------------------------
# Unstructured ML


def _stacked_pilot_qr(pilots: PilotBook, config: SystemConfig):
    """QR of the stacked pilot rows ``[Xbar^1; ...; Xbar^G]`` (``GN x N_BS``)."""
    n, nbs = config.n_subcarriers, config.n_bs_antennas
    if n < nbs:
        raise RankDeficiencyError(
            f"UML needs N >= N_BS, got N={n} subcarriers for N_BS={nbs} antennas")
    A = pilots.pilots.reshape(-1, nbs)
    Q, R = np.linalg.qr(A)
    rcond = _rcond_upper(R)
    if rcond < RCOND_LIMIT:
        raise RankDeficiencyError(
            f"pilot Gram matrix Xbar_G is numerically singular (rcond={rcond:.2e})")
    return Q, R


def _derotated(Y: np.ndarray, tau_axis, config: SystemConfig) -> np.ndarray:
    """Stacked ``D^H(tau) y^g`` for each tau, shape ``(P, G*N)`` in ``(g, n)`` order."""
    ph = delay_phasors(tau_axis, config).conj()                    # (P, N)
    return (ph[:, None, :] * Y.T[None, :, :]).reshape(len(ph), -1)


def uml_bhat(Y, pilots: PilotBook, tau: float, config: SystemConfig) -> np.ndarray:
    """Unstructured steering estimate ``b_hat(tau) = Xbar_G^{-1} sum_g Xbar^gH D^H(tau) y^g``."""
    Y = _samples(Y)
    _check_dims(Y, pilots, config)
    Q, R = _stacked_pilot_qr(pilots, config)
    v = _derotated(Y, [tau], config)[0]
    return scipy.linalg.solve_triangular(R, Q.conj().T @ v)


def uml_objective(Y, pilots: PilotBook, tau_axis, config: SystemConfig) -> np.ndarray:
    """Residual ``sum_g ||y^g - D(tau) Xbar^g b_hat(tau)||^2`` on ``tau_axis``."""
    Y = _samples(Y)
    _check_dims(Y, pilots, config)
    Q, _ = _stacked_pilot_qr(pilots, config)
    V = _derotated(Y, tau_axis, config)                             # (P, GN)
    proj = V @ Q.conj()                                             # rows: (Q^H v)^T
    total = float(np.sum(np.abs(Y) ** 2))
    return np.maximum(total - np.sum(proj.real ** 2 + proj.imag ** 2, axis=1), 0.0)


def uml_tof(Y, pilots: PilotBook, tau_axis, config: SystemConfig) -> float:
    tau_axis = np.asarray(tau_axis, dtype=float)
    (idx,) = _argmin(uml_objective(Y, pilots, tau_axis, config))
    return float(tau_axis[idx])


def uml(Y, pilots: PilotBook, grid: SearchGrid, config: SystemConfig,
        refine: bool = False) -> EstimateRecord:
    """UML TOF search, then AOD search of the compressed NLL at that TOF."""
    t0 = time.perf_counter()
    Y = _samples(Y)
    objective = uml_objective(Y, pilots, grid.tau_axis, config)
    (idx,) = _argmin(objective)
    tau = float(grid.tau_axis[idx])
    if refine:
        tau = _golden_refine(lambda t: float(uml_objective(Y, pilots, [t], config)[0]),
                             grid.tau_axis, idx)
    theta = aod_given_tof(Y, pilots, tau, grid.theta_axis, config, refine=refine)
    alpha = alpha_hat(Y, pilots, theta, tau, config)
    return EstimateRecord(tau, theta, alpha, Method.UML, wall_time=time.perf_counter() - t0)


# --------------------------------------------------------------------------
# Method of moments


class MomentTransform:
    """Pilot-equalized observations ``y~_i^T = y^T[i] X_i^+`` (shape ``(N, N_BS)``).

    Built from the QR factors of ``X_i^H = Q_i R_i`` so that
    ``X_i^+ = Q_i R_i^{-H}``. ``noise_shaping`` gives ``C_i = (X_i^+)^H X_i^+``,
    the covariance of the transformed noise in units of ``sigma2``; the TOF
    estimator does not whiten with it.
    """

    def __init__(self, y_tilde: np.ndarray, Q: np.ndarray, R: np.ndarray, R_inv: np.ndarray):
        self.y_tilde = y_tilde
        self._Q = Q
        self._R = R
        self._R_inv = R_inv

    @cached_property
    def right_inverse(self) -> np.ndarray:
        """``X_i^+``, shape ``(N, G, N_BS)``."""
        return self._Q @ np.conj(np.swapaxes(self._R_inv, 1, 2))

    @cached_property
    def noise_shaping(self) -> np.ndarray:
        """``C_i = R_i^{-1} R_i^{-H}``, shape ``(N, N_BS, N_BS)``."""
        return self._R_inv @ np.conj(np.swapaxes(self._R_inv, 1, 2))


def mm_transform(Y, pilots: PilotBook, config: SystemConfig) -> MomentTransform:
    """Apply the right pseudo-inverse ``X_i^+ = X_i^H (X_i X_i^H)^{-1}`` per subcarrier."""
    Y = _samples(Y)
    _check_dims(Y, pilots, config)
    G, nbs = config.n_transmissions, config.n_bs_antennas
    if G < nbs:
        raise InapplicableEstimatorError(
            f"moment transform needs G >= N_BS, got G={G} transmissions for N_BS={nbs}")
    XH = np.conj(np.transpose(pilots.pilots, (1, 0, 2)))           # X_i^H, (N, G, N_BS)
    Q, R = np.linalg.qr(XH)
    R_inv, rcond = _triangular_inverse(R)
    bad = np.flatnonzero(~(rcond >= RCOND_LIMIT))
    if bad.size:
        i = int(bad[0])
        raise RankDeficiencyError(
            f"pilot matrix X[{i}] on subcarrier {i} is rank deficient (rcond={rcond[i]:.2e})")
    # y~^T = y^T Q R^{-H}  <=>  y~ = conj(R^{-1}) Q^T y; the triangular inverse is
    # needed for the condition check anyway and is accurate once rcond passes
    rhs = (Y[:, None, :] @ Q)[:, 0]
    y_tilde = (np.conj(R_inv) @ rhs[..., None])[..., 0]
    return MomentTransform(y_tilde, Q, R, R_inv)


def lag_correlations(y_tilde: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelations ``mean_i y~_i^T conj(y~_{i+l})`` for ``l = 1..max_lag``."""
    n = y_tilde.shape[0]
    return np.array([np.mean(np.sum(y_tilde[:n - l] * y_tilde[l:].conj(), axis=1))
                     for l in range(1, max_lag + 1)])


def mm_tof(Y, pilots: PilotBook, L: int, config: SystemConfig,
           tau_max: float | None = None) -> float:
    """Closed-form multi-lag moment TOF.

    ``tau = N T_s / (2 pi q(L)) * sum_l l * arg r_l`` with
    ``q(L) = L(L+1)(2L+1)/6``. The lag-1 phase is wrapped onto the interval
    whose branch cut sits in the middle of the unsupported delays
    ``(tau_max, N T_s)``; higher lags are unwrapped towards ``l`` times the
    lag-1 phase.
    """
    n = config.n_subcarriers
    if not 1 <= L < n:
        raise DomainError(f"lag count L must satisfy 1 <= L < N={n}, got {L}")
    support = config.delay_support_s
    # without a cap, keep a small wrap margin so round-off at tau = 0 stays near 0
    tau_max = DEFAULT_TAU_MAX_FRACTION * support if tau_max is None else min(float(tau_max), support)
    transform = mm_transform(Y, pilots, config)
    r = lag_correlations(transform.y_tilde, L)
    args = np.angle(r)
    cut = np.pi * (1.0 + tau_max / support)
    args[0] = (args[0] - (cut - 2 * np.pi)) % (2 * np.pi) + (cut - 2 * np.pi)
    lags = np.arange(1, L + 1)
    if L > 1:
        target = lags[1:] * args[0]
        args[1:] += 2 * np.pi * np.round((target - args[1:]) / (2 * np.pi))
    q = L * (L + 1) * (2 * L + 1) / 6
    return float(support / (2 * np.pi * q) * np.sum(lags * args))


def mm(Y, pilots: PilotBook, grid: SearchGrid, config: SystemConfig, lags: int = 1,
       refine: bool = False) -> EstimateRecord:
    """Moment TOF (clipped to the grid's delay span), then AOD search."""
    t0 = time.perf_counter()
    Y = _samples(Y)
    tau = mm_tof(Y, pilots, lags, config, tau_max=grid.tau_axis[-1])
    tau = float(np.clip(tau, grid.tau_axis[0], grid.tau_axis[-1]))
    theta = aod_given_tof(Y, pilots, tau, grid.theta_axis, config, refine=refine)
    alpha = alpha_hat(Y, pilots, theta, tau, config)
    return EstimateRecord(tau, theta, alpha, Method.MM, lags_L=lags,
                          wall_time=time.perf_counter() - t0)


# --------------------------------------------------------------------------


def position_from(d_hat: float, theta_hat: float) -> np.ndarray:
    """``d (cos theta, sin theta)``."""
    if d_hat < 0:
        raise DomainError(f"distance must be nonnegative, got {d_hat}")
    return np.array([d_hat * math.cos(theta_hat), d_hat * math.sin(theta_hat)])


def estimate(method: Method | str, Y, pilots: PilotBook, grid: SearchGrid,
             config: SystemConfig, lags: int = 1, refine: bool = False) -> EstimateRecord:
    method = Method(method)
    if method is Method.ML2D:
        return ml2d(Y, pilots, grid, config, refine=refine)
    if method is Method.UML:
        return uml(Y, pilots, grid, config, refine=refine)
    return mm(Y, pilots, grid, config, lags=lags, refine=refine)
