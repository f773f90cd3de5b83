"""Random network topologies, path gains and MIMO fading for the K-user channel.

Transmit and receive nodes are dropped uniformly in a rectangle, long-term
path gains follow ``L = omega * d**(-gamma)`` with log-normal shadowing
``omega``, and every ``N x M`` fading matrix has i.i.d. CN(0, 1) entries.
Noise at every receiver is CN(0, 2 I_N), i.e. unit variance per real
dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "QPSK",
    "NOISE_POWER",
    "MIN_DISTANCE_M",
    "SystemConfig",
    "NetworkInstance",
    "trial_rng",
    "generate_topology",
    "path_gain",
    "receive_esn0_db",
    "scale_powers_to_esn0",
    "esn0_powers",
    "draw_symbols",
    "draw_noise",
]

# Unit-energy QPSK alphabet, in the order used for all enumerations.
QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) * (np.sqrt(2) / 2)

# Total complex noise power per receive antenna (E[z z^H] = 2 I).
NOISE_POWER = 2.0

# Tx-rx distances are clamped here; the path-loss law diverges at d = 0.
MIN_DISTANCE_M = 10.0


@dataclass(frozen=True)
class SystemConfig:
    """Static parameters of a K-user MIMO interference network.

    Parameters
    ----------
    K, M, N, D : int
        Users, transmit antennas, receive antennas, streams per user.
    area_width_m, area_height_m : float
        Size of the deployment rectangle in meters.
    gamma : float
        Path-loss exponent.
    sigma_omega_db : float
        Standard deviation of the log-normal shadowing in dB.
    seed : int
        Master seed for everything drawn from this configuration.
    """

    K: int = 5
    M: int = 3
    N: int = 2
    D: int = 1
    area_width_m: float = 2000.0
    area_height_m: float = 1000.0
    gamma: float = 6.0
    sigma_omega_db: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 1 <= self.D <= min(self.M, self.N):
            raise ValueError(f"need 1 <= D <= min(M, N), got D={self.D}, M={self.M}, N={self.N}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.area_width_m <= 0 or self.area_height_m <= 0:
            raise ValueError("area dimensions must be positive")
        if self.sigma_omega_db < 0:
            raise ValueError("sigma_omega_db must be non-negative")


@dataclass(frozen=True)
class NetworkInstance:
    """One realization of geometry, path gains, powers and fading.

    ``L[k, i]`` and ``H[k, i]`` describe the link from transmitter ``i`` to
    receiver ``k``; ``H`` has shape ``(K, K, N, M)``.
    """

    positions_tx: np.ndarray
    positions_rx: np.ndarray
    L: np.ndarray
    P: np.ndarray
    H: np.ndarray

    @property
    def K(self) -> int:
        return self.L.shape[0]

    @property
    def N(self) -> int:
        return self.H.shape[2]

    @property
    def M(self) -> int:
        return self.H.shape[3]

    def rx_power(self) -> np.ndarray:
        """Average received power ``P_i * L_ki`` as a ``(K, K)`` matrix."""
        return self.L * self.P[np.newaxis, :]


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``, e.g. ``(seed, trial, purpose)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def path_gain(d: np.ndarray, gamma: float, omega: np.ndarray | float = 1.0) -> np.ndarray:
    """Long-term path gain ``omega * d**(-gamma)``."""
    return np.asarray(omega) * np.asarray(d, dtype=float) ** (-gamma)


def generate_topology(config: SystemConfig, rng: np.random.Generator) -> NetworkInstance:
    """Draw node positions, shadowed path gains and Rayleigh fading.

    Transmit powers are all set to one; use :func:`scale_powers_to_esn0`
    to set the operating point.
    """
    K, M, N = config.K, config.M, config.N
    size = np.array([config.area_width_m, config.area_height_m])
    pos_tx = rng.uniform(0.0, 1.0, size=(K, 2)) * size
    pos_rx = rng.uniform(0.0, 1.0, size=(K, 2)) * size
    # d[k, i]: receiver k to transmitter i
    d = np.linalg.norm(pos_rx[:, np.newaxis, :] - pos_tx[np.newaxis, :, :], axis=-1)
    d = np.maximum(d, MIN_DISTANCE_M)
    omega = 10.0 ** (rng.normal(0.0, config.sigma_omega_db, size=(K, K)) / 10.0)
    L = path_gain(d, config.gamma, omega)
    H = (rng.standard_normal((K, K, N, M)) + 1j * rng.standard_normal((K, K, N, M))) / np.sqrt(2)
    return NetworkInstance(positions_tx=pos_tx, positions_rx=pos_rx, L=L, P=np.ones(K), H=H)


def receive_esn0_db(instance: NetworkInstance, k: int) -> float:
    """Desired-link receive Es/N0 of user ``k`` (0-based): ``P_k L_kk / 2`` in dB."""
    return float(10.0 * np.log10(instance.P[k] * instance.L[k, k] / NOISE_POWER))


def esn0_powers(L: np.ndarray, target_esn0_db, per_receiver: bool = False) -> np.ndarray:
    """Transmit powers hitting a receive Es/N0 target, vectorized.

    Parameters
    ----------
    L : (..., K, K) array
        Path gains.
    target_esn0_db : float or array broadcastable against ``L.shape[:-2]``

    Returns
    -------
    (..., K) array
        One common power per instance (so that the mean over users of the
        desired-link Es/N0 in dB equals the target) or, with
        ``per_receiver``, one power per user putting every desired link
        exactly at the target.
    """
    target = np.asarray(target_esn0_db, dtype=float)
    if not np.all(np.isfinite(target)):
        raise ValueError("target Es/N0 must be finite")
    diag_db = 10.0 * np.log10(np.diagonal(L, axis1=-2, axis2=-1) / NOISE_POWER)
    if per_receiver:
        return 10.0 ** ((target[..., None] - diag_db) / 10.0)
    common = 10.0 ** ((target - diag_db.mean(axis=-1)) / 10.0)
    return np.broadcast_to(common[..., None], diag_db.shape).copy()


def scale_powers_to_esn0(
    instance: NetworkInstance, target_esn0_db: float, per_receiver: bool = False
) -> NetworkInstance:
    """Rescale transmit powers to hit a receive Es/N0 target.

    By default all users share one power chosen so that the mean over users
    of :func:`receive_esn0_db` equals the target. With ``per_receiver`` each
    user gets its own power so that every desired link sits exactly at the
    target.
    """
    return replace(instance, P=esn0_powers(instance.L, target_esn0_db, per_receiver))


def draw_symbols(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform i.i.d. QPSK symbols."""
    return QPSK[rng.integers(0, 4, size=shape)]


def draw_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian noise with ``E|z|^2 = 2``."""
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
