"""Channel generation for the STAR-RIS assisted MISO downlink.

The BS serves ``K`` single-antenna users through a direct (Rayleigh) link and
through a STAR-RIS with ``M`` elements (Ricean links). The first half of the
users sit on the reflect side of the surface, the second half on the transmit
side.  All channels are stored as row vectors so that the effective channel of
user ``k`` is ``h_k = f_k diag(theta) G + d_k``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np


class GeometryError(ValueError):
    """Raised for node placements the path-loss model cannot handle."""


def db2lin(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(x)


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator from an int, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, propagation and noise parameters of one scenario.

    Distances are in meters, gains in dB/dBi, ``noise_psd_dbm_hz`` in dBm/Hz.
    When ``user_positions`` is None the users are dropped uniformly in two
    discs: the reflect-side disc lies between BS and RIS, the transmit-side
    disc behind the RIS.
    """

    K: int = 6
    Nt: int = 4
    M: int = 24
    bs_pos: tuple = (0.0, 0.0)
    ris_pos: tuple = (50.0, 0.0)
    user_disc_offset: float = 15.0
    user_disc_radius: float = 10.0
    user_positions: tuple | None = None
    rice_factor: float = 3.0
    pl_exp_bs_ris: float = 2.2
    pl_exp_ris_user: float = 2.2
    pl_exp_direct: float = 3.5
    ref_loss_db: float = 30.0
    bandwidth_hz: float = 1e6
    noise_psd_dbm_hz: float = -174.0
    gain_bs_dbi: float = 5.0
    gain_ris_dbi: float = 5.0
    gain_user_dbi: float = 0.0

    def __post_init__(self):
        if self.K < 2 or self.K % 2:
            raise ValueError(f"K must be even and >= 2, got {self.K}")
        if self.M < 0 or self.M % 2:
            raise ValueError(f"M must be even and >= 0, got {self.M}")
        if self.Nt < 1:
            raise ValueError(f"Nt must be >= 1, got {self.Nt}")
        if self.rice_factor < 0:
            raise ValueError("rice_factor must be >= 0")
        if self.user_positions is not None and len(self.user_positions) != self.K:
            raise ValueError("user_positions must list one (x, y) pair per user")

    @property
    def noise_power_w(self) -> float:
        dbm = self.noise_psd_dbm_hz + 10.0 * np.log10(self.bandwidth_hz)
        return float(db2lin(dbm - 30.0))


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """One channel draw.

    G: (M, Nt) BS->RIS, F: (K, M) RIS->users, D: (K, Nt) BS->users,
    sigma2: noise variance in W, reflect_users: (K,) bool side flags.
    """

    G: np.ndarray
    F: np.ndarray
    D: np.ndarray
    sigma2: float
    reflect_users: np.ndarray
    user_positions: np.ndarray | None = None

    def __post_init__(self):
        K, Nt = self.D.shape
        if self.F.shape[0] != K or self.F.shape[1] != self.G.shape[0]:
            raise ValueError("F must be (K, M) with M matching G")
        if self.G.shape[1] != Nt:
            raise ValueError("G must be (M, Nt) with Nt matching D")
        if len(self.reflect_users) != K:
            raise ValueError("reflect_users must have one flag per user")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def K(self) -> int:
        return self.D.shape[0]

    @property
    def Nt(self) -> int:
        return self.D.shape[1]

    @property
    def M(self) -> int:
        return self.G.shape[0]

    def side_of(self, k: int) -> str:
        return "reflect" if self.reflect_users[k] else "transmit"

    def select_users(self, idx) -> "NetworkInstance":
        idx = np.atleast_1d(idx)
        pos = None if self.user_positions is None else self.user_positions[idx]
        return replace(self, F=self.F[idx], D=self.D[idx],
                       reflect_users=self.reflect_users[idx], user_positions=pos)

    def normalized(self) -> "NetworkInstance":
        """Same instance with channels scaled so that the noise power is one."""
        s = 1.0 / np.sqrt(self.sigma2)
        return replace(self, F=self.F * s, D=self.D * s, sigma2=1.0)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.G, self.F, self.D, self.reflect_users):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(np.float64(self.sigma2).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class RisConfig:
    """STAR-RIS coefficients.

    ``reflect_mask[m]`` is True when element ``m`` operates in reflect mode.
    Under mode switching only the in-mode coefficient of an element may be
    nonzero; ``variant`` is ``"strict"`` (unit amplitude) or ``"relaxed"``
    (amplitude at most one).
    """

    theta_r: np.ndarray
    theta_t: np.ndarray
    reflect_mask: np.ndarray
    variant: str = "strict"

    @property
    def M(self) -> int:
        return len(self.reflect_mask)

    def in_mode(self) -> np.ndarray:
        return np.where(self.reflect_mask, self.theta_r, self.theta_t)

    def with_in_mode(self, z, variant=None) -> "RisConfig":
        z = np.asarray(z, dtype=complex)
        zero = np.zeros_like(z)
        return RisConfig(np.where(self.reflect_mask, z, zero),
                         np.where(self.reflect_mask, zero, z),
                         self.reflect_mask, variant or self.variant)

    @classmethod
    def from_in_mode(cls, z, reflect_mask, variant="strict") -> "RisConfig":
        mask = np.asarray(reflect_mask, dtype=bool)
        return cls(np.zeros(len(mask), complex), np.zeros(len(mask), complex),
                   mask, variant).with_in_mode(z)

    @classmethod
    def zeros(cls, M: int, reflect_mask=None, variant="relaxed") -> "RisConfig":
        mask = ms_partition(M) if reflect_mask is None else reflect_mask
        return cls.from_in_mode(np.zeros(M, complex), mask, variant)


def ms_partition(M: int) -> np.ndarray:
    """Mode-switching split: first M/2 elements transmit, the rest reflect."""
    mask = np.zeros(M, dtype=bool)
    mask[M // 2:] = True
    return mask


def reflect_only_partition(M: int) -> np.ndarray:
    return np.ones(M, dtype=bool)


def pathloss_linear(distance_m, exponent, ref_loss_db):
    """Log-distance power gain, ``ref_loss_db`` at 1 m."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d < 1.0):
        raise GeometryError(f"distance must be >= 1 m, got {distance_m}")
    loss_db = ref_loss_db + 10.0 * exponent * np.log10(d)
    out = 10.0 ** (-loss_db / 10.0)
    return float(out) if out.ndim == 0 else out


def steering_vector(n: int, angle: float) -> np.ndarray:
    """Half-wavelength ULA response, unit modulus entries."""
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle))


def ricean_matrix(rows, cols, rice_factor, rng, aoa=0.0, aod=0.0):
    if rice_factor < 0:
        raise ValueError("rice_factor must be >= 0")
    los = np.outer(steering_vector(rows, aoa), steering_vector(cols, aod).conj())
    nlos = (rng.standard_normal((rows, cols))
            + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)
    return (np.sqrt(rice_factor / (1.0 + rice_factor)) * los
            + np.sqrt(1.0 / (1.0 + rice_factor)) * nlos)


def rayleigh_vector(n, rng):
    if n < 1:
        raise ValueError("length must be >= 1")
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)


def _angle(src, dst):
    # angle off broadside of an array laid along the y axis
    dx, dy = np.subtract(dst, src)
    return float(np.arctan2(dy, abs(dx)))


def _drop_users(cfg: ScenarioConfig, rng) -> np.ndarray:
    if cfg.user_positions is not None:
        return np.asarray(cfg.user_positions, dtype=float)
    ris = np.asarray(cfg.ris_pos, dtype=float)
    bs = np.asarray(cfg.bs_pos, dtype=float)
    axis = (ris - bs) / np.linalg.norm(ris - bs)
    half = cfg.K // 2
    centers = [ris - cfg.user_disc_offset * axis] * half + \
              [ris + cfg.user_disc_offset * axis] * half
    # uniform in disc: sqrt radius
    r = cfg.user_disc_radius * np.sqrt(rng.uniform(size=cfg.K))
    phi = rng.uniform(0.0, 2 * np.pi, size=cfg.K)
    return np.array(centers) + np.c_[r * np.cos(phi), r * np.sin(phi)]


def generate_network(cfg: ScenarioConfig, seed) -> NetworkInstance:
    rng = make_rng(seed)
    users = _drop_users(cfg, rng)
    bs, ris = np.asarray(cfg.bs_pos, float), np.asarray(cfg.ris_pos, float)
    g_bs, g_ris, g_ue = db2lin([cfg.gain_bs_dbi, cfg.gain_ris_dbi, cfg.gain_user_dbi])

    pl = pathloss_linear(np.linalg.norm(ris - bs), cfg.pl_exp_bs_ris, cfg.ref_loss_db)
    G = np.sqrt(pl * g_bs * g_ris) * ricean_matrix(
        cfg.M, cfg.Nt, cfg.rice_factor, rng, aoa=_angle(ris, bs), aod=_angle(bs, ris))

    F = np.empty((cfg.K, cfg.M), complex)
    D = np.empty((cfg.K, cfg.Nt), complex)
    for k, u in enumerate(users):
        pl_f = pathloss_linear(np.linalg.norm(u - ris), cfg.pl_exp_ris_user, cfg.ref_loss_db)
        F[k] = np.sqrt(pl_f * g_ris * g_ue) * ricean_matrix(
            1, cfg.M, cfg.rice_factor, rng, aod=_angle(ris, u))[0]
        pl_d = pathloss_linear(np.linalg.norm(u - bs), cfg.pl_exp_direct, cfg.ref_loss_db)
        D[k] = np.sqrt(pl_d * g_bs * g_ue) * rayleigh_vector(cfg.Nt, rng)

    reflect = np.arange(cfg.K) < cfg.K // 2
    return NetworkInstance(G, F, D, cfg.noise_power_w, reflect, users)


def side_coefficients(instance: NetworkInstance, ris: RisConfig) -> np.ndarray:
    """(K, M) matrix whose row k is the coefficient vector user k sees."""
    if ris.M != instance.M:
        raise ValueError(f"RIS has {ris.M} elements, instance expects {instance.M}")
    return np.where(instance.reflect_users[:, None], ris.theta_r[None, :], ris.theta_t[None, :])


def assemble_effective_channel(instance: NetworkInstance, ris: RisConfig, k: int) -> np.ndarray:
    if not 0 <= k < instance.K:
        raise IndexError(f"user index {k} out of range")
    theta = side_coefficients(instance, ris)[k]
    return (instance.F[k] * theta) @ instance.G + instance.D[k]


def effective_channels(instance: NetworkInstance, ris: RisConfig | None) -> np.ndarray:
    """All effective channels stacked as a (K, Nt) matrix."""
    if ris is None or instance.M == 0:
        return instance.D.copy()
    theta = side_coefficients(instance, ris)
    return (instance.F * theta) @ instance.G + instance.D
