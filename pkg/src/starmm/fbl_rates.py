"""Second-order (normal approximation) rates for 1-layer rate splitting.

Rates are computed in nats per channel use; divide by ``LN2`` for bits.

Beamformers are stored column-wise in an ``(Nt, K+1)`` matrix whose column 0
is the common beamformer and column ``k+1`` the private beamformer of user
``k``.  With channels stacked as rows of ``H`` (K, Nt), ``X = H @ W`` holds
every received amplitude ``h_k w_l`` at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

LN2 = np.log(2.0)
RS = "RS"
TIN = "TIN"


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FblParams:
    eps_c: float
    eps_k: np.ndarray
    n_c: float
    n_k: np.ndarray

    def __post_init__(self):
        eps = np.append(np.atleast_1d(self.eps_k), self.eps_c)
        if np.any(eps <= 0) or np.any(eps >= 0.5):
            raise DomainError("error probabilities must lie in (0, 0.5)")
        if np.any(np.append(np.atleast_1d(self.n_k), self.n_c) < 1):
            raise DomainError("blocklengths must be >= 1")

    @classmethod
    def uniform(cls, K: int, eps: float = 1e-5, n: float = 256) -> "FblParams":
        return cls(eps, np.full(K, eps), n, np.full(K, float(n)))

    @property
    def K(self) -> int:
        return len(self.eps_k)

    def select_users(self, idx) -> "FblParams":
        idx = np.atleast_1d(idx)
        return FblParams(self.eps_c, np.asarray(self.eps_k)[idx],
                         self.n_c, np.asarray(self.n_k)[idx])


@dataclass(frozen=True, eq=False)
class BeamformerSet:
    W: np.ndarray  # (Nt, K+1), column 0 is the common stream
    P: float

    @property
    def w_c(self) -> np.ndarray:
        return self.W[:, 0]

    @property
    def private(self) -> np.ndarray:
        return self.W[:, 1:]

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.W) ** 2))

    def is_feasible(self, tol: float = 1e-8) -> bool:
        return self.total_power <= self.P * (1 + tol) + tol


@dataclass(frozen=True, eq=False)
class RateReport:
    r_ck: np.ndarray
    r_c: float
    r_pk: np.ndarray
    R_k: np.ndarray
    objective: float
    unit: str = "nats"

    def in_bits(self) -> "RateReport":
        if self.unit == "bits":
            return self
        return RateReport(self.r_ck / LN2, self.r_c / LN2, self.r_pk / LN2,
                          self.R_k / LN2, self.objective / LN2, "bits")


def q_inv(eps):
    """Inverse of the standard normal tail function."""
    e = np.asarray(eps, dtype=float)
    if np.any(e <= 0) or np.any(e >= 0.5):
        raise DomainError(f"eps must lie in (0, 0.5), got {eps}")
    out = norm.isf(e)
    return float(out) if out.ndim == 0 else out


def dispersion(snr):
    s = np.asarray(snr, dtype=float)
    if np.any(s < 0):
        raise DomainError("snr must be nonnegative")
    out = 2.0 * s / (1.0 + s)
    return float(out) if out.ndim == 0 else out


def fbl_rate(snr, eps, n):
    """ln(1 + snr) - Q^{-1}(eps) sqrt(V(snr) / n); not clamped."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise DomainError("blocklength must be >= 1")
    out = np.log1p(snr) - q_inv(eps) * np.sqrt(dispersion(snr) / n)
    return float(out) if np.ndim(out) == 0 else out


def stream_snrs(X: np.ndarray, sigma2: float):
    """Common and private SNRs of every user from the gain matrix ``X = H W``.

    Interference at user k is evaluated on user k's own channel.  Leading
    batch axes of ``X`` are kept.
    """
    P = np.abs(X) ** 2
    priv = P[..., 1:]
    total_priv = priv.sum(axis=-1)
    own = np.diagonal(priv, axis1=-2, axis2=-1)
    snr_c = P[..., 0] / (sigma2 + total_priv)
    snr_p = own / (sigma2 + total_priv - own)
    return snr_c, snr_p


def snr_common(k: int, H: np.ndarray, W: np.ndarray, sigma2: float) -> float:
    x = H[k] @ W
    return float(np.abs(x[0]) ** 2 / (sigma2 + np.sum(np.abs(x[1:]) ** 2)))


def snr_private(k: int, H: np.ndarray, W: np.ndarray, sigma2: float) -> float:
    x = np.abs(H[k] @ W) ** 2
    interf = np.sum(x[1:]) - x[k + 1]
    return float(x[k + 1] / (sigma2 + interf))


def _as_matrix(W):
    return W.W if isinstance(W, BeamformerSet) else np.asarray(W)


def rate_report(H, W, params: FblParams, sigma2: float, mode: str = RS) -> RateReport:
    W = _as_matrix(W)
    if mode == TIN and np.any(W[:, 0] != 0):
        raise ContractError("TIN mode requires a zero common beamformer")
    snr_c, snr_p = stream_snrs(H @ W, sigma2)
    r_pk = fbl_rate(snr_p, params.eps_k, params.n_k)
    if mode == TIN:
        r_ck = np.zeros_like(r_pk)
        r_c = 0.0
    else:
        r_ck = fbl_rate(snr_c, params.eps_c, params.n_c)
        r_c = max(0.0, float(np.min(r_ck)))
    R_k = r_c + r_pk
    return RateReport(r_ck, r_c, r_pk, R_k, float(np.min(R_k)))


def maxmin_objective(H, W, params: FblParams, sigma2: float, mode: str = RS) -> float:
    """Max-min objective in nats (common rate clamped at zero)."""
    return rate_report(H, W, params, sigma2, mode).objective
