"""Concave minorizers of the second-order rates.

Every received amplitude ``x_{k,s} = h_k w_s`` is affine in the active block
of variables ``z``: in the beamformers for fixed RIS coefficients, and in the
RIS coefficients for fixed beamformers.  Both cases are handled through the
same linear model ``x(z) = A z + e`` with ``A`` of shape (K, S, N).

For a stream with signal amplitude ``a``, interference power ``D`` and total
received power ``T = D + |a|^2`` (noise included), the bound around the
expansion point (bars) reads::

    r >= C0 + 2 Re{conj(a_bar) a} / D_bar
            + (2 c / T_bar) (sigma2 + sum_l Re{conj(b_bar_l) b_l})
            - (snr_bar + c zeta) T / T_bar

with ``c = q / sqrt(n V_bar)``, ``zeta = D_bar / T_bar`` and
``C0 = ln(1 + snr_bar) - snr_bar - (q / sqrt(n)) (sqrt(V_bar)/2 + 1/sqrt(V_bar))``.
The log term uses the usual ``ln(1 + |a|^2/D)`` minorizer; the dispersion
penalty uses the tangent of ``sqrt`` at ``V_bar`` together with the joint
convexity of ``|b|^2 / T`` and ``sigma2 / T``.  Both pieces are global bounds,
so the surrogate minorizes the rate everywhere, touches it at the expansion
point and is concave (affine minus a convex quadratic).

Gradients are returned in the real-coordinate convention
``g = d/dRe(z) + 1j d/dIm(z)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel_model import NetworkInstance, RisConfig
from .fbl_rates import RS, FblParams, dispersion, fbl_rate, q_inv, stream_snrs

SNR_FLOOR = 1e-10


class DegenerateContextError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StreamBound:
    sig: np.ndarray     # (K, S) bool, signal column per user
    intf: np.ndarray    # (K, S) bool, interfering columns per user
    C0: np.ndarray
    D_bar: np.ndarray
    T_bar: np.ndarray
    snr_bar: np.ndarray
    V_bar: np.ndarray
    c: np.ndarray
    zeta: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True, eq=False)
class SurrogateContext:
    A: np.ndarray
    e: np.ndarray
    sigma2: float
    params: FblParams
    mode: str
    z_bar: np.ndarray
    x_bar: np.ndarray
    common: StreamBound
    private: StreamBound
    var_shape: tuple

    @property
    def K(self) -> int:
        return self.A.shape[0]

    def gains(self, z) -> np.ndarray:
        return np.einsum("ksn,n->ks", self.A, z) + self.e

    def flat(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=complex)
        return v.ravel(order="F") if v.ndim == 2 else v

    def unflat(self, z) -> np.ndarray:
        return np.reshape(z, self.var_shape, order="F")


def _masks(K: int):
    S = K + 1
    sig_c = np.zeros((K, S), bool)
    sig_c[:, 0] = True
    intf_c = np.zeros((K, S), bool)
    intf_c[:, 1:] = True
    sig_p = np.zeros((K, S), bool)
    sig_p[np.arange(K), np.arange(K) + 1] = True
    intf_p = intf_c & ~sig_p
    return (sig_c, intf_c), (sig_p, intf_p)


def _bound(x_bar, sig, intf, sigma2, eps, n) -> StreamBound:
    p = np.abs(x_bar) ** 2
    D_bar = sigma2 + np.sum(p * intf, axis=1)
    if np.any(D_bar <= 0):
        raise DegenerateContextError("nonpositive interference-plus-noise power")
    sig_pow = np.sum(p * sig, axis=1)
    T_bar = D_bar + sig_pow
    snr = sig_pow / D_bar
    V = dispersion(np.maximum(snr, SNR_FLOOR))
    q = q_inv(eps)
    n = np.asarray(n, dtype=float)
    c = q / np.sqrt(n * V)
    zeta = D_bar / T_bar
    C0 = np.log1p(snr) - snr - q / np.sqrt(n) * (np.sqrt(V) / 2 + 1 / np.sqrt(V))
    beta = snr + c * zeta
    arr = lambda v: np.broadcast_to(np.asarray(v, float), D_bar.shape).copy()
    return StreamBound(sig, intf, arr(C0), D_bar, T_bar, snr, arr(V), arr(c), zeta, arr(beta))


def _make_context(A, e, z_bar, params, sigma2, mode, var_shape):
    if not sigma2 > 0:
        raise DegenerateContextError("noise power must be positive")
    K = A.shape[0]
    if params.K != K:
        raise ValueError(f"FBL parameters for {params.K} users, channels for {K}")
    x_bar = np.einsum("ksn,n->ks", A, z_bar) + e
    (sc, ic), (sp, ip) = _masks(K)
    common = _bound(x_bar, sc, ic, sigma2, params.eps_c, params.n_c)
    private = _bound(x_bar, sp, ip, sigma2, params.eps_k, params.n_k)
    return SurrogateContext(A, e, float(sigma2), params, mode, z_bar, x_bar,
                            common, private, var_shape)


def beamformer_model(H: np.ndarray):
    """Linear model of ``X = H W`` in ``vec(W)`` (column-major)."""
    K, Nt = H.shape
    S = K + 1
    A = np.zeros((K, S, S * Nt), complex)
    for s in range(S):
        A[:, s, s * Nt:(s + 1) * Nt] = H
    return A, np.zeros((K, S), complex)


def ris_model(instance: NetworkInstance, W: np.ndarray, reflect_mask: np.ndarray):
    """Linear model of ``X`` in the in-mode RIS coefficients for fixed ``W``."""
    GW = instance.G @ W                                       # (M, S)
    same_side = instance.reflect_users[:, None] == np.asarray(reflect_mask)[None, :]
    Fm = instance.F * same_side                               # (K, M)
    A = Fm[:, None, :] * GW.T[None, :, :]                     # (K, S, M)
    return A, instance.D @ W


def build_context(H, W_bar, params: FblParams, sigma2: float, mode: str = RS) -> SurrogateContext:
    """Surrogate context in the beamformer variables around ``W_bar``."""
    W_bar = np.asarray(getattr(W_bar, "W", W_bar), dtype=complex)
    A, e = beamformer_model(np.asarray(H))
    return _make_context(A, e, W_bar.ravel(order="F"), params, sigma2, mode, W_bar.shape)


def build_ris_context(instance: NetworkInstance, W, ris: RisConfig, params: FblParams,
                      sigma2: float | None = None, mode: str = RS) -> SurrogateContext:
    """Surrogate context in the in-mode RIS coefficients, beamformers fixed."""
    W = np.asarray(getattr(W, "W", W), dtype=complex)
    if ris.M != instance.M:
        raise ValueError("RIS size does not match the instance")
    A, e = ris_model(instance, W, ris.reflect_mask)
    sigma2 = instance.sigma2 if sigma2 is None else sigma2
    return _make_context(A, e, ris.in_mode(), params, sigma2, mode, (ris.M,))


def _stream_value(b: StreamBound, x: np.ndarray, x_bar: np.ndarray, sigma2: float):
    # x may carry leading batch axes; the last two are (K, S)
    p = np.abs(x) ** 2
    lin = np.real(np.conj(x_bar) * x)
    T = sigma2 + np.sum(p * (b.sig | b.intf), axis=-1)
    val = (b.C0 + 2 * np.sum(lin * b.sig, axis=-1) / b.D_bar
           + 2 * b.c / b.T_bar * (sigma2 + np.sum(lin * b.intf, axis=-1))
           - b.beta * T / b.T_bar)
    gx = (b.sig * (2 * x_bar / b.D_bar[:, None])
          + b.intf * (2 * b.c / b.T_bar)[:, None] * x_bar
          - (b.sig | b.intf) * (2 * b.beta / b.T_bar)[:, None] * x)
    return val, gx


def surrogate_all(ctx: SurrogateContext, z):
    """Vectorized surrogates of every user.

    Returns ``(val_c, val_p, grad_c, grad_p)`` with values of shape (K,) and
    gradients of shape (K, N) with respect to the flat variable ``z``.
    """
    z = ctx.flat(z)
    x = ctx.gains(z)
    vc, gxc = _stream_value(ctx.common, x, ctx.x_bar, ctx.sigma2)
    vp, gxp = _stream_value(ctx.private, x, ctx.x_bar, ctx.sigma2)
    Ac = ctx.A.conj()
    return vc, vp, np.einsum("ksn,ks->kn", Ac, gxc), np.einsum("ksn,ks->kn", Ac, gxp)


def surrogate_batch(ctx: SurrogateContext, Z):
    """Values ``(val_c, val_p)``, each (B, K), for a stack of flat points (B, N)."""
    X = np.einsum("ksn,bn->bks", ctx.A, np.asarray(Z, dtype=complex)) + ctx.e
    vc, _ = _stream_value(ctx.common, X, ctx.x_bar, ctx.sigma2)
    vp, _ = _stream_value(ctx.private, X, ctx.x_bar, ctx.sigma2)
    return vc, vp


def surrogate_common(k: int, W, ctx: SurrogateContext):
    vc, _, gc, _ = surrogate_all(ctx, W)
    return float(vc[k]), ctx.unflat(gc[k])


def surrogate_private(k: int, W, ctx: SurrogateContext):
    _, vp, _, gp = surrogate_all(ctx, W)
    return float(vp[k]), ctx.unflat(gp[k])


def surrogate_in_ris(k: int, stream: str, theta, ctx: SurrogateContext):
    """Surrogate of user k's ``"common"`` or ``"private"`` rate in the RIS."""
    z = theta.in_mode() if isinstance(theta, RisConfig) else np.asarray(theta, complex)
    if z.shape != ctx.var_shape:
        raise ValueError(f"expected {ctx.var_shape[0]} RIS coefficients, got {z.shape}")
    vc, vp, gc, gp = surrogate_all(ctx, z)
    if stream == "common":
        return float(vc[k]), gc[k]
    if stream == "private":
        return float(vp[k]), gp[k]
    raise ValueError(f"unknown stream {stream!r}")


def true_rates(ctx: SurrogateContext, z, batch: bool = False):
    """Exact (r_ck, r_pk) in nats at ``z`` under the context's linear model.

    With ``batch`` set, ``z`` is a stack of flat points (B, N) and the rates
    come back as (B, K) arrays.
    """
    if batch:
        X = np.einsum("ksn,bn->bks", ctx.A, np.asarray(z, dtype=complex)) + ctx.e
    else:
        X = ctx.gains(ctx.flat(z))
    snr_c, snr_p = stream_snrs(X, ctx.sigma2)
    p = ctx.params
    return fbl_rate(snr_c, p.eps_c, p.n_c), fbl_rate(snr_p, p.eps_k, p.n_k)


def surrogate_curvature(ctx: SurrogateContext):
    """Hermitian ``(Qc, Qp)`` of shape (K, N, N) such that each surrogate is
    an affine function of ``z`` minus ``z^H Q_k z``."""
    out = []
    for b in (ctx.common, ctx.private):
        w = (b.beta / b.T_bar)[:, None] * (b.sig | b.intf)          # (K, S)
        out.append(np.einsum("ks,ksm,ksn->kmn", w, ctx.A.conj(), ctx.A))
    return tuple(out)
