"""Convex inner problems of the alternating optimization.

Both inner problems maximize the surrogate max-min rate in epigraph form::

    max tau  s.t.  sur_c_k(z) >= r_c,  r_c + sur_p_k(z) >= tau,  r_c >= 0,  z in domain

The domain is the power ball for beamformers and, for the RIS, the unit disc
per element plus (strict mode switching) the CCP half-plane around the
expansion point.  All constraints are concave quadratics, so a log-barrier
interior-point method with exact (constant) Hessians solves them reliably
even when the surrogate curvature spans many orders of magnitude.  Whatever the solver returns is repaired to
feasibility and compared with the expansion point, which is returned instead
when it is better: the surrogate objective never decreases.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel_model import RisConfig
from .fbl_rates import RS, BeamformerSet
from .mm_surrogates import SurrogateContext, surrogate_all, surrogate_curvature

RIS_VARIANTS = ("strict_MS", "relaxed_MS", "reflect_only", "fixed")


@dataclass(frozen=True)
class SolverOptions:
    max_inner_iter: int = 100
    tol: float = 1e-8
    feas_tol: float = 1e-8
    ccp_eps: float = 0.5
    ccp_eps_min: float = 1e-4
    ccp_decay: float = 0.5

    def __post_init__(self):
        for name in ("tol", "feas_tol", "ccp_eps", "ccp_eps_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.ccp_decay <= 1:
            raise ValueError("ccp_decay must lie in (0, 1]")


def enforce_power(W, P: float):
    """Scale all beamformers uniformly onto the power ball if needed."""
    is_set = isinstance(W, BeamformerSet)
    M = W.W if is_set else np.asarray(W)
    total = float(np.sum(np.abs(M) ** 2))
    if total > P:
        M = M * np.sqrt(P / total)
    return BeamformerSet(M, P) if is_set else M


def project_strict_ms(ris: RisConfig) -> RisConfig:
    """Unit amplitude on the in-mode coefficient (phase kept, 0 -> 1)."""
    z = ris.in_mode()
    amp = np.abs(z)
    unit = np.where(amp > 0, z / np.where(amp > 0, amp, 1.0), 1.0 + 0j)
    return ris.with_in_mode(unit, variant="strict")


def project_disc(z):
    amp = np.abs(z)
    return np.where(amp > 1.0, z / np.maximum(amp, 1.0), z)


def surrogate_objective(ctx: SurrogateContext, z, use_common: bool) -> float:
    """Surrogate max-min value with the common rate clamped at zero."""
    vc, vp, _, _ = surrogate_all(ctx, z)
    obj = float(np.min(vp))
    if use_common:
        obj += max(0.0, float(np.min(vc)))
    return obj


def _realify(Q):
    """Real Hessian of ``u^H Q u`` in the coordinates ``[Re u, Im u]``."""
    re, im = Q.real, Q.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return 2.0 * np.concatenate([top, bot], axis=-2)


def _barrier_max(c, B, Hd, dd, v0, opts):
    """Maximize ``v[-1]`` subject to ``c + B v + v^T H_i v / 2 > 0``.

    The first ``len(Hd)`` constraints carry dense Hessians ``Hd``, the
    remaining ones diagonal Hessians given row-wise in ``dd``.  A log-barrier
    method with Newton centering; ``v0`` must be strictly feasible.
    """
    v = v0.copy()
    n = len(v)
    m = len(c)
    md = len(Hd)

    def values(v):
        Hv = np.concatenate([Hd @ v, dd * v])
        return c + B @ v + 0.5 * (Hv @ v), Hv

    g, Hv = values(v)
    if np.any(g <= 0):
        return v
    t = 1.0
    diag = np.diag_indices(n)
    while True:
        for _ in range(50):
            J = B + Hv
            Jg = J / g[:, None]
            grad = -Jg.sum(axis=0)
            grad[-1] -= t
            hess = Jg.T @ Jg - np.tensordot(1.0 / g[:md], Hd, axes=1)
            hess[diag] -= (1.0 / g[md:]) @ dd
            hess[diag] += 1e-12 * (1.0 + np.abs(hess[diag]))
            try:
                dv = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                dv = -grad
            dec = -grad @ dv
            if dec <= 1e-10:
                break
            # along dv every constraint is an exact quadratic in the step
            Hdv = np.concatenate([Hd @ dv, dd * dv])
            b = J @ dv
            a = 0.5 * (Hdv @ dv)
            f0 = -t * v[-1] - np.sum(np.log(g))
            step = 1.0
            while step > 1e-14:
                g1 = g + step * (b + step * a)
                if np.all(g1 > 0) and -t * (v[-1] + step * dv[-1]) - np.sum(np.log(g1)) \
                        <= f0 - 0.25 * step * dec:
                    break
                step *= 0.5
            else:
                break
            v1 = v + step * dv
            g1, Hv1 = values(v1)
            if not np.all(g1 > 0):      # rounding at the boundary
                break
            v, g, Hv = v1, g1, Hv1
            if dec < 1e-6:
                break
        if m / t < opts.tol:
            break
        t *= 30.0
    return v


def _epigraph(ctx, z0, free, scale, domain, use_common, opts):
    """Epigraph problem over the entries of ``z`` flagged ``free``.

    Variables are ``[Re u, Im u, (r_c), tau]`` with ``z[free] = scale * u``.
    ``domain(u)`` returns values and Jacobian of the domain constraints in the
    coordinates ``[Re u, Im u]`` and ``domain.hessians(n)`` the diagonals of
    their constant Hessians; ``z0`` must lie strictly inside the domain.  Without a strictly feasible ``r_c >= 0`` start the
    nonnegativity of the common rate is dropped; the caller clamps it.
    """
    K = ctx.K
    nf = int(free.sum())
    z_fixed = np.where(free, 0, z0)
    Qc, Qp = surrogate_curvature(ctx)
    sel = np.ix_(np.arange(K), free, free)
    Hc = -scale ** 2 * _realify(Qc[sel])
    Hp = -scale ** 2 * _realify(Qp[sel])

    def z_of(u):
        z = z_fixed.copy()
        z[free] = scale * u
        return z

    u0 = z0[free] / scale
    vc0, vp0, _, _ = surrogate_all(ctx, z0)
    if use_common:
        rc_floor = float(np.min(vc0)) > 0
        rc0 = float(np.min(vc0)) / 2 if rc_floor else float(np.min(vc0)) - 1.0
        tau0 = float(np.min(vp0)) + rc0 - 1.0
        v0 = np.concatenate([u0.real, u0.imag, [rc0, tau0]])
    else:
        rc_floor = False
        v0 = np.concatenate([u0.real, u0.imag, [float(np.min(vp0)) - 1.0]])
    nv = len(v0)
    nx = 2 * nf

    dense = [Hc, Hp] if use_common else [Hp]
    Hd = np.zeros((sum(len(b) for b in dense), nv, nv))
    i = 0
    for b in dense:
        Hd[i:i + len(b), :nx, :nx] = b
        i += len(b)
    dom = domain.hessians(nf)
    dd = np.zeros((len(dom) + rc_floor, nv))
    dd[:len(dom), :nx] = dom
    def cons(v):
        u = v[:nf] + 1j * v[nf:nx]
        vc, vp, gc, gp = surrogate_all(ctx, z_of(u))
        gp = gp[:, free] * scale
        tau = v[-1]
        vals, jacs = [], []
        if use_common:
            rc = v[nx]
            gc = gc[:, free] * scale
            vals += [vc - rc, rc + vp - tau]
            jacs += [np.hstack([gc.real, gc.imag, -np.ones((K, 1)), np.zeros((K, 1))]),
                     np.hstack([gp.real, gp.imag, np.ones((K, 1)), -np.ones((K, 1))])]
        else:
            vals.append(vp - tau)
            jacs.append(np.hstack([gp.real, gp.imag, -np.ones((K, 1))]))
        dv, dj = domain(u)
        vals.append(dv)
        jacs.append(np.hstack([dj, np.zeros((len(dv), nv - nx))]))
        if rc_floor:
            vals.append(np.array([v[nx]]))
            row = np.zeros((1, nv))
            row[0, nx] = 1.0
            jacs.append(row)
        return np.concatenate(vals), np.vstack(jacs)

    zero = np.zeros(nv)
    c, B = cons(zero)
    v = _barrier_max(c, B, Hd, dd, v0, opts)
    if not np.all(np.isfinite(v)):
        return None
    return z_of(v[:nf] + 1j * v[nf:nx])


def _power_ball(u):
    return (np.array([1.0 - np.sum(np.abs(u) ** 2)]),
            -2 * np.concatenate([u.real, u.imag])[None, :])


_power_ball.hessians = lambda n: np.full((1, 2 * n), -2.0)


def _keep_best(ctx, candidates, use_common, best, best_val, repair):
    for z in candidates:
        if z is None:
            continue
        z = repair(z)
        val = surrogate_objective(ctx, z, use_common)
        if val > best_val:
            best, best_val = z, val
    return best, best_val


def solve_beamforming(ctx: SurrogateContext, P: float, mode: str = RS,
                      opts: SolverOptions | None = None) -> BeamformerSet:
    """One MM step in the beamformers (RIS fixed inside ``ctx``).

    In RS mode the joint problem is solved first; when it does not improve on
    the expansion point (e.g. the common stream carries a negative rate) the
    private-only problem with ``w_c = 0`` is tried as well.
    """
    opts = opts or SolverOptions()
    if P < 0:
        raise ValueError(f"power budget must be nonnegative, got {P}")
    shape = ctx.var_shape
    if P == 0:
        return BeamformerSet(np.zeros(shape, complex), 0.0)
    use_common = mode == RS
    z_bar = ctx.z_bar
    private_only = np.ones(z_bar.size, bool)
    private_only[:shape[0]] = False
    # strictly inside the power ball
    z_in = enforce_power(z_bar, P * (1 - 1e-4))
    scale = np.sqrt(P)

    def repair(z):
        return ctx.flat(enforce_power(ctx.unflat(z), P))

    best, best_val = z_bar, surrogate_objective(ctx, z_bar, use_common)
    start_val = best_val
    if use_common:
        z = _epigraph(ctx, z_in, np.ones(z_bar.size, bool), scale, _power_ball, True, opts)
        best, best_val = _keep_best(ctx, [z], True, best, best_val, repair)
    if not use_common or best_val <= start_val + 1e-12:
        z = _epigraph(ctx, np.where(private_only, z_in, 0), private_only, scale,
                      _power_ball, False, opts)
        best, best_val = _keep_best(ctx, [z], use_common, best, best_val, repair)
    return BeamformerSet(ctx.unflat(best).copy(), P)


class _RisDomain:
    """Unit disc per element, plus the CCP half-plane when ``ccp_eps`` is set::

        |z_bar|^2 + 2 Re{conj(z_bar) (u - z_bar)} >= 1 - eps
    """

    def __init__(self, z_bar, ccp_eps=None):
        self.z_bar = z_bar
        self.eps = ccp_eps

    def __call__(self, u):
        vals = [1.0 - np.abs(u) ** 2]
        jac = [np.hstack([np.diag(-2 * u.real), np.diag(-2 * u.imag)])]
        if self.eps is not None:
            zb = self.z_bar
            vals.append(2 * np.real(np.conj(zb) * u) - np.abs(zb) ** 2 - (1 - self.eps))
            jac.append(np.hstack([np.diag(2 * zb.real), np.diag(2 * zb.imag)]))
        return np.concatenate(vals), np.vstack(jac)

    def hessians(self, n):
        """Diagonals of the constant Hessians, one row per constraint."""
        H = np.zeros((n, 2 * n))
        idx = np.arange(n)
        H[idx, idx] = -2.0
        H[idx, n + idx] = -2.0
        if self.eps is not None:
            H = np.concatenate([H, np.zeros_like(H)])
        return H


def solve_ris(ctx_ris: SurrogateContext, ris: RisConfig, variant: str,
              opts: SolverOptions | None = None, ccp_eps: float | None = None) -> RisConfig:
    """One MM step in the in-mode RIS coefficients (beamformers fixed).

    ``strict_MS`` and ``reflect_only`` add the CCP half-planes around the
    expansion point and project the result to unit amplitude; ``relaxed_MS``
    keeps amplitudes in the unit disc.  Off-mode coefficients stay zero.
    """
    opts = opts or SolverOptions()
    if variant not in RIS_VARIANTS:
        raise ValueError(f"unknown RIS variant {variant!r}")
    if variant == "fixed" or ris.M == 0:
        return ris
    if variant == "reflect_only" and not np.all(ris.reflect_mask):
        raise ValueError("reflect_only variant requires every element in reflect mode")
    if ctx_ris.var_shape != (ris.M,):
        raise ValueError("context does not match the RIS size")
    strict = variant != "relaxed_MS"
    eps = (opts.ccp_eps if ccp_eps is None else ccp_eps) if strict else None
    use_common = ctx_ris.mode == RS
    z_bar = ctx_ris.z_bar
    domain = _RisDomain(z_bar, eps)
    shrink = 1.0 - (min(1e-3, eps / 4) if strict else 1e-3)
    z_in = project_disc(z_bar) * shrink
    free = np.ones(ris.M, bool)

    best, best_val = z_bar, surrogate_objective(ctx_ris, z_bar, use_common)
    start_val = best_val
    if use_common:
        z = _epigraph(ctx_ris, z_in, free, 1.0, domain, True, opts)
        best, best_val = _keep_best(ctx_ris, [z], True, best, best_val, project_disc)
    if not use_common or best_val <= start_val + 1e-12:
        z = _epigraph(ctx_ris, z_in, free, 1.0, domain, False, opts)
        best, best_val = _keep_best(ctx_ris, [z], use_common, best, best_val, project_disc)
    out = ris.with_in_mode(best, variant="strict" if strict else "relaxed")
    return project_strict_ms(out) if strict else out
