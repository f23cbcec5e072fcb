"""Exhaustive reference for the two-user, two-element strict mode-switching case.

Stage one scores every pair of in-mode phases on a 2 degree grid with a
structured beamformer family: a common beamformer along the phase-aligned sum
of the two matched directions and zero-forcing privates, swept over the
common power share and the alignment phase.  Stage two refines the best phase
pairs by iterating the beamformer update to convergence at fixed phases.
"""
import numpy as np

from starmm.channel_model import ms_partition
from starmm.fbl_rates import RS, fbl_rate, rate_report
from starmm.mm_surrogates import build_context
from starmm.subproblem_solver import solve_beamforming

STEP_DEG = 2
SHARES = np.array([0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.98, 0.995])
PSI = np.linspace(0, 2 * np.pi, 12, endpoint=False)


def _rates(X, fbl):
    """Vectorized max-min objective (nats) from gains X (..., K, K+1), sigma2 = 1."""
    p = np.abs(X) ** 2
    priv = p[..., 1:].sum(-1)
    own = np.stack([p[..., k, k + 1] for k in range(X.shape[-2])], -1)
    sc = p[..., 0] / (1 + priv)
    sp = own / (1 + priv - own)
    rc = fbl_rate(sc, fbl.eps_c, fbl.n_c)
    rp = fbl_rate(sp, fbl.eps_k[0], fbl.n_k[0])
    return (np.maximum(rc.min(-1), 0)[..., None] + rp).min(-1)


def phase_grid_channels(inst):
    ph = np.deg2rad(np.arange(0, 360, STEP_DEG))
    a, b = np.meshgrid(ph, ph, indexing="ij")
    z = np.stack([np.exp(1j * a.ravel()), np.exp(1j * b.ravel())], 1)        # (N, 2)
    mask = ms_partition(2)
    th = np.where(inst.reflect_users[:, None, None], np.where(mask, z, 0)[None],
                  np.where(mask, 0, z)[None])                                   # (K, N, M)
    H = np.einsum("knm,mt->nkt", th * inst.F[:, None, :], inst.G) + inst.D[None]
    return z, H


def _family(H, P, psi, s):
    """Structured beamformers for channels H (N, 2, Nt); returns (N, Nt, 3)."""
    U = (H / np.linalg.norm(H, axis=2, keepdims=True)).conj()
    Z = np.linalg.pinv(H)
    Z = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    c = U[:, 0] + np.exp(1j * psi) * U[:, 1]
    c = c / np.maximum(np.linalg.norm(c, axis=1, keepdims=True), 1e-300)
    return np.concatenate([np.sqrt(s * P) * c[:, :, None], np.sqrt((1 - s) * P / 2) * Z], axis=2)


def family_scores(H, P, fbl):
    """Best structured-beamformer objective per channel H[n], and its parameters."""
    best = np.full(H.shape[0], -np.inf)
    arg = np.zeros((H.shape[0], 2))
    for psi in PSI:
        for s in SHARES:
            val = _rates(np.einsum("nkt,nts->nks", H, _family(H, P, psi, s)), fbl)
            better = val > best
            best = np.where(better, val, best)
            arg[better] = psi, s
    return best, arg


def refine(Hn, P, fbl, W0, iters=100, tol=1e-7):
    """Iterate the beamformer update at fixed channels until it stalls."""
    W, obj = W0, rate_report(Hn, W0, fbl, 1.0, RS).objective
    for _ in range(iters):
        W1 = solve_beamforming(build_context(Hn, W, fbl, 1.0, RS), P, RS).W
        o = rate_report(Hn, W1, fbl, 1.0, RS).objective
        if o < obj + tol:
            break
        W, obj = W1, o
    return obj


def grid_optimum(inst, P, fbl, top=4):
    """Max-min objective in nats over the phase grid (``inst`` normalized)."""
    _, H = phase_grid_channels(inst)
    scores, arg = family_scores(H, P, fbl)
    order = np.argsort(scores)[::-1][:top]
    best = scores[order[0]]
    for n in order:
        W0 = _family(H[n:n + 1], P, *arg[n])[0]
        best = max(best, refine(H[n], P, fbl, W0))
    return best
