"""Alternating minorization-maximization over beamformers and RIS coefficients."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .channel_model import (NetworkInstance, RisConfig, effective_channels, make_rng,
                            ms_partition, reflect_only_partition)
from .fbl_rates import LN2, RS, TIN, BeamformerSet, FblParams, RateReport, rate_report
from .mm_surrogates import build_context, build_ris_context
from .subproblem_solver import (SolverOptions, project_strict_ms, solve_beamforming,
                                solve_ris)

log = logging.getLogger(__name__)

RIS_VARIANTS = ("none", "reflect_only_optimized", "random_strict",
                "star_ms_strict", "star_ms_relaxed")

# solver variant used for the RIS step; None means the RIS is never optimized
_STEP_VARIANT = {
    "none": None,
    "random_strict": None,
    "reflect_only_optimized": "reflect_only",
    "star_ms_strict": "strict_MS",
    "star_ms_relaxed": "relaxed_MS",
}


@dataclass(frozen=True)
class SchemeSpec:
    rs_mode: str
    ris_variant: str
    label: str

    def __post_init__(self):
        if self.rs_mode not in (RS, TIN):
            raise ValueError(f"rs_mode must be RS or TIN, got {self.rs_mode!r}")
        if self.ris_variant not in RIS_VARIANTS:
            raise ValueError(f"unknown ris_variant {self.ris_variant!r}")

    @property
    def optimizes_ris(self) -> bool:
        return _STEP_VARIANT[self.ris_variant] is not None

    @property
    def strict(self) -> bool:
        return self.ris_variant in ("reflect_only_optimized", "random_strict", "star_ms_strict")


SCHEMES = {s.label: s for s in (
    SchemeSpec(TIN, "reflect_only_optimized", "R-RIS-TIN"),
    SchemeSpec(TIN, "none", "No-RIS-TIN"),
    SchemeSpec(RS, "none", "No-RIS-RS"),
    SchemeSpec(RS, "random_strict", "Rand-RIS-RS_I"),
    SchemeSpec(RS, "star_ms_strict", "STAR-RIS-RS_I"),
    SchemeSpec(RS, "star_ms_relaxed", "STAR-RIS-RS"),
)}


def get_scheme(label: str) -> SchemeSpec:
    try:
        return SCHEMES[label]
    except KeyError:
        raise ValueError(f"unknown scheme {label!r}; choose from {', '.join(SCHEMES)}") from None


@dataclass(frozen=True)
class AOOptions:
    max_outer: int = 50
    tol: float = 1e-4          # bits/s/Hz
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.max_outer < 1 or not self.tol > 0:
            raise ValueError("max_outer must be >= 1 and tol > 0")


@dataclass(eq=False)
class SolveTrace:
    objectives: list           # true max-min rate per outer iteration, bits/s/Hz
    wall_times: list
    termination: str
    beamformers: BeamformerSet
    ris: RisConfig
    report: RateReport
    notes: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.objectives) - 1

    @property
    def objective(self) -> float:
        return self.objectives[-1]

    def rows(self):
        """One (iteration, objective_bits, wall_s) row per outer iteration."""
        return [(i, o, t) for i, (o, t) in enumerate(zip(self.objectives, self.wall_times))]

    def to_csv(self) -> str:
        lines = ["iteration,objective_bps_hz,wall_s"]
        lines += [f"{i},{o:.6g},{t:.6g}" for i, o, t in self.rows()]
        return "\n".join(lines) + "\n"


def _partition(scheme: SchemeSpec, M: int) -> np.ndarray:
    if scheme.ris_variant == "reflect_only_optimized":
        return reflect_only_partition(M)
    return ms_partition(M)


def _mrt(H: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    return (H.conj() / np.where(norms > 0, norms, 1.0)).T


# common-stream power fractions tried by the automatic RS start
COMMON_FRACTIONS = (0.5, 0.9, 0.99)


def _multicast_direction(U):
    """Principal eigenvector of sum_k u_k u_k^H over the unit MRT columns of U."""
    _, vecs = np.linalg.eigh(U @ U.conj().T)
    return vecs[:, -1]


def initialize(instance: NetworkInstance, scheme: SchemeSpec, rng, P: float,
               common_split="auto", fbl: FblParams | None = None):
    """Starting point: unit-amplitude random phases (or zero RIS) and MRT.

    Private beamformers are matched to the effective channels at the starting
    RIS configuration; the common beamformer points along the normalized sum
    of the user directions.  With ``common_split="equal"`` power is split
    evenly over the active streams.  In RS mode the default ``"auto"`` also
    tries giving the common stream the fractions in ``COMMON_FRACTIONS`` of
    the power (privates share the rest evenly), along the sum direction, the
    principal multicast direction or any single user's direction, and keeps
    whichever start has the largest true objective under ``fbl``; the even
    split wins ties.
    """
    rng = make_rng(rng)
    M = instance.M
    mask = _partition(scheme, M)
    if scheme.ris_variant == "none":
        ris = RisConfig.zeros(M, mask, variant="relaxed")
    else:
        phases = rng.uniform(0.0, 2 * np.pi, size=M)
        variant = "relaxed" if scheme.ris_variant == "star_ms_relaxed" else "strict"
        ris = RisConfig.from_in_mode(np.exp(1j * phases), mask, variant)

    H = effective_channels(instance, ris)
    K = instance.K
    U = _mrt(H)
    if scheme.rs_mode != RS:
        W = np.zeros((instance.Nt, K + 1), complex)
        W[:, 1:] = U * np.sqrt(P / K)
        return BeamformerSet(W, P), ris

    uc = U.sum(axis=1)
    nrm = np.linalg.norm(uc)
    if nrm == 0:
        uc, nrm = U[:, 0], 1.0
    uc = uc / nrm

    def start(frac, direction):
        W = np.empty((instance.Nt, K + 1), complex)
        W[:, 0] = direction * np.sqrt(frac * P)
        W[:, 1:] = U * np.sqrt((1 - frac) * P / K)
        return W

    best = start(1.0 / (K + 1), uc)
    if common_split == "equal":
        return BeamformerSet(best, P), ris
    if common_split != "auto":
        raise ValueError(f"common_split must be 'auto' or 'equal', got {common_split!r}")
    fbl = fbl or FblParams.uniform(K)
    best_val = rate_report(H, best, fbl, instance.sigma2, RS).objective
    for direction in (uc, _multicast_direction(U), *U.T):
        for frac in COMMON_FRACTIONS:
            W = start(frac, direction)
            val = rate_report(H, W, fbl, instance.sigma2, RS).objective
            if val > best_val:
                best, best_val = W, val
    return BeamformerSet(best, P), ris


def warm_start(result: SolveTrace, new_scheme: SchemeSpec):
    """Carry a finished solution into ``new_scheme``'s feasible set.

    Returns ``(BeamformerSet, RisConfig, notes)``; ``notes`` lists any
    projection that was needed.
    """
    notes = []
    W = result.beamformers.W.copy()
    if new_scheme.rs_mode == TIN and np.any(W[:, 0] != 0):
        W[:, 0] = 0
        notes.append("common beamformer dropped")
    ris = result.ris
    mask = _partition(new_scheme, ris.M)
    if not np.array_equal(mask, ris.reflect_mask):
        ris = RisConfig.from_in_mode(ris.in_mode(), mask, ris.variant)
        notes.append("RIS partition changed")
    if new_scheme.ris_variant == "none":
        ris = RisConfig.zeros(ris.M, mask)
    elif new_scheme.strict:
        if not np.allclose(np.abs(ris.in_mode()), 1.0, atol=1e-12):
            notes.append("projected to unit amplitude")
        ris = project_strict_ms(ris)
    else:
        ris = replace(ris, variant="relaxed")
    return BeamformerSet(W, result.beamformers.P), ris, notes


def optimize(instance: NetworkInstance, scheme: SchemeSpec, fbl: FblParams, P: float,
             opts: AOOptions | None = None, rng=0, init=None) -> SolveTrace:
    """Run the AO loop for one scheme on one channel draw.

    ``init`` may be a ``(BeamformerSet, RisConfig)`` pair (e.g. from
    :func:`warm_start`); otherwise :func:`initialize` is called with ``rng``.
    Steps that lower the true objective are rejected, so the recorded
    objective sequence is nondecreasing.
    """
    opts = opts or AOOptions()
    sopts = opts.solver
    mode = scheme.rs_mode
    notes = []
    if init is None:
        bf, ris = initialize(instance, scheme, rng, P, fbl=fbl)
    else:
        bf, ris = init[0], init[1]
        if len(init) > 2:
            notes.extend(init[2])
    W = bf.W.copy()
    if mode == TIN:
        W[:, 0] = 0

    net = instance.normalized()
    step_variant = _STEP_VARIANT[scheme.ris_variant]
    if net.M == 0:
        step_variant = None

    def objective(H, W):
        return rate_report(H, W, fbl, 1.0, mode).objective

    H = effective_channels(net, ris)
    obj = objective(H, W)
    objectives = [obj / LN2]
    times = [0.0]
    eps = sopts.ccp_eps
    termination = "max_outer"
    t_start = time.perf_counter()
    for it in range(1, opts.max_outer + 1):
        prev = obj
        ctx = build_context(H, W, fbl, 1.0, mode)
        W_new = solve_beamforming(ctx, P, mode, sopts).W
        o = objective(H, W_new)
        if o >= obj:
            W, obj = W_new, o

        ris_rejected = False
        if step_variant is not None:
            ctx_r = build_ris_context(net, W, ris, fbl, 1.0, mode)
            ris_new = solve_ris(ctx_r, ris, step_variant, sopts, eps)
            H_new = effective_channels(net, ris_new)
            o = objective(H_new, W)
            if o >= obj:
                ris, H, obj = ris_new, H_new, o
            else:
                ris_rejected = True
                # a rejected strict step means the CCP region was too loose
                if scheme.strict:
                    eps = max(eps * sopts.ccp_decay, sopts.ccp_eps_min)

        objectives.append(obj / LN2)
        times.append(time.perf_counter() - t_start)
        gain = (obj - prev) / LN2
        still_shrinking = ris_rejected and scheme.strict and eps > sopts.ccp_eps_min
        if gain < opts.tol and not still_shrinking:
            termination = "converged"
            break

    report = rate_report(H, W, fbl, 1.0, mode).in_bits()
    return SolveTrace(objectives, times, termination, BeamformerSet(W, P), ris, report, notes)


def optimize_multistart(instance, scheme, fbl, P, opts=None, seed=0, starts=1) -> SolveTrace:
    """Best of ``starts`` seed-derived random initializations."""
    best = None
    for child in np.random.SeedSequence(seed).spawn(starts):
        tr = optimize(instance, scheme, fbl, P, opts, rng=child)
        if best is None or tr.objective > best.objective:
            best = tr
    return best
