"""Executable forms of the structural inequalities behind confinement.

These are geometry facts about zero-center-of-mass configurations plus two
kernel-derived constants:

* the half-space mass bound: for any unit vector e, the region
  {x . e <= R/2} (R = support radius) carries at least 1/3 of the mass;
* the near/far moment comparison: with K1 = 10*C_W*R_a and R_K1 the radius
  beyond which w'(r)*r > K1 on the probe tail, any particle with
  |x_i| > R_K1 satisfies T_r <= 4*T_a, where T_r sums m_j(|x_i|+|x_j|) over
  neighbors within R_a and T_a sums the same weight over particles farther
  than R_K1.

Both hold for every admissible configuration; a failure is an
implementation bug, which is what makes them usable as tests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import ParticleState, _max_pair_dist_sq, center_of_mass
from .errors import (FocalAtOriginError, NotCenteredError,
                     PreconditionRadiusError)
from .potentials import BORDERLINE, FAILS, KernelReport, RadialKernel


@dataclass(frozen=True)
class NeighborhoodPartition:
    """Index sets around a focal particle i.

    near: 0 < |x_j - x_i| <= r_a; far: |x_j - x_i| > r_cut;
    half_space: x_j . e_i <= R/2 with e_i = x_i/|x_i| and R = max_j |x_j|.
    """

    focal: int
    r_a: float
    r_cut: float
    near: np.ndarray
    far: np.ndarray
    half_space: np.ndarray


def partition(state: ParticleState, i: int, r_a: float, r_cut: float) -> NeighborhoodPartition:
    """Split particle indices into near/far/half-space sets around particle i.

    Requires 0 <= r_a <= r_cut and a zero-center-of-mass convention for the
    half-space set to mean what the radius bound intends (R is taken about
    the origin of the stored coordinates).
    """
    if not (0.0 <= r_a <= r_cut):
        raise ValueError("need 0 <= r_a <= r_cut")
    pos = state.positions
    x_i = pos[i]
    norm_i = math.sqrt(float(x_i @ x_i))
    if norm_i == 0.0:
        raise FocalAtOriginError("half-space direction undefined for x_i = 0")
    d = np.sqrt(((pos - x_i) ** 2).sum(axis=1))
    near = np.flatnonzero((d > 0.0) & (d <= r_a))
    far = np.flatnonzero(d > r_cut)
    e_i = x_i / norm_i
    big_r = float(np.sqrt((pos ** 2).sum(axis=1)).max())
    half = np.flatnonzero(pos @ e_i <= 0.5 * big_r)
    return NeighborhoodPartition(focal=i, r_a=r_a, r_cut=r_cut,
                                 near=near, far=far, half_space=half)


def _require_centered(state: ParticleState) -> None:
    diameter = math.sqrt(_max_pair_dist_sq(state.positions)) if state.n > 1 else 0.0
    drift = float(np.linalg.norm(center_of_mass(state)))
    if drift > 1e-10 * diameter:
        raise NotCenteredError(
            f"center of mass {drift:.3e} exceeds 1e-10 * diameter {diameter:.3e}")


def one_third_mass_check(state: ParticleState, e) -> tuple[float, bool]:
    """Mass of the half-space {x . e <= R/2} and whether it is >= 1/3 of total.

    R is the support radius about the origin; the state must already be
    centered (zero center of mass to 1e-10 of the diameter).
    """
    e = np.asarray(e, dtype=np.float64)
    if abs(float(e @ e) - 1.0) > 1e-8:
        raise ValueError("direction must be a unit vector")
    _require_centered(state)
    big_r = float(np.sqrt((state.positions ** 2).sum(axis=1)).max())
    lhs = float(state.masses[state.positions @ e <= 0.5 * big_r].sum())
    return lhs, lhs >= state.total_mass / 3.0 - 1e-12


def k1_radius(kernel: RadialKernel, report: KernelReport) -> Optional[float]:
    """Smallest probe radius > 2*R_a past which w'(r)*r > K1 = 10*C_W*R_a.

    Returns None when the tail growth class rules the condition out (FAILS,
    or BORDERLINE with limit <= K1). The result is probe-relative: it
    certifies the sampled tail only.
    """
    k1 = 10.0 * report.c_w * report.r_attract_estimate
    if report.conf_class == FAILS:
        return None
    if report.conf_class == BORDERLINE and (report.conf_limit is None
                                            or report.conf_limit <= k1):
        return None
    r = report.probe().points()
    y = np.asarray(kernel.slope(r)) * r
    ok = y > k1
    # suffix scan: position from which the condition holds to the grid end
    holds_beyond = np.logical_and.accumulate(ok[::-1])[::-1]
    candidates = np.flatnonzero(holds_beyond & (r > 2.0 * report.r_attract_estimate))
    if candidates.size == 0:
        return None
    return float(r[candidates[0]])


def with_k1(kernel: RadialKernel, report: KernelReport) -> KernelReport:
    """Copy of the report with the attraction-dominance radius attached."""
    return dataclasses.replace(report, r_k1=k1_radius(kernel, report))


def claim_ratio_check(state: ParticleState, k_report: KernelReport, i: int,
                      r_cut: Optional[float] = None) -> tuple[float, float, bool]:
    """Near/far moment comparison T_r <= 4*T_a for a far-out focal particle.

    Uses r_a from the report and r_cut = report.r_k1 unless overridden.
    Requires a centered state and |x_i| > r_cut.
    """
    if r_cut is None:
        r_cut = k_report.r_k1
    if r_cut is None:
        raise ValueError("kernel report carries no attraction-dominance radius")
    _require_centered(state)
    norm_i = float(np.linalg.norm(state.positions[i]))
    if norm_i <= r_cut:
        raise PreconditionRadiusError(
            f"|x_i| = {norm_i:.6g} is not beyond r_cut = {r_cut:.6g}")
    part = partition(state, i, k_report.r_attract_estimate, r_cut)
    norms = np.sqrt((state.positions ** 2).sum(axis=1))
    weight = state.masses * (norm_i + norms)
    t_r = float(weight[part.near].sum())
    t_a = float(weight[part.far].sum())
    return t_r, t_a, t_r <= 4.0 * t_a + 1e-12


# ---------------------------------------------------------------------------
# check-report
# ---------------------------------------------------------------------------

def _state_digest(state: ParticleState) -> str:
    h = hashlib.sha256()
    h.update(state.positions.tobytes())
    h.update(state.masses.tobytes())
    return h.hexdigest()[:16]


def theory_report(state: ParticleState, kernel: RadialKernel,
                  report: KernelReport, n_directions: int = 64) -> dict:
    """Run every applicable check on one configuration; JSON-ready result.

    The half-space mass check sweeps ``n_directions`` evenly spaced unit
    vectors; the moment-comparison check visits every particle beyond the
    attraction-dominance radius (skipped when that radius does not exist).
    """
    digest = _state_digest(state)
    checks = []

    angles = 2.0 * math.pi * np.arange(n_directions) / n_directions
    worst = math.inf
    worst_dir = None
    ok_all = True
    for a in angles:
        e = np.array([math.cos(a), math.sin(a)])
        if state.dim != 2:
            break
        lhs, ok = one_third_mass_check(state, e)
        if lhs < worst:
            worst, worst_dir = lhs, float(a)
        ok_all = ok_all and ok
    checks.append({
        "name": "one_third_mass",
        "inputs": digest,
        "pass": bool(ok_all),
        "witness": {"min_lhs_mass": worst if worst_dir is not None else None,
                    "argmin_angle": worst_dir,
                    "directions": n_directions if state.dim == 2 else 0},
    })

    rep = report if report.r_k1 is not None else with_k1(kernel, report)
    norms = np.sqrt((state.positions ** 2).sum(axis=1))
    if rep.r_k1 is None:
        checks.append({"name": "near_far_moment_ratio", "inputs": digest,
                       "pass": True,
                       "witness": {"skipped": "no attraction-dominance radius"}})
    else:
        admissible = np.flatnonzero(norms > rep.r_k1)
        ratio_ok = True
        worst_gap = math.inf
        worst_i = None
        for i in admissible:
            t_r, t_a, ok = claim_ratio_check(state, rep, int(i))
            gap = 4.0 * t_a - t_r
            if gap < worst_gap:
                worst_gap, worst_i = gap, int(i)
            ratio_ok = ratio_ok and ok
        checks.append({
            "name": "near_far_moment_ratio",
            "inputs": digest,
            "pass": bool(ratio_ok),
            "witness": {"admissible_particles": int(admissible.size),
                        "r_k1": rep.r_k1,
                        "min_gap_4Ta_minus_Tr": None if worst_i is None else worst_gap,
                        "argmin_particle": worst_i},
        })

    return {"state_digest": digest, "kernel": kernel.name,
            "all_pass": all(c["pass"] for c in checks), "checks": checks}
