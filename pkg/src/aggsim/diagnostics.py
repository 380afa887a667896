"""Scalar observables of a particle state.

The three quantities that drive every experiment: the support radius
(distance of the furthest particle from the center of mass), the third
absolute moment M3 = sum m_i |x_i|^3, and the time derivative of M3
evaluated through the pairwise factor

    T_ij = (x_i - x_j)/|x_i - x_j| . (x_i |x_i| - x_j |x_j|)

so that dM3/dt = -3/2 sum_i sum_{j in Z(i)} m_i m_j w'(|x_i-x_j|) T_ij.
The same T_ij admits the algebraically equivalent nonnegative form

    (|x_i| + |x_j|) (1/2 (|x_i|-|x_j|)^2 + 1/2 |x_i-x_j|^2) / |x_i-x_j|

exposed separately for cross-validation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .dynamics import (ParticleState, VelocityField, _tol_for, center_of_mass,
                       coincidence_tol, energy, velocity)
from .errors import CoincidentPointsError, ZeroMassError
from .potentials import KIND_GENERIC, RadialKernel, _slope_one


def radius(state: ParticleState) -> float:
    """Max distance from a particle to the center of mass."""
    com = center_of_mass(state)  # raises on zero total mass
    d = np.sqrt(((state.positions - com) ** 2).sum(axis=1))
    return float(d.max())


def third_moment(state: ParticleState) -> float:
    """M3 = sum m_i |x_i|^3 about the origin of the stored coordinates.

    Callers wanting the zero-center-of-mass convention recenter first.
    """
    norms = np.sqrt((state.positions ** 2).sum(axis=1))
    return float(state.masses @ norms ** 3)


def t_factor(x_i, x_j) -> float:
    """The pairwise moment factor T_ij (direct inner-product form)."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    u = x_i - x_j
    r = math.sqrt(float(u @ u))
    ni = math.sqrt(float(x_i @ x_i))
    nj = math.sqrt(float(x_j @ x_j))
    if r <= coincidence_tol(ni + nj):
        raise CoincidentPointsError("T_ij undefined for coincident points")
    return float(u @ (x_i * ni - x_j * nj)) / r


def t_factor_rewritten(x_i, x_j) -> float:
    """T_ij in the manifestly nonnegative rewritten form (for cross-checks)."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    u = x_i - x_j
    r = math.sqrt(float(u @ u))
    ni = math.sqrt(float(x_i @ x_i))
    nj = math.sqrt(float(x_j @ x_j))
    if r <= coincidence_tol(ni + nj):
        raise CoincidentPointsError("T_ij undefined for coincident points")
    return (ni + nj) * (0.5 * (ni - nj) ** 2 + 0.5 * r * r) / r


@njit(cache=True)
def _dm3dt_pairs(pos, masses, kind, params, tol):
    n, dim = pos.shape
    acc = 0.0
    for i in range(n):
        ni = 0.0
        for d in range(dim):
            ni += pos[i, d] * pos[i, d]
        ni = math.sqrt(ni)
        for j in range(i + 1, n):
            rsq = 0.0
            nj = 0.0
            for d in range(dim):
                diff = pos[i, d] - pos[j, d]
                rsq += diff * diff
                nj += pos[j, d] * pos[j, d]
            r = math.sqrt(rsq)
            if r <= tol:
                continue
            nj = math.sqrt(nj)
            t = 0.0
            for d in range(dim):
                t += (pos[i, d] - pos[j, d]) * (pos[i, d] * ni - pos[j, d] * nj)
            t /= r
            acc += masses[i] * masses[j] * _slope_one(kind, params, r) * t
    # ordered double sum is twice the i<j sum, times the -3/2 prefactor
    return -3.0 * acc


def dm3dt_pairwise(state: ParticleState, kernel: RadialKernel) -> float:
    """dM3/dt along the flow, via the pairwise T_ij formula.

    Coincident pairs are skipped, consistent with the velocity field's Z(i).
    """
    tol = _tol_for(state)
    if kernel.kind != KIND_GENERIC:
        return float(_dm3dt_pairs(state.positions, state.masses, kernel.kind,
                                  kernel.params, tol))
    pos = state.positions
    diff = pos[:, None, :] - pos[None, :, :]
    r = np.sqrt((diff * diff).sum(axis=2))
    mask = r > tol
    norms = np.sqrt((pos ** 2).sum(axis=1))
    y = pos * norms[:, None]
    t_num = np.einsum("ijd,ijd->ij", diff, y[:, None, :] - y[None, :, :])
    slopes = np.zeros_like(r)
    slopes[mask] = np.asarray(kernel.slope(r[mask]))
    summand = np.zeros_like(r)
    summand[mask] = slopes[mask] * t_num[mask] / r[mask]
    return -1.5 * float(state.masses @ summand @ state.masses)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One sampled row of a run's time series."""

    step: int
    time: float
    energy: float
    radius: float
    m3: float
    com: np.ndarray
    max_speed: float
    dm3dt: Optional[float] = None


def make_record(step: int, state: ParticleState, kernel: RadialKernel,
                energy_value: Optional[float] = None,
                vel: Optional[VelocityField] = None,
                include_dm3dt: bool = False) -> DiagnosticsRecord:
    """Assemble a record, reusing energy/velocity when the caller has them."""
    if energy_value is None:
        energy_value = energy(state, kernel)
    if vel is None:
        vel = velocity(state, kernel)
    return DiagnosticsRecord(
        step=step, time=state.time, energy=energy_value,
        radius=radius(state), m3=third_moment(state),
        com=center_of_mass(state), max_speed=vel.max_speed,
        dm3dt=dm3dt_pairwise(state, kernel) if include_dm3dt else None,
    )


# ---------------------------------------------------------------------------
# CSV streaming
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


class DiagnosticsWriter:
    """Streams records to CSV: step,time,energy,radius,m3,max_speed[,dm3dt]."""

    FIELDS = ("step", "time", "energy", "radius", "m3", "max_speed")

    def __init__(self, path_or_handle, include_dm3dt: bool = False):
        if hasattr(path_or_handle, "write"):
            self._fh = path_or_handle
            self._owns = False
        else:
            self._fh = open(path_or_handle, "w", newline="")
            self._owns = True
        self._writer = csv.writer(self._fh)
        self._dm3dt = include_dm3dt
        header = list(self.FIELDS) + (["dm3dt"] if include_dm3dt else [])
        self._writer.writerow(header)

    def write(self, rec: DiagnosticsRecord) -> None:
        row = [str(rec.step)] + [_fmt(v) for v in
                                 (rec.time, rec.energy, rec.radius, rec.m3, rec.max_speed)]
        if self._dm3dt:
            row.append(_fmt(rec.dm3dt if rec.dm3dt is not None else math.nan))
        self._writer.writerow(row)

    def close(self) -> None:
        if self._owns:
            self._fh.close()
        else:
            self._fh.flush()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_diagnostics_csv(records: Sequence[DiagnosticsRecord], path,
                          include_dm3dt: bool = False) -> None:
    with DiagnosticsWriter(path, include_dm3dt=include_dm3dt) as w:
        for rec in records:
            w.write(rec)
