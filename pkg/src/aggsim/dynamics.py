"""Particle states, the interaction velocity field, and the discrete energy.

The model: n particles with masses m_i move by

    dx_i/dt = -sum_{j != i} m_j w'(|x_i - x_j|) (x_i - x_j)/|x_i - x_j|

which is the (mass-weighted) gradient flow of the interaction energy

    E = 1/2 sum_i sum_{j != i} m_i m_j w(|x_i - x_j|).

Coincident pairs are excluded from both sums: a pair closer than
``coincidence_tol`` contributes nothing, which keeps the unit vector
well-defined and matches the continuum convention that a particle does not
interact with particles sitting exactly on top of it.

Pair sums run in a fixed index order (ascending j within ascending i) so
repeated evaluations are bit-identical; the jit-compiled loops below are
single-threaded by construction.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .errors import NumericOverflowError, ZeroMassError
from .potentials import KIND_GENERIC, RadialKernel, _slope_one, _value_one


def coincidence_tol(diameter: float) -> float:
    """Distance below which a pair counts as coincident: 1e-14*(1+diameter)."""
    return 1e-14 * (1.0 + diameter)


@dataclass(frozen=True)
class ParticleState:
    """Immutable snapshot of n particles in R^dim.

    positions has shape (n, dim), masses shape (n,) with each mass in [0, 1].
    Arrays are copied and marked read-only on construction.
    """

    positions: np.ndarray
    masses: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be a (n, dim) array with n >= 1")
        mas = np.array(self.masses, dtype=np.float64, copy=True)
        if mas.shape != (pos.shape[0],):
            raise ValueError("masses must be a length-n vector")
        if not np.isfinite(pos).all():
            raise NumericOverflowError("non-finite particle positions")
        if not np.isfinite(mas).all() or (mas < 0.0).any() or (mas > 1.0).any():
            raise ValueError("masses must be finite and lie in [0, 1]")
        if not (self.time >= 0.0):
            raise ValueError("time must be >= 0")
        pos.setflags(write=False)
        mas.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "masses", mas)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @classmethod
    def equal_masses(cls, positions, time: float = 0.0) -> "ParticleState":
        """State with masses 1/n (the convention of all sweep experiments)."""
        pos = np.asarray(positions, dtype=np.float64)
        n = pos.shape[0]
        return cls(positions=pos, masses=np.full(n, 1.0 / n), time=time)

    def with_positions(self, positions, time: Optional[float] = None) -> "ParticleState":
        return ParticleState(positions=positions, masses=self.masses,
                             time=self.time if time is None else time)


@dataclass(frozen=True)
class VelocityField:
    """Velocities of every particle plus their largest Euclidean speed."""

    velocities: np.ndarray
    max_speed: float = field(default=math.nan)

    def __post_init__(self):
        if math.isnan(self.max_speed):
            speeds = np.sqrt((self.velocities ** 2).sum(axis=1))
            object.__setattr__(self, "max_speed", float(speeds.max(initial=0.0)))


# ---------------------------------------------------------------------------
# jit pair loops (builtin kernels)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _max_pair_dist_sq(pos):
    n, dim = pos.shape
    best = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            rsq = 0.0
            for d in range(dim):
                diff = pos[i, d] - pos[j, d]
                rsq += diff * diff
            if rsq > best:
                best = rsq
    return best


@njit(cache=True)
def _velocity_pairs(pos, masses, kind, params, tol):
    n, dim = pos.shape
    vel = np.zeros((n, dim))
    for i in range(n):
        for j in range(i + 1, n):
            rsq = 0.0
            for d in range(dim):
                diff = pos[i, d] - pos[j, d]
                rsq += diff * diff
            r = math.sqrt(rsq)
            if r <= tol:
                continue
            c = _slope_one(kind, params, r) / r
            for d in range(dim):
                f = c * (pos[i, d] - pos[j, d])
                vel[i, d] -= masses[j] * f
                vel[j, d] += masses[i] * f
    return vel


@njit(cache=True)
def _energy_delta_pairs(pos_old, pos_new, masses, kind, params, tol_old, tol_new):
    """sum of m_i m_j (w(r_new) - w(r_old)) over pairs, with per-state
    coincidence exclusion.

    Computing the energy difference term-by-term keeps its roundoff at the
    scale of the difference itself instead of the scale of the total energy,
    which matters near steady state where true per-step changes sit far
    below the rounding error of two independently summed energies.
    """
    n, dim = pos_old.shape
    acc = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            rsq_o = 0.0
            rsq_n = 0.0
            for d in range(dim):
                do = pos_old[i, d] - pos_old[j, d]
                dn = pos_new[i, d] - pos_new[j, d]
                rsq_o += do * do
                rsq_n += dn * dn
            r_o = math.sqrt(rsq_o)
            r_n = math.sqrt(rsq_n)
            term = 0.0
            if r_n > tol_new:
                term = _value_one(kind, params, r_n)
            if r_o > tol_old:
                term -= _value_one(kind, params, r_o)
            acc += masses[i] * masses[j] * term
    return acc


@njit(cache=True)
def _pair_profile(pos, kind, params, r_out, w_out):
    """Fill condensed i<j arrays with pair distances and kernel values.

    w is evaluated for every positive distance -- whether a pair counts is
    decided later against a coincidence tolerance. Exact zero distances
    store w = 0 (such pairs can never clear a positive tolerance). Returns
    the largest pair distance, which equals sqrt(max pair distance squared)
    exactly because sqrt is monotone and correctly rounded.
    """
    n, dim = pos.shape
    k = 0
    max_r = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            rsq = 0.0
            for d in range(dim):
                diff = pos[i, d] - pos[j, d]
                rsq += diff * diff
            r = math.sqrt(rsq)
            r_out[k] = r
            w_out[k] = _value_one(kind, params, r) if r > 0.0 else 0.0
            if r > max_r:
                max_r = r
            k += 1
    return max_r


@njit(cache=True)
def _delta_from_profiles(masses, tol_old, tol_new, r_old, w_old, r_new, w_new):
    """Energy difference between two cached pair profiles.

    Streams the arrays in the same i<j order and with the same per-term
    arithmetic as _energy_delta_pairs, so the result is bit-identical to
    recomputing both profiles from positions.
    """
    n = masses.shape[0]
    acc = 0.0
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            term = 0.0
            if r_new[k] > tol_new:
                term = w_new[k]
            if r_old[k] > tol_old:
                term -= w_old[k]
            acc += masses[i] * masses[j] * term
            k += 1
    return acc


@njit(cache=True)
def _energy_pairs(pos, masses, kind, params, tol):
    n, dim = pos.shape
    acc = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            rsq = 0.0
            for d in range(dim):
                diff = pos[i, d] - pos[j, d]
                rsq += diff * diff
            r = math.sqrt(rsq)
            if r <= tol:
                continue
            acc += masses[i] * masses[j] * _value_one(kind, params, r)
    return acc


# ---------------------------------------------------------------------------
# vectorized fallback for callable-backed kernels
# ---------------------------------------------------------------------------

def _pair_geometry(pos, tol):
    diff = pos[:, None, :] - pos[None, :, :]
    r = np.sqrt((diff * diff).sum(axis=2))
    return diff, r, r > tol


def _velocity_generic(pos, masses, kernel, tol):
    diff, r, mask = _pair_geometry(pos, tol)
    coeff = np.zeros_like(r)
    coeff[mask] = np.asarray(kernel.slope(r[mask])) / r[mask]
    return -np.einsum("j,ij,ijd->id", masses, coeff, diff)


def _energy_generic(pos, masses, kernel, tol):
    _, r, mask = _pair_geometry(pos, tol)
    w = np.zeros_like(r)
    w[mask] = np.asarray(kernel.value(r[mask]))
    return 0.5 * float(masses @ w @ masses)


def _tol_for(state: ParticleState) -> float:
    if state.n == 1:
        return coincidence_tol(0.0)
    dsq = _max_pair_dist_sq(state.positions)
    if not math.isfinite(dsq):
        raise NumericOverflowError("pairwise distance overflowed")
    return coincidence_tol(math.sqrt(dsq))


def velocity(state: ParticleState, kernel: RadialKernel,
             tol: Optional[float] = None) -> VelocityField:
    """Velocity field of the interaction flow.

    v_i = -sum over j (excluding i and coincident pairs) of
    m_j * w'(r_ij) * (x_i - x_j)/r_ij, summed in fixed index order.

    ``tol`` lets a stepping loop reuse the coincidence tolerance it already
    computed for this state instead of paying another O(n^2) diameter scan.
    """
    if tol is None:
        tol = _tol_for(state)
    if kernel.kind == KIND_GENERIC:
        vel = _velocity_generic(state.positions, state.masses, kernel, tol)
    else:
        vel = _velocity_pairs(state.positions, state.masses, kernel.kind,
                              kernel.params, tol)
    if not np.isfinite(vel).all():
        raise NumericOverflowError("velocity evaluation produced non-finite values")
    return VelocityField(velocities=vel)


def energy(state: ParticleState, kernel: RadialKernel,
           tol: Optional[float] = None) -> float:
    """Discrete interaction energy; coincident pairs contribute nothing."""
    if tol is None:
        tol = _tol_for(state)
    if kernel.kind == KIND_GENERIC:
        out = _energy_generic(state.positions, state.masses, kernel, tol)
    else:
        out = _energy_pairs(state.positions, state.masses, kernel.kind,
                            kernel.params, tol)
    if not math.isfinite(out):
        raise NumericOverflowError("energy evaluation produced a non-finite value")
    return float(out)


def energy_delta(old: ParticleState, new: ParticleState, kernel: RadialKernel,
                 tol_old: Optional[float] = None) -> float:
    """energy(new) - energy(old), evaluated pairwise for full precision.

    For states that differ by a small step, subtracting two separately
    rounded energy sums loses the true difference in noise; the pairwise
    form is exact at the scale of the difference. Falls back to plain
    subtraction for callable-backed kernels.
    """
    if tol_old is None:
        tol_old = _tol_for(old)
    tol_new = _tol_for(new)
    if kernel.kind == KIND_GENERIC:
        return energy(new, kernel) - energy(old, kernel)
    out = _energy_delta_pairs(old.positions, new.positions, old.masses,
                              kernel.kind, kernel.params, tol_old, tol_new)
    if not math.isfinite(out):
        raise NumericOverflowError("energy difference produced a non-finite value")
    return float(out)


def center_of_mass(state: ParticleState) -> np.ndarray:
    m = state.total_mass
    if m <= 0.0:
        raise ZeroMassError("center of mass undefined for zero total mass")
    return (state.masses @ state.positions) / m


def recenter(state: ParticleState) -> ParticleState:
    """Shift positions so the center of mass sits at the origin."""
    return state.with_positions(state.positions - center_of_mass(state))


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def state_to_csv(state: ParticleState, path) -> None:
    """One row per particle: x_1..x_dim,mass (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{d + 1}" for d in range(state.dim)] + ["mass"])
        for row, m in zip(state.positions, state.masses):
            writer.writerow([_fmt(v) for v in row] + [_fmt(m)])


def state_from_csv(path, time: float = 0.0) -> ParticleState:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "mass" or not header[0].startswith("x_"):
            raise ValueError(f"unrecognized snapshot header: {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.asarray(rows)
    return ParticleState(positions=arr[:, :-1], masses=arr[:, -1], time=time)


def state_to_json(state: ParticleState, kernel_name: Optional[str] = None) -> dict:
    """JSON-ready snapshot document with {dim, n, time, kernel} metadata."""
    return {
        "dim": state.dim,
        "n": state.n,
        "time": state.time,
        "kernel": kernel_name,
        "positions": [[float(v) for v in row] for row in state.positions],
        "masses": [float(m) for m in state.masses],
    }


def state_from_json(doc) -> tuple[ParticleState, Optional[str]]:
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    state = ParticleState(positions=np.asarray(doc["positions"]),
                          masses=np.asarray(doc["masses"]),
                          time=float(doc.get("time", 0.0)))
    if state.dim != doc.get("dim", state.dim) or state.n != doc.get("n", state.n):
        raise ValueError("snapshot metadata disagrees with array shapes")
    return state, doc.get("kernel")
