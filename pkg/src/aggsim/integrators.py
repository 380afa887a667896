"""Time stepping to a numerical steady state.

Two modes:

* ``EULER_DESCENT`` -- explicit Euler used as gradient descent on the
  interaction energy: a trial step that raises the energy is rejected and
  retried with a smaller dt (halving by default), and dt recovers
  multiplicatively after accepted steps up to the dt0 ceiling. A finite
  max_move additionally clamps every trial step so no particle hops
  farther than that distance; with a large dt0 this turns the stepper
  into a trust-region descender that crawls through violent transients
  and takes huge steps across nearly-steady stretches. If dt bottoms out
  at dt_min with the energy still rising, the step is accepted anyway and
  the outcome is flagged as stalled rather than aborting a long sweep.
* ``RK4`` -- classical fixed-step Runge-Kutta for stiff kernels where
  dynamics fidelity matters more than monotone energy; no backtracking.

A run stops as converged when the velocity field's max speed drops below
stop_threshold_scale/n (default 0.001/n), or unconverged at max_steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .diagnostics import DiagnosticsRecord, make_record, radius
from .dynamics import (ParticleState, _delta_from_profiles, _pair_profile,
                       _tol_for, coincidence_tol, energy, energy_delta,
                       velocity)
from .errors import DivergedError, NumericOverflowError
from .potentials import KIND_GENERIC, RadialKernel

EULER_DESCENT = "euler_descent"
RK4 = "rk4"

_CONFIG_KEYS = {
    "method": "method",
    "dt0": "dt0",
    "dt_min": "dt_min",
    "backtrack": "backtrack_factor",
    "grow": "grow_factor",
    "max_move": "max_move",
    "max_steps": "max_steps",
    "stop_scale": "stop_threshold_scale",
    "record_every": "record_every",
    "radius_cap": "radius_cap",
}


@dataclass(frozen=True)
class StepperConfig:
    method: str = EULER_DESCENT
    dt0: float = 0.1
    dt_min: float = 1e-8
    backtrack_factor: float = 0.5
    grow_factor: float = 1.1
    max_move: float = math.inf
    max_steps: int = 5_000_000
    stop_threshold_scale: float = 0.001
    record_every: int = 100
    radius_cap: float = 1e6

    def __post_init__(self):
        if self.method not in (EULER_DESCENT, RK4):
            raise ValueError(f"unknown stepping method {self.method!r}")
        if not (0.0 < self.dt_min <= self.dt0):
            raise ValueError("need 0 < dt_min <= dt0")
        if not (0.0 < self.backtrack_factor < 1.0 < self.grow_factor):
            raise ValueError("need 0 < backtrack_factor < 1 < grow_factor")
        if not self.max_move > 0.0:
            raise ValueError("max_move must be > 0 (math.inf disables it)")
        if self.max_steps < 0 or self.record_every < 1:
            raise ValueError("max_steps must be >= 0 and record_every >= 1")

    @classmethod
    def from_config(cls, doc: dict) -> "StepperConfig":
        """Build from a config sub-document with the documented short keys."""
        unknown = set(doc) - set(_CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown stepper config keys: {sorted(unknown)}")
        return cls(**{_CONFIG_KEYS[k]: v for k, v in doc.items()})

    def to_config(self) -> dict:
        return {k: getattr(self, attr) for k, attr in _CONFIG_KEYS.items()}


@dataclass(frozen=True)
class RunOutcome:
    final_state: ParticleState
    converged: bool
    steps: int
    history: List[DiagnosticsRecord] = field(default_factory=list)
    stalled: bool = False


def step_euler(state: ParticleState, kernel: RadialKernel, dt: float) -> ParticleState:
    """One explicit Euler step x <- x + dt*v; time advances by dt."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    v = velocity(state, kernel)
    return state.with_positions(state.positions + dt * v.velocities,
                                time=state.time + dt)


def step_rk4(state: ParticleState, kernel: RadialKernel, dt: float) -> ParticleState:
    """One classical 4-stage Runge-Kutta step with the velocity field as RHS."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    x = state.positions
    k1 = velocity(state, kernel).velocities
    k2 = velocity(state.with_positions(x + 0.5 * dt * k1), kernel).velocities
    k3 = velocity(state.with_positions(x + 0.5 * dt * k2), kernel).velocities
    k4 = velocity(state.with_positions(x + dt * k3), kernel).velocities
    return state.with_positions(x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4),
                                time=state.time + dt)


def run_to_steady(state: ParticleState, kernel: RadialKernel,
                  cfg: StepperConfig, writer=None) -> RunOutcome:
    """Iterate the configured stepper until numerical steady state.

    Records a diagnostics row at step 0, every ``record_every`` accepted
    steps, and at termination; ``writer`` (a DiagnosticsWriter) additionally
    receives each record as it is produced.

    Raises DivergedError when the support radius exceeds ``radius_cap``.
    """
    threshold = cfg.stop_threshold_scale / state.n
    history: List[DiagnosticsRecord] = []
    stalled = False
    steps = 0
    dt = cfg.dt0
    euler = cfg.method == EULER_DESCENT
    # Descent with a table-backed kernel keeps the accepted state's pair
    # profile (distances and kernel values) in preallocated buffers, so each
    # trial step evaluates only the candidate profile: the energy difference
    # streams old terms from cache, and the diameter for the coincidence
    # tolerance falls out of the same pass. Results are bit-identical to the
    # uncached path because the per-term arithmetic and summation order match.
    cached = euler and kernel.kind != KIND_GENERIC
    tol = None
    if cached:
        n_pairs = state.n * (state.n - 1) // 2
        r_cur, w_cur = np.empty(n_pairs), np.empty(n_pairs)
        r_try, w_try = np.empty(n_pairs), np.empty(n_pairs)
        max_r = _pair_profile(state.positions, kernel.kind, kernel.params,
                              r_cur, w_cur)
        if not math.isfinite(max_r):
            raise NumericOverflowError("pairwise distance overflowed")
        tol = coincidence_tol(max_r)
    # energy is maintained incrementally in descent mode; RK4 computes it
    # only when a record is due
    cur_energy = energy(state, kernel, tol=tol) if euler else None

    def record(vel):
        rec = make_record(steps, state, kernel, energy_value=cur_energy, vel=vel)
        history.append(rec)
        if writer is not None:
            writer.write(rec)

    converged = False
    while True:
        if not cached:
            tol = _tol_for(state)
        vel = velocity(state, kernel, tol=tol)
        if radius(state) > cfg.radius_cap:
            raise DivergedError(
                f"support radius exceeded cap {cfg.radius_cap:g} at step {steps}")
        if vel.max_speed < threshold:
            converged = True
            break
        if steps >= cfg.max_steps:
            break
        if steps % cfg.record_every == 0:
            record(vel)

        if euler:
            # trust region: never let a single step displace any particle
            # farther than max_move, whatever dt has grown to. With a large
            # dt0 ceiling this makes the step size fully adaptive: violent
            # early phases are clamped to safe hops while near-steady phases
            # may take huge dt, subject as always to the energy guard.
            trial_dt = dt
            if vel.max_speed * trial_dt > cfg.max_move:
                trial_dt = cfg.max_move / vel.max_speed
            while True:
                new_state = state.with_positions(
                    state.positions + trial_dt * vel.velocities,
                    time=state.time + trial_dt)
                # pairwise difference: exact accept/reject even when the
                # true change sits below the energy sum's rounding error
                if cached:
                    max_r = _pair_profile(new_state.positions, kernel.kind,
                                          kernel.params, r_try, w_try)
                    if not math.isfinite(max_r):
                        raise NumericOverflowError("pairwise distance overflowed")
                    tol_new = coincidence_tol(max_r)
                    d_energy = _delta_from_profiles(state.masses, tol, tol_new,
                                                    r_cur, w_cur, r_try, w_try)
                    if not math.isfinite(d_energy):
                        raise NumericOverflowError(
                            "energy difference produced a non-finite value")
                else:
                    d_energy = energy_delta(state, new_state, kernel, tol_old=tol)
                if d_energy <= 0.0:
                    break
                if trial_dt <= cfg.dt_min:
                    stalled = True
                    break
                trial_dt = max(trial_dt * cfg.backtrack_factor, cfg.dt_min)
            state = new_state
            cur_energy = cur_energy + d_energy
            dt = min(trial_dt * cfg.grow_factor, cfg.dt0)
            if cached:
                r_cur, r_try = r_try, r_cur
                w_cur, w_try = w_try, w_cur
                tol = tol_new
        else:
            state = step_rk4(state, kernel, dt)
        steps += 1

    if not history or history[-1].step != steps:
        record(velocity(state, kernel))
    return RunOutcome(final_state=state, converged=converged, steps=steps,
                      history=history, stalled=stalled)
