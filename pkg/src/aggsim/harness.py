"""Experiment orchestration: initial data, sweeps over n, persistence.

An experiment runs ``trials_per_n`` independent flows for each particle
count in ``n_values``, records the steady-state support radius of every
trial, and persists:

* ``radii.csv``    -- one row per trial: n,trial,radius,converged,steps,wall_ms
* ``summary.json`` -- config echo, per-n radius statistics, optional
                      radius^2-vs-n regression block
* ``diag_n{n}_t{trial}.csv`` -- per-run diagnostics time series
* ``snapshot_n{n}_t{trial}.csv`` -- final particle positions (optional)

Reproducibility: every trial draws its initial configuration from a Philox
counter-based generator seeded with SeedSequence(master_seed,
spawn_key=(n, trial)), so any (n, trial) cell can be regenerated in
isolation. In deterministic mode the wall_ms column is written as 0 so
that repeated runs of the same config produce byte-identical CSV files.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import diagnostics, dynamics
from .dynamics import ParticleState, _max_pair_dist_sq
from .errors import DegenerateError, DivergedError, RejectionExhaustedError
from .integrators import RK4, EULER_DESCENT, RunOutcome, StepperConfig, run_to_steady
from .potentials import (KIND_MORSE, KIND_PIECEWISE_LOG, KIND_PIECEWISE_LOGLOG,
                         RadialKernel, kernel_from_config)

REJECTION_LIMIT = 10_000


# ---------------------------------------------------------------------------
# experiment description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitSpec:
    """Initial-data protocol: n uniform points in a centered square.

    side=None lets the harness pick a kernel-appropriate default. When
    min_far_pair is set, whole configurations are resampled until some pair
    is separated by more than the kernel's outer branch radius.
    """

    shape: str = "centered_square"
    side: Optional[float] = None
    min_far_pair: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.shape != "centered_square":
            raise ValueError(f"unsupported init shape {self.shape!r}")
        if self.side is not None and not self.side > 0:
            raise ValueError("side must be > 0")


@dataclass(frozen=True)
class ExperimentSpec:
    kernel_name: str
    n_values: tuple
    kernel_params: dict = field(default_factory=dict)
    dim: int = 2
    trials_per_n: int = 5
    init: InitSpec = InitSpec()
    stepper: StepperConfig = StepperConfig()
    outputs: Optional[str] = None
    save_snapshots: bool = False
    regression: bool = False
    deterministic: bool = True
    threads: int = 1

    def __post_init__(self):
        if len(self.n_values) == 0:
            raise ValueError("n_values must be non-empty")
        if any(int(n) < 1 for n in self.n_values):
            raise ValueError("all n must be >= 1")
        if self.trials_per_n < 1 or self.threads < 1:
            raise ValueError("trials_per_n and threads must be >= 1")
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))

    def kernel(self) -> RadialKernel:
        return kernel_from_config(self.kernel_name, self.kernel_params)

    def to_config(self) -> dict:
        return {
            "kernel": {"name": self.kernel_name, "params": dict(self.kernel_params)},
            "dim": self.dim,
            "n_values": list(self.n_values),
            "trials_per_n": self.trials_per_n,
            "init": asdict(self.init),
            "stepper": self.stepper.to_config(),
            "outputs": self.outputs,
            "snapshots": self.save_snapshots,
            "regression": self.regression,
            "deterministic": self.deterministic,
            "threads": self.threads,
        }

    @classmethod
    def from_config(cls, doc: dict) -> "ExperimentSpec":
        known = {"kernel", "dim", "n_values", "trials_per_n", "init", "stepper",
                 "outputs", "snapshots", "regression", "deterministic", "threads"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kern = doc.get("kernel")
        if not isinstance(kern, dict) or "name" not in kern:
            raise ValueError('config needs "kernel": {"name": ..., "params": {...}}')
        if "n_values" not in doc:
            raise ValueError('config needs "n_values"')
        return cls(
            kernel_name=kern["name"],
            kernel_params=dict(kern.get("params", {})),
            dim=int(doc.get("dim", 2)),
            n_values=tuple(doc["n_values"]),
            trials_per_n=int(doc.get("trials_per_n", 5)),
            init=InitSpec(**doc.get("init", {})),
            stepper=StepperConfig.from_config(doc.get("stepper", {})),
            outputs=doc.get("outputs"),
            save_snapshots=bool(doc.get("snapshots", False)),
            regression=bool(doc.get("regression", False)),
            deterministic=bool(doc.get("deterministic", True)),
            threads=int(doc.get("threads", 1)),
        )


def load_config(path) -> ExperimentSpec:
    with open(path) as fh:
        return ExperimentSpec.from_config(json.load(fh))


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

def trial_rng(master_seed: int, n: int, trial: int) -> np.random.Generator:
    """Philox generator for one (n, trial) cell.

    Derivation rule (bit-exact): SeedSequence(master_seed,
    spawn_key=(n, trial)) keys a Philox counter-based generator.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(n, trial))
    return np.random.Generator(np.random.Philox(ss))


def default_square_side(kernel: RadialKernel, n: int) -> float:
    """Kernel-appropriate side for the initial centered square.

    Log: 3.0. Log-log: 2e. Morse (both regimes): a compact blob a few
    attraction radii across. Crystal-forming Morse flocks in particular
    anneal far more reliably when grown outward from a dense start; seeding
    them near their final extent tears the cloud and freezes boundary
    protrusions that inflate the steady radius by 10% or more.
    """
    if kernel.kind == KIND_PIECEWISE_LOG:
        return 3.0
    if kernel.kind == KIND_PIECEWISE_LOGLOG:
        return 2.0 * math.e
    if kernel.kind == KIND_MORSE:
        return max(1.0, 4.0 * kernel.r_attract)
    raise ValueError(f"no default square side for kernel {kernel.name!r}; set init.side")


def generate_initial(n: int, init: InitSpec, rng: np.random.Generator,
                     kernel: Optional[RadialKernel] = None, dim: int = 2) -> ParticleState:
    """n uniform points in the centered square, masses 1/n, recentered.

    With min_far_pair, whole configurations are rejected until at least one
    pair is farther apart than the kernel's outer branch radius; gives up
    after 10^4 resamples.
    """
    side = init.side
    if side is None:
        if kernel is None:
            raise ValueError("init.side is required when no kernel is given")
        side = default_square_side(kernel, n)
    far_sep = 1.0
    if kernel is not None and kernel.branch_radius is not None:
        far_sep = kernel.branch_radius

    for _ in range(REJECTION_LIMIT):
        pos = rng.uniform(-0.5 * side, 0.5 * side, size=(n, dim))
        if init.min_far_pair and n >= 2:
            if _max_pair_dist_sq(pos) <= far_sep * far_sep:
                continue
        return dynamics.recenter(ParticleState.equal_masses(pos))
    raise RejectionExhaustedError(
        f"no configuration with a pair farther than {far_sep:g} "
        f"after {REJECTION_LIMIT} draws (side {side:g} too small?)")


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialResult:
    n: int
    trial: int
    radius: float
    converged: bool
    steps: int
    wall_ms: float
    final_energy: float = math.nan
    stalled: bool = False
    error: Optional[str] = None


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    points: tuple  # (n, radius^2) pairs used
    residuals: tuple

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared,
                "points": [list(p) for p in self.points],
                "residuals": list(self.residuals)}


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    trials: List[TrialResult]
    per_n: dict
    regression: Optional[RegressionResult] = None


def summarize_trials(trials: Sequence[TrialResult]) -> dict:
    """Per-n radius statistics over trials that finished with a radius."""
    per_n: dict = {}
    for n in sorted({t.n for t in trials}):
        radii = [t.radius for t in trials
                 if t.n == n and t.error is None and math.isfinite(t.radius)]
        converged = sum(1 for t in trials if t.n == n and t.converged)
        entry = {"trials": sum(1 for t in trials if t.n == n),
                 "converged": converged}
        if radii:
            entry.update(mean_radius=float(np.mean(radii)),
                         min_radius=float(np.min(radii)),
                         max_radius=float(np.max(radii)))
        per_n[n] = entry
    return per_n


def regress_radius_squared(result) -> tuple[float, float, float]:
    """OLS fit of radius^2 against n.

    Accepts an ExperimentResult (uses every successful trial) or an
    iterable of (n, radius) pairs. All-equal n is degenerate.
    """
    if isinstance(result, ExperimentResult):
        pts = [(t.n, t.radius) for t in result.trials
               if t.error is None and math.isfinite(t.radius)]
    else:
        pts = [(float(n), float(r)) for n, r in result]
    if len(pts) < 2:
        raise DegenerateError("regression needs at least two points")
    ns = np.array([p[0] for p in pts], dtype=np.float64)
    ys = np.array([p[1] for p in pts], dtype=np.float64) ** 2
    if np.all(ns == ns[0]):
        raise DegenerateError("regression needs at least two distinct n")
    slope, intercept = np.polyfit(ns, ys, 1)
    fit = slope * ns + intercept
    ss_res = float(np.sum((ys - fit) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r_squared


def _regression_block(result_trials: Sequence[TrialResult]) -> RegressionResult:
    pts = [(t.n, t.radius) for t in result_trials
           if t.error is None and math.isfinite(t.radius)]
    slope, intercept, r2 = regress_radius_squared(pts)
    residuals = tuple(r * r - (slope * n + intercept) for n, r in pts)
    return RegressionResult(slope=slope, intercept=intercept, r_squared=r2,
                            points=tuple((n, r * r) for n, r in pts),
                            residuals=residuals)


# ---------------------------------------------------------------------------
# sweep driver
# ---------------------------------------------------------------------------

def _run_one(spec: ExperimentSpec, kernel: RadialKernel, n: int, trial: int,
             outdir: Optional[Path]) -> TrialResult:
    rng = trial_rng(spec.init.seed, n, trial)
    state = generate_initial(n, spec.init, rng, kernel=kernel, dim=spec.dim)
    writer = None
    if outdir is not None:
        writer = diagnostics.DiagnosticsWriter(outdir / f"diag_n{n}_t{trial}.csv")
    t0 = time.perf_counter()
    try:
        outcome: RunOutcome = run_to_steady(state, kernel, spec.stepper, writer=writer)
    except DivergedError:
        wall = 0.0 if spec.deterministic else (time.perf_counter() - t0) * 1e3
        return TrialResult(n=n, trial=trial, radius=math.nan, converged=False,
                           steps=0, wall_ms=wall, error="diverged")
    finally:
        if writer is not None:
            writer.close()
    wall = 0.0 if spec.deterministic else (time.perf_counter() - t0) * 1e3
    final = outcome.final_state
    if outdir is not None and spec.save_snapshots:
        dynamics.state_to_csv(final, outdir / f"snapshot_n{n}_t{trial}.csv")
    return TrialResult(
        n=n, trial=trial, radius=diagnostics.radius(final),
        converged=outcome.converged, steps=outcome.steps, wall_ms=wall,
        final_energy=dynamics.energy(final, kernel), stalled=outcome.stalled)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run the full sweep and persist tables when spec.outputs is set.

    A diverging trial is recorded as failed (radius nan) without aborting
    the sweep. Results are sorted by (n, trial) before persistence, so the
    output is independent of scheduling.
    """
    kernel = spec.kernel()
    outdir: Optional[Path] = None
    if spec.outputs is not None:
        outdir = Path(spec.outputs)
        outdir.mkdir(parents=True, exist_ok=True)

    cells = [(n, t) for n in spec.n_values for t in range(spec.trials_per_n)]
    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            trials = list(pool.map(
                lambda c: _run_one(spec, kernel, c[0], c[1], outdir), cells))
    else:
        trials = [_run_one(spec, kernel, n, t, outdir) for n, t in cells]
    trials.sort(key=lambda t: (t.n, t.trial))

    regression = None
    if spec.regression:
        regression = _regression_block(trials)
    result = ExperimentResult(spec=spec, trials=trials,
                              per_n=summarize_trials(trials),
                              regression=regression)
    if outdir is not None:
        write_radii_csv(result.trials, outdir / "radii.csv")
        with open(outdir / "summary.json", "w") as fh:
            json.dump(summary_json(result), fh, indent=2)
            fh.write("\n")
    return result


def summary_json(result: ExperimentResult) -> dict:
    doc = {
        "config": result.spec.to_config(),
        "per_n": {str(n): stats for n, stats in result.per_n.items()},
        "failed_trials": [asdict(t) for t in result.trials if t.error is not None],
    }
    if result.regression is not None:
        doc["regression"] = result.regression.to_json()
    return doc


# ---------------------------------------------------------------------------
# radii.csv round-trip
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_radii_csv(trials: Sequence[TrialResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "trial", "radius", "converged", "steps", "wall_ms"])
        for t in trials:
            writer.writerow([t.n, t.trial, _fmt(t.radius),
                             "true" if t.converged else "false",
                             t.steps, _fmt(t.wall_ms)])


def read_radii_csv(path) -> List[TrialResult]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(TrialResult(
                n=int(row["n"]), trial=int(row["trial"]),
                radius=float(row["radius"]),
                converged=row["converged"] == "true",
                steps=int(row["steps"]), wall_ms=float(row["wall_ms"])))
    return out
