import json
import math

import numpy as np
import pytest

from aggsim import harness, potentials as pot
from aggsim.errors import DegenerateError, RejectionExhaustedError
from aggsim.integrators import StepperConfig


@pytest.fixture(scope="module")
def log_kernel():
    return pot.make_piecewise_log()


# ---------------------------------------------------------------------------
# per-trial RNG
# ---------------------------------------------------------------------------

def test_trial_rng_reproducible():
    a = harness.trial_rng(1234, 100, 3).uniform(size=8)
    b = harness.trial_rng(1234, 100, 3).uniform(size=8)
    np.testing.assert_array_equal(a, b)


def test_trial_rng_cells_independent():
    base = harness.trial_rng(1234, 100, 0).uniform(size=8)
    for n, t in [(100, 1), (200, 0), (100, 2)]:
        other = harness.trial_rng(1234, n, t).uniform(size=8)
        assert not np.array_equal(base, other)


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

def test_generate_initial_basic(log_kernel):
    rng = harness.trial_rng(7, 50, 0)
    s = harness.generate_initial(50, harness.InitSpec(side=3.0), rng)
    assert s.n == 50 and s.dim == 2
    np.testing.assert_allclose(s.masses, 1.0 / 50)
    # recentered, and inside the (shifted) square
    assert np.linalg.norm(s.masses @ s.positions) < 1e-14
    assert np.abs(s.positions).max() < 3.0


def test_generate_initial_single_particle(log_kernel):
    s = harness.generate_initial(1, harness.InitSpec(side=2.0), harness.trial_rng(0, 1, 0))
    np.testing.assert_allclose(s.positions, [[0.0, 0.0]], atol=1e-16)


def test_generate_initial_deterministic(log_kernel):
    spec = harness.InitSpec(side=3.0, seed=42)
    a = harness.generate_initial(20, spec, harness.trial_rng(42, 20, 1))
    b = harness.generate_initial(20, spec, harness.trial_rng(42, 20, 1))
    np.testing.assert_array_equal(a.positions, b.positions)


def test_generate_initial_uses_kernel_default_side(log_kernel):
    rng = harness.trial_rng(3, 30, 0)
    s = harness.generate_initial(30, harness.InitSpec(), rng, kernel=log_kernel)
    assert np.abs(s.positions).max() < 3.0  # side 3.0 for the log profile
    with pytest.raises(ValueError):
        harness.generate_initial(30, harness.InitSpec(), harness.trial_rng(3, 30, 0))


def test_min_far_pair_filter(log_kernel):
    # side 3 easily places a pair beyond the branch radius 1
    spec = harness.InitSpec(side=3.0, min_far_pair=True)
    s = harness.generate_initial(12, spec, harness.trial_rng(1, 12, 0), kernel=log_kernel)
    d = np.linalg.norm(s.positions[:, None, :] - s.positions[None, :, :], axis=2)
    assert d.max() > 1.0
    # a 0.1 square cannot, so rejection gives up
    tiny = harness.InitSpec(side=0.1, min_far_pair=True)
    with pytest.raises(RejectionExhaustedError):
        harness.generate_initial(5, tiny, harness.trial_rng(1, 5, 0), kernel=log_kernel)


def test_init_spec_validation():
    with pytest.raises(ValueError):
        harness.InitSpec(shape="ring")
    with pytest.raises(ValueError):
        harness.InitSpec(side=0.0)


def test_default_square_side_values(log_kernel):
    assert harness.default_square_side(log_kernel, 100) == 3.0
    loglog = pot.make_piecewise_loglog()
    assert harness.default_square_side(loglog, 100) == pytest.approx(2 * math.e)
    blob = pot.make_morse(1.0, 1.0, 1.3, 0.2)  # collapsing regime
    assert harness.default_square_side(blob, 100) == pytest.approx(4 * blob.r_attract)
    crystal = pot.make_morse(1.0, 1.0, 1.9, 0.8)  # crystal-forming regime
    assert harness.default_square_side(crystal, 100) == pytest.approx(4 * crystal.r_attract)
    # the dense-start rule is n-independent
    assert harness.default_square_side(crystal, 2000) == harness.default_square_side(crystal, 100)


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def test_regression_recovers_exact_line():
    ns = [50, 100, 200, 400, 800]
    pts = [(n, math.sqrt(170.34 + 1.99 * n)) for n in ns]
    slope, intercept, r2 = harness.regress_radius_squared(pts)
    assert slope == pytest.approx(1.99, rel=1e-12)
    assert intercept == pytest.approx(170.34, rel=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_regression_two_points():
    slope, intercept, r2 = harness.regress_radius_squared([(1, 1.0), (2, 2.0)])
    assert slope == pytest.approx(3.0)   # r^2 goes 1 -> 4
    assert intercept == pytest.approx(-2.0)
    assert r2 == pytest.approx(1.0)


def test_regression_degenerate_inputs():
    with pytest.raises(DegenerateError):
        harness.regress_radius_squared([(100, 1.0)])
    with pytest.raises(DegenerateError):
        harness.regress_radius_squared([(100, 1.0), (100, 1.1), (100, 0.9)])


# ---------------------------------------------------------------------------
# radii table round-trip
# ---------------------------------------------------------------------------

def test_radii_csv_round_trip(tmp_path):
    trials = [
        harness.TrialResult(n=100, trial=0, radius=0.2286453178,
                            converged=True, steps=2417, wall_ms=0.0),
        harness.TrialResult(n=100, trial=1, radius=float("nan"),
                            converged=False, steps=0, wall_ms=0.0),
    ]
    path = tmp_path / "radii.csv"
    harness.write_radii_csv(trials, path)
    assert path.read_text().splitlines()[0] == "n,trial,radius,converged,steps,wall_ms"
    back = harness.read_radii_csv(path)
    assert back[0].radius == trials[0].radius  # 17 digits: bit-exact
    assert back[0].converged and back[0].steps == 2417
    assert math.isnan(back[1].radius) and not back[1].converged


# ---------------------------------------------------------------------------
# experiment spec / config file
# ---------------------------------------------------------------------------

def test_spec_config_round_trip():
    spec = harness.ExperimentSpec(
        kernel_name="morse",
        kernel_params={"C_A": 1.0, "l_A": 1.0, "C_R": 1.3, "l_R": 0.2},
        n_values=(10, 20), trials_per_n=2,
        init=harness.InitSpec(side=1.5, seed=9),
        stepper=StepperConfig(method="rk4", dt0=0.05, max_steps=100),
        outputs="out", save_snapshots=True, regression=True,
        deterministic=False, threads=2)
    doc = spec.to_config()
    assert harness.ExperimentSpec.from_config(doc) == spec
    assert json.loads(json.dumps(doc)) == doc  # JSON-serializable as-is


def test_spec_config_rejects_bad_documents():
    with pytest.raises(ValueError):
        harness.ExperimentSpec.from_config({"n_values": [10]})  # no kernel
    with pytest.raises(ValueError):
        harness.ExperimentSpec.from_config(
            {"kernel": {"name": "piecewise_log"}})  # no n_values
    with pytest.raises(ValueError):
        harness.ExperimentSpec.from_config(
            {"kernel": {"name": "piecewise_log"}, "n_values": [10], "extra": 1})


def test_spec_validation():
    with pytest.raises(ValueError):
        harness.ExperimentSpec(kernel_name="piecewise_log", n_values=())
    with pytest.raises(ValueError):
        harness.ExperimentSpec(kernel_name="piecewise_log", n_values=(0,))
    with pytest.raises(ValueError):
        harness.ExperimentSpec(kernel_name="piecewise_log", n_values=(10,),
                               trials_per_n=0)


def test_load_config(tmp_path):
    doc = {"kernel": {"name": "piecewise_log", "params": {}}, "n_values": [4],
           "trials_per_n": 1, "stepper": {"max_steps": 50}}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    spec = harness.load_config(path)
    assert spec.kernel_name == "piecewise_log"
    assert spec.stepper.max_steps == 50
    assert spec.kernel().name == "piecewise_log"


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def test_summarize_trials_skips_failures():
    trials = [
        harness.TrialResult(n=10, trial=0, radius=1.0, converged=True,
                            steps=5, wall_ms=0.0),
        harness.TrialResult(n=10, trial=1, radius=3.0, converged=True,
                            steps=5, wall_ms=0.0),
        harness.TrialResult(n=10, trial=2, radius=float("nan"), converged=False,
                            steps=0, wall_ms=0.0, error="diverged"),
    ]
    per_n = harness.summarize_trials(trials)
    assert per_n[10]["trials"] == 3 and per_n[10]["converged"] == 2
    assert per_n[10]["mean_radius"] == pytest.approx(2.0)
    assert per_n[10]["max_radius"] == 3.0


# ---------------------------------------------------------------------------
# end-to-end sweeps (small, fast)
# ---------------------------------------------------------------------------

def small_sweep_spec(outdir, **overrides):
    base = dict(
        kernel_name="piecewise_log", n_values=(5, 8), trials_per_n=2,
        init=harness.InitSpec(side=1.5, seed=11),
        stepper=StepperConfig(dt0=0.1, max_steps=2000, record_every=200),
        outputs=str(outdir), save_snapshots=True, regression=True)
    base.update(overrides)
    return harness.ExperimentSpec(**base)


def test_small_sweep_outputs(tmp_path):
    spec = small_sweep_spec(tmp_path / "a")
    result = harness.run_experiment(spec)
    assert len(result.trials) == 4
    assert all(t.converged and t.error is None for t in result.trials)
    assert [(t.n, t.trial) for t in result.trials] == [(5, 0), (5, 1), (8, 0), (8, 1)]
    assert all(t.wall_ms == 0.0 for t in result.trials)  # deterministic mode

    outdir = tmp_path / "a"
    assert (outdir / "radii.csv").exists()
    lines = (outdir / "radii.csv").read_text().splitlines()
    assert len(lines) == 5
    for n, t in [(5, 0), (5, 1), (8, 0), (8, 1)]:
        assert (outdir / f"diag_n{n}_t{t}.csv").exists()
        assert (outdir / f"snapshot_n{n}_t{t}.csv").exists()

    summary = json.loads((outdir / "summary.json").read_text())
    assert set(summary["per_n"]) == {"5", "8"}
    assert summary["per_n"]["5"]["converged"] == 2
    assert summary["config"]["kernel"]["name"] == "piecewise_log"
    assert "regression" in summary and summary["failed_trials"] == []

    # regression block consumed the same four points
    assert result.regression is not None
    assert len(result.regression.points) == 4


def test_sweep_reruns_byte_identical(tmp_path):
    harness.run_experiment(small_sweep_spec(tmp_path / "x"))
    harness.run_experiment(small_sweep_spec(tmp_path / "y"))
    for name in ["radii.csv", "diag_n5_t0.csv", "diag_n8_t1.csv",
                 "snapshot_n8_t0.csv"]:
        assert (tmp_path / "x" / name).read_bytes() == \
            (tmp_path / "y" / name).read_bytes()


def test_sweep_threads_match_sequential(tmp_path):
    seq = harness.run_experiment(small_sweep_spec(tmp_path / "s", threads=1))
    par = harness.run_experiment(small_sweep_spec(tmp_path / "p", threads=2))
    assert seq.trials == par.trials


def test_sweep_survives_divergence(tmp_path):
    # repulsion-dominant Morse blob with an absurdly small radius cap: every
    # trial trips the cap and is recorded as failed instead of aborting
    spec = harness.ExperimentSpec(
        kernel_name="morse",
        kernel_params={"C_A": 1.0, "l_A": 1.0, "C_R": 1.3, "l_R": 0.2},
        n_values=(6,), trials_per_n=2,
        init=harness.InitSpec(side=1.8, seed=2),
        stepper=StepperConfig(dt0=0.05, max_steps=400, radius_cap=0.3),
        outputs=str(tmp_path))
    result = harness.run_experiment(spec)
    assert all(t.error == "diverged" for t in result.trials)
    assert harness.summarize_trials(result.trials)[6]["converged"] == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(summary["failed_trials"]) == 2
    back = harness.read_radii_csv(tmp_path / "radii.csv")
    assert all(math.isnan(t.radius) for t in back)


def test_sweep_seed_changes_radii(tmp_path):
    r1 = harness.run_experiment(small_sweep_spec(
        tmp_path / "m", init=harness.InitSpec(side=1.5, seed=1),
        n_values=(6,), trials_per_n=1, save_snapshots=False, regression=False))
    r2 = harness.run_experiment(small_sweep_spec(
        tmp_path / "n", init=harness.InitSpec(side=1.5, seed=2),
        n_values=(6,), trials_per_n=1, save_snapshots=False, regression=False))
    assert r1.trials[0].radius != r2.trials[0].radius
