"""Radial interaction kernels and their numerical certification.

A kernel is a radial potential given by its profile w(r) and slope w'(r).
All kernels here are repulsive-attractive: the slope is negative (repulsive)
inside a ball of radius ``r_attract`` and nonnegative (attractive) beyond it.

Three concrete families are provided:

* ``make_piecewise_log``    -- quintic core matched to log(r) outside r = 1
* ``make_piecewise_loglog`` -- cubic core matched to log(log(r)) outside r = e
* ``make_morse``            -- difference of exponentials with separate
                               attraction/repulsion strengths and ranges

``certify`` probes a kernel on a log-spaced grid and reports the quantities
that control confinement of the particle flow: the attraction onset radius,
the repulsion cap, the growth class of w'(r)*r at infinity, and the integral
of the kernel over the whole plane (when it exists).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace, asdict
from typing import Callable, Optional

import numpy as np
from numba import njit
from scipy import integrate, optimize

E = math.e

# dispatch codes for the jit-compiled evaluators
KIND_GENERIC = -1
KIND_PIECEWISE_LOG = 0
KIND_PIECEWISE_LOGLOG = 1
KIND_MORSE = 2

# growth classes reported by certify
SATISFIES = "satisfies"
BORDERLINE = "borderline"
FAILS = "fails"


# ---------------------------------------------------------------------------
# jit-compiled scalar evaluators (single source of truth for builtin kernels;
# the O(n^2) pair loops in dynamics call these same functions)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _value_one(kind, params, r):
    if kind == KIND_PIECEWISE_LOG:
        if r <= 1.0:
            # quintic: -83/6 r + 95/2 r^2 - 64 r^3 + 239/6 r^4 - 19/2 r^5
            return r * (-83.0 / 6.0 + r * (95.0 / 2.0 + r * (-64.0 + r * (239.0 / 6.0 + r * (-19.0 / 2.0)))))
        return math.log(r)
    if kind == KIND_PIECEWISE_LOGLOG:
        if r <= E:
            u = r - E
            # r u / e^2 - 2 r u^2 / e^3 + 19/6 r u^3 / e^4
            return r * u * (1.0 / E**2 + u * (-2.0 / E**3 + u * (19.0 / (6.0 * E**4))))
        return math.log(math.log(r))
    if kind == KIND_MORSE:
        c_a, l_a, c_r, l_r = params[0], params[1], params[2], params[3]
        return -c_a * math.exp(-r / l_a) + c_r * math.exp(-r / l_r)
    return math.nan


@njit(cache=True, inline="always")
def _slope_one(kind, params, r):
    if kind == KIND_PIECEWISE_LOG:
        if r <= 1.0:
            return -83.0 / 6.0 + r * (95.0 + r * (-192.0 + r * (478.0 / 3.0 + r * (-95.0 / 2.0))))
        return 1.0 / r
    if kind == KIND_PIECEWISE_LOGLOG:
        if r <= E:
            u = r - E
            return ((2.0 * r - E) / E**2
                    - 2.0 * (u * u + 2.0 * r * u) / E**3
                    + (19.0 / 6.0) * (u * u * u + 3.0 * r * u * u) / E**4)
        return 1.0 / (r * math.log(r))
    if kind == KIND_MORSE:
        c_a, l_a, c_r, l_r = params[0], params[1], params[2], params[3]
        return (c_a / l_a) * math.exp(-r / l_a) - (c_r / l_r) * math.exp(-r / l_r)
    return math.nan


@njit(cache=True)
def _value_arr(kind, params, r):
    out = np.empty_like(r)
    for i in range(r.size):
        out[i] = _value_one(kind, params, r[i])
    return out


@njit(cache=True)
def _slope_arr(kind, params, r):
    out = np.empty_like(r)
    for i in range(r.size):
        out[i] = _slope_one(kind, params, r[i])
    return out


# ---------------------------------------------------------------------------
# kernel objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialKernel:
    """Radial potential profile w(r) with slope w'(r) and metadata.

    Attributes
    ----------
    name : str
        Identifier used in configs and reports.
    kind : int
        Dispatch code for the jit evaluators; ``KIND_GENERIC`` for kernels
        backed by plain Python callables.
    params : np.ndarray
        Parameter block consumed by the jit evaluators (empty for the
        piecewise kernels, ``[C_A, l_A, C_R, l_R]`` for Morse).
    r_attract : float
        Radius beyond which the slope is nonnegative (0 when the kernel is
        attractive everywhere, ``inf`` when it never turns attractive).
    domain_floor : float
        Smallest radius at which evaluation is defined (0 for kernels smooth
        at the origin).
    branch_radius : float or None
        Boundary between analytic branches for piecewise kernels, None for
        single-branch kernels.
    """

    name: str
    kind: int
    params: np.ndarray
    r_attract: float
    domain_floor: float = 0.0
    branch_radius: Optional[float] = None
    value_fn: Optional[Callable] = None
    slope_fn: Optional[Callable] = None

    def value(self, r):
        """Evaluate w(r); accepts a scalar or an array."""
        if self.kind == KIND_GENERIC:
            return self.value_fn(r)
        arr = np.asarray(r, dtype=np.float64)
        out = _value_arr(self.kind, self.params, arr.ravel()).reshape(arr.shape)
        return float(out) if np.isscalar(r) or arr.ndim == 0 else out

    def slope(self, r):
        """Evaluate w'(r); accepts a scalar or an array."""
        if self.kind == KIND_GENERIC:
            return self.slope_fn(r)
        arr = np.asarray(r, dtype=np.float64)
        out = _slope_arr(self.kind, self.params, arr.ravel()).reshape(arr.shape)
        return float(out) if np.isscalar(r) or arr.ndim == 0 else out

    @classmethod
    def from_callables(cls, name, value, slope, r_attract, domain_floor=0.0,
                       branch_radius=None):
        """Build a kernel from plain Python callables.

        Callable-backed kernels use the vectorized numpy fallback in the
        dynamics module instead of the jit pair loops.
        """
        return cls(name=name, kind=KIND_GENERIC, params=np.empty(0),
                   r_attract=r_attract, domain_floor=domain_floor,
                   branch_radius=branch_radius, value_fn=value, slope_fn=slope)


def _refine_attract_radius(slope, lo, hi):
    """Bisect slope on [lo, hi] (sign change bracketed) to ~1e-13."""
    return optimize.bisect(slope, lo, hi, xtol=1e-13, maxiter=200)


def _last_sign_change(slope_vals, grid_r, slope):
    """Largest radius where the sampled slope crosses from < 0 to >= 0.

    Returns 0.0 when the slope never goes negative, inf when it is still
    negative at the last grid point.
    """
    neg = slope_vals < 0.0
    if not neg.any():
        return 0.0
    if neg[-1]:
        return math.inf
    last_neg = np.flatnonzero(neg)[-1]
    return _refine_attract_radius(slope, grid_r[last_neg], grid_r[last_neg + 1])


def make_piecewise_log() -> RadialKernel:
    """Kernel with a quintic repulsive core on [0, 1] and log(r) outside.

    w(0) = w(1) = 0, and value/slope are continuous across r = 1 where the
    slope equals 1 on both branches.
    """
    k = RadialKernel(name="piecewise_log", kind=KIND_PIECEWISE_LOG,
                     params=np.empty(0), r_attract=0.0, branch_radius=1.0)
    grid = np.linspace(1e-9, 1.0, 4097)
    r_a = _last_sign_change(k.slope(grid), grid, k.slope)
    return replace(k, r_attract=r_a)


def make_piecewise_loglog() -> RadialKernel:
    """Kernel with a cubic core on [0, e] and log(log(r)) outside.

    w(0) = w(e) = 0; the slope at the branch point is 1/e on both sides.
    """
    k = RadialKernel(name="piecewise_loglog", kind=KIND_PIECEWISE_LOGLOG,
                     params=np.empty(0), r_attract=0.0, branch_radius=E)
    grid = np.linspace(1e-9, E, 4097)
    r_a = _last_sign_change(k.slope(grid), grid, k.slope)
    return replace(k, r_attract=r_a)


def make_morse(c_attract: float, len_attract: float,
               c_repulse: float, len_repulse: float) -> RadialKernel:
    """Morse kernel -C_A exp(-r/l_A) + C_R exp(-r/l_R).

    All four parameters must be positive. The attraction onset radius is
    solved numerically when the slope at the origin is negative
    (C_R/l_R > C_A/l_A) and is 0 otherwise.
    """
    if min(c_attract, len_attract, c_repulse, len_repulse) <= 0:
        raise ValueError("Morse parameters must all be positive")
    params = np.array([c_attract, len_attract, c_repulse, len_repulse])
    name = f"morse(C_A={c_attract:g},l_A={len_attract:g},C_R={c_repulse:g},l_R={len_repulse:g})"
    k = RadialKernel(name=name, kind=KIND_MORSE, params=params, r_attract=0.0)
    if c_repulse / len_repulse <= c_attract / len_attract:
        return k
    # slope < 0 at the origin; expand the bracket until attraction wins
    hi = max(len_attract, len_repulse)
    for _ in range(200):
        if k.slope(hi) > 0.0:
            break
        hi *= 2.0
    else:
        return replace(k, r_attract=math.inf)  # repulsion dominates the tail
    return replace(k, r_attract=_refine_attract_radius(k.slope, 1e-12, hi))


KERNEL_BUILDERS = {
    "piecewise_log": make_piecewise_log,
    "piecewise_loglog": make_piecewise_loglog,
    "morse": make_morse,
}


def kernel_from_config(name: str, params: dict | None = None) -> RadialKernel:
    """Build a kernel from its config name and a parameter map.

    Morse accepts parameters ``C_A``, ``l_A``, ``C_R``, ``l_R``; the
    piecewise kernels take none.
    """
    params = dict(params or {})
    if name == "morse":
        try:
            return make_morse(params.pop("C_A"), params.pop("l_A"),
                              params.pop("C_R"), params.pop("l_R"))
        except KeyError as exc:
            raise ValueError(f"morse kernel requires parameter {exc}") from exc
    if name in KERNEL_BUILDERS:
        if params:
            raise ValueError(f"kernel {name!r} takes no parameters, got {sorted(params)}")
        return KERNEL_BUILDERS[name]()
    raise ValueError(f"unknown kernel {name!r}; known: {sorted(KERNEL_BUILDERS)}")


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeGrid:
    """Log-spaced radii used to probe a kernel's slope."""

    r_min: float
    r_max: float
    n_points: int = 4096

    def __post_init__(self):
        if not (0.0 < self.r_min < self.r_max):
            raise ValueError("probe grid requires 0 < r_min < r_max")
        if self.n_points < 16:
            raise ValueError("probe grid too coarse")

    def points(self) -> np.ndarray:
        return np.geomspace(self.r_min, self.r_max, self.n_points)

    @staticmethod
    def default_for(kernel: RadialKernel, r_max: float | None = None) -> "ProbeGrid":
        scale = max(1.0, kernel.r_attract if math.isfinite(kernel.r_attract) else 1.0)
        if r_max is None:
            r_max = 1000.0 * scale
        r_min = max(kernel.domain_floor, 1e-6 * scale)
        if r_min <= 0.0:
            r_min = 1e-6 * scale
        return ProbeGrid(r_min=r_min, r_max=r_max)


@dataclass(frozen=True)
class KernelReport:
    """Numerical certificate for a kernel, produced by ``certify``.

    ``conf_class`` classifies the growth of w'(r)*r on the probe tail
    (controls confinement of the particle flow); ``w_conf_class`` does the
    same for the weaker weighting w'(r)*r^(1/dim). ``alpha_integral`` is the
    integral of the kernel over all of R^dim, or None when the tail is not
    integrable. ``r_k1`` is the attraction-dominance radius attached by
    ``theory.k1_radius``; None until computed or when it does not exist.
    """

    kernel_name: str
    dim: int
    r_attract_estimate: float
    c_w: float
    conf_class: str
    conf_limit: Optional[float]
    w_conf_class: str
    w_conf_limit: Optional[float]
    alpha_integral: Optional[float]
    probe_r_min: float
    probe_r_max: float
    probe_n_points: int
    r_k1: Optional[float] = None

    def probe(self) -> ProbeGrid:
        return ProbeGrid(self.probe_r_min, self.probe_r_max, self.probe_n_points)

    def to_json(self) -> dict:
        """Flat JSON object with all report fields."""
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, float) and math.isinf(val):
                out[key] = "inf"
        return out


def _classify_tail(r: np.ndarray, weighted: np.ndarray) -> tuple[str, Optional[float]]:
    """Classify the growth of a weighted slope on the last probe decade.

    Returns (class, limit): BORDERLINE carries the finite limit estimate,
    SATISFIES requires the tail to climb through the thresholds 10, 100,
    1000 across the decade, anything decaying/negative/zero FAILS.
    """
    tail = r >= r.max() / 10.0
    y = weighted[tail]
    if not np.all(np.isfinite(y)):
        return FAILS, None
    y_med = float(np.median(y))
    if y_med > 1e-12 and float(y.max() - y.min()) <= 0.01 * abs(y_med):
        return BORDERLINE, float(y[-1])
    mid = len(y) // 2
    if y[0] >= 10.0 and y[mid] >= 100.0 and y[-1] >= 1000.0:
        return SATISFIES, None
    return FAILS, None


def _repulsion_cap(kernel: RadialKernel, r_attract: float) -> float:
    """Max |slope| on the repulsion ball (0, r_attract]; 0 when r_attract = 0."""
    if r_attract == 0.0 or not math.isfinite(r_attract):
        return 0.0
    grid = np.geomspace(1e-8 * r_attract, r_attract, 100_000)
    cap = float(np.max(np.abs(kernel.slope(grid))))
    if kernel.domain_floor == 0.0:
        # include the slope limit at the origin when it evaluates cleanly
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                s0 = float(kernel.slope(0.0))
            except (ValueError, ZeroDivisionError, FloatingPointError):
                s0 = math.nan
        if math.isfinite(s0):
            cap = max(cap, abs(s0))
    return cap


def _sphere_surface(dim: int) -> float:
    """Surface area of the unit sphere in R^dim (2*pi for dim=2)."""
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


def _alpha_integral(kernel: RadialKernel, dim: int, r_max: float) -> Optional[float]:
    """Integral of the kernel over R^dim, or None when the tail does not decay."""
    w_far = abs(float(kernel.value(r_max)))
    w_mid = abs(float(kernel.value(r_max / 10.0)))
    if not (w_far < w_mid and w_far * r_max ** dim < 1e-8):
        return None
    split = max(kernel.branch_radius or 0.0, 1.0)
    if math.isfinite(kernel.r_attract):
        split = max(split, kernel.r_attract)

    def integrand(r):
        return float(kernel.value(r)) * r ** (dim - 1)

    lo = kernel.domain_floor
    inner, _ = integrate.quad(integrand, lo, split, epsabs=1e-12, epsrel=1e-12, limit=200)
    outer, _ = integrate.quad(integrand, split, math.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    return _sphere_surface(dim) * (inner + outer)


def certify(kernel: RadialKernel, probe: ProbeGrid | None = None, dim: int = 2) -> KernelReport:
    """Probe a kernel numerically and report its confinement-relevant facts.

    Parameters
    ----------
    kernel : RadialKernel
    probe : ProbeGrid, optional
        Radii to sample; defaults to a log grid reaching 1000x the
        attraction onset scale.
    dim : int
        Ambient dimension used for the root-weighted growth class and the
        whole-space integral.
    """
    if probe is None:
        probe = ProbeGrid.default_for(kernel)
    r = probe.points()
    s = kernel.slope(r)

    r_a = _last_sign_change(s, r, lambda x: float(kernel.slope(x)))
    c_w = _repulsion_cap(kernel, r_a)
    conf_class, conf_limit = _classify_tail(r, s * r)
    w_conf_class, w_conf_limit = _classify_tail(r, s * r ** (1.0 / dim))
    alpha = _alpha_integral(kernel, dim, probe.r_max)

    return KernelReport(
        kernel_name=kernel.name, dim=dim,
        r_attract_estimate=r_a, c_w=c_w,
        conf_class=conf_class, conf_limit=conf_limit,
        w_conf_class=w_conf_class, w_conf_limit=w_conf_limit,
        alpha_integral=alpha,
        probe_r_min=probe.r_min, probe_r_max=probe.r_max,
        probe_n_points=probe.n_points,
    )
