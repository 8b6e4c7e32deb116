"""
Paths of distributions through a base distribution.

A Submodel is a density callback t -> Distribution on (-t_range, t_range)
passing through its base at t = 0. This module constructs linear tilts,
checks differentiability in quadratic mean against a candidate score,
recovers scores numerically, differentiates expectations along paths and
compares two paths through the Hellinger distance.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from model_core import (
    CheckEntry,
    Distribution,
    ModelError,
    NumericalError,
    NumericConfig,
    ScoreFunction,
    center,
    expectation,
    fit_steps,
    hellinger,
    l2_norm,
    loglog_slope,
    richardson_derivative,
    sqrt_density_gap,
    values_of,
    _check_space,
)

logger = logging.getLogger(__name__)

# Default probe grid for decay and gap checks, scaled down for narrow paths
DEFAULT_T_GRID = (1e-2, 1e-3, 1e-4)

VERDICT_SCORE = "score"
VERDICT_NOT_SCORE = "not the score"
VERDICT_INCONCLUSIVE = "inconclusive"


class Submodel:
    """A path t -> P_t through base, valid for |t| < t_range."""

    def __init__(self, base, density_fn, t_range, declared_score=None, name="submodel", config=None):
        if not t_range > 0:
            raise ModelError(f"Submodel t_range must be positive, got {t_range}")
        if declared_score is not None:
            _check_space(base.space, declared_score.space)
        self._base = base
        self._density_fn = density_fn
        self._t_range = float(t_range)
        self._config = config
        self._declared_score = declared_score
        self.name = name

    @property
    def base(self):
        return self._base

    @property
    def t_range(self):
        return self._t_range

    @property
    def declared_score(self):
        return self._declared_score

    def density_at(self, t):
        """Return P_t; the base object itself at t = 0."""
        t = float(t)
        if t == 0.0:
            return self._base
        if not abs(t) < self._t_range:
            raise ModelError(f"t={t} lies outside the range (-{self._t_range}, {self._t_range}) of {self.name}")
        out = self._density_fn(t)
        if isinstance(out, Distribution):
            _check_space(self._base.space, out.space)
            return out
        return Distribution(self._base.space, out, self._config)

    def __repr__(self):
        return f"Submodel({self.name!r}, t_range={self._t_range})"


def linear_tilt(p0, g, config=None, name="linear tilt"):
    """The path p_t = p0 (1 + t g), valid for |t| < 1 / sup|g|.

    Args:
        p0: Full-support base Distribution
        g: Mean-zero direction (ScoreFunction, RealFunction or array)

    Raises:
        ModelError: If p0 lacks full support or g is not mean zero
    """
    config = config or NumericConfig()
    if not p0.full_support:
        raise ModelError("Linear tilts need a full-support base distribution")
    gv = values_of(p0.space, g)
    mean = float(np.dot(gv, p0.mass))
    if abs(mean) > config.mean_tol:
        raise ModelError(f"Tilt direction has mean {mean:.3e} under the base, expected 0")
    # exact recentring keeps every P_t normalized to rounding level
    gv = gv - mean
    sup = float(np.max(np.abs(gv)))
    t_range = math.inf if sup == 0.0 else 1.0 / sup
    p = p0.p

    def density(t):
        if sup == 0.0:
            return p0
        return p * (1.0 + t * gv)

    return Submodel(p0, density, t_range, declared_score=ScoreFunction(p0, gv, config), name=name, config=config)


def centered_indicator_directions(p0, config=None):
    """Directions g_k = 1{z = z_k} / (p0(z_k) nu(z_k)) - 1, one per atom."""
    if not p0.full_support:
        raise ModelError("Indicator directions need a full-support base distribution")
    mass = p0.mass
    out = []
    for k in range(p0.space.size):
        g = -np.ones(p0.space.size)
        g[k] += 1.0 / mass[k]
        out.append(ScoreFunction(p0, g, config))
    return out


def qmd_residual(sub, s, t):
    """Sum over atoms of nu ((sqrt p_t - sqrt p0) / t - s sqrt(p0) / 2)^2."""
    t = float(t)
    if t == 0.0 or not abs(t) < sub.t_range:
        raise ModelError(f"QMD residual needs 0 < |t| < {sub.t_range}, got t={t}")
    base = sub.base
    sv = values_of(base.space, s)
    gap = sqrt_density_gap(sub.density_at(t), base)
    integrand = gap / t - 0.5 * sv * np.sqrt(base.p)
    return float(np.sum(integrand * integrand * base.space.nu))


@dataclass
class QMDReport:
    t_grid: tuple
    residuals: tuple
    slope: float
    passed: bool
    verdict: str
    slope_min: float
    res_max: float

    def to_checks(self):
        return [
            CheckEntry("qmd.slope", self.slope, self.slope_min, self.slope >= self.slope_min,
                       note=self.verdict),
            CheckEntry("qmd.residual_smallest_t", self.residuals[-1], self.res_max,
                       self.residuals[-1] <= self.res_max),
        ]


def default_t_grid(t_range, grid=DEFAULT_T_GRID):
    """Scale the default probe grid so its largest point sits inside t_range."""
    if grid[0] < 0.5 * t_range:
        return tuple(grid)
    scale = 0.5 * t_range / grid[0]
    return tuple(t * scale for t in grid)


def qmd_grid(sub, s, config):
    """Three-point grid for a QMD check of sub against s.

    The largest point keeps t * sup|s| <= 0.1, inside the quadratic regime.
    The residual measured there fixes the smallest point: with r(t) ~ t^2 it
    lands a tenth under res_max, and never more than two decades below the top.
    """
    score_sup = float(np.max(np.abs(values_of(sub.base.space, s))))
    top = min(DEFAULT_T_GRID[0], 0.5 * sub.t_range)
    if score_sup > 0:
        top = min(top, 0.1 / score_sup)
    ratio = 1e-2
    r_top = qmd_residual(sub, s, top)
    if r_top > 0:
        ratio = min(ratio, math.sqrt(config.res_max / (10.0 * r_top)))
    bottom = top * ratio
    return (top, math.sqrt(top * bottom), bottom)


def _validate_grid(t_grid, t_range, minimum=1):
    t_grid = tuple(float(t) for t in t_grid)
    if len(t_grid) < minimum:
        raise ModelError(f"t grid needs at least {minimum} points, got {len(t_grid)}")
    if any(t <= 0 for t in t_grid):
        raise ModelError("t grid values must be positive")
    if any(a <= b for a, b in zip(t_grid, t_grid[1:])):
        raise ModelError("t grid must be strictly decreasing")
    if not t_grid[0] < t_range:
        raise ModelError(f"t grid point {t_grid[0]} exits the path range {t_range}")
    return t_grid


def verify_qmd(sub, s, t_grid=None, config=None):
    """Check the QMD residual of sub against s decays quadratically.

    A plateau (slope below config.plateau_slope) is reported as "not the
    score"; it is a finding, not an error.
    """
    config = config or NumericConfig()
    if t_grid is None:
        t_grid = qmd_grid(sub, s, config)
    t_grid = _validate_grid(t_grid, sub.t_range, minimum=3)
    residuals = tuple(qmd_residual(sub, s, t) for t in t_grid)

    if all(r == 0.0 for r in residuals):
        slope = math.inf
    else:
        slope = loglog_slope(t_grid, residuals)
        if math.isnan(slope):
            slope = math.inf if residuals[-1] == 0.0 else 0.0

    passed = slope >= config.slope_min and residuals[-1] <= config.res_max
    if passed:
        verdict = VERDICT_SCORE
    elif slope < config.plateau_slope:
        verdict = VERDICT_NOT_SCORE
    else:
        verdict = VERDICT_INCONCLUSIVE
    logger.debug("QMD check on %s: slope %.4f, residual %.3e (%s)", sub.name, slope, residuals[-1], verdict)
    return QMDReport(t_grid, residuals, slope, passed, verdict, config.slope_min, config.res_max)


def recover_score(sub, t_grid=None, config=None):
    """Differentiate p_t / p0 at t = 0 and center the result.

    Raises:
        ModelError: If the base or any probed p_t lacks full support
    """
    config = config or NumericConfig()
    base = sub.base
    if not base.full_support:
        raise ModelError("Score recovery needs a full-support base distribution")
    steps = fit_steps(t_grid or config.fd_steps, sub.t_range)

    def ratio(t):
        pt = sub.density_at(t).p
        if np.any(pt <= 0):
            raise ModelError(f"{sub.name} loses support at t={t}")
        return pt / base.p

    value, err = richardson_derivative(ratio, steps)
    logger.debug("Recovered score of %s (extrapolation spread %.2e)", sub.name, err)
    return center(base, value)


def resolve_score(sub, config=None):
    """The declared score of sub, or a recovered one when none was declared."""
    if sub.declared_score is not None:
        return sub.declared_score
    try:
        return recover_score(sub, config=config)
    except (ModelError, NumericalError) as exc:
        raise NumericalError(
            f"No score available for {sub.name}. Please check that:\n"
            "1. The path declares its score, or\n"
            "2. The path keeps full support near t = 0\n"
            f"Underlying problem: {exc}"
        ) from exc


def ddt_expectation_fixed(sub, f, config=None):
    """d/dt E_{P_t}[f] at t = 0; equals E0[f s] for the path's score s."""
    config = config or NumericConfig()
    fv = values_of(sub.base.space, f)
    score = resolve_score(sub, config)
    steps = fit_steps(config.fd_steps, sub.t_range)
    value, _ = richardson_derivative(lambda t: expectation(sub.density_at(t), fv), steps)
    logger.debug("d/dt E[f] along %s: %.10g (E0[f s] = %.10g)", sub.name, value,
                 float(np.dot(fv * score.values, sub.base.mass)))
    return value


def _family_at(f_family, t, space):
    try:
        return values_of(space, f_family(t))
    except ModelError:
        raise
    except Exception as exc:
        raise ModelError(f"Function family is not defined at t={t}: {exc}") from exc


def ddt_expectation_varying(sub, f_family, config=None):
    """d/dt E_{P_t}[f_t] at t = 0 for a family t -> f_t."""
    config = config or NumericConfig()
    space = sub.base.space
    steps = fit_steps(config.fd_steps, sub.t_range)
    value, _ = richardson_derivative(
        lambda t: expectation(sub.density_at(t), _family_at(f_family, t, space)), steps)
    return value


def varying_decomposition(sub, f_family, config=None):
    """The two terms E0[f0 s] and E0[f_dot] whose sum the varying derivative equals."""
    config = config or NumericConfig()
    space = sub.base.space
    score = resolve_score(sub, config)
    f0 = _family_at(f_family, 0.0, space)
    steps = fit_steps(config.fd_steps, sub.t_range)
    f_dot, _ = richardson_derivative(lambda t: _family_at(f_family, t, space), steps)
    base = sub.base
    return float(np.dot(f0 * score.values, base.mass)), float(np.dot(f_dot, base.mass))


@dataclass
class HellingerGapReport:
    t_grid: tuple
    ratios: tuple
    limit_bound: float
    threshold: float
    passed: bool

    def to_checks(self):
        return [CheckEntry("hellinger_gap.ratio_smallest_t", self.ratios[-1], self.threshold, self.passed,
                           note=f"limit bound {self.limit_bound:.6g}")]


def hellinger_gap_check(sub_s, sub_g, t_grid=None, config=None):
    """Compare H(P_{t,s}, P_{t,g}) / t with ||s - g|| / (2 sqrt 2)."""
    config = config or NumericConfig()
    base = sub_s.base
    _check_space(base.space, sub_g.base.space)
    if not np.allclose(base.p, sub_g.base.p, rtol=0.0, atol=config.norm_tol):
        raise ModelError("Both submodels must pass through the same base distribution")
    t_range = min(sub_s.t_range, sub_g.t_range)
    if t_grid is None:
        t_grid = default_t_grid(t_range)
    t_grid = _validate_grid(t_grid, t_range)

    s = resolve_score(sub_s, config)
    g = resolve_score(sub_g, config)
    limit_bound = l2_norm(base, s.values - g.values) / (2.0 * math.sqrt(2.0))
    threshold = limit_bound * (1.0 + config.gap_slack)
    ratios = tuple(hellinger(sub_s.density_at(t), sub_g.density_at(t)) / t for t in t_grid)
    passed = ratios[-1] <= threshold
    logger.debug("Hellinger gap: ratio %.6g against bound %.6g", ratios[-1], limit_bound)
    return HellingerGapReport(t_grid, ratios, limit_bound, threshold, passed)


def tilt_score_rank(p0, config=None):
    """Rank of the recovered scores of all indicator tilts; K - 1 when saturated."""
    config = config or NumericConfig()
    weights = np.sqrt(p0.mass)
    rows = []
    for k, g in enumerate(centered_indicator_directions(p0, config)):
        score = recover_score(linear_tilt(p0, g, config, name=f"indicator tilt {k}"), config=config)
        rows.append(score.values * weights)
    matrix = np.vstack(rows)
    singular = np.linalg.svd(matrix, compute_uv=False)
    return int(np.linalg.matrix_rank(matrix, tol=1e-8 * singular[0]))


def random_tilt_directions(p0, n, seed, sup=1.0):
    """n mean-zero directions with sup-norm sup, one SeedSequence child each."""
    directions = []
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        g = rng.uniform(-1.0, 1.0, p0.space.size)
        g = g - np.dot(g, p0.mass)
        peak = float(np.max(np.abs(g)))
        if peak == 0.0:
            g = np.zeros_like(g)
        else:
            g = g * (sup / peak)
        directions.append(center(p0, g))
    return directions
