"""
Target and nuisance functionals on finite distributions.

Pathwise derivatives along submodels, efficient influence functions from
indicator tilts, the nuisance tangent basis (orthocomplement of the EIF among
mean-zero functions), L2(P0) projections and a Monte Carlo probe of the
Hellinger-Lipschitz constant of a functional.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from model_core import (
    CheckEntry,
    Distribution,
    ModelError,
    NumericalError,
    NumericConfig,
    RealFunction,
    ScoreFunction,
    center,
    expectation,
    fit_steps,
    hellinger,
    inner_product,
    l2_norm,
    richardson_derivative,
    values_of,
)
from submodel import centered_indicator_directions, linear_tilt

logger = logging.getLogger(__name__)

# Resampling budget for one probe distribution before the pair is skipped
MAX_PROBE_ATTEMPTS = 50

# Below this L2 norm an influence function is treated as zero
ZERO_EIF_NORM = 1e-8


class ScalarFunctional:
    """A map from Distribution to a real number."""

    def __init__(self, evaluate, name="beta"):
        self._evaluate = evaluate
        self.name = name

    def __call__(self, dist):
        return float(self._evaluate(dist))

    def __repr__(self):
        return f"ScalarFunctional({self.name!r})"


class NuisanceFunctional:
    """A map from Distribution to a labelled real vector of fixed dimension."""

    def __init__(self, evaluate, labels, name="eta"):
        self._evaluate = evaluate
        self.labels = tuple(labels)
        self.name = name

    @property
    def dim(self):
        return len(self.labels)

    def __call__(self, dist):
        value = np.asarray(self._evaluate(dist), dtype=float).reshape(-1)
        if value.size != self.dim:
            raise ModelError(f"{self.name} returned {value.size} coordinates, expected {self.dim}")
        if not np.all(np.isfinite(value)):
            raise ModelError(f"{self.name} returned non-finite coordinates")
        return value

    @staticmethod
    def norm(vector):
        vector = np.asarray(vector, dtype=float)
        return float(np.max(np.abs(vector))) if vector.size else 0.0

    def __repr__(self):
        return f"NuisanceFunctional({self.name!r}, dim={self.dim})"


class InfluenceCandidate(ScoreFunction):
    """A mean-zero function proposed as influence function of a functional."""

    def __init__(self, base, values, functional_name="beta", config=None):
        super().__init__(base, values, config)
        self.functional_name = functional_name


def mean_functional(f, name="E[f]"):
    """beta(P) = E_P[f] for a fixed function f.

    Args:
        f: RealFunction or array of per-atom values
        name: Label used in reports

    Returns:
        ScalarFunctional
    """
    return ScalarFunctional(lambda dist: expectation(dist, f), name)


def squared_density_functional():
    """beta(P) = sum p^2 nu."""
    return ScalarFunctional(lambda dist: float(np.sum(dist.p * dist.p * dist.space.nu)), "sum p^2 nu")


def constant_functional(value=0.0):
    """A functional that ignores P; its influence function is zero."""
    return ScalarFunctional(lambda dist: value, f"constant {value}")


def _evaluate_along(beta, sub, t):
    dist = sub.density_at(t)
    try:
        value = beta(dist)
    except (ModelError, NumericalError):
        raise
    except Exception as exc:
        raise NumericalError(f"{beta.name} failed to evaluate at t={t} along {sub.name}: {exc}") from exc
    if not math.isfinite(value):
        raise NumericalError(f"{beta.name} is not finite at t={t} along {sub.name}")
    return value


def pathwise_derivative(beta, sub, config=None, steps=None):
    """d/dt beta(P_t) at t = 0 by Richardson-extrapolated central differences."""
    config = config or NumericConfig()
    steps = steps or fit_steps(config.fd_steps, sub.t_range)
    value, err = richardson_derivative(lambda t: _evaluate_along(beta, sub, t), steps)
    logger.debug("d/dt %s along %s: %.12g (spread %.1e)", beta.name, sub.name, value, err)
    return value


def indicator_scores(base, config=None):
    """Centered indicator directions; they span the mean-zero functions."""
    return centered_indicator_directions(base, config)


def indicator_gradient(beta, base, config=None, scale=1.0):
    """Pathwise derivatives of beta along every indicator tilt.

    Along the tilt with direction g_k the derivative is E0[phi g_k] = phi(z_k),
    so the vector of derivatives is the influence function itself.
    """
    config = config or NumericConfig()
    grad = np.empty(base.space.size)
    for k, g in enumerate(indicator_scores(base, config)):
        sub = linear_tilt(base, g, config, name=f"indicator tilt {k}")
        steps = tuple(h * scale for h in fit_steps(config.fd_steps, sub.t_range))
        grad[k] = pathwise_derivative(beta, sub, config, steps=steps)
    return grad


def compute_eif(beta, base, config=None):
    """Efficient influence function of beta at base.

    Raises:
        ModelError: If base lacks full support
        NumericalError: If the gradient moves under step halving
    """
    config = config or NumericConfig()
    if not base.full_support:
        raise ModelError("The efficient influence function needs a full-support base")
    coarse = indicator_gradient(beta, base, config, scale=1.0)
    fine = indicator_gradient(beta, base, config, scale=0.5)
    spread = float(np.max(np.abs(coarse - fine)))
    allowed = config.eif_consistency_tol * max(1.0, float(np.max(np.abs(fine))))
    if spread > allowed:
        raise NumericalError(
            f"{beta.name} does not look differentiable at the base distribution:\n"
            f"finite differences move by {spread:.3e} under step halving (allowed {allowed:.1e}).\n"
            "Please check that the functional is smooth near the base distribution."
        )
    phi = center(base, fine)
    logger.debug("EIF of %s computed (step spread %.2e)", beta.name, spread)
    return InfluenceCandidate(base, phi.values, functional_name=beta.name, config=config)


def efficiency_bound(phi):
    """E0[phi^2] under the candidate's base distribution."""
    return inner_product(phi.base, phi, phi)


@dataclass
class InfluenceEntry:
    label: str
    derivative: float
    predicted: float
    tolerance: float
    passed: bool


@dataclass
class InfluenceReport:
    functional: str
    entries: list = field(default_factory=list)

    @property
    def passed(self):
        return all(entry.passed for entry in self.entries)

    @property
    def max_error(self):
        return max((abs(e.derivative - e.predicted) for e in self.entries), default=0.0)

    def to_checks(self):
        return [CheckEntry(f"influence.{e.label}", abs(e.derivative - e.predicted), e.tolerance, e.passed,
                           note=f"d/dt beta = {e.derivative:.10g}, E0[phi s] = {e.predicted:.10g}")
                for e in self.entries]


def verify_influence(beta, phi, score_set, config=None, callback=None, labels=None):
    """Compare d/dt beta along linear tilts with E0[phi s] for every score.

    Args:
        beta: ScalarFunctional
        phi: Candidate influence function (mean zero under its base)
        score_set: Mean-zero directions to tilt along
        callback: Optional callback(percent, message) for progress updates
        labels: Optional names for the scores

    Returns:
        InfluenceReport; mismatches are entries, never exceptions
    """
    config = config or NumericConfig()
    base = phi.base
    score_set = list(score_set)
    report = InfluenceReport(beta.name)
    for i, s in enumerate(score_set):
        label = labels[i] if labels else f"s{i}"
        sub = linear_tilt(base, s, config, name=f"tilt {label}")
        derivative = pathwise_derivative(beta, sub, config)
        predicted = inner_product(base, phi, s)
        tolerance = config.derivative_tolerance(predicted)
        passed = abs(derivative - predicted) <= tolerance
        report.entries.append(InfluenceEntry(label, derivative, predicted, tolerance, passed))
        if not passed:
            logger.info("Influence mismatch on %s: %.10g vs %.10g", label, derivative, predicted)
        if callback and score_set:
            callback(int(100 * (i + 1) / len(score_set)), f"Verified score {i + 1}/{len(score_set)}")
    return report


def nuisance_tangent_basis(beta, base, phi=None, config=None):
    """Orthonormal basis of the mean-zero functions orthogonal to the EIF.

    In L2(P0) coordinates (f -> f sqrt(p0 nu)) the constants map to
    sqrt(p0 nu), so the basis is the null space of that vector and of the
    weighted EIF.
    """
    if phi is None:
        phi = compute_eif(beta, base, config)
    weights = np.sqrt(base.mass)
    rows = [weights]
    if l2_norm(base, phi) > ZERO_EIF_NORM:
        rows.append(values_of(base.space, phi) * weights)
    null = linalg.null_space(np.vstack(rows))
    return [ScoreFunction(base, null[:, j] / weights, config) for j in range(null.shape[1])]


def project_onto(base, f, basis):
    """L2(P0)-orthogonal projection of f onto the span of basis.

    Raises:
        NumericalError: If the basis is rank deficient
    """
    fv = values_of(base.space, f)
    if not basis:
        return RealFunction(base.space, np.zeros_like(fv))
    weights = np.sqrt(base.mass)
    raw = np.column_stack([values_of(base.space, b) for b in basis])
    weighted = raw * weights[:, None]
    rank = np.linalg.matrix_rank(weighted)
    if rank < weighted.shape[1]:
        raise NumericalError(
            f"Projection basis is rank deficient (rank {rank} for {weighted.shape[1]} vectors)"
        )
    coef, _, _, _ = linalg.lstsq(weighted, fv * weights)
    return RealFunction(base.space, raw @ coef)


@dataclass
class LipschitzProbeReport:
    functional: str
    radius: float
    ratios: tuple
    max_ratio: float
    n_skipped: int
    n_rejected: int
    bound: float = None

    @property
    def passed(self):
        """None when no bound was supplied (report-only run)."""
        if self.bound is None:
            return None
        return self.max_ratio <= self.bound

    def to_checks(self):
        if self.bound is None:
            return [CheckEntry("lipschitz.max_ratio", self.max_ratio, math.inf, True, note="report only")]
        return [CheckEntry("lipschitz.max_ratio", self.max_ratio, self.bound, self.passed,
                           note=f"{len(self.ratios)} pairs, {self.n_skipped} skipped")]


def _random_neighbor(base, radius, rng, admissible, counters):
    size = base.space.size
    t_max = min(0.9, 2.0 * math.sqrt(2.0) * radius)
    for _ in range(MAX_PROBE_ATTEMPTS):
        g = rng.uniform(-1.0, 1.0, size)
        g = g - np.dot(g, base.mass)
        sup = float(np.max(np.abs(g)))
        if sup == 0.0:
            continue
        t = rng.uniform(-t_max, t_max)
        candidate = Distribution(base.space, base.p * (1.0 + t * g / sup))
        if not candidate.full_support or hellinger(base, candidate) > radius:
            counters["rejected"] += 1
            continue
        if admissible is not None and not admissible(candidate):
            counters["rejected"] += 1
            continue
        return candidate
    return None


def hellinger_lipschitz_probe(beta, base, n_pairs, radius, seed, bound=None, admissible=None,
                              callback=None):
    """Largest |beta(P1) - beta(P2)| / H(P1, P2) over random pairs near base.

    Each pair draws from its own child of SeedSequence(seed), so the result
    does not depend on evaluation order.

    Args:
        beta: ScalarFunctional
        base: Full-support Distribution
        n_pairs: Number of random pairs
        radius: Hellinger radius around base, must be positive
        seed: Integer seed
        bound: Optional Lipschitz constant to compare against
        admissible: Optional predicate restricting the model class
        callback: Optional callback(percent, message)
    """
    if not radius > 0:
        raise ModelError(f"Probe radius must be positive, got {radius}")
    counters = {"rejected": 0}
    ratios = []
    skipped = 0
    children = np.random.SeedSequence(seed).spawn(n_pairs)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        p1 = _random_neighbor(base, radius, rng, admissible, counters)
        p2 = _random_neighbor(base, radius, rng, admissible, counters)
        if p1 is None or p2 is None:
            skipped += 1
            continue
        distance = hellinger(p1, p2)
        if distance == 0.0:
            skipped += 1
            logger.warning("Probe pair %d coincides (H = 0); skipped", i)
            continue
        ratios.append(abs(beta(p1) - beta(p2)) / distance)
        if callback:
            callback(int(100 * (i + 1) / n_pairs), f"Probed pair {i + 1}/{n_pairs}")
    max_ratio = max(ratios) if ratios else 0.0
    return LipschitzProbeReport(beta.name, radius, tuple(ratios), max_ratio, skipped,
                                counters["rejected"], bound)
