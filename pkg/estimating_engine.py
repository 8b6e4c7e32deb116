"""
Estimating functions and the orthogonality / differentiability equivalence.

An estimating function m(z; beta, eta) is checked for correct specification
and Neyman orthogonality (Gateaux derivatives in eta under the fixed base
distribution). forward_verify turns an orthogonal, correctly specified m into
an influence function -m0 / G and verifies it; reverse_verify starts from an
influence function and uses coordinate submodels to show orthogonality and
the -1 normalization of the Jacobian.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from functional_calculus import (
    InfluenceCandidate,
    NuisanceFunctional,
    ScalarFunctional,
    indicator_scores,
    mean_functional,
    pathwise_derivative,
    squared_density_functional,
    verify_influence,
)
from model_core import (
    CheckEntry,
    Distribution,
    DimensionMismatchError,
    ModelError,
    NumericalError,
    NumericConfig,
    center,
    expectation,
    fit_steps,
    inner_product,
    l2_norm,
    loglog_slope,
    richardson_derivative,
    values_of,
)
from submodel import default_t_grid, linear_tilt, resolve_score, verify_qmd

logger = logging.getLogger(__name__)

# Correct-specification neighborhood: number of tilts and sup-norm of their coefficient
NEIGHBORHOOD_SIZE = 20
NEIGHBORHOOD_RADIUS = 0.1

# Maximum number of step halvings when looking for an admissible nuisance step
MAX_STEP_HALVINGS = 30

# Perturbation sizes for the Frechet remainder
FRECHET_DELTAS = (1e-2, 1e-3, 1e-4)


class SpecificationError(NumericalError):
    """Raised when an estimating function is not mean zero near the base."""


class DegenerateJacobianError(NumericalError):
    """Raised when d/dbeta E0[m] vanishes at the truth."""


class EstimatingFunction:
    """m(z; beta, eta) with a nuisance vector of dimension dim.

    Either a per-atom evaluate(atom, beta, eta) or a vectorized
    evaluate_all(space, beta, eta) returning one value per atom must be given.
    """

    def __init__(self, evaluate=None, dim=0, admissible=None, evaluate_all=None, name="m"):
        if evaluate is None and evaluate_all is None:
            raise ModelError("An estimating function needs evaluate or evaluate_all")
        self._evaluate = evaluate
        self._evaluate_all = evaluate_all
        self._admissible = admissible
        self.dim = int(dim)
        self.name = name

    def __call__(self, atom, beta, eta):
        if self._evaluate is None:
            raise ModelError(f"{self.name} is only defined through its vectorized form")
        return float(self._evaluate(atom, float(beta), np.asarray(eta, dtype=float)))

    def is_admissible(self, eta):
        eta = np.asarray(eta, dtype=float)
        if eta.size != self.dim or not np.all(np.isfinite(eta)):
            return False
        return True if self._admissible is None else bool(self._admissible(eta))

    def values(self, space, beta, eta):
        """Per-atom values m(z_k; beta, eta) as a read-only array."""
        eta = np.asarray(eta, dtype=float).reshape(-1)
        if eta.size != self.dim:
            raise DimensionMismatchError(f"{self.name} takes {self.dim} nuisance coordinates, got {eta.size}")
        if self._evaluate_all is not None:
            out = np.asarray(self._evaluate_all(space, float(beta), eta), dtype=float)
        else:
            out = np.array([self._evaluate(atom, float(beta), eta) for atom in space.atoms])
        if out.shape != (space.size,):
            raise DimensionMismatchError(f"{self.name} returned {out.size} values for {space.size} atoms")
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"{self.name} is not finite at beta={beta}")
        return out

    def shifted(self, offset, name=None):
        """m + offset, used to build deliberately misspecified functions."""
        return EstimatingFunction(
            evaluate_all=lambda space, beta, eta: self.values(space, beta, eta) + offset,
            dim=self.dim, admissible=self._admissible, name=name or f"{self.name} + {offset}",
        )

    def __repr__(self):
        return f"EstimatingFunction({self.name!r}, dim={self.dim})"


@dataclass(frozen=True)
class ParameterPair:
    beta0: float
    eta0: np.ndarray
    provenance: Distribution

    @classmethod
    def from_distribution(cls, beta, eta, dist, m=None):
        """Evaluate beta and eta at dist; m, when given, checks the nuisance dimension."""
        eta0 = eta(dist)
        if m is not None and not m.is_admissible(eta0):
            raise ModelError(f"Nuisance value at the base is not admissible for {m.name}")
        return cls(beta(dist), eta0, dist)


@dataclass
class EstimationProblem:
    """Everything the verifiers need about one model."""

    name: str
    base: Distribution
    beta: ScalarFunctional
    eta: NuisanceFunctional
    m: EstimatingFunction
    beta_coord: object = None
    eta_coords: dict = field(default_factory=dict)
    directions: dict = None

    def __post_init__(self):
        if self.directions is None:
            self.directions = canonical_directions(self.eta)

    def pair(self):
        return ParameterPair.from_distribution(self.beta, self.eta, self.base, self.m)


def canonical_directions(eta):
    """Unit vectors in each nuisance coordinate, keyed by label."""
    eye = np.eye(eta.dim)
    return {label: eye[j] for j, label in enumerate(eta.labels)}


def nuisance_path_derivative(eta, sub, config=None):
    """d/dt eta(P_t) at t = 0, one entry per nuisance coordinate."""
    config = config or NumericConfig()
    if eta.dim == 0:
        return np.zeros(0)
    steps = fit_steps(config.fd_steps, sub.t_range)
    value, _ = richardson_derivative(lambda t: eta(sub.density_at(t)), steps)
    return np.atleast_1d(value)


@dataclass
class SpecificationReport:
    residuals: list
    tolerance: float
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    @property
    def max_residual(self):
        return max(self.residuals, default=0.0)

    def to_checks(self):
        return [CheckEntry("specification.max_residual", self.max_residual, self.tolerance, self.passed,
                           note=f"{len(self.residuals)} distributions, {len(self.violations)} violations")]


def check_correct_specification(m, model_samples, config=None):
    """|E_P[m(.; beta(P), eta(P))]| for each (distribution, beta, eta) sample."""
    config = config or NumericConfig()
    residuals = []
    violations = []
    for i, (dist, beta_value, eta_value) in enumerate(model_samples):
        if not m.is_admissible(eta_value):
            raise ModelError(f"Sample {i}: nuisance value is not admissible for {m.name}")
        residual = abs(expectation(dist, m.values(dist.space, beta_value, eta_value)))
        residuals.append(residual)
        if residual > config.spec_tol:
            violations.append(i)
            logger.info("Specification residual %.3e on sample %d", residual, i)
    return SpecificationReport(residuals, config.spec_tol, violations)


def sample_neighborhood(base, beta, eta, m=None, n=NEIGHBORHOOD_SIZE, radius=NEIGHBORHOOD_RADIUS, seed=0):
    """Random tilts p0 (1 + g) with sup|g| <= radius, as (P, beta(P), eta(P))."""
    samples = []
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        for _ in range(MAX_STEP_HALVINGS):
            g = rng.uniform(-1.0, 1.0, base.space.size)
            g = g - np.dot(g, base.mass)
            sup = float(np.max(np.abs(g)))
            if sup == 0.0:
                continue
            dist = Distribution(base.space, base.p * (1.0 + g * (radius * rng.uniform(0.0, 1.0) / sup)))
            eta_value = eta(dist)
            if m is None or m.is_admissible(eta_value):
                samples.append((dist, beta(dist), eta_value))
                break
    return samples


def _nuisance_steps(m, pair, h, config):
    scale = max(1.0, NuisanceFunctional.norm(pair.eta0))
    steps = tuple(s * scale for s in config.fd_steps)
    for _ in range(MAX_STEP_HALVINGS):
        if m.is_admissible(pair.eta0 + steps[0] * h) and m.is_admissible(pair.eta0 - steps[0] * h):
            return steps
        steps = tuple(s * 0.5 for s in steps)
    raise NumericalError(
        f"Direction leaves the admissible nuisance set of {m.name} for every small step.\n"
        "Please check that the direction respects the nuisance bounds (e.g. positivity)."
    )


def nuisance_gateaux(m, base, pair, h, config=None):
    """d/du E0[m(.; beta0, eta0 + u h)] at u = 0, under the fixed base."""
    config = config or NumericConfig()
    h = np.asarray(h, dtype=float).reshape(-1)
    if h.size != m.dim:
        raise DimensionMismatchError(f"Direction has {h.size} coordinates, {m.name} takes {m.dim}")
    if not np.any(h):
        return 0.0
    steps = _nuisance_steps(m, pair, h, config)
    space = base.space
    value, _ = richardson_derivative(
        lambda u: expectation(base, m.values(space, pair.beta0, pair.eta0 + u * h)), steps)
    return value


def _nuisance_directional(m, base, pair, h, config):
    """Per-atom d/du m(z; beta0, eta0 + u h) at u = 0."""
    h = np.asarray(h, dtype=float).reshape(-1)
    if h.size == 0 or not np.any(h):
        return np.zeros(base.space.size)
    steps = _nuisance_steps(m, pair, h, config)
    value, _ = richardson_derivative(lambda u: m.values(base.space, pair.beta0, pair.eta0 + u * h), steps)
    return value


def _beta_directional(m, base, pair, config):
    """Per-atom d/dbeta m(z; beta, eta0) at beta0."""
    steps = tuple(s * max(1.0, abs(pair.beta0)) for s in config.fd_steps)
    value, _ = richardson_derivative(lambda b: m.values(base.space, pair.beta0 + b, pair.eta0), steps)
    return value


@dataclass
class NeymanReport:
    entries: list = field(default_factory=list)
    tolerance: float = 0.0
    vacuous: bool = False

    @property
    def passed(self):
        return all(abs(value) <= self.tolerance for _, value in self.entries)

    def to_checks(self):
        if self.vacuous:
            return [CheckEntry("neyman", 0.0, self.tolerance, True, note="no directions supplied")]
        return [CheckEntry(f"neyman.{label}", abs(value), self.tolerance, abs(value) <= self.tolerance)
                for label, value in self.entries]


def check_neyman(m, base, pair, directions, config=None):
    """Gateaux derivative of E0[m] in every direction, against neyman_tol.

    Args:
        directions: Dict label -> direction vector, or a list of vectors
    """
    config = config or NumericConfig()
    if not isinstance(directions, dict):
        directions = {f"h{i}": h for i, h in enumerate(directions)}
    report = NeymanReport(tolerance=config.neyman_tol)
    if not directions:
        logger.warning("Neyman check on %s has no directions; passing vacuously", m.name)
        report.vacuous = True
        return report
    for label, h in directions.items():
        report.entries.append((label, nuisance_gateaux(m, base, pair, h, config)))
    return report


def jacobian_G(m, base, pair, config=None):
    """d/dbeta E0[m(.; beta, eta0)] at beta0."""
    config = config or NumericConfig()
    steps = tuple(s * max(1.0, abs(pair.beta0)) for s in config.fd_steps)
    value, _ = richardson_derivative(
        lambda b: expectation(base, m.values(base.space, pair.beta0 + b, pair.eta0)), steps)
    if abs(value) <= config.degenerate_tol:
        logger.warning("Jacobian of %s is degenerate (%.3e)", m.name, value)
    return value


@dataclass
class EquivalenceReport:
    """Outcome of forward_verify or reverse_verify."""

    direction: str
    jacobian: float
    checks: list = field(default_factory=list)
    gateaux: list = field(default_factory=list)
    identity_residuals: list = field(default_factory=list)
    master_residuals: list = field(default_factory=list)
    influence: object = None
    neyman: object = None
    phi: object = None
    product_structure: object = None

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    def failed(self):
        return [check.name for check in self.checks if not check.passed]

    def to_checks(self):
        return list(self.checks)


def forward_verify(m, base, beta, eta, score_set, config=None, directions=None, spec_samples=None, seed=0):
    """Orthogonality and correct specification imply phi = -m0 / G is an influence function.

    Raises:
        SpecificationError: If m is not mean zero on the sampled neighborhood
        DegenerateJacobianError: If G vanishes
    """
    config = config or NumericConfig()
    space = base.space
    pair = ParameterPair.from_distribution(beta, eta, base, m)

    if spec_samples is None:
        spec_samples = sample_neighborhood(base, beta, eta, m, seed=seed)
    spec = check_correct_specification(m, spec_samples, config)
    if not spec.passed:
        raise SpecificationError(
            f"{m.name} is not correctly specified near the base distribution:\n"
            f"largest |E_P[m]| = {spec.max_residual:.3e} on samples {spec.violations[:5]}\n"
            "The forward direction needs E_P[m(.; beta(P), eta(P))] = 0 on a neighborhood."
        )

    G = jacobian_G(m, base, pair, config)
    if abs(G) <= config.degenerate_tol:
        raise DegenerateJacobianError(
            f"d/dbeta E0[{m.name}] = {G:.3e} at beta0; the influence function -m0 / G is undefined."
        )

    m0 = m.values(space, pair.beta0, pair.eta0)
    raw_phi = -m0 / G
    phi_mean = expectation(base, raw_phi)
    phi = InfluenceCandidate(base, center(base, raw_phi).values, functional_name=beta.name, config=config)

    report = EquivalenceReport("forward", G, phi=phi)
    report.checks.extend(spec.to_checks())
    report.checks.append(CheckEntry("forward.jacobian_nondegenerate", abs(G), config.degenerate_tol,
                                    abs(G) > config.degenerate_tol, note=f"G = {G:.12g}"))
    report.checks.append(CheckEntry("forward.phi_mean", abs(phi_mean), config.spec_tol,
                                    abs(phi_mean) <= config.spec_tol))

    if directions is None:
        directions = canonical_directions(eta)
    report.neyman = check_neyman(m, base, pair, directions, config)
    report.gateaux = list(report.neyman.entries)
    report.checks.extend(report.neyman.to_checks())

    score_set = list(score_set)
    report.influence = verify_influence(beta, phi, score_set, config)
    report.checks.extend(report.influence.to_checks())

    for i, s in enumerate(score_set):
        sub = linear_tilt(base, s, config, name=f"tilt s{i}")
        beta_dot = pathwise_derivative(beta, sub, config)
        eta_dot = nuisance_path_derivative(eta, sub, config)
        nuisance_term = nuisance_gateaux(m, base, pair, eta_dot, config)
        residual = inner_product(base, m0, s) + G * beta_dot + nuisance_term
        report.identity_residuals.append((f"s{i}", residual))
        report.checks.append(CheckEntry(f"forward.identity.s{i}", abs(residual), config.id_tol,
                                        abs(residual) <= config.id_tol))
    logger.info("Forward verification of %s: %s", m.name, "pass" if report.passed else "fail")
    return report


@dataclass
class ProductStructureReport:
    checks: list = field(default_factory=list)
    coordinates: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.checks) and all(check.passed for check in self.checks)

    def to_checks(self):
        return list(self.checks)


def product_structure_check(beta, eta, beta_coord, eta_coords, config=None, admissible=None):
    """Coordinate submodels are QMD and move exactly one of beta / eta.

    Args:
        beta_coord: Submodel expected to move beta at unit rate with eta frozen, or None
        eta_coords: Dict label -> (h, Submodel) expected to move eta along h with beta frozen
        admissible: Optional predicate on eta values, checked along each path

    Returns:
        ProductStructureReport; coordinates maps label -> (beta_dot, eta_dot)
    """
    config = config or NumericConfig()
    report = ProductStructureReport()
    if beta_coord is None:
        report.checks.append(CheckEntry("product.beta_coordinate", math.nan, config.coord_tol, False,
                                        note="no submodel moves beta with eta frozen"))
    targets = []
    if beta_coord is not None:
        targets.append(("beta", beta_coord, 1.0, np.zeros(eta.dim)))
    for label, (h, sub) in eta_coords.items():
        targets.append((label, sub, 0.0, np.asarray(h, dtype=float)))

    for label, sub, beta_target, eta_target in targets:
        score = resolve_score(sub, config)
        qmd = verify_qmd(sub, score, config=config)
        report.checks.append(CheckEntry(f"product.{label}.qmd", qmd.slope, config.slope_min, qmd.passed,
                                        note=qmd.verdict))
        if admissible is not None:
            inside = all(admissible(eta(sub.density_at(sign * t)))
                         for t in qmd.t_grid for sign in (1.0, -1.0))
            report.checks.append(CheckEntry(f"product.{label}.admissible", float(inside), 1.0, inside))
        beta_dot = pathwise_derivative(beta, sub, config)
        eta_dot = nuisance_path_derivative(eta, sub, config)
        report.coordinates[label] = (beta_dot, eta_dot)
        beta_error = abs(beta_dot - beta_target)
        eta_error = NuisanceFunctional.norm(eta_dot - eta_target)
        report.checks.append(CheckEntry(f"product.{label}.beta_dot", beta_error, config.coord_tol,
                                        beta_error <= config.coord_tol, note=f"beta_dot = {beta_dot:.10g}"))
        report.checks.append(CheckEntry(f"product.{label}.eta_dot", eta_error, config.coord_tol,
                                        eta_error <= config.coord_tol))
    return report


def reverse_verify(m, base, beta, eta, beta_coord, eta_coords, config=None, score_set=None):
    """An influence function m0 plus product structure force orthogonality and G = -1.

    On each coordinate submodel the master identity
    (1 + G) beta_dot + d/deta E0[m][eta_dot] = 0 is evaluated; the beta
    coordinate then pins G = -1 and each eta coordinate pins the Gateaux
    derivative along its direction to zero.
    """
    config = config or NumericConfig()
    space = base.space
    pair = ParameterPair.from_distribution(beta, eta, base, m)
    m0 = m.values(space, pair.beta0, pair.eta0)
    mean = expectation(base, m0)
    phi = InfluenceCandidate(base, m0 - mean, functional_name=beta.name, config=config)

    G = jacobian_G(m, base, pair, config)
    report = EquivalenceReport("reverse", G, phi=phi)
    report.checks.append(CheckEntry("reverse.m0_mean", abs(mean), config.spec_tol, abs(mean) <= config.spec_tol))

    if score_set is None:
        score_set = indicator_scores(base, config)
    report.influence = verify_influence(beta, phi, score_set, config)
    report.checks.extend(report.influence.to_checks())

    product = product_structure_check(beta, eta, beta_coord, eta_coords, config, admissible=m.is_admissible)
    report.product_structure = product
    report.checks.extend(product.to_checks())
    if not product.passed:
        logger.warning("Product structure violated for %s: %s", m.name,
                       ", ".join(c.name for c in product.checks if not c.passed))

    for label, (beta_dot, eta_dot) in product.coordinates.items():
        nuisance_term = nuisance_gateaux(m, base, pair, eta_dot, config) if eta.dim else 0.0
        residual = (1.0 + G) * beta_dot + nuisance_term
        report.master_residuals.append((label, residual))
        report.checks.append(CheckEntry(f"reverse.master.{label}", abs(residual), config.id_tol,
                                        abs(residual) <= config.id_tol))
        if label == "beta" and beta_dot != 0.0:
            derived = -1.0 - nuisance_term / beta_dot
            report.checks.append(CheckEntry("reverse.G_from_master", abs(derived + 1.0), config.id_tol,
                                            abs(derived + 1.0) <= config.id_tol, note=f"G = {derived:.12g}"))

    report.checks.append(CheckEntry("reverse.G_minus_one", abs(G + 1.0), config.id_tol,
                                    abs(G + 1.0) <= config.id_tol, note=f"G = {G:.12g}"))
    for label, (h, _) in eta_coords.items():
        value = nuisance_gateaux(m, base, pair, h, config)
        report.gateaux.append((label, value))
        report.checks.append(CheckEntry(f"reverse.neyman.{label}", abs(value), config.neyman_tol,
                                        abs(value) <= config.neyman_tol))
    logger.info("Reverse verification of %s: %s", m.name, "pass" if report.passed else "fail")
    return report


@dataclass
class ChainRuleReport:
    t_grid: tuple
    residuals: tuple
    slope: float
    floor: float
    slope_min: float

    @property
    def value(self):
        return self.residuals[-1]

    @property
    def passed(self):
        if all(r <= self.floor for r in self.residuals):
            return True
        return self.slope >= self.slope_min

    def to_checks(self):
        return [CheckEntry("chain_rule.residual_smallest_t", self.value, self.floor, self.passed,
                           note=f"slope {self.slope:.4g}")]


def chain_rule_residual(m, sub, beta, eta, t, config=None):
    """||(f_t - f0) / t - [dm/dbeta beta_dot + dm/deta[eta_dot]]|| in L2(P0), f_t = m(.; beta(P_t), eta(P_t))."""
    config = config or NumericConfig()
    base = sub.base
    space = base.space
    pair = ParameterPair.from_distribution(beta, eta, base)
    f0 = m.values(space, pair.beta0, pair.eta0)
    pt = sub.density_at(t)
    ft = m.values(space, beta(pt), eta(pt))
    beta_dot = pathwise_derivative(beta, sub, config)
    eta_dot = nuisance_path_derivative(eta, sub, config)
    linear = _beta_directional(m, base, pair, config) * beta_dot + _nuisance_directional(m, base, pair, eta_dot, config)
    return l2_norm(base, (ft - f0) / t - linear)


def chain_rule_check(m, sub, beta, eta, t_grid=None, config=None):
    """Residuals of the L2 chain rule over a grid; they must vanish at least linearly."""
    config = config or NumericConfig()
    if t_grid is None:
        t_grid = default_t_grid(sub.t_range)
    residuals = tuple(chain_rule_residual(m, sub, beta, eta, t, config) for t in t_grid)
    slope = loglog_slope(t_grid, residuals)
    return ChainRuleReport(tuple(t_grid), residuals, slope, config.deriv_abs_floor, config.chain_slope_min)


@dataclass
class GradientCharacterizationReport:
    lhs: float
    rhs: float
    beta_dot: float
    tolerance: float

    @property
    def passed(self):
        return abs(self.lhs - self.rhs) <= self.tolerance

    def to_checks(self):
        return [CheckEntry("gradient_characterization", abs(self.lhs - self.rhs), self.tolerance, self.passed,
                           note=f"f(s) = {self.lhs:.10g}, -E0[D0 s] = {self.rhs:.10g}, beta_dot = {self.beta_dot:.10g}")]


def gradient_characterization_check(D, base, beta, eta, sub, config=None):
    """d/dt E0[D(.; beta(P_t), eta(P_t))] against -E0[D0 s] along sub."""
    config = config or NumericConfig()
    space = base.space
    pair = ParameterPair.from_distribution(beta, eta, base, D)
    score = resolve_score(sub, config)
    steps = fit_steps(config.fd_steps, sub.t_range)

    def expected_value(t):
        pt = sub.density_at(t)
        return expectation(base, D.values(space, beta(pt), eta(pt)))

    lhs, _ = richardson_derivative(expected_value, steps)
    rhs = -inner_product(base, D.values(space, pair.beta0, pair.eta0), score)
    beta_dot = pathwise_derivative(beta, sub, config)
    return GradientCharacterizationReport(lhs, rhs, beta_dot, config.derivative_tolerance(rhs))


def negative_identity_check(D, base, beta, eta, config=None):
    """d/dbeta E0[D(.; beta, eta0)] at beta0; -1 under product structure.

    Raises:
        NumericalError: If D0 has zero variance
    """
    config = config or NumericConfig()
    pair = ParameterPair.from_distribution(beta, eta, base, D)
    d0 = D.values(base.space, pair.beta0, pair.eta0)
    if inner_product(base, d0, d0) <= config.degenerate_tol ** 2:
        raise NumericalError("The influence function has zero variance; the negative identity is undefined.")
    return jacobian_G(D, base, pair, config)


@dataclass
class FrechetReport:
    deltas: tuple
    remainders: tuple
    slope: float
    floor: float
    slope_min: float

    @property
    def passed(self):
        if all(r <= self.floor for r in self.remainders):
            return True
        return self.slope >= self.slope_min

    def to_checks(self):
        return [CheckEntry("frechet.remainder_smallest_delta", self.remainders[-1], self.floor, self.passed,
                           note=f"slope {self.slope:.4g}")]


def frechet_remainder_check(m, base, pair, b, h, deltas=FRECHET_DELTAS, config=None):
    """The linearization of m in (beta, eta) has an o(delta) remainder in L2(P0)."""
    config = config or NumericConfig()
    space = base.space
    h = np.asarray(h, dtype=float).reshape(-1)
    m0 = m.values(space, pair.beta0, pair.eta0)
    linear = _beta_directional(m, base, pair, config) * b + _nuisance_directional(m, base, pair, h, config)
    remainders = []
    for delta in deltas:
        eta_value = pair.eta0 + delta * h
        if not m.is_admissible(eta_value):
            raise NumericalError(f"eta0 + {delta} h is not admissible for {m.name}")
        shifted = m.values(space, pair.beta0 + delta * b, eta_value)
        remainders.append(l2_norm(base, (shifted - m0) / delta - linear))
    slope = loglog_slope(deltas, remainders)
    return FrechetReport(tuple(deltas), tuple(remainders), slope, config.deriv_abs_floor, config.chain_slope_min)


def linear_problem(base, f, config=None):
    """beta(P) = E_P[f] with m = f - beta and no nuisance."""
    fv = values_of(base.space, f)
    beta = mean_functional(fv)
    eta = NuisanceFunctional(lambda dist: np.zeros(0), labels=(), name="no nuisance")
    m = EstimatingFunction(evaluate=lambda atom, b, e: fv[base.space.index(atom)] - b,
                           evaluate_all=lambda space, b, e: fv - b, dim=0, name="f - beta")
    centered = center(base, fv)
    variance = inner_product(base, centered, centered)
    beta_coord = None
    if variance > 0 and base.full_support:
        beta_coord = linear_tilt(base, centered.values / variance, config, name="beta coordinate")
    return EstimationProblem("linear", base, beta, eta, m, beta_coord=beta_coord)


def squared_density_problem(base, config=None):
    """beta(P) = sum p^2 nu with eta = p and m = 2 eta(z) - 2 beta.

    beta factors through eta here, so no submodel can move beta with eta
    frozen. The candidate beta coordinate tilts along the influence function
    and moves eta as well.
    """
    space = base.space
    beta = squared_density_functional()
    eta = NuisanceFunctional(lambda dist: dist.p, labels=[f"p[{a}]" for a in space.atoms], name="density")
    m = EstimatingFunction(evaluate=lambda atom, b, e: 2.0 * e[space.index(atom)] - 2.0 * b,
                           evaluate_all=lambda sp, b, e: 2.0 * e - 2.0 * b,
                           dim=space.size, name="2 eta(z) - 2 beta")
    beta0 = beta(base)
    phi = center(base, 2.0 * (base.p - beta0))
    variance = inner_product(base, phi, phi)
    beta_coord = None
    if variance > 0 and base.full_support:
        beta_coord = linear_tilt(base, phi.values / variance, config, name="beta coordinate candidate")
    return EstimationProblem("squared density", base, beta, eta, m, beta_coord=beta_coord)
