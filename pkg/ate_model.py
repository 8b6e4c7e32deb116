"""
Average treatment effect on a factorized discrete model.

Z = (Y, X, A) with p0(y, x, a) = p_X(x) [a pi(x) + (1 - a)(1 - pi(x))] p(y | x, a).
The target is beta = E[mu1(X) - mu0(X)] and the nuisance vector stacks
(mu1, mu0, pi) over the X support. This module builds the model from a spec
file, checks the regularity conditions, provides the AIPW estimating and
influence functions, the coordinate submodels used by reverse verification
and the bias sweep comparing the orthogonal and plug-in estimators.
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from estimating_engine import EstimatingFunction, EstimationProblem
from functional_calculus import InfluenceCandidate, NuisanceFunctional, ScalarFunctional
from model_core import (
    CheckEntry,
    Distribution,
    ModelError,
    SampleSpace,
    SpecFileError,
    loglog_slope,
    parse_list,
    parse_matrix,
    read_spec_file,
    values_of,
)
from submodel import linear_tilt

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.05
VARIANCE_FLOOR = 1e-12
STRUCTURE_TOL = 1e-12

ESTIMATOR_ORTHOGONAL = "orthogonal"
ESTIMATOR_PLUGIN = "plugin"
SWEEP_COLUMNS = ("estimator", "eps", "n", "reps", "mean_bias", "se", "abs_bias")


class ATERegularityError(ModelError):
    """Raised when a model violates one of the conditions R1-R4."""

    def __init__(self, condition, message):
        self.condition = condition
        super().__init__(f"({condition}) {message}")


@dataclass(frozen=True)
class ATESpec:
    """Raw inputs of a discrete ATE model."""

    x_probs: tuple
    pi: tuple
    y_support: tuple
    y_cond_a1: tuple
    y_cond_a0: tuple
    epsilon: float = DEFAULT_EPSILON
    c_y: float = None
    sigma2_min: float = None
    x_support: tuple = None


def read_ate_spec(path):
    """Parse an ATE spec file into an ATESpec.

    Keys: x.probs, pi, y.support, y.cond.a1 and y.cond.a0 (rows = x,
    columns = y support), optional epsilon, c_y, sigma2_min, x.support.
    """
    entries = read_spec_file(path)
    x_probs = parse_list(path, entries, "x.probs")
    pi = parse_list(path, entries, "pi")
    y_support = parse_list(path, entries, "y.support")
    cond1 = parse_matrix(path, entries, "y.cond.a1")
    cond0 = parse_matrix(path, entries, "y.cond.a0")
    nx, ny = len(x_probs), len(y_support)
    if len(pi) != nx:
        raise SpecFileError(path, entries["pi"][0], f"pi has {len(pi)} entries for {nx} x values")
    for key, matrix in (("y.cond.a1", cond1), ("y.cond.a0", cond0)):
        if matrix.shape != (nx, ny):
            raise SpecFileError(path, entries[key][0],
                                f"{key} is {matrix.shape[0]}x{matrix.shape[1]}, expected {nx}x{ny}")
    x_support = None
    if "x.support" in entries:
        line_no, raw = entries["x.support"]
        x_support = tuple(item.strip() for item in raw.split(",") if item.strip())
        if len(x_support) != nx:
            raise SpecFileError(path, line_no, f"x.support has {len(x_support)} labels for {nx} x values")

    def scalar(key, default):
        if key not in entries:
            return default
        values = parse_list(path, entries, key)
        if len(values) != 1:
            raise SpecFileError(path, entries[key][0], f"{key} must be a single value")
        return float(values[0])

    try:
        return ATESpec(tuple(x_probs), tuple(pi), tuple(y_support),
                       tuple(map(tuple, cond1)), tuple(map(tuple, cond0)),
                       epsilon=scalar("epsilon", DEFAULT_EPSILON), c_y=scalar("c_y", None),
                       sigma2_min=scalar("sigma2_min", None), x_support=x_support)
    except ModelError as exc:
        raise SpecFileError(path, 0, str(exc)) from None


@dataclass(frozen=True)
class ATENuisances:
    """Per-x nuisances; sigma2 has one row per x, column 0 for a = 1 and column 1 for a = 0."""

    p_x: np.ndarray
    mu1: np.ndarray
    mu0: np.ndarray
    tau: np.ndarray
    pi: np.ndarray
    beta0: float
    sigma2: np.ndarray
    var_tau: float

    def eta_vector(self):
        return np.concatenate([self.mu1, self.mu0, self.pi])


class ATEModel:
    """Flattened joint distribution over atoms (y, x, a), ordered x, then a, then y."""

    def __init__(self, spec):
        self.p_x = np.asarray(spec.x_probs, dtype=float)
        self.pi = np.asarray(spec.pi, dtype=float)
        self.y_support = np.asarray(spec.y_support, dtype=float)
        self.cond = np.stack([np.asarray(spec.y_cond_a0, dtype=float),
                              np.asarray(spec.y_cond_a1, dtype=float)], axis=1)
        self.nx = self.p_x.size
        self.ny = self.y_support.size
        self.x_support = tuple(spec.x_support) if spec.x_support else tuple(str(j) for j in range(self.nx))
        self.epsilon = float(spec.epsilon)
        self.c_y = float(spec.c_y) if spec.c_y is not None else float(np.max(np.abs(self.y_support)))
        self.sigma2_min = spec.sigma2_min
        self._check_structure()

        atoms, xs, ays, ys = [], [], [], []
        for j, x_label in enumerate(self.x_support):
            for a in (0, 1):
                for y in self.y_support:
                    atoms.append((float(y), x_label, a))
                    xs.append(j)
                    ays.append(a)
                    ys.append(float(y))
        self.space = SampleSpace(atoms)
        self.X = np.array(xs)
        self.A = np.array(ays, dtype=float)
        self.Y = np.array(ys)
        self._x_index = {label: j for j, label in enumerate(self.x_support)}

        treat = np.stack([1.0 - self.pi, self.pi], axis=1)
        joint = self.p_x[:, None, None] * treat[:, :, None] * self.cond
        self.p0 = Distribution(self.space, joint.reshape(-1))

    def _check_structure(self):
        if self.nx < 1 or self.ny < 1:
            raise ModelError("The X and Y supports must be non-empty")
        if len({*map(float, self.y_support)}) != self.ny:
            raise ModelError("y.support values must be distinct")
        if self.pi.shape != (self.nx,) or self.cond.shape != (self.nx, 2, self.ny):
            raise ModelError("pi and the conditional tables must match the X and Y supports")
        if np.any(self.p_x < 0) or abs(self.p_x.sum() - 1.0) > STRUCTURE_TOL:
            raise ModelError(f"x.probs must be nonnegative and sum to 1, got sum {self.p_x.sum()!r}")
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise ModelError("pi must lie in [0, 1]")
        if np.any(self.cond < 0) or np.any(np.abs(self.cond.sum(axis=2) - 1.0) > STRUCTURE_TOL):
            raise ModelError("Each conditional block p(y | x, a) must be nonnegative and sum to 1")
        if not self.epsilon > 0:
            raise ModelError(f"epsilon must be positive, got {self.epsilon}")

    def x_index(self, x_label):
        return self._x_index[x_label]

    def nuisances(self):
        """Nuisances computed directly from the conditional tables."""
        mu = self.cond @ self.y_support
        sigma2 = self.cond @ (self.y_support ** 2) - mu ** 2
        sigma2 = np.maximum(sigma2, 0.0)
        tau = mu[:, 1] - mu[:, 0]
        beta0 = float(self.p_x @ tau)
        var_tau = float(self.p_x @ (tau - beta0) ** 2)
        return ATENuisances(self.p_x.copy(), mu[:, 1], mu[:, 0], tau, self.pi.copy(), beta0,
                            sigma2[:, ::-1].copy(), var_tau)

    def eta_labels(self):
        return ([f"mu1[{x}]" for x in self.x_support] + [f"mu0[{x}]" for x in self.x_support]
                + [f"pi[{x}]" for x in self.x_support])

    def split_eta(self, eta):
        """Split a stacked nuisance vector into (mu1, mu0, pi), each with one entry per x.

        Args:
            eta: Array of length 3 * nx ordered as eta_labels()

        Returns:
            Tuple of three arrays
        """
        eta = np.asarray(eta, dtype=float)
        return eta[:self.nx], eta[self.nx:2 * self.nx], eta[2 * self.nx:]

    def is_admissible(self, dist):
        """Distributions of the model class: positivity within epsilon."""
        try:
            nuis = nuisances_of(self, dist)
        except ModelError:
            return False
        return bool(np.all(nuis.pi >= self.epsilon) and np.all(nuis.pi <= 1.0 - self.epsilon))

    def __repr__(self):
        return f"ATEModel(nx={self.nx}, ny={self.ny})"


def nuisances_of(model, dist):
    """mu1, mu0, pi, tau and beta of an arbitrary distribution on the model's space."""
    joint = dist.p.reshape(model.nx, 2, model.ny)
    cell = joint.sum(axis=2)
    if np.any(cell <= 0):
        raise ModelError("Every (x, a) cell needs positive mass to define the nuisances")
    p_x = cell.sum(axis=1)
    mu = (joint @ model.y_support) / cell
    resid = model.y_support[None, None, :] - mu[:, :, None]
    sigma2 = np.sum(joint * resid ** 2, axis=2) / cell
    pi = cell[:, 1] / p_x
    tau = mu[:, 1] - mu[:, 0]
    beta0 = float(p_x @ tau)
    var_tau = float(p_x @ (tau - beta0) ** 2)
    return ATENuisances(p_x, mu[:, 1], mu[:, 0], tau, pi, beta0, sigma2[:, ::-1].copy(), var_tau)


def ate_functional(model):
    """beta(P) = E_P[mu1(X) - mu0(X)] on the model's sample space.

    Args:
        model: ATEModel fixing the atoms

    Returns:
        ScalarFunctional; raises ModelError when an (x, a) cell is empty
    """
    return ScalarFunctional(lambda dist: nuisances_of(model, dist).beta0, "ATE")


def ate_nuisance_functional(model):
    """(mu1, mu0, pi) stacked per x, labelled by model.eta_labels()."""
    return NuisanceFunctional(lambda dist: nuisances_of(model, dist).eta_vector(), model.eta_labels(),
                              name="(mu1, mu0, pi)")


def _aipw_values(model, beta, eta, X, A, Y):
    mu1, mu0, pi = model.split_eta(eta)
    if np.any(pi <= 0) or np.any(pi >= 1):
        raise ModelError("Propensity coordinates must lie strictly inside (0, 1)")
    m1, m0, p = mu1[X], mu0[X], pi[X]
    return A / p * (Y - m1) - (1.0 - A) / (1.0 - p) * (Y - m0) + m1 - m0 - beta


def ate_m(model, atom, beta, eta):
    """AIPW estimating function at one atom (y, x, a)."""
    y, x_label, a = atom
    X = np.array([model.x_index(x_label)])
    return float(_aipw_values(model, beta, eta, X, np.array([float(a)]), np.array([float(y)]))[0])


def ate_estimating_function(model):
    """AIPW estimating function; admissible while every propensity stays inside (0, 1)."""
    def admissible(eta):
        _, _, pi = model.split_eta(eta)
        return bool(np.all(pi > 0) and np.all(pi < 1))

    return EstimatingFunction(
        evaluate=lambda atom, beta, eta: ate_m(model, atom, beta, eta),
        evaluate_all=lambda space, beta, eta: _aipw_values(model, beta, eta, model.X, model.A, model.Y),
        dim=3 * model.nx, admissible=admissible, name="AIPW",
    )


def ate_phi(model, nuisances, atom=None):
    """Influence function m(.; beta0, eta0); one value when atom is given."""
    eta0 = nuisances.eta_vector()
    if atom is not None:
        return ate_m(model, atom, nuisances.beta0, eta0)
    values = _aipw_values(model, nuisances.beta0, eta0, model.X, model.A, model.Y)
    return InfluenceCandidate(model.p0, values, functional_name="ATE")


def aipw_variance(model, nuisances):
    """E[sigma1^2 / pi + sigma0^2 / (1 - pi) + (tau - beta0)^2]."""
    n = nuisances
    terms = n.sigma2[:, 0] / n.pi + n.sigma2[:, 1] / (1.0 - n.pi) + (n.tau - n.beta0) ** 2
    return float(n.p_x @ terms)


@dataclass
class RegularityReport:
    checks: list
    margin: float
    lipschitz_constant: float

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    def failed_conditions(self):
        return [check.name for check in self.checks if not check.passed]

    def to_checks(self):
        return list(self.checks) + [CheckEntry("lipschitz_constant", self.lipschitz_constant, math.inf, True,
                                               note="4 sqrt(2) C_Y (1 + 1/epsilon)")]


def check_regularity(model):
    """Evaluate R1-R4 against the model's configured constants."""
    margin = float(np.min(np.minimum(model.pi, 1.0 - model.pi)))
    nuis = model.nuisances()
    y_max = float(np.max(np.abs(model.y_support)))
    sigma_floor = model.sigma2_min if model.sigma2_min is not None else VARIANCE_FLOOR
    sigma_min = float(np.min(nuis.sigma2))
    if model.sigma2_min is not None:
        r3 = sigma_min >= sigma_floor
    else:
        r3 = sigma_min > sigma_floor
    checks = [
        CheckEntry("R1", margin, model.epsilon, margin >= model.epsilon,
                   note=f"positivity margin {margin:.6g}" + (" (interior)" if margin > model.epsilon else "")),
        CheckEntry("R2", y_max, model.c_y, y_max <= model.c_y, note="bounded outcomes"),
        CheckEntry("R3", sigma_min, sigma_floor, r3, note="positive conditional variance"),
        CheckEntry("R4", nuis.var_tau, VARIANCE_FLOOR, nuis.var_tau > VARIANCE_FLOOR,
                   note="treatment effect heterogeneity"),
    ]
    constant = 4.0 * math.sqrt(2.0) * model.c_y * (1.0 + 1.0 / model.epsilon)
    return RegularityReport(checks, margin, constant)


def build(spec, validate=True):
    """Build the model and its exact nuisances.

    Raises:
        ModelError: On structural problems (sums, shapes)
        ATERegularityError: On the first violated regularity condition when validate is set
    """
    model = ATEModel(spec)
    if validate:
        report = check_regularity(model)
        for check in report.checks:
            if not check.passed:
                raise ATERegularityError(check.name, f"{check.note}: value {check.value:.6g}, bound {check.tolerance:.6g}")
    return model, model.nuisances()


def beta_coordinate_submodel(model, nuisances, config=None):
    """Tilt by g(x) = (tau(x) - beta0) / Var(tau): beta moves at unit rate, mu and pi stay put."""
    if not nuisances.var_tau > VARIANCE_FLOOR:
        raise ATERegularityError("R4", "Var(tau(X)) is zero; no tilt moves beta along x alone")
    g_x = (nuisances.tau - nuisances.beta0) / nuisances.var_tau
    return linear_tilt(model.p0, g_x[model.X], config, name="beta coordinate")


def eta_coordinate_score(model, nuisances, h1, h0, hpi):
    """s_h = g_A + g_pi + alpha0 g_beta with alpha0 = -E[h1(X) - h0(X)]."""
    h1, h0, hpi = (np.asarray(h, dtype=float) for h in (h1, h0, hpi))
    if np.any(nuisances.sigma2 <= VARIANCE_FLOOR):
        raise ATERegularityError("R3", "a conditional outcome variance is zero")
    X, A, Y = model.X, model.A, model.Y
    mu_a = np.where(A == 1, nuisances.mu1[X], nuisances.mu0[X])
    h_a = np.where(A == 1, h1[X], h0[X])
    sigma2_a = np.where(A == 1, nuisances.sigma2[X, 0], nuisances.sigma2[X, 1])
    pi = nuisances.pi[X]
    score = h_a * (Y - mu_a) / sigma2_a + hpi[X] * (A - pi) / (pi * (1.0 - pi))
    alpha0 = -float(nuisances.p_x @ (h1 - h0))
    if alpha0 != 0.0:
        if not nuisances.var_tau > VARIANCE_FLOOR:
            raise ATERegularityError("R4", "Var(tau(X)) is zero; the alpha0 correction is undefined")
        score = score + alpha0 * ((nuisances.tau - nuisances.beta0) / nuisances.var_tau)[X]
    return score, alpha0


def eta_coordinate_submodel(model, nuisances, h1, h0, hpi, config=None):
    """Tilt moving (mu1, mu0, pi) along (h1, h0, hpi) with beta frozen to first order."""
    score, alpha0 = eta_coordinate_score(model, nuisances, h1, h0, hpi)
    logger.debug("eta coordinate tilt with alpha0 = %.6g", alpha0)
    return linear_tilt(model.p0, score, config, name="eta coordinate")


def nuisance_derivatives_closed_form(model, nuisances, s):
    """mu_dot_a(x) = E0[(Y - mu_a) s | x, a] and pi_dot(x) = E0[(A - pi) s | x]."""
    sv = values_of(model.space, s).reshape(model.nx, 2, model.ny)
    joint = model.p0.p.reshape(model.nx, 2, model.ny)
    cell = joint.sum(axis=2)
    mu = np.stack([nuisances.mu0, nuisances.mu1], axis=1)
    resid = model.y_support[None, None, :] - mu[:, :, None]
    mu_dot = np.sum(joint * resid * sv, axis=2) / cell
    a_resid = np.array([0.0, 1.0])[None, :, None] - nuisances.pi[:, None, None]
    pi_dot = np.sum(joint * a_resid * sv, axis=(1, 2)) / cell.sum(axis=1)
    return mu_dot[:, 1], mu_dot[:, 0], pi_dot


def ate_problem(model, nuisances, config=None):
    """EstimationProblem with the beta coordinate and one eta coordinate per nuisance label."""
    eta = ate_nuisance_functional(model)
    eta_coords = {}
    eye = np.eye(3 * model.nx)
    for j, label in enumerate(eta.labels):
        h1, h0, hpi = model.split_eta(eye[j])
        eta_coords[label] = (eye[j], eta_coordinate_submodel(model, nuisances, h1, h0, hpi, config))
    return EstimationProblem("ATE", model.p0, ate_functional(model), eta, ate_estimating_function(model),
                             beta_coord=beta_coordinate_submodel(model, nuisances, config),
                             eta_coords=eta_coords)


def default_sweep_direction(model):
    """h1(x_j) = sin(j + 1), h0 = h1 / 2, hpi(x_j) = cos(j) / 4, scaled to sup-norm 1.

    With pi = 1/2 an antisymmetric pair h0 = -h1 cancels the quadratic bias
    term, so h0 keeps the sign of h1.
    """
    j = np.arange(model.nx, dtype=float)
    h1 = np.sin(j + 1.0)
    h0 = 0.5 * h1
    hpi = 0.25 * np.cos(j)
    scale = max(np.max(np.abs(h1)), np.max(np.abs(h0)), np.max(np.abs(hpi)))
    return h1 / scale, h0 / scale, hpi / scale


@dataclass
class BiasRow:
    estimator: str
    eps: float
    n: int
    reps: int
    mean_bias: float
    se: float
    abs_bias: float


@dataclass
class BiasSweepTable:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    population: bool = True

    def to_csv(self, handle=None):
        """Write the table; returns the text when no handle is given."""
        target = handle if handle is not None else io.StringIO()
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in self.rows:
            writer.writerow([row.estimator, repr(float(row.eps)), row.n, row.reps,
                             repr(float(row.mean_bias)), repr(float(row.se)), repr(float(row.abs_bias))])
        for estimator in (ESTIMATOR_ORTHOGONAL, ESTIMATOR_PLUGIN):
            if estimator in self.slopes:
                writer.writerow([f"slope_{estimator}", "", "", "", repr(float(self.slopes[estimator])), "", ""])
        if handle is None:
            return target.getvalue()
        return None

    def to_checks(self, orthogonal_range=(1.7, 2.3), plugin_range=(0.8, 1.2)):
        checks = []
        for estimator, (low, high) in ((ESTIMATOR_ORTHOGONAL, orthogonal_range), (ESTIMATOR_PLUGIN, plugin_range)):
            slope = self.slopes.get(estimator, math.nan)
            checks.append(CheckEntry(f"bias_sweep.slope_{estimator}", slope, high, low <= slope <= high,
                                     note=f"expected in [{low}, {high}]"))
        return checks


def _perturbed_eta(model, nuisances, eps, direction):
    h1, h0, hpi = direction
    pi = nuisances.pi + eps * hpi
    if np.any(pi < model.epsilon) or np.any(pi > 1.0 - model.epsilon):
        raise ModelError(
            f"Perturbation eps={eps} moves the propensity outside [{model.epsilon}, {1 - model.epsilon}].\n"
            "Please use a smaller eps grid or a smaller propensity direction."
        )
    return np.concatenate([nuisances.mu1 + eps * h1, nuisances.mu0 + eps * h0, pi])


def _sweep_replicate(model, nuisances, etas, n, child):
    rng = np.random.default_rng(child)
    cdf = np.cumsum(model.p0.mass)
    idx = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), model.space.size - 1)
    p_hat = np.bincount(model.X[idx], minlength=model.nx) / n
    out = []
    for eta in etas:
        pseudo = _aipw_values(model, 0.0, eta, model.X[idx], model.A[idx], model.Y[idx])
        mu1, mu0, _ = model.split_eta(eta)
        out.append((float(pseudo.mean()) - nuisances.beta0, float(p_hat @ (mu1 - mu0)) - nuisances.beta0))
    return out


def bias_sweep(model, nuisances, eps_grid, n_per_cell=1000, n_reps=200, seed=0, population=True,
               direction=None, workers=1, callback=None):
    """Bias of the orthogonal and plug-in estimators under nuisance error eps * h.

    The orthogonal estimate solves the AIPW moment using its -1 slope in
    beta, so its bias is E[m(.; beta0, eta0 + eps h)]. Population mode takes
    exact expectations; sampled mode draws n_per_cell atoms per replicate by
    inverse CDF from a per-replicate child of SeedSequence(seed), reusing
    each replicate's draw across the eps grid.

    Args:
        model: ATEModel
        nuisances: ATENuisances of the model
        eps_grid: Decreasing nonnegative perturbation sizes
        n_per_cell: Sample size per replicate (sampled mode)
        n_reps: Number of replicates (sampled mode)
        seed: Integer seed
        population: Use exact expectations instead of samples
        direction: Optional (h1, h0, hpi); defaults to default_sweep_direction
        workers: Threads for the replicates; output does not depend on it
        callback: Optional callback(percent, message)

    Returns:
        BiasSweepTable with fitted log-log slopes per estimator
    """
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid or any(e < 0 for e in eps_grid) or any(a <= b for a, b in zip(eps_grid, eps_grid[1:])):
        raise ModelError("eps grid must be non-empty, nonnegative and strictly decreasing")
    if direction is None:
        direction = default_sweep_direction(model)
    direction = tuple(np.asarray(h, dtype=float) for h in direction)
    if any(h.shape != (model.nx,) for h in direction):
        raise ModelError(f"Sweep direction components need {model.nx} entries each")
    etas = [_perturbed_eta(model, nuisances, eps, direction) for eps in eps_grid]
    table = BiasSweepTable(population=population)

    if population:
        for i, (eps, eta) in enumerate(zip(eps_grid, etas)):
            mu1, mu0, _ = model.split_eta(eta)
            orth = float(model.p0.mass @ _aipw_values(model, nuisances.beta0, eta, model.X, model.A, model.Y))
            plug = float(nuisances.p_x @ (mu1 - mu0)) - nuisances.beta0
            table.rows.append(BiasRow(ESTIMATOR_ORTHOGONAL, eps, 0, 0, orth, 0.0, abs(orth)))
            table.rows.append(BiasRow(ESTIMATOR_PLUGIN, eps, 0, 0, plug, 0.0, abs(plug)))
            if callback:
                callback(int(100 * (i + 1) / len(eps_grid)), f"Evaluated eps={eps}")
    else:
        if n_per_cell < 1 or n_reps < 1:
            raise ModelError("Sampled sweeps need n_per_cell >= 1 and n_reps >= 1")
        children = np.random.SeedSequence(seed).spawn(n_reps)
        with ThreadPoolExecutor(max_workers=max(1, int(workers))) as executor:
            results = list(executor.map(
                lambda child: _sweep_replicate(model, nuisances, etas, n_per_cell, child), children))
        if callback:
            callback(100, f"Finished {n_reps} replicates")
        biases = np.array(results)  # reps x eps x estimator
        for k, eps in enumerate(eps_grid):
            for e, estimator in enumerate((ESTIMATOR_ORTHOGONAL, ESTIMATOR_PLUGIN)):
                draws = biases[:, k, e]
                mean = float(draws.mean())
                se = float(draws.std(ddof=1) / math.sqrt(n_reps)) if n_reps > 1 else 0.0
                table.rows.append(BiasRow(estimator, eps, n_per_cell, n_reps, mean, se, abs(mean)))

    for estimator in (ESTIMATOR_ORTHOGONAL, ESTIMATOR_PLUGIN):
        rows = [r for r in table.rows if r.estimator == estimator and r.eps > 0]
        table.slopes[estimator] = loglog_slope([r.eps for r in rows], [r.abs_bias for r in rows])
    logger.info("Bias sweep slopes: orthogonal %.4f, plugin %.4f",
                table.slopes[ESTIMATOR_ORTHOGONAL], table.slopes[ESTIMATOR_PLUGIN])
    return table
