"""
Core objects for ortho-kit.

This module holds the finite sample space, distributions over it and the
L2(P0) geometry (expectations, inner products, centering, Hellinger and total
variation distances) that every other module builds on. It also owns the
shared numeric configuration, the check-entry record that all verifiers emit,
the error types and the reader for the key-value model files.

All objects are immutable after construction: their numpy arrays are flagged
read-only, so they can be shared between threads freely.
"""

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

# Largest finite-difference step as a fraction of a path's t_range
MAX_STEP_FRACTION = 1e-3

_INVSQRT2 = 1.0 / math.sqrt(2.0)


class ModelError(ValueError):
    """Raised when a model object violates its construction invariants."""


class DimensionMismatchError(ModelError):
    """Raised when objects over different sample spaces are combined."""


class SpecFileError(ModelError):
    """Raised for a malformed input file. The message carries path and line."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        where = f"{path}:{line_no}" if line_no else str(path)
        super().__init__(f"{where}: {message}")


class NumericalError(RuntimeError):
    """Raised when a numerical procedure cannot produce a trustworthy value."""


class NumericConfig:
    """Tolerances and finite-difference steps shared by every verifier."""

    # Finite-difference steps: central differences plus one Richardson level
    FD_STEPS = (1e-3, 5e-4, 2.5e-4)

    # Names accepted by override(), kept in one place for the CLI
    TOLERANCE_NAMES = (
        "norm_tol", "mean_tol", "deriv_tol", "deriv_abs_floor", "slope_min",
        "res_max", "plateau_slope", "gap_slack", "neyman_tol", "id_tol",
        "coord_tol", "spec_tol", "eif_consistency_tol", "degenerate_tol",
        "chain_slope_min",
    )

    def __init__(self):
        # Default values
        self.norm_tol = 1e-12
        self.mean_tol = 1e-10
        self.fd_steps = self.FD_STEPS
        self.deriv_tol = 1e-6
        self.deriv_abs_floor = 1e-9
        self.slope_min = 1.9
        self.res_max = 1e-10
        self.plateau_slope = 0.5
        self.gap_slack = 0.05
        self.neyman_tol = 1e-8
        self.id_tol = 1e-6
        self.coord_tol = 1e-6
        self.spec_tol = 1e-10
        self.eif_consistency_tol = 1e-6
        self.degenerate_tol = 1e-10
        self.chain_slope_min = 0.9

    def override(self, name, value):
        """Replace one tolerance after validating it.

        Args:
            name: One of TOLERANCE_NAMES
            value: New value, must be a positive finite real

        Raises:
            ModelError: If the name is unknown or the value is not positive
        """
        if name not in self.TOLERANCE_NAMES:
            raise ModelError(
                f"Unknown tolerance '{name}'. Known tolerances:\n"
                + "\n".join(f"  {n}" for n in self.TOLERANCE_NAMES)
            )
        value = float(value)
        if not math.isfinite(value) or value <= 0:
            raise ModelError(f"Tolerance '{name}' must be positive and finite, got {value}")
        setattr(self, name, value)
        return self

    def derivative_tolerance(self, reference):
        """Relative derivative tolerance with the absolute floor applied."""
        return max(self.deriv_tol * abs(reference), self.deriv_abs_floor)


@dataclass(frozen=True)
class CheckEntry:
    """One named numerical check: measured value against a tolerance."""

    name: str
    value: float
    tolerance: float
    passed: bool
    note: str = ""


def _frozen(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


class SampleSpace:
    """A finite list of atoms with positive dominating-measure weights nu."""

    def __init__(self, atoms, nu=None):
        atoms = list(atoms)
        if len(atoms) < 2:
            raise ModelError(f"A sample space needs at least 2 atoms, got {len(atoms)}")
        if len(set(atoms)) != len(atoms):
            raise ModelError("Atom identifiers must be distinct")
        if nu is None:
            nu = np.ones(len(atoms))
        nu = np.asarray(nu, dtype=float)
        if nu.shape != (len(atoms),):
            raise DimensionMismatchError(
                f"nu has {nu.size} weights for {len(atoms)} atoms"
            )
        if not np.all(np.isfinite(nu)) or np.any(nu <= 0):
            raise ModelError("All nu weights must be strictly positive and finite")
        self._atoms = tuple(atoms)
        self._index = {atom: k for k, atom in enumerate(self._atoms)}
        self._nu = _frozen(nu)

    @property
    def atoms(self):
        """Atom identifiers in index order."""
        return self._atoms

    @property
    def nu(self):
        """Read-only array of dominating-measure weights."""
        return self._nu

    @property
    def size(self):
        """Number of atoms."""
        return len(self._atoms)

    def index(self, atom):
        """Position of atom in the space.

        Raises:
            ModelError: If atom is not part of the space
        """
        try:
            return self._index[atom]
        except KeyError:
            raise ModelError(f"Atom {atom!r} is not part of this sample space") from None

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"SampleSpace(size={self.size})"


class Distribution:
    """A probability density p with respect to nu on a SampleSpace."""

    def __init__(self, space, p, config=None):
        norm_tol = (config or NumericConfig()).norm_tol
        p = np.asarray(p, dtype=float)
        if p.shape != (space.size,):
            raise DimensionMismatchError(
                f"Density has {p.size} entries for a space of {space.size} atoms"
            )
        if not np.all(np.isfinite(p)):
            raise ModelError("Density values must be finite")
        if np.any(p < 0):
            raise ModelError(f"Density values must be nonnegative, minimum is {p.min()}")
        total = float(np.sum(p * space.nu))
        if abs(total - 1.0) > norm_tol:
            raise ModelError(f"Density integrates to {total!r}, expected 1 within {norm_tol}")
        self._space = space
        self._p = _frozen(p)

    @classmethod
    def from_weights(cls, space, weights, config=None):
        """Normalize nonnegative weights into a density."""
        weights = np.asarray(weights, dtype=float)
        total = float(np.sum(weights * space.nu))
        if total <= 0:
            raise ModelError("Weights must have positive total mass")
        return cls(space, weights / total, config)

    @property
    def space(self):
        return self._space

    @property
    def p(self):
        """Read-only density values with respect to nu."""
        return self._p

    @property
    def full_support(self):
        """True when every atom has positive density."""
        return bool(np.all(self._p > 0))

    @property
    def mass(self):
        """Per-atom probability p(z) nu(z)."""
        return self._p * self._space.nu

    def __repr__(self):
        return f"Distribution(size={self._space.size}, full_support={self.full_support})"


class RealFunction:
    """A real-valued function on the atoms of a SampleSpace."""

    def __init__(self, space, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (space.size,):
            raise DimensionMismatchError(
                f"Function has {values.size} values for a space of {space.size} atoms"
            )
        if not np.all(np.isfinite(values)):
            raise ModelError("Function values must be finite")
        self._space = space
        self._values = _frozen(values)

    @property
    def space(self):
        return self._space

    @property
    def values(self):
        return self._values

    def sup_norm(self):
        """max_k |f(z_k)|."""
        return float(np.max(np.abs(self._values)))

    def _coerce(self, other):
        if isinstance(other, RealFunction):
            _check_space(self._space, other.space)
            return other.values
        return float(other)

    def __add__(self, other):
        return RealFunction(self._space, self._values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return RealFunction(self._space, self._values - self._coerce(other))

    def __rsub__(self, other):
        return RealFunction(self._space, self._coerce(other) - self._values)

    def __mul__(self, other):
        return RealFunction(self._space, self._values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return RealFunction(self._space, self._values / float(other))

    def __neg__(self):
        return RealFunction(self._space, -self._values)

    def __repr__(self):
        return f"{type(self).__name__}({np.array2string(self._values, precision=6)})"


class ScoreFunction(RealFunction):
    """A RealFunction with mean zero under its base distribution."""

    def __init__(self, base, values, config=None):
        mean_tol = (config or NumericConfig()).mean_tol
        super().__init__(base.space, values)
        mean = float(np.sum(self._values * base.mass))
        if abs(mean) > mean_tol:
            raise ModelError(
                f"Score has mean {mean:.3e} under its base distribution, "
                f"expected 0 within {mean_tol}"
            )
        self._base = base

    @property
    def base(self):
        return self._base


def _check_space(s1, s2):
    if s1 is not s2 and (s1.atoms != s2.atoms or not np.array_equal(s1.nu, s2.nu)):
        raise DimensionMismatchError("Objects live on different sample spaces")


def values_of(space, f):
    """Return the per-atom values of a RealFunction or array-like on space."""
    if isinstance(f, RealFunction):
        _check_space(space, f.space)
        return f.values
    arr = np.asarray(f, dtype=float)
    if arr.shape != (space.size,):
        raise DimensionMismatchError(
            f"Function has {arr.size} values for a space of {space.size} atoms"
        )
    return arr


def expectation(dist, f):
    """E_dist[f] = sum_k f(z_k) p(z_k) nu(z_k)."""
    return float(np.dot(values_of(dist.space, f), dist.mass))


def inner_product(dist, f, g):
    """E_dist[f g]."""
    fv = values_of(dist.space, f)
    gv = values_of(dist.space, g)
    return float(np.dot(fv * gv, dist.mass))


def l2_norm(dist, f):
    """L2(dist) norm of f.

    Args:
        dist: Distribution the norm is taken under
        f: RealFunction or array of per-atom values

    Returns:
        sqrt(E_dist[f^2]) as a float
    """
    return math.sqrt(max(inner_product(dist, f, f), 0.0))


def center(dist, f):
    """Return f - E_dist[f] as a ScoreFunction against dist."""
    fv = values_of(dist.space, f)
    return ScoreFunction(dist, fv - np.dot(fv, dist.mass))


def _check_pair(d1, d2):
    _check_space(d1.space, d2.space)


def sqrt_density_gap(d1, d2):
    """Per-atom sqrt(p1) - sqrt(p2), computed without cancellation."""
    _check_pair(d1, d2)
    r1 = np.sqrt(d1.p)
    r2 = np.sqrt(d2.p)
    denom = r1 + r2
    return np.divide(d1.p - d2.p, denom, out=np.zeros_like(denom), where=denom > 0)


def hellinger(d1, d2):
    """H = (1/sqrt 2) * ||sqrt p1 - sqrt p2||_{L2(nu)}."""
    gap = sqrt_density_gap(d1, d2)
    return _INVSQRT2 * math.sqrt(float(np.sum(gap * gap * d1.space.nu)))


def total_variation(d1, d2):
    """TV = sum_k |p1 - p2| nu_k."""
    _check_pair(d1, d2)
    return float(np.sum(np.abs(d1.p - d2.p) * d1.space.nu))


def richardson_derivative(func, steps):
    """Central-difference derivative at 0 with one Richardson level.

    Central differences D(h) = (f(h) - f(-h)) / 2h carry an O(h^2) error, so
    consecutive steps h1 > h2 combine as (q^2 D(h2) - D(h1)) / (q^2 - 1) with
    q = h1 / h2. The finest extrapolated value is returned along with the
    spread between the last two extrapolations as an error estimate.

    Args:
        func: Callable of a real step returning a float or ndarray
        steps: At least two strictly decreasing positive steps

    Returns:
        Tuple of (derivative, error_estimate)
    """
    steps = [float(h) for h in steps]
    if len(steps) < 2:
        raise NumericalError("Richardson extrapolation needs at least two steps")
    diffs = [(np.asarray(func(h), dtype=float) - np.asarray(func(-h), dtype=float)) / (2.0 * h)
             for h in steps]
    extrapolated = []
    for (h1, d1), (h2, d2) in zip(zip(steps, diffs), zip(steps[1:], diffs[1:])):
        q2 = (h1 / h2) ** 2
        extrapolated.append((q2 * d2 - d1) / (q2 - 1.0))
    best = extrapolated[-1]
    if len(extrapolated) > 1:
        err = np.max(np.abs(extrapolated[-1] - extrapolated[-2]))
    else:
        err = np.max(np.abs(diffs[-1] - diffs[-2]))
    if np.ndim(best) == 0:
        best = float(best)
    return best, float(err)


def fit_steps(steps, t_range):
    """Shrink a step set to the scale of the path.

    A linear tilt with direction g has t_range = 1 / sup|g|, so capping the
    largest step at MAX_STEP_FRACTION * t_range keeps t * sup|g| <= 1e-3 and
    the Richardson truncation error small for large-sup scores. Paths with
    an infinite range keep their steps.

    Args:
        steps: Strictly decreasing positive steps
        t_range: Half-width of the path's parameter interval

    Returns:
        Tuple of steps, rescaled together when the largest exceeds the cap
    """
    steps = tuple(float(h) for h in steps)
    limit = MAX_STEP_FRACTION * t_range
    if max(steps) > limit:
        scale = limit / max(steps)
        steps = tuple(h * scale for h in steps)
    return steps


def loglog_slope(xs, ys):
    """Least-squares slope of log y against log x over the positive points."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0)
    if np.count_nonzero(keep) < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)
    return float(slope)


def read_spec_file(path):
    """Read a key-value model file.

    Lines look like `key = value`; `#` starts a comment and blank lines are
    skipped.

    Returns:
        Dict mapping key to (line_no, raw value string)

    Raises:
        SpecFileError: On unreadable files, lines without '=' or repeated keys
    """
    if not os.path.exists(path):
        raise SpecFileError(path, 0, "file not found")
    entries = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SpecFileError(path, line_no, f"expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise SpecFileError(path, line_no, "empty key")
            if key in entries:
                raise SpecFileError(path, line_no, f"key '{key}' repeated (first on line {entries[key][0]})")
            entries[key] = (line_no, value)
    return entries


def parse_list(path, entries, key, required=True):
    """Parse a comma separated list of reals from a spec entry."""
    if key not in entries:
        if required:
            raise SpecFileError(path, 0, f"missing required key '{key}'")
        return None
    line_no, raw = entries[key]
    try:
        values = [float(item) for item in raw.split(",") if item.strip()]
    except ValueError:
        raise SpecFileError(path, line_no, f"'{key}' must be a comma separated list of reals") from None
    if not values:
        raise SpecFileError(path, line_no, f"'{key}' is empty")
    if not all(math.isfinite(v) for v in values):
        raise SpecFileError(path, line_no, f"'{key}' contains non-finite values")
    return np.array(values)


def parse_matrix(path, entries, key):
    """Parse rows separated by ';' of comma separated reals."""
    if key not in entries:
        raise SpecFileError(path, 0, f"missing required key '{key}'")
    line_no, raw = entries[key]
    rows = []
    for row in raw.split(";"):
        if not row.strip():
            continue
        try:
            rows.append([float(item) for item in row.split(",")])
        except ValueError:
            raise SpecFileError(path, line_no, f"'{key}' rows must be comma separated reals") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise SpecFileError(path, line_no, f"'{key}' must be a rectangular matrix")
    return np.array(rows)


def read_model_file(path, config=None):
    """Build the base Distribution from a model file.

    Keys: `space.atoms` (names), `space.nu` (optional, default 1.0 each),
    `p0` (density values).

    Returns:
        Tuple of (Distribution, entries) so callers can read extra keys
    """
    entries = read_spec_file(path)
    if "space.atoms" not in entries:
        raise SpecFileError(path, 0, "missing required key 'space.atoms'")
    atoms_line, atoms_raw = entries["space.atoms"]
    atoms = [a.strip() for a in atoms_raw.split(",") if a.strip()]
    nu = parse_list(path, entries, "space.nu", required=False)
    if nu is not None:
        if len(nu) != len(atoms):
            raise SpecFileError(path, entries["space.nu"][0],
                                f"space.nu has {len(nu)} entries for {len(atoms)} atoms")
        if np.any(nu <= 0):
            raise SpecFileError(path, entries["space.nu"][0], "space.nu entries must be positive")
    p0 = parse_list(path, entries, "p0")
    p0_line = entries["p0"][0]
    if len(p0) != len(atoms):
        raise SpecFileError(path, p0_line, f"p0 has {len(p0)} entries for {len(atoms)} atoms")
    if np.any(p0 < 0):
        raise SpecFileError(path, p0_line, "p0 entries must be nonnegative")
    try:
        space = SampleSpace(atoms, nu)
    except ModelError as exc:
        raise SpecFileError(path, atoms_line, str(exc)) from None
    try:
        dist = Distribution(space, p0, config)
    except ModelError as exc:
        raise SpecFileError(path, p0_line, str(exc)) from None
    logger.debug("Loaded model %s with %d atoms", path, space.size)
    return dist, entries
