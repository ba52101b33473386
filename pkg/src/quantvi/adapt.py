"""Distribution estimation and variance-optimal level placement.

Dual vectors observed during a run are summarized, per type, by a weighted
distribution of their normalized coordinate magnitudes on [0, 1].  Each
sample vector is weighted by its squared q-norm relative to the batch, so
large-magnitude vectors dominate the estimate in proportion to their
contribution to the quantization variance.

Level sequences are then re-placed to minimize the expected rounding
variance  integral(sigma_Q^2(u; l) dF(u))  by an exact dynamic program over
a uniform grid of candidate positions.

All distribution objects expose the same two-method interface consumed by
the optimizer and by codec.estimate_level_probs:

``moments_below(x)``
    (mass, first moment, second moment) of F restricted to [0, x).
``total_moments()``
    the same over the closed interval [0, 1].
"""

import warnings

import numpy as np
from scipy import optimize, stats

from .levels import LevelSequence


class AllZeroSamples(ValueError):
    """Every sample vector has zero norm; no distribution can be estimated."""


class BudgetTooLarge(ValueError):
    """More interior levels requested than grid candidate positions."""


class DegenerateSample(UserWarning):
    """Parametric fit fell back to a step CDF (too few distinct values)."""


class StepCdf:
    """Weighted empirical (step) distribution on [0, 1]."""

    def __init__(self, points, weights):
        points = np.asarray(points, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if points.size == 0:
            raise ValueError("empty point set")
        if np.any(weights < 0):
            raise ValueError("negative weight")
        if np.any(points < -1e-12) or np.any(points > 1 + 1e-12):
            raise ValueError("support must lie in [0, 1]")
        points = np.clip(points, 0.0, 1.0)
        order = np.argsort(points, kind="stable")
        points, weights = points[order], weights[order]
        # Merge duplicate support points.
        uniq, inverse = np.unique(points, return_inverse=True)
        merged = np.zeros_like(uniq)
        np.add.at(merged, inverse, weights)
        total = merged.sum()
        if total <= 0:
            raise ValueError("total weight must be positive")
        merged /= total
        self.points = uniq
        self.weights = merged
        self._cum = np.vstack(
            [
                np.cumsum(merged),
                np.cumsum(merged * uniq),
                np.cumsum(merged * uniq**2),
            ]
        )

    def moments_below(self, x):
        i = int(np.searchsorted(self.points, x, side="left"))
        if i == 0:
            return np.zeros(3)
        return self._cum[:, i - 1].copy()

    def total_moments(self):
        return self._cum[:, -1].copy()


class UniformCdf:
    """The uniform distribution on [0, 1]."""

    def moments_below(self, x):
        x = min(max(float(x), 0.0), 1.0)
        return np.array([x, x**2 / 2.0, x**3 / 3.0])

    def total_moments(self):
        return np.array([1.0, 0.5, 1.0 / 3.0])


class TruncNormCdf:
    """A normal distribution truncated to [0, 1], in closed form."""

    def __init__(self, mu, sigma):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)
        self._a = (0.0 - mu) / sigma
        self._b = (1.0 - mu) / sigma
        self._z = stats.norm.cdf(self._b) - stats.norm.cdf(self._a)
        if self._z <= 0:
            raise ValueError("truncation interval carries no mass")

    def _raw(self, z):
        """Unnormalized (mass, m1, m2) of the parent normal over [.._a, z]."""
        phi_a, phi_z = stats.norm.pdf(self._a), stats.norm.pdf(z)
        cdf = stats.norm.cdf(z) - stats.norm.cdf(self._a)
        dphi = phi_z - phi_a
        mu, s = self.mu, self.sigma
        m1 = mu * cdf - s * dphi
        m2 = (mu**2 + s**2) * cdf - 2 * mu * s * dphi - s**2 * (z * phi_z - self._a * phi_a)
        return np.array([cdf, m1, m2])

    def moments_below(self, x):
        z = min(max((float(x) - self.mu) / self.sigma, self._a), self._b)
        return self._raw(z) / self._z

    def total_moments(self):
        return self._raw(self._b) / self._z

    def mean_var(self):
        m = self.total_moments()
        return float(m[1]), float(m[2] - m[1] ** 2)


def _sample_weights(samples, q):
    """Squared q-norm weights, one per sample vector."""
    norms = np.linalg.norm(samples, ord=q, axis=1)
    sq = norms**2
    total = sq.sum()
    if total <= 0:
        raise AllZeroSamples("all sample vectors have zero norm")
    return norms, sq / total


def _type_points(samples, norms, lam, family, m):
    """Normalized magnitudes and weights of type-m coordinates, all samples."""
    cols = family.type_coordinates(m)
    pts, wts = [], []
    for z in range(samples.shape[0]):
        if lam[z] == 0.0:
            continue
        pts.append(np.abs(samples[z, cols]) / norms[z])
        wts.append(np.full(cols.size, lam[z] / cols.size))
    if not pts:
        return None, None
    return np.concatenate(pts), np.concatenate(wts)


class WeightedCdf:
    """Per-type weighted empirical CDFs estimated from sample dual vectors."""

    def __init__(self, type_cdfs, lambdas):
        self.type_cdfs = type_cdfs
        self.lambdas = lambdas


def weighted_cdf(samples, family):
    """Estimate per-type CDFs of normalized coordinates from Z samples.

    Sample z receives weight lambda_z proportional to its squared q-norm;
    within a type each of its coordinates carries an equal share of that
    weight, so every type's CDF has total mass 1.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[1] != family.dimension:
        raise ValueError("sample dimension does not match the family")
    norms, lam = _sample_weights(samples, family.q)
    cdfs = []
    for m in range(family.num_types):
        pts, wts = _type_points(samples, norms, lam, family, m)
        cdfs.append(None if pts is None else StepCdf(pts, wts))
    return WeightedCdf(cdfs, lam)


class TruncNormalFit:
    """Per-type truncated-normal fits, with step-CDF fallbacks where needed."""

    def __init__(self, type_cdfs, params, degenerate, lambdas):
        self.type_cdfs = type_cdfs
        self.params = params
        self.degenerate = degenerate
        self.lambdas = lambdas


def _fit_one_truncnorm(mean, var):
    """Method-of-moments parameters of a [0,1]-truncated normal, or None."""

    def residual(theta):
        m, v = TruncNormCdf(theta[0], np.exp(theta[1])).mean_var()
        return [m - mean, v - var]

    theta0 = np.array([mean, 0.5 * np.log(max(var, 1e-8))])
    sol = optimize.least_squares(
        residual, theta0, bounds=([-10.0, np.log(1e-4)], [11.0, np.log(50.0)]),
        xtol=1e-14, ftol=1e-14,
    )
    if not sol.success or np.linalg.norm(sol.fun) > 1e-6:
        return None
    return float(sol.x[0]), float(np.exp(sol.x[1]))


def fit_truncated_normal(samples, family):
    """Fit a truncated normal per type by matching weighted mean and variance.

    Types whose samples are degenerate (fewer than two distinct values) or
    whose moments no truncated normal can reproduce fall back to the step
    CDF, flagged in ``degenerate`` and announced with a DegenerateSample
    warning.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    norms, lam = _sample_weights(samples, family.q)
    cdfs, params, degenerate = [], [], []
    for m in range(family.num_types):
        pts, wts = _type_points(samples, norms, lam, family, m)
        if pts is None:
            cdfs.append(None)
            params.append(None)
            degenerate.append(False)
            continue
        mean = float(np.sum(wts * pts))
        var = float(np.sum(wts * pts**2) - mean**2)
        fitted = None
        if np.unique(pts).size >= 2 and var > 1e-12:
            fitted = _fit_one_truncnorm(mean, var)
        if fitted is None:
            warnings.warn(
                f"type {m}: sample too degenerate for a truncated-normal fit, "
                "using the step CDF",
                DegenerateSample,
            )
            cdfs.append(StepCdf(pts, wts))
            params.append(None)
            degenerate.append(True)
        else:
            cdfs.append(TruncNormCdf(*fitted))
            params.append(fitted)
            degenerate.append(False)
    return TruncNormalFit(cdfs, params, degenerate, lam)


def quantization_cost(cdf, seq):
    """integral of (l_tau+1 - u)(u - l_tau) dF(u): the per-unit-norm variance."""
    ell = seq.levels if isinstance(seq, LevelSequence) else np.asarray(seq, float)
    total = cdf.total_moments()
    below = [cdf.moments_below(x) for x in ell]
    cost = 0.0
    for j in range(len(ell) - 1):
        hi = total if j == len(ell) - 2 else below[j + 1]
        m0, m1, m2 = hi - below[j]
        cost += -m2 + (ell[j] + ell[j + 1]) * m1 - ell[j] * ell[j + 1] * m0
    return float(cost)


def optimize_levels(cdf, alpha, grid=512):
    """Variance-optimal placement of ``alpha`` interior levels on a grid.

    Runs an exact dynamic program over the uniform grid {0, 1/G, ..., 1}:
    state (level count, grid position), transition cost equal to the rounding
    variance accumulated on the interval between consecutive levels.  The
    returned sequence is the exact minimizer among all grid-restricted
    sequences with the given budget.
    """
    alpha = int(alpha)
    grid = int(grid)
    if alpha < 0:
        raise ValueError("level budget must be non-negative")
    if grid < 2:
        raise ValueError("grid must have at least 2 intervals")
    if alpha > grid - 1:
        raise BudgetTooLarge(f"{alpha} interior levels need a grid of > {alpha} points")

    xs = np.arange(grid + 1) / grid
    below = np.stack([_moments_at(cdf, x) for x in xs])  # (G+1, 3)
    below[grid] = cdf.total_moments()  # closed top interval includes u = 1
    b0, b1, b2 = below[:, 0], below[:, 1], below[:, 2]

    # Interval cost c(i, j) for grid points i < j; the matrix does not
    # depend on the layer, so each DP layer is one masked min-reduction.
    m0 = b0[None, :] - b0[:, None]
    m1 = b1[None, :] - b1[:, None]
    m2 = b2[None, :] - b2[:, None]
    cost = -m2 + (xs[:, None] + xs[None, :]) * m1 - (xs[:, None] * xs[None, :]) * m0
    cost[np.tril_indices(grid + 1)] = np.inf

    fprev = np.full(grid + 1, np.inf)
    fprev[0] = 0.0
    parents = []
    for _ in range(alpha + 1):
        cand = fprev[:, None] + cost
        par = np.argmin(cand, axis=0)
        fprev = cand[par, np.arange(grid + 1)]
        parents.append(par)

    positions = [grid]
    for par in reversed(parents):
        positions.append(int(par[positions[-1]]))
    positions.reverse()
    return LevelSequence(xs[positions])


def _moments_at(cdf, x):
    return np.asarray(cdf.moments_below(x), dtype=np.float64)


def mqv_objective(family, cdf):
    """Family-wide expected quantization variance per unit squared norm.

    Sums the per-type rounding-variance integrals weighted by each type's
    share of coordinates.  Types without an estimated CDF (no observed
    coordinates) contribute nothing.
    """
    total = 0.0
    for m in range(family.num_types):
        c = cdf.type_cdfs[m] if hasattr(cdf, "type_cdfs") else cdf
        if c is None:
            continue
        total += family.proportions[m] * quantization_cost(c, family.sequences[m])
    return float(total)


def pooled_cdf(wcdf, family):
    """Mixture of the per-type step CDFs weighted by coordinate proportions.

    This is the distribution a single shared level sequence would face; it
    is the comparison point for layer-wise versus global level placement.
    """
    pts, wts = [], []
    for m in range(family.num_types):
        c = wcdf.type_cdfs[m]
        if c is None or family.proportions[m] == 0.0:
            continue
        pts.append(c.points)
        wts.append(c.weights * family.proportions[m])
    if not pts:
        raise AllZeroSamples("no type has an estimated CDF")
    return StepCdf(np.concatenate(pts), np.concatenate(wts))
