import itertools

import numpy as np
import pytest
from scipy import integrate, stats

from quantvi import adapt
from quantvi.adapt import (
    AllZeroSamples,
    BudgetTooLarge,
    DegenerateSample,
    StepCdf,
    TruncNormCdf,
    UniformCdf,
    fit_truncated_normal,
    mqv_objective,
    optimize_levels,
    pooled_cdf,
    quantization_cost,
    weighted_cdf,
)
from quantvi.levels import LevelFamily, LevelSequence


def _fam_two(d=4, q=2):
    assign = np.array([0] * (d // 2) + [1] * (d - d // 2))
    return LevelFamily(
        [LevelSequence([0.0, 0.5, 1.0]), LevelSequence([0.0, 1.0])], assign, q=q
    )


def test_uniform_cdf_moments():
    u = UniformCdf()
    assert np.allclose(u.total_moments(), [1.0, 0.5, 1.0 / 3.0])
    assert np.allclose(u.moments_below(0.5), [0.5, 0.125, 1.0 / 24.0])
    assert np.allclose(u.moments_below(-2.0), [0.0, 0.0, 0.0])
    assert np.allclose(u.moments_below(5.0), u.total_moments())


def test_step_cdf_merges_duplicates_and_normalizes():
    c = StepCdf([0.2, 0.2, 0.8], [1.0, 1.0, 2.0])
    assert c.points.tolist() == [0.2, 0.8]
    assert np.allclose(c.weights, [0.5, 0.5])
    assert np.allclose(c.total_moments(), [1.0, 0.5, 0.5 * 0.04 + 0.5 * 0.64])
    # moments_below is exclusive of the query point itself
    assert np.allclose(c.moments_below(0.8), [0.5, 0.1, 0.02])
    assert np.allclose(c.moments_below(0.81), c.total_moments())


def test_step_cdf_rejects_bad_input():
    with pytest.raises(ValueError):
        StepCdf([], [])
    with pytest.raises(ValueError):
        StepCdf([0.5], [-1.0])
    with pytest.raises(ValueError):
        StepCdf([1.5], [1.0])
    with pytest.raises(ValueError):
        StepCdf([0.5], [0.0])


def test_truncnorm_moments_match_numerical_integration():
    for mu, sigma in [(0.3, 0.2), (0.9, 0.5), (-0.2, 0.4)]:
        c = TruncNormCdf(mu, sigma)
        z = stats.norm.cdf((1 - mu) / sigma) - stats.norm.cdf((0 - mu) / sigma)

        def pdf(u):
            return stats.norm.pdf((u - mu) / sigma) / (sigma * z)

        for x in (0.25, 0.6, 1.0):
            m = c.moments_below(x)
            for k in range(3):
                ref = integrate.quad(lambda u: u ** k * pdf(u), 0.0, x)[0]
                assert m[k] == pytest.approx(ref, abs=1e-9)
    with pytest.raises(ValueError):
        TruncNormCdf(0.5, 0.0)


def test_weighted_cdf_weights_by_squared_norm():
    fam = _fam_two(d=4)
    samples = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0]])
    w = weighted_cdf(samples, fam)
    assert np.allclose(w.lambdas, [0.2, 0.8])
    assert len(w.type_cdfs) == 2


def test_weighted_cdf_all_zero_raises():
    fam = _fam_two(d=4)
    with pytest.raises(AllZeroSamples):
        weighted_cdf(np.zeros((3, 4)), fam)


def test_weighted_cdf_zero_sample_row_is_ignored():
    fam = _fam_two(d=4)
    samples = np.array([[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0]])
    w = weighted_cdf(samples, fam)
    assert np.allclose(w.lambdas, [1.0, 0.0])
    # each type still sees mass 1 from the surviving sample
    for c in w.type_cdfs:
        assert c.total_moments()[0] == pytest.approx(1.0)


def test_weighted_cdf_dimension_check():
    fam = _fam_two(d=4)
    with pytest.raises(ValueError):
        weighted_cdf(np.ones((2, 5)), fam)


def test_fit_truncated_normal_recovers_moments():
    rng = np.random.default_rng(8)
    fam = LevelFamily([LevelSequence([0.0, 1.0])], np.zeros(400, dtype=np.int64))
    samples = np.abs(rng.normal(0.04, 0.015, size=(1, 400)))
    fit = fit_truncated_normal(samples, fam)
    assert fit.degenerate == [False]
    c = fit.type_cdfs[0]
    mean, var = c.mean_var()
    u = np.abs(samples[0]) / np.linalg.norm(samples[0])
    assert mean == pytest.approx(u.mean(), rel=1e-6)
    assert var == pytest.approx(u.var(), rel=1e-5)


def test_fit_truncated_normal_degenerate_falls_back():
    fam = LevelFamily([LevelSequence([0.0, 1.0])], np.zeros(4, dtype=np.int64))
    samples = np.full((2, 4), 0.5)  # all normalized magnitudes identical
    with pytest.warns(DegenerateSample):
        fit = fit_truncated_normal(samples, fam)
    assert fit.degenerate == [True]
    assert isinstance(fit.type_cdfs[0], StepCdf)


def test_quantization_cost_uniform_frozen():
    # integral of u(1-u) du = 1/6 for the bare grid; the midpoint level
    # cuts that to 2 * integral_0^0.5 u(0.5 - u) du = 1/24.
    assert quantization_cost(UniformCdf(), LevelSequence([0.0, 1.0])) == pytest.approx(1 / 6)
    assert quantization_cost(UniformCdf(), LevelSequence([0.0, 0.5, 1.0])) == pytest.approx(
        1 / 24
    )


def test_quantization_cost_zero_on_support_points():
    # A CDF concentrated on the levels themselves costs nothing.
    c = StepCdf([0.0, 0.5, 1.0], [1.0, 1.0, 1.0])
    assert quantization_cost(c, LevelSequence([0.0, 0.5, 1.0])) == pytest.approx(0.0, abs=1e-15)


def test_optimize_levels_uniform_midpoint():
    seq = optimize_levels(UniformCdf(), 1, 512)
    assert np.allclose(seq.levels, [0.0, 0.5, 1.0])
    seq = optimize_levels(UniformCdf(), 3, 512)
    assert np.allclose(seq.levels, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_optimize_levels_budget_zero_and_errors():
    assert optimize_levels(UniformCdf(), 0, 64).levels.tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        optimize_levels(UniformCdf(), -1, 64)
    with pytest.raises(BudgetTooLarge):
        optimize_levels(UniformCdf(), 64, 64)
    with pytest.raises(ValueError):
        optimize_levels(UniformCdf(), 1, 1)


def test_optimize_levels_cost_decreases_with_budget():
    c = StepCdf(np.linspace(0.01, 0.99, 37), np.arange(1.0, 38.0))
    costs = [quantization_cost(c, optimize_levels(c, a, 128)) for a in range(4)]
    assert all(b <= a + 1e-15 for a, b in zip(costs, costs[1:]))


def test_optimize_levels_tracks_concentrated_mass():
    # Nearly all mass near 0.1: the single interior level should land there.
    c = StepCdf([0.1, 0.9], [0.99, 0.01])
    seq = optimize_levels(c, 1, 100)
    assert abs(seq.levels[1] - 0.1) <= 0.05


def test_optimize_levels_matches_exhaustive_small_grid():
    rng = np.random.default_rng(17)
    for _ in range(8):
        pts = rng.random(6)
        c = StepCdf(pts, rng.random(6) + 0.1)
        for alpha in (1, 2):
            best = min(
                quantization_cost(c, [0.0, *(i / 12 for i in comb), 1.0])
                for comb in itertools.combinations(range(1, 12), alpha)
            )
            got = quantization_cost(c, optimize_levels(c, alpha, 12))
            assert got == pytest.approx(best, abs=1e-12)


def test_mqv_objective_weights_types_by_proportion():
    fam = _fam_two(d=4)
    val = mqv_objective(fam, type("W", (), {"type_cdfs": [UniformCdf(), UniformCdf()]}))
    assert val == pytest.approx(0.5 / 24 + 0.5 / 6)
    # A bare CDF (no per-type structure) is applied to every type.
    assert mqv_objective(fam, UniformCdf()) == pytest.approx(0.5 / 24 + 0.5 / 6)


def test_pooled_cdf_mixes_types_by_proportion():
    fam = _fam_two(d=4)
    samples = np.array([[0.6, 0.6, 0.2, 0.2]])
    w = weighted_cdf(samples, fam)
    pooled = pooled_cdf(w, fam)
    total = pooled.total_moments()
    assert total[0] == pytest.approx(1.0)
    # Support is the union of both types' normalized magnitudes.
    norm = np.linalg.norm(samples[0])
    assert np.allclose(np.unique(pooled.points), np.unique(np.abs(samples[0]) / norm))


def test_layerwise_optimum_never_worse_than_pooled():
    rng = np.random.default_rng(23)
    for _ in range(5):
        fam = _fam_two(d=8)
        samples = rng.standard_normal((6, 8)) * np.array([3, 3, 3, 3, 1, 1, 1, 1])
        w = weighted_cdf(samples, fam)
        budget = 2
        per_type = [optimize_levels(w.type_cdfs[m], budget, 64) for m in range(2)]
        layer = sum(
            fam.proportions[m] * quantization_cost(w.type_cdfs[m], per_type[m])
            for m in range(2)
        )
        shared = optimize_levels(pooled_cdf(w, fam), budget, 64)
        pooled = sum(
            fam.proportions[m] * quantization_cost(w.type_cdfs[m], shared)
            for m in range(2)
        )
        assert layer <= pooled + 1e-12
