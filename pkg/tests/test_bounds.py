import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geobound.bounds import (
    REPORT_CSV_COLUMNS,
    BoundConstants,
    FunctionClassSpec,
    ambient_covering_baseline,
    class_validity_limit,
    confidence_term,
    covering_count,
    curvature_term,
    dudley_entropy_integral,
    dudley_integrand,
    euclidean_baseline,
    evaluate_bounds,
    function_class_log_covering,
    function_class_log_covering_closed_form,
    generalization_bound,
    generalization_from_rademacher,
    improvement,
    manifold_log_covering,
    manifold_log_covering_analytic,
    psi,
    rademacher_bound,
)
from geobound.quadrature import QuadratureBudgetError, adaptive_simpson
from geobound.spaceform import (
    DomainError,
    SpaceFormGeometry,
    pairwise_geodesic_distances,
    sample_uniform_ball,
    unit_ball_volume,
)

C = BoundConstants()


def trapezoid(f, a, b, nodes=100_001):
    x = np.linspace(a, b, nodes)
    y = np.array([f(v) for v in x])
    return float(np.sum(0.5 * (y[1:] + y[:-1])) * (x[1] - x[0]))


def oracle_volume(d, kappa, r, nodes=200_001):
    t = np.linspace(0, r, nodes)
    s = (np.sinh(math.sqrt(-kappa) * t) / math.sqrt(-kappa) if kappa < 0 else
         np.sin(math.sqrt(kappa) * t) / math.sqrt(kappa) if kappa > 0 else t)
    f = s ** (d - 1)
    return d * unit_ball_volume(d) * float(np.sum(0.5 * (f[1:] + f[:-1])) * (t[1] - t[0]))


def greedy_net_size(D, eps):
    """Greedy eps-separated set: every point is within eps of a chosen centre."""
    n = len(D)
    covered = np.zeros(n, bool)
    count = 0
    for i in range(n):
        if not covered[i]:
            count += 1
            covered |= D[i] <= eps
    return count


class TestPsi:
    def test_examples(self):
        assert psi(0.0, 3.0) == 0.0
        assert psi(-4.0, 2.0) == 1.0
        assert psi(1.0, 5.0) == 0.0

    @given(k=st.floats(-10, -1e-6), L=st.floats(0.01, 100))
    def test_scaling(self, k, L):
        assert psi(k, 2 * L) == pytest.approx(psi(k, L) / 2)
        assert psi(k, L) > 0


class TestManifoldCovering:
    def test_flat_example(self):
        # unit disk, eps=1: balls of radius eps/2 have area pi/4
        g = SpaceFormGeometry.ball(2, 0.0, 1.0, inj=10.0)
        assert manifold_log_covering(g, 1.0, C) == pytest.approx(math.log(4), rel=1e-14)
        assert manifold_log_covering(g, 0.5, C) == pytest.approx(math.log(16), rel=1e-14)

    def test_flat_drops_curvature(self):
        g = SpaceFormGeometry.ball(4, 0.0, 2.0)
        assert curvature_term(g, 0.3, C) == 0.0
        expected = math.log(g.vol / (unit_ball_volume(4) * 0.15**4))
        assert manifold_log_covering(g, 0.3, C) == pytest.approx(expected, rel=1e-12)

    def test_hyperbolic_against_oracle(self):
        vol = oracle_volume(2, -1.0, 2.0)
        g = SpaceFormGeometry(d=2, kappa=-1.0, inj=4.0, vol=vol, domain_radius=2.0)
        expected = math.log(vol / oracle_volume(2, -1.0, 0.25)) + 1 * 2 * 1.0 * 0.5
        assert manifold_log_covering(g, 0.5, C) == pytest.approx(expected, rel=1e-8)

    def test_domain_error(self):
        g = SpaceFormGeometry.ball(2, -1.0, 1.0)
        with pytest.raises(DomainError):
            manifold_log_covering(g, g.inj / 2, C)
        with pytest.raises(DomainError):
            manifold_log_covering(g, 0.0, C)

    def test_analytic_is_looser(self):
        for kappa in (-2.0, -0.5, 0.5, 1.0):
            g = SpaceFormGeometry.ball(3, kappa, 1.2)
            for eps in (0.05, 0.3, 0.9):
                assert (manifold_log_covering_analytic(g, eps, C)
                        >= manifold_log_covering(g, eps, C) - 1e-12)

    @pytest.mark.parametrize("d,kappa,R,eps", [
        (2, 0.0, 1.0, 0.2), (2, -1.0, 1.5, 0.3), (2, 1.0, 1.2, 0.25), (3, -0.5, 1.2, 0.4),
        (3, 0.0, 1.0, 0.35), (2, -2.0, 1.0, 0.2), (3, 1.0, 1.5, 0.5), (1, 0.0, 2.0, 0.1),
        (2, -1.0, 2.0, 0.5), (3, -1.0, 1.0, 0.3),
    ])
    def test_packing_oracle(self, d, kappa, R, eps):
        g = SpaceFormGeometry.ball(d, kappa, R)
        X = sample_uniform_ball(g, 500, 17).intrinsic_points
        D = pairwise_geodesic_distances(X, g)
        assert manifold_log_covering(g, eps, C) >= math.log(greedy_net_size(D, eps))


class TestClassCovering:
    def test_trivial_cover(self):
        g = SpaceFormGeometry.ball(1, 0.0, 1.0, inj=100.0)
        spec = FunctionClassSpec(L=0.1, B=1.0)
        assert function_class_log_covering(g, spec, 0.5, C) == pytest.approx(math.log(8.0))

    def test_grid_function_cover_dominance(self):
        # explicit cover on [-1, 1]: eps/(2L)-net of centres, values on an
        # eps/2 grid, each function piecewise constant on the centres' cells
        mesh = np.linspace(-1, 1, 2001)
        rng = np.random.default_rng(0)
        for L, B, eps in [(1, 1, 0.5), (2, 1, 0.4), (1, 2, 0.3), (0.5, 1, 0.6), (3, 0.5, 0.2)]:
            g = SpaceFormGeometry.ball(1, 0.0, 1.0, inj=100.0)
            spec = FunctionClassSpec(L=L, B=B)
            r = eps / (2 * L)
            D = np.abs(mesh[:, None] - mesh[None])
            # evenly spaced r-net of [-1, 1]
            pos = -1 + r * (2 * np.arange(math.ceil(1 / r)) + 1)
            centres = sorted({int(np.argmin(np.abs(mesh - p))) for p in pos})
            assert np.all(np.min(D[:, centres], axis=1) <= r + 1e-3)
            values = np.arange(-B, B + 1e-12, eps / 2)
            log_explicit = len(centres) * math.log(len(values))
            assert function_class_log_covering(g, spec, eps, C) >= log_explicit
            # the construction really is an eps-cover for random L-Lipschitz f
            nearest = np.array(centres)[np.argmin(D[:, centres], axis=1)]
            for _ in range(5):
                steps = rng.uniform(-L, L, len(mesh) - 1) * np.diff(mesh)
                f = np.clip(np.concatenate([[0], np.cumsum(steps)]), -B, B)
                cf = values[np.argmin(np.abs(f[centres][:, None] - values[None]), axis=1)]
                approx = cf[np.searchsorted(centres, nearest)]
                assert np.max(np.abs(f - approx)) <= eps

    def test_halving_eps_increases(self):
        g = SpaceFormGeometry.ball(2, -1.0, 1.5)
        spec = FunctionClassSpec(L=1.0, B=1.0)
        assert (function_class_log_covering(g, spec, 0.1, C)
                >= function_class_log_covering(g, spec, 0.2, C))

    def test_preconditions(self):
        g = SpaceFormGeometry.ball(2, -1.0, 1.0)
        spec = FunctionClassSpec(L=2.0, B=1.0)
        with pytest.raises(DomainError):
            function_class_log_covering(g, spec, class_validity_limit(g, spec), C)
        with pytest.raises(DomainError):
            function_class_log_covering(g, FunctionClassSpec(L=0.1, B=0.5), 0.6, C)

    def test_closed_form_value(self):
        g = SpaceFormGeometry.ball(3, -1.0, 1.0)
        spec = FunctionClassSpec(L=2.0, B=1.0)
        eps = 0.2
        br = 3 * math.log(2 * 2 / eps) + 1 * 1 * eps / 2 + math.log(g.vol / unit_ball_volume(3))
        assert function_class_log_covering_closed_form(g, spec, eps, C) == pytest.approx(
            br * math.log(4 / eps), rel=1e-12)

    def test_covering_count_rounding(self):
        assert covering_count(math.log(8.0)) == 8
        assert covering_count(-3.0) == 1
        assert math.isinf(covering_count(1e6))


class TestDudley:
    CONFIGS = [
        (3, -1.0, 2.0, 1.0, 1.0, 10_000),
        (2, 0.0, 1.0, 1.0, 1.0, 1000),
        (3, 1.0, 1.5, 1.5, 1.0, 5000),
        (2, -2.0, 1.0, 0.5, 2.0, 2000),
        (4, -0.5, 1.5, 2.0, 1.5, 50_000),
    ]

    @pytest.mark.parametrize("d,kappa,R,L,B,n", CONFIGS)
    def test_trapezoid_oracle(self, d, kappa, R, L, B, n):
        g = SpaceFormGeometry.ball(d, kappa, R)
        spec = FunctionClassSpec(L=L, B=B)
        rad = rademacher_bound(g, spec, n, C)
        f = dudley_integrand(g, spec, C)
        ent = trapezoid(f, rad.alpha, B)
        assert rad.entropy_integral == pytest.approx(ent, rel=1e-4)
        assert rad.integral == pytest.approx(4 * rad.alpha + 12 / math.sqrt(n) * ent, rel=1e-4)

    def test_large_n_smaller(self):
        g = SpaceFormGeometry.ball(3, -1.0, 2.0)
        spec = FunctionClassSpec()
        small = rademacher_bound(g, spec, 10**8, C)
        big = rademacher_bound(g, spec, 10**2 * 10, C)
        assert small.integral < big.integral and small.asymptotic < big.asymptotic

    def test_curvature_increases(self):
        spec = FunctionClassSpec()
        a = rademacher_bound(SpaceFormGeometry.ball(3, -1.0, 1.5), spec, 5000, C)
        b = rademacher_bound(SpaceFormGeometry.ball(3, 0.0, 1.5), spec, 5000, C)
        assert a.integral > b.integral

    def test_alpha_precondition(self):
        g = SpaceFormGeometry.ball(3, -1.0, 0.5)
        with pytest.raises(DomainError):
            rademacher_bound(g, FunctionClassSpec(L=5.0), 10, C)
        with pytest.raises(DomainError):
            rademacher_bound(g, FunctionClassSpec(), 1, C)

    def test_integrand_tail_uses_closed_form(self):
        g = SpaceFormGeometry.ball(2, -1.0, 0.5)
        spec = FunctionClassSpec(L=1.0, B=3.0)
        f = dudley_integrand(g, spec, C)
        lim = class_validity_limit(g, spec)
        eps = (lim + 3.0) / 2
        assert f(eps) == pytest.approx(
            math.sqrt(max(function_class_log_covering_closed_form(g, spec, eps, C), 0)))

    def test_reference_value(self):
        # frozen output of the trapezoid oracle for d=3, kappa=-1, Vol=V(2), n=1e4
        g = SpaceFormGeometry.ball(3, -1.0, 2.0)
        rad = rademacher_bound(g, FunctionClassSpec(), 10_000, C)
        assert rad.entropy_integral == pytest.approx(510.1118, rel=1e-6)

    def test_flat_staircase_exact(self):
        # d=2, R=1, L=B=1: ceil(16/eps^2) = k on [4/sqrt(k), 4/sqrt(k-1)),
        # integrated piece by piece with scipy quad; frozen 14.58291645609575
        g = SpaceFormGeometry.ball(2, 0.0, 1.0)
        ent = dudley_entropy_integral(g, FunctionClassSpec(), 0.1, C)
        assert ent == pytest.approx(14.58291645609575, rel=1e-9)

    def test_many_jumps_within_budget(self):
        # ~10^7 distinct covering counts between alpha and B
        g = SpaceFormGeometry.ball(3, 0.0, 2.0)
        rad = rademacher_bound(g, FunctionClassSpec(), 10_000, C)
        f = dudley_integrand(g, FunctionClassSpec(), C)
        assert math.isfinite(rad.entropy_integral)
        assert rad.entropy_integral == pytest.approx(trapezoid(f, rad.alpha, 1.0), rel=1e-3)


class TestGeneralization:
    def test_composition(self):
        g = SpaceFormGeometry.ball(3, -1.0, 2.0)
        spec = FunctionClassSpec(L=1.0, B=1.0, L_loss=1.0)
        rad = rademacher_bound(g, spec, 10_000, C).integral
        expected = 2 * rad + 3 * math.sqrt(math.log(2 / 0.05) / 20_000)
        assert generalization_bound(g, spec, 10_000, C) == pytest.approx(expected, rel=1e-12)

    def test_zero_loss_lipschitz_limit(self):
        spec = FunctionClassSpec(L=1.0, B=1.0, L_loss=1e-300)
        assert generalization_from_rademacher(0.7, spec, 100, C) == pytest.approx(
            confidence_term(1.0, 100, 0.05), rel=1e-12)

    def test_confidence_linear_in_B(self):
        assert confidence_term(2.0, 500, 0.05) == pytest.approx(2 * confidence_term(1.0, 500, 0.05))


class TestBaselines:
    def test_scaling(self):
        spec = FunctionClassSpec()
        assert euclidean_baseline(100, spec, 400, C).rademacher == pytest.approx(
            euclidean_baseline(100, spec, 100, C).rademacher / 2)
        ratio = (euclidean_baseline(100, spec, 50, C).rademacher
                 / euclidean_baseline(3, spec, 50, C).rademacher)
        assert ratio == pytest.approx(math.sqrt(100 / 3))

    def test_improvement(self):
        assert improvement(1.0, 1.0) == 0.0
        assert improvement(0.0, 1.0) == 100.0
        assert improvement(0.25, 1.0) == 75.0
        assert improvement(2.0, 1.0) < 0
        with pytest.raises(ValueError):
            improvement(1.0, 0.0)

    def test_swiss_roll_row_positive(self):
        # Table-1-style inputs: D=3, d~2, kappa=0.2553 on a cap
        g = SpaceFormGeometry.ball(2, 0.2553, 3.0)
        rep = evaluate_bounds(g, FunctionClassSpec(), 5000, 3, C)
        assert rep.improvement_pct > 0

    def test_ambient_baseline_is_flat_dudley(self):
        spec = FunctionClassSpec()
        base = ambient_covering_baseline(5, 2.0, spec, 10_000, C)
        ref = generalization_bound(SpaceFormGeometry.ball(5, 0.0, 2.0), spec, 10_000, C)
        assert base.generalization == pytest.approx(ref)

    def test_invalid_ambient_baseline_is_nan(self):
        # D=100: n^{-1/D} ~ 0.93 exceeds the flat ball's validity limit at L=5
        g = SpaceFormGeometry.ball(3, 0.0, 1.5)
        rep = evaluate_bounds(g, FunctionClassSpec(L=5.0), 1000, 100, C)
        assert math.isfinite(rep.gen_bound)
        assert math.isnan(rep.ambient_gen_bound) and math.isnan(rep.improvement_pct)
        assert "ambient_error" in rep.extra


class TestReport:
    def test_columns_and_json(self):
        g = SpaceFormGeometry.ball(3, -1.0, 2.0)
        rep = evaluate_bounds(g, FunctionClassSpec(), 10_000, 100, C)
        row = rep.csv_row()
        assert list(row)[:13] == REPORT_CSV_COLUMNS[:13]
        back = json.loads(rep.to_json())
        assert back["gen_bound"] == rep.gen_bound
        for col in REPORT_CSV_COLUMNS[8:]:
            assert math.isfinite(row[col])
        assert rep.improvement_pct <= 100

    def test_constants_parse(self):
        c = BoundConstants.parse("c_pack=2, big_o_scale=0.5")
        assert c.c_pack == 2 and c.big_o_scale == 0.5 and c.delta == 0.05
        with pytest.raises(ValueError):
            BoundConstants.parse("nope=1")
        with pytest.raises(ValueError):
            BoundConstants(delta=1.5)


KAPPAS = [0.0, -0.5, -1.0, -2.0, -4.0]
NS = [100, 316, 1000, 3162, 10_000]


def _all_bounds(g, spec, n, eps):
    rad = rademacher_bound(g, spec, n, C)
    return np.array([manifold_log_covering(g, eps, C),
                     function_class_log_covering(g, spec, eps, C),
                     function_class_log_covering_closed_form(g, spec, eps, C),
                     rad.integral, rad.asymptotic, generalization_bound(g, spec, n, C)])


@pytest.mark.parametrize("fixed_vol", [False, True])
def test_monotone_in_curvature(fixed_vol):
    spec = FunctionClassSpec(L=1.0, B=1.0)
    prev = None
    for k in KAPPAS:
        g = SpaceFormGeometry.ball(3, k, 2.0, vol=10.0 if fixed_vol else None)
        cur = _all_bounds(g, spec, 10_000, 0.1)
        if prev is not None:
            assert np.all(cur >= prev - 1e-12)
        prev = cur


def test_monotone_in_n():
    spec = FunctionClassSpec()
    for k in KAPPAS:
        g = SpaceFormGeometry.ball(3, k, 2.0)
        vals = [rademacher_bound(g, spec, n, C) for n in NS]
        for a, b in zip(vals, vals[1:]):
            assert b.integral <= a.integral and b.asymptotic <= a.asymptotic
        gens = [generalization_bound(g, spec, n, C) for n in NS]
        assert all(b <= a for a, b in zip(gens, gens[1:]))


def test_monotone_in_B_and_L():
    g = SpaceFormGeometry.ball(3, -1.0, 2.0)
    Bs = [rademacher_bound(g, FunctionClassSpec(B=B), 10_000, C).integral for B in (0.5, 1, 2, 4)]
    Ls = [rademacher_bound(g, FunctionClassSpec(L=L), 10_000, C).integral for L in (0.5, 1, 2, 4)]
    assert Bs == sorted(Bs) and Ls == sorted(Ls)


class TestQuadrature:
    def test_polynomial_exact(self):
        assert adaptive_simpson(lambda x: x**3 - 2 * x, 0, 2) == pytest.approx(0.0, abs=1e-12)

    def test_sqrt_singular_endpoint(self):
        assert adaptive_simpson(math.sqrt, 0, 1, rtol=1e-9) == pytest.approx(2 / 3, rel=1e-7)

    def test_reversed_and_empty(self):
        assert adaptive_simpson(math.exp, 1, 0) == pytest.approx(-(math.e - 1), rel=1e-8)
        assert adaptive_simpson(math.exp, 1, 1) == 0.0

    def test_budget(self):
        with pytest.raises(QuadratureBudgetError):
            adaptive_simpson(lambda x: math.sin(1 / x), 1e-6, 1, rtol=1e-12, max_evals=500)


@settings(max_examples=25, deadline=None)
@given(kappa=st.floats(-4, 0), d=st.integers(2, 5), logn=st.floats(3, 6))
def test_rademacher_nonnegative_property(kappa, d, logn):
    g = SpaceFormGeometry.ball(d, kappa, 1.5)
    rad = rademacher_bound(g, FunctionClassSpec(), int(10**logn), C)
    assert rad.integral > 0 and rad.asymptotic >= 0
