import math
from importlib import resources

import numpy as np
import pytest
from conftest import random_density, random_product_density
from hypothesis import given, settings
from hypothesis import strategies as st

from qdbell.bell import (
    GRID_ALPHAS,
    GRID_BETAS,
    REFERENCE_ANGLES,
    SINGLET_ANGLES,
    CountTable,
    CountTableParseError,
    MissingEntry,
    ZeroDenominator,
    chsh_best,
    chsh_S,
    correlation_E,
    grid_for,
    norm_angle,
    predicted_counts,
    predicted_table,
    qber_estimate,
    table_from_grid,
)
from qdbell.optics import SourceParams, rho_model
from qdbell.qmath import singlet

TSIRELSON = 2 * math.sqrt(2)


@pytest.fixture
def reference_table():
    text = resources.files("qdbell").joinpath("data/reference_counts.csv").read_text()
    return CountTable.from_csv(text)


def fd_sigma_S(table, angles, h=1e-6):
    """Poisson propagation by numerical differentiation of S over every count."""
    base = chsh_S(table, *angles).S
    var = 0.0
    for key, n in table.entries.items():
        bumped = dict(table.entries)
        bumped[key] = n + h
        dS = (chsh_S(CountTable(bumped), *angles).S - base) / h
        var += dS * dS * n
    return math.sqrt(var)


class TestReferenceTable:
    def test_correlations(self, reference_table):
        # same = N(a,b) + N(a+90,b+90), cross = the two mixed entries
        e = correlation_E(reference_table, 0, 22.5)[0]
        assert e == pytest.approx((8.2 + 6.7 - 42.0 - 42.5) / (8.2 + 6.7 + 42.0 + 42.5), abs=1e-12)
        res = chsh_S(reference_table, *REFERENCE_ANGLES)
        np.testing.assert_allclose(res.E_values, [-0.7002, 0.6989, -0.4909, -0.4867], atol=5e-5)

    def test_S(self, reference_table):
        res = chsh_S(reference_table, *REFERENCE_ANGLES)
        assert res.S == pytest.approx(2.377, abs=0.005)
        assert res.violates

    def test_sigma_matches_numerical_propagation(self, reference_table):
        res = chsh_S(reference_table, *REFERENCE_ANGLES)
        assert res.sigma_S == pytest.approx(fd_sigma_S(reference_table, REFERENCE_ANGLES), rel=1e-5)

    def test_sigma_scales_as_inverse_sqrt_counts(self, reference_table):
        r1 = chsh_S(reference_table, *REFERENCE_ANGLES)
        r4 = chsh_S(reference_table.scaled(4), *REFERENCE_ANGLES)
        assert r4.S == pytest.approx(r1.S, abs=1e-12)
        assert r4.sigma_S == pytest.approx(r1.sigma_S / 2, rel=1e-12)

    def test_best_assignment_is_reference(self, reference_table):
        best = chsh_best(reference_table)
        assert best.S == pytest.approx(chsh_S(reference_table, *REFERENCE_ANGLES).S, abs=1e-12)

    def test_grid_layout_constructor(self, reference_table):
        grid = {b: {a: reference_table[a, b] for a in GRID_ALPHAS} for b in GRID_BETAS}
        assert table_from_grid(grid).entries == reference_table.entries


class TestSinglet:
    def test_tsirelson_at_optimal_assignment(self):
        t = predicted_table(singlet())
        assert chsh_S(t, *SINGLET_ANGLES).S == pytest.approx(TSIRELSON, abs=1e-9)
        assert chsh_best(t).S == pytest.approx(TSIRELSON, abs=1e-9)

    def test_reference_assignment_is_blind_to_singlet(self):
        # E = -cos 2(alpha - beta) makes this assignment cancel exactly
        t = predicted_table(singlet())
        assert chsh_S(t, *REFERENCE_ANGLES).S == pytest.approx(0.0, abs=1e-12)

    @given(a=st.floats(0, 180), b=st.floats(0, 180))
    def test_correlation_law(self, a, b):
        alphas, betas = grid_for(a, a, b, b)
        t = predicted_table(singlet(), alphas, betas)
        assert correlation_E(t, a, b)[0] == pytest.approx(-math.cos(math.radians(2 * (a - b))), abs=1e-9)

    def test_sigma_of_singlet_counts(self):
        # each quadruple: same = 50(1 - c), cross = 50(1 + c) with |c| = 1/sqrt2
        res = chsh_S(predicted_table(singlet()), *SINGLET_ANGLES)
        one = 2 * math.sqrt(50 * (1 - 0.5**0.5) * 50 * (1 + 0.5**0.5) * 100) / 100**2
        np.testing.assert_allclose(res.sigma_E, [one] * 4, rtol=1e-12)
        assert res.sigma_S == pytest.approx(2 * one, rel=1e-12)

    def test_one_sided_quadruple_has_zero_sigma(self):
        t = CountTable({(a, b): (50.0 if (a - b) % 180 == 90 else 0.0)
                        for a in (0, 90) for b in (0, 90)})
        e, s = correlation_E(t, 0, 0)
        assert (e, s) == (-1.0, 0.0)


class TestBounds:
    def test_tsirelson_random(self, rng):
        for _ in range(100):
            rho = random_density(rng, rank=int(rng.integers(1, 5)))
            angles = rng.uniform(0, 180, size=4)
            alphas, betas = grid_for(*angles)
            res = chsh_S(predicted_table(rho, alphas, betas), *angles)
            assert res.S <= TSIRELSON + 1e-9

    def test_separable_bounded_by_two(self, rng):
        for _ in range(100):
            rho = random_product_density(rng)
            angles = rng.uniform(0, 180, size=4)
            alphas, betas = grid_for(*angles)
            assert chsh_S(predicted_table(rho, alphas, betas), *angles).S <= 2 + 1e-9

    def test_no_overlap_source_does_not_violate(self):
        t = predicted_table(rho_model(SourceParams(0.0, 0.0, 0.5)))
        assert chsh_best(t).S <= 2 + 1e-12

    def test_uniform_table(self):
        t = CountTable({(a, b): 25.0 for a in GRID_ALPHAS for b in GRID_BETAS})
        res = chsh_S(t)
        assert res.S == 0.0
        assert not res.violates


class TestQuadruples:
    def test_sum_is_n_quad(self, rng):
        for _ in range(10):
            rho = random_density(rng)
            for a, b in rng.uniform(0, 180, size=(20, 2)):
                total = sum(
                    predicted_counts(rho, x, y, N_quad=100.0)
                    for x in (a, a + 90) for y in (b, b + 90)
                )
                assert total == pytest.approx(100.0, abs=1e-9)

    def test_rejects_nonpositive_n_quad(self):
        with pytest.raises(ValueError):
            predicted_counts(singlet(), 0, 0, N_quad=0)


class TestQber:
    def test_singlet_zero(self):
        for basis in (0.0, 45.0, 22.5):
            assert qber_estimate(singlet(), basis) == pytest.approx(0.0, abs=1e-12)

    def test_mixed_half(self):
        assert qber_estimate(np.eye(4) / 4) == pytest.approx(0.5, abs=1e-12)

    def test_model_diagonal_basis(self):
        # in the D/A basis the error rate is (1 - V)/2 for g2 = 0, R = T
        for V in (0.0, 0.5, 0.8, 1.0):
            assert qber_estimate(rho_model(SourceParams(0.0, V, 0.5)), 45.0) == pytest.approx((1 - V) / 2, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(V=st.floats(0, 1), g_lo=st.floats(0, 0.1), dg=st.floats(1e-4, 0.1))
    def test_monotone_in_g2(self, V, g_lo, dg):
        lo = qber_estimate(rho_model(SourceParams(g_lo, V, 0.5)), 45.0)
        hi = qber_estimate(rho_model(SourceParams(g_lo + dg, V, 0.5)), 45.0)
        assert hi >= lo - 1e-12


class TestCountTable:
    def test_angle_normalization(self):
        assert norm_angle(180) == 0.0
        assert norm_angle(-22.5) == 157.5
        t = CountTable({(0, 22.5): 1.0})
        assert t[180, 202.5] == 1.0

    def test_missing_entry_names_setting(self):
        t = CountTable({(0, 22.5): 1.0})
        with pytest.raises(MissingEntry, match="alpha=45"):
            chsh_S(t, 45, 0, 22.5, 67.5)

    def test_zero_quadruple(self):
        t = CountTable({(a, b): 0.0 for a in GRID_ALPHAS for b in GRID_BETAS})
        with pytest.raises(ZeroDenominator):
            chsh_S(t)

    def test_csv_round_trip(self, reference_table):
        text = reference_table.to_csv()
        assert CountTable.from_csv(text).entries == reference_table.entries
        assert CountTable.from_csv(text).to_csv() == text

    @pytest.mark.parametrize(
        "body, line",
        [
            ("0,22.5,1\n0,22.5,2\n", 3),
            ("0,22.5,-1\n", 2),
            ("0,22.5\n", 2),
            ("0,x,1\n", 2),
        ],
    )
    def test_csv_errors_report_line(self, body, line):
        with pytest.raises(CountTableParseError) as exc:
            CountTable.from_csv("alpha_deg,beta_deg,count\n" + body)
        assert exc.value.line == line

    def test_bad_header(self):
        with pytest.raises(CountTableParseError):
            CountTable.from_csv("a,b,c\n0,0,1\n")
