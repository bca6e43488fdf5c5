import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import jn_zeros

from least_energy import radial
from least_energy.limit import bubble_mass, Bubble

J01_SQ = 5.783185962947  # (first zero of J0)^2


@pytest.fixture(scope="module")
def sols():
    return {p: radial.shoot(p, 0.0) for p in (3.0, 10.0, 50.0, 100.0, 200.0)}


class TestBessel:
    def test_unit_disk(self):
        assert radial.bessel_lambda1(1.0) == pytest.approx(J01_SQ, abs=1e-11)
        assert radial.bessel_lambda1(1.0) == pytest.approx(jn_zeros(0, 1)[0] ** 2, rel=1e-13)

    @pytest.mark.parametrize("R", [0.5, 2.0, 3.7])
    def test_scaling(self, R):
        assert radial.bessel_lambda1(R) == pytest.approx(radial.bessel_lambda1(1.0) / R ** 2,
                                                         rel=1e-13)

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            radial.bessel_lambda1(0.0)


class TestShoot:
    @pytest.mark.parametrize("p", [3.0, 10.0, 50.0, 100.0, 200.0])
    def test_invariants(self, sols, p):
        s = sols[p]
        assert s.values[0] == s.amplitude == s.sup_norm
        assert s.derivative[0] == 0.0
        assert abs(s.zero_radius - 1.0) <= 1e-10
        assert s.values[-1] == 0.0
        assert s.monotone()
        assert s.amplitude >= J01_SQ ** (1 / (p - 1))
        assert s.energy_identity_residual() < 1e-6

    def test_large_p_amplitude_window(self, sols):
        assert 1.0 <= sols[100.0].amplitude <= 2.5

    def test_c2p_window(self, sols):
        for p in (10.0, 50.0, 100.0, 200.0):
            assert 1.0 <= sols[p].c_squared * p <= 200.0

    def test_lambda_bound_and_order(self):
        s = radial.shoot(20.0, 1.0)
        assert s.amplitude >= (1.0 + J01_SQ) ** (1 / 19)
        assert s.amplitude > radial.shoot(20.0, 0.0).amplitude

    def test_radius_scaling(self):
        # u_R(r) = R^{-2/(p-1)} u_1(r/R) when lambda = 0
        p = 5.0
        a1 = radial.shoot(p).amplitude
        a2 = radial.shoot(p, disk_radius=2.0).amplitude
        assert a2 == pytest.approx(a1 * 2.0 ** (-2 / (p - 1)), rel=1e-8)

    def test_rescaled_core_mass_tends_to_bubble(self, sols):
        target = bubble_mass(Bubble.canonical(), 4.0)
        errs = [abs(sols[p].rescaled_core_mass(4.0) - target) / target for p in (50.0, 200.0)]
        assert errs[1] < errs[0] and errs[1] < 0.02

    def test_interpolation_matches_grid(self, sols):
        s = sols[10.0]
        idx = [5, 500, len(s.grid) // 2, len(s.grid) - 2]
        assert np.allclose(s(s.grid[idx]), s.values[idx], rtol=1e-12, atol=1e-14)
        assert s(0.0) == pytest.approx(s.amplitude)

    def test_bracket_failure_carries_trace(self, monkeypatch):
        monkeypatch.setattr(radial, "AMPLITUDE_CAP", 1.0)
        with pytest.raises(radial.ShootingError) as exc:
            radial.shoot(3.0)
        assert len(exc.value.trace) == 25

    @pytest.mark.parametrize("kw", [dict(p=1.0), dict(p=3.0, lam=-1.0),
                                    dict(p=3.0, disk_radius=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            radial.shoot(**kw)

    def test_deterministic(self):
        a, b = radial.shoot(30.0, 0.5), radial.shoot(30.0, 0.5)
        assert a.amplitude == b.amplitude and np.array_equal(a.values, b.values)

    @settings(max_examples=8, deadline=None)
    @given(p=st.floats(2.0, 80.0), lam=st.floats(0.0, 3.0))
    def test_property_invariants(self, p, lam):
        s = radial.shoot(p, lam)
        assert abs(s.zero_radius - 1.0) <= 1e-10
        assert s.monotone()
        assert s.amplitude >= (lam + J01_SQ) ** (1 / (p - 1))
        assert s.energy_identity_residual() < 1e-5


class TestProfile:
    def test_origin_is_exact(self, sols):
        cmp = radial.oracle_profile(sols[50.0], [0.0, 1.0])
        assert cmp.discrepancies[0] == 0.0
        assert cmp.window_resolved

    def test_monotone_decrease(self, sols):
        d = [radial.oracle_profile(sols[p]).sup_discrepancy for p in (50.0, 100.0, 200.0)]
        assert d[0] > d[1] > d[2]
        assert d[1] <= 0.05


@pytest.fixture(scope="module")
def modes(sols):
    return {p: radial.radial_linearized_modes(sols[p]) for p in (10.0, 200.0)}


class TestModes:
    @pytest.mark.parametrize("p", [10.0, 200.0])
    def test_index_one(self, modes, p):
        reps = modes[p]
        assert reps[0].negative_count == 1
        assert all(r.negative_count == 0 for r in reps[1:])
        assert radial.morse_index(reps) == 1
        assert [r.multiplicity for r in reps] == [1, 2, 2, 2, 2]

    @pytest.mark.parametrize("p", [10.0, 200.0])
    def test_k1_small_positive(self, modes, p):
        mu1 = modes[p][1].eigenvalues[0]
        assert 0 < mu1 < modes[p][2].eigenvalues[0]
        assert 0 < mu1 < modes[p][0].eigenvalues[1]

    def test_zeta1_overlap(self, sols):
        assert radial.zeta1_overlap(sols[200.0]) >= 0.99

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_matrix_route_agrees_at_moderate_p(self, sols, k):
        s = sols[10.0]
        prufer = radial.mode_eigenvalues(s, k, 2)
        matrix = radial.mode_matrix_eigenvalues(s, k, 2, stride=1)
        assert np.allclose(matrix, prufer, rtol=2e-3)

    def test_eigen_count_brackets(self, sols, modes):
        s = sols[10.0]
        mu = modes[10.0][0].eigenvalues
        assert radial.eigen_count(s, 0, 0.5 * (mu[0] + mu[1])) == 1
        assert radial.eigen_count(s, 0, 0.5 * (mu[1] + mu[2])) == 2

    def test_k_max_too_small(self, sols):
        with pytest.raises(ValueError):
            radial.radial_linearized_modes(sols[10.0], k_max=1)

    def test_coarse_matrix_grid(self, sols):
        with pytest.raises(radial.DiscretizationError):
            radial.mode_matrix_eigenvalues(sols[10.0], 0, 2, stride=10 ** 6)


class TestOutput:
    def test_trace_and_table(self, tmp_path, sols):
        sols[3.0].write_trace(tmp_path / "t.csv")
        with open(tmp_path / "t.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["r", "u", "du_dr"]
        assert len(rows) == len(sols[3.0].grid) + 1
        table = radial.amplitude_table([sols[3.0], sols[10.0]], tmp_path / "a.csv")
        assert [r["p"] for r in table] == [3.0, 10.0]
        assert (tmp_path / "a.csv").read_text().startswith("p,lambda,amplitude,c_squared,epsilon")
        assert math.isclose(table[1]["epsilon"], sols[10.0].epsilon)
