import csv
import math

import numpy as np
import pytest

from least_energy import diagnostics as dg
from least_energy import energy as en
from least_energy import radial
from least_energy.limit import Bubble, bubble_mass
from least_energy.mesh import DomainSpec, build_mesh

# first Dirichlet eigenvalue of the unit disk, j_{0,1}^2
LAMBDA1_DISK = 5.783185962946784


@pytest.fixture(scope="module")
def disk05():
    return build_mesh(DomainSpec.disk(1.0), 0.05)


@pytest.fixture(scope="module")
def uniform_p5(disk05):
    return en.continue_in_p(en.ProblemParams(0.0, 5.0), disk05, en.default_schedule(5.0))[-1]


def _graded(p):
    reps, _ = en.graded_solve(DomainSpec.disk(1.0), en.ProblemParams(0.0, p), base_h=0.05)
    return reps[-1]


@pytest.fixture(scope="module")
def graded18():
    return _graded(18.0)


@pytest.fixture(scope="module")
def graded27():
    return _graded(27.0)


@pytest.fixture(scope="module")
def oracle50():
    return radial.shoot(50.0, 0.0)


class TestGradients:
    def test_linear_function_exact(self, disk05):
        V = disk05.vertices
        u = 2.0 * V[:, 0] - 3.0 * V[:, 1] + 0.5
        g = dg.triangle_gradients(disk05, u)
        np.testing.assert_allclose(g, np.tile([2.0, -3.0], (disk05.n_triangles, 1)), atol=1e-10)
        np.testing.assert_allclose(dg.nodal_gradients(disk05, u),
                                   np.tile([2.0, -3.0], (disk05.n_vertices, 1)), atol=1e-10)

    def test_quadratic_recovery_first_order(self):
        # rms over interior vertices; the max norm is pre-asymptotic at these sizes
        errs = []
        for h in (0.1, 0.05, 0.025):
            mesh = build_mesh(DomainSpec.disk(1.0), h)
            V = mesh.vertices[mesh.interior]
            g = dg.nodal_gradients(mesh, mesh.vertices[:, 0] ** 2)[mesh.interior]
            e = np.hypot(g[:, 0] - 2 * V[:, 0], g[:, 1])
            errs.append(math.sqrt(np.mean(e * e)))
        assert errs[2] < errs[1] < errs[0]
        assert math.log2(errs[0] / errs[2]) / 2 > 0.9


class TestRescaledProfile:
    def test_origin_and_sign(self, graded18):
        cmp = dg.rescaled_profile(graded18)
        at0 = np.all(cmp.sample_points == 0.0, axis=1)
        assert at0.sum() == 1 and cmp.phi_values[at0][0] == 0.0
        assert np.all(cmp.phi_values <= 0.0)
        assert cmp.dropped == 0
        assert len(cmp.sample_points) == 1 + dg.N_ANGLES * len(dg.DEFAULT_RADII)

    def test_bubble_column(self, graded18):
        cmp = dg.rescaled_profile(graded18)
        at4 = np.isclose(cmp.sample_radii, 4.0)
        np.testing.assert_allclose(cmp.bubble_values[at4], -2.0 * math.log(3.0), rtol=1e-12)

    def test_disk_profile_is_even(self, graded18):
        cmp = dg.rescaled_profile(graded18)
        X, phi = cmp.sample_points, cmp.phi_values
        for r in dg.DEFAULT_RADII:
            ring = np.isclose(np.linalg.norm(X, axis=1), r)
            vals = phi[ring]
            half = dg.N_ANGLES // 2
            np.testing.assert_allclose(vals[:half], vals[half:], atol=1e-8)

    def test_discrepancy_small_and_decreasing(self, graded18, graded27):
        d18 = dg.rescaled_profile(graded18)
        d27 = dg.rescaled_profile(graded27)
        assert d18.window_resolved and d27.window_resolved
        assert d27.sup_discrepancy < d18.sup_discrepancy <= 0.3

    def test_coarse_uniform_mesh_flagged(self):
        mesh = build_mesh(DomainSpec.disk(1.0), 0.08)
        rep = en.continue_in_p(en.ProblemParams(0.0, 18.0), mesh, en.default_schedule(18.0))[-1]
        assert not dg.rescaled_profile(rep).window_resolved


class TestStarShape:
    def test_graded_disk_passes(self, graded18):
        st = dg.star_shape_test(graded18)
        assert st.ok and st.tested_triangles > 1000
        assert st.ring_radius == pytest.approx(dg.RING_FACTOR * graded18.epsilon)
        assert st.h_values_on_ring[0] <= st.h_values_on_ring[1] < 0

    def test_ring_inside_bubble_core_is_positive(self, graded18):
        # inside R = sqrt(8) the limit of h has the opposite sign
        st = dg.star_shape_test(graded18, ring_factor=1.0)
        assert st.h_values_on_ring[0] > 0

    def test_h_function_at_max(self, graded18):
        h = dg.h_function(graded18)
        i = int(np.argmax(graded18.solution.values))
        assert h[i] == pytest.approx(2 * graded18.sup_norm / (graded18.p - 1), rel=1e-12)

    def test_csv(self, graded18, tmp_path):
        st = dg.star_shape_test(graded18)
        st.write_csv(tmp_path / "v.csv")
        rows = list(csv.reader(open(tmp_path / "v.csv")))
        assert rows == [["triangle", "x", "y", "inner_product"]]

    def test_forced_violation_reported(self, graded18):
        # move the reference point off the maximum so some triangles point outward
        from dataclasses import replace
        shifted = replace(graded18, max_point=(0.3, 0.0))
        st = dg.star_shape_test(shifted)
        assert st.violations and not st.ok
        tri, (x, y), ip = st.violations[0]
        assert ip >= 0 and math.hypot(x - 0.3, y) > st.excluded_core_radius

    def test_h_equation_residual_small(self, uniform_p5):
        assert dg.h_equation_residual(uniform_p5) < 0.15


class TestSpectrum:
    def test_morse_index_one(self, graded18):
        sp = dg.linearized_spectrum(graded18, k=4, with_vectors=True)
        assert sp.negative_count == 1 and sp.morse_index_ok and sp.nondegenerate_ok
        assert sp.eigenvalues[0] < -1e4
        assert sp.exterior_eigenvalue > 0
        v = sp.eigenvectors[:, 0]
        v = v * np.sign(v[np.argmax(np.abs(v))])
        assert v.min() >= -1e-8 * v.max()

    def test_near_linear_limit(self, disk05):
        # p -> 1: u^{p-1} -> lambda_1, first eigenvalue ~ -(p-1) lambda_1
        p = 1.05
        rep = en.continue_in_p(en.ProblemParams(0.0, p), disk05, en.default_schedule(p))[-1]
        sp = dg.linearized_spectrum(rep, k=3)
        assert sp.eigenvalues[0] == pytest.approx(-(p - 1) * LAMBDA1_DISK, rel=0.02)
        # second eigenvalue near lambda_2 - lambda_1 = j_{1,1}^2 - j_{0,1}^2
        assert sp.eigenvalues[1] == pytest.approx(14.681970642 - LAMBDA1_DISK, rel=0.05)
        assert math.isnan(sp.exterior_eigenvalue)

    def test_operator_shape(self, uniform_p5):
        L, M = dg.linearized_operator(uniform_p5)
        n = len(uniform_p5.mesh.interior)
        assert L.shape == M.shape == (n, n)
        assert abs(L - L.T).max() < 1e-12

    def test_uniform_p5(self, uniform_p5):
        sp = dg.linearized_spectrum(uniform_p5, k=3)
        assert sp.negative_count == 1 and sp.min_abs_eigenvalue > 1.0


class TestBounds:
    def test_columns_and_values(self, oracle50):
        row = dg.bounds_report([oracle50], moser_radius=1.0)[0]
        assert tuple(row) == dg.BOUNDS_COLUMNS
        assert row["sup_norm_pow"] == pytest.approx(oracle50.sup_norm ** 49)
        assert row["c2_p"] == pytest.approx(oracle50.c_squared * 50)
        assert row["sobolev_ratio"] <= 0.181
        assert row["c2_p"] <= row["moser_c2_p"]

    def test_no_moser_radius_gives_nan(self, uniform_p5):
        assert math.isnan(dg.bounds_report([uniform_p5])[0]["moser_c2_p"])

    def test_empty(self):
        with pytest.raises(dg.DiagnosticsError):
            dg.bounds_report([])

    def test_write_rows(self, uniform_p5, tmp_path):
        rows = dg.bounds_report([uniform_p5])
        dg.write_rows(rows, tmp_path / "b.csv")
        back = list(csv.DictReader(open(tmp_path / "b.csv")))
        assert float(back[0]["sup_norm"]) == pytest.approx(uniform_p5.sup_norm, rel=1e-9)
        assert back[0]["moser_c2_p"] == "nan"

    @pytest.mark.parametrize("value,text", [(True, "true"), (np.int64(3), "3"),
                                            (0.1 + 0.2, "0.3"), ("x", "x")])
    def test_fmt(self, value, text):
        assert dg._fmt(value) == text


class TestConcentration:
    def test_oracle(self, oracle50):
        c = dg.concentration_diagnostics(oracle50, radius=2.0)
        assert c.f_max <= 10.0 and c.u_min > 0
        assert c.bubble_mass == pytest.approx(bubble_mass(Bubble.canonical(), 2.0))
        assert c.psi_mass == pytest.approx(c.bubble_mass, rel=0.01)

    def test_graded_matches_oracle_loosely(self, graded18):
        c2d = dg.concentration_diagnostics(graded18)
        c1d = dg.concentration_diagnostics(radial.shoot(18.0, 0.0))
        assert c2d.window_resolved
        assert c2d.psi_mass == pytest.approx(c1d.psi_mass, rel=0.02)
        assert c2d.u_min == pytest.approx(c1d.u_min, rel=0.01)
