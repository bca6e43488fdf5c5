import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from least_energy import energy as en
from least_energy import radial
from least_energy.mesh import DomainSpec, build_mesh, reflection_permutation

# radial shooting oracle, unit disk, lambda = 0, p = 3 (computed by radial.shoot)
ORACLE_SUP_P3 = 3.573900982


@pytest.fixture(scope="module")
def disk02():
    return build_mesh(DomainSpec.disk(1.0), 0.02)


@pytest.fixture(scope="module")
def disk05():
    return build_mesh(DomainSpec.disk(1.0), 0.05)


@pytest.fixture(scope="module")
def disk_p3(disk02):
    return en.minimize(en.ProblemParams(0.0, 3.0), disk02)


class TestParamsAndField:
    @pytest.mark.parametrize("lam,p", [(0.0, 1.0), (0.0, 0.5), (-1.0, 3.0), (0.0, float("nan"))])
    def test_invalid_params(self, lam, p):
        with pytest.raises(ValueError):
            en.ProblemParams(lam, p)

    def test_params_cast(self):
        assert en.ProblemParams(1, 3) == en.ProblemParams(1.0, 3.0)

    def test_boundary_must_vanish(self, disk05):
        v = np.zeros(disk05.n_vertices)
        v[np.nonzero(disk05.boundary_mask)[0][0]] = 1e-300
        with pytest.raises(ValueError, match="boundary"):
            en.Field(disk05, v)

    def test_nonfinite_rejected(self, disk05):
        v = np.zeros(disk05.n_vertices)
        v[disk05.interior[0]] = np.nan
        with pytest.raises(ValueError, match="finite"):
            en.Field(disk05, v)


class TestQuotient:
    def test_p_one_is_rayleigh_quotient(self):
        mesh = build_mesh(DomainSpec.rectangle(1, 1), 0.02)
        phi, lam1 = en.first_eigenfunction(mesh)
        assert en.quotient_value(phi, 0.0, 1.0) == pytest.approx(lam1, rel=1e-10)
        assert lam1 == pytest.approx(2 * math.pi ** 2, rel=0.01)

    @settings(max_examples=30, deadline=None)
    @given(t=st.floats(1e-3, 1e3), p=st.floats(1.5, 60.0), neg=st.booleans())
    def test_scale_invariance(self, disk05, t, p, neg):
        phi, _ = en.first_eigenfunction(disk05)
        params = en.ProblemParams(0.7, p)
        scaled = en.Field(disk05, (-t if neg else t) * phi.values)
        assert en.quotient(scaled, params) == pytest.approx(en.quotient(phi, params), rel=1e-12)

    def test_lambda_linearity(self, disk05):
        u = en.bump(disk05, (0.1, -0.2), 0.4)
        p = 5.0
        ops = en.operators(disk05)
        v = u.interior_values
        extra = 5.0 * (ops.m @ v ** 2) / (ops.m @ v ** (p + 1)) ** (2 / (p + 1))
        diff = en.quotient(u, en.ProblemParams(5.0, p)) - en.quotient(u, en.ProblemParams(0.0, p))
        assert diff == pytest.approx(extra, rel=1e-12)

    def test_zero_field(self, disk05):
        with pytest.raises(ValueError):
            en.quotient(en.Field(disk05, np.zeros(disk05.n_vertices)), en.ProblemParams(0, 3))


class TestOddPower:
    def test_matches_direct_power(self):
        v = np.array([-2.0, -0.5, 0.0, 0.3, 1.7])
        assert np.allclose(en.odd_power(v, 7.0), np.sign(v) * np.abs(v) ** 7, rtol=1e-14)

    def test_log_floor_avoids_underflow(self):
        out = en.odd_power(np.array([1e-30]), 200.0)
        assert out[0] > 0 and out[0] == pytest.approx(math.exp(-700.0))

    def test_overflow_instructs_log_domain(self):
        with pytest.raises(en.PowerOverflowError, match="log_domain"):
            en.odd_power(np.array([1e10]), 40.0, log_domain=False)


class TestMinimize:
    def test_disk_p3_matches_oracle(self, disk_p3):
        assert radial.shoot(3.0).sup_norm == pytest.approx(ORACLE_SUP_P3, rel=1e-8)
        assert disk_p3.sup_norm == pytest.approx(ORACLE_SUP_P3, rel=0.01)
        assert disk_p3.pde_residual <= 1e-9

    def test_quotient_of_solution_is_c_squared(self, disk_p3):
        assert en.quotient(disk_p3.solution, disk_p3.params) == pytest.approx(
            disk_p3.c_squared, rel=1e-10)

    def test_report_invariants(self, disk_p3):
        mesh = disk_p3.mesh
        assert disk_p3.c_squared > 0
        assert disk_p3.sup_norm == disk_p3.solution.values.max()
        assert not mesh.boundary_mask[disk_p3.max_index]
        assert np.all(disk_p3.solution.interior_values > 0)

    def test_energy_identity(self, disk_p3):
        lhs = disk_p3.grad_sq + disk_p3.lam * disk_p3.l2_sq
        assert lhs == pytest.approx(disk_p3.integral_power(disk_p3.p + 1), rel=1e-8)

    @pytest.mark.parametrize("spec", [DomainSpec.rectangle(1, 1), DomainSpec.ellipse(1.5, 1.0),
                                      DomainSpec.convex_polygon([[0, 0], [2, 0], [1, 1.5]])])
    @pytest.mark.parametrize("p", [2.0, 5.0])
    def test_amplitude_lower_bound(self, spec, p):
        mesh = build_mesh(spec, 0.08)
        _, lam1h = en.first_eigenfunction(mesh)
        rep = en.minimize(en.ProblemParams(0.0, p), mesh)
        assert rep.sup_norm ** (p - 1) >= lam1h
        assert np.all(rep.solution.interior_values > 0)

    @pytest.mark.parametrize("spec", [DomainSpec.disk(1.0), DomainSpec.rectangle(1, 1),
                                      DomainSpec.ellipse(1.5, 1.0)])
    def test_symmetric_solutions_on_symmetric_meshes(self, spec):
        mesh = build_mesh(spec, 0.06)
        rep = en.minimize(en.ProblemParams(1.0, 7.0), mesh)
        u = rep.solution.values
        for axis in (0, 1):
            perm = reflection_permutation(mesh, axis)
            assert np.abs(u[perm] - u).max() <= 1e-10 * u.max()

    def test_lambda_raises_energy(self, disk05):
        a = en.minimize(en.ProblemParams(0.0, 4.0), disk05).c_squared
        b = en.minimize(en.ProblemParams(2.0, 4.0), disk05).c_squared
        assert b > a

    def test_zero_init_rejected(self, disk05):
        with pytest.raises(ValueError):
            en.minimize(en.ProblemParams(0, 3), disk05,
                        init=en.Field(disk05, np.zeros(disk05.n_vertices)))

    def test_stagnation_carries_last_iterate(self):
        mesh = build_mesh(DomainSpec.rectangle(1, 1), 0.1)
        with pytest.raises(en.StagnationError) as exc:
            en.minimize(en.ProblemParams(0, 3), mesh, switch_tol=0.0, max_iter=100000)
        assert exc.value.field.mesh is mesh
        assert np.all(exc.value.field.interior_values > 0)

    def test_deterministic(self, disk05):
        a = en.minimize(en.ProblemParams(0.5, 6.0), disk05)
        b = en.minimize(en.ProblemParams(0.5, 6.0), disk05)
        assert np.array_equal(a.solution.values, b.solution.values)


class TestBranches:
    def test_random_starts_agree_on_the_square(self):
        mesh = build_mesh(DomainSpec.rectangle(1, 1), 0.06)
        spread = en.branch_spread(en.ProblemParams(0.0, 6.0), mesh, seeds=(0, 1, 2, 3))
        assert spread.level_spread < 1e-9
        assert spread.point_spread <= mesh.h_max

    def test_random_start_is_positive_and_seeded(self, disk05):
        a = en.random_positive(disk05, 3)
        assert np.all(a.interior_values > 0)
        assert np.array_equal(a.values, en.random_positive(disk05, 3).values)
        assert not np.array_equal(a.values, en.random_positive(disk05, 4).values)


class TestContinuation:
    def test_schedule_reports_and_scalings(self, disk05):
        sched = [3, 5, 8, 12, 18, 27, 40]
        reps = en.continue_in_p(en.ProblemParams(0.0, 40.0), disk05, sched)
        assert [r.p for r in reps] == sched
        assert reps[-1].p_path == tuple(float(s) for s in sched)
        c2p = [r.c_squared * r.p for r in reps]
        energy = [r.p * r.integral_power(r.p + 1) for r in reps]
        # both tend to 8*pi*e; a single constant bounds the whole schedule
        bound = 2 * 8 * math.pi * math.e
        assert max(c2p) < bound and max(energy) < bound
        assert all(r.pde_residual <= 1e-9 for r in reps)
        assert reps[0].drift == 0 and all(r.drift >= 0 for r in reps)
        # the uniform amplitude bound is a large-p statement (the p = 3 amplitude is 3.57)
        assert max(r.sup_norm for r in reps if r.p >= 8) <= 3.0

    def test_singleton_equals_minimize(self, disk05):
        params = en.ProblemParams(0.0, 4.0)
        (rep,) = en.continue_in_p(params, disk05, [4.0])
        direct = en.minimize(params, disk05)
        assert np.array_equal(rep.solution.values, direct.solution.values)

    @pytest.mark.parametrize("sched", [[3, 3, 5], [3, 8, 6], [3, 5], [6, 8]])
    def test_schedule_validation(self, disk05, sched):
        with pytest.raises(ValueError):
            en.continue_in_p(en.ProblemParams(0.0, 8.0), disk05, sched)

    def test_failure_names_stage(self, disk05):
        with pytest.raises(en.ContinuationError, match="stage 0") as exc:
            en.continue_in_p(en.ProblemParams(0.0, 5.0), disk05, [3, 5], newton_max=0,
                            max_iter=1)
        assert exc.value.stage == 0 and exc.value.completed == []

    def test_default_schedule(self):
        s = en.default_schedule(40.0)
        assert s[0] == 3.0 and s[-1] == 40.0
        assert all(b / a <= 1.5 + 1e-12 for a, b in zip(s, s[1:]))
        assert en.default_schedule(2.5) == [2.5]


class TestGraded:
    def test_graded_disk_resolves_core(self):
        reps, mesh = en.graded_solve(DomainSpec.disk(1.0), en.ProblemParams(0.0, 18.0))
        last = reps[-1]
        oracle = radial.shoot(18.0)
        assert last.sup_norm == pytest.approx(oracle.sup_norm, rel=5e-3)
        assert mesh.local_h(last.max_point) <= last.epsilon / 4
        assert last.pde_residual <= 1e-9

    def test_transfer_interpolates(self, disk05):
        fine = build_mesh(DomainSpec.disk(1.0), 0.03)
        x = disk05.vertices
        f = en.Field(disk05, np.where(disk05.boundary_mask, 0.0, 1.0 - x[:, 0] ** 2 - x[:, 1] ** 2))
        g = en.transfer(f, fine)
        assert np.all(g.values[fine.boundary_mask] == 0)
        assert np.abs(g.interior_values - (1 - (fine.vertices[fine.interior] ** 2).sum(1))).max() < 0.01


class TestSnapshots:
    def test_round_trip(self, tmp_path, disk_p3):
        en.write_field(disk_p3, tmp_path / "u.field")
        head = (tmp_path / "u.field").read_text().splitlines()[0]
        assert head == f"field vertices={disk_p3.mesh.n_vertices} p=3.0 lambda=0.0"
        fld, p, lam = en.read_field(tmp_path / "u.field", disk_p3.mesh)
        assert (p, lam) == (3.0, 0.0)
        assert np.array_equal(fld.values, disk_p3.solution.values)

    def test_not_a_snapshot(self, tmp_path, disk05):
        (tmp_path / "x").write_text("vertices 3\n")
        with pytest.raises(ValueError):
            en.read_field(tmp_path / "x", disk05)
