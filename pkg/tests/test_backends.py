"""The compiled kernels against the pure-Python reference."""
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from least_energy import kernels, radial
from least_energy.mesh import DomainSpec, build_mesh

BACKENDS = kernels.backends()
py = BACKENDS["python"]
cy = BACKENDS.get("cython")
needs_cython = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def _start(p, lam, a):
    s0 = radial._start_s(p, a)
    u0, v0 = radial._series_start(p, lam, a, math.exp(s0))
    return s0, u0, v0


@needs_cython
class TestAgreement:
    @pytest.mark.parametrize("p,lam,a", [(3.0, 0.0, 3.5), (10.0, 1.0, 1.9), (100.0, 0.0, 1.65)])
    def test_radial_integrate(self, p, lam, a):
        s0, u0, v0 = _start(p, lam, a)
        ref = py.radial_integrate(p, lam, s0, 1e-3, 1.0, u0, v0, True)
        got = cy.radial_integrate(p, lam, s0, 1e-3, 1.0, u0, v0, True)
        for x, y in zip(ref[:3], got[:3]):
            assert y == pytest.approx(x, rel=1e-12, nan_ok=True)
        np.testing.assert_allclose(got[3], ref[3], rtol=1e-12, atol=1e-300)
        np.testing.assert_allclose(got[4], ref[4], rtol=1e-10, atol=1e-14)

    def test_radial_no_zero(self):
        # a tiny amplitude behaves like the linear problem and stays positive
        s0, u0, v0 = _start(3.0, 0.0, 0.5)
        for impl in (py, cy):
            sz, vz, _, us, vs = impl.radial_integrate(3.0, 0.0, s0, 1e-2, -3.0, u0, v0, False)
            assert math.isnan(sz) and math.isnan(vz) and len(us) == len(vs) == 0

    @pytest.mark.parametrize("k", [0, 1, 3])
    def test_mode_rk4(self, k):
        h = 1e-2
        psi0, dpsi0 = (1.0, -h / 4) if k == 0 else (h ** k, k * h ** (k - 1))
        a = py.mode_rk4(k, h, psi0, dpsi0, h, 2000)
        b = cy.mode_rk4(k, h, psi0, dpsi0, h, 2000)
        np.testing.assert_allclose(b[0], a[0], rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(b[1], a[1], rtol=1e-12, atol=1e-15)

    def test_p1_local(self):
        mesh = build_mesh(DomainSpec.ellipse(1.5, 1.0), 0.1)
        a_areas, a_loc = py.p1_local(mesh.vertices, mesh.triangles)
        b_areas, b_loc = cy.p1_local(mesh.vertices, mesh.triangles)
        np.testing.assert_allclose(b_areas, a_areas, rtol=1e-14)
        np.testing.assert_allclose(b_loc, a_loc, rtol=1e-13, atol=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1), k2=st.sampled_from([0.0, 1.0, 4.0]),
           mu=st.floats(-5.0, 5.0))
    def test_sweeps(self, seed, k2, mu):
        rng = np.random.default_rng(seed)
        n = 401
        W = -5.0 * rng.random(n)
        E = rng.random(n)
        G = rng.random(n) - 0.5
        h = 0.01
        ta, ia = py.prufer_sweep(k2, mu, 0.3, W, E, G, h, 50.0)
        tb, ib = cy.prufer_sweep(k2, mu, 0.3, W, E, G, h, 50.0)
        assert ia == ib and tb == pytest.approx(ta, rel=1e-12, abs=1e-13)
        ya, za = py.linear_sweep(k2, mu, 0.1, 1.0, W, E, G, h)
        yb, zb = cy.linear_sweep(k2, mu, 0.1, 1.0, W, E, G, h)
        np.testing.assert_allclose(yb, ya, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(zb, za, rtol=1e-12, atol=1e-14)

    def test_prufer_cut(self):
        n = 201
        W = np.linspace(0.0, 100.0, n)
        zero = np.zeros(n)
        for impl in (py, cy):
            _, idx = impl.prufer_sweep(0.0, 0.0, 0.0, W, zero, zero, 0.01, 10.0)
            assert W[idx] > 10.0 and W[idx - 2] <= 10.0


class TestSelection:
    def test_backend_name(self):
        assert kernels.BACKEND == ("cython" if cy is not None else "python")

    def test_fallback_forced_by_env(self):
        code = ("import json, least_energy.kernels as k, least_energy.radial as r;"
                "s = r.shoot(10.0, 0.0);"
                "print(json.dumps([k.BACKEND, s.amplitude, s.c_squared]))")
        env = {**os.environ, "LEAST_ENERGY_KERNELS": "python"}
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True).stdout
        name, amp, c2 = json.loads(out)
        here = radial.shoot(10.0, 0.0)
        assert name == "python"
        assert amp == pytest.approx(here.amplitude, rel=1e-12)
        assert c2 == pytest.approx(here.c_squared, rel=1e-10)
