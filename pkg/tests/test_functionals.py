import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sasakiflow import functionals as fn, geometry as geo


def test_closed_form_I_J(bg):
    phi = 0.5 * (2 * bg.x - 1)
    r = fn.evaluate(bg, phi)
    assert r.I == pytest.approx(1 / 12, abs=1e-7)
    assert r.J == pytest.approx(1 / 24, abs=1e-7)


@pytest.mark.parametrize("c", [-0.4, 0.0, 0.3])
def test_constants(small_bg, c):
    r = fn.evaluate(small_bg, np.full(small_bg.N, c))
    assert (r.I, r.J, r.K) == pytest.approx((0, 0, 0), abs=1e-14)
    assert r.F0 == pytest.approx(-c, abs=1e-14)
    assert r.F_a == pytest.approx(0.0, abs=1e-14)
    assert r.F_b == pytest.approx((small_bg.kappa - 1) * c, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), amp=st.floats(0.05, 1.0))
def test_I_equals_twice_J(small_bg, seed, amp):
    phi = geo.sample_potential(small_bg, geo.SampleSpec(amplitude=amp, symmetry="full"), seed)
    r = fn.evaluate(small_bg, phi)
    assert abs(r.I - 2 * r.J) < 1e-7
    assert r.J >= 0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_path_independence_and_closed_form_K(small_bg, seed):
    phi = geo.sample_potential(small_bg, geo.SampleSpec(amplitude=0.5), seed)
    assert fn.path_independence(small_bg, phi) < 1e-9
    r = fn.evaluate(small_bg, phi)
    assert r.K == pytest.approx(fn.k_energy_closed_form(small_bg, phi), abs=1e-10)


def test_series_evaluator_matches_scalar(small_bg):
    phis = np.stack([geo.sample_potential(small_bg, geo.SampleSpec(), s).values + 0.1 * s for s in range(5)])
    s = fn.SeriesEvaluator(small_bg, chunk=2)(phis)
    for i in range(5):
        r = fn.evaluate(small_bg, phis[i]).as_dict()
        for k, v in r.items():
            assert s[k][i] == pytest.approx(v, rel=1e-12, abs=1e-15), k


def test_path_spec_validation():
    with pytest.raises(ValueError):
        fn.PathSpec(nodes=5)
    with pytest.raises(ValueError):
        fn.PathSpec(kind="cubic")


def test_derivative_check_on_run(small_bg, small_traj):
    d = fn.derivative_check(small_bg, small_traj)
    assert d["J"].max() < 1e-4 and d["K"].max() < 1e-4 and d["I_minus_J"].max() < 1e-4
    assert "I_full" in d["I_variant"]
    assert d["dK_formula"].max() <= 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(-2, 2))
def test_constant_shift_rules(small_bg, seed, c):
    phi = geo.sample_potential(small_bg, geo.SampleSpec(amplitude=0.4, symmetry="full"), seed).values
    a, b = fn.evaluate(small_bg, phi), fn.evaluate(small_bg, phi + c)
    assert b.F0 == pytest.approx(a.F0 - c, abs=1e-12)
    assert b.F_a == pytest.approx(a.F_a, abs=1e-12)
    assert b.F_b == pytest.approx(a.F_b + (small_bg.kappa - 1) * c, abs=1e-12)
    # F0 = -[(I - J) + (1/V) int phi dmu_phi]
    assert a.F0 == pytest.approx(-((a.I - a.J) + a.mean_phi_muphi), abs=1e-7)


def test_k_local_minimum_at_einstein(small_bg):
    for s in range(5):
        psi = geo.sample_potential(small_bg, geo.SampleSpec(), s).values
        for eps in (1e-3, 1e-2, 1e-1):
            assert fn.evaluate(small_bg, eps * psi).K >= -1e-9
