import numpy as np
import pytest
from scipy.linalg import expm

from nessim import ChainParams, Model, State, extended_energy, power_spec
from nessim.scaling_analysis import (bound_matrix_check, dissipation_scan,
                                     rescale, rescaled_energy,
                                     sample_energy_shell, tracking_deviation,
                                     unrescale)

QUARTIC = power_spec(one_body=[(1.0, 4)], two_body=[(1.0, 4)])
MIXED = power_spec(one_body=[(0.5, 2)], two_body=[(1.0, 4)])


def quartic_model(t1=0.0, tn=0.0, n=4):
    return Model(QUARTIC, ChainParams(n=n, d=1, lam=1.0, gamma=1.0,
                                      temperatures=(t1, tn)))


def test_rescale_identity_at_unit_energy():
    rng = np.random.default_rng(0)
    x = State(p=rng.standard_normal((3, 1)), q=rng.standard_normal((3, 1)),
              r=rng.standard_normal((2, 1)))
    y = rescale(x, 1.0, 4)
    assert np.array_equal(x.p, y.p) and np.array_equal(x.q, y.q) \
        and np.array_equal(x.r, y.r)


def test_rescale_k2_equals_2_halves_everything():
    x = State(p=np.ones((2, 1)), q=np.ones((2, 1)), r=np.ones((2, 1)))
    y = rescale(x, 4.0, 2)
    assert np.allclose(y.p, 0.5) and np.allclose(y.q, 0.5) \
        and np.allclose(y.r, 0.5)


def test_rescale_roundtrip():
    rng = np.random.default_rng(1)
    x = State(p=rng.standard_normal((3, 2)), q=rng.standard_normal((3, 2)),
              r=rng.standard_normal((2, 2)))
    y = unrescale(rescale(x, 37.5, 4), 37.5, 4)
    assert np.allclose(y.p, x.p, rtol=1e-15)
    assert np.allclose(y.q, x.q, rtol=1e-15)
    with pytest.raises(ValueError):
        rescale(x, 0.0, 4)


def test_energy_scaling_identity():
    # G(x) = E * G~_E(rescale(x)) for states on the shell G = E
    model = quartic_model()
    rng = np.random.default_rng(2)
    for energy in (10.0, 1e4):
        x = sample_energy_shell(model, energy, rng, mode="full")
        g = extended_energy(model.spec, model.params, x)
        gt = rescaled_energy(model.spec, model.params,
                             rescale(x, energy, model.k2), energy)
        assert g == pytest.approx(energy, rel=1e-9)
        assert energy * gt == pytest.approx(g, rel=1e-12)


def test_rescaled_energy_homogeneous_is_e_independent():
    model = quartic_model()
    x = State.zeros(model.params)
    x.q[1, 0] = 1.0
    vals = [rescaled_energy(model.spec, model.params, x, e)
            for e in (1e2, 1e4, 1e8)]
    # pure quartic: one-body 1 + two pair terms 1 each, minus no boundary
    # correction at interior sites
    assert np.allclose(vals, vals[0], rtol=1e-12)


def test_rescaled_energy_one_body_fades_when_k1_smaller():
    model = Model(MIXED, ChainParams(n=3, d=1, lam=0.0, gamma=1.0,
                                     temperatures=(0.0, 0.0)))
    x = State.zeros(model.params)
    x.q[1, 0] = 1.0
    vals = np.array([rescaled_energy(model.spec, model.params, x, e)
                     for e in (1e2, 1e4, 1e6, 1e8)])
    # quartic pair part is scale-free (= 2), the quadratic one-body decays
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] == pytest.approx(2.0, rel=1e-3)


def test_rescaled_energy_r_term_fades():
    model = quartic_model()
    x = State.zeros(model.params)
    x.r[0, 0] = 1.0
    vals = [rescaled_energy(model.spec, model.params, x, e)
            for e in (1e2, 1e6)]
    assert vals[0] == pytest.approx(0.5 * 1e2 ** (-0.5), rel=1e-12)
    assert vals[1] == pytest.approx(0.5 * 1e6 ** (-0.5), rel=1e-12)


def test_sample_energy_shell_modes():
    model = quartic_model(t1=1.0, tn=1.0)
    rng = np.random.default_rng(3)
    x = sample_energy_shell(model, 50.0, rng, mode="interior")
    assert np.all(x.p == 0) and np.all(x.r == 0)
    assert np.all(x.q[0] == 0) and np.all(x.q[-1] == 0)
    assert extended_energy(model.spec, model.params, x) == \
        pytest.approx(50.0, rel=1e-9)
    y = sample_energy_shell(model, 50.0, rng, mode="full")
    assert extended_energy(model.spec, model.params, y) == \
        pytest.approx(50.0, rel=1e-9)
    with pytest.raises(ValueError):
        sample_energy_shell(model, -1.0, rng)


def test_dissipation_scan_slope():
    model = quartic_model()
    report = dissipation_scan(model, [1e2, 1e4, 1e6], tau=1.0,
                              samples_per_e=3, seed=7)
    assert report.predicted_slope == pytest.approx(0.25)
    assert abs(report.slope - 0.25) < 0.1
    assert all(s.status == "ok" for s in report.samples)
    assert all(s.delta_g > 0 for s in report.samples)


def test_dissipation_scan_requires_zero_temperature():
    with pytest.raises(ValueError):
        dissipation_scan(quartic_model(t1=1.0, tn=1.0), [1e2, 1e4])


def test_dissipation_scan_excludes_fixed_points():
    model = quartic_model()
    calls = []

    def sampler(mdl, energy, rng):
        calls.append(energy)
        if len(calls) % 2 == 0:
            return State.zeros(mdl.params)  # fixed point: no dissipation
        return sample_energy_shell(mdl, energy, rng, mode="interior")

    report = dissipation_scan(model, [1e2, 1e3], samples_per_e=2,
                              init_sampler=sampler, seed=0)
    excluded = [s for s in report.samples if s.status != "ok"]
    assert len(excluded) == 2
    assert all(s.status == "excluded:no-dissipation" for s in excluded)
    assert all(abs(s.delta_g) <= 1e-12 * (1 + s.energy) for s in excluded)

    def origin_only(mdl, energy, rng):
        return State.zeros(mdl.params)

    with pytest.raises(ArithmeticError):
        dissipation_scan(model, [1e2], samples_per_e=2,
                         init_sampler=origin_only, seed=0)


def test_tracking_zero_deviation_without_noise():
    # temperatures must be positive, but the shared-noise construction is
    # exercised with tiny T where deviations collapse towards zero
    model = quartic_model(t1=1e-12, tn=1e-12)
    rep = tracking_deviation(model, 1e3, tau=1.0, seed=4)
    assert rep.sup_dp < 1e-4 and rep.sup_dq < 1e-4 and rep.sup_dr < 1e-4
    assert rep.in_good_set


def test_tracking_ratio_scaling():
    model = quartic_model(t1=1.0, tn=1.0)
    med = {}
    for energy in (1e4, 1e6):
        reps = [tracking_deviation(model, energy, tau=1.0, seed=s)
                for s in range(6)]
        med[energy] = (
            np.median([r.sup_dp / r.sup_dr for r in reps]),
            np.median([r.sup_dq / r.sup_dr for r in reps]),
        )
    dp_ratio = med[1e6][0] / med[1e4][0]
    dq_ratio = med[1e6][1] / med[1e4][1]
    assert dp_ratio / 100 ** (-0.25) < 3.0 and 100 ** (-0.25) / dp_ratio < 3.0
    assert dq_ratio / 100 ** (-0.5) < 3.0 and 100 ** (-0.5) / dq_ratio < 3.0


def test_bound_matrix_trivial_time_zero():
    rep = bound_matrix_check(1.0, 1.0, 1.0, [0.0])
    assert rep.passed
    assert rep.lhs[0] == [0.0, 0.0, 1.0]


def test_bound_matrix_unit_parameters():
    rep = bound_matrix_check(1.0, 1.0, 1.0, np.linspace(0.0, 1.0, 11))
    assert rep.alpha == 2.0
    assert rep.passed
    # direct evaluation at t = 1
    m = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    lhs = expm(m) @ np.array([0.0, 0.0, 1.0])
    assert np.allclose(rep.lhs[-1], lhs, rtol=1e-12)


def test_bound_matrix_large_rho_scaling():
    # within sqrt(rho) t <= const the components scale like (1/rho,
    # 1/sqrt(rho), 1)
    lam = gamma = 1.0
    c_budget = 0.5
    vals = {}
    for rho in (1e2, 1e4, 1e6):
        t = c_budget / np.sqrt(rho)
        rep = bound_matrix_check(rho, lam, gamma, [t])
        assert rep.passed
        vals[rho] = np.array(rep.lhs[0])
    for hi, lo, expo in ((1e4, 1e2, -1.0), (1e6, 1e4, -1.0)):
        ratio = vals[hi] / vals[lo]
        assert ratio[0] == pytest.approx(100.0 ** expo, rel=0.3)
        assert ratio[1] == pytest.approx(100.0 ** (expo / 2), rel=0.3)
        assert ratio[2] == pytest.approx(1.0, rel=0.3)
