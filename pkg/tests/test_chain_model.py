import numpy as np
import pytest

from nessim import (ChainParams, DomainError, PotentialTerm, State,
                    extended_energy, potential_energy, potential_gradient,
                    potential_hessian, power_spec, validate_growth)
from nessim.chain_model import (index_map, spectral_norm, state_dim,
                                state_to_vec, vec_to_state)

QUARTIC = power_spec(one_body=[(1.0, 4)], two_body=[(1.0, 4)])


def random_spec(rng):
    one = [(rng.uniform(0.1, 2.0), 2 * int(rng.integers(1, 4)))]
    two = [(rng.uniform(0.1, 2.0), 2 * int(rng.integers(1, 4)))]
    # make sure the two-body leading exponent dominates
    if max(k for _, k in two) < max(k for _, k in one):
        one, two = two, one
    return power_spec(one_body=one, two_body=two)


def test_potential_term_validation():
    with pytest.raises(ValueError):
        PotentialTerm(1.0, 3)
    with pytest.raises(ValueError):
        PotentialTerm(1.0, 0)
    PotentialTerm(-0.5, 2)  # negative non-leading coefficients are allowed


def test_energy_quartic_example():
    params = ChainParams(n=2, d=1, lam=1.0, gamma=1.0, temperatures=(0.0, 0.0))
    q = np.array([[1.0], [0.0]])
    # 1 (one-body at q1) + 1 (pair) - 0.5 (boundary correction at q1)
    assert potential_energy(QUARTIC, params, q) == pytest.approx(1.5, abs=1e-14)


def test_energy_zero_at_origin():
    params = ChainParams(n=4, d=2, lam=0.7, gamma=1.0, temperatures=(1.0, 1.0))
    assert potential_energy(QUARTIC, params, np.zeros((4, 2))) == 0.0


def test_energy_matches_gradient_path_integral():
    # integrate grad V along a straight path from 0; composite Simpson
    rng = np.random.default_rng(5)
    spec = power_spec(one_body=[(0.3, 4)], two_body=[(1.1, 4)])
    params = ChainParams(n=3, d=2, lam=0.9, gamma=1.0, temperatures=(0.0, 0.0))
    q = rng.standard_normal((3, 2))
    nodes = 401
    ts = np.linspace(0.0, 1.0, nodes)
    vals = np.array([
        float((potential_gradient(spec, params, t * q) * q).sum()) for t in ts
    ])
    h = ts[1] - ts[0]
    simpson = h / 3.0 * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum()
                         + 2 * vals[2:-2:2].sum())
    assert simpson == pytest.approx(potential_energy(spec, params, q),
                                    rel=1e-8)


def test_gradient_zero_at_origin():
    params = ChainParams(n=3, d=2, lam=1.0, gamma=1.0, temperatures=(0.0, 0.0))
    assert np.all(potential_gradient(QUARTIC, params, np.zeros((3, 2))) == 0.0)


def test_gradient_pair_example():
    spec = power_spec(one_body=[], two_body=[(1.0, 4)])
    params = ChainParams(n=2, d=1, lam=0.0, gamma=1.0, temperatures=(0.0, 0.0))
    g = potential_gradient(spec, params, np.array([[1.0], [0.0]]))
    assert g[0, 0] == pytest.approx(4.0, abs=1e-14)
    assert g[1, 0] == pytest.approx(-4.0, abs=1e-14)


@pytest.mark.parametrize("trial", range(10))
def test_gradient_matches_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    spec = random_spec(rng)
    n, d = int(rng.integers(2, 5)), int(rng.integers(1, 3))
    params = ChainParams(n=n, d=d, lam=rng.uniform(0.0, 1.5), gamma=1.0,
                         temperatures=(0.0, 0.0))
    q = rng.standard_normal((n, d))
    g = potential_gradient(spec, params, q)
    h = 1e-6
    fd = np.zeros_like(q)
    for i in range(n):
        for j in range(d):
            qp, qm = q.copy(), q.copy()
            qp[i, j] += h
            qm[i, j] -= h
            fd[i, j] = (potential_energy(spec, params, qp)
                        - potential_energy(spec, params, qm)) / (2 * h)
    assert np.linalg.norm(g - fd) <= 1e-6 * (1.0 + np.linalg.norm(g))


def test_hessian_zero_for_quartic_at_origin():
    params = ChainParams(n=3, d=1, lam=0.0, gamma=1.0, temperatures=(0.0, 0.0))
    h = potential_hessian(QUARTIC, params, np.zeros((3, 1)))
    assert np.all(h == 0.0)


def test_hessian_constant_for_harmonic():
    spec = power_spec(one_body=[(0.5, 2)], two_body=[(0.5, 2)])
    params = ChainParams(n=3, d=2, lam=0.8, gamma=1.0, temperatures=(0.0, 0.0))
    rng = np.random.default_rng(7)
    h0 = potential_hessian(spec, params, np.zeros((3, 2)))
    h1 = potential_hessian(spec, params, rng.standard_normal((3, 2)))
    assert np.allclose(h0, h1, atol=1e-14)


@pytest.mark.parametrize("trial", range(5))
def test_hessian_symmetric_and_matches_gradient_fd(trial):
    rng = np.random.default_rng(40 + trial)
    spec = random_spec(rng)
    n, d = 3, 2
    params = ChainParams(n=n, d=d, lam=0.6, gamma=1.0, temperatures=(0.0, 0.0))
    q = rng.standard_normal((n, d))
    hess = potential_hessian(spec, params, q)
    assert np.array_equal(hess, hess.T)
    h = 1e-6
    fd = np.zeros_like(hess)
    for col in range(n * d):
        dq = np.zeros(n * d)
        dq[col] = h
        gp = potential_gradient(spec, params, q + dq.reshape(n, d))
        gm = potential_gradient(spec, params, q - dq.reshape(n, d))
        fd[:, col] = ((gp - gm) / (2 * h)).ravel()
    assert np.allclose(hess, fd, rtol=1e-5, atol=1e-5)


def test_hessian_block_tridiagonal():
    rng = np.random.default_rng(60)
    spec = power_spec(one_body=[(0.5, 2)], two_body=[(1.0, 4)])
    params = ChainParams(n=5, d=2, lam=0.7, gamma=1.0, temperatures=(0.0, 0.0))
    h = potential_hessian(spec, params, rng.standard_normal((5, 2)))
    d = params.d
    for i in range(5):
        for j in range(5):
            if abs(i - j) > 1:
                block = h[i * d:(i + 1) * d, j * d:(j + 1) * d]
                assert np.all(block == 0.0)


def test_translation_invariance_without_one_body():
    spec = power_spec(one_body=[], two_body=[(1.0, 4), (0.2, 2)])
    params = ChainParams(n=4, d=2, lam=0.0, gamma=1.0, temperatures=(0.0, 0.0))
    rng = np.random.default_rng(11)
    q = rng.standard_normal((4, 2))
    shift = rng.standard_normal((1, 2))
    v0 = potential_energy(spec, params, q)
    v1 = potential_energy(spec, params, q + shift)
    assert v1 == pytest.approx(v0, rel=1e-12, abs=1e-12)


def test_extended_energy_examples():
    spec = QUARTIC
    params = ChainParams(n=2, d=1, lam=1.0, gamma=1.0, temperatures=(1.0, 1.0))
    x = State.zeros(params)
    assert extended_energy(spec, params, x) == 0.0
    x.r[:] = 1.0
    assert extended_energy(spec, params, x) == pytest.approx(1.0, abs=1e-15)


def test_extended_energy_decomposition():
    rng = np.random.default_rng(3)
    spec = power_spec(one_body=[(0.5, 2), (1.0, 4)], two_body=[(1.0, 4)])
    params = ChainParams(n=3, d=2, lam=0.5, gamma=1.0, temperatures=(1.0, 2.0))
    x = State(p=rng.standard_normal((3, 2)), q=rng.standard_normal((3, 2)),
              r=rng.standard_normal((2, 2)))
    expected = 0.5 * (x.p ** 2).sum() + potential_energy(spec, params, x.q) \
        + 0.5 * (x.r ** 2).sum()
    assert extended_energy(spec, params, x) == expected


def test_extended_energy_includes_s_for_ou2():
    spec = QUARTIC
    params = ChainParams(n=2, d=1, lam=1.0, gamma=1.0, sigma=1.0,
                         temperatures=(1.0, 1.0), reservoir_kind="ou2")
    x = State.zeros(params)
    x.s[:] = 2.0
    assert extended_energy(spec, params, x) == pytest.approx(4.0, abs=1e-14)


def test_domain_errors():
    params = ChainParams(n=2, d=1, lam=1.0, gamma=1.0, temperatures=(0.0, 0.0))
    with pytest.raises(DomainError):
        potential_energy(QUARTIC, params, np.array([[np.nan], [0.0]]))
    with pytest.raises(DomainError):
        potential_gradient(QUARTIC, params, np.ones((3, 1)))
    x = State.zeros(params)
    x.p[0, 0] = np.inf
    with pytest.raises(DomainError):
        extended_energy(QUARTIC, params, x)
    # s must be present iff the reservoir is ou2
    x2 = State.zeros(params)
    x2.s = np.zeros((2, 1))
    with pytest.raises(DomainError):
        extended_energy(QUARTIC, params, x2)


def test_chain_params_validation():
    with pytest.raises(ValueError):
        ChainParams(n=1, d=1, lam=1.0, gamma=1.0, temperatures=(0.0, 0.0))
    with pytest.raises(ValueError):
        ChainParams(n=2, d=1, lam=1.0, gamma=0.0, temperatures=(0.0, 0.0))
    with pytest.raises(ValueError):
        ChainParams(n=2, d=1, lam=1.0, gamma=1.0, temperatures=(-1.0, 0.0))
    with pytest.raises(ValueError):
        ChainParams(n=2, d=1, lam=1.0, gamma=1.0, temperatures=(0.0, 0.0),
                    reservoir_kind="ou2")  # needs sigma > 0
    with pytest.raises(ValueError):
        ChainParams(n=40, d=2, lam=1.0, gamma=1.0, temperatures=(0.0, 0.0))
    ChainParams(n=40, d=2, lam=1.0, gamma=1.0, temperatures=(0.0, 0.0),
                allow_large=True)


def test_validate_growth_pass():
    spec = power_spec(one_body=[(0.5, 2)], two_body=[(1.0, 4)])
    params = ChainParams(n=3, d=1, lam=0.5, gamma=1.0, temperatures=(1.0, 1.0))
    report = validate_growth(spec, params)
    assert report.passed
    assert report.k1 == 2 and report.k2 == 4


def test_validate_growth_k_ordering_fail():
    spec = power_spec(one_body=[(1.0, 4)], two_body=[(1.0, 2)])
    params = ChainParams(n=3, d=1, lam=0.5, gamma=1.0, temperatures=(1.0, 1.0))
    report = validate_growth(spec, params)
    assert not report.passed
    assert any("k2 < k1" in reason for reason in report.reasons)


def test_validate_growth_negative_leading_fail():
    spec = power_spec(one_body=[(1.0, 2)], two_body=[(-1.0, 4), (1.0, 2)])
    params = ChainParams(n=3, d=1, lam=0.5, gamma=1.0, temperatures=(1.0, 1.0))
    report = validate_growth(spec, params)
    assert not report.passed


def test_validate_growth_boundary_warning():
    spec = power_spec(one_body=[(0.5, 2)], two_body=[(0.5, 2)])
    params = ChainParams(n=3, d=1, lam=1.0, gamma=1.0, temperatures=(1.0, 1.0))
    report = validate_growth(spec, params)
    assert report.passed
    assert report.warnings


def test_spectral_norm_power_iteration():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((6, 6))
    assert spectral_norm(a) == pytest.approx(np.linalg.norm(a, 2), rel=1e-8)


def test_state_vector_roundtrip():
    for kind, sigma in (("ou1", 0.0), ("ou2", 1.0), ("langevin", 0.0)):
        params = ChainParams(n=3, d=2, lam=1.0, gamma=1.0, sigma=sigma,
                             temperatures=(1.0, 1.0), reservoir_kind=kind)
        rng = np.random.default_rng(1)
        x = State(p=rng.standard_normal((3, 2)), q=rng.standard_normal((3, 2)),
                  r=rng.standard_normal((2, 2)),
                  s=rng.standard_normal((2, 2)) if kind == "ou2" else None)
        v = state_to_vec(params, x)
        assert v.shape == (state_dim(params),)
        y = vec_to_state(params, v)
        assert np.array_equal(x.p, y.p) and np.array_equal(x.q, y.q)
        if kind != "langevin":
            assert np.array_equal(x.r, y.r)
        idx = index_map(params)
        assert idx["p"].start == 0
