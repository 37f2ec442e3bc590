import numpy as np
import pytest

from nessim import (BlowUp, ChainParams, IntegratorConfig, Model, State,
                    deterministic_flow, drift_field, ou_exact_step, power_spec,
                    simulate, suggest_dt)
from nessim.chain_model import state_to_vec
from nessim.linear_oracle import linearize
from scipy.linalg import expm

HARMONIC = power_spec(one_body=[(0.5, 2)], two_body=[(0.5, 2)])
QUARTIC = power_spec(one_body=[(1.0, 4), (0.5, 2)], two_body=[(1.0, 4)])


def harmonic_model(t1=1.0, tn=1.0, lam=1.0, gamma=1.0, n=3, d=1, kind="ou1",
                   sigma=0.0):
    params = ChainParams(n=n, d=d, lam=lam, gamma=gamma, sigma=sigma,
                         temperatures=(t1, tn), reservoir_kind=kind)
    return Model(HARMONIC, params)


def random_state(params, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return State(
        p=scale * rng.standard_normal((params.n, params.d)),
        q=scale * rng.standard_normal((params.n, params.d)),
        r=scale * rng.standard_normal((2, params.d)),
        s=(scale * rng.standard_normal((2, params.d))
           if params.reservoir_kind == "ou2" else None),
    )


# ---------------------------------------------------------------------------
# drift_field
# ---------------------------------------------------------------------------

def test_drift_zero_at_origin():
    model = harmonic_model()
    tangent = drift_field(model, State.zeros(model.params))
    assert np.all(tangent.p == 0) and np.all(tangent.q == 0) \
        and np.all(tangent.r == 0)


def test_drift_decoupled_r_when_lambda_zero():
    model = Model(HARMONIC, ChainParams(n=3, d=2, lam=0.0, gamma=1.7,
                                        temperatures=(1.0, 1.0)))
    x = random_state(model.params, seed=2)
    tangent = drift_field(model, x)
    assert np.array_equal(tangent.r, -1.7 * x.r)


@pytest.mark.parametrize("kind,sigma", [("ou1", 0.0), ("ou2", 0.8),
                                        ("langevin", 0.0)])
def test_drift_matches_linearization(kind, sigma):
    model = harmonic_model(kind=kind, sigma=sigma, lam=0.9, gamma=1.3)
    lm = linearize(model)
    for seed in range(5):
        x = random_state(model.params, seed=seed)
        if kind == "langevin":
            x.r[:] = 0.0
        tangent = drift_field(model, x)
        vec = state_to_vec(model.params, x)
        expected = lm.a @ vec
        got = state_to_vec(model.params,
                           State(p=tangent.p, q=tangent.q, r=tangent.r,
                                 s=tangent.s))
        assert np.allclose(got, expected, atol=1e-12)


# ---------------------------------------------------------------------------
# ou_exact_step
# ---------------------------------------------------------------------------

def test_ou_step_half_life():
    r = np.array([[2.0, 4.0], [-2.0, 6.0]])
    out = ou_exact_step(r, gamma=np.log(2.0), temperatures=(1.0, 1.0), h=1.0,
                        noise=np.zeros((2, 2)))
    assert np.allclose(out, r / 2.0, atol=1e-14)


def test_ou_step_decays_to_zero():
    r = np.ones((2, 1))
    out = ou_exact_step(r, gamma=1.0, temperatures=(0.0, 0.0), h=100.0,
                        noise=np.ones((2, 1)))
    assert np.all(np.abs(out) < 1e-40)


def test_ou_step_variance():
    rng = np.random.default_rng(123)
    n_draws = 100_000
    gamma, h = 0.7, 0.3
    t1, tn = 1.5, 0.5
    noise = rng.standard_normal((n_draws, 2, 1))
    outs = np.array([ou_exact_step(np.zeros((2, 1)), gamma, (t1, tn), h, z)
                     for z in noise])
    for row, temp in ((0, t1), (1, tn)):
        target = temp * (1.0 - np.exp(-2.0 * gamma * h))
        sample_var = outs[:, row, 0].var()
        stderr = target * np.sqrt(2.0 / n_draws)
        assert abs(sample_var - target) < 3.0 * stderr


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_seeded_determinism_bitwise():
    model = harmonic_model(t1=0.7, tn=0.2)
    x0 = State.zeros(model.params)
    cfg = IntegratorConfig(dt=0.01, steps=2000, seed=99, thin=5)
    t1 = simulate(model, x0, cfg)
    t2 = simulate(model, x0, cfg)
    for a, b in ((t1.p, t2.p), (t1.q, t2.q), (t1.r, t2.r),
                 (t1.energy, t2.energy), (t1.diss, t2.diss)):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("kind,sigma,scheme", [
    ("ou1", 0.0, "strang_split"),
    ("ou1", 0.0, "euler_maruyama"),
    ("ou2", 1.1, "strang_split"),
    ("ou2", 1.1, "euler_maruyama"),
    ("langevin", 0.0, "strang_split"),
    ("langevin", 0.0, "euler_maruyama"),
])
def test_zero_temperature_equals_deterministic(kind, sigma, scheme):
    model = harmonic_model(t1=0.0, tn=0.0, kind=kind, sigma=sigma)
    x0 = random_state(model.params, seed=4, scale=0.5)
    if kind == "langevin":
        x0.r[:] = 0.0
    cfg = IntegratorConfig(scheme=scheme, dt=0.005, steps=400, seed=11)
    stoch = simulate(model, x0, cfg)
    det = deterministic_flow(model, x0, dt=0.005, steps=400, scheme=scheme)
    assert np.array_equal(stoch.p, det.p)
    assert np.array_equal(stoch.q, det.q)
    assert np.array_equal(stoch.r, det.r)


def test_decoupled_r_is_exact_ou():
    # lam = 0: the r-marginal of the chain is an exact OU process, so the
    # empirical stationary variance must match T channelwise
    params = ChainParams(n=2, d=1, lam=0.0, gamma=1.0, temperatures=(1.3, 0.4))
    model = Model(HARMONIC, params)
    x0 = State.zeros(params)
    cfg = IntegratorConfig(dt=0.05, steps=200_000, seed=5, thin=10)
    traj = simulate(model, x0, cfg)
    burn = 1000
    for row, temp in ((0, 1.3), (1, 0.4)):
        series = traj.r[burn:, row, 0]
        var = series.var()
        # batch stderr over 100 batches
        bm = series[: (len(series) // 100) * 100].reshape(100, -1)
        stderr = (bm ** 2).mean(axis=1).std(ddof=1) / 10.0
        assert abs(var - temp) < 3.0 * stderr


def test_equal_temperature_equipartition_quick():
    model = Model(QUARTIC, ChainParams(n=3, d=1, lam=1.0, gamma=1.0,
                                       temperatures=(1.0, 1.0)))
    cfg = IntegratorConfig(dt=0.02, steps=400_000, seed=8, thin=10)
    traj = simulate(model, State.zeros(model.params), cfg)
    x = traj.state_matrix()[2000:]
    psq = (x[:, :3] ** 2).mean(axis=0)
    assert np.all(np.abs(psq - 1.0) < 0.08)


def test_blowup_raises():
    model = Model(QUARTIC, ChainParams(n=3, d=1, lam=1.0, gamma=1.0,
                                       temperatures=(0.0, 0.0)),
                  skip_growth_check=True)
    x0 = State.zeros(model.params)
    x0.q[1, 0] = 40.0  # high energy with dt far above the stiffness limit
    with pytest.raises(BlowUp):
        simulate(model, x0, IntegratorConfig(dt=0.2, steps=5000, seed=0,
                                             blowup_threshold=1e9))


def test_euler_warns_for_large_dt_gamma():
    model = harmonic_model(gamma=3.0)
    cfg = IntegratorConfig(scheme="euler_maruyama", dt=0.5, steps=10, seed=0)
    with pytest.warns(UserWarning):
        simulate(model, State.zeros(model.params), cfg)


def test_euler_strang_weak_agreement():
    # stationary variance of the decoupled OU channel agrees across schemes
    params = ChainParams(n=2, d=1, lam=0.0, gamma=1.0, temperatures=(1.0, 1.0))
    model = Model(HARMONIC, params)
    out = {}
    for scheme in ("strang_split", "euler_maruyama"):
        cfg = IntegratorConfig(scheme=scheme, dt=0.01, steps=100_000, seed=3,
                               thin=10)
        traj = simulate(model, State.zeros(params), cfg)
        out[scheme] = traj.r[500:, 0, 0].var()
    assert abs(out["strang_split"] - out["euler_maruyama"]) < 0.1


# ---------------------------------------------------------------------------
# deterministic_flow
# ---------------------------------------------------------------------------

def test_fixed_point_stays_fixed():
    model = harmonic_model(t1=0.0, tn=0.0)
    traj = deterministic_flow(model, State.zeros(model.params), dt=0.01,
                              steps=100)
    assert np.all(traj.p == 0) and np.all(traj.q == 0) and np.all(traj.r == 0)
    assert np.all(traj.energy == 0)


def test_initial_energy_slope_zero_when_r_zero():
    model = harmonic_model(t1=0.0, tn=0.0)
    x0 = random_state(model.params, seed=6)
    x0.r[:] = 0.0
    dt = 1e-4
    traj = deterministic_flow(model, x0, dt=dt, steps=1)
    # dG/dt = -gamma r^2 = 0 at t=0, so the first-step drop is O(dt^2)
    assert abs(traj.energy[1] - traj.energy[0]) < 1e-6 * dt


def test_matches_matrix_exponential_for_harmonic():
    model = harmonic_model(t1=0.0, tn=0.0, lam=0.8, gamma=1.1)
    lm = linearize(model)
    x0 = random_state(model.params, seed=12)
    traj = deterministic_flow(model, x0, dt=1e-4, steps=10_000, thin=10_000)
    expected = expm(lm.a * 1.0) @ state_to_vec(model.params, x0)
    got = state_to_vec(model.params, traj.final_state())
    assert np.linalg.norm(got - expected) < 1e-6


def test_zero_temperature_monotone_energy():
    # per-step Verlet energy fluctuations scale like dt^3, so the 1e-8
    # monotonicity tolerance needs dt well below the oscillation period
    model = Model(QUARTIC, ChainParams(n=3, d=1, lam=1.0, gamma=1.0,
                                       temperatures=(0.0, 0.0)))
    x0 = random_state(model.params, seed=20, scale=2.0)
    traj = deterministic_flow(model, x0, dt=2e-4, steps=10_000)
    g = traj.energy
    assert np.all(np.diff(g) <= 1e-8 * (1.0 + g[:-1]))


def test_energy_balance_second_order():
    model = Model(QUARTIC, ChainParams(n=3, d=1, lam=1.0, gamma=1.0,
                                       temperatures=(0.0, 0.0)))
    x0 = random_state(model.params, seed=21, scale=1.5)
    resid = []
    for dt in (2e-3, 1e-3, 5e-4):
        traj = deterministic_flow(model, x0, dt=dt, steps=int(2.0 / dt))
        resid.append(abs(traj.energy[-1] - traj.energy[0] + traj.diss[-1]))
    # halving dt should cut the residual by ~4
    assert resid[1] < 0.35 * resid[0]
    assert resid[2] < 0.35 * resid[1]


def test_conservative_substep_third_order():
    # with gamma ~ 0 the OU part is inert, exposing the Verlet block's
    # per-step energy error, which must scale like dt^3
    spec = QUARTIC
    params = ChainParams(n=3, d=1, lam=1.0, gamma=1e-12,
                         temperatures=(0.0, 0.0))
    model = Model(spec, params)
    x0 = random_state(params, seed=22)
    errs = []
    for dt in (1e-2, 5e-3):
        traj = deterministic_flow(model, x0, dt=dt, steps=1)
        errs.append(abs(traj.energy[1] - traj.energy[0]))
    assert errs[1] < 0.2 * errs[0]  # ~1/8 expected


def test_suggest_dt_policy():
    assert suggest_dt(1e4, 4) == pytest.approx(1e-2 * 1e4 ** (-0.25))
    assert suggest_dt(0.5, 4) == pytest.approx(1e-2)
    assert suggest_dt(1e4, 2) == pytest.approx(1e-2)


# ---------------------------------------------------------------------------
# trajectory CSV export
# ---------------------------------------------------------------------------

def test_trajectory_csv_roundtrip(tmp_path):
    model = harmonic_model(t1=0.3, tn=0.3)
    cfg = IntegratorConfig(dt=0.01, steps=50, seed=1, thin=10)
    traj = simulate(model, State.zeros(model.params), cfg)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    text = path.read_text()
    lines = text.split("\n")
    assert lines[0] == "t,p_1_1,p_2_1,p_3_1,q_1_1,q_2_1,q_3_1,r_1_1,r_2_1,G"
    assert "\r" not in text
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert data.shape == (6, 10)
    assert np.allclose(data[:, -1], traj.energy, rtol=1e-15)
    # 17 significant digits round-trip float64 exactly
    assert np.array_equal(data[:, 1], traj.p[:, 0, 0])


def test_ou2_energy_dissipates_at_zero_temperature():
    params = ChainParams(n=3, d=1, lam=1.0, gamma=0.8, sigma=1.3,
                         temperatures=(0.0, 0.0), reservoir_kind="ou2")
    model = Model(HARMONIC, params)
    x0 = random_state(params, seed=30)
    traj = deterministic_flow(model, x0, dt=0.002, steps=4000)
    g = traj.energy
    assert np.all(np.diff(g) <= 1e-8 * (1.0 + g[:-1]))
    resid = abs(g[-1] - g[0] + traj.diss[-1])
    assert resid < 1e-5 * (g[0] - g[-1] + 1e-12)
