"""Ergodic observables and convergence diagnostics.

Time averages use batch means (100 batches) for standard errors, which
stays honest under autocorrelation without spectral estimation.  The
drift, hitting-time and exceedance estimators quantify how fast the
chain returns to energy sublevel sets U = {G <= E0}: a contraction
factor kappa < 1 of the weighted average E_x[exp(theta (G(X_s) - G(x)))]
outside U certifies geometric ergodicity, and exponential moments of the
hitting time of U are its pathwise counterpart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain_model import State, extended_energy
from .sde_dynamics import Model, Trajectory, run_segment, suggest_dt
from .seeding import make_rng

N_BATCHES = 100


@dataclass
class ObservableSeries:
    """Scalar observable sampled along a trajectory."""

    times: np.ndarray
    values: np.ndarray
    burn_in: int = 0
    batches: int = N_BATCHES

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        if not 0 <= self.burn_in < len(self.values):
            raise ValueError("burn_in must be < series length")


def estimator_report(observable: str, mean: float, stderr: float, n: int,
                     burn_in: int, **extra) -> dict:
    """Uniform JSON schema for scalar estimators.

    ``{observable, mean, stderr, n, burn_in, extra{...}}`` is the shape
    emitted by the experiment drivers for every time-average style
    quantity.
    """
    return {"observable": observable, "mean": float(mean),
            "stderr": float(stderr), "n": int(n), "burn_in": int(burn_in),
            "extra": extra}


def batch_means(values: np.ndarray, batches: int = N_BATCHES):
    """Mean and batch-means standard error of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < batches:
        raise ValueError(f"series too short: {n} < {batches} batches")
    size = n // batches
    trimmed = values[: size * batches].reshape(batches, size)
    means = trimmed.mean(axis=1)
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(batches))


def time_average(series, burn_in: Optional[int] = None,
                 batches: int = N_BATCHES):
    """Batch-means time average ``(mean, stderr)`` after ``burn_in`` samples."""
    if isinstance(series, ObservableSeries):
        values = series.values
        burn = series.burn_in if burn_in is None else burn_in
        batches = series.batches
    else:
        values = np.asarray(series, dtype=np.float64)
        burn = burn_in or 0
    return batch_means(values[burn:], batches)


def autocovariance(series, max_lag: int) -> np.ndarray:
    """Biased autocovariance estimate c_k = (1/N) sum (x_t - m)(x_{t+k} - m).

    Lag 0 equals the (1/N-normalized) sample variance.  Computed with an
    FFT; pass a stationary, burned-in series.
    """
    values = series.values[series.burn_in:] if isinstance(series, ObservableSeries) \
        else np.asarray(series, dtype=np.float64)
    n = len(values)
    if max_lag >= n:
        raise ValueError("max_lag must be < series length")
    x = values - values.mean()
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    fx = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(fx * np.conj(fx), nfft)[: max_lag + 1] / n
    return acov


def fit_decay_rate(acf: np.ndarray, fit_window: tuple[int, int],
                   dt: float = 1.0):
    """Least-squares exponential decay rate of a positive ACF window.

    Fits log acf[k] ~ a - rate * (k dt) on ``k in [fit_window[0],
    fit_window[1])`` and returns ``(rate, ci)`` with a 95 % confidence
    half-width from the OLS slope variance.
    """
    lo, hi = fit_window
    window = np.asarray(acf[lo:hi], dtype=np.float64)
    if len(window) < 3:
        raise ValueError("fit window must contain at least 3 lags")
    if np.any(window <= 0):
        raise ValueError("acf must be positive on the fit window")
    t = np.arange(lo, hi) * dt
    y = np.log(window)
    coef, cov = np.polyfit(t, y, 1, cov=True)
    rate = -float(coef[0])
    ci = 1.96 * float(np.sqrt(cov[0, 0]))
    return rate, ci


def fit_oscillatory_decay_rate(acf: np.ndarray, fit_window: tuple[float, float],
                               dt: float, period: float):
    """Decay rate of an oscillatory ACF via its half-period envelope.

    For underdamped modes the ACF looks like e^{-rate t} cos(omega t +
    phase) and a raw log fit is impossible.  Averaging |acf| over bins of
    width period/2 recovers (2/pi) times the envelope, whose constant
    factor drops out of the log-slope.  ``fit_window`` is in time units;
    returns ``(rate, ci)`` like :func:`fit_decay_rate`.
    """
    a = np.abs(np.asarray(acf, dtype=np.float64))
    if a[0] <= 0:
        raise ValueError("acf must have positive lag-0 value")
    a = a / a[0]
    t_lo, t_hi = fit_window
    edges = np.arange(t_lo, t_hi + 1e-12, 0.5 * period)
    ts, vals = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        k0, k1 = int(round(lo / dt)), int(round(hi / dt))
        if k1 <= len(a) and k1 > k0:
            ts.append(0.5 * (lo + hi))
            vals.append(a[k0:k1].mean())
    if len(ts) < 3:
        raise ValueError("fit window must cover at least 3 half-periods")
    vals = np.asarray(vals)
    if np.any(vals <= 0):
        raise ValueError("binned acf magnitudes must stay positive")
    coef, cov = np.polyfit(np.asarray(ts), np.log(vals), 1, cov=True)
    return -float(coef[0]), 1.96 * float(np.sqrt(cov[0, 0]))


def estimate_acf_period(acf: np.ndarray, dt: float) -> Optional[float]:
    """Oscillation period from the sign changes of an ACF, or ``None``.

    Consecutive zero crossings of a damped cosine are half a period
    apart; the estimate averages the observed crossing spacings.
    """
    signs = np.sign(np.asarray(acf))
    crossings = np.nonzero(np.diff(signs) != 0)[0]
    if len(crossings) < 2:
        return None
    spacing = np.diff(crossings).mean() * dt
    return 2.0 * float(spacing)


def heat_flux_series(traj: Trajectory, model: Model):
    """Boundary work rates phi_L = -lam r_1 . p_1 and phi_R = -lam r_n . p_n.

    These are the instantaneous energy flows from the reservoirs into
    the chain; their stationary means are positive on the hot side,
    negative on the cold side, and sum to zero.
    """
    lam = model.params.lam
    if model.params.reservoir_kind == "langevin":
        raise ValueError("heat flux via r is defined for OU reservoirs")
    phi_l = -lam * (traj.r[:, 0, :] * traj.p[:, 0, :]).sum(axis=1)
    phi_r = -lam * (traj.r[:, 1, :] * traj.p[:, -1, :]).sum(axis=1)
    return phi_l, phi_r


def _theta_limit(model: Model) -> float:
    tmax = model.params.t_max
    return math.inf if tmax == 0 else 1.0 / tmax


@dataclass
class DriftEstimate:
    """Monte-Carlo estimate of E_x[exp(theta (G(X_s) - G(x)))]."""

    g0: float
    s: float
    theta: float
    kappa_hat: float
    stderr: float
    n_samples: int
    drift_confirmed: bool     # kappa_hat + 2 stderr < 1
    x: Optional[State] = None

    def as_dict(self) -> dict:
        return {
            "g0": self.g0, "s": self.s, "theta": self.theta,
            "kappa_hat": self.kappa_hat, "stderr": self.stderr,
            "n_samples": self.n_samples,
            "drift_confirmed": self.drift_confirmed,
        }


def liapunov_drift(model: Model, x: State, s: float, theta: float,
                   n_samples: int, seeds, dt: Optional[float] = None,
                   executor=None) -> DriftEstimate:
    """Estimate the drift factor of W = exp(theta G) over lag ``s``.

    ``theta`` must satisfy theta < 1/max(T1, Tn) (strict) so the
    expectation is finite.  ``seeds`` is either an iterable of
    ``n_samples`` integers or a single master seed.
    """
    params = model.params
    if theta <= 0 or theta >= _theta_limit(model):
        raise ValueError("theta must satisfy 0 < theta < 1/max(T1, Tn)")
    g0 = extended_energy(model.spec, params, x)
    if dt is None:
        dt = suggest_dt(max(g0, 1.0), model.k2)
    steps = max(1, int(math.ceil(s / dt)))
    dt = s / steps
    if np.isscalar(seeds):
        seeds = [int(seeds) + 1_000_003 * k for k in range(n_samples)]
    seeds = list(seeds)
    if len(seeds) != n_samples:
        raise ValueError("need one seed per sample")

    def run_one(seed):
        y = x.copy()
        noise = make_rng(seed).standard_normal((steps, 2, 2, params.d)) \
            if params.reservoir_kind != "ou2" \
            else make_rng(seed).standard_normal((steps, 2, 2, params.d, 2))
        res = run_segment(model, y, "strang_split", dt, steps, noise,
                          stop_hi=1e300)
        return math.exp(theta * (res.g_last - g0))

    if executor is None:
        weights = [run_one(sd) for sd in seeds]
    else:
        weights = list(executor.map(run_one, seeds))
    weights = np.asarray(weights)
    kappa = float(weights.mean())
    stderr = float(weights.std(ddof=1) / math.sqrt(len(weights))) \
        if len(weights) > 1 else 0.0
    return DriftEstimate(
        g0=g0, s=s, theta=theta, kappa_hat=kappa, stderr=stderr,
        n_samples=n_samples, drift_confirmed=kappa + 2.0 * stderr < 1.0,
        x=x.copy(),
    )


@dataclass
class HittingReport:
    """First-entry times of U = {G <= e0} over a Monte-Carlo ensemble."""

    e0: float
    g0: float
    a: float
    taus: np.ndarray
    censored: int
    t_max: float
    # average of exp(a tau) over the uncensored samples (a lower bound on
    # the true moment when censoring is rare); None when all runs censored
    exp_moment: Optional[float]
    tail_rate: Optional[float]
    tail_r2: Optional[float]

    def survival_curve(self):
        """(t, P(tau > t)) on the sorted sample grid."""
        taus = np.sort(self.taus)
        n = len(taus) + self.censored
        surv = 1.0 - (np.arange(1, len(taus) + 1)) / n
        return taus, surv

    def as_dict(self) -> dict:
        return {
            "e0": self.e0, "g0": self.g0, "a": self.a,
            "n_samples": int(len(self.taus) + self.censored),
            "censored": self.censored, "t_max": self.t_max,
            "exp_moment": self.exp_moment,
            "tail_rate": self.tail_rate, "tail_r2": self.tail_r2,
            "tau_mean": float(np.mean(self.taus)) if len(self.taus) else None,
            "tau_max": float(np.max(self.taus)) if len(self.taus) else None,
        }


def _ensemble_noise_shape(model: Model, steps: int):
    if model.params.reservoir_kind == "ou2":
        return (steps, 2, 2, model.params.d, 2)
    return (steps, 2, 2, model.params.d)


def hitting_times(model: Model, x0: State, e0: float, n_samples: int,
                  a: float, t_max: Optional[float] = None,
                  dt: Optional[float] = None, seed: int = 0,
                  chunk_steps: int = 32768, executor=None) -> HittingReport:
    """Sample the first time G(x(t)) drops to ``e0`` from ``x0``.

    Hitting is detected on the step grid (resolution dt).  Runs not
    inside U by ``t_max`` (default: 1e6 steps) are censored and
    reported, never dropped; the exponential moment averages exp(a tau)
    over the uncensored samples.  A log-linear fit of the survival tail
    (between the 50 % and 2 % quantiles) supplies the geometric decay
    rate and its R^2.
    """
    params = model.params
    if a <= 0:
        raise ValueError("a must be > 0")
    g0 = extended_energy(model.spec, params, x0)
    if dt is None:
        dt = suggest_dt(max(g0, 1.0), model.k2)
    if t_max is None:
        t_max = 1_000_000 * dt
    max_steps = max(1, int(math.ceil(t_max / dt)))

    def run_one(k):
        if g0 <= e0:
            return 0.0, False
        y = x0.copy()
        rng = make_rng(seed, stream_id=k)
        done = 0
        while done < max_steps:
            block = min(chunk_steps, max_steps - done)
            noise = rng.standard_normal(_ensemble_noise_shape(model, block))
            res = run_segment(model, y, "strang_split", dt, block, noise,
                              stop_hi=1e300, stop_lo=e0, use_stop_lo=True)
            if res.status == 1:
                return (done + res.steps_done) * dt, False
            done += res.steps_done
        return t_max, True

    if executor is None:
        outcomes = [run_one(k) for k in range(n_samples)]
    else:
        outcomes = list(executor.map(run_one, range(n_samples)))
    taus = np.array([t for t, cens in outcomes if not cens])
    censored = sum(1 for _, cens in outcomes if cens)

    exp_moment = float(np.mean(np.exp(a * taus))) if len(taus) else None

    tail_rate = tail_r2 = None
    if len(taus) >= 20:
        ts, surv = HittingReport(e0, g0, a, taus, censored, t_max,
                                 None, None, None).survival_curve()
        mask = (surv <= 0.5) & (surv >= 0.02) & (ts > 0)
        if mask.sum() >= 5:
            y = np.log(surv[mask])
            t = ts[mask]
            coef = np.polyfit(t, y, 1)
            fit = np.polyval(coef, t)
            ss_res = float(np.sum((y - fit) ** 2))
            ss_tot = float(np.sum((y - y.mean()) ** 2))
            tail_rate = -float(coef[0])
            tail_r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return HittingReport(e0=e0, g0=g0, a=a, taus=taus, censored=censored,
                         t_max=t_max, exp_moment=exp_moment,
                         tail_rate=tail_rate, tail_r2=tail_r2)


@dataclass
class NoRunawayReport:
    """Exceedance probability of sup G versus the closed-form bound.

    The bound is exp(gamma Tr(T) theta t) * exp(-delta theta E) for any
    theta <= 1/max(T1, Tn).
    """

    energy: float
    delta: float
    theta: float
    t: float
    p_hat: float
    stderr: float
    bound: float
    passed: bool
    n_samples: int

    def as_dict(self) -> dict:
        return {
            "energy": self.energy, "delta": self.delta, "theta": self.theta,
            "t": self.t, "p_hat": self.p_hat, "stderr": self.stderr,
            "bound": self.bound, "passed": self.passed,
            "n_samples": self.n_samples,
        }


def no_runaway_check(model: Model, x: State, t: float, theta: float,
                     delta: float, n_samples: int, dt: Optional[float] = None,
                     seed: int = 0, executor=None) -> NoRunawayReport:
    """Empirical P(sup_{s<=t} G >= (1+delta) E) against the a-priori bound.

    The sup is taken on the step grid.  Here theta may equal
    1/max(T1, Tn) (the bound is derived under theta <= 1/max T).
    """
    params = model.params
    if theta <= 0 or theta > _theta_limit(model):
        raise ValueError("theta must satisfy 0 < theta <= 1/max(T1, Tn)")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    energy = extended_energy(model.spec, params, x)
    if dt is None:
        dt = suggest_dt(max(energy, 1.0), model.k2)
    steps = max(1, int(math.ceil(t / dt)))
    dt = t / steps
    threshold = (1.0 + delta) * energy

    def run_one(k):
        y = x.copy()
        noise = make_rng(seed, stream_id=k).standard_normal(
            _ensemble_noise_shape(model, steps))
        res = run_segment(model, y, "strang_split", dt, steps, noise,
                          stop_hi=threshold)
        return res.status == 2

    if executor is None:
        hits = [run_one(k) for k in range(n_samples)]
    else:
        hits = list(executor.map(run_one, range(n_samples)))
    p_hat = float(np.mean(hits))
    stderr = math.sqrt(p_hat * (1.0 - p_hat) / n_samples)
    bound = math.exp(params.gamma * params.temperature_trace * theta * t) \
        * math.exp(-delta * theta * energy)
    return NoRunawayReport(
        energy=energy, delta=delta, theta=theta, t=t, p_hat=p_hat,
        stderr=stderr, bound=bound, passed=p_hat <= bound + 3.0 * stderr,
        n_samples=n_samples,
    )
