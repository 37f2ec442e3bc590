"""Time integration of the chain-reservoir stochastic dynamics.

The dynamics for the first-order OU reservoir is

    dq = p dt
    dp = (-grad V_eff(q) - Lambda^T r) dt
    dr = (-gamma r + Lambda p) dt + sqrt(2 gamma T) dW,

with Lambda p = (lam p_1, lam p_n).  The ``ou2`` reservoir adds the
rotation partner s (dr gains ``-sigma s``, ds = (-gamma s + sigma r) dt)
and the ``langevin`` reservoir replaces r by direct friction
``-lam^2 p`` plus noise on the boundary momenta.

Two schemes are provided.  ``strang_split`` composes an exact OU
half-step on the dissipative/noisy variables, a velocity-Verlet step of
the conservative part (which moves r via the midpoint momentum and
conserves G to O(dt^3) per step), and a second OU half-step.
``euler_maruyama`` is retained as a cross-validation baseline.

Trajectories are bit-reproducible: all noise is pre-drawn from a Philox
counter-based generator keyed by the seed, so identical
``(model, x0, config)`` yield identical output arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .chain_model import (ChainParams, PotentialSpec, State, extended_energy,
                          potential_gradient, validate_growth, validate_state)
from .seeding import make_rng

SCHEMES = ("strang_split", "euler_maruyama")


class BlowUp(RuntimeError):
    """Trajectory energy exceeded the configured threshold.

    Indicates numerical instability (dt too large for the local
    stiffness, which grows like E**(1 - 2/k2)), not physics.
    """

    def __init__(self, step: int, energy: float):
        super().__init__(f"energy {energy:.6g} exceeded blow-up threshold at step {step}")
        self.step = step
        self.energy = energy


@dataclass(frozen=True)
class Model:
    """Potential plus chain parameters; validated against the growth condition."""

    spec: PotentialSpec
    params: ChainParams
    skip_growth_check: bool = False

    def __post_init__(self):
        if not self.skip_growth_check:
            report = validate_growth(self.spec, self.params)
            if not report.passed:
                raise ValueError(
                    "potential violates growth condition H1: "
                    + "; ".join(report.reasons)
                )

    @property
    def k2(self) -> int:
        return self.spec.k2

    def energy(self, x: State) -> float:
        return extended_energy(self.spec, self.params, x)


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "strang_split"
    dt: float = 1e-2
    steps: int = 1000
    seed: int = 0
    thin: int = 1
    blowup_threshold: float = 1e12

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.blowup_threshold <= 0:
            raise ValueError("blowup_threshold must be > 0")


@dataclass
class Trajectory:
    """Recorded (thinned) trajectory with provenance and per-step channels.

    ``energy`` holds G at the recorded steps and ``diss`` the cumulative
    dissipation integral D(t) (see ``nessim._kernels``); at zero
    temperature G(t) = G(0) - D(t) up to the integrator's conservation
    error.
    """

    times: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    energy: np.ndarray
    diss: np.ndarray
    dt: float
    scheme: str
    thin: int
    reservoir_kind: str
    seed: Optional[int] = None
    s: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> State:
        return State(
            p=self.p[i].copy(),
            q=self.q[i].copy(),
            r=self.r[i].copy(),
            s=None if self.s is None else self.s[i].copy(),
        )

    def final_state(self) -> State:
        return self.state(len(self) - 1)

    def state_matrix(self) -> np.ndarray:
        """Flatten recorded states to (n_rec, state_dim) in [p, q, r, s?] order."""
        m = len(self)
        cols = [self.p.reshape(m, -1), self.q.reshape(m, -1)]
        if self.reservoir_kind in ("ou1", "ou2"):
            cols.append(self.r.reshape(m, -1))
        if self.s is not None:
            cols.append(self.s.reshape(m, -1))
        return np.hstack(cols)

    def to_csv(self, path) -> None:
        """Write `t,p_1_1,...,q_...,r_...[,s_...],G` with 17-digit floats."""
        m, n, d = self.p.shape
        header = ["t"]
        for name in ("p", "q"):
            header += [f"{name}_{i + 1}_{j + 1}" for i in range(n) for j in range(d)]
        header += [f"r_{c + 1}_{j + 1}" for c in range(2) for j in range(d)]
        if self.s is not None:
            header += [f"s_{c + 1}_{j + 1}" for c in range(2) for j in range(d)]
        header.append("G")
        blocks = [self.times[:, None], self.p.reshape(m, -1), self.q.reshape(m, -1),
                  self.r.reshape(m, -1)]
        if self.s is not None:
            blocks.append(self.s.reshape(m, -1))
        blocks.append(self.energy[:, None])
        data = np.hstack(blocks)
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def suggest_dt(energy: float, k2: int, c: float = 1e-2) -> float:
    """Step size matched to the high-energy time scale E**(1/k2 - 1/2).

    ``c`` is the number of steps^-1 per characteristic oscillation at
    energy E; the default 1e-2 targets ordinary simulation accuracy.
    Energy-balance verification needs a smaller ``c`` (the conservation
    error of the splitting scales like (c)^2 E while the dissipated
    energy only grows like E**(3/k2 - 1/2)).
    """
    if energy <= 1.0:
        return c
    return c * energy ** (1.0 / k2 - 0.5)


def drift_field(model: Model, x: State) -> State:
    """Deterministic drift at ``x``, packaged as a State-shaped tangent.

    For ``ou1``: (p, -grad V - Lambda^T r, -gamma r + Lambda p); the
    ``ou2`` reservoir adds the rotation terms and an s component; the
    ``langevin`` reservoir has friction on the boundary momenta and a
    zero r component.
    """
    params = model.params
    validate_state(params, x)
    g = potential_gradient(model.spec, params, x.q)
    lam = params.lam
    dq = x.p.copy()
    dp = -g
    n = params.n
    kind = params.reservoir_kind
    if kind == "langevin":
        eta2 = lam * lam
        dp[0] -= eta2 * x.p[0]
        dp[n - 1] -= eta2 * x.p[n - 1]
        return State(p=dp, q=dq, r=np.zeros_like(x.r))
    dp[0] -= lam * x.r[0]
    dp[n - 1] -= lam * x.r[1]
    dr = -params.gamma * x.r
    dr[0] += lam * x.p[0]
    dr[1] += lam * x.p[n - 1]
    if kind == "ou1":
        return State(p=dp, q=dq, r=dr)
    dr -= params.sigma * x.s
    ds = -params.gamma * x.s + params.sigma * x.r
    return State(p=dp, q=dq, r=dr, s=ds)


def ou_exact_step(r: np.ndarray, gamma: float, temperatures, h: float,
                  noise: np.ndarray) -> np.ndarray:
    """One exact OU transition r' = e^{-gamma h} r + sqrt(T_i (1 - e^{-2 gamma h})) xi.

    Row i of ``r`` and ``noise`` uses temperature ``temperatures[i]``.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    r = np.asarray(r, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    decay = np.exp(-gamma * h)
    amps = np.sqrt(np.asarray(temperatures, dtype=np.float64)
                   * (1.0 - np.exp(-2.0 * gamma * h)))
    return decay * r + amps[:, None] * noise


def _ou2_chol(gamma: float, sigma: float, h: float):
    """Cholesky factors of the exact (r, s) noise covariance over time h.

    The covariance at unit temperature is
        C = gamma * [[I0 + Ic, Is], [Is, I0 - Ic]]
    with I0, Ic, Is the integrals of e^{-2 gamma u} {1, cos 2 sigma u,
    sin 2 sigma u} over [0, h]; channel i scales by sqrt(T_i).
    """
    a = 2.0 * gamma
    b = 2.0 * sigma
    i0 = (1.0 - np.exp(-a * h)) / a
    den = a * a + b * b
    ic = (a - np.exp(-a * h) * (a * np.cos(b * h) - b * np.sin(b * h))) / den
    is_ = (b - np.exp(-a * h) * (a * np.sin(b * h) + b * np.cos(b * h))) / den
    c_rr = gamma * (i0 + ic)
    c_ss = gamma * (i0 - ic)
    c_rs = gamma * is_
    l11 = np.sqrt(max(c_rr, 0.0))
    l21 = c_rs / l11 if l11 > 0 else 0.0
    l22 = np.sqrt(max(c_ss - l21 * l21, 0.0))
    return l11, l21, l22


def _alloc_records(params: ChainParams, steps: int, thin: int):
    n, d = params.n, params.d
    nrec = steps // thin + 1
    rec = {
        "t": np.zeros(nrec),
        "p": np.zeros((nrec, n, d)),
        "q": np.zeros((nrec, n, d)),
        "r": np.zeros((nrec, 2, d)),
        "g": np.zeros(nrec),
        "d": np.zeros(nrec),
    }
    if params.reservoir_kind == "ou2":
        rec["s"] = np.zeros((nrec, 2, d))
    return rec


def _draw_noise(params: ChainParams, scheme: str, steps: int,
                rng: Optional[np.random.Generator]):
    d = params.d
    if scheme == "strang_split":
        shape = (steps, 2, 2, d, 2) if params.reservoir_kind == "ou2" \
            else (steps, 2, 2, d)
    else:
        shape = (steps, 2, d)
    if rng is None:
        return np.zeros(shape)
    return rng.standard_normal(shape)


def _run_kernel(model: Model, x: State, scheme: str, dt: float, steps: int,
                thin: int, noise: np.ndarray, rec: dict,
                stop_hi: float, stop_lo: float = 0.0, use_stop_lo: bool = False):
    """Dispatch to the compiled stepper; mutates ``x`` arrays in place."""
    params = model.params
    oc, oe, tc, te = model.spec.term_arrays()
    lam = params.lam
    lam2 = lam * lam
    t1, tn = params.temperatures
    args_rec = (rec["t"], rec["p"], rec["q"], rec["r"], rec["g"], rec["d"])
    kind = params.reservoir_kind
    if scheme == "strang_split":
        if kind == "ou1":
            return _kernels.strang_ou1(
                x.p, x.q, x.r, oc, oe, tc, te, lam2, lam, params.gamma, t1, tn,
                dt, steps, noise, thin, *args_rec, stop_hi, stop_lo, use_stop_lo)
        if kind == "ou2":
            l11, l21, l22 = _ou2_chol(params.gamma, params.sigma, 0.5 * dt)
            scale = np.sqrt(np.array([t1, tn]))
            return _kernels.strang_ou2(
                x.p, x.q, x.r, x.s, oc, oe, tc, te, lam2, lam, params.gamma,
                params.sigma, t1, tn, dt, steps, noise,
                l11 * scale, l21 * scale, l22 * scale, thin,
                rec["t"], rec["p"], rec["q"], rec["r"], rec["s"], rec["g"],
                rec["d"], stop_hi, stop_lo, use_stop_lo)
        return _kernels.strang_langevin(
            x.p, x.q, x.r, oc, oe, tc, te, lam2, t1, tn, dt, steps, noise,
            thin, *args_rec, stop_hi, stop_lo, use_stop_lo)
    if kind == "ou1":
        return _kernels.euler_ou1(
            x.p, x.q, x.r, oc, oe, tc, te, lam2, lam, params.gamma, t1, tn,
            dt, steps, noise, thin, *args_rec, stop_hi, stop_lo, use_stop_lo)
    if kind == "ou2":
        return _kernels.euler_ou2(
            x.p, x.q, x.r, x.s, oc, oe, tc, te, lam2, lam, params.gamma,
            params.sigma, t1, tn, dt, steps, noise, thin,
            rec["t"], rec["p"], rec["q"], rec["r"], rec["s"], rec["g"],
            rec["d"], stop_hi, stop_lo, use_stop_lo)
    return _kernels.euler_langevin(
        x.p, x.q, x.r, oc, oe, tc, te, lam2, t1, tn, dt, steps, noise,
        thin, *args_rec, stop_hi, stop_lo, use_stop_lo)


def _build_trajectory(model: Model, rec: dict, nrec: int, dt: float,
                      scheme: str, thin: int, seed) -> Trajectory:
    return Trajectory(
        times=rec["t"][:nrec].copy(),
        p=rec["p"][:nrec].copy(),
        q=rec["q"][:nrec].copy(),
        r=rec["r"][:nrec].copy(),
        s=rec["s"][:nrec].copy() if "s" in rec else None,
        energy=rec["g"][:nrec].copy(),
        diss=rec["d"][:nrec].copy(),
        dt=dt,
        scheme=scheme,
        thin=thin,
        reservoir_kind=model.params.reservoir_kind,
        seed=seed,
    )


def simulate(model: Model, x0: State, cfg: IntegratorConfig) -> Trajectory:
    """Integrate the stochastic dynamics from ``x0``.

    Raises :class:`BlowUp` when G crosses ``cfg.blowup_threshold``.
    Output is bit-reproducible for fixed ``(model, x0, cfg)``.
    """
    params = model.params
    validate_state(params, x0)
    if cfg.scheme == "euler_maruyama" and cfg.dt * params.gamma >= 1.0:
        warnings.warn("euler_maruyama with dt*gamma >= 1 is unstable; "
                      "reduce dt or use strang_split", stacklevel=2)
    x = x0.copy()
    rng = make_rng(cfg.seed)
    noise = _draw_noise(params, cfg.scheme, cfg.steps, rng)
    rec = _alloc_records(params, cfg.steps, cfg.thin)
    status, step, nrec, g_last = _run_kernel(
        model, x, cfg.scheme, cfg.dt, cfg.steps, cfg.thin, noise, rec,
        stop_hi=cfg.blowup_threshold)
    if status == 2:
        raise BlowUp(step, g_last)
    return _build_trajectory(model, rec, nrec, cfg.dt, cfg.scheme, cfg.thin,
                             cfg.seed)


def deterministic_flow(model: Model, x0: State, dt: float, steps: int,
                       thin: int = 1, scheme: str = "strang_split",
                       blowup_threshold: float = 1e12) -> Trajectory:
    """Integrate the zero-temperature (purely dissipative) flow.

    Identical stepping code as :func:`simulate` with zero noise, so a
    simulation with both temperatures zero reproduces this bit for bit.
    Along the output G is non-increasing up to the integrator tolerance
    and G(t) - G(0) = -D(t) up to O(dt^2) per unit time.
    """
    params = model.params
    validate_state(params, x0)
    zero_model = Model(model.spec, params.with_temperatures(0.0, 0.0),
                       skip_growth_check=True)
    x = x0.copy()
    noise = _draw_noise(params, scheme, steps, rng=None)
    rec = _alloc_records(params, steps, thin)
    status, step, nrec, g_last = _run_kernel(
        zero_model, x, scheme, dt, steps, thin, noise, rec,
        stop_hi=blowup_threshold)
    if status == 2:
        raise BlowUp(step, g_last)
    return _build_trajectory(zero_model, rec, nrec, dt, scheme, thin, None)


@dataclass
class SegmentResult:
    """Outcome of a low-level segment run (used by hitting/exceedance probes)."""

    status: int
    steps_done: int
    g_last: float


def run_segment(model: Model, x: State, scheme: str, dt: float, steps: int,
                noise: np.ndarray, stop_hi: float, stop_lo: float = 0.0,
                use_stop_lo: bool = False) -> SegmentResult:
    """Advance ``x`` in place for up to ``steps`` steps without recording.

    Stops early when G <= ``stop_lo`` (if enabled) or G >= ``stop_hi``.
    Callers supply the noise block and chain segments to continue a
    path; used by the hitting-time and exceedance estimators.
    """
    rec = _alloc_records(model.params, 0, 1)
    status, steps_done, _, g_last = _run_kernel(
        model, x, scheme, dt, steps, steps + 1, noise, rec,
        stop_hi=stop_hi, stop_lo=stop_lo, use_stop_lo=use_stop_lo)
    return SegmentResult(status=status, steps_done=steps_done, g_last=g_last)
