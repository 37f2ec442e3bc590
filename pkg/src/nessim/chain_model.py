"""Chain model: potentials, energies, derivatives and growth validation.

The chain consists of ``n`` oscillators in dimension ``d`` with one-body
potential ``U1`` and nearest-neighbour two-body potential ``U2``, both
restricted to sums of even powers of the Euclidean norm,

    U(x) = sum_t  c_t * ||x||**k_t,      k_t even, k_t >= 2.

The boundary sites couple linearly (strength ``lambda``) to auxiliary
reservoir variables, which shifts the potential energy seen by the
dynamics to the effective potential

    V_eff(q) = sum_i U1(q_i) + sum_i U2(q_i - q_{i+1})
               - lambda^2 (||q_1||^2 + ||q_n||^2) / 2.

All functions here operate on that effective potential.  The extended
energy G adds the kinetic term and the reservoir quadratic terms and is
the Liapunov scale used everywhere else in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

RESERVOIR_KINDS = ("ou1", "ou2", "langevin")

# Dense linear-algebra oracles and the Hessian-based diagnostics assume
# small chains; raise above this unless explicitly overridden.
MAX_SITES_TIMES_DIM = 64


class DomainError(ValueError):
    """Raised when an operation receives a non-finite or ill-shaped input."""


@dataclass(frozen=True)
class PotentialTerm:
    """Single even-power term ``coefficient * ||x||**exponent``."""

    coefficient: float
    exponent: int

    def __post_init__(self):
        if self.exponent < 2 or self.exponent % 2 != 0:
            raise ValueError(
                f"exponent must be an even integer >= 2, got {self.exponent}"
            )
        if not math.isfinite(self.coefficient):
            raise ValueError("coefficient must be finite")


@dataclass(frozen=True)
class PotentialSpec:
    """One-body and two-body potentials as tuples of :class:`PotentialTerm`.

    ``one_body`` may be empty (free chain up to the coupling terms);
    ``two_body`` must contain at least one term so neighbouring sites
    interact.
    """

    one_body: tuple[PotentialTerm, ...]
    two_body: tuple[PotentialTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, "one_body", tuple(self.one_body))
        object.__setattr__(self, "two_body", tuple(self.two_body))
        if not self.two_body:
            raise ValueError("two_body potential needs at least one term")

    @property
    def k1(self) -> Optional[int]:
        """Leading (largest) one-body exponent, ``None`` when absent."""
        return max((t.exponent for t in self.one_body), default=None)

    @property
    def k2(self) -> int:
        """Leading two-body exponent; sets the high-energy time scale."""
        return max(t.exponent for t in self.two_body)

    def is_quadratic(self) -> bool:
        terms = self.one_body + self.two_body
        return all(t.exponent == 2 for t in terms)

    def term_arrays(self):
        """Flat coefficient/exponent arrays consumed by the kernels."""
        oc = np.array([t.coefficient for t in self.one_body], dtype=np.float64)
        oe = np.array([t.exponent for t in self.one_body], dtype=np.int64)
        tc = np.array([t.coefficient for t in self.two_body], dtype=np.float64)
        te = np.array([t.exponent for t in self.two_body], dtype=np.int64)
        return oc, oe, tc, te


def power_spec(one_body: Sequence[tuple[float, int]],
               two_body: Sequence[tuple[float, int]]) -> PotentialSpec:
    """Build a :class:`PotentialSpec` from ``(coefficient, exponent)`` pairs."""
    return PotentialSpec(
        one_body=tuple(PotentialTerm(c, k) for c, k in one_body),
        two_body=tuple(PotentialTerm(c, k) for c, k in two_body),
    )


@dataclass(frozen=True)
class ChainParams:
    """Chain and reservoir configuration.

    Parameters
    ----------
    n, d : int
        Number of sites (>= 2) and space dimension (>= 1).
    lam : float
        Coupling strength between boundary sites and reservoirs.  The
        Langevin reservoir uses ``lam**2`` as its friction coefficient.
    gamma : float
        Reservoir relaxation rate (> 0).
    sigma : float
        Oscillation frequency of the second-order reservoir; used only
        by kind ``"ou2"`` where it must be > 0.
    temperatures : (float, float)
        Left and right reservoir temperatures, each >= 0.
    reservoir_kind : {"ou1", "ou2", "langevin"}
    """

    n: int
    d: int
    lam: float
    gamma: float
    temperatures: tuple[float, float]
    sigma: float = 0.0
    reservoir_kind: str = "ou1"
    allow_large: bool = False

    def __post_init__(self):
        object.__setattr__(self, "temperatures",
                           (float(self.temperatures[0]), float(self.temperatures[1])))
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if min(self.temperatures) < 0:
            raise ValueError("temperatures must be >= 0")
        if self.reservoir_kind not in RESERVOIR_KINDS:
            raise ValueError(f"reservoir_kind must be one of {RESERVOIR_KINDS}")
        if self.reservoir_kind == "ou2" and self.sigma <= 0:
            raise ValueError("ou2 reservoir requires sigma > 0")
        if self.n * self.d > MAX_SITES_TIMES_DIM and not self.allow_large:
            raise ValueError(
                f"n*d = {self.n * self.d} exceeds {MAX_SITES_TIMES_DIM}; "
                "pass allow_large=True to override (dense oracles get slow)"
            )

    @property
    def t_max(self) -> float:
        return max(self.temperatures)

    @property
    def temperature_trace(self) -> float:
        """Trace of the reservoir temperature map, ``d*(T1 + Tn)``."""
        return self.d * (self.temperatures[0] + self.temperatures[1])

    def with_temperatures(self, t1: float, tn: float) -> "ChainParams":
        return replace(self, temperatures=(t1, tn))


@dataclass
class State:
    """Phase point ``(p, q, r[, s])`` of the extended phase space.

    ``p`` and ``q`` have shape ``(n, d)``; ``r`` has shape ``(2, d)``
    (row 0 couples to site 1, row 1 to site n).  ``s`` is the second
    auxiliary variable and is present exactly for the ``ou2`` reservoir.
    For the ``langevin`` reservoir ``r`` is carried along but inert
    (conventionally zero).
    """

    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    s: Optional[np.ndarray] = None

    def __post_init__(self):
        self.p = np.ascontiguousarray(self.p, dtype=np.float64)
        self.q = np.ascontiguousarray(self.q, dtype=np.float64)
        self.r = np.ascontiguousarray(self.r, dtype=np.float64)
        if self.s is not None:
            self.s = np.ascontiguousarray(self.s, dtype=np.float64)

    @classmethod
    def zeros(cls, params: ChainParams) -> "State":
        s = np.zeros((2, params.d)) if params.reservoir_kind == "ou2" else None
        return cls(
            p=np.zeros((params.n, params.d)),
            q=np.zeros((params.n, params.d)),
            r=np.zeros((2, params.d)),
            s=s,
        )

    def copy(self) -> "State":
        return State(
            p=self.p.copy(),
            q=self.q.copy(),
            r=self.r.copy(),
            s=None if self.s is None else self.s.copy(),
        )

    def is_finite(self) -> bool:
        ok = np.isfinite(self.p).all() and np.isfinite(self.q).all() \
            and np.isfinite(self.r).all()
        if self.s is not None:
            ok = ok and np.isfinite(self.s).all()
        return bool(ok)


def validate_state(params: ChainParams, x: State) -> None:
    """Check shapes, finiteness and the s-presence convention."""
    n, d = params.n, params.d
    if x.p.shape != (n, d) or x.q.shape != (n, d) or x.r.shape != (2, d):
        raise DomainError(
            f"state shapes {x.p.shape}/{x.q.shape}/{x.r.shape} do not match "
            f"(n, d) = ({n}, {d})"
        )
    if params.reservoir_kind == "ou2":
        if x.s is None or x.s.shape != (2, d):
            raise DomainError("ou2 reservoir requires s with shape (2, d)")
    elif x.s is not None:
        raise DomainError(f"s must be absent for reservoir {params.reservoir_kind}")
    if not x.is_finite():
        raise DomainError("state contains non-finite entries")


# ---------------------------------------------------------------------------
# State <-> flat vector layout.  The canonical ordering is
# [p (site-major), q, r, s?] with the kind-dependent tail; the linear
# oracle, covariance estimators and bracket computations all share it.
# ---------------------------------------------------------------------------

def state_blocks(params: ChainParams) -> list[tuple[str, int]]:
    nd = params.n * params.d
    blocks = [("p", nd), ("q", nd)]
    if params.reservoir_kind in ("ou1", "ou2"):
        blocks.append(("r", 2 * params.d))
    if params.reservoir_kind == "ou2":
        blocks.append(("s", 2 * params.d))
    return blocks


def index_map(params: ChainParams) -> dict[str, slice]:
    out = {}
    offset = 0
    for name, size in state_blocks(params):
        out[name] = slice(offset, offset + size)
        offset += size
    return out


def state_dim(params: ChainParams) -> int:
    return sum(size for _, size in state_blocks(params))


def state_to_vec(params: ChainParams, x: State) -> np.ndarray:
    parts = [x.p.ravel(), x.q.ravel()]
    if params.reservoir_kind in ("ou1", "ou2"):
        parts.append(x.r.ravel())
    if params.reservoir_kind == "ou2":
        parts.append(x.s.ravel())
    return np.concatenate(parts)


def vec_to_state(params: ChainParams, v: np.ndarray) -> State:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (state_dim(params),):
        raise DomainError(f"vector length {v.shape} != {state_dim(params)}")
    idx = index_map(params)
    n, d = params.n, params.d
    p = v[idx["p"]].reshape(n, d).copy()
    q = v[idx["q"]].reshape(n, d).copy()
    if "r" in idx:
        r = v[idx["r"]].reshape(2, d).copy()
    else:
        r = np.zeros((2, d))
    s = v[idx["s"]].reshape(2, d).copy() if "s" in idx else None
    return State(p=p, q=q, r=r, s=s)


# ---------------------------------------------------------------------------
# Potential evaluation
# ---------------------------------------------------------------------------

def _check_positions(params: ChainParams, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (params.n, params.d):
        raise DomainError(f"q has shape {q.shape}, expected {(params.n, params.d)}")
    if not np.isfinite(q).all():
        raise DomainError("q contains non-finite entries")
    return q


def _power_sum(terms: tuple[PotentialTerm, ...], sq: np.ndarray) -> np.ndarray:
    """Evaluate sum_t c_t * sq**(k_t/2) for squared norms ``sq``."""
    out = np.zeros_like(sq)
    for t in terms:
        out += t.coefficient * sq ** (t.exponent // 2)
    return out


def _power_grad_factor(terms, sq: np.ndarray) -> np.ndarray:
    """d/dx of a power sum equals factor(x) * x with this scalar factor."""
    out = np.zeros_like(sq)
    for t in terms:
        out += t.coefficient * t.exponent * sq ** (t.exponent // 2 - 1)
    return out


def potential_energy(spec: PotentialSpec, params: ChainParams, q) -> float:
    """Effective potential ``V_eff`` at positions ``q``.

    Returns the one-body plus two-body power sums minus the boundary
    correction ``lam^2 (||q_1||^2 + ||q_n||^2) / 2`` induced by the
    reservoir coupling.
    """
    q = _check_positions(params, q)
    sq1 = (q * q).sum(axis=1)
    v = float(_power_sum(spec.one_body, sq1).sum())
    dq = q[:-1] - q[1:]
    sq2 = (dq * dq).sum(axis=1)
    v += float(_power_sum(spec.two_body, sq2).sum())
    v -= 0.5 * params.lam ** 2 * float(sq1[0] + sq1[-1])
    return v


def potential_gradient(spec: PotentialSpec, params: ChainParams, q) -> np.ndarray:
    """Gradient of :func:`potential_energy`, shape ``(n, d)``, exact."""
    q = _check_positions(params, q)
    sq1 = (q * q).sum(axis=1)
    g = _power_grad_factor(spec.one_body, sq1)[:, None] * q
    dq = q[:-1] - q[1:]
    sq2 = (dq * dq).sum(axis=1)
    gpair = _power_grad_factor(spec.two_body, sq2)[:, None] * dq
    g[:-1] += gpair
    g[1:] -= gpair
    g[0] -= params.lam ** 2 * q[0]
    g[-1] -= params.lam ** 2 * q[-1]
    return g


def _pair_hessian(terms, x: np.ndarray) -> np.ndarray:
    """Hessian of a power sum at the d-vector ``x``."""
    d = x.shape[0]
    sq = float(x @ x)
    h = np.zeros((d, d))
    eye = np.eye(d)
    for t in terms:
        k = t.exponent
        h += t.coefficient * k * sq ** (k // 2 - 1) * eye
        if k > 2:
            h += t.coefficient * k * (k - 2) * sq ** (k // 2 - 2) * np.outer(x, x)
    return h


def potential_hessian(spec: PotentialSpec, params: ChainParams, q) -> np.ndarray:
    """Hessian of ``V_eff`` as an ``(n*d, n*d)`` block-tridiagonal matrix."""
    q = _check_positions(params, q)
    n, d = params.n, params.d
    h = np.zeros((n * d, n * d))
    for i in range(n):
        blk = slice(i * d, (i + 1) * d)
        h[blk, blk] += _pair_hessian(spec.one_body, q[i])
    for i in range(n - 1):
        hb = _pair_hessian(spec.two_body, q[i] - q[i + 1])
        a = slice(i * d, (i + 1) * d)
        b = slice((i + 1) * d, (i + 2) * d)
        h[a, a] += hb
        h[b, b] += hb
        h[a, b] -= hb
        h[b, a] -= hb
    lam2 = params.lam ** 2
    for i in (0, n - 1):
        blk = slice(i * d, (i + 1) * d)
        h[blk, blk] -= lam2 * np.eye(d)
    return h


def kinetic_energy(x: State) -> float:
    return 0.5 * float((x.p * x.p).sum())


def extended_energy(spec: PotentialSpec, params: ChainParams, x: State) -> float:
    """Extended energy ``G = |r|^2/2 + |p|^2/2 + V_eff(q)`` (plus ``|s|^2/2``).

    The ``s`` contribution for the ``ou2`` reservoir keeps G dissipated
    at zero temperature (dG/dt = -gamma (r^2 + s^2) there).
    """
    validate_state(params, x)
    g = kinetic_energy(x) + potential_energy(spec, params, x.q)
    g += 0.5 * float((x.r * x.r).sum())
    if x.s is not None:
        g += 0.5 * float((x.s * x.s).sum())
    return g


# ---------------------------------------------------------------------------
# Growth-condition validator
# ---------------------------------------------------------------------------

def spectral_norm(a: np.ndarray, iters: int = 200, tol: float = 1e-12) -> float:
    """Largest singular value of ``a`` by power iteration on ``a.T a``."""
    a = np.asarray(a, dtype=np.float64)
    m = a.T @ a
    rng = np.random.Generator(np.random.Philox(key=0x5EED))
    v = rng.standard_normal(m.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v_new = w / nw
        lam_new = float(v_new @ (m @ v_new))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        v, lam = v_new, lam_new
    return math.sqrt(max(lam, 0.0))


@dataclass
class GrowthReport:
    """Outcome of the growth-condition (H1) validation."""

    k1: Optional[int]
    k2: int
    passed: bool
    reasons: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    hessian_bound_slopes: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "k1": self.k1,
            "k2": self.k2,
            "passed": self.passed,
            "reasons": list(self.reasons),
            "warnings": list(self.warnings),
            "hessian_bound_slopes": dict(self.hessian_bound_slopes),
        }


def _leading_coefficient(terms) -> float:
    kmax = max(t.exponent for t in terms)
    return sum(t.coefficient for t in terms if t.exponent == kmax)


def _hessian_ratio_slope(terms, k: int, d: int) -> float:
    """Log-log growth rate of ||Hess U(x)|| / (1 + U(x))^(1 - 2/k).

    Sampled on a log-spaced radial grid ||x|| in [1, 1e4] over a few fixed
    directions.  A slope <= 0 (within tolerance) certifies the Hessian
    growth bound empirically.
    """
    radii = np.logspace(0.0, 4.0, 25)
    rng = np.random.Generator(np.random.Philox(key=0xBEEF))
    dirs = rng.standard_normal((4, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    expo = 1.0 - 2.0 / k
    ratios = np.empty(len(radii))
    for i, rad in enumerate(radii):
        worst = 0.0
        for u in dirs:
            x = rad * u
            h = _pair_hessian(terms, x)
            uval = float(_power_sum(terms, np.array([x @ x]))[0])
            denom = max(1.0 + uval, 1e-300) ** expo
            worst = max(worst, spectral_norm(h) / denom)
        ratios[i] = max(worst, 1e-300)
    slope = np.polyfit(np.log(radii), np.log(ratios), 1)[0]
    return float(slope)


def validate_growth(spec: PotentialSpec, params: ChainParams) -> GrowthReport:
    """Check the growth conditions on the potentials.

    Verifies the exponent ordering ``k2 >= k1 >= 2``, positivity of the
    leading coefficients, the empirical Hessian growth bound, and warns
    when the boundary coupling correction removes the confining
    quadratic part of the one-body potential at the boundary sites.
    """
    k1, k2 = spec.k1, spec.k2
    reasons: list[str] = []
    warnings_: list[str] = []

    if k1 is not None and k2 < k1:
        reasons.append(f"k2 < k1 (k1={k1}, k2={k2})")
    if k1 is not None and _leading_coefficient(spec.one_body) <= 0:
        reasons.append("leading one-body coefficient is not positive")
    if _leading_coefficient(spec.two_body) <= 0:
        reasons.append("leading two-body coefficient is not positive")

    slopes = {}
    if not reasons:
        if spec.one_body:
            slopes["one_body"] = _hessian_ratio_slope(spec.one_body, k1, params.d)
        slopes["two_body"] = _hessian_ratio_slope(spec.two_body, k2, params.d)
        for name, slope in slopes.items():
            if slope > 0.05:
                reasons.append(
                    f"{name} Hessian grows faster than the H1 bound "
                    f"(log-log slope {slope:.3f})"
                )

    quad = sum(t.coefficient for t in spec.one_body if t.exponent == 2)
    if params.lam > 0 and quad - 0.5 * params.lam ** 2 <= 0:
        warnings_.append(
            "boundary coupling cancels the one-body quadratic confinement "
            f"(quadratic coefficient {quad:g} vs lambda^2/2 = "
            f"{0.5 * params.lam ** 2:g}); confinement relies on higher-order "
            "or two-body terms"
        )

    return GrowthReport(
        k1=k1,
        k2=k2,
        passed=not reasons,
        reasons=reasons,
        warnings=warnings_,
        hessian_bound_slopes=slopes,
    )
