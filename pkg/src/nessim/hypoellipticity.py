"""Lie-bracket rank certificates and the associated control system.

The generator of the chain diffusion has the Hoermander form
sum_i X_i^2 + X_0 with constant diffusion fields X_i =
sqrt(gamma T_i) d/dr_i^(j) and the drift field X_0.  When iterated
brackets of these fields span the full tangent space at every point,
the process has a smooth transition law; ``hormander_rank`` verifies the
span numerically at a point.

Brackets are evaluated pointwise but exactly (up to rounding) for the
polynomial potential family: vector fields are evaluated on truncated
multilinear jets (one nilpotent generator per directional derivative),
so [F, G](x) = DG(x) F(x) - DF(x) G(x) requires no symbolic algebra and
no finite-difference truncation error.  A central-difference fallback is
provided for cross-checks on plain callables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .chain_model import State, index_map, state_dim, state_to_vec
from .sde_dynamics import BlowUp, Model

# ---------------------------------------------------------------------------
# Multilinear jets: arrays of shape (W, ...) with W = 2**n_generators.
# Row S (a bitmask over generators) holds the coefficient of prod_{i in S}
# t_i; generators are nilpotent (t_i^2 = 0), which is exactly enough to
# extract mixed first derivatives along every generator direction.
# ---------------------------------------------------------------------------

_TRIPLES_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _mul_triples(width: int):
    """Index triples (S, A, S \\ A) for subset-convolution products."""
    if width not in _TRIPLES_CACHE:
        ss, aa, bb = [], [], []
        for s in range(width):
            a = s
            while True:
                ss.append(s)
                aa.append(a)
                bb.append(s ^ a)
                if a == 0:
                    break
                a = (a - 1) & s
        _TRIPLES_CACHE[width] = (np.array(ss), np.array(aa), np.array(bb))
    return _TRIPLES_CACHE[width]


def jet_const(value, width: int, shape=()) -> np.ndarray:
    out = np.zeros((width,) + shape)
    out[0] = value
    return out


def jmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two jets (subset convolution over the leading axis)."""
    width = a.shape[0]
    ss, aa, bb = _mul_triples(width)
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    np.add.at(out, ss, a[aa] * b[bb])
    return out


def jpow(a: np.ndarray, k: int) -> np.ndarray:
    """Integer power of a jet by binary exponentiation (k >= 0)."""
    width = a.shape[0]
    result = jet_const(1.0, width, a.shape[1:])
    base = a
    while k > 0:
        if k & 1:
            result = jmul(result, base)
        base = jmul(base, base) if k > 1 else base
        k >>= 1
    return result


@dataclass
class Field:
    """Vector field evaluated on jets; ``const`` set when x-independent."""

    eval_jet: Callable[[np.ndarray], np.ndarray]
    level: int
    label: str
    const: Optional[np.ndarray] = None
    is_drift: bool = False

    def value(self, x: np.ndarray) -> np.ndarray:
        if self.const is not None:
            return self.const.copy()
        return self.eval_jet(np.asarray(x, dtype=np.float64)[None, :])[0]

    def table(self, xjet: np.ndarray) -> np.ndarray:
        if self.const is not None:
            return jet_const(self.const, xjet.shape[0], self.const.shape)
        return self.eval_jet(xjet)


def directional(field: Field, xjet: np.ndarray, vjet: np.ndarray) -> np.ndarray:
    """D field(x)[v] on jets: append one generator and read its coefficient."""
    if field.const is not None:
        return np.zeros_like(vjet)
    width = xjet.shape[0]
    lifted = np.concatenate([xjet, vjet], axis=0)
    return field.eval_jet(lifted)[width:]


def constant_field(vec: np.ndarray, label: str, level: int = 0) -> Field:
    vec = np.asarray(vec, dtype=np.float64)
    return Field(eval_jet=lambda xj: jet_const(vec, xj.shape[0], vec.shape),
                 level=level, label=label, const=vec)


def bracket(f: Field, g: Field, q_slice: Optional[slice] = None) -> Optional[Field]:
    """Lie bracket [f, g] as a new Field; ``None`` when identically zero.

    When ``f`` is constant with no q-component and ``g`` is the drift,
    the result is again constant (the drift Jacobian columns outside q
    do not depend on x); ``q_slice`` enables that shortcut.
    """
    if f.const is not None and g.const is not None:
        return None
    label = f"[{f.label},{g.label}]"
    level = f.level + g.level + 1

    def ev(xjet: np.ndarray) -> np.ndarray:
        fx = f.table(xjet)
        gx = g.table(xjet)
        term1 = directional(g, xjet, fx)
        term2 = directional(f, xjet, gx)
        return term1 - term2

    out = Field(eval_jet=ev, level=level, label=label)
    if (f.const is not None and g.is_drift and q_slice is not None
            and not np.any(f.const[q_slice])):
        probe = np.zeros(f.const.shape[0])
        out.const = out.eval_jet(probe[None, :])[0].copy()
    return out


# ---------------------------------------------------------------------------
# Jet-capable drift of the first-order OU chain
# ---------------------------------------------------------------------------

def _drift_jet_factory(model: Model) -> Callable[[np.ndarray], np.ndarray]:
    params = model.params
    if params.reservoir_kind != "ou1":
        raise ValueError("bracket fields are defined for the ou1 reservoir")
    oc, oe, tc, te = model.spec.term_arrays()
    lam = params.lam
    lam2 = lam * lam
    gamma = params.gamma
    n, d = params.n, params.d
    nd = n * d

    def drift(xjet: np.ndarray) -> np.ndarray:
        width = xjet.shape[0]
        p = xjet[:, :nd].reshape(width, n, d)
        q = xjet[:, nd:2 * nd].reshape(width, n, d)
        r = xjet[:, 2 * nd:].reshape(width, 2, d)
        grad = np.zeros((width, n, d))
        for i in range(n):
            sq = np.zeros(width)
            for j in range(d):
                sq += jmul(q[:, i, j], q[:, i, j])
            fac = np.zeros(width)
            for t in range(len(oc)):
                fac += oc[t] * oe[t] * jpow(sq, int(oe[t] - 2) // 2)
            for j in range(d):
                grad[:, i, j] += jmul(fac, q[:, i, j])
        for i in range(n - 1):
            sq = np.zeros(width)
            dq = q[:, i] - q[:, i + 1]
            for j in range(d):
                sq += jmul(dq[:, j], dq[:, j])
            fac = np.zeros(width)
            for t in range(len(tc)):
                fac += tc[t] * te[t] * jpow(sq, int(te[t] - 2) // 2)
            for j in range(d):
                g = jmul(fac, dq[:, j])
                grad[:, i, j] += g
                grad[:, i + 1, j] -= g
        grad[:, 0] -= lam2 * q[:, 0]
        grad[:, n - 1] -= lam2 * q[:, n - 1]

        dp = -grad
        dp[:, 0] -= lam * r[:, 0]
        dp[:, n - 1] -= lam * r[:, 1]
        dr = -gamma * r
        dr[:, 0] += lam * p[:, 0]
        dr[:, 1] += lam * p[:, n - 1]
        out = np.empty_like(xjet)
        out[:, :nd] = dp.reshape(width, nd)
        out[:, nd:2 * nd] = p.reshape(width, nd)
        out[:, 2 * nd:] = dr.reshape(width, 2 * d)
        return out

    return drift


@dataclass
class VectorFieldSet:
    """Drift field X0 plus the 2d constant diffusion fields."""

    x0: Field
    xi: list[Field]
    q_slice: slice
    dim: int


def vector_fields(model: Model) -> VectorFieldSet:
    """Build the Hoermander fields of a (ou1) model.

    Diffusion channels at zero temperature contribute no field, so with
    both temperatures zero ``xi`` is empty and the spanned rank is 0.
    """
    params = model.params
    idx = index_map(params)
    m = state_dim(params)
    x0 = Field(eval_jet=_drift_jet_factory(model), level=0, label="X0",
               is_drift=True)
    xi: list[Field] = []
    gamma = params.gamma
    r_start = idx["r"].start
    for c, temp in enumerate(params.temperatures):
        if temp <= 0.0:
            continue
        for j in range(params.d):
            vec = np.zeros(m)
            vec[r_start + c * params.d + j] = math.sqrt(gamma * temp)
            xi.append(constant_field(vec, f"X_r{c + 1}^{j + 1}"))
    return VectorFieldSet(x0=x0, xi=xi, q_slice=idx["q"], dim=m)


# ---------------------------------------------------------------------------
# Public bracket on Fields or plain callables
# ---------------------------------------------------------------------------

def _fd_jacobian_apply(func, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    h = 1e-5 * (1.0 + float(np.linalg.norm(x)))
    return (np.asarray(func(x + h * v)) - np.asarray(func(x - h * v))) / (2.0 * h)


def lie_bracket(f, g, x, order: int = 1, method: str = "auto") -> np.ndarray:
    """Iterated Lie bracket ad_f^order(g) evaluated at ``x``.

    ``order=1`` gives [f, g](x) = Dg(x) f(x) - Df(x) g(x).  Fields built
    by :func:`vector_fields` (or :func:`bracket`) are differentiated
    exactly on jets; plain callables fall back to central differences
    with step 1e-5 (1 + ||x||) (``method="fd"`` forces the fallback for
    cross-checking).
    """
    x = np.asarray(x, dtype=np.float64)
    if order < 1:
        raise ValueError("order must be >= 1")
    if not np.isfinite(x).all():
        raise ValueError("x must be finite")
    exact = isinstance(f, Field) and isinstance(g, Field) and method != "fd"
    if exact:
        cur = g
        for _ in range(order):
            nxt = bracket(f, cur)
            if nxt is None:
                return np.zeros_like(f.const if f.const is not None else x)
            cur = nxt
        return cur.value(x)
    ff = f.value if isinstance(f, Field) else f
    gg = g.value if isinstance(g, Field) else g

    def bracket_fn(a, b):
        def ev(y):
            return _fd_jacobian_apply(b, y, np.asarray(a(y))) \
                - _fd_jacobian_apply(a, y, np.asarray(b(y)))
        return ev

    cur = gg
    for _ in range(order):
        cur = bracket_fn(ff, cur)
    return np.asarray(cur(x))


# ---------------------------------------------------------------------------
# Rank certificate
# ---------------------------------------------------------------------------

@dataclass
class RankResult:
    rank: int
    depth_reached: int
    witness: list[str]

    def as_dict(self) -> dict:
        return {"rank": self.rank, "depth_reached": self.depth_reached,
                "witness": list(self.witness)}


def _infer_depth_cap(model: Model) -> int:
    # the k2-th derivative of U2 is the first that cannot vanish at any
    # point; worst-case points need bracket words of weight ~ k2 - 1
    # before the chain-propagation levels kick in
    return (model.spec.k2 - 1) + 3


def hormander_rank(model: Model, x: State, max_depth: Optional[int] = None,
                   svd_rtol: float = 1e-9, max_parents: int = 48) -> RankResult:
    """Numerical rank of the bracket-generated distribution at ``x``.

    Starts from the constant diffusion fields, then repeatedly adjoins
    brackets with the drift and (when the rank stalls) brackets among
    the generated fields, up to nesting level ``max_depth``.  The rank
    is the SVD rank of all collected tangent vectors with tolerance
    ``svd_rtol * sigma_max``; full rank equals dim(X) = 2 d (n + 1).
    """
    if max_depth is None:
        max_depth = _infer_depth_cap(model)
    if max_depth < 2:
        raise ValueError("max_depth must be >= 2")
    fields = vector_fields(model)
    point = state_to_vec(model.params, x)
    m = fields.dim

    collected: list[np.ndarray] = []
    basis: list[np.ndarray] = []
    witness: list[str] = []
    depth_reached = 0

    def try_add(fld: Field, depth: int) -> bool:
        nonlocal depth_reached
        vec = fld.value(point)
        collected.append(vec)
        res = vec.copy()
        for b in basis:
            res -= (res @ b) * b
        # second orthogonalization pass for numerical safety
        for b in basis:
            res -= (res @ b) * b
        norm = np.linalg.norm(res)
        if norm > 1e-9 * (1.0 + np.linalg.norm(vec)):
            basis.append(res / norm)
            witness.append(fld.label)
            depth_reached = depth
            return True
        return False

    parents: list[Field] = []
    frontier: list[Field] = []
    for f in fields.xi:
        try_add(f, 0)
        parents.append(f)
        frontier.append(f)

    stalled = False  # sticky: once the rank stalls, pair brackets stay on
    for level in range(1, max_depth + 1):
        if len(basis) == m or not parents:
            break
        candidates: list[Field] = []
        for f in frontier:
            nxt = bracket(f, fields.x0, q_slice=fields.q_slice)
            if nxt is not None:
                candidates.append(nxt)
        if stalled:
            for i, f in enumerate(parents):
                for g in parents[i + 1:]:
                    if f.level + g.level + 1 != level:
                        continue
                    if f.const is not None and g.const is not None:
                        continue
                    nxt = bracket(f, g, q_slice=fields.q_slice)
                    if nxt is not None:
                        candidates.append(nxt)
        frontier = []
        gained = False
        for cand in candidates:
            if len(basis) == m:
                break
            if try_add(cand, level):
                gained = True
            if len(parents) < max_parents:
                parents.append(cand)
                frontier.append(cand)
        if not gained:
            stalled = True
        if not frontier:
            break

    if collected:
        sv = np.linalg.svd(np.vstack(collected), compute_uv=False)
        rank = int(np.sum(sv > svd_rtol * sv[0])) if sv[0] > 0 else 0
    else:
        rank = 0
    return RankResult(rank=rank, depth_reached=depth_reached, witness=witness)


# ---------------------------------------------------------------------------
# Control system integration
# ---------------------------------------------------------------------------

def control_flow(model: Model, u, x0: State, dt: float,
                 t_horizon: float) -> State:
    """Integrate the control system with RK4 and return the final state.

    The controlled dynamics is the zero-temperature flow with the
    control added to the r equation:
        q' = p,  p' = -grad V - Lambda^T r,  r' = -gamma r + Lambda p + u.
    ``u`` is either a callable t -> (2, d) array or an array of shape
    (k, 2, d) sampled uniformly on [0, t_horizon] (linear interpolation,
    so the sampling resolution should be <= dt).  With u = 0 this agrees
    with ``deterministic_flow`` up to integrator tolerances.
    """
    params = model.params
    if params.reservoir_kind != "ou1":
        raise ValueError("control_flow is defined for the ou1 reservoir")
    n, d = params.n, params.d
    if callable(u):
        u_of = lambda t: np.asarray(u(t), dtype=np.float64).reshape(2, d)
    else:
        u_arr = np.asarray(u, dtype=np.float64).reshape(-1, 2, d)
        k = len(u_arr)
        if k < 2:
            u_of = lambda t: u_arr[0]
        else:
            grid_dt = t_horizon / (k - 1)

            def u_of(t):
                pos = min(max(t / grid_dt, 0.0), k - 1.0)
                i = min(int(pos), k - 2)
                w = pos - i
                return (1.0 - w) * u_arr[i] + w * u_arr[i + 1]

    from .chain_model import potential_gradient

    lam, gamma = params.lam, params.gamma

    def rhs(t, p, q, r):
        g = potential_gradient(model.spec, params, q)
        dp = -g
        dp[0] -= lam * r[0]
        dp[n - 1] -= lam * r[1]
        dr = -gamma * r + u_of(t)
        dr[0] += lam * p[0]
        dr[1] += lam * p[n - 1]
        return p.copy(), dp, dr

    steps = max(1, int(round(t_horizon / dt)))
    h = t_horizon / steps
    p, q, r = x0.p.copy(), x0.q.copy(), x0.r.copy()
    t = 0.0
    for _ in range(steps):
        k1q, k1p, k1r = rhs(t, p, q, r)
        k2q, k2p, k2r = rhs(t + 0.5 * h, p + 0.5 * h * k1p, q + 0.5 * h * k1q,
                            r + 0.5 * h * k1r)
        k3q, k3p, k3r = rhs(t + 0.5 * h, p + 0.5 * h * k2p, q + 0.5 * h * k2q,
                            r + 0.5 * h * k2r)
        k4q, k4p, k4r = rhs(t + h, p + h * k3p, q + h * k3q, r + h * k3r)
        q = q + (h / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
        p = p + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        r = r + (h / 6.0) * (k1r + 2 * k2r + 2 * k3r + k4r)
        t += h
        if not (np.isfinite(p).all() and np.isfinite(q).all()
                and np.isfinite(r).all()):
            raise BlowUp(int(t / h), float("inf"))
    return State(p=p, q=q, r=r)
