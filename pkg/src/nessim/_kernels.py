"""Hot integration loops, JIT-compiled unless ``NESSIM_NUMBA=0``.

Every kernel is written in a numba-compatible subset of numpy so the
identical source runs under both backends.  Potentials arrive as flat
coefficient/exponent arrays (see ``PotentialSpec.term_arrays``); states
as contiguous float64 arrays that the kernels mutate in place.

Step loops return a status tuple ``(status, steps_done, n_recorded,
g_last)`` with status 0 = completed, 1 = stopped because the energy
dropped to ``stop_lo`` (hitting-time runs), 2 = energy exceeded
``stop_hi`` (blow-up detection or exceedance probes).

The ``diss`` channel accumulates the dissipation integral D(t),
approximating gamma * int (r^2 [+ s^2]) dt for the OU reservoirs and
lam^2 * int (p_1^2 + p_n^2) dt for the Langevin reservoir.  Dissipation
occurs only in the OU sub-steps of the splitting, and there the
zero-noise integral has the closed form  x0^2 (1 - e^{-2 gamma h}) / 2
per half-step, which is what gets accumulated.  At zero temperature the
identity  G(t) - G(0) + D(t) = (conservation error of the Verlet block)
is exact, so the balance residual isolates the integrator error.
"""

import numpy as np

from ._backend import jit_kernel


@jit_kernel
def grad_v(q, oc, oe, tc, te, lam2, out):
    """Write grad V_eff(q) into ``out`` (both shaped (n, d))."""
    n, d = q.shape
    for i in range(n):
        for j in range(d):
            out[i, j] = 0.0
    for i in range(n):
        sq = 0.0
        for j in range(d):
            sq += q[i, j] * q[i, j]
        fac = 0.0
        for t in range(oc.shape[0]):
            fac += oc[t] * oe[t] * sq ** ((oe[t] - 2) // 2)
        for j in range(d):
            out[i, j] += fac * q[i, j]
    for i in range(n - 1):
        sq = 0.0
        for j in range(d):
            dx = q[i, j] - q[i + 1, j]
            sq += dx * dx
        fac = 0.0
        for t in range(tc.shape[0]):
            fac += tc[t] * te[t] * sq ** ((te[t] - 2) // 2)
        for j in range(d):
            g = fac * (q[i, j] - q[i + 1, j])
            out[i, j] += g
            out[i + 1, j] -= g
    for j in range(d):
        out[0, j] -= lam2 * q[0, j]
        out[n - 1, j] -= lam2 * q[n - 1, j]


@jit_kernel
def pot_v(q, oc, oe, tc, te, lam2):
    """V_eff(q)."""
    n, d = q.shape
    v = 0.0
    for i in range(n):
        sq = 0.0
        for j in range(d):
            sq += q[i, j] * q[i, j]
        for t in range(oc.shape[0]):
            v += oc[t] * sq ** (oe[t] // 2)
        if i == 0 or i == n - 1:
            v -= 0.5 * lam2 * sq
    for i in range(n - 1):
        sq = 0.0
        for j in range(d):
            dx = q[i, j] - q[i + 1, j]
            sq += dx * dx
        for t in range(tc.shape[0]):
            v += tc[t] * sq ** (te[t] // 2)
    return v


@jit_kernel
def energy_pqr(p, q, r, oc, oe, tc, te, lam2, extra):
    """G = |p|^2/2 + V_eff(q) + |r|^2/2 + extra (``extra`` carries the s term)."""
    g = extra + pot_v(q, oc, oe, tc, te, lam2)
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            g += 0.5 * p[i, j] * p[i, j]
    for c in range(r.shape[0]):
        for j in range(r.shape[1]):
            g += 0.5 * r[c, j] * r[c, j]
    return g


@jit_kernel
def _record(idx, t, p, q, r, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss):
    rec_t[idx] = t
    rec_g[idx] = g
    rec_d[idx] = diss
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            rec_p[idx, i, j] = p[i, j]
            rec_q[idx, i, j] = q[i, j]
    for c in range(r.shape[0]):
        for j in range(r.shape[1]):
            rec_r[idx, c, j] = r[c, j]


@jit_kernel
def strang_ou1(p, q, r, oc, oe, tc, te, lam2, lam, gamma, t1, tn, dt, steps,
               noise, thin, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d,
               stop_hi, stop_lo, use_stop_lo):
    """Strang step for the first-order OU reservoir.

    Per step: exact OU half-step on r, half kick on p, full drift on
    (q, r), half kick, exact OU half-step.  ``noise[k, a, c, j]`` is the
    standard-normal draw of substep a (0/1), channel c, dimension j.
    """
    n, d = q.shape
    grad = np.empty((n, d))
    h = 0.5 * dt
    decay = np.exp(-gamma * h)
    amp1 = np.sqrt(t1 * (1.0 - np.exp(-2.0 * gamma * h)))
    ampn = np.sqrt(tn * (1.0 - np.exp(-2.0 * gamma * h)))
    # gamma * int r^2 over an OU half-step from r0: r0^2 (1 - e^{-gamma dt}) / 2
    ou_coef = 0.5 * (1.0 - np.exp(-gamma * dt))
    diss = 0.0
    g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, 0.0)
    _record(0, 0.0, p, q, r, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
    idx = 1
    for k in range(steps):
        # OU half-step
        rsq = 0.0
        for c in range(2):
            for j in range(d):
                rsq += r[c, j] * r[c, j]
        diss += rsq * ou_coef
        for j in range(d):
            r[0, j] = decay * r[0, j] + amp1 * noise[k, 0, 0, j]
            r[1, j] = decay * r[1, j] + ampn * noise[k, 0, 1, j]
        # half kick
        grad_v(q, oc, oe, tc, te, lam2, grad)
        for i in range(n):
            for j in range(d):
                p[i, j] -= h * grad[i, j]
        for j in range(d):
            p[0, j] -= h * lam * r[0, j]
            p[n - 1, j] -= h * lam * r[1, j]
        # drift (conservative: no dissipation accumulates here)
        for i in range(n):
            for j in range(d):
                q[i, j] += dt * p[i, j]
        for j in range(d):
            r[0, j] += dt * lam * p[0, j]
            r[1, j] += dt * lam * p[n - 1, j]
        # half kick
        grad_v(q, oc, oe, tc, te, lam2, grad)
        for i in range(n):
            for j in range(d):
                p[i, j] -= h * grad[i, j]
        for j in range(d):
            p[0, j] -= h * lam * r[0, j]
            p[n - 1, j] -= h * lam * r[1, j]
        # OU half-step
        rsq = 0.0
        for c in range(2):
            for j in range(d):
                rsq += r[c, j] * r[c, j]
        diss += rsq * ou_coef
        for j in range(d):
            r[0, j] = decay * r[0, j] + amp1 * noise[k, 1, 0, j]
            r[1, j] = decay * r[1, j] + ampn * noise[k, 1, 1, j]

        g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, 0.0)
        if g >= stop_hi or not np.isfinite(g):
            return 2, k + 1, idx, g
        if use_stop_lo and g <= stop_lo:
            return 1, k + 1, idx, g
        if (k + 1) % thin == 0:
            _record(idx, (k + 1) * dt, p, q, r,
                    rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
            idx += 1
    return 0, steps, idx, g


@jit_kernel
def euler_ou2(p, q, r, s, oc, oe, tc, te, lam2, lam, gamma, sigma, t1, tn,
              dt, steps, noise, thin, rec_t, rec_p, rec_q, rec_r, rec_s,
              rec_g, rec_d, stop_hi, stop_lo, use_stop_lo):
    """Euler-Maruyama step for the oscillatory reservoir (baseline)."""
    n, d = q.shape
    grad = np.empty((n, d))
    amp1 = np.sqrt(2.0 * t1 * gamma * dt)
    ampn = np.sqrt(2.0 * tn * gamma * dt)
    diss = 0.0
    extra = 0.0
    for c in range(2):
        for j in range(d):
            extra += 0.5 * s[c, j] * s[c, j]
    g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, extra)
    _record(0, 0.0, p, q, r, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
    for c in range(2):
        for j in range(d):
            rec_s[0, c, j] = s[c, j]
    idx = 1
    for k in range(steps):
        grad_v(q, oc, oe, tc, te, lam2, grad)
        rsq = 0.0
        for c in range(2):
            for j in range(d):
                rsq += r[c, j] * r[c, j] + s[c, j] * s[c, j]
        diss += gamma * dt * rsq
        r_old = np.empty((2, d))
        s_old = np.empty((2, d))
        for c in range(2):
            for j in range(d):
                r_old[c, j] = r[c, j]
                s_old[c, j] = s[c, j]
        for j in range(d):
            r[0, j] += dt * (-gamma * r_old[0, j] - sigma * s_old[0, j]
                             + lam * p[0, j]) + amp1 * noise[k, 0, j]
            r[1, j] += dt * (-gamma * r_old[1, j] - sigma * s_old[1, j]
                             + lam * p[n - 1, j]) + ampn * noise[k, 1, j]
        for c in range(2):
            for j in range(d):
                s[c, j] += dt * (-gamma * s_old[c, j] + sigma * r_old[c, j])
        for i in range(n):
            for j in range(d):
                qn = q[i, j] + dt * p[i, j]
                p[i, j] -= dt * grad[i, j]
                q[i, j] = qn
        for j in range(d):
            p[0, j] -= dt * lam * r_old[0, j]
            p[n - 1, j] -= dt * lam * r_old[1, j]

        extra = 0.0
        for c in range(2):
            for j in range(d):
                extra += 0.5 * s[c, j] * s[c, j]
        g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, extra)
        if g >= stop_hi or not np.isfinite(g):
            return 2, k + 1, idx, g
        if use_stop_lo and g <= stop_lo:
            return 1, k + 1, idx, g
        if (k + 1) % thin == 0:
            _record(idx, (k + 1) * dt, p, q, r,
                    rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
            for c in range(2):
                for j in range(d):
                    rec_s[idx, c, j] = s[c, j]
            idx += 1
    return 0, steps, idx, g


@jit_kernel
def euler_langevin(p, q, r, oc, oe, tc, te, lam2, t1, tn, dt, steps, noise,
                   thin, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d,
                   stop_hi, stop_lo, use_stop_lo):
    """Euler-Maruyama step for the Langevin reservoir (baseline)."""
    n, d = q.shape
    grad = np.empty((n, d))
    eta2 = lam2
    amp1 = np.sqrt(2.0 * t1 * eta2 * dt)
    ampn = np.sqrt(2.0 * tn * eta2 * dt)
    diss = 0.0
    g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, 0.0)
    _record(0, 0.0, p, q, r, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
    idx = 1
    p_old = np.empty((2, d))
    for k in range(steps):
        grad_v(q, oc, oe, tc, te, lam2, grad)
        psq = 0.0
        for j in range(d):
            p_old[0, j] = p[0, j]
            p_old[1, j] = p[n - 1, j]
            psq += p[0, j] * p[0, j] + p[n - 1, j] * p[n - 1, j]
        diss += eta2 * dt * psq
        for i in range(n):
            for j in range(d):
                qn = q[i, j] + dt * p[i, j]
                p[i, j] -= dt * grad[i, j]
                q[i, j] = qn
        for j in range(d):
            p[0, j] += -dt * eta2 * p_old[0, j] + amp1 * noise[k, 0, j]
            p[n - 1, j] += -dt * eta2 * p_old[1, j] + ampn * noise[k, 1, j]

        g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, 0.0)
        if g >= stop_hi or not np.isfinite(g):
            return 2, k + 1, idx, g
        if use_stop_lo and g <= stop_lo:
            return 1, k + 1, idx, g
        if (k + 1) % thin == 0:
            _record(idx, (k + 1) * dt, p, q, r,
                    rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
            idx += 1
    return 0, steps, idx, g


@jit_kernel
def strang_ou2(p, q, r, s, oc, oe, tc, te, lam2, lam, gamma, sigma, t1, tn,
               dt, steps, noise, l11, l21, l22, thin,
               rec_t, rec_p, rec_q, rec_r, rec_s, rec_g, rec_d,
               stop_hi, stop_lo, use_stop_lo):
    """Strang step for the oscillatory second-order reservoir.

    The (r, s) pair rotates with frequency sigma while decaying at rate
    gamma; the half-step uses the exact transition with exact noise
    covariance (Cholesky factors l11/l21/l22 per channel, precomputed by
    the caller).  ``noise[k, a, c, j, 0:2]`` are the two normal draws.
    """
    n, d = q.shape
    grad = np.empty((n, d))
    h = 0.5 * dt
    decay = np.exp(-gamma * h)
    cs = np.cos(sigma * h)
    sn = np.sin(sigma * h)
    ou_coef = 0.5 * (1.0 - np.exp(-gamma * dt))
    diss = 0.0
    extra = 0.0
    for c in range(2):
        for j in range(d):
            extra += 0.5 * s[c, j] * s[c, j]
    g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, extra)
    _record(0, 0.0, p, q, r, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
    for c in range(2):
        for j in range(d):
            rec_s[0, c, j] = s[c, j]
    idx = 1
    for k in range(steps):
        for a in range(2):
            if a == 1:
                # half kick
                grad_v(q, oc, oe, tc, te, lam2, grad)
                for i in range(n):
                    for j in range(d):
                        p[i, j] -= h * grad[i, j]
                for j in range(d):
                    p[0, j] -= h * lam * r[0, j]
                    p[n - 1, j] -= h * lam * r[1, j]
                # drift (conservative)
                for i in range(n):
                    for j in range(d):
                        q[i, j] += dt * p[i, j]
                for j in range(d):
                    r[0, j] += dt * lam * p[0, j]
                    r[1, j] += dt * lam * p[n - 1, j]
                # half kick
                grad_v(q, oc, oe, tc, te, lam2, grad)
                for i in range(n):
                    for j in range(d):
                        p[i, j] -= h * grad[i, j]
                for j in range(d):
                    p[0, j] -= h * lam * r[0, j]
                    p[n - 1, j] -= h * lam * r[1, j]
            # rotating OU half-step on (r, s)
            rsq = 0.0
            for c in range(2):
                for j in range(d):
                    rsq += r[c, j] * r[c, j] + s[c, j] * s[c, j]
            diss += rsq * ou_coef
            for c in range(2):
                for j in range(d):
                    rv = r[c, j]
                    sv = s[c, j]
                    z1 = noise[k, a, c, j, 0]
                    z2 = noise[k, a, c, j, 1]
                    r[c, j] = decay * (cs * rv - sn * sv) + l11[c] * z1
                    s[c, j] = decay * (sn * rv + cs * sv) \
                        + l21[c] * z1 + l22[c] * z2

        extra = 0.0
        for c in range(2):
            for j in range(d):
                extra += 0.5 * s[c, j] * s[c, j]
        g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, extra)
        if g >= stop_hi or not np.isfinite(g):
            return 2, k + 1, idx, g
        if use_stop_lo and g <= stop_lo:
            return 1, k + 1, idx, g
        if (k + 1) % thin == 0:
            _record(idx, (k + 1) * dt, p, q, r,
                    rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
            for c in range(2):
                for j in range(d):
                    rec_s[idx, c, j] = s[c, j]
            idx += 1
    return 0, steps, idx, g


@jit_kernel
def strang_langevin(p, q, r, oc, oe, tc, te, lam2, t1, tn, dt, steps, noise,
                    thin, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d,
                    stop_hi, stop_lo, use_stop_lo):
    """Strang step for the Langevin reservoir (friction lam^2 on boundary p).

    Exact OU half-step on (p_1, p_n), velocity Verlet in between; r is
    inert and only contributes a constant to G.
    """
    n, d = q.shape
    grad = np.empty((n, d))
    h = 0.5 * dt
    eta2 = lam2
    decay = np.exp(-eta2 * h)
    amp1 = np.sqrt(t1 * (1.0 - np.exp(-2.0 * eta2 * h)))
    ampn = np.sqrt(tn * (1.0 - np.exp(-2.0 * eta2 * h)))
    # lam^2 * int p_b^2 over an OU half-step: p0^2 (1 - e^{-eta2 dt}) / 2
    ou_coef = 0.5 * (1.0 - np.exp(-2.0 * eta2 * dt * 0.5))
    diss = 0.0
    g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, 0.0)
    _record(0, 0.0, p, q, r, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
    idx = 1
    for k in range(steps):
        # OU half-step on boundary momenta
        psq = 0.0
        for j in range(d):
            psq += p[0, j] * p[0, j] + p[n - 1, j] * p[n - 1, j]
        diss += psq * ou_coef
        for j in range(d):
            p[0, j] = decay * p[0, j] + amp1 * noise[k, 0, 0, j]
            p[n - 1, j] = decay * p[n - 1, j] + ampn * noise[k, 0, 1, j]
        # velocity Verlet (conservative: no dissipation accumulates here)
        grad_v(q, oc, oe, tc, te, lam2, grad)
        for i in range(n):
            for j in range(d):
                p[i, j] -= h * grad[i, j]
        for i in range(n):
            for j in range(d):
                q[i, j] += dt * p[i, j]
        grad_v(q, oc, oe, tc, te, lam2, grad)
        for i in range(n):
            for j in range(d):
                p[i, j] -= h * grad[i, j]
        # OU half-step
        psq = 0.0
        for j in range(d):
            psq += p[0, j] * p[0, j] + p[n - 1, j] * p[n - 1, j]
        diss += psq * ou_coef
        for j in range(d):
            p[0, j] = decay * p[0, j] + amp1 * noise[k, 1, 0, j]
            p[n - 1, j] = decay * p[n - 1, j] + ampn * noise[k, 1, 1, j]

        g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, 0.0)
        if g >= stop_hi or not np.isfinite(g):
            return 2, k + 1, idx, g
        if use_stop_lo and g <= stop_lo:
            return 1, k + 1, idx, g
        if (k + 1) % thin == 0:
            _record(idx, (k + 1) * dt, p, q, r,
                    rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
            idx += 1
    return 0, steps, idx, g


@jit_kernel
def euler_ou1(p, q, r, oc, oe, tc, te, lam2, lam, gamma, t1, tn, dt, steps,
              noise, thin, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d,
              stop_hi, stop_lo, use_stop_lo):
    """Euler-Maruyama step for the first-order OU reservoir (baseline)."""
    n, d = q.shape
    grad = np.empty((n, d))
    amp1 = np.sqrt(2.0 * t1 * gamma * dt)
    ampn = np.sqrt(2.0 * tn * gamma * dt)
    diss = 0.0
    g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, 0.0)
    _record(0, 0.0, p, q, r, rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
    idx = 1
    for k in range(steps):
        grad_v(q, oc, oe, tc, te, lam2, grad)
        rsq = 0.0
        for c in range(2):
            for j in range(d):
                rsq += r[c, j] * r[c, j]
        diss += gamma * dt * rsq
        r0 = np.empty(d)
        r1 = np.empty(d)
        for j in range(d):
            r0[j] = r[0, j]
            r1[j] = r[1, j]
        for j in range(d):
            r[0, j] += dt * (-gamma * r0[j] + lam * p[0, j]) + amp1 * noise[k, 0, j]
            r[1, j] += dt * (-gamma * r1[j] + lam * p[n - 1, j]) + ampn * noise[k, 1, j]
        for i in range(n):
            for j in range(d):
                qn = q[i, j] + dt * p[i, j]
                p[i, j] -= dt * grad[i, j]
                q[i, j] = qn
        for j in range(d):
            p[0, j] -= dt * lam * r0[j]
            p[n - 1, j] -= dt * lam * r1[j]

        g = energy_pqr(p, q, r, oc, oe, tc, te, lam2, 0.0)
        if g >= stop_hi or not np.isfinite(g):
            return 2, k + 1, idx, g
        if use_stop_lo and g <= stop_lo:
            return 1, k + 1, idx, g
        if (k + 1) % thin == 0:
            _record(idx, (k + 1) * dt, p, q, r,
                    rec_t, rec_p, rec_q, rec_r, rec_g, rec_d, g, diss)
            idx += 1
    return 0, steps, idx, g
