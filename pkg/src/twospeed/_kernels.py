"""Hot loops with a numba implementation and a vectorised numpy fallback.

Both variants consume a ``numpy.random.Generator`` and are exact in law; they
do not draw random numbers in the same order, so outputs agree only in
distribution, never bit for bit.
"""
import numpy as np

from ._backend import USE_NUMBA, njit

# status codes returned by the stage kernels
OK = 0
CAP_EXCEEDED = 1

# values below this are set to zero in the PDE kernels (subnormals are very slow)
FLUSH = 1e-300


@njit
def _grow(a, n):
    new = np.empty(max(2 * a.size, 16), dtype=a.dtype)
    new[:n] = a[:n]
    return new


@njit
def _evolve_stage_nb(x0, t0, t1, sd, bar0, bar_slope, sizes, cum, rng, cap):
    """Event-driven evolution of every particle of ``x0`` from ``t0`` to ``t1``.

    Exponential(1) branching clocks, Gaussian displacements with standard
    deviation ``sd * sqrt(dt)``.  A particle found below the barrier
    ``bar0 + bar_slope * (s - t0)`` at a branching time or at ``t1`` is killed.
    Returns ``(positions, parents, n, status)``.
    """
    n_roots = x0.size
    out_x = np.empty(max(16, 2 * n_roots), dtype=np.float64)
    out_p = np.empty(max(16, 2 * n_roots), dtype=np.int64)
    n = 0
    stack_x = np.empty(64, dtype=np.float64)
    stack_s = np.empty(64, dtype=np.float64)
    single = sizes.size == 1
    k_fixed = sizes[0]
    for root in range(n_roots):
        stack_x[0] = x0[root]
        stack_s[0] = t0
        sp = 1
        while sp > 0:
            sp -= 1
            x = stack_x[sp]
            s = stack_s[sp]
            while True:
                tau = rng.exponential()
                if s + tau >= t1:
                    x += sd * np.sqrt(t1 - s) * rng.standard_normal()
                    if x >= bar0 + bar_slope * (t1 - t0):
                        if n == out_x.size:
                            if n >= cap:
                                return out_x[:n], out_p[:n], n, 1
                            out_x = _grow(out_x, n)
                            out_p = _grow(out_p, n)
                        out_x[n] = x
                        out_p[n] = root
                        n += 1
                    break
                x += sd * np.sqrt(tau) * rng.standard_normal()
                s += tau
                if x < bar0 + bar_slope * (s - t0):
                    break
                if single:
                    k = k_fixed
                else:
                    u = rng.random()
                    j = 0
                    while cum[j] < u:
                        j += 1
                    k = sizes[j]
                # keep one child on the current path, push the rest
                for _ in range(k - 1):
                    if sp == stack_x.size:
                        stack_x = _grow(stack_x, sp)
                        stack_s = _grow(stack_s, sp)
                    stack_x[sp] = x
                    stack_s[sp] = s
                    sp += 1
    if n > cap:
        return out_x[:n], out_p[:n], n, 1
    return out_x[:n], out_p[:n], n, 0


def _evolve_stage_np(x0, t0, t1, sd, bar0, bar_slope, sizes, cum, rng, cap):
    """Generation-synchronous numpy version of :func:`_evolve_stage_nb`."""
    x = np.asarray(x0, dtype=np.float64).copy()
    s = np.full(x.size, float(t0))
    parent = np.arange(x.size, dtype=np.int64)
    done_x, done_p = [], []
    n_done = 0
    while x.size:
        tau = rng.exponential(size=x.size)
        fin = s + tau >= t1
        if fin.any():
            xf = x[fin] + sd * np.sqrt(t1 - s[fin]) * rng.standard_normal(fin.sum())
            keep = xf >= bar0 + bar_slope * (t1 - t0)
            done_x.append(xf[keep])
            done_p.append(parent[fin][keep])
            n_done += int(keep.sum())
            if n_done > cap:
                return (np.concatenate(done_x), np.concatenate(done_p), n_done, CAP_EXCEEDED)
        live = ~fin
        x, s, parent, tau = x[live], s[live], parent[live], tau[live]
        x = x + sd * np.sqrt(tau) * rng.standard_normal(x.size)
        s = s + tau
        alive = x >= bar0 + bar_slope * (s - t0)
        x, s, parent = x[alive], s[alive], parent[alive]
        if sizes.size == 1:
            k = np.full(x.size, sizes[0])
        else:
            k = sizes[np.searchsorted(cum, rng.random(x.size), side="left")]
        x, s, parent = np.repeat(x, k), np.repeat(s, k), np.repeat(parent, k)
        if x.size + n_done > 4 * cap:
            return (np.concatenate(done_x) if done_x else np.empty(0),
                    np.concatenate(done_p) if done_p else np.empty(0, np.int64),
                    n_done, CAP_EXCEEDED)
    if not done_x:
        return np.empty(0), np.empty(0, dtype=np.int64), 0, OK
    px = np.concatenate(done_x)
    pp = np.concatenate(done_p)
    # parent-major order, as in the DFS kernel
    order = np.argsort(pp, kind="stable")
    return px[order], pp[order], px.size, OK


@njit
def _conditioned_nb(t, level, bar0, bar_slope, sizes, cum, rng, max_attempts):
    """Rejection-sample standard BBM until ``max > level``.

    Particles below ``bar0 + bar_slope * s`` are killed (``bar0 = -inf`` disables).
    Returns ``(positions, attempts)``; ``positions`` is empty on failure.
    """
    x0 = np.zeros(1)
    for attempt in range(1, max_attempts + 1):
        xs, _, n, _ = _evolve_stage_nb(x0, 0.0, t, 1.0, bar0, bar_slope, sizes, cum, rng,
                                       1 << 40)
        if n > 0 and xs.max() > level:
            return xs, attempt
    return np.empty(0), max_attempts


def _conditioned_np(t, level, bar0, bar_slope, sizes, cum, rng, max_attempts):
    x0 = np.zeros(1)
    for attempt in range(1, max_attempts + 1):
        xs, _, n, _ = _evolve_stage_np(x0, 0.0, t, 1.0, bar0, bar_slope, sizes, cum, rng,
                                       1 << 40)
        if n > 0 and xs.max() > level:
            return xs, attempt
    return np.empty(0), max_attempts


@njit
def _tridiag_solve_nb(lower, diag, upper, rhs):
    """Thomas algorithm; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = diag.size
    c = np.empty(n)
    d = np.empty(n)
    c[0] = upper[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * c[i - 1]
        c[i] = upper[i] / m
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m
    out = np.empty(n)
    out[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = d[i] - c[i] * out[i + 1]
    return out


def _tridiag_solve_np(lower, diag, upper, rhs):
    from scipy.linalg import solve_banded

    ab = np.empty((3, diag.size))
    ab[0, 1:] = upper[:-1]
    ab[0, 0] = 0.0
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    ab[2, -1] = 0.0
    return solve_banded((1, 1), ab, rhs, check_finite=False)


@njit
def _cn_steps_nb(u, nsteps, h, alpha, beta, e_h, binary, sizes, probs, implicit_steps):
    """Strang-split steps: half diffusion, exact/RK4 reaction, half diffusion.

    Operator ``L u = alpha u'' + beta u'`` (central differences, Dirichlet ends).
    The first ``implicit_steps`` steps use backward Euler for the diffusion
    halves to damp discontinuous data.
    """
    n = u.size
    lo = np.empty(n)
    di = np.empty(n)
    up = np.empty(n)
    rhs = np.empty(n)
    for step in range(nsteps):
        for half in range(2):
            theta = 1.0 if step < implicit_steps else 0.5
            hh = 0.5 * h
            a_lo = hh * (alpha - beta)
            a_up = hh * (alpha + beta)
            a_di = -2.0 * hh * alpha
            for i in range(1, n - 1):
                lo[i] = -theta * a_lo
                di[i] = 1.0 - theta * a_di
                up[i] = -theta * a_up
                rhs[i] = u[i] + (1.0 - theta) * (a_lo * u[i - 1] + a_di * u[i] + a_up * u[i + 1])
            lo[0] = 0.0
            di[0] = 1.0
            up[0] = 0.0
            rhs[0] = u[0]
            lo[n - 1] = 0.0
            di[n - 1] = 1.0
            up[n - 1] = 0.0
            rhs[n - 1] = u[n - 1]
            u = _tridiag_solve_nb(lo, di, up, rhs)
            if half == 0:
                _react_nb(u, h, e_h, binary, sizes, probs)
    return u


@njit
def _react_nb(u, h, e_h, binary, sizes, probs):
    n = u.size
    if binary:
        for i in range(n):
            ui = u[i]
            ui = ui * e_h / (1.0 + ui * (e_h - 1.0))
            u[i] = ui if abs(ui) > FLUSH else 0.0
        return
    sub = 4
    dh = h / sub
    for i in range(n):
        ui = u[i]
        for _ in range(sub):
            k1 = _f(ui, sizes, probs)
            k2 = _f(ui + 0.5 * dh * k1, sizes, probs)
            k3 = _f(ui + 0.5 * dh * k2, sizes, probs)
            k4 = _f(ui + dh * k3, sizes, probs)
            ui += dh * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        u[i] = ui if abs(ui) > FLUSH else 0.0


@njit
def _f(u, sizes, probs):
    v = 1.0 - u
    out = v
    for j in range(sizes.size):
        out -= probs[j] * v ** sizes[j]
    return out


def _react_np(u, h, e_h, binary, sizes, probs):
    if binary:
        u = u * e_h / (1.0 + u * (e_h - 1.0))
        u[np.abs(u) < FLUSH] = 0.0
        return u

    def f(w):
        v = 1.0 - w
        out = v.copy()
        for k, p in zip(sizes, probs):
            out -= p * v ** k
        return out

    dh = h / 4
    for _ in range(4):
        k1 = f(u)
        k2 = f(u + 0.5 * dh * k1)
        k3 = f(u + 0.5 * dh * k2)
        k4 = f(u + dh * k3)
        u = u + dh * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    u[np.abs(u) < FLUSH] = 0.0
    return u


def _cn_steps_np(u, nsteps, h, alpha, beta, e_h, binary, sizes, probs, implicit_steps):
    n = u.size
    hh = 0.5 * h
    a_lo, a_up, a_di = hh * (alpha - beta), hh * (alpha + beta), -2.0 * hh * alpha
    for step in range(nsteps):
        theta = 1.0 if step < implicit_steps else 0.5
        lo = np.full(n, -theta * a_lo)
        di = np.full(n, 1.0 - theta * a_di)
        up = np.full(n, -theta * a_up)
        lo[0] = lo[-1] = up[0] = up[-1] = 0.0
        di[0] = di[-1] = 1.0
        for half in range(2):
            rhs = u.copy()
            rhs[1:-1] += (1.0 - theta) * (a_lo * u[:-2] + a_di * u[1:-1] + a_up * u[2:])
            u = _tridiag_solve_np(lo, di, up, rhs)
            if half == 0:
                u = _react_np(u, h, e_h, binary, sizes, probs)
    return u


if USE_NUMBA:
    evolve_stage = _evolve_stage_nb
    conditioned_attempts = _conditioned_nb
    cn_steps = _cn_steps_nb
else:
    evolve_stage = _evolve_stage_np
    conditioned_attempts = _conditioned_np
    cn_steps = _cn_steps_np

KERNELS = {
    "numba": dict(evolve_stage=_evolve_stage_nb, conditioned_attempts=_conditioned_nb,
                  cn_steps=_cn_steps_nb),
    "numpy": dict(evolve_stage=_evolve_stage_np, conditioned_attempts=_conditioned_np,
                  cn_steps=_cn_steps_np),
}
