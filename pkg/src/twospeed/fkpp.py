"""F-KPP solver, front positions, the Psi approximant and the tail constants C(a)."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import simpson

from . import _kernels
from .model import BINARY, BRAMSON, SQRT2, ConfigError, OffspringLaw

SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_DT = 0.01
DEFAULT_DX = 0.02
# backward-Euler half steps used after discontinuous initial data
RANNACHER_STEPS = 4
# right margin may hold values up to this before the grid is extended
TAIL_FLOOR = 1e-150


class FKPPError(RuntimeError):
    """Solver or quadrature failure (instability, no crossing, non-convergence)."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[x_min, x_max]`` in the co-moving coordinate ``xi = x - sqrt(2) t``."""

    x_min: float = -60.0
    x_max: float = 60.0
    dx: float = DEFAULT_DX

    def __post_init__(self):
        if not (self.dx > 0 and self.x_max > self.x_min):
            raise ConfigError(f"bad grid {self}")

    @property
    def n(self) -> int:
        return int(round((self.x_max - self.x_min) / self.dx)) + 1

    def nodes(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    def refined(self) -> "Grid":
        return Grid(self.x_min, self.x_max, self.dx / 2)


class InitialKind(enum.Enum):
    HEAVISIDE = "heaviside"
    LAPLACE = "laplace"


@dataclass(frozen=True, eq=False)
class FrontSolution:
    """``u(t, xi + shift)`` sampled on ``grid``; ``shift`` is ``sqrt(2) t`` in the co-moving frame."""

    grid: Grid
    u: np.ndarray
    t: float = 0.0
    offspring: OffspringLaw = BINARY
    shift: float = 0.0
    dt: float = DEFAULT_DT

    def __post_init__(self):
        # private copy: freezing must not touch the caller's array
        u = np.array(self.u, dtype=float, copy=True)
        if u.size != self.grid.n:
            raise ValueError(f"{u.size} values for a grid of {self.grid.n} nodes")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    def lab_nodes(self) -> np.ndarray:
        return self.grid.nodes() + self.shift

    def at(self, xi) -> np.ndarray:
        """Linear interpolation in the co-moving coordinate."""
        return np.interp(xi, self.grid.nodes(), self.u)


# ---------------------------------------------------------------- bump family

@dataclass(frozen=True)
class Bump:
    """Piecewise-cubic bump ``h (1 - 3 s^2 + 2 s^3)``, ``s = |x - c| / w`` on ``[c - w, c + w]``."""

    center: float
    width: float
    height: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.height == 0.0 or self.width <= 0.0:
            return np.zeros_like(x)
        s = np.minimum(np.abs(x - self.center) / self.width, 1.0)
        return self.height * (1.0 - 3.0 * s * s + 2.0 * s ** 3)

    @property
    def support(self) -> tuple:
        return (self.center - self.width, self.center + self.width)


BUMPS = {
    "zero": Bump(0.0, 1.0, 0.0),
    "bump-top": Bump(0.0, 1.5, 1.0),
    "bump-wide": Bump(0.5, 2.5, 0.6),
    "bump-low": Bump(-1.0, 1.0, 0.4),
}
LAPLACE_BUMPS = ("bump-top", "bump-wide", "bump-low")


def get_bump(phi) -> Bump:
    if isinstance(phi, Bump):
        return phi
    try:
        return BUMPS[phi]
    except KeyError:
        raise ConfigError(f"unknown bump {phi!r}; known: {sorted(BUMPS)}") from None


# ---------------------------------------------------------------- solver

def make_initial(kind, grid: Grid = Grid(), *, phi="zero", delta: float = math.inf,
                 sigma2: float = 1.0, offspring: OffspringLaw = BINARY,
                 dt: float = DEFAULT_DT) -> FrontSolution:
    """Initial data: ``1{x < 0}`` or ``1 - exp(-phi(-sigma2 x)) 1{-x sigma2 <= delta}``.

    The indicator is cell-averaged, so a node sitting exactly on the jump gets
    1/2.  Point sampling would displace the jump by up to ``dx / 2``, which is a
    first-order error in every tail quantity.
    """
    kind = InitialKind(kind)
    x = grid.nodes()
    if kind is InitialKind.HEAVISIDE:
        u = 1.0 - _cell_fraction_above(x, 0.0, grid.dx)
    else:
        bump = get_bump(phi)
        keep = _cell_fraction_above(x, -delta / sigma2, grid.dx) if math.isfinite(delta) \
            else np.ones_like(x) if delta > 0 else np.zeros_like(x)
        u = 1.0 - np.exp(-bump(-sigma2 * x)) * keep
    m = max(2, grid.n // 10)
    if np.ptp(u[:m]) > 0 or np.ptp(u[-m:]) > 0:
        raise ConfigError("grid too narrow: initial data not constant on the outer 10% margins")
    return FrontSolution(grid, u, 0.0, offspring, 0.0, dt)


def _cell_fraction_above(x: np.ndarray, x0: float, dx: float) -> np.ndarray:
    """Fraction of each cell ``[x - dx/2, x + dx/2]`` lying right of ``x0``."""
    return np.clip((x + 0.5 * dx - x0) / dx, 0.0, 1.0)


def _extend(sol: FrontSolution, left: float, right: float) -> FrontSolution:
    g = sol.grid
    nl = int(math.ceil(left / g.dx))
    nr = int(math.ceil(right / g.dx))
    u = np.concatenate([np.full(nl, sol.u[0]), sol.u, np.full(nr, sol.u[-1])])
    grid = Grid(g.x_min - nl * g.dx, g.x_max + nr * g.dx, g.dx)
    return replace(sol, grid=grid, u=u)


def _needs_extension(sol: FrontSolution) -> tuple:
    m = max(2, sol.grid.n // 10)
    width = sol.grid.x_max - sol.grid.x_min
    left = np.max(np.abs(sol.u[:m] - sol.u[0])) > 1e-12
    right = np.max(np.abs(sol.u[-m:] - sol.u[-1])) > TAIL_FLOOR
    return (0.25 * width if left else 0.0, 0.25 * width if right else 0.0)


def advance(sol: FrontSolution, duration: float, *, backend: str | None = None,
            chunk: float = 2.0) -> FrontSolution:
    """Advance by ``duration`` in the frame moving at speed ``sqrt 2``.

    Strang splitting of the reaction (exact for binary offspring, RK4 otherwise)
    with Crank-Nicolson half steps for ``u_t = u_xx / 2 + sqrt(2) u_x``.  The grid
    is widened whenever the solution reaches its outer 10% margins.
    """
    if not duration > 0:
        raise ConfigError(f"duration must be positive, got {duration}")
    cn = _kernels.cn_steps if backend is None else _kernels.KERNELS[backend]["cn_steps"]
    sizes, _ = sol.offspring.arrays()
    probs = np.asarray(sol.offspring.probs, dtype=float)
    binary = sol.offspring.is_binary
    remaining = float(duration)
    while remaining > 1e-12:
        step = min(chunk, remaining)
        left, right = _needs_extension(sol)
        while left or right:
            sol = _extend(sol, left, right)
            left, right = _needs_extension(sol)
        nsteps = max(1, int(round(step / sol.dt)))
        h = step / nsteps
        dx = sol.grid.dx
        implicit = RANNACHER_STEPS if sol.t == 0.0 else 0
        u = cn(np.array(sol.u), nsteps, h, 0.5 / dx ** 2, SQRT2 / (2 * dx), math.exp(h),
               binary, sizes, probs, implicit)
        lo, hi = float(u.min()), float(u.max())
        if lo < -1e-6 or hi > 1.0 + 1e-6:
            raise FKPPError(
                f"instability: u left [0,1] (min {lo:.3g}, max {hi:.3g}) at t={sol.t + step:g}; "
                f"dt={h:g}, dx={dx:g}, diffusion number dt/dx^2={h / dx ** 2:.3g}")
        u = np.clip(u, 0.0, 1.0)
        sol = replace(sol, u=u, t=sol.t + step, shift=sol.shift + SQRT2 * step)
        remaining -= step
    return sol


def solve(t: float, grid: Grid = Grid(), **initial) -> FrontSolution:
    """Heaviside (default) or LAPLACE initial data advanced to time ``t``."""
    kind = initial.pop("kind", InitialKind.HEAVISIDE)
    backend = initial.pop("backend", None)
    sol = make_initial(kind, grid, **initial)
    return advance(sol, t, backend=backend) if t > 0 else sol


def front_position(sol: FrontSolution, level: float = 0.5) -> float:
    """Lab-frame abscissa where ``u`` first drops below ``level`` (linear interpolation)."""
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must be in (0, 1), got {level}")
    u = sol.u
    below = np.nonzero(u < level)[0]
    if below.size == 0 or below[0] == 0:
        raise FKPPError(f"u does not cross {level} on the grid")
    i = below[0]
    x = sol.grid.nodes()
    # u[i-1] >= level > u[i]
    frac = (u[i - 1] - level) / (u[i - 1] - u[i])
    return float(x[i - 1] + frac * sol.grid.dx + sol.shift)


# ---------------------------------------------------------------- quadratures

def _tail_slice(sol: FrontSolution):
    xi = sol.grid.nodes()
    start = np.searchsorted(xi, 0.0 - 1e-12)
    return xi[start:], sol.u[start:]


def _simpson(y: np.ndarray, dx: float) -> float:
    if y.size < 3:
        return 0.0
    if y.size % 2 == 0:
        # odd number of intervals: Simpson on all but the last, trapezoid on it
        return float(simpson(y[:-1], dx=dx) + 0.5 * dx * (y[-2] + y[-1]))
    return float(simpson(y, dx=dx))


def _truncate(integrand: np.ndarray, rel: float = 1e-14) -> np.ndarray:
    """Drop the right tail once it falls below ``rel`` times the running integral."""
    running = np.cumsum(integrand)
    peak = int(np.argmax(integrand)) if integrand.size else 0
    small = np.nonzero((integrand < rel * running) & (np.arange(integrand.size) > peak))[0]
    return integrand[: small[0] + 1] if small.size else integrand


def psi(sol_at_r: FrontSolution, t: float, x: float, *, stride: int = 1) -> float:
    """Bramson's approximant ``Psi(r, t, x + sqrt 2 t)`` built from ``u(r, .)``.

    ``stride`` > 1 integrates on every ``stride``-th node only (quadrature
    resolution study).
    """
    r = sol_at_r.t
    if not t > 8 * r:
        raise ConfigError(f"psi needs t > 8 r (t={t}, r={r})")
    if not x > 8 * r - BRAMSON * math.log(t):
        raise ConfigError(f"psi needs x > 8 r - (3/(2 sqrt 2)) log t (x={x}, r={r}, t={t})")
    y, u = _tail_slice(sol_at_r)
    y, u = y[::stride], u[::stride]
    tr = t - r
    slope = 2.0 * (x + BRAMSON * math.log(t)) / tr
    log_kernel = SQRT2 * (y - x) - (y - x) ** 2 / (2.0 * tr)
    integrand = u * np.exp(log_kernel) * (-np.expm1(-slope * y))
    return _simpson(integrand, sol_at_r.grid.dx * stride) / math.sqrt(2.0 * math.pi * tr)


def tail_integral(sol: FrontSolution, a: float, *, bracket: bool = True) -> float:
    """``(1/sqrt(2 pi)) int_0^inf e^{-a^2 r/2} u(r, y + sqrt 2 r) e^{(sqrt 2 + a) y} (1 - e^{-2 a y}) dy``.

    With ``bracket=False`` the factor ``1 - e^{-2 a y}`` is dropped.
    """
    y, u = _tail_slice(sol)
    log_w = (SQRT2 + a) * y - 0.5 * a * a * sol.t
    integrand = u * np.exp(log_w)
    if bracket:
        integrand = integrand * (-np.expm1(-2.0 * a * y))
    integrand = _truncate(integrand)
    return _simpson(integrand, sol.grid.dx) / SQRT_2PI


@dataclass(frozen=True)
class TailConstantEstimate:
    a: float
    schedule: tuple
    values: tuple
    C: float
    err: float
    discretization_error: float | None = None
    tolerance: float = 0.05

    @property
    def converged(self) -> bool:
        return len(self.values) < 2 or abs(self.values[-1] - self.values[-2]) <= self.tolerance * abs(self.values[-1])

    def to_dict(self) -> dict:
        return {"a": self.a,
                "schedule": [{"r": r, "C_r": c} for r, c in zip(self.schedule, self.values)],
                "C": self.C, "err": self.err,
                "discretization_error": self.discretization_error}


def _grid_for(a: float, r_max: float, grid: Grid | None) -> Grid:
    if grid is not None:
        return grid
    # the integrand peaks near y = a r with width sqrt r
    right = max(60.0, a * r_max + 12.0 * math.sqrt(r_max) + 10.0)
    return Grid(-60.0, right, DEFAULT_DX)


def _schedule_values(sol: FrontSolution, a: float, schedule, bracket: bool, backend):
    vals = []
    for r in schedule:
        if r > sol.t:
            sol = advance(sol, r - sol.t, backend=backend)
        vals.append(tail_integral(sol, a, bracket=bracket))
    return vals


def _richardson(init_kind, grid, a, schedule, bracket, backend, extrapolate, **init):
    """C(r, a) over the schedule; with ``extrapolate`` combine ``dx`` and ``dx/2`` runs.

    The spatial error of the scheme is second order, so ``(4 C_fine - C_coarse) / 3``
    cancels its leading term.  Returns ``(values, correction)`` where ``correction``
    is the size of that cancelled term at the last ``r``.
    """
    coarse = _schedule_values(make_initial(init_kind, grid, **init), a, schedule, bracket, backend)
    if not extrapolate:
        return coarse, None
    fine = _schedule_values(make_initial(init_kind, grid.refined(), **init), a, schedule,
                            bracket, backend)
    vals = [(4.0 * f - c) / 3.0 for c, f in zip(coarse, fine)]
    return vals, abs(vals[-1] - fine[-1])


def _estimate(a, schedule, vals, disc, tolerance, strict):
    C = vals[-1]
    err = abs(vals[-1] - vals[-2]) if len(vals) > 1 else math.nan
    est = TailConstantEstimate(a, tuple(schedule), tuple(vals), C, err, disc, tolerance)
    if strict and C > 0 and not est.converged:
        seq = ", ".join(f"C({r:g})={v:.6g}" for r, v in zip(schedule, vals))
        raise FKPPError(f"C(r, a) not converged within {tolerance:.0%}: {seq}")
    return est


def _check_schedule(a, schedule):
    schedule = [float(r) for r in schedule]
    if not a > 0:
        raise ConfigError(f"a must be positive, got {a}")
    if not schedule or any(r2 <= r1 for r1, r2 in zip(schedule, schedule[1:])) or schedule[0] <= 0:
        raise ConfigError(f"r schedule must be positive and increasing, got {schedule}")
    return schedule


def constant_C(a: float, r_schedule=(10.0, 20.0, 40.0), grid: Grid | None = None, *,
               extrapolate: bool = True, tolerance: float = 0.05, strict: bool = True,
               backend: str | None = None) -> TailConstantEstimate:
    """Tail constant ``C(a)``, taken as ``C(r, a)`` at the last ``r`` of the schedule.

    Raises :class:`FKPPError` (when ``strict``) if the last two schedule values
    differ by more than ``tolerance``.
    """
    schedule = _check_schedule(a, r_schedule)
    if max(schedule) < 40.0 and strict:
        raise ConfigError("the r schedule must reach r >= 40")
    grid = _grid_for(a, schedule[-1], grid)
    vals, disc = _richardson(InitialKind.HEAVISIDE, grid, a, schedule, True, backend, extrapolate)
    return _estimate(a, schedule, vals, disc, tolerance, strict)


def constant_C_phi(a: float, phi, delta: float, r_schedule=(10.0, 20.0, 40.0),
                   grid: Grid | None = None, *, sigma2: float = SQRT2, extrapolate: bool = True,
                   tolerance: float = 0.05, strict: bool = True,
                   backend: str | None = None) -> TailConstantEstimate:
    """``C(a, phi, delta)`` from LAPLACE initial data, without the ``1 - e^{-2 a z}`` factor."""
    schedule = _check_schedule(a, r_schedule)
    grid = _grid_for(a, schedule[-1], grid)
    bump = get_bump(phi)
    if bump.height == 0.0 and math.isinf(delta) and delta > 0:
        return TailConstantEstimate(a, tuple(schedule), tuple(0.0 for _ in schedule), 0.0, 0.0,
                                    0.0, tolerance)
    vals, disc = _richardson(InitialKind.LAPLACE, grid, a, schedule, False, backend, extrapolate,
                             phi=bump, delta=delta, sigma2=sigma2)
    return _estimate(a, schedule, vals, disc, tolerance, strict)


def tail_transform(sol: FrontSolution, a: float) -> float:
    """``e^{sqrt2 x + x^2/2t} sqrt(t) u(t, x + sqrt2 t)`` at ``x = a t`` (log-linear interpolation)."""
    t = sol.t
    if not t > 0:
        raise ConfigError("tail_transform needs t > 0")
    x = a * t
    xi = sol.grid.nodes()
    if not xi[0] <= x <= xi[-1]:
        raise ConfigError(f"x = a t = {x:g} is off the grid [{xi[0]:g}, {xi[-1]:g}]")
    if not np.any(sol.u):
        return 0.0
    i = min(int((x - xi[0]) / sol.grid.dx), xi.size - 2)
    u0, u1 = sol.u[i], sol.u[i + 1]
    if max(u0, u1) >= 1e-3:
        raise ConfigError(f"u = {u0:.3g} at x = a t is not in the tail regime")
    if min(u0, u1) < 100.0 * _kernels.FLUSH:
        raise FKPPError(f"tail not resolved: u = {min(u0, u1):.3g} at x = a t")
    w = (x - xi[i]) / sol.grid.dx
    log_u = (1 - w) * math.log(u0) + w * math.log(u1)
    return math.exp(SQRT2 * x + x * x / (2.0 * t) + 0.5 * math.log(t) + log_u)


def bramson_increment(t1: float, t2: float) -> float:
    """Predicted lab-frame front advance ``m(t2) - m(t1)`` for the standard centering."""
    return SQRT2 * (t2 - t1) - BRAMSON * math.log(t2 / t1)
