"""Fixed-step RK4 integration of the network dynamics, plus runtime monitors.

Smooth mode integrates ``x' = lambda - (I - R^T) f(x)``. Inclusion mode
replaces ``f`` by the actual outflow ``z`` from :func:`resolve_outflow`,
which differs from ``f`` only on links holding (almost) no mass.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import _kernels
from .flows import FlowField, capacities, eval_flow
from .inflow import InflowSignal
from .network import DomainError, FlowNetwork, LeontiefOperator, StructuralError

log = logging.getLogger(__name__)

Mode = Literal["smooth", "inclusion"]


class IntegrationError(RuntimeError):
    def __init__(self, message: str, step: int, time: float):
        super().__init__(f"{message} at step {step} (t = {time:g})")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 100.0
    mode: Mode = "smooth"
    record_every: int = 1
    zero_threshold: float = 1e-9
    clamp_tol: float = 1e-9
    divergence_multiplier: float = 40.0
    trend_tolerance: float = 0.10
    max_fixed_point_iter: int = 10_000
    fixed_point_tol: float = 1e-14
    monitor_iiss: bool = True
    monitor_prop3: bool = True
    jit: bool = True

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise DomainError("dt and horizon must be positive")
        if self.dt > self.horizon:
            raise DomainError("dt must not exceed the horizon")
        if self.mode not in ("smooth", "inclusion"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.record_every < 1:
            raise DomainError("record_every must be at least 1")

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.horizon / self.dt - 1e-9))

    @property
    def step(self) -> float:
        """Effective step: the horizon divided into ``n_steps`` equal steps."""
        return self.horizon / self.n_steps


@dataclass
class MonitorReport:
    name: str
    ok: bool
    max_violation: float
    violations: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "ok": self.ok,
            "max_violation": self.max_violation,
            "violations": [list(v) for v in self.violations[:20]],
        }


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    V_uniform: np.ndarray
    V_capacity: np.ndarray
    mode: str
    dt: float
    clamp_mass: float = 0.0
    verdict: str = "horizon-reached"
    monitors: dict[str, MonitorReport] = field(default_factory=dict)

    @property
    def total_mass(self) -> np.ndarray:
        return self.x.sum(axis=1)


def resolve_outflow(x, f_val, lam_now, R, zero_threshold: float = 1e-9,
                    max_iter: int = 10_000, tol: float = 1e-14) -> np.ndarray:
    """Actual outflow for the differential inclusion.

    Links with mass above ``zero_threshold`` release ``f_i``. On the empty
    set, ``z_i = min(f_i, lambda_i + (R^T z)_i)``: an empty link passes on
    at most what it is offered and at most what arrives, so it never goes
    negative.
    """
    x = np.ascontiguousarray(x, dtype=float)
    f_val = np.ascontiguousarray(f_val, dtype=float)
    lam_now = np.ascontiguousarray(lam_now, dtype=float)
    R = np.ascontiguousarray(R, dtype=float)
    if np.any(x < 0):
        raise DomainError("state must be nonnegative")
    z, sweeps, change = _kernels.resolve_outflow(x, f_val, lam_now, R, zero_threshold, max_iter, tol)
    if sweeps >= max_iter:
        raise IntegrationError(f"outflow fixed point did not converge (residual {change:.3g})", 0, 0.0)
    return z


def _lam_grid(inflow: InflowSignal, n_steps: int, h: float) -> np.ndarray:
    t = np.arange(2 * n_steps + 1) * (0.5 * h)
    return np.ascontiguousarray(inflow.at(t))


def _lam_mean(inflow: InflowSignal, n_steps: int, h: float) -> np.ndarray:
    """Exact mean of lambda over each step, from its running integral."""
    cum = inflow.integral(np.arange(n_steps + 1) * h)
    return np.ascontiguousarray(np.diff(cum, axis=0) / h)


_STATUS = {
    _kernels.NEGATIVE_STATE: "negative state beyond clamp tolerance",
    _kernels.NON_FINITE: "non-finite state",
    _kernels.NO_FIXED_POINT: "outflow fixed point did not converge",
}


def simulate(network: FlowNetwork, field: FlowField, inflow: InflowSignal, x0,
             config: SimConfig = SimConfig()) -> Trajectory:
    """Integrate from ``x0`` over ``config.horizon`` and attach monitor results."""
    n = network.n_links
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.shape != (n,):
        raise StructuralError(f"initial state must have shape ({n},)")
    if np.any(x0 < 0):
        raise DomainError("initial state must be nonnegative")
    if inflow.n != n or field.n_links != n:
        raise StructuralError("network, flow field and inflow disagree on the number of links")
    inclusion = config.mode == "inclusion"
    if field.inclusion_only and not inclusion:
        raise DomainError("flow field serves empty links; simulate it in inclusion mode")
    L = network.leontief  # rejects routing that is not outflow connected

    h = config.step
    steps = config.n_steps
    lam_grid = _lam_grid(inflow, steps, h)
    R = np.ascontiguousarray(network.routing)
    enc = field.encoding
    if enc is not None and config.jit:
        loop, flow_fn, fp = _kernels.rk4_loop_jit, _kernels.builtin_flow, enc
    else:
        loop, flow_fn, fp = _kernels.rk4_loop, field.python_flow, None
    xs, zs, rec, status, fail_step, fail_value, clamp_mass, _ = loop(
        flow_fn, fp, lam_grid, _lam_mean(inflow, steps, h), x0, h, steps, config.record_every, R, inclusion,
        config.zero_threshold, config.clamp_tol, config.max_fixed_point_iter,
        config.fixed_point_tol,
    )
    if status != _kernels.OK:
        raise IntegrationError(f"{_STATUS[status]} ({fail_value:.3g})", fail_step, fail_step * h)
    t = rec * h
    traj = Trajectory(
        t=t, x=xs, z=zs, lam=lam_grid[2 * rec], mode=config.mode, dt=h,
        V_uniform=xs @ L.column_weights(),
        V_capacity=_capacity_series(xs, L, field),
        clamp_mass=clamp_mass,
    )
    if config.monitor_iiss:
        traj.monitors["iiss"] = monitor_iiss_bound(traj, L, inflow)
    if config.monitor_prop3:
        traj.monitors["prop3"] = monitor_prop3_bound(traj, L, inflow)
    traj.verdict = divergence_verdict(traj, config)
    log.debug("simulated %d steps, verdict %s", steps, traj.verdict)
    return traj


def _capacity_series(xs: np.ndarray, L: LeontiefOperator, field: FlowField) -> np.ndarray:
    caps = capacities(field)
    if not np.all(np.isfinite(caps)):
        return np.full(xs.shape[0], np.nan)
    return xs @ L.column_weights(1.0 / caps)


def _bound_tol(bound):
    return 1e-6 * (1.0 + np.abs(bound))


def monitor_iiss_bound(traj: Trajectory, L: LeontiefOperator, inflow: InflowSignal,
                       weights=None, name: str = "iiss") -> MonitorReport:
    """Check V(t) <= V(0) + int_0^t w^T a(s) ds at every sample.

    ``weights`` is a vector w (default: all ones, the uniform Lyapunov
    function).
    """
    w = np.ones(L.n) if weights is None else np.asarray(getattr(weights, "w", weights), dtype=float)
    cw = L.column_weights(w)
    V = traj.x @ cw
    bound = V[0] + inflow.integral(traj.t) @ cw
    excess = V - bound
    tol = _bound_tol(bound)
    bad = np.flatnonzero(excess > tol)
    return MonitorReport(
        name, bad.size == 0, float(np.max(excess, initial=-np.inf)),
        [(float(traj.t[k]), float(excess[k])) for k in bad],
    )


def monitor_prop3_bound(traj: Trajectory, L: LeontiefOperator, inflow: InflowSignal) -> MonitorReport:
    """Check x_i(t) <= int_0^t a_i(s) ds + xi_i with xi = (I - R^T)^-1 x(0)."""
    xi = L.solve(traj.x[0])
    bound = L.solve(inflow.integral(traj.t).T).T + xi
    excess = traj.x - bound
    tol = _bound_tol(bound)
    bad = np.argwhere(excess > tol)
    return MonitorReport(
        "prop3", bad.size == 0, float(np.max(excess, initial=-np.inf)),
        [(float(traj.t[k]), float(excess[k, i])) for k, i in bad],
    )


def last_quarter_rise(t: np.ndarray, V: np.ndarray) -> float:
    """Least-squares rise of V over the last quarter, relative to its mean there."""
    cut = t[0] + 0.75 * (t[-1] - t[0])
    sel = t >= cut
    if sel.sum() < 2:
        return 0.0
    ts, vs = t[sel], V[sel]
    slope = np.polyfit(ts - ts[0], vs, 1)[0]
    return float(slope * (ts[-1] - ts[0]) / max(vs.mean(), 1.0))


def divergence_verdict(traj: Trajectory, config: SimConfig) -> str:
    """'diverging', 'bounded' or 'horizon-reached' from the uniform V series.

    Diverging: V at the horizon exceeds ``divergence_multiplier *
    max(V(0), 1)`` and V still rises by more than ``trend_tolerance`` of its
    level over the last quarter. Bounded: V never exceeds that level and the
    last-quarter rise is within the tolerance. Anything else is
    inconclusive.
    """
    return _verdict(traj.t, traj.V_uniform, config)


def _verdict(t, V, config: SimConfig) -> str:
    level = config.divergence_multiplier * max(V[0], 1.0)
    rise = last_quarter_rise(t, V)
    if V[-1] > level and rise > config.trend_tolerance:
        return "diverging"
    if np.max(V) <= level and rise <= config.trend_tolerance:
        return "bounded"
    return "horizon-reached"


def mass_balance_residual(traj: Trajectory, network: FlowNetwork, inflow: InflowSignal | None = None,
                          zero_threshold: float = 1e-9) -> float:
    """Largest mass-balance defect per unit time over pairs of sample intervals.

    On each pair ``[t_k, t_k+2]`` the change of total mass is compared with
    the integral of ``sum(lambda) - exits . z``: Simpson's rule for the
    outflow term, and for the inflow term too unless ``inflow`` is given, in
    which case its exact running integral is used and pairs containing an
    inflow jump are skipped. The quadrature error is fourth order in the sample spacing,
    so record every step (or every few) for a sharp check. Pairs across
    which a link empties or fills are skipped: the outflow is discontinuous
    there and the mass derivative does not exist.
    """
    mass = traj.x.sum(axis=1)
    out = traj.z @ network.exit_fractions
    if mass.size < 3:
        return 0.0
    k = np.arange(0, mass.size - 2, 2)
    # a shorter final interval (horizon not a multiple of the recording stride) breaks Simpson's rule
    k = k[np.isclose(traj.t[k + 1] - traj.t[k], traj.t[k + 2] - traj.t[k + 1], rtol=1e-9)]
    # z jumps where a link empties or fills, so the quadrature only applies
    # to pairs over which the set of loaded links is unchanged
    active = traj.x > zero_threshold
    k = k[np.all(active[k] == active[k + 1], axis=1) & np.all(active[k] == active[k + 2], axis=1)]
    if inflow is not None:
        # likewise the slope of z jumps with lambda; keep pairs clear of inflow jumps
        events = np.asarray(inflow.discontinuities())
        if events.size:
            hit = (events[None, :] > traj.t[k, None]) & (events[None, :] < traj.t[k + 2, None])
            k = k[~hit.any(axis=1)]
    if k.size == 0:
        return 0.0
    span = traj.t[k + 2] - traj.t[k]
    if inflow is None:
        lam = traj.lam.sum(axis=1)
        inflow_mass = span / 6.0 * (lam[k] + 4.0 * lam[k + 1] + lam[k + 2])
    else:
        cum = inflow.integral(traj.t).sum(axis=1)
        inflow_mass = cum[k + 2] - cum[k]
    outflow_mass = span / 6.0 * (out[k] + 4.0 * out[k + 1] + out[k + 2])
    return float(np.max(np.abs(mass[k + 2] - mass[k] - inflow_mass + outflow_mass) / span))


def complementarity_residual(traj: Trajectory, field: FlowField) -> float:
    """Max over samples of |x_i (z_i - f_i(x))| and of any bound violation of 0 <= z <= f."""
    worst = 0.0
    for x, z in zip(traj.x, traj.z):
        f = eval_flow(field, np.maximum(x, 0.0))
        worst = max(worst, float(np.max(np.abs(x * (z - f)))),
                    float(np.max(z - f)), float(np.max(-z)))
    return worst
