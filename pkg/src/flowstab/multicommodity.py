"""Several commodities sharing links, each with its own routing.

Commodities are perfectly mixed: link i releases its aggregate outflow
``f_i(x)`` (x the summed state) and commodity k takes the share
``x_i^k / x_i`` of it, which is then routed by ``R^k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .certificates import CertificateReport, Verdict, _compare
from .flows import FlowField, capacities, eval_flow, liminf_total_flow
from .inflow import InflowSignal
from .network import DomainError, FlowGraph, FlowNetwork, StructuralError, validate_network
from .simulator import IntegrationError, SimConfig, _STATUS, _lam_grid, _lam_mean, _verdict


@dataclass(frozen=True, eq=False)
class CommoditySpec:
    name: str
    routing: np.ndarray
    inflow: InflowSignal

    def network(self, graph: FlowGraph) -> FlowNetwork:
        report = validate_network(graph, self.routing)
        if not report.valid:
            raise StructuralError(f"commodity {self.name}: invalid routing\n{report}")
        return FlowNetwork(graph, self.routing)


@dataclass
class MCTrajectory:
    t: np.ndarray
    x: np.ndarray  # (samples, commodities, links)
    z: np.ndarray
    names: tuple[str, ...]
    V: np.ndarray  # capacity-weighted multi-commodity Lyapunov function
    clamp_mass: float = 0.0
    verdict: str = "horizon-reached"

    @property
    def aggregate(self) -> np.ndarray:
        return self.x.sum(axis=1)

    def commodity(self, k: int) -> np.ndarray:
        return self.x[:, k, :]


def _networks(graph: FlowGraph, commodities: Sequence[CommoditySpec]) -> list[FlowNetwork]:
    if not commodities:
        raise StructuralError("at least one commodity is required")
    nets = [c.network(graph) for c in commodities]
    for c in commodities:
        if c.inflow.n != graph.n_links:
            raise StructuralError(f"commodity {c.name}: inflow has {c.inflow.n} links")
    return nets


def _capacity_weights(field: FlowField) -> np.ndarray:
    caps = capacities(field)
    if not np.all(np.isfinite(caps)):
        raise DomainError("multi-commodity dynamics needs a bounded flow field")
    return 1.0 / caps


def mc_lyapunov(graph: FlowGraph, field: FlowField, commodities: Sequence[CommoditySpec], x) -> float:
    """V = sum_k 1^T C^-1 (I - (R^k)^T)^-1 x^k for a (commodities, links) state."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("state must be nonnegative")
    cbar = _capacity_weights(field)
    nets = _networks(graph, commodities)
    return float(sum(n.leontief.column_weights(cbar) @ xk for n, xk in zip(nets, x)))


def mc_simulate(graph: FlowGraph, field: FlowField, commodities: Sequence[CommoditySpec], x0,
                config: SimConfig = SimConfig()) -> MCTrajectory:
    if config.mode != "smooth":
        raise DomainError("multi-commodity dynamics is only defined in smooth mode")
    if field.inclusion_only:
        raise DomainError("multi-commodity dynamics needs a work-conserving flow field")
    nets = _networks(graph, commodities)
    cbar = _capacity_weights(field)
    K, n = len(commodities), graph.n_links
    X0 = np.ascontiguousarray(x0, dtype=float)
    if X0.shape != (K, n):
        raise StructuralError(f"initial state must have shape ({K}, {n})")
    if np.any(X0 < 0):
        raise DomainError("initial state must be nonnegative")
    h, steps = config.step, config.n_steps
    lam = np.ascontiguousarray(np.stack([_lam_grid(c.inflow, steps, h) for c in commodities]))
    lam_mean = np.ascontiguousarray(np.stack([_lam_mean(c.inflow, steps, h) for c in commodities]))
    Rs = np.ascontiguousarray(np.stack([net.routing for net in nets]))
    enc = field.encoding
    if enc is not None and config.jit:
        loop, flow_fn, fp = _kernels.mc_rk4_loop_jit, _kernels.builtin_flow, enc
    else:
        loop, flow_fn, fp = _kernels.mc_rk4_loop, field.python_flow, None
    xs, zs, rec, status, fail_step, fail_value, clamp_mass = loop(
        flow_fn, fp, lam, lam_mean, X0, h, steps, config.record_every, Rs,
        config.zero_threshold, config.clamp_tol,
    )
    if status != _kernels.OK:
        raise IntegrationError(f"{_STATUS[status]} ({fail_value:.3g})", fail_step, fail_step * h)
    t = rec * h
    V = sum(xs[:, k, :] @ net.leontief.column_weights(cbar) for k, net in enumerate(nets))
    traj = MCTrajectory(t, xs, zs, tuple(c.name for c in commodities), V, clamp_mass)
    traj.verdict = _verdict(t, V, config)
    return traj


def mc_certify(graph: FlowGraph, field: FlowField, commodities: Sequence[CommoditySpec], *,
               horizon: float | None = None) -> CertificateReport:
    """sup_t sum_i sum_k a_i^k(t) / c_i < liminf of normalized total outflow."""
    caps = capacities(field)
    if not np.all(np.isfinite(caps)):
        return CertificateReport("multicommodity", None, None, Verdict.UNCERTIFIABLE,
                                 notes=["flow field has unbounded links"])
    nets = _networks(graph, commodities)
    cbar = 1.0 / caps
    joint = InflowSignal([s for c in commodities for s in c.inflow.signals])
    w = np.concatenate([net.leontief.column_weights(cbar) for net in nets])
    sup = joint.sup_weighted(w, horizon)
    report = _compare("multicommodity", sup.value, sup.method,
                      liminf_total_flow(field, "smooth", normalized=True))
    report.notes.append("rhs is the liminf of capacity-normalized total outflow")
    return report


def aggregate_rate(graph: FlowGraph, field: FlowField, commodities: Sequence[CommoditySpec],
                   X, t: float) -> np.ndarray:
    """d/dt of the aggregate state, computed commodity by commodity."""
    X = np.asarray(X, dtype=float)
    agg = X.sum(axis=0)
    f = eval_flow(field, agg)
    Z = _kernels.split_outflow(np.ascontiguousarray(X), agg, f, 1e-9)
    out = np.zeros(graph.n_links)
    for c, Zk in zip(commodities, Z):
        out += c.inflow.at(t) - Zk + np.asarray(c.routing).T @ Zk
    return out
