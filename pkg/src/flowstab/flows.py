"""Outflow functions f(x) and the quantities derived from them.

Four closed-form families are built in:

* ``SaturatingExp(c)``: ``c (1 - exp(-x_i))``, own state only, capacity ``c``.
* ``Linear(r)``: ``r x_i``, unbounded.
* ``NodeProportional(kappa)``: ``x_i / (sum_{j in E_v} x_j + kappa)``, shared
  by every link entering node ``v``.
* ``PhaseProportional(kappa, phases)``: ``(sum_{j in phase(i)} x_j) /
  (sum_{j in E_v} x_j + kappa)``. Positive on empty links whose phase
  partner holds mass, so it only makes sense with inclusion dynamics.

``Custom`` wraps an arbitrary callable. It can be simulated but has no
known limiting behaviour, so certificates built on it are refused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .network import DomainError, FlowGraph, StructuralError

POSITIVITY_TOL = 1e-12


@dataclass(frozen=True)
class SaturatingExp:
    capacity: float

    def __post_init__(self):
        if not self.capacity > 0:
            raise DomainError("capacity must be positive")


@dataclass(frozen=True)
class Linear:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError("rate must be positive")


@dataclass(frozen=True)
class NodeProportional:
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise DomainError("kappa must be positive")


@dataclass(frozen=True)
class PhaseProportional:
    kappa: float
    phases: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not self.kappa > 0:
            raise DomainError("kappa must be positive")
        object.__setattr__(self, "phases", tuple(tuple(int(e) for e in p) for p in self.phases))


@dataclass(frozen=True)
class Custom:
    """Arbitrary outflow ``func(x) -> float`` for one link (x is the full state)."""

    func: Callable[[np.ndarray], float]
    capacity: float = math.inf
    name: str = "custom"


FlowFamily = SaturatingExp | Linear | NodeProportional | PhaseProportional | Custom

_NODE_FAMILIES = (NodeProportional, PhaseProportional)


@dataclass(frozen=True, eq=False)
class FlowField:
    """One flow family per link over a graph.

    Node-level families must cover every incoming link of their node with
    the same parameters; phases of a ``PhaseProportional`` family must
    partition the node's incoming links.
    """

    graph: FlowGraph
    families: tuple

    def __post_init__(self):
        fams = tuple(self.families)
        object.__setattr__(self, "families", fams)
        if len(fams) != self.graph.n_links:
            raise StructuralError(
                f"{len(fams)} flow families for {self.graph.n_links} links"
            )
        for v in range(self.graph.n_nodes):
            incoming = self.graph.incoming(v)
            node_fams = [fams[e] for e in incoming if isinstance(fams[e], _NODE_FAMILIES)]
            if not node_fams:
                continue
            name = self.graph.nodes[v]
            if len(node_fams) != len(incoming) or any(f != node_fams[0] for f in node_fams):
                raise StructuralError(
                    f"node {name}: a node-level flow family must cover all incoming links with equal parameters"
                )
            fam = node_fams[0]
            if isinstance(fam, PhaseProportional):
                covered = sorted(e for p in fam.phases for e in p)
                if covered != sorted(incoming):
                    raise StructuralError(f"node {name}: phases must partition the incoming links")

    @classmethod
    def uniform(cls, graph: FlowGraph, family) -> "FlowField":
        return cls(graph, (family,) * graph.n_links)

    @property
    def n_links(self) -> int:
        return self.graph.n_links

    @property
    def has_custom(self) -> bool:
        return any(isinstance(f, Custom) for f in self.families)

    @property
    def inclusion_only(self) -> bool:
        """True when some f_i can be positive on an empty link."""
        return any(
            isinstance(f, PhaseProportional) and any(len(p) > 1 for p in f.phases)
            for f in self.families
        )

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(capacities(self))))

    @cached_property
    def encoding(self):
        """Flat arrays consumed by the compiled flow kernel."""
        n = self.n_links
        kind = np.zeros(n, dtype=np.int64)
        param = np.zeros(n)
        group = np.full(n, -1, dtype=np.int64)
        phase = np.full(n, -1, dtype=np.int64)
        n_phases = 0
        phase_ids: dict[tuple[int, int], int] = {}
        for i, fam in enumerate(self.families):
            if isinstance(fam, SaturatingExp):
                kind[i], param[i] = _kernels.SAT, fam.capacity
            elif isinstance(fam, Linear):
                kind[i], param[i] = _kernels.LINEAR, fam.rate
            elif isinstance(fam, NodeProportional):
                kind[i], param[i] = _kernels.NODE, fam.kappa
                group[i] = self.graph.heads[i]
            elif isinstance(fam, PhaseProportional):
                kind[i], param[i] = _kernels.PHASE, fam.kappa
                group[i] = self.graph.heads[i]
                p = next(k for k, ph in enumerate(fam.phases) if i in ph)
                key = (self.graph.heads[i], p)
                if key not in phase_ids:
                    phase_ids[key] = n_phases
                    n_phases += 1
                phase[i] = phase_ids[key]
            else:
                return None
        return (kind, param, group, phase, max(self.graph.n_nodes, 1), max(n_phases, 1))

    def python_flow(self, x: np.ndarray, _fp=None) -> np.ndarray:
        """Reference evaluation in plain Python; also the path for Custom."""
        out = np.empty(self.n_links)
        for i, fam in enumerate(self.families):
            if isinstance(fam, SaturatingExp):
                out[i] = fam.capacity * -math.expm1(-x[i])
            elif isinstance(fam, Linear):
                out[i] = fam.rate * x[i]
            elif isinstance(fam, NodeProportional):
                denom = sum(x[j] for j in self.graph.incoming(self.graph.heads[i])) + fam.kappa
                out[i] = x[i] / denom
            elif isinstance(fam, PhaseProportional):
                denom = sum(x[j] for j in self.graph.incoming(self.graph.heads[i])) + fam.kappa
                ph = next(p for p in fam.phases if i in p)
                out[i] = sum(x[j] for j in ph) / denom
            else:
                out[i] = float(fam.func(x))
        return out


def eval_flow(field: FlowField, x) -> np.ndarray:
    """Evaluate f(x) for a nonnegative state."""
    x = np.asarray(x, dtype=float)
    if x.shape != (field.n_links,):
        raise StructuralError(f"state must have shape ({field.n_links},), got {x.shape}")
    if np.any(x < 0):
        raise DomainError("state must be nonnegative")
    enc = field.encoding
    if enc is None:
        return field.python_flow(x)
    return _kernels.builtin_flow(np.ascontiguousarray(x), enc)


def capacities(field: FlowField) -> np.ndarray:
    """Supremum of each f_i over the orthant; ``inf`` marks unbounded links."""
    out = np.empty(field.n_links)
    for i, fam in enumerate(field.families):
        if isinstance(fam, SaturatingExp):
            out[i] = fam.capacity
        elif isinstance(fam, _NODE_FAMILIES):
            out[i] = 1.0
        elif isinstance(fam, Linear):
            out[i] = math.inf
        else:
            out[i] = fam.capacity
    return out


@dataclass
class Assumption2Report:
    """Outcome of checking ``f_i(x) > 0  <=>  x_i > 0`` on sample states."""

    violations: list[tuple[int, int, float, float]] = field(default_factory=list)
    inclusion_only: bool = False
    n_samples: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def check_assumption2(field: FlowField, samples: Sequence, tol: float = POSITIVITY_TOL) -> Assumption2Report:
    """Report every (sample, link) where positivity of x_i and f_i disagree.

    Each violation is ``(sample index, link index, x_i, f_i)``.
    """
    report = Assumption2Report(inclusion_only=field.inclusion_only)
    for s, x in enumerate(samples):
        x = np.asarray(x, dtype=float)
        f = eval_flow(field, x)
        for i in range(field.n_links):
            if (x[i] == 0 and f[i] > tol) or (x[i] > 0 and not f[i] > 0):
                report.violations.append((s, i, float(x[i]), float(f[i])))
        report.n_samples += 1
    return report


@dataclass(frozen=True)
class LiminfResult:
    """Liminf of total (optionally capacity-normalized) outflow as |x| -> inf.

    ``value`` is None when it cannot be determined. ``ray_values[i]`` is the
    limit of the total along the ray that sends only x_i to infinity.
    """

    value: float | None
    provenance: str
    mode: str
    normalized: bool
    ray_values: tuple[float, ...] = ()

    @property
    def known(self) -> bool:
        return self.value is not None


def _ray_contribution(field: FlowField, j: int, i: int, inclusion: bool, caps: np.ndarray,
                      normalized: bool) -> float:
    """lim_{t -> inf} f_j(t e_i), optionally divided by c_j."""
    if inclusion and j != i:
        # only links holding mass are counted
        return 0.0
    fam = field.families[j]
    if isinstance(fam, (SaturatingExp, Linear, NodeProportional)):
        if j != i:
            return 0.0
        limit = math.inf if isinstance(fam, Linear) else caps[j]
    else:
        # PhaseProportional: every link in the phase of i is served at the limit
        ph = next(p for p in fam.phases if j in p)
        limit = 1.0 if i in ph else 0.0
    if normalized and limit != 0.0:
        return limit / caps[j]
    return limit


def liminf_total_flow(field: FlowField, mode: str = "smooth", normalized: bool = False) -> LiminfResult:
    """Analytic liminf of the total outflow, taken over single-coordinate rays.

    ``mode="inclusion"`` counts only links with positive mass (the
    indicator-weighted sum). ``normalized=True`` uses f_i / c_i and requires
    a bounded field.
    """
    if mode not in ("smooth", "inclusion"):
        raise ValueError(f"unknown mode {mode!r}")
    custom = [field.graph.link_names[i] for i, f in enumerate(field.families) if isinstance(f, Custom)]
    if custom:
        return LiminfResult(None, f"unknown: custom flow family on {', '.join(custom)}", mode, normalized)
    caps = capacities(field)
    if normalized and not np.all(np.isfinite(caps)):
        return LiminfResult(None, "unknown: normalized liminf needs finite capacities", mode, normalized)
    inclusion = mode == "inclusion"
    n = field.n_links
    rays = tuple(
        float(sum(_ray_contribution(field, j, i, inclusion, caps, normalized) for j in range(n)))
        for i in range(n)
    )
    value = min(rays) if rays else math.inf
    return LiminfResult(value, "analytic (single-ray)", mode, normalized, rays)


def probe_rays(field: FlowField, magnitude: float, mode: str = "smooth", normalized: bool = False) -> np.ndarray:
    """Numerically evaluate the total outflow on each single-coordinate ray."""
    caps = capacities(field)
    out = np.empty(field.n_links)
    for i in range(field.n_links):
        x = np.zeros(field.n_links)
        x[i] = magnitude
        f = eval_flow(field, x)
        if normalized:
            f = f / caps
        if mode == "inclusion":
            f = np.where(x > 0, f, 0.0)
        out[i] = f.sum()
    return out


def offset_scale(field: FlowField) -> float:
    """Largest kappa in the field (1 if none); sets how fast rays converge."""
    kappas = [f.kappa for f in field.families if isinstance(f, _NODE_FAMILIES)]
    return max([1.0, *kappas])


def cross_check_liminf(field: FlowField, result: LiminfResult, magnitudes=(1e3, 1e6)) -> bool:
    """Probed ray totals must not fall below the analytic value beyond the
    approach error expected at that magnitude."""
    if not result.known:
        return False
    for m in magnitudes:
        probed = probe_rays(field, m, result.mode, result.normalized)
        for analytic, p in zip(result.ray_values, probed):
            if math.isinf(analytic):
                if not p >= m * 1e-3:
                    return False
                continue
            tol = (1.0 + abs(analytic)) * offset_scale(field) / m * 1.0001
            if p < analytic - tol:
                return False
    return True
