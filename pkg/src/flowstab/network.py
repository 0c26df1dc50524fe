"""Directed multigraphs, routing matrices and the Leontief inverse.

Links are dense zero-based indices. ``R[i, j]`` is the fraction of the
outflow of link ``i`` that continues onto link ``j``; whatever is left of
a row (``1 - R[i].sum()``) leaves the network.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

ROW_SUM_TOL = 1e-12
SPECTRAL_MARGIN = 1e-9


class StructuralError(ValueError):
    """Malformed input (wrong shapes, unknown ids, self loops)."""


class DomainError(ValueError):
    """Argument outside the mathematical domain, e.g. a negative mass."""


class SingularRoutingError(ValueError):
    """``I - R^T`` is singular or too close to it to invert reliably."""


@dataclass(frozen=True)
class FlowGraph:
    """Directed multigraph. Parallel links are allowed, self loops are not."""

    nodes: tuple[str, ...]
    tails: tuple[int, ...]
    heads: tuple[int, ...]
    link_names: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.tails) != len(self.heads):
            raise StructuralError("tails and heads must have equal length")
        if not self.link_names:
            object.__setattr__(
                self, "link_names", tuple(f"e{i + 1}" for i in range(len(self.tails)))
            )
        if len(self.link_names) != len(self.tails):
            raise StructuralError("one name per link is required")
        if len(set(self.link_names)) != len(self.link_names):
            raise StructuralError("link names must be unique")
        if len(set(self.nodes)) != len(self.nodes):
            raise StructuralError("node names must be unique")
        n_nodes = len(self.nodes)
        for e, (t, h) in enumerate(zip(self.tails, self.heads)):
            if not (0 <= t < n_nodes and 0 <= h < n_nodes):
                raise StructuralError(f"link {self.link_names[e]} references an unknown node")
            if t == h:
                raise StructuralError(f"link {self.link_names[e]} is a self loop")

    @classmethod
    def from_edges(
        cls,
        edges: Sequence[tuple[str, str]],
        link_names: Sequence[str] | None = None,
        nodes: Sequence[str] | None = None,
    ) -> "FlowGraph":
        """Build a graph from ``(tail, head)`` node-name pairs."""
        if nodes is None:
            seen: dict[str, None] = {}
            for t, h in edges:
                seen.setdefault(t)
                seen.setdefault(h)
            nodes = list(seen)
        index = {v: k for k, v in enumerate(nodes)}
        try:
            tails = tuple(index[t] for t, _ in edges)
            heads = tuple(index[h] for _, h in edges)
        except KeyError as exc:
            raise StructuralError(f"unknown node {exc.args[0]!r}") from None
        return cls(tuple(nodes), tails, heads, tuple(link_names or ()))

    @property
    def n_links(self) -> int:
        return len(self.tails)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def incoming(self, node: int) -> tuple[int, ...]:
        """Links whose head is ``node``."""
        return tuple(e for e, h in enumerate(self.heads) if h == node)

    def link_index(self, name: str) -> int:
        try:
            return self.link_names.index(name)
        except ValueError:
            raise StructuralError(f"unknown link {name!r}") from None

    def node_index(self, name: str) -> int:
        try:
            return self.nodes.index(name)
        except ValueError:
            raise StructuralError(f"unknown node {name!r}") from None


@dataclass
class ValidationReport:
    issues: list[tuple[str, str]] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.issues

    def add(self, check: str, message: str) -> None:
        self.issues.append((check, message))

    def failed_checks(self) -> set[str]:
        return {check for check, _ in self.issues}

    def __str__(self) -> str:
        if self.valid:
            return "valid"
        return "\n".join(f"[{check}] {msg}" for check, msg in self.issues)


def _as_routing(R, n: int | None = None) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise StructuralError(f"routing matrix must be square, got shape {R.shape}")
    if n is not None and R.shape[0] != n:
        raise StructuralError(f"routing matrix is {R.shape[0]}x{R.shape[0]} but graph has {n} links")
    return R


def deficient_links(R: np.ndarray) -> np.ndarray:
    """Links from which some mass leaves the network (row sum below 1)."""
    return np.flatnonzero(R.sum(axis=1) < 1.0 - ROW_SUM_TOL)


def outflow_connected(R) -> bool:
    """True when every link has a positive-routing path to a deficient link.

    Works by reverse breadth-first search from the deficient set over the
    link graph with an arc ``i -> j`` whenever ``R[i, j] > 0``.
    """
    R = _as_routing(R)
    n = R.shape[0]
    reached = np.zeros(n, dtype=bool)
    queue = deque(deficient_links(R).tolist())
    reached[list(queue)] = True
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(R[:, j] > 0):
            if not reached[i]:
                reached[i] = True
                queue.append(i)
    return bool(reached.all())


def validate_network(graph: FlowGraph, R) -> ValidationReport:
    """Check a routing matrix against its graph.

    Raises StructuralError on a dimension mismatch; every other problem is
    collected in the returned report under one of the check names
    ``range``, ``row-sum``, ``topology`` or ``connectivity``.
    """
    R = _as_routing(R, graph.n_links)
    report = ValidationReport()
    names = graph.link_names
    if not np.all(np.isfinite(R)):
        report.add("range", "routing matrix contains non-finite entries")
        return report
    for i, j in zip(*np.nonzero((R < 0) | (R > 1))):
        report.add("range", f"R[{names[i]}, {names[j]}] = {R[i, j]:g} outside [0, 1]")
    sums = R.sum(axis=1)
    for i in np.flatnonzero(sums > 1.0 + ROW_SUM_TOL):
        report.add("row-sum", f"row {names[i]} sums to {sums[i]:.15g} > 1")
    for i, j in zip(*np.nonzero(R > 0)):
        if graph.heads[i] != graph.tails[j]:
            report.add(
                "topology",
                f"R[{names[i]}, {names[j]}] > 0 but head of {names[i]} is not the tail of {names[j]}",
            )
    if not outflow_connected(R):
        report.add(
            "connectivity",
            "not outflow connected: some links have no routing path to a link where mass leaves",
        )
    return report


def spectral_radius(R, max_iter: int = 10_000, tol: float = 1e-13) -> tuple[float, bool]:
    """Power-iteration estimate of the spectral radius of a nonnegative matrix.

    Iterates on ``I + R`` instead of ``R``. For nonnegative ``R`` the Perron
    root ``1 + rho`` then strictly dominates every other eigenvalue in
    modulus, so periodic matrices (e.g. a two-link cycle with eigenvalues
    ``+-rho``) converge too. Stops when two successive estimates differ by
    less than ``tol`` or after ``max_iter`` iterations.

    Returns
    -------
    (estimate, converged)
    """
    R = _as_routing(R)
    n = R.shape[0]
    if n == 0:
        return 0.0, True
    v = np.full(n, 1.0 / n)
    est = np.inf
    for _ in range(max_iter):
        w = v + R @ v
        norm = w.sum()
        new = norm - 1.0
        v = w / norm
        if abs(new - est) < tol * max(1.0, abs(new)):
            return max(new, 0.0), True
        est = new
    return max(est, 0.0), False


@dataclass(frozen=True, eq=False)
class LeontiefOperator:
    """LU-factorized ``I - R^T`` with the explicit inverse kept alongside."""

    routing: np.ndarray
    lu: tuple
    inverse: np.ndarray
    spectral_radius: float

    @property
    def n(self) -> int:
        return self.routing.shape[0]

    def solve(self, v) -> np.ndarray:
        """Solve ``(I - R^T) y = v``; ``v`` may be a vector or a matrix of columns."""
        return scipy.linalg.lu_solve(self.lu, np.asarray(v, dtype=float))

    def column_weights(self, w=None) -> np.ndarray:
        """Row vector ``w^T (I - R^T)^-1`` (``w`` defaults to all ones)."""
        w = np.ones(self.n) if w is None else np.asarray(w, dtype=float)
        return self.inverse.T @ w


def leontief(R) -> LeontiefOperator:
    """Factorize ``I - R^T`` for a routing matrix satisfying outflow connectivity."""
    R = _as_routing(R)
    n = R.shape[0]
    rho, converged = spectral_radius(R)
    if rho > 1.0 - SPECTRAL_MARGIN:
        raise SingularRoutingError(
            f"spectral radius of R is {rho:.12g} (converged={converged}); "
            "I - R^T is singular or ill-conditioned, so the routing is not outflow connected"
        )
    M = np.eye(n) - R.T
    lu = scipy.linalg.lu_factor(M)
    inv = scipy.linalg.lu_solve(lu, np.eye(n))
    R = R.copy()
    R.setflags(write=False)
    inv.setflags(write=False)
    return LeontiefOperator(R, lu, inv, rho)


def neumann_inverse(R, terms: int = 100) -> np.ndarray:
    """Truncated series ``sum_{k<terms} (R^T)^k``; a reference for tests."""
    R = _as_routing(R)
    out = np.zeros_like(R)
    P = np.eye(R.shape[0])
    for _ in range(terms):
        out += P
        P = P @ R.T
    return out


def net_inflow_transform(L: LeontiefOperator, lam) -> np.ndarray:
    """Cumulative net inflow ``a = (I - R^T)^-1 lam``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise DomainError("exogenous inflow must be nonnegative")
    return L.solve(lam)


@dataclass(frozen=True, eq=False)
class FlowNetwork:
    """A graph plus a validated routing matrix."""

    graph: FlowGraph
    routing: np.ndarray

    def __post_init__(self):
        R = _as_routing(self.routing, self.graph.n_links).copy()
        R.setflags(write=False)
        object.__setattr__(self, "routing", R)

    @classmethod
    def checked(cls, graph: FlowGraph, R) -> "FlowNetwork":
        report = validate_network(graph, R)
        if not report.valid:
            raise StructuralError(f"invalid routing:\n{report}")
        return cls(graph, R)

    @property
    def n_links(self) -> int:
        return self.graph.n_links

    @cached_property
    def leontief(self) -> LeontiefOperator:
        return leontief(self.routing)

    @cached_property
    def exit_fractions(self) -> np.ndarray:
        """Fraction of each link's outflow that leaves the network."""
        return 1.0 - self.routing.sum(axis=1)

    def is_local(self) -> bool:
        """All links share one head node and nothing is routed onward."""
        return len(set(self.graph.heads)) == 1 and not np.any(self.routing)
