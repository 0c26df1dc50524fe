"""Sufficient (and one necessary) conditions for bounded network state.

Every check compares the supremum of a weighted, Leontief-transformed
inflow (``lhs``) against the liminf of total outflow (``rhs``) and returns
a :class:`CertificateReport`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .flows import (
    Custom,
    FlowField,
    LiminfResult,
    NodeProportional,
    PhaseProportional,
    SaturatingExp,
    capacities,
    eval_flow,
    liminf_total_flow,
)
from .inflow import InflowSignal
from .network import (
    DomainError,
    FlowNetwork,
    LeontiefOperator,
    StructuralError,
    validate_network,
)

# |lhs - rhs| below this (relative to max(1, |rhs|)) counts as the boundary.
BOUNDARY_BAND = 1e-12


class Verdict(str, enum.Enum):
    CERTIFIED = "certified-ISS"
    NOT_CERTIFIED = "not-certified"
    NECESSARILY_UNSTABLE = "necessarily-unstable"
    NOT_DETERMINED = "not-determined"
    UNCERTIFIABLE = "uncertifiable"


@dataclass
class CertificateReport:
    condition: str
    lhs: float | None
    rhs: float | None
    verdict: Verdict
    lhs_method: str = ""
    rhs_provenance: str = ""
    notes: list[str] = field(default_factory=list)

    @property
    def margin(self) -> float | None:
        if self.lhs is None or self.rhs is None:
            return None
        return self.rhs - self.lhs

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "lhs": _num(self.lhs),
            "rhs": _num(self.rhs),
            "margin": _num(self.margin),
            "verdict": self.verdict.value,
            "lhs_method": self.lhs_method,
            "rhs_provenance": self.rhs_provenance,
            "notes": list(self.notes),
        }


def _num(v):
    if v is None:
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


class InclusionOnlyFieldError(ValueError):
    """Smooth-dynamics certificates do not apply to inclusion-only fields."""

    def __init__(self, message: str, report: CertificateReport):
        super().__init__(message)
        self.report = report


def _compare(condition: str, lhs: float, lhs_method: str, lim: LiminfResult) -> CertificateReport:
    if not lim.known:
        return CertificateReport(condition, float(lhs), None, Verdict.UNCERTIFIABLE, lhs_method,
                                 lim.provenance, [f"liminf of total outflow is {lim.provenance}"])
    lhs, rhs = float(lhs), lim.value
    band = BOUNDARY_BAND * max(1.0, abs(rhs)) if math.isfinite(rhs) else 0.0
    ok = math.isfinite(lhs) and lhs < rhs - band
    report = CertificateReport(condition, lhs, rhs, Verdict.CERTIFIED if ok else Verdict.NOT_CERTIFIED,
                               lhs_method, lim.provenance)
    if not ok and math.isfinite(lhs) and abs(lhs - rhs) <= band:
        report.notes.append("lhs equals rhs; the condition requires strict inequality")
    return report


def _require_valid(network: FlowNetwork) -> None:
    report = validate_network(network.graph, network.routing)
    if not report.valid:
        raise StructuralError(f"routing matrix fails validation:\n{report}")


def _as_signal(inflow, n: int) -> InflowSignal:
    if isinstance(inflow, InflowSignal):
        if inflow.n != n:
            raise StructuralError(f"inflow has {inflow.n} links, network has {n}")
        return inflow
    lam = np.asarray(inflow, dtype=float)
    if lam.shape != (n,):
        raise StructuralError(f"inflow must have shape ({n},)")
    if np.any(lam < 0):
        raise DomainError("exogenous inflow must be nonnegative")
    return InflowSignal.constant(lam)


def check_thm1(network: FlowNetwork, field: FlowField, inflow, *,
               allow_inclusion_only: bool = False, horizon: float | None = None) -> CertificateReport:
    """sup_t sum_i a_i(t) < liminf sum_i f_i(x), with a = (I - R^T)^-1 lambda.

    Raises InclusionOnlyFieldError for fields that serve empty links (the
    naive report is attached to the exception) unless
    ``allow_inclusion_only`` is set.
    """
    _require_valid(network)
    sig = _as_signal(inflow, network.n_links)
    L = network.leontief
    sup = sig.sup_weighted(L.column_weights(), horizon)
    report = _compare("theorem-1", sup.value, sup.method, liminf_total_flow(field, "smooth"))
    if field.inclusion_only:
        report.notes.append(
            "field serves empty links; the smooth condition does not imply boundedness, "
            "use check_inclusion_theorem"
        )
        if not allow_inclusion_only:
            raise InclusionOnlyFieldError(
                "theorem-1 refused: flow field is inclusion-only", report
            )
    return report


def check_thm2_normalized(network: FlowNetwork, field: FlowField, inflow, *,
                          horizon: float | None = None) -> CertificateReport:
    """sup_t sum_i a_i(t) / c_i < liminf sum_i f_i(x) / c_i for bounded fields."""
    _require_valid(network)
    sig = _as_signal(inflow, network.n_links)
    caps = capacities(field)
    if not np.all(np.isfinite(caps)):
        return CertificateReport(
            "theorem-2", None, None, Verdict.UNCERTIFIABLE,
            notes=["flow field has unbounded links; use check_thm1"],
        )
    if field.inclusion_only:
        report = CertificateReport("theorem-2", None, None, Verdict.UNCERTIFIABLE)
        raise InclusionOnlyFieldError("theorem-2 refused: flow field is inclusion-only", report)
    L = network.leontief
    sup = sig.sup_weighted(L.column_weights(1.0 / caps), horizon)
    report = _compare("theorem-2", sup.value, sup.method,
                      liminf_total_flow(field, "smooth", normalized=True))
    report.notes.append("rhs is the liminf of capacity-normalized total outflow")
    return report


def check_inclusion_theorem(network: FlowNetwork, field: FlowField, inflow, *,
                            horizon: float | None = None) -> CertificateReport:
    """As theorem 1, but only links holding mass count towards the outflow."""
    _require_valid(network)
    sig = _as_signal(inflow, network.n_links)
    L = network.leontief
    sup = sig.sup_weighted(L.column_weights(), horizon)
    return _compare("inclusion-theorem", sup.value, sup.method,
                    liminf_total_flow(field, "inclusion"))


def check_prop1_optimality(a, c, b) -> tuple[bool, bool]:
    """(sum a/b <= min c/b, sum a/c < 1).

    Whenever the first holds for some positive b, the second should hold
    for b = c; this is the hook the randomized tests use.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(c <= 0) or np.any(b <= 0):
        raise DomainError("normalizing vectors must be strictly positive")
    if np.any(a < 0):
        raise DomainError("a must be nonnegative")
    holds_b = bool(np.sum(a / b) <= np.min(c / b))
    holds_c = bool(np.sum(a / c) < 1.0)
    return holds_b, holds_c


def _local_normalized_sup(field: FlowField) -> float | None:
    """sup over x of the capacity-normalized total outflow at a single node."""
    fams = field.families
    if any(isinstance(f, Custom) for f in fams):
        return None
    if all(isinstance(f, NodeProportional) for f in fams):
        return 1.0
    if all(isinstance(f, SaturatingExp) for f in fams):
        return float(len(fams))
    return None


def check_local_necessity(network: FlowNetwork, field: FlowField, lam) -> CertificateReport:
    """Flag a single-node network whose constant load exceeds its service limit.

    Returns necessarily-unstable when ``sum lambda_i / c_i`` exceeds the
    normalized liminf and the family meets the hypothesis that no state
    serves more than that liminf; otherwise not-determined.
    """
    if not network.is_local():
        raise StructuralError("network is not local: links must share one head node and R must be 0")
    sig = _as_signal(lam, network.n_links)
    if not sig.is_constant:
        raise DomainError("local necessity needs a constant inflow")
    lam = sig.at(0.0)
    caps = capacities(field)
    if not np.all(np.isfinite(caps)):
        raise DomainError("local necessity needs bounded flow functions")
    lhs = float(np.sum(lam / caps))
    if field.inclusion_only or any(isinstance(f, PhaseProportional) for f in field.families):
        return CertificateReport("local-necessity", lhs, None, Verdict.NOT_DETERMINED,
                                 notes=["field violates work conservation; check does not apply"])
    lim = liminf_total_flow(field, "smooth", normalized=True)
    report = CertificateReport("local-necessity", lhs, lim.value, Verdict.NOT_DETERMINED,
                               "exact (constant)", lim.provenance)
    top = _local_normalized_sup(field)
    if not lim.known or top is None:
        report.notes.append("hypothesis sup f <= liminf f cannot be established for this family")
        return report
    if top > lim.value:
        report.notes.append(
            f"hypothesis fails: normalized total outflow reaches {top:g} > liminf {lim.value:g}"
        )
        return report
    if lhs > lim.value:
        report.verdict = Verdict.NECESSARILY_UNSTABLE
    else:
        report.notes.append("necessary condition holds; stability is not decided by this check")
    return report


@dataclass(frozen=True)
class LyapunovWeights:
    """Weights w of V(x) = w^T (I - R^T)^-1 x."""

    w: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.any(w <= 0):
            raise DomainError("Lyapunov weights must be strictly positive")
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, n: int) -> "LyapunovWeights":
        return cls(np.ones(n), "uniform")

    @classmethod
    def capacity(cls, field: FlowField) -> "LyapunovWeights":
        caps = capacities(field)
        if not np.all(np.isfinite(caps)):
            raise DomainError("capacity weights need a bounded flow field")
        return cls(1.0 / caps, "capacity")


def lyapunov_value(weights: LyapunovWeights, L: LeontiefOperator, x) -> float:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("state must be nonnegative")
    return float(weights.w @ L.solve(x))


def lyapunov_derivative(weights: LyapunovWeights, L: LeontiefOperator, field: FlowField,
                        lam_now, x, outflow=None) -> float:
    """dV/dt = w^T a - w^T z, with z = f(x) unless an actual outflow is given."""
    x = np.asarray(x, dtype=float)
    lam_now = np.asarray(lam_now, dtype=float)
    if np.any(x < 0):
        raise DomainError("state must be nonnegative")
    if np.any(lam_now < 0):
        raise DomainError("exogenous inflow must be nonnegative")
    z = eval_flow(field, x) if outflow is None else np.asarray(outflow, dtype=float)
    return float(weights.w @ L.solve(lam_now) - weights.w @ z)


def certify_all(network: FlowNetwork, field: FlowField, inflow,
                horizon: float | None = None) -> list[CertificateReport]:
    """Run every certificate that applies to this network and field."""
    reports = []
    if field.inclusion_only:
        try:
            check_thm1(network, field, inflow, horizon=horizon)
        except InclusionOnlyFieldError as exc:
            naive = exc.report
            reports.append(CertificateReport(
                "theorem-1 (refused)", naive.lhs, None, Verdict.UNCERTIFIABLE, naive.lhs_method,
                naive.rhs_provenance,
                [f"naive comparison: lhs {naive.lhs:.12g} vs rhs {naive.rhs:.12g} "
                 f"would read {naive.verdict.value}", *naive.notes],
            ))
    else:
        reports.append(check_thm1(network, field, inflow, horizon=horizon))
        if field.bounded:
            reports.append(check_thm2_normalized(network, field, inflow, horizon=horizon))
    reports.append(check_inclusion_theorem(network, field, inflow, horizon=horizon))
    sig = _as_signal(inflow, network.n_links)
    if network.is_local() and field.bounded and sig.is_constant:
        reports.append(check_local_necessity(network, field, sig))
    return reports


def overall_verdict(reports: Sequence[CertificateReport]) -> Verdict:
    verdicts = [r.verdict for r in reports]
    if Verdict.NECESSARILY_UNSTABLE in verdicts:
        return Verdict.NECESSARILY_UNSTABLE
    if Verdict.CERTIFIED in verdicts:
        return Verdict.CERTIFIED
    if verdicts and all(v is Verdict.UNCERTIFIABLE for v in verdicts):
        return Verdict.UNCERTIFIABLE
    return Verdict.NOT_CERTIFIED
