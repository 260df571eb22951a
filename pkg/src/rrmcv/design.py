"""Control limits that give a run-rule chart a prescribed in-control ARL.

The chart's ARL depends on its limit only through the in-control probability
``p_in`` of a single point, and that dependence is the same for every process.
So the design is solved in two steps: bisect ``p_in`` against the rule's
Markov-chain ARL, then convert ``p_in`` into a limit with one quantile of the
sample-MCV distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dist import ChartParams, mcv_quantile
from .errors import ArgumentError, InfeasibleTargetError, NumericalError
from .rulechain import (
    P_IN_EPS,
    InControlProb,
    RunLengthMoments,
    RunRule,
    Side,
    build_chain,
    p_in_of_limit,
    run_length_moments,
)

__all__ = [
    "DEFAULT_ARL0",
    "DesignSpec",
    "DesignedChart",
    "solve_p_in",
    "design_limits",
    "design_both_sides",
    "verify_design",
    "chain_arl",
]

DEFAULT_ARL0 = 370.4
ARL_REL_TOL = 1e-9
MAX_BISECTIONS = 200


@dataclass(frozen=True)
class DesignSpec:
    params: ChartParams
    rule: RunRule
    arl0: float = DEFAULT_ARL0

    def __post_init__(self):
        if not (isinstance(self.arl0, (int, float)) and math.isfinite(self.arl0)):
            raise ArgumentError(f"arl0 must be a finite number, got {self.arl0!r}")
        if self.arl0 <= 1:
            raise ArgumentError(f"arl0 must be > 1, got {self.arl0}")


@dataclass(frozen=True)
class DesignedChart:
    """A one-sided chart with its single finite limit.

    For a lower chart ``limit`` is LCL and the upper limit is +inf; for an
    upper chart ``limit`` is UCL and the lower limit is 0.
    """

    spec: DesignSpec
    limit: float
    p_in_star: InControlProb

    @property
    def side(self) -> Side:
        return self.spec.rule.side

    @property
    def rule(self) -> RunRule:
        return self.spec.rule

    @property
    def params(self) -> ChartParams:
        return self.spec.params

    @property
    def lcl(self) -> float:
        return self.limit if self.side is Side.LOWER else 0.0

    @property
    def ucl(self) -> float:
        return self.limit if self.side is Side.UPPER else math.inf


def chain_arl(rule: RunRule, p_in: float) -> float:
    return run_length_moments(build_chain(rule, p_in)).arl


def solve_p_in(rule: RunRule, arl0: float) -> InControlProb:
    """In-control probability at which ``rule`` has ARL ``arl0``.

    The ARL rises monotonically from ``r`` (every point flagged) to infinity
    as ``p_in`` goes from 0 to 1.  The bisection runs on ``log(1 - p_in)``.
    """
    if not (isinstance(arl0, (int, float)) and math.isfinite(arl0)):
        raise ArgumentError(f"arl0 must be a finite number, got {arl0!r}")
    if arl0 <= rule.r:
        raise InfeasibleTargetError(
            f"ARL0={arl0} is not above the earliest possible signal r={rule.r} of rule {rule.label}",
            bound=rule.r,
        )
    # q = 1 - p_in; small q means a long ARL
    q_small, q_large = 2.0 * P_IN_EPS, 1.0 - 2.0 * P_IN_EPS
    if chain_arl(rule, 1.0 - q_small) < arl0:
        raise InfeasibleTargetError(
            f"ARL0={arl0} exceeds the largest ARL reachable with p_in <= 1 - {P_IN_EPS}",
            bound=chain_arl(rule, 1.0 - q_small),
        )
    if chain_arl(rule, 1.0 - q_large) > arl0:
        raise InfeasibleTargetError(
            f"ARL0={arl0} is below the smallest ARL reachable with p_in >= {P_IN_EPS}",
            bound=chain_arl(rule, 1.0 - q_large),
        )

    best = None
    for _ in range(MAX_BISECTIONS):
        q_mid = math.sqrt(q_small * q_large)
        p_mid = 1.0 - q_mid
        arl = chain_arl(rule, p_mid)
        err = abs(arl - arl0) / arl0
        if best is None or err < best[0]:
            best = (err, p_mid)
        if err <= ARL_REL_TOL * 0.1:
            break
        if arl > arl0:
            q_small = q_mid
        else:
            q_large = q_mid
        if 1.0 - q_small == 1.0 - q_large:
            break
    err, p_star = best
    if err > ARL_REL_TOL:
        raise NumericalError(
            f"p_in bisection stalled at relative ARL error {err:.3g}",
            bracket=(1.0 - q_large, 1.0 - q_small),
        )
    return InControlProb(p_star)


def design_limits(spec: DesignSpec, side=None) -> DesignedChart:
    """Limit of the one-sided chart whose in-control ARL equals ``spec.arl0``.

    ``side`` overrides the side carried by ``spec.rule``.
    """
    if side is not None:
        side = Side.parse(side)
        if side is not spec.rule.side:
            spec = DesignSpec(spec.params, RunRule(spec.rule.r, spec.rule.s, side), spec.arl0)
    p_star = solve_p_in(spec.rule, spec.arl0)
    params = spec.params
    if spec.rule.side is Side.UPPER:
        limit = mcv_quantile(p_star.p_in, params, params.delta0)
    else:
        limit = mcv_quantile(1.0 - p_star.p_in, params, params.delta0)
    return DesignedChart(spec=spec, limit=limit, p_in_star=p_star)


def design_both_sides(params: ChartParams, r: int, s: int, arl0: float = DEFAULT_ARL0):
    """(lower chart, upper chart) pair, as laid out in the reference limit table."""
    lower = design_limits(DesignSpec(params, RunRule(r, s, Side.LOWER), arl0))
    upper = design_limits(DesignSpec(params, RunRule(r, s, Side.UPPER), arl0))
    return lower, upper


def verify_design(chart: DesignedChart) -> RunLengthMoments:
    """Recompute the in-control moments from the stored limit alone."""
    p_in = p_in_of_limit(chart.params, chart.side, chart.limit, 1.0)
    return run_length_moments(build_chain(chart.rule, p_in))
