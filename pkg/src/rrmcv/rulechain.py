"""Embedded Markov chain of a pure r-of-s run rule and its run-length moments.

A transient state is the outcome history of the last ``s - 1`` plotted
points (``1`` = beyond the limit) holding at most ``r - 1`` ones.  States are
ordered lexicographically by their bit strings; the chart starts in the
all-conforming history.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .dist import ChartParams, delta_of, mcv_cdf
from .errors import ArgumentError, NumericalError

__all__ = [
    "Side",
    "RunRule",
    "RuleChain",
    "RunLengthMoments",
    "InControlProb",
    "p_in_of_limit",
    "build_chain",
    "run_length_moments",
    "run_length_survival",
    "state_count",
    "MAX_WINDOW",
]

MAX_WINDOW = 8
P_IN_EPS = 1e-12


class Side(str, enum.Enum):
    UPPER = "upper"
    LOWER = "lower"

    @classmethod
    def parse(cls, value) -> "Side":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ArgumentError(f"side must be 'upper' or 'lower', got {value!r}") from None


@dataclass(frozen=True)
class RunRule:
    """Signal when ``r`` of the last ``s`` points fall beyond the limit.

    ``RunRule(1, 1)`` is the plain Shewhart chart.
    """

    r: int
    s: int
    side: Side = Side.UPPER

    def __post_init__(self):
        for name in ("r", "s"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ArgumentError(f"{name} must be an integer, got {value!r}")
        if not 1 <= self.r <= self.s:
            raise ArgumentError(f"need 1 <= r <= s, got r={self.r}, s={self.s}")
        if self.s > MAX_WINDOW:
            raise ArgumentError(f"s must be <= {MAX_WINDOW}, got {self.s}")
        object.__setattr__(self, "side", Side.parse(self.side))

    @classmethod
    def parse(cls, text: str, side="upper") -> "RunRule":
        """Build from ``"r/s"`` (``"r-of-s"`` and ``"r,s"`` also accepted)."""
        for sep in ("/", "-of-", ","):
            if sep in text:
                left, right = text.split(sep, 1)
                break
        else:
            raise ArgumentError(f"rule must look like 'r/s', got {text!r}")
        try:
            r, s = int(left), int(right)
        except ValueError:
            raise ArgumentError(f"rule must look like 'r/s', got {text!r}") from None
        return cls(r, s, side)

    @property
    def label(self) -> str:
        return f"{self.r}/{self.s}"

    @property
    def is_shewhart(self) -> bool:
        return self.r == 1 and self.s == 1


@dataclass(frozen=True)
class InControlProb:
    """Probability that one plotted point lies inside the control interval."""

    p_in: float

    def __post_init__(self):
        if not (isinstance(self.p_in, (int, float, np.floating)) and 0.0 <= self.p_in <= 1.0):
            raise ArgumentError(f"p_in must lie in [0, 1], got {self.p_in!r}")

    def __float__(self):
        return float(self.p_in)


@dataclass(frozen=True)
class RuleChain:
    """Transient block ``Q`` and initial distribution of an absorbing chain.

    ``exit_probs`` is the one-step absorption probability of each state.  If
    omitted it is recovered as ``1 - Q 1``, with round-off residues of rows
    that sum to one snapped to zero.
    """

    q_matrix: np.ndarray
    init: np.ndarray
    state_labels: tuple = field(default=())
    exit_probs: np.ndarray | None = None

    def __post_init__(self):
        q = np.array(self.q_matrix, dtype=float)
        v = np.array(self.init, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or v.shape != (q.shape[0],):
            raise ArgumentError("q_matrix must be square and match the length of init")
        if np.any(q < 0) or np.any(q > 1):
            raise ArgumentError("q_matrix entries must lie in [0, 1]")
        if self.exit_probs is None:
            exit_probs = 1.0 - q.sum(axis=1)
            slack = 8.0 * np.finfo(float).eps * max(q.shape[0], 1)
            exit_probs[np.abs(exit_probs) <= slack] = 0.0
        else:
            exit_probs = np.array(self.exit_probs, dtype=float)
        if exit_probs.shape != v.shape or np.any(exit_probs < 0):
            raise ArgumentError("rows of q_matrix must sum to at most 1")
        for arr in (q, v, exit_probs):
            arr.setflags(write=False)
        object.__setattr__(self, "q_matrix", q)
        object.__setattr__(self, "init", v)
        object.__setattr__(self, "exit_probs", exit_probs)
        object.__setattr__(self, "state_labels", tuple(self.state_labels))

    @property
    def size(self) -> int:
        return self.q_matrix.shape[0]

    def permuted(self, order) -> "RuleChain":
        """Chain with states reordered so that new state ``i`` is old state ``order[i]``."""
        order = list(order)
        labels = tuple(self.state_labels[i] for i in order) if self.state_labels else ()
        return RuleChain(
            self.q_matrix[np.ix_(order, order)], self.init[order], labels, self.exit_probs[order]
        )


@dataclass(frozen=True)
class RunLengthMoments:
    arl: float
    sdrl: float
    nu1: float
    nu2: float
    mu2: float


def state_count(r: int, s: int) -> int:
    return sum(math.comb(s - 1, k) for k in range(r))


def _history_states(r, s):
    return [h for h in itertools.product((0, 1), repeat=s - 1) if sum(h) <= r - 1]


def p_in_of_limit(params: ChartParams, rule_side, limit: float, tau: float) -> InControlProb:
    """Probability that gamma_hat lands inside the control interval at shift ``tau``.

    ``rule_side`` may be a :class:`Side`, its string value, or a :class:`RunRule`.
    """
    side = rule_side.side if isinstance(rule_side, RunRule) else Side.parse(rule_side)
    if not (isinstance(limit, (int, float, np.floating)) and limit > 0):
        raise ArgumentError(f"limit must be > 0, got {limit!r}")
    shifted = delta_of(params, tau)
    if math.isinf(limit):
        below = 1.0
    else:
        below = mcv_cdf(limit, params, shifted.delta1)
    return InControlProb(below if side is Side.UPPER else 1.0 - below)


def build_chain(rule: RunRule, p: InControlProb | float) -> RuleChain:
    p_in = float(p)
    if not P_IN_EPS <= p_in <= 1.0 - P_IN_EPS:
        raise ArgumentError(
            f"p_in={p_in!r} is outside [{P_IN_EPS}, 1 - {P_IN_EPS}]; the chain would "
            "absorb immediately or never"
        )
    r, s = rule.r, rule.s
    states = _history_states(r, s)
    index = {h: i for i, h in enumerate(states)}
    m = len(states)
    q = np.zeros((m, m))
    exit_probs = np.zeros(m)
    for h in states:
        for outcome, prob in ((0, p_in), (1, 1.0 - p_in)):
            window = h + (outcome,)
            if sum(window) >= r:
                exit_probs[index[h]] += prob
            else:
                # drop the oldest outcome
                q[index[h], index[window[1:]]] += prob
    init = np.zeros(m)
    init[index[(0,) * (s - 1)]] = 1.0
    labels = tuple("".join(map(str, h)) for h in states)
    return RuleChain(q, init, labels, exit_probs)


def _solve_absorbing(q, exit_probs, rhs):
    """Solve ``(I - Q) X = rhs`` for a substochastic ``Q`` and ``rhs >= 0``.

    Elimination without pivoting in which each pivot ``1 - Q_kk`` is formed
    as the row's outflow (absorption plus transitions to states not yet
    eliminated) instead of by subtraction.  Every intermediate is then a sum
    of nonnegative terms, so the result keeps full relative accuracy however
    close the chain is to never absorbing, and does not depend on the state
    order.
    """
    q = np.array(q, dtype=float)
    e = np.array(exit_probs, dtype=float)
    b = np.array(rhs, dtype=float).reshape(q.shape[0], -1)
    m = q.shape[0]
    pivots = np.empty(m)
    for k in range(m):
        rest = slice(k + 1, m)
        d = e[k] + q[k, rest].sum()
        if not d > 0.0:
            raise NumericalError(f"I - Q is singular: state {k} never leaves its class")
        pivots[k] = d
        factor = q[rest, k] / d
        q[rest, rest] += np.outer(factor, q[k, rest])
        e[rest] += factor * e[k]
        b[rest] += np.outer(factor, b[k])
    x = np.empty_like(b)
    for k in range(m - 1, -1, -1):
        x[k] = (b[k] + q[k, k + 1:] @ x[k + 1:]) / pivots[k]
    return x


def run_length_moments(chain: RuleChain) -> RunLengthMoments:
    """ARL and SDRL of the chain started from ``chain.init``.

    The first solve gives the expected remaining run length ``x = (I - Q)^-1 1``
    from every state.  The second solves for the run-length variance from
    every state, whose right-hand side

        c_i = sum_j Q_ij (1 + x_j - x_i)**2 + exit_i (1 - x_i)**2

    is a sum of squares.  This avoids the cancellation in
    ``nu2 - nu1**2 + nu1`` when the run length is nearly deterministic;
    ``nu2 = 2 q'(I - Q)^-2 Q 1`` is then recovered from that identity.
    """
    q, exits = chain.q_matrix, chain.exit_probs
    first = _solve_absorbing(q, exits, np.ones(chain.size))[:, 0]
    if not np.all(np.isfinite(first)):
        raise NumericalError("I - Q is numerically singular")
    step = 1.0 + first[None, :] - first[:, None]
    rhs = (q * step**2).sum(axis=1) + exits * (1.0 - first) ** 2
    variances = _solve_absorbing(q, exits, rhs)[:, 0]
    nu1 = float(chain.init @ first)
    mu2 = float(chain.init @ variances)
    nu2 = mu2 + nu1 * nu1 - nu1
    return RunLengthMoments(arl=nu1, sdrl=math.sqrt(max(mu2, 0.0)), nu1=nu1, nu2=nu2, mu2=mu2)


def run_length_survival(chain: RuleChain, t: int) -> float:
    """``P(RL > t) = q' Q^t 1``."""
    if isinstance(t, bool) or not isinstance(t, (int, np.integer)) or t < 0:
        raise ArgumentError(f"t must be a non-negative integer, got {t!r}")
    v = np.linalg.matrix_power(chain.q_matrix, int(t)) @ np.ones(chain.size)
    return min(1.0, max(0.0, float(chain.init @ v)))
