"""Out-of-control performance of designed charts.

Covers ARL/SDRL at a fixed shift, expected ARL/SDRL over a uniform range of
shifts, the percentage comparison index against a baseline chart, and a grid
driver that regenerates the reference tables.
"""

from __future__ import annotations

import enum
import functools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .design import DEFAULT_ARL0, DesignedChart, DesignSpec, design_limits
from .dist import ChartParams
from .errors import ArgumentError, RRMCVError
from .rulechain import RunRule, Side, build_chain, p_in_of_limit, run_length_moments

__all__ = [
    "Direction",
    "ShiftRange",
    "PerfReport",
    "DECREASING",
    "INCREASING",
    "perf_at_shift",
    "delta_index",
    "shewhart_baseline",
    "earl",
    "cached_design",
    "GridSpec",
    "table_grid",
    "PERF_FIELDS",
    "LIMIT_FIELDS",
    "DELTA_FIELDS",
]

QUADRATURE_NODES = 64
GRID_STEP = 0.05


class Direction(str, enum.Enum):
    DECREASING = "decreasing"
    INCREASING = "increasing"

    @property
    def side(self) -> Side:
        return Side.LOWER if self is Direction.DECREASING else Side.UPPER

    @property
    def tag(self) -> str:
        return "D" if self is Direction.DECREASING else "I"


@dataclass(frozen=True)
class ShiftRange:
    """Uniformly distributed shift ``tau`` on ``[a, b)`` (decreasing) or ``(a, b]`` (increasing).

    The open end is the in-control value side.
    """

    a: float
    b: float
    direction: Direction

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if not (math.isfinite(self.a) and math.isfinite(self.b) and 0 < self.a < self.b):
            raise ArgumentError(f"need 0 < a < b, got a={self.a}, b={self.b}")
        if self.direction is Direction.DECREASING and self.b > 1:
            raise ArgumentError(f"a decreasing range must have b <= 1, got b={self.b}")
        if self.direction is Direction.INCREASING and self.a < 1:
            raise ArgumentError(f"an increasing range must have a >= 1, got a={self.a}")

    @property
    def label(self) -> str:
        if self.direction is Direction.DECREASING:
            return f"[{self.a:g},{self.b:g})"
        return f"({self.a:g},{self.b:g}]"

    def grid(self, step: float = GRID_STEP) -> np.ndarray:
        """Equally spaced shifts from the closed end, excluding the open end."""
        count = int(round((self.b - self.a) / step))
        if count < 1 or not math.isclose(count * step, self.b - self.a, rel_tol=1e-9):
            raise ArgumentError(f"step {step} does not divide the range {self.label}")
        k = np.arange(count)
        if self.direction is Direction.DECREASING:
            return self.a + k * step
        return self.b - k[::-1] * step


DECREASING = ShiftRange(0.5, 1.0, Direction.DECREASING)
INCREASING = ShiftRange(1.0, 2.0, Direction.INCREASING)


@dataclass(frozen=True)
class PerfReport:
    """Performance of one chart at a shift (``arl1``/``sdrl1``) or over a range (``earl``/``esdrl``).

    ``esdrl`` averages the SDRL curve; ``esdrl_rms`` is the square root of the
    averaged variance, kept for comparison.
    """

    tau: float | None = None
    shift_range: ShiftRange | None = None
    arl1: float | None = None
    sdrl1: float | None = None
    earl: float | None = None
    esdrl: float | None = None
    esdrl_rms: float | None = None
    method: str | None = None

    @property
    def tau_or_range(self) -> str:
        if self.shift_range is not None:
            return self.shift_range.label
        return f"{self.tau:g}"


@functools.lru_cache(maxsize=4096)
def cached_design(params: ChartParams, rule: RunRule, arl0: float = DEFAULT_ARL0) -> DesignedChart:
    return design_limits(DesignSpec(params, rule, arl0))


def _moments_at(chart: DesignedChart, tau: float):
    p_in = p_in_of_limit(chart.params, chart.side, chart.limit, tau)
    return run_length_moments(build_chain(chart.rule, p_in))


def perf_at_shift(chart: DesignedChart, tau: float) -> PerfReport:
    m = _moments_at(chart, tau)
    return PerfReport(tau=float(tau), arl1=m.arl, sdrl1=m.sdrl)


def delta_index(arl_baseline: float, arl_candidate: float, relative_to: str = "candidate") -> float:
    """Percentage by which the candidate chart beats the baseline (positive = better).

    ``relative_to="candidate"`` divides the ARL gap by the candidate's ARL.
    ``relative_to="baseline"`` divides by the baseline's ARL instead; that
    normalisation is the one behind the reference comparison tables.
    """
    for name, value in (("arl_baseline", arl_baseline), ("arl_candidate", arl_candidate)):
        if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value)):
            raise ArgumentError(f"{name} must be a finite number, got {value!r}")
    if relative_to == "candidate":
        denom = arl_candidate
    elif relative_to == "baseline":
        denom = arl_baseline
    else:
        raise ArgumentError(f"relative_to must be 'candidate' or 'baseline', got {relative_to!r}")
    if arl_candidate <= 0 or denom <= 0:
        raise ArgumentError("ARL values must be positive")
    return 100.0 * (arl_baseline - arl_candidate) / denom


def shewhart_baseline(params: ChartParams, side, arl0: float = DEFAULT_ARL0, tau: float = 1.0) -> float:
    """ARL at shift ``tau`` of the plain one-sided Shewhart chart designed for ``arl0``."""
    chart = cached_design(params, RunRule(1, 1, Side.parse(side)), float(arl0))
    p_in = p_in_of_limit(params, chart.side, chart.limit, tau).p_in
    return 1.0 / (1.0 - p_in)


@functools.lru_cache(maxsize=8)
def _gauss_legendre(nodes: int):
    return np.polynomial.legendre.leggauss(nodes)


def earl(
    chart: DesignedChart,
    shift_range: ShiftRange,
    method: str = "quadrature",
    nodes: int = QUADRATURE_NODES,
    step: float = GRID_STEP,
) -> PerfReport:
    """Expected ARL and SDRL with the shift uniformly distributed over ``shift_range``.

    ``method="quadrature"`` integrates with ``nodes``-point Gauss-Legendre.
    ``method="grid"`` averages over the equally spaced shifts of
    :meth:`ShiftRange.grid`, which is how the reference expected-ARL table
    was evaluated.
    """
    if shift_range.direction.side is not chart.side:
        raise ArgumentError(
            f"a {shift_range.direction.value} shift range needs a {shift_range.direction.side.value} "
            f"chart, got a {chart.side.value} chart"
        )
    if method == "quadrature":
        x, w = _gauss_legendre(int(nodes))
        half = 0.5 * (shift_range.b - shift_range.a)
        taus = half * x + 0.5 * (shift_range.a + shift_range.b)
        weights = 0.5 * w
    elif method == "grid":
        taus = shift_range.grid(step)
        weights = np.full(taus.size, 1.0 / taus.size)
    else:
        raise ArgumentError(f"method must be 'quadrature' or 'grid', got {method!r}")
    moments = [_moments_at(chart, float(t)) for t in taus]
    arls = np.array([m.arl for m in moments])
    sdrls = np.array([m.sdrl for m in moments])
    return PerfReport(
        shift_range=shift_range,
        earl=float(weights @ arls),
        esdrl=float(weights @ sdrls),
        esdrl_rms=float(math.sqrt(weights @ sdrls**2)),
        method=method,
    )


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

LIMIT_FIELDS = ("n", "p_dim", "gamma0", "rule", "lcl", "ucl", "error")
PERF_FIELDS = (
    "n", "p_dim", "gamma0", "rule", "side", "tau_or_range", "arl1", "sdrl1", "earl", "esdrl", "error",
)
DELTA_FIELDS = (
    "n", "p_dim", "gamma0", "rule", "side", "tau_or_range", "candidate", "baseline", "delta", "error",
)
KINDS = ("limits", "shift", "range", "delta_shift", "delta_range")


@dataclass(frozen=True)
class GridSpec:
    """Cartesian grid of chart settings.

    ``kind`` selects what each cell reports: ``limits`` (LCL/UCL pair),
    ``shift`` (ARL/SDRL at each ``taus`` value), ``range`` (EARL/ESDRL over
    each of ``ranges``), ``delta_shift``/``delta_range`` (comparison index
    against the Shewhart chart).  For shift grids the chart side follows the
    shift direction: ``tau < 1`` uses the lower chart, ``tau > 1`` the upper.
    """

    kind: str
    n_values: tuple = (5, 10, 15)
    p_values: tuple = (2, 3, 4)
    gamma0_values: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    rules: tuple = ((2, 3), (3, 4), (4, 5))
    taus: tuple = (0.5, 0.75, 0.9, 1.1, 1.25, 1.5)
    ranges: tuple = (DECREASING, INCREASING)
    arl0: float = DEFAULT_ARL0
    earl_method: str = "grid"
    delta_relative_to: str = "baseline"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("n_values", "p_values", "gamma0_values", "rules"):
            if not getattr(self, name):
                raise ArgumentError(f"grid axis {name} is empty")
        if self.kind in ("shift", "delta_shift") and not self.taus:
            raise ArgumentError("grid axis taus is empty")
        if self.kind in ("range", "delta_range") and not self.ranges:
            raise ArgumentError("grid axis ranges is empty")

    @property
    def fields(self) -> tuple:
        if self.kind == "limits":
            return LIMIT_FIELDS
        if self.kind.startswith("delta"):
            return DELTA_FIELDS
        return PERF_FIELDS

    def cells(self) -> list:
        """Cells in lexicographic order: p_dim, gamma0, rule, n, then shift/range."""
        out = []
        for p in self.p_values:
            for g in self.gamma0_values:
                for rs in self.rules:
                    for n in self.n_values:
                        if self.kind == "limits":
                            out.append((n, p, g, tuple(rs), None))
                        elif self.kind in ("shift", "delta_shift"):
                            out.extend((n, p, g, tuple(rs), float(t)) for t in self.taus)
                        else:
                            out.extend((n, p, g, tuple(rs), rng) for rng in self.ranges)
        return out


def _side_for_tau(tau: float) -> Side:
    if tau == 1.0:
        raise ArgumentError("tau = 1 has no out-of-control direction; choose a side explicitly")
    return Side.LOWER if tau < 1.0 else Side.UPPER


def evaluate_cell(spec: GridSpec, cell) -> dict:
    n, p, g, (r, s), shift = cell
    row = {f: "" for f in spec.fields}
    row.update(n=n, p_dim=p, gamma0=g, rule=f"{r}/{s}")
    try:
        params = ChartParams(n, p, g)
        if spec.kind == "limits":
            lower = cached_design(params, RunRule(r, s, Side.LOWER), spec.arl0)
            upper = cached_design(params, RunRule(r, s, Side.UPPER), spec.arl0)
            row.update(lcl=lower.limit, ucl=upper.limit)
            return row
        if isinstance(shift, ShiftRange):
            side = shift.direction.side
            row.update(side=side.value, tau_or_range=shift.direction.tag)
        else:
            side = _side_for_tau(shift)
            row.update(side=side.value, tau_or_range=f"{shift:g}")
        chart = cached_design(params, RunRule(r, s, side), spec.arl0)
        if spec.kind == "shift":
            rep = perf_at_shift(chart, shift)
            row.update(arl1=rep.arl1, sdrl1=rep.sdrl1)
        elif spec.kind == "range":
            rep = earl(chart, shift, method=spec.earl_method)
            row.update(earl=rep.earl, esdrl=rep.esdrl)
        elif spec.kind == "delta_shift":
            cand = perf_at_shift(chart, shift).arl1
            base = shewhart_baseline(params, side, spec.arl0, shift)
            row.update(candidate=cand, baseline=base,
                       delta=delta_index(base, cand, spec.delta_relative_to))
        else:
            cand = earl(chart, shift, method=spec.earl_method).earl
            base_chart = cached_design(params, RunRule(1, 1, side), spec.arl0)
            base = earl(base_chart, shift, method=spec.earl_method).earl
            row.update(candidate=cand, baseline=base,
                       delta=delta_index(base, cand, spec.delta_relative_to))
    except RRMCVError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _evaluate_chunk(spec, cells):
    return [evaluate_cell(spec, c) for c in cells]


def default_workers() -> int:
    raw = os.environ.get("RRMCV_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ArgumentError(f"RRMCV_WORKERS must be an integer, got {raw!r}") from None


def table_grid(spec: GridSpec, workers: int | None = None) -> list:
    """Evaluate every cell of ``spec`` and return one dict per cell, in grid order.

    Cells are independent; with ``workers > 1`` they are spread over worker
    processes in contiguous chunks and merged back in the original order, so
    the output does not depend on the worker count.
    """
    cells = spec.cells()
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(cells) < 2:
        return _evaluate_chunk(spec, cells)
    size = math.ceil(len(cells) / workers)
    chunks = [cells[i:i + size] for i in range(0, len(cells), size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_evaluate_chunk, [spec] * len(chunks), chunks))
    return [row for part in parts for row in part]
