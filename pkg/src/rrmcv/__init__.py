"""Run-rules control charts for the multivariate coefficient of variation.

Typical use::

    from rrmcv import ChartParams, RunRule, DesignSpec, design_limits, perf_at_shift

    chart = design_limits(DesignSpec(ChartParams(5, 2, 0.1), RunRule(2, 3, "upper")))
    perf_at_shift(chart, 1.25).arl1
"""

__version__ = "0.1.0"

from .design import (
    DEFAULT_ARL0,
    DesignedChart,
    DesignSpec,
    design_both_sides,
    design_limits,
    solve_p_in,
    verify_design,
)
from .dist import (
    ChartParams,
    NoncentralFParams,
    ShiftedDelta,
    delta_of,
    mcv_cdf,
    mcv_quantile,
    ncf_cdf,
    ncf_quantile,
    reg_inc_beta,
)
from .errors import (
    ArgumentError,
    DegenerateDataError,
    InfeasibleTargetError,
    NumericalError,
    ParseError,
    RRMCVError,
    SchemaError,
)
from .monitor import PhaseIISubgroup, SignalReport, gamma_hat, ingest, run_signal
from .perf import (
    DECREASING,
    INCREASING,
    GridSpec,
    PerfReport,
    ShiftRange,
    delta_index,
    earl,
    perf_at_shift,
    shewhart_baseline,
    table_grid,
)
from .rulechain import (
    InControlProb,
    RuleChain,
    RunLengthMoments,
    RunRule,
    Side,
    build_chain,
    p_in_of_limit,
    run_length_moments,
    run_length_survival,
)
from .simulate import MCEstimate, RunLengthOverflow, SimConfig, mc_moments, simulate_run_length
