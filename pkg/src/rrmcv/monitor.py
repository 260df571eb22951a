"""Phase II monitoring: sample MCVs from subgroup data and the r-of-s signal logic."""

from __future__ import annotations

import collections
import csv
import io
import json
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy import linalg

from .errors import ArgumentError, DegenerateDataError, ParseError, SchemaError
from .rulechain import RunRule, Side

__all__ = [
    "PhaseIISubgroup",
    "SignalReport",
    "SignalStream",
    "gamma_hat",
    "run_signal",
    "ingest",
    "read_gamma_column",
    "table10_path",
    "report_json",
    "plot_csv",
]


@dataclass(frozen=True)
class PhaseIISubgroup:
    """One monitoring sample.

    Exactly one of ``raw`` (``n x p`` observations) or the pair ``mean``/``cov``
    is set.  ``n`` is the subgroup size; for the summary form it is optional
    bookkeeping.  Validation of the covariance is deferred to :func:`gamma_hat`.
    """

    t: int
    raw: np.ndarray | None = None
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    n: int | None = None
    gamma_hat: float | None = field(default=None, compare=False)

    def __post_init__(self):
        has_summary = self.mean is not None and self.cov is not None
        if (self.raw is not None) == has_summary:
            raise ArgumentError("give either raw observations or both mean and cov")
        if self.raw is not None:
            raw = np.array(self.raw, dtype=float)
            if raw.ndim != 2:
                raise ArgumentError("raw observations must be an n x p matrix")
            object.__setattr__(self, "raw", raw)
            object.__setattr__(self, "n", raw.shape[0])
        else:
            mean = np.array(self.mean, dtype=float).reshape(-1)
            cov = np.array(self.cov, dtype=float)
            if cov.shape != (mean.size, mean.size):
                raise ArgumentError(f"cov must be {mean.size}x{mean.size}, got shape {cov.shape}")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "cov", cov)

    @classmethod
    def from_raw(cls, observations, t: int = 0) -> "PhaseIISubgroup":
        return cls(t=t, raw=observations)

    @classmethod
    def from_summary(cls, mean, cov, n: int | None = None, t: int = 0) -> "PhaseIISubgroup":
        return cls(t=t, mean=mean, cov=cov, n=n)

    @property
    def p_dim(self) -> int:
        return self.raw.shape[1] if self.raw is not None else self.mean.size

    @property
    def form(self) -> str:
        return "raw" if self.raw is not None else "summary"


def gamma_hat(subgroup: PhaseIISubgroup) -> float:
    """Sample MCV ``(xbar' S^-1 xbar)^(-1/2)``, with ``S`` using the ``n - 1`` divisor."""
    if subgroup.raw is not None:
        n, p = subgroup.raw.shape
        if n <= p:
            raise ArgumentError(f"subgroup {subgroup.t}: need n > p_dim, got n={n}, p_dim={p}")
        mean = subgroup.raw.mean(axis=0)
        cov = np.atleast_2d(np.cov(subgroup.raw, rowvar=False, ddof=1))
    else:
        if subgroup.n is not None and subgroup.n <= subgroup.p_dim:
            raise ArgumentError(
                f"subgroup {subgroup.t}: need n > p_dim, got n={subgroup.n}, p_dim={subgroup.p_dim}"
            )
        mean, cov = subgroup.mean, subgroup.cov
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise DegenerateDataError(f"subgroup {subgroup.t}: covariance matrix is not symmetric")
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise DegenerateDataError(f"subgroup {subgroup.t}: non-finite mean or covariance")
    try:
        factor = linalg.cho_factor(cov)
    except linalg.LinAlgError:
        raise DegenerateDataError(
            f"subgroup {subgroup.t}: covariance matrix is not positive definite"
        ) from None
    quad = float(mean @ linalg.cho_solve(factor, mean))
    if not quad > 0.0:
        raise DegenerateDataError(f"subgroup {subgroup.t}: zero mean vector gives an infinite MCV")
    return 1.0 / math.sqrt(quad)


# ---------------------------------------------------------------------------
# signalling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalReport:
    """Outcome of applying a run rule to a sequence. Indices are 1-based."""

    gamma_hats: tuple
    flagged: tuple
    signal_at: int | None
    rule: RunRule
    limit: float
    side: Side

    def to_dict(self) -> dict:
        return {
            "gamma_hats": list(self.gamma_hats),
            "flagged": list(self.flagged),
            "signal_at": self.signal_at,
            "rule": self.rule.label,
            "limit": self.limit,
            "side": self.side.value,
        }


class SignalStream:
    """Online r-of-s detector holding only the last ``s`` outcomes.

    >>> stream = SignalStream(RunRule(2, 3), limit=1.0, side="upper")
    >>> [stream.push(x) for x in (1.5, 0.2, 1.1)]
    [False, False, True]
    """

    def __init__(self, rule: RunRule, limit: float, side):
        if not (isinstance(limit, (int, float, np.floating)) and limit > 0):
            raise ArgumentError(f"limit must be > 0, got {limit!r}")
        self.rule = rule
        self.limit = float(limit)
        self.side = Side.parse(side)
        self.t = 0
        self.signal_at = None
        self._window = collections.deque(maxlen=rule.s)
        self._count = 0

    def is_flag(self, value: float) -> bool:
        if self.side is Side.UPPER:
            return value > self.limit
        return value < self.limit

    def push(self, value: float) -> bool:
        """Add the next point; return True if the window condition holds at it."""
        self.t += 1
        flag = self.is_flag(float(value))
        if len(self._window) == self.rule.s:
            self._count -= self._window[0]
        self._window.append(flag)
        self._count += flag
        hit = self._count >= self.rule.r
        if hit and self.signal_at is None:
            self.signal_at = self.t
        return hit


def run_signal(gamma_hats, rule: RunRule, limit: float, side) -> SignalReport:
    """Scan ``gamma_hats`` in order and report flags and the first signal.

    A point is flagged when it lies strictly beyond ``limit``.  The whole
    sequence is scanned, so ``flagged`` also lists points after the signal.
    """
    stream = SignalStream(rule, limit, side)
    values, flagged = [], []
    for value in gamma_hats:
        value = float(value)
        values.append(value)
        stream.push(value)
        if stream.is_flag(value):
            flagged.append(stream.t)
    return SignalReport(
        gamma_hats=tuple(values),
        flagged=tuple(flagged),
        signal_at=stream.signal_at,
        rule=rule,
        limit=stream.limit,
        side=stream.side,
    )


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

_MEAN = re.compile(r"^mean_(\d+)$")
_COV = re.compile(r"^cov_(\d)(\d)$|^cov_(\d+)_(\d+)$")
_X = re.compile(r"^x_(\d+)$")


def table10_path() -> str:
    """Path of the shipped 20-sample summary dataset (p = 2, n = 5)."""
    return str(resources.files("rrmcv").joinpath("data/table10_summary.csv"))


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        return source
    raise ArgumentError(f"expected a path or text stream, got {type(source).__name__}")


def _rows(source):
    """Yield (line number, row dict) pairs plus the header, skipping blank lines."""
    handle = _open_text(source)
    try:
        reader = csv.reader(handle)
        header = None
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = [cell.strip() for cell in row]
            if header is None:
                header = cells
                if len(set(header)) != len(header):
                    raise SchemaError("duplicate column names in header", line=line)
                continue
            if len(cells) != len(header):
                raise SchemaError(
                    f"expected {len(header)} fields, got {len(cells)}", line=line
                )
            rows.append((line, dict(zip(header, cells))))
        return header, rows
    finally:
        if handle is not source:
            handle.close()


def _number(text, column, line, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {text!r} as a number", line=line) from None
    if kind is float and not math.isfinite(value):
        raise ParseError(f"column {column!r}: value {text!r} is not finite", line=line)
    return value


def _summary_layout(header):
    means = {int(m.group(1)): name for name in header if (m := _MEAN.match(name))}
    p = len(means)
    if sorted(means) != list(range(1, p + 1)):
        raise SchemaError("mean columns must be mean_1..mean_p", line=1)
    covs = {}
    for name in header:
        m = _COV.match(name)
        if m:
            i, j = (int(g) for g in (m.group(1, 2) if m.group(1) else m.group(3, 4)))
            covs[(i, j)] = name
    wanted = {(i, j) for i in range(1, p + 1) for j in range(i, p + 1)}
    if set(covs) != wanted:
        raise SchemaError(f"need upper-triangle columns cov_ij for 1 <= i <= j <= {p}", line=1)
    return p, means, covs


def ingest(source) -> list:
    """Read a Phase II CSV file (path or text stream) into subgroups.

    Summary layout: ``t,mean_1..mean_p,cov_11,cov_12,...,cov_pp`` with the
    covariance upper triangle in row-major order and optional ``n`` and
    ``gamma_hat`` columns.  Raw layout: ``t,obs,x_1..x_p`` with the ``n``
    observations of each subgroup on consecutive rows.  The layout is chosen
    from the header; a header mixing both is rejected.
    """
    header, rows = _rows(source)
    if header is None:
        return []
    if "t" not in header:
        raise SchemaError("missing column 't'", line=1)
    is_raw = "obs" in header or any(_X.match(h) for h in header)
    is_summary = any(_MEAN.match(h) or _COV.match(h) for h in header)
    if is_raw and is_summary:
        raise SchemaError("header mixes raw (obs, x_j) and summary (mean_j, cov_ij) columns", line=1)
    if is_summary:
        return _ingest_summary(header, rows)
    if is_raw:
        return _ingest_raw(header, rows)
    raise SchemaError("header has neither summary nor raw columns", line=1)


def _ingest_summary(header, rows):
    p, means, covs = _summary_layout(header)
    out = []
    for line, row in rows:
        t = _number(row["t"], "t", line, int)
        mean = [_number(row[means[i]], means[i], line) for i in range(1, p + 1)]
        cov = np.empty((p, p))
        for (i, j), name in covs.items():
            cov[i - 1, j - 1] = cov[j - 1, i - 1] = _number(row[name], name, line)
        n = _number(row["n"], "n", line, int) if row.get("n") else None
        g = _number(row["gamma_hat"], "gamma_hat", line) if row.get("gamma_hat") else None
        out.append(PhaseIISubgroup(t=t, mean=mean, cov=cov, n=n, gamma_hat=g))
    return out


def _ingest_raw(header, rows):
    xs = {int(m.group(1)): name for name in header if (m := _X.match(name))}
    p = len(xs)
    if p == 0 or sorted(xs) != list(range(1, p + 1)):
        raise SchemaError("observation columns must be x_1..x_p", line=1)
    groups = {}
    order = []
    last_t = None
    for line, row in rows:
        t = _number(row["t"], "t", line, int)
        if "obs" in row:
            _number(row["obs"], "obs", line, int)
        if t != last_t:
            if t in groups:
                raise SchemaError(f"rows of subgroup t={t} are not consecutive", line=line)
            groups[t] = []
            order.append(t)
            last_t = t
        groups[t].append([_number(row[xs[j]], xs[j], line) for j in range(1, p + 1)])
    return [PhaseIISubgroup(t=t, raw=np.array(groups[t])) for t in order]


def read_gamma_column(source, column: str = "gamma_hat") -> list:
    """Read a precomputed sample-MCV column from any CSV file, in row order."""
    header, rows = _rows(source)
    if header is None:
        return []
    if column not in header:
        raise SchemaError(f"missing column {column!r}", line=1)
    return [_number(row[column], column, line) for line, row in rows]


def report_json(reports) -> str:
    """JSON text for one report or a list of reports."""
    if isinstance(reports, SignalReport):
        payload = reports.to_dict()
    else:
        payload = [r.to_dict() for r in reports]
    return json.dumps(payload, indent=2) + "\n"


def plot_csv(report: SignalReport) -> str:
    """Plot-ready rows ``t,gamma_hat,limit,flagged``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "gamma_hat", "limit", "flagged"])
    flagged = set(report.flagged)
    for t, value in enumerate(report.gamma_hats, start=1):
        writer.writerow([t, repr(value), repr(report.limit), int(t in flagged)])
    return buf.getvalue()
