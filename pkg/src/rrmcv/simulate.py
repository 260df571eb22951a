"""Monte Carlo run lengths of an r-of-s rule on an i.i.d. flag stream.

Each plotted point is beyond the limit with probability ``q = 1 - p_in``.
Rather than stepping point by point, the sampler works on the gaps between
consecutive flags, which are i.i.d. geometric.  The rule fires at the first
flag whose preceding ``r - 1`` gaps sum to at most ``s - 1``.  Such a window
can only contain "short" gaps (``< s``), so the gap sequence splits into
clusters of short gaps separated by single long gaps, and clusters holding
fewer than ``r - 1`` short gaps can never fire.  Runs of those dead clusters
are skipped in one draw each: their number is geometric, their composition
multinomial, and the summed length of their long gaps negative binomial.
The result has exactly the law of the step-by-step simulation at a cost
that does not grow with the run length.

Random numbers come from Philox4x64-10 (numpy's ``Philox``).  Replication
``i`` belongs to block ``i // BLOCK_SIZE``, and block ``b`` draws from the
stream with key ``seed + 2**64 * b`` and counter 0, so estimates depend only
on the seed and the replication count, never on scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .rulechain import InControlProb, RunRule

__all__ = [
    "SimConfig",
    "MCEstimate",
    "RunLengthOverflow",
    "simulate_run_length",
    "sample_run_lengths",
    "mc_moments",
    "block_generator",
    "DEFAULT_MAX_RUN_LENGTH",
    "BLOCK_SIZE",
]

DEFAULT_MAX_RUN_LENGTH = 10**8
BLOCK_SIZE = 4096
CHUNK = 64
MIN_LIVE_PROB = 1e-15
_MAX_CLUSTER = 1 << 62
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RunLengthOverflow:
    """A replication that had not signalled after ``cap`` points."""

    cap: int

    def __int__(self):
        raise ArgumentError(f"run length exceeded the cap of {self.cap} points")


@dataclass(frozen=True)
class SimConfig:
    rule: RunRule
    p_in: InControlProb
    replications: int
    seed: int = 0
    max_run_length: int = DEFAULT_MAX_RUN_LENGTH

    def __post_init__(self):
        p = float(self.p_in)
        if not 0.0 < p < 1.0:
            raise ArgumentError(f"p_in must lie in (0, 1), got {p}")
        object.__setattr__(self, "p_in", InControlProb(p))
        for name in ("replications", "seed", "max_run_length"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ArgumentError(f"{name} must be an integer, got {value!r}")
        if self.replications < 1:
            raise ArgumentError(f"replications must be >= 1, got {self.replications}")
        if not 0 <= self.seed <= _SEED_MASK:
            raise ArgumentError("seed must be an unsigned 64-bit integer")
        if self.max_run_length < self.rule.r:
            raise ArgumentError(f"max_run_length must be >= r={self.rule.r}")


@dataclass(frozen=True)
class MCEstimate:
    """Sample moments of the simulated run lengths.

    Replications that hit the cap are excluded from the moments and counted
    in ``overflows``; when that count is nonzero the estimates are biased low
    and ``complete`` is False.
    """

    arl: float
    sdrl: float
    arl_se: float
    sdrl_se: float
    replications: int
    overflows: int
    seed: int

    @property
    def complete(self) -> bool:
        return self.overflows == 0


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Generator for replication block ``block`` of a run seeded with ``seed``."""
    key = (int(seed) & _SEED_MASK) | (int(block) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def _short_gaps(rng, count, p, beta, s):
    """Sum of ``count`` geometric gaps conditioned on being <= s - 1 (vectorised)."""
    weights = p ** np.arange(s - 1)
    weights /= weights.sum()
    counts = rng.multinomial(count, weights)
    return counts @ np.arange(1, s)


def _neg_binomial(rng, n, q):
    out = np.zeros(n.shape, dtype=np.int64)
    pos = n > 0
    if np.any(pos):
        out[pos] = rng.negative_binomial(n[pos], q)
    return out


def _scan_cluster(rng, left, w, s, log_p, beta):
    """Walk clusters of ``left`` short gaps; return (fired, offset) per cluster.

    ``offset`` is the position of the firing flag relative to the cluster
    start, or the cluster's total length when it never fires.  Gaps are drawn
    ``CHUNK`` at a time; the last ``w - 1`` gaps of a chunk are carried into
    the next so that windows straddling the boundary are still checked.
    """
    m = left.size
    fired = np.zeros(m, dtype=bool)
    offset = np.zeros(m, dtype=np.int64)
    # sentinel gaps of length s never fit in a window
    carry = np.full((m, w - 1), s, dtype=np.int64)
    alive = np.arange(m)
    while alive.size:
        k = int(min(left[alive].max(), CHUNK))
        u = rng.random((alive.size, k))
        gaps = np.ceil(np.log1p(-u * beta) / log_p)
        np.clip(gaps, 1, s - 1, out=gaps)
        in_cluster = np.arange(k)[None, :] < left[alive][:, None]
        gaps = np.where(in_cluster, gaps, 0).astype(np.int64)
        full = np.concatenate([carry[alive], gaps], axis=1)
        csum = np.concatenate(
            [np.zeros((alive.size, 1), dtype=np.int64), np.cumsum(full, axis=1)], axis=1
        )
        window = csum[:, w:] - csum[:, :-w]
        fires = in_cluster & (window <= s - 1)
        hit = fires.any(axis=1)
        first = np.argmax(fires, axis=1)
        new_sum = np.cumsum(gaps, axis=1)
        rows = np.flatnonzero(hit)
        fired[alive[rows]] = True
        offset[alive[rows]] += new_sum[rows, first[rows]]
        rest = ~hit
        offset[alive[rest]] += new_sum[rest, -1]
        left[alive] -= k
        if w > 1:
            carry[alive] = full[:, -(w - 1):]
        alive = alive[rest & (left[alive] > 0)]
    return fired, offset


def sample_run_lengths(rule: RunRule, p_in, size: int, rng: np.random.Generator,
                       cap: int = DEFAULT_MAX_RUN_LENGTH):
    """Draw ``size`` run lengths; returns ``(lengths, overflowed)`` arrays.

    ``lengths[i]`` is meaningful only where ``overflowed[i]`` is False.
    """
    p = float(p_in)
    if not 0.0 < p < 1.0:
        raise ArgumentError(f"p_in must lie in (0, 1), got {p}")
    r, s = rule.r, rule.s
    q = 1.0 - p
    # the first flag's position; its gap from the start never sits in a window
    pos = rng.geometric(q, size).astype(np.int64)
    lengths = np.zeros(size, dtype=np.int64)
    if r == 1:
        return pos, pos > cap

    w = r - 1
    log_p = math.log1p(-q)
    beta = -math.expm1((s - 1) * log_p)        # P(gap <= s - 1)
    # P(gap >= s) closes a cluster; floored so numpy accepts it when it underflows
    end_prob = max(math.exp((s - 1) * log_p), 1e-300)
    live_prob = beta**w                         # cluster holds >= w short gaps
    if live_prob < MIN_LIVE_PROB:
        raise ArgumentError(
            f"rule {rule.label} at p_in={p} is too unlikely to fire to simulate "
            f"(expected run length above {1 / MIN_LIVE_PROB:.0e} points)"
        )
    dead_weights = beta ** np.arange(w)
    dead_weights /= dead_weights.sum()

    todo = np.arange(size)
    while todo.size:
        m = todo.size
        # dead clusters, each followed by one long gap of length s + Geom0(q)
        dead = rng.geometric(live_prob, m).astype(np.int64) - 1
        n_short = rng.multinomial(dead, dead_weights) @ np.arange(w)
        pos[todo] += (
            _short_gaps(rng, n_short, p, beta, s) + dead * s + _neg_binomial(rng, dead, q)
        )
        # live cluster: w + Geom0(beta) short gaps, scanned in chunks
        extra = rng.geometric(end_prob, m).astype(np.int64) - 1
        left = w + np.minimum(extra, _MAX_CLUSTER)
        hit, end = _scan_cluster(rng, left, w, s, log_p, beta)
        done = todo[hit]
        lengths[done] = pos[done] + end[hit]
        # no signal: skip the cluster and the long gap closing it
        miss = ~hit
        rest = todo[miss]
        pos[rest] += end[miss] + s + rng.geometric(q, rest.size) - 1
        over = pos[rest] > cap
        lengths[rest[over]] = pos[rest[over]]
        todo = rest[~over]
    return lengths, lengths > cap


def simulate_run_length(rule: RunRule, p_in, rng: np.random.Generator,
                        cap: int = DEFAULT_MAX_RUN_LENGTH):
    """One run length, or a :class:`RunLengthOverflow` past ``cap`` points."""
    lengths, over = sample_run_lengths(rule, p_in, 1, rng, cap)
    return RunLengthOverflow(cap) if over[0] else int(lengths[0])


def _block(config: SimConfig, block: int):
    start = block * BLOCK_SIZE
    size = min(BLOCK_SIZE, config.replications - start)
    rng = block_generator(config.seed, block)
    return sample_run_lengths(config.rule, config.p_in, size, rng, config.max_run_length)


def mc_moments(config: SimConfig, workers: int = 1) -> MCEstimate:
    """Mean and SD of simulated run lengths with their standard errors.

    The SDRL standard error uses the delta method,
    ``sqrt((m4 - var**2) / N) / (2 sd)``.
    """
    blocks = range(math.ceil(config.replications / BLOCK_SIZE))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _block(config, b), blocks))
    else:
        parts = [_block(config, b) for b in blocks]
    lengths = np.concatenate([part[0] for part in parts])
    over = np.concatenate([part[1] for part in parts])
    x = lengths[~over].astype(float)
    n = x.size
    if n == 0:
        nan = float("nan")
        return MCEstimate(nan, nan, nan, nan, config.replications, int(over.sum()), config.seed)
    mean = float(x.mean())
    if n > 1:
        dev = x - mean
        var = float(dev @ dev) / (n - 1)
        sd = math.sqrt(var)
        m4 = float(np.mean(dev**4))
        sdrl_se = math.sqrt(max(m4 - var * var, 0.0) / n) / (2.0 * sd) if sd > 0 else 0.0
    else:
        sd = sdrl_se = 0.0
    return MCEstimate(
        arl=mean,
        sdrl=sd,
        arl_se=sd / math.sqrt(n),
        sdrl_se=sdrl_se,
        replications=config.replications,
        overflows=int(over.sum()),
        seed=config.seed,
    )
