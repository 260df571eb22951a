import io
import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrmcv.errors import ArgumentError, DegenerateDataError, ParseError, SchemaError
from rrmcv.monitor import (
    PhaseIISubgroup,
    SignalStream,
    gamma_hat,
    ingest,
    plot_csv,
    read_gamma_column,
    report_json,
    run_signal,
    table10_path,
)
from rrmcv.rulechain import RunRule, Side

UPPER_LIMITS = {(1, 1): 0.1691, (2, 3): 0.1296, (3, 4): 0.1106, (4, 5): 0.0986}
LOWER_LIMITS = {(1, 1): 0.010029, (2, 3): 0.02403, (3, 4): 0.03464, (4, 5): 0.04275}


def _gamma_2x2(mean, cov):
    (m1, m2), ((a, b), (_, d)) = mean, cov
    det = a * d - b * b
    return math.sqrt(det / (m1 * m1 * d - 2 * m1 * m2 * b + m2 * m2 * a))


@pytest.fixture(scope="module")
def printed():
    return read_gamma_column(table10_path())


def test_gamma_hat_closed_form_2x2():
    rng = np.random.default_rng(3)
    for _ in range(200):
        mean = rng.normal(5, 2, 2)
        a = rng.normal(size=(2, 2))
        cov = a @ a.T + 0.1 * np.eye(2)
        got = gamma_hat(PhaseIISubgroup.from_summary(mean, cov, n=5))
        assert got == pytest.approx(_gamma_2x2(mean, cov), rel=1e-12)


def test_gamma_hat_univariate_is_cv():
    x = np.array([[9.0], [10.0], [11.5], [10.2]])
    assert gamma_hat(PhaseIISubgroup.from_raw(x)) == pytest.approx(x.std(ddof=1) / x.mean(), rel=1e-13)


def test_raw_and_summary_agree():
    x = np.random.default_rng(5).normal([10, 4, 7], 1.0, size=(8, 3))
    raw = gamma_hat(PhaseIISubgroup.from_raw(x))
    summary = gamma_hat(PhaseIISubgroup.from_summary(x.mean(axis=0), np.cov(x, rowvar=False), n=8))
    assert raw == pytest.approx(summary, rel=1e-12)


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_gamma_hat_scale_invariant(c, seed):
    x = np.random.default_rng(seed).normal([5, 3], 1.0, size=(6, 2))
    base = gamma_hat(PhaseIISubgroup.from_raw(x))
    assert gamma_hat(PhaseIISubgroup.from_raw(c * x)) == pytest.approx(base, rel=1e-9)


def test_gamma_hat_first_table_row():
    sg = ingest(table10_path())[0]
    assert sg.t == 1 and sg.n == 5 and sg.p_dim == 2 and sg.form == "summary"
    assert gamma_hat(sg) == pytest.approx(0.137342, abs=1e-6)
    assert sg.gamma_hat == pytest.approx(0.113710)


def test_gamma_hat_errors():
    with pytest.raises(ArgumentError):
        gamma_hat(PhaseIISubgroup.from_raw(np.ones((2, 2))))
    with pytest.raises(ArgumentError):
        gamma_hat(PhaseIISubgroup.from_summary([1, 1], np.eye(2), n=2))
    with pytest.raises(DegenerateDataError):
        gamma_hat(PhaseIISubgroup.from_summary([1, 1], [[1, 1], [1, 1]]))
    with pytest.raises(DegenerateDataError):
        gamma_hat(PhaseIISubgroup.from_summary([1, 1], [[1, 0.5], [0.4, 1]]))
    with pytest.raises(DegenerateDataError):
        gamma_hat(PhaseIISubgroup.from_summary([0, 0], np.eye(2)))
    with pytest.raises(DegenerateDataError):
        gamma_hat(PhaseIISubgroup.from_raw([[1, 2], [1, 2], [1, 2]]))
    with pytest.raises(ArgumentError):
        PhaseIISubgroup(t=1)
    with pytest.raises(ArgumentError):
        PhaseIISubgroup(t=1, raw=np.ones((3, 2)), mean=[1, 1], cov=np.eye(2))
    with pytest.raises(ArgumentError):
        PhaseIISubgroup.from_summary([1, 1], np.eye(3))


@pytest.mark.parametrize("rs,expected", [((1, 1), None), ((2, 3), 5), ((3, 4), 6), ((4, 5), 4)])
def test_table10_upper_signals(printed, rs, expected):
    rep = run_signal(printed, RunRule(*rs), UPPER_LIMITS[rs], "upper")
    assert rep.signal_at == expected
    assert len(rep.gamma_hats) == 20


def test_table10_two_of_three_flags(printed):
    rep = run_signal(printed, RunRule(2, 3), 0.1296, "upper")
    assert rep.flagged == (4, 5, 6, 17)


@pytest.mark.parametrize("rs", list(LOWER_LIMITS))
def test_table10_lower_charts_silent(printed, rs):
    assert run_signal(printed, RunRule(*rs, "lower"), LOWER_LIMITS[rs], "lower").signal_at is None


def test_stream_matches_batch(printed):
    for rs, limit in UPPER_LIMITS.items():
        stream = SignalStream(RunRule(*rs), limit, "upper")
        hits = [stream.push(v) for v in printed]
        rep = run_signal(printed, RunRule(*rs), limit, "upper")
        first = hits.index(True) + 1 if any(hits) else None
        assert first == rep.signal_at == stream.signal_at


def test_limit_is_strict():
    assert run_signal([1.0, 1.0], RunRule(1, 1), 1.0, "upper").signal_at is None
    assert run_signal([1.0, 1.0], RunRule(1, 1), 1.0, "lower").signal_at is None
    with pytest.raises(ArgumentError):
        SignalStream(RunRule(1, 1), 0.0, "upper")


def _naive_signal(flags, r, s):
    for t in range(1, len(flags) + 1):
        if sum(flags[max(0, t - s):t]) >= r:
            return t
    return None


def test_exhaustive_short_sequences():
    for s in range(1, 6):
        for r in range(1, s + 1):
            rule = RunRule(r, s)
            for bits in itertools.product((0, 1), repeat=10):
                values = [2.0 if b else 0.5 for b in bits]
                assert run_signal(values, rule, 1.0, "upper").signal_at == _naive_signal(bits, r, s)


def test_bernoulli_brute_force():
    rng = np.random.default_rng(2024)
    flags = rng.random((100_000, 15)) < 0.3
    for r, s in ((2, 3), (3, 4), (4, 5)):
        # vectorised oracle: window sums by cumulative sums
        csum = np.concatenate([np.zeros((flags.shape[0], 1), int), np.cumsum(flags, axis=1)], axis=1)
        t = np.arange(1, 16)
        window = csum[:, t] - csum[:, np.maximum(t - s, 0)]
        fires = window >= r
        expect = np.where(fires.any(axis=1), fires.argmax(axis=1) + 1, 0)
        for i in range(0, 100_000, 97):
            got = run_signal(np.where(flags[i], 2.0, 0.5), RunRule(r, s), 1.0, "upper").signal_at
            assert (got or 0) == expect[i]
        # signal times are never earlier than r
        assert expect[expect > 0].min() >= r


@settings(max_examples=100)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=30), st.floats(0.05, 0.9),
       st.sampled_from([(1, 1), (2, 3), (3, 4), (4, 5)]))
def test_lower_upper_duality(values, limit, rs):
    lower = run_signal(values, RunRule(*rs, "lower"), limit, "lower")
    upper = run_signal([1 / v for v in values], RunRule(*rs), 1 / limit, "upper")
    assert lower.flagged == upper.flagged
    assert lower.signal_at == upper.signal_at


@settings(max_examples=100)
@given(st.lists(st.booleans(), min_size=1, max_size=40), st.sampled_from([(2, 3), (3, 4), (4, 5), (2, 6)]))
def test_signal_is_first_window_hit(bits, rs):
    rep = run_signal([2.0 if b else 0.5 for b in bits], RunRule(*rs), 1.0, "upper")
    assert rep.signal_at == _naive_signal(bits, *rs)
    assert rep.flagged == tuple(i + 1 for i, b in enumerate(bits) if b)


def test_ingest_empty_and_blank():
    assert ingest(io.StringIO("")) == []
    assert ingest(io.StringIO("\n\n")) == []
    assert read_gamma_column(io.StringIO("")) == []


def test_ingest_parse_error_line_number():
    text = "t,mean_1,mean_2,cov_11,cov_12,cov_22\n1,1,2,1,0,1\n\n2,1,abc,1,0,1\n"
    with pytest.raises(ParseError) as info:
        ingest(io.StringIO(text))
    assert info.value.line == 4 and "line 4" in str(info.value)
    with pytest.raises(ParseError):
        ingest(io.StringIO("t,mean_1,cov_11\n1,nan,1\n"))


def test_ingest_schema_errors():
    cases = [
        ("t,mean_1,mean_2,cov_11,cov_12,cov_22\n1,1,2,1,0\n", 2),
        ("t,mean_1,mean_3,cov_11,cov_13,cov_33\n1,1,2,1,0,1\n", 1),
        ("t,mean_1,mean_2,cov_11,cov_22\n1,1,2,1,1\n", 1),
        ("t,mean_1,x_1,cov_11\n1,1,2,1\n", 1),
        ("mean_1,cov_11\n1,1\n", 1),
        ("t,t,mean_1,cov_11\n1,1,1,1\n", 1),
        ("t,foo\n1,2\n", 1),
        ("t,obs,x_1\n1,1,2\n2,1,3\n1,2,4\n", 4),
    ]
    for text, line in cases:
        with pytest.raises(SchemaError) as info:
            ingest(io.StringIO(text))
        assert info.value.line == line, text
    with pytest.raises(SchemaError):
        read_gamma_column(io.StringIO("t,g\n1,0.1\n"), "gamma_hat")


def test_ingest_raw_layout():
    text = "t,obs,x_1,x_2\n" + "".join(
        f"{t},{i},{10 + i + t},{5 - i * 0.5 + (i % 2)}\n" for t in (1, 2) for i in range(1, 5)
    )
    groups = ingest(io.StringIO(text))
    assert [g.t for g in groups] == [1, 2] and groups[0].raw.shape == (4, 2)
    assert groups[0].form == "raw" and groups[0].n == 4
    assert gamma_hat(groups[1]) > 0


def test_ingest_multi_digit_covariance_names():
    text = "t,mean_1,mean_2,cov_1_1,cov_1_2,cov_2_2\n1,3,4,1,0,1\n"
    (sg,) = ingest(io.StringIO(text))
    assert gamma_hat(sg) == pytest.approx(0.2)


def test_non_pd_covariance_fails_at_evaluation_not_ingest():
    (sg,) = ingest(io.StringIO("t,mean_1,mean_2,cov_11,cov_12,cov_22\n1,1,1,1,2,1\n"))
    with pytest.raises(DegenerateDataError):
        gamma_hat(sg)


def test_json_and_plot_output(printed, tmp_path):
    rep = run_signal(printed, RunRule(2, 3), 0.1296, "upper")
    one = json.loads(report_json(rep))
    assert one["signal_at"] == 5 and one["rule"] == "2/3" and one["side"] == "upper"
    many = json.loads(report_json([rep, rep]))
    assert len(many) == 2
    lines = plot_csv(rep).splitlines()
    assert lines[0] == "t,gamma_hat,limit,flagged"
    assert len(lines) == 21
    assert lines[5].split(",")[3] == "1" and lines[1].split(",")[3] == "0"
    path = tmp_path / "g.csv"
    path.write_text("gamma_hat\n0.2\n0.05\n")
    assert read_gamma_column(path) == [0.2, 0.05]
