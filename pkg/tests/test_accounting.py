"""Cost model: weighted totals, cumulative series, counting policies."""
from __future__ import annotations

import numpy as np
import pytest

from bicolor.accounting import (
    MAX_OVER_CLIENTS,
    CostModel,
    accumulate,
    round_bits,
    totalcom,
)
from bicolor.algorithm import MessageRecord, RoundOutcome
from bicolor.errors import ContractError
from bicolor.metrics import MetricRecord, RunTrace


def _trace_from_rounds(rounds, alpha=1.0):
    trace = RunTrace(fingerprint="", seed=0, alpha=alpha)
    cum_up = cum_down = 0
    for t, (up, down) in enumerate(rounds):
        cum_up += up
        cum_down += down
        trace.records.append(MetricRecord(
            t=t, communicated=up + down > 0, up_bits=up, down_bits=down,
            upcom_bits=cum_up, downcom_bits=cum_down,
            totalcom_bits=cum_up + alpha * cum_down,
            psi=0.0, subopt=0.0, bregman_sum=0.0,
            consensus_client=0.0, consensus_y=0.0,
        ))
    trace.total_up_bits = cum_up
    trace.total_down_bits = cum_down
    return trace


def test_totalcom_alpha_zero_ignores_downlink():
    assert totalcom(100, 40, CostModel(alpha=0.0)) == 100


def test_totalcom_symmetric():
    assert totalcom(100, 40, CostModel(alpha=1.0)) == 140


def test_totalcom_half():
    assert totalcom(0, 64, CostModel(alpha=0.5)) == 32.0


def test_totalcom_linear_in_each_argument():
    model = CostModel(alpha=0.7)
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b, s = rng.integers(0, 1000, 3)
        assert totalcom(a + s, b, model) == pytest.approx(totalcom(a, b, model) + s)
        assert totalcom(a, b + s, model) == pytest.approx(
            totalcom(a, b, model) + 0.7 * s)


def test_accumulate_all_silent():
    trace = _trace_from_rounds([(0, 0)] * 5)
    series = accumulate(trace)
    assert np.all(series.up == 0) and np.all(series.total == 0)


def test_accumulate_two_rounds():
    trace = _trace_from_rounds([(100, 40), (100, 40)])
    series = accumulate(trace)
    assert list(series.total) == [140, 280]


def test_accumulate_monotone_on_random_traces():
    rng = np.random.default_rng(4)
    for trial in range(20):
        rounds = [(int(u), int(v)) for u, v in rng.integers(0, 500, (30, 2))]
        trace = _trace_from_rounds(rounds, alpha=float(rng.random()))
        series = accumulate(trace)
        assert np.all(np.diff(series.up) >= 0)
        assert np.all(np.diff(series.down) >= 0)
        assert np.all(np.diff(series.total) >= 0)


def test_accumulate_alpha_zero_equals_uplink():
    trace = _trace_from_rounds([(10, 7), (3, 9), (0, 5)])
    series = accumulate(trace, CostModel(alpha=0.0))
    assert np.array_equal(series.total, series.up)


def test_round_bits_policies():
    outcome = RoundOutcome(
        communicated=True,
        omega_set=np.array([0, 1]),
        uplink_bits=0,
        downlink_bits=0,
        messages=[
            MessageRecord(machine=2, support_size=2, value_bits=18, index_bits=6),
            MessageRecord(machine=0, support_size=2, value_bits=18, index_bits=6),
            MessageRecord(machine=1, support_size=1, value_bits=9, index_bits=3),
        ],
    )
    n = 2
    up, down = round_bits(outcome, n, CostModel())
    assert (up, down) == (24 + 12, 24)
    up, down = round_bits(outcome, n, CostModel(count_index_overhead=False))
    assert (up, down) == (18 + 9, 18)
    up, down = round_bits(outcome, n, CostModel(uplink_policy=MAX_OVER_CLIENTS))
    assert (up, down) == (24, 24)
    silent = RoundOutcome(False, None, 0, 0)
    assert round_bits(silent, n, CostModel()) == (0, 0)


def test_cost_model_validation():
    with pytest.raises(ContractError):
        CostModel(alpha=-0.1)
    with pytest.raises(ContractError):
        CostModel(uplink_policy="median")
