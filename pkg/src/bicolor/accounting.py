"""Communication-cost model: TotalCom = UpCom + alpha * DownCom.

Uplink counts every client's distinct message (sum over clients by
default); the broadcast downlink message is counted once per round.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

SUM_OVER_CLIENTS = "sum_over_clients"
MAX_OVER_CLIENTS = "max_over_clients"


@dataclass(frozen=True)
class CostModel:
    """Downlink weight and counting policy for one experiment."""

    alpha: float = 1.0
    count_index_overhead: bool = True
    uplink_policy: str = SUM_OVER_CLIENTS

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError("alpha must be nonnegative")
        if self.uplink_policy not in (SUM_OVER_CLIENTS, MAX_OVER_CLIENTS):
            raise ContractError(f"unknown uplink policy {self.uplink_policy!r}")


def totalcom(up_bits: float, down_bits: float, model: CostModel) -> float:
    """Weighted total of one round (or of cumulative counters)."""
    return up_bits + model.alpha * down_bits


def round_bits(outcome, n: int, model: CostModel) -> tuple:
    """(uplink, downlink) bits of one round under the model's policies."""
    if not outcome.communicated:
        return 0, 0
    ups = []
    down = 0
    for rec in outcome.messages:
        bits = rec.value_bits + (rec.index_bits if model.count_index_overhead else 0)
        if rec.machine == n:
            down = bits
        else:
            ups.append(bits)
    up = max(ups, default=0) if model.uplink_policy == MAX_OVER_CLIENTS else sum(ups)
    return up, down


@dataclass
class CumulativeBits:
    """Prefix sums of per-record bit counts; all series are nondecreasing."""

    t: np.ndarray
    up: np.ndarray
    down: np.ndarray
    total: np.ndarray


def accumulate(trace, model: CostModel = None) -> CumulativeBits:
    """Cumulative bit series over a trace's records, ordered by t.

    Uses the records' embedded cumulative counters (correct at any record
    cadence); ``model.alpha`` reweights the downlink after the fact.
    """
    if model is None:
        model = CostModel(alpha=trace.alpha)
    t = np.array([r.t for r in trace.records], dtype=np.int64)
    if t.size and np.any(np.diff(t) < 0):
        raise ContractError("trace records are not ordered by t")
    up = np.array([r.upcom_bits for r in trace.records], dtype=np.int64)
    down = np.array([r.downcom_bits for r in trace.records], dtype=np.int64)
    if np.any(np.diff(up) < 0) or np.any(np.diff(down) < 0):
        raise ContractError("cumulative bit counters are not nondecreasing")
    return CumulativeBits(t=t, up=up, down=down, total=up + model.alpha * down)
