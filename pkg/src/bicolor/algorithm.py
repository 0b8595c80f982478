"""Local training with bidirectional compression over a simulated star network.

One iteration: every machine (n clients and the server) takes a gradient
step on its own loss corrected by its dual variable, and an identical step
on the shared variable y. A shared coin decides whether the round
communicates; if it does, a shared random k-subset of coordinates is
drawn, every client uploads a compressed restricted difference against y,
and the server broadcasts its own compressed difference, produced with
randomness independent of the uplink. Uplink information only ever moves
the server's variables and downlink information only the clients' and y,
which keeps the two compression errors additive instead of multiplied.

Dual variables u_i, u_s, u_y learn the component gradients at the
solution; their weighted sum (1/n) sum_i u_i + 2 u_s + u_y is zero at
initialization and preserved by every update.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .compressors import (
    CompressorSpec,
    encoded_bits,
    index_bit_width,
    _raw_compress,
    _sample_subset,
)
from .errors import ContractError, InvariantError
from .metrics import (
    MetricRecord,
    ReferenceSolution,
    RunTrace,
    bregman_sum,
    consensus_gaps,
    lyapunov,
    solve_reference,
)
from .problems import ProblemInstance


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PSchedule:
    """Communication probability sequence p_t, constant or decreasing.

    The decreasing schedule is p_t = sqrt(b / (a + t)); with a >= b - 1 it
    stays in (0, 1] for every t >= 1, and its partial sums grow like
    sqrt(t), which is what makes the expected round count scale as the
    square root of the iteration count.
    """

    kind: str
    p: float = 1.0
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind == "constant":
            if not 0.0 < self.p <= 1.0:
                raise ContractError(f"constant p must lie in (0, 1], got {self.p}")
        elif self.kind == "decreasing":
            if self.b <= 0 or self.a < self.b - 1.0:
                raise ContractError("decreasing schedule needs b > 0 and a >= b - 1")
        else:
            raise ContractError(f"unknown schedule kind {self.kind!r}")

    def probability(self, t: int) -> float:
        """p_t for t >= 1."""
        if self.kind == "constant":
            return self.p
        return math.sqrt(self.b / (self.a + t))

    def validate_for_eta(self, eta: float):
        """The sublinear-rate guarantee needs b >= 1/eta (decreasing only)."""
        if self.kind == "decreasing" and self.b < 1.0 / eta - 1e-12:
            raise ContractError(f"decreasing schedule needs b >= 1/eta = {1.0 / eta:.6g}")

    @staticmethod
    def constant(p: float) -> "PSchedule":
        return PSchedule("constant", p=p)

    @staticmethod
    def decreasing(a: float, b: float) -> "PSchedule":
        return PSchedule("decreasing", a=a, b=b)

    @staticmethod
    def decreasing_for_eta(eta: float) -> "PSchedule":
        """Smallest admissible decreasing schedule: b = ceil(1/eta), a = b - 1."""
        b = float(math.ceil(1.0 / eta))
        return PSchedule("decreasing", a=b - 1.0, b=b)


class StepSizes(NamedTuple):
    rho: float
    rho_y: float
    eta: float
    eta_y: float


def default_params(omega: float, omega_av: float, omega_s: float,
                   eta_scale: float = 1.0) -> StepSizes:
    """Consensus and dual stepsizes guaranteeing contraction.

    rho = rho_y = 1 / (2 + omega_av + 2 omega_s) and
    eta = eta_y = 1 / ((1 + 2 omega + 2 omega_s)(2 + omega_av + 2 omega_s)).
    ``eta_scale`` in (0, 1) gives the strict-inequality variant used with
    decreasing schedules in the general convex case.
    """
    if min(omega, omega_av, omega_s) < 0:
        raise ContractError("variance factors must be nonnegative")
    if not 0.0 < eta_scale <= 1.0:
        raise ContractError("eta_scale must lie in (0, 1]")
    rho = 1.0 / (2.0 + omega_av + 2.0 * omega_s)
    eta = eta_scale / ((1.0 + 2.0 * omega + 2.0 * omega_s) * (2.0 + omega_av + 2.0 * omega_s))
    return StepSizes(rho, rho, eta, eta)


class CorollaryParams(NamedTuple):
    K_s: int
    K: int
    k: int
    p: float


def corollary_params(alpha: float, d: int, n: int, kappa: float, eta: float,
                     strategy: str) -> CorollaryParams:
    """Compression sizes and communication probability for sqrt(kappa) cost.

    ``rand_K``: keep k = d and compress with independent rand-K uplink and
    rand-K_s downlink, K_s = ceil(d / sqrt(kappa)),
    K = ceil(max(alpha, 1/n) d / sqrt(kappa)), p = min(1/sqrt(eta kappa), 1).

    ``subset_k``: sparsify through the shared subset instead,
    k = ceil(d / sqrt(kappa)), p = min(d / (k sqrt(eta kappa)), 1); the
    rand-K sizes come back as d (compressors stay plain quantizers).
    """
    if kappa <= 1:
        raise ContractError("kappa must exceed 1")
    if not 0.0 < alpha <= 1.0:
        raise ContractError("alpha must lie in (0, 1]")
    root = math.sqrt(kappa)
    K_s = max(int(math.ceil(d / root)), 1)
    K = max(int(math.ceil(max(alpha, 1.0 / n) * d / root)), 1)
    if strategy == "rand_K":
        return CorollaryParams(K_s=K_s, K=K, k=d, p=min(1.0 / math.sqrt(eta * kappa), 1.0))
    if strategy == "subset_k":
        k = max(int(math.ceil(d / root)), 1)
        return CorollaryParams(K_s=d, K=d, k=k, p=min(d / (k * math.sqrt(eta * kappa)), 1.0))
    raise ContractError(f"unknown strategy {strategy!r}")


@dataclass
class AlgoConfig:
    """All iteration hyperparameters plus the compressor declarations."""

    gamma: float
    rho: float
    rho_y: float
    eta: float
    eta_y: float
    k: int
    p_schedule: PSchedule
    uplink_specs: list
    downlink_spec: CompressorSpec
    omega_av: float
    check_invariants: bool = True
    invariant_tol: float = 1e-9

    def __post_init__(self):
        if self.gamma <= 0:
            raise ContractError("gamma must be positive")
        if min(self.rho, self.rho_y, self.eta, self.eta_y) <= 0:
            raise ContractError("stepsizes must be positive")
        d = self.downlink_spec.dimension
        if not 1 <= self.k <= d:
            raise ContractError(f"k must lie in [1, {d}]")
        if any(s.dimension != d for s in self.uplink_specs):
            raise ContractError("uplink and downlink dimensions differ")
        if self.omega_av < 0:
            raise ContractError("omega_av must be nonnegative")


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass
class AlgoState:
    """Full iterate set; arrays are treated as immutable between steps.

    Replicas of y and u_y are held per machine (rows 0..n-1 clients, row n
    server); they stay bitwise identical because every machine performs the
    same arithmetic on the same broadcast message.
    """

    x_clients: np.ndarray    # (n, d)
    x_server: np.ndarray     # (d,)
    y_copies: np.ndarray     # (n+1, d)
    u_clients: np.ndarray    # (n, d)
    u_server: np.ndarray     # (d,)
    u_y_copies: np.ndarray   # (n+1, d)
    t: int = 0

    @property
    def y(self) -> np.ndarray:
        return self.y_copies[0]

    @property
    def u_y(self) -> np.ndarray:
        return self.u_y_copies[0]

    def dual_sum_residual(self) -> float:
        """Max-norm of (1/n) sum_i u_i + 2 u_s + u_y (zero up to rounding)."""
        s = self.u_clients.mean(axis=0) + 2.0 * self.u_server + self.u_y_copies[0]
        return float(np.max(np.abs(s))) if s.size else 0.0

    def average_x(self) -> np.ndarray:
        """Average of the machine iterates (clients and server)."""
        n = self.x_clients.shape[0]
        return (self.x_clients.sum(axis=0) + self.x_server) / (n + 1)


def init_state(problem: ProblemInstance, mode: str = "zeros",
               x0: Optional[np.ndarray] = None) -> AlgoState:
    """Initial iterates; both modes satisfy the dual-sum constraint exactly.

    ``zeros`` sets everything to zero. ``warm`` starts all iterates at x0
    with u_i = grad f_i(x0), u_y = grad g(x0) and u_s solving the
    constraint.
    """
    n, d = problem.n, problem.dimension
    if mode == "zeros":
        return AlgoState(
            x_clients=np.zeros((n, d)),
            x_server=np.zeros(d),
            y_copies=np.zeros((n + 1, d)),
            u_clients=np.zeros((n, d)),
            u_server=np.zeros(d),
            u_y_copies=np.zeros((n + 1, d)),
        )
    if mode != "warm":
        raise ContractError(f"unknown init mode {mode!r}")
    if x0 is None:
        raise ContractError("warm init needs x0")
    x0 = np.asarray(x0, dtype=np.float64)
    u_clients = np.stack([f.grad(x0) for f in problem.client_losses])
    u_y = problem.shared_loss.grad(x0)
    u_server = -0.5 * u_clients.mean(axis=0) - 0.5 * u_y
    return AlgoState(
        x_clients=np.tile(x0, (n, 1)),
        x_server=x0.copy(),
        y_copies=np.tile(x0, (n + 1, 1)),
        u_clients=u_clients,
        u_server=u_server,
        u_y_copies=np.tile(u_y, (n + 1, 1)),
    )


@dataclass
class MachineStreams:
    """Randomness layout of one simulated run.

    The shared stream drives the coin and the coordinate subset (every
    machine sees the same draws, as with a shared pseudo-random generator);
    each client compresses from its own stream and the server from a
    stream independent of all of them.
    """

    shared: np.random.Generator
    uplink: list
    downlink: np.random.Generator

    @staticmethod
    def from_seed(seed: int, n: int) -> "MachineStreams":
        children = np.random.SeedSequence(seed).spawn(n + 2)
        return MachineStreams(
            shared=np.random.default_rng(children[0]),
            uplink=[np.random.default_rng(c) for c in children[1:n + 1]],
            downlink=np.random.default_rng(children[n + 1]),
        )


@dataclass(frozen=True)
class MessageRecord:
    """Bit breakdown of one transmitted message (machine n is the server)."""

    machine: int
    support_size: int
    value_bits: int
    index_bits: int

    @property
    def total_bits(self) -> int:
        return self.value_bits + self.index_bits


@dataclass
class RoundOutcome:
    """What one iteration exchanged: nothing, or one message per machine."""

    communicated: bool
    omega_set: Optional[np.ndarray]
    uplink_bits: int
    downlink_bits: int
    messages: list = field(default_factory=list)


def _message_record(machine: int, support: int, spec: CompressorSpec,
                    d: int) -> MessageRecord:
    idx_bits = support * index_bit_width(d) if support < d else 0
    return MessageRecord(
        machine=machine,
        support_size=support,
        value_bits=support * spec.value_bits,
        index_bits=idx_bits,
    )


def _transmit(spec, diff, omega_set, rng, d):
    """Compress a difference on the shared subset; returns (dense, support, bits).

    Same mechanics as :func:`bicolor.compressors.compress_restricted`, with
    the already-validated subset trusted (it came from the shared stream).
    """
    indices, values = _raw_compress(spec, diff, omega_set, rng)
    dense = np.zeros(d)
    dense[indices] = values
    return dense, indices.size, encoded_bits(spec, indices.size, d)


# ---------------------------------------------------------------------------
# one iteration
# ---------------------------------------------------------------------------


def step(state: AlgoState, problem: ProblemInstance, config: AlgoConfig,
         streams: MachineStreams) -> tuple:
    """Advance the network by one iteration.

    Every machine first forms its hatted point by a dual-corrected local
    gradient step. With probability p_{t+1} the round communicates on a
    shared k-subset of coordinates: clients upload compressed restricted
    differences against y, the server broadcasts its own, and the
    consensus/dual updates below are applied; otherwise all variables
    simply take their hatted values.
    """
    n, d = problem.n, problem.dimension
    if len(config.uplink_specs) != n:
        raise ContractError(f"config declares {len(config.uplink_specs)} uplinks for {n} clients")
    if state.x_clients.shape != (n, d):
        raise ContractError("state/problem dimension mismatch")
    gamma = config.gamma

    x_hat = np.empty_like(state.x_clients)
    for i, loss in enumerate(problem.client_losses):
        x_hat[i] = state.x_clients[i] - gamma * loss.grad(state.x_clients[i]) \
            + gamma * state.u_clients[i]
    xs_hat = state.x_server - gamma * problem.server_loss.grad(state.x_server) \
        + gamma * state.u_server
    y_hat = np.empty_like(state.y_copies)
    for m in range(n + 1):
        y_hat[m] = state.y_copies[m] - gamma * problem.shared_loss.grad(state.y_copies[m]) \
            + gamma * state.u_y_copies[m]

    p_next = config.p_schedule.probability(state.t + 1)
    communicated = bool(streams.shared.random() < p_next)

    if not communicated:
        new_state = AlgoState(x_hat, xs_hat, y_hat, state.u_clients, state.u_server,
                              state.u_y_copies, state.t + 1)
        outcome = RoundOutcome(False, None, 0, 0)
    else:
        k = config.k
        omega_set = _sample_subset(streams.shared, d, k)
        scale_u = p_next * k * config.eta / (d * gamma)
        scale_uy = p_next * k * config.eta_y / (d * gamma)
        scale_us = p_next * k * (config.eta + config.eta_y) / (2.0 * d * gamma)

        c_s, cs_support, down_bits = _transmit(config.downlink_spec, xs_hat - y_hat[n],
                                               omega_set, streams.downlink, d)
        cs_sub = c_s[omega_set]

        records = [_message_record(n, cs_support, config.downlink_spec, d)]
        uplink_bits = 0
        x_new = x_hat  # freshly allocated above; masked writes below
        u_clients_new = state.u_clients.copy()
        cbar = np.zeros(d)
        for i in range(n):
            c_i, support, bits = _transmit(config.uplink_specs[i], x_hat[i] - y_hat[i],
                                           omega_set, streams.uplink[i], d)
            cbar += c_i
            uplink_bits += bits
            records.append(_message_record(i, support, config.uplink_specs[i], d))
            x_new[i, omega_set] = (1.0 - config.rho) * x_hat[i, omega_set] \
                + config.rho * (cs_sub + y_hat[i, omega_set])
            u_clients_new[i] -= scale_u * (c_i - c_s)
        cbar /= n

        mix = 0.5 * (config.rho + config.rho_y)
        xs_new = xs_hat
        xs_new[omega_set] = (1.0 - mix) * xs_hat[omega_set] + mix * y_hat[n, omega_set] \
            + 0.5 * config.rho * cbar[omega_set]
        y_new = y_hat + config.rho_y * c_s
        u_server_new = state.u_server + 0.5 * scale_u * cbar - scale_us * c_s
        u_y_new = state.u_y_copies + scale_uy * c_s

        new_state = AlgoState(x_new, xs_new, y_new, u_clients_new, u_server_new,
                              u_y_new, state.t + 1)
        outcome = RoundOutcome(True, omega_set, uplink_bits, down_bits, records)

    if config.check_invariants:
        _check_invariants(new_state, config.invariant_tol)
    return new_state, outcome


def _check_invariants(state: AlgoState, tol: float):
    scale = 1.0 + max(
        float(np.max(np.abs(state.u_clients))) if state.u_clients.size else 0.0,
        float(np.max(np.abs(state.u_server))) if state.u_server.size else 0.0,
        float(np.max(np.abs(state.u_y_copies))) if state.u_y_copies.size else 0.0,
    )
    residual = state.dual_sum_residual()
    if residual > tol * scale:
        raise InvariantError(
            f"dual-sum constraint violated at t={state.t}: residual {residual:.3e}", residual
        )
    if np.any(state.y_copies[1:] != state.y_copies[0]) or \
            np.any(state.u_y_copies[1:] != state.u_y_copies[0]):
        raise InvariantError(f"shared-variable replicas diverged at t={state.t}", math.inf)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


@dataclass
class StoppingRule:
    """First of: iteration cap, relative metric target, bit budget.

    ``target`` is compared against the metric normalized by its value at
    t = 0, so e.g. metric="psi", target=1e-6 stops once psi drops below
    1e-6 times its initial value.
    """

    max_iters: int
    target: Optional[float] = None
    metric: str = "rel_dist"
    bit_budget: Optional[float] = None

    def __post_init__(self):
        if self.metric not in ("rel_dist", "psi", "subopt", "bregman"):
            raise ContractError(f"unknown stopping metric {self.metric!r}")


def run(
    problem: ProblemInstance,
    config: AlgoConfig,
    streams,
    stop: StoppingRule,
    ref: Optional[ReferenceSolution] = None,
    alpha: float = 1.0,
    record_every: int = 1,
    fingerprint: str = "",
    seed: int = -1,
    init_mode: str = "zeros",
    x0: Optional[np.ndarray] = None,
) -> RunTrace:
    """Iterate :func:`step` until the stopping rule fires, recording metrics.

    ``streams`` is a MachineStreams bundle or an integer seed. With
    ``record_every`` = 0 no metric records are produced (bit and round
    counters are still maintained), and no reference solve is needed.
    """
    if isinstance(streams, (int, np.integer)):
        seed = int(streams)
        streams = MachineStreams.from_seed(seed, problem.n)
    state = init_state(problem, mode=init_mode, x0=x0)
    need_metrics = record_every > 0 or stop.target is not None
    if need_metrics and ref is None:
        ref = solve_reference(problem)

    trace = RunTrace(fingerprint=fingerprint, seed=seed, alpha=alpha)
    start = time.perf_counter()

    baselines = {}

    def metric_value(record: MetricRecord) -> float:
        key = stop.metric
        raw = {
            "rel_dist": record_rel_dist(state),
            "psi": record.psi,
            "subopt": record.subopt,
            "bregman": record.bregman_sum,
        }[key]
        base = baselines.get(key)
        if base is None:
            baselines[key] = raw if raw > 0 else 1.0
            return 1.0
        return raw / base

    def record_rel_dist(st: AlgoState) -> float:
        gap = st.average_x() - ref.x_star
        return float(gap @ gap)

    def make_record(st: AlgoState, communicated: bool, up: int, down: int) -> MetricRecord:
        p_now = config.p_schedule.probability(max(st.t, 1))
        psi = lyapunov(st, ref, config.gamma, p_now, config.k, problem.dimension, config.eta)
        xbar = st.average_x()
        subopt = problem.full_value(xbar) - ref.f_star
        breg = bregman_sum(st, problem, ref)
        cons_c, cons_y = consensus_gaps(st, config.gamma)
        return MetricRecord(
            t=st.t,
            communicated=communicated,
            up_bits=up,
            down_bits=down,
            upcom_bits=trace.total_up_bits,
            downcom_bits=trace.total_down_bits,
            totalcom_bits=trace.total_up_bits + alpha * trace.total_down_bits,
            psi=psi,
            subopt=subopt,
            bregman_sum=breg,
            consensus_client=cons_c,
            consensus_y=cons_y,
        )

    status = "max_iters"
    if need_metrics:
        rec = make_record(state, False, 0, 0)
        trace.records.append(rec)
        metric_value(rec)  # capture the t = 0 baseline
        if stop.target is not None and stop.target >= 1.0:
            status = "target"
            stop = StoppingRule(max_iters=0, metric=stop.metric)

    for t in range(stop.max_iters):
        state, outcome = step(state, problem, config, streams)
        trace.iterations = state.t
        trace.total_rounds += int(outcome.communicated)
        trace.total_up_bits += outcome.uplink_bits
        trace.total_down_bits += outcome.downlink_bits

        at_cadence = record_every > 0 and (state.t % record_every == 0 or t == stop.max_iters - 1)
        if at_cadence:
            rec = make_record(state, outcome.communicated, outcome.uplink_bits,
                              outcome.downlink_bits)
            trace.records.append(rec)
            if stop.target is not None and metric_value(rec) <= stop.target:
                status = "target"
                break
        if stop.bit_budget is not None and \
                trace.total_up_bits + alpha * trace.total_down_bits >= stop.bit_budget:
            status = "bit_budget"
            if record_every > 0 and not at_cadence:
                trace.records.append(make_record(state, outcome.communicated,
                                                 outcome.uplink_bits, outcome.downlink_bits))
            break

    trace.iterations = state.t
    trace.wall_clock = time.perf_counter() - start
    trace.status = status
    if trace.records:
        trace.final_metric = metric_value(trace.records[-1])
    return trace
