"""Reproducible experiment driver.

Builds problem/config pairs from a declarative experiment description,
runs multi-seed experiments, tunes the primal stepsize over a grid, and
emits CSV tables and SVG accuracy-vs-TotalCom plots. Identical config and
seed give bitwise-identical CSV output.
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .algorithm import (
    AlgoConfig,
    CorollaryParams,
    MachineStreams,
    PSchedule,
    StoppingRule,
    corollary_params,
    default_params,
    run,
)
from .compressors import CompressorSpec, omega_av
from .errors import ContractError, SweepError
from .metrics import ReferenceSolution, solve_reference
from .problems import (
    ProblemInstance,
    QuadraticLoss,
    SparseDataset,
    estimate_L,
    load_libsvm,
    logistic_problem,
    partition,
    quadratic_reg,
    scale_mu_for_kappa,
)

STRATEGY_SUBSET_K = "subset_k_natural"    # shared k-subset + independent 9-bit quantizers
STRATEGY_RAND_K = "rand_K_natural"        # k = d, composed rand-K + 9-bit quantizer
STRATEGY_CUSTOM = "custom"

CSV_HEADER = (
    "t,communicated,up_bits,down_bits,total_bits_cum,psi,subopt,"
    "bregman_sum,consensus_client,consensus_y,seed"
)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    n: int
    dataset: Optional[str] = None
    synthetic: Optional[dict] = None          # {"kind": "quadratic"|"logistic", ...}
    dimension_override: Optional[int] = None
    kappa_target: Optional[float] = None
    mu: Optional[float] = None
    fold_mu_into_clients: bool = False
    alpha: float = 1.0
    strategy: str = STRATEGY_SUBSET_K
    k: Optional[int] = None                   # subset size override
    rand_k_size: Optional[int] = None         # uplink rand-K override (custom strategy)
    schedule: str = "constant"                # "constant" | "decreasing"
    p_constant: Optional[float] = None
    schedule_a: Optional[float] = None
    schedule_b: Optional[float] = None
    eta_scale: float = 1.0                    # < 1 for the general convex variant
    omega_av_override: Optional[float] = None
    gamma: Optional[float] = None
    gamma_grid: Optional[list] = None
    seeds: list = field(default_factory=lambda: [0])
    max_iters: int = 1000
    target_accuracy: Optional[float] = None
    stop_metric: str = "rel_dist"
    bit_budget: Optional[float] = None
    record_every: int = 1
    data_seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if not self.seeds:
            raise ContractError("seeds must be nonempty")
        if self.gamma_grid is not None and any(g <= 0 for g in self.gamma_grid):
            raise ContractError("gamma grid values must be positive")
        if self.dataset is None and self.synthetic is None:
            raise ContractError("need a dataset path or a synthetic spec")

    def fingerprint(self) -> str:
        """Stable content hash; invariant under re-serialization."""
        payload = json.dumps(asdict(self), sort_keys=True, default=float)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        known = set(ExperimentConfig.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return ExperimentConfig(**raw)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return ExperimentConfig.from_dict(tomllib.load(fh))


# ---------------------------------------------------------------------------
# synthetic instances
# ---------------------------------------------------------------------------


def synthetic_quadratic_problem(n: int, d: int, kappa: float, seed: int = 0):
    """Diagonal quadratics with exact global constants and known minimizer.

    f_i(x) = 0.5 x^T diag(a_i) x - b_i^T x with spectra inside [mu, L],
    L = 1 attained, and f_s = g = (mu/2)||x||^2. Returns (problem, x_star).
    """
    if kappa <= 1:
        raise ContractError("kappa must exceed 1")
    rng = np.random.default_rng(seed)
    L = 1.0
    mu = L / kappa
    diags = mu + (L - mu) * rng.random((n, d))
    diags[0, 0] = L  # pin the smoothness constant
    linear = rng.standard_normal((n, d))
    losses = [QuadraticLoss(diags[i], linear[i]) for i in range(n)]
    reg = quadratic_reg(mu)
    problem = ProblemInstance(
        client_losses=losses,
        server_loss=reg,
        shared_loss=reg,
        dimension=d,
        L=L,
        mu=mu,
    )
    # grad F = (mean(a) + 3 mu) x - mean(b) coordinatewise
    x_star = linear.mean(axis=0) / (diags.mean(axis=0) + 3.0 * mu)
    return problem, x_star


def synthetic_logistic_dataset(rows: int, d: int, seed: int = 0,
                               label_noise: float = 0.1, scale: float = 1.0) -> SparseDataset:
    """Dense rows with labels from a planted separator plus label noise.

    The noise makes the data non-separable, so the unregularized logistic
    objective has a finite minimizer.
    """
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((rows, d)) * (scale / math.sqrt(d))
    planted = rng.standard_normal(d)
    labels = np.sign(features @ planted + 1e-12)
    flips = rng.random(rows) < label_noise
    labels[flips] *= -1.0
    return SparseDataset(
        labels=labels,
        feature_indices=[np.arange(d, dtype=np.int64)] * rows,
        feature_values=[features[r] for r in range(rows)],
        dimension=d,
    )


# ---------------------------------------------------------------------------
# experiment construction
# ---------------------------------------------------------------------------


@dataclass
class BuiltExperiment:
    problem: ProblemInstance
    config: AlgoConfig
    params: CorollaryParams
    x_star_hint: Optional[np.ndarray] = None


def _quadratic_from_spec(cfg: ExperimentConfig):
    spec = cfg.synthetic
    problem, x_star = synthetic_quadratic_problem(
        n=cfg.n, d=int(spec["d"]), kappa=float(spec["kappa"]), seed=cfg.data_seed
    )
    return problem, x_star


def _logistic_from_config(cfg: ExperimentConfig):
    if cfg.dataset is not None:
        data = load_libsvm(cfg.dataset, dimension=cfg.dimension_override)
    else:
        spec = cfg.synthetic
        data = synthetic_logistic_dataset(
            rows=int(spec["rows"]),
            d=int(spec["d"]),
            seed=cfg.data_seed,
            label_noise=float(spec.get("label_noise", 0.1)),
            scale=float(spec.get("scale", 1.0)),
        )
    shards = partition(data, cfg.n, np.random.default_rng(cfg.data_seed))
    L_data = max(estimate_L(s, 0.0) for s in shards)
    if cfg.kappa_target is not None:
        mu = scale_mu_for_kappa(L_data, cfg.kappa_target)
    else:
        mu = cfg.mu if cfg.mu is not None else 0.0
    problem = logistic_problem(shards, mu, fold_mu_into_clients=cfg.fold_mu_into_clients)
    return problem, None


def build_experiment(cfg: ExperimentConfig) -> BuiltExperiment:
    """Materialize the problem and the full algorithm configuration.

    Partitions (or generates) the data, estimates smoothness, sets the
    regularizer from the target condition number, builds the compressor
    specs for the chosen strategy, and derives stepsizes, subset size and
    communication probability from their closed-form defaults.
    """
    if cfg.synthetic is not None and cfg.synthetic.get("kind") == "quadratic":
        problem, x_star = _quadratic_from_spec(cfg)
    else:
        problem, x_star = _logistic_from_config(cfg)
    n, d = problem.n, problem.dimension

    if cfg.strategy == STRATEGY_SUBSET_K:
        uplink = [CompressorSpec.natural(d) for _ in range(n)]
        downlink = CompressorSpec.natural(d)
        corollary_strategy = "subset_k"
    elif cfg.strategy == STRATEGY_RAND_K:
        if problem.kappa is not None:
            sizes = corollary_params(cfg.alpha, d, n, problem.kappa, eta=1.0,
                                     strategy="rand_K")
            K, K_s = sizes.K, sizes.K_s
        else:
            K = K_s = cfg.rand_k_size or max(d // 10, 1)
        uplink = [
            CompressorSpec.composed(CompressorSpec.natural(d), CompressorSpec.rand_k(d, K))
            for _ in range(n)
        ]
        downlink = CompressorSpec.composed(
            CompressorSpec.natural(d), CompressorSpec.rand_k(d, K_s)
        )
        corollary_strategy = "rand_K"
    elif cfg.strategy == STRATEGY_CUSTOM:
        if cfg.rand_k_size is not None:
            uplink = [CompressorSpec.rand_k(d, cfg.rand_k_size) for _ in range(n)]
            downlink = CompressorSpec.rand_k(d, cfg.rand_k_size)
        else:
            uplink = [CompressorSpec.identity(d) for _ in range(n)]
            downlink = CompressorSpec.identity(d)
        corollary_strategy = "subset_k"
    else:
        raise ContractError(f"unknown strategy {cfg.strategy!r}")

    w = uplink[0].omega
    w_av = cfg.omega_av_override if cfg.omega_av_override is not None else omega_av(uplink)
    w_s = downlink.omega
    eta_scale = cfg.eta_scale if cfg.schedule == "constant" else min(cfg.eta_scale, 0.99)
    sizes = default_params(w, w_av, w_s, eta_scale=eta_scale)

    if problem.kappa is not None:
        params = corollary_params(cfg.alpha, d, n, problem.kappa, sizes.eta,
                                  strategy=corollary_strategy)
    else:
        params = CorollaryParams(K_s=d, K=d, k=d, p=1.0)
    k = cfg.k if cfg.k is not None else params.k

    if cfg.schedule == "decreasing":
        if cfg.schedule_a is not None and cfg.schedule_b is not None:
            schedule = PSchedule.decreasing(cfg.schedule_a, cfg.schedule_b)
        else:
            schedule = PSchedule.decreasing_for_eta(sizes.eta)
        schedule.validate_for_eta(sizes.eta)
    else:
        p = cfg.p_constant if cfg.p_constant is not None else params.p
        schedule = PSchedule.constant(p)

    gamma = cfg.gamma if cfg.gamma is not None else 1.0 / problem.L
    if gamma >= 2.0 / problem.L and problem.mu > 0:
        raise ContractError(f"gamma {gamma} is not below 2/L = {2.0 / problem.L}")

    algo = AlgoConfig(
        gamma=gamma,
        rho=sizes.rho,
        rho_y=sizes.rho_y,
        eta=sizes.eta,
        eta_y=sizes.eta_y,
        k=k,
        p_schedule=schedule,
        uplink_specs=uplink,
        downlink_spec=downlink,
        omega_av=w_av,
    )
    return BuiltExperiment(problem=problem, config=algo,
                           params=CorollaryParams(params.K_s, params.K, k, schedule.probability(1)),
                           x_star_hint=x_star)


def matched_constant_p(schedule: PSchedule, total_iters: int) -> float:
    """Constant probability doing the same expected local work over a horizon:
    the average of p_1..p_T of the decreasing schedule."""
    return sum(schedule.probability(t) for t in range(1, total_iters + 1)) / total_iters


# ---------------------------------------------------------------------------
# running and tuning
# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, gamma: Optional[float] = None,
                   ref: Optional[ReferenceSolution] = None) -> list:
    """One trace per seed, all on the same built problem and reference."""
    built = build_experiment(cfg)
    if gamma is not None:
        built.config.gamma = gamma
    stop = StoppingRule(
        max_iters=cfg.max_iters,
        target=cfg.target_accuracy,
        metric=cfg.stop_metric,
        bit_budget=cfg.bit_budget,
    )
    if ref is None and (cfg.record_every > 0 or cfg.target_accuracy is not None):
        ref = solve_reference(built.problem)
    fp = cfg.fingerprint()
    traces = []
    for seed in cfg.seeds:
        traces.append(
            run(
                built.problem,
                built.config,
                MachineStreams.from_seed(seed, built.problem.n),
                stop,
                ref=ref,
                alpha=cfg.alpha,
                record_every=cfg.record_every,
                fingerprint=fp,
                seed=seed,
            )
        )
    return traces


@dataclass
class SweepResult:
    best_gamma: float
    final_metric: dict       # gamma -> mean final stopping metric (short budget)
    diverged: dict           # gamma -> evidence string
    traces: list             # full-budget traces at the winner


def sweep_gamma(cfg: ExperimentConfig, short_fraction: float = 0.2) -> SweepResult:
    """Tune gamma on a short budget and re-run the winner on the full budget.

    Candidates whose metric exceeds 1e3 times its initial value (or goes
    non-finite) count as diverged; if every candidate diverges, raises
    SweepError listing the evidence. Deterministic for fixed seeds.
    """
    if cfg.record_every < 1:
        raise ContractError("sweep_gamma needs record_every >= 1 to score candidates")
    built = build_experiment(cfg)
    grid = cfg.gamma_grid if cfg.gamma_grid else [built.config.gamma]
    ref = solve_reference(built.problem)
    short_iters = max(int(cfg.max_iters * short_fraction), 1)
    stop = StoppingRule(max_iters=short_iters, metric=cfg.stop_metric)

    final_metric = {}
    diverged = {}
    for g in grid:
        scores = []
        blew_up = None
        for seed in cfg.seeds:
            trial_config = replace(built.config, gamma=g, check_invariants=False)
            trace = run(built.problem, trial_config,
                        MachineStreams.from_seed(seed, built.problem.n),
                        stop, ref=ref, alpha=cfg.alpha, record_every=cfg.record_every,
                        seed=seed)
            # final_metric is normalized to 1 at t = 0
            last = trace.final_metric
            if not math.isfinite(last) or last > 1e3:
                blew_up = f"gamma={g:g}: relative {cfg.stop_metric} reached {last:.3e}"
                break
            scores.append(last)
        if blew_up:
            diverged[g] = blew_up
        else:
            final_metric[g] = float(np.mean(scores))
    if not final_metric:
        raise SweepError("every gamma candidate diverged", diverged)

    best = min(final_metric, key=lambda g: (final_metric[g], g))
    traces = run_experiment(cfg, gamma=best, ref=ref)
    return SweepResult(best_gamma=best, final_metric=final_metric,
                       diverged=diverged, traces=traces)


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    """Shortest exact decimal form; round-trips through float()."""
    return repr(float(x))


def emit(traces: list, fmt: str, out_dir) -> list:
    """Write experiment outputs; returns the created paths.

    ``csv``: one row per record across all traces, fixed header, floats in
    shortest round-trip form. ``svg``: log-linear plot of suboptimality
    against cumulative weighted bits, one polyline per trace.
    """
    if not traces:
        raise ContractError("emit needs at least one trace")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if fmt == "csv":
        path = out_dir / "records.csv"
        lines = [CSV_HEADER]
        for trace in traces:
            for r in trace.records:
                lines.append(
                    ",".join(
                        [
                            str(r.t),
                            "1" if r.communicated else "0",
                            str(r.up_bits),
                            str(r.down_bits),
                            _fmt(r.totalcom_bits),
                            _fmt(r.psi),
                            _fmt(r.subopt),
                            _fmt(r.bregman_sum),
                            _fmt(r.consensus_client),
                            _fmt(r.consensus_y),
                            str(trace.seed),
                        ]
                    )
                )
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
        if len(traces) > 1:
            agg = out_dir / "aggregate.csv"
            agg.write_text(_aggregate_csv(traces))
            paths.append(agg)
    elif fmt == "svg":
        path = out_dir / "curves.svg"
        path.write_text(render_svg(traces))
        paths.append(path)
    else:
        raise ContractError(f"unknown format {fmt!r}")
    return paths


AGG_HEADER = (
    "t,total_bits_cum_mean,psi_mean,psi_std,subopt_mean,subopt_std,"
    "bregman_sum_mean,bregman_sum_std"
)


def _aggregate_csv(traces: list) -> str:
    """Mean and spread across seeds at iteration counts shared by all traces."""
    by_t = [{r.t: r for r in trace.records} for trace in traces]
    shared = sorted(set.intersection(*(set(m) for m in by_t)))
    lines = [AGG_HEADER]
    for t in shared:
        recs = [m[t] for m in by_t]
        cols = [float(np.mean([r.totalcom_bits for r in recs]))]
        for metric in ("psi", "subopt", "bregman_sum"):
            values = [getattr(r, metric) for r in recs]
            cols.extend([float(np.mean(values)), float(np.std(values))])
        lines.append(",".join([str(t)] + [_fmt(c) for c in cols]))
    return "\n".join(lines) + "\n"


def parse_csv(path) -> list:
    """Read back an emitted CSV as a list of per-row dicts (exact floats)."""
    lines = Path(path).read_text().strip().split("\n")
    if lines[0] != CSV_HEADER:
        raise ContractError("unexpected CSV header")
    names = CSV_HEADER.split(",")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        row = {}
        for name, part in zip(names, parts):
            if name in ("t", "up_bits", "down_bits", "seed"):
                row[name] = int(part)
            elif name == "communicated":
                row[name] = part == "1"
            else:
                row[name] = float(part)
        rows.append(row)
    return rows


def render_svg(traces: list, width: int = 640, height: int = 420,
               metric: str = "subopt") -> str:
    """Hand-rolled SVG: metric on a log axis against cumulative total bits."""
    margin = 50
    pts_per_trace = []
    for trace in traces:
        pts = [
            (r.totalcom_bits, getattr(r, metric))
            for r in trace.records
            if getattr(r, metric) > 0 and math.isfinite(getattr(r, metric))
        ]
        if pts:
            pts_per_trace.append((trace.seed, pts))
    if not pts_per_trace:
        raise ContractError("no positive finite metric values to plot")
    xs = [p[0] for _, pts in pts_per_trace for p in pts]
    ys = [math.log10(p[1]) for _, pts in pts_per_trace for p in pts]
    x_lo, x_hi = min(xs), max(xs) or 1.0
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return margin + (width - 2 * margin) * (x - x_lo) / (x_hi - x_lo)

    def sy(y):
        return height - margin - (height - 2 * margin) * (y - y_lo) / (y_hi - y_lo)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">cumulative TotalCom (bits)</text>',
        f'<text x="14" y="{height // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height // 2})">{metric} (log10)</text>',
    ]
    for j, (seed, pts) in enumerate(pts_per_trace):
        color = palette[j % len(palette)]
        coords = " ".join(f"{sx(p[0]):.2f},{sy(math.log10(p[1])):.2f}" for p in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{width - margin + 4}" y="{margin + 14 * j + 10}" '
                     f'font-size="10" fill="{color}">seed {seed}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
