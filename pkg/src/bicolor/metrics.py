"""Progress measures, the reference solver, and the consensus operators.

The product space X stacks (x_1, ..., x_n, x_s, y) with inner product
weights 1 on clients, 2n on the server slot and n on the shared slot.
The difference operators D: x -> (x_1 - x_s, ..., x_n - x_s) and
D_y: x -> (y - x_s) vanish exactly at consensus; their adjoints under the
weighted inner products drive the dual updates. Everything here is pure
and materialized only for diagnostics and tests; the iteration itself
never forms these matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvexityError, ReferenceSolveError
from .problems import ProblemInstance


# ---------------------------------------------------------------------------
# consensus operators over the product space (d = 1 blocks)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Operators:
    """Explicit matrices of D, D_y and their weighted-space adjoints.

    Rows/columns follow the machine order (clients 0..n-1, server, y).
    Coordinates of R^d decouple, so d = 1 blocks suffice; applying a
    matrix to an (n+2, d) stack acts on every coordinate at once.
    """

    n: int
    d_mat: np.ndarray        # (n, n+2)
    dy_mat: np.ndarray       # (1, n+2)
    d_star: np.ndarray       # (n+2, n)
    dy_star: np.ndarray      # (n+2, 1)
    x_weights: np.ndarray    # (n+2,)
    u_weights: np.ndarray    # (n,)
    uy_weight: float

    def x_inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(self.x_weights[:, None] * a * b))

    def u_inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(a * b))

    def uy_inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.uy_weight * float(np.sum(a * b))

    def gram(self) -> np.ndarray:
        """D* D + D_y* D_y as a matrix on X."""
        return self.d_star @ self.d_mat + self.dy_star @ self.dy_mat

    def gram_norm(self) -> float:
        """Operator norm of D* D + D_y* D_y in the weighted space."""
        return float(np.max(np.abs(self._sym_spectrum(self.gram(), self.x_weights))))

    def dc_dct(self) -> np.ndarray:
        """D_c D_c* on U x U_y where D_c = (D, D_y)."""
        dc = np.vstack([self.d_mat, self.dy_mat])
        dc_star = np.hstack([self.d_star, self.dy_star])
        return dc @ dc_star

    def dc_dct_spectrum(self) -> np.ndarray:
        w = np.concatenate([self.u_weights, [self.uy_weight]])
        return self._sym_spectrum(self.dc_dct(), w)

    @staticmethod
    def _sym_spectrum(mat: np.ndarray, weights: np.ndarray) -> np.ndarray:
        # similarity W^(1/2) M W^(-1/2) is symmetric for self-adjoint M
        root = np.sqrt(weights)
        sym = root[:, None] * mat / root[None, :]
        return np.linalg.eigvalsh(sym)


def build_operators(n: int) -> Operators:
    """Materialize D, D_y, the adjoints and the space weights for n clients."""
    if n < 1:
        raise ValueError("need n >= 1")
    d_mat = np.zeros((n, n + 2))
    d_mat[:, :n] = np.eye(n)
    d_mat[:, n] = -1.0
    dy_mat = np.zeros((1, n + 2))
    dy_mat[0, n] = -1.0
    dy_mat[0, n + 1] = 1.0
    x_weights = np.concatenate([np.ones(n), [2.0 * n, float(n)]])
    u_weights = np.ones(n)
    uy_weight = float(n)
    # adjoint under weighted inner products: D* = W_X^{-1} D^T W_U
    d_star = (d_mat.T * u_weights[None, :]) / x_weights[:, None]
    dy_star = (dy_mat.T * uy_weight) / x_weights[:, None]
    return Operators(
        n=n,
        d_mat=d_mat,
        dy_mat=dy_mat,
        d_star=d_star,
        dy_star=dy_star,
        x_weights=x_weights,
        u_weights=u_weights,
        uy_weight=uy_weight,
    )


# ---------------------------------------------------------------------------
# reference solutions
# ---------------------------------------------------------------------------


@dataclass
class ReferenceSolution:
    """High-accuracy minimizer of the full objective with its dual targets."""

    x_star: np.ndarray
    f_star: float
    grad_norms: np.ndarray      # per component: clients 0..n-1, server, shared
    u_star: np.ndarray          # (n, d): grad f_i(x*)
    u_s_star: np.ndarray        # grad f_s(x*)
    u_y_star: np.ndarray        # grad g(x*)
    residual: float


def solve_reference(
    problem: ProblemInstance,
    tol: Optional[float] = None,
    max_iters: int = 500_000,
    x0: Optional[np.ndarray] = None,
) -> ReferenceSolution:
    """Minimize F by accelerated full-gradient descent to ||grad F|| <= tol.

    Deterministic (zero start unless x0 is given, fixed momentum).
    Strongly convex instances use the constant-momentum scheme; otherwise
    Nesterov with function restarts. Raises ReferenceSolveError with the
    achieved residual if the cap is reached.
    """
    d = problem.dimension
    L_f = problem.full_smoothness()
    mu_f = problem.full_strong_convexity()
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    g0 = problem.full_grad(x)
    scale = 1.0 + float(np.linalg.norm(g0))
    if tol is None:
        tol = 1e-12 * scale

    step = 1.0 / L_f
    z = x.copy()
    residual = float(np.linalg.norm(g0))
    if mu_f > 0:
        beta = (math.sqrt(L_f) - math.sqrt(mu_f)) / (math.sqrt(L_f) + math.sqrt(mu_f))
        for _ in range(max_iters):
            grad = problem.full_grad(z)
            residual = float(np.linalg.norm(grad))
            if residual <= tol:
                x = z
                break
            x_new = z - step * grad
            z = x_new + beta * (x_new - x)
            x = x_new
        else:
            raise ReferenceSolveError(
                f"reference solver hit {max_iters} iterations at residual {residual:.3e}", residual
            )
    else:
        t_mom = 1.0
        f_prev = problem.full_value(x)
        for _ in range(max_iters):
            grad = problem.full_grad(z)
            residual = float(np.linalg.norm(grad))
            if residual <= tol:
                x = z
                break
            x_new = z - step * grad
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
            z = x_new + ((t_mom - 1.0) / t_next) * (x_new - x)
            t_mom = t_next
            f_new = problem.full_value(x_new)
            if f_new > f_prev:  # function restart
                t_mom = 1.0
                z = x_new.copy()
            f_prev = f_new
            x = x_new
        else:
            raise ReferenceSolveError(
                f"reference solver hit {max_iters} iterations at residual {residual:.3e}", residual
            )

    u_star = np.stack([f.grad(x) for f in problem.client_losses])
    u_s_star = problem.server_loss.grad(x)
    u_y_star = problem.shared_loss.grad(x)
    grad_norms = np.array(
        [float(np.linalg.norm(u)) for u in u_star]
        + [float(np.linalg.norm(u_s_star)), float(np.linalg.norm(u_y_star))]
    )
    return ReferenceSolution(
        x_star=x,
        f_star=problem.full_value(x),
        grad_norms=grad_norms,
        u_star=u_star,
        u_s_star=u_s_star,
        u_y_star=u_y_star,
        residual=residual,
    )


# ---------------------------------------------------------------------------
# progress measures
# ---------------------------------------------------------------------------


def lyapunov(state, ref: ReferenceSolution, gamma: float, p: float, k: int, d: int, eta: float) -> float:
    """Weighted primal/dual squared distance to the solution.

    (1/gamma) (sum_i ||x_i - x*||^2 + 2n ||x_s - x*||^2 + n ||y - x*||^2)
    + (d^2 gamma / (p^2 k^2 eta)) (sum_i ||u_i - u_i*||^2 + n ||u_y - u_y*||^2).

    No u_s term appears; for decreasing schedules pass the current p_t
    (diagnostic only).
    """
    n = state.x_clients.shape[0]
    xs = ref.x_star
    primal = (
        float(np.sum((state.x_clients - xs) ** 2))
        + 2.0 * n * float(np.sum((state.x_server - xs) ** 2))
        + n * float(np.sum((state.y_copies[0] - xs) ** 2))
    )
    dual = float(np.sum((state.u_clients - ref.u_star) ** 2)) + n * float(
        np.sum((state.u_y_copies[0] - ref.u_y_star) ** 2)
    )
    weight = (d * d * gamma) / (p * p * k * k * eta)
    return primal / gamma + weight * dual


def bregman(phi, x: np.ndarray, x_ref: np.ndarray) -> float:
    """Bregman distance phi(x) - phi(x_ref) - <grad phi(x_ref), x - x_ref>."""
    v_ref, g_ref = phi.value_grad(x_ref)
    out = phi.value(x) - v_ref - float(g_ref @ (x - x_ref))
    if out < -1e-10:
        raise ConvexityError(f"negative Bregman distance {out:.3e}")
    return out


def bregman_sum(state, problem: ProblemInstance, ref: ReferenceSolution) -> float:
    """sum_i D_fi(x_i, x*) + 2n D_fs(x_s, x*) + n D_g(y, x*)."""
    n = problem.n
    xs = ref.x_star
    total = sum(
        bregman(f, state.x_clients[i], xs) for i, f in enumerate(problem.client_losses)
    )
    total += 2.0 * n * bregman(problem.server_loss, state.x_server, xs)
    total += n * bregman(problem.shared_loss, state.y_copies[0], xs)
    return total


def consensus_gaps(state, gamma: float) -> tuple:
    """((1/gamma) sum_i ||x_i - x_s||^2, (n/gamma) ||x_s - y||^2)."""
    n = state.x_clients.shape[0]
    client_gap = float(np.sum((state.x_clients - state.x_server) ** 2)) / gamma
    y_gap = n * float(np.sum((state.x_server - state.y_copies[0]) ** 2)) / gamma
    return client_gap, y_gap


@dataclass
class MetricRecord:
    """One sampled point of a run: progress measures plus bit counters.

    ``up_bits``/``down_bits`` count the round at iteration t; the ``*com``
    fields are cumulative, with totalcom = upcom + alpha * downcom.
    """

    t: int
    communicated: bool
    up_bits: int
    down_bits: int
    upcom_bits: int
    downcom_bits: int
    totalcom_bits: float
    psi: float
    subopt: float
    bregman_sum: float
    consensus_client: float
    consensus_y: float


@dataclass
class RunTrace:
    """Per-round records of one run plus identity and summary fields.

    ``final_metric`` is the stopping metric at the last record, normalized
    by its value at t = 0 (NaN when no metrics were recorded).
    """

    fingerprint: str
    seed: int
    records: list = field(default_factory=list)
    alpha: float = 1.0
    total_rounds: int = 0
    total_up_bits: int = 0
    total_down_bits: int = 0
    iterations: int = 0
    wall_clock: float = 0.0
    status: str = "incomplete"
    final_metric: float = float("nan")

    @property
    def total_bits(self) -> float:
        return self.total_up_bits + self.alpha * self.total_down_bits
