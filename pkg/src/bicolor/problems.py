"""Objective instances and data handling.

The objective template is F(x) = (1/n) sum_i f_i(x) + 2 f_s(x) + g(x),
with n client losses f_i, a server loss f_s and a loss g shared by all
machines. All components are convex and L-smooth; mu-strong convexity
with mu = 0 allowed. Concrete instances: regularized logistic regression
on LibSVM-format data and synthetic diagonal quadratics.
"""
from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ContractError, ParseError, PowerIterationError


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class SparseDataset:
    """Rows of (label in {-1,+1}, sparse feature vector) over [0, d)."""

    labels: np.ndarray
    feature_indices: list
    feature_values: list
    dimension: int

    def __post_init__(self):
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ContractError("labels must be -1 or +1")
        for idx in self.feature_indices:
            if idx.size and (idx[0] < 0 or idx[-1] >= self.dimension):
                raise ContractError("feature index out of [0, d)")

    @property
    def n_rows(self) -> int:
        return int(self.labels.size)

    def subset(self, rows: np.ndarray) -> "SparseDataset":
        return SparseDataset(
            labels=self.labels[rows].copy(),
            feature_indices=[self.feature_indices[i] for i in rows],
            feature_values=[self.feature_values[i] for i in rows],
            dimension=self.dimension,
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.dimension))
        for r, (idx, val) in enumerate(zip(self.feature_indices, self.feature_values)):
            out[r, idx] = val
        return out


def parse_libsvm(source: Iterable[str], dimension: Optional[int] = None) -> SparseDataset:
    """Parse LibSVM text: ``<label> <idx>:<val> ...`` with 1-based ascending indices.

    Labels 0/1 are remapped to -1/+1. ``dimension`` pads the feature space
    beyond the maximum index seen (it may not shrink it).
    """
    labels = []
    indices = []
    values = []
    max_index = 0
    for lineno, raw in enumerate(source, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            label = float(parts[0])
        except ValueError:
            raise ParseError(f"bad label {parts[0]!r}", lineno) from None
        if label in (1.0, -1.0):
            pass
        elif label == 0.0:
            label = -1.0
        else:
            raise ParseError(f"label {parts[0]!r} is not in {{-1, 0, +1}}", lineno)
        row_idx = np.empty(len(parts) - 1, dtype=np.int64)
        row_val = np.empty(len(parts) - 1, dtype=np.float64)
        prev = 0
        for j, tok in enumerate(parts[1:]):
            try:
                idx_text, val_text = tok.split(":", 1)
                idx = int(idx_text)
                val = float(val_text)
            except ValueError:
                raise ParseError(f"bad feature {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"index {idx} is not 1-based", lineno)
            if idx <= prev:
                raise ParseError(f"index {idx} is not ascending", lineno)
            prev = idx
            row_idx[j] = idx - 1
            row_val[j] = val
        max_index = max(max_index, prev)
        labels.append(label)
        indices.append(row_idx)
        values.append(row_val)
    d = max_index
    if dimension is not None:
        if dimension < max_index:
            raise ContractError(f"dimension override {dimension} below max index {max_index}")
        d = dimension
    return SparseDataset(
        labels=np.asarray(labels, dtype=np.float64),
        feature_indices=indices,
        feature_values=values,
        dimension=d,
    )


def load_libsvm(path, dimension: Optional[int] = None) -> SparseDataset:
    """Load a plain or gzip-compressed LibSVM file."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    opener = gzip.open if magic == b"\x1f\x8b" else open
    with opener(path, "rt") as fh:
        return parse_libsvm(fh, dimension=dimension)


def partition(data: SparseDataset, n: int, rng: np.random.Generator) -> list:
    """Shuffle rows and split into n shards of equal size, discarding leftovers."""
    if n < 1 or data.n_rows < n:
        raise ContractError(f"cannot split {data.n_rows} rows into {n} shards")
    order = rng.permutation(data.n_rows)
    m = data.n_rows // n
    return [data.subset(order[i * m:(i + 1) * m]) for i in range(n)]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


class LogisticLoss:
    """Mean logistic loss over a shard plus (mu/2)||x||^2.

    value(x) = (1/m) sum_j log(1 + exp(-b_j a_j^T x)) + (mu/2)||x||^2
    """

    def __init__(self, shard: SparseDataset, mu: float, smoothness: Optional[float] = None):
        if shard.n_rows == 0:
            raise ContractError("empty shard")
        self.matrix = shard.to_dense()
        self.labels = shard.labels
        self.mu = float(mu)
        self._smoothness = smoothness

    @property
    def strong_convexity(self) -> float:
        return self.mu

    @property
    def smoothness(self) -> float:
        if self._smoothness is None:
            self._smoothness = _logistic_smoothness(self.matrix, self.mu)
        return self._smoothness

    def value_grad(self, x: np.ndarray):
        m = self.labels.size
        margins = self.labels * (self.matrix @ x)
        # log(1 + exp(-t)) and sigmoid(-t), stable for large |t|
        value = float(np.mean(np.logaddexp(0.0, -margins)))
        sig_neg = _sigmoid(-margins)
        grad = -(self.matrix.T @ (self.labels * sig_neg)) / m
        if self.mu:
            value += 0.5 * self.mu * float(x @ x)
            grad = grad + self.mu * x
        return value, grad

    def value(self, x: np.ndarray) -> float:
        margins = self.labels * (self.matrix @ x)
        value = float(np.mean(np.logaddexp(0.0, -margins)))
        if self.mu:
            value += 0.5 * self.mu * float(x @ x)
        return value

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.value_grad(x)[1]


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class QuadraticLoss:
    """f(x) = 0.5 x^T diag(a) x - b^T x with a >= 0 coordinatewise."""

    def __init__(self, diag: np.ndarray, linear: np.ndarray):
        self.diag = np.asarray(diag, dtype=np.float64)
        self.linear = np.asarray(linear, dtype=np.float64)
        if np.any(self.diag < 0):
            raise ContractError("quadratic diagonal must be nonnegative")

    @property
    def smoothness(self) -> float:
        return float(self.diag.max())

    @property
    def strong_convexity(self) -> float:
        return float(self.diag.min())

    def value(self, x):
        return 0.5 * float(x @ (self.diag * x)) - float(self.linear @ x)

    def grad(self, x):
        return self.diag * x - self.linear

    def value_grad(self, x):
        return self.value(x), self.grad(x)


class ScaledSquareLoss:
    """f(x) = (mu/2)||x||^2; the zero function when mu = 0."""

    def __init__(self, mu: float):
        if mu < 0:
            raise ContractError("mu must be nonnegative")
        self.mu = float(mu)

    smoothness = property(lambda self: self.mu)
    strong_convexity = property(lambda self: self.mu)

    def value(self, x):
        return 0.5 * self.mu * float(x @ x)

    def grad(self, x):
        return self.mu * x

    def value_grad(self, x):
        return self.value(x), self.grad(x)


def quadratic_reg(mu: float) -> ScaledSquareLoss:
    """The regularizer (mu/2)||x||^2 used as server and shared loss."""
    return ScaledSquareLoss(mu)


def logistic_value_grad(shard: SparseDataset, mu: float, x: np.ndarray):
    """Value and gradient of the shard's regularized logistic loss at x."""
    if np.asarray(x).shape != (shard.dimension,):
        raise ContractError(f"expected vector of length {shard.dimension}")
    return LogisticLoss(shard, mu).value_grad(np.asarray(x, dtype=np.float64))


def _logistic_smoothness(matrix: np.ndarray, mu: float, tol: float = 1e-10) -> float:
    m = matrix.shape[0]
    return _power_iteration(matrix, tol) / (4.0 * m) + mu


def estimate_L(shard: SparseDataset, mu: float, tol: float = 1e-10) -> float:
    """Smoothness bound (1/(4m)) lambda_max(sum_j a_j a_j^T) + mu.

    The logistic Hessian is (1/m) A^T diag(s) A with s <= 1/4, so this
    upper-bounds its spectrum. Power iteration to relative tolerance tol.
    """
    if shard.n_rows == 0:
        raise ContractError("empty shard")
    return _logistic_smoothness(shard.to_dense(), mu, tol)


def _power_iteration(matrix: np.ndarray, tol: float, max_iters: int = 10000) -> float:
    """Largest eigenvalue of A^T A by power iteration, deterministic start."""
    d = matrix.shape[1]
    v = 1.0 + np.arange(d) / max(d, 1)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = matrix.T @ (matrix @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / norm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    raise PowerIterationError(
        f"power iteration did not reach tol {tol} in {max_iters} iterations", lam
    )


def scale_mu_for_kappa(L_data: float, kappa_target: float) -> float:
    """Regularizer giving condition number kappa once mu is folded into L.

    Solves the fixed point mu = (L_data + mu) / kappa, i.e.
    mu = L_data / (kappa - 1), so (L_data + mu) / mu = kappa exactly.
    """
    if kappa_target <= 1:
        raise ContractError("kappa_target must exceed 1")
    return L_data / (kappa_target - 1.0)


# ---------------------------------------------------------------------------
# problem instances
# ---------------------------------------------------------------------------


@dataclass
class ProblemInstance:
    """The tuple (f_1..f_n, f_s, g) with its smoothness constants.

    ``L`` is a smoothness constant valid for every component; ``mu`` a
    strong-convexity modulus valid for every component (0 in the general
    convex case, where ``kappa`` is undefined).
    """

    client_losses: list
    server_loss: object
    shared_loss: object
    dimension: int
    L: float
    mu: float

    def __post_init__(self):
        if not self.client_losses:
            raise ContractError("need at least one client loss")
        if self.L <= 0 or self.mu < 0:
            raise ContractError("need L > 0 and mu >= 0")

    @property
    def n(self) -> int:
        return len(self.client_losses)

    @property
    def kappa(self) -> Optional[float]:
        return self.L / self.mu if self.mu > 0 else None

    def full_value(self, x: np.ndarray) -> float:
        """F(x) = (1/n) sum_i f_i(x) + 2 f_s(x) + g(x)."""
        total = sum(f.value(x) for f in self.client_losses) / self.n
        return total + 2.0 * self.server_loss.value(x) + self.shared_loss.value(x)

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        grad = np.zeros(self.dimension)
        for f in self.client_losses:
            grad += f.grad(x)
        grad /= self.n
        return grad + 2.0 * self.server_loss.grad(x) + self.shared_loss.grad(x)

    def full_smoothness(self) -> float:
        """Smoothness of the full objective F (tighter than 4L when known)."""
        mean_clients = sum(f.smoothness for f in self.client_losses) / self.n
        return mean_clients + 2.0 * self.server_loss.smoothness + self.shared_loss.smoothness

    def full_strong_convexity(self) -> float:
        mean_clients = sum(f.strong_convexity for f in self.client_losses) / self.n
        return (
            mean_clients
            + 2.0 * self.server_loss.strong_convexity
            + self.shared_loss.strong_convexity
        )


def logistic_problem(
    shards: list,
    mu: float,
    fold_mu_into_clients: bool = False,
) -> ProblemInstance:
    """Regularized logistic instance: f_i on the shards, f_s = g = (mu/2)||.||^2.

    With ``fold_mu_into_clients`` the clients carry 4*mu and f_s = g = 0;
    the full objective is identical either way, which keeps ablations
    against template-less variants on the exact same problem.
    """
    d = shards[0].dimension
    client_mu = 4.0 * mu if fold_mu_into_clients else mu
    aux_mu = 0.0 if fold_mu_into_clients else mu
    losses = [LogisticLoss(s, client_mu) for s in shards]
    L = max(f.smoothness for f in losses)
    reg = quadratic_reg(aux_mu)
    # the common strong-convexity modulus drops to zero once f_s = g = 0
    return ProblemInstance(
        client_losses=losses,
        server_loss=reg,
        shared_loss=reg,
        dimension=d,
        L=max(L, aux_mu),
        mu=0.0 if fold_mu_into_clients else mu,
    )
