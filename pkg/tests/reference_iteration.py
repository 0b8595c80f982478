"""Independent straight-line transcription of the iteration, used as an oracle.

Covers the degenerate-randomness regime only: identity compressors,
communication every round, full coordinate set. Deliberately written as
plain per-machine loops with no code shared with the package, so it can
catch transcription mistakes there.
"""
from __future__ import annotations

import numpy as np


def reference_run(problem, gamma, rho, rho_y, eta, eta_y, p, x0, steps):
    """Returns the trajectory [(x_clients, x_server, y, u_clients, u_server, u_y), ...]."""
    n = problem.n
    x = [np.array(x0, dtype=float) for _ in range(n)]
    x_s = np.array(x0, dtype=float)
    y = np.array(x0, dtype=float)
    u = [np.zeros_like(x_s) for _ in range(n)]
    u_s = np.zeros_like(x_s)
    u_y = np.zeros_like(x_s)

    out = []
    for _ in range(steps):
        x_hat = [x[i] - gamma * problem.client_losses[i].grad(x[i]) + gamma * u[i]
                 for i in range(n)]
        xs_hat = x_s - gamma * problem.server_loss.grad(x_s) + gamma * u_s
        y_hat = y - gamma * problem.shared_loss.grad(y) + gamma * u_y

        # theta = 1 with identity compression on the full coordinate set
        c = [x_hat[i] - y_hat for i in range(n)]
        c_s = xs_hat - y_hat
        c_bar = sum(c) / n

        x = [(1 - rho) * x_hat[i] + rho * (c_s + y_hat) for i in range(n)]
        x_s = (1 - (rho + rho_y) / 2) * xs_hat + ((rho + rho_y) / 2) * y_hat \
            + (rho / 2) * c_bar
        y = y_hat + rho_y * c_s
        u = [u[i] - (p * eta / gamma) * (c[i] - c_s) for i in range(n)]
        u_s = u_s + (p * eta / (2 * gamma)) * c_bar \
            - (p * (eta_y + eta) / (2 * gamma)) * c_s
        u_y = u_y + (p * eta_y / gamma) * c_s

        out.append((
            [xi.copy() for xi in x], x_s.copy(), y.copy(),
            [ui.copy() for ui in u], u_s.copy(), u_y.copy(),
        ))
    return out
