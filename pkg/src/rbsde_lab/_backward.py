"""One-step backward scheme shared by the BSDE, RBSDE and enumeration code."""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, SolverPreconditionError

PICARD_TOL = 1e-13
MAX_PICARD = 100_000


def check_precondition(model, driver) -> None:
    c_dt = driver.lipschitz * model.dt
    if c_dt >= 1:
        raise SolverPreconditionError(
            f"C*dt = {c_dt:.6g} >= 1 so the implicit step need not contract; increase N "
            f"to at least {int(np.floor(driver.lipschitz * model.T)) + 1}")


def step(model, driver, layer: int, nodes, child_values, scheme: str = "implicit"):
    """Solve y = E[v] + f(t, y, z, k) dt for each row of child values.

    Returns (y, z, k, iterations). ``nodes`` are the node indices the rows
    belong to (None for all nodes of the layer in order).
    """
    child_values = np.asarray(child_values, dtype=float)
    if nodes is None:
        nodes = np.arange(model.layer_size(layer))
    m, z, k, _ = model.decompose(layer, child_values, nodes)
    t = model.grid.time(layer)
    dt = model.dt

    def f(y):
        return np.asarray(driver.evaluate_layer(layer, nodes, t, y, z, k), dtype=float)

    if scheme == "explicit" or not driver.depends_on_y:
        return m + f(m) * dt, z, k, np.ones(len(m), dtype=np.int64)
    if scheme != "implicit":
        raise ValueError(f"unknown scheme {scheme!r}")
    y = m + f(m) * dt
    iters = np.ones(len(m), dtype=np.int64)
    todo = np.ones(len(m), dtype=bool)
    for _ in range(MAX_PICARD):
        y_new = m + f(y) * dt
        diff = np.abs(y_new - y)
        done = diff <= PICARD_TOL * np.maximum(1.0, np.abs(y_new))
        iters += todo
        todo &= ~done
        y = y_new
        if not todo.any():
            return y, z, k, iters
    raise ConvergenceError(f"Picard iteration did not converge at layer {layer}")


def run_backward(model, driver, obstacle, *, reflect: bool, stop=None, scheme: str = "implicit"):
    """Backward pass from layer N.

    ``obstacle`` holds one array per layer (only layer N is used without
    reflection or stopping). With ``stop``, nodes where the indicator is set
    take the obstacle value and zero coefficients.

    Returns (Y, Ytilde, Z, K, iterations) as lists of arrays.
    """
    check_precondition(model, driver)
    N = model.N
    Y = [None] * (N + 1)
    Yt = [None] * N
    Z = [None] * N
    K = [None] * N
    its = [None] * N
    Y[N] = np.array(obstacle[N], dtype=float)
    for i in range(N - 1, -1, -1):
        y, z, k, n = step(model, driver, i, None, model.gather(i, Y[i + 1]), scheme)
        Yt[i] = y
        yi = np.maximum(obstacle[i], y) if reflect else y.copy()
        if stop is not None:
            s = np.asarray(stop[i], dtype=bool)
            yi = np.where(s, obstacle[i], yi)
            z = np.where(s, 0.0, z)
            k = np.where(s[:, None], 0.0, k)
            n = np.where(s, 0, n)
        Y[i] = yi
        Z[i] = z
        K[i] = k
        its[i] = n
    return Y, Yt, Z, K, its
