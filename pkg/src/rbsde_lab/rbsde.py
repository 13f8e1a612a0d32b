"""Reflected BSDEs: Y = max(obstacle, implicit continuation), with exact flat-off."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _backward
from .drivers import DriverSpec, ProcessDriver
from .errors import ConsistencyError, DriverError, LatticeError
from .lattice import AdaptedProcess, LatticeModel, PredictableProcess

SKOROKHOD_TOL = 1e-12


@dataclass(frozen=True)
class RbsdeSolution:
    """Solution (Y, Z, K, A) of a reflected BSDE.

    ``dA[i]`` is the push applied at layer i, ``continuation[i]`` the value
    before reflection, so Y_i = continuation_i + dA_i. The cumulative ``A``
    (A_0 = 0, A_{i+1} = A_i + dA_i along each path) is only stored on
    non-recombining trees.
    """

    Y: AdaptedProcess
    Z: PredictableProcess
    K: PredictableProcess
    dA: PredictableProcess
    continuation: PredictableProcess
    obstacle: AdaptedProcess
    A: AdaptedProcess | None
    scheme: str
    iterations: tuple
    model: LatticeModel | None = None

    @property
    def root(self) -> float:
        return float(self.Y[0][0])


def _obstacle(model: LatticeModel, obstacle) -> AdaptedProcess:
    if not isinstance(obstacle, AdaptedProcess):
        obstacle = AdaptedProcess(obstacle)
    model.check_layers(obstacle, "obstacle")
    return obstacle


def solve_rbsde(model: LatticeModel, driver: DriverSpec, obstacle, *, scheme: str = "implicit") -> RbsdeSolution:
    """Solve the reflected BSDE with lower obstacle ``obstacle``."""
    obstacle = _obstacle(model, obstacle)
    Y, Yt, Z, K, its = _backward.run_backward(model, driver, list(obstacle), reflect=True, scheme=scheme)
    dA = [Y[i] - Yt[i] for i in range(model.N)]
    A = None
    if not model.recombining:
        cum = [np.zeros(1)]
        for i in range(model.N):
            cum.append(np.repeat(cum[i] + dA[i], model.B))
        A = AdaptedProcess(cum)
    return RbsdeSolution(AdaptedProcess(Y), PredictableProcess(Z), PredictableProcess(K), PredictableProcess(dA),
                         PredictableProcess(Yt), obstacle, A, scheme, tuple(its), model)


def reward_driver(model: LatticeModel, running_reward, marks=None) -> ProcessDriver:
    """Node-wise running reward from a constant, a function of t, per-layer arrays or a driver."""
    marks = marks if marks is not None else model.marks
    if isinstance(running_reward, DriverSpec):
        d = running_reward
        if d.depends_on_y or d.depends_on_z or d.depends_on_k:
            raise DriverError("running reward must not depend on (y, z, k)")
        if isinstance(d, ProcessDriver):
            return d
        layers = []
        for i in range(model.N):
            n = model.layer_size(i)
            nodes = np.arange(n)
            layers.append(np.broadcast_to(np.asarray(d.evaluate_layer(i, nodes, model.grid.time(i), np.zeros(n),
                                                                      np.zeros(n), np.zeros((n, model.J))),
                                                     dtype=float), (n,)).copy())
    elif callable(running_reward):
        layers = [np.full(model.layer_size(i), float(running_reward(model.grid.time(i)))) for i in range(model.N)]
    elif np.ndim(running_reward) == 0:
        layers = [np.full(model.layer_size(i), float(running_reward)) for i in range(model.N)]
    else:
        layers = [np.asarray(a, dtype=float) for a in running_reward]
        model.check_layers(layers, "running reward", predictable=True)
    return ProcessDriver(reward=tuple(layers), marks=marks, lipschitz=0.0, name="reward")


def snell_envelope(model: LatticeModel, running_reward, obstacle) -> RbsdeSolution:
    """Reflected solve with a (y, z, k)-free driver, checked against the classical recursion."""
    driver = reward_driver(model, running_reward)
    sol = solve_rbsde(model, driver, obstacle)
    xi = sol.obstacle
    y = np.array(xi[model.N], dtype=float)
    for i in range(model.N - 1, -1, -1):
        y = np.maximum(xi[i], model.expect_next(i, y) + np.asarray(driver.reward[i]) * model.dt)
        gap = float(np.max(np.abs(y - sol.Y[i])))
        if gap > 1e-12:
            raise ConsistencyError(f"reflected solve differs from the classical recursion by {gap:.3g}")
    return sol


@dataclass(frozen=True)
class SkorokhodReport:
    flat_off: float
    min_dA: float
    min_slack: float
    terminal_gap: float
    passed: bool


def skorokhod_report(sol, obstacle=None, tol: float = SKOROKHOD_TOL) -> SkorokhodReport:
    """Flat-off |(Y - xi) dA|, sign of dA, constraint Y >= xi and Y_N = xi_N."""
    xi = sol.obstacle if obstacle is None else obstacle
    N = len(sol.Y) - 1
    flat = 0.0
    min_da = np.inf
    slack = np.inf
    for i in range(N):
        flat = max(flat, float(np.max(np.abs((sol.Y[i] - xi[i]) * sol.dA[i]))))
        min_da = min(min_da, float(np.min(sol.dA[i])))
    for i in range(N + 1):
        slack = min(slack, float(np.min(sol.Y[i] - xi[i])))
    term = float(np.max(np.abs(sol.Y[N] - xi[N])))
    ok = flat <= tol and min_da >= -tol and slack >= -tol and term <= tol
    return SkorokhodReport(flat, min_da, slack, term, ok)


def rbsde_residuals(model: LatticeModel, driver: DriverSpec, obstacle, Y, Z, K, dA) -> float:
    """Largest node-equation violation of a candidate (Y, Z, K, dA).

    With Ytilde_i = Y_i - dA_i the candidate must satisfy
    Ytilde_i = E_i[Y_{i+1}] + f(t_i, Ytilde_i, Z_i, K_i) dt, Y_i = max(xi_i, Ytilde_i),
    and (Z_i, K_i) must be the coefficients of Y_{i+1}.
    """
    xi = _obstacle(model, obstacle)
    out = float(np.max(np.abs(np.asarray(Y[model.N]) - xi[model.N])))
    for i in range(model.N):
        nodes = np.arange(model.layer_size(i))
        m, z, k, res = model.decompose(i, model.gather(i, np.asarray(Y[i + 1])), nodes)
        yt = np.asarray(Y[i]) - np.asarray(dA[i])
        f = np.asarray(driver.evaluate_layer(i, nodes, model.grid.time(i), yt, z, k), dtype=float)
        out = max(out, float(np.max(np.abs(yt - m - f * model.dt))))
        out = max(out, float(np.max(np.abs(np.asarray(Y[i]) - np.maximum(xi[i], yt)))))
        out = max(out, float(np.max(np.abs(z - np.asarray(Z[i])))))
        if model.J:
            out = max(out, float(np.max(np.abs(k - np.asarray(K[i])))))
        if model.is_complete:
            out = max(out, float(np.max(np.abs(res))))
    return out


def is_solution(model: LatticeModel, driver: DriverSpec, obstacle, Y, Z, K, dA, tol: float = 1e-12) -> bool:
    """True iff the candidate satisfies the node equations and the Skorokhod conditions."""
    xi = _obstacle(model, obstacle)

    class _Cand:
        pass

    c = _Cand()
    c.Y, c.dA, c.obstacle = Y, dA, xi
    return rbsde_residuals(model, driver, xi, Y, Z, K, dA) <= tol and skorokhod_report(c, xi, tol).passed


def obstacle_from_function(model: LatticeModel, fn: Callable) -> AdaptedProcess:
    """Obstacle xi_i = fn(layer, t, W, jump_counts)."""
    return model.adapted(fn)


def deterministic_obstacle(model: LatticeModel, values) -> AdaptedProcess:
    values = np.asarray(values, dtype=float)
    if values.shape != (model.N + 1,):
        raise LatticeError(f"need {model.N + 1} values")
    return AdaptedProcess([np.full(model.layer_size(i), values[i]) for i in range(model.N + 1)])
