"""Backward solver for BSDEs with jumps, dynamic risk measures and gap estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backward
from .drivers import DriverSpec, ProcessDriver
from .errors import LatticeError, SolverPreconditionError
from .lattice import AdaptedProcess, LatticeModel, PredictableProcess

RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class BsdeSolution:
    """Solution (Y, Z, K) of a BSDE on a lattice.

    ``terminal`` is the process frozen at the stopping rule (or only its last
    layer when solving to maturity). ``active[i]`` marks nodes strictly before
    the stopping time, where the driver acts.
    """

    Y: AdaptedProcess
    Z: PredictableProcess
    K: PredictableProcess
    terminal: AdaptedProcess | np.ndarray
    scheme: str
    iterations: tuple
    stop: tuple | None = None
    active: tuple | None = None

    @property
    def root(self) -> float:
        return float(self.Y[0][0])


@dataclass(frozen=True)
class EstimateParams:
    """Weights for the beta-norm estimates: beta >= 3 / eta + 2 C."""

    eta: float
    beta: float
    C: float

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError("eta must be positive")
        if not self.C >= 0:
            raise ValueError("C must be >= 0")
        if self.beta < 3.0 / self.eta + 2.0 * self.C - 1e-12 * max(1.0, abs(self.beta)):
            raise ValueError(f"beta={self.beta} is below 3/eta + 2C = {3.0 / self.eta + 2.0 * self.C}")

    @classmethod
    def minimal(cls, eta: float, C: float) -> "EstimateParams":
        return cls(eta, 3.0 / eta + 2.0 * C, C)

    @classmethod
    def for_contraction(cls, C: float, T: float) -> "EstimateParams":
        """eta = 1 / ((T + 2) 4 C^2) with the smallest admissible beta."""
        if not C > 0:
            raise ValueError("C must be positive")
        return cls.minimal(1.0 / ((T + 2.0) * 4.0 * C * C), C)

    def check_for_pointwise(self) -> None:
        if self.C > 0 and self.eta > 1.0 / self.C ** 2 * (1 + 1e-12):
            raise ValueError(f"eta={self.eta} exceeds 1/C^2={1.0 / self.C ** 2}")


def lemma_beta(C: float) -> float:
    """beta = 3 C^2 + 2 C, the value obtained with eta = 1 / C^2."""
    return 3.0 * C * C + 2.0 * C


def _terminal_layers(model: LatticeModel, terminal):
    if isinstance(terminal, AdaptedProcess) or (isinstance(terminal, (list, tuple)) and len(terminal) == model.N + 1):
        model.check_layers(terminal, "terminal")
        return list(terminal)
    arr = np.asarray(terminal, dtype=float)
    if arr.ndim == 0:
        arr = np.full(model.layer_size(model.N), float(arr))
    if arr.shape != (model.layer_size(model.N),):
        raise LatticeError(f"terminal values must have shape ({model.layer_size(model.N)},)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("terminal values must be finite")
    return [None] * model.N + [arr]


def _stop_layers(model, stop):
    stop = getattr(stop, "indicators", stop)
    if len(stop) != model.N + 1:
        raise LatticeError(f"stopping rule needs {model.N + 1} layers")
    out = [np.asarray(s, dtype=bool) for s in stop]
    out[-1] = np.ones(model.layer_size(model.N), dtype=bool)
    for i, s in enumerate(out):
        if s.shape != (model.layer_size(i),):
            raise LatticeError(f"stop indicators at layer {i} have the wrong shape")
    return out


def solve_bsde(model: LatticeModel, driver: DriverSpec, terminal, *, scheme: str = "implicit",
               stop=None) -> BsdeSolution:
    """Solve the BSDE backward from maturity or from a stopping rule.

    Args:
        terminal: last-layer values, a constant, or an adapted process. With
            ``stop`` it must be an adapted process whose value at the stopping
            node is frozen there.
        stop: stopping rule or per-layer indicators. The driver acts only
            strictly before the first indicated node on each path.
    """
    layers = _terminal_layers(model, terminal)
    if stop is not None and layers[0] is None:
        raise LatticeError("a stopped terminal needs values on every layer")
    stop_l = _stop_layers(model, stop) if stop is not None else None
    if layers[0] is None:
        obst = [np.zeros(model.layer_size(i)) for i in range(model.N)] + [layers[-1]]
    else:
        obst = layers
    Y, _, Z, K, its = _backward.run_backward(model, driver, obst, reflect=False, stop=stop_l, scheme=scheme)
    active = None
    if stop_l is not None:
        active = _active_layers(model, stop_l)
        if not model.recombining:
            _freeze_after_stop(model, stop_l, Y, Z, K)
    term = AdaptedProcess(layers) if layers[0] is not None else np.array(layers[-1])
    return BsdeSolution(AdaptedProcess(Y), PredictableProcess(Z), PredictableProcess(K), term, scheme,
                        tuple(its), None if stop_l is None else tuple(stop_l),
                        None if active is None else tuple(active))


def _active_layers(model, stop_l):
    """Nodes strictly before the stopping time (non-recombining: path-exact)."""
    if model.recombining:
        return [~s for s in stop_l[:-1]]
    out = [~stop_l[0]]
    for i in range(1, model.N):
        alive = np.repeat(out[i - 1], model.B)
        out.append(alive & ~stop_l[i])
    return out


def _freeze_after_stop(model, stop_l, Y, Z, K):
    # value frozen at the first stopping node, zero coefficients afterwards
    frozen = np.where(stop_l[0], Y[0], np.nan)
    for i in range(1, model.N + 1):
        prev = np.repeat(frozen, model.B)
        stopped = ~np.isnan(prev)
        Y[i] = np.where(stopped, prev, Y[i])
        if i < model.N:
            Z[i] = np.where(stopped, 0.0, Z[i])
            K[i] = np.where(stopped[:, None], 0.0, K[i])
        frozen = np.where(stopped, prev, np.where(stop_l[i], Y[i], np.nan))


def node_residuals(model: LatticeModel, driver: DriverSpec, sol: BsdeSolution) -> float:
    """Largest violation of the node equations, recomputed from Y alone."""
    out = 0.0
    N = model.N
    last = sol.terminal[N] if isinstance(sol.terminal, AdaptedProcess) else sol.terminal
    if sol.stop is None:
        out = float(np.max(np.abs(sol.Y[N] - last)))
    for i in range(N):
        nodes = np.arange(model.layer_size(i))
        m, z, k, res = model.decompose(i, model.gather(i, sol.Y[i + 1]), nodes)
        t = model.grid.time(i)
        y_arg = sol.Y[i] if sol.scheme == "implicit" else m
        f = np.asarray(driver.evaluate_layer(i, nodes, t, y_arg, z, k), dtype=float)
        if sol.active is not None:
            f = np.where(sol.active[i], f, 0.0)
        r = sol.Y[i] - m - f * model.dt
        coeff = np.abs(z - sol.Z[i])
        if model.J:
            coeff = np.maximum(coeff, np.max(np.abs(k - sol.K[i]), axis=1))
        if sol.stop is not None:
            s = sol.stop[i]
            if model.recombining:
                r = np.where(s, sol.Y[i] - sol.terminal[i], r)
                coeff = np.where(s, np.abs(sol.Z[i]), coeff)
            else:
                first = s & (sol.active[i - 1].repeat(model.B) if i > 0 else True)
                r = np.where(first, np.maximum(np.abs(r), np.abs(sol.Y[i] - sol.terminal[i])), r)
        out = max(out, float(np.max(np.abs(r))), float(np.max(coeff)))
        if model.is_complete:
            out = max(out, float(np.max(np.abs(res))))
    return out


def risk_measure(model: LatticeModel, driver: DriverSpec, position, maturity=None, *,
                 scheme: str = "implicit") -> AdaptedProcess:
    """rho_t = -Y_t for the position evaluated at maturity or at a stopping rule."""
    sol = solve_bsde(model, driver, position, scheme=scheme, stop=maturity)
    return AdaptedProcess([-y for y in sol.Y])


# norms and estimates -----------------------------------------------------------------

def beta_norm_sq(model: LatticeModel, layers: Sequence, beta: float) -> float:
    """E[sum_{i<N} e^{beta t_i} |phi_i|^2 dt], with the nu-norm for vector values."""
    total = 0.0
    dt = model.dt
    lam = model.marks.lam
    for i in range(model.N):
        v = np.asarray(layers[i], dtype=float)
        sq = np.sum(v ** 2 * lam, axis=1) if v.ndim == 2 else v ** 2
        total += math.exp(beta * model.grid.time(i)) * dt * float(np.dot(model.node_probabilities(i), sq))
    return total


@dataclass(frozen=True)
class AprioriReport:
    pointwise_violation: float
    pointwise_margin: float
    y_norm_violation: float
    coefficient_violation: float | None
    f_gap_norm: float
    tolerance: float
    passed: bool
    params: EstimateParams


def _gap_solutions(model, f1, f2, terminal, reflect):
    if reflect:
        obst = list(terminal)
        s1 = _backward.run_backward(model, f1, obst, reflect=True)
        s2 = _backward.run_backward(model, f2, obst, reflect=True)
    else:
        layers = _terminal_layers(model, terminal)
        obst = [np.zeros(model.layer_size(i)) for i in range(model.N)] + [layers[-1]]
        s1 = _backward.run_backward(model, f1, obst, reflect=False)
        s2 = _backward.run_backward(model, f2, obst, reflect=False)
    return s1, s2


def apriori_gap_check(model: LatticeModel, f1: DriverSpec, f2: DriverSpec, terminal, params: EstimateParams, *,
                      reflect: bool = True, c0: float = 1.0) -> AprioriReport:
    """Discrete beta-weighted estimates between two solutions with the same data.

    With gbar_i = f1 - f2 evaluated at the arguments used by solution 2 and
    R_i = E_i[sum_{s >= i} e^{beta t_s} gbar_s^2 dt], the pointwise check is
    e^{beta t_i} (Y1 - Y2)_i^2 <= eta R_i at every node. The integrated checks
    are ||Y1 - Y2||_beta^2 <= T eta ||gbar||_beta^2 and, when eta < 1/C^2,
    ||Z1 - Z2||_beta^2 + ||K1 - K2||_beta^2 <= eta / (1 - eta C^2) ||gbar||_beta^2.
    Passing means every violation is at most ``c0 * dt``.

    Args:
        terminal: obstacle process when ``reflect`` (default), else terminal values.
    """
    if params.C + 1e-15 < f1.lipschitz:
        raise ValueError(f"params.C={params.C} is below the Lipschitz constant {f1.lipschitz} of f1")
    params.check_for_pointwise()
    (Y1, Yt1, Z1, K1, _), (Y2, Yt2, Z2, K2, _) = _gap_solutions(model, f1, f2, terminal, reflect)
    N = model.N
    dt = model.dt
    beta = params.beta
    gbar = []
    for i in range(N):
        nodes = np.arange(model.layer_size(i))
        t = model.grid.time(i)
        y_arg = Yt2[i]
        a = f1.evaluate_layer(i, nodes, t, y_arg, Z2[i], K2[i])
        b = f2.evaluate_layer(i, nodes, t, y_arg, Z2[i], K2[i])
        gbar.append(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    R = np.zeros(model.layer_size(N))
    worst = 0.0
    margin = math.inf
    for i in range(N - 1, -1, -1):
        R = math.exp(beta * model.grid.time(i)) * gbar[i] ** 2 * dt + model.expect_next(i, R)
        lhs = math.exp(beta * model.grid.time(i)) * (Y1[i] - Y2[i]) ** 2
        gap = lhs - params.eta * R
        worst = max(worst, float(np.max(gap)))
        margin = min(margin, float(np.min(-gap)))
    fn = beta_norm_sq(model, gbar, beta)
    dy = [Y1[i] - Y2[i] for i in range(N)]
    y_viol = max(0.0, beta_norm_sq(model, dy, beta) - model.T * params.eta * fn)
    coeff_viol = None
    if params.eta * params.C ** 2 < 1:
        lhs = beta_norm_sq(model, [Z1[i] - Z2[i] for i in range(N)], beta)
        if model.J:
            lhs += beta_norm_sq(model, [K1[i] - K2[i] for i in range(N)], beta)
        coeff_viol = max(0.0, lhs - params.eta / (1 - params.eta * params.C ** 2) * fn)
    tol = c0 * dt
    ok = worst <= tol and y_viol <= tol and (coeff_viol is None or coeff_viol <= tol)
    return AprioriReport(worst, margin, y_viol, coeff_viol, fn, tol, ok, params)


@dataclass(frozen=True)
class PicardInput:
    """Frozen driver arguments (U, V, L): U and V scalar per node, L (n, J), layers 0..N-1."""

    U: Sequence
    V: Sequence
    L: Sequence


def frozen_reflected_solve(model: LatticeModel, driver: DriverSpec, inputs: PicardInput, obstacle):
    """The map Phi: reflected solve with the driver evaluated at fixed inputs."""
    reward = []
    for i in range(model.N):
        nodes = np.arange(model.layer_size(i))
        reward.append(np.asarray(driver.evaluate_layer(i, nodes, model.grid.time(i), np.asarray(inputs.U[i]),
                                                       np.asarray(inputs.V[i]), np.asarray(inputs.L[i])),
                                 dtype=float))
    frozen = ProcessDriver(reward=reward, marks=driver.marks, lipschitz=0.0, name="frozen")
    Y, _, Z, K, _ = _backward.run_backward(model, frozen, list(obstacle), reflect=True)
    return Y, Z, K


def picard_contraction_ratio(model: LatticeModel, driver: DriverSpec, inputs1: PicardInput,
                             inputs2: PicardInput, beta: float, obstacle) -> float:
    """||Phi(in1) - Phi(in2)||_beta^2 / ||in1 - in2||_beta^2 (0 for identical inputs)."""
    C = driver.lipschitz
    if not C > 0:
        raise SolverPreconditionError("contraction ratio needs a driver with C > 0")
    need = EstimateParams.for_contraction(C, model.T).beta
    if beta < need * (1 - 1e-12):
        raise ValueError(f"beta={beta} is below the contraction weight 3/eta + 2C = {need}")
    N = model.N
    dU = [np.asarray(inputs1.U[i]) - np.asarray(inputs2.U[i]) for i in range(N)]
    dV = [np.asarray(inputs1.V[i]) - np.asarray(inputs2.V[i]) for i in range(N)]
    dL = [np.asarray(inputs1.L[i]) - np.asarray(inputs2.L[i]) for i in range(N)]
    den = beta_norm_sq(model, dU, beta) + beta_norm_sq(model, dV, beta)
    if model.J:
        den += beta_norm_sq(model, dL, beta)
    if den == 0.0:
        return 0.0
    Y1, Z1, K1 = frozen_reflected_solve(model, driver, inputs1, obstacle)
    Y2, Z2, K2 = frozen_reflected_solve(model, driver, inputs2, obstacle)
    num = beta_norm_sq(model, [Y1[i] - Y2[i] for i in range(N)], beta)
    num += beta_norm_sq(model, [Z1[i] - Z2[i] for i in range(N)], beta)
    if model.J:
        num += beta_norm_sq(model, [K1[i] - K2[i] for i in range(N)], beta)
    return num / den
