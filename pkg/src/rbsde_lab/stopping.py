"""Stopping rules, stopped values, optimal and eps-optimal times, brute-force oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _enumeration as en
from .bsde import lemma_beta, solve_bsde
from .drivers import DriverSpec
from .errors import LatticeError
from .lattice import AdaptedProcess, LatticeModel
from .rbsde import RbsdeSolution, solve_rbsde

HIT_TOL = 1e-12
VALUE_TOL = 1e-10


@dataclass(frozen=True)
class StoppingRule:
    """Stop indicator per node; the effective time is the first indicated node on a path."""

    indicators: tuple

    def __post_init__(self):
        ind = [np.array(a, dtype=bool) for a in self.indicators]
        ind[-1] = np.ones_like(ind[-1])
        for a in ind:
            a.setflags(write=False)
        object.__setattr__(self, "indicators", tuple(ind))

    @classmethod
    def from_region(cls, model: LatticeModel, region) -> "StoppingRule":
        """Stop where ``region(layer, t, W, jump_counts)`` is true."""
        return cls([np.asarray(region(i, model.grid.time(i), model.brownian_state(i), model.jump_counts(i)),
                               dtype=bool) & np.ones(model.layer_size(i), dtype=bool)
                    for i in range(model.N + 1)])

    @classmethod
    def immediate(cls, model: LatticeModel, S=(0, 0)) -> "StoppingRule":
        ind = [np.zeros(model.layer_size(i), dtype=bool) for i in range(model.N + 1)]
        ind[S[0]][S[1]] = True
        return cls(ind)

    @classmethod
    def at_maturity(cls, model: LatticeModel) -> "StoppingRule":
        return cls([np.zeros(model.layer_size(i), dtype=bool) for i in range(model.N + 1)])

    def first_stops(self, model: LatticeModel, S=(0, 0)) -> list:
        """Per-layer masks of the first stopping node after S (inside S's subtree)."""
        model.require_tree("first-stop masks")
        out = [np.zeros(model.layer_size(i), dtype=bool) for i in range(model.N + 1)]
        sub = model.subtree(*S)
        alive = np.ones(1, dtype=bool)
        for d, nodes in enumerate(sub):
            layer = S[0] + d
            s = alive & self.indicators[layer][nodes]
            out[layer][nodes] = s
            alive = np.repeat(alive & ~s, model.B)
        return out

    def stopping_layers(self, model: LatticeModel, S=(0, 0)) -> np.ndarray:
        """Stopping layer on every path through S (one entry per leaf of S's subtree)."""
        fs = self.first_stops(model, S)
        sub = model.subtree(*S)
        depth = len(sub) - 1
        tau = np.full(len(sub[depth]), -1, dtype=np.int64)
        for d in range(depth, -1, -1):
            layer = S[0] + d
            hit = np.repeat(fs[layer][sub[d]], model.B ** (depth - d))
            tau = np.where(hit, layer, tau)
        return tau

    def restricted(self, model: LatticeModel, S=(0, 0)) -> "StoppingRule":
        """Indicators cleared outside the subtree of S."""
        ind = [np.zeros(model.layer_size(i), dtype=bool) for i in range(model.N + 1)]
        for d, nodes in enumerate(model.subtree(*S)):
            ind[S[0] + d][nodes] = self.indicators[S[0] + d][nodes]
        return StoppingRule(ind)


@dataclass(frozen=True)
class StoppingReport:
    rule: StoppingRule
    value: float
    gap: float
    eps: float | None = None


def _check_not_before(model, rule, S):
    if model.recombining or S[0] == 0:
        return
    layer, idx = S
    while layer > 0:
        layer, idx = model.parent(layer, idx)
        if rule.indicators[layer][idx]:
            raise LatticeError(f"stopping rule stops at {(layer, idx)} before {S}")


def stopped_solution(model: LatticeModel, driver: DriverSpec, obstacle, rule: StoppingRule, S=(0, 0)):
    """BSDE solution with terminal xi_tau and driver masked after tau (on the paths through S)."""
    _check_not_before(model, rule, S)
    if not isinstance(obstacle, AdaptedProcess):
        obstacle = AdaptedProcess(obstacle)
    if S == (0, 0):
        ind = rule.indicators
    else:
        ind = rule.restricted(model, S).indicators if not model.recombining else rule.indicators
        if model.recombining:
            ind = [np.zeros_like(a) if i < S[0] else a for i, a in enumerate(ind)]
    return solve_bsde(model, driver, obstacle, stop=ind)


def evaluate_stopped(model: LatticeModel, driver: DriverSpec, obstacle, rule: StoppingRule, S=(0, 0)) -> float:
    """X_S(xi_tau, tau)."""
    sol = stopped_solution(model, driver, obstacle, rule, S)
    return float(sol.Y[S[0]][S[1]])


def _rule_from_actions(model, actions) -> StoppingRule:
    ind = [np.zeros(model.layer_size(i), dtype=bool) for i in range(model.N + 1)]
    for (layer, idx), a in actions.items():
        if a == en.STOP:
            ind[layer][idx] = True
    return StoppingRule(ind)


def brute_force_value(model: LatticeModel, driver: DriverSpec, obstacle, S=(0, 0), *,
                      cap: int = en.DEFAULT_NODE_CAP, kind: str = "max"):
    """Exact max over all stopping rules tau >= S of X_S(xi_tau, tau), with an argmax rule."""
    e = en.enumerate_values(model, [driver], list(obstacle), S, mode="free", cap_nodes=cap)
    c = e.best(kind)
    return float(e.root_values[c]), _rule_from_actions(model, e.extract(c))


def brute_force_values(model: LatticeModel, driver: DriverSpec, obstacle, *, cap: int = en.DEFAULT_NODE_CAP,
                       kind: str = "max") -> AdaptedProcess:
    """Brute-force value at every node from one enumeration over the whole tree."""
    e = en.enumerate_values(model, [driver], list(obstacle), (0, 0), mode="free", cap_nodes=cap)
    return AdaptedProcess([np.array([e.extreme((i, n), kind) for n in range(model.layer_size(i))])
                           for i in range(model.N + 1)])


def enumerate_stopping_rules(model: LatticeModel, S=(0, 0), cap: int = 200_000) -> list:
    """All stopping rules on the subtree of S as :class:`StoppingRule` objects."""
    masks = en.enumerate_rules(model, S, cap)
    R = masks[0].shape[0]
    return [StoppingRule(en.masks_to_indicators(model, S, [m[r] for m in masks])) for r in range(R)]


def evaluate_all_rules(model: LatticeModel, driver: DriverSpec, obstacle, S=(0, 0), cap: int = 200_000):
    """(first-stop masks, values) for every stopping rule on the subtree of S."""
    masks = en.enumerate_rules(model, S, cap)
    return masks, en.evaluate_rules(model, driver, list(obstacle), S, masks)


def _first_hitting(model, sol, obstacle, S, level) -> StoppingRule:
    xi = obstacle if obstacle is not None else sol.obstacle
    ind = []
    for i in range(model.N + 1):
        hit = sol.Y[i] <= xi[i] + level
        if i < S[0]:
            hit = np.zeros_like(hit)
        ind.append(hit)
    rule = StoppingRule(ind)
    if not model.recombining and S != (0, 0):
        rule = rule.restricted(model, S)
    return rule


def eps_optimal_time(sol: RbsdeSolution, obstacle, S=(0, 0), eps: float = 0.01, *, model=None) -> StoppingRule:
    """First time after S with Y <= xi + eps."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    model = model if model is not None else _model_of(sol)
    return _first_hitting(model, sol, obstacle, S, eps)


def optimal_time(sol: RbsdeSolution, obstacle, S=(0, 0), *, model=None) -> StoppingRule:
    """First time after S with Y = xi (within the hitting tolerance)."""
    model = model if model is not None else _model_of(sol)
    return _first_hitting(model, sol, obstacle, S, HIT_TOL)


def minimal_positive_gap(sol: RbsdeSolution, obstacle=None) -> float:
    xi = obstacle if obstacle is not None else sol.obstacle
    gaps = np.concatenate([np.asarray(sol.Y[i] - xi[i]) for i in range(len(sol.Y))])
    pos = gaps[gaps > HIT_TOL]
    return float(pos.min()) if pos.size else math.inf


def tilde_stopping_time(sol: RbsdeSolution, obstacle, S=(0, 0), *, model=None) -> StoppingRule:
    """Limit of the eps-optimal times as eps decreases to 0.

    The rules are constant once eps is below the smallest positive gap
    Y - xi, so half that gap gives the limit.
    """
    g = minimal_positive_gap(sol, obstacle)
    eps = g / 2 if math.isfinite(g) else 1.0
    return eps_optimal_time(sol, obstacle, S, eps, model=model)


def eps_gap_bound(C: float, T: float, eps: float) -> float:
    """Certified gap eps * exp(beta T / 2) with beta = 3 C^2 + 2 C."""
    return eps * math.exp(lemma_beta(C) * T / 2.0)


def _model_of(sol):
    m = getattr(sol, "model", None)
    if m is None:
        raise ValueError("pass model= explicitly")
    return m


@dataclass(frozen=True)
class OptimalityVerdict:
    optimal: bool
    max_deviation: float
    oracle_agrees: bool | None
    oracle_value: float | None
    rule_value: float


def check_optimality_criterion(model: LatticeModel, driver: DriverSpec, obstacle, sol: RbsdeSolution,
                               rule: StoppingRule, S=(0, 0), *, brute_cap: int = en.DEFAULT_NODE_CAP,
                               tol: float = VALUE_TOL) -> OptimalityVerdict:
    """Is Y = X(xi_rule, rule) on every node between S and the rule's stopping time?"""
    xs = stopped_solution(model, driver, obstacle, rule, S)
    if model.recombining:
        region = [np.ones(model.layer_size(i), dtype=bool) for i in range(model.N + 1)]
    else:
        region = _region(model, rule, S, closed=True)
    dev = 0.0
    for i in range(model.N + 1):
        if region[i].any():
            dev = max(dev, float(np.max(np.abs(sol.Y[i] - xs.Y[i])[region[i]])))
    value = float(xs.Y[S[0]][S[1]])
    agrees = None
    oracle = None
    if not model.recombining and model.subtree_size(*S) <= brute_cap:
        oracle, _ = brute_force_value(model, driver, obstacle, S, cap=brute_cap)
        agrees = (dev <= tol) == (abs(oracle - value) <= tol)
    return OptimalityVerdict(dev <= tol, dev, agrees, oracle, value)


def earlier_optimal_gap(model: LatticeModel, driver: DriverSpec, obstacle, rule: StoppingRule, S=(0, 0), *,
                        cap: int = en.DEFAULT_NODE_CAP) -> tuple:
    """Best value of any rule that stops strictly before ``rule`` on some path.

    For each node n in [S, tau) the enumeration forces a stop at n and
    continuation at the nodes between S and n. Returns (best value, node
    attaining it), or (-inf, None) when ``rule`` stops at S.
    """
    region = _region(model, rule, S, closed=False)
    best = -math.inf
    arg = None
    for layer in range(S[0], model.N + 1):
        for idx in np.nonzero(region[layer])[0]:
            node = (layer, int(idx))
            cons = {node: "stop"}
            up = node
            while up[0] > S[0]:
                up = model.parent(*up)
                cons[up] = "continue"
            e = en.enumerate_values(model, [driver], list(obstacle), S, mode="free", constraints=cons,
                                    cap_nodes=cap)
            v = float(e.root_values.max())
            if v > best:
                best, arg = v, node
    return best, arg


def _region(model, rule, S, closed: bool) -> list:
    """Nodes of [S, tau] (closed) or [S, tau) on the paths through S."""
    out = [np.zeros(model.layer_size(i), dtype=bool) for i in range(model.N + 1)]
    fs = rule.first_stops(model, S)
    alive = np.ones(1, dtype=bool)
    for d, nodes in enumerate(model.subtree(*S)):
        layer = S[0] + d
        s = fs[layer][nodes]
        out[layer][nodes] = alive if closed else alive & ~s
        alive = np.repeat(alive & ~s, model.B)
    return out


def risk_value_function(model: LatticeModel, driver: DriverSpec, obstacle, S=(0, 0)) -> float:
    """v(S) = -Y_S for the reflected solve."""
    sol = solve_rbsde(model, driver, obstacle)
    return -float(sol.Y[S[0]][S[1]])


def stopping_region_triples(model: LatticeModel, rule: StoppingRule) -> list:
    """(t, node index, stop) rows for external plotting."""
    out = []
    for i in range(model.N + 1):
        t = model.grid.time(i)
        for n, s in enumerate(rule.indicators[i]):
            out.append((t, n, int(s)))
    return out
