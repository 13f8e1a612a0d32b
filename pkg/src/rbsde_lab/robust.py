"""Robust optimal stopping under driver ambiguity: game values and saddle points.

``upper_value`` is inf over controls of sup over stopping rules, ``lower_value``
is sup over stopping rules of inf over controls. Both are computed by exact
enumeration on small subtrees and compared with the reflected solve driven by
the pointwise inf of the family.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _enumeration as en
from .drivers import AmbiguityFamily, ControlledDriver, InfDriver, inf_driver
from .errors import EnumerationCapError
from .lattice import LatticeModel
from .rbsde import RbsdeSolution, solve_rbsde
from .stopping import StoppingRule, brute_force_value, evaluate_stopped, optimal_time, eps_optimal_time

VALUE_TOL = 1e-10


@dataclass(frozen=True)
class ControlProcess:
    """Control index per node on layers 0..N-1."""

    indices: tuple

    def __post_init__(self):
        arrs = []
        for a in self.indices:
            arr = np.array(a, dtype=np.int64)
            arr.setflags(write=False)
            arrs.append(arr)
        object.__setattr__(self, "indices", tuple(arrs))

    @classmethod
    def constant(cls, model: LatticeModel, a: int) -> "ControlProcess":
        return cls([np.full(model.layer_size(i), a, dtype=np.int64) for i in range(model.N)])

    @classmethod
    def per_layer(cls, model: LatticeModel, seq) -> "ControlProcess":
        return cls([np.full(model.layer_size(i), int(seq[i]), dtype=np.int64) for i in range(model.N)])

    @classmethod
    def from_actions(cls, model: LatticeModel, actions: dict, default: int = 0) -> "ControlProcess":
        ind = [np.full(model.layer_size(i), default, dtype=np.int64) for i in range(model.N)]
        for (layer, idx), a in actions.items():
            if layer < model.N and a >= 0:
                ind[layer][idx] = a
        return cls(ind)

    def check(self, model: LatticeModel, m: int) -> None:
        model.check_layers(self.indices, "control", predictable=True)
        for a in self.indices:
            if a.size and (a.min() < 0 or a.max() >= m):
                raise ValueError(f"control values must lie in 0..{m - 1}")


def controlled(fam: AmbiguityFamily, control: ControlProcess) -> ControlledDriver:
    return ControlledDriver(family=fam, control=control.indices, name="controlled")


@dataclass(frozen=True)
class ValueResult:
    value: float
    control: ControlProcess | None
    mode: str
    exact: bool
    rule: StoppingRule | None = None
    evaluated_rules: int = 0


def _members(fam):
    if fam.size == 0:
        raise ValueError("ambiguity family is empty")
    return list(fam.members)


def upper_value(model: LatticeModel, fam: AmbiguityFamily, obstacle, S=(0, 0), *, mode: str = "auto",
                cap: int = en.DEFAULT_NODE_CAP, row_cap: int = en.DEFAULT_ROW_CAP) -> ValueResult:
    """inf over controls of sup over stopping rules of X^alpha_S(xi_tau, tau).

    ``mode="full"`` enumerates every predictable control on the subtree of S;
    ``"constant"`` solves one reflected problem per control value; ``"auto"``
    tries full and falls back to constant.
    """
    members = _members(fam)
    obstacle = list(obstacle)
    if mode in ("auto", "full") and not model.recombining:
        try:
            e = en.enumerate_values(model, members, obstacle, S, mode="reflect", cap_nodes=cap, cap_rows=row_cap)
            c = e.best("min")
            ctrl = ControlProcess.from_actions(model, e.extract(c))
            return ValueResult(float(e.root_values[c]), ctrl, "full", True)
        except EnumerationCapError:
            if mode == "full":
                raise
    vals = [float(solve_rbsde(model, d, obstacle).Y[S[0]][S[1]]) for d in members]
    a = int(np.argmin(vals))
    return ValueResult(vals[a], ControlProcess.constant(model, a), "constant", fam.size == 1)


def _rule_inf(model, members, obstacle, S, rule, cap, row_cap):
    e = en.enumerate_values(model, members, obstacle, S, mode="rule", stop_rule=rule, cap_nodes=cap,
                            cap_rows=row_cap)
    c = e.best("min")
    return float(e.root_values[c]), e


def lower_value(model: LatticeModel, fam: AmbiguityFamily, obstacle, S=(0, 0), *, mode: str = "auto",
                cap: int = en.DEFAULT_NODE_CAP, rule_cap: int = 200_000, row_cap: int = en.DEFAULT_ROW_CAP,
                reference: ControlProcess | None = None) -> ValueResult:
    """sup over stopping rules of inf over controls of X^alpha_S(xi_tau, tau).

    In ``"full"`` mode every stopping rule on the subtree of S is enumerated
    and the inner inf runs over every predictable control. Rules are visited in
    decreasing order of X^ref(tau) for a reference control, which is an upper
    bound of the inner inf, and the scan stops once that bound cannot beat the
    best exact value found. ``"per_layer"`` restricts controls to functions of
    the layer and ``"constant"`` to constant controls.
    """
    members = _members(fam)
    obstacle = list(obstacle)
    model.require_tree("lower value enumeration")
    if model.subtree_size(*S) > cap:
        raise EnumerationCapError(f"subtree of {S} exceeds the cap of {cap} nodes")
    masks = en.enumerate_rules(model, S, rule_cap)
    R = masks[0].shape[0]
    if mode == "auto":
        mode = "full"
    if mode == "full":
        if reference is None:
            sol = solve_rbsde(model, inf_driver(fam), obstacle)
            reference = argmin_control(model, fam, sol)
        ub = en.evaluate_rules(model, controlled(fam, reference), obstacle, S, masks)
        order = np.argsort(-ub, kind="stable")
        best = -math.inf
        best_rule = None
        count = 0
        for r in order:
            if ub[r] <= best:
                break
            rule = StoppingRule(en.masks_to_indicators(model, S, [m[r] for m in masks]))
            v, _ = _rule_inf(model, members, obstacle, S, rule, cap, row_cap)
            count += 1
            if v > best:
                best, best_rule = v, rule
        return ValueResult(best, None, "full", True, best_rule, count)
    h = model.N - S[0]
    if mode == "per_layer":
        seqs = list(itertools.product(range(fam.size), repeat=h))
    elif mode == "constant":
        seqs = [(a,) * h for a in range(fam.size)]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    table = np.empty((len(seqs), R))
    for s, seq in enumerate(seqs):
        ctrl = ControlProcess.per_layer(model, [0] * S[0] + list(seq))
        table[s] = en.evaluate_rules(model, controlled(fam, ctrl), obstacle, S, masks)
    inner = table.min(axis=0)
    r = int(np.argmax(inner))
    rule = StoppingRule(en.masks_to_indicators(model, S, [m[r] for m in masks]))
    return ValueResult(float(inner[r]), None, mode, fam.size == 1, rule, R)


def argmin_control(model: LatticeModel, fam: AmbiguityFamily, sol: RbsdeSolution) -> ControlProcess:
    """Lowest-index minimizer of the family at the solution's driver arguments."""
    fd = inf_driver(fam)
    out = []
    for i in range(model.N):
        nodes = np.arange(model.layer_size(i))
        out.append(fd.argmin_layer(i, nodes, model.grid.time(i), np.asarray(sol.continuation[i]),
                                   np.asarray(sol.Z[i]), np.asarray(sol.K[i])))
    return ControlProcess(out)


@dataclass(frozen=True)
class SaddleVerdict:
    certified: bool
    center: float
    left_violation: float
    right_violation: float
    sup_over_rules: float
    inf_over_controls: float
    sampled: bool


@dataclass(frozen=True)
class GameReport:
    S: tuple
    V_lower: float
    V_upper: float
    Y_S: float
    lower_mode: str
    upper_mode: str
    principle_gap: float
    selection_gap: float
    saddle: tuple | None
    saddle_verdict: SaddleVerdict | None
    solution: RbsdeSolution = field(repr=False, default=None)
    control: ControlProcess = field(repr=False, default=None)

    @property
    def certified(self) -> bool:
        return (abs(self.V_upper - self.V_lower) <= VALUE_TOL and abs(self.V_upper - self.Y_S) <= VALUE_TOL
                and self.principle_gap <= VALUE_TOL
                and (self.saddle_verdict is None or self.saddle_verdict.certified))

    def to_dict(self) -> dict:
        out = {
            "S": list(self.S),
            "V_lower": self.V_lower,
            "V_upper": self.V_upper,
            "Y_S": self.Y_S,
            "lower_mode": self.lower_mode,
            "upper_mode": self.upper_mode,
            "principle_gap": self.principle_gap,
            "selection_gap": self.selection_gap,
            "value_gap": abs(self.V_upper - self.V_lower),
            "certified": self.certified,
        }
        if self.saddle_verdict is not None:
            v = self.saddle_verdict
            out["saddle"] = {"certified": v.certified, "center": v.center, "left_violation": v.left_violation,
                             "right_violation": v.right_violation, "sampled": v.sampled}
        return out


def check_saddle(model: LatticeModel, fam: AmbiguityFamily, obstacle, S, tau: StoppingRule,
                 alpha: ControlProcess, *, cap: int = en.DEFAULT_NODE_CAP, row_cap: int = en.DEFAULT_ROW_CAP,
                 samples: int = 256, seed: int = 0) -> SaddleVerdict:
    """Check X^alpha(tau') <= X^alpha(tau) <= X^alpha'(tau) for all tau', alpha'.

    Both sides are exact enumerations when the subtree fits the caps;
    otherwise random rules and controls are sampled and the verdict is flagged.
    """
    obstacle = list(obstacle)
    d_hat = controlled(fam, alpha)
    center = evaluate_stopped(model, d_hat, obstacle, tau, S)
    sampled = False
    try:
        sup_val, _ = brute_force_value(model, d_hat, obstacle, S, cap=cap)
    except EnumerationCapError:
        sampled = True
        rng = np.random.default_rng(seed)
        sup_val = -math.inf
        for _ in range(samples):
            ind = [rng.random(model.layer_size(i)) < 0.5 for i in range(model.N + 1)]
            sup_val = max(sup_val, evaluate_stopped(model, d_hat, obstacle, StoppingRule(ind).restricted(model, S), S))
    try:
        inf_val, _ = _rule_inf(model, list(fam.members), obstacle, S, tau, cap, row_cap)
    except EnumerationCapError:
        sampled = True
        rng = np.random.default_rng(seed + 1)
        inf_val = math.inf
        for _ in range(samples):
            ctrl = ControlProcess([rng.integers(0, fam.size, model.layer_size(i)) for i in range(model.N)])
            inf_val = min(inf_val, evaluate_stopped(model, controlled(fam, ctrl), obstacle, tau, S))
    left = max(0.0, sup_val - center)
    right = max(0.0, center - inf_val)
    return SaddleVerdict(left <= VALUE_TOL and right <= VALUE_TOL, center, left, right, sup_val, inf_val, sampled)


def find_saddle(model: LatticeModel, fam: AmbiguityFamily, obstacle, S=(0, 0), *, sol: RbsdeSolution | None = None,
                cap: int = en.DEFAULT_NODE_CAP, row_cap: int = en.DEFAULT_ROW_CAP):
    """Candidate (tau*, argmin control) from the inf-driver solve, with its verdict.

    Returns ((tau, alpha) or None, verdict).
    """
    if sol is None:
        sol = solve_rbsde(model, inf_driver(fam), obstacle)
    tau = optimal_time(sol, obstacle, S, model=model)
    alpha = argmin_control(model, fam, sol)
    verdict = check_saddle(model, fam, obstacle, S, tau, alpha, cap=cap, row_cap=row_cap)
    return ((tau, alpha) if verdict.certified else None), verdict


def solve_game(model: LatticeModel, fam: AmbiguityFamily, obstacle, S=(0, 0), *, lower_mode: str = "auto",
               upper_mode: str = "auto", saddle: bool = True, cap: int = en.DEFAULT_NODE_CAP,
               row_cap: int = en.DEFAULT_ROW_CAP) -> GameReport:
    """Game values at S against the reflected solve of the inf-driver."""
    if fam.size == 0:
        raise ValueError("ambiguity family is empty")
    obstacle = list(obstacle)
    fd = inf_driver(fam)
    sol = solve_rbsde(model, fd, obstacle)
    alpha = argmin_control(model, fam, sol)
    sol_bar = solve_rbsde(model, controlled(fam, alpha), obstacle)
    principle_gap = sol.Y.max_abs_diff(sol_bar.Y)
    selection_gap = _selection_gap(model, fam, fd, sol, alpha)
    Y_S = float(sol.Y[S[0]][S[1]])
    up = upper_value(model, fam, obstacle, S, mode=upper_mode, cap=cap, row_cap=row_cap)
    low = lower_value(model, fam, obstacle, S, mode=lower_mode, cap=cap, row_cap=row_cap, reference=alpha) \
        if not model.recombining else ValueResult(math.nan, None, "unavailable", False)
    pair = None
    verdict = None
    if saddle and not model.recombining:
        pair, verdict = find_saddle(model, fam, obstacle, S, sol=sol, cap=cap, row_cap=row_cap)
    return GameReport(tuple(S), low.value, up.value, Y_S, low.mode, up.mode, principle_gap, selection_gap,
                      pair, verdict, sol, alpha)


def _selection_gap(model, fam, fd: InfDriver, sol, alpha) -> float:
    """max |f - f^alpha| at the solution's driver arguments (zero for an exact argmin)."""
    d = controlled(fam, alpha)
    out = 0.0
    for i in range(model.N):
        nodes = np.arange(model.layer_size(i))
        args = (i, nodes, model.grid.time(i), np.asarray(sol.continuation[i]), np.asarray(sol.Z[i]),
                np.asarray(sol.K[i]))
        out = max(out, float(np.max(np.abs(fd.evaluate_layer(*args) - d.evaluate_layer(*args)))))
    return out


@dataclass(frozen=True)
class CriterionVerdict:
    hitting_holds: bool
    driver_match_holds: bool
    eps_holds: bool | None
    criterion_holds: bool
    optimal: bool
    agrees: bool
    Y_S: float
    Y_alpha_S: float


def check_rbsde_optimality_criteria(model: LatticeModel, fam: AmbiguityFamily, obstacle, S, alpha: ControlProcess,
                                    *, eps: float | None = None, tol: float = VALUE_TOL) -> CriterionVerdict:
    """Evaluate the optimality criterion for a control and compare with Y_S = Y^alpha_S.

    The criterion: Y^alpha = xi at the optimal time tau*_S of the inf-driver
    solve, and f = f^alpha at the solution on [S, tau*_S). With ``eps`` the
    relaxed form Y^alpha <= xi + eps at tau^eps_S is also evaluated.
    """
    model.require_tree("criterion check")
    obstacle = list(obstacle)
    fd = inf_driver(fam)
    sol = solve_rbsde(model, fd, obstacle)
    d = controlled(fam, alpha)
    sol_a = solve_rbsde(model, d, obstacle)
    tau = optimal_time(sol, obstacle, S, model=model)
    fs = tau.first_stops(model, S)
    hit = all(np.all(np.abs(sol_a.Y[i] - obstacle[i])[fs[i]] <= tol) for i in range(model.N + 1))
    match = True
    alive = np.ones(1, dtype=bool)
    for dd, nodes in enumerate(model.subtree(*S)):
        layer = S[0] + dd
        live = alive & ~fs[layer][nodes]
        if layer < model.N and live.any():
            sel = nodes[live]
            args = (layer, sel, model.grid.time(layer), np.asarray(sol.Y[layer])[sel], np.asarray(sol.Z[layer])[sel],
                    np.asarray(sol.K[layer])[sel])
            if np.max(np.abs(fd.evaluate_layer(*args) - d.evaluate_layer(*args))) > tol:
                match = False
        alive = np.repeat(live, model.B)
    eps_ok = None
    if eps is not None:
        te = eps_optimal_time(sol, obstacle, S, eps, model=model)
        fe = te.first_stops(model, S)
        eps_ok = all(np.all((sol_a.Y[i] - obstacle[i])[fe[i]] <= eps + tol) for i in range(model.N + 1))
    crit = hit and match
    ys = float(sol.Y[S[0]][S[1]])
    ya = float(sol_a.Y[S[0]][S[1]])
    optimal = abs(ys - ya) <= tol
    return CriterionVerdict(hit, match, eps_ok, crit, optimal, crit == optimal, ys, ya)


@dataclass(frozen=True)
class GridStudy:
    meshes: tuple
    gaps: tuple
    driver_gaps: tuple
    bounds: tuple
    K: float


def eta_grid_study(model: LatticeModel, make_family, exact_inf, obstacle, meshes, C: float, S=(0, 0)) -> GridStudy:
    """Inf over grid families of mesh h versus the inf over the continuum.

    ``make_family(h)`` returns the finite family on a grid of mesh h and
    ``exact_inf`` is the driver given by the infimum over the continuum.
    The bound is K * sup |f - f_h| with K = sqrt(T) / C * exp(beta T / 2),
    beta = 3 C^2 + 2 C, the sup taken at the grid solution's arguments.
    """
    from .bsde import lemma_beta

    obstacle = list(obstacle)
    sol = solve_rbsde(model, exact_inf, obstacle)
    K = math.sqrt(model.T) / C * math.exp(lemma_beta(C) * model.T / 2.0)
    gaps, dgaps, bounds = [], [], []
    for h in meshes:
        fam = make_family(h)
        fd = inf_driver(fam)
        sh = solve_rbsde(model, fd, obstacle)
        gaps.append(abs(float(sol.Y[S[0]][S[1]]) - float(sh.Y[S[0]][S[1]])))
        g = 0.0
        for i in range(model.N):
            nodes = np.arange(model.layer_size(i))
            args = (i, nodes, model.grid.time(i), np.asarray(sh.continuation[i]), np.asarray(sh.Z[i]),
                    np.asarray(sh.K[i]))
            g = max(g, float(np.max(np.abs(exact_inf.evaluate_layer(*args) - fd.evaluate_layer(*args)))))
        dgaps.append(g)
        bounds.append(K * g)
    return GridStudy(tuple(meshes), tuple(gaps), tuple(dgaps), tuple(bounds), K)
