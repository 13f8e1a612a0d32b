"""Multiple priors: density processes, reweighted lattices and the shifted-driver equivalence.

Under the prior of control alpha the branch probabilities become
q_b = p_b (1 + beta1 dW_b + sum_j beta2_j dN_bj). The Brownian increment is
drift-corrected to dW_b - beta1 dt and each jump indicator is compensated
by its exact probability under q, so all first moments vanish exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bsde import BsdeSolution, solve_bsde
from .drivers import AmbiguityFamily, ControlledDriver, DriverSpec, PriorSpec
from .errors import LatticeError
from .lattice import AdaptedProcess, LatticeModel, build_default_lattice, moment_report, validate_model
from .robust import ControlProcess


@dataclass(frozen=True)
class DensityProcess:
    """Density Z of the prior with respect to the base measure, Z_0 = 1."""

    Z: AdaptedProcess
    control: ControlProcess


def _control(model: LatticeModel, control) -> ControlProcess:
    if isinstance(control, ControlProcess):
        return control
    if np.ndim(control) == 0:
        return ControlProcess.constant(model, int(control))
    return ControlProcess(control)


def density_process(model: LatticeModel, prior: PriorSpec, control) -> DensityProcess:
    """Z_child = Z_node (1 + beta1 dW_b + sum_j beta2_j dN_bj) along every path."""
    model.require_tree("density process")
    control = _control(model, control)
    control.check(model, prior.size)
    Z = [np.ones(1)]
    for i in range(model.N):
        fac = prior.factors(model, i, control.indices[i])
        if np.any(fac <= 0):
            raise LatticeError(f"nonpositive density factor at layer {i}")
        Z.append((Z[i][:, None] * fac).reshape(-1))
    return DensityProcess(AdaptedProcess(Z), control)


def density_means(model: LatticeModel, density: DensityProcess) -> np.ndarray:
    """E[Z_i] for every layer."""
    return np.array([float(np.dot(model.node_probabilities(i), density.Z[i])) for i in range(model.N + 1)])


def reweight_measure(model: LatticeModel, prior: PriorSpec | DensityProcess, control=None) -> LatticeModel:
    """Lattice with per-node branch data of the prior's measure.

    Accepts either a prior with a control (works on recombining lattices for
    controls that depend on the node only) or a density process.
    """
    if isinstance(prior, DensityProcess):
        model.require_tree("reweighting by a density process")
        facs = [model.gather(i, prior.Z[i + 1]) / prior.Z[i][:, None] for i in range(model.N)]
        spec = None
    else:
        spec = prior
        ctrl = _control(model, control)
        ctrl.check(model, spec.size)
        facs = [spec.factors(model, i, ctrl.indices[i]) for i in range(model.N)]
    probs, dws, dns = [], [], []
    ind = model.branching.indicator_matrix(model.J)
    for i in range(model.N):
        fac = facs[i]
        if np.any(fac <= 0):
            raise LatticeError(f"nonpositive density factor at layer {i}")
        p = model.probs(i) * fac
        dw = model.increments(i)
        if spec is not None:
            b1 = spec.b1_all(model.grid.time(i))[ctrl.indices[i]]
        else:
            # drift of the Brownian increment under q, read off the reweighted mean
            b1 = np.sum(p * dw, axis=1) / model.dt
        dw_q = dw - b1[:, None] * model.dt
        q_mark = p @ ind  # (rows, J) exact jump probabilities under q
        dn_q = ind[None, :, :] - q_mark[:, None, :]
        probs.append(p)
        dws.append(dw_q)
        dns.append(dn_q)
    return model.with_measure(probs, dws, dns, label="Q")


@dataclass(frozen=True, kw_only=True)
class _FDriver(DriverSpec):
    """F(t, z, k, alpha(node)) under a control process."""

    F: Callable | None = None
    control: Sequence = ()

    def evaluate_layer(self, layer, nodes, t, y, z, k):
        a = np.asarray(self.control[layer], dtype=np.int64)[np.asarray(nodes)]
        out = np.empty(np.shape(y))
        for m in np.unique(a):
            sel = a == m
            out[sel] = np.broadcast_to(np.asarray(self.F(t, np.asarray(z)[sel], np.asarray(k)[sel], int(m)),
                                                  dtype=float), (int(sel.sum()),))
        return out


def solve_under_prior(model: LatticeModel, prior: PriorSpec, control, F: Callable, terminal, *,
                      F_lipschitz: float = 0.0) -> BsdeSolution:
    """Backward solve on the reweighted lattice with driver F(t, z, k, alpha).

    Expectations and martingale coefficients are taken under the prior, with
    respect to the drift-corrected Brownian increment and the jump indicators
    compensated under the prior.
    """
    ctrl = _control(model, control)
    q = reweight_measure(model, prior, ctrl)
    d = _FDriver(evaluator=_pointwise_unavailable, lipschitz=F_lipschitz, marks=model.marks, depends_on_y=False,
                 F=F, control=ctrl.indices, name="F")
    return solve_bsde(q, d, terminal)


def _pointwise_unavailable(t, y, z, k):
    raise LatticeError("driver needs node indices")


def shifted_driver(model: LatticeModel, prior: PriorSpec, control, F: Callable, *,
                   F_lipschitz: float = 0.0) -> ControlledDriver:
    """Base-measure driver F + beta1 z + <beta2, k>_nu under a control process."""
    fam = AmbiguityFamily(marks=model.marks, prior=prior, F=F, F_lipschitz=F_lipschitz)
    return ControlledDriver(family=fam, control=_control(model, control).indices, name="shifted")


def driver_identity_gap(prior: PriorSpec, F: Callable, *, samples: int = 1000, seed: int = 0,
                        horizon: float = 1.0, scale: float = 2.0) -> float:
    """max |(f^a - F) - (beta1 z + sum_j beta2_j k_j lambda_j)| at random points and controls."""
    fam = AmbiguityFamily(marks=prior.marks, prior=prior, F=F)
    rng = np.random.default_rng(seed)
    lam = prior.marks.intensities
    worst = 0.0
    for _ in range(samples):
        a = int(rng.integers(0, prior.size))
        t = float(rng.uniform(0.0, horizon))
        y = float(rng.normal(0.0, scale))
        z = float(rng.normal(0.0, scale))
        k = rng.normal(0.0, scale, size=prior.marks.size)
        fa = fam.member(a).evaluate_layer(0, np.zeros(1, dtype=np.int64), t, np.array([y]), np.array([z]), k[None, :])
        Fa = np.asarray(F(t, np.array([z]), k[None, :], a), dtype=float).reshape(-1)[0]
        shift = prior.b1(a, t) * z
        b2 = prior.b2(a, t)
        for j in range(prior.marks.size):
            shift += b2[j] * k[j] * lam[j]
        worst = max(worst, abs(float(fa[0]) - Fa - shift))
    return worst


@dataclass(frozen=True)
class EquivalenceReport:
    refinements: tuple
    q_values: tuple
    p_values: tuple
    gaps: tuple
    ratios: tuple
    identity_gap: float
    density_error: float | None
    compensator_deviation: tuple
    variance_deviation: tuple
    passed: bool
    ratio_band: tuple = field(default=(0.375, 0.625))

    def to_dict(self) -> dict:
        return {
            "refinements": list(self.refinements),
            "q_values": list(self.q_values),
            "p_values": list(self.p_values),
            "gaps": list(self.gaps),
            "ratios": list(self.ratios),
            "identity_gap": self.identity_gap,
            "density_error": self.density_error,
            "compensator_deviation": list(self.compensator_deviation),
            "variance_deviation": list(self.variance_deviation),
            "ratio_band": list(self.ratio_band),
            "passed": self.passed,
        }


def compensator_deviation(model_q: LatticeModel, prior: PriorSpec, control: ControlProcess) -> float:
    """max |Q(mark j) - lambda_j (1 + beta2_j) dt| over nodes."""
    if model_q.J == 0:
        return 0.0
    ind = model_q.branching.indicator_matrix(model_q.J)
    out = 0.0
    for i in range(model_q.N):
        qj = model_q.probs(i) @ ind
        b2 = prior.b2_all(model_q.grid.time(i))[control.indices[i]]
        target = model_q.marks.lam[None, :] * (1 + b2) * model_q.dt
        out = max(out, float(np.max(np.abs(qj - target))))
    return out


def cross_check_prior_equivalence(model: LatticeModel, prior: PriorSpec, control: int, F: Callable,
                                  terminal: Callable, refinements=(8, 16, 32, 64), *, samples: int = 1000,
                                  seed: int = 0, F_lipschitz: float = 0.0,
                                  ratio_band=(0.375, 0.625)) -> EquivalenceReport:
    """Compare the prior-measure solve with the shifted-driver solve over refinements.

    ``model`` supplies T, the marks and the lattice topology; a default
    lattice is rebuilt for every N in ``refinements``. ``terminal(W, jump_counts)``
    gives the terminal values and ``control`` is a constant control index.
    Passing needs the driver identity to 1e-12 and every successive gap ratio
    inside ``ratio_band`` (or all gaps exactly zero).
    """
    ident = driver_identity_gap(prior, F, samples=samples, seed=seed, horizon=model.T)
    qv, pv, gaps, comp, var = [], [], [], [], []
    dens_err = None
    for N in refinements:
        m = build_default_lattice(model.T, N, model.marks, recombining=model.recombining)
        bad = prior.validate_on(m)
        if bad:
            raise LatticeError("; ".join(bad))
        ctrl = ControlProcess.constant(m, control)
        xi = np.asarray(terminal(m.brownian_state(N), m.jump_counts(N)), dtype=float)
        xi = np.broadcast_to(xi, (m.layer_size(N),)).copy()
        sq = solve_under_prior(m, prior, ctrl, F, xi, F_lipschitz=F_lipschitz)
        sp = solve_bsde(m, shifted_driver(m, prior, ctrl, F, F_lipschitz=F_lipschitz), xi)
        qv.append(sq.root)
        pv.append(sp.root)
        gaps.append(abs(sq.root - sp.root))
        mq = reweight_measure(m, prior, ctrl)
        if validate_model(mq):
            raise LatticeError("reweighted lattice violates its first-moment conditions")
        comp.append(compensator_deviation(mq, prior, ctrl))
        var.append(moment_report(mq)["variance_deviation"])
        if not m.recombining:
            dens = density_process(m, prior, ctrl)
            err = float(np.max(np.abs(density_means(m, dens) - 1)))
            dens_err = err if dens_err is None else max(dens_err, err)
    ratios = tuple(gaps[i + 1] / gaps[i] if gaps[i] > 0 else (0.0 if gaps[i + 1] == 0 else math.inf)
                   for i in range(len(gaps) - 1))
    if all(g == 0 for g in gaps):
        ratio_ok = True
    else:
        ratio_ok = all(ratio_band[0] <= r <= ratio_band[1] for r in ratios)
    passed = ident <= 1e-12 and ratio_ok
    return EquivalenceReport(tuple(refinements), tuple(qv), tuple(pv), tuple(gaps), ratios, ident, dens_err,
                             tuple(comp), tuple(var), passed, tuple(ratio_band))


@dataclass(frozen=True)
class RobustPriorCheck:
    inf_value: float
    grid_value: float
    constant_values: tuple
    gap: float
    exact: bool
    comparison_margin: float | None
    passed: bool


def robust_prior_check(model: LatticeModel, fam: AmbiguityFamily, obstacle, S=(0, 0), *,
                       tol: float = 1e-10) -> RobustPriorCheck:
    """Reflected solve with the pointwise-inf driver against the min over controls in the prior grid.

    The grid minimum runs over every predictable control process with values
    in the family (exact enumeration); per-constant-control values are
    reported alongside. Equality relies on the members' one-step comparison
    weights being nonnegative; their smallest value is reported.
    """
    from .rbsde import solve_rbsde
    from .robust import upper_value
    from .drivers import comparison_margin, inf_driver

    sol = solve_rbsde(model, inf_driver(fam), obstacle)
    v = float(sol.Y[S[0]][S[1]])
    res = upper_value(model, fam, obstacle, S, mode="full")
    consts = tuple(float(solve_rbsde(model, fam.member(a), obstacle).Y[S[0]][S[1]]) for a in range(fam.size))
    gap = abs(v - res.value)
    margins = [comparison_margin(model, d) for d in fam.members]
    margin = None if any(x is None for x in margins) else min(margins)
    return RobustPriorCheck(v, res.value, consts, gap, res.exact, margin, res.exact and gap <= tol)
