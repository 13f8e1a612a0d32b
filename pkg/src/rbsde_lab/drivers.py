"""Drivers f(t, y, z, k) with Lipschitz and jump-monotonicity metadata.

Evaluators are vectorized: ``t`` is a scalar, ``y`` and ``z`` have shape
(rows,) and ``k`` has shape (rows, J). Solvers call
``driver.evaluate_layer(layer, nodes, t, y, z, k)`` so that node-dependent
drivers (running rewards, control processes) can see where they are.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DriverError
from .lattice import LatticeModel, MarkSet

ROYER_TOL = 1e-10


def _const_in_time(v):
    arr = np.asarray(v, dtype=float)
    return lambda t: arr


def _as_time_fn(v) -> Callable:
    return v if callable(v) else _const_in_time(v)


@dataclass(frozen=True, kw_only=True)
class DriverSpec:
    """A Lipschitz driver.

    Attributes:
        evaluator: vectorized f(t, y, z, k).
        lipschitz: declared constant C with
            |f(y1,z1,k1) - f(y2,z2,k2)| <= C (|dy| + |dz| + ||dk||_nu).
        marks: the mark set defining ||.||_nu.
        theta: optional oracle theta(t, x, pi, l1, l2) -> (rows, J) with
            f(t,x,pi,l1) - f(t,x,pi,l2) >= <theta, l1 - l2>_nu.
        psi: declared bound |theta_j| <= psi_j.
        theta_strict: theta > -1 holds (strict form of the jump condition).
    """

    evaluator: Callable | None = None
    lipschitz: float | None = None
    marks: MarkSet = field(default_factory=MarkSet)
    theta: Callable | None = None
    psi: tuple | None = None
    depends_on_y: bool = True
    depends_on_z: bool = True
    depends_on_k: bool = True
    theta_strict: bool = False
    name: str = "driver"

    def __post_init__(self):
        if self.lipschitz is None or not (math.isfinite(self.lipschitz) and self.lipschitz >= 0):
            raise DriverError(f"driver {self.name!r}: Lipschitz constant must be finite and >= 0")

    @property
    def J(self) -> int:
        return self.marks.size

    def evaluate_layer(self, layer: int, nodes, t: float, y, z, k) -> np.ndarray:
        out = np.asarray(self.evaluator(t, y, z, k), dtype=float)
        return np.broadcast_to(out, np.shape(y))

    def __call__(self, t, y, z, k=()):
        return eval_driver(self, t, y, z, k)

    def comparison_weights(self, model: LatticeModel, layer: int) -> np.ndarray | None:
        """One-step weights of the implicit scheme, or None when unknown."""
        return None


def eval_driver(d: DriverSpec, t: float, y: float, z: float, k=()) -> float:
    """Evaluate a driver at a single point."""
    k = np.asarray(k, dtype=float).reshape(-1)
    if k.shape[0] != d.J:
        raise DriverError(f"k must have length {d.J}, got {k.shape[0]}")
    vals = [t, y, z, *k.tolist()]
    if not all(math.isfinite(float(v)) for v in vals):
        raise DriverError("driver inputs must be finite")
    out = d.evaluate_layer(0, np.zeros(1, dtype=np.int64), float(t), np.array([float(y)]),
                           np.array([float(z)]), k[None, :])
    val = float(np.asarray(out).reshape(-1)[0])
    if not math.isfinite(val):
        raise DriverError(f"driver {d.name!r} returned a non-finite value")
    return val


def zero_driver(marks: MarkSet | None = None) -> DriverSpec:
    marks = marks or MarkSet()
    return DriverSpec(evaluator=lambda t, y, z, k: np.zeros(np.shape(y)), lipschitz=0.0, marks=marks,
                      theta=lambda t, x, p, l1, l2: np.zeros(np.shape(l1)), psi=(0.0,) * marks.size,
                      depends_on_y=False, depends_on_z=False, depends_on_k=False, theta_strict=True,
                      name="zero")


def constant_driver(c: float, marks: MarkSet | None = None) -> DriverSpec:
    marks = marks or MarkSet()
    c = float(c)
    return DriverSpec(evaluator=lambda t, y, z, k: np.full(np.shape(y), c), lipschitz=0.0, marks=marks,
                      theta=lambda t, x, p, l1, l2: np.zeros(np.shape(l1)), psi=(0.0,) * marks.size,
                      depends_on_y=False, depends_on_z=False, depends_on_k=False, theta_strict=True,
                      name=f"constant:{c!r}")


def time_driver(fn: Callable[[float], float], marks: MarkSet | None = None, name: str = "time") -> DriverSpec:
    """Driver f(t) that ignores (y, z, k)."""
    marks = marks or MarkSet()
    return DriverSpec(evaluator=lambda t, y, z, k: np.full(np.shape(y), float(fn(t))), lipschitz=0.0,
                      marks=marks, theta=lambda t, x, p, l1, l2: np.zeros(np.shape(l1)),
                      psi=(0.0,) * marks.size, depends_on_y=False, depends_on_z=False,
                      depends_on_k=False, theta_strict=True, name=name)


@dataclass(frozen=True, kw_only=True)
class ProcessDriver(DriverSpec):
    """Running reward given per node: f = reward[layer][node], independent of (y, z, k)."""

    reward: Sequence = ()

    def __post_init__(self):
        object.__setattr__(self, "depends_on_y", False)
        object.__setattr__(self, "depends_on_z", False)
        object.__setattr__(self, "depends_on_k", False)
        object.__setattr__(self, "theta_strict", True)
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", 0.0)
        if self.evaluator is None:
            object.__setattr__(self, "evaluator", _no_pointwise)
        super().__post_init__()

    def evaluate_layer(self, layer, nodes, t, y, z, k):
        return np.asarray(self.reward[layer], dtype=float)[np.asarray(nodes)]

    def comparison_weights(self, model, layer):
        return model.probs(layer)


def _no_pointwise(t, y, z, k):
    raise DriverError("a node-dependent driver cannot be evaluated without node indices")


@dataclass(frozen=True, kw_only=True)
class MonotoneJumpDriver(DriverSpec):
    """f(t, y, z, k) = g(t, y, z) + <gamma_t, k>_nu with gamma_j >= -1 + delta.

    ``base`` is vectorized g(t, y, z) with Lipschitz constant ``base_lipschitz``
    in (y, z). ``gamma`` is a vector or a function of time returning one; ``psi``
    bounds |gamma_j| and defaults to |gamma| for constant gamma.
    """

    base: Callable | None = None
    base_lipschitz: float = 0.0
    gamma: object = ()
    delta: float = 0.0

    def __post_init__(self):
        if self.base is None:
            raise DriverError("MonotoneJumpDriver needs a base function g(t, y, z)")
        if not self.delta > 0:
            raise DriverError("MonotoneJumpDriver needs delta > 0")
        J = self.marks.size
        gamma_fn = _as_time_fn(self.gamma)
        if not callable(self.gamma):
            g = np.asarray(self.gamma, dtype=float).reshape(-1)
            if g.shape[0] != J:
                raise DriverError(f"gamma must have length {J}")
            if np.any(g < -1 + self.delta - 1e-15):
                raise DriverError("gamma_j >= -1 + delta is violated")
            object.__setattr__(self, "gamma", tuple(g.tolist()))
            gamma_fn = _const_in_time(g)
            if self.psi is None:
                object.__setattr__(self, "psi", tuple(np.abs(g).tolist()))
        if self.psi is None:
            raise DriverError("time-dependent gamma requires a declared psi bound")
        psi = np.asarray(self.psi, dtype=float)
        gnorm = float(np.sqrt(np.sum(psi ** 2 * self.marks.lam))) if J else 0.0
        base = self.base
        marks = self.marks

        def evaluator(t, y, z, k):
            out = np.asarray(base(t, y, z), dtype=float)
            if J:
                out = out + np.asarray(k, dtype=float) @ (np.asarray(gamma_fn(t)) * marks.lam)
            return out

        object.__setattr__(self, "_gamma_fn", gamma_fn)
        object.__setattr__(self, "evaluator", evaluator)
        object.__setattr__(self, "theta",
                           lambda t, x, p, l1, l2: np.broadcast_to(np.asarray(gamma_fn(t), dtype=float),
                                                                   np.shape(l1)))
        object.__setattr__(self, "theta_strict", True)
        object.__setattr__(self, "depends_on_k", J > 0)
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", max(float(self.base_lipschitz), gnorm))
        super().__post_init__()

    def gamma_at(self, t: float) -> np.ndarray:
        return np.asarray(self._gamma_fn(t), dtype=float)

    def comparison_weights(self, model: LatticeModel, layer: int) -> np.ndarray:
        return monotone_weights(model, layer, self.gamma_at(model.grid.time(layer)), self.base_lipschitz)


def monotone_weights(model: LatticeModel, layer: int, gamma, base_lipschitz: float) -> np.ndarray:
    """Worst-case sensitivity of one implicit step to each child value.

    For f = g + <gamma, k>_nu with g C_g-Lipschitz in z, the derivative of the
    step value with respect to child b is proportional to
    ``p_b + dt sum_j gamma_j lambda_j dk_j/dv_b + c dt dz/dv_b`` for some
    |c| <= C_g. Nonnegative weights make the step monotone in the children.
    Returns (n_layer, B).
    """
    op = model.operator(layer)  # (rows, J+2, B)
    p = model.probs(layer)
    dt = model.dt
    gl = np.asarray(gamma, dtype=float) * model.marks.lam
    jump = np.einsum("j,rjb->rb", gl, op[:, 2:, :]) if model.J else 0.0
    return p + dt * jump - base_lipschitz * dt * np.abs(op[:, 1, :])


def comparison_margin(model: LatticeModel, driver: DriverSpec) -> float | None:
    """Smallest one-step weight over the lattice; None when not available."""
    out = math.inf
    for i in range(model.N):
        w = driver.comparison_weights(model, i)
        if w is None:
            return None
        out = min(out, float(np.min(w)))
    return out


# ambiguity ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorSpec:
    """Girsanov parameters per control: beta1(t) in [-C, C], beta2(t) >= C1 > -1.

    ``beta1[a]`` is a number or a function of t; ``beta2[a]`` a length-J vector
    or a function of t returning one.
    """

    beta1: tuple
    beta2: tuple
    marks: MarkSet
    C: float
    C1: float = -0.5
    psi: tuple | None = None

    def __post_init__(self):
        if len(self.beta1) != len(self.beta2) or not self.beta1:
            raise DriverError("beta1 and beta2 need one entry per control (at least one)")
        if not self.C1 > -1:
            raise DriverError("C1 must be > -1")
        if not self.C >= 0:
            raise DriverError("C must be >= 0")
        J = self.marks.size
        b1 = []
        b2 = []
        for a, (x, v) in enumerate(zip(self.beta1, self.beta2)):
            if not callable(x):
                x = float(x)
            if not callable(v):
                v = tuple(np.asarray(v, dtype=float).reshape(-1).tolist())
                if len(v) != J:
                    raise DriverError(f"beta2 of control {a} must have length {J}")
            b1.append(x)
            b2.append(v)
        object.__setattr__(self, "beta1", tuple(b1))
        object.__setattr__(self, "beta2", tuple(b2))
        if self.psi is None:
            if any(callable(v) for v in b2):
                raise DriverError("time-dependent beta2 requires a declared psi bound")
            psi = np.max(np.abs(np.array([v for v in b2]).reshape(len(b2), J)), axis=0) if J else np.zeros(0)
            object.__setattr__(self, "psi", tuple(psi.tolist()))
        self.check_bounds([0.0])

    @property
    def size(self) -> int:
        return len(self.beta1)

    def b1(self, a: int, t: float) -> float:
        x = self.beta1[a]
        return float(x(t)) if callable(x) else x

    def b2(self, a: int, t: float) -> np.ndarray:
        v = self.beta2[a]
        return np.asarray(v(t) if callable(v) else v, dtype=float).reshape(-1)

    def b1_all(self, t: float) -> np.ndarray:
        return np.array([self.b1(a, t) for a in range(self.size)])

    def b2_all(self, t: float) -> np.ndarray:
        return np.array([self.b2(a, t) for a in range(self.size)]).reshape(self.size, self.marks.size)

    def check_bounds(self, times) -> None:
        psi = np.asarray(self.psi, dtype=float)
        for t in times:
            b1 = self.b1_all(t)
            b2 = self.b2_all(t)
            if np.any(np.abs(b1) > self.C + 1e-15):
                raise DriverError(f"|beta1| <= C={self.C} violated at t={t}")
            if b2.size and np.any(b2 < self.C1 - 1e-15):
                raise DriverError(f"beta2 >= C1={self.C1} violated at t={t}")
            if b2.size and np.any(np.abs(b2) > psi[None, :] + 1e-15):
                raise DriverError(f"|beta2| <= psi violated at t={t}")

    def factors(self, model: LatticeModel, layer: int, controls, nodes=None) -> np.ndarray:
        """Density factors 1 + beta1 dW_b + sum_j beta2_j dN_bj, shape (rows, B)."""
        t = model.grid.time(layer)
        a = np.asarray(controls, dtype=np.int64)
        b1 = self.b1_all(t)[a]
        b2 = self.b2_all(t)[a]
        dw = model.increments(layer, nodes)
        dn = model.compensated(layer, nodes)
        out = 1.0 + b1[:, None] * dw
        if model.J:
            out = out + np.einsum("rbj,rj->rb", dn, b2)
        return out

    def validate_on(self, model: LatticeModel) -> list:
        """Violations of the bounds and of strict positivity of every factor."""
        out = []
        try:
            self.check_bounds(model.times[:-1])
        except DriverError as exc:
            out.append(str(exc))
        for i in range(model.N):
            for a in range(self.size):
                f = self.factors(model, i, np.full(1, a), nodes=np.zeros(1, dtype=np.int64))
                if np.any(f <= 0):
                    out.append(f"nonpositive density factor for control {a} at layer {i}")
        return out


@dataclass(frozen=True, kw_only=True)
class AmbiguityFamily:
    """Finite family of drivers indexed by controls 0..m-1.

    Either ``members`` lists the drivers explicitly, or ``prior`` and ``F``
    define them through f^a = F(t, z, k, a) + beta1(t, a) z + <beta2(t, a), k>_nu.
    ``F`` is vectorized in (z, k) with scalar control index ``a``; ``F_lipschitz``
    bounds it in (z, k) and ``F_theta`` is its jump coefficient (a number or a
    length-J vector, >= -1 - C1).
    """

    marks: MarkSet = field(default_factory=MarkSet)
    members: tuple = ()
    prior: PriorSpec | None = None
    F: Callable | None = None
    F_lipschitz: float = 0.0
    F_theta: object = 0.0
    F_base_lipschitz: float | None = None
    lipschitz: float | None = None
    labels: tuple = ()

    def __post_init__(self):
        if self.prior is not None:
            if self.members:
                raise DriverError("give either explicit members or prior parameters, not both")
            members = tuple(_prior_member(self, a) for a in range(self.prior.size))
            object.__setattr__(self, "members", members)
        members = tuple(self.members)
        if not members:
            raise DriverError("ambiguity family is empty")
        for d in members:
            if d.marks != self.marks:
                raise DriverError("all members must share the family's mark set")
        object.__setattr__(self, "members", members)
        shared = max(d.lipschitz for d in members)
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", shared)
        elif self.lipschitz + 1e-15 < shared:
            raise DriverError(f"declared shared constant {self.lipschitz} is below a member's {shared}")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"a{i}" for i in range(len(members))))

    @property
    def size(self) -> int:
        return len(self.members)

    def member(self, a: int) -> DriverSpec:
        if not 0 <= a < self.size:
            raise DriverError(f"control {a} not in 0..{self.size - 1}")
        return self.members[a]

    def subfamily(self, controls: Sequence[int]) -> "AmbiguityFamily":
        return AmbiguityFamily(marks=self.marks, members=tuple(self.members[a] for a in controls),
                               lipschitz=self.lipschitz, labels=tuple(self.labels[a] for a in controls))


def _prior_member(fam: AmbiguityFamily, a: int) -> DriverSpec:
    if fam.F is None:
        raise DriverError("prior-form family needs F")
    return driver_from_prior(fam, a)


def driver_from_prior(fam: AmbiguityFamily, a: int) -> DriverSpec:
    """P-form driver F(t, z, k, a) + beta1(t, a) z + <beta2(t, a), k>_nu."""
    prior = fam.prior
    if prior is None or fam.F is None:
        raise DriverError("family has no prior parameterization")
    if not 0 <= a < prior.size:
        raise DriverError(f"control {a} not in 0..{prior.size - 1}")
    marks = fam.marks
    F = fam.F
    lam = marks.lam

    def evaluator(t, y, z, k):
        z = np.asarray(z, dtype=float)
        out = np.asarray(F(t, z, k, a), dtype=float) + prior.b1(a, t) * z
        if marks.size:
            out = out + np.asarray(k, dtype=float) @ (prior.b2(a, t) * lam)
        return out

    ftheta = np.broadcast_to(np.asarray(fam.F_theta, dtype=float), (marks.size,))

    def theta(t, x, p, l1, l2):
        return np.broadcast_to(ftheta + prior.b2(a, t), np.shape(l1))

    psi = np.asarray(prior.psi, dtype=float) + np.abs(ftheta)
    bnorm = float(np.sqrt(np.sum(np.asarray(prior.psi) ** 2 * lam))) if marks.size else 0.0
    C = fam.F_lipschitz + max(prior.C, bnorm)
    strict = bool(np.all(ftheta + prior.C1 > -1))
    return _PriorDriver(evaluator=evaluator, lipschitz=C, marks=marks, theta=theta, psi=tuple(psi.tolist()),
                        depends_on_y=False, theta_strict=strict, name=f"prior:{a}",
                        prior=prior, control=a, F_theta=tuple(ftheta.tolist()),
                        F_base_lipschitz=fam.F_base_lipschitz)


@dataclass(frozen=True, kw_only=True)
class _PriorDriver(DriverSpec):
    prior: PriorSpec | None = None
    control: int = 0
    F_theta: tuple = ()
    F_base_lipschitz: float | None = None

    def comparison_weights(self, model, layer):
        # only available when F splits as g(t, z) + <F_theta, k>_nu with g Lipschitz in z
        if self.F_base_lipschitz is None:
            return None
        t = model.grid.time(layer)
        gamma = np.asarray(self.F_theta) + self.prior.b2(self.control, t)
        return monotone_weights(model, layer, gamma, self.F_base_lipschitz + abs(self.prior.b1(self.control, t)))


@dataclass(frozen=True, kw_only=True)
class InfDriver(DriverSpec):
    """Pointwise minimum over the members of a family."""

    family: AmbiguityFamily | None = None

    def _stack(self, layer, nodes, t, y, z, k):
        return np.stack([np.broadcast_to(np.asarray(d.evaluate_layer(layer, nodes, t, y, z, k), dtype=float),
                                         np.shape(y)) for d in self.family.members])

    def evaluate_layer(self, layer, nodes, t, y, z, k):
        return np.min(self._stack(layer, nodes, t, y, z, k), axis=0)

    def argmin_layer(self, layer, nodes, t, y, z, k) -> np.ndarray:
        """Lowest control index attaining the minimum, per row."""
        return np.argmin(self._stack(layer, nodes, t, y, z, k), axis=0)

    def argmin_selector(self, t, y, z, k=()) -> int:
        k = np.asarray(k, dtype=float).reshape(1, -1)
        return int(self.argmin_layer(0, np.zeros(1, dtype=np.int64), float(t), np.array([float(y)]),
                                     np.array([float(z)]), k)[0])

    def comparison_weights(self, model, layer):
        ws = [d.comparison_weights(model, layer) for d in self.family.members]
        if any(w is None for w in ws):
            return None
        return np.min(np.stack(ws), axis=0)


def inf_driver(fam: AmbiguityFamily) -> InfDriver:
    """Driver min_a f^a with argmin selection (ties to the lowest index)."""
    if fam.size == 0:
        raise DriverError("ambiguity family is empty")
    members = fam.members

    def evaluator(t, y, z, k):
        return np.min(np.stack([np.broadcast_to(np.asarray(d.evaluator(t, y, z, k), dtype=float), np.shape(y))
                                for d in members]), axis=0)

    theta = None
    if all(d.theta is not None for d in members):
        def theta(t, x, p, l1, l2):
            # the member attaining the min at l1 gives a valid coefficient
            vals = np.stack([np.broadcast_to(np.asarray(d.evaluator(t, x, p, l1), dtype=float), np.shape(x))
                             for d in members])
            idx = np.argmin(vals, axis=0)
            th = np.stack([np.broadcast_to(d.theta(t, x, p, l1, l2), np.shape(l1)) for d in members])
            return th[idx, np.arange(len(idx))]

    psi = None
    if all(d.psi is not None for d in members):
        psi = tuple(np.max(np.array([d.psi for d in members]).reshape(len(members), fam.marks.size),
                           axis=0).tolist())
    return InfDriver(evaluator=evaluator, lipschitz=fam.lipschitz, marks=fam.marks, theta=theta, psi=psi,
                     depends_on_y=any(d.depends_on_y for d in members),
                     depends_on_z=any(d.depends_on_z for d in members),
                     depends_on_k=any(d.depends_on_k for d in members),
                     theta_strict=all(d.theta_strict for d in members), name="inf", family=fam)


@dataclass(frozen=True, kw_only=True)
class ControlledDriver(DriverSpec):
    """Driver f^{alpha(node)} for a control process alpha (one index per node, layers 0..N-1)."""

    family: AmbiguityFamily | None = None
    control: Sequence = ()

    def __post_init__(self):
        if self.evaluator is None:
            object.__setattr__(self, "evaluator", _no_pointwise)
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", self.family.lipschitz)
        object.__setattr__(self, "marks", self.family.marks)
        object.__setattr__(self, "depends_on_y", any(d.depends_on_y for d in self.family.members))
        object.__setattr__(self, "theta_strict", all(d.theta_strict for d in self.family.members))
        super().__post_init__()

    def evaluate_layer(self, layer, nodes, t, y, z, k):
        a = np.asarray(self.control[layer], dtype=np.int64)[np.asarray(nodes)]
        out = np.empty(np.shape(y))
        for m in np.unique(a):
            sel = a == m
            out[sel] = np.broadcast_to(self.family.members[m].evaluate_layer(
                layer, np.asarray(nodes)[sel], t, np.asarray(y)[sel], np.asarray(z)[sel],
                np.asarray(k)[sel]), (int(sel.sum()),))
        return out

    def comparison_weights(self, model, layer):
        ws = [d.comparison_weights(model, layer) for d in self.family.members]
        if any(w is None for w in ws):
            return None
        a = np.asarray(self.control[layer], dtype=np.int64)
        return np.stack(ws)[a, np.arange(len(a))]


# sampling checks -------------------------------------------------------------------

@dataclass(frozen=True)
class RoyerReport:
    status: str
    max_violation: float
    theta_bound_violation: float
    psi_violation: float
    strict_margin: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _sample_points(rng, n, J, horizon, scale):
    t = rng.uniform(0.0, horizon, size=n)
    x = rng.normal(0.0, scale, size=n)
    p = rng.normal(0.0, scale, size=n)
    l1 = rng.normal(0.0, scale, size=(n, J))
    l2 = rng.normal(0.0, scale, size=(n, J))
    return t, x, p, l1, l2


def _pointwise(d: DriverSpec, t, y, z, k) -> np.ndarray:
    out = np.empty(len(t))
    for i in range(len(t)):
        out[i] = d.evaluate_layer(0, np.zeros(1, dtype=np.int64), float(t[i]), y[i:i + 1], z[i:i + 1],
                                  k[i:i + 1])[0]
    return out


def check_royer(d: DriverSpec, samples: int = 1000, seed: int = 0, horizon: float = 1.0,
                scale: float = 2.0) -> RoyerReport:
    """Sample f(l1) - f(l2) >= <theta, l1 - l2>_nu and theta >= -1."""
    if d.theta is None:
        return RoyerReport("unverifiable", math.nan, math.nan, math.nan, math.nan, 0)
    rng = np.random.default_rng(seed)
    J = d.J
    t, x, p, l1, l2 = _sample_points(rng, samples, J, horizon, scale)
    f1 = _pointwise(d, t, x, p, l1)
    f2 = _pointwise(d, t, x, p, l2)
    th = np.empty((samples, J))
    for i in range(samples):
        th[i] = np.asarray(d.theta(float(t[i]), x[i:i + 1], p[i:i + 1], l1[i:i + 1], l2[i:i + 1]),
                           dtype=float).reshape(J)
    viol = float(np.max(d.marks.inner(th, l1 - l2) - (f1 - f2))) if J else float(np.max(f2 - f1))
    bound = float(np.max(-1.0 - th)) if J else -math.inf
    psi_v = float(np.max(np.abs(th) - np.asarray(d.psi)[None, :])) if (J and d.psi is not None) else -math.inf
    strict_margin = float(np.min(th + 1.0)) if J else math.inf
    ok = viol <= ROYER_TOL and bound <= ROYER_TOL and psi_v <= ROYER_TOL
    if d.theta_strict and J and strict_margin <= 0:
        ok = False
    return RoyerReport("pass" if ok else "fail", max(viol, 0.0), max(bound, 0.0), max(psi_v, 0.0),
                       strict_margin, samples)


def check_lipschitz(d: DriverSpec, samples: int = 1000, seed: int = 0, horizon: float = 1.0,
                    scale: float = 2.0, warn: bool = True) -> float:
    """Largest observed |df| / (|dy| + |dz| + ||dk||_nu) over random pairs."""
    rng = np.random.default_rng(seed)
    J = d.J
    t = rng.uniform(0.0, horizon, size=samples)
    y1, y2, z1, z2 = (rng.normal(0.0, scale, size=samples) for _ in range(4))
    k1 = rng.normal(0.0, scale, size=(samples, J))
    k2 = rng.normal(0.0, scale, size=(samples, J))
    f1 = _pointwise(d, t, y1, z1, k1)
    f2 = _pointwise(d, t, y2, z2, k2)
    dist = np.abs(y1 - y2) + np.abs(z1 - z2) + (d.marks.norm(k1 - k2) if J else 0.0)
    ratio = float(np.max(np.abs(f1 - f2) / dist))
    if warn and ratio > d.lipschitz * (1 + 1e-9) + 1e-12:
        warnings.warn(f"driver {d.name!r}: observed Lipschitz ratio {ratio:.6g} exceeds "
                      f"declared {d.lipschitz:.6g}", RuntimeWarning, stacklevel=2)
    return ratio


# named built-ins ---------------------------------------------------------------------

def linear_driver(a: float, b: float, gamma: Sequence[float], marks: MarkSet) -> DriverSpec:
    """f = a y + b z + <gamma, k>_nu."""
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    if gamma.shape[0] != marks.size:
        raise DriverError(f"linear driver needs {marks.size} gamma values, got {gamma.shape[0]}")
    a, b = float(a), float(b)
    base = lambda t, y, z: a * np.asarray(y) + b * np.asarray(z)  # noqa: E731
    name = "linear:" + ",".join(repr(v) for v in [a, b] + gamma.tolist())
    if marks.size == 0 or np.min(gamma) > -1:
        delta = 1.0 if marks.size == 0 else float(np.min(gamma) + 1.0)
        d = MonotoneJumpDriver(base=base, base_lipschitz=max(abs(a), abs(b)), gamma=tuple(gamma.tolist()),
                               delta=delta, marks=marks, name=name)
        object.__setattr__(d, "depends_on_y", a != 0)
        object.__setattr__(d, "depends_on_z", b != 0)
        return d
    lam = marks.lam
    gnorm = float(np.sqrt(np.sum(gamma ** 2 * lam)))
    return DriverSpec(evaluator=lambda t, y, z, k: base(t, y, z) + np.asarray(k) @ (gamma * lam),
                      lipschitz=max(abs(a), abs(b), gnorm), marks=marks,
                      theta=lambda t, x, p, l1, l2: np.broadcast_to(gamma, np.shape(l1)),
                      psi=tuple(np.abs(gamma).tolist()), depends_on_y=a != 0, depends_on_z=b != 0,
                      theta_strict=False, name=name)


def parse_driver(spec, marks: MarkSet) -> DriverSpec:
    """Build a driver from a named built-in.

    Accepted forms: ``"zero"``, ``"constant:c"``, ``"linear:a,b,gamma_1,...,gamma_J"``
    or the equivalent mappings ``{"type": "zero"}``, ``{"type": "constant", "c": c}``,
    ``{"type": "linear", "a": a, "b": b, "gamma": [...]}``.
    """
    if isinstance(spec, str):
        head, _, rest = spec.partition(":")
        head = head.strip()
        try:
            if head == "zero" and not rest:
                return zero_driver(marks)
            if head == "constant":
                return constant_driver(float(rest), marks)
            if head == "linear":
                vals = [float(v) for v in rest.split(",") if v.strip()]
                if len(vals) < 2:
                    raise DriverError("linear driver needs at least a and b")
                return linear_driver(vals[0], vals[1], vals[2:], marks)
        except ValueError as exc:
            raise DriverError(f"cannot parse driver {spec!r}: {exc}") from exc
        raise DriverError(f"unknown driver {spec!r}")
    if isinstance(spec, dict):
        kind = spec.get("type")
        if kind == "zero":
            return zero_driver(marks)
        if kind == "constant":
            return constant_driver(float(spec.get("c", 0.0)), marks)
        if kind == "linear":
            return linear_driver(float(spec.get("a", 0.0)), float(spec.get("b", 0.0)),
                                 spec.get("gamma", [0.0] * marks.size), marks)
        raise DriverError(f"unknown driver type {kind!r}")
    raise DriverError(f"driver specification must be a string or mapping, got {type(spec).__name__}")


def parse_family(spec, marks: MarkSet) -> AmbiguityFamily:
    """Build a family from ``"ambiguity:{json}"`` or a mapping.

    Mapping forms: ``{"members": [driver specs...]}`` or
    ``{"alphas": [{"beta1": b, "beta2": [...]}, ...], "C": C, "C1": C1, "psi": [...],
    "F": driver spec in (z, k)}`` (F defaults to zero).
    """
    if isinstance(spec, str):
        head, _, rest = spec.partition(":")
        if head.strip() != "ambiguity":
            raise DriverError(f"family specification must start with 'ambiguity:', got {spec!r}")
        try:
            spec = json.loads(rest)
        except json.JSONDecodeError as exc:
            raise DriverError(f"cannot parse family {spec!r}: {exc}") from exc
    if not isinstance(spec, dict):
        raise DriverError("family specification must be a mapping")
    if "members" in spec:
        members = tuple(parse_driver(m, marks) for m in spec["members"])
        return AmbiguityFamily(marks=marks, members=members, lipschitz=spec.get("lipschitz"))
    if "alphas" in spec:
        alphas = spec["alphas"]
        if not alphas:
            raise DriverError("ambiguity family is empty")
        b1 = tuple(float(a.get("beta1", 0.0)) for a in alphas)
        b2 = tuple(tuple(a.get("beta2", [0.0] * marks.size)) for a in alphas)
        C = float(spec.get("C", max(abs(x) for x in b1)))
        prior = PriorSpec(b1, b2, marks, C=C, C1=float(spec.get("C1", -0.5)),
                          psi=tuple(spec["psi"]) if "psi" in spec else None)
        F = parse_driver(spec.get("F", "zero"), marks)
        if F.depends_on_y:
            raise DriverError("F must not depend on y")
        Fth = np.zeros(marks.size)
        if isinstance(F, MonotoneJumpDriver):
            Fth = F.gamma_at(0.0)
        base_l = F.base_lipschitz if isinstance(F, MonotoneJumpDriver) else (0.0 if F.lipschitz == 0 else None)
        return AmbiguityFamily(marks=marks, prior=prior,
                               F=lambda t, z, k, a, _F=F: _F.evaluator(t, np.zeros(np.shape(z)), z, k),
                               F_lipschitz=F.lipschitz, F_theta=tuple(Fth.tolist()), F_base_lipschitz=base_l)
    raise DriverError("family mapping needs 'members' or 'alphas'")
