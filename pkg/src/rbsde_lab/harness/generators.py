"""Seeded random drivers, obstacles and game families for the property suites."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..drivers import AmbiguityFamily, DriverSpec, MonotoneJumpDriver, comparison_margin
from ..lattice import AdaptedProcess, LatticeModel, MarkSet, build_default_lattice
from ..rbsde import solve_rbsde

MIN_MARGIN = 1e-6


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream per (seed, suite, instance)."""
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


@dataclass(frozen=True)
class Instance:
    model: LatticeModel
    driver: DriverSpec
    obstacle: AdaptedProcess
    meta: dict = field(default_factory=dict)


def random_marks(rng: np.random.Generator, J: int) -> MarkSet:
    if J == 0:
        return MarkSet()
    marks = tuple(float(u) for u in np.round(rng.uniform(-1.0, 1.0, size=J), 6))
    lam = tuple(float(v) for v in np.round(rng.uniform(0.2, 1.0, size=J), 6))
    return MarkSet(marks, lam)


def _base(c: float, d: float, w: float, a1: float, a2: float, a3: float):
    def g(t, y, z):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        return c * math.cos(w * t) + d + a1 * np.sin(y) + a2 * np.tanh(z) + a3 * np.abs(z)
    return g


def monotone_driver(model: LatticeModel, params: dict, name: str = "g") -> MonotoneJumpDriver:
    """g(t, y, z) = c cos(w t) + d + a1 sin y + a2 tanh z + a3 |z| plus <gamma, k>_nu."""
    p = params
    gamma = tuple(float(v) for v in p["gamma"])
    delta = min([1.0 + v for v in gamma], default=1.0)
    d = MonotoneJumpDriver(base=_base(p["c"], p["d"], p["w"], p["a1"], p["a2"], p["a3"]),
                           base_lipschitz=abs(p["a1"]) + abs(p["a2"]) + abs(p["a3"]), gamma=gamma, delta=delta,
                           marks=model.marks, name=name)
    object.__setattr__(d, "depends_on_y", p["a1"] != 0)
    object.__setattr__(d, "depends_on_z", p["a2"] != 0 or p["a3"] != 0)
    return d


def random_driver_params(rng: np.random.Generator, J: int, scale: float = 1.0) -> dict:
    return {
        "c": float(rng.uniform(-1.0, 1.0)),
        "d": float(rng.uniform(-0.5, 0.5)),
        "w": float(rng.uniform(0.0, 3.0)),
        "a1": float(rng.uniform(-0.6, 0.6) * scale),
        "a2": float(rng.uniform(-0.6, 0.6) * scale),
        "a3": float(rng.uniform(-0.3, 0.3) * scale),
        "gamma": [float(v) for v in rng.uniform(-0.6, 0.8, size=J)],
    }


def admissible(model: LatticeModel, d: DriverSpec) -> bool:
    """C dt < 1 and strictly positive one-step comparison weights."""
    if d.lipschitz * model.dt >= 1:
        return False
    m = comparison_margin(model, d)
    return m is not None and m > MIN_MARGIN


def random_monotone_driver(rng: np.random.Generator, model: LatticeModel, name: str = "g",
                           scale: float = 1.0) -> tuple:
    """Random admissible driver; the (y, z) coefficients shrink until admissible."""
    p = random_driver_params(rng, model.J, scale)
    for _ in range(60):
        d = monotone_driver(model, p, name)
        if admissible(model, d):
            return d, p
        p = dict(p, a1=p["a1"] / 2, a2=p["a2"] / 2, a3=p["a3"] / 2)
    raise RuntimeError("could not generate an admissible driver")


def shifted_params(p: dict, du: float) -> dict:
    """Same driver plus a constant du."""
    return dict(p, d=p["d"] + du)


# obstacles ------------------------------------------------------------------------

def ramp_obstacle(model: LatticeModel, a: float, b: float) -> AdaptedProcess:
    return AdaptedProcess([np.full(model.layer_size(i), a + b * model.grid.time(i)) for i in range(model.N + 1)])


def martingale_obstacle(rng: np.random.Generator, model: LatticeModel) -> AdaptedProcess:
    """x0 + sum of h dW + <g, compensated jumps>, with per-node h, g on trees."""
    x0 = float(rng.uniform(-0.5, 0.5))
    layers = [np.array([x0])]
    hc = float(rng.uniform(-1.0, 1.0))
    gc = rng.uniform(-0.5, 0.5, size=model.J)
    for i in range(model.N):
        n = model.layer_size(i)
        if model.recombining:
            h, g = np.full(n, hc), np.tile(gc, (n, 1))
        else:
            h = rng.uniform(-1.0, 1.0, size=n)
            g = rng.uniform(-0.5, 0.5, size=(n, model.J))
        incr = h[:, None] * model.increments(i)
        if model.J:
            incr = incr + np.einsum("rbj,rj->rb", model.compensated(i), g)
        if model.recombining:
            # coefficients are constant, so the value only depends on the state
            W = model.brownian_state(i + 1)
            Nc = model.jump_counts(i + 1)
            t = model.grid.time(i + 1)
            lam = model.marks.lam
            val = x0 + hc * W + ((Nc - lam[None, :] * t) @ gc if model.J else 0.0)
            layers.append(np.asarray(val, dtype=float))
        else:
            layers.append((layers[i][:, None] + incr).reshape(-1))
    return AdaptedProcess(layers)


def random_obstacle(rng: np.random.Generator, model: LatticeModel, lo: float = -2.0, hi: float = 2.0) -> AdaptedProcess:
    """Cumulated i.i.d. node noise (trees) or a random state function (recombining), clipped to [lo, hi]."""
    if model.recombining:
        a, b, c, w = rng.uniform(-1.0, 1.0, size=4)
        e = rng.uniform(-0.5, 0.5, size=model.J)
        return model.adapted(lambda i, t, W, Nc: np.clip(a * np.sin(2 * W + w) + b * W + c * t
                                                         + (Nc @ e if model.J else 0.0), lo, hi))
    x = [np.array([float(rng.uniform(-0.5, 0.5))])]
    for i in range(model.N):
        noise = rng.normal(0.0, 0.5, size=model.layer_size(i + 1))
        x.append(np.repeat(x[i], model.B) + noise)
    return AdaptedProcess([np.clip(v, lo, hi) for v in x])


def put_obstacle(model: LatticeModel, strike: float = 1.0, vol: float = 0.3, jump: float = 0.1) -> AdaptedProcess:
    """max(K - exp(vol W + jump * mark sum), 0)."""
    return AdaptedProcess([np.maximum(strike - np.exp(vol * model.brownian_state(i) + jump * model.mark_sum(i)), 0.0)
                           for i in range(model.N + 1)])


OBSTACLE_KINDS = ("ramp", "martingale", "random", "put")


def obstacle_of_kind(rng: np.random.Generator, model: LatticeModel, kind: str) -> AdaptedProcess:
    if kind == "ramp":
        return ramp_obstacle(model, float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-1.0, 1.0)))
    if kind == "martingale":
        return martingale_obstacle(rng, model)
    if kind == "random":
        return random_obstacle(rng, model)
    if kind == "put":
        return put_obstacle(model, float(rng.uniform(0.8, 1.2)))
    raise ValueError(f"unknown obstacle kind {kind!r}")


# instances ------------------------------------------------------------------------

SMALL_SHAPES = ((0, 2), (0, 3), (0, 4), (1, 2), (1, 3))  # (J, N): B = 2 for J = 0, B = 3 for J = 1


def small_instance(seed: int, suite: int, k: int, T: float = 1.0) -> Instance:
    """Tree with N <= 4, B <= 3, a random admissible driver and obstacle."""
    rng = rng_for(seed, suite, k)
    J, N = SMALL_SHAPES[k % len(SMALL_SHAPES)]
    model = build_default_lattice(T, N, random_marks(rng, J))
    d, p = random_monotone_driver(rng, model)
    kind = OBSTACLE_KINDS[(k // len(SMALL_SHAPES)) % len(OBSTACLE_KINDS)]
    xi = obstacle_of_kind(rng, model, kind)
    return Instance(model, d, xi, {"J": J, "N": N, "B": model.B, "obstacle": kind, "driver": p})


def comparison_instance(seed: int, suite: int, k: int, T: float = 1.0) -> tuple:
    """(model, f1, f2, xi1, xi2, meta) with f1 >= f2 and xi1 >= xi2."""
    rng = rng_for(seed, suite, k)
    shapes = ((0, 5, False), (1, 3, False), (1, 4, False), (0, 32, True), (1, 16, True))
    J, N, rec = shapes[k % len(shapes)]
    model = build_default_lattice(T, N, random_marks(rng, J), recombining=rec)
    f2, p2 = random_monotone_driver(rng, model, "f2")
    du = float(rng.uniform(0.0, 0.5))
    p1 = shifted_params(p2, du)
    # an extra nonnegative term keeps f1 - f2 state dependent
    u1 = float(rng.uniform(0.0, 0.2))
    base2 = _base(p2["c"], p2["d"] + du, p2["w"], p2["a1"], p2["a2"], p2["a3"])

    def g1(t, y, z):
        return base2(t, y, z) + u1 * (1.0 + np.cos(np.asarray(z, dtype=float)))

    gamma = tuple(p2["gamma"])
    f1 = MonotoneJumpDriver(base=g1, base_lipschitz=abs(p2["a1"]) + abs(p2["a2"]) + abs(p2["a3"]) + u1,
                            gamma=gamma, delta=min([1.0 + v for v in gamma], default=1.0), marks=model.marks,
                            name="f1")
    if not admissible(model, f1):
        u1 = 0.0
        f1 = monotone_driver(model, p1, "f1")
    kind = OBSTACLE_KINDS[(k // len(shapes)) % len(OBSTACLE_KINDS)]
    xi2 = obstacle_of_kind(rng, model, kind)
    if model.recombining:
        amp = float(rng.uniform(0.0, 0.2))
        bump = model.adapted(lambda i, t, W, Nc: amp * (1 + np.cos(W)))
    else:
        bump = AdaptedProcess([np.abs(rng.normal(0.0, 0.2, size=model.layer_size(i))) for i in range(N + 1)])
    xi1 = AdaptedProcess([xi2[i] + bump[i] for i in range(N + 1)])
    meta = {"J": J, "N": N, "recombining": rec, "obstacle": kind, "shift": du, "u1": u1, "driver": p2}
    return model, f1, f2, xi1, xi2, meta


def strict_instance(seed: int, suite: int, k: int, T: float = 1.0) -> tuple:
    """(model, f1, f2, xi, lower_bound, meta): f1 = f2 + delta, equal obstacles, root in continuation.

    The root obstacle is lowered below the continuation value of problem 2,
    so Y1_0 - Y2_0 >= delta dt / (1 + C dt) with C the y-Lipschitz constant.
    """
    rng = rng_for(seed, suite, k)
    shapes = ((0, 4, False), (1, 3, False), (0, 32, True), (1, 16, True))
    J, N, rec = shapes[k % len(shapes)]
    model = build_default_lattice(T, N, random_marks(rng, J), recombining=rec)
    f2, p2 = random_monotone_driver(rng, model, "f2")
    delta = float(rng.uniform(0.05, 0.5))
    f1 = monotone_driver(model, shifted_params(p2, delta), "f1")
    xi = obstacle_of_kind(rng, model, OBSTACLE_KINDS[k % len(OBSTACLE_KINDS)])
    s2 = solve_rbsde(model, f2, xi)
    layers = [np.array(a) for a in xi]
    layers[0] = np.minimum(layers[0], s2.continuation[0] - 0.1)
    xi = AdaptedProcess(layers)
    C = abs(p2["a1"])
    bound = delta * model.dt / (1.0 + C * model.dt)
    return model, f1, f2, xi, bound, {"J": J, "N": N, "recombining": rec, "delta": delta}


GAME_SHAPES = ((0, 4, 2), (1, 3, 2), (0, 3, 3), (1, 2, 3))  # (J, N, family size)


def random_family(rng: np.random.Generator, model: LatticeModel, m: int) -> AmbiguityFamily:
    members = []
    for a in range(m):
        d, _ = random_monotone_driver(rng, model, f"a{a}")
        members.append(d)
    return AmbiguityFamily(marks=model.marks, members=tuple(members))


def game_instance(seed: int, suite: int, k: int, T: float = 1.0) -> tuple:
    """(model, family, obstacle, meta) on a tree of at most 40 nodes."""
    rng = rng_for(seed, suite, k)
    J, N, m = GAME_SHAPES[k % len(GAME_SHAPES)]
    model = build_default_lattice(T, N, random_marks(rng, J))
    fam = random_family(rng, model, m)
    kind = OBSTACLE_KINDS[(k // len(GAME_SHAPES)) % len(OBSTACLE_KINDS)]
    xi = obstacle_of_kind(rng, model, kind)
    return model, fam, xi, {"J": J, "N": N, "m": m, "obstacle": kind}


def tie_instance(inst: Instance, seed: int, k: int) -> Instance:
    """Same model and driver with many optimal rules.

    The obstacle is the unreflected solution X of the driver from the
    original terminal values, lowered by a positive amount on a random half
    of the non-root nodes and strictly below the continuation at the root.
    Wherever the obstacle equals X stopping and continuing tie.
    """
    from ..bsde import solve_bsde

    rng = rng_for(seed, 77, k)
    m = inst.model
    X = solve_bsde(m, inst.driver, inst.obstacle[m.N]).Y
    layers = []
    for i in range(m.N + 1):
        v = np.array(X[i], dtype=float)
        if 0 < i < m.N:
            mask = rng.random(v.shape) < 0.5
            v = v - mask * rng.uniform(0.05, 0.3, size=v.shape)
        layers.append(v)
    layers[0] = layers[0] - 0.5
    return Instance(m, inst.driver, AdaptedProcess(layers), dict(inst.meta, obstacle="ties"))
