"""Finite event trees carrying Brownian and compensated Poisson increments.

A lattice repeats one branch template at every step. Each branch has a
probability, a Brownian increment and an optional jump mark. Nodes at layer
``i`` are either branch sequences of length ``i`` (the default tree) or
multinomial branch counts (the recombining mode, used for long horizons with
Markov inputs).

Values living on layer ``i`` are stored as numpy arrays indexed by node, so a
process is a list of ``N + 1`` (adapted) or ``N`` (predictable) arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import LatticeError

MOMENT_TOL = 1e-12
COND_LIMIT = 1e12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i * T / N on [0, T]."""

    horizon: float
    steps: int

    def __post_init__(self):
        if isinstance(self.steps, bool) or int(self.steps) != self.steps or self.steps < 1:
            raise LatticeError(f"steps must be an integer >= 1, got {self.steps!r}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise LatticeError(f"horizon must be finite and positive, got {self.horizon!r}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        # T * i / N keeps t_N == T exactly
        return self.horizon * np.arange(self.steps + 1) / self.steps

    def time(self, layer: int) -> float:
        return self.horizon * layer / self.steps


@dataclass(frozen=True)
class MarkSet:
    """Finitely many jump marks u_j with intensities lambda_j > 0."""

    marks: tuple = ()
    intensities: tuple = ()

    def __post_init__(self):
        marks = tuple(float(u) for u in self.marks)
        lam = tuple(float(x) for x in self.intensities)
        if len(marks) != len(lam):
            raise LatticeError("marks and intensities must have equal length")
        if len(set(marks)) != len(marks):
            raise LatticeError("marks must be distinct")
        for u, x in zip(marks, lam):
            if not math.isfinite(u):
                raise LatticeError(f"mark {u!r} is not finite")
            if not (math.isfinite(x) and x > 0):
                raise LatticeError(f"intensity {x!r} must be finite and positive")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "intensities", lam)

    @property
    def size(self) -> int:
        return len(self.marks)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=float)

    @property
    def total_intensity(self) -> float:
        return float(sum(self.intensities))

    def inner(self, a, b) -> np.ndarray:
        """Weighted inner product sum_j a_j b_j lambda_j along the last axis."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.size == 0:
            return np.zeros(np.broadcast(a, b).shape[:-1]) if np.ndim(a) or np.ndim(b) else 0.0
        return np.sum(a * b * self.lam, axis=-1)

    def norm_sq(self, k) -> np.ndarray:
        return self.inner(k, k)

    def norm(self, k) -> np.ndarray:
        return np.sqrt(self.norm_sq(k))


@dataclass(frozen=True)
class BranchSpec:
    """One-step branch template: probabilities, Brownian increments, jump marks.

    ``jumps[b]`` is the mark index carried by branch ``b`` or ``None``.
    """

    probs: tuple
    increments: tuple
    jumps: tuple

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        inc = tuple(float(x) for x in self.increments)
        jumps = tuple(None if j is None else int(j) for j in self.jumps)
        if not (len(probs) == len(inc) == len(jumps)) or not probs:
            raise LatticeError("branch arrays must be nonempty and of equal length")
        if not all(math.isfinite(v) for v in probs + inc):
            raise LatticeError("branch probabilities and increments must be finite")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "jumps", jumps)

    @property
    def size(self) -> int:
        return len(self.probs)

    def prob_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def increment_array(self) -> np.ndarray:
        return np.asarray(self.increments, dtype=float)

    def indicator_matrix(self, n_marks: int) -> np.ndarray:
        """(B, J) matrix of 1{m_b = j}."""
        out = np.zeros((self.size, n_marks))
        for b, j in enumerate(self.jumps):
            if j is not None:
                if not 0 <= j < n_marks:
                    raise LatticeError(f"branch {b} carries unknown mark index {j}")
                out[b, j] = 1.0
        return out

    def compensated(self, marks: MarkSet, dt: float) -> np.ndarray:
        """(B, J) compensated increments 1{m_b = j} - lambda_j dt."""
        return self.indicator_matrix(marks.size) - marks.lam[None, :] * dt


class _Layered:
    """Immutable sequence of per-layer node arrays."""

    def __init__(self, layers: Sequence):
        arrs = []
        for i, a in enumerate(layers):
            arr = np.array(a, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"layer {i} contains non-finite values")
            arr.setflags(write=False)
            arrs.append(arr)
        self._layers = tuple(arrs)

    @property
    def layers(self) -> tuple:
        return self._layers

    def __getitem__(self, i: int) -> np.ndarray:
        return self._layers[i]

    def __len__(self) -> int:
        return len(self._layers)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self._layers)

    def at(self, layer: int, index: int):
        v = self._layers[layer][index]
        return float(v) if np.ndim(v) == 0 else np.array(v)

    def max_abs_diff(self, other: "_Layered") -> float:
        if len(self) != len(other):
            raise ValueError("layer count mismatch")
        out = 0.0
        for a, b in zip(self._layers, other.layers):
            if a.size:
                out = max(out, float(np.max(np.abs(a - b))))
        return out

    def __repr__(self) -> str:
        shapes = [a.shape for a in self._layers[:3]]
        return f"{type(self).__name__}(layers={len(self)}, shapes={shapes}...)"


class AdaptedProcess(_Layered):
    """One value (or vector) per node on layers 0..N."""


class PredictableProcess(_Layered):
    """One value (or vector) per node on layers 0..N-1, acting over the next step."""


class LatticeModel:
    """Event tree with exact branch probabilities.

    Args:
        grid: time grid.
        marks: jump marks and intensities.
        branching: the one-step template.
        mode: "default" (the complete W-up, W-down, one-branch-per-mark template)
            or "custom".
        recombining: index nodes by branch counts instead of branch sequences.
            Only valid for inputs that depend on the path through the counts.
        measure: label of the measure the branch data describe ("P" for the
            template itself, anything else for reweighted models).
        overrides: optional per-layer node arrays ``probs`` (n_i, B), ``dW``
            (n_i, B) and ``dN`` (n_i, B, J) replacing the template.
    """

    def __init__(self, grid: TimeGrid, marks: MarkSet, branching: BranchSpec, *,
                 mode: str = "custom", recombining: bool = False, measure: str = "P",
                 overrides: dict | None = None):
        if mode not in ("default", "custom"):
            raise LatticeError(f"unknown lattice mode {mode!r}")
        self.grid = grid
        self.marks = marks
        self.branching = branching
        self.mode = mode
        self.recombining = bool(recombining)
        self.measure = measure
        self._overrides = overrides
        branching.indicator_matrix(marks.size)  # validates mark indices
        self._p = branching.prob_array()
        self._dw = branching.increment_array()
        self._dn = branching.compensated(marks, grid.dt)
        self._p.setflags(write=False)
        self._dw.setflags(write=False)
        self._dn.setflags(write=False)
        self._topology = _Topology(grid.steps, branching.size, self.recombining)
        self._node_prob: list | None = None
        self._op_cache: dict = {}
        if overrides is not None:
            self._check_override_shapes(overrides)

    # basic sizes -----------------------------------------------------------------
    @property
    def N(self) -> int:
        return self.grid.steps

    @property
    def T(self) -> float:
        return self.grid.horizon

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def B(self) -> int:
        return self.branching.size

    @property
    def J(self) -> int:
        return self.marks.size

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def has_overrides(self) -> bool:
        return self._overrides is not None

    @property
    def is_complete(self) -> bool:
        return self.B == self.J + 2

    def layer_size(self, layer: int) -> int:
        return self._topology.size(layer)

    def layer_sizes(self) -> list:
        return [self.layer_size(i) for i in range(self.N + 1)]

    @property
    def node_count(self) -> int:
        return sum(self.layer_sizes())

    def children(self, layer: int) -> np.ndarray:
        """(n_layer, B) indices of the children at layer + 1."""
        return self._topology.children(layer)

    def require_tree(self, what: str = "this operation"):
        if self.recombining:
            raise LatticeError(f"{what} needs a non-recombining tree")

    # branch data -----------------------------------------------------------------
    def probs(self, layer: int, nodes=None) -> np.ndarray:
        return self._branch_data("probs", self._p, layer, nodes)

    def increments(self, layer: int, nodes=None) -> np.ndarray:
        return self._branch_data("dW", self._dw, layer, nodes)

    def compensated(self, layer: int, nodes=None) -> np.ndarray:
        return self._branch_data("dN", self._dn, layer, nodes)

    def _branch_data(self, key, template, layer, nodes):
        rows = self.layer_size(layer) if nodes is None else len(nodes)
        if self._overrides is not None and key in self._overrides:
            arr = self._overrides[key][layer]
            return arr if nodes is None else arr[np.asarray(nodes)]
        return np.broadcast_to(template, (rows,) + template.shape)

    # expectations and representation ---------------------------------------------
    def gather(self, layer: int, next_values) -> np.ndarray:
        """Child values of every node at ``layer``: shape (n_layer, B, ...)."""
        return np.asarray(next_values)[self.children(layer)]

    def expectation(self, layer: int, child_values, nodes=None) -> np.ndarray:
        """sum_b p_b v_b for each row of ``child_values`` (rows, B)."""
        v = np.asarray(child_values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.shape[1] != self.B:
            raise LatticeError(f"expected {self.B} child values per node, got {v.shape[1]}")
        if self._overrides is None:
            return v @ self._p
        if nodes is None and v.shape[0] != self.layer_size(layer):
            raise LatticeError("node indices required for per-node branch data")
        return np.einsum("rb,rb->r", self.probs(layer, nodes), v)

    def expect_next(self, layer: int, next_values) -> np.ndarray:
        return self.expectation(layer, self.gather(layer, next_values))

    def decompose(self, layer: int, child_values, nodes=None):
        """Martingale coefficients of child values.

        Returns (m, z, k, residual) with ``v_b = m + z dW_b + k . dN_b + residual_b``.
        ``m`` is the conditional expectation. In complete mode the residual is
        zero, otherwise (z, k) is the probability-weighted least-squares
        projection and the residual is orthogonal to (1, dW, dN).
        """
        v = np.asarray(child_values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.shape[1] != self.B:
            raise LatticeError(f"expected {self.B} child values per node, got {v.shape[1]}")
        J = self.J
        if self._overrides is None:
            op = self._template_operator()
            coeffs = v @ op.T
            m = v @ self._p
            dw = self._dw[None, :]
            dn = self._dn[None, :, :]
        else:
            if nodes is None:
                if v.shape[0] != self.layer_size(layer):
                    raise LatticeError("node indices required for per-node branch data")
                nodes = np.arange(v.shape[0])
            nodes = np.asarray(nodes)
            op = self._layer_operator(layer)[nodes]
            coeffs = np.einsum("rcb,rb->rc", op, v)
            m = np.einsum("rb,rb->r", self.probs(layer, nodes), v)
            dw = self.increments(layer, nodes)
            dn = self.compensated(layer, nodes)
        z = coeffs[:, 1]
        k = coeffs[:, 2:2 + J]
        fit = m[:, None] + z[:, None] * dw + np.einsum("rbj,rj->rb", np.broadcast_to(dn, (v.shape[0], self.B, J)), k)
        return m, z, k, v - fit

    def _design(self, dw, dn):
        return np.concatenate([np.ones(dw.shape + (1,)), dw[..., None], dn], axis=-1)

    def _template_operator(self) -> np.ndarray:
        if "template" not in self._op_cache:
            M = self._design(self._dw, self._dn)  # (B, J+2)
            self._op_cache["template"] = _solve_operator(M[None], self._p[None])[0]
        return self._op_cache["template"]

    def _layer_operator(self, layer: int) -> np.ndarray:
        if layer not in self._op_cache:
            M = self._design(self.increments(layer), self.compensated(layer))
            self._op_cache[layer] = _solve_operator(M, self.probs(layer))
        return self._op_cache[layer]

    def operator(self, layer: int, nodes=None) -> np.ndarray:
        """(rows, J+2, B) linear map from child values to (m, z, k)."""
        if self._overrides is None:
            rows = self.layer_size(layer) if nodes is None else len(nodes)
            return np.broadcast_to(self._template_operator(), (rows, self.J + 2, self.B))
        op = self._layer_operator(layer)
        return op if nodes is None else op[np.asarray(nodes)]

    # path information ------------------------------------------------------------
    def node_probabilities(self, layer: int) -> np.ndarray:
        if self._node_prob is None:
            probs = [np.ones(1)]
            for i in range(self.N):
                nxt = np.zeros(self.layer_size(i + 1))
                np.add.at(nxt, self.children(i), probs[i][:, None] * self.probs(i))
                probs.append(nxt)
            self._node_prob = probs
        return self._node_prob[layer]

    def branch_counts(self, layer: int) -> np.ndarray:
        """(n_layer, B) number of times each branch was taken on the path."""
        return self._topology.counts(layer)

    def brownian_state(self, layer: int) -> np.ndarray:
        """Cumulative template Brownian increments W_{t_i} at every node."""
        return self.branch_counts(layer) @ self._dw

    def jump_counts(self, layer: int) -> np.ndarray:
        """(n_layer, J) number of jumps per mark along the path."""
        return self.branch_counts(layer) @ self.branching.indicator_matrix(self.J)

    def mark_sum(self, layer: int) -> np.ndarray:
        """Sum of jump marks along the path (the compound jump state)."""
        return self.jump_counts(layer) @ np.asarray(self.marks.marks, dtype=float) if self.J \
            else np.zeros(self.layer_size(layer))

    def node_label(self, layer: int, index: int) -> str:
        return self._topology.label(layer, index)

    def node_labels(self, layer: int) -> list:
        return [self.node_label(layer, i) for i in range(self.layer_size(layer))]

    def parent(self, layer: int, index: int) -> tuple:
        self.require_tree("parent lookup")
        if layer == 0:
            raise LatticeError("the root has no parent")
        return layer - 1, index // self.B

    def subtree(self, layer: int, index: int) -> list:
        """Node indices of the subtree rooted at (layer, index), one array per layer."""
        return self._topology.subtree(layer, index)

    def subtree_size(self, layer: int, index: int) -> int:
        return sum(len(a) for a in self.subtree(layer, index))

    # derived models ------------------------------------------------------------
    def with_measure(self, probs: Sequence, dW: Sequence, dN: Sequence, label: str) -> "LatticeModel":
        """Same topology with per-node branch data (used for reweighted measures)."""
        ov = {
            "probs": [np.array(a, dtype=float) for a in probs],
            "dW": [np.array(a, dtype=float) for a in dW],
            "dN": [np.array(a, dtype=float) for a in dN],
        }
        for arrs in ov.values():
            for a in arrs:
                a.setflags(write=False)
        return LatticeModel(self.grid, self.marks, self.branching, mode=self.mode,
                            recombining=self.recombining, measure=label, overrides=ov)

    def _check_override_shapes(self, ov):
        for key in ("probs", "dW", "dN"):
            if key not in ov or len(ov[key]) != self.N:
                raise LatticeError(f"override {key!r} must have one array per layer 0..N-1")
            for i, a in enumerate(ov[key]):
                shape = (self.layer_size(i), self.B) + ((self.J,) if key == "dN" else ())
                if a.shape != shape:
                    raise LatticeError(f"override {key!r} at layer {i} has shape {a.shape}, expected {shape}")
                if not np.all(np.isfinite(a)):
                    raise LatticeError(f"override {key!r} at layer {i} is not finite")

    # processes -------------------------------------------------------------------
    def adapted(self, fn: Callable) -> AdaptedProcess:
        """Build an adapted process from ``fn(layer, t, W, jump_counts) -> array``."""
        layers = []
        for i in range(self.N + 1):
            v = np.asarray(fn(i, self.grid.time(i), self.brownian_state(i), self.jump_counts(i)), dtype=float)
            layers.append(np.broadcast_to(v, (self.layer_size(i),)).copy())
        return AdaptedProcess(layers)

    def constant_adapted(self, c: float) -> AdaptedProcess:
        return AdaptedProcess([np.full(n, float(c)) for n in self.layer_sizes()])

    def check_layers(self, proc, name: str = "process", predictable: bool = False,
                     vector: int | None = None):
        """Raise unless ``proc`` has one correctly shaped array per layer."""
        expected = self.N if predictable else self.N + 1
        if len(proc) != expected:
            raise LatticeError(f"{name} has {len(proc)} layers, expected {expected}")
        for i, a in enumerate(proc):
            shape = (self.layer_size(i),) + (() if vector is None else (vector,))
            if np.shape(a) != shape:
                raise LatticeError(f"{name} layer {i} has shape {np.shape(a)}, expected {shape}")

    # serialization -----------------------------------------------------------------
    def to_dict(self) -> dict:
        if self._overrides is not None:
            raise LatticeError("models with per-node branch data are not serializable")
        out = {
            "T": self.grid.horizon,
            "N": self.grid.steps,
            "marks": [{"u": u, "lambda": lam} for u, lam in zip(self.marks.marks, self.marks.intensities)],
            "mode": self.mode,
            "recombining": self.recombining,
        }
        if self.mode == "custom":
            out["branches"] = [
                {"p": p, "dW": w, "mark": j}
                for p, w, j in zip(self.branching.probs, self.branching.increments, self.branching.jumps)
            ]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def __repr__(self) -> str:
        return (f"LatticeModel(T={self.T}, N={self.N}, B={self.B}, J={self.J}, mode={self.mode!r}, "
                f"recombining={self.recombining}, measure={self.measure!r})")


def _solve_operator(M: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Weighted least-squares operator (rows, J+2, B); exact inverse when square."""
    rows, B, C = M.shape
    if B < C:
        raise LatticeError(f"{B} branches cannot represent {C} martingale directions")
    cond = np.linalg.cond(M)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise LatticeError("singular martingale representation matrix")
    if B == C:
        return np.linalg.inv(M)
    Mt_p = np.transpose(M, (0, 2, 1)) * p[:, None, :]
    return np.linalg.solve(Mt_p @ M, Mt_p)


class _Topology:
    """Children maps for sequence trees and count lattices."""

    def __init__(self, N: int, B: int, recombining: bool):
        self.N = N
        self.B = B
        self.recombining = recombining
        self._children: dict = {}
        self._counts: dict = {}
        if recombining:
            self._states = [np.zeros((1, B), dtype=np.int64)]
            self._index = [{(0,) * B: 0}]
            for i in range(N):
                states = _compositions(i + 1, B)
                self._states.append(states)
                self._index.append({tuple(int(x) for x in s): n for n, s in enumerate(states)})
        elif B > 1 and N * math.log(B) > math.log(5e7):
            raise LatticeError(f"non-recombining tree with B={B}, N={N} is too large; use recombining=True")

    def size(self, layer: int) -> int:
        if not 0 <= layer <= self.N:
            raise LatticeError(f"layer {layer} outside 0..{self.N}")
        if self.recombining:
            return len(self._states[layer])
        return self.B ** layer

    def children(self, layer: int) -> np.ndarray:
        if not 0 <= layer < self.N:
            raise LatticeError(f"layer {layer} has no children")
        if layer not in self._children:
            if self.recombining:
                states = self._states[layer]
                idx = self._index[layer + 1]
                ch = np.empty((len(states), self.B), dtype=np.int64)
                eye = np.eye(self.B, dtype=np.int64)
                for n, s in enumerate(states):
                    for b in range(self.B):
                        ch[n, b] = idx[tuple(int(x) for x in s + eye[b])]
            else:
                n = self.B ** layer
                ch = np.arange(n, dtype=np.int64)[:, None] * self.B + np.arange(self.B)[None, :]
            ch.setflags(write=False)
            self._children[layer] = ch
        return self._children[layer]

    def counts(self, layer: int) -> np.ndarray:
        if self.recombining:
            return self._states[layer]
        if layer not in self._counts:
            c = np.zeros((1, self.B), dtype=np.int64)
            for i in range(layer):
                c = (c[:, None, :] + np.eye(self.B, dtype=np.int64)[None, :, :]).reshape(-1, self.B)
            self._counts[layer] = c
        return self._counts[layer]

    def label(self, layer: int, index: int) -> str:
        if self.recombining:
            return "c" + ".".join(str(int(x)) for x in self._states[layer][index])
        if layer == 0:
            return "root"
        digits = []
        for _ in range(layer):
            index, r = divmod(index, self.B)
            digits.append(str(r))
        return "-".join(reversed(digits))

    def subtree(self, layer: int, index: int) -> list:
        if self.recombining:
            base = self._states[layer][index]
            out = []
            for i in range(layer, self.N + 1):
                s = self._states[i]
                out.append(np.nonzero(np.all(s >= base[None, :], axis=1))[0])
            return out
        return [np.arange(index * self.B ** d, (index + 1) * self.B ** d) for d in range(self.N - layer + 1)]


def _compositions(total: int, parts: int) -> np.ndarray:
    """All count vectors of length ``parts`` summing to ``total``, descending lexicographic."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + [remaining])
            return
        for c in range(remaining, -1, -1):
            rec(prefix + [c], remaining - c, slots - 1)

    rec([], total, parts)
    return np.asarray(out, dtype=np.int64).reshape(-1, parts)


# constructors ----------------------------------------------------------------------

def default_branching(grid: TimeGrid, marks: MarkSet) -> BranchSpec:
    """W-up, W-down and one branch per mark with exact first and second moments."""
    dt = grid.dt
    lam_dt = marks.total_intensity * dt
    if lam_dt >= 1:
        raise LatticeError(f"total intensity times dt is {lam_dt:.6g}; it must be < 1 (refine the grid)")
    p_w = (1.0 - lam_dt) / 2.0
    dw = math.sqrt(dt / (1.0 - lam_dt))
    probs = [p_w, p_w] + [lam * dt for lam in marks.intensities]
    incs = [dw, -dw] + [0.0] * marks.size
    jumps = [None, None] + list(range(marks.size))
    return BranchSpec(tuple(probs), tuple(incs), tuple(jumps))


def build_default_lattice(T: float, N: int, marks: MarkSet | None = None, *,
                          recombining: bool = False) -> LatticeModel:
    """Complete lattice with B = J + 2 branches per step."""
    grid = TimeGrid(T, N)
    marks = marks if marks is not None else MarkSet()
    return LatticeModel(grid, marks, default_branching(grid, marks), mode="default",
                        recombining=recombining)


def build_custom_lattice(T: float, N: int, marks: MarkSet, branching: BranchSpec, *,
                         recombining: bool = False) -> LatticeModel:
    grid = TimeGrid(T, N)
    return LatticeModel(grid, marks, branching, mode="custom", recombining=recombining)


def model_from_dict(doc: dict) -> LatticeModel:
    try:
        T = doc["T"]
        N = doc["N"]
        marks = MarkSet(tuple(m["u"] for m in doc.get("marks", [])),
                        tuple(m["lambda"] for m in doc.get("marks", [])))
        mode = doc.get("mode", "default")
        recombining = bool(doc.get("recombining", False))
    except (KeyError, TypeError) as exc:
        raise LatticeError(f"malformed model document: {exc}") from exc
    if mode == "default":
        return build_default_lattice(T, N, marks, recombining=recombining)
    if mode == "custom":
        try:
            br = doc["branches"]
            spec = BranchSpec(tuple(b["p"] for b in br), tuple(b["dW"] for b in br),
                              tuple(b.get("mark") for b in br))
        except (KeyError, TypeError) as exc:
            raise LatticeError(f"malformed branch list: {exc}") from exc
        return build_custom_lattice(T, N, marks, spec, recombining=recombining)
    raise LatticeError(f"unknown lattice mode {mode!r}")


def model_from_json(text: str) -> LatticeModel:
    return model_from_dict(json.loads(text))


# free-function views --------------------------------------------------------------

def conditional_expectation(model: LatticeModel, layer: int, child_values, node: int | None = None) -> float:
    """E[value | node] for the values at the children of one node."""
    v = np.asarray(child_values, dtype=float)
    if v.shape != (model.B,):
        raise LatticeError(f"expected {model.B} child values, got shape {v.shape}")
    nodes = None if node is None else [node]
    if model.has_overrides and node is None:
        raise LatticeError("node index required for per-node branch data")
    return float(model.expectation(layer, v[None, :], nodes)[0])


def martingale_coefficients(model: LatticeModel, layer: int, child_values, node: int | None = None):
    """(z, k, residual) for the children of one node.

    ``residual`` is the weighted norm sum_b p_b r_b^2 of the representation residual.
    """
    v = np.asarray(child_values, dtype=float)
    if v.shape != (model.B,):
        raise LatticeError(f"expected {model.B} child values, got shape {v.shape}")
    if model.has_overrides and node is None:
        raise LatticeError("node index required for per-node branch data")
    nodes = None if node is None else [node]
    m, z, k, res = model.decompose(layer, v[None, :], nodes)
    p = model.probs(layer, nodes)[0]
    return float(z[0]), np.array(k[0]), float(np.sum(p * res[0] ** 2))


def validate_model(model: LatticeModel, tol: float = MOMENT_TOL) -> list:
    """List every violated branch or topology invariant (empty when valid).

    For the base measure all moment conditions are checked. For reweighted
    models only the first-moment conditions are checked here; second moments
    are available from :func:`moment_report`.
    """
    out = []
    dt = model.dt
    lam = model.marks.lam
    if model.marks.total_intensity * dt >= 1:
        out.append("total intensity times dt must be < 1")
    for i in range(model.N):
        if model.layer_size(i + 1) != (model.layer_size(i) * model.B if not model.recombining
                                       else len(_compositions(i + 1, model.B))):
            out.append(f"layer {i + 1} has the wrong node count")
        if model.children(i).shape != (model.layer_size(i), model.B):
            out.append(f"layer {i} nodes do not have exactly B children")
    layers = range(model.N) if model.has_overrides else [0]
    base = model.measure == "P" and not model.has_overrides
    ind = model.branching.indicator_matrix(model.J)
    for i in layers:
        where = f" at layer {i}" if model.has_overrides else ""
        p = model.probs(i)
        dw = model.increments(i)
        dn = model.compensated(i)
        if np.any(p <= 0) or np.any(p > 1 + tol):
            out.append(f"branch probabilities outside (0, 1]{where}")
        if np.max(np.abs(p.sum(axis=1) - 1)) > tol:
            out.append(f"branch probabilities do not sum to 1{where}")
        if np.max(np.abs(np.sum(p * dw, axis=1))) > tol:
            out.append(f"Brownian increment mean is not zero{where}")
        if model.J and np.max(np.abs(np.einsum("rb,rbj->rj", p, dn))) > tol:
            out.append(f"compensated jump increment mean is not zero{where}")
        if base:
            if abs(float(np.sum(p[0] * dw[0] ** 2)) - dt) > tol:
                out.append("Brownian increment variance differs from dt")
            for j in range(model.J):
                pj = float(np.sum(p[0] * ind[:, j]))
                if abs(pj - lam[j] * dt) > tol:
                    out.append(f"jump probability of mark {j} differs from lambda*dt")
                if abs(float(np.sum(p[0] * dw[0] * dn[0, :, j]))) > tol:
                    out.append(f"Brownian and jump increments of mark {j} are not orthogonal")
                if np.max(np.abs(dn[0, :, j] - (ind[:, j] - lam[j] * dt))) > tol:
                    out.append(f"compensated increments of mark {j} are inconsistent with the marks")
        try:
            M = np.concatenate([np.ones(dw.shape + (1,)), dw[..., None], dn], axis=-1)
            _solve_operator(M[:1] if not model.has_overrides else M, p[:1] if not model.has_overrides else p)
        except LatticeError as exc:
            out.append(f"martingale representation fails{where}: {exc}")
        if model.mode == "default" and model.B != model.J + 2:
            out.append("default mode requires B = J + 2 branches")
    return out


def moment_report(model: LatticeModel) -> dict:
    """Largest deviations of the second-moment conditions over all layers."""
    dt = model.dt
    var_dev = 0.0
    cross_dev = 0.0
    layers = range(model.N) if model.has_overrides else [0]
    for i in layers:
        p = model.probs(i)
        dw = model.increments(i)
        dn = model.compensated(i)
        var_dev = max(var_dev, float(np.max(np.abs(np.sum(p * dw ** 2, axis=1) - dt))))
        if model.J:
            cross_dev = max(cross_dev, float(np.max(np.abs(np.einsum("rb,rb,rbj->rj", p, dw, dn)))))
    return {"variance_deviation": var_dev, "cross_moment_deviation": cross_dev, "dt": dt}
