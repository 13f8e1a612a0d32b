"""Exact enumeration of stopped values over stopping rules and control processes.

Every node of a subtree gets the set of values reachable on its own subtree
over all admissible choices (stop now, or continue with driver a). A parent
combines every combination of its children's candidates, so the root set
contains the value of every rule / control process. Only exact duplicates
are merged and no ordering property of the one-step map is assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backward
from .errors import EnumerationCapError

STOP = -1
DEFAULT_NODE_CAP = 64
DEFAULT_ROW_CAP = 5_000_000


@dataclass
class CandidateTable:
    values: np.ndarray
    action: np.ndarray
    ptr: np.ndarray


class Enumeration:
    """Candidate tables of one enumeration, with path reconstruction."""

    def __init__(self, model, root, tables):
        self.model = model
        self.root = root
        self.tables = tables

    @property
    def root_values(self) -> np.ndarray:
        return self.tables[self.root].values

    def best(self, kind: str) -> int:
        v = self.root_values
        return int(np.argmax(v) if kind == "max" else np.argmin(v))

    def extreme(self, node, kind: str) -> float:
        v = self.tables[node].values
        return float(v.max() if kind == "max" else v.min())

    def extract(self, choice: int) -> dict:
        """Action taken at every visited node for root candidate ``choice``."""
        out = {}
        B = self.model.B
        stack = [(self.root, choice)]
        while stack:
            node, c = stack.pop()
            tab = self.tables[node]
            a = int(tab.action[c])
            out[node] = a
            if a == STOP or node[0] == self.model.N:
                continue
            layer, idx = node
            for b in range(B):
                stack.append(((layer + 1, idx * B + b), int(tab.ptr[c, b])))
        return out


def _combos(sizes, cap_rows, node):
    total = 1
    for s in sizes:
        total *= int(s)
    if total > cap_rows:
        raise EnumerationCapError(f"{total} candidate combinations at node {node} exceed the cap of {cap_rows}")
    grids = np.indices(tuple(int(s) for s in sizes)).reshape(len(sizes), -1).T
    return grids


def enumerate_values(model, drivers, obstacle, root=(0, 0), *, mode: str = "free", stop_rule=None,
                     constraints=None, cap_nodes: int = DEFAULT_NODE_CAP,
                     cap_rows: int = DEFAULT_ROW_CAP) -> Enumeration:
    """Build candidate tables on the subtree of ``root``.

    Args:
        drivers: list of drivers, one per control value.
        mode: "free" (stop or continue with any driver), "reflect" (continue
            with any driver, then take the max with the obstacle) or "rule"
            (stop exactly at the first indicated node of ``stop_rule`` after
            ``root``, continue with any driver elsewhere).
        constraints: in "free" mode, optional {node: "stop" | "continue"}.
    """
    model.require_tree("enumeration")
    layer0, idx0 = root
    size = model.subtree_size(layer0, idx0)
    if size > cap_nodes:
        raise EnumerationCapError(f"subtree of {root} has {size} nodes, above the cap of {cap_nodes}")
    if mode not in ("free", "reflect", "rule"):
        raise ValueError(f"unknown enumeration mode {mode!r}")
    if mode == "rule" and stop_rule is None:
        raise ValueError("rule mode needs a stopping rule")
    for d in drivers:
        _backward.check_precondition(model, d)
    constraints = constraints or {}
    sub = model.subtree(layer0, idx0)
    N = model.N
    B = model.B
    stops = None
    if mode == "rule":
        ind = getattr(stop_rule, "indicators", stop_rule)
        stops = {}
        reached = {root}
        for d, nodes in enumerate(sub):
            layer = layer0 + d
            for n in nodes:
                node = (layer, int(n))
                if node not in reached:
                    continue
                s = bool(ind[layer][n]) or layer == N
                stops[node] = s
                if not s:
                    for b in range(B):
                        reached.add((layer + 1, int(n) * B + b))
    tables = {}
    for d in range(len(sub) - 1, -1, -1):
        layer = layer0 + d
        for n in sub[d]:
            n = int(n)
            node = (layer, n)
            xi = float(obstacle[layer][n])
            if stops is not None and node not in stops:
                continue
            if layer == N or (stops is not None and stops[node]) or constraints.get(node) == "stop":
                tables[node] = CandidateTable(np.array([xi]), np.array([STOP]), np.full((1, B), -1))
                continue
            kids = [tables[(layer + 1, n * B + b)] for b in range(B)]
            idx = _combos([len(k.values) for k in kids], cap_rows, node)
            child_vals = np.stack([kids[b].values[idx[:, b]] for b in range(B)], axis=1)
            nodes = np.full(len(idx), n, dtype=np.int64)
            vals = []
            acts = []
            ptrs = []
            if mode == "free" and constraints.get(node) != "continue":
                vals.append(np.array([xi]))
                acts.append(np.array([STOP]))
                ptrs.append(np.full((1, B), -1))
            for a, drv in enumerate(drivers):
                y = _backward.step(model, drv, layer, nodes, child_vals)[0]
                if mode == "reflect":
                    y = np.maximum(xi, y)
                vals.append(y)
                acts.append(np.full(len(y), a))
                ptrs.append(idx)
            vals = np.concatenate(vals)
            acts = np.concatenate(acts)
            ptrs = np.concatenate(ptrs)
            uniq, first = np.unique(vals, return_index=True)
            tables[node] = CandidateTable(uniq, acts[first], ptrs[first])
    return Enumeration(model, root, tables)


def rule_count(B: int, height: int) -> int:
    """Number of stopping rules on a subtree of the given height."""
    r = 1
    for _ in range(height):
        r = 1 + r ** B
    return r


def enumerate_rules(model, root=(0, 0), cap_rules: int = 200_000):
    """Every stopping rule on the subtree of ``root`` as first-stop masks.

    Returns a list (one entry per depth) of boolean arrays of shape
    (R, B**depth), aligned with ``model.subtree(*root)``.
    """
    model.require_tree("rule enumeration")
    B = model.B
    height = model.N - root[0]
    if rule_count(B, height) > cap_rules:
        raise EnumerationCapError(f"{rule_count(B, height)} stopping rules exceed the cap of {cap_rules}")
    rules = [np.ones((1, 1), dtype=bool)]
    for h in range(1, height + 1):
        R = rules[0].shape[0]
        idx = np.indices((R,) * B).reshape(B, -1).T
        M = idx.shape[0]
        new = [np.concatenate([np.ones((1, 1), dtype=bool), np.zeros((M, 1), dtype=bool)])]
        for e in range(1, h + 1):
            block = np.concatenate([rules[e - 1][idx[:, b]] for b in range(B)], axis=1)
            new.append(np.concatenate([np.zeros((1, B ** e), dtype=bool), block]))
        rules = new
    return rules


def evaluate_rules(model, driver, obstacle, root, rules) -> np.ndarray:
    """Stopped values at ``root`` for a batch of first-stop masks."""
    sub = model.subtree(*root)
    R = rules[0].shape[0]
    depth = len(sub) - 1
    V = np.broadcast_to(np.asarray(obstacle[root[0] + depth])[sub[depth]], (R, len(sub[depth])))
    for d in range(depth - 1, -1, -1):
        layer = root[0] + d
        g = sub[d]
        n = len(g)
        child = np.asarray(V).reshape(R * n, model.B)
        y = _backward.step(model, driver, layer, np.tile(g, R), child)[0].reshape(R, n)
        xi = np.asarray(obstacle[layer])[g][None, :]
        V = np.where(rules[d], xi, y)
    return np.asarray(V)[:, 0]


def masks_to_indicators(model, root, masks_row):
    """Global per-layer indicators from one rule's first-stop masks."""
    sub = model.subtree(*root)
    out = [np.zeros(model.layer_size(i), dtype=bool) for i in range(model.N + 1)]
    for d, nodes in enumerate(sub):
        out[root[0] + d][nodes] = masks_row[d]
    out[-1][:] = True
    return out
