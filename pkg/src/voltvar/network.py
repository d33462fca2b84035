"""Radial feeder model and voltage-sensitivity matrices.

Array conventions used throughout the package:

* "model space" vectors have length ``n`` and cover the non-slack buses in
  label-sorted order; position ``k`` corresponds to ``feeder.labels[k]``.
* per-line quantities are aligned with their downstream bus: entry ``k`` is
  the line between bus ``labels[k]`` and its parent.
* ``parent[k]`` is the model-space position of the upstream bus, or ``-1``
  when the upstream bus is the slack.

All public types are immutable after construction; operations are pure
functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType

import numpy as np

from .exceptions import (
    CycleDetected,
    DimensionMismatch,
    Disconnected,
    DuplicateId,
    InvalidRecord,
    NonPositiveImpedance,
    RootDegreeNotOne,
)

DEFAULT_NOMINAL_VOLTAGE = 1.0


@dataclass(frozen=True)
class Bus:
    """One bus record: loads and non-inverter generation in per unit."""

    id: int
    v_nom: float = DEFAULT_NOMINAL_VOLTAGE
    p_c: float = 0.0
    q_c: float = 0.0
    p_g: float = 0.0


@dataclass(frozen=True)
class Line:
    """One line record; orientation is derived, not taken from the record."""

    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True)
class Bases:
    """System base quantities; ``z_ohm`` defaults to v^2/s."""

    v_kv: float
    s_kva: float
    z_ohm: float = 0.0

    def __post_init__(self):
        if self.z_ohm == 0.0:
            object.__setattr__(
                self, "z_ohm", (self.v_kv * 1e3) ** 2 / (self.s_kva * 1e3)
            )


def _readonly(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Feeder:
    """A validated radial feeder rooted at the slack bus.

    Construct with :func:`build_feeder`; fields are documented there.
    """

    slack_label: int
    labels: tuple
    parent: np.ndarray
    r: np.ndarray
    x: np.ndarray
    p_c: np.ndarray
    q_c: np.ndarray
    p_g: np.ndarray
    v_nom: np.ndarray
    v0: float
    inverters: MappingProxyType
    curve_specs: MappingProxyType
    bases: Bases | None = None
    meta: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    @property
    def n(self):
        return len(self.labels)

    @cached_property
    def position(self):
        """Map bus label -> model-space position."""
        return MappingProxyType({lab: k for k, lab in enumerate(self.labels)})

    @cached_property
    def children(self):
        """children[k] lists positions whose parent is k; roots() for the slack."""
        kids = [[] for _ in range(self.n)]
        for k, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(k)
        return tuple(tuple(c) for c in kids)

    @cached_property
    def roots(self):
        """Positions whose parent is the slack bus (its children)."""
        return tuple(int(k) for k in np.flatnonzero(self.parent == -1))

    @cached_property
    def order(self):
        """Topological order (parents before children)."""
        out = []
        stack = list(reversed(self.roots))
        while stack:
            k = stack.pop()
            out.append(k)
            stack.extend(reversed(self.children[k]))
        return tuple(out)

    @cached_property
    def depth(self):
        d = np.zeros(self.n, dtype=int)
        for k in self.order:
            p = self.parent[k]
            d[k] = 1 if p < 0 else d[p] + 1
        d.setflags(write=False)
        return d

    @cached_property
    def descendants(self):
        """descendants[j]: sorted positions of beta(j), bus j included."""
        sets = [None] * self.n
        for k in reversed(self.order):
            acc = [k]
            for c in self.children[k]:
                acc.extend(sets[c])
            sets[k] = acc
        return tuple(np.array(sorted(s), dtype=int) for s in sets)

    @cached_property
    def descendant_matrix(self):
        """D[j, k] = 1 when bus k lies in the subtree of line j (beta(j))."""
        d = np.zeros((self.n, self.n))
        for j, desc in enumerate(self.descendants):
            d[j, desc] = 1.0
        d.setflags(write=False)
        return d

    def injected_real_power(self):
        """Total fixed real generation: bus p_g plus inverter operating power."""
        p = self.p_g.copy()
        for k, inv in self.inverters.items():
            p[k] += inv.p
        return p

    def path_positions(self, k):
        """Model-space positions of the lines from the slack down to bus k."""
        path = []
        while k >= 0:
            path.append(k)
            k = self.parent[k]
        return path[::-1]


@dataclass(frozen=True, eq=False)
class SensitivityMatrices:
    """The n-by-n voltage sensitivity matrices and the constant vector.

    ``v = X q + vtilde`` maps reactive injections to bus voltages in the
    linearized branch-flow model; R plays the same role for real power.
    """

    R: np.ndarray
    X: np.ndarray
    vtilde: np.ndarray
    feeder: Feeder

    @property
    def n(self):
        return self.X.shape[0]


def build_feeder(
    buses,
    lines,
    inverters=None,
    bases=None,
    slack_label=0,
    v0=1.0,
    curve_specs=None,
    meta=None,
):
    """Validate records and orient the tree away from the slack bus.

    Parameters
    ----------
    buses : iterable of Bus
        Must include the slack bus; the slack may carry no load, generation
        or inverter.
    lines : iterable of Line
        Exactly one line per non-slack bus; endpoint order is irrelevant.
    inverters : dict, optional
        Bus label -> Inverter.
    bases : Bases, optional
    slack_label : int
        Label of the fixed-voltage substation bus.
    v0 : float
        Slack-bus voltage in per unit.
    curve_specs : dict, optional
        Bus label -> control-curve description (kept verbatim, see control
        module for the schema).
    meta : dict, optional
        Free-form provenance (unit conversions applied, power factor, ...).

    Raises
    ------
    DuplicateId, Disconnected, CycleDetected, NonPositiveImpedance
    """
    buses = list(buses)
    lines = list(lines)
    inverters = dict(inverters or {})
    curve_specs = dict(curve_specs or {})

    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise DuplicateId("duplicate bus ids")
    by_id = {b.id: b for b in buses}
    if slack_label not in by_id:
        raise Disconnected(f"slack bus {slack_label} not among bus records")

    slack = by_id[slack_label]
    if slack.p_c or slack.q_c or slack.p_g or slack_label in inverters:
        raise InvalidRecord(
            f"slack bus {slack_label} must carry no load, generation or inverter"
        )

    adj = {i: [] for i in ids}
    seen_pairs = set()
    for ln in lines:
        if ln.from_bus not in by_id or ln.to_bus not in by_id:
            raise Disconnected(
                f"line ({ln.from_bus}, {ln.to_bus}) references an unknown bus"
            )
        if ln.r <= 0 or ln.x <= 0:
            raise NonPositiveImpedance(
                f"line ({ln.from_bus}, {ln.to_bus}) has r={ln.r}, x={ln.x}; "
                "both must be positive"
            )
        pair = frozenset((ln.from_bus, ln.to_bus))
        if len(pair) == 1 or pair in seen_pairs:
            raise CycleDetected(f"repeated or self line ({ln.from_bus}, {ln.to_bus})")
        seen_pairs.add(pair)
        adj[ln.from_bus].append((ln.to_bus, ln))
        adj[ln.to_bus].append((ln.from_bus, ln))

    nonslack = sorted(i for i in ids if i != slack_label)
    n = len(nonslack)
    if len(lines) > n:
        raise CycleDetected(
            f"{n} non-slack buses admit at most {n} lines, got {len(lines)}"
        )

    pos = {lab: k for k, lab in enumerate(nonslack)}
    parent = np.full(n, -2, dtype=int)
    r = np.zeros(n)
    x = np.zeros(n)
    visited = {slack_label}
    came_in = {slack_label: None}
    stack = [slack_label]
    while stack:
        u = stack.pop()
        for w, ln in adj[u]:
            if ln is came_in[u]:
                continue
            if w in visited:
                raise CycleDetected(
                    f"cycle through line ({ln.from_bus}, {ln.to_bus})"
                )
            visited.add(w)
            came_in[w] = ln
            k = pos[w]
            parent[k] = -1 if u == slack_label else pos[u]
            r[k] = ln.r
            x[k] = ln.x
            stack.append(w)
    if len(visited) != len(ids):
        unreached = set(ids) - visited
        stray = sum(
            1 for ln in lines if ln.from_bus in unreached and ln.to_bus in unreached
        )
        if stray >= len(unreached):
            raise CycleDetected(
                f"buses {sorted(unreached)} form a cycle detached from the slack"
            )
        raise Disconnected(
            f"buses {sorted(unreached)} unreachable from slack {slack_label}"
        )

    for lab in list(inverters) + list(curve_specs):
        if lab not in by_id or lab == slack_label:
            raise InvalidRecord(f"inverter/curve attached to invalid bus {lab}")

    p_c = np.array([by_id[lab].p_c for lab in nonslack])
    q_c = np.array([by_id[lab].q_c for lab in nonslack])
    p_g = np.array([by_id[lab].p_g for lab in nonslack])
    v_nom = np.array([by_id[lab].v_nom for lab in nonslack])
    parent.setflags(write=False)

    return Feeder(
        slack_label=slack_label,
        labels=tuple(nonslack),
        parent=parent,
        r=_readonly(r),
        x=_readonly(x),
        p_c=_readonly(p_c),
        q_c=_readonly(q_c),
        p_g=_readonly(p_g),
        v_nom=_readonly(v_nom),
        v0=float(v0),
        inverters=MappingProxyType({pos[lab]: inv for lab, inv in inverters.items()}),
        curve_specs=MappingProxyType(
            {pos[lab]: dict(spec) for lab, spec in curve_specs.items()}
        ),
        bases=bases,
        meta=MappingProxyType(dict(meta or {})),
    )


def sensitivity_matrices(feeder):
    """Build R, X and the constant vector of the linearized model.

    ``X[i, j]`` sums line reactances over the common root path of buses i
    and j (likewise R with resistances); ``vtilde`` collects the effect of
    the fixed injections: ``v0 + R (p_g - p_c) - X q_c``.
    """
    n = feeder.n
    parent, order = feeder.parent, feeder.order
    xdep = np.zeros(n)
    rdep = np.zeros(n)
    depth = feeder.depth
    for k in order:
        p = parent[k]
        xdep[k] = feeder.x[k] + (xdep[p] if p >= 0 else 0.0)
        rdep[k] = feeder.r[k] + (rdep[p] if p >= 0 else 0.0)

    X = np.zeros((n, n))
    R = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            a, b = i, j
            while a != b and a >= 0 and b >= 0:
                if depth[a] >= depth[b]:
                    a = parent[a]
                else:
                    b = parent[b]
            if a == b and a >= 0:  # else: different subtrees, empty common path
                X[i, j] = X[j, i] = xdep[a]
                R[i, j] = R[j, i] = rdep[a]

    vtilde = feeder.v0 + R @ (feeder.injected_real_power() - feeder.p_c) - X @ feeder.q_c
    return SensitivityMatrices(
        R=_readonly(R), X=_readonly(X), vtilde=_readonly(vtilde), feeder=feeder
    )


def explicit_inverse_x(feeder):
    """Closed-form inverse of the reactance matrix.

    The inverse is the weighted Laplacian of the tree with reciprocal line
    reactances, plus ``1/x`` on the diagonal entry of each bus adjacent to
    the slack.  Subtrees hanging off the slack decouple, so a slack of
    degree greater than one simply yields a block-diagonal result in the
    same index space.
    """
    n = feeder.n
    out = np.zeros((n, n))
    for k in range(n):
        w = 1.0 / feeder.x[k]
        p = feeder.parent[k]
        out[k, k] += w
        if p >= 0:
            out[p, p] += w
            out[k, p] -= w
            out[p, k] -= w
    return out


def voltage_deviation_form(feeder, q, mats=None):
    """Split the voltage-deviation quadratic into root and neighbor terms.

    Returns ``(root_term, neighbor_term)`` where ``root_term`` is
    ``(v_1 - v_nom)^2 / x`` for the single bus adjacent to the slack and
    ``neighbor_term`` sums ``(v_i - v_j)^2 / x_ij`` over internal lines.
    Half their sum equals ``0.5 (v - v_nom)^T X^{-1} (v - v_nom)``.

    Raises ``RootDegreeNotOne`` when the slack has several children.
    """
    if mats is None:
        mats = sensitivity_matrices(feeder)
    if len(feeder.roots) != 1:
        raise RootDegreeNotOne(
            f"slack bus has degree {len(feeder.roots)}; the two-part "
            "decomposition requires degree one"
        )
    q = np.asarray(q, dtype=float)
    if q.shape != (feeder.n,):
        raise DimensionMismatch(f"expected q of shape ({feeder.n},), got {q.shape}")
    dev = mats.X @ q + mats.vtilde - feeder.v_nom
    first = feeder.roots[0]
    root_term = dev[first] ** 2 / feeder.x[first]
    neighbor_term = 0.0
    for k in range(feeder.n):
        p = feeder.parent[k]
        if p >= 0:
            neighbor_term += (dev[k] - dev[p]) ** 2 / feeder.x[k]
    return float(root_term), float(neighbor_term)
