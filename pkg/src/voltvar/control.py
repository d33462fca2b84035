"""Volt/VAR control curves, inverter capability sets and projection.

A control curve maps the local voltage error ``v - v_nom`` (per unit) to a
reactive-power command.  Curves are non-increasing, flat on a symmetric
deadband around zero, strictly decreasing and differentiable off it, and
carry a bound ``alpha_bar`` on the magnitude of their derivative.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch, InvalidRecord

DEFAULT_DEADBAND = 0.04  # total width, i.e. a 0.98..1.02 p.u. band


@dataclass(frozen=True)
class Inverter:
    """Inverter operating point: apparent capacity s, real output p, and an
    optional power-factor angle limit rho (radians); rho=None means the
    capacity circle alone bounds reactive output."""

    s: float
    p: float
    rho: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.p <= self.s:
            raise InvalidRecord(f"inverter requires 0 <= p <= s, got p={self.p}, s={self.s}")
        if self.rho is not None and not 0.0 <= self.rho <= math.pi / 2:
            raise InvalidRecord(f"rho must lie in [0, pi/2], got {self.rho}")


def reactive_limits(inverter):
    """Reactive capability interval (q_min, q_max) of one inverter.

    The headroom is the tighter of the power-factor cone ``p tan(rho)`` and
    the capacity circle ``sqrt(s^2 - p^2)``; ``None`` means no inverter, a
    singleton at zero.
    """
    if inverter is None:
        return 0.0, 0.0
    cap = math.sqrt(max(inverter.s**2 - inverter.p**2, 0.0))
    if inverter.rho is not None:
        cap = min(cap, inverter.p * math.tan(inverter.rho))
    return -cap, cap


def limits_arrays(feeder):
    """Per-bus (q_min, q_max) arrays; buses without inverters get {0}."""
    q_min = np.zeros(feeder.n)
    q_max = np.zeros(feeder.n)
    for k, inv in feeder.inverters.items():
        q_min[k], q_max[k] = reactive_limits(inv)
    return q_min, q_max


def project_box(q, q_min, q_max):
    """Componentwise projection onto the box [q_min, q_max]."""
    q = np.asarray(q, dtype=float)
    q_min = np.asarray(q_min, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    if np.any(q_min > q_max):
        raise DimensionMismatch("q_min exceeds q_max somewhere")
    return np.clip(q, q_min, q_max)


class ControlCurve(ABC):
    """Interface shared by all Volt/VAR control curves."""

    @abstractmethod
    def __call__(self, v_err):
        """Reactive command for voltage error v_err (scalar or array)."""

    @abstractmethod
    def inverse(self, q):
        """Voltage error producing command q, with inverse(0) = 0 on the
        deadband by convention."""

    @abstractmethod
    def cost(self, q):
        """Provisioning cost: minus the integral of the inverse from 0 to q.

        Convex with cost(0) = 0."""

    @property
    @abstractmethod
    def alpha_bar(self):
        """Upper bound on |f'| wherever the curve is differentiable."""

    @property
    @abstractmethod
    def deadband_edges(self):
        """(lo, hi) voltage errors bracketing the zero-output plateau."""

    @property
    def deadband(self):
        lo, hi = self.deadband_edges
        return hi - lo


@dataclass(frozen=True)
class DroopCurve(ControlCurve):
    """Piecewise-linear droop with slope -alpha outside a symmetric deadband
    of total width ``deadband``."""

    alpha: float
    deadband: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0 or self.deadband < 0:
            raise InvalidRecord(
                f"droop needs alpha > 0 and deadband >= 0, "
                f"got {self.alpha}, {self.deadband}"
            )

    def __call__(self, v_err):
        h = self.deadband / 2.0
        v = np.asarray(v_err, dtype=float)
        u = -self.alpha * np.maximum(v - h, 0.0) + self.alpha * np.maximum(-v - h, 0.0)
        return float(u) if u.ndim == 0 else u

    def inverse(self, q):
        h = self.deadband / 2.0
        qa = np.asarray(q, dtype=float)
        out = np.where(qa < 0, -qa / self.alpha + h, np.where(qa > 0, -qa / self.alpha - h, 0.0))
        return float(out) if out.ndim == 0 else out

    def cost(self, q):
        qa = np.asarray(q, dtype=float)
        c = qa * qa / (2.0 * self.alpha) + (self.deadband / 2.0) * np.abs(qa)
        return float(c) if c.ndim == 0 else c

    @property
    def alpha_bar(self):
        return self.alpha

    @property
    def deadband_edges(self):
        h = self.deadband / 2.0
        return -h, h


class TableCurve(ControlCurve):
    """Monotone curve given as breakpoints [(v_err, q), ...].

    Points must be strictly increasing in v_err and non-increasing in q;
    the only flat stretch allowed is the zero-output deadband, and the end
    segments extrapolate with their own slopes so the curve keeps strictly
    decreasing toward +-infinity.
    """

    def __init__(self, points):
        pts = sorted((float(v), float(u)) for v, u in points)
        if len(pts) < 2:
            raise InvalidRecord("table curve needs at least two points")
        v = np.array([p[0] for p in pts])
        u = np.array([p[1] for p in pts])
        if np.any(np.diff(v) <= 0):
            raise InvalidRecord("table v_err values must be strictly increasing")
        if np.any(np.diff(u) > 1e-15):
            raise InvalidRecord("table curve must be non-increasing")
        slopes = np.diff(u) / np.diff(v)
        flat = slopes > -1e-15
        if np.any(flat & ((u[:-1] != 0.0) | (u[1:] != 0.0))):
            raise InvalidRecord("flat table segments are only allowed at zero output")
        if flat[0] or flat[-1]:
            raise InvalidRecord("end segments must be strictly decreasing")
        if abs(float(np.interp(0.0, v, u))) > 1e-12:
            raise InvalidRecord("table curve must be zero at zero voltage error")
        self._v = v
        self._u = u
        self._slopes = slopes
        # plateau edges: where the curve reaches/leaves zero output
        pos = np.flatnonzero(u > 0)
        neg = np.flatnonzero(u < 0)
        lo_edge = v[pos[-1]] - u[pos[-1]] / slopes[pos[-1]] if pos.size else v[0]
        hi_edge = v[neg[0]] - u[neg[0]] / slopes[neg[0] - 1] if neg.size else v[-1]
        self._edges = (float(lo_edge), float(hi_edge))
        # branch tables with ascending output, plateau edge included
        pv = np.append(v[pos], lo_edge)
        pu = np.append(u[pos], 0.0)
        self._pos_q, self._pos_v = pu[::-1], pv[::-1]
        nv = np.insert(v[neg], 0, hi_edge)
        nu = np.insert(u[neg], 0, 0.0)
        self._neg_q, self._neg_v = nu[::-1], nv[::-1]

    def __call__(self, v_err):
        v, u, s = self._v, self._u, self._slopes
        va = np.asarray(v_err, dtype=float)
        out = np.interp(va, v, u)
        out = np.where(va < v[0], u[0] + s[0] * (va - v[0]), out)
        out = np.where(va > v[-1], u[-1] + s[-1] * (va - v[-1]), out)
        return float(out) if out.ndim == 0 else out

    def inverse(self, q):
        v, u, s = self._v, self._u, self._slopes

        def one(qi):
            if qi == 0.0:
                return 0.0
            if qi > u[0]:
                return v[0] + (qi - u[0]) / s[0]
            if qi < u[-1]:
                return v[-1] + (qi - u[-1]) / s[-1]
            if qi > 0:
                return float(np.interp(qi, self._pos_q, self._pos_v))
            return float(np.interp(qi, self._neg_q, self._neg_v))

        qa = np.asarray(q, dtype=float)
        if qa.ndim == 0:
            return one(float(qa))
        return np.array([one(float(qi)) for qi in qa])

    def cost(self, q):
        def one(qi):
            if qi == 0.0:
                return 0.0
            # integrate -inverse over [0, qi] exactly: inverse is piecewise
            # linear in q with breakpoints at the table outputs
            brks = [b for b in self._u if (0 < b < qi) or (qi < b < 0)]
            grid = np.array([0.0] + sorted(brks, key=abs) + [qi])
            total = 0.0
            for a, b in zip(grid[:-1], grid[1:]):
                avg_height = -0.5 * (self.inverse(_off_zero(a, b)) + self.inverse(b))
                total += avg_height * (b - a)
            return total

        qa = np.asarray(q, dtype=float)
        if qa.ndim == 0:
            return one(float(qa))
        return np.array([one(float(qi)) for qi in qa])

    @property
    def alpha_bar(self):
        return float(-self._slopes.min())

    @property
    def deadband_edges(self):
        return self._edges


def _off_zero(a, b):
    """Nudge the segment start off the inverse's jump at q = 0."""
    if a != 0.0:
        return a
    return math.copysign(1e-300, b - a)


class FunctionCurve(ControlCurve):
    """Curve from an arbitrary non-increasing callable.

    The inverse is found by expanding-bracket bisection to 1e-12 and the
    cost by composite Simpson quadrature, so analytic forms should be
    preferred when available.
    """

    def __init__(self, func, alpha_bar, deadband=0.0):
        self._f = func
        self._alpha_bar = float(alpha_bar)
        self._deadband = float(deadband)

    def __call__(self, v_err):
        va = np.asarray(v_err, dtype=float)
        if va.ndim == 0:
            return float(self._f(float(va)))
        return np.array([float(self._f(float(v))) for v in va])

    def inverse(self, q, tol=1e-12):
        def one(qi):
            if qi == 0.0:
                return 0.0
            lo, hi = -1.0, 1.0
            while self._f(lo) < qi:
                lo *= 2.0
            while self._f(hi) > qi:
                hi *= 2.0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if hi - lo < tol:
                    break
                if self._f(mid) > qi:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)

        qa = np.asarray(q, dtype=float)
        if qa.ndim == 0:
            return one(float(qa))
        return np.array([one(float(qi)) for qi in qa])

    def cost(self, q, samples=513):
        def one(qi):
            if qi == 0.0:
                return 0.0
            s = np.linspace(0.0, qi, samples)
            s[0] = _off_zero(0.0, qi)
            vals = -self.inverse(s)
            h = qi / (samples - 1)
            return float(h / 3.0 * (vals[0] + vals[-1] + 4 * vals[1::2].sum() + 2 * vals[2:-1:2].sum()))

        qa = np.asarray(q, dtype=float)
        if qa.ndim == 0:
            return one(float(qa))
        return np.array([one(float(qi)) for qi in qa])

    @property
    def alpha_bar(self):
        return self._alpha_bar

    @property
    def deadband_edges(self):
        h = self._deadband / 2.0
        return -h, h


def curve_from_spec(spec, alpha=None, deadband=None):
    """Materialize a curve from its JSON description.

    ``{"type": "droop", "alpha": a, "deadband": d}`` or
    ``{"type": "table", "points": [[v_err, q], ...]}``; the keyword
    arguments override the stored droop parameters.
    """
    kind = spec.get("type")
    if kind == "droop":
        return DroopCurve(
            alpha=float(alpha if alpha is not None else spec["alpha"]),
            deadband=float(deadband if deadband is not None else spec.get("deadband", 0.0)),
        )
    if kind == "table":
        if alpha is not None or deadband is not None:
            raise InvalidRecord("alpha/deadband overrides apply to droop curves only")
        return TableCurve(spec["points"])
    raise InvalidRecord(f"unknown curve type {kind!r}")


class CurveBundle:
    """Vectorized view over the per-bus curves of the controllable buses.

    ``positions`` are the model-space indices carrying a curve, sorted; the
    evaluation methods act on arrays over exactly those positions.  Droop
    curves get closed-form vector paths, anything else falls back to a
    per-bus loop.
    """

    def __init__(self, curves):
        self.curves = dict(curves)
        self.positions = np.array(sorted(self.curves), dtype=int)
        ordered = [self.curves[int(k)] for k in self.positions]
        self.alpha_bar = np.array([c.alpha_bar for c in ordered])
        self.lo = np.array([c.deadband_edges[0] for c in ordered])
        self.hi = np.array([c.deadband_edges[1] for c in ordered])
        self._all_droop = all(isinstance(c, DroopCurve) for c in ordered)
        self._ordered = ordered
        if self._all_droop:
            self._alpha = np.array([c.alpha for c in ordered])

    def __len__(self):
        return len(self.positions)

    @property
    def all_droop(self):
        return self._all_droop

    def evaluate(self, v_err):
        if self._all_droop:
            return -self._alpha * np.maximum(v_err - self.hi, 0.0) + self._alpha * np.maximum(
                self.lo - v_err, 0.0
            )
        return np.array([c(v) for c, v in zip(self._ordered, v_err)])

    def inverse(self, q):
        if self._all_droop:
            return np.where(
                q < 0,
                -q / self._alpha + self.hi,
                np.where(q > 0, -q / self._alpha + self.lo, 0.0),
            )
        return np.array([c.inverse(v) for c, v in zip(self._ordered, q)])

    def cost(self, q):
        if self._all_droop:
            return q * q / (2.0 * self._alpha) + self.hi * np.abs(q)
        return np.array([c.cost(v) for c, v in zip(self._ordered, q)])


def lipschitz_constant(curves, X):
    """Modulus of the voltage-to-control feedback map.

    Largest singular value of ``diag(alpha_bar) X`` restricted to the buses
    that actually carry a curve: buses with a singleton feasible set neither
    move nor respond, so they drop out of the feedback loop.
    """
    bundle = curves if isinstance(curves, CurveBundle) else CurveBundle(curves)
    if len(bundle) == 0:
        return 0.0
    sub = np.asarray(X)[np.ix_(bundle.positions, bundle.positions)]
    return float(np.linalg.svd(bundle.alpha_bar[:, None] * sub, compute_uv=False).max())
