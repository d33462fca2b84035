"""Bus voltages from reactive injections: linearized model and full sweep.

Both solvers share the sign conventions of the branch-flow recursion:
``P[k]``/``Q[k]`` are the sending-end flows on the line into bus
``labels[k]``, consumption counts positive, and ``ell[k]`` is the squared
current magnitude on that line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch, NegativeSquaredVoltage, NoConvergence
from .network import sensitivity_matrices

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class VoltageSolution:
    """Voltages plus per-line flows for one operating point."""

    v: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    ell: np.ndarray
    model: str
    iterations: int = 0


def branch_flows(feeder, net_p, net_q, ell=None):
    """Sending-end line flows for given net consumptions and line currents.

    With ``ell`` omitted this is the lossless accumulation: each line
    carries the net consumption of its subtree.  Otherwise every line adds
    its own loss ``r ell`` (resp. ``x ell``) and those of its subtree.
    """
    d = feeder.descendant_matrix
    if ell is None:
        return d @ net_p, d @ net_q
    return d @ (net_p + feeder.r * ell), d @ (net_q + feeder.x * ell)


def _net_consumption(feeder, q):
    q = np.asarray(q, dtype=float)
    if q.shape != (feeder.n,):
        raise DimensionMismatch(f"expected q of shape ({feeder.n},), got {q.shape}")
    net_p = feeder.p_c - feeder.injected_real_power()
    net_q = feeder.q_c - q
    return net_p, net_q


def linear_voltage(mats, q):
    """Open-loop voltages of the linearized model: ``v = X q + vtilde``."""
    q = np.asarray(q, dtype=float)
    if q.shape != (mats.n,):
        raise DimensionMismatch(f"expected q of shape ({mats.n},), got {q.shape}")
    feeder = mats.feeder
    net_p, net_q = _net_consumption(feeder, q)
    P, Q = branch_flows(feeder, net_p, net_q)
    return VoltageSolution(
        v=mats.X @ q + mats.vtilde,
        P=P,
        Q=Q,
        ell=np.zeros(feeder.n),
        model="linear",
    )


def distflow_sweep(feeder, q, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solve the full branch-flow recursion by backward/forward sweeps.

    Starts flat (``ell = 0``, ``v = v0``) and alternates flow accumulation,
    voltage propagation and current updates until the largest voltage change
    drops below ``tol``.

    Raises
    ------
    NoConvergence
        Iteration budget exhausted; the loading may be beyond the solvable
        region.
    NegativeSquaredVoltage
        A squared voltage went non-positive: infeasible operating point.
    """
    net_p, net_q = _net_consumption(feeder, q)
    n = feeder.n
    parent = feeder.parent
    path = feeder.descendant_matrix.T  # path[k, l]: line l lies on the root path of k
    r, x = feeder.r, feeder.x
    z2 = r * r + x * x
    v0sq = feeder.v0**2

    ell = np.zeros(n)
    v = np.full(n, feeder.v0)
    change = np.inf
    for it in range(1, max_iter + 1):
        P, Q = branch_flows(feeder, net_p, net_q, ell)
        drop = 2.0 * (r * P + x * Q) - z2 * ell
        v2 = v0sq - path @ drop
        if np.any(v2 <= 0.0):
            raise NegativeSquaredVoltage(
                f"squared voltage non-positive at bus positions "
                f"{np.flatnonzero(v2 <= 0.0).tolist()}"
            )
        v2_send = np.where(parent >= 0, v2[parent], v0sq)
        ell = (P * P + Q * Q) / v2_send
        v_new = np.sqrt(v2)
        change = float(np.abs(v_new - v).max())
        v = v_new
        if change < tol:
            return VoltageSolution(v=v, P=P, Q=Q, ell=ell, model="distflow", iterations=it)
    raise NoConvergence(max_iter, change)


@dataclass(frozen=True, eq=False)
class LinearizationReport:
    """Per-bus gap between the full sweep and the linearized model."""

    error: np.ndarray  # v_distflow - v_linear
    max_abs: float
    mean_abs: float
    v_linear: np.ndarray
    v_distflow: np.ndarray


def linearization_error(feeder, q, mats=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Quantify the linearization gap at injection ``q``."""
    if mats is None:
        mats = sensitivity_matrices(feeder)
    lin = linear_voltage(mats, q)
    full = distflow_sweep(feeder, q, tol=tol, max_iter=max_iter)
    err = full.v - lin.v
    return LinearizationReport(
        error=err,
        max_abs=float(np.abs(err).max()),
        mean_abs=float(np.abs(err).mean()),
        v_linear=lin.v,
        v_distflow=full.v,
    )
