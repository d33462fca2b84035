"""Closed-loop Volt/VAR dynamics, convergence tests and the equilibrium solver.

Three feedback laws act on the reactive injections of the buses that carry
control curves:

* ``d1`` replaces the injection with the curve output each step,
* ``d2`` takes a projected subgradient step on the equilibrium objective,
* ``d3`` blends the previous injection with the curve output (projected
  pseudo-gradient step).

Buses whose feasible set is a singleton stay pinned throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .control import (
    DEFAULT_DEADBAND,
    CurveBundle,
    curve_from_spec,
    limits_arrays,
    project_box,
)
from .exceptions import DimensionMismatch, InvalidRecord, MaxIterations
from .network import sensitivity_matrices

CONTROLLER_KINDS = ("d1", "d2", "d3")
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10000
OSCILLATION_WINDOW = 50


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    """Which feedback law runs, with its stepsizes, curves and box limits."""

    kind: str
    curves: dict
    q_min: np.ndarray
    q_max: np.ndarray
    gamma2: float | None = None
    gamma3: float | None = None

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise InvalidRecord(f"controller kind must be one of {CONTROLLER_KINDS}")
        if self.kind == "d2" and not (self.gamma2 and self.gamma2 > 0):
            raise InvalidRecord("d2 requires a positive gamma2")
        if self.kind == "d3" and not (self.gamma3 and self.gamma3 > 0):
            raise InvalidRecord("d3 requires a positive gamma3")

    @cached_property
    def bundle(self):
        return CurveBundle(self.curves)

    @classmethod
    def from_feeder(cls, feeder, kind, alpha=None, deadband=None, gamma2=None, gamma3=None):
        """Materialize curves from the feeder's stored specs.

        ``alpha``/``deadband`` override stored droop parameters; inverter
        buses without a stored spec get a droop curve when ``alpha`` is
        given.
        """
        curves = {}
        for k in feeder.inverters:
            spec = feeder.curve_specs.get(k)
            if spec is not None:
                curves[k] = curve_from_spec(spec, alpha=alpha, deadband=deadband)
            elif alpha is not None:
                curves[k] = curve_from_spec(
                    {"type": "droop", "alpha": alpha, "deadband": DEFAULT_DEADBAND},
                    deadband=deadband,
                )
            else:
                raise InvalidRecord(
                    f"bus {feeder.labels[k]} has an inverter but no curve; "
                    "provide alpha or a curve spec"
                )
        q_min, q_max = limits_arrays(feeder)
        return cls(kind=kind, curves=curves, q_min=q_min, q_max=q_max,
                   gamma2=gamma2, gamma3=gamma3)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states of one closed-loop run.

    ``times[i]`` indexes the recorded state ``q[i]``/``v[i]``;
    ``residuals[i]`` is the step change into that state.  When the
    objective is tracked, ``cum_objective[i]`` holds the sum of objective
    values over the first ``times[i]`` states (the running-average
    numerator).  ``q_average`` averages the states entering each of the
    ``steps`` updates.
    """

    times: np.ndarray
    q: np.ndarray
    v: np.ndarray
    residuals: np.ndarray
    verdict: str
    steps: int
    converged_at: int | None = None
    objective: np.ndarray | None = None
    cum_objective: np.ndarray | None = None
    q_average: np.ndarray | None = None

    @property
    def final_q(self):
        return self.q[-1]

    @property
    def final_v(self):
        return self.v[-1]


def _active_update(kind, qa, u, finv_err, verr, lo, hi, gamma2, gamma3, lo_box, hi_box):
    """One update of the active coordinates; ``u`` is the curve output."""
    if kind == "d1":
        return np.clip(u, lo_box, hi_box)
    if kind == "d3":
        return np.clip((1.0 - gamma3) * qa + gamma3 * u, lo_box, hi_box)
    grad = np.where(
        qa != 0.0,
        -finv_err + verr,
        np.where(verr > hi, verr - hi, np.where(verr < lo, verr - lo, verr)),
    )
    return np.clip(qa - gamma2 * grad, lo_box, hi_box)


def _apply_step(kind, q, v, config, v_nom):
    bundle = config.bundle
    act = bundle.positions
    verr = (np.asarray(v, float) - v_nom)[act]
    qa = np.asarray(q, float)[act]
    u = bundle.evaluate(verr)
    finv = bundle.inverse(qa) if kind == "d2" else None
    nxt = project_box(q, config.q_min, config.q_max)
    nxt[act] = _active_update(
        kind, qa, u, finv, verr, bundle.lo, bundle.hi,
        config.gamma2, config.gamma3, config.q_min[act], config.q_max[act],
    )
    return nxt


def step_d1(q, v, config, v_nom):
    """Non-incremental update: inject the curve output, projected."""
    return _apply_step("d1", q, v, config, v_nom)


def step_d2(q, v, config, v_nom):
    """Projected subgradient step on the equilibrium objective.

    The subgradient selection at a zero injection depends on where the
    voltage error sits relative to the deadband edges; no smoothing is
    applied at the kink.
    """
    return _apply_step("d2", q, v, config, v_nom)


def step_d3(q, v, config, v_nom):
    """Pseudo-gradient update: blend previous injection with curve output."""
    return _apply_step("d3", q, v, config, v_nom)


class _LinearPlant:
    kind = "linear"

    def __init__(self, mats):
        self.mats = mats

    def voltages(self, q):
        return self.mats.X @ q + self.mats.vtilde


class _DistflowPlant:
    kind = "distflow"

    def __init__(self, feeder, tol=1e-10, max_iter=100):
        from .powerflow import distflow_sweep

        self._solve = lambda q: distflow_sweep(feeder, q, tol=tol, max_iter=max_iter).v

    def voltages(self, q):
        return self._solve(q)


def make_plant(feeder, kind="linear", mats=None):
    if kind == "linear":
        return _LinearPlant(mats if mats is not None else sensitivity_matrices(feeder))
    if kind == "distflow":
        return _DistflowPlant(feeder)
    raise InvalidRecord(f"unknown plant kind {kind!r}")


_SCALAR_PATH_LIMIT = 16


class _LoopRecord:
    """Raw per-run bookkeeping shared by the two loop implementations."""

    __slots__ = ("times", "qa", "v", "res", "obj", "cum", "verdict",
                 "converged_at", "steps", "qa_sum")

    def __init__(self):
        self.times, self.qa, self.v, self.res = [], [], [], []
        self.obj, self.cum = [], []
        self.verdict, self.converged_at, self.steps = "max_iterations", None, 0
        self.qa_sum = None


def _loop_array(kind, verr_of, qa, bundle, lo_box, hi_box, tol, max_iter,
                record_every, window, gamma2, gamma3, f_active=None):
    """Generic vectorized loop; ``verr_of(qa)`` yields (verr_active, v_full)."""
    rec = _LoopRecord()
    qa_sum = np.zeros(qa.size)
    cum_objective = 0.0
    win_min, prev_win_min = np.inf, None
    res = 0.0
    qa_prev = qa

    def push(t, verr_v, f_val):
        rec.times.append(t)
        rec.qa.append(qa.copy())
        rec.v.append(verr_v)
        rec.res.append(res)
        if f_active is not None:
            rec.obj.append(f_val)
            rec.cum.append(cum_objective)

    for t in range(max_iter + 1):
        verr_a, v_full = verr_of(qa)
        f_val = f_active(qa) if f_active is not None else None
        res = float(np.abs(qa - qa_prev).max()) if t > 0 else 0.0
        recorded = t % record_every == 0
        if recorded:
            push(t, v_full, f_val)
        if t > 0 and res < tol:
            rec.verdict, rec.converged_at = "converged", t
            if not recorded:
                push(t, v_full, f_val)
            break
        if t == max_iter:
            if not recorded:
                push(t, v_full, f_val)
            break
        if t > 0 and window:
            win_min = min(win_min, res)
            if t % window == 0:
                if prev_win_min is not None and win_min >= prev_win_min and win_min >= tol:
                    rec.verdict = "oscillating"
                    if not recorded:
                        push(t, v_full, f_val)
                    break
                prev_win_min, win_min = win_min, np.inf
        if f_active is not None:
            cum_objective += f_val
        qa_sum += qa
        qa_prev = qa
        u = bundle.evaluate(verr_a)
        finv = bundle.inverse(qa) if kind == "d2" else None
        qa = _active_update(kind, qa, u, finv, verr_a, bundle.lo, bundle.hi,
                            gamma2, gamma3, lo_box, hi_box)
        rec.steps = t + 1
    rec.qa_sum = qa_sum
    return rec


def _loop_scalar(kind, x_aa, base_err, bundle, qa0, lo_box, hi_box, tol,
                 max_iter, record_every, window, gamma2, gamma3):
    """Plain-float loop for small all-droop systems on the linear plant.

    Mirrors ``_loop_array`` step for step; numpy's per-call overhead
    dominates on five-dimensional arrays, and million-step subgradient runs
    need the ~10x headroom.
    """
    m = qa0.size
    rows = [tuple(float(v) for v in x_aa[i]) for i in range(m)]
    base = [float(v) for v in base_err]
    alpha = [float(v) for v in bundle.alpha_bar]
    lo = [float(v) for v in bundle.lo]
    hi = [float(v) for v in bundle.hi]
    lob = [float(v) for v in lo_box]
    hib = [float(v) for v in hi_box]
    q = [float(v) for v in qa0]
    qs = [0.0] * m
    rng = range(m)

    rec = _LoopRecord()
    win_min, prev_win_min = float("inf"), None
    res = 0.0
    q_prev = q

    def push(t):
        rec.times.append(t)
        rec.qa.append(np.array(q))
        rec.v.append(None)
        rec.res.append(res)

    for t in range(max_iter + 1):
        if t > 0:
            res = 0.0
            for i in rng:
                d = q[i] - q_prev[i]
                if d < 0.0:
                    d = -d
                if d > res:
                    res = d
        recorded = t % record_every == 0
        if recorded:
            push(t)
        if t > 0 and res < tol:
            rec.verdict, rec.converged_at = "converged", t
            if not recorded:
                push(t)
            break
        if t == max_iter:
            if not recorded:
                push(t)
            break
        if t > 0 and window:
            if res < win_min:
                win_min = res
            if t % window == 0:
                if prev_win_min is not None and win_min >= prev_win_min and win_min >= tol:
                    rec.verdict = "oscillating"
                    if not recorded:
                        push(t)
                    break
                prev_win_min, win_min = win_min, float("inf")
        q_prev = q
        nxt = [0.0] * m
        for i in rng:
            qs[i] += q[i]
            row = rows[i]
            verr = base[i]
            for j in rng:
                verr += row[j] * q[j]
            a, qi = alpha[i], q[i]
            d_hi = verr - hi[i]
            d_lo = lo[i] - verr
            u = (-a * d_hi if d_hi > 0.0 else 0.0) + (a * d_lo if d_lo > 0.0 else 0.0)
            if kind == "d1":
                val = u
            elif kind == "d3":
                val = (1.0 - gamma3) * qi + gamma3 * u
            else:
                if qi != 0.0:
                    finv = -qi / a + (hi[i] if qi < 0.0 else lo[i])
                    grad = -finv + verr
                elif d_hi > 0.0:
                    grad = d_hi
                elif d_lo > 0.0:
                    grad = verr - lo[i]
                else:
                    grad = verr
                val = qi - gamma2 * grad
            if val < lob[i]:
                val = lob[i]
            elif val > hib[i]:
                val = hib[i]
            nxt[i] = val
        q = nxt
        rec.steps = t + 1
    rec.qa_sum = np.array(qs)
    return rec


def simulate(
    feeder,
    config,
    plant="linear",
    q0=None,
    tol=DEFAULT_TOL,
    max_iter=DEFAULT_MAX_ITER,
    record_every=1,
    track_objective=False,
    oscillation_window=OSCILLATION_WINDOW,
    mats=None,
):
    """Iterate the configured feedback law against the chosen plant.

    Returns a Trajectory whose verdict is ``converged`` once the step change
    drops below ``tol``, ``oscillating`` when the smallest residual of the
    latest window stopped improving on the previous window's (both above
    tolerance), and ``max_iterations`` otherwise.  ``record_every`` thins
    the stored states; the initial and final states are always kept.
    ``oscillation_window=None`` disables the detector.

    Linear-plant runs iterate on the controllable coordinates only, and
    small all-droop systems drop to a plain-float inner loop, so long runs
    on feeders with few inverters stay cheap.
    """
    if record_every < 1 or max_iter < 1:
        raise InvalidRecord("record_every and max_iter must be at least 1")
    if isinstance(plant, str):
        if plant == "linear" and mats is None:
            mats = sensitivity_matrices(feeder)
        plant = make_plant(feeder, plant, mats)
    bundle = config.bundle
    act = bundle.positions
    if act.size == 0:
        raise InvalidRecord("no controllable buses: nothing to simulate")
    n = feeder.n
    v_nom = feeder.v_nom

    q = np.zeros(n) if q0 is None else np.asarray(q0, dtype=float).copy()
    if q.shape != (n,):
        raise DimensionMismatch(f"expected q0 of shape ({n},), got {q.shape}")
    q = project_box(q, config.q_min, config.q_max)
    qa = q[act].copy()
    lo_box, hi_box = config.q_min[act], config.q_max[act]

    linear = plant.kind == "linear"
    if linear:
        X = plant.mats.X
        others = np.setdiff1d(np.arange(n), act)
        x_aa = X[np.ix_(act, act)]
        base_full = X[:, others] @ q[others] + plant.mats.vtilde
        base_err = base_full[act] - v_nom[act]
        x_full = X[:, act]

    f_active = None
    if track_objective:
        if mats is None:
            mats = plant.mats if linear else sensitivity_matrices(feeder)
        others_all = np.setdiff1d(np.arange(n), act)
        dv_a = (mats.vtilde - v_nom)[act] + mats.X[np.ix_(act, others_all)] @ q[others_all]
        x_aa_obj = mats.X[np.ix_(act, act)]
        q_o = q[others_all]
        const_obj = 0.5 * q_o @ (mats.X[np.ix_(others_all, others_all)] @ q_o) + q_o @ (
            mats.vtilde - v_nom
        )[others_all]

        def f_active(qa):
            return float(
                bundle.cost(qa).sum() + 0.5 * qa @ (x_aa_obj @ qa) + qa @ dv_a + const_obj
            )

    if linear and f_active is None and bundle.all_droop and act.size <= _SCALAR_PATH_LIMIT:
        rec = _loop_scalar(config.kind, x_aa, base_err, bundle, qa, lo_box, hi_box,
                           tol, max_iter, record_every, oscillation_window,
                           config.gamma2, config.gamma3)
    else:
        if linear:
            def verr_of(qa):
                return x_aa @ qa + base_err, None
        else:
            def verr_of(qa):
                v_full = plant.voltages(_scatter(q, act, qa))
                return (v_full - v_nom)[act], v_full

        rec = _loop_array(config.kind, verr_of, qa, bundle, lo_box, hi_box, tol,
                          max_iter, record_every, oscillation_window,
                          config.gamma2, config.gamma3, f_active)

    qa_stack = np.array(rec.qa)
    q_full = np.tile(q, (len(rec.times), 1))
    q_full[:, act] = qa_stack
    if linear:
        v_full = qa_stack @ x_full.T + base_full
    else:
        v_full = np.array(rec.v)
    q_avg = q.copy()
    q_avg[act] = rec.qa_sum / max(rec.steps, 1)
    return Trajectory(
        times=np.array(rec.times, dtype=int),
        q=q_full,
        v=v_full,
        residuals=np.array(rec.res),
        verdict=rec.verdict,
        steps=rec.steps,
        converged_at=rec.converged_at,
        objective=np.array(rec.obj) if track_objective else None,
        cum_objective=np.array(rec.cum) if track_objective else None,
        q_average=q_avg,
    )


def _scatter(q, act, qa):
    out = q.copy()
    out[act] = qa
    return out


@dataclass(frozen=True, eq=False)
class ConditionReport:
    """Spectral convergence test for the non-incremental law."""

    sigma: float
    sufficient: bool
    corollary_value: float
    corollary_holds: bool
    uniform_alpha_limit: float


def check_d1_condition(curves, X):
    """Evaluate the contraction condition of the non-incremental law.

    ``sigma`` is the feedback modulus (largest singular value of
    ``diag(alpha_bar) X`` over the controllable block); the corollary value
    is the row-sum sufficient test, which upper-bounds sigma by the norm
    interpolation inequality and is therefore more conservative.
    """
    bundle = curves if isinstance(curves, CurveBundle) else CurveBundle(curves)
    X = np.asarray(X)
    sub = X[np.ix_(bundle.positions, bundle.positions)]
    sigma = float(np.linalg.svd(bundle.alpha_bar[:, None] * sub, compute_uv=False).max())
    corollary = float(bundle.alpha_bar.max() * np.abs(sub).sum(axis=1).max())
    return ConditionReport(
        sigma=sigma,
        sufficient=sigma < 1.0,
        corollary_value=corollary,
        corollary_holds=corollary < 1.0,
        uniform_alpha_limit=float(1.0 / np.linalg.svd(sub, compute_uv=False).max()),
    )


def d3_stepsize_bound(curves, X):
    """Largest safe pseudo-gradient stepsize: ``2 / (1 + lambda_max)``.

    ``lambda_max`` is the top eigenvalue of ``diag(alpha_bar) X`` on the
    controllable block, computed through the symmetric similar matrix
    ``X^{1/2} diag(alpha_bar) X^{1/2}`` whose eigenvalues are real and
    positive.
    """
    bundle = curves if isinstance(curves, CurveBundle) else CurveBundle(curves)
    if len(bundle) == 0:
        return 2.0
    sub = np.asarray(X)[np.ix_(bundle.positions, bundle.positions)]
    w, u = np.linalg.eigh(sub)
    sqrt_x = (u * np.sqrt(np.maximum(w, 0.0))) @ u.T
    lam = float(np.linalg.eigvalsh(sqrt_x @ np.diag(bundle.alpha_bar) @ sqrt_x).max())
    return 2.0 / (1.0 + lam)


def objective_terms(mats, curves, q):
    """The three terms of the equilibrium objective at q."""
    bundle = curves if isinstance(curves, CurveBundle) else CurveBundle(curves)
    q = np.asarray(q, dtype=float)
    cost = float(bundle.cost(q[bundle.positions]).sum()) if len(bundle) else 0.0
    quad = float(0.5 * q @ (mats.X @ q))
    linear = float(q @ (mats.vtilde - mats.feeder.v_nom))
    return cost, quad, linear


def objective_f(mats, curves, q):
    """Equilibrium objective: curve costs + quadratic + linear voltage term."""
    return sum(objective_terms(mats, curves, q))


def objective_tradeoff(mats, curves, q, x_inverse=None):
    """Equivalent cost-versus-deviation form of the objective.

    Returns ``(cost, deviation, constant)`` with ``deviation`` the
    half-quadratic of ``v - v_nom`` under the inverse reactance matrix and
    ``constant`` the q-independent offset; ``cost + deviation - constant``
    equals :func:`objective_f`.
    """
    if x_inverse is None:
        from .network import explicit_inverse_x

        x_inverse = explicit_inverse_x(mats.feeder)
    bundle = curves if isinstance(curves, CurveBundle) else CurveBundle(curves)
    q = np.asarray(q, dtype=float)
    cost = float(bundle.cost(q[bundle.positions]).sum()) if len(bundle) else 0.0
    dev = mats.X @ q + mats.vtilde - mats.feeder.v_nom
    deviation = float(0.5 * dev @ (x_inverse @ dev))
    dv = mats.vtilde - mats.feeder.v_nom
    constant = float(0.5 * dv @ (x_inverse @ dv))
    return cost, deviation, constant


def objective_subgradient(mats, curves, q, v=None):
    """A subgradient of the objective at q (selection used by the d2 law)."""
    bundle = curves if isinstance(curves, CurveBundle) else CurveBundle(curves)
    q = np.asarray(q, dtype=float)
    if v is None:
        v = mats.X @ q + mats.vtilde
    verr = np.asarray(v, dtype=float) - mats.feeder.v_nom
    g = verr.copy()
    act = bundle.positions
    if act.size:
        qa = q[act]
        va = verr[act]
        g[act] = np.where(
            qa != 0.0,
            -bundle.inverse(qa) + va,
            np.where(va > bundle.hi, va - bundle.hi,
                     np.where(va < bundle.lo, va - bundle.lo, va)),
        )
    return g


def estimate_gradient_bound(mats, curves, q_min, q_max, n_samples=1000, seed=0, inflate=1.1):
    """Sampled bound on the objective subgradient norm over the box.

    Evaluates the 2n box-face centers plus uniform samples and inflates the
    maximum by 10%; auditable and adequate because the subgradient is
    monotone-affine plus separable terms over a box.
    """
    rng = np.random.default_rng(seed)
    n = mats.n
    mid = 0.5 * (np.asarray(q_min) + np.asarray(q_max))
    best = 0.0
    for k in range(n):
        for val in (q_min[k], q_max[k]):
            point = mid.copy()
            point[k] = val
            g = objective_subgradient(mats, curves, point)
            best = max(best, float(np.linalg.norm(g)))
    for _ in range(n_samples):
        point = rng.uniform(q_min, q_max)
        g = objective_subgradient(mats, curves, point)
        best = max(best, float(np.linalg.norm(g)))
    return inflate * best


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    """Solved equilibrium with its optimality certificate."""

    q_star: np.ndarray
    v_star: np.ndarray
    objective: float
    cost_term: float
    quadratic_term: float
    linear_term: float
    fixed_point_residual: float
    iterations: int


def solve_equilibrium(feeder, curves=None, q_min=None, q_max=None, tol=DEFAULT_TOL,
                      max_iter=50000, mats=None, gamma3=None):
    """Find the unique closed-loop equilibrium on the linearized plant.

    Runs the pseudo-gradient law at 0.9 times its safe stepsize bound until
    the fixed-point residual ``max |q - [curve(v - v_nom)]_box|`` drops
    below ``tol``; the residual doubles as the optimality certificate of
    the equivalent convex problem.
    """
    if mats is None:
        mats = sensitivity_matrices(feeder)
    if curves is None:
        curves = ControllerConfig.from_feeder(feeder, "d1").curves
    if q_min is None or q_max is None:
        q_min, q_max = limits_arrays(feeder)
    bundle = curves if isinstance(curves, CurveBundle) else CurveBundle(curves)
    act = bundle.positions
    if gamma3 is None:
        gamma3 = 0.9 * d3_stepsize_bound(bundle, mats.X)

    n = feeder.n
    others = np.setdiff1d(np.arange(n), act)
    q = project_box(np.zeros(n), q_min, q_max)
    qa = q[act].copy()
    x_aa = mats.X[np.ix_(act, act)]
    base_a = mats.X[np.ix_(act, others)] @ q[others] + mats.vtilde[act] - feeder.v_nom[act]
    lo_box, hi_box = q_min[act], q_max[act]

    for it in range(1, max_iter + 1):
        u = bundle.evaluate(x_aa @ qa + base_a)
        target = np.clip(u, lo_box, hi_box)
        residual = float(np.abs(qa - target).max()) if act.size else 0.0
        if residual < tol:
            q[act] = qa
            v_star = mats.X @ q + mats.vtilde
            cost, quad, linear = objective_terms(mats, bundle, q)
            return EquilibriumReport(
                q_star=q,
                v_star=v_star,
                objective=cost + quad + linear,
                cost_term=cost,
                quadratic_term=quad,
                linear_term=linear,
                fixed_point_residual=residual,
                iterations=it - 1,
            )
        qa = np.clip((1.0 - gamma3) * qa + gamma3 * u, lo_box, hi_box)
    raise MaxIterations(
        f"equilibrium solver still at residual {residual:.3e} after {max_iter} iterations"
    )


@dataclass(frozen=True, eq=False)
class RegretAudit:
    """Running-average objective audit of a subgradient trajectory.

    ``standard_bound`` is the running-average guarantee the telescoping
    subgradient argument yields: ``|q1 - q*|^2 / (2 gamma t) + gamma G^2/2``.
    ``tight_bound`` rescales both terms by ``2 gamma``; it is recorded for
    comparison but is not implied by the argument and generally fails for
    small stepsizes.
    """

    times: np.ndarray
    average_gap: np.ndarray
    standard_bound: np.ndarray
    tight_bound: np.ndarray
    standard_holds: bool
    tight_holds: bool
    first_standard_violation: int | None
    first_tight_violation: int | None


def d2_regret_bound_check(trajectory, q_star, f_star, gamma2, grad_bound):
    """Verify the running-average inequality at every recorded time.

    The trajectory must have been produced with ``track_objective=True``.
    """
    if trajectory.cum_objective is None:
        raise InvalidRecord("trajectory was not recorded with track_objective=True")
    mask = trajectory.times > 0
    t = trajectory.times[mask].astype(float)
    cum = trajectory.cum_objective[mask]
    avg_gap = cum / t - f_star
    d1sq = float(np.linalg.norm(trajectory.q[0] - q_star) ** 2)
    standard = d1sq / (2.0 * gamma2 * t) + gamma2 * grad_bound**2 / 2.0
    tight = d1sq / t + gamma2**2 * grad_bound**2
    viol_std = np.flatnonzero(avg_gap > standard)
    viol_tight = np.flatnonzero(avg_gap > tight)
    return RegretAudit(
        times=t.astype(int),
        average_gap=avg_gap,
        standard_bound=standard,
        tight_bound=tight,
        standard_holds=viol_std.size == 0,
        tight_holds=viol_tight.size == 0,
        first_standard_violation=int(t[viol_std[0]]) if viol_std.size else None,
        first_tight_violation=int(t[viol_tight[0]]) if viol_tight.size else None,
    )
