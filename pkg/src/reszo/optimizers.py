"""Iteration drivers for the five zeroth-order methods.

``szo``, ``rszo`` and ``tzo`` are the classic estimator-based updates.
``l_reszo`` and ``q_reszo`` run a residual-feedback warm start for the
first ``window_m`` iterations to populate the evaluation window, then
switch to surrogate-regression gradient estimates, querying the
objective exactly once per iteration throughout (plus the single seed
evaluation that primes the residual feedback).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    DIVERGENCE_THRESHOLD,
    BlackBoxObjective,
    DivergenceError,
    EvaluationFailureError,
    make_rng,
)
from .estimators import rszo_estimate, szo_estimate, tzo_estimate
from .regression import (
    REGRESSION_MODES,
    EvaluationWindow,
    fit_linear,
    fit_quadratic,
)
from .sampling import get_sampler

METHODS = ("szo", "rszo", "tzo", "l_reszo", "q_reszo")
REGRESSION_METHODS = ("l_reszo", "q_reszo")

SOLVER_PATH_CODES = {"pseudoinverse": 1, "cached_rank1": 2, "cached_moments": 3}
SOLVER_PATH_NAMES = {v: k for k, v in SOLVER_PATH_CODES.items()}


@dataclass
class OptimizerConfig:
    """Full parameterization of one optimizer run.

    ``warm_eta``/``warm_delta`` drive the residual-feedback warm start
    of the regression methods and are required for those; baselines
    ignore them.  ``delta`` may be zero only for regression methods
    (the no-perturbation ablation).  When ``adaptive_delta`` is set the
    post-warm smoothing radius follows eta * |previous estimate| with
    floor ``delta_min`` (default 1e-12 times the initial radius scale).
    """

    method: str
    eta: float
    delta: float
    iterations: int
    window_m: int = 0
    warm_eta: Optional[float] = None
    warm_delta: Optional[float] = None
    adaptive_delta: bool = False
    delta_min: Optional[float] = None
    regression_mode: str = "intercept_centered"
    fast_path: bool = True
    direction: str = "sphere"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.regression_mode not in REGRESSION_MODES:
            raise ValueError(f"unknown regression mode {self.regression_mode!r}")
        if self.direction not in ("sphere", "gaussian"):
            raise ValueError(f"unknown direction distribution {self.direction!r}")
        if self.delta_min is not None and self.delta_min < 0:
            raise ValueError("delta_min must be non-negative")
        if self.method in REGRESSION_METHODS:
            if self.window_m < 2:
                raise ValueError("regression methods need window_m >= 2")
            if self.iterations <= self.window_m:
                raise ValueError("regression methods need iterations > window_m")
            if self.warm_eta is None or self.warm_eta <= 0:
                raise ValueError("regression methods need a positive warm_eta")
            if self.warm_delta is None or self.warm_delta <= 0:
                raise ValueError("regression methods need a positive warm_delta")
        else:
            if self.delta == 0:
                raise ValueError("baseline methods need delta > 0")

    def effective_delta_min(self) -> float:
        if self.delta_min is not None:
            return self.delta_min
        scale = self.delta if self.delta > 0 else (self.warm_delta or 1.0)
        return 1e-12 * scale


@dataclass
class RunTrace:
    """Per-iteration scalars for one optimizer run plus the final iterate.

    Diagnostics columns (``xi_norms``, ``grad_norms``, ``cd_ratios``,
    ``window_spreads``) are attached only when the run was observed by
    a diagnostics collector; entries are NaN where undefined.
    """

    iterations: np.ndarray
    queries: np.ndarray
    f_values: np.ndarray
    grad_est_norms: np.ndarray
    deltas: np.ndarray
    solver_paths: np.ndarray
    final_x: np.ndarray
    diverged: bool = False
    divergence_iteration: Optional[int] = None
    xi_norms: Optional[np.ndarray] = None
    grad_norms: Optional[np.ndarray] = None
    cd_ratios: Optional[np.ndarray] = None
    window_spreads: Optional[np.ndarray] = None
    warm_condition_violations: Optional[int] = None

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def has_diagnostics(self) -> bool:
        return self.xi_norms is not None


class _TraceBuilder:
    def __init__(self):
        self.iterations = []
        self.queries = []
        self.f_values = []
        self.grad_est_norms = []
        self.deltas = []
        self.solver_paths = []

    def add(self, t, queries, f_value, grad_norm, delta, path=0):
        self.iterations.append(t)
        self.queries.append(queries)
        self.f_values.append(f_value)
        self.grad_est_norms.append(grad_norm)
        self.deltas.append(delta)
        self.solver_paths.append(path)

    def finalize(self, x, diverged=False, divergence_iteration=None) -> RunTrace:
        return RunTrace(
            iterations=np.asarray(self.iterations, dtype=np.int64),
            queries=np.asarray(self.queries, dtype=np.int64),
            f_values=np.asarray(self.f_values, dtype=np.float64),
            grad_est_norms=np.asarray(self.grad_est_norms, dtype=np.float64),
            deltas=np.asarray(self.deltas, dtype=np.float64),
            solver_paths=np.asarray(self.solver_paths, dtype=np.int8),
            final_x=np.asarray(x, dtype=np.float64).copy(),
            diverged=diverged,
            divergence_iteration=divergence_iteration,
        )


def adaptive_delta(eta: float, g_prev: np.ndarray, delta_min: float = 0.0) -> float:
    """Next smoothing radius: eta * |g_prev| floored at delta_min."""
    return max(eta * float(np.linalg.norm(g_prev)), delta_min)


def _diverge(builder, x, t, reason):
    trace = builder.finalize(x, diverged=True, divergence_iteration=t)
    raise DivergenceError(f"run diverged at iteration {t}: {reason}", trace=trace)


def _guarded_evaluate(obj, x, builder, t):
    try:
        return obj.evaluate(x)
    except EvaluationFailureError as exc:
        _diverge(builder, x, t, str(exc))


def run_baseline(
    obj: BlackBoxObjective,
    cfg: OptimizerConfig,
    x0: np.ndarray,
    diagnostics=None,
) -> RunTrace:
    """Run one of the classic estimators (szo, rszo, tzo).

    The residual-feedback method spends one extra evaluation before
    iteration 0 to seed its previous-value state.  Raises
    DivergenceError (with the partial trace attached) on non-finite or
    runaway values.
    """
    if cfg.method not in ("szo", "rszo", "tzo"):
        raise ValueError(f"run_baseline cannot run method {cfg.method!r}")
    if diagnostics is not None:
        raise ValueError("diagnostics collectors require a regression method")
    d = obj.dimension
    rng = make_rng(cfg.seed)
    sampler = get_sampler(cfg.direction)
    x = np.array(x0, dtype=np.float64)
    if x.shape != (d,):
        raise ValueError(f"x0 must have shape ({d},)")
    builder = _TraceBuilder()
    q0 = obj.query_count
    eta, delta = cfg.eta, cfg.delta
    prev = None
    if cfg.method == "rszo":
        u = sampler(rng, d)
        prev = _guarded_evaluate(obj, x + delta * u, builder, 0)
    for t in range(cfg.iterations):
        u = sampler(rng, d)
        try:
            if cfg.method == "szo":
                out = szo_estimate(obj, x, u, delta)
            elif cfg.method == "rszo":
                out = rszo_estimate(obj, x, u, delta, prev)
                prev = out.last_value
            else:
                out = tzo_estimate(obj, x, u, delta)
        except EvaluationFailureError as exc:
            _diverge(builder, x, t, str(exc))
        g = out.gradient_estimate
        fv = out.last_value
        builder.add(t, obj.query_count - q0, fv, float(np.linalg.norm(g)), delta)
        if abs(fv) > DIVERGENCE_THRESHOLD:
            _diverge(builder, x, t, f"|f| exceeded {DIVERGENCE_THRESHOLD:g}")
        x = x - eta * g
    return builder.finalize(x)


def _run_reszo(obj, cfg, x0, quadratic, diagnostics):
    d = obj.dimension
    m = cfg.window_m
    rng = make_rng(cfg.seed)
    sampler = get_sampler(cfg.direction)
    x = np.array(x0, dtype=np.float64)
    if x.shape != (d,):
        raise ValueError(f"x0 must have shape ({d},)")
    builder = _TraceBuilder()
    q0 = obj.query_count
    delta_floor = cfg.effective_delta_min()
    window = EvaluationWindow(m, d)

    # Seed evaluation priming the residual feedback; it enters the
    # window but ages out by the time the regression phase starts.
    u = sampler(rng, d)
    xh = x + cfg.warm_delta * u
    prev = _guarded_evaluate(obj, xh, builder, 0)
    window.push(xh, prev)

    g_prev = np.zeros(d)
    for t in range(cfg.iterations):
        u = sampler(rng, d)
        if t < m:
            delta_t = cfg.warm_delta
            try:
                out = rszo_estimate(obj, x, u, delta_t, prev)
            except EvaluationFailureError as exc:
                _diverge(builder, x, t, str(exc))
            estimate = out.gradient_estimate
            fv = prev = out.last_value
            window.push(x + delta_t * u, fv)
            eta_t = cfg.warm_eta
            path = 0
            if diagnostics is not None:
                diagnostics.observe_warm(t, x, estimate, cfg.warm_eta, cfg.eta)
        else:
            if cfg.adaptive_delta:
                delta_t = adaptive_delta(cfg.eta, g_prev, delta_floor)
            else:
                delta_t = cfg.delta
            xh = x + delta_t * u
            fv = _guarded_evaluate(obj, xh, builder, t)
            window.push(xh, fv)
            want_cond = diagnostics is not None
            if quadratic:
                fit = fit_quadratic(window, estimate_condition=want_cond)
                estimate = fit.g - delta_t * fit.h * u
            else:
                fit = fit_linear(
                    window, cfg.regression_mode, cfg.fast_path,
                    estimate_condition=want_cond,
                )
                estimate = fit.g
            eta_t = cfg.eta
            path = SOLVER_PATH_CODES[fit.solver_path]
            if diagnostics is not None:
                diagnostics.observe(
                    t, x, xh, estimate, window, delta_t, cond_estimate=fit.cond_estimate
                )
        builder.add(
            t, obj.query_count - q0, fv, float(np.linalg.norm(estimate)), delta_t, path
        )
        if abs(fv) > DIVERGENCE_THRESHOLD:
            _diverge(builder, x, t, f"|f| exceeded {DIVERGENCE_THRESHOLD:g}")
        x = x - eta_t * estimate
        g_prev = estimate
    trace = builder.finalize(x)
    if diagnostics is not None:
        diagnostics.attach_to_trace(trace)
    return trace


def run_l_reszo(
    obj: BlackBoxObjective,
    cfg: OptimizerConfig,
    x0: np.ndarray,
    diagnostics=None,
) -> RunTrace:
    """Linear surrogate-regression method."""
    if cfg.method != "l_reszo":
        raise ValueError(f"run_l_reszo cannot run method {cfg.method!r}")
    return _run_reszo(obj, cfg, x0, quadratic=False, diagnostics=diagnostics)


def run_q_reszo(
    obj: BlackBoxObjective,
    cfg: OptimizerConfig,
    x0: np.ndarray,
    diagnostics=None,
) -> RunTrace:
    """Quadratic surrogate-regression method.

    Identical protocol to the linear variant, but fits a diagonal
    quadratic and evaluates the surrogate gradient at the unperturbed
    iterate, which contributes the -delta * h * u correction.
    """
    if cfg.method != "q_reszo":
        raise ValueError(f"run_q_reszo cannot run method {cfg.method!r}")
    return _run_reszo(obj, cfg, x0, quadratic=True, diagnostics=diagnostics)


def run_optimizer(
    obj: BlackBoxObjective,
    cfg: OptimizerConfig,
    x0: np.ndarray,
    diagnostics=None,
) -> RunTrace:
    """Dispatch to the driver for cfg.method."""
    if cfg.method == "l_reszo":
        return run_l_reszo(obj, cfg, x0, diagnostics)
    if cfg.method == "q_reszo":
        return run_q_reszo(obj, cfg, x0, diagnostics)
    return run_baseline(obj, cfg, x0, diagnostics)
