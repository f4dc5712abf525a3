"""Sliding-window surrogate fitting.

A window of the latest m perturbed points and their values feeds
linear or quadratic least-squares fits.  Three linear formulations are
supported:

* ``intercept_centered`` - rows are differences against the newest
  point, with an intercept column.
* ``intercept_raw`` - rows are the raw points with an intercept
  column.  Shares its linear coefficient with the centered form on
  full-rank windows and admits O(d^2) maintenance of the Gram inverse
  under window swaps (the ``cached_rank1`` fast path).
* ``difference_no_intercept`` - rows are differences against the
  newest point excluding it, no intercept.

Fit routing: the rank-1 inverse cache serves the intercept modes and is
health-checked against the exactly-maintained Gram on every fit (one
step of iterative refinement); if it degrades, a reference-centered
moment cache solves the re-centered normal equations instead
(``cached_moments``), which stays well conditioned however far the
window drifts from the origin.  Anything else falls back to a
minimum-norm pseudoinverse solve; rank deficiency never raises out of
``fit_linear``/``fit_quadratic``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import NotEnoughSamplesError, SingularUpdateError

REGRESSION_MODES = ("intercept_centered", "intercept_raw", "difference_no_intercept")

# Consistency gate for the row-space shortcut; failures fall back to
# lstsq.  The W-term tracks the attainable backward error of the inner
# solve, the y-term rejects genuinely inconsistent systems.
_SOLVE_RTOL = 1e-6
_SOLVE_BACKWARD_TOL = 1e-9
# Max-abs tolerance on G @ G^-1 - I when (re)building the inverse cache.
_INVERSE_CHECK_TOL = 1e-6
# Relative coefficient-error gate for the rank-1 fast path.
_REFINE_TOL = 1e-6


@dataclass
class SurrogateFit:
    """Fitted surrogate coefficients.

    ``g`` is the linear coefficient (the gradient estimate), ``h`` the
    diagonal quadratic coefficient (quadratic fits only), ``c`` the
    intercept (absent in difference mode).  ``solver_path`` records
    which route produced the result.
    """

    g: np.ndarray
    h: Optional[np.ndarray]
    c: Optional[float]
    residual_norm: float
    solver_path: str
    cond_estimate: Optional[float] = None


class _MomentCache:
    """Window sums centered at a reference point near the data.

    Centering keeps every quantity at the window-spread scale, so the
    re-centered Gram assembled from these sums stays accurate no matter
    how far the trajectory sits from the origin or how small the
    spread gets.
    """

    __slots__ = ("c_ref", "f_ref", "m_mat", "s_vec", "p_vec", "f_sum", "updates")

    def __init__(self, c_ref, f_ref, m_mat, s_vec, p_vec, f_sum):
        self.c_ref = c_ref
        self.f_ref = f_ref
        self.m_mat = m_mat
        self.s_vec = s_vec
        self.p_vec = p_vec
        self.f_sum = f_sum
        self.updates = 0


class EvaluationWindow:
    """Ring buffer of the latest ``capacity`` (point, value) pairs.

    Insertion past capacity drops the oldest pair and keeps the active
    caches in sync: the raw homogeneous Gram, its X^T y vector and its
    inverse (one rank-1 swap per insertion), and the centered moment
    sums.  Caches are rebuilt from scratch every ``max(d, 64)``
    updates to bound floating-point drift.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._pts = np.zeros((capacity, dim))
        self._vals = np.zeros(capacity)
        self._start = 0
        self._count = 0
        self._pushes = 0
        self._rebuild_every = max(dim, 64)
        self._retry_cooldown = 16
        self._inv = None  # (d+1, d+1) inverse of the raw homogeneous Gram
        self._gram = None  # the Gram itself, rank-1 updated exactly
        self._xty = None  # (d+1,) raw homogeneous X^T y
        self._inv_updates = 0
        self._inv_retry_at = 0  # push count before which rebuilds are suppressed
        self._mom: Optional[_MomentCache] = None

    def __len__(self) -> int:
        return self._count

    @property
    def is_full(self) -> bool:
        return self._count == self.capacity

    def push(self, point: np.ndarray, value: float):
        """Insert a pair; returns the dropped (point, value) or None."""
        point = np.asarray(point, dtype=np.float64)
        if point.shape != (self.dim,):
            raise ValueError(f"expected point of shape ({self.dim},), got {point.shape}")
        value = float(value)
        self._pushes += 1
        if self._count < self.capacity:
            self._pts[self._count] = point
            self._vals[self._count] = value
            self._count += 1
            return None
        idx = self._start
        dropped = (self._pts[idx].copy(), float(self._vals[idx]))
        self._update_caches(dropped[0], dropped[1], point, value)
        self._pts[idx] = point
        self._vals[idx] = value
        self._start = (idx + 1) % self.capacity
        return dropped

    # -- ordered access ------------------------------------------------

    def _ordered(self, arr):
        if self._start == 0:
            return arr[: self._count].copy()
        return np.concatenate([arr[self._start :], arr[: self._start]])

    def points(self, newest_first: bool = False) -> np.ndarray:
        out = self._ordered(self._pts)
        return out[::-1].copy() if newest_first else out

    def values(self, newest_first: bool = False) -> np.ndarray:
        out = self._ordered(self._vals)
        return out[::-1].copy() if newest_first else out

    def newest_point(self) -> np.ndarray:
        idx = (self._start + self._count - 1) % self.capacity
        return self._pts[idx]

    def newest_value(self) -> float:
        idx = (self._start + self._count - 1) % self.capacity
        return float(self._vals[idx])

    def oldest_point(self) -> np.ndarray:
        return self._pts[self._start]

    def spread(self) -> float:
        """Largest distance from any stored point to the newest one."""
        diffs = self._pts[: self._count] - self.newest_point()
        return float(np.sqrt(np.max(np.sum(diffs * diffs, axis=1))))

    # -- caches ----------------------------------------------------------

    @property
    def cached_inverse(self) -> Optional[np.ndarray]:
        return self._inv

    def _homog(self, point) -> np.ndarray:
        row = np.empty(self.dim + 1)
        row[:-1] = point
        row[-1] = 1.0
        return row

    def _update_caches(self, drop_pt, drop_val, add_pt, add_val):
        if self._inv is not None:
            drop = self._homog(drop_pt)
            add = self._homog(add_pt)
            inv, status = _kernels.sm_swap(self._inv, drop, add)
            if status != 0 or self._inv_updates + 1 >= self._rebuild_every:
                # Singular mid-swap states are transient (the add step
                # may restore rank) and periodic rebuilds bound drift;
                # either way the next fit recomputes from scratch.
                self.drop_inverse_cache()
            else:
                self._inv = inv
                self._gram += np.outer(add, add) - np.outer(drop, drop)
                self._xty += add * add_val - drop * drop_val
                self._inv_updates += 1
        mom = self._mom
        if mom is not None:
            if mom.updates + 1 >= self._rebuild_every:
                self._mom = None  # rebuilt with a fresh reference next fit
            else:
                da = add_pt - mom.c_ref
                dd = drop_pt - mom.c_ref
                va = add_val - mom.f_ref
                vd = drop_val - mom.f_ref
                mom.m_mat += np.outer(da, da) - np.outer(dd, dd)
                mom.s_vec += da - dd
                mom.p_vec += da * va - dd * vd
                mom.f_sum += va - vd
                mom.updates += 1

    def inverse_cache(self):
        """Cached (inverse, gram, X^T y) for the raw system, or None.

        Only meaningful on a full window with capacity >= d + 1.  A
        singular or inaccurate Gram leaves the cache unset for a
        cooldown period, and the caller is expected to use another
        solve route meanwhile.
        """
        if not self.is_full or self.capacity < self.dim + 1:
            return None
        if self._inv is None and self._pushes >= self._inv_retry_at:
            self._build_inverse_cache()
        if self._inv is None:
            return None
        return self._inv, self._gram, self._xty

    def drop_inverse_cache(self, cooldown: bool = False):
        self._inv = None
        self._gram = None
        self._xty = None
        if cooldown:
            self._inv_retry_at = self._pushes + self._retry_cooldown

    def _build_inverse_cache(self):
        rows = np.hstack([self._pts, np.ones((self.capacity, 1))])
        gram = rows.T @ rows
        try:
            inv = np.linalg.inv(gram)
        except np.linalg.LinAlgError:
            inv = None
        if inv is not None and np.all(np.isfinite(inv)):
            # A few Newton steps (V <- V(2I - GV)) square the inversion
            # error, which matters once the window clusters far from
            # the origin and the raw Gram turns ill-conditioned.
            eye = np.eye(gram.shape[0])
            err = np.inf
            for _ in range(3):
                residual = gram @ inv - eye
                err = np.max(np.abs(residual))
                if not np.isfinite(err) or err <= 1e-9:
                    break
                inv = inv - inv @ residual
            else:
                err = np.max(np.abs(gram @ inv - eye))
            if not np.all(np.isfinite(inv)) or err > _INVERSE_CHECK_TOL:
                inv = None
        if inv is None:
            self.drop_inverse_cache(cooldown=True)
            return
        self._inv = inv
        self._gram = gram
        self._xty = rows.T @ self._vals
        self._inv_updates = 0
        self._inv_retry_at = 0

    def invalidate_caches(self):
        self.drop_inverse_cache()
        self._inv_retry_at = 0
        self._mom = None

    def moment_cache(self) -> Optional[_MomentCache]:
        """Centered window sums, built lazily on a full window."""
        if not self.is_full:
            return None
        if self._mom is None:
            c_ref = self.newest_point().copy()
            f_ref = self.newest_value()
            deltas = self._pts - c_ref
            offsets = self._vals - f_ref
            self._mom = _MomentCache(
                c_ref,
                f_ref,
                deltas.T @ deltas,
                deltas.sum(axis=0),
                deltas.T @ offsets,
                float(offsets.sum()),
            )
        return self._mom


# -- system assembly -----------------------------------------------------


def _require_samples(window: EvaluationWindow):
    if len(window) < 2:
        raise NotEnoughSamplesError(
            f"window holds {len(window)} pair(s); need at least 2 to fit"
        )


def assemble_linear_system(window: EvaluationWindow, mode: str):
    """Build (X, y) for the selected linear formulation.

    Row order: oldest first for ``intercept_centered``, newest first
    for the other two modes.  The order never affects the solution.
    """
    _require_samples(window)
    if mode == "intercept_centered":
        pts = window.points()
        vals = window.values()
        deltas = pts - pts[-1]
        x_mat = np.hstack([deltas, np.ones((len(pts), 1))])
        y_vec = vals - vals[-1]
    elif mode == "intercept_raw":
        pts = window.points(newest_first=True)
        x_mat = np.hstack([pts, np.ones((len(pts), 1))])
        y_vec = window.values(newest_first=True)
    elif mode == "difference_no_intercept":
        pts = window.points(newest_first=True)
        vals = window.values(newest_first=True)
        x_mat = pts[1:] - pts[0]
        y_vec = vals[1:] - vals[0]
    else:
        raise ValueError(f"unknown regression mode {mode!r}")
    return x_mat, y_vec


def assemble_quadratic_system(window: EvaluationWindow):
    """Build the (m, 2d+1) design with rows (dx, 0.5*dx*dx, 1)."""
    _require_samples(window)
    pts = window.points()
    vals = window.values()
    deltas = pts - pts[-1]
    x_mat = np.hstack([deltas, 0.5 * deltas * deltas, np.ones((len(pts), 1))])
    y_vec = vals - vals[-1]
    return x_mat, y_vec


# -- solvers ---------------------------------------------------------------


def solve_least_squares(x_mat: np.ndarray, y_vec: np.ndarray):
    """Minimum-norm least-squares solve; returns (coeffs, residual_norm).

    Underdetermined systems with full row rank are solved through the
    row space (X^T (X X^T)^-1 y), which is the min-norm solution at a
    fraction of the SVD cost; anything questionable falls back to
    numpy's lstsq.
    """
    x_mat = np.asarray(x_mat, dtype=np.float64)
    y_vec = np.asarray(y_vec, dtype=np.float64)
    if x_mat.ndim != 2 or y_vec.shape != (x_mat.shape[0],):
        raise ValueError("shape mismatch between design matrix and targets")
    if not (np.all(np.isfinite(x_mat)) and np.all(np.isfinite(y_vec))):
        raise ValueError("non-finite entries in least-squares system")
    rows, cols = x_mat.shape
    if rows < cols:
        w_mat = x_mat @ x_mat.T
        try:
            dual = np.linalg.solve(w_mat, y_vec)
        except np.linalg.LinAlgError:
            dual = None
        if dual is not None and np.all(np.isfinite(dual)):
            coeffs = x_mat.T @ dual
            resid = x_mat @ coeffs - y_vec
            resid_norm = float(np.linalg.norm(resid))
            gate = _SOLVE_RTOL * float(np.linalg.norm(y_vec)) + (
                _SOLVE_BACKWARD_TOL
                * float(np.linalg.norm(w_mat))
                * float(np.linalg.norm(dual))
            )
            if np.isfinite(coeffs @ coeffs) and resid_norm <= gate:
                return coeffs, resid_norm
    coeffs, _, _, _ = np.linalg.lstsq(x_mat, y_vec, rcond=None)
    resid_norm = float(np.linalg.norm(x_mat @ coeffs - y_vec))
    return coeffs, resid_norm


def rank1_swap_inverse(a_inv: np.ndarray, drop_row: np.ndarray, add_row: np.ndarray):
    """Update a Gram inverse for one dropped and one added row.

    Applies the rank-1 inverse-update formula twice: first removing
    ``drop_row drop_row^T`` from the underlying Gram matrix, then
    adding ``add_row add_row^T``.  Raises SingularUpdateError when a
    denominator falls below the singularity tolerance, in which case
    the caller should re-solve from scratch.
    """
    a_inv = np.ascontiguousarray(a_inv, dtype=np.float64)
    drop_row = np.ascontiguousarray(drop_row, dtype=np.float64)
    add_row = np.ascontiguousarray(add_row, dtype=np.float64)
    n = a_inv.shape[0]
    if a_inv.shape != (n, n) or drop_row.shape != (n,) or add_row.shape != (n,):
        raise ValueError("inverse and rows have inconsistent shapes")
    out, status = _kernels.sm_swap(a_inv, drop_row, add_row)
    if status == 1:
        raise SingularUpdateError("dropping the row makes the Gram matrix singular")
    if status == 2:
        raise SingularUpdateError("adding the row makes the update singular")
    return out


def estimate_condition_number(gram: np.ndarray, steps: int = 20) -> float:
    """Power-iteration estimate of cond(G) for symmetric PSD G."""
    n = gram.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam_max = 0.0
    for _ in range(steps):
        w = gram @ v
        lam_max = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return np.inf
        v = w / norm
    v = np.full(n, 1.0 / np.sqrt(n))
    nu = 0.0
    for _ in range(steps):
        w = lam_max * v - gram @ v  # power step on (lam_max I - G)
        nu = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        v = w / norm
    lam_min = lam_max - nu
    if lam_min <= 0:
        return np.inf
    return lam_max / lam_min


# -- fits ------------------------------------------------------------------


def _fit_linear_cached_raw(window: EvaluationWindow, mode: str):
    cache = window.inverse_cache()
    if cache is None:
        return None
    inv, gram, xty = cache
    d = window.dim
    coeffs = inv @ xty
    # Two steps of iterative refinement against the exactly-maintained
    # Gram; the second correction's size gauges the residual error of
    # the returned coefficients and doubles as a health check on the
    # drifting inverse.
    coeffs = coeffs - inv @ (gram @ coeffs - xty)
    correction = inv @ (gram @ coeffs - xty)
    coeffs = coeffs - correction
    ok = np.all(np.isfinite(coeffs)) and float(
        np.linalg.norm(correction)
    ) <= _REFINE_TOL * float(np.linalg.norm(coeffs))
    if not ok:
        # Cool down only when a fresh rebuild is already this bad.
        window.drop_inverse_cache(cooldown=window._inv_updates == 0)
        return None
    g = coeffs[:d].copy()
    c_raw = float(coeffs[d])
    resid = window._pts @ g + c_raw - window._vals
    resid_norm = float(np.linalg.norm(resid))
    if mode == "intercept_raw":
        c = c_raw
    else:
        # Same fit re-expressed around the newest point; residuals match.
        c = c_raw + float(g @ window.newest_point()) - window.newest_value()
    fit = SurrogateFit(g, None, c, resid_norm, "cached_rank1")
    fit._cond_matrix = inv  # cond(G^-1) == cond(G)
    return fit


def _fit_linear_cached_moments(window: EvaluationWindow, mode: str):
    mom = window.moment_cache()
    if mom is None:
        return None
    m = window.capacity
    u_vec = window.newest_point() - mom.c_ref
    phi = window.newest_value() - mom.f_ref
    # Re-center the sums at the newest point.  Its own difference row
    # is identically zero, so full-window sums equal the sums over the
    # m-1 older points.
    gram = (
        mom.m_mat
        - np.outer(u_vec, mom.s_vec)
        - np.outer(mom.s_vec, u_vec)
        + m * np.outer(u_vec, u_vec)
    )
    rhs = mom.p_vec - u_vec * mom.f_sum - mom.s_vec * phi + m * (u_vec * phi)
    if mode == "difference_no_intercept":
        full_gram, full_rhs = gram, rhs
    else:
        sum_dx = mom.s_vec - m * u_vec
        sum_df = mom.f_sum - m * phi
        full_gram = np.empty((window.dim + 1, window.dim + 1))
        full_gram[:-1, :-1] = gram
        full_gram[:-1, -1] = sum_dx
        full_gram[-1, :-1] = sum_dx
        full_gram[-1, -1] = m
        full_rhs = np.append(rhs, sum_df)
    try:
        np.linalg.cholesky(full_gram)
        sol = np.linalg.solve(full_gram, full_rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    x_new = window.newest_point()
    f_new = window.newest_value()
    if mode == "difference_no_intercept":
        g, c, c_delta = sol, None, 0.0
    else:
        g, c_delta = sol[:-1], float(sol[-1])
        if mode == "intercept_centered":
            c = c_delta
        else:
            c = c_delta - float(g @ x_new) + f_new
    resid = (window._pts @ g - float(x_new @ g) + c_delta) - (window._vals - f_new)
    resid_norm = float(np.linalg.norm(resid))
    fit = SurrogateFit(np.asarray(g), None, c, resid_norm, "cached_moments")
    fit._cond_matrix = full_gram
    return fit


def fit_linear(
    window: EvaluationWindow,
    mode: str = "intercept_centered",
    use_fast_path: bool = True,
    estimate_condition: bool = False,
) -> SurrogateFit:
    """Fit the linear surrogate on the current window.

    The fast path is taken when the window is full and a cache is
    healthy; otherwise the assembled system is solved by minimum-norm
    pseudoinverse.  Rank deficiency therefore degrades the solver
    path, never raises.
    """
    _require_samples(window)
    if mode not in REGRESSION_MODES:
        raise ValueError(f"unknown regression mode {mode!r}")
    d = window.dim
    fit = None
    if use_fast_path and window.is_full:
        if mode in ("intercept_centered", "intercept_raw"):
            if window.capacity >= d + 1:
                fit = _fit_linear_cached_raw(window, mode)
                if fit is None:
                    fit = _fit_linear_cached_moments(window, mode)
        elif window.capacity - 1 >= d:
            fit = _fit_linear_cached_moments(window, mode)
    if fit is None:
        x_mat, y_vec = assemble_linear_system(window, mode)
        coeffs, resid_norm = solve_least_squares(x_mat, y_vec)
        if mode == "difference_no_intercept":
            g, c = coeffs, None
        else:
            g, c = coeffs[:d], float(coeffs[d])
        fit = SurrogateFit(np.asarray(g), None, c, resid_norm, "pseudoinverse")
        if estimate_condition:
            fit._cond_matrix = x_mat.T @ x_mat
    if estimate_condition:
        fit.cond_estimate = estimate_condition_number(fit._cond_matrix)
    if hasattr(fit, "_cond_matrix"):
        del fit._cond_matrix
    return fit


def fit_quadratic(
    window: EvaluationWindow, estimate_condition: bool = False
) -> SurrogateFit:
    """Fit the quadratic surrogate (diagonal curvature) on the window."""
    _require_samples(window)
    d = window.dim
    x_mat, y_vec = assemble_quadratic_system(window)
    coeffs, resid_norm = solve_least_squares(x_mat, y_vec)
    fit = SurrogateFit(
        coeffs[:d].copy(),
        coeffs[d : 2 * d].copy(),
        float(coeffs[2 * d]),
        resid_norm,
        "pseudoinverse",
    )
    if estimate_condition:
        fit.cond_estimate = estimate_condition_number(x_mat.T @ x_mat)
    return fit
