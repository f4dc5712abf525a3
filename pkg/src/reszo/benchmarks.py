"""The four benchmark problems.

Datasets are pure functions of the benchmark spec: the same (problem,
d, N, lambda, seed) always yields bit-identical data.  Generated
arrays are cached per spec and marked read-only so concurrent trials
can share them; each objective instance carries its own query counter.

Problems:

* ``ridge``      - 0.5*|y - Hx|^2 + 0.5*lam*|x|^2 with Gaussian H and
                   y = 0.5*H*1 + noise; closed-form optimum.
* ``logistic``   - 0.5*sum log(1+exp(-y_i s_i^T x)) + 0.5*lam*|x|^2 on
                   uniform data with linearly generated labels; optimum
                   found once by gradient descent to |grad| <= 1e-10.
* ``rosenbrock`` - sum_{i<d} [100((x_i+1)^2 - x_{i+1} - 1)^2 + x_i^2];
                   minimum 0 at the origin.
* ``neural_net`` - squared error of a 3-layer sigmoid teacher network;
                   the generating parameters attain exactly zero loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _kernels
from .core import BlackBoxObjective, make_rng

PROBLEMS = ("ridge", "logistic", "rosenbrock", "neural_net")

# Sub-stream of the seed space reserved for dataset generation (stream
# 0 drives optimizer runs, stream 1 initial points).
_DATASET_STREAM = 2


@dataclass(frozen=True)
class BenchmarkSpec:
    """Identifies one benchmark instance; hashable so datasets cache."""

    problem: str
    d: int
    n_samples: int = 1000
    lam: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.problem == "rosenbrock" and self.d < 2:
            raise ValueError("rosenbrock needs d >= 2")
        if self.problem in ("ridge", "logistic", "neural_net") and self.n_samples < 1:
            raise ValueError("data-driven problems need n_samples >= 1")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.problem == "neural_net":
            _layer_width(self.d)  # validates the parameter count


def _power_lmax(mat: np.ndarray, rel_tol: float = 1e-8, max_iter: int = 50000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Deterministic (fixed start vector) so derived constants are pure
    functions of the data.
    """
    n = mat.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(max_iter):
        w = mat @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        new_lam = float(v @ w)
        v = w / norm
        if abs(new_lam - lam) <= rel_tol * abs(new_lam):
            return new_lam
        lam = new_lam
    return lam


def _freeze(*arrays):
    for arr in arrays:
        arr.setflags(write=False)


# -- ridge -----------------------------------------------------------------


@lru_cache(maxsize=None)
def _ridge_data(d, n, seed):
    rng = make_rng(seed, stream=_DATASET_STREAM)
    h_mat = rng.standard_normal((n, d))
    noise = rng.standard_normal(n) * np.sqrt(0.1)
    y_vec = 0.5 * h_mat.sum(axis=1) + noise
    _freeze(h_mat, y_vec)
    return h_mat, y_vec


def _ridge_objective(h_mat, y_vec, lam, name="ridge"):
    gram = h_mat.T @ h_mat
    smoothness = _power_lmax(gram) + lam
    d = h_mat.shape[1]
    x_star = np.linalg.solve(gram + lam * np.eye(d), h_mat.T @ y_vec)

    def value(x):
        r = h_mat @ x - y_vec
        return 0.5 * float(r @ r) + 0.5 * lam * float(x @ x)

    def grad(x):
        return h_mat.T @ (h_mat @ x - y_vec) + lam * x

    return BlackBoxObjective(
        d,
        value,
        analytic_gradient=grad,
        smoothness_L=smoothness,
        optimum_value=value(x_star),
        name=name,
    )


def make_ridge(spec: BenchmarkSpec) -> BlackBoxObjective:
    if spec.problem != "ridge":
        raise ValueError("spec.problem must be 'ridge'")
    h_mat, y_vec = _ridge_data(spec.d, spec.n_samples, spec.seed)
    return _ridge_objective(h_mat, y_vec, spec.lam)


# -- logistic --------------------------------------------------------------


@lru_cache(maxsize=None)
def _logistic_data(d, n, seed):
    rng = make_rng(seed, stream=_DATASET_STREAM)
    s_mat = rng.uniform(-1.0, 1.0, size=(n, d))
    margins = 0.5 * s_mat.sum(axis=1)
    labels = np.where(margins >= 0.0, 1.0, -1.0)
    _freeze(s_mat, labels)
    return s_mat, labels


def _logistic_objective(s_mat, labels, lam, fstar=None, name="logistic"):
    smoothness = _power_lmax(s_mat.T @ s_mat) / 8.0 + lam
    d = s_mat.shape[1]

    def value(x):
        z = labels * (s_mat @ x)
        return 0.5 * float(np.sum(np.logaddexp(0.0, -z))) + 0.5 * lam * float(x @ x)

    def grad(x):
        z = labels * (s_mat @ x)
        return -0.5 * (s_mat.T @ (_kernels.sigmoid(-z) * labels)) + lam * x

    if fstar is None:
        fstar = lambda: _descend_to_optimum(value, grad, d, smoothness)
    return BlackBoxObjective(
        d,
        value,
        analytic_gradient=grad,
        smoothness_L=smoothness,
        optimum_value=fstar,
        name=name,
    )


def _descend_to_optimum(value, grad, d, smoothness, tol=1e-10, max_iter=500000):
    """Plain gradient descent with step 1/L until |grad| <= tol."""
    x = np.zeros(d)
    step = 1.0 / smoothness
    for _ in range(max_iter):
        g = grad(x)
        if np.linalg.norm(g) <= tol:
            return value(x)
        x -= step * g
    raise RuntimeError(f"optimum solve did not reach |grad| <= {tol:g} in {max_iter} steps")


@lru_cache(maxsize=None)
def _logistic_fstar(d, n, lam, seed):
    s_mat, labels = _logistic_data(d, n, seed)
    probe = _logistic_objective(s_mat, labels, lam, fstar=np.nan)
    return _descend_to_optimum(
        probe._fn, probe.analytic_gradient, d, probe.smoothness_L
    )


def make_logistic(spec: BenchmarkSpec) -> BlackBoxObjective:
    if spec.problem != "logistic":
        raise ValueError("spec.problem must be 'logistic'")
    s_mat, labels = _logistic_data(spec.d, spec.n_samples, spec.seed)
    fstar = lambda: _logistic_fstar(spec.d, spec.n_samples, spec.lam, spec.seed)
    return _logistic_objective(s_mat, labels, spec.lam, fstar=fstar)


# -- rosenbrock --------------------------------------------------------------


def make_rosenbrock(spec: BenchmarkSpec) -> BlackBoxObjective:
    """Chained quartic benchmark; gradient exact, no global smoothness."""
    if spec.problem != "rosenbrock":
        raise ValueError("spec.problem must be 'rosenbrock'")

    def value(x):
        return _kernels.rosenbrock_value(x)

    def grad(x):
        return _kernels.rosenbrock_grad(x)

    return BlackBoxObjective(
        spec.d,
        value,
        analytic_gradient=grad,
        optimum_value=0.0,
        name="rosenbrock",
    )


# -- neural net --------------------------------------------------------------


def _layer_width(d: int) -> int:
    # d = 3n^2 + 4n for a width-n three-layer network.
    n = int(round((-2.0 + np.sqrt(4.0 + 3.0 * d)) / 3.0))
    if n < 1 or 3 * n * n + 4 * n != d:
        raise ValueError(f"d={d} is not 3n^2+4n for any integer width n")
    return n


def unpack_parameters(x: np.ndarray, n: int):
    """Split the flat parameter vector into (W1, W2, W3, b1, b2, b3, w_o)."""
    sq = n * n
    w1 = x[0:sq].reshape(n, n)
    w2 = x[sq : 2 * sq].reshape(n, n)
    w3 = x[2 * sq : 3 * sq].reshape(n, n)
    b1 = x[3 * sq : 3 * sq + n]
    b2 = x[3 * sq + n : 3 * sq + 2 * n]
    b3 = x[3 * sq + 2 * n : 3 * sq + 3 * n]
    w_o = x[3 * sq + 3 * n : 3 * sq + 4 * n]
    return w1, w2, w3, b1, b2, b3, w_o


def pack_parameters(w1, w2, w3, b1, b2, b3, w_o) -> np.ndarray:
    return np.concatenate(
        [w1.ravel(), w2.ravel(), w3.ravel(), b1, b2, b3, w_o]
    )


def _nn_forward(x, inputs, n):
    w1, w2, w3, b1, b2, b3, w_o = unpack_parameters(x, n)
    a = _kernels.sigmoid(inputs @ w1.T + b1)
    a = _kernels.sigmoid(a @ w2.T + b2)
    a = _kernels.sigmoid(a @ w3.T + b3)
    return a @ w_o


@lru_cache(maxsize=None)
def _nn_data(d, n_samples, seed):
    width = _layer_width(d)
    rng = make_rng(seed, stream=_DATASET_STREAM)
    x_star = rng.standard_normal(d)
    inputs = rng.standard_normal((n_samples, width))
    targets = _nn_forward(x_star, inputs, width)
    _freeze(x_star, inputs, targets)
    return x_star, inputs, targets


def make_neural_net(spec: BenchmarkSpec) -> BlackBoxObjective:
    """Teacher-student squared-error loss; treated as a pure black box."""
    if spec.problem != "neural_net":
        raise ValueError("spec.problem must be 'neural_net'")
    width = _layer_width(spec.d)
    _, inputs, targets = _nn_data(spec.d, spec.n_samples, spec.seed)

    def value(x):
        err = _nn_forward(x, inputs, width) - targets
        return float(err @ err)

    return BlackBoxObjective(spec.d, value, optimum_value=0.0, name="neural_net")


# -- common interface ---------------------------------------------------------


_MAKERS = {
    "ridge": make_ridge,
    "logistic": make_logistic,
    "rosenbrock": make_rosenbrock,
    "neural_net": make_neural_net,
}


def make_objective(spec: BenchmarkSpec) -> BlackBoxObjective:
    """Fresh objective (own query counter) over the cached dataset."""
    return _MAKERS[spec.problem](spec)


def initial_point(spec: BenchmarkSpec, rng=None) -> np.ndarray:
    """The problem's starting iterate.

    Deterministic for ridge/logistic (origin) and rosenbrock
    (0.5 * ones); the neural net starts at the teacher parameters
    plus uniform noise drawn from ``rng``.
    """
    if spec.problem == "rosenbrock":
        return np.full(spec.d, 0.5)
    if spec.problem == "neural_net":
        if rng is None:
            raise ValueError("neural_net initial point needs an rng")
        x_star, _, _ = _nn_data(spec.d, spec.n_samples, spec.seed)
        return x_star + rng.uniform(-1.0, 1.0, size=spec.d)
    return np.zeros(spec.d)


# -- dataset dump/load ---------------------------------------------------------


def save_dataset(spec: BenchmarkSpec, path) -> None:
    """Write the spec and its generated arrays to a .npz archive.

    Derived constants (smoothness, optimum) are recomputed on load;
    they are deterministic functions of the stored arrays.
    """
    meta = dict(
        problem=spec.problem,
        d=spec.d,
        n_samples=spec.n_samples,
        lam=spec.lam,
        seed=spec.seed,
    )
    arrays = {}
    if spec.problem == "ridge":
        h_mat, y_vec = _ridge_data(spec.d, spec.n_samples, spec.seed)
        arrays = {"H": h_mat, "y": y_vec}
    elif spec.problem == "logistic":
        s_mat, labels = _logistic_data(spec.d, spec.n_samples, spec.seed)
        arrays = {"S": s_mat, "labels": labels}
    elif spec.problem == "neural_net":
        x_star, inputs, targets = _nn_data(spec.d, spec.n_samples, spec.seed)
        arrays = {"x_star": x_star, "inputs": inputs, "targets": targets}
    np.savez(
        Path(path),
        **arrays,
        **{f"meta_{k}": np.asarray(v) for k, v in meta.items()},
    )


def load_dataset(path):
    """Read back (spec, arrays) from a .npz written by save_dataset."""
    with np.load(Path(path), allow_pickle=False) as data:
        spec = BenchmarkSpec(
            problem=str(data["meta_problem"]),
            d=int(data["meta_d"]),
            n_samples=int(data["meta_n_samples"]),
            lam=float(data["meta_lam"]),
            seed=int(data["meta_seed"]),
        )
        arrays = {k: data[k] for k in data.files if not k.startswith("meta_")}
    return spec, arrays


def objective_from_dataset(spec: BenchmarkSpec, arrays) -> BlackBoxObjective:
    """Build an objective over externally supplied arrays."""
    if spec.problem == "ridge":
        return _ridge_objective(arrays["H"], arrays["y"], spec.lam)
    if spec.problem == "logistic":
        return _logistic_objective(arrays["S"], arrays["labels"], spec.lam)
    if spec.problem == "rosenbrock":
        return make_rosenbrock(spec)
    width = _layer_width(spec.d)
    inputs, targets = arrays["inputs"], arrays["targets"]

    def value(x):
        err = _nn_forward(x, inputs, width) - targets
        return float(err @ err)

    return BlackBoxObjective(spec.d, value, optimum_value=0.0, name="neural_net")
