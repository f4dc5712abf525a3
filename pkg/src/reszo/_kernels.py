"""Hot numeric kernels with numba and pure-numpy implementations.

The numba path is used by default when numba imports cleanly; set the
environment variable ``RESZO_DISABLE_NUMBA=1`` before import to force
the pure-numpy fallbacks (useful for debugging and for the
``bench/kernel_bench.py`` comparison).  Both implementations of each
kernel are importable directly so tests can compare them.
"""

from __future__ import annotations

import os

import numpy as np

# Denominators below this magnitude make a rank-1 inverse update singular.
SM_SINGULAR_TOL = 1e-12

_env = os.environ.get("RESZO_DISABLE_NUMBA", "0").strip().lower()
_DISABLED = _env in {"1", "true", "yes", "on"}


def _sm_swap_numpy(a_inv, drop, add):
    """Swap one row of a Gram matrix through its cached inverse.

    Given ``a_inv = G^-1``, returns ``(G - drop drop^T + add add^T)^-1``
    via two rank-1 corrections.  Status is 0 on success, 1 if the drop
    step is singular, 2 if the add step is.  ``a_inv`` must be
    symmetric (Gram inverses are), which the update preserves.
    """
    av = a_inv @ drop
    den1 = 1.0 - drop @ av
    if abs(den1) < SM_SINGULAR_TOL:
        return a_inv, 1
    b = a_inv + np.outer(av, av) / den1
    bw = b @ add
    den2 = 1.0 + add @ bw
    if abs(den2) < SM_SINGULAR_TOL:
        return a_inv, 2
    return b - np.outer(bw, bw) / den2, 0


def _rosenbrock_value_numpy(x):
    head = x[:-1]
    q = (head + 1.0) ** 2 - x[1:] - 1.0
    return float(np.sum(100.0 * q * q + head * head))


def _rosenbrock_grad_numpy(x):
    head = x[:-1]
    q = (head + 1.0) ** 2 - x[1:] - 1.0
    grad = np.zeros_like(x)
    grad[:-1] = 400.0 * q * (head + 1.0) + 2.0 * head
    grad[1:] -= 200.0 * q
    return grad


def _sigmoid_numpy(z):
    # tanh form is stable for large |z|.
    return 0.5 * (1.0 + np.tanh(0.5 * z))


if not _DISABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _DISABLED = True

if not _DISABLED:

    @njit(cache=True)
    def _sm_swap_numba(a_inv, drop, add):
        n = a_inv.shape[0]
        av = np.empty(n)
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += a_inv[i, j] * drop[j]
            av[i] = s
        den1 = 1.0
        for i in range(n):
            den1 -= drop[i] * av[i]
        if abs(den1) < SM_SINGULAR_TOL:
            return a_inv, 1
        b = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                b[i, j] = a_inv[i, j] + av[i] * av[j] / den1
        bw = np.empty(n)
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += b[i, j] * add[j]
            bw[i] = s
        den2 = 1.0
        for i in range(n):
            den2 += add[i] * bw[i]
        if abs(den2) < SM_SINGULAR_TOL:
            return a_inv, 2
        for i in range(n):
            for j in range(n):
                b[i, j] -= bw[i] * bw[j] / den2
        return b, 0

    @njit(cache=True)
    def _rosenbrock_value_numba(x):
        total = 0.0
        for i in range(x.shape[0] - 1):
            q = (x[i] + 1.0) ** 2 - x[i + 1] - 1.0
            total += 100.0 * q * q + x[i] * x[i]
        return total

    @njit(cache=True)
    def _rosenbrock_grad_numba(x):
        grad = np.zeros_like(x)
        for i in range(x.shape[0] - 1):
            q = (x[i] + 1.0) ** 2 - x[i + 1] - 1.0
            grad[i] += 400.0 * q * (x[i] + 1.0) + 2.0 * x[i]
            grad[i + 1] -= 200.0 * q
        return grad

    sm_swap = _sm_swap_numba
    rosenbrock_value = _rosenbrock_value_numba
    rosenbrock_grad = _rosenbrock_grad_numba
else:
    sm_swap = _sm_swap_numpy
    rosenbrock_value = _rosenbrock_value_numpy
    rosenbrock_grad = _rosenbrock_grad_numpy

sigmoid = _sigmoid_numpy


def backend() -> str:
    """Which implementation the selected kernels run on."""
    return "numpy" if _DISABLED else "numba"
