"""Hermite-function utilities.

Hermite functions h_n(x) = (2^n n! sqrt(pi))^{-1/2} H_n(x) exp(-x^2/2) are the
eigenfunctions of -d^2/dx^2 + x^2 with eigenvalues 2n + 1.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite


class QuadratureError(RuntimeError):
    """Raised when a node-doubling convergence test fails."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


def hermite_functions(n_max, x):
    """Values h_0..h_{n_max} at points x, shape (n_max + 1, len(x))."""
    x = np.asarray(x, dtype=float)
    h = np.empty((n_max + 1,) + x.shape)
    h[0] = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    if n_max >= 1:
        h[1] = np.sqrt(2.0) * x * h[0]
    for n in range(1, n_max):
        h[n + 1] = np.sqrt(2.0 / (n + 1)) * x * h[n] - np.sqrt(n / (n + 1)) * h[n - 1]
    return h


@lru_cache(maxsize=32)
def gauss_hermite_scaled(n_nodes):
    """Nodes and weights for int f(x) dx (no Gaussian weight factored out).

    The scaled weights w_i exp(x_i^2) are computed as 1 / (n h_{n-1}(x_i)^2),
    which stays finite where exp(x_i^2) would overflow.
    """
    x, _ = roots_hermite(n_nodes)
    h = hermite_functions(n_nodes - 1, x)[-1]
    w = 1.0 / (n_nodes * h * h)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def position_matrix(size):
    """Matrix of x in the Hermite basis, truncated to size x size."""
    off = np.sqrt(np.arange(1, size) / 2.0)
    return np.diag(off, 1) + np.diag(off, -1)


def derivative_matrix(size):
    """Matrix of d/dx: d h_n/dx = sqrt(n/2) h_{n-1} - sqrt((n+1)/2) h_{n+1}."""
    off = np.sqrt(np.arange(1, size) / 2.0)
    return np.diag(off, 1) - np.diag(off, -1)


def momentum_matrix(size):
    """Matrix of D = -i d/dx in the Hermite basis."""
    return -1j * derivative_matrix(size)


def _plane_wave_raw(size, ks, n_nodes):
    x, w = gauss_hermite_scaled(n_nodes)
    h = hermite_functions(size - 1, x) * np.sqrt(w)
    out = np.empty((len(ks), size, size), dtype=complex)
    chunk = max(1, 2_000_000 // (size * n_nodes))
    for lo in range(0, len(ks), chunk):
        phase = np.exp(-1j * np.outer(ks[lo:lo + chunk], x))
        out[lo:lo + chunk] = (h[None, :, :] * phase[:, None, :]) @ h.T
    return out


def plane_wave_matrices(size, ks, tol=1e-9, n_start=48, n_limit=2048):
    """<h_a, exp(-i k x) h_b> for a, b < size and every k in ks.

    Gauss-Hermite quadrature, doubled until the maximum entry change is below
    tol. Entries are bounded by one (submatrix of a unitary), so tol is an
    absolute bound relative to the operator scale.
    """
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    n = max(n_start, 2 * size + 16)
    prev = _plane_wave_raw(size, ks, n)
    while True:
        n *= 2
        cur = _plane_wave_raw(size, ks, n)
        err = float(np.max(np.abs(cur - prev))) if cur.size else 0.0
        if err <= tol:
            return cur
        if n >= n_limit:
            raise QuadratureError(
                f"plane-wave quadrature not converged at {n} nodes (change {err:.3e})",
                achieved=err,
            )
        prev = cur
