"""Finite-time generator L(t, g), its population-sector limit (the transition
rate matrix), the kernels Phi(s, X) and the Markov semigroup.

Conventions
-----------
Matrices live in the matter eigenbasis. ``E_alpha[a, b] = <u_a, E_alpha u_b>``
and ``E*`` is the componentwise conjugate transpose.

Every k-integral is reduced to a sum over radial nodes of the tensor

    K[a, d, c, b](rho) = 1/2 rho^2 sum_alpha int_{S^2} conj(E_alpha[d, a]) E_alpha[c, b] d omega

so that the (g^2 / 2) prefactor of the generator is already included. The
s-integrals are done in closed form, ``int_0^t exp(i w s) ds``.

Rate matrix orientation
-----------------------
``RateMatrix.M[m, j]`` is the rate from u_m to u_j: nonzero off the diagonal
only for mu_j < mu_m. Its diagonal follows the stated convention
M[j, j] = -sum_{k != j} M[k, j], so every column of M sums to zero.

That diagonal is not the one L(g) produces. Applying L(g) I = 0 to the
projectors gives g^-2 <(L(g) pi_j) u_j, u_j> = -sum_{k != j} M[j, k], the
total decay rate out of u_j (a row sum). ``RateMatrix.sector`` holds this
matrix D[m, j] = g^-2 <(L(g) pi_j) u_m, u_m>, which agrees with M off the
diagonal and has zero row sums. ``generator`` is D^T: entry [j, m] is the
rate m -> j and its columns sum to zero. ``markov_semigroup`` returns
exp(g^2 t generator), a column-stochastic matrix whose column index labels
the initial state.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.linalg import expm

from .coupling import build_sphere_quadrature, coupling_blocks, polar_axis
from .model import ConvergenceError, ModelError, sobolev_operator_norm

SERIES_CUTOFF = 1e-6


def phase_integral(omega, t):
    """int_0^t exp(i omega s) ds, elementwise.

    Below |omega t| = 1e-6 a Taylor series replaces the ratio, which would
    otherwise divide by a vanishing omega.
    """
    omega = np.asarray(omega, dtype=float)
    x = omega * t
    small = np.abs(x) < SERIES_CUTOFF
    safe = np.where(small, 1.0, omega)
    # exp(ix) - 1 without the cancellation in cos(x) - 1
    num = -2.0 * np.sin(0.5 * x) ** 2 + 1j * np.sin(x)
    out = num / (1j * safe)
    series = t * (1.0 + 0.5j * x - x * x / 6.0 - 1j * x**3 / 24.0)
    return np.where(small, series, out)


# -- kernels ------------------------------------------------------------------

def _pair_tensor(E, weights):
    """sum_q w_q sum_alpha conj(E[q, alpha, d, a]) E[q, alpha, c, b] -> [a, d, c, b]."""
    return np.einsum("q,qxda,qxcb->adcb", weights, E.conj(), E, optimize=True)


def _contract(K, X):
    """Contract pair tensors (..., a, d, c, b) with X into the two integrands.

    A1[a, c, b] carries the factor [E*, X] E (frequency mu_c - mu_b) and
    A2[a, c, b] the factor E* [E, X] (frequency mu_c - mu_a).
    """
    A1 = np.einsum("...adcb,dc->...acb", K, X) - np.einsum("...dccb,ad->...acb", K, X)
    A2 = np.einsum("...accd,db->...acb", K, X) - np.einsum("...acdb,cd->...acb", K, X)
    return A1, A2


@dataclass(eq=False)
class DiscreteKernel:
    """Pair tensors on explicit nodes: frequencies |k_q| and K_q (already weighted)."""

    omegas: np.ndarray
    K: np.ndarray

    def integrands(self, X, horizon=None):
        A1, A2 = _contract(self.K, X)
        yield self.omegas, np.ones_like(self.omegas), A1, A2

    @classmethod
    def from_k_nodes(cls, model, ks, weights, tol=1e-9):
        """Kernel of a plain k-space quadrature rule (nodes ks, weights)."""
        E = coupling_blocks(model, ks, tol=tol)
        K = 0.5 * np.einsum("q,qxda,qxcb->qadcb", weights, E.conj(), E)
        return cls(np.linalg.norm(ks, axis=1), K)

    @classmethod
    def from_couplings(cls, omegas, C):
        """Kernel of effective modes with coupling matrices C (H_int = sum a C* + a* C)."""
        K = np.einsum("qda,qcb->qadcb", C.conj(), C)
        return cls(np.asarray(omegas, dtype=float), K)


class RadialKernel:
    """Angular-integrated pair tensor as a Chebyshev series on [0, r_max].

    The tensor is smooth in rho (the |k|^{-1/2} of A is squared and absorbed by
    the rho^2 measure), so the series converges spectrally. The degree is
    doubled until the interpolant matches direct evaluation at off-node
    probes to ``tol`` relative to the largest entry.
    """

    def __init__(self, model, sphere_order=12, r_max=None, tail_tol=1e-14,
                 degree=48, tol=1e-10, max_degree=512, coupling_tol=1e-9, nodes_per_panel=16):
        self.model = model
        self.nodes_per_panel = nodes_per_panel
        self.sphere = build_sphere_quadrature(1.0, sphere_order, polar_axis(model))
        self.r_max = float(r_max or model.cutoff.radial_extent(tail_tol))
        self.coupling_tol = coupling_tol
        probes = self.r_max * np.array([0.013, 0.11, 0.29, 0.47, 0.61, 0.83, 0.97])
        direct = self._direct(probes)
        scale = max(np.max(np.abs(direct)), 1e-300)
        while True:
            x = np.cos(np.pi * (np.arange(degree) + 0.5) / degree)
            vals = self._direct(self.r_max * (x + 1.0) / 2.0)
            self.degree = degree
            self.coef = self._fit(x, vals)
            err = np.max(np.abs(self.values(probes) - direct)) / scale
            if err <= tol:
                break
            if degree >= max_degree:
                raise ConvergenceError(
                    f"radial kernel not resolved at degree {degree} (error {err:.2e})",
                    achieved=err,
                )
            degree *= 2
        self.fit_error = err

    def _direct(self, rho):
        rho = np.asarray(rho, dtype=float)
        dirs = self.sphere.directions
        ks = (rho[:, None, None] * dirs[None]).reshape(-1, 3)
        E = coupling_blocks(self.model, ks, tol=self.coupling_tol)
        n = self.model.n_states
        E = E.reshape(len(rho), len(dirs), 3, n, n)
        w = self.sphere.weights
        K = np.einsum("s,rsxda,rsxcb->radcb", w, E.conj(), E, optimize=True)
        return 0.5 * rho[:, None, None, None, None] ** 2 * K

    @staticmethod
    def _fit(x, vals):
        n = len(x)
        theta = np.arccos(x)
        T = np.cos(np.outer(np.arange(n), theta))
        coef = (2.0 / n) * np.tensordot(T, vals, axes=(1, 0))
        coef[0] /= 2.0
        return coef

    def _map(self, rho):
        return 2.0 * np.asarray(rho) / self.r_max - 1.0

    def values(self, rho):
        V = cheb.chebvander(self._map(rho), self.degree - 1)
        return np.tensordot(V, self.coef, axes=(1, 0))

    def radial_nodes(self, horizon, phase_per_panel=4.0, min_panels=8):
        """Composite Gauss-Legendre nodes resolving exp(i rho s) for s <= horizon."""
        nodes_per_panel = self.nodes_per_panel
        n_panels = max(min_panels, int(np.ceil(self.r_max * max(horizon, 0.0) / phase_per_panel)))
        x, w = np.polynomial.legendre.leggauss(nodes_per_panel)
        edges = np.linspace(0.0, self.r_max, n_panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        rho = (mid[:, None] + half[:, None] * x[None]).ravel()
        wts = (half[:, None] * w[None]).ravel()
        return rho, wts

    def integrands(self, X, horizon=0.0, chunk=16384):
        c1, c2 = _contract(self.coef, X)
        n = X.shape[0]
        c1 = c1.reshape(self.degree, -1)
        c2 = c2.reshape(self.degree, -1)
        rho, wts = self.radial_nodes(horizon)
        for lo in range(0, len(rho), chunk):
            r = rho[lo:lo + chunk]
            V = cheb.chebvander(self._map(r), self.degree - 1)
            yield (r, wts[lo:lo + chunk],
                   (V @ c1).reshape(-1, n, n, n), (V @ c2).reshape(-1, n, n, n))


# -- generator ----------------------------------------------------------------

def commutator_term(model, X):
    """i [H_el + H_sp, X] in the eigenbasis: entries i (mu_a - mu_b) X_ab."""
    return 1j * model.bohr_frequencies() * X


def dissipative_part(model, X, t, kernel):
    """The k, s double integral of L(t, g) X divided by g^2."""
    X = np.asarray(X, dtype=complex)
    mu = model.energies
    out = np.zeros_like(X)
    if t == 0:
        return out
    for rho, w, A1, A2 in kernel.integrands(X, horizon=t):
        f1 = phase_integral(-(rho[:, None, None] + mu[None, :, None] - mu[None, None, :]), t)
        f2 = phase_integral(rho[:, None, None] + mu[None, None, :] - mu[None, :, None], t)
        out += np.einsum("qacb,qcb->ab", A1, f1 * w[:, None, None])
        out -= np.einsum("qacb,qac->ab", A2, f2 * w[:, None, None])
    return out


def default_kernel(model, **kw):
    return RadialKernel(model, **kw)


def assemble_L_finite_t(model, X, t, g, kernel=None):
    """L(t, g) X = i[H, X] + (g^2/2) int_{R^3 x (0,t)} (...) dk ds.

    ``kernel`` selects the k-quadrature: a ``RadialKernel`` (continuum,
    default) or a ``DiscreteKernel`` (explicit nodes or Fock modes).
    """
    if t < 0 or g < 0:
        raise ValueError("t and g must be nonnegative")
    X = np.asarray(X, dtype=complex)
    base = commutator_term(model, X)
    if g == 0 or t == 0:
        return base
    kernel = kernel or default_kernel(model)
    return base + g * g * dissipative_part(model, X, t, kernel)


def eval_phi(model, X, s, kernel=None):
    """Phi(s, X) = int e^{is|k|} [E*(k), X] E^free(k, -s) dk for each s."""
    kernel = kernel or default_kernel(model)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    X = np.asarray(X, dtype=complex)
    mu = model.energies
    n = len(mu)
    out = np.zeros((len(s), n, n), dtype=complex)
    bohr_cb = mu[:, None] - mu[None, :]
    for rho, w, A1, _ in kernel.integrands(X, horizon=float(np.max(s))):
        ph = np.exp(1j * np.outer(s, rho)) * w[None]
        tmp = np.einsum("sq,qacb->sacb", ph, A1)
        out += np.einsum("sacb,scb->sab", tmp, np.exp(-1j * s[:, None, None] * bohr_cb[None]))
    return 2.0 * out


def eval_phi_star(model, X, s, kernel=None):
    """Phi*(s, X) = int e^{-is|k|} E^free(k, -s)* [X, E(k)] dk for each s."""
    kernel = kernel or default_kernel(model)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    X = np.asarray(X, dtype=complex)
    mu = model.energies
    n = len(mu)
    out = np.zeros((len(s), n, n), dtype=complex)
    bohr_ca = mu[None, :] - mu[:, None]  # [a, c] -> mu_c - mu_a
    for rho, w, _, A2 in kernel.integrands(X, horizon=float(np.max(s))):
        ph = np.exp(-1j * np.outer(s, rho)) * w[None]
        tmp = np.einsum("sq,qacb->sacb", ph, A2)
        out -= np.einsum("sacb,sac->sab", tmp, np.exp(1j * s[:, None, None] * bohr_ca[None]))
    return 2.0 * out


def convergence_L(model, X, g, t_grid, kernel=None, norm=(2, 0)):
    """Defects ||L(t,g)X - L(T_ref,g)X|| with T_ref = 10 max(t_grid).

    Norms are operator norms W_2 -> W_0 by default. Returns an (n, 2) array
    of (t, defect).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be increasing")
    kernel = kernel or default_kernel(model)
    t_ref = 10.0 * t_grid[-1]
    ref = assemble_L_finite_t(model, X, t_ref, g, kernel)
    rows = []
    for t in t_grid:
        diff = assemble_L_finite_t(model, X, t, g, kernel) - ref
        rows.append((t, sobolev_operator_norm(model, diff, *norm)))
    return np.array(rows)


# -- observables --------------------------------------------------------------

@dataclass(eq=False)
class ObservableMatrix:
    """Matter observable X with its W_m -> W_m operator norms, m = 0..4."""

    X: np.ndarray
    bound_norms: dict = field(default_factory=dict)

    @classmethod
    def of(cls, model, X):
        X = np.asarray(X, dtype=complex)
        if X.shape != (model.n_states, model.n_states):
            raise ModelError("observable shape does not match the model")
        if not np.all(np.isfinite(X)):
            raise ModelError("observable has non-finite entries")
        norms = {m: sobolev_operator_norm(model, X, m, m) for m in range(5)}
        return cls(X, norms)


# -- transition rates ---------------------------------------------------------

@dataclass(eq=False)
class RateMatrix:
    """Transition rates M[m, j] (from u_m to u_j) per unit g^2 t."""

    M: np.ndarray
    quad_order: int
    cutoff_id: str
    energies: np.ndarray

    @property
    def sector(self):
        """D[m, j] = g^-2 <(L(g) pi_j) u_m, u_m>: M off the diagonal, rows sum to zero."""
        D = self.M - np.diag(np.diag(self.M))
        D[np.diag_indices_from(D)] = -D.sum(axis=1) + 0.0
        return D

    @property
    def generator(self):
        """Column-convention generator D^T: entry [j, m] is the rate m -> j."""
        return self.sector.T

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("row", "col", "value"))
        for (m, j), v in np.ndenumerate(self.M):
            w.writerow((m, j, repr(float(v))))
        return buf.getvalue()

    def to_dict(self):
        return {
            "M": [[float(v) for v in row] for row in self.M],
            "quad_order": int(self.quad_order),
            "cutoff_id": self.cutoff_id,
            "energies": [float(v) for v in self.energies],
            "convention": "M[m][j] = rate from state m to state j for m != j; "
                          "M[j][j] = -sum_{k != j} M[k][j], so columns sum to zero",
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["M"], dtype=float), d["quad_order"], d["cutoff_id"],
                   np.array(d["energies"], dtype=float))


class RateStructureError(RuntimeError):
    pass


def transition_rate_matrix(model, quad_order=12, coupling_tol=1e-9):
    """Rates M[m, j] = pi sum_alpha int_{|k| = mu_m - mu_j} |<E_alpha(k) u_m, u_j>|^2 dsigma.

    Entries with mu_j > mu_m, and off-diagonal entries inside a degenerate
    level, are zero by construction. The diagonal is the stated
    M[j, j] = -sum_{k != j} M[k, j]; see ``RateMatrix.sector`` for the
    diagonal that L(g) I = 0 gives.
    """
    if quad_order < 6:
        raise ValueError("quad_order must be >= 6")
    mu = model.energies
    n = len(mu)
    M = np.zeros((n, n))
    gaps = {}
    for m in range(n):
        for j in range(n):
            if mu[j] < mu[m]:
                gaps.setdefault(mu[m] - mu[j], []).append((m, j))
    for radius, pairs in sorted(gaps.items()):
        sph = build_sphere_quadrature(radius, quad_order, polar_axis(model))
        E = coupling_blocks(model, sph.points, tol=coupling_tol)
        for m, j in pairs:
            val = np.pi * float(np.sum(sph.weights * np.sum(np.abs(E[:, :, j, m]) ** 2, axis=1)))
            if val < -1e-12:
                raise RateStructureError(f"negative rate {val} for {m}->{j}")
            M[m, j] = max(val, 0.0)
    M[np.diag_indices(n)] = -M.sum(axis=0) + 0.0  # no negative zeros in output
    return RateMatrix(M=M, quad_order=quad_order, cutoff_id=model.cutoff.id, energies=mu.copy())


def lindblad_limit_on_populations(model, rate, X_diag, g):
    """g^2 D x: diagonal of L(g) applied to sum_j x_j pi_{u_j}, D = rate.sector."""
    x = np.asarray(X_diag, dtype=float)
    if x.shape != (model.n_states,):
        raise ModelError("X_diag length does not match the model")
    return g * g * (rate.sector @ x)


def markov_semigroup(rate, g, t):
    """exp(g^2 t generator); column-stochastic, column index = initial state."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return expm(g * g * t * rate.generator)
