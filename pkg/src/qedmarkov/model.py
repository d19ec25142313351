"""Matter side of the model: confined electron eigenbases, the fixed spin,
ultraviolet cutoffs and Sobolev diagnostics.

Three concrete models are provided:

* ``harmonic`` -- H_el = -Laplacian + |x|^2 in d = 1 or 3, analytic
  Hermite-product eigenfunctions.
* ``quartic``  -- H_el = -d^2/dx^2 + x^4 in d = 1, Rayleigh-Ritz in a
  Hermite basis.
* ``spin``     -- H_sp = B sigma_3 for a spin-1/2 at a fixed position x0.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._hermite import gauss_hermite_scaled, hermite_functions, position_matrix

MAX_STATES = 500

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


class ModelError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


@dataclass(frozen=True)
class CutoffFn:
    """Radial ultraviolet cutoff phi(|k|).

    ``gauss``: exp(-r^2 / (2 s^2)); ``gauss_vanishing``: (r/s) exp(-r^2 / (2 s^2)).
    """

    kind: str = "gauss"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gauss", "gauss_vanishing"):
            raise ModelError(f"unknown cutoff kind {self.kind!r}")
        if not self.scale > 0:
            raise ModelError("cutoff scale must be positive")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        u = r / self.scale
        val = np.exp(-0.5 * u * u)
        if self.kind == "gauss_vanishing":
            val = u * val
        return val

    @property
    def id(self):
        return f"{self.kind}:{self.scale!r}"

    def radial_extent(self, tail_tol=1e-12, power=8):
        """Smallest r on a fine grid with phi(r)^2 (1+r)^power below tail_tol
        for all larger r."""
        r = np.linspace(0.0, 60.0 * self.scale, 60001)
        bad = self(r) ** 2 * (1.0 + r) ** power > tail_tol
        idx = np.nonzero(bad)[0]
        return float(r[min(idx[-1] + 1, len(r) - 1)]) if len(idx) else float(r[1])


@dataclass(frozen=True)
class Potential:
    """Radial polynomial potential V(x) = sum_p c_p |x|^p."""

    kind: str
    growth_exponent: float
    ellipticity: float
    coefficients: dict = field(default_factory=dict)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x * x, axis=-1)) if x.ndim > 1 else np.abs(x)
        return sum(c * r**p for p, c in self.coefficients.items())

    def check_bounds(self, x):
        """True iff V >= 0 and V >= gamma |x|^M at every sample."""
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x * x, axis=-1)) if x.ndim > 1 else np.abs(x)
        v = self(x)
        lower = self.ellipticity * r**self.growth_exponent
        return bool(np.all(v >= 0) and np.all(v >= lower * (1 - 1e-14)))


HARMONIC = Potential("harmonic", 2.0, 1.0, {2: 1.0})
QUARTIC = Potential("quartic", 4.0, 1.0, {4: 1.0})


@dataclass(frozen=True, eq=False)
class MatterModel:
    """Finite eigenbasis (mu_j, u_j) of the matter Hamiltonian.

    ``basis_kind`` selects the representation:
    ``hermite_product`` (``indices`` holds per-axis Hermite degrees),
    ``hermite_expansion`` (``coeffs`` holds Hermite coefficients, one column
    per eigenfunction) or ``spin`` (``coeffs`` holds sigma_3 eigenvectors).
    """

    dimension: int
    energies: np.ndarray
    basis_kind: str
    cutoff: CutoffFn
    indices: np.ndarray = None
    coeffs: np.ndarray = None
    potential: Potential = None
    spin_B: float = None
    x0: tuple = (0.0, 0.0, 0.0)
    sobolev_shift: float = 1.0
    name: str = ""

    def __post_init__(self):
        for attr in ("energies", "indices", "coeffs"):
            arr = getattr(self, attr)
            if arr is not None:
                arr = np.array(arr)
                arr.setflags(write=False)
                object.__setattr__(self, attr, arr)
        if self.sobolev_shift + self.energies[0] <= 0:
            raise ModelError("sobolev shift must make C + mu_0 positive")

    @property
    def n_states(self):
        return len(self.energies)

    def with_cutoff(self, cutoff):
        """Same matter model with another cutoff (spectrum unchanged)."""
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw["cutoff"] = cutoff
        return MatterModel(**kw)

    def bohr_frequencies(self):
        """Matrix mu_a - mu_b."""
        return self.energies[:, None] - self.energies[None, :]


def _default_shift(mu0):
    return 1.0 if mu0 >= 0 else 1.0 - mu0


def _hermite_product_indices(d, n_max):
    idx = [n for n in itertools.product(range(n_max + 1), repeat=d) if sum(n) <= n_max]
    idx.sort(key=lambda n: (sum(n), tuple(-v for v in n)))
    return np.array(idx, dtype=int)


def build_harmonic_model(d, n_max, cutoff=None, max_states=MAX_STATES):
    """Eigenbasis of -Laplacian + |x|^2 with total Hermite degree <= n_max.

    Eigenvalues 2(n_1 + ... + n_d) + d, sorted nondecreasing; ties are kept
    (the 3D levels are degenerate).
    """
    if d not in (1, 3):
        raise ModelError(f"dimension must be 1 or 3, got {d}")
    if n_max < 0:
        raise ModelError("n_max must be nonnegative")
    n_states = math.comb(n_max + d, d)
    if n_states > max_states:
        raise ModelError(f"harmonic basis of {n_states} states exceeds cap {max_states}")
    idx = _hermite_product_indices(d, n_max)
    energies = 2.0 * idx.sum(axis=1) + d
    return MatterModel(
        dimension=d,
        energies=energies.astype(float),
        basis_kind="hermite_product",
        cutoff=cutoff or CutoffFn(),
        indices=idx,
        potential=HARMONIC,
        sobolev_shift=_default_shift(energies[0]),
        name=f"harmonic{d}d",
    )


def quartic_hamiltonian(size, rows=None):
    """-d^2/dx^2 + x^4 in the first ``size`` Hermite functions.

    With ``rows`` > size the rectangular block (rows, size) is returned; since
    x^4 couples h_n only up to h_{n+4}, rows = size + 4 captures H applied to
    the span exactly.
    """
    rows = rows or size
    big = max(rows, size) + 4
    x = position_matrix(big)
    x2 = x @ x
    h = np.diag(2.0 * np.arange(big) + 1.0) - x2 + x2 @ x2
    return h[:rows, :size]


def _fix_signs(vecs):
    piv = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[piv, np.arange(vecs.shape[1])])
    return vecs * signs


def _ritz_residuals(size, w, v):
    hv = quartic_hamiltonian(size, rows=size + 4) @ v
    hv[:size] -= v * w
    return np.linalg.norm(hv, axis=0)


def build_quartic_model(d, n_basis, cutoff=None, rtol=1e-8, residual_tol=1e-9, max_size=2048):
    """Lowest n_basis eigenpairs of -d^2/dx^2 + x^4 (d = 1 only).

    Rayleigh-Ritz in a Hermite basis of at least 4 n_basis functions, doubled
    until the retained eigenvalues agree to rtol and the exact residual
    ||H u - mu u|| is below residual_tol.
    """
    if d != 1:
        raise ModelError("quartic model is implemented for d = 1 only")
    if n_basis < 1:
        raise ModelError("n_basis must be positive")
    size = max(4 * n_basis, 40)
    w = np.linalg.eigvalsh(quartic_hamiltonian(size))
    while True:
        size2 = 2 * size
        w2, v2 = np.linalg.eigh(quartic_hamiltonian(size2))
        change = np.max(np.abs(w2[:n_basis] - w[:n_basis]) / np.abs(w2[:n_basis]))
        resid = np.max(_ritz_residuals(size2, w2[:n_basis], v2[:, :n_basis]))
        if change <= rtol and resid <= residual_tol:
            break
        if size2 >= max_size:
            raise ConvergenceError(
                f"quartic eigenpairs not converged at basis size {size2} "
                f"(eigenvalue change {change:.2e}, residual {resid:.2e})",
                achieved=max(change, resid),
            )
        size, w = size2, w2
    coeffs = _fix_signs(v2[:, :n_basis])
    energies = w2[:n_basis]
    return MatterModel(
        dimension=1,
        energies=energies,
        basis_kind="hermite_expansion",
        cutoff=cutoff or CutoffFn(),
        coeffs=coeffs,
        potential=QUARTIC,
        sobolev_shift=_default_shift(energies[0]),
        name="quartic1d",
    )


def build_spin_model(B, x0=(0.0, 0.0, 0.0), cutoff=None):
    """Two-level model H_sp = B sigma_3, basis sorted as (down, up)."""
    if not B > 0:
        raise ModelError("spin field B must be positive")
    # columns: sigma_3 eigenvectors for -1 then +1
    vecs = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    return MatterModel(
        dimension=0,
        energies=np.array([-B, B], dtype=float),
        basis_kind="spin",
        cutoff=cutoff or CutoffFn(),
        coeffs=vecs,
        spin_B=float(B),
        x0=tuple(float(v) for v in x0),
        sobolev_shift=_default_shift(-B),
        name="spin",
    )


def spin_operators(model):
    """Pauli matrices expressed in the model's eigenbasis, shape (3, 2, 2)."""
    u = model.coeffs
    return np.einsum("ia,jik,kb->jab", u.conj(), PAULI, u)


def sobolev_norm(model, coeffs, m):
    """(sum_j (C + mu_j)^m |c_j|^2)^(1/2), the W_m norm in the eigenbasis."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape != (model.n_states,):
        raise ModelError(f"expected {model.n_states} coefficients, got {coeffs.shape}")
    if m < 0:
        raise ModelError("m must be nonnegative")
    weights = (model.sobolev_shift + model.energies) ** m
    return float(np.sqrt(np.sum(weights * np.abs(coeffs) ** 2)))


def sobolev_operator_norm(model, Y, m_from, m_to):
    """Operator norm of Y as a map W_{m_from} -> W_{m_to}."""
    c = model.sobolev_shift + model.energies
    scaled = (c[:, None] ** (m_to / 2.0)) * np.asarray(Y) * (c[None, :] ** (-m_from / 2.0))
    return float(np.linalg.norm(scaled, 2))


# -- grid diagnostics -------------------------------------------------------

def _hermite_coeff_matrix(model):
    """Hermite coefficients of the 1D eigenfunctions, shape (K, N)."""
    if model.basis_kind == "hermite_expansion":
        return model.coeffs
    idx = model.indices[:, 0]
    c = np.zeros((idx.max() + 1, model.n_states))
    c[idx, np.arange(model.n_states)] = 1.0
    return c


def grid_samples(model, n_nodes=None):
    """Eigenfunctions sampled on a tensor Gauss-Hermite grid.

    Returns (points, weights, values) with values shaped (N, n_points).
    """
    if model.basis_kind == "spin":
        raise ModelError("spin models have no spatial grid")
    if model.basis_kind == "hermite_product":
        kmax = int(model.indices.max())
    else:
        kmax = model.coeffs.shape[0] - 1
    n = n_nodes or (kmax + 16)
    x, w = gauss_hermite_scaled(n)
    h = hermite_functions(kmax, x)
    if model.basis_kind == "hermite_expansion":
        vals = model.coeffs.T @ h
        return x[:, None], w, vals
    d = model.dimension
    grids = np.meshgrid(*([x] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.ones(1)
    for _ in range(d):
        wts = np.multiply.outer(wts, w)
    wts = wts.ravel()
    vals = np.ones((model.n_states, 1))
    for axis in range(d):
        fac = h[model.indices[:, axis]]
        vals = (vals[:, :, None] * fac[:, None, :]).reshape(model.n_states, -1)
    return pts, wts, vals


def gram_matrix(model, n_nodes=None):
    """<u_a, u_b> under the model's own quadrature."""
    if model.basis_kind == "spin":
        return model.coeffs.conj().T @ model.coeffs
    _, w, vals = grid_samples(model, n_nodes)
    return (vals * w) @ vals.conj().T


def eigen_residuals(model, n_nodes=None):
    """||H u_j - mu_j u_j|| / ||u_j|| on the quadrature grid.

    Uses -h_n'' = (2n + 1 - x^2) h_n per axis, so the kinetic term is exact.
    """
    if model.basis_kind == "spin":
        return np.zeros(model.n_states)
    pts, w, vals = grid_samples(model, n_nodes)
    if model.basis_kind == "hermite_product":
        # each u_j is a product eigenfunction of -Lap + |x|^2 exactly
        lap = (2.0 * model.indices.sum(axis=1) + model.dimension)[:, None] * vals
        hu = lap - np.sum(pts**2, axis=1)[None, :] * vals + model.potential(pts)[None, :] * vals
    else:
        c = model.coeffs
        n = np.arange(c.shape[0])
        h = hermite_functions(c.shape[0] - 1, pts[:, 0])
        kin = (c * (2.0 * n + 1.0)[:, None]).T @ h - pts[:, 0] ** 2 * vals
        hu = kin + model.potential(pts[:, 0])[None, :] * vals
    r = hu - model.energies[:, None] * vals
    num = np.sqrt(np.sum(np.abs(r) ** 2 * w, axis=1))
    den = np.sqrt(np.sum(np.abs(vals) ** 2 * w, axis=1))
    return num / den
