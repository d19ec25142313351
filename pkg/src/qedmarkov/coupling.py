"""Photon-matter coupling: the fields A_{j,x}(k), B_{j,x0}(k), the operator
E(k) in the matter eigenbasis, its free evolution, and sphere quadrature.

Normalizations follow the model definition literally: A carries no
(2 pi)^{-3/2} factor while B does. Rates built from E therefore differ from
textbook QED constants by a fixed factor.

For 1D electron models the coordinate is embedded as x = (x_1, 0, 0), so only
D_1 acts on the basis and exp(-i k.x) reduces to exp(-i k_1 x_1).
"""

import csv
from dataclasses import dataclass

import numpy as np

from ._hermite import momentum_matrix, plane_wave_matrices
from .model import ModelError, spin_operators

_EYE3 = np.eye(3)


class CouplingDomainError(ValueError):
    pass


def _check_k(k):
    k = np.asarray(k, dtype=float)
    rho = np.linalg.norm(k, axis=-1)
    if np.any(rho == 0):
        raise CouplingDomainError("k = 0 is outside the coupling domain")
    return k, rho


def eval_A(j, x, k, cutoff):
    """A_{j,x}(k) = phi(|k|) |k|^{-1/2} e^{-ik.x} (e_j - (e_j.k) k/|k|^2).

    ``j`` is the axis index 1..3.
    """
    k, rho = _check_k(k)
    e = _EYE3[j - 1]
    vec = e - k * k[j - 1] / rho**2
    return cutoff(rho) * rho**-0.5 * np.exp(-1j * np.dot(k, x)) * vec


def eval_B(j, x0, k, cutoff):
    """B_{j,x0}(k) = i phi(|k|) |k|^{1/2} (2 pi)^{-3/2} e^{-ik.x0} (k x e_j)/|k|."""
    k, rho = _check_k(k)
    e = _EYE3[j - 1]
    pref = 1j * cutoff(rho) * rho**0.5 * (2 * np.pi) ** -1.5
    return pref * np.exp(-1j * np.dot(k, x0)) * np.cross(k, e) / rho


@dataclass(frozen=True, eq=False)
class CouplingBlock:
    """[E_alpha(k)]_{ab} = <u_a, E_alpha(k) u_b>, shape (3, N, N).

    The adjoint E*(k) has components E_mat[alpha].conj().T.
    """

    k: np.ndarray
    E_mat: np.ndarray

    def adjoint(self):
        return np.conj(np.swapaxes(self.E_mat, -1, -2))


def _transverse_projectors(k, rho):
    khat = k / rho[:, None]
    return _EYE3[None] - khat[:, :, None] * khat[:, None, :]


def _electron_matrices(model, ks, tol):
    """<u_a, e^{-ik.x} D_j u_b> for j = 1..d, shape (n_k, d, N, N)."""
    if model.basis_kind == "hermite_product":
        idx = model.indices
        size = int(idx.max()) + 2
        mom = momentum_matrix(size)
        d = model.dimension
        planes = [_unique_planes(size, ks[:, axis], tol) for axis in range(d)]
        pd = [p @ mom for p in planes]
        out = np.empty((len(ks), d, model.n_states, model.n_states), dtype=complex)
        for j in range(d):
            acc = np.ones((len(ks), model.n_states, model.n_states), dtype=complex)
            for axis in range(d):
                mat = pd[axis] if axis == j else planes[axis]
                acc = acc * mat[:, idx[:, axis][:, None], idx[:, axis][None, :]]
            out[:, j] = acc
        return out
    if model.basis_kind == "hermite_expansion":
        c = model.coeffs
        size = c.shape[0] + 1
        mom = momentum_matrix(size)
        out = np.empty((len(ks), 1, model.n_states, model.n_states), dtype=complex)
        # the full Hermite-space matrices are large; contract chunk by chunk
        k1, inverse = np.unique(ks[:, 0], return_inverse=True)
        reduced = np.empty((len(k1), model.n_states, model.n_states), dtype=complex)
        chunk = max(1, 4_000_000 // (size * size))
        for lo in range(0, len(k1), chunk):
            p = plane_wave_matrices(size, k1[lo:lo + chunk], tol=tol)
            pd = (p @ mom)[:, :-1, :-1]
            reduced[lo:lo + chunk] = np.einsum("ia,kij,jb->kab", c.conj(), pd, c)
        out[:, 0] = reduced[inverse.ravel()]
        return out
    raise ModelError(f"no electron representation for {model.basis_kind!r}")


def _unique_planes(size, k_axis, tol):
    vals, inverse = np.unique(k_axis, return_inverse=True)
    return plane_wave_matrices(size, vals, tol=tol)[inverse.ravel()]


def polar_axis(model):
    """Sphere-rule polar axis: e_1 for 1D electron models, where E(k) depends on
    k only through k_1 and a polar axis along e_1 minimizes distinct k_1."""
    return 1 if model.basis_kind != "spin" and model.dimension == 1 else 3


def coupling_blocks(model, ks, tol=1e-9):
    """E_mat for an array of wavevectors, shape (n_k, 3, N, N)."""
    ks, rho = _check_k(np.atleast_2d(ks))
    phi = model.cutoff(rho)
    if model.basis_kind == "spin":
        s = spin_operators(model)
        # B_j components: [k x e_j]_alpha = eps_{alpha beta j} k_beta
        cross = np.cross(ks[:, None, :], _EYE3[None, :, :])  # (n_k, j, alpha)
        pref = 1j * phi * rho**-0.5 * (2 * np.pi) ** -1.5
        pref = pref * np.exp(-1j * ks @ np.asarray(model.x0))
        return np.einsum("k,kja,jmn->kamn", pref, cross, s)
    proj = _transverse_projectors(ks, rho)
    mats = _electron_matrices(model, ks, tol)
    d = mats.shape[1]
    pref = phi * rho**-0.5
    return pref[:, None, None, None] * np.einsum("kaj,kjmn->kamn", proj[:, :, :d], mats)


def coupling_block(model, k, tol=1e-9):
    k = np.asarray(k, dtype=float)
    return CouplingBlock(k=k, E_mat=coupling_blocks(model, k[None], tol)[0])


def free_evolved_block(block, model, t):
    """E^free(k, t) = e^{itH} E(k) e^{-itH}: entries times e^{it(mu_a - mu_b)}."""
    phase = np.exp(1j * t * model.bohr_frequencies())
    return CouplingBlock(k=block.k, E_mat=block.E_mat * phase[None])


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    """Nodes on the sphere of a given radius; weights sum to 4 pi radius^2."""

    radius: float
    directions: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def points(self):
        return self.radius * self.directions

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


def build_sphere_quadrature(radius, order, axis=3):
    """Gauss-Legendre in cos(theta) with ``order`` nodes times a trapezoid rule
    with 2*order azimuthal nodes. Exact on spherical harmonics of degree
    < 2*order. ``axis`` (1..3) is the polar axis."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    if order < 2:
        raise ValueError("sphere quadrature order must be >= 2")
    z, wz = np.polynomial.legendre.leggauss(order)
    n_az = 2 * order
    az = 2 * np.pi * (np.arange(n_az) + 0.5) / n_az
    s = np.sqrt(1 - z * z)
    dirs = np.stack(
        [
            np.outer(s, np.cos(az)).ravel(),
            np.outer(s, np.sin(az)).ravel(),
            np.repeat(z, n_az),
        ],
        axis=-1,
    )
    if axis not in (1, 2, 3):
        raise ValueError("axis must be 1, 2 or 3")
    dirs = np.roll(dirs, axis - 3, axis=1)
    w = np.repeat(wz, n_az) * (2 * np.pi / n_az) * radius**2
    return SphereQuadrature(radius=float(radius), directions=dirs, weights=w, order=order)


CSV_COLUMNS = ("k1", "k2", "k3", "alpha", "a", "b", "re", "im")


def dump_blocks_csv(path, blocks):
    """Write coupling blocks, one row per entry: k1,k2,k3,alpha,a,b,re,im."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for blk in blocks:
            k = [repr(float(v)) for v in blk.k]
            for alpha, a, b in np.ndindex(blk.E_mat.shape):
                z = blk.E_mat[alpha, a, b]
                w.writerow(k + [alpha + 1, a, b, repr(float(z.real)), repr(float(z.imag))])
