"""Truncated Fock-space simulator: discretized photon modes, photon-number
cap, full Hamiltonian H(g) = H0 + g Hint, Lanczos propagation and the vacuum
reduction sigma_0.

Discretization
--------------
The continuum mode integral is replaced by a radial midpoint rule times the
sphere rule, with weights w_i. Per mode and polarization component alpha the
coupling matrix is G = sqrt(w_i / 2) E_alpha(k_i), so that

    Hint = sum_r (a_r (x) G_r^* + a_r^* (x) G_r).

All modes on one radial shell share the frequency |k|, so any unitary mixing
of them leaves H_ph unchanged. A singular value decomposition of the stacked
G_r of a shell keeps at most N^2 effective modes per shell with the same
Hint; this is what makes long-time propagation affordable. Pass
``compress=False`` to keep the raw (k, alpha) modes.

Basis order: occupations (vacuum, then one-photon states by mode, then
two-photon multisets in lexicographic order) times matter index, index =
occupation * N + a.
"""

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.linalg import eigh_tridiagonal

from .coupling import build_sphere_quadrature, coupling_blocks
from .model import ModelError

DIM_CAP = 200_000


class FockDimensionError(ModelError):
    pass


class PropagationError(RuntimeError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Photon modes k_i with quadrature weights w_i; shell[i] labels the radial node."""

    k: np.ndarray
    w: np.ndarray
    shell: np.ndarray

    def __post_init__(self):
        if np.any(np.linalg.norm(self.k, axis=1) <= 0):
            raise ModelError("mode wavevectors must be nonzero")
        if np.any(self.w <= 0):
            raise ModelError("mode weights must be positive")

    @property
    def omegas(self):
        return np.linalg.norm(self.k, axis=1)

    def __len__(self):
        return len(self.w)


def cutoff_mass(cutoff):
    """int_{R^3} phi(|k|)^2 dk by adaptive quadrature."""
    val, _ = quad(lambda r: 4 * np.pi * r * r * cutoff(r) ** 2, 0, np.inf, limit=200)
    return val


def build_mode_set(cutoff, n_radial, sphere_order=6, r_max=None, mass_rtol=0.05, axis=3):
    """Midpoint rule on (0, r_max] times the sphere rule of the given order.

    Midpoints keep every |k| > 0. Raises if sum w phi^2 misses the continuum
    cutoff mass by more than ``mass_rtol``.
    """
    if n_radial < 1:
        raise ModelError("n_radial must be positive")
    r_max = float(r_max or cutoff.radial_extent(1e-10))
    dr = r_max / n_radial
    rho = (np.arange(n_radial) + 0.5) * dr
    sph = build_sphere_quadrature(1.0, sphere_order, axis)
    k = (rho[:, None, None] * sph.directions[None]).reshape(-1, 3)
    w = (dr * rho[:, None] ** 2 * sph.weights[None]).ravel()
    shell = np.repeat(np.arange(n_radial), len(sph.weights))
    modes = ModeSet(k=k, w=w, shell=shell)
    exact = cutoff_mass(cutoff)
    approx = float(np.sum(w * cutoff(modes.omegas) ** 2))
    if abs(approx - exact) > mass_rtol * exact:
        raise ModelError(f"mode set captures cutoff mass {approx:.4g}, expected {exact:.4g}")
    return modes


def mode_couplings(model, modes, compress=True, rtol=1e-13, tol=1e-9):
    """Effective mode frequencies and coupling matrices C_e (Hint = sum a_e C_e^* + h.c.)."""
    E = coupling_blocks(model, modes.k, tol=tol)  # (Q, 3, N, N)
    G = np.sqrt(modes.w / 2)[:, None, None, None] * E
    n = model.n_states
    om = modes.omegas
    if not compress:
        return np.repeat(om, 3), G.reshape(-1, n, n)
    scale = np.max(np.abs(G)) if G.size else 0.0
    omegas, mats = [], []
    for s in np.unique(modes.shell):
        sel = modes.shell == s
        rows = G[sel].reshape(-1, n * n)
        _, sv, vh = np.linalg.svd(rows, full_matrices=False)
        keep = sv > rtol * max(scale, 1e-300)
        for val, vec in zip(sv[keep], vh[keep]):
            omegas.append(om[sel][0])
            mats.append((val * vec).reshape(n, n))
    if not mats:
        return np.zeros(0), np.zeros((0, n, n), dtype=complex)
    return np.array(omegas), np.array(mats)


@dataclass(eq=False)
class TruncatedFockSystem:
    model: object
    omegas: np.ndarray
    C: np.ndarray
    n_max: int
    occupations: list
    H0: np.ndarray
    Hint: sp.csr_matrix

    @property
    def dim(self):
        return len(self.H0)

    @property
    def n_modes(self):
        return len(self.omegas)

    def hamiltonian(self, g):
        return (sp.diags(self.H0) + g * self.Hint).tocsr()

    def vacuum_state(self, a):
        psi = np.zeros(self.dim, dtype=complex)
        psi[a] = 1.0
        return psi

    def annihilation(self, e):
        """a_e (x) I as a sparse matrix."""
        N = self.model.n_states
        lookup = {occ: i for i, occ in enumerate(self.occupations)}
        rows, cols, vals = [], [], []
        for i, occ in enumerate(self.occupations):
            if e not in occ:
                continue
            lst = list(occ)
            n_e = lst.count(e)
            lst.remove(e)
            j = lookup[tuple(lst)]
            for a in range(N):
                rows.append(j * N + a)
                cols.append(i * N + a)
                vals.append(np.sqrt(n_e))
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim), dtype=complex)

    def matter_operator(self, Y):
        """I (x) Y on the full space."""
        return sp.kron(sp.identity(len(self.occupations)), sp.csr_matrix(Y), format="csr")


def _occupations(n_modes, n_max):
    occ = [()]
    for n in range(1, n_max + 1):
        occ.extend(combinations_with_replacement(range(n_modes), n))
    return occ


def build_fock_system(model, modes=None, n_max=1, dim_cap=DIM_CAP, compress=True,
                      omegas=None, C=None):
    """Assemble H0 and Hint on the photon-number-capped space.

    Either ``modes`` (a ModeSet) or explicit effective modes (``omegas``, ``C``)
    must be given.
    """
    if n_max not in (0, 1, 2):
        raise ModelError("n_max must be 0, 1 or 2")
    if omegas is None:
        omegas, C = mode_couplings(model, modes, compress=compress)
    omegas = np.asarray(omegas, dtype=float)
    C = np.asarray(C, dtype=complex)
    N = model.n_states
    Q = len(omegas)
    n_occ = sum(math.comb(Q + n - 1, n) for n in range(n_max + 1))
    if n_occ * N > dim_cap:
        raise FockDimensionError(f"Fock dimension {n_occ * N} exceeds cap {dim_cap}")
    occ = _occupations(Q, n_max)
    lookup = {o: i for i, o in enumerate(occ)}
    H0 = (np.array([omegas[list(o)].sum() for o in occ])[:, None] + model.energies[None]).ravel()

    rows, cols, vals = [], [], []
    ia, ib = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    for i, o in enumerate(occ):
        if len(o) == n_max:
            continue
        for e in range(Q):
            up = tuple(sorted(o + (e,)))
            j = lookup[up]
            amp = np.sqrt(up.count(e))
            # <up, a| a_e^* (x) C_e |o, b> = sqrt(n_e + 1) C_e[a, b]
            rows.append(j * N + ia)
            cols.append(i * N + ib)
            vals.append(amp * C[e].ravel())
    dim = len(occ) * N
    if rows:
        create = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
        )
        create.eliminate_zeros()
        Hint = (create + create.conj().T).tocsr()
    else:
        Hint = sp.csr_matrix((dim, dim), dtype=complex)
    return TruncatedFockSystem(model, omegas, C, n_max, occ, H0, Hint)


# -- propagation --------------------------------------------------------------

def _lanczos(H, v, m):
    """Krylov basis V (n, j), tridiagonal (alpha, beta), and the residual norm beta_j."""
    n = len(v)
    V = np.zeros((m + 1, n), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v
    for j in range(m):
        w = H @ V[j]
        alpha[j] = np.real(np.vdot(V[j], w))
        w -= alpha[j] * V[j]
        if j:
            w -= beta[j - 1] * V[j - 1]
        # full reorthogonalization, twice is enough
        for _ in range(2):
            w -= V[:j + 1].T @ (V[:j + 1].conj() @ w)
        b = np.linalg.norm(w)
        beta[j] = b
        if b < 1e-13:
            return V[:j + 1], alpha[:j + 1], beta[:j], 0.0
        V[j + 1] = w / b
    return V[:m], alpha, beta[:m - 1], beta[m - 1]


def propagate(H, state, t, tol=1e-10, krylov_dim=30, max_steps=1_000_000):
    """exp(-i t H) state by restarted Lanczos with adaptive substeps.

    Each substep tau is accepted when the a-posteriori error estimate
    beta_m |[exp(-i tau T) e_1]_m| is below tol * tau / t, so the accumulated
    error stays below tol. ``H`` is a sparse Hermitian matrix or a
    (system, g) pair.
    """
    if isinstance(H, tuple):
        H = H[0].hamiltonian(H[1])
    psi = np.asarray(state, dtype=complex).copy()
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-12:
        raise ValueError(f"state must be normalized (norm {nrm!r})")
    if t == 0:
        return psi
    sign = np.sign(t)
    remaining = abs(t)
    total = abs(t)
    tau = remaining
    steps = 0
    m = min(krylov_dim, len(psi))
    while remaining > 0:
        V, a, b, resid = _lanczos(H, psi, m)
        evals, evecs = eigh_tridiagonal(a, b) if len(a) > 1 else (a, np.ones((1, 1)))
        tau = min(tau, remaining)
        while True:
            coef = evecs @ (np.exp(-1j * sign * tau * evals) * evecs[0].conj())
            err = resid * abs(coef[-1])
            if err <= tol * tau / total or resid == 0.0:
                break
            tau *= 0.5
            if tau < total * 1e-12:
                raise PropagationError("Lanczos step size underflow", achieved=err)
        psi = coef @ V
        remaining -= tau
        steps += 1
        if steps > max_steps:
            raise PropagationError("too many Lanczos steps", achieved=err)
        if err < 0.1 * tol * tau / total:
            tau *= 1.5
    return psi


def evolved_states(sys, g, t_grid, states=None, tol=1e-10):
    """exp(-itH(g)) applied to each column state (default Psi_0 (x) u_a) at each t.

    Returns an array (n_t, n_states, dim). t_grid must be nondecreasing and
    nonnegative; propagation is incremental.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be nonnegative and nondecreasing")
    H = sys.hamiltonian(g)
    if states is None:
        states = [sys.vacuum_state(a) for a in range(sys.model.n_states)]
    out = np.empty((len(t_grid), len(states), sys.dim), dtype=complex)
    for i, psi in enumerate(states):
        cur, t_prev = np.asarray(psi, dtype=complex), 0.0
        for n, t in enumerate(t_grid):
            if t > t_prev:
                cur = propagate(H, cur / np.linalg.norm(cur), t - t_prev, tol=tol)
            out[n, i] = cur
            t_prev = t
    return out


def reduce_states(sys, psis, X):
    """[sigma_0 S X]_{ab} = <psi_a, (I (x) X) psi_b> for psis of shape (N, dim)."""
    N = sys.model.n_states
    P = psis.reshape(len(psis), -1, N)
    return np.einsum("aoc,cd,bod->ab", P.conj(), np.asarray(X, dtype=complex), P)


def reduced_observable(sys, X, t, g, tol=1e-10):
    """sigma_0 S(t, g) X, by propagating the N vacuum states Psi_0 (x) u_b."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    psis = evolved_states(sys, g, [t], tol=tol)[0]
    return reduce_states(sys, psis, X)


def populations(sys, psis):
    """P[m, j] = <(sigma_0 S pi_j) u_m, u_m> = sum over occupations |psi_m[occ, j]|^2."""
    N = sys.model.n_states
    P = psis.reshape(len(psis), -1, N)
    return np.sum(np.abs(P) ** 2, axis=1)


# -- annihilator identity -----------------------------------------------------

def annihilator_evolution_check(sys, e, t, g, state=None, tol=1e-10,
                                nodes_per_panel=12, phase_per_panel=2.0):
    """Residual of the discrete annihilator identity at time t.

    On the truncated space the identity reads

        a_e exp(-itH) phi = exp(-it w_e) exp(-itH) a_e phi
                            - i g int_0^t exp(i(s-t) w_e) exp(-i(t-s)H) Q_e exp(-isH) phi ds

    with Q_e = -([H, a_e] + w_e a_e)/g. Below the photon cap Q_e equals
    I (x) C_e, which is the continuum statement; at the cap it absorbs the
    truncation. The s-integral uses Gauss-Legendre panels, with one short
    propagation per node, so the residual measures propagation accuracy.

    Returns (residual, cap_defect) where cap_defect = max_s ||(Q_e - I (x) C_e) x(s)||.
    """
    if sys.n_max < 1:
        raise ModelError("annihilator check needs n_max >= 1")
    if state is None:
        state = np.zeros(sys.dim, dtype=complex)
        state[sys.model.n_states * (1 + e)] = 1.0  # |1_e> (x) u_0
    H = sys.hamiltonian(g)
    A = sys.annihilation(e)
    w_e = sys.omegas[e]
    if g != 0:
        Q = -(H @ A - A @ H + w_e * A) / g
    else:
        Q = sys.matter_operator(sys.C[e])
    CI = sys.matter_operator(sys.C[e])
    x = np.asarray(state, dtype=complex)

    spread = np.max(np.abs(sys.H0)) + g * sp.linalg.norm(sys.Hint, 1) + w_e
    n_panels = max(1, int(np.ceil(t * spread / phase_per_panel)))
    gx, gw = np.polynomial.legendre.leggauss(nodes_per_panel)
    edges = np.linspace(0.0, t, n_panels + 1)

    J = np.zeros(sys.dim, dtype=complex)
    defect = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes = lo + half * (gx + 1.0)
        panel = np.zeros(sys.dim, dtype=complex)
        prev, xs = lo, x
        for s, ws in zip(nodes, gw * half):
            xs = _prop_any(H, xs, s - prev, tol)
            prev = s
            y = Q @ xs
            defect = max(defect, float(np.linalg.norm(y - CI @ xs)))
            panel += ws * np.exp(1j * (s - hi) * w_e) * _prop_any(H, y, hi - s, tol)
        x_hi = _prop_any(H, xs, hi - prev, tol)
        J = np.exp(-1j * (hi - lo) * w_e) * _prop_any(H, J, hi - lo, tol) + panel
        x = x_hi
    lhs = A @ x
    rhs = np.exp(-1j * t * w_e) * _prop_any(H, A @ np.asarray(state, dtype=complex), t, tol) - 1j * g * J
    return float(np.linalg.norm(lhs - rhs)), defect


def _prop_any(H, v, t, tol):
    """Propagate an arbitrary (not normalized, possibly zero) vector."""
    n = np.linalg.norm(v)
    if n == 0 or t == 0:
        return v.copy()
    return n * propagate(H, v / n, t, tol=tol)


# -- snapshots ----------------------------------------------------------------

def write_state(path, psi):
    """One line per entry: index, Re, Im (shortest round-trip floats)."""
    with open(path, "w") as fh:
        for i, z in enumerate(psi):
            fh.write(f"{i} {float(z.real)!r} {float(z.imag)!r}\n")


def read_state(path):
    rows = np.loadtxt(path, ndmin=2)
    psi = np.zeros(int(rows[:, 0].max()) + 1, dtype=complex)
    psi[rows[:, 0].astype(int)] = rows[:, 1] + 1j * rows[:, 2]
    return psi
