import csv

import numpy as np
import pytest

from qedmarkov._hermite import hermite_functions
from qedmarkov.coupling import (
    CSV_COLUMNS,
    CouplingDomainError,
    _electron_matrices,
    build_sphere_quadrature,
    coupling_block,
    coupling_blocks,
    dump_blocks_csv,
    eval_A,
    eval_B,
    free_evolved_block,
)
from qedmarkov.model import CutoffFn, build_harmonic_model, build_quartic_model

PHI = CutoffFn("gauss", 1.0)
GRID = np.linspace(-14, 14, 40001)


def grid_element(fa, fb, k):
    """int fa(x) exp(-ikx) (-i fb'(x)) dx on a dense grid (trapezoid, central differences)."""
    dfb = np.gradient(fb, GRID)
    return np.trapezoid(fa * np.exp(-1j * k * GRID) * (-1j) * dfb, GRID)


def grid_plane(fa, fb, k):
    return np.trapezoid(fa * np.exp(-1j * k * GRID) * fb, GRID)


def test_eval_A_examples():
    rho = 1.3
    k = np.array([0.0, 0.0, rho])
    assert np.allclose(eval_A(3, np.zeros(3), k, PHI), 0)
    assert np.allclose(eval_A(1, np.zeros(3), k, PHI), PHI(rho) * rho**-0.5 * np.eye(3)[0])
    rng = np.random.default_rng(0)
    for _ in range(20):
        k = rng.normal(size=3)
        for j in (1, 2, 3):
            assert abs(np.dot(k, eval_A(j, rng.normal(size=3), k, PHI))) < 1e-14


def test_eval_B_examples():
    rho = 0.8
    k = np.array([0.0, 0.0, rho])
    assert np.allclose(eval_B(3, np.zeros(3), k, PHI), 0)
    expect = 1j * PHI(rho) * rho**0.5 * (2 * np.pi) ** -1.5 * np.eye(3)[1]
    assert np.allclose(eval_B(1, np.zeros(3), k, PHI), expect)
    k = np.array([0.3, -1.1, 0.4])
    for j in (1, 2, 3):
        assert abs(np.dot(k, eval_B(j, np.array([0.1, 0.2, 0.3]), k, PHI))) < 1e-15


def test_k_zero_is_a_domain_error(spin):
    with pytest.raises(CouplingDomainError):
        eval_A(1, np.zeros(3), np.zeros(3), PHI)
    with pytest.raises(CouplingDomainError):
        eval_B(1, np.zeros(3), np.zeros(3), PHI)
    with pytest.raises(CouplingDomainError):
        coupling_block(spin, np.zeros(3))


def test_spin_block_matches_field_definition(spin_offset):
    m = spin_offset
    k = np.array([0.4, -0.9, 1.2])
    pauli = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]])
    # basis (down, up): swap rows/columns of the standard (up, down) matrices
    s = pauli[:, ::-1, ::-1]
    B = np.array([eval_B(j, np.asarray(m.x0), k, m.cutoff) for j in (1, 2, 3)])
    ref = np.einsum("ja,jmn->amn", B, s)
    assert np.allclose(coupling_block(m, k).E_mat, ref, atol=1e-15)


def test_spin_block_on_axis(spin):
    E = coupling_block(spin, np.array([0.0, 0.0, 1.4])).E_mat
    assert np.allclose(E[:, 0, 0], 0) and np.allclose(E[:, 1, 1], 0)
    assert np.allclose(E[2], 0)


def test_harmonic_1d_block_against_grid_oracle(harmonic1):
    m = harmonic1
    h = hermite_functions(3, GRID)
    for k in ([0.7, 0.3, -0.2], [-1.5, 0.9, 2.0]):
        k = np.array(k)
        rho = np.linalg.norm(k)
        E = coupling_block(m, k).E_mat
        proj = np.eye(3)[:, 0] - k * k[0] / rho**2
        for a in range(4):
            for b in range(4):
                ref = PHI(rho) * rho**-0.5 * proj * grid_element(h[a], h[b], k[0])
                assert np.allclose(E[:, a, b], ref, atol=2e-7)


def test_harmonic_3d_block_against_grid_oracle(harmonic3):
    m = harmonic3
    h = hermite_functions(2, GRID)
    k = np.array([0.6, -0.8, 1.1])
    rho = np.linalg.norm(k)
    E = coupling_block(m, k).E_mat
    P = np.eye(3) - np.outer(k, k) / rho**2
    for a, ia in enumerate(m.indices):
        for b, ib in enumerate(m.indices):
            D = []
            for j in range(3):
                f = 1.0
                for ax in range(3):
                    if ax == j:
                        f *= grid_element(h[ia[ax]], h[ib[ax]], k[ax])
                    else:
                        f *= grid_plane(h[ia[ax]], h[ib[ax]], k[ax])
                D.append(f)
            ref = PHI(rho) * rho**-0.5 * P @ np.array(D)
            assert np.allclose(E[:, a, b], ref, atol=2e-7)


def test_quartic_block_against_grid_oracle():
    m = build_quartic_model(1, 3, PHI)
    size = m.coeffs.shape[0]
    u = m.coeffs.T @ hermite_functions(size - 1, GRID)
    k = np.array([1.2, 0.4, -0.5])
    rho = np.linalg.norm(k)
    E = coupling_block(m, k).E_mat
    proj = np.eye(3)[:, 0] - k * k[0] / rho**2
    for a in range(3):
        for b in range(3):
            ref = PHI(rho) * rho**-0.5 * proj * grid_element(u[a], u[b], k[0])
            assert np.allclose(E[:, a, b], ref, atol=2e-7)


def test_dipole_limit_ladder_oracle():
    m = build_harmonic_model(1, 5, PHI)
    mats = _electron_matrices(m, np.array([[1e-9, 0.0, 0.0]]), 1e-12)[0, 0]
    for n in range(5):
        assert np.isclose(abs(mats[n, n + 1]) ** 2, (n + 1) / 2, rtol=1e-12)


@pytest.mark.parametrize("name", ["spin_offset", "harmonic3", "harmonic1"])
def test_transversality_and_hermitian_relation(name, request):
    m = request.getfixturevalue(name)
    rng = np.random.default_rng(7)
    ks = rng.normal(size=(100, 3)) * 2
    E = coupling_blocks(m, ks)
    kE = np.einsum("ka,kamn->kmn", ks, E)
    scale = np.max(np.abs(E))
    assert np.max(np.abs(kE)) <= 1e-12 * scale * np.max(np.linalg.norm(ks, axis=1))
    blk = coupling_block(m, ks[0])
    assert np.allclose(blk.adjoint()[1], blk.E_mat[1].conj().T)


def test_rapid_decay_along_rays(harmonic3, spin):
    rho = np.linspace(0.1, 20, 200)
    for m in (harmonic3, spin):
        for direction in ([1, 0, 0], [0.3, 0.5, 0.81]):
            d = np.array(direction) / np.linalg.norm(direction)
            E = coupling_blocks(m, rho[:, None] * d[None])
            nrm = np.linalg.norm(E.reshape(len(rho), -1), axis=1)
            weighted = nrm * (1 + rho) ** 4
            assert np.all(np.isfinite(weighted))
            # bounded: the weighted norm dies off instead of growing along the ray
            assert np.max(weighted[rho > 10]) < 1e-6 * np.max(weighted)


def test_free_evolution(harmonic3):
    blk = coupling_block(harmonic3, np.array([0.5, 0.2, -0.4]))
    assert np.array_equal(free_evolved_block(blk, harmonic3, 0.0).E_mat, blk.E_mat)
    ev = free_evolved_block(blk, harmonic3, 3.7)
    idx = np.arange(4)
    assert np.allclose(ev.E_mat[:, idx, idx], blk.E_mat[:, idx, idx])
    two = free_evolved_block(free_evolved_block(blk, harmonic3, 1.1), harmonic3, 2.6)
    assert np.allclose(two.E_mat, ev.E_mat, atol=1e-15)
    assert np.isclose(np.linalg.norm(ev.E_mat), np.linalg.norm(blk.E_mat), rtol=1e-14)


@pytest.mark.parametrize("axis", [1, 2, 3])
def test_sphere_quadrature(axis):
    q = build_sphere_quadrature(1.0, 6, axis)
    assert abs(q.weights.sum() - 4 * np.pi) < 1e-12
    d = q.directions
    assert abs(q.integrate(d[:, 2])) < 1e-12
    assert abs(q.integrate(d[:, 2] ** 2) - 4 * np.pi / 3) < 1e-12
    assert abs(q.integrate(d[:, 0] ** 2 * d[:, 1] ** 2) - 4 * np.pi / 15) < 1e-12
    q2 = build_sphere_quadrature(2.5, 6, axis)
    assert abs(q2.weights.sum() - 4 * np.pi * 2.5**2) < 1e-11
    with pytest.raises(ValueError):
        build_sphere_quadrature(1.0, 1)
    with pytest.raises(ValueError):
        build_sphere_quadrature(0.0, 6)


def test_csv_dump(tmp_path, spin):
    blocks = [coupling_block(spin, np.array([0.1, 0.2, 0.3]))]
    path = tmp_path / "blocks.csv"
    dump_blocks_csv(path, blocks)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + 3 * 2 * 2
    r = rows[1 + 3]  # alpha=1, a=1, b=0... row order alpha, a, b
    z = blocks[0].E_mat[0, 1, 1]
    assert float(r[6]) == z.real and float(r[7]) == z.imag
