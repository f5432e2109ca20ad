import numpy as np
import pytest
from scipy.special import erf
from pysail.chemio import load_basis, rotate, rotation_matrix, translate
from pysail.constants import BOHR_PER_ANGSTROM
from pysail.exceptions import LinearDependenceException, MemoryCapException
from pysail.integrals import (
    inverse_sqrt_overlap,
    nuclear_repulsion,
    one_electron_integrals,
    two_electron_integrals,
)
from pysail.models import Molecule
from .conftest import molecule
from .molecules import molecules


def s_function(shell, points):
    r2 = np.sum((points - np.asarray(shell.center)) ** 2, axis=-1)
    return sum(c * np.exp(-a * r2) for a, c in zip(shell.exponents, shell.coefficients))


def s_repulsion(shells, i, j, k, l):
    """Closed form of (ij|kl) for s primitives: Gaussian charge clouds interact
    like erf(sqrt(α) R) / R"""
    total = 0.0
    for a, ca in zip(shells[i].exponents, shells[i].coefficients):
        for b, cb in zip(shells[j].exponents, shells[j].coefficients):
            for c, cc in zip(shells[k].exponents, shells[k].coefficients):
                for d, cd in zip(shells[l].exponents, shells[l].coefficients):
                    A, B = np.asarray(shells[i].center), np.asarray(shells[j].center)
                    C, D = np.asarray(shells[k].center), np.asarray(shells[l].center)
                    p, q = a + b, c + d
                    P, Q = (a * A + b * B) / p, (c * C + d * D) / q
                    prefactor = np.exp(-a * b / p * np.sum((A - B) ** 2)) * np.exp(
                        -c * d / q * np.sum((C - D) ** 2)
                    )
                    charge = (np.pi / p) ** 1.5 * (np.pi / q) ** 1.5
                    alpha = p * q / (p + q)
                    R = np.linalg.norm(P - Q)
                    kernel = erf(np.sqrt(alpha) * R) / R if R > 1e-12 else 2 * np.sqrt(alpha / np.pi)
                    total += ca * cb * cc * cd * prefactor * charge * kernel
    return total


def test_hydrogen_atom_normalized(basis_text):
    atom = Molecule((1,), np.zeros((1, 3)))
    S, _, _, _ = one_electron_integrals(load_basis(atom, basis_text), atom)
    np.testing.assert_allclose(S, [[1.0]], atol=1e-10)


def test_h2_overlap_matches_grid_quadrature(h2, basis_text):
    shells = load_basis(h2, basis_text)
    S, _, _, _ = one_electron_integrals(shells, h2)

    h = 0.2
    axis = np.arange(-6.0, 6.0 + h / 2, h)
    z_axis = np.arange(-6.0, 7.4 + h / 2, h)
    points = np.stack(np.meshgrid(axis, axis, z_axis, indexing="ij"), axis=-1)
    quadrature = np.sum(s_function(shells[0], points) * s_function(shells[1], points)) * h**3

    assert S[0, 1] == pytest.approx(quadrature, abs=1e-6)


def test_h2_repulsion_closed_form(h2, basis_text):
    shells = load_basis(h2, basis_text)
    eri = two_electron_integrals(shells)
    for index in np.ndindex(2, 2, 2, 2):
        assert eri[index] == pytest.approx(s_repulsion(shells, *index), abs=1e-10)


def test_eightfold_symmetry_exact(h2o, basis_text):
    eri = two_electron_integrals(load_basis(h2o, basis_text))
    np.testing.assert_array_equal(eri, eri.transpose(1, 0, 2, 3))
    np.testing.assert_array_equal(eri, eri.transpose(0, 1, 3, 2))
    np.testing.assert_array_equal(eri, eri.transpose(2, 3, 0, 1))
    assert eri[0, 1, 2, 3] == eri[1, 0, 3, 2]


def test_relabeling_permutes_eri(h2, basis_text):
    swapped = Molecule(h2.numbers, h2.positions[::-1])
    eri = two_electron_integrals(load_basis(h2, basis_text))
    eri_swapped = two_electron_integrals(load_basis(swapped, basis_text))
    np.testing.assert_allclose(eri_swapped, eri[::-1, ::-1, ::-1, ::-1], atol=1e-12)


@pytest.mark.parametrize("name", ["h2", "h2o", "nh3"])
def test_translation_invariance(name: str, basis_text):
    base = molecule(name)
    moved = translate(base, [1.0, 2.0, 3.0])
    S, T, V, _ = one_electron_integrals(load_basis(base, basis_text), base)
    S2, T2, V2, _ = one_electron_integrals(load_basis(moved, basis_text), moved)

    np.testing.assert_allclose(S2, S, atol=1e-12)
    np.testing.assert_allclose(T2, T, atol=1e-12)
    np.testing.assert_allclose(V2, V, atol=1e-10)


def test_rotation_covariance(h2o, basis_text):
    R = rotation_matrix([0.3, -1.0, 0.5], 1.1)
    rotated = rotate(h2o, R)
    S, T, V, _ = one_electron_integrals(load_basis(h2o, basis_text), h2o)
    S2, T2, V2, _ = one_electron_integrals(load_basis(rotated, basis_text), rotated)

    U = np.eye(7)
    U[2:5, 2:5] = R
    for before, after in ((S, S2), (T, T2), (V, V2)):
        np.testing.assert_allclose(after, U @ before @ U.T, atol=1e-10)


@pytest.mark.parametrize("name", molecules.keys())
def test_matrices_symmetric_and_finite(name: str, basis_text):
    base = molecule(name)
    S, T, V, D = one_electron_integrals(load_basis(base, basis_text), base)
    for matrix in (S, T, V, *D):
        assert np.all(np.isfinite(matrix))
        np.testing.assert_allclose(matrix, matrix.T, atol=1e-14)
    np.testing.assert_allclose(np.diag(S), 1.0, atol=1e-10)
    assert np.linalg.eigvalsh(S).min() > 0


def test_orthogonalizer_identity():
    X, S_half = inverse_sqrt_overlap(np.eye(3))
    np.testing.assert_allclose(X, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(S_half, np.eye(3), atol=1e-15)


def test_orthogonalizer_scalar():
    X, _ = inverse_sqrt_overlap(np.array([[4.0]]))
    np.testing.assert_allclose(X, [[0.5]])


def test_orthogonalizer_random_spd():
    rng = np.random.Generator(np.random.Philox(5))
    A = rng.standard_normal((5, 5))
    S = A @ A.T + 5 * np.eye(5)
    X, S_half = inverse_sqrt_overlap(S)

    np.testing.assert_allclose(X, X.T, atol=1e-14)
    np.testing.assert_allclose(X.T @ S @ X, np.eye(5), atol=1e-10)
    np.testing.assert_allclose(S_half @ S_half, S, atol=1e-10)


def test_linear_dependence():
    with pytest.raises(LinearDependenceException):
        inverse_sqrt_overlap(np.array([[1.0, 1.0], [1.0, 1.0 + 1e-10]]))


def test_memory_cap(h2o, basis_text):
    with pytest.raises(MemoryCapException) as info:
        two_electron_integrals(load_basis(h2o, basis_text), max_bytes=1024)
    assert info.value.required_bytes == 7**4 * 8


def test_nuclear_repulsion(h2):
    bond = 0.74084815 * BOHR_PER_ANGSTROM
    assert nuclear_repulsion(h2) == pytest.approx(1 / bond, abs=1e-12)
    assert bond == pytest.approx(1.4, abs=1e-8)


def test_reference_program_one_electron(h2o, basis_text):
    gto = pytest.importorskip("pyscf.gto")
    mol = gto.M(
        atom=[(symbol, tuple(position)) for symbol, position in zip(h2o.symbols, h2o.positions)],
        basis="sto-3g",
        unit="Bohr",
    )
    S, T, V, D = one_electron_integrals(load_basis(h2o, basis_text), h2o)

    np.testing.assert_allclose(S, mol.intor("int1e_ovlp"), atol=1e-6)
    np.testing.assert_allclose(T, mol.intor("int1e_kin"), atol=1e-6)
    np.testing.assert_allclose(V, mol.intor("int1e_nuc"), atol=1e-6)
    np.testing.assert_allclose(D, mol.intor("int1e_r"), atol=1e-6)
    np.testing.assert_allclose(
        two_electron_integrals(load_basis(h2o, basis_text)), mol.intor("int2e"), atol=1e-6
    )
