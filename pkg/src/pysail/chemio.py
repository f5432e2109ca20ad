"""Molecular geometries and basis sets: XYZ parsing, Gaussian-94 basis text and
seeded geometry perturbation"""

from importlib import resources
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .constants import BOHR_PER_ANGSTROM, ELEMENTS, SYMBOLS
from .exceptions import BasisSetException, InvalidMoleculeException, PerturbationException
from .models import Molecule, Shell
from .util import format_float, iter_content_lines

MAX_PERTURBATION_RETRIES = 100
SEED_MASK = 2**64 - 1

_ANGULAR_MOMENTA = {"S": (0,), "P": (1,), "SP": (0, 1)}


def parse_xyz(text: str, name: str = "") -> Molecule:
    """Parses XYZ text (Ångström) into a closed-shell Molecule in Bohr"""
    lines = text.splitlines()
    if not lines:
        raise InvalidMoleculeException("empty XYZ text", line=1)
    try:
        n_atoms = int(lines[0].strip())
    except ValueError as ex:
        raise InvalidMoleculeException(
            f"first line must be the atom count, got {lines[0]!r}", line=1
        ) from ex
    if n_atoms < 1:
        raise InvalidMoleculeException("atom count must be positive", line=1)
    comment = lines[1].strip() if len(lines) > 1 else ""

    numbers = []
    coords = []
    for offset in range(n_atoms):
        line_number = offset + 3
        if line_number > len(lines):
            raise InvalidMoleculeException(
                f"expected {n_atoms} atoms, found {offset}", line=line_number
            )
        parts = lines[line_number - 1].split()
        if len(parts) < 4:
            raise InvalidMoleculeException(
                f"bad atom line {lines[line_number - 1]!r}", line=line_number
            )
        symbol = parts[0].capitalize()
        if symbol not in ELEMENTS:
            raise InvalidMoleculeException(f"unknown element {parts[0]!r}", line=line_number)
        try:
            coords.append([float(value) for value in parts[1:4]])
        except ValueError as ex:
            raise InvalidMoleculeException(
                f"non-numeric coordinate in {lines[line_number - 1]!r}", line=line_number
            ) from ex
        numbers.append(ELEMENTS[symbol])

    molecule = Molecule(
        numbers=tuple(numbers),
        positions=np.array(coords) * BOHR_PER_ANGSTROM,
        name=name or comment,
    )
    if molecule.n_electrons % 2:
        raise InvalidMoleculeException(
            f"odd electron count {molecule.n_electrons}, closed shell required",
            line=n_atoms + 2,
        )
    molecule.validate()
    return molecule


def emit_xyz(molecule: Molecule) -> str:
    """Canonical XYZ text in Ångström with 12 significant digits"""
    lines = [str(molecule.n_atoms), molecule.name]
    for symbol, position in zip(molecule.symbols, molecule.positions / BOHR_PER_ANGSTROM):
        lines.append(" ".join([symbol, *(format_float(float(x)) for x in position)]))
    return "\n".join(lines) + "\n"


def read_basis_file(name: str = "sto-3g") -> str:
    """Returns the embedded Gaussian-94 text of a basis set"""
    path = resources.files(__package__).joinpath("data", f"{name.lower()}.gbs")
    if not path.is_file():
        raise BasisSetException(f"no embedded basis named {name!r}")
    return path.read_text()


def parse_gaussian94(basis_text: str) -> Dict[int, List[Tuple[int, List[float], List[float]]]]:
    """Parses Gaussian-94 basis text into {Z: [(l, exponents, raw coefficients)]}"""
    elements: Dict[int, list] = {}
    lines = list(iter_content_lines(basis_text.replace("D+", "E+").replace("D-", "E-")))
    index = 0
    current = None
    while index < len(lines):
        number, line = lines[index]
        index += 1
        if line.startswith("****"):
            current = None
            continue
        parts = line.split()
        if current is None:
            symbol = parts[0].capitalize()
            if symbol not in ELEMENTS:
                raise BasisSetException(f"line {number}: unknown element {parts[0]!r}")
            current = elements.setdefault(ELEMENTS[symbol], [])
            continue
        kind = parts[0].upper()
        if kind not in _ANGULAR_MOMENTA:
            raise BasisSetException(f"line {number}: unsupported shell type {parts[0]!r}")
        try:
            n_primitives = int(parts[1])
        except (IndexError, ValueError) as ex:
            raise BasisSetException(f"line {number}: bad shell header {line!r}") from ex
        momenta = _ANGULAR_MOMENTA[kind]
        exponents = []
        columns = [[] for _ in momenta]
        for _ in range(n_primitives):
            if index >= len(lines):
                raise BasisSetException(f"line {number}: shell ends early")
            row_number, row = lines[index]
            index += 1
            values = row.split()
            if len(values) != 1 + len(momenta):
                raise BasisSetException(
                    f"line {row_number}: expected {1 + len(momenta)} columns, got {len(values)}"
                )
            exponent = float(values[0])
            if exponent <= 0:
                raise BasisSetException(f"line {row_number}: non-positive exponent {exponent}")
            exponents.append(exponent)
            for column, value in zip(columns, values[1:]):
                column.append(float(value))
        for l, coefficients in zip(momenta, columns):
            current.append((l, exponents, coefficients))
    return elements


def _double_factorial(n: int) -> int:
    return 1 if n <= 0 else n * _double_factorial(n - 2)


def normalize_contraction(
    l: int, exponents: Sequence[float], coefficients: Sequence[float]
) -> Tuple[float, ...]:
    """Folds primitive normalization into the coefficients and renormalizes the
    contraction to unit self-overlap"""
    a = np.asarray(exponents, dtype=np.float64)
    c = np.asarray(coefficients, dtype=np.float64)
    primitive = (2 * a / np.pi) ** 0.75 * (4 * a) ** (l / 2) / np.sqrt(
        _double_factorial(2 * l - 1)
    )
    c = c * primitive
    pair = a[:, None] + a[None, :]
    overlap = (np.pi / pair) ** 1.5 * _double_factorial(2 * l - 1) / (2 * pair) ** l
    norm = float(c @ overlap @ c)
    return tuple(c / np.sqrt(norm))


def load_basis(molecule: Molecule, basis_text: str) -> List[Shell]:
    """Builds the contracted shells of every atom, in molecule order"""
    table = parse_gaussian94(basis_text)
    shells = []
    for atom, (z, position) in enumerate(zip(molecule.numbers, molecule.positions)):
        if z not in table:
            raise BasisSetException(f"basis has no entry for {SYMBOLS.get(z, z)}")
        for l, exponents, coefficients in table[z]:
            if len(exponents) != len(coefficients):
                raise BasisSetException(f"ragged coefficient list for {SYMBOLS[z]}")
            if any(b >= a for a, b in zip(exponents, exponents[1:])):
                raise BasisSetException(
                    f"exponents of {SYMBOLS[z]} must be strictly decreasing"
                )
            shells.append(
                Shell(
                    center_atom=atom,
                    angular_momentum=l,
                    exponents=tuple(exponents),
                    coefficients=normalize_contraction(l, exponents, coefficients),
                    center=tuple(float(x) for x in position),
                )
            )
    return shells


def basis_size(shells: Sequence[Shell]) -> int:
    return sum(shell.size for shell in shells)


def heavy_atom_count(molecule: Molecule) -> int:
    return sum(1 for z in molecule.numbers if z > 1)


def translate(molecule: Molecule, vector: Sequence[float]) -> Molecule:
    return Molecule(
        molecule.numbers, molecule.positions + np.asarray(vector), molecule.name, molecule.charge
    )


def rotate(molecule: Molecule, rotation: np.ndarray) -> Molecule:
    """Applies a 3x3 rotation matrix to every position (r -> R r)"""
    return Molecule(
        molecule.numbers, molecule.positions @ np.asarray(rotation).T, molecule.name, molecule.charge
    )


def rotation_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    """Rodrigues rotation about axis by angle (radians)"""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def perturb_geometry(molecule: Molecule, amplitude: float, seed: int) -> Molecule:
    """Displaces every coordinate by an independent uniform draw in [-amplitude, amplitude].

    Draws come from a Philox-4x64 counter-based generator keyed by (seed, attempt),
    so the result is reproducible across platforms. Seeds are taken modulo 2**64,
    so negative seeds are valid. Attempts whose geometry violates the minimum
    distance are retried with the next attempt key."""
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    for attempt in range(MAX_PERTURBATION_RETRIES):
        key = np.array([seed & SEED_MASK, attempt], dtype=np.uint64)
        bit_generator = np.random.Philox(key=key)
        displacement = np.random.Generator(bit_generator).uniform(
            -amplitude, amplitude, size=molecule.positions.shape
        )
        candidate = Molecule(
            molecule.numbers, molecule.positions + displacement, molecule.name, molecule.charge
        )
        if candidate.geometry_ok():
            return candidate
    raise PerturbationException(
        f"no valid geometry for {molecule.name!r} after {MAX_PERTURBATION_RETRIES} attempts"
    )
