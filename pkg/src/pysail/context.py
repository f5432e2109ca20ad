"""Per-molecule integral context shared by the solver, the guesses and the metrics"""

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .chemio import emit_xyz, load_basis, read_basis_file
from .constants import DEFAULT_MAX_ERI_BYTES, DTYPE
from .exceptions import CheckpointException, OccupationException
from .integrals import (
    inverse_sqrt_overlap,
    nuclear_repulsion,
    one_electron_integrals,
    two_electron_integrals,
)
from .models import Molecule, Shell
from .util import content_hash

CONTEXT_FORMAT_VERSION = 1

_ARRAYS = ("S", "T", "V", "D", "eri", "X", "S_half", "ao_atom", "ao_l")


@dataclass(eq=False)
class BasisContext:
    """Integral matrices of one molecule in one basis, as float64 tensors.

    Read-only once built; any number of SCF runs may share one context."""

    S: torch.Tensor
    T: torch.Tensor
    V: torch.Tensor
    D: torch.Tensor
    eri: torch.Tensor
    X: torch.Tensor
    S_half: torch.Tensor
    E_nuc: float
    n_electrons: int
    ao_atom: torch.Tensor
    ao_l: torch.Tensor
    numbers: tuple
    key: str = ""

    @property
    def H(self) -> torch.Tensor:
        return self.T + self.V

    @property
    def n_basis(self) -> int:
        return self.S.shape[0]

    @property
    def n_occ(self) -> int:
        return self.n_electrons // 2

    @property
    def n_virt(self) -> int:
        return self.n_basis - self.n_occ


def context_hash(molecule: Molecule, basis_text: str) -> str:
    """Cache key of (geometry, basis)"""
    return content_hash({"xyz": emit_xyz(molecule), "basis": basis_text})


def build_context(
    molecule: Molecule,
    basis_text: Optional[str] = None,
    shells: Optional[Sequence[Shell]] = None,
    max_eri_bytes: int = DEFAULT_MAX_ERI_BYTES,
    closed_shell: bool = True,
    logger: logging.Logger = None,
) -> BasisContext:
    """Evaluates every integral of molecule; the embedded STO-3G basis is the default.

    closed_shell=False admits odd electron counts (single atoms of the density table)."""
    logger = logger or logging.getLogger(__package__)
    molecule.validate(closed_shell)
    basis_text = basis_text if basis_text is not None else read_basis_file()
    if shells is None:
        shells = load_basis(molecule, basis_text)
    n_basis = sum(shell.size for shell in shells)
    if molecule.n_electrons // 2 > n_basis:
        raise OccupationException(
            f"{molecule.n_electrons // 2} occupied orbitals do not fit {n_basis} basis functions"
        )

    S, T, V, D = one_electron_integrals(shells, molecule)
    X, S_half = inverse_sqrt_overlap(S)
    eri = two_electron_integrals(shells, max_eri_bytes, logger)
    ao_atom = np.concatenate([[shell.center_atom] * shell.size for shell in shells])
    ao_l = np.concatenate([[shell.angular_momentum] * shell.size for shell in shells])
    logger.debug("Built context for %r with %i basis functions", molecule, n_basis)

    tensor = lambda array: torch.as_tensor(array, dtype=DTYPE)
    return BasisContext(
        S=tensor(S),
        T=tensor(T),
        V=tensor(V),
        D=tensor(D),
        eri=tensor(eri),
        X=tensor(X),
        S_half=tensor(S_half),
        E_nuc=nuclear_repulsion(molecule),
        n_electrons=molecule.n_electrons,
        ao_atom=torch.as_tensor(ao_atom, dtype=torch.long),
        ao_l=torch.as_tensor(ao_l, dtype=torch.long),
        numbers=molecule.numbers,
        key=context_hash(molecule, basis_text),
    )


def dump_context(ctx: BasisContext, target: Union[str, Path, io.IOBase]):
    """Writes ctx as npz with little-endian arrays and a format version entry"""
    arrays = {
        name: np.ascontiguousarray(getattr(ctx, name).numpy()).astype(
            "<f8" if getattr(ctx, name).is_floating_point() else "<i8"
        )
        for name in _ARRAYS
    }
    np.savez(
        target,
        version=np.array(CONTEXT_FORMAT_VERSION, dtype="<i8"),
        E_nuc=np.array(ctx.E_nuc, dtype="<f8"),
        n_electrons=np.array(ctx.n_electrons, dtype="<i8"),
        numbers=np.array(ctx.numbers, dtype="<i8"),
        key=np.array(ctx.key),
        **arrays,
    )


def load_context(source: Union[str, Path, io.IOBase], key: Optional[str] = None) -> BasisContext:
    """Reads a context written by dump_context; refuses other versions or a wrong key"""
    with np.load(source, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CONTEXT_FORMAT_VERSION:
            raise CheckpointException(f"unsupported context format version {version}")
        stored_key = str(data["key"])
        if key is not None and stored_key != key:
            raise CheckpointException("context cache key does not match")
        fields = {
            name: torch.as_tensor(
                data[name], dtype=DTYPE if data[name].dtype.kind == "f" else torch.long
            )
            for name in _ARRAYS
        }
        return BasisContext(
            E_nuc=float(data["E_nuc"]),
            n_electrons=int(data["n_electrons"]),
            numbers=tuple(int(z) for z in data["numbers"]),
            key=stored_key,
            **fields,
        )
