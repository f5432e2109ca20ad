"""Initial densities: classical guesses, the learned Δ-guesses and purification"""

import logging
from typing import Dict, Iterable, NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg
import torch

from .chemio import read_basis_file
from .constants import DTYPE, GWH_CONSTANT, SYMBOLS
from .context import BasisContext, build_context
from .diis import DiisState, diis_residual
from .exceptions import AtomicScfException
from .linalg import recorder, symeig
from .model import GuessModel
from .models import Molecule
from .scf import density_from_orbitals, energy, fock_build, solve_roothaan
from .util import symmetrize

CLASSICAL_GUESSES = ("core", "gwh", "sad")

DEGENERACY_GAP = 1e-10
ATOMIC_MAX_ITERATIONS = 200
ATOMIC_ENERGY_THRESHOLD = 1e-10
ATOMIC_RESIDUAL_THRESHOLD = 1e-7


class ModelGuess(NamedTuple):
    """P0 of a learned guess, the Fock builds spent on it and whether the
    model output was unusable and SAD was used instead"""

    density: torch.Tensor
    fock_builds: int
    fallback: bool = False


def _aufbau_density(F: np.ndarray, S: np.ndarray, l: np.ndarray, n_electrons: int) -> np.ndarray:
    """Spherically averaged density: s and p blocks are solved separately, p
    components share their level and its occupation equally"""
    s_index = np.flatnonzero(l == 0)
    p_index = np.flatnonzero(l == 1).reshape(-1, 3)
    levels = []
    if s_index.size:
        block = np.ix_(s_index, s_index)
        values, vectors = scipy.linalg.eigh(F[block], S[block])
        levels += [(values[k], 2.0, 0, vectors[:, k]) for k in range(len(values))]
    if p_index.size:
        blocks = [np.ix_(p_index[:, d], p_index[:, d]) for d in range(3)]
        F_p = sum(F[block] for block in blocks) / 3
        S_p = sum(S[block] for block in blocks) / 3
        values, vectors = scipy.linalg.eigh(F_p, S_p)
        levels += [(values[k], 6.0, 1, vectors[:, k]) for k in range(len(values))]
    levels.sort(key=lambda level: level[0])

    P = np.zeros_like(F)
    remaining = float(n_electrons)
    for _, capacity, l_value, vector in levels:
        occupation = min(capacity, remaining)
        if occupation <= 0:
            break
        remaining -= occupation
        if l_value == 0:
            P[np.ix_(s_index, s_index)] += occupation * np.outer(vector, vector)
        else:
            for d in range(3):
                P[np.ix_(p_index[:, d], p_index[:, d])] += occupation / 3 * np.outer(vector, vector)
    return P


def atomic_density(
    z: int, alpha: float = 1.0, basis_text: Optional[str] = None, logger: logging.Logger = None
) -> torch.Tensor:
    """Converged spin- and spherically averaged density of a free atom"""
    logger = logger or logging.getLogger(__package__)
    atom = Molecule((z,), np.zeros((1, 3)), name=SYMBOLS.get(z, str(z)))
    ctx = build_context(atom, basis_text, closed_shell=False, logger=logger)
    S = ctx.S.numpy()
    l = ctx.ao_l.numpy()
    diis = DiisState(8, logger)
    P = torch.zeros_like(ctx.S)
    previous = None
    for iteration in range(ATOMIC_MAX_ITERATIONS):
        F = fock_build(P, ctx, alpha)
        E = float(energy(P, F, ctx))
        residual = diis_residual(F, P, ctx)
        if (
            previous is not None
            and abs(E - previous) < ATOMIC_ENERGY_THRESHOLD
            and float(torch.linalg.norm(residual)) < ATOMIC_RESIDUAL_THRESHOLD
        ):
            logger.debug("Atomic SCF of %s converged in %i iterations", atom.name, iteration)
            return P
        previous = E
        diis.push(F, residual)
        P = torch.as_tensor(
            _aufbau_density(diis.extrapolate().numpy(), S, l, atom.n_electrons), dtype=DTYPE
        )
    raise AtomicScfException(f"atomic SCF of {atom.name} did not converge")


class AtomicDensityTable:
    """Atomic densities per element, computed on first use and kept.

    Building an entry costs Fock builds of its own; they are shared by every
    molecule and never charged to one."""

    def __init__(
        self, alpha: float = 1.0, basis_text: Optional[str] = None, logger: logging.Logger = None
    ):
        self.alpha = alpha
        self.basis_text = basis_text if basis_text is not None else read_basis_file()
        self._entries: Dict[int, torch.Tensor] = {}
        self._logger = logger or logging.getLogger(__package__)

    def __getitem__(self, z: int) -> torch.Tensor:
        if z not in self._entries:
            self._entries[z] = atomic_density(z, self.alpha, self.basis_text, self._logger)
        return self._entries[z]

    def __contains__(self, z: int) -> bool:
        return z in self._entries

    def build(self, numbers: Iterable[int]) -> "AtomicDensityTable":
        for z in sorted(set(numbers)):
            self[z]
        return self


def sad_density(ctx: BasisContext, table: AtomicDensityTable) -> torch.Tensor:
    """Block-diagonal superposition of atomic densities, before purification"""
    return torch.block_diag(*(table[z] for z in ctx.numbers))


def gwh_matrix(ctx: BasisContext, k: float = GWH_CONSTANT) -> torch.Tensor:
    """Wolfsberg-Helmholz matrix ½ k S_μν (H_μμ + H_νν) off the diagonal, H_μμ on it"""
    diagonal = torch.diagonal(ctx.H)
    matrix = 0.5 * k * ctx.S * (diagonal[:, None] + diagonal[None, :])
    return matrix - torch.diag(torch.diagonal(matrix)) + torch.diag(diagonal)


def purify(
    P_raw: torch.Tensor, ctx: BasisContext, n_occ: Optional[int] = None
) -> Tuple[torch.Tensor, bool]:
    """Nearest valid closed-shell density: the n_occ natural orbitals of P_raw
    with the largest occupations, each doubly occupied.

    Returns (density, degenerate). A degenerate occupation boundary is broken
    by taking the boundary subspace's components along the orthonormal basis
    functions in index order."""
    n_occ = ctx.n_occ if n_occ is None else n_occ
    n = ctx.n_basis
    if n_occ == 0:
        return torch.zeros_like(ctx.S), False
    values, vectors = symeig(symmetrize(ctx.S_half @ P_raw @ ctx.S_half))
    boundary = n - n_occ
    gap = (values[boundary] - values[boundary - 1]).detach().item() if boundary > 0 else None
    degenerate = gap is not None and gap < DEGENERACY_GAP
    if not degenerate:
        occupied = vectors[:, boundary:]
    else:
        occupied = _tie_break(values.detach(), vectors.detach(), boundary, n_occ)
        logging.getLogger(__package__).warning(
            "Degenerate occupation boundary in purification, breaking ties by basis index"
        )
        active = recorder.get()
        if active is not None:
            active.ties += 1
    C = ctx.X @ occupied
    return 2.0 * C @ C.T, degenerate


def _tie_break(values, vectors, boundary: int, n_occ: int) -> torch.Tensor:
    n = len(values)
    low, high = boundary - 1, boundary
    while low > 0 and float(values[low] - values[low - 1]) < DEGENERACY_GAP:
        low -= 1
    while high < n - 1 and float(values[high + 1] - values[high]) < DEGENERACY_GAP:
        high += 1
    cluster = vectors[:, low : high + 1]
    projector = cluster @ cluster.T
    needed = n_occ - (n - 1 - high)
    chosen = []
    for i in range(n):
        candidate = projector[:, i].clone()
        for vector in chosen:
            candidate = candidate - (vector @ candidate) * vector
        norm = torch.linalg.norm(candidate)
        if float(norm) > 1e-8:
            chosen.append(candidate / norm)
        if len(chosen) == needed:
            break
    return torch.cat([torch.stack(chosen, dim=1), vectors[:, high + 1 :]], dim=1)


def classical_guess(
    kind: str, ctx: BasisContext, table: Optional[AtomicDensityTable] = None
) -> torch.Tensor:
    """core and gwh occupy the eigenvectors of their model Hamiltonian; sad
    purifies the superposition of atomic densities. None of them builds a Fock matrix."""
    if kind == "core":
        C, _ = solve_roothaan(ctx.H, ctx)
    elif kind == "gwh":
        C, _ = solve_roothaan(gwh_matrix(ctx), ctx)
    elif kind == "sad":
        if table is None:
            raise ValueError("the sad guess needs an atomic density table")
        P, _ = purify(sad_density(ctx, table), ctx)
        return P
    else:
        raise ValueError(f"unknown guess kind {kind!r}")
    return density_from_orbitals(C, ctx.n_occ)


def predict_raw(
    model: GuessModel,
    molecule: Molecule,
    ctx: BasisContext,
    table: AtomicDensityTable,
    alpha: float = 1.0,
) -> torch.Tensor:
    """The model's matrix before it becomes a density: P̂ for delta_density,
    F^(-1) for delta_fock. The delta_fock base costs one Fock build."""
    gains, shifts = model.block_scalars(molecule, ctx.ao_atom)
    base = sad_density(ctx, table)
    if model.ansatz == "delta_fock":
        base = fock_build(base, ctx, alpha)
    return gains * base + shifts * ctx.S


def model_guess(
    model: GuessModel,
    molecule: Molecule,
    ctx: BasisContext,
    table: AtomicDensityTable,
    alpha: float = 1.0,
    logger: logging.Logger = None,
) -> ModelGuess:
    logger = logger or logging.getLogger(__package__)
    spent = 1 if model.ansatz == "delta_fock" else 0
    raw = predict_raw(model, molecule, ctx, table, alpha)
    if not bool(torch.isfinite(raw).all()):
        logger.warning("Non-finite model output for %r, falling back to SAD", molecule)
        return ModelGuess(classical_guess("sad", ctx, table), spent, fallback=True)
    if model.ansatz == "delta_density":
        P, _ = purify(raw, ctx)
        return ModelGuess(P, spent)
    C, _ = solve_roothaan(symmetrize(raw), ctx)
    return ModelGuess(density_from_orbitals(C, ctx.n_occ), spent)
