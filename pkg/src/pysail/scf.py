"""Restricted closed-shell SCF with scaled exact exchange.

Every Fock build goes through fock_build and is counted by the run's
FockBuildCounter; the count is the cost unit of the ERIC metric."""

import logging
from typing import Optional, Tuple

import torch

from .constants import DIVERGENCE_ENERGY
from .context import BasisContext
from .diis import DiisState, diis_residual
from .exceptions import OccupationException
from .linalg import symeig
from .models import IterateRecord, ScfOptions, ScfTrajectory
from .util import require_finite, require_square, symmetrize

TRACE_TOLERANCE = 1e-6


class FockBuildCounter:
    """Counts Fock builds of one SCF run"""

    def __init__(self):
        self.count = 0

    def increment(self):
        self.count += 1

    def __repr__(self):
        return f"FockBuildCounter({self.count})"


def coulomb(P: torch.Tensor, ctx: BasisContext) -> torch.Tensor:
    return torch.einsum("ijkl,kl->ij", ctx.eri, P)


def exchange(P: torch.Tensor, ctx: BasisContext) -> torch.Tensor:
    return torch.einsum("ikjl,kl->ij", ctx.eri, P)


def fock_build(
    P: torch.Tensor,
    ctx: BasisContext,
    alpha: float = 1.0,
    counter: Optional[FockBuildCounter] = None,
) -> torch.Tensor:
    """F = H + J(P) - (α/2) K(P)"""
    require_square(P, ctx.n_basis, "density")
    require_finite(P, "density")
    if counter is not None:
        counter.increment()
    return ctx.H + coulomb(P, ctx) - 0.5 * alpha * exchange(P, ctx)


def solve_roothaan(F: torch.Tensor, ctx: BasisContext) -> Tuple[torch.Tensor, torch.Tensor]:
    """Solves F C = S C diag(ε) through the orthonormal basis; ε ascending"""
    require_square(F, ctx.n_basis, "Fock matrix")
    require_finite(F, "Fock matrix")
    eigenvalues, vectors = symeig(symmetrize(ctx.X.T @ F @ ctx.X))
    return ctx.X @ vectors, eigenvalues


def density_from_orbitals(C: torch.Tensor, n_occ: int) -> torch.Tensor:
    if not 0 <= n_occ <= C.shape[1]:
        raise OccupationException(f"cannot occupy {n_occ} of {C.shape[1]} orbitals")
    occupied = C[:, :n_occ]
    return 2.0 * occupied @ occupied.T


def energy(P: torch.Tensor, F: torch.Tensor, ctx: BasisContext) -> torch.Tensor:
    """Total energy ½ Σ P∘(H + F) + E_nuc; F must be the Fock matrix of P"""
    return 0.5 * torch.sum(P * (ctx.H + F)) + ctx.E_nuc


def orbital_gradient(C: torch.Tensor, F: torch.Tensor, n_occ: int) -> torch.Tensor:
    """Occupied-virtual block C_occᵀ F C_virt"""
    return C[:, :n_occ].T @ F @ C[:, n_occ:]


def gradient_rms(C: torch.Tensor, F: torch.Tensor, n_occ: int) -> torch.Tensor:
    G = orbital_gradient(C, F, n_occ)
    if G.numel() == 0:
        return torch.zeros((), dtype=F.dtype)
    return torch.sqrt(torch.mean(G * G))


def natural_orbitals(
    P: torch.Tensor, F: torch.Tensor, ctx: BasisContext
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Natural orbitals of P ordered by decreasing occupation, with ε = diag(CᵀFC)"""
    _, vectors = symeig(symmetrize(ctx.S_half @ P @ ctx.S_half))
    C = ctx.X @ vectors.flip(-1)
    return C, torch.diagonal(C.T @ F @ C)


def scf_run(
    P0: torch.Tensor,
    ctx: BasisContext,
    options: Optional[ScfOptions] = None,
    steps: Optional[int] = None,
    guess_fock_builds: int = 0,
    logger: logging.Logger = None,
) -> ScfTrajectory:
    """Iterates from P0 until converged, diverged or out of iterations.

    With steps set the solver runs exactly that many Roothaan steps without
    convergence checks (training mode); the trajectory then holds steps + 1
    records. Record 0 holds P0 with its natural orbitals."""
    options = options or ScfOptions()
    logger = logger or logging.getLogger(__package__)
    if steps is not None and steps < 1:
        raise ValueError("steps must be at least 1")
    require_square(P0, ctx.n_basis, "initial density")
    electrons = float(torch.sum(P0.detach() * ctx.S))
    if abs(electrons - ctx.n_electrons) > TRACE_TOLERANCE:
        raise OccupationException(
            f"initial density holds {electrons:.8f} electrons, expected {ctx.n_electrons}"
        )

    counter = FockBuildCounter()
    diis = DiisState(options.diis_history, logger) if options.diis_enabled else None
    alpha = options.exchange_fraction
    trajectory = ScfTrajectory(
        guess_fock_builds=guess_fock_builds if options.count_init_fock_builds else 0
    )

    P = P0
    F = fock_build(P, ctx, alpha, counter)
    C, eps = natural_orbitals(P, F, ctx)
    trajectory.iterates.append(_record(P, F, C, eps, ctx))
    limit = steps if steps is not None else options.max_iterations - 1

    for step in range(1, limit + 1):
        previous = trajectory.final
        if diis is not None:
            diis.push(F, previous.residual)
            F_solve = diis.extrapolate()
        else:
            F_solve = F
        C, eps = solve_roothaan(F_solve, ctx)
        P = density_from_orbitals(C, ctx.n_occ)
        F = fock_build(P, ctx, alpha, counter)
        record = _record(P, F, C, eps, ctx)
        trajectory.iterates.append(record)

        E = record.energy.detach().item()
        delta = E - previous.energy.detach().item()
        g_rms = record.gradient_rms.detach().item()
        logger.debug("Step %i: E = %.12f, dE = %.3e, G_rms = %.3e", step, E, delta, g_rms)
        if not abs(E) < DIVERGENCE_ENERGY:
            trajectory.aborted = True
            logger.warning("SCF diverged at step %i (E = %s)", step, E)
            break
        if (
            steps is None
            and abs(delta) < options.energy_threshold
            and g_rms < options.gradient_threshold
        ):
            trajectory.converged = True
            trajectory.iterations_to_converge = len(trajectory.iterates)
            break

    trajectory.solver_fock_builds = counter.count
    if steps is None:
        logger.info(
            "SCF %s after %i iterations, E = %.10f",
            "converged" if trajectory.converged else "stopped",
            len(trajectory.iterates),
            trajectory.final.energy.detach().item(),
        )
    return trajectory


def _record(P, F, C, eps, ctx: BasisContext) -> IterateRecord:
    residual = diis_residual(F, P, ctx)
    return IterateRecord(
        density=P,
        fock=F,
        coefficients=C,
        orbital_energies=eps,
        energy=energy(P, F, ctx),
        gradient_rms=gradient_rms(C, F, ctx.n_occ),
        residual_norm=torch.linalg.norm(residual),
        residual=residual,
    )


def trajectory_to_json(trajectory: ScfTrajectory) -> dict:
    """Per-iteration scalars plus final P and C as flat row-major lists"""
    final = trajectory.final
    return {
        "converged": trajectory.converged,
        "aborted": trajectory.aborted,
        "iterations": len(trajectory.iterates),
        "fock_builds": trajectory.fock_build_count,
        "guess_fock_builds": trajectory.guess_fock_builds,
        "energy": [record.energy.detach().item() for record in trajectory.iterates],
        "gradient_rms": [record.gradient_rms.detach().item() for record in trajectory.iterates],
        "residual_norm": [record.residual_norm.detach().item() for record in trajectory.iterates],
        "n_basis": int(final.density.shape[0]),
        "density": final.density.detach().reshape(-1).tolist(),
        "coefficients": final.coefficients.detach().reshape(-1).tolist(),
    }
