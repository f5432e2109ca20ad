"""Surrogate and trajectory losses"""

from typing import Callable

import torch

from .context import BasisContext
from .diis import commutator
from .exceptions import ShapeMismatchException, TrajectoryTooShortException
from .models import IterateRecord, ScfTrajectory
from .scf import gradient_rms

LOSS_KINDS = ("gradient_rms", "commutator", "energy_change")


def loss_gradient_rms(record: IterateRecord, n_occ: int) -> torch.Tensor:
    """RMS of the occupied-virtual block of the Fock matrix in the iterate's orbitals"""
    return gradient_rms(record.coefficients, record.fock, n_occ)


def loss_commutator(record: IterateRecord, ctx: BasisContext) -> torch.Tensor:
    """‖FPS - SPF‖_F / B"""
    return torch.linalg.norm(commutator(record.fock, record.density, ctx.S)) / ctx.n_basis


def loss_energy_change(trajectory: ScfTrajectory, step: int) -> torch.Tensor:
    """|E^(t) - E^(t-1)|"""
    return torch.abs(trajectory.iterates[step].energy - trajectory.iterates[step - 1].energy)


def loss_surrogate_matrix(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mixed Frobenius and L1 loss (‖ΔX‖_F + Σ|ΔX|) / 2B"""
    if predicted.shape != target.shape:
        raise ShapeMismatchException(
            f"prediction {tuple(predicted.shape)} and label {tuple(target.shape)} differ"
        )
    delta = predicted - target
    return (torch.linalg.norm(delta) + delta.abs().sum()) / (2 * predicted.shape[-1])


def loss_trajectory(
    trajectory: ScfTrajectory, steps: int, ctx: BasisContext, kind: str = "gradient_rms"
) -> torch.Tensor:
    """Uniform mean of the per-step loss over steps 1..T"""
    if len(trajectory.iterates) < steps + 1:
        raise TrajectoryTooShortException(
            f"trajectory has {len(trajectory.iterates) - 1} steps, {steps} requested"
        )
    if kind == "gradient_rms":
        terms = [loss_gradient_rms(trajectory.iterates[t], ctx.n_occ) for t in range(1, steps + 1)]
    elif kind == "commutator":
        terms = [loss_commutator(trajectory.iterates[t], ctx) for t in range(1, steps + 1)]
    elif kind == "energy_change":
        terms = [loss_energy_change(trajectory, t) for t in range(1, steps + 1)]
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return torch.stack(terms).mean()


def trajectory_loss(
    steps: int, kind: str = "gradient_rms"
) -> Callable[[ScfTrajectory, BasisContext], torch.Tensor]:
    return lambda trajectory, ctx: loss_trajectory(trajectory, steps, ctx, kind)
