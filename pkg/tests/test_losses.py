from types import SimpleNamespace

import pytest
import torch
from pysail.diis import diis_residual
from pysail.exceptions import ShapeMismatchException, TrajectoryTooShortException
from pysail.guess import classical_guess
from pysail.losses import (
    loss_commutator,
    loss_energy_change,
    loss_gradient_rms,
    loss_surrogate_matrix,
    loss_trajectory,
    trajectory_loss,
)
from pysail.models import IterateRecord, ScfTrajectory
from pysail.scf import scf_run


def tensor(values) -> torch.Tensor:
    return torch.tensor(values, dtype=torch.float64)


def record(fock, density=None, coefficients=None, energy=0.0) -> IterateRecord:
    fock = tensor(fock)
    zero = torch.zeros((), dtype=torch.float64)
    return IterateRecord(
        density=tensor(density) if density is not None else torch.zeros_like(fock),
        fock=fock,
        coefficients=tensor(coefficients) if coefficients is not None else torch.eye(fock.shape[0], dtype=torch.float64),
        orbital_energies=torch.diagonal(fock),
        energy=tensor(energy),
        gradient_rms=zero,
        residual_norm=zero,
    )


def test_surrogate_single_entry():
    assert float(loss_surrogate_matrix(tensor([[3.0]]), tensor([[1.0]]))) == pytest.approx(2.0)


def test_surrogate_zero_and_shape():
    P = tensor([[1.0, 0.2], [0.2, 1.0]])
    assert float(loss_surrogate_matrix(P, P)) == 0.0
    with pytest.raises(ShapeMismatchException):
        loss_surrogate_matrix(P, torch.eye(3, dtype=torch.float64))


def test_gradient_rms():
    value = loss_gradient_rms(record([[0.0, 0.3], [0.3, 0.0]]), 1)
    assert float(value) == pytest.approx(0.3)


def test_gradient_rms_without_virtuals():
    assert float(loss_gradient_rms(record([[1.0, 0.3], [0.3, 2.0]]), 2)) == 0.0


def test_commutator():
    ctx = SimpleNamespace(S=torch.eye(2, dtype=torch.float64), n_basis=2)
    value = loss_commutator(record([[1.0, 0.0], [0.0, 2.0]], density=[[1.0, 1.0], [1.0, 1.0]]), ctx)
    assert float(value) == pytest.approx(2**0.5 / 2)


def test_energy_change():
    trajectory = ScfTrajectory([record([[1.0]], energy=e) for e in (-1.0, -1.5, -1.25)])
    assert float(loss_energy_change(trajectory, 1)) == pytest.approx(0.5)
    assert float(loss_energy_change(trajectory, 2)) == pytest.approx(0.25)
    ctx = SimpleNamespace(n_occ=1)
    assert float(loss_trajectory(trajectory, 2, ctx, "energy_change")) == pytest.approx(0.375)


def test_single_step_is_per_step_loss(h2o_ctx):
    trajectory = scf_run(classical_guess("core", h2o_ctx), h2o_ctx, steps=1)
    torch.testing.assert_close(
        loss_trajectory(trajectory, 1, h2o_ctx),
        loss_gradient_rms(trajectory.iterates[1], h2o_ctx.n_occ),
    )
    torch.testing.assert_close(
        trajectory_loss(1, "commutator")(trajectory, h2o_ctx),
        loss_commutator(trajectory.iterates[1], h2o_ctx),
    )


def test_mean_over_steps(h2o_ctx):
    trajectory = scf_run(classical_guess("core", h2o_ctx), h2o_ctx, steps=3)
    terms = [loss_gradient_rms(trajectory.iterates[t], 5) for t in (1, 2, 3)]
    torch.testing.assert_close(loss_trajectory(trajectory, 3, h2o_ctx), sum(terms) / 3)


def test_trajectory_too_short(h2o_ctx):
    trajectory = scf_run(classical_guess("core", h2o_ctx), h2o_ctx, steps=2)
    with pytest.raises(TrajectoryTooShortException):
        loss_trajectory(trajectory, 3, h2o_ctx)
    with pytest.raises(ValueError):
        loss_trajectory(trajectory, 2, h2o_ctx, "entropy")


def test_commutator_matches_dense_and_diis_residual(h2o_ctx, generator):
    A = torch.randn((7, 7), generator=generator, dtype=torch.float64)
    F = h2o_ctx.H + 0.1 * (A + A.T)
    P = classical_guess("core", h2o_ctx)
    S = h2o_ctx.S
    value = loss_commutator(record(F.tolist(), density=P.tolist()), h2o_ctx)

    dense = torch.linalg.norm(F @ P @ S - S @ P @ F) / 7
    torch.testing.assert_close(value, dense, atol=1e-12, rtol=0)
    X_inv = torch.linalg.inv(h2o_ctx.X)
    recovered = X_inv.T @ diis_residual(F, P, h2o_ctx) @ X_inv
    torch.testing.assert_close(recovered, F @ P @ S - S @ P @ F, atol=1e-10, rtol=0)
