"""Iteration-count ratios and surrogate quality metrics of initial guesses"""

import logging
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.linalg
import torch

from .context import BasisContext
from .dataset import LabeledSample, mean_field_energy
from .diis import diis_residual
from .exceptions import ReferenceNotConvergedException
from .guess import AtomicDensityTable, classical_guess, model_guess, purify
from .model import GuessModel
from .models import MetricsRecord, ScfOptions, ScfTrajectory, SurrogateRecord
from .scf import (
    FockBuildCounter,
    coulomb,
    density_from_orbitals,
    energy,
    exchange,
    natural_orbitals,
    orbital_gradient,
    scf_run,
)

MEASUREMENT_FOCK_BUILDS = 1


def ric(n_learned: int, n_reference: int) -> float:
    """Relative iteration count"""
    if n_reference < 1:
        raise ValueError("reference iteration count must be positive")
    return n_learned / n_reference


def eric(fock_builds_total: int, fock_builds_reference: int) -> float:
    """Relative iteration count charging every Fock build, guess acquisition included"""
    if fock_builds_reference < 1:
        raise ValueError("reference Fock build count must be positive")
    return fock_builds_total / fock_builds_reference


def projection(P_hat: torch.Tensor, P_star: torch.Tensor, S: torch.Tensor) -> float:
    """½ tr(P̂ S P* S): electrons of P̂ inside the converged occupied space"""
    return float(0.5 * torch.trace(P_hat @ S @ P_star @ S))


def electronic_dipole(P: torch.Tensor, ctx: BasisContext) -> torch.Tensor:
    return -torch.einsum("kij,ij->k", ctx.D, P)


def surrogate_metrics(
    P_hat: torch.Tensor,
    reference: Union[ScfTrajectory, LabeledSample],
    ctx: BasisContext,
    alpha: float = 1.0,
    counter: Optional[FockBuildCounter] = None,
) -> SurrogateRecord:
    """Distance of P_hat from the converged solution, measured eight ways.

    All Fock-dependent fields share one build at P_hat, counted on counter."""
    if isinstance(reference, ScfTrajectory):
        if not reference.converged:
            raise ReferenceNotConvergedException("reference SCF did not converge")
        P_star = reference.final.density
        F_star = reference.final.fock
        E_star = float(reference.final.energy)
        E_mf_star = float(mean_field_energy(P_star, ctx))
    else:
        P_star, F_star = reference.density, reference.fock
        E_star, E_mf_star = reference.energy, reference.mf_energy

    with torch.no_grad():
        if counter is not None:
            counter.increment()
        J, K = coulomb(P_hat, ctx), exchange(P_hat, ctx)
        F_hat = ctx.H + J - 0.5 * alpha * K
        F_mf = ctx.H + J - 0.5 * K
        C, _ = natural_orbitals(P_hat, F_hat, ctx)
        G = orbital_gradient(C, F_hat, ctx.n_occ)
        return SurrogateRecord(
            delta_E=float(energy(P_hat, F_hat, ctx)) - E_star,
            E_mf_delta=float(energy(P_hat, F_mf, ctx)) - E_mf_star,
            dipole_delta=float(
                torch.linalg.norm(electronic_dipole(P_hat, ctx) - electronic_dipole(P_star, ctx))
            ),
            Q=projection(P_hat, P_star, ctx.S),
            r_diis=float(torch.linalg.norm(diis_residual(F_hat, P_hat, ctx))),
            G_norm=float(torch.sum(G * G)),
            frob_P=float(torch.linalg.norm(P_hat - P_star)),
            frob_F=float(torch.linalg.norm(F_hat - F_star)),
        )


def orbital_rotation(
    C: torch.Tensor, n_occ: int, scale: float, direction: np.ndarray
) -> torch.Tensor:
    """Density after rotating occupied into virtual orbitals by exp(scale·κ),
    κ antisymmetric with occupied-virtual block direction"""
    n = C.shape[1]
    kappa = np.zeros((n, n))
    kappa[:n_occ, n_occ:] = direction
    kappa[n_occ:, :n_occ] = -np.asarray(direction).T
    rotation = torch.as_tensor(scipy.linalg.expm(scale * kappa), dtype=C.dtype)
    return density_from_orbitals(C @ rotation, n_occ)


def projection_homotopy(
    P_star: torch.Tensor, P_end: torch.Tensor, ctx: BasisContext, points: int = 11
) -> List[float]:
    """Q along purified linear mixtures from P* (s = 0) to P_end (s = 1)"""
    values = []
    for s in np.linspace(0.0, 1.0, points):
        P, _ = purify((1.0 - s) * P_star + s * P_end, ctx)
        values.append(projection(P, P_star, ctx.S))
    return values


def guess_name(guess: Union[str, GuessModel]) -> str:
    return guess if isinstance(guess, str) else guess.ansatz


def evaluate_guess(
    guess: Union[str, GuessModel],
    sample: LabeledSample,
    table: AtomicDensityTable,
    options: Optional[ScfOptions] = None,
    name: Optional[str] = None,
    logger: logging.Logger = None,
) -> MetricsRecord:
    """Full converged run from one guess plus its surrogate metrics"""
    options = options or ScfOptions()
    ctx = sample.ctx
    with torch.no_grad():
        if isinstance(guess, str):
            P0, spent, fallback = classical_guess(guess, ctx, table), 0, False
        else:
            P0, spent, fallback = model_guess(
                guess, sample.molecule, ctx, table, options.exchange_fraction, logger
            )
        trajectory = scf_run(P0, ctx, options, guess_fock_builds=spent, logger=logger)
    measurement = FockBuildCounter()
    surrogate = surrogate_metrics(P0, sample, ctx, options.exchange_fraction, measurement)
    iterations = len(trajectory.iterates)
    return MetricsRecord(
        molecule=sample.molecule.name,
        guess=name or guess_name(guess),
        heavy_atoms=sample.heavy_atoms,
        ric=ric(iterations, sample.reference_iterations),
        eric=eric(trajectory.fock_build_count, sample.reference_iterations),
        converged=trajectory.converged,
        iterations=iterations,
        guess_fock_builds=trajectory.guess_fock_builds,
        measurement_fock_builds=measurement.count,
        reference_iterations=sample.reference_iterations,
        surrogate=surrogate,
        fallback=fallback,
    )


def mean_eric(
    guess: Union[str, GuessModel],
    samples: Sequence[LabeledSample],
    table: AtomicDensityTable,
    options: Optional[ScfOptions] = None,
) -> float:
    if not samples:
        return float("nan")
    return float(np.mean([evaluate_guess(guess, sample, table, options).eric for sample in samples]))


def records_frame(records: Sequence[MetricsRecord]) -> pd.DataFrame:
    """One row per record in (molecule, guess) order"""
    frame = pd.DataFrame([record.row() for record in records])
    if frame.empty:
        return frame
    return frame.sort_values(["molecule", "guess"], kind="stable").reset_index(drop=True)


def aggregate(records: Union[pd.DataFrame, Sequence[MetricsRecord]]) -> pd.DataFrame:
    """Means per (guess, heavy atom count)"""
    frame = records if isinstance(records, pd.DataFrame) else records_frame(records)
    columns = ["ric", "eric", "iterations", "fock_builds", "delta_E", "Q", "frob_P", "frob_F"]
    grouped = frame.groupby(["guess", "heavy_atoms"], sort=True)[columns].mean()
    grouped["count"] = frame.groupby(["guess", "heavy_atoms"], sort=True).size()
    grouped["fallbacks"] = frame.groupby(["guess", "heavy_atoms"], sort=True)["fallback"].sum()
    return grouped.reset_index()
