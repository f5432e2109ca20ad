"""Geometry corpus generation, size splits and converged labels"""

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .chemio import emit_xyz, heavy_atom_count, parse_xyz, perturb_geometry, read_basis_file
from .constants import DTYPE
from .context import BasisContext, build_context
from .exceptions import LabelMismatchException
from .guess import AtomicDensityTable, classical_guess
from .models import Molecule, ScfOptions
from .scf import coulomb, energy, exchange, scf_run
from .util import content_hash

CURRENT_LABEL_VERSION = 1

SPLITS = ("train", "val", "test")


def load_base_molecules() -> Dict[str, Molecule]:
    """Embedded equilibrium geometries keyed by file stem"""
    folder = resources.files(__package__).joinpath("data", "corpus")
    molecules = {}
    for entry in sorted(folder.iterdir(), key=lambda item: item.name):
        if entry.name.endswith(".xyz"):
            name = entry.name[: -len(".xyz")]
            molecules[name] = parse_xyz(entry.read_text(), name=name)
    return molecules


def generate_corpus(
    base: Dict[str, Molecule], copies: int, amplitude: float, seed: int
) -> List[Molecule]:
    """copies geometries per base molecule: the base itself, then perturbed
    copies whose seeds derive from (seed, name, index)"""
    corpus = []
    for name, molecule in sorted(base.items()):
        for index in range(copies):
            if index == 0:
                copy = Molecule(molecule.numbers, molecule.positions, molecule.name)
            else:
                copy_seed = int(content_hash([seed, name, index])[:12], 16)
                copy = perturb_geometry(molecule, amplitude, copy_seed)
            copy.name = f"{name}-{index:03d}"
            corpus.append(copy)
    return corpus


def split_of(molecule: Molecule) -> str:
    heavy = heavy_atom_count(molecule)
    if heavy <= 2:
        return "train"
    return "val" if heavy == 3 else "test"


def split_by_heavy_atoms(corpus: Sequence) -> Dict[str, list]:
    """train ≤ 2 heavy atoms, val 3, test ≥ 4; accepts molecules or labeled samples"""
    splits = {split: [] for split in SPLITS}
    for item in corpus:
        splits[split_of(getattr(item, "molecule", item))].append(item)
    return splits


def mean_field_energy(P: torch.Tensor, ctx: BasisContext) -> torch.Tensor:
    """Hartree–Fock energy functional at P, whatever exchange fraction produced P"""
    F = ctx.H + coulomb(P, ctx) - 0.5 * exchange(P, ctx)
    return energy(P, F, ctx)


@dataclass(eq=False)
class LabeledSample:
    """A molecule with its converged SCF solution from the SAD guess"""

    molecule: Molecule
    ctx: BasisContext
    density: torch.Tensor
    fock: torch.Tensor
    energy: float
    mf_energy: float
    reference_iterations: int

    @property
    def heavy_atoms(self) -> int:
        return heavy_atom_count(self.molecule)


def label_metadata(options: ScfOptions, basis_text: str) -> dict:
    return {
        "basis": content_hash(basis_text),
        "alpha": options.exchange_fraction,
        "energy_threshold": options.energy_threshold,
        "gradient_threshold": options.gradient_threshold,
    }


def label_molecule(
    molecule: Molecule,
    options: ScfOptions,
    table: AtomicDensityTable,
    basis_text: Optional[str] = None,
    logger: logging.Logger = None,
) -> Tuple[Optional[LabeledSample], BasisContext]:
    """Converges molecule from SAD; the sample is None when it does not converge"""
    ctx = build_context(molecule, basis_text, logger=logger)
    trajectory = scf_run(classical_guess("sad", ctx, table), ctx, options, logger=logger)
    if not trajectory.converged:
        return None, ctx
    final = trajectory.final
    return (
        LabeledSample(
            molecule=molecule,
            ctx=ctx,
            density=final.density,
            fock=final.fock,
            energy=float(final.energy),
            mf_energy=float(mean_field_energy(final.density, ctx)),
            reference_iterations=len(trajectory.iterates),
        ),
        ctx,
    )


def label_dataset(
    molecules: Sequence[Molecule],
    options: Optional[ScfOptions] = None,
    table: Optional[AtomicDensityTable] = None,
    basis_text: Optional[str] = None,
    logger: logging.Logger = None,
) -> Tuple[List[LabeledSample], List[str]]:
    """Returns (labeled samples, names of molecules that did not converge)"""
    options = options or ScfOptions()
    logger = logger or logging.getLogger(__package__)
    basis_text = basis_text if basis_text is not None else read_basis_file()
    table = table or AtomicDensityTable(options.exchange_fraction, basis_text, logger)
    samples, excluded = [], []
    for molecule in molecules:
        sample, _ = label_molecule(molecule, options, table, basis_text, logger)
        if sample is None:
            logger.warning("Excluding %s: no convergence from SAD", molecule.name)
            excluded.append(molecule.name)
        else:
            samples.append(sample)
    logger.info("Labeled %i molecules, excluded %i", len(samples), len(excluded))
    return samples, excluded


def label_to_json(sample: LabeledSample, metadata: dict) -> dict:
    return {
        "version": CURRENT_LABEL_VERSION,
        "name": sample.molecule.name,
        "xyz": emit_xyz(sample.molecule),
        "metadata": metadata,
        "metadata_hash": content_hash(metadata),
        "energy": sample.energy,
        "mf_energy": sample.mf_energy,
        "reference_iterations": sample.reference_iterations,
        "n_basis": sample.ctx.n_basis,
        "density": sample.density.detach().reshape(-1).tolist(),
        "fock": sample.fock.detach().reshape(-1).tolist(),
    }


def save_labels(samples: Sequence[LabeledSample], directory: Union[str, Path], metadata: dict):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for sample in samples:
        text = json.dumps(label_to_json(sample, metadata), sort_keys=True, indent=1)
        (directory / f"{sample.molecule.name}.json").write_text(text + "\n")


def load_labels(
    directory: Union[str, Path],
    metadata: Optional[dict] = None,
    basis_text: Optional[str] = None,
    logger: logging.Logger = None,
) -> List[LabeledSample]:
    """Reads every label in directory, rebuilding the integral contexts.

    When metadata is given, labels made with another basis, exchange fraction
    or thresholds are refused."""
    expected = content_hash(metadata) if metadata is not None else None
    samples = []
    for path in sorted(Path(directory).glob("*.json")):
        data = json.loads(path.read_text())
        if data.get("version") != CURRENT_LABEL_VERSION:
            raise LabelMismatchException(f"{path.name}: unsupported label version")
        if data["metadata_hash"] != content_hash(data["metadata"]):
            raise LabelMismatchException(f"{path.name}: corrupted metadata hash")
        if expected is not None and data["metadata_hash"] != expected:
            raise LabelMismatchException(
                f"{path.name}: labeled with {data['metadata']}, expected {metadata}"
            )
        molecule = parse_xyz(data["xyz"], name=data["name"])
        ctx = build_context(molecule, basis_text, logger=logger)
        shape = (data["n_basis"], data["n_basis"])
        samples.append(
            LabeledSample(
                molecule=molecule,
                ctx=ctx,
                density=torch.as_tensor(np.reshape(data["density"], shape), dtype=DTYPE),
                fock=torch.as_tensor(np.reshape(data["fock"], shape), dtype=DTYPE),
                energy=data["energy"],
                mf_energy=data["mf_energy"],
                reference_iterations=data["reference_iterations"],
            )
        )
    return samples
