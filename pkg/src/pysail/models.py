from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple, TypedDict

import numpy as np
import torch

from .constants import MIN_DISTANCE, SYMBOLS
from .exceptions import InvalidMoleculeException


@dataclass(eq=False)
class Molecule:
    """Atoms (atomic numbers and Cartesian positions in Bohr) of a neutral molecule"""

    numbers: Tuple[int, ...]
    positions: np.ndarray
    name: str = ""
    charge: int = 0

    def __post_init__(self):
        self.numbers = tuple(int(z) for z in self.numbers)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)

    @property
    def n_atoms(self) -> int:
        return len(self.numbers)

    @property
    def n_electrons(self) -> int:
        return sum(self.numbers) - self.charge

    @property
    def symbols(self) -> List[str]:
        return [SYMBOLS[z] for z in self.numbers]

    def min_distance(self) -> float:
        """Smallest interatomic distance, infinite for a single atom"""
        if self.n_atoms < 2:
            return float("inf")
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        return float(dist[np.triu_indices(self.n_atoms, k=1)].min())

    def geometry_ok(self) -> bool:
        return self.n_atoms >= 1 and self.min_distance() > MIN_DISTANCE

    def validate(self, closed_shell: bool = True):
        """Raises InvalidMoleculeException when an invariant does not hold"""
        if self.n_atoms < 1:
            raise InvalidMoleculeException("molecule has no atoms")
        for z in self.numbers:
            if z not in SYMBOLS:
                raise InvalidMoleculeException(f"unsupported atomic number {z}")
        if not np.all(np.isfinite(self.positions)):
            raise InvalidMoleculeException("non-finite coordinate")
        if self.min_distance() <= MIN_DISTANCE:
            raise InvalidMoleculeException(
                f"atoms closer than {MIN_DISTANCE} Bohr ({self.min_distance():.3g})"
            )
        if closed_shell and self.n_electrons % 2:
            raise InvalidMoleculeException(
                f"odd electron count {self.n_electrons}, closed shell required"
            )

    def __repr__(self):
        return f"{self.name or 'molecule'}: {''.join(self.symbols)} ({self.n_electrons} electrons)"


@dataclass(frozen=True)
class Shell:
    """Contracted Gaussian shell; coefficients include primitive normalization"""

    center_atom: int
    angular_momentum: int
    exponents: Tuple[float, ...]
    coefficients: Tuple[float, ...]
    center: Tuple[float, float, float]

    @property
    def size(self) -> int:
        return 2 * self.angular_momentum + 1


CURRENT_OPTIONS_VERSION = 0


class ScfOptionsData(TypedDict):
    """ScfOptions in serialized form"""

    version: int
    max_iterations: int
    energy_threshold: float
    gradient_threshold: float
    exchange_fraction: float
    diis_enabled: bool
    diis_history: int
    count_init_fock_builds: bool


@dataclass
class ScfOptions:
    """Convergence control of an SCF run"""

    max_iterations: int = 100
    energy_threshold: float = 1e-9
    gradient_threshold: float = 1e-6
    exchange_fraction: float = 1.0
    diis_enabled: bool = True
    diis_history: int = 8
    count_init_fock_builds: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.energy_threshold <= 0 or self.gradient_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if not 0.0 < self.exchange_fraction <= 1.0:
            raise ValueError("exchange_fraction must lie in (0, 1]")
        if self.diis_history < 1:
            raise ValueError("diis_history must be at least 1")

    def serialize(self) -> ScfOptionsData:
        """Serializes the options into a dictionary."""
        return {"version": CURRENT_OPTIONS_VERSION, **asdict(self)}

    @classmethod
    def deserialize(cls, data: dict) -> "ScfOptions":
        """Builds options from a dictionary, missing keys keep their defaults."""
        data = dict(data)
        data.pop("version", None)
        return cls(**data)


@dataclass
class IterateRecord:
    """One SCF iterate: the density, the orbitals that produced it and its Fock matrix"""

    density: torch.Tensor
    fock: torch.Tensor
    coefficients: torch.Tensor
    orbital_energies: torch.Tensor
    energy: torch.Tensor
    gradient_rms: torch.Tensor
    residual_norm: torch.Tensor
    residual: Optional[torch.Tensor] = None


@dataclass
class ScfTrajectory:
    """Ordered SCF iterates plus Fock-build bookkeeping"""

    iterates: List[IterateRecord] = field(default_factory=list)
    solver_fock_builds: int = 0
    guess_fock_builds: int = 0
    converged: bool = False
    aborted: bool = False
    iterations_to_converge: Optional[int] = None

    @property
    def fock_build_count(self) -> int:
        return self.solver_fock_builds + self.guess_fock_builds

    @property
    def final(self) -> IterateRecord:
        return self.iterates[-1]

    def energies(self) -> List[float]:
        return [record.energy.detach().item() for record in self.iterates]


@dataclass
class SurrogateRecord:
    """Surrogate quality metrics of one initial guess against its converged reference"""

    delta_E: float
    E_mf_delta: float
    dipole_delta: float
    Q: float
    r_diis: float
    G_norm: float
    frob_P: float
    frob_F: float


@dataclass
class MetricsRecord:
    """RIC, ERIC and surrogate metrics for one (molecule, guess) pair"""

    molecule: str
    guess: str
    heavy_atoms: int
    ric: float
    eric: float
    converged: bool
    iterations: int
    guess_fock_builds: int
    measurement_fock_builds: int
    reference_iterations: int
    surrogate: SurrogateRecord
    fallback: bool = False

    @property
    def fock_builds(self) -> int:
        return self.iterations + self.guess_fock_builds + self.measurement_fock_builds

    def row(self) -> dict:
        """Flat row for tabular reports"""
        row = {key: value for key, value in asdict(self).items() if key != "surrogate"}
        row["fock_builds"] = self.fock_builds
        row.update(asdict(self.surrogate))
        return row
