"""Block-scaling guess model.

An MLP maps rotation-invariant features of every atom pair to one gain and
one shift. The gains rescale the base matrix block of the pair and the shifts
add an overlap-shaped correction, so the induced matrix rotates exactly with
the molecule."""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple, TypedDict, Union

import numpy as np
import torch
from torch import nn

from .constants import DTYPE, SUPPORTED_NUMBERS
from .exceptions import CheckpointException
from .models import Molecule

ANSATZES = ("delta_density", "delta_fock")
CURRENT_CHECKPOINT_VERSION = 1

GAIN_RANGE = 0.5
SHIFT_RANGE = 0.1


@dataclass
class FeatureSpec:
    r_cut: float = 10.0
    n_rbf: int = 16
    hidden: int = 64

    def __post_init__(self):
        if self.r_cut <= 0 or self.n_rbf < 1 or self.hidden < 1:
            raise ValueError("feature spec values must be positive")

    @property
    def size(self) -> int:
        elements = len(SUPPORTED_NUMBERS)
        return 2 * elements + self.n_rbf + 1 + 2 * elements


class CheckpointData(TypedDict):
    """GuessModel in serialized form"""

    version: int
    ansatz: str
    feature_spec: dict
    parameters: dict
    metadata: dict


def cosine_cutoff(r: torch.Tensor, r_cut: float) -> torch.Tensor:
    return torch.where(r < r_cut, 0.5 * (torch.cos(math.pi * r / r_cut) + 1.0), torch.zeros_like(r))


def pair_features(molecule: Molecule, spec: FeatureSpec) -> torch.Tensor:
    """(N, N, F) symmetric features: element sums and products, radial basis
    of the distance, a self-pair flag and neighbourhood composition terms"""
    positions = torch.as_tensor(molecule.positions, dtype=DTYPE)
    index = torch.as_tensor([SUPPORTED_NUMBERS.index(z) for z in molecule.numbers])
    onehot = nn.functional.one_hot(index, len(SUPPORTED_NUMBERS)).to(DTYPE)
    n = len(index)

    r = torch.cdist(positions, positions)
    cutoff = cosine_cutoff(r, spec.r_cut)
    neighbours = cutoff * (1.0 - torch.eye(n, dtype=DTYPE))
    environment = neighbours @ onehot

    centers = torch.linspace(0.0, spec.r_cut, spec.n_rbf, dtype=DTYPE)
    width = (spec.n_rbf / spec.r_cut) ** 2
    rbf = torch.exp(-width * (r[..., None] - centers) ** 2) * cutoff[..., None]

    return torch.cat(
        [
            onehot[:, None, :] + onehot[None, :, :],
            onehot[:, None, :] * onehot[None, :, :],
            rbf,
            torch.eye(n, dtype=DTYPE)[..., None],
            environment[:, None, :] + environment[None, :, :],
            (environment[:, None, :] - environment[None, :, :]).abs(),
        ],
        dim=-1,
    )


class GuessModel(nn.Module):
    """Per-pair gains and shifts on a SAD base density or base Fock matrix"""

    def __init__(
        self,
        ansatz: str = "delta_density",
        spec: Optional[FeatureSpec] = None,
        identity: bool = True,
        seed: int = 0,
    ):
        super().__init__()
        if ansatz not in ANSATZES:
            raise ValueError(f"unknown ansatz {ansatz!r}")
        self.ansatz = ansatz
        self.spec = spec or FeatureSpec()
        generator = torch.Generator().manual_seed(seed)
        self.network = nn.Sequential(
            nn.Linear(self.spec.size, self.spec.hidden),
            nn.SiLU(),
            nn.Linear(self.spec.hidden, self.spec.hidden),
            nn.SiLU(),
            nn.Linear(self.spec.hidden, 2),
        ).to(DTYPE)
        with torch.no_grad():
            for layer in self.network:
                if isinstance(layer, nn.Linear):
                    bound = 1.0 / math.sqrt(layer.in_features)
                    layer.weight.uniform_(-bound, bound, generator=generator)
                    layer.bias.uniform_(-bound, bound, generator=generator)
            if identity:
                self.network[-1].weight.zero_()
                self.network[-1].bias.zero_()

    def forward(self, molecule: Molecule) -> Tuple[torch.Tensor, torch.Tensor]:
        """Atom-pair gains in [0.5, 1.5] and shifts in [-0.1, 0.1], both (N, N)"""
        output = self.network(pair_features(molecule, self.spec))
        output = 0.5 * (output + output.transpose(0, 1))
        gains = 1.0 + GAIN_RANGE * torch.tanh(output[..., 0])
        shifts = SHIFT_RANGE * torch.tanh(output[..., 1])
        return gains, shifts

    def block_scalars(self, molecule: Molecule, ao_atom: torch.Tensor):
        """Gains and shifts expanded to basis-function resolution (B, B)"""
        gains, shifts = self(molecule)
        rows, cols = ao_atom[:, None], ao_atom[None, :]
        return gains[rows, cols], shifts[rows, cols]

    def serialize(self, metadata: Optional[dict] = None) -> CheckpointData:
        return {
            "version": CURRENT_CHECKPOINT_VERSION,
            "ansatz": self.ansatz,
            "feature_spec": asdict(self.spec),
            "parameters": {
                name: {"shape": list(value.shape), "values": value.detach().reshape(-1).tolist()}
                for name, value in self.state_dict().items()
            },
            "metadata": dict(metadata or {}),
        }

    @classmethod
    def deserialize(cls, data: dict) -> "GuessModel":
        if data.get("version") != CURRENT_CHECKPOINT_VERSION:
            raise CheckpointException(f"unsupported checkpoint version {data.get('version')}")
        try:
            model = cls(data["ansatz"], FeatureSpec(**data["feature_spec"]))
            state = {
                name: torch.as_tensor(
                    np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"]),
                    dtype=DTYPE,
                )
                for name, entry in data["parameters"].items()
            }
            model.load_state_dict(state)
        except (KeyError, ValueError, RuntimeError) as ex:
            raise CheckpointException(f"malformed checkpoint: {ex}") from ex
        return model


def save_checkpoint(model: GuessModel, path: Union[str, Path], metadata: Optional[dict] = None):
    Path(path).write_text(json.dumps(model.serialize(metadata), indent=1))


def load_checkpoint(path: Union[str, Path]) -> Tuple[GuessModel, dict]:
    """Returns the model and its training metadata"""
    path = Path(path)
    if not path.is_file():
        raise CheckpointException(f"checkpoint {path} not found")
    data = json.loads(path.read_text())
    return GuessModel.deserialize(data), data.get("metadata", {})
