"""Reverse-mode gradients through unrolled SCF steps.

The forward pass runs under a Tape, which tracks the bytes autograd saves for
the backward pass and collects degeneracy flags from the eigensolver."""

import logging
from typing import Callable, Dict, Optional, Tuple

import torch

from .context import BasisContext
from .exceptions import NonFiniteGradientException
from .guess import AtomicDensityTable, model_guess
from .linalg import Recorder, eig_backward, recorder
from .model import GuessModel
from .models import Molecule, ScfOptions, ScfTrajectory
from .scf import scf_run

__all__ = ["Tape", "grad", "eig_backward"]


class Tape:
    """Recording context of one differentiated sample"""

    def __init__(self):
        self.recorder = Recorder()
        self.saved_bytes = 0
        self._storages = set()
        self._hooks = torch.autograd.graph.saved_tensors_hooks(self._pack, self._unpack)
        self._token = None

    def __enter__(self):
        self._token = recorder.set(self.recorder)
        self._hooks.__enter__()
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self._hooks.__exit__(exc_type, exc_value, traceback)
        recorder.reset(self._token)

    def _pack(self, tensor: torch.Tensor) -> torch.Tensor:
        storage = tensor.untyped_storage()
        if storage.data_ptr() not in self._storages:
            self._storages.add(storage.data_ptr())
            self.saved_bytes += storage.nbytes()
        return tensor

    @staticmethod
    def _unpack(tensor: torch.Tensor) -> torch.Tensor:
        return tensor

    @property
    def peak_bytes(self) -> int:
        """Bytes held for the backward pass at the end of the forward pass"""
        return self.saved_bytes

    @property
    def primitives(self) -> int:
        return self.recorder.primitives

    @property
    def flagged(self) -> bool:
        """Near-degenerate eigenpairs or purification ties were met"""
        return self.recorder.flagged


def grad(
    loss_fn: Callable[[ScfTrajectory, BasisContext], torch.Tensor],
    model: GuessModel,
    molecule: Molecule,
    ctx: BasisContext,
    steps: int,
    table: AtomicDensityTable,
    options: Optional[ScfOptions] = None,
    tape: Optional[Tape] = None,
    logger: logging.Logger = None,
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Loss over `steps` recorded SCF steps from the model's guess and its
    gradient with respect to every model parameter"""
    options = options or ScfOptions()
    tape = tape or Tape()
    logger = logger or logging.getLogger(__package__)
    parameters = dict(model.named_parameters())

    with torch.enable_grad(), tape:
        P0 = model_guess(model, molecule, ctx, table, options.exchange_fraction, logger).density
        trajectory = scf_run(P0, ctx, options, steps=steps, logger=logger)
        loss = loss_fn(trajectory, ctx)

    if not loss.requires_grad:
        return loss.detach(), {name: torch.zeros_like(p) for name, p in parameters.items()}
    gradients = torch.autograd.grad(loss, list(parameters.values()), allow_unused=True)
    result = {}
    for (name, parameter), gradient in zip(parameters.items(), gradients):
        if gradient is None:
            gradient = torch.zeros_like(parameter)
        if not bool(torch.isfinite(gradient).all()):
            raise NonFiniteGradientException(
                f"gradient of {name} is not finite", index=tape.primitives - 1
            )
        result[name] = gradient
    logger.debug(
        "Gradient over %i steps: loss %.6e, %i eigensolves, %i saved bytes",
        steps,
        loss.detach().item(),
        tape.primitives,
        tape.peak_bytes,
    )
    return loss.detach(), result
