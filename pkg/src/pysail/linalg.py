"""Symmetric eigendecomposition with a broadened reverse-mode rule"""

import contextvars
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch

from .exceptions import NonFiniteGradientException

BROADENING = 1e-9
DEGENERACY_GAP = 1e-6
_COUPLING_FLOOR = 1e-10


@dataclass
class Recorder:
    """Collects primitive indices and degeneracy flags while a tape is active"""

    primitives: int = 0
    degenerate: List[int] = field(default_factory=list)
    ties: int = 0

    @property
    def flagged(self) -> bool:
        return bool(self.degenerate) or self.ties > 0

    def next_index(self) -> int:
        self.primitives += 1
        return self.primitives - 1


recorder: contextvars.ContextVar[Optional[Recorder]] = contextvars.ContextVar(
    "pysail_recorder", default=None
)


def eig_backward(
    eigenvalues: torch.Tensor,
    vectors: torch.Tensor,
    eigenvalues_bar: Optional[torch.Tensor],
    vectors_bar: Optional[torch.Tensor],
    broadening: float = BROADENING,
) -> Tuple[torch.Tensor, bool]:
    """Adjoint of A = U diag(ε) Uᵀ for symmetric A.

    Returns the symmetrized adjoint and whether a coupled near-degenerate pair
    (|ε_j - ε_i| < 1e-6) entered the eigenvector term."""
    n = eigenvalues.shape[-1]
    inner = torch.zeros((n, n), dtype=vectors.dtype, device=vectors.device)
    degenerate = False
    if vectors_bar is not None:
        coupling = vectors.T @ vectors_bar
        gaps = eigenvalues[None, :] - eigenvalues[:, None]
        inverse = gaps / (gaps * gaps + broadening**2)
        inverse.fill_diagonal_(0.0)
        inner = inverse * coupling
        antisymmetric = (coupling - coupling.T).abs()
        close = (gaps.abs() < DEGENERACY_GAP) & ~torch.eye(n, dtype=torch.bool, device=gaps.device)
        degenerate = bool((close & (antisymmetric > _COUPLING_FLOOR)).any())
    if eigenvalues_bar is not None:
        inner = inner + torch.diag(eigenvalues_bar)
    adjoint = vectors @ inner @ vectors.T
    return 0.5 * (adjoint + adjoint.T), degenerate


class SymEig(torch.autograd.Function):
    """torch.linalg.eigh with eig_backward as its derivative"""

    @staticmethod
    def forward(ctx, matrix):
        eigenvalues, vectors = torch.linalg.eigh(matrix)
        active = recorder.get()
        ctx.recorder = active
        ctx.index = active.next_index() if active is not None else None
        ctx.save_for_backward(eigenvalues, vectors)
        return eigenvalues, vectors

    @staticmethod
    def backward(ctx, eigenvalues_bar, vectors_bar):
        eigenvalues, vectors = ctx.saved_tensors
        adjoint, degenerate = eig_backward(eigenvalues, vectors, eigenvalues_bar, vectors_bar)
        if ctx.recorder is not None:
            if degenerate:
                ctx.recorder.degenerate.append(ctx.index)
            if not bool(torch.isfinite(adjoint).all()):
                raise NonFiniteGradientException(
                    "eigendecomposition adjoint is not finite", index=ctx.index
                )
        elif degenerate:
            logging.getLogger(__package__).debug("Broadened a near-degenerate eigenpair")
        return adjoint


def symeig(matrix: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix"""
    if matrix.requires_grad:
        return SymEig.apply(matrix)
    return torch.linalg.eigh(matrix)
