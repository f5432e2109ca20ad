"""Pulay DIIS extrapolation of Fock matrices"""

import logging
from collections import deque
from typing import Optional

import torch

SINGULAR_CONDITION = 1e12


def commutator(F: torch.Tensor, P: torch.Tensor, S: torch.Tensor) -> torch.Tensor:
    """FPS - SPF"""
    FPS = F @ P @ S
    return FPS - FPS.T


def diis_residual(F: torch.Tensor, P: torch.Tensor, ctx) -> torch.Tensor:
    """Commutator residual Xᵀ(FPS - SPF)X in the orthonormal basis.

    ctx needs S and X attributes."""
    return ctx.X.T @ commutator(F, P, ctx.S) @ ctx.X


class DiisState:
    """Bounded history of (Fock, residual) pairs owned by one SCF run"""

    def __init__(self, capacity: int = 8, logger: logging.Logger = None):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self.history = deque(maxlen=capacity)
        self.last_coefficients: Optional[torch.Tensor] = None
        self._logger = logger or logging.getLogger(__package__)

    def __len__(self):
        return len(self.history)

    def push(self, fock: torch.Tensor, residual: torch.Tensor):
        self.history.append((fock, residual))

    def extrapolate(self) -> torch.Tensor:
        """Solves the bordered Pulay system and mixes the stored Fock matrices.

        An ill-conditioned system evicts the oldest entry and retries; with a
        single entry left the latest Fock matrix is returned as is."""
        if not self.history:
            raise ValueError("DIIS history is empty")
        while len(self.history) > 1:
            coefficients = _pulay_coefficients([residual for _, residual in self.history])
            if coefficients is not None:
                self.last_coefficients = coefficients
                return sum(a * fock for a, (fock, _) in zip(coefficients, self.history))
            self._logger.warning(
                "Singular DIIS system with %i entries, evicting the oldest", len(self.history)
            )
            self.history.popleft()
        fock, _ = self.history[-1]
        self.last_coefficients = torch.ones(1, dtype=fock.dtype)
        return fock


def _pulay_coefficients(residuals) -> Optional[torch.Tensor]:
    n = len(residuals)
    flat = torch.stack([residual.reshape(-1) for residual in residuals])
    B = flat @ flat.T
    scale = B.diagonal().max()
    if not bool(scale > 0):
        return None
    B = B / scale
    bordered = torch.zeros((n + 1, n + 1), dtype=B.dtype)
    bordered[:n, :n] = B
    bordered[:n, n] = -1.0
    bordered[n, :n] = -1.0
    if not bool(torch.isfinite(bordered).all()):
        return None
    if float(torch.linalg.cond(bordered.detach())) > SINGULAR_CONDITION:
        return None
    rhs = torch.zeros(n + 1, dtype=B.dtype)
    rhs[n] = -1.0
    return torch.linalg.solve(bordered, rhs)[:n]


def diis_extrapolate(state: DiisState) -> torch.Tensor:
    return state.extrapolate()
