import hashlib
import json
from typing import Any, Iterator, Tuple

import numpy as np
import torch

from .constants import DTYPE
from .exceptions import NonFiniteException, ShapeMismatchException


def as_tensor(value: Any) -> torch.Tensor:
    """Returns value as a float64 tensor, without copying tensors that already are"""
    if isinstance(value, torch.Tensor):
        return value if value.dtype == DTYPE else value.to(DTYPE)
    return torch.as_tensor(np.asarray(value, dtype=np.float64), dtype=DTYPE)


def symmetrize(matrix: torch.Tensor) -> torch.Tensor:
    return 0.5 * (matrix + matrix.transpose(-1, -2))


def require_square(matrix: torch.Tensor, size: int, name: str):
    if tuple(matrix.shape) != (size, size):
        raise ShapeMismatchException(
            f"{name} has shape {tuple(matrix.shape)}, expected ({size}, {size})"
        )


def require_finite(matrix: torch.Tensor, name: str):
    if not bool(torch.isfinite(matrix).all()):
        raise NonFiniteException(f"{name} contains non-finite entries")


def format_float(value: float) -> str:
    """Decimal text with 12 significant digits"""
    return f"{value:.12g}"


def content_hash(payload: Any) -> str:
    """sha256 of the canonical JSON encoding of payload"""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def iter_content_lines(text: str) -> Iterator[Tuple[int, str]]:
    """Enumerate (1-based line number, stripped line) skipping blanks and ! comments."""
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("!", 1)[0].strip()
        if line:
            yield number, line
