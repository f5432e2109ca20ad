"""Possible exceptions thrown by this library"""


class InvalidMoleculeException(Exception):
    """This exception indicates a geometry that cannot be used.
    Raised for malformed XYZ text, unknown element symbols, odd electron
    counts and atoms closer than the minimum distance.
    The offending line number is stored in `line` when known."""

    def __init__(self, message: str, line: int = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class BasisSetException(Exception):
    """This exception indicates unusable basis text.
    Missing elements, non-positive exponents and ragged coefficient lists
    all end up here."""


class PerturbationException(Exception):
    """This exception indicates that no valid perturbed geometry was found.
    Every retry produced atoms closer than the minimum distance."""


class LinearDependenceException(Exception):
    """This exception indicates a (near) singular overlap matrix.
    The smallest overlap eigenvalue fell below the linear dependence floor,
    usually because of a degenerate geometry."""


class MemoryCapException(Exception):
    """This exception indicates that the dense two-electron tensor would not fit.
    The required number of bytes is stored in `required_bytes`."""

    def __init__(self, required_bytes: int, cap_bytes: int):
        super().__init__(
            f"ERI tensor needs {required_bytes} bytes, cap is {cap_bytes} bytes"
        )
        self.required_bytes = required_bytes
        self.cap_bytes = cap_bytes


class ShapeMismatchException(Exception):
    """This exception indicates matrices whose shapes do not agree."""


class NonFiniteException(Exception):
    """This exception indicates NaN or Inf entries in a solver input."""


class OccupationException(Exception):
    """This exception indicates an occupied orbital count outside [0, B]."""


class AtomicScfException(Exception):
    """This exception indicates that an atomic SCF did not converge.
    Atomic densities are built once per element, so this is a hard error."""


class NonFiniteGradientException(Exception):
    """This exception indicates a NaN or Inf gradient during backpropagation.
    The index of the recorded primitive that produced it is stored in `index`."""

    def __init__(self, message: str, index: int = None):
        super().__init__(message)
        self.index = index


class TrajectoryTooShortException(Exception):
    """This exception indicates a trajectory with fewer iterates than requested."""


class TrainingDivergedException(Exception):
    """This exception indicates a NaN training loss.
    The epoch and sample index are stored on the exception."""

    def __init__(self, epoch: int, sample: int):
        super().__init__(f"Loss is not finite at epoch {epoch}, sample {sample}")
        self.epoch = epoch
        self.sample = sample


class ReferenceNotConvergedException(Exception):
    """This exception indicates that surrogate metrics were requested
    against a reference that did not converge."""


class CheckpointException(Exception):
    """This exception indicates a missing or incompatible checkpoint."""


class LabelMismatchException(Exception):
    """This exception indicates labels produced with another basis, exchange
    fraction or threshold than the benchmark was configured for."""
