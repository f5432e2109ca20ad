from .chemio import load_basis, parse_xyz, perturb_geometry, read_basis_file
from .context import BasisContext, build_context
from .guess import AtomicDensityTable, classical_guess, model_guess, purify
from .model import GuessModel, load_checkpoint, save_checkpoint
from .models import Molecule, ScfOptions, ScfTrajectory
from .scf import scf_run
