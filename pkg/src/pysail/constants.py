"""Physical constants, element data and shared numerical floors."""

import torch

bse_api_base = "https://www.basissetexchange.org/api"

BOHR_PER_ANGSTROM = 1.8897259886

DTYPE = torch.float64

ELEMENTS = {"H": 1, "Li": 3, "C": 6, "N": 7, "O": 8, "F": 9}
SYMBOLS = {number: symbol for symbol, number in ELEMENTS.items()}
SUPPORTED_NUMBERS = tuple(sorted(SYMBOLS))

MIN_DISTANCE = 0.1  # Bohr
LINEAR_DEPENDENCE_FLOOR = 1e-8
DEFAULT_MAX_ERI_BYTES = 512 * 1024**2

GWH_CONSTANT = 1.75
DIVERGENCE_ENERGY = 1e6
