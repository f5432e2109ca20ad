import sys
import json
import logging
from pathlib import Path
from src.pysail import AtomicDensityTable, GuessModel, build_context, classical_guess, parse_xyz
from src.pysail.guess import model_guess
from src.pysail.models import ScfOptions
from src.pysail.scf import scf_run

MODEL_FILE = "model.json"
logger = logging.getLogger("src.pysail")
console_handler = logging.StreamHandler()
console_handler.setLevel(logging.DEBUG)
logger.addHandler(console_handler)
logger.setLevel(logging.DEBUG)


def go():
    path = sys.argv[1] if len(sys.argv) > 1 else input("Path to an XYZ file: ")
    molecule = parse_xyz(Path(path).read_text(), name=Path(path).stem)
    print(molecule)

    ctx = build_context(molecule, logger=logger)
    print(f"Basis functions: {ctx.n_basis}, occupied orbitals: {ctx.n_occ}")
    table = AtomicDensityTable(logger=logger).build(molecule.numbers)
    options = ScfOptions()

    guesses = {kind: (classical_guess(kind, ctx, table), 0) for kind in ("core", "gwh", "sad")}
    if Path(MODEL_FILE).exists():
        data = json.loads(Path(MODEL_FILE).read_text())
        model = GuessModel.deserialize(data)
        print(f"Loaded {model.ansatz} model from {MODEL_FILE}")
        P0, spent, fallback = model_guess(model, molecule, ctx, table, logger=logger)
        if fallback:
            print("Model output was not finite, using SAD")
        guesses[model.ansatz] = (P0, spent)

    for name, (P0, spent) in guesses.items():
        trajectory = scf_run(P0, ctx, options, guess_fock_builds=spent, logger=logger)
        print(
            f"{name:>14}: {'converged' if trajectory.converged else 'not converged'}"
            f" in {len(trajectory.iterates)} iterations"
            f" ({trajectory.fock_build_count} Fock builds),"
            f" E = {float(trajectory.final.energy):.10f}"
        )


go()
