"""Command line entry point: corpus generation, labeling, training and benchmarks"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import torch

from .bench import BenchConfig, bench_run
from .chemio import emit_xyz, parse_xyz, read_basis_file
from .context import build_context
from .dataset import (
    generate_corpus,
    label_dataset,
    label_metadata,
    label_molecule,
    load_base_molecules,
    load_labels,
    save_labels,
    split_by_heavy_atoms,
)
from .exchange import fetch_basis
from .guess import CLASSICAL_GUESSES, AtomicDensityTable, classical_guess
from .metrics import evaluate_guess
from .model import ANSATZES, GuessModel, load_checkpoint, save_checkpoint
from .models import ScfOptions
from .scf import scf_run, trajectory_to_json
from .train import TrainConfig, pretrain, sail_finetune

logger = logging.getLogger(__package__)


def _read_molecule(path: str):
    return parse_xyz(Path(path).read_text(), name=Path(path).stem)


def _read_json(path: Optional[str]) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_corpus(args) -> int:
    corpus = generate_corpus(load_base_molecules(), args.copies, args.amplitude, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for molecule in corpus:
        (out / f"{molecule.name}.xyz").write_text(emit_xyz(molecule))
    logger.info("Wrote %i geometries to %s", len(corpus), out)
    return 0


def cmd_label(args) -> int:
    options = ScfOptions(exchange_fraction=args.alpha)
    basis_text = read_basis_file()
    molecules = [_read_molecule(str(path)) for path in sorted(Path(args.corpus).glob("*.xyz"))]
    samples, excluded = label_dataset(molecules, options, basis_text=basis_text, logger=logger)
    save_labels(samples, args.out, label_metadata(options, basis_text))
    for name in excluded:
        print(f"excluded: {name}")
    return 0


def cmd_scf(args) -> int:
    options = ScfOptions(exchange_fraction=args.alpha, diis_enabled=not args.no_diis)
    molecule = _read_molecule(args.molecule)
    ctx = build_context(molecule, logger=logger)
    table = AtomicDensityTable(args.alpha)
    trajectory = scf_run(classical_guess(args.guess, ctx, table), ctx, options, logger=logger)
    text = json.dumps(trajectory_to_json(trajectory), indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0 if trajectory.converged else 1


def _training_data(args, config: TrainConfig):
    basis_text = read_basis_file()
    options = ScfOptions(exchange_fraction=config.exchange_fraction)
    metadata = label_metadata(options, basis_text)
    splits = split_by_heavy_atoms(load_labels(args.labels, metadata, basis_text, logger))
    table = AtomicDensityTable(config.exchange_fraction, basis_text, logger)
    return splits, table, metadata


def _save_training(args, model: GuessModel, history, metadata: dict, config: TrainConfig):
    save_checkpoint(
        model,
        args.out,
        {
            "basis": metadata["basis"],
            "alpha": config.exchange_fraction,
            "seed": config.seed,
            "stage": config.stage,
            "steps": config.steps,
        },
    )
    if args.history:
        history.to_csv(args.history, index=False)


def cmd_pretrain(args) -> int:
    config = TrainConfig.deserialize({**_read_json(args.config), "stage": "pretrain"})
    splits, table, metadata = _training_data(args, config)
    model = GuessModel(args.ansatz, seed=config.seed)
    model, history = pretrain(splits["train"], model, config, table, splits["val"], logger)
    _save_training(args, model, history, metadata, config)
    return 0


def cmd_sail(args) -> int:
    config = TrainConfig.deserialize({**_read_json(args.config), "stage": "sail"})
    splits, table, metadata = _training_data(args, config)
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        logger.info("No checkpoint given, finetuning an identity model (single stage)")
        model = GuessModel(args.ansatz, seed=config.seed)
    model, history = sail_finetune(splits["train"], model, config, table, splits["val"], logger)
    _save_training(args, model, history, metadata, config)
    return 0


def cmd_bench(args) -> int:
    config = BenchConfig.deserialize(_read_json(args.config))
    _, failures = bench_run(config, args.out, logger)
    if args.assert_ and failures:
        for failure in failures:
            print(failure, file=sys.stderr)
        return 1
    return 0


def cmd_metrics(args) -> int:
    options = ScfOptions(exchange_fraction=args.alpha)
    table = AtomicDensityTable(args.alpha)
    molecule = _read_molecule(args.molecule)
    sample, _ = label_molecule(molecule, options, table, logger=logger)
    if sample is None:
        print(f"{molecule.name}: no convergence from SAD", file=sys.stderr)
        return 1
    guess = args.guess
    if guess not in CLASSICAL_GUESSES:
        guess, _ = load_checkpoint(guess)
    with torch.no_grad():
        record = evaluate_guess(guess, sample, table, options, logger=logger)
    print(json.dumps(record.row(), indent=1))
    return 0


def cmd_fetch_basis(args) -> int:
    text = asyncio.run(fetch_basis(args.name, args.elements.split(",")))
    if text is None:
        print(f"basis {args.name} not available", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pysail", description="Solver-aligned initial guesses for SCF"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    corpus = commands.add_parser("corpus", help="write perturbed geometries")
    corpus.add_argument("--out", required=True)
    corpus.add_argument("--copies", type=int, default=12)
    corpus.add_argument("--amplitude", type=float, default=0.05, help="Bohr")
    corpus.add_argument("--seed", type=int, default=0)
    corpus.set_defaults(handler=cmd_corpus)

    label = commands.add_parser("label", help="converge every geometry from SAD")
    label.add_argument("--corpus", required=True)
    label.add_argument("--out", required=True)
    label.add_argument("--alpha", type=float, default=1.0, help="exchange fraction")
    label.set_defaults(handler=cmd_label)

    scf = commands.add_parser("scf", help="run one SCF and print its trajectory")
    scf.add_argument("--molecule", required=True)
    scf.add_argument("--guess", choices=CLASSICAL_GUESSES, default="sad")
    scf.add_argument("--alpha", type=float, default=1.0)
    scf.add_argument("--no-diis", action="store_true")
    scf.add_argument("--out")
    scf.set_defaults(handler=cmd_scf)

    for name, handler, text in (
        ("pretrain", cmd_pretrain, "fit a guess model to converged labels"),
        ("sail", cmd_sail, "finetune through unrolled SCF steps"),
    ):
        stage = commands.add_parser(name, help=text)
        stage.add_argument("--config", help="JSON training config")
        stage.add_argument("--labels", required=True)
        stage.add_argument("--out", required=True, help="checkpoint JSON")
        stage.add_argument("--history", help="CSV history")
        stage.add_argument("--ansatz", choices=ANSATZES, default="delta_density")
        if name == "sail":
            stage.add_argument("--checkpoint", help="pretrained model; omit for single stage")
        stage.set_defaults(handler=handler)

    bench = commands.add_parser("bench", help="benchmark guesses on labeled molecules")
    bench.add_argument("--config", required=True)
    bench.add_argument("--out", required=True)
    bench.add_argument("--assert", dest="assert_", action="store_true")
    bench.set_defaults(handler=cmd_bench)

    metrics = commands.add_parser("metrics", help="metrics of one guess on one molecule")
    metrics.add_argument("--guess", required=True, help="checkpoint path or classical kind")
    metrics.add_argument("--molecule", required=True)
    metrics.add_argument("--alpha", type=float, default=1.0)
    metrics.set_defaults(handler=cmd_metrics)

    fetch = commands.add_parser("fetch-basis", help="download a basis from the Basis Set Exchange")
    fetch.add_argument("--name", default="sto-3g")
    fetch.add_argument("--elements", required=True, help="comma separated symbols")
    fetch.add_argument("--out")
    fetch.set_defaults(handler=cmd_fetch_basis)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler()
    handler.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.handler(args)
    except Exception:
        logger.exception("pysail %s failed", args.command)
        raise
    finally:
        logger.removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
