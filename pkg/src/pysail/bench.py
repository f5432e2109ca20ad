"""Benchmark of initial guesses over a labeled split"""

import asyncio
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, TypedDict, Union

import numpy as np
import pandas as pd
import torch

from .chemio import read_basis_file
from .dataset import LabeledSample, label_metadata, load_labels, split_by_heavy_atoms
from .exceptions import LabelMismatchException
from .guess import CLASSICAL_GUESSES, AtomicDensityTable
from .metrics import aggregate, evaluate_guess, records_frame
from .model import GuessModel, load_checkpoint
from .models import MetricsRecord, ScfOptions
from .train import surrogate_loss

THREADS_VARIABLE = "PYSAIL_THREADS"
REFERENCE_GUESS = "sad"
CURRENT_BENCH_VERSION = 1
_TOLERANCE = 1e-12


def default_workers() -> int:
    value = os.environ.get(THREADS_VARIABLE)
    return max(1, int(value)) if value else min(4, os.cpu_count() or 1)


class BenchConfigData(TypedDict):
    """BenchConfig in serialized form"""

    version: int
    labels: str
    checkpoints: Dict[str, str]
    guesses: List[str]
    split: str
    workers: int
    exchange_fraction: float
    max_mean_eric: Optional[float]
    pretrained: Optional[str]
    finetuned: Optional[str]
    horizons: Dict[str, int]
    horizon_tolerance: float


@dataclass
class BenchConfig:
    """What to benchmark: label directory, checkpoints by name and classical guesses.

    pretrained and finetuned name two checkpoints whose stages are compared;
    horizons maps checkpoint names to the number of unrolled steps they were
    finetuned with."""

    labels: str
    checkpoints: Dict[str, str] = field(default_factory=dict)
    guesses: List[str] = field(default_factory=lambda: list(CLASSICAL_GUESSES))
    split: str = "test"
    workers: int = field(default_factory=default_workers)
    exchange_fraction: float = 1.0
    max_mean_eric: Optional[float] = None
    pretrained: Optional[str] = None
    finetuned: Optional[str] = None
    horizons: Dict[str, int] = field(default_factory=dict)
    horizon_tolerance: float = 0.05

    def __post_init__(self):
        unknown = set(self.guesses) - set(CLASSICAL_GUESSES)
        if unknown:
            raise ValueError(f"unknown guess kinds {sorted(unknown)}")
        if self.split not in ("train", "val", "test", "all"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if (self.pretrained is None) != (self.finetuned is None):
            raise ValueError("pretrained and finetuned are compared together")
        named = {self.pretrained, self.finetuned, *self.horizons} - {None}
        if named - set(self.checkpoints):
            raise ValueError(f"no checkpoints named {sorted(named - set(self.checkpoints))}")
        if len(self.horizons) == 1:
            raise ValueError("a horizon comparison needs at least two checkpoints")
        if any(steps < 1 for steps in self.horizons.values()) or self.horizon_tolerance < 0:
            raise ValueError("horizons must be positive and the tolerance non-negative")

    def serialize(self) -> BenchConfigData:
        return {"version": CURRENT_BENCH_VERSION, **asdict(self)}

    @classmethod
    def deserialize(cls, data: dict) -> "BenchConfig":
        data = dict(data)
        data.pop("version", None)
        if THREADS_VARIABLE in os.environ:
            data.pop("workers", None)
        return cls(**data)


async def bench_rows(
    samples: Sequence[LabeledSample],
    guesses: Dict[str, Union[str, GuessModel]],
    table: AtomicDensityTable,
    options: ScfOptions,
    workers: int,
    logger: logging.Logger = None,
) -> List[MetricsRecord]:
    """Evaluates every (sample, guess) pair on worker threads"""
    table.build(z for sample in samples for z in sample.molecule.numbers)
    semaphore = asyncio.Semaphore(workers)

    async def row(sample: LabeledSample, name: str, guess) -> MetricsRecord:
        async with semaphore:
            return await asyncio.to_thread(
                evaluate_guess, guess, sample, table, options, name, logger
            )

    return list(
        await asyncio.gather(
            *(row(sample, name, guess) for sample in samples for name, guess in guesses.items())
        )
    )


def check_acceptance(frame: pd.DataFrame, max_mean_eric: Optional[float] = None) -> List[str]:
    """Messages for every violated accounting rule; empty when all hold"""
    failures = []
    for row in frame.itertuples(index=False):
        label = f"{row.molecule}/{row.guess}"
        if row.fock_builds != row.iterations + row.guess_fock_builds + row.measurement_fock_builds:
            failures.append(f"{label}: Fock-build ledger does not close")
        expected_gap = row.guess_fock_builds / row.reference_iterations
        if abs(row.eric - row.ric - expected_gap) > _TOLERANCE:
            failures.append(f"{label}: ERIC - RIC = {row.eric - row.ric}, expected {expected_gap}")
        if row.guess == REFERENCE_GUESS and abs(row.ric - 1.0) > _TOLERANCE:
            failures.append(f"{label}: reference guess has RIC {row.ric}")
    if max_mean_eric is not None:
        learned = frame[~frame["guess"].isin(CLASSICAL_GUESSES)]
        for guess, value in learned.groupby("guess")["eric"].mean().items():
            if value >= max_mean_eric:
                failures.append(f"{guess}: mean ERIC {value:.4f} is not below {max_mean_eric}")
    return failures


def _mean_surrogate(
    model: GuessModel, samples: Sequence[LabeledSample], table: AtomicDensityTable, alpha: float
) -> float:
    with torch.no_grad():
        return float(np.mean([surrogate_loss(model, s, table, alpha).item() for s in samples]))


def compare_training(
    config: BenchConfig,
    frame: pd.DataFrame,
    samples: Sequence[LabeledSample],
    guesses: Dict[str, Union[str, GuessModel]],
    table: AtomicDensityTable,
) -> dict:
    """Mean ERIC of the compared checkpoints and, for the two stages, their
    mean surrogate loss against the converged labels"""
    means = frame.groupby("guess")["eric"].mean() if len(frame) else pd.Series(dtype=float)
    comparison = {}
    if config.pretrained is not None and samples:
        stages = {"pretrain": config.pretrained, "sail": config.finetuned}
        comparison["eric"] = {stage: float(means[name]) for stage, name in stages.items()}
        comparison["surrogate"] = {
            stage: _mean_surrogate(guesses[name], samples, table, config.exchange_fraction)
            for stage, name in stages.items()
        }
    if config.horizons and samples:
        comparison["horizon_eric"] = {
            str(steps): float(means[name]) for name, steps in sorted(config.horizons.items())
        }
    return comparison


def check_comparison(comparison: dict, horizon_tolerance: float = 0.05) -> List[str]:
    """Messages for every stage or horizon comparison that goes the wrong way"""
    failures = []
    if "eric" in comparison:
        eric, surrogate = comparison["eric"], comparison["surrogate"]
        if eric["sail"] > eric["pretrain"]:
            failures.append(
                f"finetuned mean ERIC {eric['sail']:.4f} is above pretrained {eric['pretrain']:.4f}"
            )
        if eric["sail"] >= 1.0:
            failures.append(f"finetuned mean ERIC {eric['sail']:.4f} is not below the reference")
        if surrogate["sail"] < surrogate["pretrain"]:
            failures.append(
                f"finetuned surrogate loss {surrogate['sail']:.4e} is below "
                f"pretrained {surrogate['pretrain']:.4e}"
            )
    if "horizon_eric" in comparison:
        by_steps = {int(steps): value for steps, value in comparison["horizon_eric"].items()}
        longest = max(by_steps)
        for steps, value in sorted(by_steps.items()):
            if value >= 1.0:
                failures.append(f"T={steps}: mean ERIC {value:.4f} is not below the reference")
            if abs(value - by_steps[longest]) > horizon_tolerance:
                failures.append(
                    f"T={steps}: mean ERIC {value:.4f} is more than {horizon_tolerance} "
                    f"from T={longest} ({by_steps[longest]:.4f})"
                )
    return failures


def load_guesses(config: BenchConfig, metadata: dict) -> Dict[str, Union[str, GuessModel]]:
    guesses: Dict[str, Union[str, GuessModel]] = {kind: kind for kind in config.guesses}
    for name, path in sorted(config.checkpoints.items()):
        model, trained = load_checkpoint(path)
        for key in ("basis", "alpha"):
            if key in trained and trained[key] != metadata[key]:
                raise LabelMismatchException(
                    f"checkpoint {name} was trained with {key}={trained[key]!r}"
                )
        model.eval()
        guesses[name] = model
    return guesses


def bench_run(
    config: BenchConfig, out: Union[str, Path], logger: logging.Logger = None
) -> Tuple[pd.DataFrame, List[str]]:
    """Writes rows.csv, aggregate.csv and summary.json to out.

    Returns the per-row frame and the acceptance failures."""
    logger = logger or logging.getLogger(__package__)
    basis_text = read_basis_file()
    options = ScfOptions(exchange_fraction=config.exchange_fraction)
    metadata = label_metadata(options, basis_text)
    samples = load_labels(config.labels, metadata, basis_text, logger)
    if config.split != "all":
        samples = split_by_heavy_atoms(samples)[config.split]
    guesses = load_guesses(config, metadata)
    table = AtomicDensityTable(config.exchange_fraction, basis_text, logger)
    logger.info(
        "Benchmarking %i guesses on %i molecules with %i workers",
        len(guesses),
        len(samples),
        config.workers,
    )

    records = asyncio.run(bench_rows(samples, guesses, table, options, config.workers, logger))
    frame = records_frame(records)
    failures = check_acceptance(frame, config.max_mean_eric) if len(frame) else []
    comparison = compare_training(config, frame, samples, guesses, table)
    failures += check_comparison(comparison, config.horizon_tolerance)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "rows.csv", index=False)
    summary = aggregate(frame) if len(frame) else pd.DataFrame()
    summary.to_csv(out / "aggregate.csv", index=False)
    report = {
        "config": config.serialize(),
        "molecules": len(samples),
        "mean_eric": frame.groupby("guess")["eric"].mean().to_dict() if len(frame) else {},
        "mean_ric": frame.groupby("guess")["ric"].mean().to_dict() if len(frame) else {},
        "fallbacks": (
            {guess: int(n) for guess, n in frame.groupby("guess")["fallback"].sum().items()}
            if len(frame)
            else {}
        ),
        "comparison": comparison,
        "failures": failures,
    }
    (out / "summary.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    for failure in failures:
        logger.warning(failure)
    return frame, failures
