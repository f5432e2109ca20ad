"""Surrogate pretraining and solver-aligned finetuning of guess models"""

import copy
import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple, TypedDict

import pandas as pd
import torch
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR
from torch.optim.swa_utils import AveragedModel, get_ema_multi_avg_fn

from .autodiff import Tape, grad
from .dataset import LabeledSample
from .exceptions import NonFiniteGradientException, TrainingDivergedException
from .guess import AtomicDensityTable, predict_raw
from .losses import LOSS_KINDS, loss_surrogate_matrix, trajectory_loss
from .metrics import mean_eric
from .model import GuessModel
from .models import ScfOptions

STAGES = ("pretrain", "sail")
DEFAULT_CLIP = {"pretrain": 10.0, "sail": 1.0}
DEFAULT_LEARNING_RATE = {"pretrain": 1e-3, "sail": 2e-4}
HISTORY_COLUMNS = ["epoch", "loss", "val_loss", "val_eric", "grad_norm", "tape_peak", "skipped"]

CURRENT_CONFIG_VERSION = 1


class TrainConfigData(TypedDict):
    """TrainConfig in serialized form"""

    version: int
    stage: str
    steps: int
    epochs: int
    learning_rate: float
    min_learning_rate: float
    warmup_steps: int
    ema_decay: float
    grad_clip_norm: float
    weight_decay: float
    batch_size: int
    seed: int
    loss_kind: str
    validation_every: int
    exchange_fraction: float


@dataclass
class TrainConfig:
    """Hyperparameters of one training stage; None picks the stage default"""

    stage: str = "pretrain"
    steps: int = 10
    epochs: int = 50
    learning_rate: Optional[float] = None
    min_learning_rate: float = 1e-6
    warmup_steps: int = 10
    ema_decay: float = 0.995
    grad_clip_norm: Optional[float] = None
    weight_decay: float = 1e-3
    batch_size: int = 1
    seed: int = 0
    loss_kind: str = "gradient_rms"
    validation_every: int = 5
    exchange_fraction: float = 1.0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LEARNING_RATE[self.stage]
        if self.grad_clip_norm is None:
            self.grad_clip_norm = DEFAULT_CLIP[self.stage]
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.epochs < 0 or self.warmup_steps < 0:
            raise ValueError("epochs and warmup_steps must be non-negative")
        if self.learning_rate < 0 or self.min_learning_rate < 0 or self.grad_clip_norm <= 0:
            raise ValueError("rates must be positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")

    def serialize(self) -> TrainConfigData:
        return {"version": CURRENT_CONFIG_VERSION, **asdict(self)}

    @classmethod
    def deserialize(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        data.pop("version", None)
        return cls(**data)


def warmup_cosine(warmup_steps: int, total_steps: int, min_ratio: float):
    """Learning-rate factor: linear warmup, then cosine decay to min_ratio"""

    def factor(step: int) -> float:
        if step < warmup_steps:
            return (step + 1) / warmup_steps
        progress = min(1.0, (step - warmup_steps) / max(1, total_steps - warmup_steps))
        return min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress))

    return factor


class _Trainer:
    """Optimizer, schedule and EMA shared by both stages"""

    def __init__(self, model: GuessModel, config: TrainConfig, n_samples: int):
        total = config.epochs * n_samples
        if total and config.warmup_steps >= total:
            raise ValueError(f"warmup of {config.warmup_steps} steps exceeds {total} total steps")
        self.config = config
        self.model = model
        self.optimizer = AdamW(
            model.parameters(),
            lr=config.learning_rate,
            betas=(0.9, 0.999),
            weight_decay=config.weight_decay,
        )
        min_ratio = (
            config.min_learning_rate / config.learning_rate if config.learning_rate > 0 else 1.0
        )
        self.scheduler = LambdaLR(
            self.optimizer, warmup_cosine(config.warmup_steps, total, min(1.0, min_ratio))
        )
        self.ema = AveragedModel(model, multi_avg_fn=get_ema_multi_avg_fn(config.ema_decay))
        self.generator = torch.Generator().manual_seed(config.seed)

    def order(self, n_samples: int) -> List[int]:
        return torch.randperm(n_samples, generator=self.generator).tolist()

    def step(self) -> float:
        norm = torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip_norm)
        self.optimizer.step()
        self.scheduler.step()
        self.ema.update_parameters(self.model)
        return float(norm)

    def result(self) -> GuessModel:
        return self.ema.module


def _history(rows: list) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=HISTORY_COLUMNS)


def _target(model: GuessModel, sample: LabeledSample) -> torch.Tensor:
    return sample.density if model.ansatz == "delta_density" else sample.fock


def surrogate_loss(
    model: GuessModel, sample: LabeledSample, table: AtomicDensityTable, alpha: float
) -> torch.Tensor:
    raw = predict_raw(model, sample.molecule, sample.ctx, table, alpha)
    return loss_surrogate_matrix(raw, _target(model, sample))


def pretrain(
    dataset: Sequence[LabeledSample],
    model: GuessModel,
    config: TrainConfig,
    table: AtomicDensityTable,
    validation: Sequence[LabeledSample] = (),
    logger: logging.Logger = None,
) -> Tuple[GuessModel, pd.DataFrame]:
    """Fits the raw prediction to converged labels; returns the EMA model and history"""
    logger = logger or logging.getLogger(__package__)
    torch.manual_seed(config.seed)
    model = copy.deepcopy(model)
    trainer = _Trainer(model, config, len(dataset))
    alpha = config.exchange_fraction
    rows = []
    for epoch in range(config.epochs):
        losses, norms = [], []
        for index in trainer.order(len(dataset)):
            loss = surrogate_loss(model, dataset[index], table, alpha)
            if not bool(torch.isfinite(loss)):
                raise TrainingDivergedException(epoch, index)
            trainer.optimizer.zero_grad()
            loss.backward()
            norms.append(trainer.step())
            losses.append(loss.detach().item())
        with torch.no_grad():
            val_loss = (
                sum(float(surrogate_loss(trainer.result(), s, table, alpha)) for s in validation)
                / len(validation)
                if validation
                else float("nan")
            )
        rows.append(
            [epoch, _mean(losses), val_loss, float("nan"), _mean(norms), 0, 0]
        )
        logger.info("Pretrain epoch %i: loss %.6e, val %.6e", epoch, rows[-1][1], val_loss)
    return trainer.result(), _history(rows)


def sail_finetune(
    dataset: Sequence[LabeledSample],
    model: GuessModel,
    config: TrainConfig,
    table: AtomicDensityTable,
    validation: Sequence[LabeledSample] = (),
    logger: logging.Logger = None,
) -> Tuple[GuessModel, pd.DataFrame]:
    """Label-free finetuning through config.steps unrolled SCF steps.

    Samples whose backward pass met near-degenerate eigenpairs or a
    purification tie are skipped and counted."""
    logger = logger or logging.getLogger(__package__)
    torch.manual_seed(config.seed)
    model = copy.deepcopy(model)
    trainer = _Trainer(model, config, len(dataset))
    options = ScfOptions(exchange_fraction=config.exchange_fraction)
    loss_fn = trajectory_loss(config.steps, config.loss_kind)
    parameters = dict(model.named_parameters())
    rows = []
    for epoch in range(config.epochs):
        losses, norms, peak, skipped = [], [], 0, 0
        for index in trainer.order(len(dataset)):
            sample = dataset[index]
            tape = Tape()
            try:
                loss, gradients = grad(
                    loss_fn, model, sample.molecule, sample.ctx, config.steps, table, options, tape
                )
            except NonFiniteGradientException as ex:
                raise TrainingDivergedException(epoch, index) from ex
            if tape.flagged:
                skipped += 1
                logger.warning("Skipping %s: degenerate spectrum", sample.molecule.name)
                continue
            if not bool(torch.isfinite(loss)):
                raise TrainingDivergedException(epoch, index)
            for name, parameter in parameters.items():
                parameter.grad = gradients[name]
            norms.append(trainer.step())
            losses.append(loss.detach().item())
            peak = max(peak, tape.peak_bytes)
        val_eric = float("nan")
        if validation and (epoch + 1) % config.validation_every == 0:
            val_eric = mean_eric(trainer.result(), validation, table, options)
        rows.append([epoch, _mean(losses), float("nan"), val_eric, _mean(norms), peak, skipped])
        logger.info(
            "SAIL epoch %i: loss %.6e, val ERIC %.4f, %i skipped", epoch, rows[-1][1], val_eric, skipped
        )
    return trainer.result(), _history(rows)


def _mean(values: list) -> float:
    return sum(values) / len(values) if values else float("nan")
