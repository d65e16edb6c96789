"""Plain SGD training loop with linear learning-rate decay.

Each step draws one balanced batch, averages per-sample squared-error
gradients, and applies a single update. The frozen base matrix never moves.
Angles of a probed expert are snapshotted at logging steps for the
distribution analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adapter import AdapterLayer, forward, trainable_params
from .autograd import backward, zero_gradients
from .numkit import ConfigError, Rng
from .synth import DatasetConfig, Sample, TaskSpec, sample_batch


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    lr0: float = 3e-4
    seed: int = 0
    eval_every: int = 100
    theta_log_every: int = 100

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lr0 < 0.0:
            raise ConfigError(f"lr0 must be >= 0, got {self.lr0}")
        if self.eval_every < 1 or self.theta_log_every < 1:
            raise ConfigError("eval_every and theta_log_every must be >= 1")


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    lr: float
    loss: float  # training-batch loss at this step, before the update
    per_task_mse: dict[int, float]  # evaluation after the update


@dataclass(frozen=True)
class ThetaRecord:
    step: int
    task_id: int
    expert_index: int
    theta: float


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    if not 0 <= step < cfg.steps:
        raise ValueError(f"lr_schedule: step {step} outside [0, {cfg.steps})")
    return cfg.lr0 * (1.0 - step / cfg.steps)


def sample_mse(layer: AdapterLayer, sample: Sample) -> float:
    y_hat, _ = forward(layer, sample.x)
    return float(np.mean((y_hat - sample.y) ** 2))


def evaluate(layer: AdapterLayer, samples: list[Sample]) -> dict[int, float]:
    """Mean squared error per output component, grouped by task."""
    totals: dict[int, float] = {}
    counts: dict[int, int] = {}
    for sample in samples:
        totals[sample.task_id] = totals.get(sample.task_id, 0.0) + sample_mse(layer, sample)
        counts[sample.task_id] = counts.get(sample.task_id, 0) + 1
    return {t: totals[t] / counts[t] for t in sorted(totals)}


def train(
    layer: AdapterLayer,
    specs: list[TaskSpec],
    data_cfg: DatasetConfig,
    train_cfg: TrainConfig,
    data_rng: Rng,
    eval_samples: list[Sample],
    probe_expert: int = 0,
) -> tuple[AdapterLayer, list[MetricsRecord], list[ThetaRecord]]:
    """Run the SGD loop in place; returns the layer with metrics and angle logs.

    `data_rng` supplies every batch, so the whole run is a pure function of
    the layer, the specs, and the rng state it arrives with.
    """
    d = layer.config.d
    batch_size = data_cfg.batch_size
    metrics: list[MetricsRecord] = []
    thetas: list[ThetaRecord] = []
    params = trainable_params(layer)
    for step in range(train_cfg.steps):
        batch = sample_batch(specs, data_cfg, data_rng)
        log_theta = step % train_cfg.theta_log_every == 0 or step == train_cfg.steps - 1
        grads = zero_gradients(layer)
        loss = 0.0
        for sample in batch:
            y_hat, cache = forward(layer, sample.x)
            err = y_hat - sample.y
            loss += float(np.mean(err**2))
            sample_grads = backward(layer, cache, 2.0 * err / (d * batch_size))
            for name in grads:
                grads[name] += sample_grads[name]
            if log_theta and probe_expert in cache.decision.selected:
                pos = cache.decision.selected.index(probe_expert)
                thetas.append(
                    ThetaRecord(
                        step, sample.task_id, probe_expert, float(cache.decision.theta[pos])
                    )
                )
        loss /= batch_size
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite training loss at step {step}")
        lr = lr_schedule(step, train_cfg)
        for name in params:
            params[name] -= lr * grads[name]
        if step % train_cfg.eval_every == 0 or step == train_cfg.steps - 1:
            metrics.append(MetricsRecord(step, lr, loss, evaluate(layer, eval_samples)))
    return layer, metrics, thetas
