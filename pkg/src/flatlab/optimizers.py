"""Base optimizers, the two flat-minima mechanisms, and the training loops.

Three pieces compose freely: plain first-order steps (sgd, sgd-momentum,
adam), a worst-case-perturbation step that evaluates the gradient twice
(once at the parameters, once at a point pushed distance rho up the local
gradient direction), and a cumulative running average of iterates. Mode
"wasam" applies the running average to the perturbed-step trajectory; the
average is a pure observer and never feeds back into the updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models
from .data import Dataset, sample_batches
from .errors import ConfigError, DivergenceError
from .losses import analytic_eval
from .models import Gradient, Model
from .params import ParameterVector, Segment
from .rng import RngStream

FLAT_MODES = ("baseline", "swa", "sam", "wasam")
BASE_KINDS = ("sgd", "sgd-momentum", "adam")
SCHEDULES = ("constant", "cosine")


@dataclass
class OptimizerConfig:
    """Base-optimizer settings plus the training budget."""

    base: str = "sgd"
    lr: float = 0.1
    schedule: str = "constant"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 10
    batch_size: int = 32

    def validate(self) -> None:
        if self.base not in BASE_KINDS:
            raise ConfigError(f"unknown base optimizer {self.base!r}; known: {BASE_KINDS}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; known: {SCHEDULES}")
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be >= 1")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum and weight decay must be >= 0")


def learning_rate(config: OptimizerConfig, step: int, total_steps: int) -> float:
    """Step size for the 0-based ``step`` out of ``total_steps``.

    The cosine schedule is lr * (1 + cos(pi * step / total_steps)) / 2,
    which is non-increasing and strictly positive at every executed step.
    """
    if config.schedule == "constant":
        return config.lr
    return config.lr * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


@dataclass
class OptimizerState:
    """Mutable per-run state of the base optimizer."""

    step: int = 0
    momentum_buffer: np.ndarray | None = None
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None


def base_step(
    state: OptimizerState,
    params: ParameterVector,
    grad: Gradient,
    lr: float,
    config: OptimizerConfig,
) -> None:
    """Apply one base-optimizer update to ``params`` in place.

    Weight decay is coupled: it is added to the gradient before the update
    rule, for adam as well. Adam uses bias-corrected moments with epsilon
    outside the square root.
    """
    g = grad.values
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient passed to base_step")
    if config.weight_decay:
        g = g + config.weight_decay * params.values
    if config.base == "sgd":
        params.values -= lr * g
    elif config.base == "sgd-momentum":
        if state.momentum_buffer is None:
            state.momentum_buffer = np.zeros_like(params.values)
        state.momentum_buffer *= config.momentum
        state.momentum_buffer += g
        params.values -= lr * state.momentum_buffer
    else:  # adam
        if state.adam_m is None:
            state.adam_m = np.zeros_like(params.values)
            state.adam_v = np.zeros_like(params.values)
        t = state.step + 1
        state.adam_m *= config.beta1
        state.adam_m += (1.0 - config.beta1) * g
        state.adam_v *= config.beta2
        state.adam_v += (1.0 - config.beta2) * g * g
        m_hat = state.adam_m / (1.0 - config.beta1**t)
        v_hat = state.adam_v / (1.0 - config.beta2**t)
        params.values -= lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    state.step += 1


def sam_perturbation(grad: np.ndarray, rho: float) -> np.ndarray:
    """First-order worst-case perturbation: rho * g / ||g||, or 0 for g = 0.

    The zero-gradient convention keeps the map continuous with the rho -> 0
    limit and avoids spurious updates at critical points.
    """
    if rho < 0:
        raise ConfigError("rho must be >= 0")
    norm = float(np.linalg.norm(grad))
    if rho == 0.0 or norm == 0.0:
        return np.zeros_like(grad)
    return (rho / norm) * grad


@dataclass
class SamStepRecord:
    """What one perturbed-gradient step did."""

    perturbation: np.ndarray
    grad_norm: float  # gradient norm at the unperturbed parameters
    perturbed_gradient: Gradient


def sam_step(
    state: OptimizerState,
    objective,
    params: ParameterVector,
    batch,
    rho: float,
    lr: float,
    config: OptimizerConfig,
) -> SamStepRecord:
    """One sharpness-aware update: ascend rho along the gradient, take the
    gradient there, and apply the base step at the original parameters.

    Both gradient evaluations use the same batch (exactly two evaluations
    per step). With rho = 0 the trajectory is bit-identical to the base
    optimizer's.
    """
    g1 = objective.gradient(params, batch)
    eps = sam_perturbation(g1.values, rho)
    probe = ParameterVector(params.values + eps, params.segments)
    g2 = objective.gradient(probe, batch)
    base_step(state, params, g2, lr, config)
    return SamStepRecord(eps, float(np.linalg.norm(g1.values)), g2)


@dataclass
class AveragedState:
    """Cumulative running mean of iterates: theta_avg <- (theta_avg*k + theta)/(k+1)."""

    params: ParameterVector | None = None
    count: int = 0
    start_epoch: int = 0
    freq: int = 1


def average_update(avg: AveragedState, current: ParameterVector, epoch: int, iteration: int) -> AveragedState:
    """Fold ``current`` into the running mean when the gate is open.

    Called every iteration; it only averages when ``epoch`` has reached the
    start epoch and ``iteration`` is a multiple of the update frequency.
    """
    if epoch < avg.start_epoch or iteration % avg.freq != 0:
        return avg
    if avg.count == 0:
        avg.params = current.copy()
    else:
        k = avg.count
        avg.params.values[:] = (avg.params.values * k + current.values) / (k + 1)
    avg.count += 1
    return avg


def swa_start_epoch(frac: float, epochs: int) -> int:
    """First epoch (0-based) that participates in averaging."""
    if not 0.0 <= frac:
        raise ConfigError("averaging start fraction must be >= 0")
    start = int(np.floor(frac * epochs))
    if start >= epochs:
        raise ConfigError(
            f"averaging start epoch {start} leaves an empty averaging window (epochs={epochs})"
        )
    return start


class ModelObjective:
    """Gradient oracle for a model, with an evaluation counter."""

    def __init__(self, model: Model):
        self.model = model
        self.grad_evals = 0

    def gradient(self, params: ParameterVector, batch) -> Gradient:
        self.grad_evals += 1
        return models.gradient(self.model, params, batch)


class AnalyticObjective:
    """Gradient oracle for an analytic loss, optionally with seeded noise.

    The additive Gaussian gradient noise emulates minibatch stochasticity
    on closed-form losses; it is an experimental device of this library,
    drawn from its own stream so runs stay reproducible.
    """

    def __init__(self, loss, noise_sigma: float = 0.0, rng: RngStream | None = None):
        if noise_sigma < 0:
            raise ConfigError("noise sigma must be >= 0")
        if noise_sigma > 0 and rng is None:
            raise ConfigError("gradient noise needs an RngStream")
        self.loss = loss
        self.noise_sigma = noise_sigma
        self._gen = rng.split("grad-noise").generator() if rng is not None else None
        self.grad_evals = 0

    def gradient(self, params: ParameterVector, batch=None) -> Gradient:
        self.grad_evals += 1
        _, g = analytic_eval(self.loss, params.values)
        if self.noise_sigma > 0:
            g = g + self.noise_sigma * self._gen.standard_normal(g.shape)
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite analytic gradient")
        return Gradient(np.asarray(g, dtype=np.float64), 1)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float = float("nan")
    train_metric: float = float("nan")
    val_loss: float = float("nan")
    val_metric: float = float("nan")


@dataclass
class TrainingResult:
    """Outcome of one training run."""

    final: ParameterVector
    averaged: ParameterVector | None
    history: list[EpochStats]
    grad_evals: int
    steps: int
    diverged: bool
    averaging_events: int
    iterates: list[np.ndarray] | None = None


def _check_mode(mode: str) -> tuple[bool, bool]:
    if mode not in FLAT_MODES:
        raise ConfigError(f"unknown flat mode {mode!r}; known: {FLAT_MODES}")
    uses_sam = mode in ("sam", "wasam")
    uses_avg = mode in ("swa", "wasam")
    return uses_sam, uses_avg


def run_training(
    model: Model,
    params0: ParameterVector,
    dataset: Dataset,
    config: OptimizerConfig,
    *,
    mode: str = "baseline",
    rho: float = 0.0,
    swa_start_frac: float = 0.75,
    swa_freq: int | None = None,
    rng: RngStream,
    record_iterates: bool = False,
    eval_splits: tuple[str, ...] = ("train", "val"),
) -> TrainingResult:
    """Train a model for ``config.epochs`` epochs in one of the four modes.

    All modes consume the same batch sequence for a given ``rng``, so a
    rho = 0 "sam" run replays the base trajectory bit for bit and a "wasam"
    run shares its non-averaged iterates with the "sam" run. Divergence
    aborts the run and reports the last finite parameters.
    """
    config.validate()
    uses_sam, uses_avg = _check_mode(mode)
    if uses_sam and rho < 0:
        raise ConfigError("rho must be >= 0")
    train_idx = dataset.split_indices("train")
    if config.batch_size > train_idx.size:
        raise ConfigError("batch size exceeds the training split")
    ipe = int(np.ceil(train_idx.size / config.batch_size))
    total_steps = config.epochs * ipe
    freq = swa_freq if swa_freq is not None else ipe
    if freq < 1:
        raise ConfigError("averaging frequency must be >= 1")
    avg = AveragedState(start_epoch=swa_start_epoch(swa_start_frac, config.epochs), freq=freq) if uses_avg else None

    params = params0.copy()
    objective = ModelObjective(model)
    state = OptimizerState()
    batch_rng = rng.split("batches")
    history: list[EpochStats] = []
    iterates: list[np.ndarray] | None = [] if record_iterates else None
    iteration = 0
    steps_done = 0
    diverged = False

    for epoch in range(config.epochs):
        for batch in sample_batches(dataset, "train", config.batch_size, batch_rng, epoch):
            last_good = params.values.copy()
            lr = learning_rate(config, iteration, total_steps)
            iteration += 1
            try:
                if uses_sam:
                    sam_step(state, objective, params, batch, rho, lr, config)
                else:
                    base_step(state, params, objective.gradient(params, batch), lr, config)
            except DivergenceError:
                params.values[:] = last_good
                diverged = True
                break
            if not np.all(np.isfinite(params.values)):
                params.values[:] = last_good
                diverged = True
                break
            steps_done += 1
            if avg is not None:
                average_update(avg, params, epoch, iteration)
            if iterates is not None:
                iterates.append(params.values.copy())
        stats = EpochStats(epoch)
        if model.has_batch_norm:
            models.recompute_bn_stats(model, params, dataset)
        for split in eval_splits:
            if split not in dataset.splits or dataset.split_indices(split).size == 0:
                continue
            loss, met = models.evaluate(model, params, dataset, split)
            setattr(stats, f"{split}_loss", loss)
            setattr(stats, f"{split}_metric", met)
        history.append(stats)
        if diverged:
            break

    averaged = avg.params if (avg is not None and avg.count > 0) else None
    return TrainingResult(
        final=params,
        averaged=averaged,
        history=history,
        grad_evals=objective.grad_evals,
        steps=steps_done,
        diverged=diverged,
        averaging_events=avg.count if avg is not None else 0,
        iterates=iterates,
    )


def toy_params(theta0) -> ParameterVector:
    """Wrap a point of an analytic loss as a one-segment parameter vector."""
    arr = np.atleast_1d(np.asarray(theta0, dtype=np.float64))
    return ParameterVector(arr.copy(), [Segment("theta", 0, arr.shape)])


def run_analytic(
    loss,
    theta0,
    config: OptimizerConfig,
    *,
    mode: str = "baseline",
    rho: float = 0.0,
    swa_start_frac: float = 0.75,
    swa_freq: int = 1,
    noise_sigma: float = 0.0,
    rng: RngStream | None = None,
    record_iterates: bool = False,
) -> TrainingResult:
    """Optimize an analytic loss; one iteration plays the role of one epoch.

    Uses the exact closed-form gradient (plus optional seeded noise), so
    trajectories can be replayed by a few-line loop as an oracle.
    """
    config.validate()
    uses_sam, uses_avg = _check_mode(mode)
    iters = config.epochs
    avg = AveragedState(start_epoch=swa_start_epoch(swa_start_frac, iters), freq=swa_freq) if uses_avg else None

    params = toy_params(theta0)
    objective = AnalyticObjective(loss, noise_sigma, rng)
    state = OptimizerState()
    iterates: list[np.ndarray] | None = [] if record_iterates else None
    steps_done = 0
    diverged = False

    for it in range(iters):
        last_good = params.values.copy()
        lr = learning_rate(config, it, iters)
        try:
            if uses_sam:
                sam_step(state, objective, params, None, rho, lr, config)
            else:
                base_step(state, params, objective.gradient(params), lr, config)
        except DivergenceError:
            params.values[:] = last_good
            diverged = True
            break
        if not np.all(np.isfinite(params.values)):
            params.values[:] = last_good
            diverged = True
            break
        steps_done += 1
        if avg is not None:
            average_update(avg, params, it, it + 1)
        if iterates is not None:
            iterates.append(params.values.copy())

    averaged = avg.params if (avg is not None and avg.count > 0) else None
    return TrainingResult(
        final=params,
        averaged=averaged,
        history=[],
        grad_evals=objective.grad_evals,
        steps=steps_done,
        diverged=diverged,
        averaging_events=avg.count if avg is not None else 0,
        iterates=iterates,
    )
