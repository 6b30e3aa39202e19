"""Loss-surface analysis around and between solutions.

Three views are provided: 1-d linear interpolations between two parameter
vectors (with a barrier report over the [0, 1] segment), 2-d surfaces in
the plane of two random directions, and a Monte-Carlo sharpness probe that
samples the loss increase inside a ball. Evaluation is driven through
small evaluator callables so the same machinery covers both the model zoo
(with batch-norm statistics recomputed at every evaluated point) and the
analytic toy losses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import models
from .data import Dataset
from .errors import DivergenceError
from .models import Model
from .params import ParameterVector, Segment
from .rng import RngStream

NORMALIZATIONS = ("filter", "global", "none")
DEFAULT_ALPHA_RANGE = (-1.0, 1.5)  # interpolation axis
DEFAULT_SURFACE_RANGE = (-1.0, 1.0)
DEFAULT_SURFACE_STEPS = 20

GRID_CSV_HEADER = ("alpha", "beta", "split", "loss", "metric", "flag_nonfinite")
BARRIER_CSV_HEADER = ("alpha_star", "barrier_height", "loss_theta", "loss_theta_prime", "max_loss")


@dataclass(frozen=True)
class DirectionPair:
    """Two direction vectors spanning an evaluation plane.

    After preparation the second direction is orthogonal to the first, and
    in filter-wise mode every filter block of both directions carries the
    norm of the matching block of the center parameters.
    """

    delta: ParameterVector
    eta: ParameterVector
    orthogonalized: bool
    normalization: str


@dataclass(frozen=True)
class GridCell:
    alpha: float
    beta: float | None
    split: str
    loss: float
    metric: float
    nonfinite: bool


@dataclass
class LandscapeGrid:
    """Losses/metrics evaluated over a 1-d line or 2-d plane of points."""

    alphas: np.ndarray
    betas: np.ndarray | None
    cells: list[GridCell]
    annotations: dict[str, tuple] = field(default_factory=dict)

    @property
    def is_2d(self) -> bool:
        return self.betas is not None


@dataclass(frozen=True)
class BarrierReport:
    """Excess of the maximum interpolated loss over the endpoint losses."""

    alpha_star: float
    barrier_height: float
    loss_theta: float
    loss_theta_prime: float
    max_loss: float


def model_evaluator(
    model: Model,
    dataset: Dataset,
    splits: tuple[str, ...] = ("train", "test"),
    recompute_bn: bool = True,
):
    """Evaluator mapping raw parameter values to {split: (loss, metric)}.

    By default batch-norm statistics are recomputed from the training split
    at every evaluated point; the opt-out only makes sense for models
    without batch norm, where recomputation is a no-op anyway.
    """

    def evaluate(values: np.ndarray) -> dict[str, tuple[float, float]]:
        params = ParameterVector(values, model.segments)
        if recompute_bn and model.has_batch_norm:
            models.recompute_bn_stats(model, params, dataset)
        return {s: models.evaluate(model, params, dataset, s) for s in splits}

    return evaluate


def analytic_evaluator(loss, split: str = "train"):
    """Evaluator for an analytic loss; the metric slot is empty (nan)."""

    def evaluate(values: np.ndarray) -> dict[str, tuple[float, float]]:
        return {split: (loss.value(values), float("nan"))}

    return evaluate


def model_loss_fn(model: Model, dataset: Dataset, split: str = "train", recompute_bn: bool = True):
    """Scalar loss of raw parameter values on one split (for probes)."""

    def loss_fn(values: np.ndarray) -> float:
        params = ParameterVector(values, model.segments)
        if recompute_bn and model.has_batch_norm:
            models.recompute_bn_stats(model, params, dataset)
        return models.evaluate(model, params, dataset, split)[0]

    return loss_fn


def analytic_loss_fn(loss):
    return lambda values: loss.value(values)


def interpolation_alphas(alpha_min: float = DEFAULT_ALPHA_RANGE[0], alpha_max: float = DEFAULT_ALPHA_RANGE[1], steps: int = 26) -> np.ndarray:
    """Evenly spaced interpolation grid guaranteed to contain 0 and 1.

    Grid values within one part in 1e12 of the endpoints' special points
    are snapped exactly; 0 and 1 are inserted if the spacing misses them.
    """
    if steps < 2:
        raise ValueError("need at least 2 interpolation steps")
    alphas = np.linspace(alpha_min, alpha_max, steps)
    for special in (0.0, 1.0):
        close = np.isclose(alphas, special, rtol=0.0, atol=1e-12)
        alphas[close] = special
        if special not in alphas and alpha_min <= special <= alpha_max:
            alphas = np.sort(np.append(alphas, special))
    return alphas


def _evaluate_point(evaluate, values: np.ndarray, alpha: float, beta: float | None) -> list[GridCell]:
    try:
        results = evaluate(values)
    except DivergenceError:
        results = None
    cells = []
    if results is None:
        cells.append(GridCell(alpha, beta, "all", float("nan"), float("nan"), True))
        return cells
    for split, (loss, metric) in results.items():
        bad = not np.isfinite(loss)
        cells.append(GridCell(alpha, beta, split, float(loss), float(metric), bad))
    return cells


def interpolate(
    theta: ParameterVector,
    theta_prime: ParameterVector,
    evaluate,
    *,
    alphas: np.ndarray | None = None,
    barrier_split: str = "train",
) -> tuple[LandscapeGrid, BarrierReport]:
    """Evaluate theta(a) = (1-a) theta + a theta_prime along an alpha grid.

    At a = 0 and a = 1 the endpoint vectors are used verbatim, so those
    evaluations reproduce standalone evaluations bit for bit. The barrier
    is computed on ``barrier_split``'s loss over the closed [0, 1] segment:
    height = max loss - max(endpoint losses), which is >= 0 by construction.
    """
    if not theta.same_layout(theta_prime):
        raise ValueError("endpoints have different parameter layouts")
    if alphas is None:
        alphas = interpolation_alphas()
    alphas = np.asarray(alphas, dtype=np.float64)
    if 0.0 not in alphas or 1.0 not in alphas:
        raise ValueError("interpolation grid must include 0 and 1 exactly")

    cells: list[GridCell] = []
    for alpha in alphas:
        if alpha == 0.0:
            values = theta.values
        elif alpha == 1.0:
            values = theta_prime.values
        else:
            values = (1.0 - alpha) * theta.values + alpha * theta_prime.values
        cells.extend(_evaluate_point(evaluate, values, float(alpha), None))
    grid = LandscapeGrid(alphas, None, cells)

    path = [c for c in cells if c.split == barrier_split and 0.0 <= c.alpha <= 1.0 and not c.nonfinite]
    if not path:
        raise ValueError(f"no finite cells on split {barrier_split!r} in [0, 1]")
    loss0 = next(c.loss for c in path if c.alpha == 0.0)
    loss1 = next(c.loss for c in path if c.alpha == 1.0)
    peak = max(path, key=lambda c: c.loss)
    report = BarrierReport(
        alpha_star=peak.alpha,
        barrier_height=peak.loss - max(loss0, loss1),
        loss_theta=loss0,
        loss_theta_prime=loss1,
        max_loss=peak.loss,
    )
    return grid, report


def filter_blocks(segments: tuple[Segment, ...]) -> list[tuple[int, int]]:
    """Per-filter index ranges: rows of rank >= 2 segments (one block per
    output unit), whole segments for rank <= 1 (biases, norm parameters)."""
    blocks = []
    for seg in segments:
        if len(seg.shape) >= 2:
            row = seg.size // seg.shape[0]
            for i in range(seg.shape[0]):
                start = seg.offset + i * row
                blocks.append((start, start + row))
        else:
            blocks.append((seg.offset, seg.stop))
    return blocks


class _DegenerateDraw(Exception):
    pass


def _orthogonalize(eta: np.ndarray, delta: np.ndarray) -> None:
    """Classical Gram-Schmidt step, in place; rejects degenerate pairs."""
    denom = float(delta @ delta)
    if denom == 0.0:
        raise _DegenerateDraw
    before = float(np.linalg.norm(eta))
    eta -= (float(eta @ delta) / denom) * delta
    if float(np.linalg.norm(eta)) <= 1e-12 * before:
        raise _DegenerateDraw


def sample_plane(
    center: ParameterVector,
    rng: RngStream,
    *,
    normalization: str = "filter",
    max_retries: int = 10,
) -> DirectionPair:
    """Draw two standard-normal directions and prepare them as plane axes.

    The second direction is orthogonalized against the first and both are
    then rescaled per the normalization mode: "filter" matches each filter
    block's norm to the center's block (orthogonalization is applied per
    block so both invariants hold exactly), "global" matches whole-vector
    norms, "none" leaves the scale alone. Degenerate draws are retried a
    bounded number of times.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}; known: {NORMALIZATIONS}")
    d = len(center)
    gen = rng.generator()
    for _ in range(max_retries):
        delta = gen.standard_normal(d)
        eta = gen.standard_normal(d)
        try:
            if normalization == "filter":
                blocks = filter_blocks(center.segments)
                for start, stop in blocks:
                    _orthogonalize(eta[start:stop], delta[start:stop])
                for start, stop in blocks:
                    target = float(np.linalg.norm(center.values[start:stop]))
                    for vec in (delta, eta):
                        norm = float(np.linalg.norm(vec[start:stop]))
                        vec[start:stop] *= target / norm if norm else 0.0
            else:
                _orthogonalize(eta, delta)
                if normalization == "global":
                    target = float(np.linalg.norm(center.values))
                    for vec in (delta, eta):
                        vec *= target / float(np.linalg.norm(vec))
        except _DegenerateDraw:
            continue
        return DirectionPair(
            ParameterVector(delta, center.segments),
            ParameterVector(eta, center.segments),
            orthogonalized=True,
            normalization=normalization,
        )
    raise RuntimeError(f"no non-degenerate direction pair after {max_retries} draws")


def surface(
    center: ParameterVector,
    pair: DirectionPair,
    evaluate,
    *,
    alphas: np.ndarray | None = None,
    betas: np.ndarray | None = None,
    steps: int = DEFAULT_SURFACE_STEPS,
    value_range: tuple[float, float] = DEFAULT_SURFACE_RANGE,
) -> LandscapeGrid:
    """Evaluate f(a, b) = L(center + a*delta + b*eta) on a full 2-d grid.

    Cells are visited in row-major order (alpha outer, beta inner) and are
    independent, so the output ordering is deterministic. Non-finite
    evaluations are recorded as flagged cells, never an abort. Annotations
    mark the train-loss minimizer/maximizer and the test-metric maximizer
    when those splits are present.
    """
    if steps < 2:
        raise ValueError("need at least 2 steps per axis")
    if alphas is None:
        alphas = np.linspace(value_range[0], value_range[1], steps)
    if betas is None:
        betas = np.linspace(value_range[0], value_range[1], steps)
    alphas = np.asarray(alphas, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)

    cells: list[GridCell] = []
    for alpha in alphas:
        for beta in betas:
            values = center.values + alpha * pair.delta.values + beta * pair.eta.values
            cells.extend(_evaluate_point(evaluate, values, float(alpha), float(beta)))
    grid = LandscapeGrid(alphas, betas, cells)
    grid.annotations = _annotate(cells)
    return grid


def _annotate(cells: list[GridCell]) -> dict[str, tuple]:
    annotations: dict[str, tuple] = {}
    finite = [c for c in cells if not c.nonfinite]
    train = [c for c in finite if c.split == "train"]
    if train:
        low = min(train, key=lambda c: c.loss)
        high = max(train, key=lambda c: c.loss)
        annotations["train_loss_min"] = (low.alpha, low.beta)
        annotations["train_loss_max"] = (high.alpha, high.beta)
    scored = [c for c in finite if c.split == "test" and np.isfinite(c.metric)]
    if scored:
        best = max(scored, key=lambda c: c.metric)
        annotations["test_metric_max"] = (best.alpha, best.beta)
    return annotations


def sharpness_probe(loss_fn, center_values: np.ndarray, radius: float, n_samples: int, rng: RngStream) -> float:
    """Largest sampled loss increase within a ball of the given radius.

    Draws ``n_samples`` uniformly distributed unit directions u and returns
    max L(center + radius*u) - L(center). A radius of 0 is exactly 0.
    """
    if n_samples < 1:
        raise ValueError("need at least one probe sample")
    if radius < 0:
        raise ValueError("probe radius must be >= 0")
    if radius == 0.0:
        return 0.0
    center_values = np.asarray(center_values, dtype=np.float64)
    gen = rng.generator()
    base = float(loss_fn(center_values))
    best = -np.inf
    for _ in range(n_samples):
        u = gen.standard_normal(center_values.shape)
        norm = float(np.linalg.norm(u))
        while norm == 0.0:  # essentially impossible, but keep the contract total
            u = gen.standard_normal(center_values.shape)
            norm = float(np.linalg.norm(u))
        value = float(loss_fn(center_values + (radius / norm) * u))
        best = max(best, value - base)
    return best


def crop_grid(
    grid: LandscapeGrid,
    alpha_range: tuple[float, float] | None = None,
    beta_range: tuple[float, float] | None = None,
) -> LandscapeGrid:
    """Output-stage crop: keep cells inside the given ranges.

    Purely a filter over already-evaluated cells (annotations are
    recomputed on the survivors); evaluation itself is never affected.
    """

    def keep(c: GridCell) -> bool:
        if alpha_range and not (alpha_range[0] <= c.alpha <= alpha_range[1]):
            return False
        if beta_range and c.beta is not None and not (beta_range[0] <= c.beta <= beta_range[1]):
            return False
        return True

    cells = [c for c in grid.cells if keep(c)]
    alphas = np.array(sorted({c.alpha for c in cells}))
    betas = None
    if grid.is_2d:
        betas = np.array(sorted({c.beta for c in cells}))
    out = LandscapeGrid(alphas, betas, cells)
    out.annotations = _annotate(cells)
    return out


def _fmt(x: float | None) -> str:
    """Shortest round-trip decimal for finite floats, empty otherwise."""
    if x is None:
        return ""
    x = float(x)
    if not np.isfinite(x):
        return ""
    return repr(x)


def write_grid_csv(grid: LandscapeGrid, path) -> None:
    """Write cells as CSV rows ``alpha,beta,split,loss,metric,flag_nonfinite``.

    1-d grids leave the beta column empty; non-finite losses and missing
    metrics are written as empty fields, with the flag column set to 1 for
    cells whose loss evaluation was non-finite.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_CSV_HEADER)
        for c in grid.cells:
            writer.writerow(
                [_fmt(c.alpha), _fmt(c.beta), c.split, _fmt(c.loss), _fmt(c.metric), int(c.nonfinite)]
            )


def write_barrier_csv(report: BarrierReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BARRIER_CSV_HEADER)
        writer.writerow(
            [
                _fmt(report.alpha_star),
                _fmt(report.barrier_height),
                _fmt(report.loss_theta),
                _fmt(report.loss_theta_prime),
                _fmt(report.max_loss),
            ]
        )
